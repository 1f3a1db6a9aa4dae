//! Gaussian RBF space warp
//! `Φ(p) = α₀ + A·p + Σᵢ βᵢ·exp(−c‖p − qᵢ‖²)`,
//! its interpolating solve, and the three derivative blocks used by the
//! inverse-kinematics chain rule.
//!
//! The coefficient vector γ is always flattened as `(α₀, α₁, α₂, α₃, β₁ … β_N)`
//! with `αₖ` the k-th column of `A`; every consumer relies on this order.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Kernel width used for millimetre-scale scenes.
pub const DEFAULT_KERNEL_WIDTH: f64 = 3.0e-5;

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    centers: Vec<Vec3>,
    c: f64,
}

impl KernelSet {
    pub fn new(centers: Vec<Vec3>, c: f64) -> Result<Self> {
        if centers.len() < 4 {
            return Err(Error::Invalid(format!(
                "at least 4 kernel centers required, got {}",
                centers.len()
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Invalid(format!("kernel width must be positive, got {c}")));
        }
        let n = centers.len() as f64;
        let mean = centers.iter().sum::<Vec3>() / n;
        let mut cov = Matrix3::zeros();
        for q in &centers {
            cov += (q - mean) * (q - mean).transpose();
        }
        let eig = cov.symmetric_eigenvalues();
        if eig.min() <= 1e-12 * eig.max().max(f64::MIN_POSITIVE) {
            return Err(Error::Invalid("kernel centers are coplanar".into()));
        }
        Ok(Self { centers, c })
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        self.c
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `gᵢ(p) = exp(−c‖p − qᵢ‖²)` for every kernel.
    pub fn kernel_values(&self, p: &Vec3) -> Vec<f64> {
        self.centers
            .iter()
            .map(|q| (-self.c * (p - q).norm_squared()).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpCoefficients {
    pub alpha0: Vec3,
    pub a: Matrix3<f64>,
    pub betas: Vec<Vec3>,
}

impl WarpCoefficients {
    pub fn identity(n: usize) -> Self {
        Self {
            alpha0: Vec3::zeros(),
            a: Matrix3::identity(),
            betas: vec![Vec3::zeros(); n],
        }
    }

    pub fn flat_len(n: usize) -> usize {
        3 * (n + 4)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::flat_len(self.betas.len()));
        out.extend_from_slice(self.alpha0.as_slice());
        // column-major storage: α₁, α₂, α₃ in order
        out.extend_from_slice(self.a.as_slice());
        for b in &self.betas {
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() < 12 || !flat.len().is_multiple_of(3) {
            return Err(Error::Invalid(format!(
                "coefficient vector length {} is not 3(N+4)",
                flat.len()
            )));
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite warp coefficient".into()));
        }
        Ok(Self {
            alpha0: Vec3::from_column_slice(&flat[0..3]),
            a: Matrix3::from_column_slice(&flat[3..12]),
            betas: flat[12..].chunks_exact(3).map(Vec3::from_column_slice).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.flatten())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let flat: Vec<f64> = serde_json::from_str(text)?;
        Self::from_flat(&flat)
    }
}

impl Serialize for WarpCoefficients {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.flatten().serialize(s)
    }
}

impl<'de> Deserialize<'de> for WarpCoefficients {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        Self::from_flat(&flat).map_err(serde::de::Error::custom)
    }
}

fn check_dims(k: &KernelSet, g: &WarpCoefficients) {
    assert_eq!(k.len(), g.betas.len(), "kernel count and coefficient count differ");
}

pub fn warp(p: &Vec3, k: &KernelSet, g: &WarpCoefficients) -> Vec3 {
    check_dims(k, g);
    let mut out = g.alpha0 + g.a * p;
    for (q, b) in k.centers.iter().zip(&g.betas) {
        out += b * (-k.c * (p - q).norm_squared()).exp();
    }
    out
}

/// Solves for the coefficients interpolating `targets` at the kernel
/// centers, subject to `Σβᵢ = 0` and `Σβᵢ·qᵢᵀ = 0`.
pub fn solve(k: &KernelSet, targets: &[Vec3]) -> Result<WarpCoefficients> {
    let n = k.len();
    if targets.len() != n {
        return Err(Error::mismatch("warp targets", n, targets.len()));
    }
    // The affine block is solved in centred, scaled coordinates to keep the
    // system balanced; kernel entries only depend on distances.
    let centroid = k.centers.iter().sum::<Vec3>() / n as f64;
    let scale = k
        .centers
        .iter()
        .map(|q| (q - centroid).norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let local: Vec<Vec3> = k.centers.iter().map(|q| (q - centroid) / scale).collect();

    let size = n + 4;
    let mut m = DMatrix::<f64>::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = (-k.c * (k.centers[i] - k.centers[j]).norm_squared()).exp();
        }
        m[(i, n)] = 1.0;
        m[(n, i)] = 1.0;
        for d in 0..3 {
            m[(i, n + 1 + d)] = local[i][d];
            m[(n + 1 + d, i)] = local[i][d];
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(size, 3);
    for (i, t) in targets.iter().enumerate() {
        for d in 0..3 {
            rhs[(i, d)] = t[d];
        }
    }

    let lu = m.clone().lu();
    let inverse = lu.try_inverse().ok_or(Error::DegenerateKernels(f64::INFINITY))?;
    let cond = norm1(&m) * norm1(&inverse);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::DegenerateKernels(cond));
    }
    let sol = lu.solve(&rhs).ok_or(Error::DegenerateKernels(f64::INFINITY))?;

    let betas: Vec<Vec3> = (0..n)
        .map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]))
        .collect();
    let local_alpha0 = Vec3::new(sol[(n, 0)], sol[(n, 1)], sol[(n, 2)]);
    // rows n+1..n+3 hold the local affine columns transposed
    let local_a = Matrix3::from_fn(|r, c| sol[(n + 1 + c, r)]);
    let a = local_a / scale;
    let alpha0 = local_alpha0 - a * centroid;
    Ok(WarpCoefficients { alpha0, a, betas })
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `∂Φ/∂p = A + Σᵢ βᵢ·(∂gᵢ/∂p)ᵀ`, with `∂gᵢ/∂p = −2c·gᵢ·(p − qᵢ)`.
pub fn grad_query(p: &Vec3, k: &KernelSet, g: &WarpCoefficients) -> Matrix3<f64> {
    check_dims(k, g);
    let mut out = g.a;
    for (q, b) in k.centers.iter().zip(&g.betas) {
        let d = p - q;
        let gi = (-k.c * d.norm_squared()).exp();
        out += b * (d * (-2.0 * k.c * gi)).transpose();
    }
    out
}

/// Kernel-center block `i` of `∂Φ/∂{q}`: `βᵢ·(2c·gᵢ·(p − qᵢ))ᵀ`.
pub fn grad_center_block(p: &Vec3, k: &KernelSet, g: &WarpCoefficients, i: usize) -> Matrix3<f64> {
    let d = p - k.centers[i];
    let gi = (-k.c * d.norm_squared()).exp();
    g.betas[i] * (d * (2.0 * k.c * gi)).transpose()
}

/// `∂Φ/∂{q}` as a 3 × 3N matrix.
pub fn grad_centers(p: &Vec3, k: &KernelSet, g: &WarpCoefficients) -> DMatrix<f64> {
    check_dims(k, g);
    let n = k.len();
    let mut out = DMatrix::zeros(3, 3 * n);
    for i in 0..n {
        out.fixed_view_mut::<3, 3>(0, 3 * i)
            .copy_from(&grad_center_block(p, k, g, i));
    }
    out
}

/// `∂Φ/∂γ = [I | p_x·I | p_y·I | p_z·I | g₁·I | … | g_N·I]`, 3 × 3(N+4).
pub fn grad_coeffs(p: &Vec3, k: &KernelSet) -> DMatrix<f64> {
    let n = k.len();
    let mut out = DMatrix::zeros(3, WarpCoefficients::flat_len(n));
    let mut put = |block: usize, s: f64| {
        for d in 0..3 {
            out[(d, 3 * block + d)] = s;
        }
    };
    put(0, 1.0);
    put(1, p.x);
    put(2, p.y);
    put(3, p.z);
    for (i, gi) in k.kernel_values(p).into_iter().enumerate() {
        put(4 + i, gi);
    }
    out
}

/// `(∂Φ/∂γ)ᵀ·r` without forming the block matrix.
pub fn grad_coeffs_transpose_mul(p: &Vec3, k: &KernelSet, r: &Vec3, out: &mut [f64]) {
    debug_assert_eq!(out.len(), WarpCoefficients::flat_len(k.len()));
    let mut add = |block: usize, s: f64| {
        for d in 0..3 {
            out[3 * block + d] += s * r[d];
        }
    };
    add(0, 1.0);
    add(1, p.x);
    add(2, p.y);
    add(3, p.z);
    for (i, q) in k.centers.iter().enumerate() {
        add(4 + i, (-k.c * (p - q).norm_squared()).exp());
    }
}

#[cfg(test)]
mod tests;
