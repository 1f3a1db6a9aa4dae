use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::KnotVector;
use crate::{Error, Result, Vec3};

/// Row-major grid of 3-vectors; row index follows `u`, column index `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    rows: usize,
    cols: usize,
    points: Vec<Vec3>,
}

impl ControlGrid {
    pub fn new(rows: usize, cols: usize, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != rows * cols {
            return Err(Error::mismatch("control grid", rows * cols, points.len()));
        }
        Ok(Self { rows, cols, points })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            points: vec![Vec3::zeros(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn get(&self, i: usize, j: usize) -> Vec3 {
        self.points[i * self.cols + j]
    }

    /// `[x₀, y₀, z₀, x₁, …]`, length `3·rows·cols`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(rows: usize, cols: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * rows * cols {
            return Err(Error::mismatch("flattened grid", 3 * rows * cols, flat.len()));
        }
        let points = flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Ok(Self { rows, cols, points })
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::mismatch("control grid", self.points.len(), other.points.len()));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let points = self.points.iter().zip(&other.points).map(|(a, b)| a - b).collect();
        Ok(Self { points, ..*self })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let points = self.points.iter().zip(&other.points).map(|(a, b)| a + b).collect();
        Ok(Self { points, ..*self })
    }

    /// Component-wise mean of equally sized grids.
    pub fn mean<'a>(grids: impl IntoIterator<Item = &'a ControlGrid>) -> Result<Self> {
        let mut iter = grids.into_iter();
        let first = iter.next().ok_or_else(|| Error::Invalid("mean of zero grids".into()))?;
        let mut acc = first.clone();
        let mut count = 1.0;
        for g in iter {
            acc.check_dims(g)?;
            for (a, b) in acc.points.iter_mut().zip(&g.points) {
                *a += b;
            }
            count += 1.0;
        }
        for a in &mut acc.points {
            *a /= count;
        }
        Ok(acc)
    }
}

/// Offsets of a control grid from a shared mean grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDelta(pub ControlGrid);

impl ControlDelta {
    pub fn between(grid: &ControlGrid, mean: &ControlGrid) -> Result<Self> {
        Ok(Self(grid.sub(mean)?))
    }

    pub fn apply(&self, mean: &ControlGrid) -> Result<ControlGrid> {
        mean.add(&self.0)
    }
}

/// Nonzero tensor-product basis weights at one `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceWeights {
    pub row0: usize,
    pub col0: usize,
    pub wu: Vec<f64>,
    pub wv: Vec<f64>,
    pub cols: usize,
}

impl SurfaceWeights {
    /// `(flat control index, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.wu.iter().enumerate().flat_map(move |(a, &wu)| {
            self.wv
                .iter()
                .enumerate()
                .map(move |(b, &wv)| ((self.row0 + a) * self.cols + self.col0 + b, wu * wv))
        })
    }

    pub fn combine(&self, control: &[Vec3]) -> Vec3 {
        self.iter().map(|(k, w)| control[k] * w).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurfaceRepr", into = "SurfaceRepr")]
pub struct BSplineSurface {
    knots_u: KnotVector,
    knots_v: KnotVector,
    control: ControlGrid,
}

impl BSplineSurface {
    pub fn new(knots_u: KnotVector, knots_v: KnotVector, control: ControlGrid) -> Result<Self> {
        if control.rows() != knots_u.count() || control.cols() != knots_v.count() {
            return Err(Error::mismatch(
                "surface control grid",
                knots_u.count() * knots_v.count(),
                control.points().len(),
            ));
        }
        if control.points().iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::Invalid("non-finite control point".into()));
        }
        Ok(Self {
            knots_u,
            knots_v,
            control,
        })
    }

    /// Uniform clamped knots of the given degree in both directions.
    pub fn clamped(control: ControlGrid, degree: usize) -> Result<Self> {
        let ku = KnotVector::clamped_uniform(control.rows(), degree)?;
        let kv = KnotVector::clamped_uniform(control.cols(), degree)?;
        Self::new(ku, kv, control)
    }

    pub fn knots_u(&self) -> &KnotVector {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &KnotVector {
        &self.knots_v
    }

    pub fn control(&self) -> &ControlGrid {
        &self.control
    }

    pub fn dims(&self) -> (usize, usize) {
        self.control.dims()
    }

    pub fn with_control(&self, control: ControlGrid) -> Result<Self> {
        Self::new(self.knots_u.clone(), self.knots_v.clone(), control)
    }

    pub fn weights(&self, u: f64, v: f64) -> Result<SurfaceWeights> {
        let (su, wu) = self.knots_u.nonzero_basis(u)?;
        let (sv, wv) = self.knots_v.nonzero_basis(v)?;
        Ok(SurfaceWeights {
            row0: su - self.knots_u.degree(),
            col0: sv - self.knots_v.degree(),
            wu,
            wv,
            cols: self.control.cols(),
        })
    }

    pub fn evaluate(&self, u: f64, v: f64) -> Result<Vec3> {
        Ok(self.weights(u, v)?.combine(self.control.points()))
    }

    /// Point and first partial derivatives `(B, ∂B/∂u, ∂B/∂v)`.
    pub fn evaluate_derivs(&self, u: f64, v: f64) -> Result<(Vec3, Vec3, Vec3)> {
        let (su, nu, du) = self.knots_u.nonzero_basis_derivs(u)?;
        let (sv, nv, dv) = self.knots_v.nonzero_basis_derivs(v)?;
        let (r0, c0) = (su - self.knots_u.degree(), sv - self.knots_v.degree());
        let mut p = Vec3::zeros();
        let mut pu = Vec3::zeros();
        let mut pv = Vec3::zeros();
        for a in 0..nu.len() {
            for b in 0..nv.len() {
                let c = self.control.get(r0 + a, c0 + b);
                p += c * (nu[a] * nv[b]);
                pu += c * (du[a] * nv[b]);
                pv += c * (nu[a] * dv[b]);
            }
        }
        Ok((p, pu, pv))
    }

    /// Unit normal `∂B/∂u × ∂B/∂v`.
    pub fn normal(&self, u: f64, v: f64) -> Result<Vec3> {
        let (_, pu, pv) = self.evaluate_derivs(u, v)?;
        let n = pu.cross(&pv);
        let len = n.norm();
        if len == 0.0 {
            return Err(Error::Invalid(format!("degenerate normal at ({u}, {v})")));
        }
        Ok(n / len)
    }

    /// Dense `m × n` grid of `∂B(u,v)/∂control_{ij}` scalars; the full
    /// derivative is this weight times the 3×3 identity.
    pub fn basis_weight(&self, u: f64, v: f64) -> Result<DMatrix<f64>> {
        let w = self.weights(u, v)?;
        let (m, n) = self.dims();
        let mut out = DMatrix::zeros(m, n);
        for (k, weight) in w.iter() {
            out[(k / n, k % n)] = weight;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn evaluate(s: &BSplineSurface, u: f64, v: f64) -> Result<Vec3> {
    s.evaluate(u, v)
}

pub fn basis_weight(s: &BSplineSurface, u: f64, v: f64) -> Result<DMatrix<f64>> {
    s.basis_weight(u, v)
}

#[derive(Serialize, Deserialize)]
struct SurfaceRepr {
    degree: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    control: Vec<[f64; 3]>,
}

impl From<BSplineSurface> for SurfaceRepr {
    fn from(s: BSplineSurface) -> Self {
        Self {
            degree: s.knots_u.degree(),
            knots_u: s.knots_u.knots().to_vec(),
            knots_v: s.knots_v.knots().to_vec(),
            control: s.control.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

impl TryFrom<SurfaceRepr> for BSplineSurface {
    type Error = Error;

    fn try_from(r: SurfaceRepr) -> Result<Self> {
        let ku = KnotVector::new(r.degree, r.knots_u)?;
        let kv = KnotVector::new(r.degree, r.knots_v)?;
        let grid = ControlGrid::new(ku.count(), kv.count(), r.control.into_iter().map(Vec3::from).collect())?;
        BSplineSurface::new(ku, kv, grid)
    }
}
