use nalgebra::SMatrix;
use rayon::prelude::*;

use crate::bspline::BSplineSurface;
use crate::geometry::{RigidTransform, TriangleMesh};
use crate::ik::{Pipeline, ProbeSet};
use crate::oracle::{Actuation, CHAMBERS};
use crate::rbf::{self, KernelSet, WarpCoefficients};
use crate::{Result, Vec3};

/// Everything the loss and its gradient need at one actuation.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub actuation: Actuation,
    pub surface: BSplineSurface,
    pub kernels: KernelSet,
    pub coeffs: WarpCoefficients,
    pub net_input: Vec<f64>,
    /// Uncalibrated samples `B(u_j, v_j)`.
    pub sim: Vec<Vec3>,
    /// Calibrated samples `p*_j`.
    pub calibrated: Vec<Vec3>,
}

impl PipelineState {
    pub fn new(pipeline: &Pipeline, probes: &ProbeSet, a: &Actuation) -> Result<Self> {
        let surface = pipeline.shapes.controls(a)?;
        let control = surface.control().points();
        let centers = probes.marker_weights.iter().map(|w| w.combine(control)).collect();
        let kernels = KernelSet::new(centers, pipeline.warp.kernel_width())?;
        let net_input = pipeline.warp.net_input(&surface)?;
        let coeffs = pipeline
            .warp
            .coeff_map()
            .decode(&pipeline.warp.net().forward(&net_input)?)?;
        let sim: Vec<Vec3> = probes.weights.iter().map(|w| w.combine(control)).collect();
        let calibrated = sim.iter().map(|p| rbf::warp(p, &kernels, &coeffs)).collect();
        Ok(Self {
            actuation: *a,
            surface,
            kernels,
            coeffs,
            net_input,
            sim,
            calibrated,
        })
    }
}

/// Posed closest points `R·c*_j + t` on the target, held fixed while
/// differentiating.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pub points: Vec<Vec3>,
}

impl Correspondences {
    pub fn find(calibrated: &[Vec3], target: &TriangleMesh, pose: &RigidTransform) -> Result<Self> {
        let inv = pose.inverse();
        let points = calibrated
            .par_iter()
            .map(|p| Ok(pose.apply(&target.closest_point(&inv.apply(p))?.point)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }

    /// `Σ_j ‖p*_j − T(c*_j)‖²`.
    pub fn loss(&self, calibrated: &[Vec3]) -> f64 {
        calibrated
            .iter()
            .zip(&self.points)
            .map(|(p, c)| (p - c).norm_squared())
            .sum()
    }

    pub fn mean_distance(&self, calibrated: &[Vec3]) -> f64 {
        calibrated
            .iter()
            .zip(&self.points)
            .map(|(p, c)| (p - c).norm())
            .sum::<f64>()
            / calibrated.len() as f64
    }
}

/// Shape approximation loss `D(a)` with correspondences recomputed at `a`.
pub fn shape_loss(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    target: &TriangleMesh,
    pose: &RigidTransform,
    a: &Actuation,
) -> Result<f64> {
    let state = PipelineState::new(pipeline, probes, a)?;
    Ok(Correspondences::find(&state.calibrated, target, pose)?.loss(&state.calibrated))
}

/// `D(a)` against fixed correspondences.
pub fn frozen_loss(pipeline: &Pipeline, probes: &ProbeSet, corr: &Correspondences, a: &Actuation) -> Result<f64> {
    Ok(corr.loss(&PipelineState::new(pipeline, probes, a)?.calibrated))
}

/// Chain-rule branches of `∂p*/∂𝒮^c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branches {
    /// Through the query point: `∂Φ/∂p · ∂B/∂𝒮^c`.
    pub query: bool,
    /// Through the kernel centers: `∂Φ/∂q · ∂B(marker)/∂𝒮^c`.
    pub centers: bool,
    /// Through the predicted coefficients: `∂Φ/∂γ · ∂N_rbf/∂𝒮^c`.
    pub coefficients: bool,
}

impl Branches {
    pub const ALL: Self = Self {
        query: true,
        centers: true,
        coefficients: true,
    };

    pub fn without(index: usize) -> Self {
        let mut b = Self::ALL;
        match index {
            0 => b.query = false,
            1 => b.centers = false,
            _ => b.coefficients = false,
        }
        b
    }
}

/// Pulls per-sample upstream gradients `∂L/∂p*_j` back to the flattened
/// control grid.
fn pull_to_controls(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    state: &PipelineState,
    upstream: &[Vec3],
    branches: Branches,
) -> Result<Vec<f64>> {
    let k = &state.kernels;
    let g = &state.coeffs;
    let n = k.len();
    let c = k.width();
    let dim = state.surface.control().points().len() * 3;
    let mut grad = vec![0.0; dim];

    // per-sample terms, reduced in sample order
    let partial: Vec<(Vec3, Vec<Vec3>, Vec<f64>)> = state
        .sim
        .par_iter()
        .zip(upstream.par_iter())
        .map(|(x, r)| {
            let query = if branches.query {
                rbf::grad_query(x, k, g).tr_mul(r)
            } else {
                Vec3::zeros()
            };
            let mut centers = Vec::new();
            if branches.centers {
                centers = k
                    .centers()
                    .iter()
                    .zip(&g.betas)
                    .map(|(q, b)| {
                        let d = x - q;
                        d * (2.0 * c * (-c * d.norm_squared()).exp() * b.dot(r))
                    })
                    .collect();
            }
            let mut coeff = Vec::new();
            if branches.coefficients {
                coeff = vec![0.0; WarpCoefficients::flat_len(n)];
                rbf::grad_coeffs_transpose_mul(x, k, r, &mut coeff);
            }
            (query, centers, coeff)
        })
        .collect();

    let mut center_grad = vec![Vec3::zeros(); n];
    let mut coeff_grad = vec![0.0; WarpCoefficients::flat_len(n)];
    for ((query, centers, coeff), w) in partial.iter().zip(&probes.weights) {
        for (idx, wt) in w.iter() {
            for d in 0..3 {
                grad[3 * idx + d] += wt * query[d];
            }
        }
        for (acc, v) in center_grad.iter_mut().zip(centers) {
            *acc += v;
        }
        for (acc, v) in coeff_grad.iter_mut().zip(coeff) {
            *acc += v;
        }
    }
    if branches.centers {
        for (s, w) in center_grad.iter().zip(&probes.marker_weights) {
            for (idx, wt) in w.iter() {
                for d in 0..3 {
                    grad[3 * idx + d] += wt * s[d];
                }
            }
        }
    }
    if branches.coefficients {
        let warp = pipeline.warp;
        let out_grad = warp.coeff_map().decode_vjp(&coeff_grad);
        let in_grad = warp.net().input_vjp(&state.net_input, &out_grad)?;
        for (acc, v) in grad.iter_mut().zip(warp.input_to_controls(&in_grad)) {
            *acc += v;
        }
    }
    Ok(grad)
}

/// `∂D/∂a` with the given correspondences frozen.
pub fn loss_gradient_with(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    state: &PipelineState,
    corr: &Correspondences,
    branches: Branches,
) -> Result<[f64; CHAMBERS]> {
    let upstream: Vec<Vec3> = state
        .calibrated
        .iter()
        .zip(&corr.points)
        .map(|(p, c)| 2.0 * (p - c))
        .collect();
    let control_grad = pull_to_controls(pipeline, probes, state, &upstream, branches)?;
    pipeline.shapes.controls_vjp(&state.actuation, &control_grad)
}

/// Loss and analytic gradient at `a`; correspondences are computed once and
/// frozen for the derivative.
pub fn loss_gradient(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    target: &TriangleMesh,
    pose: &RigidTransform,
    a: &Actuation,
) -> Result<(f64, [f64; CHAMBERS])> {
    let state = PipelineState::new(pipeline, probes, a)?;
    let corr = Correspondences::find(&state.calibrated, target, pose)?;
    let g = loss_gradient_with(pipeline, probes, &state, &corr, Branches::ALL)?;
    Ok((corr.loss(&state.calibrated), g))
}

/// `∂p*(u, v)/∂a` as a 3 × 9 matrix.
pub fn calibrated_jacobian(pipeline: &Pipeline, a: &Actuation, u: f64, v: f64) -> Result<SMatrix<f64, 3, CHAMBERS>> {
    let probes = ProbeSet::new(pipeline, vec![[u, v]])?;
    let state = PipelineState::new(pipeline, &probes, a)?;
    let mut jac = SMatrix::<f64, 3, CHAMBERS>::zeros();
    for d in 0..3 {
        let mut e = Vec3::zeros();
        e[d] = 1.0;
        let g = pull_to_controls(pipeline, &probes, &state, &[e], Branches::ALL)?;
        let row = pipeline.shapes.controls_vjp(a, &g)?;
        for (k, v) in row.iter().enumerate() {
            jac[(d, k)] = *v;
        }
    }
    Ok(jac)
}
