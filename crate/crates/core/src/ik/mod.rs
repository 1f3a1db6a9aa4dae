//! Inverse kinematics: shape-approximation loss over calibrated samples,
//! its analytic gradient through the warp / B-spline / network chain, the
//! soft-line-search solver with ICP re-posing, and gradient audits.

mod audit;
mod loss;
mod solver;

use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineSurface, SurfaceWeights};
use crate::fk::ShapeModel;
use crate::geometry::TriangleMesh;
use crate::oracle::{halton, Actuation};
use crate::sim2real::S2rModel;
use crate::{Error, Result};

pub use audit::{
    fd_gradient, gradient_check, gradient_cost_audit, BranchAudit, GradCheckConfig, GradCheckReport, GradCostReport,
    ProbeCheck,
};
pub use loss::{
    calibrated_jacobian, frozen_loss, loss_gradient, loss_gradient_with, shape_loss, Branches, Correspondences,
    PipelineState,
};
pub use solver::{solve_ik, IkResult, Stage, Termination, TraceEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub tau_terminal: f64,
    pub i_max: usize,
    pub sample_count: usize,
    pub shrink_factor: f64,
    pub initial_step: f64,
    /// Line search gives up below this step.
    pub min_step: f64,
    /// Cap on expansion trials per accepted step.
    pub max_expansions: usize,
    /// Absolute stop when the mean squared residual (mm²) falls below this.
    pub loss_floor: f64,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    /// Re-pose after every accepted descent step, not only when the inner
    /// loop ends.
    pub repose_every_step: bool,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            tau_terminal: 0.01,
            i_max: 30,
            sample_count: 1200,
            shrink_factor: 0.5,
            initial_step: 1.0,
            min_step: 1e-8,
            max_expansions: 32,
            loss_floor: 1e-2,
            icp_max_iters: 30,
            icp_tol: 1e-7,
            repose_every_step: true,
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_terminal > 0.0 && self.tau_terminal < 1.0) {
            return Err(Error::Invalid("tau_terminal must lie in (0, 1)".into()));
        }
        if self.sample_count == 0 || self.i_max == 0 {
            return Err(Error::Invalid("sample_count and i_max must be positive".into()));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::Invalid("shrink_factor must lie in (0, 1)".into()));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0) {
            return Err(Error::Invalid("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Trained forward model plus warp network: `a ↦ p*(u, v)`.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub shapes: &'a dyn ShapeModel,
    pub warp: &'a S2rModel,
}

impl<'a> Pipeline<'a> {
    pub fn new(shapes: &'a dyn ShapeModel, warp: &'a S2rModel) -> Result<Self> {
        let (rows, cols) = shapes.dims();
        let expected = 3 * rows * cols;
        if warp.net().input_dim() != expected {
            return Err(Error::mismatch("warp network input", expected, warp.net().input_dim()));
        }
        Ok(Self { shapes, warp })
    }

    /// Calibrated points on a regular grid, triangulated.
    pub fn calibrated_mesh(&self, a: &Actuation, rows: usize, cols: usize) -> Result<TriangleMesh> {
        let probes = ProbeSet::new(self, crate::geometry::grid_params(rows, cols))?;
        let state = PipelineState::new(self, &probes, a)?;
        TriangleMesh::from_grid(state.calibrated.clone(), rows, cols)
    }
}

/// Fixed `(u, v)` sample set with cached basis weights.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub uvs: Vec<[f64; 2]>,
    pub(crate) weights: Vec<SurfaceWeights>,
    pub(crate) marker_weights: Vec<SurfaceWeights>,
}

impl ProbeSet {
    pub fn new(pipeline: &Pipeline, uvs: Vec<[f64; 2]>) -> Result<Self> {
        let (rows, cols) = pipeline.shapes.dims();
        let template =
            BSplineSurface::clamped(crate::bspline::ControlGrid::zeros(rows, cols), pipeline.shapes.degree())?;
        let weights = uvs
            .iter()
            .map(|uv| template.weights(uv[0], uv[1]))
            .collect::<Result<_>>()?;
        let marker_weights = pipeline
            .warp
            .marker_uvs()
            .iter()
            .map(|uv| template.weights(uv[0], uv[1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            uvs,
            weights,
            marker_weights,
        })
    }

    /// Low-discrepancy (Halton, bases 2 and 3) samples of the unit square.
    pub fn halton(pipeline: &Pipeline, count: usize) -> Result<Self> {
        let uvs = halton(2, count, 0)?.into_iter().map(|p| [p[0], p[1]]).collect();
        Self::new(pipeline, uvs)
    }

    pub fn len(&self) -> usize {
        self.uvs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uvs.is_empty()
    }
}
