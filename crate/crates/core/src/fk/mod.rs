//! Forward-kinematics surrogate: oracle dataset generation, the control-grid
//! network, its Jacobian and accuracy metrics.

mod ablation;
mod dataset;
mod model;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineSurface, ControlGrid, Fitter, DEFAULT_RIDGE};
use crate::geometry::grid_params;
use crate::oracle::{Actuation, VirtualMannequin, CHAMBERS};
use crate::{Error, Result};

pub use ablation::{controls_vs_vertices, delta_vs_absolute, AblationRow};
pub use dataset::{build_dataset, build_dataset_with, split_indices, DatasetConfig, FkDataset};
pub use model::{fk_jacobian, predict_controls, train_fk, FkConfig, FkModel, Representation};

pub const PROBE_GRID: usize = 60;

/// Anything that maps an actuation to a control grid with a known Jacobian.
pub trait ShapeModel: Sync {
    fn dims(&self) -> (usize, usize);

    fn degree(&self) -> usize;

    /// Reference grid that shape deltas are measured against.
    fn mean_grid(&self) -> &ControlGrid;

    fn controls(&self, a: &Actuation) -> Result<BSplineSurface>;

    /// `3mn × 9` Jacobian in [`ControlGrid::flatten`] order.
    fn controls_jacobian(&self, a: &Actuation) -> Result<DMatrix<f64>>;

    /// `Jᵀ·upstream` for an upstream gradient over the flattened controls.
    fn controls_vjp(&self, a: &Actuation, upstream: &[f64]) -> Result<[f64; CHAMBERS]> {
        let j = self.controls_jacobian(a)?;
        if upstream.len() != j.nrows() {
            return Err(Error::mismatch("control gradient", j.nrows(), upstream.len()));
        }
        let g = j.tr_mul(&nalgebra::DVector::from_column_slice(upstream));
        Ok(std::array::from_fn(|k| g[k]))
    }

    /// Identifies the piecewise-linear region containing `a`; empty for
    /// smooth models.
    fn activation_signature(&self, _a: &Actuation) -> Result<Vec<bool>> {
        Ok(Vec::new())
    }
}

/// Exact shapes: least-squares fit of the oracle's simulated surface.
#[derive(Debug, Clone)]
pub struct OracleShapes {
    vm: VirtualMannequin,
    fitter: Fitter,
    mean_grid: ControlGrid,
    degree: usize,
}

impl OracleShapes {
    pub fn new(vm: VirtualMannequin, rows: usize, cols: usize, degree: usize) -> Result<Self> {
        let fitter = Fitter::new(vm.sample_params(), rows, cols, degree, DEFAULT_RIDGE)?;
        let mid = fitter.fit(&vm.sim_surface(&Actuation::splat(0.5)?)?)?;
        Ok(Self {
            vm,
            fitter,
            mean_grid: mid.surface.control().clone(),
            degree,
        })
    }

    pub fn mannequin(&self) -> &VirtualMannequin {
        &self.vm
    }
}

impl ShapeModel for OracleShapes {
    fn dims(&self) -> (usize, usize) {
        self.mean_grid.dims()
    }

    fn degree(&self) -> usize {
        self.degree
    }

    fn mean_grid(&self) -> &ControlGrid {
        &self.mean_grid
    }

    fn controls(&self, a: &Actuation) -> Result<BSplineSurface> {
        Ok(self.fitter.fit(&self.vm.sim_surface(a)?)?.surface)
    }

    fn controls_jacobian(&self, a: &Actuation) -> Result<DMatrix<f64>> {
        let h = 1e-6;
        let (rows, cols) = self.dims();
        let mut j = DMatrix::zeros(3 * rows * cols, CHAMBERS);
        for k in 0..CHAMBERS {
            let mut hi = *a.values();
            let mut lo = *a.values();
            hi[k] = (hi[k] + h).min(1.0);
            lo[k] = (lo[k] - h).max(0.0);
            let step = hi[k] - lo[k];
            let fh = self.controls(&Actuation::new(hi)?)?.control().flatten();
            let fl = self.controls(&Actuation::new(lo)?)?.control().flatten();
            for (r, (a, b)) in fh.iter().zip(&fl).enumerate() {
                j[(r, k)] = (a - b) / step;
            }
        }
        Ok(j)
    }
}

/// Point-to-corresponding-point error statistics (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceError {
    pub mean: f64,
    pub max: f64,
}

impl SurfaceError {
    /// Mean of means and max of maxes.
    pub fn aggregate(errors: &[SurfaceError]) -> SurfaceError {
        SurfaceError {
            mean: errors.iter().map(|e| e.mean).sum::<f64>() / errors.len() as f64,
            max: errors.iter().map(|e| e.max).fold(0.0, f64::max),
        }
    }

    pub fn between(predicted: &[crate::Vec3], truth: &[crate::Vec3]) -> SurfaceError {
        let d: Vec<f64> = predicted.iter().zip(truth).map(|(p, q)| (p - q).norm()).collect();
        SurfaceError {
            mean: d.iter().sum::<f64>() / d.len() as f64,
            max: d.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Default dense `(u, v)` probe grid for surface metrics.
pub fn probe_grid() -> Vec<[f64; 2]> {
    grid_params(PROBE_GRID, PROBE_GRID)
}

/// Error of a shape model against the oracle's simulated surface at `a`.
pub fn surface_error(
    model: &dyn ShapeModel,
    vm: &VirtualMannequin,
    a: &Actuation,
    probe: &[[f64; 2]],
) -> Result<SurfaceError> {
    let surface = model.controls(a)?;
    let mut predicted = Vec::with_capacity(probe.len());
    let mut truth = Vec::with_capacity(probe.len());
    for uv in probe {
        predicted.push(surface.evaluate(uv[0], uv[1])?);
        truth.push(vm.sim_point(a, uv[0], uv[1])?);
    }
    Ok(SurfaceError::between(&predicted, &truth))
}

/// Aggregated error over a set of actuations (evaluated in parallel).
pub fn mean_surface_error(
    model: &dyn ShapeModel,
    vm: &VirtualMannequin,
    actuations: &[Actuation],
    probe: &[[f64; 2]],
) -> Result<SurfaceError> {
    let errs = actuations
        .par_iter()
        .map(|a| surface_error(model, vm, a, probe))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceError::aggregate(&errs))
}

/// Test-split error of a trained model on the default probe grid.
pub fn test_error(model: &dyn ShapeModel, vm: &VirtualMannequin, ds: &FkDataset) -> Result<SurfaceError> {
    let test: Vec<Actuation> = ds.test.iter().map(|&i| ds.actuations[i]).collect();
    mean_surface_error(model, vm, &test, &probe_grid())
}
