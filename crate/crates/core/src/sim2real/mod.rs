//! Sim-to-real calibration: the shape-conditioned RBF warp network trained
//! from sparse, possibly incomplete marker frames, the marker-prediction
//! baseline and calibration reports.

mod baseline;
mod coeffs;
mod eval;
mod frames;
mod model;

pub use baseline::{train_marker_baseline, MkBaselineModel};
pub use coeffs::CoeffMap;
pub use eval::{eval_calibration, eval_model_gap, CalibrationReport, CalibrationRow};
pub use frames::{model_frames, virtual_markers, TrainingFrameSet};
pub use model::{
    calibrated_point, is_identity_warp, marker_residual, predict_warp, train_rbf_net, S2rConfig, S2rModel,
};

use crate::bspline::BSplineSurface;
use crate::rbf::{KernelSet, WarpCoefficients};
use crate::Result;

/// Produces a per-shape space warp.
pub trait WarpPredictor: Sync {
    fn predict_warp(&self, surface: &BSplineSurface) -> Result<(KernelSet, WarpCoefficients)>;
}
