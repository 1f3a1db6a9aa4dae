//! Tensor-product B-spline surfaces: basis evaluation, the surface decoder,
//! control-point weights and least-squares fitting.

mod fit;
mod knots;
mod surface;

pub use fit::{fit, FittedSurface, Fitter, DEFAULT_RIDGE};
pub use knots::{basis, KnotVector};
pub use surface::{basis_weight, evaluate, BSplineSurface, ControlDelta, ControlGrid, SurfaceWeights};

/// Cubic in both directions.
pub const DEFAULT_DEGREE: usize = 3;
/// Control grid resolution per direction.
pub const DEFAULT_GRID: usize = 30;
