//! Surface kinematics for soft, pneumatically actuated shapes.
//!
//! Shapes are B-spline control grids; a neural forward model maps actuation
//! to controls, a Gaussian-RBF space warp bridges simulation and measurement,
//! and an inverse solver recovers actuation from a target surface.

pub mod bspline;
mod error;
pub mod fk;
pub mod geometry;
pub mod ik;
pub mod nn;
pub mod oracle;
pub mod rbf;
pub mod sim2real;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
