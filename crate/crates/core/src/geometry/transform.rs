use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidTransformRepr", into = "RigidTransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Invalid(format!(
                "rotation is not proper orthonormal (orthogonality error {err:.3e}, det {det})"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn translation_only(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner();
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Re-orthonormalises the rotation (SVD projection onto SO(3)).
    pub(crate) fn from_rotation_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        d[(2, 2)] = (u * v_t).determinant().signum();
        Self {
            rotation: u * d * v_t,
            translation,
        }
    }
}

pub fn apply_transform(t: &RigidTransform, pts: &[Vec3]) -> Vec<Vec3> {
    t.apply_all(pts)
}

#[derive(Serialize, Deserialize)]
struct RigidTransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<RigidTransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: RigidTransformRepr) -> Result<Self> {
        let m = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        RigidTransform::new(m, Vec3::from(r.translation))
    }
}
