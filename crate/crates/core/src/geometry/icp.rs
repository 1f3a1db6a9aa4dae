//! Point-to-point ICP. The transform is applied to the target model so that
//! it lines up with the source samples.

use nalgebra::Matrix3;

use crate::geometry::{RigidTransform, TriangleMesh};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Correspondence RMS measured at the start of each iteration, plus the
    /// final value.
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

impl IcpResult {
    pub fn final_rms(&self) -> f64 {
        *self.rms_history.last().unwrap_or(&f64::NAN)
    }
}

/// Closed-form least-squares rigid fit `T` minimising `Σ‖T(from_k) − to_k‖²`.
pub fn fit_rigid(from: &[Vec3], to: &[Vec3]) -> Result<RigidTransform> {
    assert_eq!(from.len(), to.len());
    let n = from.len() as f64;
    let cf = from.iter().sum::<Vec3>() / n;
    let ct = to.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (f, t) in from.iter().zip(to) {
        h += (f - cf) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    d[(2, 2)] = (v * u.transpose()).determinant().signum();
    let rotation = v * d * u.transpose();
    let translation = ct - rotation * cf;
    Ok(RigidTransform::from_rotation_unchecked(rotation, translation))
}

fn check_rank(points: &[Vec3]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::RankDeficientCorrespondence);
    }
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        cov += (p - c) * (p - c).transpose();
    }
    let mut s: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] <= 0.0 || s[1] <= 1e-12 * s[0] {
        return Err(Error::RankDeficientCorrespondence);
    }
    Ok(())
}

pub fn icp_register(
    source: &[Vec3],
    target: &TriangleMesh,
    init: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    check_rank(source)?;
    if target.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut transform = *init;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut correspondences = vec![Vec3::zeros(); source.len()];
    loop {
        // closest points on T(target) = T(closest point of T⁻¹p on target)
        let inv = transform.inverse();
        let mut sum = 0.0;
        for (p, c) in source.iter().zip(correspondences.iter_mut()) {
            *c = target.closest_point(&inv.apply(p))?.point;
            sum += (transform.apply(c) - p).norm_squared();
        }
        let rms = (sum / source.len() as f64).sqrt();
        let converged = history.last().is_some_and(|prev: &f64| (prev - rms).abs() < tol);
        history.push(rms);
        if converged || iterations >= max_iters {
            break;
        }
        let candidate = fit_rigid(&correspondences, source)?;
        iterations += 1;
        transform = candidate;
    }
    Ok(IcpResult {
        transform,
        rms_history: history,
        iterations,
    })
}
