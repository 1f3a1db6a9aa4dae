use serde::{Deserialize, Serialize};

use crate::rbf::WarpCoefficients;
use crate::{Error, Result, Vec3};

/// Linear decoder from network outputs to warp coefficients:
///
/// `A = I + s_A·O_A`, `α₀ = s_α·o_α − s_A·O_A·x̄`, `β_i = s_β·o_i`,
///
/// so zero output is the identity warp and the affine part acts about the
/// scene centroid `x̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffMap {
    pub centroid: [f64; 3],
    pub scale_alpha: f64,
    pub scale_linear: f64,
    pub scale_beta: f64,
    pub markers: usize,
}

impl CoeffMap {
    pub fn output_dim(&self) -> usize {
        WarpCoefficients::flat_len(self.markers)
    }

    pub fn decode(&self, out: &[f64]) -> Result<WarpCoefficients> {
        if out.len() != self.output_dim() {
            return Err(Error::mismatch("coefficient output", self.output_dim(), out.len()));
        }
        let c = Vec3::from(self.centroid);
        let mut flat = vec![0.0; out.len()];
        let mut shift = Vec3::zeros();
        for k in 0..3 {
            for d in 0..3 {
                let o = out[3 + 3 * k + d];
                flat[3 + 3 * k + d] = if d == k { 1.0 } else { 0.0 } + self.scale_linear * o;
                shift[d] += self.scale_linear * o * c[k];
            }
        }
        for d in 0..3 {
            flat[d] = self.scale_alpha * out[d] - shift[d];
        }
        for (f, o) in flat[12..].iter_mut().zip(&out[12..]) {
            *f = self.scale_beta * o;
        }
        WarpCoefficients::from_flat(&flat)
    }

    /// Pulls a gradient over the flattened coefficients back to the outputs.
    pub fn decode_vjp(&self, grad: &[f64]) -> Vec<f64> {
        let c = self.centroid;
        let mut out = vec![0.0; grad.len()];
        for d in 0..3 {
            out[d] = self.scale_alpha * grad[d];
        }
        for k in 0..3 {
            for d in 0..3 {
                out[3 + 3 * k + d] = self.scale_linear * (grad[3 + 3 * k + d] - c[k] * grad[d]);
            }
        }
        for (o, g) in out[12..].iter_mut().zip(&grad[12..]) {
            *o = self.scale_beta * g;
        }
        out
    }
}
