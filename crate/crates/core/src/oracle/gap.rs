use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::oracle::CHAMBERS;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapBump {
    pub center: [f64; 3],
    pub sigma: f64,
    pub displacement: [f64; 3],
}

/// Fixed discrepancy between simulated and "physical" shapes: a smooth
/// warp of space (affine + quadratic + Gaussian bumps) applied after a
/// per-chamber amplitude skew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealityGap {
    /// Reference point of the polynomial terms (mm).
    pub origin: [f64; 3],
    /// Length scale of the quadratic terms (mm).
    pub length: f64,
    pub translation: [f64; 3],
    /// Row-major linear displacement map.
    pub linear: [[f64; 3]; 3],
    /// Displacement `(q₀·ξ_y², q₁·ξ_x·ξ_y, q₂·ξ_x²)` with `ξ = (x − origin)/length`.
    pub quadratic: [f64; 3],
    pub bumps: Vec<GapBump>,
    /// Relative amplitude error per chamber.
    pub chamber_skew: [f64; CHAMBERS],
}

impl Default for RealityGap {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0, 60.0],
            length: 200.0,
            translation: [0.8, -0.5, 1.0],
            linear: [[0.002, -0.0025, 0.0], [0.0015, 0.002, 0.001], [-0.001, 0.0, -0.003]],
            quadratic: [0.4, -0.3, -0.6],
            bumps: vec![
                GapBump {
                    center: [-80.0, 150.0, 90.0],
                    sigma: 90.0,
                    displacement: [0.0, 0.4, 0.9],
                },
                GapBump {
                    center: [110.0, -170.0, 70.0],
                    sigma: 80.0,
                    displacement: [0.5, 0.0, -0.8],
                },
            ],
            chamber_skew: [0.02, -0.015, 0.01, -0.02, 0.015, 0.0, -0.01, 0.02, -0.015],
        }
    }
}

impl RealityGap {
    pub fn identity() -> Self {
        Self {
            origin: [0.0; 3],
            length: 1.0,
            translation: [0.0; 3],
            linear: [[0.0; 3]; 3],
            quadratic: [0.0; 3],
            bumps: Vec::new(),
            chamber_skew: [0.0; CHAMBERS],
        }
    }

    /// Pure affine gap `x ↦ M·x + b`.
    pub fn affine(m: Matrix3<f64>, b: Vec3) -> Self {
        let d = m - Matrix3::identity();
        Self {
            translation: [b.x, b.y, b.z],
            linear: std::array::from_fn(|i| std::array::from_fn(|j| d[(i, j)])),
            ..Self::identity()
        }
    }

    pub fn chamber_gains(&self) -> [f64; CHAMBERS] {
        self.chamber_skew.map(|s| 1.0 + s)
    }

    /// Spatial displacement `warp(x) − x`.
    pub fn displacement(&self, x: &Vec3) -> Vec3 {
        let origin = Vec3::from(self.origin);
        let rel = x - origin;
        let lin = Matrix3::from_fn(|i, j| self.linear[i][j]);
        let xi = rel / self.length;
        let quad = Vec3::new(
            self.quadratic[0] * xi.y * xi.y,
            self.quadratic[1] * xi.x * xi.y,
            self.quadratic[2] * xi.x * xi.x,
        );
        let mut d = Vec3::from(self.translation) + lin * rel + quad;
        for b in &self.bumps {
            let r2 = (x - Vec3::from(b.center)).norm_squared();
            d += Vec3::from(b.displacement) * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        d
    }

    pub fn warp(&self, x: &Vec3) -> Vec3 {
        x + self.displacement(x)
    }

    /// Central-difference Jacobian of the warp.
    pub fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        let h = 1e-3;
        let mut j = Matrix3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let col = (self.warp(&(x + e)) - self.warp(&(x - e))) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }
}
