//! Analytic stand-in for the pneumatic simulator: a half-torso B-spline
//! rest surface pushed along its normals by nine chamber influence fields.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineSurface, ControlGrid, KnotVector, DEFAULT_DEGREE, DEFAULT_GRID};
use crate::geometry::{grid_params, SampledSurface, TriangleMesh};
use crate::oracle::{Actuation, RealityGap, CHAMBERS};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamberSpec {
    /// Center in the parameter domain.
    pub center: [f64; 2],
    /// Half-widths of the elliptical support in `u` and `v`.
    pub extent: [f64; 2],
    /// Peak normal displacement at full pressure (mm).
    pub amplitude: f64,
    /// Curvature of the saturating pressure response.
    pub stiffness: f64,
}

impl ChamberSpec {
    /// Smooth compactly supported bump `(1 − r²)³`, `r` the elliptical radius.
    pub fn bump(&self, u: f64, v: f64) -> f64 {
        let du = (u - self.center[0]) / self.extent[0];
        let dv = (v - self.center[1]) / self.extent[1];
        let r2 = du * du + dv * dv;
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - r2).powi(3)
        }
    }

    /// Saturating response `(1 − e^{−κa}) / (1 − e^{−κ})`: 0 at rest, 1 at
    /// full pressure, increasing and concave.
    pub fn response(&self, a: f64) -> f64 {
        let k = self.stiffness;
        (1.0 - (-k * a).exp()) / (1.0 - (-k).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MannequinConfig {
    /// Rest-surface control grid per direction.
    pub rest_grid: usize,
    /// Regular `(u, v)` sampling grid used by `sim_surface`.
    pub sample_grid: [usize; 2],
    pub half_width: f64,
    pub height: f64,
    pub depth: f64,
    pub chambers: Vec<ChamberSpec>,
}

impl Default for MannequinConfig {
    fn default() -> Self {
        let amplitudes = [30.0, 35.0, 30.0, 38.0, 40.0, 35.0, 28.0, 32.0, 30.0];
        let stiffness = [0.8, 0.6, 1.0, 0.7, 0.5, 0.9, 1.1, 0.6, 0.8];
        let chambers = (0..CHAMBERS)
            .map(|k| ChamberSpec {
                center: [0.2 + 0.3 * (k % 3) as f64, 0.2 + 0.3 * (k / 3) as f64],
                extent: [0.17, 0.17],
                amplitude: amplitudes[k],
                stiffness: stiffness[k],
            })
            .collect();
        Self {
            rest_grid: DEFAULT_GRID,
            sample_grid: [60, 60],
            half_width: 200.0,
            height: 600.0,
            depth: 110.0,
            chambers,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VirtualMannequin {
    config: MannequinConfig,
    rest: BSplineSurface,
    params: Vec<[f64; 2]>,
}

impl VirtualMannequin {
    pub fn new(config: MannequinConfig) -> Result<Self> {
        if config.chambers.len() != CHAMBERS {
            return Err(Error::Invalid(format!(
                "expected {CHAMBERS} chambers, got {}",
                config.chambers.len()
            )));
        }
        for (k, c) in config.chambers.iter().enumerate() {
            if !(c.amplitude > 0.0 && c.stiffness > 0.0 && c.extent[0] > 0.0 && c.extent[1] > 0.0) {
                return Err(Error::Invalid(format!("chamber {k} has a non-positive parameter")));
            }
        }
        if config.sample_grid[0] < 2 || config.sample_grid[1] < 2 {
            return Err(Error::Invalid("sample grid needs at least 2×2 points".into()));
        }
        let rest = rest_surface(&config)?;
        let params = grid_params(config.sample_grid[0], config.sample_grid[1]);
        Ok(Self { config, rest, params })
    }

    pub fn config(&self) -> &MannequinConfig {
        &self.config
    }

    pub fn rest(&self) -> &BSplineSurface {
        &self.rest
    }

    pub fn chambers(&self) -> &[ChamberSpec] {
        &self.config.chambers
    }

    pub fn max_amplitude(&self) -> f64 {
        self.config.chambers.iter().map(|c| c.amplitude).fold(0.0, f64::max)
    }

    pub fn sample_params(&self) -> &[[f64; 2]] {
        &self.params
    }

    /// Normal displacement magnitude at `(u, v)`, optionally with per-chamber
    /// amplitude factors.
    pub(crate) fn displacement(&self, a: &Actuation, u: f64, v: f64, gains: Option<&[f64]>) -> f64 {
        self.config
            .chambers
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let gain = gains.map_or(1.0, |g| g[k]);
                c.amplitude * gain * c.response(a.values()[k]) * c.bump(u, v)
            })
            .sum()
    }

    pub(crate) fn displaced_point(&self, a: &Actuation, u: f64, v: f64, gains: Option<&[f64]>) -> Result<Vec3> {
        let (p, pu, pv) = self.rest.evaluate_derivs(u, v)?;
        let n = pu.cross(&pv).normalize();
        Ok(p + n * self.displacement(a, u, v, gains))
    }

    pub fn sim_point(&self, a: &Actuation, u: f64, v: f64) -> Result<Vec3> {
        self.displaced_point(a, u, v, None)
    }

    pub fn real_point(&self, gap: &RealityGap, a: &Actuation, u: f64, v: f64) -> Result<Vec3> {
        let gains = gap.chamber_gains();
        Ok(gap.warp(&self.displaced_point(a, u, v, Some(&gains))?))
    }

    pub fn sim_surface(&self, a: &Actuation) -> Result<SampledSurface> {
        let points = self
            .params
            .par_iter()
            .map(|p| self.sim_point(a, p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        SampledSurface::new(self.params.clone(), points)
    }

    pub fn real_surface(&self, gap: &RealityGap, a: &Actuation) -> Result<SampledSurface> {
        let points = self
            .params
            .par_iter()
            .map(|p| self.real_point(gap, a, p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        SampledSurface::new(self.params.clone(), points)
    }

    /// Triangulated sample grid of a surface produced by this mannequin.
    pub fn grid_mesh(&self, surface: &SampledSurface) -> Result<TriangleMesh> {
        let [rows, cols] = self.config.sample_grid;
        TriangleMesh::from_grid(surface.points().to_vec(), rows, cols)
    }
}

pub fn sim_surface(vm: &VirtualMannequin, a: &Actuation) -> Result<SampledSurface> {
    vm.sim_surface(a)
}

pub fn real_surface(vm: &VirtualMannequin, gap: &RealityGap, a: &Actuation) -> Result<SampledSurface> {
    vm.real_surface(gap, a)
}

/// Half-torso: a partial elliptic cylinder with a waist profile and an
/// off-center chest bulge so the shape has no rigid symmetry.
fn torso_point(cfg: &MannequinConfig, u: f64, v: f64) -> Vec3 {
    let theta = (u - 0.5) * 0.8 * PI;
    let waist = 1.0 + 0.08 * (PI * v).sin() - 0.06 * v;
    let bulge = 0.22 * cfg.depth * (-((u - 0.35).powi(2) + (v - 0.7).powi(2)) / 0.02).exp();
    Vec3::new(
        cfg.half_width * waist * theta.sin(),
        cfg.height * (v - 0.5),
        cfg.depth * waist * theta.cos() + bulge,
    )
}

fn greville(kv: &KnotVector) -> Vec<f64> {
    let p = kv.degree();
    let k = kv.knots();
    (0..kv.count())
        .map(|i| k[i + 1..=i + p].iter().sum::<f64>() / p as f64)
        .collect()
}

fn rest_surface(cfg: &MannequinConfig) -> Result<BSplineSurface> {
    let n = cfg.rest_grid;
    let ku = KnotVector::clamped_uniform(n, DEFAULT_DEGREE)?;
    let kv = KnotVector::clamped_uniform(n, DEFAULT_DEGREE)?;
    let gu = greville(&ku);
    let gv = greville(&kv);
    let points = gu
        .iter()
        .flat_map(|&u| gv.iter().map(move |&v| (u, v)))
        .map(|(u, v)| torso_point(cfg, u, v))
        .collect();
    BSplineSurface::new(ku, kv, ControlGrid::new(n, n, points)?)
}
