//! Virtual motion capture: marker positions on the "physical" surface with
//! tracking noise and displacement-dependent occlusion.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::oracle::{Actuation, RealityGap, VirtualMannequin};
use crate::{Error, Result, Vec3};

pub const DEFAULT_MARKERS: usize = 34;
const CAPTURE_RETRIES: usize = 10;

/// Canonical marker parameters: a 6 × 6 lattice over `[0.1, 0.9]²` without
/// two opposite corners (34 markers).
pub fn default_marker_uvs() -> Vec<[f64; 2]> {
    let ticks: Vec<f64> = (0..6).map(|k| 0.1 + 0.16 * k as f64).collect();
    let mut out = Vec::with_capacity(DEFAULT_MARKERS);
    for (i, &u) in ticks.iter().enumerate() {
        for (j, &v) in ticks.iter().enumerate() {
            if (i, j) == (0, 5) || (i, j) == (5, 0) {
                continue;
            }
            out.push([u, v]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutPolicy {
    /// Miss probability independent of deformation.
    pub base_rate: f64,
    /// Extra miss probability at `(displacement / max amplitude)² = 1`.
    pub slope: f64,
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        Self {
            base_rate: 0.014,
            slope: 0.27,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub noise_sigma: f64,
    pub dropout: Option<DropoutPolicy>,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            dropout: Some(DropoutPolicy::default()),
        }
    }
}

impl CaptureConfig {
    pub fn exact() -> Self {
        Self {
            noise_sigma: 0.0,
            dropout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub marker_id: usize,
    #[serde(with = "opt_vec3")]
    pub position: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub actuation: Actuation,
    pub observations: Vec<Observation>,
}

impl MarkerFrame {
    pub fn observed(&self) -> impl Iterator<Item = (usize, Vec3)> + '_ {
        self.observations
            .iter()
            .filter_map(|o| o.position.map(|p| (o.marker_id, p)))
    }

    pub fn observed_count(&self) -> usize {
        self.observed().count()
    }

    pub fn is_complete(&self, marker_count: usize) -> bool {
        self.observed_count() == marker_count && self.observations.len() == marker_count
    }
}

pub fn capture_frame(
    vm: &VirtualMannequin,
    gap: &RealityGap,
    a: &Actuation,
    marker_uvs: &[[f64; 2]],
    policy: &CaptureConfig,
    seed: u64,
) -> Result<MarkerFrame> {
    let truth: Vec<Vec3> = marker_uvs
        .iter()
        .map(|uv| vm.real_point(gap, a, uv[0], uv[1]))
        .collect::<Result<_>>()?;
    let miss_prob: Vec<f64> = marker_uvs
        .iter()
        .map(|uv| match &policy.dropout {
            None => 0.0,
            Some(d) => {
                let rel = vm.displacement(a, uv[0], uv[1], None) / vm.max_amplitude();
                (d.base_rate + d.slope * rel * rel).clamp(0.0, 1.0)
            }
        })
        .collect();
    let noise =
        Normal::new(0.0, policy.noise_sigma.max(0.0)).map_err(|e| Error::Invalid(format!("noise sigma: {e}")))?;
    for attempt in 0..CAPTURE_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64 * 0x9e37_79b9));
        let observations: Vec<Observation> = truth
            .iter()
            .zip(&miss_prob)
            .enumerate()
            .map(|(marker_id, (p, &miss))| {
                let dropped = rng.random::<f64>() < miss;
                let jitter = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                Observation {
                    marker_id,
                    position: (!dropped).then(|| p + jitter),
                }
            })
            .collect();
        if observations.iter().any(|o| o.position.is_some()) {
            return Ok(MarkerFrame {
                actuation: *a,
                observations,
            });
        }
    }
    Err(Error::CaptureFailed(CAPTURE_RETRIES))
}

/// Uniformly random actuations from a seeded stream.
pub fn random_actuations(count: usize, seed: u64) -> Vec<Actuation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Actuation::clamped(std::array::from_fn(|_| rng.random::<f64>())))
        .collect()
}

/// Captures one frame per actuation with per-frame seeds `seed + index`.
pub fn capture_frames(
    vm: &VirtualMannequin,
    gap: &RealityGap,
    actuations: &[Actuation],
    marker_uvs: &[[f64; 2]],
    policy: &CaptureConfig,
    seed: u64,
) -> Result<Vec<MarkerFrame>> {
    actuations
        .iter()
        .enumerate()
        .map(|(i, a)| capture_frame(vm, gap, a, marker_uvs, policy, seed.wrapping_add(i as u64)))
        .collect()
}

pub fn write_frames<W: Write>(mut w: W, frames: &[MarkerFrame]) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_frames<R: BufRead>(r: R) -> Result<Vec<MarkerFrame>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

mod opt_vec3 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::Vec3;

    pub fn serialize<S: Serializer>(v: &Option<Vec3>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|p| [p.x, p.y, p.z]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec3>, D::Error> {
        Ok(Option::<[f64; 3]>::deserialize(d)?.map(Vec3::from))
    }
}
