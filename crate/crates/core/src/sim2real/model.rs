use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineSurface, ControlGrid};
use crate::fk::ShapeModel;
use crate::nn::{
    self, EpochLoss, Mlp, MlpCheckpoint, Normalizer, QuadraticLoss, RefitConfig, SampleLoss, TrainConfig, TrainSample,
};
use crate::oracle::Actuation;
use crate::rbf::{self, KernelSet, WarpCoefficients, DEFAULT_KERNEL_WIDTH};
use crate::sim2real::{virtual_markers, CoeffMap, TrainingFrameSet, WarpPredictor};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct S2rConfig {
    pub hidden: Vec<usize>,
    pub kernel_width: f64,
    /// Initial scale of the output layer; small values start near the
    /// identity warp.
    pub output_gain: f64,
    /// Closed-form output-layer refit tried after gradient training.
    pub refit: RefitConfig,
    pub train: TrainConfig,
}

impl Default for S2rConfig {
    fn default() -> Self {
        Self {
            hidden: vec![24, 24],
            kernel_width: DEFAULT_KERNEL_WIDTH,
            output_gain: 0.1,
            refit: RefitConfig::default(),
            train: TrainConfig {
                max_epochs: 3000,
                ..TrainConfig::default()
            },
        }
    }
}

/// Shape-conditioned warp predictor `γ = N_rbf(𝒮^c)` with kernels at the
/// virtual markers of the input surface.
#[derive(Debug, Clone, PartialEq)]
pub struct S2rModel {
    net: Mlp,
    input_norm: Normalizer,
    mean_grid: ControlGrid,
    coeffs: CoeffMap,
    marker_uvs: Vec<[f64; 2]>,
    kernel_width: f64,
    history: Vec<EpochLoss>,
}

impl S2rModel {
    /// Untrained model whose warp is exactly the identity.
    pub fn identity(shapes: &dyn ShapeModel, marker_uvs: Vec<[f64; 2]>, kernel_width: f64) -> Result<Self> {
        let (rows, cols) = shapes.dims();
        let dim = 3 * rows * cols;
        let coeffs = CoeffMap {
            centroid: [0.0; 3],
            scale_alpha: 1.0,
            scale_linear: 1.0,
            scale_beta: 1.0,
            markers: marker_uvs.len(),
        };
        let net = Mlp::new(&[dim, 1, coeffs.output_dim()], 0)?.with_output_gain(0.0);
        Ok(Self {
            net,
            input_norm: Normalizer::identity(dim),
            mean_grid: shapes.mean_grid().clone(),
            coeffs,
            marker_uvs,
            kernel_width,
            history: Vec::new(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn coeff_map(&self) -> &CoeffMap {
        &self.coeffs
    }

    pub fn marker_uvs(&self) -> &[[f64; 2]] {
        &self.marker_uvs
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    /// Standardised delta controls fed to the network.
    pub fn net_input(&self, surface: &BSplineSurface) -> Result<Vec<f64>> {
        let delta = surface.control().sub(&self.mean_grid)?;
        Ok(self.input_norm.normalize(&delta.flatten()))
    }

    /// Converts a gradient w.r.t. the network input back to flattened controls.
    pub fn input_to_controls(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter().zip(&self.input_norm.scale).map(|(g, s)| g / s).collect()
    }

    pub fn kernels(&self, surface: &BSplineSurface) -> Result<KernelSet> {
        KernelSet::new(virtual_markers(surface, &self.marker_uvs)?, self.kernel_width)
    }

    pub fn coefficients(&self, surface: &BSplineSurface) -> Result<WarpCoefficients> {
        self.coeffs.decode(&self.net.forward(&self.net_input(surface)?)?)
    }

    pub fn calibrated_point(&self, shapes: &dyn ShapeModel, a: &Actuation, u: f64, v: f64) -> Result<Vec3> {
        let surface = shapes.controls(a)?;
        let (k, g) = self.predict_warp(&surface)?;
        Ok(rbf::warp(&surface.evaluate(u, v)?, &k, &g))
    }

    pub fn to_json(&self) -> Result<String> {
        let (rows, cols) = self.mean_grid.dims();
        Ok(serde_json::to_string(&S2rFile {
            network: self.net.to_checkpoint(Some(self.input_norm.clone()), None, 0),
            rows,
            cols,
            mean_grid: self.mean_grid.flatten(),
            coeff_map: self.coeffs.clone(),
            marker_uvs: self.marker_uvs.clone(),
            kernel_width: self.kernel_width,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: S2rFile = serde_json::from_str(text)?;
        let net = f.network.to_mlp()?;
        let dim = 3 * f.rows * f.cols;
        if net.input_dim() != dim {
            return Err(Error::mismatch("warp network input", dim, net.input_dim()));
        }
        if net.output_dim() != f.coeff_map.output_dim() || f.coeff_map.markers != f.marker_uvs.len() {
            return Err(Error::mismatch(
                "warp network output",
                f.coeff_map.output_dim(),
                net.output_dim(),
            ));
        }
        Ok(Self {
            net,
            input_norm: f.network.input_norm.unwrap_or_else(|| Normalizer::identity(dim)),
            mean_grid: ControlGrid::from_flat(f.rows, f.cols, &f.mean_grid)?,
            coeffs: f.coeff_map,
            marker_uvs: f.marker_uvs,
            kernel_width: f.kernel_width,
            history: Vec::new(),
        })
    }
}

impl WarpPredictor for S2rModel {
    fn predict_warp(&self, surface: &BSplineSurface) -> Result<(KernelSet, WarpCoefficients)> {
        Ok((self.kernels(surface)?, self.coefficients(surface)?))
    }
}

#[derive(Serialize, Deserialize)]
struct S2rFile {
    network: MlpCheckpoint,
    rows: usize,
    cols: usize,
    mean_grid: Vec<f64>,
    coeff_map: CoeffMap,
    marker_uvs: Vec<[f64; 2]>,
    kernel_width: f64,
}

struct MarkerTerm {
    position: Vec3,
    kernels: Vec<f64>,
    target: Vec3,
}

/// Squared warp residual over one frame's observed markers, normalised by
/// the canonical marker count.
struct FrameLoss<'a> {
    map: &'a CoeffMap,
    terms: Vec<MarkerTerm>,
    norm: f64,
}

impl SampleLoss for FrameLoss<'_> {
    fn evaluate(&self, output: &[f64]) -> (f64, Vec<f64>) {
        let g = match self.map.decode(output) {
            Ok(g) => g,
            Err(_) => return (f64::NAN, vec![0.0; output.len()]),
        };
        let mut grad = vec![0.0; output.len()];
        let mut loss = 0.0;
        for t in &self.terms {
            let mut pred = g.alpha0 + g.a * t.position;
            for (b, w) in g.betas.iter().zip(&t.kernels) {
                pred += b * *w;
            }
            let r = pred - t.target;
            loss += r.norm_squared();
            let r2 = 2.0 * r * self.norm;
            for d in 0..3 {
                grad[d] += r2[d];
                for k in 0..3 {
                    grad[3 + 3 * k + d] += r2[d] * t.position[k];
                }
            }
            for (i, w) in t.kernels.iter().enumerate() {
                for d in 0..3 {
                    grad[12 + 3 * i + d] += r2[d] * w;
                }
            }
        }
        (loss * self.norm, self.map.decode_vjp(&grad))
    }
}

impl QuadraticLoss for FrameLoss<'_> {
    fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.map.output_dim();
        let mut c = DMatrix::zeros(m, m);
        let mut d = DVector::zeros(m);
        let mut row = DMatrix::zeros(3, m);
        for t in &self.terms {
            // the prediction is linear in the output: pred = P o + position
            for k in 0..3 {
                let mut g = vec![0.0; m];
                g[k] = 1.0;
                for j in 0..3 {
                    g[3 + 3 * j + k] = t.position[j];
                }
                for (i, w) in t.kernels.iter().enumerate() {
                    g[12 + 3 * i + k] = *w;
                }
                row.row_mut(k).copy_from_slice(&self.map.decode_vjp(&g));
            }
            let e = t.position - t.target;
            c.gemm_tr(self.norm, &row, &row, 1.0);
            d.gemv_tr(self.norm, &row, &DVector::from_column_slice(e.as_slice()), 1.0);
        }
        (c, d)
    }
}

/// Output scales from the observed marker discrepancy: `s_α = s_β = r`,
/// `s_A = r / L` with `r` the per-axis RMS discrepancy and `L` the per-axis
/// RMS marker spread about the centroid.
fn coeff_map(frames: &TrainingFrameSet, markers: &[Vec<Vec3>]) -> CoeffMap {
    let mut centroid = Vec3::zeros();
    let mut count = 0usize;
    for m in markers {
        for p in m {
            centroid += p;
            count += 1;
        }
    }
    centroid /= count.max(1) as f64;
    let mut spread = 0.0;
    for m in markers {
        for p in m {
            spread += (p - centroid).norm_squared();
        }
    }
    let spread = (spread / (3 * count.max(1)) as f64).sqrt().max(1e-9);
    let mut disc = 0.0;
    let mut obs = 0usize;
    for (j, f) in frames.frames.iter().enumerate() {
        for (id, q) in f.observed() {
            disc += (q - markers[j][id]).norm_squared();
            obs += 1;
        }
    }
    let r = (disc / (3 * obs.max(1)) as f64).sqrt().max(1e-6);
    CoeffMap {
        centroid: centroid.into(),
        scale_alpha: r,
        scale_linear: r / spread,
        scale_beta: r,
        markers: frames.marker_count(),
    }
}

/// Fits `N_rbf` so that the per-frame warps carry virtual markers onto the
/// observed ones. Missing observations contribute nothing; frames without
/// any observation are skipped.
pub fn train_rbf_net(frames: &TrainingFrameSet, shapes: &dyn ShapeModel, cfg: &S2rConfig) -> Result<S2rModel> {
    if frames.observed_count() == 0 {
        return Err(Error::NoObservations);
    }
    let markers: Vec<Vec<Vec3>> = (0..frames.len())
        .map(|j| frames.virtual_markers(j))
        .collect::<Result<_>>()?;
    let mean_grid = shapes.mean_grid().clone();
    let deltas: Vec<Vec<f64>> = frames
        .surfaces
        .iter()
        .map(|s| s.control().sub(&mean_grid).map(|d| d.flatten()))
        .collect::<Result<_>>()?;
    let input_norm = Normalizer::centered_pooled(deltas.iter().map(Vec::as_slice))?;
    let map = coeff_map(frames, &markers);
    let norm = 1.0 / frames.marker_count() as f64;
    let mut data = Vec::with_capacity(frames.len());
    for (j, frame) in frames.frames.iter().enumerate() {
        if frame.observed_count() == 0 {
            warn!("frame {j} has no observed markers; skipped");
            continue;
        }
        let kernels = KernelSet::new(markers[j].clone(), cfg.kernel_width)?;
        let terms = frame
            .observed()
            .map(|(id, q)| MarkerTerm {
                position: markers[j][id],
                kernels: kernels.kernel_values(&markers[j][id]),
                target: q,
            })
            .collect();
        data.push(TrainSample {
            input: input_norm.normalize(&deltas[j]),
            loss: FrameLoss { map: &map, terms, norm },
        });
    }
    let mut dims = vec![input_norm.dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(map.output_dim());
    let init = Mlp::new(&dims, cfg.train.seed)?.with_output_gain(cfg.output_gain);
    let trained = nn::train(&init, &data, &cfg.train)?;
    let net = nn::select_output_refit(&trained.params, &data, &cfg.refit)?.params;
    Ok(S2rModel {
        net,
        input_norm,
        mean_grid,
        coeffs: map,
        marker_uvs: frames.marker_uvs.clone(),
        kernel_width: cfg.kernel_width,
        history: trained.history,
    })
}

pub fn predict_warp(model: &S2rModel, surface: &BSplineSurface) -> Result<(KernelSet, WarpCoefficients)> {
    model.predict_warp(surface)
}

pub fn calibrated_point(model: &S2rModel, shapes: &dyn ShapeModel, a: &Actuation, u: f64, v: f64) -> Result<Vec3> {
    model.calibrated_point(shapes, a, u, v)
}

/// Identity affine block check used by tests and diagnostics.
pub fn is_identity_warp(g: &WarpCoefficients, tol: f64) -> bool {
    g.alpha0.norm() <= tol && (g.a - Matrix3::identity()).norm() <= tol && g.betas.iter().all(|b| b.norm() <= tol)
}

/// RMS distance between warped virtual markers and their observations,
/// over every observed marker of every frame.
pub fn marker_residual(model: &dyn WarpPredictor, frames: &TrainingFrameSet) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (j, frame) in frames.frames.iter().enumerate() {
        if frame.observed_count() == 0 {
            continue;
        }
        let markers = frames.virtual_markers(j)?;
        let (k, g) = model.predict_warp(&frames.surfaces[j])?;
        for (id, q) in frame.observed() {
            sum += (rbf::warp(&markers[id], &k, &g) - q).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoObservations);
    }
    Ok((sum / count as f64).sqrt())
}
