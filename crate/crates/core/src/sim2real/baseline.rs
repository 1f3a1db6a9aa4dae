use serde::{Deserialize, Serialize};

use crate::bspline::BSplineSurface;
use crate::nn::{self, EpochLoss, Mlp, MlpCheckpoint, Normalizer, SquaredError, TrainSample};
use crate::rbf::{self, KernelSet, WarpCoefficients};
use crate::sim2real::{virtual_markers, S2rConfig, TrainingFrameSet, WarpPredictor};
use crate::{Error, Result, Vec3};

/// Marker-prediction baseline: a network maps virtual marker positions to
/// physical ones, and the warp interpolates the predicted markers.
#[derive(Debug, Clone, PartialEq)]
pub struct MkBaselineModel {
    net: Mlp,
    input_norm: Normalizer,
    output_norm: Normalizer,
    marker_uvs: Vec<[f64; 2]>,
    kernel_width: f64,
    history: Vec<EpochLoss>,
    frames_used: usize,
}

impl MkBaselineModel {
    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    /// Number of complete frames the model was trained on.
    pub fn frames_used(&self) -> usize {
        self.frames_used
    }

    pub fn predict_markers(&self, virtual_markers: &[Vec3]) -> Result<Vec<Vec3>> {
        let flat: Vec<f64> = virtual_markers.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let residual = self
            .output_norm
            .denormalize(&self.net.forward(&self.input_norm.normalize(&flat))?);
        Ok(virtual_markers
            .iter()
            .zip(residual.chunks(3))
            .map(|(p, r)| p + Vec3::from_column_slice(r))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&BaselineFile {
            network: self
                .net
                .to_checkpoint(Some(self.input_norm.clone()), Some(self.output_norm.clone()), 0),
            marker_uvs: self.marker_uvs.clone(),
            kernel_width: self.kernel_width,
            frames_used: self.frames_used,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: BaselineFile = serde_json::from_str(text)?;
        let net = f.network.to_mlp()?;
        let dim = 3 * f.marker_uvs.len();
        if net.input_dim() != dim || net.output_dim() != dim {
            return Err(Error::mismatch("baseline network", dim, net.input_dim()));
        }
        Ok(Self {
            net,
            input_norm: f.network.input_norm.unwrap_or_else(|| Normalizer::identity(dim)),
            output_norm: f.network.output_norm.unwrap_or_else(|| Normalizer::identity(dim)),
            marker_uvs: f.marker_uvs,
            kernel_width: f.kernel_width,
            history: Vec::new(),
            frames_used: f.frames_used,
        })
    }
}

impl WarpPredictor for MkBaselineModel {
    fn predict_warp(&self, surface: &BSplineSurface) -> Result<(KernelSet, WarpCoefficients)> {
        let centers = virtual_markers(surface, &self.marker_uvs)?;
        let targets = self.predict_markers(&centers)?;
        let k = KernelSet::new(centers, self.kernel_width)?;
        let g = rbf::solve(&k, &targets)?;
        Ok((k, g))
    }
}

#[derive(Serialize, Deserialize)]
struct BaselineFile {
    network: MlpCheckpoint,
    marker_uvs: Vec<[f64; 2]>,
    kernel_width: f64,
    frames_used: usize,
}

/// Trains the baseline on complete frames only; the network regresses the
/// marker displacement (physical minus virtual), standardised.
pub fn train_marker_baseline(frames: &TrainingFrameSet, cfg: &S2rConfig) -> Result<MkBaselineModel> {
    let complete = frames.complete_only();
    if complete.is_empty() {
        return Err(Error::NoCompleteFrames);
    }
    let n = complete.marker_count();
    let mut inputs = Vec::with_capacity(complete.len());
    let mut targets = Vec::with_capacity(complete.len());
    for (j, frame) in complete.frames.iter().enumerate() {
        let virt = complete.virtual_markers(j)?;
        let mut observed = vec![Vec3::zeros(); n];
        for (id, q) in frame.observed() {
            observed[id] = q;
        }
        inputs.push(virt.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<f64>>());
        targets.push(
            observed
                .iter()
                .zip(&virt)
                .flat_map(|(q, p)| {
                    let d = q - p;
                    [d.x, d.y, d.z]
                })
                .collect::<Vec<f64>>(),
        );
    }
    let input_norm = Normalizer::standardize(inputs.iter().map(Vec::as_slice))?;
    let output_norm = Normalizer::standardize(targets.iter().map(Vec::as_slice))?;
    let data: Vec<TrainSample<SquaredError>> = inputs
        .iter()
        .zip(&targets)
        .map(|(x, y)| TrainSample {
            input: input_norm.normalize(x),
            loss: SquaredError(output_norm.normalize(y)),
        })
        .collect();
    let mut dims = vec![3 * n];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(3 * n);
    let init = Mlp::new(&dims, cfg.train.seed)?.with_output_gain(cfg.output_gain);
    let trained = nn::train(&init, &data, &cfg.train)?;
    let net = nn::select_output_refit(&trained.params, &data, &cfg.refit)?.params;
    Ok(MkBaselineModel {
        net,
        input_norm,
        output_norm,
        marker_uvs: complete.marker_uvs.clone(),
        kernel_width: cfg.kernel_width,
        history: trained.history,
        frames_used: complete.len(),
    })
}
