use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineSurface, ControlGrid};
use crate::fk::{FkDataset, ShapeModel};
use crate::nn::{self, EpochLoss, Mlp, MlpCheckpoint, Normalizer, SquaredError, TrainConfig, TrainSample};
use crate::oracle::{Actuation, CHAMBERS};
use crate::{Error, Result};

/// What the network regresses: offsets from the mean grid or raw control
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Delta,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FkConfig {
    pub hidden: Vec<usize>,
    pub representation: Representation,
    pub train: TrainConfig,
}

impl Default for FkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            representation: Representation::Delta,
            train: TrainConfig::default(),
        }
    }
}

/// Regressor `a ↦ reference + denormalize(net(normalize(a)))` on a flat
/// output vector. Shared by the control-grid model and the dense-vertex
/// ablation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FlatRegressor {
    pub net: Mlp,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub reference: Vec<f64>,
    pub seed: u64,
}

impl FlatRegressor {
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        reference: Vec<f64>,
        hidden: &[usize],
        cfg: &TrainConfig,
    ) -> Result<(Self, Vec<EpochLoss>)> {
        let input_norm = Normalizer::standardize(inputs.iter().map(Vec::as_slice))?;
        let offsets: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| t.iter().zip(&reference).map(|(t, r)| t - r).collect())
            .collect();
        let output_norm = Normalizer::pooled_rms(offsets.iter().map(Vec::as_slice))?;
        let data: Vec<TrainSample<SquaredError>> = inputs
            .iter()
            .zip(&offsets)
            .map(|(x, y)| TrainSample {
                input: input_norm.normalize(x),
                loss: SquaredError(output_norm.normalize(y)),
            })
            .collect();
        let mut dims = vec![inputs[0].len()];
        dims.extend_from_slice(hidden);
        dims.push(reference.len());
        let init = Mlp::new(&dims, cfg.seed)?;
        let trained = nn::train(&init, &data, cfg)?;
        Ok((
            Self {
                net: trained.params,
                input_norm,
                output_norm,
                reference,
                seed: cfg.seed,
            },
            trained.history,
        ))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.net.forward(&self.input_norm.normalize(x))?;
        Ok(self
            .output_norm
            .denormalize(&y)
            .iter()
            .zip(&self.reference)
            .map(|(d, r)| d + r)
            .collect())
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = self.net.input_jacobian(&self.input_norm.normalize(x))?;
        for (mut row, s) in j.row_iter_mut().zip(&self.output_norm.scale) {
            row *= *s;
        }
        for (mut col, s) in j.column_iter_mut().zip(&self.input_norm.scale) {
            col /= *s;
        }
        Ok(j)
    }

    pub fn vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let scaled: Vec<f64> = upstream
            .iter()
            .zip(&self.output_norm.scale)
            .map(|(u, s)| u * s)
            .collect();
        let g = self.net.input_vjp(&self.input_norm.normalize(x), &scaled)?;
        Ok(g.iter().zip(&self.input_norm.scale).map(|(g, s)| g / s).collect())
    }
}

/// Learned forward kinematics `a ↦ 𝒮^c(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FkModel {
    inner: FlatRegressor,
    representation: Representation,
    mean_grid: ControlGrid,
    degree: usize,
    history: Vec<EpochLoss>,
}

impl FkModel {
    pub fn net(&self) -> &Mlp {
        &self.inner.net
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn input_norm(&self) -> &Normalizer {
        &self.inner.input_norm
    }

    /// Network input (standardised actuation).
    pub fn net_input(&self, a: &Actuation) -> Vec<f64> {
        self.inner.input_norm.normalize(a.as_slice())
    }

    pub fn predict_flat(&self, a: &Actuation) -> Result<Vec<f64>> {
        self.inner.predict(a.as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        let (rows, cols) = self.mean_grid.dims();
        let file = FkModelFile {
            network: self.inner.net.to_checkpoint(
                Some(self.inner.input_norm.clone()),
                Some(self.inner.output_norm.clone()),
                self.inner.seed,
            ),
            representation: self.representation,
            rows,
            cols,
            degree: self.degree,
            mean_grid: self.mean_grid.flatten(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FkModelFile = serde_json::from_str(text)?;
        let mean_grid = ControlGrid::from_flat(f.rows, f.cols, &f.mean_grid)?;
        let net = f.network.to_mlp()?;
        let out = 3 * f.rows * f.cols;
        if net.output_dim() != out || net.input_dim() != CHAMBERS {
            return Err(Error::mismatch("fk network output", out, net.output_dim()));
        }
        let reference = match f.representation {
            Representation::Delta => mean_grid.flatten(),
            Representation::Absolute => vec![0.0; out],
        };
        Ok(Self {
            inner: FlatRegressor {
                net,
                input_norm: f.network.input_norm.unwrap_or_else(|| Normalizer::identity(CHAMBERS)),
                output_norm: f.network.output_norm.unwrap_or_else(|| Normalizer::identity(out)),
                reference,
                seed: f.network.seed,
            },
            representation: f.representation,
            mean_grid,
            degree: f.degree,
            history: Vec::new(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FkModelFile {
    network: MlpCheckpoint,
    representation: Representation,
    rows: usize,
    cols: usize,
    degree: usize,
    mean_grid: Vec<f64>,
}

impl ShapeModel for FkModel {
    fn dims(&self) -> (usize, usize) {
        self.mean_grid.dims()
    }

    fn degree(&self) -> usize {
        self.degree
    }

    fn mean_grid(&self) -> &ControlGrid {
        &self.mean_grid
    }

    fn controls(&self, a: &Actuation) -> Result<BSplineSurface> {
        let (rows, cols) = self.dims();
        BSplineSurface::clamped(ControlGrid::from_flat(rows, cols, &self.predict_flat(a)?)?, self.degree)
    }

    fn controls_jacobian(&self, a: &Actuation) -> Result<DMatrix<f64>> {
        self.inner.jacobian(a.as_slice())
    }

    fn controls_vjp(&self, a: &Actuation, upstream: &[f64]) -> Result<[f64; CHAMBERS]> {
        let g = self.inner.vjp(a.as_slice(), upstream)?;
        Ok(std::array::from_fn(|k| g[k]))
    }

    fn activation_signature(&self, a: &Actuation) -> Result<Vec<bool>> {
        self.inner.net.activation_pattern(&self.net_input(a))
    }
}

/// Trains the control-grid network on the dataset's training split.
pub fn train_fk(ds: &FkDataset, cfg: &FkConfig) -> Result<FkModel> {
    if ds.train.is_empty() {
        return Err(Error::Invalid("dataset has an empty training split".into()));
    }
    let inputs: Vec<Vec<f64>> = ds.train.iter().map(|&i| ds.actuations[i].as_slice().to_vec()).collect();
    let targets: Vec<Vec<f64>> = ds
        .train
        .iter()
        .map(|&i| ds.controls(i).map(|g| g.flatten()))
        .collect::<Result<_>>()?;
    let reference = match cfg.representation {
        Representation::Delta => ds.mean_grid.flatten(),
        Representation::Absolute => vec![0.0; targets[0].len()],
    };
    let (inner, history) = FlatRegressor::fit(&inputs, &targets, reference, &cfg.hidden, &cfg.train)?;
    Ok(FkModel {
        inner,
        representation: cfg.representation,
        mean_grid: ds.mean_grid.clone(),
        degree: ds.degree,
        history,
    })
}

/// `predict_controls(model, a)`: the decoded B-spline surface.
pub fn predict_controls(model: &FkModel, a: &Actuation) -> Result<BSplineSurface> {
    model.controls(a)
}

/// `∂𝒮^c/∂a` as a `3mn × 9` matrix (flattening order of [`ControlGrid::flatten`]).
pub fn fk_jacobian(model: &FkModel, a: &Actuation) -> Result<DMatrix<f64>> {
    model.controls_jacobian(a)
}
