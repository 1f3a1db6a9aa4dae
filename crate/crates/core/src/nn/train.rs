use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::{Mlp, MlpGradient};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 150,
            seed: 0,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Invalid("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-sample objective on the network output.
pub trait SampleLoss: Sync {
    /// Loss value and its gradient with respect to the output vector.
    fn evaluate(&self, output: &[f64]) -> (f64, Vec<f64>);
}

/// Squared error against a fixed target vector.
#[derive(Debug, Clone)]
pub struct SquaredError(pub Vec<f64>);

impl SampleLoss for SquaredError {
    fn evaluate(&self, output: &[f64]) -> (f64, Vec<f64>) {
        let n = self.0.len() as f64;
        let mut loss = 0.0;
        let grad = output
            .iter()
            .zip(&self.0)
            .map(|(o, t)| {
                let r = o - t;
                loss += r * r;
                2.0 * r / n
            })
            .collect();
        (loss / n, grad)
    }
}

/// A per-sample loss that is exactly quadratic in the network output,
/// `oᵀ C o + 2 dᵀ o + const`.
pub trait QuadraticLoss: SampleLoss {
    fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>);
}

impl QuadraticLoss for SquaredError {
    fn quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.0.len() as f64;
        (
            DMatrix::identity(self.0.len(), self.0.len()) / n,
            DVector::from_iterator(self.0.len(), self.0.iter().map(|t| -t / n)),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample<L> {
    pub input: Vec<f64>,
    pub loss: L,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: Mlp,
    pub history: Vec<EpochLoss>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &Mlp) -> Self {
        let zeros: Vec<Vec<f64>> = MlpGradient::zeros_like(net)
            .slices()
            .map(|s| vec![0.0; s.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Mlp, grad: &MlpGradient, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(grad.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn batch_inputs<L>(data: &[TrainSample<L>], idx: &[usize], dim: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(dim, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        x.column_mut(c).copy_from_slice(&data[i].input);
    }
    x
}

/// Mean loss of `net` over `idx`, evaluated in fixed-size chunks.
pub fn mean_loss<L: SampleLoss>(net: &Mlp, data: &[TrainSample<L>], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let x = batch_inputs(data, chunk, net.input_dim());
        let out = net.forward_batch(&x).pop().unwrap();
        let losses: Vec<f64> = chunk
            .par_iter()
            .enumerate()
            .map(|(c, &i)| data[i].loss.evaluate(out.column(c).as_slice()).0)
            .collect();
        total += losses.iter().sum::<f64>();
    }
    total / idx.len() as f64
}

/// Mini-batch Adam on the mean per-sample loss. Deterministic for a given
/// seed: shuffles come from a seeded ChaCha stream and per-sample terms are
/// reduced in index order.
pub fn train<L: SampleLoss>(init: &Mlp, data: &[TrainSample<L>], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if let Some(bad) = data.iter().find(|s| s.input.len() != init.input_dim()) {
        return Err(Error::mismatch("training input", init.input_dim(), bad.input.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_val = if cfg.validation_fraction > 0.0 {
        ((cfg.validation_fraction * data.len() as f64).round() as usize).min(data.len() - 1)
    } else {
        0
    };
    order.shuffle(&mut rng);
    let val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    train_idx.sort_unstable();

    let mut net = init.clone();
    let mut last_finite = net.clone();
    let mut adam = Adam::new(&net);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            let x = batch_inputs(data, batch, net.input_dim());
            let pre = net.forward_batch(&x);
            let out = pre.last().unwrap();
            let grads: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .enumerate()
                .map(|(c, &i)| data[i].loss.evaluate(out.column(c).as_slice()))
                .collect();
            let inv = 1.0 / batch.len() as f64;
            let mut upstream = DMatrix::zeros(net.output_dim(), batch.len());
            for (c, (_, g)) in grads.iter().enumerate() {
                if g.len() != net.output_dim() {
                    return Err(Error::mismatch("loss gradient", net.output_dim(), g.len()));
                }
                upstream.column_mut(c).copy_from_slice(g);
            }
            upstream *= inv;
            let grad = net.backward_batch(&x, &pre, upstream);
            adam.update(&mut net, &grad, cfg.learning_rate);
        }
        let train_loss = mean_loss(&net, data, &train_idx);
        let validation = (!val_idx.is_empty()).then(|| mean_loss(&net, data, &val_idx));
        if !train_loss.is_finite() || !net.is_finite() {
            return Err(Error::Divergence {
                epoch,
                last_finite: Box::new(last_finite),
            });
        }
        last_finite.clone_from(&net);
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation,
        });
    }
    Ok(Trained { params: net, history })
}

/// Normal equations of the mean loss over a subset of samples as a
/// function of the output layer, hidden layers held fixed.
struct OutputSystem {
    normal: DMatrix<f64>,
    rhs: DVector<f64>,
    outputs: usize,
    features: usize,
}

impl OutputSystem {
    fn build<L: QuadraticLoss>(net: &Mlp, data: &[TrainSample<L>], idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        let m = net.output_dim();
        let feats: Vec<_> = idx
            .par_iter()
            .map(|&i| {
                let mut h = net.features(&data[i].input)?;
                h.push(1.0);
                Ok((h, data[i].loss.quadratic()))
            })
            .collect::<Result<Vec<_>>>()?;
        let f = feats[0].0.len();
        let dim = f * m;
        let inv = 1.0 / idx.len() as f64;
        let mut normal = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (h, (c, d)) in &feats {
            if c.shape() != (m, m) || d.len() != m {
                return Err(Error::mismatch("quadratic loss", m, d.len()));
            }
            for a in 0..f {
                rhs.rows_mut(a * m, m).axpy(-h[a] * inv, d, 1.0);
                for b in a..f {
                    let w = h[a] * h[b] * inv;
                    if w != 0.0 {
                        normal.view_mut((a * m, b * m), (m, m)).zip_apply(c, |x, y| *x += w * y);
                    }
                }
            }
        }
        for a in 0..f {
            for b in 0..a {
                let upper = normal.view((b * m, a * m), (m, m)).transpose();
                normal.view_mut((a * m, b * m), (m, m)).copy_from(&upper);
            }
        }
        Ok(Self {
            normal,
            rhs,
            outputs: m,
            features: f,
        })
    }

    /// Ridge solution towards a zero output layer; `ridge` is relative to
    /// the mean diagonal.
    fn solve(&self, net: &Mlp, ridge: f64) -> Result<Mlp> {
        let (m, f) = (self.outputs, self.features);
        let dim = m * f;
        let lambda = ridge * self.normal.trace() / dim as f64;
        let mut normal = self.normal.clone();
        for k in 0..dim {
            normal[(k, k)] += lambda;
        }
        let theta = normal
            .cholesky()
            .ok_or_else(|| Error::Invalid("output-layer system is not positive definite".into()))?
            .solve(&self.rhs);
        let weights = DMatrix::from_fn(m, f - 1, |r, a| theta[a * m + r]);
        let bias = DVector::from_fn(m, |r, _| theta[(f - 1) * m + r]);
        net.clone().with_output_layer(weights, bias)
    }
}

/// Re-solves the output layer in closed form with the hidden layers held
/// fixed. For a quadratic loss the mean loss is quadratic in the output
/// weights and bias, so the minimiser solves one linear system. `ridge` is
/// relative to the mean diagonal and pulls towards zero.
pub fn refit_output_layer<L: QuadraticLoss>(net: &Mlp, data: &[TrainSample<L>], ridge: f64) -> Result<Mlp> {
    let all: Vec<usize> = (0..data.len()).collect();
    OutputSystem::build(net, data, &all)?.solve(net, ridge)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefitConfig {
    /// Candidate relative ridges; empty disables the refit.
    pub ridges: Vec<f64>,
    /// Fraction of samples held out to choose between candidates.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for RefitConfig {
    fn default() -> Self {
        Self {
            ridges: vec![1e-12, 1e-9, 1e-6, 1e-3],
            holdout_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Outcome of [`select_output_refit`]: the chosen ridge, or `None` when
/// the gradient-trained output layer was kept.
#[derive(Debug, Clone)]
pub struct Refit {
    pub params: Mlp,
    pub ridge: Option<f64>,
}

/// Chooses between the gradient-trained output layer and closed-form
/// refits by their loss on held-out samples, then refits on all samples
/// with the winner. The trained net has seen the held-out samples, so the
/// comparison leans towards keeping it.
pub fn select_output_refit<L: QuadraticLoss>(net: &Mlp, data: &[TrainSample<L>], cfg: &RefitConfig) -> Result<Refit> {
    let keep = Refit {
        params: net.clone(),
        ridge: None,
    };
    if cfg.ridges.is_empty() || data.len() < 2 {
        return Ok(keep);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = ((cfg.holdout_fraction * data.len() as f64).round() as usize).clamp(1, data.len() - 1);
    let (val, fit) = order.split_at(n_val);
    let system = OutputSystem::build(net, data, fit)?;
    let mut best = (mean_loss(net, data, val), None);
    for &ridge in &cfg.ridges {
        let Ok(candidate) = system.solve(net, ridge) else {
            continue;
        };
        let loss = mean_loss(&candidate, data, val);
        if loss < best.0 {
            best = (loss, Some(ridge));
        }
    }
    match best.1 {
        Some(ridge) => Ok(Refit {
            params: refit_output_layer(net, data, ridge)?,
            ridge: Some(ridge),
        }),
        None => Ok(keep),
    }
}
