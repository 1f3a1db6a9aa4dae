use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fully connected network: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Parameter gradients laid out like [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpGradient {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: m.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }
}

impl Mlp {
    /// He-style uniform initialisation `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Invalid(format!("bad layer dimensions {layer_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Invalid("weights and biases must pair up".into()));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *dims.last().unwrap() {
                return Err(Error::mismatch("layer input", *dims.last().unwrap(), w.ncols()));
            }
            if b.len() != w.nrows() {
                return Err(Error::mismatch("bias", w.nrows(), b.len()));
            }
            dims.push(w.nrows());
        }
        let m = Self {
            layer_dims: dims,
            weights,
            biases,
        };
        if !m.is_finite() {
            return Err(Error::Invalid("non-finite network parameter".into()));
        }
        Ok(m)
    }

    /// Scales the output layer weights, e.g. to start close to the output bias.
    pub fn with_output_gain(mut self, gain: f64) -> Self {
        if let Some(w) = self.weights.last_mut() {
            *w *= gain;
        }
        self
    }

    pub fn with_output_bias(mut self, bias: &[f64]) -> Result<Self> {
        let b = self.biases.last_mut().expect("non-empty network");
        if bias.len() != b.len() {
            return Err(Error::mismatch("output bias", b.len(), bias.len()));
        }
        b.copy_from_slice(bias);
        Ok(self)
    }

    /// Replaces the output layer, keeping the hidden layers.
    pub fn with_output_layer(mut self, weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let w = self.weights.last_mut().expect("non-empty network");
        if weights.shape() != w.shape() || bias.len() != w.nrows() {
            return Err(Error::mismatch("output layer", w.len(), weights.len()));
        }
        *w = weights;
        *self.biases.last_mut().unwrap() = bias;
        Ok(self)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::mismatch("network input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn pre_activations(&self, x: &[f64]) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.weights.len());
        let mut a = DVector::from_column_slice(x);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * &a + b;
            if l + 1 < self.weights.len() {
                a = z.map(relu);
            }
            out.push(z);
        }
        out
    }

    /// Activations entering the output layer.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z = self.pre_activations(x);
        Ok(match z.len() {
            1 => x.to_vec(),
            n => z[n - 2].iter().map(|&v| relu(v)).collect(),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z = self.pre_activations(x);
        Ok(z.last().unwrap().as_slice().to_vec())
    }

    /// Sign pattern of every hidden pre-activation; equal patterns mean the
    /// same linear region.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        self.check_input(x)?;
        let z = self.pre_activations(x);
        Ok(z[..z.len() - 1]
            .iter()
            .flat_map(|zl| zl.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect())
    }

    /// Smallest |pre-activation| over hidden units; distance-to-kink proxy.
    pub fn kink_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let z = self.pre_activations(x);
        Ok(z[..z.len() - 1]
            .iter()
            .flat_map(|zl| zl.iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min))
    }

    /// Reverse-mode gradient of `⟨upstream, forward(x)⟩` w.r.t. all parameters.
    pub fn param_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGradient> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::mismatch("upstream gradient", self.output_dim(), upstream.len()));
        }
        let (grad, _) = self.backward(x, upstream);
        Ok(grad)
    }

    /// Vector-Jacobian product `Jᵀ·upstream` w.r.t. the input.
    pub fn input_vjp(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::mismatch("upstream gradient", self.output_dim(), upstream.len()));
        }
        let z = self.pre_activations(x);
        let mut delta = DVector::from_column_slice(upstream);
        for l in (0..self.weights.len()).rev() {
            if l + 1 < self.weights.len() {
                delta.component_mul_assign(&z[l].map(relu_slope));
            }
            delta = self.weights[l].tr_mul(&delta);
        }
        Ok(delta.as_slice().to_vec())
    }

    fn backward(&self, x: &[f64], upstream: &[f64]) -> (MlpGradient, DVector<f64>) {
        let z = self.pre_activations(x);
        let layers = self.weights.len();
        let mut grad = MlpGradient::zeros_like(self);
        let mut delta = DVector::from_column_slice(upstream);
        for l in (0..layers).rev() {
            if l + 1 < layers {
                delta.component_mul_assign(&z[l].map(relu_slope));
            }
            let input = if l == 0 {
                DVector::from_column_slice(x)
            } else {
                z[l - 1].map(relu)
            };
            grad.weights[l] = &delta * input.transpose();
            grad.biases[l] = delta.clone();
            delta = self.weights[l].tr_mul(&delta);
        }
        (grad, delta)
    }

    /// Exact Jacobian `∂forward/∂x` (out × in); subgradient 0 at ReLU kinks.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let z = self.pre_activations(x);
        let layers = self.weights.len();
        // forward accumulation keeps the running product narrow on the input side
        let mut jac = self.weights[0].clone();
        for l in 1..layers {
            let slope = z[l - 1].map(relu_slope);
            for (mut row, s) in jac.row_iter_mut().zip(slope.iter()) {
                row *= *s;
            }
            jac = &self.weights[l] * jac;
        }
        Ok(jac)
    }

    /// Batched forward pass; `inputs` holds one sample per column. Returns
    /// pre-activations per layer.
    pub(crate) fn forward_batch(&self, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.weights.len());
        let mut a = inputs.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l + 1 < self.weights.len() {
                a = z.map(relu);
            }
            out.push(z);
        }
        out
    }

    /// Summed parameter gradient over a batch given `∂loss/∂output` columns.
    pub(crate) fn backward_batch(
        &self,
        inputs: &DMatrix<f64>,
        pre: &[DMatrix<f64>],
        upstream: DMatrix<f64>,
    ) -> MlpGradient {
        let layers = self.weights.len();
        let mut grad = MlpGradient::zeros_like(self);
        let mut delta = upstream;
        for l in (0..layers).rev() {
            if l + 1 < layers {
                delta.component_mul_assign(&pre[l].map(relu_slope));
            }
            if l == 0 {
                grad.weights[l] = &delta * inputs.transpose();
            } else {
                grad.weights[l] = &delta * pre[l - 1].map(relu).transpose();
            }
            grad.biases[l] = delta.column_sum();
            if l > 0 {
                delta = self.weights[l].tr_mul(&delta);
            }
        }
        grad
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_mut_slice())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
    }

    pub fn to_checkpoint(
        &self,
        input_norm: Option<Normalizer>,
        output_norm: Option<Normalizer>,
        seed: u64,
    ) -> MlpCheckpoint {
        MlpCheckpoint {
            layer_dims: self.layer_dims.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| {
                    // row-major
                    (0..w.nrows())
                        .flat_map(|r| (0..w.ncols()).map(move |c| (r, c)))
                        .map(|(r, c)| w[(r, c)])
                        .collect()
                })
                .collect(),
            biases: self.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
            input_norm,
            output_norm,
            seed,
        }
    }
}

impl MlpGradient {
    pub(crate) fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice())
            .chain(self.biases.iter().map(|b| b.as_slice()))
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn relu_slope(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Affine feature map `x ↦ (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-feature mean and standard deviation; constant features keep unit scale.
    pub fn standardize<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows
            .first()
            .ok_or_else(|| Error::Invalid("cannot standardize an empty set".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::mismatch("feature row", dim, r.len()));
            }
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let sd = (v / n).sqrt();
                if sd > 1e-9 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { shift: mean, scale })
    }

    /// Zero shift and one pooled scale (RMS over all entries).
    pub fn pooled_rms<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut dim = None;
        for r in rows {
            if *dim.get_or_insert(r.len()) != r.len() {
                return Err(Error::mismatch("feature row", dim.unwrap(), r.len()));
            }
            sum += r.iter().map(|x| x * x).sum::<f64>();
            count += r.len();
        }
        let dim = dim.ok_or_else(|| Error::Invalid("cannot scale an empty set".into()))?;
        let rms = (sum / count as f64).sqrt();
        let rms = if rms > 0.0 { rms } else { 1.0 };
        Ok(Self {
            shift: vec![0.0; dim],
            scale: vec![rms; dim],
        })
    }

    /// Per-feature mean shift with one pooled scale (RMS of the centred
    /// entries). Keeps near-constant features from being blown up.
    pub fn centered_pooled<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let shift = Self::standardize(rows.iter().copied())?.shift;
        let centred: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&shift).map(|(x, m)| x - m).collect())
            .collect();
        let scale = Self::pooled_rms(centred.iter().map(Vec::as_slice))?.scale;
        Ok(Self { shift, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((x, s), k)| (x - s) / k)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((y, s), k)| s + k * y)
            .collect()
    }
}

/// Serialised network: `{layer_dims, weights (row-major), biases,
/// input_norm, output_norm, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_norm: Option<Normalizer>,
    pub output_norm: Option<Normalizer>,
    pub seed: u64,
}

impl MlpCheckpoint {
    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.weights.len() + 1 != self.layer_dims.len() || self.biases.len() != self.weights.len() {
            return Err(Error::Invalid("checkpoint layer count mismatch".into()));
        }
        let weights = self
            .weights
            .iter()
            .zip(self.layer_dims.windows(2))
            .map(|(w, d)| {
                if w.len() != d[0] * d[1] {
                    return Err(Error::mismatch("checkpoint weights", d[0] * d[1], w.len()));
                }
                Ok(DMatrix::from_row_slice(d[1], d[0], w))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = self.biases.iter().map(|b| DVector::from_column_slice(b)).collect();
        Mlp::from_parts(weights, biases)
    }
}
