//! Sequential multilayer perceptrons with inverted dropout, hand-written
//! reverse-mode gradients, MSE loss and Adam.
//!
//! Batches are row-major in the sense of the math: a batch of `B` inputs is a
//! `B × in` matrix, one sample per row. Dropout is applied to every hidden
//! layer output (never to the network output) and is the only source of
//! stochasticity in a forward pass.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NetworkEntry, TensorEntry};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer `a = act(W x + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameters of a sequential MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatMlp", try_from = "FlatMlp")]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// Builds from explicit layers, checking that shapes chain and values are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("at least one layer", "0 layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape(
                    format!("bias of length {} in layer {i}", l.out_dim()),
                    l.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::shape(
                    format!("layer {i} in-dim {}", layers[i - 1].out_dim()),
                    l.in_dim(),
                ));
            }
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidConfig(format!(
                    "non-finite parameter in layer {i}"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-style uniform initialization: `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
    /// Hidden layers use ReLU, the last layer is linear.
    pub fn new_random(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-bound..bound)
                    }),
                    bias: DVector::zeros(fan_out),
                    activation: if i + 1 == n {
                        Activation::Linear
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self { layers }
    }

    /// All-zero parameters (ReLU hidden, linear output).
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                weights: DMatrix::zeros(dims[i + 1], dims[i]),
                bias: DVector::zeros(dims[i + 1]),
                activation: if i + 1 == n {
                    Activation::Linear
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters: per layer, the weight matrix row by row, then the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for r in 0..l.out_dim() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`MlpParams::to_flat`] for the same architecture.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for r in 0..l.out_dim() {
                for c in 0..l.in_dim() {
                    l.weights[(r, c)] = it.next().unwrap();
                }
            }
            for v in l.bias.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Rounds every parameter through `f32`, the on-disk precision.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            l.weights.apply(|v| *v = *v as f32 as f64);
            l.bias.apply(|v| *v = *v as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

// Exact (f64) serialized form shared by parameters and gradients.
#[derive(Serialize, Deserialize)]
struct FlatMlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    values: Vec<f64>,
}

impl From<MlpParams> for FlatMlp {
    fn from(p: MlpParams) -> Self {
        Self {
            dims: p.dims(),
            activations: p.activations(),
            values: p.to_flat(),
        }
    }
}

impl TryFrom<FlatMlp> for MlpParams {
    type Error = Error;

    fn try_from(f: FlatMlp) -> Result<Self> {
        if f.dims.len() < 2 || f.activations.len() + 1 != f.dims.len() {
            return Err(Error::shape(
                format!("{} activations", f.dims.len().saturating_sub(1)),
                f.activations.len(),
            ));
        }
        let mut p = MlpParams::zeros(&f.dims);
        for (l, a) in p.layers.iter_mut().zip(&f.activations) {
            l.activation = *a;
        }
        p.set_flat(&f.values)?;
        MlpParams::from_layers(p.layers)
    }
}

impl From<MlpGrads> for FlatMlp {
    fn from(g: MlpGrads) -> Self {
        let mut dims = vec![g.d_weights.first().map_or(0, |w| w.ncols())];
        dims.extend(g.d_weights.iter().map(|w| w.nrows()));
        Self {
            activations: vec![Activation::Linear; dims.len() - 1],
            dims,
            values: g.to_flat(),
        }
    }
}

impl TryFrom<FlatMlp> for MlpGrads {
    type Error = Error;

    fn try_from(f: FlatMlp) -> Result<Self> {
        if f.dims.len() < 2 {
            return Err(Error::shape("at least two dims", f.dims.len()));
        }
        MlpGrads::from_flat(&MlpParams::zeros(&f.dims), &f.values)
    }
}

/// Forward intermediates needed by [`backward_batch`].
#[derive(Debug, Clone)]
pub struct GradTape {
    // Input fed to each layer (already masked for layers after the first).
    inputs: Vec<DMatrix<f64>>,
    // Pre-activations of each layer.
    pre: Vec<DMatrix<f64>>,
    // Scaled dropout mask applied to each hidden layer's output.
    masks: Vec<Option<DMatrix<f64>>>,
    dims: Vec<usize>,
}

impl GradTape {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }
}

/// Gradients with the same shapes as [`MlpParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatMlp", try_from = "FlatMlp")]
pub struct MlpGrads {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            d_weights: params
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            d_biases: params
                .layers
                .iter()
                .map(|l| DVector::zeros(l.out_dim()))
                .collect(),
        }
    }

    /// Inverse of [`MlpGrads::to_flat`] for the architecture of `like`.
    pub fn from_flat(like: &MlpParams, flat: &[f64]) -> Result<Self> {
        let mut p = like.clone();
        p.set_flat(flat)?;
        Ok(Self {
            d_weights: p.layers.iter().map(|l| l.weights.clone()).collect(),
            d_biases: p.layers.iter().map(|l| l.bias.clone()).collect(),
        })
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_weights.iter_mut().for_each(|w| *w *= factor);
        self.d_biases.iter_mut().for_each(|b| *b *= factor);
    }

    /// Same ordering as [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.d_weights.iter().all(|w| w.iter().all(|v| *v == 0.0))
            && self.d_biases.iter().all(|b| b.iter().all(|v| *v == 0.0))
    }

    pub fn norm_squared(&self) -> f64 {
        self.d_weights
            .iter()
            .map(|w| w.norm_squared())
            .chain(self.d_biases.iter().map(|b| b.norm_squared()))
            .sum()
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Stochastic forward pass over a batch (`B × in`).
///
/// With `dropout_rate > 0` each hidden activation is kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`; the RNG is not touched when the
/// rate is zero.
pub fn forward_batch(
    params: &MlpParams,
    input: &DMatrix<f64>,
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, GradTape)> {
    check_rate(dropout_rate)?;
    if input.ncols() != params.input_dim() {
        return Err(Error::shape(
            format!("input dim {}", params.input_dim()),
            input.ncols(),
        ));
    }
    let n = params.layers.len();
    let keep = 1.0 - dropout_rate;
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut x = input.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = &x * layer.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += layer.bias.transpose();
        }
        let mut a = z.map(|v| layer.activation.apply(v));
        let mask = if i + 1 < n && dropout_rate > 0.0 {
            let scale = 1.0 / keep;
            let m = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            });
            a.component_mul_assign(&m);
            Some(m)
        } else {
            None
        };
        inputs.push(x);
        pre.push(z);
        masks.push(mask);
        x = a;
    }
    Ok((
        x,
        GradTape {
            inputs,
            pre,
            masks,
            dims: params.dims(),
        },
    ))
}

/// Single-sample forward pass.
pub fn forward(
    params: &MlpParams,
    input: &[f64],
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> Result<(DVector<f64>, GradTape)> {
    let x = DMatrix::from_row_slice(1, input.len(), input);
    let (y, tape) = forward_batch(params, &x, dropout_rate, rng)?;
    Ok((y.row(0).transpose(), tape))
}

/// Reverse pass: parameter gradients (summed over the batch) and the gradient
/// with respect to the batch input.
pub fn backward_batch(
    params: &MlpParams,
    tape: &GradTape,
    output_grad: &DMatrix<f64>,
) -> Result<(MlpGrads, DMatrix<f64>)> {
    if tape.dims != params.dims() {
        return Err(Error::TapeMismatch(format!(
            "tape dims {:?} vs params {:?}",
            tape.dims,
            params.dims()
        )));
    }
    if output_grad.ncols() != tape.output_dim() || output_grad.nrows() != tape.batch_size() {
        return Err(Error::TapeMismatch(format!(
            "output grad {}x{} vs output {}x{}",
            output_grad.nrows(),
            output_grad.ncols(),
            tape.batch_size(),
            tape.output_dim()
        )));
    }
    let n = params.layers.len();
    let mut grads = MlpGrads::zeros_like(params);
    let mut d_a = output_grad.clone();
    for i in (0..n).rev() {
        let layer = &params.layers[i];
        let d_z = d_a.zip_map(&tape.pre[i], |g, z| g * layer.activation.derivative(z));
        grads.d_weights[i] = d_z.tr_mul(&tape.inputs[i]);
        grads.d_biases[i] = d_z.row_sum().transpose();
        let mut d_x = &d_z * &layer.weights;
        if i > 0 {
            if let Some(m) = &tape.masks[i - 1] {
                d_x.component_mul_assign(m);
            }
        }
        d_a = d_x;
    }
    Ok((grads, d_a))
}

/// Single-sample reverse pass.
pub fn backward(params: &MlpParams, tape: &GradTape, output_grad: &[f64]) -> Result<MlpGrads> {
    if output_grad.len() != tape.output_dim() || tape.batch_size() != 1 {
        return Err(Error::TapeMismatch(format!(
            "output grad length {} vs output {}",
            output_grad.len(),
            tape.output_dim()
        )));
    }
    let g = DMatrix::from_row_slice(1, output_grad.len(), output_grad);
    backward_batch(params, tape, &g).map(|(grads, _)| grads)
}

/// Mean of squared componentwise differences.
pub fn mse(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::shape(target.len(), prediction.len()));
    }
    if prediction.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(s / prediction.len() as f64)
}

/// Gradient of [`mse`] with respect to `prediction`.
pub fn mse_grad(prediction: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if prediction.len() != target.len() {
        return Err(Error::shape(target.len(), prediction.len()));
    }
    let k = 2.0 / prediction.len() as f64;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| k * (p - t))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            t: 0,
            config: AdamConfig::default(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let dims_ok = params.layers.len() == grads.d_weights.len()
        && params
            .layers
            .iter()
            .zip(&grads.d_weights)
            .all(|(l, g)| l.weights.shape() == g.shape())
        && state.m.d_weights.len() == grads.d_weights.len();
    if !dims_ok {
        return Err(Error::shape(
            format!("{:?}", params.dims()),
            "gradient of another architecture",
        ));
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let (gw, mw, vw) = (
            &grads.d_weights[i],
            &mut state.m.d_weights[i],
            &mut state.v.d_weights[i],
        );
        for (k, p) in layer.weights.iter_mut().enumerate() {
            update(p, gw[k], &mut mw[k], &mut vw[k]);
        }
        let (gb, mb, vb) = (
            &grads.d_biases[i],
            &mut state.m.d_biases[i],
            &mut state.v.d_biases[i],
        );
        for (k, p) in layer.bias.iter_mut().enumerate() {
            update(p, gb[k], &mut mb[k], &mut vb[k]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut p = MlpParams::zeros(&[3, 4, 2]);
        p.layers_mut()[1].bias = DVector::from_vec(vec![0.5, -1.5]);
        let (y, _) = forward(&p, &[1.0, 2.0, 3.0], 0.0, &mut rng(0)).unwrap();
        assert_eq!(y.as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn identity_linear_layer() {
        let p = MlpParams::from_layers(vec![Layer {
            weights: DMatrix::identity(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Linear,
        }])
        .unwrap();
        let (y, _) = forward(&p, &[1.0, -2.0, 3.0], 0.0, &mut rng(0)).unwrap();
        assert_eq!(y.as_slice(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn determinism_and_reproducibility() {
        let p = MlpParams::new_random(&[4, 16, 16, 3], &mut rng(1));
        let x = [0.1, -0.2, 0.3, 0.4];
        let (a, _) = forward(&p, &x, 0.0, &mut rng(5)).unwrap();
        let (b, _) = forward(&p, &x, 0.0, &mut rng(6)).unwrap();
        assert_eq!(a, b);
        let (c, _) = forward(&p, &x, 0.5, &mut rng(7)).unwrap();
        let (d, _) = forward(&p, &x, 0.5, &mut rng(7)).unwrap();
        assert_eq!(c, d);
        let (e, _) = forward(&p, &x, 0.5, &mut rng(8)).unwrap();
        assert_ne!(c, e);
    }

    #[test]
    fn shape_errors() {
        let p = MlpParams::zeros(&[3, 2]);
        assert!(matches!(
            forward(&p, &[1.0, 2.0], 0.0, &mut rng(0)),
            Err(Error::ShapeMismatch { .. })
        ));
        let (_, tape) = forward(&p, &[1.0, 2.0, 3.0], 0.0, &mut rng(0)).unwrap();
        assert!(matches!(
            backward(&p, &tape, &[1.0]),
            Err(Error::TapeMismatch(_))
        ));
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(forward(&p, &[1.0, 2.0, 3.0], 1.0, &mut rng(0)).is_err());
        let bad = MlpParams::from_layers(vec![
            Layer {
                weights: DMatrix::zeros(4, 3),
                bias: DVector::zeros(4),
                activation: Activation::Relu,
            },
            Layer {
                weights: DMatrix::zeros(2, 5),
                bias: DVector::zeros(2),
                activation: Activation::Linear,
            },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = MlpParams::new_random(&[3, 5, 2], &mut rng(2));
        let (_, tape) = forward(&p, &[0.3, 0.2, -0.1], 0.3, &mut rng(3)).unwrap();
        let g = backward(&p, &tape, &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn linear_layer_mse_gradient_by_hand() {
        // One linear layer, L = mean((Wx + b - y)^2): dL/dW = 2(ŷ - y)xᵀ / dim.
        let p = MlpParams::new_random(&[3, 2], &mut rng(4));
        let x = [0.5, -1.0, 2.0];
        let target = [1.0, -1.0];
        let (y, tape) = forward(&p, &x, 0.0, &mut rng(0)).unwrap();
        let g_out = mse_grad(y.as_slice(), &target).unwrap();
        let g = backward(&p, &tape, &g_out).unwrap();
        for r in 0..2 {
            let e = 2.0 * (y[r] - target[r]) / 2.0;
            for c in 0..3 {
                assert!((g.d_weights[0][(r, c)] - e * x[c]).abs() < 1e-12);
            }
            assert!((g.d_biases[0][r] - e).abs() < 1e-12);
        }
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn three_layer_matches_finite_differences() {
        let mut p = MlpParams::new_random(&[5, 7, 6, 3], &mut rng(9));
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let target = [0.2, -0.4, 0.9];
        let seed = 11;
        let (y, tape) = forward(&p, &x, 0.2, &mut rng(seed)).unwrap();
        let g = backward(&p, &tape, &mse_grad(y.as_slice(), &target).unwrap()).unwrap();
        let analytic = g.to_flat();
        let base = p.to_flat();
        let h = 1e-5;
        let mut ok = 0;
        for i in 0..base.len() {
            let mut loss_at = |v: f64| {
                let mut flat = base.clone();
                flat[i] = v;
                p.set_flat(&flat).unwrap();
                let (y, _) = forward(&p, &x, 0.2, &mut rng(seed)).unwrap();
                mse(y.as_slice(), &target).unwrap()
            };
            let numeric = (loss_at(base[i] + h) - loss_at(base[i] - h)) / (2.0 * h);
            if relative_error(analytic[i], numeric) < 1e-4 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.99 * base.len() as f64, "{ok}/{}", base.len());
    }

    #[test]
    fn batch_input_gradient_matches_finite_differences() {
        let p = MlpParams::new_random(&[4, 8, 2], &mut rng(12));
        let x = DMatrix::from_fn(3, 4, |r, c| 0.1 * (r as f64 + 1.0) - 0.2 * c as f64);
        let (y, tape) = forward_batch(&p, &x, 0.0, &mut rng(0)).unwrap();
        let (_, dx) = backward_batch(&p, &tape, &DMatrix::from_element(3, 2, 1.0)).unwrap();
        let _ = y;
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[(r, c)] += h;
                let mut xm = x.clone();
                xm[(r, c)] -= h;
                let fp = forward_batch(&p, &xp, 0.0, &mut rng(0)).unwrap().0.sum();
                let fm = forward_batch(&p, &xm, 0.0, &mut rng(0)).unwrap().0.sum();
                let numeric = (fp - fm) / (2.0 * h);
                assert!((numeric - dx[(r, c)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap() - 14.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // Fixed linear layer behind one hidden ReLU layer with positive activations.
        let p = MlpParams::from_layers(vec![
            Layer {
                weights: DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, 0.3, 0.3]),
                bias: DVector::from_vec(vec![0.1, 0.1, 0.1]),
                activation: Activation::Relu,
            },
            Layer {
                weights: DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]),
                bias: DVector::zeros(1),
                activation: Activation::Linear,
            },
        ])
        .unwrap();
        let x = [1.0, 1.0];
        let exact = forward(&p, &x, 0.0, &mut rng(0)).unwrap().0[0];
        let rate = 0.3;
        let n = 100_000;
        let batch = DMatrix::from_fn(n, 2, |_, c| x[c]);
        let (y, _) = forward_batch(&p, &batch, rate, &mut rng(21)).unwrap();
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "mean {mean} exact {exact} se {se}"
        );
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = MlpParams::new_random(&[2, 3, 1], &mut rng(1));
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &MlpGrads::zeros_like(&before), &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    fn scalar_param(w: f64) -> MlpParams {
        MlpParams::from_layers(vec![Layer {
            weights: DMatrix::from_element(1, 1, w),
            bias: DVector::zeros(1),
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&p);
        let mut g = MlpGrads::zeros_like(&p);
        g.d_weights[0][(0, 0)] = -3.7;
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        // m̂ = g, v̂ = g², step = lr · g / (|g| + eps)
        let expected = 1.0 + 0.01 * 3.7 / (3.7 + 1e-8);
        assert!((p.layers()[0].weights[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = scalar_param(0.0);
        let mut st = AdamState::new(&p);
        for _ in 0..100 {
            let w = p.layers()[0].weights[(0, 0)];
            let mut g = MlpGrads::zeros_like(&p);
            g.d_weights[0][(0, 0)] = 2.0 * (w - 3.0);
            adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        }
        let w = p.layers()[0].weights[(0, 0)];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
        assert_eq!(st.t, 100);
    }

    #[test]
    fn flat_round_trip() {
        let mut p = MlpParams::new_random(&[3, 4, 2], &mut rng(3));
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.num_params());
        let mut q = MlpParams::zeros(&[3, 4, 2]);
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        p.round_to_f32();
        assert!(p.is_finite());
    }
}
