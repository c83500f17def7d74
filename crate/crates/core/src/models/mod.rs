//! The four learned submodels, the filter that composes them, end-to-end
//! training through the filter, and evaluation.
//!
//! - transition `f`: `N·14 → 14`, predicts the change from the latest state;
//! - observation `h`: `14 → 14`, maps a state to learned-observation space;
//! - sensor `s`: `22 → 14`, maps a normalized raw observation to that space;
//! - noise `r`: `14 → 14`, diagonal observation noise from the mean sensor output.
//!
//! The transition and sensor networks are stochastic through dropout.

mod eval;
mod filter;
pub mod graph;
mod train;

pub use eval::{
    baseline_metrics, evaluate, mean_state, pose_errors, wrap_degrees, EvalReport, Metrics,
};
pub use filter::{
    filter_step, project_estimate, run_filter, step_rng, FilterConfig, PoseFilter, StepOutput,
};
pub use graph::BundleGrads;
pub use train::{
    build_windows, loss, loss_and_grads, split_dataset, train, window_posteriors, EpochMetrics,
    HistoryMode, LossComponents, TrainConfig, TrainOutcome, Trainer, TrainerState, Window,
};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{Trajectory, OBS_DIM, STATE_DIM};
use crate::enkf::{ObservationModel, SensorModel, TransitionModel};
use crate::error::{Error, Result};
use crate::neuralnet::{
    forward_batch, load_checkpoint, save_checkpoint, Checkpoint, Layer, MlpParams, NetworkEntry,
};

/// Lower bound added to every learned noise variance.
pub const NOISE_FLOOR: f64 = 1e-6;
/// Smallest per-channel scale used to normalize sensor inputs.
pub const MIN_INPUT_SCALE: f64 = 1e-3;
/// Normalized sensor inputs are clamped to `±INPUT_CLAMP`.
pub const INPUT_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetId {
    Transition,
    Observation,
    Sensor,
    Noise,
}

impl NetId {
    pub const ALL: [NetId; 4] = [
        NetId::Transition,
        NetId::Observation,
        NetId::Sensor,
        NetId::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetId::Transition => "transition",
            NetId::Observation => "observation",
            NetId::Sensor => "sensor",
            NetId::Noise => "noise",
        }
    }
}

/// Layer widths and dropout rates of the four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub state_dim: usize,
    pub raw_dim: usize,
    /// Number of past states fed to the transition network.
    pub window: usize,
    pub transition_hidden: Vec<usize>,
    pub observation_hidden: Vec<usize>,
    pub sensor_hidden: Vec<usize>,
    pub noise_hidden: Vec<usize>,
    pub transition_dropout: f64,
    pub observation_dropout: f64,
    pub sensor_dropout: f64,
    pub noise_dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            state_dim: STATE_DIM,
            raw_dim: OBS_DIM,
            window: 5,
            transition_hidden: vec![128; 3],
            observation_hidden: vec![64; 2],
            sensor_hidden: vec![256; 3],
            noise_hidden: vec![64; 2],
            transition_dropout: 0.1,
            observation_dropout: 0.0,
            sensor_dropout: 0.1,
            noise_dropout: 0.0,
        }
    }
}

impl Architecture {
    /// Same layout with every hidden layer `width` wide (observation layers
    /// at least twice the state size).
    pub fn with_hidden_width(mut self, width: usize) -> Self {
        for h in [
            &mut self.transition_hidden,
            &mut self.observation_hidden,
            &mut self.sensor_hidden,
            &mut self.noise_hidden,
        ] {
            h.iter_mut().for_each(|w| *w = width);
        }
        // The identity initialization needs two units per state entry.
        let floor = 2 * self.state_dim;
        self.observation_hidden
            .iter_mut()
            .for_each(|w| *w = (*w).max(floor));
        self
    }

    pub fn dims(&self, net: NetId) -> Vec<usize> {
        let d = self.state_dim;
        let (input, hidden) = match net {
            NetId::Transition => (self.window * d, &self.transition_hidden),
            NetId::Observation => (d, &self.observation_hidden),
            NetId::Sensor => (self.raw_dim, &self.sensor_hidden),
            NetId::Noise => (d, &self.noise_hidden),
        };
        std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(d))
            .collect()
    }

    pub fn dropout(&self, net: NetId) -> f64 {
        match net {
            NetId::Transition => self.transition_dropout,
            NetId::Observation => self.observation_dropout,
            NetId::Sensor => self.sensor_dropout,
            NetId::Noise => self.noise_dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.raw_dim == 0 || self.window == 0 {
            return Err(Error::InvalidConfig("zero-sized architecture".into()));
        }
        if self
            .observation_hidden
            .iter()
            .any(|w| *w < 2 * self.state_dim)
        {
            return Err(Error::InvalidConfig(format!(
                "observation hidden layers need at least {} units",
                2 * self.state_dim
            )));
        }
        for net in NetId::ALL {
            let p = self.dropout(net);
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{} dropout {p}", net.name())));
            }
            if self.dims(net).contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "{} has a zero-width layer",
                    net.name()
                )));
            }
        }
        Ok(())
    }
}

/// All learned parameters plus the fixed sensor-input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub transition: MlpParams,
    pub observation: MlpParams,
    pub sensor: MlpParams,
    pub noise: MlpParams,
    pub input_shift: DVector<f64>,
    pub input_scale: DVector<f64>,
}

impl ModelBundle {
    /// Random initialization.
    ///
    /// The transition output layer starts at zero, so the initial transition
    /// is "no change" plus dropout noise. The observation network starts as
    /// the exact identity through the `relu(x) − relu(−x)` construction.
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut transition = MlpParams::new_random(&arch.dims(NetId::Transition), rng);
        if let Some(last) = transition.layers_mut().last_mut() {
            last.weights.fill(0.0);
        }
        let observation = identity_mlp(&arch.dims(NetId::Observation), rng)?;
        let sensor = MlpParams::new_random(&arch.dims(NetId::Sensor), rng);
        let noise = MlpParams::new_random(&arch.dims(NetId::Noise), rng);
        Ok(Self {
            transition,
            observation,
            sensor,
            noise,
            input_shift: DVector::zeros(arch.raw_dim),
            input_scale: DVector::from_element(arch.raw_dim, 1.0),
            arch,
        })
    }

    pub fn net(&self, id: NetId) -> &MlpParams {
        match id {
            NetId::Transition => &self.transition,
            NetId::Observation => &self.observation,
            NetId::Sensor => &self.sensor,
            NetId::Noise => &self.noise,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut MlpParams {
        match id {
            NetId::Transition => &mut self.transition,
            NetId::Observation => &mut self.observation,
            NetId::Sensor => &mut self.sensor,
            NetId::Noise => &mut self.noise,
        }
    }

    /// Checks every network against the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        for id in NetId::ALL {
            if self.net(id).dims() != self.arch.dims(id) {
                return Err(Error::ModelShapeMismatch(format!(
                    "{} dims {:?}, architecture says {:?}",
                    id.name(),
                    self.net(id).dims(),
                    self.arch.dims(id)
                )));
            }
        }
        if self.input_shift.len() != self.arch.raw_dim
            || self.input_scale.len() != self.arch.raw_dim
        {
            return Err(Error::ModelShapeMismatch(
                "sensor normalization length".into(),
            ));
        }
        if self.input_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::ModelShapeMismatch(
                "non-positive sensor input scale".into(),
            ));
        }
        Ok(())
    }

    /// Sets the sensor-input normalization to the per-channel mean and standard
    /// deviation (floored at [`MIN_INPUT_SCALE`]) over all samples.
    pub fn fit_normalization(&mut self, data: &[Trajectory]) -> Result<()> {
        let n: usize = data.iter().map(Trajectory::len).sum();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let d = self.arch.raw_dim;
        if d != OBS_DIM {
            return Err(Error::ModelShapeMismatch(format!(
                "raw dim {d} vs dataset {OBS_DIM}"
            )));
        }
        let mut mean = DVector::zeros(d);
        let mut sq = DVector::zeros(d);
        for s in data.iter().flat_map(|t| &t.samples) {
            let v = DVector::from_column_slice(&s.obs.to_array());
            sq += v.component_mul(&v);
            mean += v;
        }
        mean /= n as f64;
        sq /= n as f64;
        self.input_scale = DVector::from_fn(d, |i, _| {
            (sq[i] - mean[i] * mean[i])
                .max(0.0)
                .sqrt()
                .max(MIN_INPUT_SCALE)
        });
        self.input_shift = mean;
        Ok(())
    }

    /// `clamp((raw − shift) / scale)`.
    pub fn normalize(&self, raw: &DVector<f64>) -> Result<DVector<f64>> {
        if raw.len() != self.arch.raw_dim {
            return Err(Error::shape(self.arch.raw_dim, raw.len()));
        }
        Ok(DVector::from_fn(raw.len(), |i, _| {
            ((raw[i] - self.input_shift[i]) / self.input_scale[i]).clamp(-INPUT_CLAMP, INPUT_CLAMP)
        }))
    }

    pub fn round_to_f32(&mut self) {
        for id in NetId::ALL {
            self.net_mut(id).round_to_f32();
        }
        self.input_shift.apply(|v| *v = *v as f32 as f64);
        self.input_scale.apply(|v| *v = *v as f32 as f64);
    }

    pub fn is_finite(&self) -> bool {
        NetId::ALL.iter().all(|id| self.net(*id).is_finite())
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let mut meta = serde_json::json!({ "architecture": self.arch });
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), metadata) {
            m.extend(extra);
        }
        Checkpoint {
            networks: NetId::ALL
                .iter()
                .map(|id| {
                    let p = self.net(*id);
                    (
                        NetworkEntry {
                            name: id.name().into(),
                            dims: p.dims(),
                            activations: p.activations(),
                            dropout: self.arch.dropout(*id),
                        },
                        p.clone(),
                    )
                })
                .collect(),
            extra: vec![
                (
                    "sensor.input_shift".into(),
                    self.input_shift.as_slice().to_vec(),
                ),
                (
                    "sensor.input_scale".into(),
                    self.input_scale.as_slice().to_vec(),
                ),
            ],
            metadata: meta,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(
            ckpt.metadata
                .get("architecture")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("manifest lacks `architecture`".into()))?,
        )?;
        let bundle = Self {
            transition: ckpt.network("transition")?.1.clone(),
            observation: ckpt.network("observation")?.1.clone(),
            sensor: ckpt.network("sensor")?.1.clone(),
            noise: ckpt.network("noise")?.1.clone(),
            input_shift: DVector::from_column_slice(ckpt.extra("sensor.input_shift")?),
            input_scale: DVector::from_column_slice(ckpt.extra("sensor.input_scale")?),
            arch,
        };
        bundle
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(bundle)
    }

    /// Writes a checkpoint directory (`f32` weights).
    pub fn save(&self, dir: &Path, metadata: serde_json::Value) -> Result<()> {
        save_checkpoint(dir, &self.to_checkpoint(metadata))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(dir)?)
    }
}

// Exact identity through one ReLU hidden stack: the first layer splits x into
// (x)+ and (−x)+, the middle layers pass both halves through, the last layer
// recombines them. Extra hidden units get random incoming weights and zero
// outgoing weights.
fn identity_mlp(dims: &[usize], rng: &mut impl Rng) -> Result<MlpParams> {
    let d = dims[0];
    let mut p = MlpParams::new_random(dims, rng);
    let n = p.layers().len();
    for (i, layer) in p.layers_mut().iter_mut().enumerate() {
        let Layer { weights, bias, .. } = layer;
        bias.fill(0.0);
        if i == 0 {
            weights.rows_mut(0, 2 * d).fill(0.0);
            for k in 0..d {
                weights[(k, k)] = 1.0;
                weights[(d + k, k)] = -1.0;
            }
        } else if i + 1 < n {
            weights.rows_mut(0, 2 * d).fill(0.0);
            weights.columns_mut(0, 2 * d).fill(0.0);
            for k in 0..2 * d {
                weights[(k, k)] = 1.0;
            }
        } else {
            weights.fill(0.0);
            for k in 0..d {
                weights[(k, k)] = 1.0;
                weights[(k, d + k)] = -1.0;
            }
        }
    }
    Ok(p)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// The noise network is normally deterministic; any dropout it has uses a fixed stream.
fn noise_rng() -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}

/// Diagonal observation noise `R = ε + softplus(r(ỹ_mean))`.
pub fn noise_forward(bundle: &ModelBundle, y_mean: &DVector<f64>) -> Result<DVector<f64>> {
    if y_mean.len() != bundle.arch.state_dim {
        return Err(Error::shape(bundle.arch.state_dim, y_mean.len()));
    }
    let x = DMatrix::from_row_slice(1, y_mean.len(), y_mean.as_slice());
    let (out, _) = forward_batch(
        &bundle.noise,
        &x,
        bundle.arch.noise_dropout,
        &mut noise_rng(),
    )?;
    Ok(DVector::from_fn(out.ncols(), |i, _| {
        NOISE_FLOOR + softplus(out[(0, i)])
    }))
}

/// Residual transition: `x_t = x_{t−1} + f(x_{t−N:t−1})`.
pub struct TransitionNet<'a>(pub &'a ModelBundle);
pub struct ObservationNet<'a>(pub &'a ModelBundle);
pub struct SensorNet<'a>(pub &'a ModelBundle);

impl TransitionModel for TransitionNet<'_> {
    fn input_dim(&self) -> usize {
        self.0.transition.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.transition.output_dim()
    }

    fn sample(&self, window: &DMatrix<f64>, mut rng: &mut dyn RngCore) -> Result<DMatrix<f64>> {
        let b = self.0;
        let (delta, _) = forward_batch(&b.transition, window, b.arch.transition_dropout, &mut rng)?;
        let d = b.arch.state_dim;
        Ok(window.columns(window.ncols() - d, d) + delta)
    }
}

impl ObservationModel for ObservationNet<'_> {
    fn input_dim(&self) -> usize {
        self.0.observation.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.observation.output_dim()
    }

    fn observe(&self, states: &DMatrix<f64>, mut rng: &mut dyn RngCore) -> Result<DMatrix<f64>> {
        let b = self.0;
        forward_batch(&b.observation, states, b.arch.observation_dropout, &mut rng).map(|(y, _)| y)
    }
}

impl SensorModel for SensorNet<'_> {
    fn input_dim(&self) -> usize {
        self.0.sensor.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.sensor.output_dim()
    }

    fn sample(
        &self,
        raw: &DVector<f64>,
        count: usize,
        mut rng: &mut dyn RngCore,
    ) -> Result<DMatrix<f64>> {
        let b = self.0;
        let x = b.normalize(raw)?;
        let batch = DMatrix::from_fn(count, x.len(), |_, c| x[c]);
        forward_batch(&b.sensor, &batch, b.arch.sensor_dropout, &mut rng).map(|(y, _)| y)
    }
}
