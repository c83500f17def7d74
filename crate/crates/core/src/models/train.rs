use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::filter::step_rng;
use super::graph::{BundleGrads, Graph, Var};
use super::{noise_rng, ModelBundle, NetId, SensorNet};
use crate::data::Trajectory;
use crate::enkf::{init_ensemble, sample_sensor, DEFAULT_ENSEMBLE_SIZE};
use crate::error::{Error, Result};
use crate::neuralnet::{adam_step, AdamState};

/// Optimization settings. Defaults follow the reference training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ensemble_size: usize,
    /// Past states fed to the transition network; must match the bundle.
    pub window: usize,
    /// Filter steps per truncated-backpropagation window.
    pub tbptt: usize,
    pub seed: u64,
    pub lambda_transition: f64,
    pub lambda_sensor: f64,
    /// Standard deviation of the noise added to initial ensembles.
    pub init_jitter: f64,
    /// Where each window's history comes from.
    pub history: HistoryMode,
    pub val_fraction: f64,
    /// Rescale each batch gradient to at most this norm.
    pub max_grad_norm: Option<f64>,
    /// Use at most this many training windows per epoch.
    pub max_train_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 1e-5,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            window: 5,
            tbptt: 8,
            seed: 0,
            lambda_transition: 1.0,
            lambda_sensor: 1.0,
            init_jitter: 0.05,
            history: HistoryMode::Carried,
            val_fraction: 0.1,
            max_grad_norm: None,
            max_train_windows: None,
        }
    }
}

/// History at the start of a training window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    /// The filter's own detached posteriors from the previous window of the
    /// same trajectory; each trajectory starts from the sensor estimate.
    #[default]
    Carried,
    /// Jittered ground-truth states.
    Truth,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.window == 0 || self.tbptt == 0 {
            return bad("batch size, window and truncation length must be positive");
        }
        if self.ensemble_size < 2 {
            return Err(Error::InvalidEnsembleSize(self.ensemble_size));
        }
        if !(self.lr > 0.0) || !(self.init_jitter >= 0.0) {
            return bad("learning rate must be positive and jitter non-negative");
        }
        if !(self.lambda_transition >= 0.0) || !(self.lambda_sensor >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return bad("gradient norm limit must be positive");
        }
        Ok(())
    }
}

/// A short training sequence with ground-truth history.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Ground-truth states preceding the first step, oldest first (at most `N`).
    pub history: Vec<DVector<f64>>,
    pub raw: Vec<DVector<f64>>,
    pub truth: Vec<DVector<f64>>,
}

/// Cuts every trajectory into windows of `len` steps starting at
/// `1 + phase`, `1 + phase + len`, …; the first sample only seeds history.
pub fn build_windows(trajs: &[Trajectory], window: usize, len: usize, phase: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for t in trajs {
        let mut t0 = 1 + phase;
        while t0 < t.len() {
            let end = (t0 + len).min(t.len());
            out.push(Window {
                history: (t0.saturating_sub(window)..t0)
                    .map(|k| t.samples[k].state.to_vector())
                    .collect(),
                raw: (t0..end).map(|k| t.samples[k].obs.to_vector()).collect(),
                truth: (t0..end).map(|k| t.samples[k].state.to_vector()).collect(),
            });
            t0 = end;
        }
    }
    out
}

/// Mean loss terms; `total = end_to_end + λ_f·transition + λ_s·sensor`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub end_to_end: f64,
    pub transition: f64,
    pub sensor: f64,
}

impl LossComponents {
    fn add_scaled(&mut self, o: &LossComponents, k: f64) {
        self.total += k * o.total;
        self.end_to_end += k * o.end_to_end;
        self.transition += k * o.transition;
        self.sensor += k * o.sensor;
    }
}

struct WindowGraph {
    graph: Graph,
    total: Var,
    parts: LossComponents,
    /// Posterior ensemble of every step.
    posteriors: Vec<Var>,
    /// History after the last step, oldest first.
    tail: Vec<Var>,
}

impl WindowGraph {
    fn tail_values(&self) -> Vec<DMatrix<f64>> {
        self.tail
            .iter()
            .map(|v| self.graph.value(*v).clone())
            .collect()
    }
}

fn jittered_history(w: &Window, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    w.history
        .iter()
        .map(|x| {
            DMatrix::from_fn(cfg.ensemble_size, x.len(), |_, c| {
                let z: f64 = StandardNormal.sample(rng);
                x[c] + cfg.init_jitter * z
            })
        })
        .collect()
}

// Builds the filter over one window on a tape, starting from the given
// history frames. Randomness is drawn in the same order as the plain filter:
// per step the transition, observation and sensor dropout masks.
fn window_graph(
    bundle: &ModelBundle,
    history: Vec<DMatrix<f64>>,
    raws: &[DVector<f64>],
    truths: &[DVector<f64>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<WindowGraph> {
    let e = cfg.ensemble_size;
    let d = bundle.arch.state_dim;
    let n = bundle.arch.window;
    if history.is_empty() || raws.len() != truths.len() || raws.is_empty() {
        return Err(Error::shape(
            "non-empty history and matching raw/truth",
            "malformed window",
        ));
    }
    if history.iter().any(|f| f.shape() != (e, d)) {
        return Err(Error::shape(
            format!("{e}x{d} history frames"),
            "mismatched frame",
        ));
    }
    let mut g = Graph::new();
    let mut frames: Vec<Var> = history.into_iter().map(|m| g.leaf(m)).collect();
    let zero = g.leaf(DMatrix::zeros(e, d));
    let k = 1.0 / (e as f64 - 1.0);

    let mut terms = Vec::new();
    let mut posteriors = Vec::new();
    let mut sums = LossComponents::default();
    let steps = raws.len() as f64;
    for (raw, truth) in raws.iter().zip(truths) {
        let recent = &frames[frames.len().saturating_sub(n)..];
        let mut parts = vec![zero; n - recent.len()];
        parts.extend_from_slice(recent);
        let latest = *recent.last().expect("history is non-empty");
        let input = g.hcat(&parts)?;
        let delta = g.mlp(bundle, NetId::Transition, input, rng)?;
        let xp = g.add(latest, delta)?;

        let hx = g.mlp(bundle, NetId::Observation, xp, rng)?;
        let ha = g.center(hx);
        let a = g.center(xp);

        let y_in = bundle.normalize(raw)?;
        let y_in = g.leaf(DMatrix::from_fn(e, y_in.len(), |_, c| y_in[c]));
        let y = g.mlp(bundle, NetId::Sensor, y_in, rng)?;
        let y_mean = g.col_mean(y);
        let r_pre = g.mlp(bundle, NetId::Noise, y_mean, &mut noise_rng())?;
        let r = g.softplus_eps(r_pre);

        let s0 = g.tr_mul(ha, ha)?;
        let s0 = g.scale(s0, k);
        let s = g.add_diag(s0, r)?;
        let innov = g.sub(y, hx)?;
        let innov_t = g.transpose(innov);
        let z = g.solve(s, innov_t)?;
        let z_t = g.transpose(z);
        let cross = g.tr_mul(ha, a)?;
        let cross = g.scale(cross, k);
        let corr = g.matmul(z_t, cross)?;
        let xu = g.add(xp, corr)?;

        let target = DMatrix::from_row_slice(1, d, truth.as_slice());
        let mean_u = g.col_mean(xu);
        let l_e2e = g.mse_to(mean_u, target.clone())?;
        let mean_p = g.col_mean(xp);
        let l_f = g.mse_to(mean_p, target.clone())?;
        let l_s = g.mse_to(y_mean, target)?;
        terms.push((l_e2e, 1.0 / steps));
        terms.push((l_f, cfg.lambda_transition / steps));
        terms.push((l_s, cfg.lambda_sensor / steps));
        sums.end_to_end += g.scalar(l_e2e) / steps;
        sums.transition += g.scalar(l_f) / steps;
        sums.sensor += g.scalar(l_s) / steps;

        frames.push(xu);
        posteriors.push(xu);
    }
    let total = g.weighted_sum(&terms);
    sums.total = g.scalar(total);
    let tail = frames[frames.len().saturating_sub(n)..].to_vec();
    Ok(WindowGraph {
        graph: g,
        total,
        parts: sums,
        posteriors,
        tail,
    })
}

fn truth_window(
    bundle: &ModelBundle,
    w: &Window,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<WindowGraph> {
    let history = jittered_history(w, cfg, rng);
    window_graph(bundle, history, &w.raw, &w.truth, cfg, rng)
}

fn item_rngs(n: usize, rng: &mut impl Rng) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|_| ChaCha8Rng::seed_from_u64(rng.random()))
        .collect()
}

/// Mean loss over a batch of windows, without gradients.
pub fn loss(
    bundle: &ModelBundle,
    batch: &[Window],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossComponents> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = LossComponents::default();
    let k = 1.0 / batch.len() as f64;
    for (w, mut r) in batch.iter().zip(item_rngs(batch.len(), rng)) {
        out.add_scaled(&truth_window(bundle, w, cfg, &mut r)?.parts, k);
    }
    Ok(out)
}

/// Mean loss over a batch and its gradient with respect to every network.
pub fn loss_and_grads(
    bundle: &ModelBundle,
    batch: &[Window],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(LossComponents, BundleGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = LossComponents::default();
    let mut grads = BundleGrads::zeros_like(bundle);
    let k = 1.0 / batch.len() as f64;
    for (w, mut r) in batch.iter().zip(item_rngs(batch.len(), rng)) {
        let wg = truth_window(bundle, w, cfg, &mut r)?;
        grads.accumulate(&wg.graph.backward(wg.total, bundle)?);
        out.add_scaled(&wg.parts, k);
    }
    grads.scale(k);
    Ok((out, grads))
}

/// Posterior ensembles of each step of a window, as computed on the tape.
pub fn window_posteriors(
    bundle: &ModelBundle,
    w: &Window,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DMatrix<f64>>> {
    let wg = truth_window(bundle, w, cfg, rng)?;
    Ok(wg
        .posteriors
        .iter()
        .map(|v| wg.graph.value(*v).clone())
        .collect())
}

/// Trajectory-level split: a seeded shuffle, the last `fraction` held out.
/// A single trajectory is used for both sides.
pub fn split_dataset(
    data: &[Trajectory],
    fraction: f64,
    seed: u64,
) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if data.len() < 2 || fraction <= 0.0 {
        return (data.to_vec(), data.to_vec());
    }
    let n_val = ((data.len() as f64 * fraction).round() as usize).clamp(1, data.len() - 1);
    let (train, val) = idx.split_at(data.len() - n_val);
    (
        train.iter().map(|i| data[*i].clone()).collect(),
        val.iter().map(|i| data[*i].clone()).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: LossComponents,
    pub val: LossComponents,
    pub batches: usize,
    /// This epoch produced the best validation end-to-end loss so far.
    pub improved: bool,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Completed epochs.
    pub epoch: usize,
    pub bundle: ModelBundle,
    pub adam: Vec<AdamState>,
    pub best: ModelBundle,
    pub best_val: f64,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-validation-loss parameters (rounded to `f32` if from an epoch).
    pub bundle: ModelBundle,
    pub metrics: Vec<EpochMetrics>,
    pub best_val: f64,
    pub best_epoch: usize,
    pub state: TrainerState,
}

pub struct Trainer {
    cfg: TrainConfig,
    train: Vec<Trajectory>,
    val: Vec<Trajectory>,
    state: TrainerState,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, data: &[Trajectory], cfg: TrainConfig) -> Result<Self> {
        let (train, val) = Self::prepare(&bundle, data, &cfg)?;
        let best_val = validation_loss(&bundle, &val, &cfg)?.end_to_end;
        let adam = NetId::ALL
            .iter()
            .map(|id| AdamState::new(bundle.net(*id)))
            .collect();
        Ok(Self {
            state: TrainerState {
                epoch: 0,
                best: bundle.clone(),
                bundle,
                adam,
                best_val,
                best_epoch: 0,
                metrics: Vec::new(),
            },
            cfg,
            train,
            val,
        })
    }

    pub fn resume(state: TrainerState, data: &[Trajectory], cfg: TrainConfig) -> Result<Self> {
        let (train, val) = Self::prepare(&state.bundle, data, &cfg)?;
        if state.adam.len() != NetId::ALL.len() {
            return Err(Error::Checkpoint(
                "trainer state needs four optimizer states".into(),
            ));
        }
        Ok(Self {
            val,
            cfg,
            train,
            state,
        })
    }

    fn prepare(
        bundle: &ModelBundle,
        data: &[Trajectory],
        cfg: &TrainConfig,
    ) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
        cfg.validate()?;
        bundle.validate()?;
        if cfg.window != bundle.arch.window {
            return Err(Error::InvalidConfig(format!(
                "training window {} differs from the bundle's {}",
                cfg.window, bundle.arch.window
            )));
        }
        if data.iter().all(|t| t.len() < 2) {
            return Err(Error::EmptyDataset);
        }
        Ok(split_dataset(data, cfg.val_fraction, cfg.seed))
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.state.epoch + 1;
        let mut rng = step_rng(self.cfg.seed, epoch as u64);
        let (train, batches) = match self.cfg.history {
            HistoryMode::Carried => {
                carried_epoch(&mut self.state, &self.train, &self.cfg, epoch, &mut rng)?
            }
            HistoryMode::Truth => {
                truth_epoch(&mut self.state, &self.train, &self.cfg, epoch, &mut rng)?
            }
        };

        let mut rounded = self.state.bundle.clone();
        rounded.round_to_f32();
        let val = validation_loss(&rounded, &self.val, &self.cfg)?;
        let improved = val.end_to_end < self.state.best_val;
        if improved {
            self.state.best = rounded;
            self.state.best_val = val.end_to_end;
            self.state.best_epoch = epoch;
        }
        let m = EpochMetrics {
            epoch,
            train,
            val,
            batches,
            improved,
        };
        log::info!(
            "epoch {epoch}: train {:.5} (e2e {:.5}), val e2e {:.5}{}",
            train.total,
            train.end_to_end,
            val.end_to_end,
            if improved { " *" } else { "" }
        );
        self.state.metrics.push(m.clone());
        self.state.epoch = epoch;
        Ok(m)
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            bundle: self.state.best.clone(),
            metrics: self.state.metrics.clone(),
            best_val: self.state.best_val,
            best_epoch: self.state.best_epoch,
            state: self.state,
        }
    }
}

fn apply_update(
    state: &mut TrainerState,
    mut grads: BundleGrads,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    if let Some(limit) = cfg.max_grad_norm {
        let norm = grads.norm();
        if norm > limit {
            grads.scale(limit / norm);
        }
    }
    for (i, id) in NetId::ALL.iter().enumerate() {
        adam_step(
            state.bundle.net_mut(*id),
            grads.get(*id),
            &mut state.adam[i],
            cfg.lr,
        )?;
    }
    if !state.bundle.is_finite() {
        return Err(Error::Numerical(format!(
            "parameters diverged in epoch {epoch}"
        )));
    }
    Ok(())
}

// Independent teacher-forced windows in random order.
fn truth_epoch(
    state: &mut TrainerState,
    trajs: &[Trajectory],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(LossComponents, usize)> {
    let phase = rng.random_range(0..cfg.tbptt);
    let mut windows = build_windows(trajs, cfg.window, cfg.tbptt, phase);
    windows.shuffle(rng);
    if let Some(m) = cfg.max_train_windows {
        windows.truncate(m.max(1));
    }
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut train = LossComponents::default();
    let mut batches = 0;
    let total = windows.len() as f64;
    for batch in windows.chunks(cfg.batch_size) {
        let (l, grads) = loss_and_grads(&state.bundle, batch, cfg, rng)?;
        apply_update(state, grads, cfg, epoch)?;
        train.add_scaled(&l, batch.len() as f64 / total);
        batches += 1;
    }
    Ok((train, batches))
}

// One trajectory filtered window after window, carrying its ensemble history.
struct Stream<'a> {
    traj: &'a Trajectory,
    next: usize,
    frames: Vec<DMatrix<f64>>,
    rng: ChaCha8Rng,
}

impl<'a> Stream<'a> {
    // Cold start from the first sample, as the online filter does.
    fn start(
        bundle: &ModelBundle,
        traj: &'a Trajectory,
        cfg: &TrainConfig,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let raw = traj.samples[0].obs.to_vector();
        let (_, y_mean) = sample_sensor(&raw, &SensorNet(bundle), cfg.ensemble_size, &mut rng)?;
        let ens = init_ensemble(&y_mean, cfg.ensemble_size, cfg.init_jitter, &mut rng)?;
        Ok(Self {
            traj,
            next: 1,
            frames: vec![ens.into_members()],
            rng,
        })
    }

    fn done(&self) -> bool {
        self.next >= self.traj.len()
    }

    fn advance(&mut self, bundle: &ModelBundle, cfg: &TrainConfig) -> Result<WindowGraph> {
        let end = (self.next + cfg.tbptt).min(self.traj.len());
        let samples = &self.traj.samples[self.next..end];
        let raws: Vec<_> = samples.iter().map(|s| s.obs.to_vector()).collect();
        let truths: Vec<_> = samples.iter().map(|s| s.state.to_vector()).collect();
        let wg = window_graph(
            bundle,
            std::mem::take(&mut self.frames),
            &raws,
            &truths,
            cfg,
            &mut self.rng,
        )?;
        self.frames = wg.tail_values();
        self.next = end;
        Ok(wg)
    }
}

fn start_streams<'a>(
    bundle: &ModelBundle,
    trajs: &[&'a Trajectory],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Stream<'a>>> {
    trajs
        .iter()
        .map(|t| Stream::start(bundle, t, cfg, ChaCha8Rng::seed_from_u64(rng.random())))
        .collect()
}

// Trajectories are shuffled and split into near-equal groups of at most
// `batch_size`; each batch holds the next window of every unfinished stream
// in a group, so a batch is one gradient step across parallel trajectories.
fn carried_epoch(
    state: &mut TrainerState,
    trajs: &[Trajectory],
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(LossComponents, usize)> {
    let mut order: Vec<&Trajectory> = trajs.iter().filter(|t| t.len() >= 2).collect();
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    order.shuffle(rng);
    let per = order.len().div_ceil(order.len().div_ceil(cfg.batch_size));
    let mut budget = cfg.max_train_windows.unwrap_or(usize::MAX).max(1);
    let mut sum = LossComponents::default();
    let mut windows = 0usize;
    let mut batches = 0;
    'groups: for group in order.chunks(per) {
        let mut streams = start_streams(&state.bundle, group, cfg, rng)?;
        loop {
            let active: Vec<&mut Stream> = streams
                .iter_mut()
                .filter(|s| !s.done())
                .take(budget)
                .collect();
            if active.is_empty() {
                break;
            }
            let k = 1.0 / active.len() as f64;
            let mut grads = BundleGrads::zeros_like(&state.bundle);
            for s in active {
                let wg = s.advance(&state.bundle, cfg)?;
                grads.accumulate(&wg.graph.backward(wg.total, &state.bundle)?);
                sum.add_scaled(&wg.parts, 1.0);
                windows += 1;
                budget -= 1;
            }
            grads.scale(k);
            apply_update(state, grads, cfg, epoch)?;
            batches += 1;
            if budget == 0 {
                break 'groups;
            }
        }
    }
    let mut train = LossComponents::default();
    train.add_scaled(&sum, 1.0 / windows as f64);
    Ok((train, batches))
}

// Mean window loss of the carried filter over whole trajectories.
fn carried_loss(
    bundle: &ModelBundle,
    trajs: &[Trajectory],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossComponents> {
    let order: Vec<&Trajectory> = trajs.iter().filter(|t| t.len() >= 2).collect();
    let mut sum = LossComponents::default();
    let mut windows = 0usize;
    for mut s in start_streams(bundle, &order, cfg, rng)? {
        while !s.done() {
            sum.add_scaled(&s.advance(bundle, cfg)?.parts, 1.0);
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut out = LossComponents::default();
    out.add_scaled(&sum, 1.0 / windows as f64);
    Ok(out)
}

// Fixed randomness so that validation curves are comparable across epochs.
fn validation_loss(
    bundle: &ModelBundle,
    trajs: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<LossComponents> {
    let mut rng = step_rng(cfg.seed ^ 0x5641_4c49_4441_5445, 0);
    match cfg.history {
        HistoryMode::Carried => carried_loss(bundle, trajs, cfg, &mut rng),
        HistoryMode::Truth => {
            let windows = build_windows(trajs, cfg.window, cfg.tbptt, 0);
            if windows.is_empty() {
                return Err(Error::EmptyDataset);
            }
            loss(bundle, &windows, cfg, &mut rng)
        }
    }
}

/// Trains for `cfg.epochs` epochs and returns the best-validation bundle.
pub fn train(bundle: ModelBundle, data: &[Trajectory], cfg: TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(bundle, data, cfg)?;
    while !t.finished() {
        t.run_epoch()?;
    }
    Ok(t.into_outcome())
}
