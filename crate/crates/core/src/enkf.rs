//! Ensemble Kalman filter core over pluggable (possibly stochastic) models.
//!
//! Ensembles are stored one member per row (`E × d`). The update uses
//! per-member sampled observations, i.e. the perturbed-observation variant:
//!
//! ```text
//! A  = X − mean(X)            HA = HX − mean(HX)
//! S  = HAᵀHA / (E−1) + diag(R)
//! K  = AᵀHA S⁻¹ / (E−1)
//! xᵢ ← xᵢ + K (ỹᵢ − h(xᵢ))
//! ```
//!
//! Nothing here is specific to the 14-dim pose state; the same code runs the
//! scalar linear-Gaussian checks.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Condition number above which the innovation covariance is rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Default ensemble size.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
    pub step: u64,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>, step: u64) -> Result<Self> {
        if members.nrows() < 2 {
            return Err(Error::InvalidEnsembleSize(members.nrows()));
        }
        Ok(Self { members, step })
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn size(&self) -> usize {
        self.members.nrows()
    }

    pub fn dim(&self) -> usize {
        self.members.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members).transpose()
    }

    /// Per-dimension standard deviation of the members (divisor `E`).
    pub fn spread(&self) -> DVector<f64> {
        let a = anomalies(&self.members);
        let e = self.size() as f64;
        DVector::from_iterator(
            a.ncols(),
            a.column_iter().map(|c| (c.norm_squared() / e).sqrt()),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|v| v.is_finite())
    }
}

pub fn column_mean(m: &DMatrix<f64>) -> RowDVector<f64> {
    m.row_mean()
}

/// Rows minus the row-average (each column centered).
pub fn anomalies(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(m);
    let mut a = m.clone();
    for mut row in a.row_iter_mut() {
        row -= &mean;
    }
    a
}

/// Sliding window of the last `N` ensembles, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistory {
    window: usize,
    frames: VecDeque<DMatrix<f64>>,
}

impl StateHistory {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window must be at least 1");
        Self {
            window,
            frames: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// True while fewer than `window` frames have been seen.
    pub fn warming_up(&self) -> bool {
        self.frames.len() < self.window
    }

    pub fn push(&mut self, members: DMatrix<f64>) {
        if self.frames.len() == self.window {
            self.frames.pop_front();
        }
        self.frames.push_back(members);
    }

    pub fn latest(&self) -> Option<&DMatrix<f64>> {
        self.frames.back()
    }

    pub fn frames(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.frames.iter()
    }

    /// `E × (window·d)` transition input; missing oldest slots are zero.
    pub fn flattened(&self) -> Result<DMatrix<f64>> {
        let latest = self
            .latest()
            .ok_or_else(|| Error::ModelShapeMismatch("empty state history".into()))?;
        let (e, d) = latest.shape();
        let mut out = DMatrix::zeros(e, self.window * d);
        let pad = self.window - self.frames.len();
        for (k, f) in self.frames.iter().enumerate() {
            if f.shape() != (e, d) {
                return Err(Error::ModelShapeMismatch(format!(
                    "history frame {}x{} vs {e}x{d}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            out.view_mut((0, (pad + k) * d), (e, d)).copy_from(f);
        }
        Ok(out)
    }
}

/// Ensemble mean and spread exported after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimate {
    pub mean: DVector<f64>,
    pub spread: DVector<f64>,
    pub timestamp: f64,
    /// The transition window was zero-padded for this estimate.
    pub warm_up: bool,
    /// The update step was skipped (stale input).
    pub degraded: bool,
}

/// Stochastic state transition `x_t ∼ f(· | x_{t−N:t−1})`, batched over members.
pub trait TransitionModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn sample(&self, window: &DMatrix<f64>, rng: &mut dyn rand::RngCore) -> Result<DMatrix<f64>>;
}

/// Map from state space to learned-observation space, batched over members.
pub trait ObservationModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn observe(&self, states: &DMatrix<f64>, rng: &mut dyn rand::RngCore) -> Result<DMatrix<f64>>;
}

/// Stochastic sensor model `ỹ ∼ s(· | y)`, drawn `count` times.
pub trait SensorModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn sample(
        &self,
        raw: &DVector<f64>,
        count: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<DMatrix<f64>>;
}

/// `E` copies of `x0`, each perturbed by `N(0, jitter²)` per dimension.
pub fn init_ensemble(
    x0: &DVector<f64>,
    size: usize,
    jitter: f64,
    rng: &mut impl Rng,
) -> Result<Ensemble> {
    if size < 2 {
        return Err(Error::InvalidEnsembleSize(size));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidConfig(format!("negative jitter {jitter}")));
    }
    let d = x0.len();
    let members = if jitter == 0.0 {
        DMatrix::from_fn(size, d, |_, c| x0[c])
    } else {
        let mut m = DMatrix::zeros(size, d);
        for r in 0..size {
            for c in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                m[(r, c)] = x0[c] + jitter * z;
            }
        }
        m
    };
    Ensemble::new(members, 0)
}

/// Prediction step: one stochastic transition sample per member.
pub fn predict(
    history: &StateHistory,
    transition: &dyn TransitionModel,
    rng: &mut dyn rand::RngCore,
) -> Result<Ensemble> {
    let window = history.flattened()?;
    if window.ncols() != transition.input_dim() {
        return Err(Error::ModelShapeMismatch(format!(
            "transition expects {} inputs, window has {}",
            transition.input_dim(),
            window.ncols()
        )));
    }
    let next = transition.sample(&window, rng)?;
    let d = history.latest().map(|m| m.ncols()).unwrap_or(0);
    if next.shape() != (window.nrows(), d) {
        return Err(Error::ModelShapeMismatch(format!(
            "transition produced {}x{}, expected {}x{d}",
            next.nrows(),
            next.ncols(),
            window.nrows()
        )));
    }
    Ensemble::new(next, 0)
}

/// Predicted observations `HX` and their anomalies `HA`.
pub fn observe_ensemble(
    ensemble: &Ensemble,
    observation: &dyn ObservationModel,
    rng: &mut dyn rand::RngCore,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if observation.input_dim() != ensemble.dim() {
        return Err(Error::ModelShapeMismatch(format!(
            "observation model expects {} inputs, state has {}",
            observation.input_dim(),
            ensemble.dim()
        )));
    }
    let hx = observation.observe(ensemble.members(), rng)?;
    if hx.nrows() != ensemble.size() || hx.ncols() != observation.output_dim() {
        return Err(Error::ModelShapeMismatch("observation output shape".into()));
    }
    let ha = anomalies(&hx);
    Ok((hx, ha))
}

/// `E` sensor-model samples and their mean.
pub fn sample_sensor(
    raw: &DVector<f64>,
    sensor: &dyn SensorModel,
    size: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if raw.len() != sensor.input_dim() {
        return Err(Error::ModelShapeMismatch(format!(
            "sensor model expects {} inputs, observation has {}",
            sensor.input_dim(),
            raw.len()
        )));
    }
    let y = sensor.sample(raw, size, rng)?;
    if y.nrows() != size || y.ncols() != sensor.output_dim() {
        return Err(Error::ModelShapeMismatch("sensor output shape".into()));
    }
    let mean = column_mean(&y).transpose();
    Ok((y, mean))
}

/// `S = HAᵀHA / (E−1) + diag(R)`.
pub fn innovation_covariance(ha: &DMatrix<f64>, r_diag: &DVector<f64>) -> DMatrix<f64> {
    let e = ha.nrows() as f64;
    let mut s = ha.tr_mul(ha) / (e - 1.0);
    for i in 0..s.nrows() {
        s[(i, i)] += r_diag[i];
    }
    s
}

/// Cholesky factor of `S` after a symmetric-eigenvalue condition check.
pub fn factor_innovation(s: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(*v), hi.max(v.abs()))
    });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    s.clone()
        .cholesky()
        .ok_or(Error::SingularInnovation { condition })
}

/// Kalman gain `K = AᵀHA S⁻¹ / (E−1)` (`d × m`), via a Cholesky solve.
pub fn kalman_gain(
    members: &DMatrix<f64>,
    ha: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let e = members.nrows() as f64;
    let a = anomalies(members);
    let chol = factor_innovation(s)?;
    // K S = AᵀHA / (E−1)  ⇔  S Kᵀ = HAᵀA / (E−1)   (S symmetric)
    let rhs = ha.tr_mul(&a) / (e - 1.0);
    Ok(chol.solve(&rhs).transpose())
}

/// Measurement update `X_{t|t} = X_t + K (Ỹ − HX)`, member by member.
pub fn kalman_update(
    ensemble: &Ensemble,
    hx: &DMatrix<f64>,
    ha: &DMatrix<f64>,
    y_samples: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<Ensemble> {
    let (e, m) = hx.shape();
    if ensemble.size() != e
        || ha.shape() != (e, m)
        || y_samples.shape() != (e, m)
        || s.shape() != (m, m)
    {
        return Err(Error::ModelShapeMismatch(
            "kalman update operand shapes".into(),
        ));
    }
    let k = kalman_gain(ensemble.members(), ha, s)?;
    let innovation = y_samples - hx;
    let updated = ensemble.members() + innovation * k.transpose();
    Ensemble::new(updated, ensemble.step)
}

/// Ensemble mean and per-dimension spread.
pub fn estimate(ensemble: &Ensemble) -> FilterEstimate {
    FilterEstimate {
        mean: ensemble.mean(),
        spread: ensemble.spread(),
        timestamp: 0.0,
        warm_up: false,
        degraded: false,
    }
}
