//! Direct n-step predictions: regress `ŝ_t` onto the cumulant `n` steps
//! later. Online, targets arrive `n` steps late, so past states wait in a
//! ring buffer until their cumulant is observed.

use serde::{Deserialize, Serialize};

use crate::encoder::AugmentedState;
use crate::error::{Error, Result};
use crate::learner::{BatchSchedule, Predictor};
use crate::mlp::{Gradient, Network, Real, Workspace};
use crate::stream::{DeployRow, DeploymentLog, Observation, UpdateKind, UpdateRecord};

/// `(ŝ_t, c_{t+n})` with both stream indices kept for alignment checks.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepPair {
    pub state: AugmentedState,
    pub target: f64,
    pub state_step: usize,
    pub target_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NStepConfig {
    pub n: usize,
    pub eta: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for NStepConfig {
    fn default() -> Self {
        NStepConfig {
            n: 100,
            eta: 1e-4,
            alpha: 1e-5,
            batch_size: 512,
            epochs: 10,
        }
    }
}

impl NStepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.eta > 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "step sizes must be positive (eta {}, alpha {})",
                self.eta, self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pairs state `i` with the cumulant observed at `i + n`: exactly `N − n`
/// pairs.
pub fn build_nstep_dataset(observations: &[Observation], n: usize) -> Result<Vec<NStepPair>> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if observations.len() <= n {
        return Err(Error::Data(format!(
            "{} observations cannot form {n}-step pairs",
            observations.len()
        )));
    }
    Ok(observations
        .iter()
        .zip(&observations[n..])
        .enumerate()
        .map(|(i, (s, later))| NStepPair {
            state: s.state.clone(),
            target: later.cumulant,
            state_step: i,
            target_step: i + n,
        })
        .collect())
}

#[derive(Debug, Clone)]
struct Scratch<R: Real> {
    grad: Gradient<R>,
    ws: Workspace<R>,
}

impl<R: Real> Scratch<R> {
    fn new(net: &Network<R>) -> Self {
        Scratch {
            grad: Gradient::zeros_like(net),
            ws: net.workspace(),
        }
    }

    /// `(1/k) Σ (f(ŝ_i) − y_i) ∇f(ŝ_i)`, the squared-error gradient.
    fn direction<'a>(
        &mut self,
        net: &Network<R>,
        batch: impl ExactSizeIterator<Item = (&'a AugmentedState, f64)>,
    ) -> Result<f64> {
        let k = batch.len().max(1) as f64;
        self.grad.clear();
        let mut sq = 0.0;
        for (s, y) in batch {
            let err = net.forward_with(&s.values, &mut self.ws)?.get() - y;
            sq += err * err;
            net.accumulate_gradient(&mut self.ws, R::of(err / k), &mut self.grad);
        }
        Ok(sq / k)
    }
}

/// Mini-batch regression with the same optimizer settings as offline TD.
pub fn offline_nstep<R: Real>(
    pairs: &[NStepPair],
    cfg: &NStepConfig,
    init: Predictor<R>,
    seed: u64,
) -> Result<Predictor<R>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("n-step pairs"));
    }
    if init.input_width() != pairs[0].state.width() {
        return Err(Error::WidthMismatch {
            expected: init.input_width(),
            found: pairs[0].state.width(),
        });
    }
    let mut predictor = init;
    if cfg.epochs == 0 {
        return Ok(predictor);
    }
    let mut scratch = Scratch::new(&predictor.network);
    let mut schedule = BatchSchedule::new(pairs.len(), cfg.batch_size, seed)?;
    for _ in 0..cfg.epochs * schedule.batches_per_epoch() {
        let batch = schedule.next_batch();
        scratch.direction(
            &predictor.network,
            batch.iter().map(|&i| (&pairs[i].state, pairs[i].target)),
        )?;
        predictor.step(&scratch.grad, cfg.eta)?;
    }
    Ok(predictor)
}

/// The last `n` states, written through a single monotone cursor: slot
/// `t mod n` holds `ŝ_{t−n}` until `ŝ_t` replaces it.
#[derive(Debug, Clone)]
pub struct PastStates {
    slots: Vec<Option<(usize, AugmentedState)>>,
    written: usize,
}

impl PastStates {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        Ok(PastStates {
            slots: vec![None; n],
            written: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn is_warm(&self) -> bool {
        self.written >= self.slots.len()
    }

    /// The state `n` steps before the next write, with its stream index.
    pub fn oldest(&self) -> Option<(usize, &AugmentedState)> {
        self.slots[self.written % self.slots.len()]
            .as_ref()
            .map(|(i, s)| (*i, s))
    }

    pub fn push(&mut self, step: usize, state: AugmentedState) {
        let n = self.slots.len();
        self.slots[self.written % n] = Some((step, state));
        self.written += 1;
    }
}

/// Runs an n-step predictor over a deployment stream. With `online`, the
/// cumulant arriving at step `t ≥ n` trains on the state from step `t − n`
/// before `ŝ_t` is predicted; the first `n` steps make no updates. Every
/// row's prediction targets the cumulant at `target_step = step + n`.
pub fn deploy_nstep<R, I>(
    predictor: &mut Predictor<R>,
    observations: I,
    cfg: &NStepConfig,
    online: bool,
) -> Result<DeploymentLog>
where
    R: Real,
    I: IntoIterator<Item = Result<Observation>>,
{
    cfg.validate()?;
    let mut past = PastStates::new(cfg.n)?;
    let mut scratch = Scratch::new(&predictor.network);
    let mut log = DeploymentLog::default();
    for (t, obs) in observations.into_iter().enumerate() {
        let obs = obs?;
        if obs.state.width() != predictor.input_width() {
            return Err(Error::WidthMismatch {
                expected: predictor.input_width(),
                found: obs.state.width(),
            });
        }
        if online {
            if let Some((source, old)) = past.oldest() {
                debug_assert_eq!(source + cfg.n, t);
                scratch.direction(&predictor.network, std::iter::once((old, obs.cumulant)))?;
                predictor.step(&scratch.grad, cfg.alpha)?;
                log.updates.push(UpdateRecord {
                    kind: UpdateKind::Online,
                    step: t,
                    source_step: source,
                    latest_sample: t,
                });
            }
        }
        let prediction = predictor
            .network
            .forward_with(&obs.state.values, &mut scratch.ws)?
            .get();
        log.rows.push(DeployRow {
            step: t,
            prediction,
            cumulant: obs.cumulant,
            delta: None,
            target_step: Some(t + cfg.n),
        });
        past.push(t, obs.state);
    }
    if !predictor.network.is_finite() {
        return Err(Error::NonFinite("network parameters"));
    }
    Ok(log)
}

/// Offline pretraining on `train` pairs, then online n-step learning over
/// the deployment stream.
pub fn online_nstep_deploy<R, I>(
    train: &[NStepPair],
    observations: I,
    cfg: &NStepConfig,
    init: Predictor<R>,
    seed: u64,
) -> Result<(DeploymentLog, Predictor<R>)>
where
    R: Real,
    I: IntoIterator<Item = Result<Observation>>,
{
    let mut predictor = offline_nstep(train, cfg, init, seed)?;
    let log = deploy_nstep(&mut predictor, observations, cfg, true)?;
    Ok((log, predictor))
}
