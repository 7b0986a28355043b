//! GVF learners: discounted-sum predictions trained with semi-gradient TD.
//!
//! Four procedures share one update rule:
//!
//! * [`online_td_step`]: one sample, one optimizer step on `−δ ∇f(ŝ_t)`.
//! * [`offline_td`]: shuffled mini-batches over logged transitions.
//! * [`online_td_with_pretrain`]: offline pretraining, then per-sample
//!   updates in deployment starting from the pretrained optimizer state.
//! * [`td_with_replay`]: as above, plus replayed mini-batches from a FIFO
//!   buffer after every deployment step.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::AugmentedState;
use crate::error::{Error, Result};
use crate::learner::{BatchSchedule, Predictor};
use crate::mlp::{Gradient, Network, Real, Workspace};
use crate::stream::{DeployRow, DeploymentLog, Observation, UpdateKind, UpdateRecord};

/// `δ = c + γ v' − v`.
pub fn td_error(cumulant: f64, v_next: f64, v_cur: f64, gamma: f64) -> f64 {
    cumulant + gamma * v_next - v_cur
}

/// `(ŝ_t, c_{t+1}, ŝ_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: AugmentedState,
    pub cumulant: f64,
    pub next_state: AugmentedState,
}

impl Transition {
    pub fn new(state: AugmentedState, cumulant: f64, next_state: AugmentedState) -> Result<Self> {
        if state.width() != next_state.width() {
            return Err(Error::WidthMismatch {
                expected: state.width(),
                found: next_state.width(),
            });
        }
        Ok(Transition {
            state,
            cumulant,
            next_state,
        })
    }
}

/// Consecutive pairs of one contiguous segment. Segments are encoded
/// separately, so no transition ever spans a split boundary.
pub fn transitions(observations: &[Observation]) -> Vec<Transition> {
    observations
        .windows(2)
        .map(|w| Transition {
            state: w[0].state.clone(),
            cumulant: w[1].cumulant,
            next_state: w[1].state.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdConfig {
    pub gamma: f64,
    /// Offline step size.
    pub eta: f64,
    /// Online step size.
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub replay_capacity: usize,
    /// Replayed mini-batches per deployment step.
    pub replay_steps: usize,
}

impl Default for TdConfig {
    fn default() -> Self {
        TdConfig {
            gamma: 0.99,
            eta: 1e-4,
            alpha: 1e-5,
            batch_size: 512,
            epochs: 10,
            replay_capacity: 10_000,
            replay_steps: 1,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
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

/// Reusable buffers for TD updates on one network shape.
#[derive(Debug, Clone)]
pub struct TdScratch<R: Real> {
    grad: Gradient<R>,
    ws: Workspace<R>,
    ws_next: Workspace<R>,
}

impl<R: Real> TdScratch<R> {
    pub fn new(net: &Network<R>) -> Self {
        TdScratch {
            grad: Gradient::zeros_like(net),
            ws: net.workspace(),
            ws_next: net.workspace(),
        }
    }
}

/// Fills `scratch.grad` with `−(1/k) Σ δ_i ∇f(ŝ_i)`. Bootstrap values come
/// from `bootstrap` when given, else from `net` itself. Returns the mean
/// squared TD error of the batch.
fn td_direction<'a, R: Real>(
    net: &Network<R>,
    bootstrap: Option<&Network<R>>,
    batch: impl ExactSizeIterator<Item = &'a Transition>,
    gamma: f64,
    scratch: &mut TdScratch<R>,
) -> Result<f64> {
    let k = batch.len().max(1) as f64;
    scratch.grad.clear();
    let boot = bootstrap.unwrap_or(net);
    let mut sq = 0.0;
    for tr in batch {
        let v_next = boot.forward_with(&tr.next_state.values, &mut scratch.ws_next)?.get();
        let v = net.forward_with(&tr.state.values, &mut scratch.ws)?.get();
        let delta = td_error(tr.cumulant, v_next, v, gamma);
        sq += delta * delta;
        net.accumulate_gradient(&mut scratch.ws, R::of(-delta / k), &mut scratch.grad);
    }
    Ok(sq / k)
}

/// Mini-batch TD trainer. Each [`TdTrainer::train_batch`] call is exactly one
/// optimizer step, so training can be stopped, checkpointed and resumed at
/// any batch boundary.
#[derive(Debug, Clone)]
pub struct TdTrainer<R: Real> {
    pub predictor: Predictor<R>,
    gamma: f64,
    scratch: TdScratch<R>,
}

impl<R: Real> TdTrainer<R> {
    pub fn new(predictor: Predictor<R>, gamma: f64) -> Self {
        let scratch = TdScratch::new(&predictor.network);
        TdTrainer {
            predictor,
            gamma,
            scratch,
        }
    }

    /// One step on the transitions `data[i]` for `i` in `batch`. Returns the
    /// batch's mean squared TD error before the step.
    pub fn train_batch(&mut self, data: &[Transition], batch: &[usize], lr: f64) -> Result<f64> {
        if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
            return Err(Error::OutOfRange { index: i, len: data.len() });
        }
        let loss = td_direction(
            &self.predictor.network,
            None,
            batch.iter().map(|&i| &data[i]),
            self.gamma,
            &mut self.scratch,
        )?;
        self.predictor.step(&self.scratch.grad, lr)?;
        Ok(loss)
    }

    pub fn into_predictor(self) -> Predictor<R> {
        self.predictor
    }
}

/// Offline TD over shuffled mini-batches for `cfg.epochs` epochs, starting
/// from `init`. Returns the weights together with the optimizer state for
/// handoff to deployment.
pub fn offline_td<R: Real>(
    data: &[Transition],
    cfg: &TdConfig,
    init: Predictor<R>,
    seed: u64,
) -> Result<Predictor<R>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("offline transitions"));
    }
    check_width(&init, &data[0].state)?;
    if cfg.epochs == 0 {
        return Ok(init);
    }
    let mut schedule = BatchSchedule::new(data.len(), cfg.batch_size, seed)?;
    let mut trainer = TdTrainer::new(init, cfg.gamma);
    for _ in 0..cfg.epochs * schedule.batches_per_epoch() {
        let batch = schedule.next_batch().to_vec();
        trainer.train_batch(data, &batch, cfg.eta)?;
    }
    Ok(trainer.into_predictor())
}

fn check_width<R: Real>(p: &Predictor<R>, s: &AugmentedState) -> Result<()> {
    if p.input_width() != s.width() {
        return Err(Error::WidthMismatch {
            expected: p.input_width(),
            found: s.width(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdStep {
    /// `f_{w_t}(ŝ_t)`, made before this step's update.
    pub prediction: f64,
    pub delta: f64,
}

/// One online TD update with step size `alpha`, reusing `scratch`.
pub fn online_td_step_with<R: Real>(
    predictor: &mut Predictor<R>,
    state: &AugmentedState,
    next_state: &AugmentedState,
    cumulant: f64,
    gamma: f64,
    alpha: f64,
    scratch: &mut TdScratch<R>,
) -> Result<TdStep> {
    let net = &predictor.network;
    let v_next = net.forward_with(&next_state.values, &mut scratch.ws_next)?.get();
    let v = net.forward_with(&state.values, &mut scratch.ws)?.get();
    let delta = td_error(cumulant, v_next, v, gamma);
    scratch.grad.clear();
    net.accumulate_gradient(&mut scratch.ws, R::of(-delta), &mut scratch.grad);
    predictor.step(&scratch.grad, alpha)?;
    Ok(TdStep { prediction: v, delta })
}

/// One online TD update: computes `v_{t+1} = f(ŝ_{t+1})`, `δ_t`, then steps
/// along `−δ_t ∇f(ŝ_t)`.
pub fn online_td_step<R: Real>(
    predictor: &mut Predictor<R>,
    state: &AugmentedState,
    next_state: &AugmentedState,
    cumulant: f64,
    gamma: f64,
    alpha: f64,
) -> Result<TdStep> {
    let mut scratch = TdScratch::new(&predictor.network);
    online_td_step_with(predictor, state, next_state, cumulant, gamma, alpha, &mut scratch)
}

/// FIFO of transitions, each tagged with the stream index of its newest
/// sample (`None` for transitions seeded from the offline log).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<(Transition, Option<usize>)>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn push(&mut self, t: Transition, stream_index: Option<usize>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((t, stream_index));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i].0
    }

    pub fn stream_index(&self, i: usize) -> Option<usize> {
        self.items[i].1
    }

    pub fn latest_stream_index(&self) -> Option<usize> {
        self.items.iter().filter_map(|(_, s)| *s).max()
    }
}

/// How deployment updates the pretrained predictor.
#[derive(Debug, Clone, Copy)]
pub enum TdDeployment<'a> {
    /// Evaluate only.
    Frozen,
    /// One TD step per sample.
    Online,
    /// One TD step per sample plus `replay_steps` replayed mini-batches.
    /// The buffer starts with the last `batch_size · replay_steps` offline
    /// transitions.
    Replay { offline: &'a [Transition], seed: u64 },
}

/// Runs a pretrained predictor over a deployment stream, logging each
/// pre-update prediction.
pub fn deploy_td<R, I>(
    predictor: &mut Predictor<R>,
    observations: I,
    cfg: &TdConfig,
    mode: TdDeployment<'_>,
) -> Result<DeploymentLog>
where
    R: Real,
    I: IntoIterator<Item = Result<Observation>>,
{
    cfg.validate()?;
    let mut scratch = TdScratch::new(&predictor.network);
    let mut replay = match mode {
        TdDeployment::Replay { offline, seed } => {
            if cfg.replay_capacity < cfg.batch_size {
                return Err(Error::Config(format!(
                    "replay capacity {} is smaller than the batch size {}",
                    cfg.replay_capacity, cfg.batch_size
                )));
            }
            let mut buffer = ReplayBuffer::new(cfg.replay_capacity)?;
            let keep = (cfg.batch_size * cfg.replay_steps).min(offline.len());
            for t in &offline[offline.len() - keep..] {
                buffer.push(t.clone(), None);
            }
            Some((buffer, ChaCha8Rng::seed_from_u64(seed)))
        }
        _ => None,
    };

    let mut log = DeploymentLog::default();
    let mut prev: Option<Observation> = None;
    for (t, obs) in observations.into_iter().enumerate() {
        let obs = obs?;
        check_width(predictor, &obs.state)?;
        if let Some(p) = prev.take() {
            let step = match mode {
                TdDeployment::Frozen => {
                    let net = &predictor.network;
                    let v_next = net.forward_with(&obs.state.values, &mut scratch.ws_next)?.get();
                    let v = net.forward_with(&p.state.values, &mut scratch.ws)?.get();
                    TdStep {
                        prediction: v,
                        delta: td_error(obs.cumulant, v_next, v, cfg.gamma),
                    }
                }
                TdDeployment::Online | TdDeployment::Replay { .. } => {
                    let snapshot = match (&replay, cfg.replay_steps) {
                        (Some(_), n) if n > 0 => Some(predictor.network.clone()),
                        _ => None,
                    };
                    let s = online_td_step_with(
                        predictor,
                        &p.state,
                        &obs.state,
                        obs.cumulant,
                        cfg.gamma,
                        cfg.alpha,
                        &mut scratch,
                    )?;
                    log.updates.push(UpdateRecord {
                        kind: UpdateKind::Online,
                        step: t,
                        source_step: t - 1,
                        latest_sample: t,
                    });
                    if let Some((buffer, rng)) = replay.as_mut() {
                        buffer.push(Transition::new(p.state.clone(), obs.cumulant, obs.state.clone())?, Some(t));
                        debug_assert!(buffer.latest_stream_index().is_none_or(|i| i <= t));
                        for _ in 0..cfg.replay_steps {
                            let picks: Vec<usize> =
                                (0..cfg.batch_size).map(|_| rng.random_range(0..buffer.len())).collect();
                            td_direction(
                                &predictor.network,
                                snapshot.as_ref(),
                                picks.iter().map(|&i| buffer.get(i)),
                                cfg.gamma,
                                &mut scratch,
                            )?;
                            predictor.step(&scratch.grad, cfg.alpha)?;
                            let sources = picks.iter().filter_map(|&i| buffer.stream_index(i));
                            log.updates.push(UpdateRecord {
                                kind: UpdateKind::Replay,
                                step: t,
                                source_step: sources.clone().min().map_or(0, |s| s - 1),
                                latest_sample: sources.max().unwrap_or(0),
                            });
                        }
                    }
                    s
                }
            };
            log.rows.push(DeployRow {
                step: t - 1,
                prediction: step.prediction,
                cumulant: p.cumulant,
                delta: Some(step.delta),
                target_step: None,
            });
        }
        prev = Some(obs);
    }
    if let Some(p) = prev {
        log.rows.push(DeployRow {
            step: log.rows.len(),
            prediction: predictor
                .network
                .forward_with(&p.state.values, &mut scratch.ws)?
                .get(),
            cumulant: p.cumulant,
            delta: None,
            target_step: None,
        });
    }
    if !predictor.network.is_finite() {
        return Err(Error::NonFinite("network parameters"));
    }
    Ok(log)
}

/// Offline pretraining followed by online TD in deployment.
pub fn online_td_with_pretrain<R, I>(
    train: &[Transition],
    observations: I,
    cfg: &TdConfig,
    init: Predictor<R>,
    seed: u64,
) -> Result<(DeploymentLog, Predictor<R>)>
where
    R: Real,
    I: IntoIterator<Item = Result<Observation>>,
{
    let mut predictor = offline_td(train, cfg, init, seed)?;
    let log = deploy_td(&mut predictor, observations, cfg, TdDeployment::Online)?;
    Ok((log, predictor))
}

/// Offline pretraining followed by online TD with replay in deployment.
pub fn td_with_replay<R, I>(
    train: &[Transition],
    observations: I,
    cfg: &TdConfig,
    init: Predictor<R>,
    seed: u64,
) -> Result<(DeploymentLog, Predictor<R>)>
where
    R: Real,
    I: IntoIterator<Item = Result<Observation>>,
{
    let mut predictor = offline_td(train, cfg, init, seed)?;
    let mode = TdDeployment::Replay {
        offline: train,
        seed: seed.wrapping_add(1),
    };
    let log = deploy_td(&mut predictor, observations, cfg, mode)?;
    Ok((log, predictor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::NetworkConfig;
    use crate::mlp::AdamConfig;

    fn one_hot(i: usize, k: usize, step: usize) -> AugmentedState {
        let mut values = vec![0.0; k];
        values[i] = 1.0;
        AugmentedState { values, step }
    }

    /// Deterministic cycle 0 → 1 → … → 4 → 0 with cumulant `c[s]` received
    /// on arrival in `s`.
    fn cycle_stream(len: usize, c: &[f64]) -> Vec<Observation> {
        (0..len)
            .map(|t| Observation {
                state: one_hot(t % c.len(), c.len(), t),
                cumulant: c[t % c.len()],
            })
            .collect()
    }

    /// Oracle: v = (I − γP)⁻¹ P c by Gaussian elimination.
    fn linear_oracle(p: &[Vec<f64>], c: &[f64], gamma: f64) -> Vec<f64> {
        let n = c.len();
        let pc: Vec<f64> = (0..n).map(|i| (0..n).map(|j| p[i][j] * c[j]).sum()).collect();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .map(|j| if i == j { 1.0 } else { 0.0 } - gamma * p[i][j])
                    .collect();
                row.push(pc[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..=n {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    fn linear() -> NetworkConfig {
        NetworkConfig {
            hidden: vec![],
            adam: AdamConfig::without_decay(),
        }
    }

    #[test]
    fn td_error_cases() {
        assert_eq!(td_error(1.0, 0.0, 0.0, 0.99), 1.0);
        assert_eq!(td_error(1.0, 2.0, 1.0 + 0.5 * 2.0, 0.5), 0.0);
        assert!((td_error(0.5, 2.0, 1.0, 0.9) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn first_step_on_zero_net_has_delta_equal_cumulant() {
        let cfg = NetworkConfig { hidden: vec![], adam: AdamConfig::without_decay() };
        let mut p = Predictor::<f64>::new(&cfg, 2, 0).unwrap();
        p.network.params_mut().iter_mut().for_each(|w| *w = 0.0);
        let s = AugmentedState { values: vec![1.0, 0.0], step: 0 };
        let s1 = AugmentedState { values: vec![0.0, 1.0], step: 1 };
        let out = online_td_step(&mut p, &s, &s1, 2.5, 0.9, 0.1).unwrap();
        assert_eq!(out.delta, 2.5);
        assert_eq!(out.prediction, 0.0);
        assert!(p.predict(&s.values).unwrap() > 0.0);
    }

    #[test]
    fn zero_alpha_is_frozen() {
        let cfg = NetworkConfig { hidden: vec![8], ..NetworkConfig::default() };
        let init = Predictor::<f32>::new(&cfg, 5, 7).unwrap();
        let stream = cycle_stream(200, &[1.0, 0.0, 2.0, 0.5, -1.0]);
        let td = TdConfig { alpha: 0.0, ..TdConfig::default() };

        let mut online = init.clone();
        let a = deploy_td(&mut online, stream.iter().cloned().map(Ok), &td, TdDeployment::Online).unwrap();
        let mut frozen = init.clone();
        let b = deploy_td(&mut frozen, stream.iter().cloned().map(Ok), &td, TdDeployment::Frozen).unwrap();
        assert_eq!(online.network, init.network);
        assert_eq!(a.rows, b.rows);
        let first = a.rows[0].prediction;
        assert!(a.rows.iter().step_by(5).all(|r| r.prediction == first));
    }

    #[test]
    fn online_td_cycle_matches_linear_solve() {
        let c = [1.0, 0.0, 2.0, 0.5, -1.0];
        let p: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if j == (i + 1) % 5 { 1.0 } else { 0.0 }).collect()).collect();
        for gamma in [0.5, 0.9] {
            let oracle = linear_oracle(&p, &c, gamma);
            let mut pred = Predictor::<f64>::new(&linear(), 5, 1).unwrap();
            for alpha in [1e-2, 1e-3, 1e-4] {
                let td = TdConfig { gamma, alpha, ..TdConfig::default() };
                let stream = cycle_stream(20_000, &c);
                deploy_td(&mut pred, stream.into_iter().map(Ok), &td, TdDeployment::Online).unwrap();
            }
            for s in 0..5 {
                let v = pred.predict(&one_hot(s, 5, 0).values).unwrap();
                assert!((v - oracle[s]).abs() < 1e-3, "γ={gamma} state {s}: {v} vs {}", oracle[s]);
            }
        }
    }

    #[test]
    fn learned_value_grows_with_gamma_for_positive_cumulants() {
        let c = [1.0, 0.2, 0.5, 0.0, 2.0];
        let mut prev: Option<Vec<f64>> = None;
        for gamma in [0.0, 0.3, 0.6, 0.9] {
            let mut pred = Predictor::<f64>::new(&linear(), 5, 1).unwrap();
            for alpha in [1e-2, 1e-3, 1e-4] {
                let td = TdConfig { gamma, alpha, ..TdConfig::default() };
                deploy_td(&mut pred, cycle_stream(20_000, &c).into_iter().map(Ok), &td, TdDeployment::Online).unwrap();
            }
            let v: Vec<f64> = (0..5).map(|s| pred.predict(&one_hot(s, 5, 0).values).unwrap()).collect();
            if let Some(p) = &prev {
                assert!(v.iter().zip(p).all(|(a, b)| a > b), "γ={gamma}: {v:?} vs {p:?}");
            }
            prev = Some(v);
        }
    }

    #[test]
    fn offline_td_stochastic_chain_matches_linear_solve() {
        // Transition probabilities in quarters; the dataset holds each
        // successor in exact proportion, so the empirical chain is exact.
        let p = vec![
            vec![0.0, 0.5, 0.25, 0.25, 0.0],
            vec![0.25, 0.0, 0.75, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.0, 0.0, 0.5],
            vec![0.25, 0.25, 0.25, 0.25, 0.0],
        ];
        let c = [0.3, -1.0, 2.0, 0.0, 1.0];
        let gamma = 0.9;
        let oracle = linear_oracle(&p, &c, gamma);
        let mut data = Vec::new();
        for (i, row) in p.iter().enumerate() {
            for (j, &pij) in row.iter().enumerate() {
                for _ in 0..(pij * 4.0) as usize {
                    data.push(Transition::new(one_hot(i, 5, 0), c[j], one_hot(j, 5, 0)).unwrap());
                }
            }
        }
        let mut pred = Predictor::<f64>::new(&linear(), 5, 3).unwrap();
        for eta in [1e-2, 1e-3, 1e-4] {
            let td = TdConfig { gamma, eta, batch_size: data.len(), epochs: 6000, ..TdConfig::default() };
            pred = offline_td(&data, &td, pred, 0).unwrap();
        }
        for s in 0..5 {
            let v = pred.predict(&one_hot(s, 5, 0).values).unwrap();
            assert!((v - oracle[s]).abs() < 1e-3, "state {s}: {v} vs {}", oracle[s]);
        }
    }

    #[test]
    fn offline_zero_epochs_is_identity_and_seeded() {
        let cfg = NetworkConfig { hidden: vec![6], ..NetworkConfig::default() };
        let init = Predictor::<f32>::new(&cfg, 5, 2).unwrap();
        let data = transitions(&cycle_stream(50, &[1.0, 0.0, 2.0, 0.5, -1.0]));
        let td0 = TdConfig { epochs: 0, ..TdConfig::default() };
        assert_eq!(offline_td(&data, &td0, init.clone(), 1).unwrap(), init);
        let td = TdConfig { epochs: 3, batch_size: 8, eta: 1e-3, ..TdConfig::default() };
        let a = offline_td(&data, &td, init.clone(), 9).unwrap();
        let b = offline_td(&data, &td, init.clone(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init);
        assert!(offline_td(&[], &td, init, 9).is_err());
    }

    #[test]
    fn oversized_batch_is_single_batch() {
        let cfg = NetworkConfig { hidden: vec![], adam: AdamConfig::without_decay() };
        let init = Predictor::<f64>::new(&cfg, 5, 2).unwrap();
        let data = transitions(&cycle_stream(6, &[1.0; 5]));
        let td = TdConfig { epochs: 2, batch_size: 100, ..TdConfig::default() };
        let out = offline_td(&data, &td, init, 1).unwrap();
        assert_eq!(out.optimizer.step_count, 2);
    }

    #[test]
    fn replay_without_steps_matches_online() {
        let cfg = NetworkConfig { hidden: vec![8], ..NetworkConfig::default() };
        let init = Predictor::<f32>::new(&cfg, 5, 11).unwrap();
        let train = transitions(&cycle_stream(100, &[1.0, 0.0, 2.0, 0.5, -1.0]));
        let stream = cycle_stream(300, &[1.5, 0.0, 2.0, 0.5, -1.0]);
        let td = TdConfig { epochs: 2, batch_size: 16, eta: 1e-3, alpha: 1e-3, replay_steps: 0, replay_capacity: 64, ..TdConfig::default() };
        let (a, pa) = online_td_with_pretrain(&train, stream.iter().cloned().map(Ok), &td, init.clone(), 5).unwrap();
        let (b, pb) = td_with_replay(&train, stream.iter().cloned().map(Ok), &td, init, 5).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(pa, pb);
    }

    #[test]
    fn replay_never_reads_the_future() {
        let cfg = NetworkConfig { hidden: vec![8], ..NetworkConfig::default() };
        let init = Predictor::<f32>::new(&cfg, 5, 11).unwrap();
        let train = transitions(&cycle_stream(100, &[1.0, 0.0, 2.0, 0.5, -1.0]));
        let stream = cycle_stream(300, &[1.5, 0.0, 2.0, 0.5, -1.0]);
        let td = TdConfig { epochs: 1, batch_size: 8, eta: 1e-3, alpha: 1e-3, replay_steps: 2, replay_capacity: 32, ..TdConfig::default() };
        let (log, _) = td_with_replay(&train, stream.into_iter().map(Ok), &td, init, 5).unwrap();
        let replays = log.updates.iter().filter(|u| u.kind == UpdateKind::Replay).count();
        assert_eq!(replays, 2 * 299);
        for u in &log.updates {
            assert!(u.latest_sample <= u.step, "{u:?}");
        }
        assert_eq!(log.rows.len(), 300);
    }

    #[test]
    fn replay_buffer_is_bounded_fifo() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            let s = one_hot(0, 1, i);
            b.push(Transition::new(s.clone(), i as f64, s).unwrap(), Some(i));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).cumulant, 2.0);
        assert_eq!(b.latest_stream_index(), Some(4));
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn replay_capacity_must_cover_batch() {
        let cfg = NetworkConfig { hidden: vec![], ..NetworkConfig::default() };
        let mut p = Predictor::<f32>::new(&cfg, 5, 1).unwrap();
        let td = TdConfig { batch_size: 64, replay_capacity: 10, ..TdConfig::default() };
        let mode = TdDeployment::Replay { offline: &[], seed: 0 };
        assert!(deploy_td(&mut p, Vec::<Result<Observation>>::new(), &td, mode).is_err());
    }

    #[test]
    fn log_layout_and_causality() {
        let cfg = NetworkConfig { hidden: vec![4], ..NetworkConfig::default() };
        let mut p = Predictor::<f32>::new(&cfg, 5, 1).unwrap();
        let stream = cycle_stream(10, &[1.0; 5]);
        let log = deploy_td(&mut p, stream.into_iter().map(Ok), &TdConfig::default(), TdDeployment::Online).unwrap();
        assert_eq!(log.rows.len(), 10);
        assert!(log.rows[..9].iter().all(|r| r.delta.is_some()));
        assert!(log.rows[9].delta.is_none());
        assert_eq!(log.updates.len(), 9);
        for (i, u) in log.updates.iter().enumerate() {
            assert_eq!((u.step, u.source_step, u.latest_sample), (i + 1, i, i + 1));
        }
    }

    #[test]
    fn width_mismatch_is_reported() {
        let cfg = NetworkConfig { hidden: vec![], ..NetworkConfig::default() };
        let mut p = Predictor::<f32>::new(&cfg, 3, 1).unwrap();
        let stream = cycle_stream(4, &[1.0; 5]);
        assert!(deploy_td(&mut p, stream.into_iter().map(Ok), &TdConfig::default(), TdDeployment::Online).is_err());
    }
}
