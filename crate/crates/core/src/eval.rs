//! Retroactive evaluation: truncated returns, exponentially weighted
//! statistics, streaming NMSE and the validation sweep over step sizes.
//!
//! Nothing here is visible to a learner. Targets are built by looking ahead
//! in a finished log.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gvf::{deploy_td, offline_td, transitions, TdConfig, TdDeployment};
use crate::learner::{NetworkConfig, Predictor};
use crate::mlp::Real;
use crate::nstep::{build_nstep_dataset, deploy_nstep, offline_nstep, NStepConfig};
use crate::stream::{DeploymentLog, Observation};

/// Smallest `K ≥ 1` with `γ^K ≤ tol`.
pub fn horizon(gamma: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ((tol.ln() / gamma.ln()).ceil() as usize).max(1)
}

/// Worst-case error of truncating after `horizon(gamma, tol)` terms.
pub fn truncation_bound(gamma: f64, tol: f64, sup_abs_cumulant: f64) -> f64 {
    tol * sup_abs_cumulant / (1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnSample {
    pub value: f64,
    /// Fewer than `K` future cumulants were available.
    pub partial: bool,
}

/// `G_t = Σ_{j<K} γ^j c_{t+1+j}` from `future = [c_{t+1}, c_{t+2}, …]`.
pub fn truncated_return(future: &[f64], gamma: f64, tol: f64) -> ReturnSample {
    let k = horizon(gamma, tol);
    let mut value = 0.0;
    let mut g = 1.0;
    for &c in future.iter().take(k) {
        value += g * c;
        g *= gamma;
    }
    ReturnSample {
        value,
        partial: future.len() < k,
    }
}

/// Returns for every step of a cumulant stream, with the metadata needed to
/// interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub samples: Vec<ReturnSample>,
    pub horizon: usize,
    /// Bound on the truncation error of every complete sample.
    pub bound: f64,
}

impl Returns {
    /// Complete returns as targets; partial ones are `None`.
    pub fn targets(&self) -> Vec<Option<f64>> {
        self.samples
            .iter()
            .map(|s| (!s.partial).then_some(s.value))
            .collect()
    }
}

pub fn returns(cumulants: &[f64], gamma: f64, tol: f64) -> Returns {
    let samples = (0..cumulants.len())
        .into_par_iter()
        .map(|t| truncated_return(&cumulants[t + 1..], gamma, tol))
        .collect();
    let sup = cumulants.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    Returns {
        samples,
        horizon: horizon(gamma, tol),
        bound: truncation_bound(gamma, tol, sup),
    }
}

/// `c_{t+n}` for each step, `None` past the end of the stream.
pub fn nstep_targets(cumulants: &[f64], n: usize) -> Vec<Option<f64>> {
    (0..cumulants.len())
        .map(|t| cumulants.get(t + n).copied())
        .collect()
}

/// Exponentially weighted mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricState {
    pub ew_mean: f64,
    pub ew_var: f64,
    pub decay: f64,
    pub count: u64,
}

impl MetricState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {decay}")));
        }
        Ok(MetricState {
            ew_mean: 0.0,
            ew_var: 0.0,
            decay,
            count: 0,
        })
    }

    pub fn update(&mut self, x: f64) {
        *self = ew_welford_update(*self, x);
    }
}

/// One exponentially weighted Welford step. The first sample sets the mean.
pub fn ew_welford_update(m: MetricState, x: f64) -> MetricState {
    if m.count == 0 {
        return MetricState {
            ew_mean: x,
            ew_var: 0.0,
            count: 1,
            ..m
        };
    }
    let a = m.decay;
    let d = x - m.ew_mean;
    MetricState {
        ew_mean: m.ew_mean + a * d,
        ew_var: (1.0 - a) * (m.ew_var + a * d * d),
        decay: a,
        count: m.count + 1,
    }
}

/// Running NMSE: EW mean of squared error over EW variance of the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseState {
    pub error: MetricState,
    pub target: MetricState,
}

impl NmseState {
    pub fn new(decay: f64) -> Result<Self> {
        Ok(NmseState {
            error: MetricState::new(decay)?,
            target: MetricState::new(decay)?,
        })
    }

    pub fn update(&mut self, prediction: f64, target: f64) {
        self.error.update((prediction - target).powi(2));
        self.target.update(target);
    }

    /// `None` while the target variance is zero.
    pub fn value(&self) -> Option<f64> {
        (self.target.ew_var > 0.0).then(|| self.error.ew_mean / self.target.ew_var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub gamma: f64,
    pub tol: f64,
    pub decay: f64,
    /// Defined targets consumed before the series is emitted.
    pub burn_in: usize,
    /// Trailing share of the series averaged by [`NmseSummary::tail_mean`].
    pub tail_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gamma: 0.99,
            tol: 1e-4,
            decay: 0.001,
            burn_in: 1000,
            tail_fraction: 0.25,
        }
    }
}

/// Per-step NMSE. Steps without a target, inside the burn-in, or with zero
/// target variance are `None`.
pub fn nmse_stream(
    predictions: &[f64],
    targets: &[Option<f64>],
    decay: f64,
    burn_in: usize,
) -> Result<Vec<Option<f64>>> {
    if predictions.len() != targets.len() {
        return Err(Error::WidthMismatch {
            expected: predictions.len(),
            found: targets.len(),
        });
    }
    let mut state = NmseState::new(decay)?;
    let mut seen = 0;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(&p, t)| {
            let t = (*t)?;
            state.update(p, t);
            seen += 1;
            if seen <= burn_in {
                None
            } else {
                state.value()
            }
        })
        .collect())
}

/// Targets matching a deployment log: `c_{target_step}` for n-step logs,
/// truncated returns otherwise.
pub fn log_targets(log: &DeploymentLog, gamma: f64, tol: f64) -> Vec<Option<f64>> {
    let cumulants = log.cumulants();
    if log.has_targets() {
        log.rows
            .iter()
            .map(|r| r.target_step.and_then(|s| cumulants.get(s).copied()))
            .collect()
    } else {
        returns(&cumulants, gamma, tol).targets()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmseSummary {
    pub defined: usize,
    pub mean: Option<f64>,
    pub tail_mean: Option<f64>,
    pub last: Option<f64>,
}

impl NmseSummary {
    pub fn of(series: &[Option<f64>], tail_fraction: f64) -> Self {
        let defined: Vec<f64> = series.iter().flatten().copied().collect();
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let tail_len = ((defined.len() as f64 * tail_fraction).ceil() as usize).min(defined.len());
        NmseSummary {
            defined: defined.len(),
            mean: mean(&defined),
            tail_mean: mean(&defined[defined.len() - tail_len..]),
            last: defined.last().copied(),
        }
    }
}

/// NMSE series and summary of a deployment log.
pub fn evaluate_log(log: &DeploymentLog, cfg: &EvalConfig) -> Result<(Vec<Option<f64>>, NmseSummary)> {
    let targets = log_targets(log, cfg.gamma, cfg.tol);
    let series = nmse_stream(&log.predictions(), &targets, cfg.decay, cfg.burn_in)?;
    let summary = NmseSummary::of(&series, cfg.tail_fraction);
    Ok((series, summary))
}

/// `step,nmse` with an empty cell where undefined.
pub fn write_nmse_series<W: Write>(out: &mut W, series: &[Option<f64>]) -> std::io::Result<()> {
    writeln!(out, "step,nmse")?;
    for (i, v) in series.iter().enumerate() {
        match v {
            Some(v) => writeln!(out, "{i},{v}")?,
            None => writeln!(out, "{i},")?,
        }
    }
    Ok(())
}

/// `count` values spaced evenly in log scale from `hi` down to `lo`.
pub fn geometric_grid(hi: f64, lo: f64, count: usize) -> Result<Vec<f64>> {
    if !(hi > 0.0 && lo > 0.0) || count == 0 {
        return Err(Error::Config("geometric grid needs positive bounds and count".into()));
    }
    if count == 1 {
        return Ok(vec![hi]);
    }
    let step = (lo / hi).ln() / (count - 1) as f64;
    Ok((0..count).map(|i| hi * (step * i as f64).exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub etas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.alphas.is_empty() {
            return Err(Error::Config("sweep grid must be non-empty".into()));
        }
        if self.etas.iter().chain(&self.alphas).any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config("sweep step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The learner a sweep tunes, with its non-swept settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearnerKind {
    Td(TdConfig),
    NStep(NStepConfig),
}

/// Mean validation error per `(η, α)`: rows follow `etas`, columns `alphas`.
/// Cells that diverged hold `+∞`; cells a two-stage sweep skipped hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub errors: Vec<Vec<f64>>,
    pub best: (usize, usize),
}

impl SweepResult {
    pub fn best_eta(&self) -> f64 {
        self.grid.etas[self.best.0]
    }

    pub fn best_alpha(&self) -> f64 {
        self.grid.alphas[self.best.1]
    }

    pub fn best_error(&self) -> f64 {
        self.errors[self.best.0][self.best.1]
    }

    /// Comma-separated matrix, one row per η.
    pub fn write_matrix<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "eta")?;
        for a in &self.grid.alphas {
            write!(out, ",{a:e}")?;
        }
        writeln!(out)?;
        for (eta, row) in self.grid.etas.iter().zip(&self.errors) {
            write!(out, "{eta:e}")?;
            for e in row {
                write!(out, ",{e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    fn select(grid: SweepGrid, errors: Vec<Vec<f64>>) -> Result<Self> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (i, row) in errors.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                if !e.is_nan() && best.is_none_or(|(_, b)| e < b) {
                    best = Some(((i, j), e));
                }
            }
        }
        let ((i, j), _) = best.ok_or(Error::Empty("evaluated sweep cells"))?;
        Ok(SweepResult {
            grid,
            errors,
            best: (i, j),
        })
    }
}

fn pretrain<R: Real>(
    train: &[Observation],
    kind: &LearnerKind,
    net: &NetworkConfig,
    eta: f64,
    seed: u64,
) -> Result<Predictor<R>> {
    let width = train.first().ok_or(Error::Empty("training segment"))?.state.width();
    let init = Predictor::new(net, width, seed)?;
    match kind {
        LearnerKind::Td(cfg) => {
            let cfg = TdConfig { eta, ..cfg.clone() };
            offline_td(&transitions(train), &cfg, init, seed)
        }
        LearnerKind::NStep(cfg) => {
            let cfg = NStepConfig { eta, ..cfg.clone() };
            offline_nstep(&build_nstep_dataset(train, cfg.n)?, &cfg, init, seed)
        }
    }
}

/// Streams `segment` through `predictor` with step size `alpha` and returns
/// the mean squared error of the pre-update predictions against their
/// retroactive targets.
fn stream_error<R: Real>(
    mut predictor: Predictor<R>,
    segment: &[Observation],
    kind: &LearnerKind,
    alpha: f64,
    tol: f64,
) -> Result<f64> {
    let obs = segment.iter().cloned().map(Ok);
    let (log, gamma) = match kind {
        LearnerKind::Td(cfg) => {
            let cfg = TdConfig { alpha, ..cfg.clone() };
            let mode = if alpha > 0.0 { TdDeployment::Online } else { TdDeployment::Frozen };
            (deploy_td(&mut predictor, obs, &cfg, mode)?, cfg.gamma)
        }
        LearnerKind::NStep(cfg) => {
            let cfg = NStepConfig { alpha, ..cfg.clone() };
            (deploy_nstep(&mut predictor, obs, &cfg, alpha > 0.0)?, 0.0)
        }
    };
    debug_assert!(log.updates.iter().all(|u| u.latest_sample <= u.step));
    let targets = log_targets(&log, gamma, tol);
    let (sum, count) = log
        .rows
        .iter()
        .zip(&targets)
        .filter_map(|(r, t)| t.map(|t| (r.prediction - t).powi(2)))
        .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
    if count == 0 {
        return Err(Error::Data("validation segment too short for any target".into()));
    }
    Ok(sum / count as f64)
}

/// Maps divergence to `+∞` so the cell loses instead of aborting the sweep.
fn cell_error(result: Result<f64>) -> Result<f64> {
    match result {
        Ok(e) if e.is_finite() => Ok(e),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Like [`pretrain`], with divergence reported as `None`.
fn pretrain_cell<R: Real>(
    train: &[Observation],
    kind: &LearnerKind,
    net: &NetworkConfig,
    eta: f64,
    seed: u64,
) -> Result<Option<Predictor<R>>> {
    match pretrain(train, kind, net, eta, seed) {
        Ok(p) if p.network.is_finite() => Ok(Some(p)),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn alpha_row<R: Real>(
    pretrained: Option<&Predictor<R>>,
    validation: &[Observation],
    kind: &LearnerKind,
    alphas: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    match pretrained {
        Some(p) => alphas
            .par_iter()
            .map(|&alpha| cell_error(stream_error(p.clone(), validation, kind, alpha, tol)))
            .collect(),
        None => Ok(vec![f64::INFINITY; alphas.len()]),
    }
}

/// Pretrains on `train` with each η, streams `validation` once with each α
/// and picks the pair with the lowest mean pre-update error. Every cell
/// starts from the same seed; ties go to the first cell in grid order.
pub fn validation_sweep<R: Real>(
    train: &[Observation],
    validation: &[Observation],
    grid: &SweepGrid,
    kind: &LearnerKind,
    net: &NetworkConfig,
    tol: f64,
    seed: u64,
) -> Result<SweepResult> {
    grid.validate()?;
    let rows = grid
        .etas
        .par_iter()
        .map(|&eta| {
            let pre = pretrain_cell::<R>(train, kind, net, eta, seed)?;
            alpha_row(pre.as_ref(), validation, kind, &grid.alphas, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::select(grid.clone(), rows)
}

/// Picks η by the frozen pretrained predictor's error on the training
/// segment, then sweeps α on validation with that η only.
pub fn two_stage_sweep<R: Real>(
    train: &[Observation],
    validation: &[Observation],
    grid: &SweepGrid,
    kind: &LearnerKind,
    net: &NetworkConfig,
    tol: f64,
    seed: u64,
) -> Result<SweepResult> {
    grid.validate()?;
    let pretrained = grid
        .etas
        .par_iter()
        .map(|&eta| pretrain_cell::<R>(train, kind, net, eta, seed))
        .collect::<Result<Vec<_>>>()?;
    let train_errors = pretrained
        .par_iter()
        .map(|p| match p {
            Some(p) => cell_error(stream_error(p.clone(), train, kind, 0.0, tol)),
            None => Ok(f64::INFINITY),
        })
        .collect::<Result<Vec<f64>>>()?;
    let chosen = (0..train_errors.len()).fold(0, |b, i| if train_errors[i] < train_errors[b] { i } else { b });
    let mut errors = vec![vec![f64::NAN; grid.alphas.len()]; grid.etas.len()];
    errors[chosen] = alpha_row(pretrained[chosen].as_ref(), validation, kind, &grid.alphas, tol)?;
    SweepResult::select(grid.clone(), errors)
}
