use serde::{Deserialize, Serialize};

use super::{Gradient, Network, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient λ; `λ·w` is added to the direction before the moments.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-4,
            weight_decay: 0.003,
        }
    }
}

impl AdamConfig {
    pub fn without_decay() -> Self {
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }
}

/// Moment accumulators and step count. Carried from offline pretraining into
/// deployment unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<R: Real> {
    pub config: AdamConfig,
    pub first_moment: Vec<R>,
    pub second_moment: Vec<R>,
    pub step_count: u64,
}

impl<R: Real> OptimizerState<R> {
    pub fn new(config: AdamConfig, net: &Network<R>) -> Self {
        OptimizerState {
            config,
            first_moment: vec![R::zero(); net.num_params()],
            second_moment: vec![R::zero(); net.num_params()],
            step_count: 0,
        }
    }
}

/// Subnormal moments are far below `epsilon` and slow arithmetic down by
/// orders of magnitude on long runs, so they are stored as zero.
#[inline]
fn flush<R: Real>(x: R) -> R {
    if x.abs() < R::min_positive_value() {
        R::zero()
    } else {
        x
    }
}

/// One bias-corrected Adam update along `direction` (a descent direction,
/// i.e. the gradient of the loss being minimized).
///
/// A zero step size still advances the moments and step count but leaves
/// every weight bit-for-bit untouched.
pub fn adam_step<R: Real>(
    net: &mut Network<R>,
    opt: &mut OptimizerState<R>,
    direction: &Gradient<R>,
    lr: f64,
) -> Result<()> {
    let n = net.num_params();
    if direction.len() != n || opt.first_moment.len() != n || opt.second_moment.len() != n {
        return Err(Error::WidthMismatch {
            expected: n,
            found: direction.len().min(opt.first_moment.len()).min(opt.second_moment.len()),
        });
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("step size must be finite and non-negative, got {lr}")));
    }
    if direction.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("update direction"));
    }

    let cfg = opt.config;
    opt.step_count += 1;
    let t = opt.step_count as f64;
    let bias1 = 1.0 - cfg.beta1.powf(t);
    let bias2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2) = (R::of(cfg.beta1), R::of(cfg.beta2));
    let (one_b1, one_b2) = (R::of(1.0 - cfg.beta1), R::of(1.0 - cfg.beta2));
    let decay = R::of(cfg.weight_decay);
    let step = R::of(lr / bias1);
    let inv_bias2 = R::of(1.0 / bias2);
    let eps = R::of(cfg.epsilon);
    let apply = lr > 0.0;
    // below this, g² underflows into the subnormal range
    let tiny = R::min_positive_value().sqrt();

    let params = net.params_mut();
    for i in 0..n {
        let w = params[i];
        let g = direction.values[i] + decay * w;
        let g = if g.abs() < tiny { R::zero() } else { g };
        let m = flush(b1 * opt.first_moment[i] + one_b1 * g);
        let v = flush(b2 * opt.second_moment[i] + one_b2 * g * g);
        opt.first_moment[i] = m;
        opt.second_moment[i] = v;
        if apply {
            let next = w - step * m / ((v * inv_bias2).sqrt() + eps);
            debug_assert!(next.is_finite(), "parameter {i} became non-finite");
            params[i] = next;
        }
    }
    Ok(())
}
