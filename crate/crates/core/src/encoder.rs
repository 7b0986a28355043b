//! Agent-state construction.
//!
//! An augmented state is laid out as
//! `[normalized sensors (d) | memory traces (d) | mode one-hot | time of day | thermometer]`,
//! where the three trailing blocks are optional and together form the `k`
//! encoding inputs. The layout is fixed for a run and identified by
//! [`StateLayout::hash`], which checkpoints record.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{RawRecord, SensorMeta};
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Min-max scaling into `[0, 1]`. Readings outside the reference range map
/// outside `[0, 1]`; nothing is clamped.
pub fn normalize(o: f64, meta: &SensorMeta) -> Result<f64> {
    if meta.max <= meta.min {
        return Err(Error::Config(format!(
            "sensor `{}` has a degenerate range [{}, {}]",
            meta.name, meta.min, meta.max
        )));
    }
    Ok((o - meta.min) / (meta.max - meta.min))
}

pub fn encode_one_hot(value: usize, k: usize) -> Result<Vec<f64>> {
    if value >= k {
        return Err(Error::OutOfRange { index: value, len: k });
    }
    let mut v = vec![0.0; k];
    v[value] = 1.0;
    Ok(v)
}

/// `(sin, cos)` of the phase within a day. Seconds wrap modulo one day.
pub fn encode_time_of_day(seconds: i64) -> (f64, f64) {
    let s = seconds.rem_euclid(SECONDS_PER_DAY) as f64;
    let angle = 2.0 * PI * s / SECONDS_PER_DAY as f64;
    (angle.sin(), angle.cos())
}

/// `[sin(2^j π φ) for j < size | cos(2^j π φ) for j < size]` with
/// `φ = elapsed / mode_length`.
pub fn encode_mode_thermometer(elapsed: f64, mode_length: f64, size: usize) -> Result<Vec<f64>> {
    if !(mode_length > 0.0) {
        return Err(Error::Config(format!(
            "mode length must be positive, got {mode_length}"
        )));
    }
    if elapsed < 0.0 {
        return Err(Error::Config(format!(
            "elapsed time must be non-negative, got {elapsed}"
        )));
    }
    Ok(thermometer(elapsed / mode_length, size))
}

fn thermometer(phase: f64, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * size];
    let mut freq = 1.0;
    for j in 0..size {
        let (s, c) = (freq * PI * phase).sin_cos();
        out[j] = s;
        out[size + j] = c;
        freq *= 2.0;
    }
    out
}

/// Exponential memory traces `z`, one per normalized sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub z: Vec<f64>,
}

impl TraceState {
    pub fn zeros(width: usize) -> Self {
        TraceState { z: vec![0.0; width] }
    }

    pub fn update(&mut self, o_norm: &[f64], beta: f64) -> Result<()> {
        if o_norm.len() != self.z.len() {
            return Err(Error::WidthMismatch {
                expected: self.z.len(),
                found: o_norm.len(),
            });
        }
        for (z, &o) in self.z.iter_mut().zip(o_norm) {
            let next = beta * *z + (1.0 - beta) * o;
            // convex combination: keep rounding inside [min(z, o), max(z, o)]
            *z = next.clamp(z.min(o), z.max(o));
        }
        Ok(())
    }
}

/// `z' = β z + (1 − β) o`, componentwise.
pub fn update_trace(z: &TraceState, o_norm: &[f64], beta: f64) -> Result<TraceState> {
    let mut next = z.clone();
    next.update(o_norm, beta)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Trace decay rate.
    pub beta: f64,
    pub thermometer_size: usize,
    pub seconds_per_day: i64,
    /// Known mode labels, in one-hot order.
    pub mode_vocabulary: Vec<String>,
    /// Scheduled duration of each mode, in seconds.
    pub mode_lengths: BTreeMap<String, f64>,
    pub time_of_day: bool,
    pub mode_one_hot: bool,
    pub mode_thermometer: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            beta: 0.99,
            thermometer_size: 7,
            seconds_per_day: SECONDS_PER_DAY,
            mode_vocabulary: Vec::new(),
            mode_lengths: BTreeMap::new(),
            time_of_day: true,
            mode_one_hot: true,
            mode_thermometer: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.thermometer_size == 0 {
            return Err(Error::Config("thermometer_size must be at least 1".into()));
        }
        if self.mode_vocabulary.is_empty() {
            return Err(Error::Config("mode_vocabulary must not be empty".into()));
        }
        if self.seconds_per_day != SECONDS_PER_DAY {
            return Err(Error::Config(format!(
                "seconds_per_day must be {SECONDS_PER_DAY}"
            )));
        }
        if let Some((mode, len)) = self.mode_lengths.iter().find(|(_, &l)| !(l > 0.0)) {
            return Err(Error::Config(format!("mode `{mode}` has non-positive length {len}")));
        }
        Ok(())
    }
}

/// Block widths of the augmented state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub sensors: Vec<String>,
    pub mode_one_hot: usize,
    pub time_of_day: usize,
    pub thermometer: usize,
}

impl StateLayout {
    pub fn new(cfg: &EncoderConfig, sensors: Vec<String>) -> Self {
        StateLayout {
            sensors,
            mode_one_hot: if cfg.mode_one_hot { cfg.mode_vocabulary.len() } else { 0 },
            time_of_day: if cfg.time_of_day { 2 } else { 0 },
            thermometer: if cfg.mode_thermometer { 2 * cfg.thermometer_size } else { 0 },
        }
    }

    /// Number of encoding inputs appended after sensors and traces.
    pub fn encodings(&self) -> usize {
        self.mode_one_hot + self.time_of_day + self.thermometer
    }

    pub fn width(&self) -> usize {
        2 * self.sensors.len() + self.encodings()
    }

    /// Human-readable block listing, as written to run manifests.
    pub fn describe(&self) -> String {
        let d = self.sensors.len();
        let mut out = format!("sensors[0..{d}) traces[{d}..{})", 2 * d);
        let mut at = 2 * d;
        for (name, w) in [
            ("mode_one_hot", self.mode_one_hot),
            ("time_of_day", self.time_of_day),
            ("thermometer", self.thermometer),
        ] {
            if w > 0 {
                out.push_str(&format!(" {name}[{at}..{})", at + w));
                at += w;
            }
        }
        out.push_str(" sensor_names=");
        out.push_str(&self.sensors.join(","));
        out
    }

    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub values: Vec<f64>,
    /// Position in the stream that produced this state.
    pub step: usize,
}

impl AugmentedState {
    pub fn width(&self) -> usize {
        self.values.len()
    }
}

/// Tracks time since the current mode began and the running mean duration
/// of each completed mode.
#[derive(Debug, Clone, Default)]
struct ModeClock {
    current: Option<(String, i64)>,
    completed: BTreeMap<String, (f64, u64)>,
}

impl ModeClock {
    fn observe(&mut self, mode: &str, timestamp: i64) -> f64 {
        match &self.current {
            Some((m, start)) if m == mode => (timestamp - start) as f64,
            _ => {
                if let Some((m, start)) = self.current.take() {
                    let entry = self.completed.entry(m).or_insert((0.0, 0));
                    entry.0 += (timestamp - start) as f64;
                    entry.1 += 1;
                }
                self.current = Some((mode.to_string(), timestamp));
                0.0
            }
        }
    }

    fn mean_duration(&self, mode: &str) -> Option<f64> {
        self.completed
            .get(mode)
            .map(|&(total, count)| total / count as f64)
            .filter(|&d| d > 0.0)
    }
}

/// Streaming encoder `U(o_{t+1}, ŝ_t)`. One builder per stream; it owns the
/// traces and mode clock.
#[derive(Debug, Clone)]
pub struct StateBuilder {
    cfg: EncoderConfig,
    meta: Vec<SensorMeta>,
    layout: StateLayout,
    traces: TraceState,
    clock: ModeClock,
    step: usize,
    scratch: Vec<f64>,
}

impl StateBuilder {
    pub fn new(cfg: EncoderConfig, meta: Vec<SensorMeta>) -> Result<Self> {
        cfg.validate()?;
        if let Some(m) = meta.iter().find(|m| m.max <= m.min) {
            return Err(Error::Config(format!(
                "sensor `{}` is constant over the reference log; remove it before encoding",
                m.name
            )));
        }
        let layout = StateLayout::new(&cfg, meta.iter().map(|m| m.name.clone()).collect());
        let d = meta.len();
        Ok(StateBuilder {
            cfg,
            meta,
            layout,
            traces: TraceState::zeros(d),
            clock: ModeClock::default(),
            step: 0,
            scratch: vec![0.0; d],
        })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn meta(&self) -> &[SensorMeta] {
        &self.meta
    }

    pub fn traces(&self) -> &TraceState {
        &self.traces
    }

    /// Fresh copy with zero traces and no mode history.
    pub fn restarted(&self) -> Self {
        let mut b = self.clone();
        b.traces = TraceState::zeros(self.meta.len());
        b.clock = ModeClock::default();
        b.step = 0;
        b
    }

    /// Encodes the next observation. Missing readings are zero-imputed.
    pub fn build(&mut self, record: &RawRecord) -> Result<AugmentedState> {
        let d = self.meta.len();
        if record.width() != d {
            return Err(Error::WidthMismatch {
                expected: d,
                found: record.width(),
            });
        }
        for (i, (slot, meta)) in self.scratch.iter_mut().zip(&self.meta).enumerate() {
            *slot = normalize(record.values[i].unwrap_or(0.0), meta)?;
        }
        self.traces.update(&self.scratch, self.cfg.beta)?;

        let mut values = Vec::with_capacity(self.layout.width());
        values.extend_from_slice(&self.scratch);
        values.extend_from_slice(&self.traces.z);

        let elapsed = self.clock.observe(&record.mode, record.timestamp);
        if self.cfg.mode_one_hot {
            let idx = self
                .cfg
                .mode_vocabulary
                .iter()
                .position(|m| m == &record.mode)
                .ok_or_else(|| Error::Data(format!("mode `{}` not in vocabulary", record.mode)))?;
            values.extend(encode_one_hot(idx, self.cfg.mode_vocabulary.len())?);
        }
        if self.cfg.time_of_day {
            let (s, c) = encode_time_of_day(record.timestamp);
            values.push(s);
            values.push(c);
        }
        if self.cfg.mode_thermometer {
            let length = self
                .cfg
                .mode_lengths
                .get(&record.mode)
                .copied()
                .or_else(|| self.clock.mean_duration(&record.mode));
            // Without a schedule or a completed occurrence the phase is unknown
            // and the thermometer reads as phase zero.
            let phase = length.map_or(0.0, |l| elapsed / l);
            values.extend(thermometer(phase, self.cfg.thermometer_size));
        }
        debug_assert_eq!(values.len(), self.layout.width());

        let state = AugmentedState {
            values,
            step: self.step,
        };
        self.step += 1;
        Ok(state)
    }

    pub fn encode_all(&mut self, records: &[RawRecord]) -> Result<Vec<AugmentedState>> {
        records.iter().map(|r| self.build(r)).collect()
    }
}
