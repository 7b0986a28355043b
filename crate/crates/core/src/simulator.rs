//! Seedable generator of plant-like telemetry with operating modes, drift,
//! cleaning resets, outliers and injectable shifts. Output is a [`Dataset`]
//! in the ingest format, sampled at 1 Hz.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RawRecord};
use crate::encoder::SECONDS_PER_DAY;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SignalFamily {
    Constant,
    /// `amplitude · sin(2π·timestamp/period + phase)`.
    Sine { amplitude: f64, period: f64, #[serde(default)] phase: f64 },
    /// `slope · step`.
    Ramp { slope: f64 },
    /// `x ← phi·x + sigma·ε`.
    Ar1 { phi: f64, sigma: f64 },
    /// Rises by `slope` per step and drops to zero whenever `reset_mode`
    /// begins, like fouling cleared by a backwash.
    Sawtooth { slope: f64, reset_mode: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    pub base: f64,
    #[serde(flatten)]
    pub family: SignalFamily,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub mode_offsets: BTreeMap<String, f64>,
    /// Added per step.
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModePhase {
    pub mode: String,
    pub duration: u64,
}

/// A mode that pre-empts the cycle once a day, e.g. a maintenance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DailyMode {
    pub mode: String,
    /// Seconds after midnight.
    pub start: i64,
    pub duration: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Changepoint {
    pub step: usize,
    pub sensor: String,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    /// Per-reading probability of an outlier.
    #[serde(default)]
    pub outlier_rate: f64,
    #[serde(default)]
    pub outlier_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantScenario {
    #[serde(default)]
    pub start_timestamp: i64,
    pub schedule: Vec<ModePhase>,
    #[serde(default)]
    pub daily: Vec<DailyMode>,
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub changepoints: Vec<Changepoint>,
    #[serde(default)]
    pub events: EventSpec,
}

impl PlantScenario {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("mode schedule is empty".into()));
        }
        if self.sensors.is_empty() {
            return Err(Error::Config("scenario has no sensors".into()));
        }
        if let Some(p) = self.schedule.iter().find(|p| p.duration == 0) {
            return Err(Error::Config(format!("mode `{}` has zero duration", p.mode)));
        }
        if let Some(d) = self.daily.iter().find(|d| d.duration <= 0 || d.duration >= SECONDS_PER_DAY) {
            return Err(Error::Config(format!("daily mode `{}` has an invalid duration", d.mode)));
        }
        let names: BTreeSet<&str> = self.sensors.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.sensors.len() {
            return Err(Error::Config("duplicate sensor names".into()));
        }
        for s in &self.sensors {
            if !(0.0..1.0).contains(&s.missing_rate) || s.noise < 0.0 {
                return Err(Error::Config(format!("sensor `{}` has invalid noise or missing rate", s.name)));
            }
            if let SignalFamily::Sine { period, .. } = s.family {
                if !(period > 0.0) {
                    return Err(Error::Config(format!("sensor `{}` has a non-positive period", s.name)));
                }
            }
        }
        if let Some(c) = self.changepoints.iter().find(|c| !names.contains(c.sensor.as_str())) {
            return Err(Error::Config(format!("changepoint names unknown sensor `{}`", c.sensor)));
        }
        if !(0.0..1.0).contains(&self.events.outlier_rate) {
            return Err(Error::Config("outlier rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Mode at `step`: a daily window if one covers the time of day, else
    /// the position within the repeating cycle.
    pub fn mode_at(&self, step: usize) -> &str {
        let ts = self.start_timestamp + step as i64;
        let tod = ts.rem_euclid(SECONDS_PER_DAY);
        for d in &self.daily {
            if (tod - d.start).rem_euclid(SECONDS_PER_DAY) < d.duration {
                return &d.mode;
            }
        }
        let cycle: u64 = self.schedule.iter().map(|p| p.duration).sum();
        let mut pos = step as u64 % cycle;
        for p in &self.schedule {
            if pos < p.duration {
                return &p.mode;
            }
            pos -= p.duration;
        }
        unreachable!("position lies within the cycle")
    }

    pub fn sensor_names(&self) -> Vec<String> {
        self.sensors.iter().map(|s| s.name.clone()).collect()
    }

    /// Twelve sensors on a one-hour production / five-minute backwash
    /// cycle with a daily maintenance test at 04:30. One sensor is a
    /// constant spare.
    pub fn packaged() -> Self {
        let offsets = |pairs: &[(&str, f64)]| pairs.iter().map(|(m, v)| (m.to_string(), *v)).collect();
        let sensor = |name: &str, base: f64, family: SignalFamily, noise: f64, off: &[(&str, f64)]| SensorSpec {
            name: name.into(),
            base,
            family,
            noise,
            mode_offsets: offsets(off),
            drift: 0.0,
            missing_rate: 0.0,
        };
        let day = SECONDS_PER_DAY as f64;
        let mut sensors = vec![
            sensor("feed_flow", 120.0, SignalFamily::Sine { amplitude: 8.0, period: day, phase: 0.0 }, 0.5,
                &[("BW", -60.0), ("MIT", -100.0)]),
            sensor("feed_pressure", 2.5, SignalFamily::Ar1 { phi: 0.995, sigma: 0.01 }, 0.02,
                &[("BW", 0.8), ("MIT", -1.5)]),
            sensor("tmp", 0.4, SignalFamily::Sawtooth { slope: 2e-4, reset_mode: "BW".into() }, 0.01,
                &[("BW", -0.2), ("MIT", 0.1)]),
            sensor("permeate_flow", 110.0, SignalFamily::Sine { amplitude: 6.0, period: day, phase: 0.3 }, 0.4,
                &[("BW", -110.0), ("MIT", -110.0)]),
            sensor("water_temp", 14.0, SignalFamily::Sine { amplitude: 2.0, period: day, phase: -1.2 }, 0.05, &[]),
            sensor("conductivity", 450.0, SignalFamily::Ar1 { phi: 0.999, sigma: 1.0 }, 2.0, &[("BW", 15.0)]),
            sensor("turbidity", 0.3, SignalFamily::Ar1 { phi: 0.99, sigma: 0.01 }, 0.01, &[("BW", 0.5)]),
            sensor("ph", 7.2, SignalFamily::Ar1 { phi: 0.998, sigma: 0.002 }, 0.01, &[]),
            sensor("tank_level", 3.0, SignalFamily::Sine { amplitude: 0.5, period: 3900.0, phase: 0.0 }, 0.02,
                &[("BW", -0.3)]),
            sensor("chlorine", 1.2, SignalFamily::Ramp { slope: 0.0 }, 0.02, &[("MIT", 0.1)]),
            sensor("valve_position", 50.0, SignalFamily::Constant, 0.5, &[("BW", 40.0), ("MIT", -50.0)]),
            sensor("spare", 0.0, SignalFamily::Constant, 0.0, &[]),
        ];
        sensors[4].drift = 2e-6;
        sensors[9].drift = -1e-6;
        sensors[6].missing_rate = 0.001;
        PlantScenario {
            start_timestamp: 1_700_000_000 - 1_700_000_000 % SECONDS_PER_DAY,
            schedule: vec![
                ModePhase { mode: "PROD".into(), duration: 3600 },
                ModePhase { mode: "BW".into(), duration: 300 },
            ],
            daily: vec![DailyMode { mode: "MIT".into(), start: 4 * 3600 + 1800, duration: 900 }],
            sensors,
            changepoints: vec![],
            events: EventSpec { outlier_rate: 1e-4, outlier_scale: 5.0 },
        }
    }

    /// Every mode the schedule can produce, sorted.
    pub fn modes(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .schedule
            .iter()
            .map(|p| p.mode.clone())
            .chain(self.daily.iter().map(|d| d.mode.clone()))
            .collect();
        set.into_iter().collect()
    }
}

/// `steps` records at 1 Hz. Each sensor draws from its own random stream, so
/// adding a sensor leaves the others unchanged.
pub fn generate(scenario: &PlantScenario, steps: usize, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let modes: Vec<&str> = (0..steps).map(|t| scenario.mode_at(t)).collect();
    let mut columns = Vec::with_capacity(scenario.sensors.len());
    for (i, spec) in scenario.sensors.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut state = 0.0;
        let mut column = Vec::with_capacity(steps);
        for t in 0..steps {
            let ts = (scenario.start_timestamp + t as i64) as f64;
            let signal = match &spec.family {
                SignalFamily::Constant => 0.0,
                SignalFamily::Sine { amplitude, period, phase } => {
                    amplitude * (2.0 * std::f64::consts::PI * ts / period + phase).sin()
                }
                SignalFamily::Ramp { slope } => slope * t as f64,
                SignalFamily::Ar1 { phi, sigma } => {
                    let e: f64 = rng.sample(StandardNormal);
                    state = phi * state + sigma * e;
                    state
                }
                SignalFamily::Sawtooth { slope, reset_mode } => {
                    if t == 0 || (modes[t] == reset_mode && modes[t - 1] != reset_mode) {
                        state = 0.0;
                    } else {
                        state += slope;
                    }
                    state
                }
            };
            let mut v = spec.base + signal + spec.drift * t as f64;
            v += spec.mode_offsets.get(modes[t]).copied().unwrap_or(0.0);
            v += scenario
                .changepoints
                .iter()
                .filter(|c| c.sensor == spec.name && t >= c.step)
                .map(|c| c.offset)
                .sum::<f64>();
            if spec.noise > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                v += spec.noise * e;
                if scenario.events.outlier_rate > 0.0 && rng.random_bool(scenario.events.outlier_rate) {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    v += sign * scenario.events.outlier_scale * spec.noise.max(1e-3) * 10.0;
                }
            }
            let missing = spec.missing_rate > 0.0 && rng.random_bool(spec.missing_rate);
            column.push((!missing).then_some(v));
        }
        columns.push(column);
    }
    let records = (0..steps)
        .map(|t| {
            RawRecord::new(
                scenario.start_timestamp + t as i64,
                columns.iter().map(|c| c[t]).collect(),
                modes[t],
            )
        })
        .collect();
    Dataset::new(scenario.sensor_names(), records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftTransform {
    Offset { by: f64 },
    Scale { by: f64 },
    /// Relabels mode `from` as `to` while readings keep their old regime.
    /// Applies only when `sensors` is non-empty.
    RegimeSwap { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub onset: usize,
    pub sensors: Vec<String>,
    #[serde(flatten)]
    pub transform: ShiftTransform,
}

/// Applies `shift` to every record from `onset` on. A regime swap relabels
/// modes; offsets and scales rewrite the named sensors' readings. The
/// reference ranges of the returned dataset are recomputed.
pub fn inject_shift(d: &Dataset, shift: &ShiftSpec) -> Result<Dataset> {
    if shift.onset >= d.len() {
        return Err(Error::OutOfRange { index: shift.onset, len: d.len() });
    }
    let columns = shift
        .sensors
        .iter()
        .map(|name| d.column(name).ok_or_else(|| Error::Config(format!("unknown sensor `{name}`"))))
        .collect::<Result<Vec<usize>>>()?;
    let mut records = d.records().to_vec();
    for r in &mut records[shift.onset..] {
        match &shift.transform {
            ShiftTransform::Offset { by } => {
                for &c in &columns {
                    if let Some(v) = r.values[c].as_mut() {
                        *v += by;
                    }
                }
            }
            ShiftTransform::Scale { by } => {
                for &c in &columns {
                    if let Some(v) = r.values[c].as_mut() {
                        *v *= by;
                    }
                }
            }
            ShiftTransform::RegimeSwap { from, to } => {
                if !columns.is_empty() && &r.mode == from {
                    r.mode = to.clone();
                }
            }
        }
    }
    Dataset::new(d.names(), records)
}
