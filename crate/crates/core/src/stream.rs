//! Observation streams and deployment logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{remove_constant_sensors, split_dataset, Dataset, RawRecord, SensorMeta, SplitSpec};
use crate::encoder::{normalize, AugmentedState, EncoderConfig, StateBuilder};
use crate::error::{Error, Result};

/// One encoded step: the agent state `ŝ_t` and the cumulant `c_t` observed
/// with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: AugmentedState,
    pub cumulant: f64,
}

/// The signal a prediction accumulates: one sensor, normalized with the same
/// reference range as the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Cumulant {
    pub column: usize,
    pub meta: SensorMeta,
}

impl Cumulant {
    pub fn new(column: usize, meta: SensorMeta) -> Self {
        Cumulant { column, meta }
    }

    pub fn read(&self, record: &RawRecord) -> Result<f64> {
        let raw = record
            .values
            .get(self.column)
            .ok_or(Error::OutOfRange {
                index: self.column,
                len: record.width(),
            })?
            .unwrap_or(0.0);
        normalize(raw, &self.meta)
    }
}

/// State builder plus cumulant extraction: raw records in, observations out.
#[derive(Debug, Clone)]
pub struct TelemetryEncoder {
    pub builder: StateBuilder,
    pub cumulant: Cumulant,
}

impl TelemetryEncoder {
    pub fn new(builder: StateBuilder, cumulant: Cumulant) -> Self {
        TelemetryEncoder { builder, cumulant }
    }

    pub fn observe(&mut self, record: &RawRecord) -> Result<Observation> {
        Ok(Observation {
            cumulant: self.cumulant.read(record)?,
            state: self.builder.build(record)?,
        })
    }

    /// Encodes a whole segment with fresh traces.
    pub fn encode_segment(&self, records: &[RawRecord]) -> Result<Vec<Observation>> {
        let mut enc = self.restarted();
        records.iter().map(|r| enc.observe(r)).collect()
    }

    pub fn restarted(&self) -> Self {
        TelemetryEncoder {
            builder: self.builder.restarted(),
            cumulant: self.cumulant.clone(),
        }
    }
}

/// A log split into train / validation / deployment and encoded against
/// its training segment.
#[derive(Debug, Clone)]
pub struct PreparedStreams {
    pub encoder: TelemetryEncoder,
    /// Sensors constant over the training segment.
    pub dropped: Vec<String>,
    pub train: Vec<Observation>,
    pub validation: Vec<Observation>,
    pub deployment: Vec<Observation>,
}

/// Ranges come from the training segment only; sensors constant there are
/// dropped. An empty mode vocabulary is filled with every label in `d`.
pub fn prepare_streams(
    d: &Dataset,
    split: SplitSpec,
    mut cfg: EncoderConfig,
    cumulant: &str,
) -> Result<PreparedStreams> {
    split.check(d.len())?;
    let rebased = d.rebase_meta(&d.records()[..split.train_end])?;
    let (kept, dropped) = remove_constant_sensors(&rebased);
    let column = kept.column(cumulant).ok_or_else(|| {
        Error::Config(if dropped.iter().any(|n| n == cumulant) {
            format!("cumulant sensor `{cumulant}` is constant over the training segment")
        } else {
            format!("no sensor named `{cumulant}`")
        })
    })?;
    if cfg.mode_vocabulary.is_empty() {
        let mut modes = kept.modes();
        modes.sort();
        cfg.mode_vocabulary = modes;
    }
    let builder = StateBuilder::new(cfg, kept.meta().to_vec())?;
    let encoder = TelemetryEncoder::new(builder, Cumulant::new(column, kept.meta()[column].clone()));
    let segments = split_dataset(&kept, split)?;
    Ok(PreparedStreams {
        train: encoder.encode_segment(segments.train.records())?,
        validation: encoder.encode_segment(segments.validation.records())?,
        deployment: encoder.encode_segment(segments.deployment.records())?,
        encoder,
        dropped,
    })
}

/// One deployment step: the prediction made for `ŝ_step` before any update
/// that step's successor triggers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeployRow {
    pub step: usize,
    pub prediction: f64,
    pub cumulant: f64,
    pub delta: Option<f64>,
    /// Step whose cumulant is this prediction's target (n-step only).
    pub target_step: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Online,
    Replay,
}

/// Instrumentation for one optimizer step taken during deployment.
///
/// `step` is the first row whose prediction uses the updated weights;
/// `source_step` is the (earliest) state the update regressed and
/// `latest_sample` the newest stream index the update read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateRecord {
    pub kind: UpdateKind,
    pub step: usize,
    pub source_step: usize,
    pub latest_sample: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeploymentLog {
    pub rows: Vec<DeployRow>,
    pub updates: Vec<UpdateRecord>,
}

impl DeploymentLog {
    pub fn predictions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prediction).collect()
    }

    pub fn cumulants(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cumulant).collect()
    }

    pub fn has_targets(&self) -> bool {
        self.rows.iter().any(|r| r.target_step.is_some())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// `step,prediction,cumulant,delta`, plus `target_step` for n-step logs.
    /// An undefined delta is an empty cell.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let nstep = self.has_targets();
        if nstep {
            writeln!(out, "step,prediction,cumulant,delta,target_step")?;
        } else {
            writeln!(out, "step,prediction,cumulant,delta")?;
        }
        for r in &self.rows {
            write!(out, "{},{},{},", r.step, r.prediction, r.cumulant)?;
            if let Some(d) = r.delta {
                write!(out, "{d}")?;
            }
            if nstep {
                write!(out, ",")?;
                if let Some(t) = r.target_step {
                    write!(out, "{t}")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }

    pub fn read_from<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let base = ["step", "prediction", "cumulant", "delta"];
        if header.len() < 4 || header[..4] != base {
            return Err(Error::Data(format!("unexpected deployment log header {header:?}")));
        }
        let nstep = header.get(4).map(String::as_str) == Some("target_step");
        let num = |s: &str, what: &str, row: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {row}: bad {what} `{s}`")))
        };
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let step = rec[0]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("row {i}: bad step")))?;
            let delta = match rec[3].trim() {
                "" => None,
                s => Some(num(s, "delta", i)?),
            };
            let target_step = if nstep {
                match rec.get(4).map(str::trim) {
                    None | Some("") => None,
                    Some(s) => Some(
                        s.parse::<usize>()
                            .map_err(|_| Error::Data(format!("row {i}: bad target_step")))?,
                    ),
                }
            } else {
                None
            };
            rows.push(DeployRow {
                step,
                prediction: num(&rec[1], "prediction", i)?,
                cumulant: num(&rec[2], "cumulant", i)?,
                delta,
                target_step,
            });
        }
        Ok(DeploymentLog {
            rows,
            updates: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_roundtrip() {
        let log = DeploymentLog {
            rows: vec![
                DeployRow { step: 0, prediction: 0.1 + 0.2, cumulant: 1.0, delta: Some(-0.5), target_step: None },
                DeployRow { step: 1, prediction: 2.0, cumulant: 0.25, delta: None, target_step: None },
            ],
            updates: vec![],
        };
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,prediction,cumulant,delta\n"));
        assert_eq!(DeploymentLog::read_from(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn nstep_log_has_target_column() {
        let log = DeploymentLog {
            rows: vec![DeployRow { step: 0, prediction: 1.5, cumulant: 1.0, delta: None, target_step: Some(3) }],
            updates: vec![],
        };
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "step,prediction,cumulant,delta,target_step\n0,1.5,1,,3\n");
        assert_eq!(DeploymentLog::read_from(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn prepare_uses_training_ranges() {
        let records: Vec<RawRecord> = (0..30)
            .map(|t| {
                let mode = if t % 10 < 7 { "PROD" } else { "BW" };
                let flat = if t < 10 { 1.0 } else { t as f64 };
                RawRecord::new(t, vec![Some(t as f64), Some(flat), Some((t % 3) as f64)], mode)
            })
            .collect();
        let d = Dataset::new(vec!["a".into(), "flat".into(), "c".into()], records).unwrap();
        let p = prepare_streams(&d, SplitSpec::new(10, 20), EncoderConfig::default(), "a").unwrap();
        assert_eq!(p.dropped, vec!["flat".to_string()]);
        assert_eq!((p.train.len(), p.validation.len(), p.deployment.len()), (10, 10, 10));
        assert_eq!(p.encoder.cumulant.meta.max, 9.0);
        assert_eq!(p.train[9].cumulant, 1.0);
        assert_eq!(p.deployment[0].cumulant, 20.0 / 9.0);
        assert_eq!(p.deployment[0].state.step, 0);
        assert_eq!(p.encoder.builder.config().mode_vocabulary, vec!["BW", "PROD"]);
        assert!(prepare_streams(&d, SplitSpec::new(10, 20), EncoderConfig::default(), "flat").is_err());
        assert!(prepare_streams(&d, SplitSpec::new(10, 20), EncoderConfig::default(), "zzz").is_err());
    }

    #[test]
    fn bad_header_rejected() {
        assert!(DeploymentLog::read_from("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn cumulant_normalizes_and_imputes() {
        let meta = SensorMeta { name: "p".into(), min: 10.0, max: 20.0, constant: false };
        let c = Cumulant::new(1, meta);
        let r = RawRecord::new(0, vec![Some(0.0), Some(15.0)], "PROD");
        assert_eq!(c.read(&r).unwrap(), 0.5);
        let missing = RawRecord::new(0, vec![Some(0.0), None], "PROD");
        assert_eq!(c.read(&missing).unwrap(), -1.0);
    }
}
