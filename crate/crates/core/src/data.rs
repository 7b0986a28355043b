//! Telemetry logs: loading, cleaning, subsampling and temporal splits.
//!
//! The on-disk format is a headed comma-separated file. The first column is
//! `timestamp` (integer seconds), the last column is `mode` (a string token)
//! and every column in between is a numeric sensor reading. Empty or
//! non-numeric cells load as missing values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_COLUMN: &str = "timestamp";
pub const MODE_COLUMN: &str = "mode";

/// One observation vector `o_t` with its wall-clock time and operating mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub timestamp: i64,
    pub values: Vec<Option<f64>>,
    pub mode: String,
}

impl RawRecord {
    pub fn new(timestamp: i64, values: Vec<Option<f64>>, mode: impl Into<String>) -> Self {
        RawRecord {
            timestamp,
            values,
            mode: mode.into(),
        }
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }
}

/// Zero-imputation: every missing reading becomes `0.0`.
pub fn impute_missing(record: &RawRecord) -> RawRecord {
    RawRecord {
        timestamp: record.timestamp,
        values: record
            .values
            .iter()
            .map(|v| Some(v.unwrap_or(0.0)))
            .collect(),
        mode: record.mode.clone(),
    }
}

/// Observed range of one sensor over a reference log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl SensorMeta {
    /// Range of column `column` over `records`, ignoring missing cells.
    /// A column with no present values is reported as constant at zero.
    pub fn observe(name: impl Into<String>, records: &[RawRecord], column: usize) -> Self {
        let (min, max) = records
            .iter()
            .filter_map(|r| r.values[column])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        let (min, max) = if min > max { (0.0, 0.0) } else { (min, max) };
        SensorMeta {
            name: name.into(),
            min,
            max,
            constant: min == max,
        }
    }
}

/// Which header a file must carry. `Any` accepts whatever sensor columns are
/// present as long as `timestamp` and `mode` frame them.
#[derive(Debug, Clone, Default)]
pub enum ColumnSpec {
    #[default]
    Any,
    Sensors(Vec<String>),
}

/// An ordered, immutable telemetry log.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<RawRecord>,
    meta: Vec<SensorMeta>,
}

impl Dataset {
    /// Validates ordering and width, and computes sensor ranges over the
    /// records themselves.
    pub fn new(names: Vec<String>, records: Vec<RawRecord>) -> Result<Self> {
        validate(&records, names.len())?;
        let meta = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| SensorMeta::observe(name, &records, i))
            .collect();
        Ok(Dataset { records, meta })
    }

    /// Builds a dataset that carries externally computed ranges.
    pub fn with_meta(meta: Vec<SensorMeta>, records: Vec<RawRecord>) -> Result<Self> {
        validate(&records, meta.len())?;
        Ok(Dataset { records, meta })
    }

    pub fn records(&self) -> &[RawRecord] {
        &self.records
    }

    pub fn meta(&self) -> &[SensorMeta] {
        &self.meta
    }

    pub fn names(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn width(&self) -> usize {
        self.meta.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    /// Recomputes every sensor range over `reference` (e.g. the training
    /// segment) so later segments never leak into normalization.
    pub fn rebase_meta(&self, reference: &[RawRecord]) -> Result<Dataset> {
        if let Some(r) = reference.iter().find(|r| r.width() != self.width()) {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                found: r.width(),
            });
        }
        let meta = self
            .meta
            .iter()
            .enumerate()
            .map(|(i, m)| SensorMeta::observe(m.name.clone(), reference, i))
            .collect();
        Ok(Dataset {
            records: self.records.clone(),
            meta,
        })
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.width()) {
            return Err(Error::OutOfRange {
                index: c,
                len: self.width(),
            });
        }
        let meta = columns.iter().map(|&c| self.meta[c].clone()).collect();
        let records = self
            .records
            .iter()
            .map(|r| RawRecord {
                timestamp: r.timestamp,
                values: columns.iter().map(|&c| r.values[c]).collect(),
                mode: r.mode.clone(),
            })
            .collect();
        Ok(Dataset { records, meta })
    }

    /// Distinct mode labels in order of first appearance.
    pub fn modes(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for r in &self.records {
            if !seen.iter().any(|m| m == &r.mode) {
                seen.push(r.mode.clone());
            }
        }
        seen
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the ingest format. Values use the shortest round-trip
    /// representation, so a written dataset reloads bit-exactly.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "{TIMESTAMP_COLUMN}")?;
        for m in &self.meta {
            write!(out, ",{}", m.name)?;
        }
        writeln!(out, ",{MODE_COLUMN}")?;
        for r in &self.records {
            write!(out, "{}", r.timestamp)?;
            for v in &r.values {
                match v {
                    Some(x) => write!(out, ",{x}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out, ",{}", r.mode)?;
        }
        Ok(())
    }
}

fn validate(records: &[RawRecord], width: usize) -> Result<()> {
    for (row, pair) in records.windows(2).enumerate() {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(Error::NonMonotoneTimestamp {
                row: row + 1,
                previous: pair[0].timestamp,
                current: pair[1].timestamp,
            });
        }
    }
    if let Some((row, r)) = records.iter().enumerate().find(|(_, r)| r.width() != width) {
        return Err(Error::RowWidth {
            row,
            expected: width,
            found: r.width(),
        });
    }
    Ok(())
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a telemetry file in file order.
pub fn load_records(path: &Path, schema: &ColumnSpec) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, schema)
}

pub fn read_records<R: std::io::Read>(reader: R, schema: &ColumnSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let columns: Vec<&str> = header.iter().map(str::trim).collect();
    if columns.len() < 2
        || columns[0] != TIMESTAMP_COLUMN
        || columns[columns.len() - 1] != MODE_COLUMN
    {
        return Err(Error::Data(format!(
            "header must start with `{TIMESTAMP_COLUMN}` and end with `{MODE_COLUMN}`"
        )));
    }
    let names: Vec<String> = columns[1..columns.len() - 1]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let ColumnSpec::Sensors(expected) = schema {
        if expected != &names {
            return Err(Error::Data(format!(
                "header {names:?} does not match schema {expected:?}"
            )));
        }
    }

    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        if rec.len() != columns.len() {
            return Err(Error::RowWidth {
                row,
                expected: columns.len(),
                found: rec.len(),
            });
        }
        let timestamp: i64 = rec[0].trim().parse().map_err(|_| {
            Error::Data(format!("row {row}: bad timestamp `{}`", &rec[0]))
        })?;
        if let Some(prev) = records.last().map(|r: &RawRecord| r.timestamp) {
            if timestamp <= prev {
                return Err(Error::NonMonotoneTimestamp {
                    row,
                    previous: prev,
                    current: timestamp,
                });
            }
        }
        let values = (1..rec.len() - 1).map(|i| parse_cell(&rec[i])).collect();
        let mode = rec[rec.len() - 1].trim().to_string();
        records.push(RawRecord {
            timestamp,
            values,
            mode,
        });
    }
    Dataset::new(names, records)
}

/// Drops every sensor whose range is degenerate. Returns the removed names.
pub fn remove_constant_sensors(d: &Dataset) -> (Dataset, Vec<String>) {
    let keep: Vec<usize> = (0..d.width()).filter(|&i| !d.meta[i].constant).collect();
    let removed = d
        .meta
        .iter()
        .filter(|m| m.constant)
        .map(|m| m.name.clone())
        .collect();
    let kept = d
        .select_columns(&keep)
        .expect("kept columns are in range by construction");
    (kept, removed)
}

/// Keeps records `0, k, 2k, ...`.
pub fn subsample(d: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Config("subsample factor must be at least 1".into()));
    }
    Ok(Dataset {
        records: d.records.iter().step_by(k).cloned().collect(),
        meta: d.meta.clone(),
    })
}

/// Segment boundaries: train `[0, train_end)`, validation
/// `[train_end, validation_end)`, deployment `[validation_end, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: usize,
    pub validation_end: usize,
}

impl SplitSpec {
    pub fn new(train_end: usize, validation_end: usize) -> Self {
        SplitSpec {
            train_end,
            validation_end,
        }
    }

    /// Training log of `offline_len` steps whose final `validation_len`
    /// steps are held out for validation; everything after is deployment.
    pub fn holdout_tail(offline_len: usize, validation_len: usize) -> Result<Self> {
        if validation_len >= offline_len {
            return Err(Error::Config(format!(
                "validation length {validation_len} must be shorter than the offline log {offline_len}"
            )));
        }
        Ok(SplitSpec {
            train_end: offline_len - validation_len,
            validation_end: offline_len,
        })
    }

    pub fn check(&self, len: usize) -> Result<()> {
        if self.train_end == 0 || self.train_end >= self.validation_end {
            return Err(Error::Config(format!(
                "split requires 0 < train_end < validation_end, got {} and {}",
                self.train_end, self.validation_end
            )));
        }
        if self.validation_end > len {
            return Err(Error::OutOfRange {
                index: self.validation_end,
                len,
            });
        }
        Ok(())
    }
}

/// The three temporal segments of one log. All share the parent's meta.
#[derive(Debug, Clone)]
pub struct Segments {
    pub train: Dataset,
    pub validation: Dataset,
    pub deployment: Dataset,
}

pub fn split_dataset(d: &Dataset, s: SplitSpec) -> Result<Segments> {
    s.check(d.len())?;
    let part = |range: std::ops::Range<usize>| Dataset {
        records: d.records[range].to_vec(),
        meta: d.meta.clone(),
    };
    Ok(Segments {
        train: part(0..s.train_end),
        validation: part(s.train_end..s.validation_end),
        deployment: part(s.validation_end..d.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: i64, vals: &[f64]) -> RawRecord {
        RawRecord::new(t, vals.iter().map(|&v| Some(v)).collect(), "PROD")
    }

    fn ramp(n: usize, width: usize) -> Dataset {
        let names = (0..width).map(|i| format!("s{i}")).collect();
        let records = (0..n)
            .map(|t| rec(t as i64, &vec![t as f64; width]))
            .collect();
        Dataset::new(names, records).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let text = "timestamp,a,b,mode\n1,1.0,2.0,PROD\n2,1.5,2.5,PROD\n3,2.0,3.0,BW\n";
        let d = read_records(text.as_bytes(), &ColumnSpec::Any).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.width(), 2);
        assert_eq!(d.records()[2].mode, "BW");
        assert_eq!(d.meta()[0].min, 1.0);
        assert_eq!(d.meta()[0].max, 2.0);
    }

    #[test]
    fn blank_and_garbage_cells_are_missing() {
        let text = "timestamp,a,b,mode\n1,,2.0,PROD\n2,n/a,2.5,PROD\n";
        let d = read_records(text.as_bytes(), &ColumnSpec::Any).unwrap();
        assert_eq!(d.records()[0].values, vec![None, Some(2.0)]);
        assert_eq!(d.records()[1].values, vec![None, Some(2.5)]);
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let text = "timestamp,a,mode\n5,1,PROD\n4,1,PROD\n";
        let err = read_records(text.as_bytes(), &ColumnSpec::Any).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTimestamp { .. }));
    }

    #[test]
    fn ragged_rows_rejected() {
        let text = "timestamp,a,b,mode\n1,1,2,PROD\n2,1,PROD\n";
        let err = read_records(text.as_bytes(), &ColumnSpec::Any).unwrap_err();
        assert!(matches!(err, Error::RowWidth { .. }));
    }

    #[test]
    fn header_must_match_schema() {
        let text = "timestamp,a,b,mode\n1,1,2,PROD\n";
        let schema = ColumnSpec::Sensors(vec!["a".into(), "c".into()]);
        assert!(read_records(text.as_bytes(), &schema).is_err());
        let schema = ColumnSpec::Sensors(vec!["a".into(), "b".into()]);
        assert!(read_records(text.as_bytes(), &schema).is_ok());
    }

    #[test]
    fn unreadable_file_is_an_error() {
        let err = load_records(Path::new("/nonexistent/telemetry.csv"), &ColumnSpec::Any);
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn write_then_read_is_exact() {
        let names = vec!["a".to_string(), "b".to_string()];
        let records = vec![
            RawRecord::new(10, vec![Some(0.1 + 0.2), None], "PROD"),
            RawRecord::new(11, vec![Some(-1e-300), Some(7.0)], "BW"),
        ];
        let d = Dataset::new(names, records).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = read_records(buf.as_slice(), &ColumnSpec::Any).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn impute_cases() {
        let r = RawRecord::new(0, vec![Some(1.0), None, Some(3.0)], "PROD");
        assert_eq!(
            impute_missing(&r).values,
            vec![Some(1.0), Some(0.0), Some(3.0)]
        );
        let full = rec(0, &[1.0, 2.0]);
        assert_eq!(impute_missing(&full), full);
        let empty = RawRecord::new(0, vec![None; 4], "PROD");
        assert_eq!(impute_missing(&empty).values, vec![Some(0.0); 4]);
    }

    #[test]
    fn constant_sensor_removal_480_to_185() {
        let n = 3;
        let varying: std::collections::HashSet<usize> = (0..480).step_by(2).take(185).collect();
        let names: Vec<String> = (0..480).map(|i| format!("s{i}")).collect();
        let records = (0..n)
            .map(|t| {
                let vals = (0..480)
                    .map(|i| Some(if varying.contains(&i) { t as f64 } else { -2.0 }))
                    .collect();
                RawRecord::new(t as i64, vals, "PROD")
            })
            .collect();
        let d = Dataset::new(names, records).unwrap();
        let (kept, removed) = remove_constant_sensors(&d);
        assert_eq!(kept.width(), 185);
        assert_eq!(removed.len(), 295);
        // survivors keep their relative order
        let expected: Vec<String> = (0..480)
            .filter(|i| varying.contains(i))
            .map(|i| format!("s{i}"))
            .collect();
        assert_eq!(kept.names(), expected);
    }

    #[test]
    fn all_constant_leaves_width_zero() {
        let names: Vec<String> = (0..480).map(|i| format!("s{i}")).collect();
        let records = (0..3)
            .map(|t| RawRecord::new(t, vec![Some(1.0); 480], "PROD"))
            .collect();
        let d = Dataset::new(names, records).unwrap();
        let (kept, removed) = remove_constant_sensors(&d);
        assert_eq!(kept.width(), 0);
        assert_eq!(kept.len(), 3);
        assert_eq!(removed.len(), 480);
    }

    #[test]
    fn no_constants_is_identity() {
        let d = ramp(5, 3);
        let (kept, removed) = remove_constant_sensors(&d);
        assert!(removed.is_empty());
        assert_eq!(kept, d);
    }

    #[test]
    fn subsample_cases() {
        let d = ramp(100, 1);
        assert_eq!(subsample(&d, 10).unwrap().len(), 10);
        assert_eq!(subsample(&d, 1).unwrap(), d);
        let small = ramp(5, 1);
        let s = subsample(&small, 10).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.records()[0].timestamp, 0);
        assert!(subsample(&d, 0).is_err());
    }

    #[test]
    fn split_five_days_with_4k_validation() {
        let day = 86_400;
        let spec = SplitSpec::holdout_tail(4 * day, 4000).unwrap();
        assert_eq!(spec.train_end, 4 * day - 4000);
        assert_eq!(spec.validation_end, 4 * day);
        let d = ramp(5 * day, 1);
        let seg = split_dataset(&d, spec).unwrap();
        assert_eq!(seg.validation.len(), 4000);
        assert_eq!(seg.deployment.len(), day);
    }

    #[test]
    fn split_month_scale() {
        // 23 days train, 7 validation, 7 deployment at one sample per 10 s.
        let per_day = 8640;
        let d = ramp(37 * per_day, 1);
        let seg = split_dataset(&d, SplitSpec::new(23 * per_day, 30 * per_day)).unwrap();
        assert_eq!(seg.train.len(), 23 * per_day);
        assert_eq!(seg.validation.len(), 7 * per_day);
        assert_eq!(seg.deployment.len(), 7 * per_day);
    }

    #[test]
    fn split_boundaries() {
        let d = ramp(10, 1);
        let seg = split_dataset(&d, SplitSpec::new(9, 10)).unwrap();
        assert!(seg.deployment.is_empty());
        assert!(split_dataset(&d, SplitSpec::new(0, 5)).is_err());
        assert!(split_dataset(&d, SplitSpec::new(5, 5)).is_err());
        assert!(split_dataset(&d, SplitSpec::new(5, 11)).is_err());
    }

    #[test]
    fn rebase_meta_uses_reference_only() {
        let d = ramp(10, 1);
        let rebased = d.rebase_meta(&d.records()[..4]).unwrap();
        assert_eq!(rebased.meta()[0].min, 0.0);
        assert_eq!(rebased.meta()[0].max, 3.0);
        assert_eq!(rebased.len(), 10);
    }

    proptest! {
        #[test]
        fn split_concat_roundtrip(n in 3usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let d = ramp(n, 2);
            let train_end = 1 + ((n - 2) as f64 * a) as usize;
            let validation_end = train_end + 1 + ((n - train_end - 1) as f64 * b) as usize;
            let seg = split_dataset(&d, SplitSpec::new(train_end, validation_end)).unwrap();
            let joined: Vec<RawRecord> = seg.train.records().iter()
                .chain(seg.validation.records())
                .chain(seg.deployment.records())
                .cloned()
                .collect();
            prop_assert_eq!(joined.as_slice(), d.records());
            prop_assert_eq!(seg.deployment.meta(), d.meta());
        }

        #[test]
        fn constant_removal_idempotent(cols in proptest::collection::vec(any::<bool>(), 1..12)) {
            let names = (0..cols.len()).map(|i| format!("s{i}")).collect();
            let records = (0..4).map(|t| {
                let vals = cols.iter().map(|&c| Some(if c { 1.0 } else { t as f64 })).collect();
                RawRecord::new(t, vals, "PROD")
            }).collect();
            let d = Dataset::new(names, records).unwrap();
            let (once, _) = remove_constant_sensors(&d);
            let (twice, removed) = remove_constant_sensors(&once);
            prop_assert!(removed.is_empty());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn subsample_composes(n in 1usize..300, a in 1usize..8, b in 1usize..8) {
            let d = ramp(n, 1);
            let two = subsample(&subsample(&d, a).unwrap(), b).unwrap();
            let one = subsample(&d, a * b).unwrap();
            prop_assert_eq!(two, one);
        }

        #[test]
        fn impute_preserves_present(vals in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 0..20)) {
            let r = RawRecord::new(0, vals.clone(), "PROD");
            let out = impute_missing(&r);
            for (orig, new) in vals.iter().zip(&out.values) {
                match orig {
                    Some(v) => prop_assert_eq!(Some(*v), *new),
                    None => prop_assert_eq!(Some(0.0), *new),
                }
            }
        }
    }
}
