use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gvf_core::data::SplitSpec;
use gvf_core::eval::{geometric_grid, SweepGrid};
use gvf_core::simulator::{PlantScenario, ShiftSpec};
use gvf_core::{EncoderConfig, EvalConfig, NStepConfig, NetworkConfig, TdConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Input log; `simulate` writes `<out>/data.csv` when unset.
    pub path: Option<PathBuf>,
    pub cumulant: String,
    pub subsample: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            cumulant: "tmp".into(),
            subsample: 1,
            train_fraction: 0.6,
            validation_fraction: 0.1,
        }
    }
}

impl DataConfig {
    pub fn split(&self, len: usize) -> anyhow::Result<SplitSpec> {
        let f = |x: f64| (len as f64 * x).floor() as usize;
        if !(self.train_fraction > 0.0 && self.validation_fraction >= 0.0)
            || self.train_fraction + self.validation_fraction >= 1.0
        {
            bail!(UsageError(format!(
                "train_fraction {} and validation_fraction {} must be positive and sum below 1",
                self.train_fraction, self.validation_fraction
            )));
        }
        let train_end = f(self.train_fraction);
        let validation_end = f(self.train_fraction + self.validation_fraction).max(train_end + 1);
        let split = SplitSpec::new(train_end, validation_end);
        split.check(len).context("dataset too short for the configured split")?;
        Ok(split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStyle {
    #[default]
    Joint,
    TwoStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    #[default]
    Td,
    Nstep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub learner: LearnerChoice,
    pub style: SweepStyle,
    pub etas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// When set, `alphas` is replaced by this many values spaced
    /// geometrically between the first and last listed α.
    pub alpha_count: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            learner: LearnerChoice::Td,
            style: SweepStyle::Joint,
            etas: vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            alphas: vec![1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
            alpha_count: None,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> anyhow::Result<SweepGrid> {
        let alphas = match self.alpha_count {
            Some(k) => {
                let (Some(&hi), Some(&lo)) = (self.alphas.first(), self.alphas.last()) else {
                    bail!(UsageError("alpha_count needs at least one alpha".into()));
                };
                geometric_grid(hi, lo, k)?
            }
            None => self.alphas.clone(),
        };
        let grid = SweepGrid {
            etas: self.etas.clone(),
            alphas,
        };
        grid.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub steps: usize,
    /// Scenario file; the packaged scenario when unset.
    pub scenario: Option<PathBuf>,
    pub shift: Option<ShiftSpec>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            steps: 100_000,
            scenario: None,
            shift: None,
        }
    }
}

impl SimulateConfig {
    pub fn scenario(&self) -> anyhow::Result<PlantScenario> {
        match &self.scenario {
            None => Ok(PlantScenario::packaged()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading scenario {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| UsageError(format!("scenario {}: {e}", p.display())).into())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub precision: Precision,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub network: NetworkConfig,
    pub td: TdConfig,
    pub nstep: NStepConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub simulate: SimulateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            precision: Precision::F32,
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            network: NetworkConfig::default(),
            td: TdConfig {
                epochs: 10,
                ..TdConfig::default()
            },
            nstep: NStepConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn data_path(&self, out: &Path) -> PathBuf {
        self.data.path.clone().unwrap_or_else(|| out.join("data.csv"))
    }
}
