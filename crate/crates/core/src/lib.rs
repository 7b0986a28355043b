//! Streaming GVF and n-step predictions over multivariate sensor telemetry.
//!
//! The pipeline runs ingest ([`data`]) → agent-state construction
//! ([`encoder`], [`stream`]) → learners ([`gvf`], [`nstep`]) on a small
//! feed-forward network ([`mlp`]) → retroactive evaluation ([`eval`]).
//! [`simulator`] produces synthetic plant data in the ingest format.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gvf;
pub mod learner;
pub mod mlp;
pub mod nstep;
pub mod simulator;
pub mod stream;

pub use data::{Dataset, RawRecord, SensorMeta};
pub use encoder::{AugmentedState, EncoderConfig, StateBuilder, StateLayout};
pub use error::{Error, Result};
pub use eval::{EvalConfig, MetricState, NmseSummary, SweepGrid, SweepResult};
pub use gvf::{TdConfig, Transition};
pub use learner::{NetworkConfig, Predictor};
pub use mlp::{AdamConfig, Network, OptimizerState, Real};
pub use nstep::{NStepConfig, NStepPair};
pub use simulator::{PlantScenario, ShiftSpec};
pub use stream::{Cumulant, DeploymentLog, Observation, TelemetryEncoder};
