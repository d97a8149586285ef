//! Length-control lab for group-relative policy optimization.
//!
//! A tabular think-then-answer policy is trained with a clipped, group-relative
//! surrogate on synthetic verifiable tasks whose accuracy depends on how long
//! the policy thinks. Length shaping methods, answer-dispersion metrics and a
//! reproducible run layout are provided on top.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod shaping;
pub mod trainer;

pub use config::{InitMode, PolicyInitConfig, TrainConfig};
pub use env::{verify, EnvConfig, EnvTrace, Problem, RewardMode, Verdict};
pub use error::{LabError, Result};
pub use experiment::{run_training, sweep, RunManifest, RunOptions, RunStatus};
pub use objectives::{AdvantageKind, Group, NormMode, SurrogateConfig, TisMode};
pub use policy::{OptimizerState, ParamLayout, PolicyParams, Token, Trajectory};
pub use shaping::{AccuracyMode, LengthControl, ShapingConfig};
pub use trainer::{EvalReport, StepRecord, TrainState, Trainer};

#[cfg(test)]
pub(crate) mod test_support;
