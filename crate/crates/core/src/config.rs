//! Run configuration and its flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! env.kind = gaussian_walk
//! shaping.method = ALP
//! shaping.beta = 0.003
//! ```
//!
//! Keys are typed and validated; unknown keys, duplicate keys and keys that
//! do not apply to the selected `env.kind` / `shaping.method` are errors.
//! Absent keys take their defaults, and [`TrainConfig::to_text`] writes every
//! active key so the resolved configuration can be loaded back unchanged.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | run seed |
//! | `env.kind` | `gaussian_walk` | `gaussian_walk` or `arithmetic_chain` |
//! | `env.distance` | 10 | walk: target minus start |
//! | `env.distance_jitter` | 0 | walk: uniform jitter on the distance |
//! | `env.delta` | 2 | walk: accepted half-width around the target |
//! | `env.sigma_step` | 1 | walk: per-step noise std |
//! | `env.bin_width` | `env.delta` | walk: answer bucket width |
//! | `env.drift_values` | `0,1` | walk: value of each drift token |
//! | `env.reward` | `binary` | walk: `binary` or `gaussian` |
//! | `env.n_ops` | 8 | chain: number of operations |
//! | `env.modulus` | 10 | chain: modulus |
//! | `env.p_corrupt` | 0.1 | chain: corruption probability per extra step |
//! | `train_problems` | 64 | size of the training pool |
//! | `eval_problems` | 32 | size of the held-out set |
//! | `policy.init` | `near_target` | `uniform` or `near_target` drift/answer heads |
//! | `policy.bucket_width` | 1 | think steps sharing one parameter bucket |
//! | `policy.init_length` | 20 | step where the initial stop hazard is 1/2 |
//! | `policy.init_length_spread` | 2 | slope (in steps) of the initial stop logits |
//! | `policy.init_confidence` | 3 | logit margin of near-target heads |
//! | `G` | 16 | responses per problem |
//! | `problems_per_batch` | 8 | problems per step |
//! | `cap` | 64 | max think tokens (ceiling when `cap_auto`) |
//! | `cap_auto` | false | pick the smallest cap with < 5% truncation at step 0 |
//! | `steps` | 100 | training steps |
//! | `lr` | 0.01 | Adam learning rate |
//! | `advantage` | `group_norm` | `group_norm` or `rloo` |
//! | `surrogate.norm` | `token_avg` | `token_avg` or `sample_avg` |
//! | `surrogate.eps_low` / `surrogate.eps_high` | 0.2 / 0.28 | clip range |
//! | `surrogate.tis_cap` | `none` | truncated importance-sampling cap |
//! | `surrogate.tis_mode` | `token` | `token` or `sequence` |
//! | `surrogate.updates_per_batch` | 1 | gradient updates per rollout batch |
//! | `shaping.method` | `none` | `none`, `RLOO_LP`, `ALP`, `DRPO`, `GFPO` |
//! | `shaping.alpha` | 0.2 | RLOO_LP strength |
//! | `shaping.beta` | 0.001 | ALP strength |
//! | `shaping.acc_mode` | `ema` | ALP accuracy estimate: `ema` or `per_batch` |
//! | `shaping.lambda` / `shaping.tau` | 0.5 / 1 | DRPO weight scale / temperature |
//! | `shaping.k` / `shaping.drop_incorrect` | 8 / true | GFPO filter |
//! | `shaping.ema_decay` | 0.9 | decay of online estimators |
//! | `eval_every` | 10 | evaluation cadence in steps |
//! | `eval_samples` | 64 | samples per held-out problem |
//! | `eval_temperature` | 1 | logit temperature at evaluation |

use std::path::Path;
use std::str::FromStr;

use crate::env::{EnvConfig, RewardMode};
use crate::error::{LabError, Result};
use crate::objectives::{AdvantageKind, NormMode, SurrogateConfig, TisMode};
use crate::shaping::{AccuracyMode, LengthControl, ShapingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Uniform drift and answer heads.
    Uniform,
    /// Heads favour the on-course drift schedule and the faithful answer.
    #[default]
    NearTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInitConfig {
    pub mode: InitMode,
    pub bucket_width: usize,
    pub init_length: f64,
    pub init_length_spread: f64,
    pub confidence: f64,
}

impl Default for PolicyInitConfig {
    fn default() -> Self {
        PolicyInitConfig {
            mode: InitMode::NearTarget,
            bucket_width: 1,
            init_length: 20.0,
            init_length_spread: 2.0,
            confidence: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub train_problems: usize,
    pub eval_problems: usize,
    pub policy: PolicyInitConfig,
    pub group_size: usize,
    pub problems_per_batch: usize,
    pub cap: usize,
    pub cap_auto: bool,
    pub steps: usize,
    pub lr: f64,
    pub advantage: AdvantageKind,
    pub surrogate: SurrogateConfig,
    pub shaping: ShapingConfig,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub eval_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            env: EnvConfig::default(),
            train_problems: 64,
            eval_problems: 32,
            policy: PolicyInitConfig::default(),
            group_size: 16,
            problems_per_batch: 8,
            cap: 64,
            cap_auto: false,
            steps: 100,
            lr: 1e-2,
            advantage: AdvantageKind::GroupNorm,
            surrogate: SurrogateConfig::default(),
            shaping: ShapingConfig::default(),
            eval_every: 10,
            eval_samples: 64,
            eval_temperature: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        LabError::config(
            key,
            format!("cannot parse `{value}` as {}", std::any::type_name::<T>()),
        )
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(LabError::config(
            key,
            format!("expected true/false, got `{value}`"),
        )),
    }
}

fn norm_word(value: &str) -> String {
    value.trim().to_ascii_lowercase().replace('-', "_")
}

fn default_walk() -> EnvConfig {
    EnvConfig::default()
}

fn default_chain() -> EnvConfig {
    EnvConfig::ArithmeticChain {
        n_ops: 8,
        modulus: 10,
        p_corrupt: 0.1,
    }
}

fn default_method(name: &str, key: &str) -> Result<LengthControl> {
    Ok(match norm_word(name).as_str() {
        "none" => LengthControl::None,
        "rloo_lp" => LengthControl::RlooLp { alpha: 0.2 },
        "alp" => LengthControl::Alp {
            beta: 1e-3,
            acc_mode: AccuracyMode::Ema,
        },
        "drpo" => LengthControl::Drpo {
            lambda: 0.5,
            tau: 1.0,
        },
        "gfpo" => LengthControl::Gfpo {
            k: 8,
            drop_incorrect: true,
        },
        _ => return Err(LabError::config(key, format!("unknown method `{name}`"))),
    })
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Splits config text into `(key, value)` pairs, rejecting malformed lines
/// and duplicates.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            LabError::config(line, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if pairs.iter().any(|(seen, _)| *seen == k) {
            return Err(LabError::config(k, "duplicate key"));
        }
        pairs.push((k, v));
    }
    Ok(pairs)
}

impl TrainConfig {
    /// Builds a config from pairs; `env.kind` and `shaping.method` are
    /// applied first so the remaining keys can be checked against them.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut bin_width_given = false;
        for first in ["env.kind", "shaping.method"] {
            if let Some((k, v)) = pairs.iter().find(|(k, _)| k == first) {
                cfg.set(k, v)?;
            }
        }
        for (k, v) in pairs {
            if k == "env.kind" || k == "shaping.method" {
                continue;
            }
            bin_width_given |= k == "env.bin_width";
            cfg.set(k, v)?;
        }
        if let EnvConfig::GaussianWalk {
            delta, bin_width, ..
        } = &mut cfg.env
        {
            if !bin_width_given {
                *bin_width = Some(*delta);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Whether `key` is a settable configuration key for some env / method.
    pub fn is_known_key(key: &str) -> bool {
        let walk = TrainConfig::default();
        let chain = TrainConfig {
            env: default_chain(),
            ..TrainConfig::default()
        };
        let methods = ["none", "RLOO_LP", "ALP", "DRPO", "GFPO"];
        [walk, chain].iter().any(|base| {
            methods.iter().any(|m| {
                let mut c = base.clone();
                c.shaping.method = default_method(m, "shaping.method").expect("known method");
                c.to_pairs().iter().any(|(k, _)| k == key)
            })
        })
    }

    /// Applies one key. Values are type-checked here; cross-field
    /// constraints are checked by [`TrainConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let not_for_env = || LabError::config(key, "key does not apply to the selected env.kind");
        let not_for_method =
            || LabError::config(key, "key does not apply to the selected shaping.method");
        match key {
            "seed" => self.seed = parse(key, value)?,
            "train_problems" => self.train_problems = parse(key, value)?,
            "eval_problems" => self.eval_problems = parse(key, value)?,
            "G" => self.group_size = parse(key, value)?,
            "problems_per_batch" => self.problems_per_batch = parse(key, value)?,
            "cap" => self.cap = parse(key, value)?,
            "cap_auto" => self.cap_auto = parse_bool(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "eval_temperature" => self.eval_temperature = parse(key, value)?,
            "advantage" => {
                self.advantage = match norm_word(value).as_str() {
                    "group_norm" => AdvantageKind::GroupNorm,
                    "rloo" => AdvantageKind::Rloo,
                    _ => {
                        return Err(LabError::config(
                            key,
                            format!("unknown advantage `{value}`"),
                        ))
                    }
                }
            }
            "env.kind" => {
                self.env = match norm_word(value).as_str() {
                    "gaussian_walk" => default_walk(),
                    "arithmetic_chain" => default_chain(),
                    _ => return Err(LabError::config(key, format!("unknown env kind `{value}`"))),
                }
            }
            "policy.init" => {
                self.policy.mode = match norm_word(value).as_str() {
                    "uniform" => InitMode::Uniform,
                    "near_target" => InitMode::NearTarget,
                    _ => return Err(LabError::config(key, format!("unknown init `{value}`"))),
                }
            }
            "policy.bucket_width" => self.policy.bucket_width = parse(key, value)?,
            "policy.init_length" => self.policy.init_length = parse(key, value)?,
            "policy.init_length_spread" => self.policy.init_length_spread = parse(key, value)?,
            "policy.init_confidence" => self.policy.confidence = parse(key, value)?,
            "surrogate.norm" => {
                self.surrogate.norm_mode = match norm_word(value).as_str() {
                    "token_avg" => NormMode::TokenAvg,
                    "sample_avg" => NormMode::SampleAvg,
                    _ => {
                        return Err(LabError::config(
                            key,
                            format!("unknown norm mode `{value}`"),
                        ))
                    }
                }
            }
            "surrogate.eps_low" => self.surrogate.eps_low = parse(key, value)?,
            "surrogate.eps_high" => self.surrogate.eps_high = parse(key, value)?,
            "surrogate.tis_cap" => {
                self.surrogate.tis_cap = match norm_word(value).as_str() {
                    "none" | "off" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "surrogate.tis_mode" => {
                self.surrogate.tis_mode = match norm_word(value).as_str() {
                    "token" => TisMode::Token,
                    "sequence" => TisMode::Sequence,
                    _ => return Err(LabError::config(key, format!("unknown TIS mode `{value}`"))),
                }
            }
            "surrogate.updates_per_batch" => self.surrogate.updates_per_batch = parse(key, value)?,
            "shaping.method" => self.shaping.method = default_method(value, key)?,
            "shaping.ema_decay" => self.shaping.ema_decay = parse(key, value)?,
            "shaping.alpha" => match &mut self.shaping.method {
                LengthControl::RlooLp { alpha } => *alpha = parse(key, value)?,
                _ => return Err(not_for_method()),
            },
            "shaping.beta" => match &mut self.shaping.method {
                LengthControl::Alp { beta, .. } => *beta = parse(key, value)?,
                _ => return Err(not_for_method()),
            },
            "shaping.acc_mode" => match &mut self.shaping.method {
                LengthControl::Alp { acc_mode, .. } => {
                    *acc_mode = match norm_word(value).as_str() {
                        "ema" => AccuracyMode::Ema,
                        "per_batch" => AccuracyMode::PerBatch,
                        _ => {
                            return Err(LabError::config(
                                key,
                                format!("unknown acc mode `{value}`"),
                            ))
                        }
                    }
                }
                _ => return Err(not_for_method()),
            },
            "shaping.lambda" => match &mut self.shaping.method {
                LengthControl::Drpo { lambda, .. } => *lambda = parse(key, value)?,
                _ => return Err(not_for_method()),
            },
            "shaping.tau" => match &mut self.shaping.method {
                LengthControl::Drpo { tau, .. } => *tau = parse(key, value)?,
                _ => return Err(not_for_method()),
            },
            "shaping.k" => match &mut self.shaping.method {
                LengthControl::Gfpo { k, .. } => *k = parse(key, value)?,
                _ => return Err(not_for_method()),
            },
            "shaping.drop_incorrect" => match &mut self.shaping.method {
                LengthControl::Gfpo { drop_incorrect, .. } => {
                    *drop_incorrect = parse_bool(key, value)?
                }
                _ => return Err(not_for_method()),
            },
            k if k.starts_with("env.") => match (&mut self.env, k) {
                (EnvConfig::GaussianWalk { distance, .. }, "env.distance") => {
                    *distance = parse(key, value)?
                }
                (
                    EnvConfig::GaussianWalk {
                        distance_jitter, ..
                    },
                    "env.distance_jitter",
                ) => *distance_jitter = parse(key, value)?,
                (EnvConfig::GaussianWalk { delta, .. }, "env.delta") => *delta = parse(key, value)?,
                (EnvConfig::GaussianWalk { sigma_step, .. }, "env.sigma_step") => {
                    *sigma_step = parse(key, value)?
                }
                (EnvConfig::GaussianWalk { bin_width, .. }, "env.bin_width") => {
                    *bin_width = Some(parse(key, value)?)
                }
                (EnvConfig::GaussianWalk { drift_values, .. }, "env.drift_values") => {
                    *drift_values = value
                        .split(',')
                        .map(|s| parse::<f64>(key, s.trim()))
                        .collect::<Result<_>>()?
                }
                (EnvConfig::GaussianWalk { reward, .. }, "env.reward") => {
                    *reward = match norm_word(value).as_str() {
                        "binary" => RewardMode::Binary,
                        "gaussian" => RewardMode::Gaussian,
                        _ => {
                            return Err(LabError::config(
                                key,
                                format!("unknown reward mode `{value}`"),
                            ))
                        }
                    }
                }
                (EnvConfig::ArithmeticChain { n_ops, .. }, "env.n_ops") => {
                    *n_ops = parse(key, value)?
                }
                (EnvConfig::ArithmeticChain { modulus, .. }, "env.modulus") => {
                    *modulus = parse(key, value)?
                }
                (EnvConfig::ArithmeticChain { p_corrupt, .. }, "env.p_corrupt") => {
                    *p_corrupt = parse(key, value)?
                }
                (
                    _,
                    "env.distance"
                    | "env.distance_jitter"
                    | "env.delta"
                    | "env.sigma_step"
                    | "env.bin_width"
                    | "env.drift_values"
                    | "env.reward"
                    | "env.n_ops"
                    | "env.modulus"
                    | "env.p_corrupt",
                ) => return Err(not_for_env()),
                _ => return Err(LabError::config(key, "unknown key")),
            },
            _ => return Err(LabError::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_problems", self.train_problems),
            ("eval_problems", self.eval_problems),
            ("problems_per_batch", self.problems_per_batch),
            ("cap", self.cap),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
            ("policy.bucket_width", self.policy.bucket_width),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(LabError::config(key, "must be >= 1"));
            }
        }
        if self.group_size < 2 {
            return Err(LabError::config(
                "G",
                "group-relative estimates need G >= 2",
            ));
        }
        if self.problems_per_batch > self.train_problems {
            return Err(LabError::config(
                "problems_per_batch",
                "cannot exceed train_problems",
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(LabError::config("lr", "must be finite and >= 0"));
        }
        if !(self.eval_temperature > 0.0 && self.eval_temperature.is_finite()) {
            return Err(LabError::config("eval_temperature", "must be > 0"));
        }
        if !(self.policy.init_length_spread > 0.0) {
            return Err(LabError::config("policy.init_length_spread", "must be > 0"));
        }
        if !self.policy.init_length.is_finite() || !self.policy.confidence.is_finite() {
            return Err(LabError::config("policy.init_length", "must be finite"));
        }
        if !(0.0..1.0).contains(&self.shaping.ema_decay) {
            return Err(LabError::config("shaping.ema_decay", "must lie in [0, 1)"));
        }
        match &self.env {
            EnvConfig::GaussianWalk {
                delta,
                sigma_step,
                bin_width,
                drift_values,
                distance_jitter,
                distance,
                ..
            } => {
                if !(*delta > 0.0) {
                    return Err(LabError::config("env.delta", "must be > 0"));
                }
                if !(*sigma_step >= 0.0) {
                    return Err(LabError::config("env.sigma_step", "must be >= 0"));
                }
                if !bin_width.is_some_and(|b| b > 0.0) {
                    return Err(LabError::config("env.bin_width", "must be > 0"));
                }
                if drift_values.is_empty() || drift_values.iter().any(|v| !v.is_finite()) {
                    return Err(LabError::config(
                        "env.drift_values",
                        "need one or more finite values",
                    ));
                }
                if !(*distance_jitter >= 0.0) || !distance.is_finite() {
                    return Err(LabError::config("env.distance_jitter", "must be >= 0"));
                }
            }
            EnvConfig::ArithmeticChain {
                n_ops,
                modulus,
                p_corrupt,
            } => {
                if *n_ops == 0 {
                    return Err(LabError::config("env.n_ops", "must be >= 1"));
                }
                if *modulus < 2 {
                    return Err(LabError::config("env.modulus", "must be >= 2"));
                }
                if !(0.0..=1.0).contains(p_corrupt) {
                    return Err(LabError::config("env.p_corrupt", "must lie in [0, 1]"));
                }
            }
        }
        self.surrogate.validate()?;
        self.shaping.method.validate()?;
        Ok(())
    }

    /// Every active key with its resolved value, in canonical order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = vec![("seed", self.seed.to_string())];
        match &self.env {
            EnvConfig::GaussianWalk {
                distance,
                distance_jitter,
                delta,
                sigma_step,
                bin_width,
                drift_values,
                reward,
            } => {
                out.push(("env.kind", "gaussian_walk".into()));
                out.push(("env.distance", distance.to_string()));
                out.push(("env.distance_jitter", distance_jitter.to_string()));
                out.push(("env.delta", delta.to_string()));
                out.push(("env.sigma_step", sigma_step.to_string()));
                out.push(("env.bin_width", bin_width.unwrap_or(*delta).to_string()));
                out.push(("env.drift_values", fmt_list(drift_values)));
                let r = match reward {
                    RewardMode::Binary => "binary",
                    RewardMode::Gaussian => "gaussian",
                };
                out.push(("env.reward", r.into()));
            }
            EnvConfig::ArithmeticChain {
                n_ops,
                modulus,
                p_corrupt,
            } => {
                out.push(("env.kind", "arithmetic_chain".into()));
                out.push(("env.n_ops", n_ops.to_string()));
                out.push(("env.modulus", modulus.to_string()));
                out.push(("env.p_corrupt", p_corrupt.to_string()));
            }
        }
        out.push(("train_problems", self.train_problems.to_string()));
        out.push(("eval_problems", self.eval_problems.to_string()));
        let init = match self.policy.mode {
            InitMode::Uniform => "uniform",
            InitMode::NearTarget => "near_target",
        };
        out.push(("policy.init", init.into()));
        out.push(("policy.bucket_width", self.policy.bucket_width.to_string()));
        out.push(("policy.init_length", self.policy.init_length.to_string()));
        out.push((
            "policy.init_length_spread",
            self.policy.init_length_spread.to_string(),
        ));
        out.push(("policy.init_confidence", self.policy.confidence.to_string()));
        out.push(("G", self.group_size.to_string()));
        out.push(("problems_per_batch", self.problems_per_batch.to_string()));
        out.push(("cap", self.cap.to_string()));
        out.push(("cap_auto", self.cap_auto.to_string()));
        out.push(("steps", self.steps.to_string()));
        out.push(("lr", self.lr.to_string()));
        let adv = match self.advantage {
            AdvantageKind::GroupNorm => "group_norm",
            AdvantageKind::Rloo => "rloo",
        };
        out.push(("advantage", adv.into()));
        let norm = match self.surrogate.norm_mode {
            NormMode::TokenAvg => "token_avg",
            NormMode::SampleAvg => "sample_avg",
        };
        out.push(("surrogate.norm", norm.into()));
        out.push(("surrogate.eps_low", self.surrogate.eps_low.to_string()));
        out.push(("surrogate.eps_high", self.surrogate.eps_high.to_string()));
        out.push((
            "surrogate.tis_cap",
            self.surrogate
                .tis_cap
                .map_or("none".into(), |c| c.to_string()),
        ));
        let tis_mode = match self.surrogate.tis_mode {
            TisMode::Token => "token",
            TisMode::Sequence => "sequence",
        };
        out.push(("surrogate.tis_mode", tis_mode.into()));
        out.push((
            "surrogate.updates_per_batch",
            self.surrogate.updates_per_batch.to_string(),
        ));
        out.push(("shaping.method", self.shaping.method.name().into()));
        match self.shaping.method {
            LengthControl::None => {}
            LengthControl::RlooLp { alpha } => out.push(("shaping.alpha", alpha.to_string())),
            LengthControl::Alp { beta, acc_mode } => {
                out.push(("shaping.beta", beta.to_string()));
                let m = match acc_mode {
                    AccuracyMode::Ema => "ema",
                    AccuracyMode::PerBatch => "per_batch",
                };
                out.push(("shaping.acc_mode", m.into()));
            }
            LengthControl::Drpo { lambda, tau } => {
                out.push(("shaping.lambda", lambda.to_string()));
                out.push(("shaping.tau", tau.to_string()));
            }
            LengthControl::Gfpo { k, drop_incorrect } => {
                out.push(("shaping.k", k.to_string()));
                out.push(("shaping.drop_incorrect", drop_incorrect.to_string()));
            }
        }
        out.push(("shaping.ema_decay", self.shaping.ema_decay.to_string()));
        out.push(("eval_every", self.eval_every.to_string()));
        out.push(("eval_samples", self.eval_samples.to_string()));
        out.push(("eval_temperature", self.eval_temperature.to_string()));
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Value of the active method's main hyperparameter, for reports.
    pub fn method_hyperparameter(&self) -> Option<(&'static str, f64)> {
        match self.shaping.method {
            LengthControl::None => None,
            LengthControl::RlooLp { alpha } => Some(("alpha", alpha)),
            LengthControl::Alp { beta, .. } => Some(("beta", beta)),
            LengthControl::Drpo { lambda, .. } => Some(("lambda", lambda)),
            LengthControl::Gfpo { k, .. } => Some(("k", k as f64)),
        }
    }
}
