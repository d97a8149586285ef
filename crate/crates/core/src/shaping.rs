//! Length-control mechanisms and the online statistics they rely on.
//!
//! * RLOO-LP scales the reward of correct answers by
//!   `1 - alpha * sigmoid((len - mean) / std)` with per-problem length stats.
//! * ALP subtracts `beta * len * max(acc, 1/G)` from every response.
//! * DRPO reweights correct responses by `exp((1 - len/C) / lambda)` inside
//!   the DisCO objective.
//! * GFPO keeps only the `k` shortest correct responses of each group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::objectives::Group;
use crate::policy::sigmoid;

/// Floor on the std used by RLOO-LP's normalization, in tokens.
pub const MIN_LENGTH_STD: f64 = 1.0;

/// How ALP estimates `acc(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AccuracyMode {
    /// Exponential moving average across steps.
    #[default]
    Ema,
    /// Fraction correct in the current group.
    PerBatch,
}

/// Active length-control method and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum LengthControl {
    #[default]
    None,
    RlooLp {
        alpha: f64,
    },
    Alp {
        beta: f64,
        acc_mode: AccuracyMode,
    },
    Drpo {
        lambda: f64,
        tau: f64,
    },
    Gfpo {
        k: usize,
        drop_incorrect: bool,
    },
}

impl LengthControl {
    pub fn name(&self) -> &'static str {
        match self {
            LengthControl::None => "none",
            LengthControl::RlooLp { .. } => "RLOO_LP",
            LengthControl::Alp { .. } => "ALP",
            LengthControl::Drpo { .. } => "DRPO",
            LengthControl::Gfpo { .. } => "GFPO",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LengthControl::None => {}
            LengthControl::RlooLp { alpha } => {
                if !(0.0..1.0).contains(&alpha) {
                    return Err(LabError::config(
                        "shaping.alpha",
                        "alpha must lie in [0, 1)",
                    ));
                }
            }
            LengthControl::Alp { beta, .. } => {
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(LabError::config(
                        "shaping.beta",
                        "beta must be finite and >= 0",
                    ));
                }
            }
            LengthControl::Drpo { lambda, tau } => {
                if !(lambda > 0.0) {
                    return Err(LabError::config("shaping.lambda", "lambda must be > 0"));
                }
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(LabError::config("shaping.tau", "tau must be > 0"));
                }
            }
            LengthControl::Gfpo { k, .. } => {
                if k == 0 {
                    return Err(LabError::config("shaping.k", "k must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    pub method: LengthControl,
    /// Decay of the online length/accuracy estimators.
    pub ema_decay: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            method: LengthControl::None,
            ema_decay: 0.9,
        }
    }
}

/// Mean and std of correct-response lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthMoments {
    pub mean: f64,
    pub std: f64,
}

impl LengthMoments {
    /// Population moments; `None` for an empty sample.
    pub fn of(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let n = lengths.len() as f64;
        let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
        let var = lengths
            .iter()
            .map(|&l| (l as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        Some(LengthMoments {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningLength {
    pub moments: LengthMoments,
    pub update_count: u64,
}

impl RunningLength {
    fn update(slot: &mut Option<RunningLength>, obs: LengthMoments, decay: f64) {
        match slot {
            None => {
                *slot = Some(RunningLength {
                    moments: obs,
                    update_count: 1,
                })
            }
            Some(r) => {
                r.moments.mean = decay * r.moments.mean + (1.0 - decay) * obs.mean;
                r.moments.std = decay * r.moments.std + (1.0 - decay) * obs.std;
                r.update_count += 1;
            }
        }
    }
}

/// Online per-problem statistics of correct-response lengths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LengthStats {
    pub per_problem: BTreeMap<u64, RunningLength>,
    pub global: Option<RunningLength>,
}

impl LengthStats {
    /// Per-problem moments once a problem has two updates, otherwise the
    /// global fallback (if any).
    pub fn resolve(&self, problem_id: u64) -> Option<LengthMoments> {
        match self.per_problem.get(&problem_id) {
            Some(r) if r.update_count >= 2 => Some(r.moments),
            _ => self.global.map(|g| g.moments),
        }
    }
}

/// Online per-problem accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTracker {
    pub per_problem: BTreeMap<u64, f64>,
    pub group_size: usize,
}

impl AccuracyTracker {
    pub fn new(group_size: usize) -> Self {
        AccuracyTracker {
            per_problem: BTreeMap::new(),
            group_size,
        }
    }

    pub fn get(&self, problem_id: u64) -> Option<f64> {
        self.per_problem.get(&problem_id).copied()
    }
}

/// Folds one verified group into the running statistics (EMA with `decay`,
/// seeded from the first observation).
pub fn update_online_stats(
    stats: &mut LengthStats,
    tracker: &mut AccuracyTracker,
    group: &Group,
    decay: f64,
) {
    let correct_lengths: Vec<usize> = group
        .trajectories
        .iter()
        .zip(&group.correct_mask)
        .filter(|(_, &c)| c)
        .map(|(t, _)| t.length)
        .collect();
    if let Some(obs) = LengthMoments::of(&correct_lengths) {
        let mut slot = stats.per_problem.get(&group.problem_id).copied();
        RunningLength::update(&mut slot, obs, decay);
        if let Some(s) = slot {
            stats.per_problem.insert(group.problem_id, s);
        }
        RunningLength::update(&mut stats.global, obs, decay);
    }
    if !group.is_empty() {
        let frac = correct_lengths.len() as f64 / group.len() as f64;
        tracker
            .per_problem
            .entry(group.problem_id)
            .and_modify(|a| *a = decay * *a + (1.0 - decay) * frac)
            .or_insert(frac);
    }
}

/// `1 - alpha * sigmoid((len - mean) / std)`, with the std floored at
/// [`MIN_LENGTH_STD`].
pub fn rloo_lp_factor(len: usize, moments: LengthMoments, alpha: f64) -> f64 {
    let std = moments.std.max(MIN_LENGTH_STD);
    1.0 - alpha * sigmoid((len as f64 - moments.mean) / std)
}

/// RLOO-LP reward: `1{correct} * (1 - alpha * f(len))`.
pub fn rloo_lp_reward(correct: bool, len: usize, moments: LengthMoments, alpha: f64) -> f64 {
    if correct {
        rloo_lp_factor(len, moments, alpha)
    } else {
        0.0
    }
}

/// `beta * len * max(acc, 1/G)`.
pub fn alp_penalty(len: usize, acc: f64, group_size: usize, beta: f64) -> f64 {
    beta * len as f64 * acc.max(1.0 / group_size as f64)
}

/// ALP reward: `1{correct} - beta * len * max(acc, 1/G)`.
pub fn alp_reward(correct: bool, len: usize, acc: f64, group_size: usize, beta: f64) -> f64 {
    f64::from(u8::from(correct)) - alp_penalty(len, acc, group_size, beta)
}

/// DRPO length weight `exp((1 - len/C) / lambda)`.
pub fn drpo_weight(len: usize, max_len: usize, lambda: f64) -> Result<f64> {
    if len > max_len {
        return Err(LabError::invalid(format!(
            "length {len} exceeds max length {max_len}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(LabError::invalid("lambda must be > 0"));
    }
    Ok(((1.0 - len as f64 / max_len as f64) / lambda).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrpoOutput {
    pub value: f64,
    /// `omega_i / sum omega` for each correct sequence.
    pub correct_weights: Vec<f64>,
    /// `-softmax(s / tau)_i` for each wrong sequence.
    pub wrong_weights: Vec<f64>,
}

/// Weighted DisCO objective
/// `sum(omega s_c)/sum(omega) - tau * ln sum exp(s_w / tau)` and its
/// derivative with respect to each sequence score.
///
/// Returns `None` when either side is empty; such groups carry no signal.
pub fn disco_drpo_objective(
    correct_scores: &[f64],
    wrong_scores: &[f64],
    weights: &[f64],
    tau: f64,
) -> Result<Option<DrpoOutput>> {
    if weights.len() != correct_scores.len() {
        return Err(LabError::ShapeMismatch(format!(
            "{} weights for {} correct scores",
            weights.len(),
            correct_scores.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(LabError::invalid("tau must be > 0"));
    }
    if correct_scores.is_empty() || wrong_scores.is_empty() {
        return Ok(None);
    }
    let total: f64 = weights.iter().sum();
    let correct_weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let positive: f64 = correct_weights
        .iter()
        .zip(correct_scores)
        .map(|(w, s)| w * s)
        .sum();

    let max = wrong_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = wrong_scores
        .iter()
        .map(|s| ((s - max) / tau).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    let penalty = max + tau * z.ln();
    let wrong_weights = exps.iter().map(|e| -e / z).collect();

    Ok(Some(DrpoOutput {
        value: positive - penalty,
        correct_weights,
        wrong_weights,
    }))
}

/// Keeps the `min(k, |C|)` shortest correct responses (ties by sample index)
/// and, when `drop_incorrect` is false, every incorrect one. Members stay in
/// sampling order; advantages are cleared so they get recomputed over the
/// retained set.
pub fn gfpo_filter(group: &Group, k: usize, drop_incorrect: bool) -> Group {
    let mut correct: Vec<usize> = (0..group.len())
        .filter(|&i| group.correct_mask[i])
        .collect();
    correct.sort_by_key(|&i| {
        (
            group.trajectories[i].length,
            group.trajectories[i].sample_index,
        )
    });
    correct.truncate(k);
    let mut keep = correct;
    if !drop_incorrect {
        keep.extend((0..group.len()).filter(|&i| !group.correct_mask[i]));
    }
    keep.sort_unstable();
    group.subset(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::fixture_group;

    const M: LengthMoments = LengthMoments {
        mean: 20.0,
        std: 5.0,
    };

    #[test]
    fn rloo_lp_hand_values() {
        assert_eq!(rloo_lp_reward(true, 37, M, 0.0), 1.0);
        assert_eq!(rloo_lp_reward(false, 37, M, 0.0), 0.0);
        assert!((rloo_lp_reward(true, 20, M, 0.4) - 0.8).abs() < 1e-15);
        assert_eq!(rloo_lp_reward(false, 3, M, 0.9), 0.0);
        // std guard: std 0 behaves like std 1
        let flat = LengthMoments {
            mean: 20.0,
            std: 0.0,
        };
        let unit = LengthMoments {
            mean: 20.0,
            std: 1.0,
        };
        assert_eq!(
            rloo_lp_reward(true, 22, flat, 0.5),
            rloo_lp_reward(true, 22, unit, 0.5)
        );
    }

    #[test]
    fn alp_hand_values() {
        assert!((alp_reward(true, 100, 0.5, 16, 1e-4) - 0.995).abs() < 1e-12);
        let floored = alp_reward(false, 160, 0.0, 16, 1e-3);
        assert!((floored + 0.01).abs() < 1e-15);
        assert_eq!(alp_reward(true, 0, 0.7, 16, 5.0), 1.0);
        assert_eq!(alp_reward(false, 0, 0.7, 16, 5.0), 0.0);
    }

    #[test]
    fn drpo_weight_hand_values() {
        assert_eq!(drpo_weight(64, 64, 0.3).unwrap(), 1.0);
        assert!((drpo_weight(32, 64, 0.5).unwrap() - std::f64::consts::E).abs() < 1e-12);
        for len in 0..=64 {
            assert!((drpo_weight(len, 64, 1e9).unwrap() - 1.0).abs() < 1e-8);
        }
        assert!(drpo_weight(65, 64, 1.0).is_err());
    }

    #[test]
    fn disco_hand_value() {
        let e = std::f64::consts::E;
        let out = disco_drpo_objective(&[-1.0, -2.0], &[-3.0], &[e, 1.0], 1.0)
            .unwrap()
            .unwrap();
        assert!((out.value - 1.731_058_578_630_005).abs() < 1e-12);
        assert!(out.correct_weights.iter().all(|&w| w > 0.0));
        assert!((out.correct_weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(out.wrong_weights, vec![-1.0]);
    }

    #[test]
    fn disco_single_wrong_and_uniform_weights() {
        for tau in [0.1, 1.0, 7.0] {
            let out = disco_drpo_objective(&[-1.0, -3.0], &[-2.5], &[2.0, 2.0], tau)
                .unwrap()
                .unwrap();
            assert!((out.value - (-2.0 + 2.5)).abs() < 1e-12);
        }
        assert!(disco_drpo_objective(&[], &[-1.0], &[], 1.0)
            .unwrap()
            .is_none());
        assert!(disco_drpo_objective(&[-1.0], &[], &[1.0], 1.0)
            .unwrap()
            .is_none());
    }

    #[test]
    fn gfpo_keeps_shortest_correct() {
        // 16 samples, 12 correct, k = 8
        let lengths: Vec<usize> = (0..16).map(|i| 40 - 2 * i).collect();
        let correct: Vec<bool> = (0..16).map(|i| i % 4 != 0).collect();
        let g = fixture_group(0, &lengths, &correct);
        let f = gfpo_filter(&g, 8, true);
        assert_eq!(f.len(), 8);
        assert!(f.correct_mask.iter().all(|&c| c));
        let kept: Vec<usize> = f.trajectories.iter().map(|t| t.sample_index).collect();
        assert_eq!(kept, vec![6, 7, 9, 10, 11, 13, 14, 15]);
    }

    #[test]
    fn gfpo_small_pool_and_ties() {
        let g = fixture_group(0, &[5, 9, 3, 7], &[true, false, true, true]);
        assert_eq!(gfpo_filter(&g, 8, true).len(), 3);
        let with_wrong = gfpo_filter(&g, 1, false);
        let kept: Vec<usize> = with_wrong
            .trajectories
            .iter()
            .map(|t| t.sample_index)
            .collect();
        assert_eq!(kept, vec![1, 2]);

        let tie = fixture_group(0, &[4, 4, 4], &[false, true, true]);
        let f = gfpo_filter(&tie, 1, true);
        assert_eq!(f.trajectories[0].sample_index, 1);
    }

    #[test]
    fn online_stats_cold_start_and_zero_correct() {
        let mut stats = LengthStats::default();
        let mut acc = AccuracyTracker::new(4);
        let g = fixture_group(3, &[10, 20, 30, 40], &[true, true, false, false]);
        update_online_stats(&mut stats, &mut acc, &g, 0.9);
        let r = stats.per_problem[&3];
        assert_eq!(
            r.moments,
            LengthMoments {
                mean: 15.0,
                std: 5.0
            }
        );
        assert_eq!(acc.get(3), Some(0.5));
        // only one update: per-problem not trusted yet, global fallback used
        assert_eq!(
            stats.resolve(3),
            Some(LengthMoments {
                mean: 15.0,
                std: 5.0
            })
        );
        assert_eq!(stats.resolve(99), stats.global.map(|g| g.moments));

        let none = fixture_group(3, &[1, 2, 3, 4], &[false; 4]);
        update_online_stats(&mut stats, &mut acc, &none, 0.9);
        assert_eq!(stats.per_problem[&3], r);
        assert!((acc.get(3).unwrap() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn online_stats_converge() {
        let mut stats = LengthStats::default();
        let mut acc = AccuracyTracker::new(4);
        let first = fixture_group(1, &[100, 100, 100, 100], &[true, true, true, true]);
        update_online_stats(&mut stats, &mut acc, &first, 0.9);
        let g = fixture_group(1, &[10, 20, 30, 40], &[true, true, true, false]);
        for _ in 0..200 {
            update_online_stats(&mut stats, &mut acc, &g, 0.9);
        }
        let target = LengthMoments::of(&[10, 20, 30]).unwrap();
        let got = stats.resolve(1).unwrap();
        assert!((got.mean - target.mean).abs() < 1e-6);
        assert!((got.std - target.std).abs() < 1e-6);
        assert!((acc.get(1).unwrap() - 0.75).abs() < 1e-6);
    }

    #[test]
    fn validation_names_keys() {
        let err = LengthControl::RlooLp { alpha: 1.0 }.validate().unwrap_err();
        assert!(err.to_string().contains("shaping.alpha"));
        assert!(LengthControl::Gfpo {
            k: 0,
            drop_incorrect: true
        }
        .validate()
        .is_err());
    }
}
