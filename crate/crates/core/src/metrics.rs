//! Diagnostics over sampled answers and lengths.
//!
//! Per problem: whether the modal answer is correct (the center of the
//! answer distribution) and how spread the distribution is (answer entropy,
//! mode share). Per run: length bias, the overall / within / between
//! coefficient-of-variation split, truncation rate and the rollout-vs-learner
//! probability gap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Answer bucket; `None` stands for "no answer" (truncated).
pub type AnswerKey = Option<i64>;

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerHistogram {
    counts: BTreeMap<AnswerKey, usize>,
    total: usize,
    truth: AnswerKey,
}

impl AnswerHistogram {
    pub fn from_answers(
        answers: impl IntoIterator<Item = AnswerKey>,
        truth: AnswerKey,
    ) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for a in answers {
            *counts.entry(a).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(LabError::invalid(
                "answer histogram needs at least one answer",
            ));
        }
        Ok(AnswerHistogram {
            counts,
            total,
            truth,
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> impl Iterator<Item = (&AnswerKey, &usize)> {
        self.counts.iter()
    }

    fn max_count(&self) -> usize {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

/// 1 if any bucket with the maximal count is the ground truth, else 0.
pub fn mode_accuracy(h: &AnswerHistogram) -> f64 {
    let max = h.max_count();
    let hit = h.truth.is_some() && h.counts.get(&h.truth) == Some(&max);
    f64::from(u8::from(hit))
}

/// Shannon entropy of the empirical answer distribution, in nats.
pub fn answer_entropy(h: &AnswerHistogram) -> f64 {
    let n = h.total as f64;
    let e: f64 = h
        .counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    // A single bucket sums to -0.
    if e > 0.0 {
        e
    } else {
        0.0
    }
}

/// Fraction of answers equal to the mode.
pub fn mode_share(h: &AnswerHistogram) -> f64 {
    h.max_count() as f64 / h.total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemDispersion {
    pub mode_accuracy: f64,
    pub answer_entropy: f64,
    pub mode_share: f64,
}

impl ProblemDispersion {
    pub fn from_histogram(h: &AnswerHistogram) -> Self {
        ProblemDispersion {
            mode_accuracy: mode_accuracy(h),
            answer_entropy: answer_entropy(h),
            mode_share: mode_share(h),
        }
    }
}

fn mean(xs: &[usize]) -> f64 {
    xs.iter().sum::<usize>() as f64 / xs.len() as f64
}

/// `(mean_correct - mean_incorrect) / mean_all`. `Ok(None)` when one side is
/// empty or the overall mean is zero.
pub fn length_bias(correct_lens: &[usize], incorrect_lens: &[usize]) -> Result<Option<f64>> {
    if correct_lens.is_empty() && incorrect_lens.is_empty() {
        return Err(LabError::invalid("length bias needs at least one length"));
    }
    if correct_lens.is_empty() || incorrect_lens.is_empty() {
        return Ok(None);
    }
    let mc = mean(correct_lens);
    let mi = mean(incorrect_lens);
    let all = (correct_lens.iter().sum::<usize>() + incorrect_lens.iter().sum::<usize>()) as f64
        / (correct_lens.len() + incorrect_lens.len()) as f64;
    if all == 0.0 {
        return Ok(None);
    }
    Ok(Some((mc - mi) / all))
}

/// Coefficients of variation of response lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvDecomposition {
    /// Over all samples pooled.
    pub overall: f64,
    /// Per-problem CV averaged over problems.
    pub within: f64,
    /// CV of the per-problem mean lengths.
    pub between: f64,
}

fn population_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var)
}

/// Overall / within-problem / between-problem CV with population variances.
pub fn cv_decomposition(groups: &[Vec<usize>]) -> Result<CvDecomposition> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(LabError::invalid(
            "CV decomposition needs >= 2 problems with >= 2 samples each",
        ));
    }
    let as_f64: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|&l| l as f64).collect())
        .collect();
    let mut within_sum = 0.0;
    let mut means = Vec::with_capacity(groups.len());
    for g in &as_f64 {
        let (m, var) = population_moments(g);
        if m == 0.0 {
            return Err(LabError::invalid("CV undefined for a zero mean length"));
        }
        within_sum += var.sqrt() / m;
        means.push(m);
    }
    let all: Vec<f64> = as_f64.concat();
    let (m_all, var_all) = population_moments(&all);
    let (m_means, var_means) = population_moments(&means);
    Ok(CvDecomposition {
        overall: var_all.sqrt() / m_all,
        within: within_sum / groups.len() as f64,
        between: var_means.sqrt() / m_means,
    })
}

/// Fraction of lengths at or beyond `cap`.
pub fn truncation_rate(lengths: &[usize], cap: usize) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    lengths.iter().filter(|&&l| l >= cap).count() as f64 / lengths.len() as f64
}

/// Truncation rates of one population at two caps; `cap2 = None` means
/// unbounded.
pub fn paired_truncation(
    lengths: &[usize],
    cap1: usize,
    cap2: Option<usize>,
) -> Result<(f64, f64)> {
    if cap1 == 0 || cap2.is_some_and(|c| c <= cap1) {
        return Err(LabError::invalid("need 0 < cap1 < cap2"));
    }
    let r2 = cap2.map_or(0.0, |c| truncation_rate(lengths, c));
    Ok((truncation_rate(lengths, cap1), r2))
}

/// Mean over tokens of `|exp(rollout) - exp(current)|`; zero for no tokens.
pub fn prob_gap(rollout_logprobs: &[Vec<f64>], current_logprobs: &[Vec<f64>]) -> Result<f64> {
    if rollout_logprobs.len() != current_logprobs.len() {
        return Err(LabError::ShapeMismatch(format!(
            "{} rollout rows vs {} current rows",
            rollout_logprobs.len(),
            current_logprobs.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, c) in rollout_logprobs.iter().zip(current_logprobs) {
        if r.len() != c.len() {
            return Err(LabError::ShapeMismatch(format!(
                "row with {} rollout vs {} current tokens",
                r.len(),
                c.len()
            )));
        }
        for (a, b) in r.iter().zip(c) {
            sum += (a.exp() - b.exp()).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// The samples drawn for one problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProblemSamples {
    pub answers: Vec<AnswerKey>,
    pub correct: Vec<bool>,
    pub lengths: Vec<usize>,
    pub truth: i64,
}

/// Run-level summary. Dispersion fields are equal-weight means over problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub accuracy: f64,
    pub mean_length: f64,
    pub mode_accuracy: f64,
    pub answer_entropy: f64,
    pub mode_share: f64,
    pub length_bias: Option<f64>,
    pub cv: Option<CvDecomposition>,
    pub truncation_rate: f64,
    pub prob_gap: Option<f64>,
}

impl DispersionReport {
    pub fn from_samples(problems: &[ProblemSamples], cap: usize) -> Result<Self> {
        if problems.is_empty() {
            return Err(LabError::invalid(
                "dispersion report needs at least one problem",
            ));
        }
        let mut per = Vec::with_capacity(problems.len());
        for p in problems {
            let h = AnswerHistogram::from_answers(p.answers.iter().copied(), Some(p.truth))?;
            per.push(ProblemDispersion::from_histogram(&h));
        }
        let k = per.len() as f64;
        let mut correct_lens = Vec::new();
        let mut incorrect_lens = Vec::new();
        for p in problems {
            for (&l, &c) in p.lengths.iter().zip(&p.correct) {
                if c {
                    correct_lens.push(l);
                } else {
                    incorrect_lens.push(l);
                }
            }
        }
        let all: Vec<usize> = problems
            .iter()
            .flat_map(|p| p.lengths.iter().copied())
            .collect();
        let n_all = all.len() as f64;
        let length_groups: Vec<Vec<usize>> = problems.iter().map(|p| p.lengths.clone()).collect();
        Ok(DispersionReport {
            accuracy: correct_lens.len() as f64 / n_all,
            mean_length: all.iter().sum::<usize>() as f64 / n_all,
            mode_accuracy: per.iter().map(|d| d.mode_accuracy).sum::<f64>() / k,
            answer_entropy: per.iter().map(|d| d.answer_entropy).sum::<f64>() / k,
            mode_share: per.iter().map(|d| d.mode_share).sum::<f64>() / k,
            length_bias: length_bias(&correct_lens, &incorrect_lens)?,
            cv: cv_decomposition(&length_groups).ok(),
            truncation_rate: truncation_rate(&all, cap),
            prob_gap: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(counts: &[(i64, usize)], truth: i64) -> AnswerHistogram {
        let answers = counts
            .iter()
            .flat_map(|&(k, c)| std::iter::repeat_n(Some(k), c));
        AnswerHistogram::from_answers(answers, Some(truth)).unwrap()
    }

    #[test]
    fn mode_accuracy_cases() {
        assert_eq!(mode_accuracy(&hist(&[(0, 3), (1, 1)], 0)), 1.0);
        assert_eq!(mode_accuracy(&hist(&[(0, 1), (1, 3)], 0)), 0.0);
        // ties: any maximal bucket matching counts
        assert_eq!(mode_accuracy(&hist(&[(0, 2), (1, 2)], 0)), 1.0);
        assert_eq!(mode_accuracy(&hist(&[(0, 2), (1, 2)], 1)), 1.0);
        let none_truth = AnswerHistogram::from_answers([None, None], None).unwrap();
        assert_eq!(mode_accuracy(&none_truth), 0.0);
    }

    #[test]
    fn entropy_and_share_cases() {
        assert_eq!(answer_entropy(&hist(&[(4, 7)], 4)), 0.0);
        let h = hist(&[(0, 2), (1, 1), (2, 1)], 0);
        assert!((answer_entropy(&h) - 1.039_720_770_839_917_9).abs() < 1e-12);
        assert_eq!(mode_share(&h), 0.5);
        let uniform = hist(&[(0, 1), (1, 1), (2, 1), (3, 1), (4, 1)], 0);
        assert!((answer_entropy(&uniform) - 5f64.ln()).abs() < 1e-12);
        assert_eq!(mode_share(&uniform), 0.2);
        assert_eq!(mode_share(&hist(&[(9, 5)], 0)), 1.0);
        assert!(AnswerHistogram::from_answers(std::iter::empty(), Some(0)).is_err());
    }

    #[test]
    fn length_bias_cases() {
        assert_eq!(length_bias(&[10, 20], &[15, 15]).unwrap(), Some(0.0));
        assert_eq!(length_bias(&[100], &[300]).unwrap(), Some(-1.0));
        assert_eq!(length_bias(&[100], &[]).unwrap(), None);
        assert!(length_bias(&[], &[]).is_err());
    }

    #[test]
    fn cv_hand_fixture() {
        let cv = cv_decomposition(&[vec![2, 2], vec![4, 4]]).unwrap();
        assert_eq!(cv.within, 0.0);
        assert!((cv.between - 1.0 / 3.0).abs() < 1e-15);
        assert!((cv.overall - 1.0 / 3.0).abs() < 1e-15);
        let flat = cv_decomposition(&[vec![5, 5, 5], vec![5, 5, 5]]).unwrap();
        assert_eq!((flat.overall, flat.within, flat.between), (0.0, 0.0, 0.0));
        assert!(cv_decomposition(&[vec![0, 0], vec![1, 2]]).is_err());
        assert!(cv_decomposition(&[vec![1, 2]]).is_err());
    }

    #[test]
    fn truncation_cases() {
        assert_eq!(truncation_rate(&[1, 2, 3], 10), 0.0);
        let lens: Vec<usize> = (0..12).map(|i| if i < 3 { 16 } else { i }).collect();
        assert_eq!(truncation_rate(&lens, 16), 0.25);
        assert_eq!(paired_truncation(&lens, 16, None).unwrap(), (0.25, 0.0));
        assert!(paired_truncation(&lens, 16, Some(8)).is_err());
    }

    #[test]
    fn prob_gap_cases() {
        let a = vec![vec![-0.1, -2.0], vec![-0.7]];
        assert_eq!(prob_gap(&a, &a).unwrap(), 0.0);
        let g = prob_gap(&[vec![0.5f64.ln()]], &[vec![0.6f64.ln()]]).unwrap();
        assert!((g - 0.1).abs() < 1e-12);
        assert!(prob_gap(&[vec![0.0]], &[vec![0.0, 0.0]]).is_err());
    }
}
