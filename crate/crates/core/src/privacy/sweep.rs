use serde::{Deserialize, Serialize};

use super::Statistic;
use crate::error::{Error, Result};

pub const N_THRESHOLDS: usize = 100;
/// FPR/FNR clamp applied before taking logarithms.
pub const RATE_CLAMP: f64 = 1e-6;

/// Which side of the threshold the attacker attributes to the retrained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackDirection {
    /// `value ≥ t` ⇒ retrained.
    GeqIsRetrained,
    /// `value ≤ t` ⇒ retrained.
    LeqIsRetrained,
}

impl AttackDirection {
    pub const ALL: [AttackDirection; 2] = [AttackDirection::GeqIsRetrained, AttackDirection::LeqIsRetrained];

    pub fn predicts_retrained(self, value: f64, threshold: f64) -> bool {
        match self {
            AttackDirection::GeqIsRetrained => value >= threshold,
            AttackDirection::LeqIsRetrained => value <= threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackDirection::GeqIsRetrained => "geq",
            AttackDirection::LeqIsRetrained => "leq",
        }
    }
}

impl std::str::FromStr for AttackDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geq" | "geq_is_retrained" => Ok(AttackDirection::GeqIsRetrained),
            "leq" | "leq_is_retrained" => Ok(AttackDirection::LeqIsRetrained),
            other => Err(Error::argument(format!("unknown direction `{other}` (expected geq or leq)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub statistic: Statistic,
    pub direction: AttackDirection,
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub fnr: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub attack_score: Vec<f64>,
    pub privacy_score: Vec<f64>,
}

impl ThresholdSweep {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn min_privacy_score(&self) -> f64 {
        self.privacy_score.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Lowest-index threshold attaining the minimum privacy score.
    pub fn strongest_index(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.privacy_score.iter().enumerate() {
            if v < self.privacy_score[best] {
                best = k;
            }
        }
        best
    }

    /// Index of the grid threshold closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &x) in self.thresholds.iter().enumerate() {
            if (x - t).abs() < (self.thresholds[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// `max(0, min(ln((1−FPR)/FNR), ln((1−FNR)/FPR)))` with both rates clamped
/// to `[δ, 1−δ]`.
pub fn epsilon_at(fpr: f64, fnr: f64) -> f64 {
    epsilon_from_rates(fpr, 1.0 - fpr, fnr, 1.0 - fnr)
}

/// Same as [`epsilon_at`] but with the complements supplied, so a sweep can
/// pass exact count ratios and identical distributions yield exactly 0.
fn epsilon_from_rates(fpr: f64, one_minus_fpr: f64, fnr: f64, one_minus_fnr: f64) -> f64 {
    let clamp = |x: f64| x.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
    let a = (clamp(one_minus_fpr) / clamp(fnr)).ln();
    let b = (clamp(one_minus_fnr) / clamp(fpr)).ln();
    a.min(b).max(0.0)
}

/// `AS = 1 − 2^{−ε}`, `PS = 1 − AS`.
pub fn as_ps_at(epsilon: f64) -> (f64, f64) {
    let ps = (-epsilon).exp2();
    (1.0 - ps, ps)
}

/// Thresholds evenly spaced over `[lo, hi]`, endpoints exact. A zero range
/// collapses to a single threshold.
fn grid(lo: f64, hi: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let span = hi - lo;
    let last = (N_THRESHOLDS - 1) as f64;
    let mut t: Vec<f64> = (0..N_THRESHOLDS).map(|k| lo + span * (k as f64 / last)).collect();
    t[N_THRESHOLDS - 1] = hi;
    t
}

/// Counts values predicted "retrained" at threshold `t`, given sorted input.
fn count_retrained(sorted: &[f64], t: f64, direction: AttackDirection) -> usize {
    match direction {
        AttackDirection::GeqIsRetrained => sorted.len() - sorted.partition_point(|&v| v < t),
        AttackDirection::LeqIsRetrained => sorted.partition_point(|&v| v <= t),
    }
}

/// Positive class: "came from the retrained model". FPR is the share of
/// unlearned-model values predicted retrained, FNR the share of
/// retrained-model values predicted unlearned.
pub fn threshold_sweep(statistic: Statistic, retrained: &[f64], unlearned: &[f64], direction: AttackDirection) -> Result<ThresholdSweep> {
    if retrained.is_empty() || unlearned.is_empty() {
        return Err(Error::Metric("threshold sweep needs non-empty statistic vectors".into()));
    }
    if retrained.iter().chain(unlearned).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite statistic value".into()));
    }
    let mut r = retrained.to_vec();
    let mut u = unlearned.to_vec();
    r.sort_by(f64::total_cmp);
    u.sort_by(f64::total_cmp);
    let lo = r[0].min(u[0]);
    let hi = r[r.len() - 1].max(u[u.len() - 1]);
    let thresholds = grid(lo, hi);

    let (nr, nu) = (r.len() as f64, u.len() as f64);
    let n = thresholds.len();
    let mut sweep = ThresholdSweep {
        statistic,
        direction,
        thresholds,
        fpr: Vec::with_capacity(n),
        fnr: Vec::with_capacity(n),
        epsilon: Vec::with_capacity(n),
        attack_score: Vec::with_capacity(n),
        privacy_score: Vec::with_capacity(n),
    };
    for &t in &sweep.thresholds {
        let false_pos = count_retrained(&u, t, direction);
        let true_pos = count_retrained(&r, t, direction);
        let false_neg = r.len() - true_pos;
        let fpr = false_pos as f64 / nu;
        let fnr = false_neg as f64 / nr;
        let eps = epsilon_from_rates(fpr, (u.len() - false_pos) as f64 / nu, fnr, true_pos as f64 / nr);
        let (attack, privacy) = as_ps_at(eps);
        sweep.fpr.push(fpr);
        sweep.fnr.push(fnr);
        sweep.epsilon.push(eps);
        sweep.attack_score.push(attack);
        sweep.privacy_score.push(privacy);
    }
    Ok(sweep)
}
