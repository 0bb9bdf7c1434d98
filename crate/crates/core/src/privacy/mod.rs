//! Distribution-level privacy evaluation.
//!
//! An attacker sees one output statistic per forget-class sample and tries
//! to tell whether it came from the retrained model or the unlearned one.
//! For every threshold of a 100-point grid and both inequality directions
//! the false positive/negative rates give a distinguishability `ε_t`; the
//! privacy score is `2^{-ε}` at the worst threshold, and the worst-case
//! privacy score (WCPS) is the minimum over the log-odds confidence and the
//! temperature-2 entropy statistics.

mod mia;
mod sweep;

pub use mia::{calibrate_member_threshold, cmia, emia, raw_entropy, raw_true_class_probability, MemberSide, MiaThresholds};
pub use sweep::{as_ps_at, epsilon_at, threshold_sweep, AttackDirection, ThresholdSweep, N_THRESHOLDS, RATE_CLAMP};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{log_softmax, softmax, Mlp};

/// Clamp applied to `p_max` before the log-odds transform.
pub const CONFIDENCE_CLAMP: f64 = 1e-12;
pub const ENTROPY_TEMPERATURE: f64 = 2.0;

/// Log-odds of the top softmax probability, `ln p − ln(1 − p)`, with `p`
/// clamped to `[δ, 1 − δ]`.
pub fn confidence_score(logits: &[f64]) -> Result<f64> {
    let p = softmax(logits)?;
    let p_max = p.iter().copied().fold(0.0, f64::max);
    Ok(log_odds(p_max))
}

fn log_odds(p: f64) -> f64 {
    let p = p.clamp(CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP);
    p.ln() - (1.0 - p).ln()
}

/// Shannon entropy (nats) of `softmax(logits / T)`.
pub fn entropy_score(logits: &[f64], temperature: f64) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::argument("temperature must be positive"));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    Ok(entropy_of_log_probs(&log_softmax(&scaled)))
}

pub(crate) fn entropy_of_log_probs(logp: &[f64]) -> f64 {
    -logp
        .iter()
        .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp })
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Confidence,
    Entropy,
}

impl Statistic {
    pub const ALL: [Statistic; 2] = [Statistic::Confidence, Statistic::Entropy];

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Confidence => "confidence",
            Statistic::Entropy => "entropy",
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" | "c" => Ok(Statistic::Confidence),
            "entropy" | "e" => Ok(Statistic::Entropy),
            other => Err(Error::argument(format!("unknown statistic `{other}`"))),
        }
    }
}

/// Per-sample outputs of one model on one sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputStatistics {
    pub sample_ids: Vec<usize>,
    pub logits: Matrix,
    pub confidence: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl OutputStatistics {
    pub fn compute(model: &Mlp, features: &Matrix, sample_ids: &[usize]) -> Result<Self> {
        if features.rows() != sample_ids.len() {
            return Err(Error::argument("sample ids and feature rows differ in length"));
        }
        Self::from_logits(model.logits(features)?, sample_ids.to_vec())
    }

    pub fn from_logits(logits: Matrix, sample_ids: Vec<usize>) -> Result<Self> {
        let mut confidence = Vec::with_capacity(logits.rows());
        let mut entropy = Vec::with_capacity(logits.rows());
        for row in logits.iter_rows() {
            confidence.push(confidence_score(row)?);
            entropy.push(entropy_score(row, ENTROPY_TEMPERATURE)?);
        }
        Ok(Self {
            sample_ids,
            logits,
            confidence,
            entropy,
        })
    }

    /// Statistics given directly, without logits.
    pub fn from_values(sample_ids: Vec<usize>, confidence: Vec<f64>, entropy: Vec<f64>) -> Result<Self> {
        if confidence.len() != sample_ids.len() || entropy.len() != sample_ids.len() {
            return Err(Error::argument("statistic vectors differ in length"));
        }
        Ok(Self {
            logits: Matrix::zeros(sample_ids.len(), 0),
            sample_ids,
            confidence,
            entropy,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn values(&self, statistic: Statistic) -> &[f64] {
        match statistic {
            Statistic::Confidence => &self.confidence,
            Statistic::Entropy => &self.entropy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub statistic: Statistic,
    pub direction: AttackDirection,
    pub threshold_index: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub ps_c: f64,
    pub ps_e: f64,
    pub wcps: f64,
    pub worst_case: WorstCase,
    /// Confidence/geq, confidence/leq, entropy/geq, entropy/leq.
    pub sweeps: Vec<ThresholdSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cmia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emia: Option<f64>,
}

impl PrivacyReport {
    pub fn sweep(&self, statistic: Statistic, direction: AttackDirection) -> &ThresholdSweep {
        self.sweeps
            .iter()
            .find(|s| s.statistic == statistic && s.direction == direction)
            .expect("report holds all four sweeps")
    }
}

/// Runs the four sweeps and reduces them to PS_C, PS_E and WCPS. Ties in the
/// worst case resolve to the first sweep (in the order above) and the lowest
/// threshold index.
pub fn privacy_report(retrained: &OutputStatistics, unlearned: &OutputStatistics) -> Result<PrivacyReport> {
    if retrained.is_empty() || unlearned.is_empty() {
        return Err(Error::Metric("privacy report needs non-empty forget-set outputs".into()));
    }
    let mut sweeps = Vec::with_capacity(4);
    for statistic in Statistic::ALL {
        for direction in AttackDirection::ALL {
            sweeps.push(threshold_sweep(statistic, retrained.values(statistic), unlearned.values(statistic), direction)?);
        }
    }
    let mut worst: Option<(f64, WorstCase)> = None;
    let mut ps = [f64::INFINITY; 2];
    for sweep in &sweeps {
        let slot = usize::from(sweep.statistic == Statistic::Entropy);
        for (k, &value) in sweep.privacy_score.iter().enumerate() {
            ps[slot] = ps[slot].min(value);
            if worst.is_none_or(|(best, _)| value < best) {
                worst = Some((
                    value,
                    WorstCase {
                        statistic: sweep.statistic,
                        direction: sweep.direction,
                        threshold_index: k,
                        threshold: sweep.thresholds[k],
                    },
                ));
            }
        }
    }
    let (wcps, worst_case) = worst.expect("sweeps are non-empty");
    Ok(PrivacyReport {
        ps_c: ps[0],
        ps_e: ps[1],
        wcps,
        worst_case,
        sweeps,
        cmia: None,
        emia: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackedAs {
    /// The attack attributes the output to the unlearned model, i.e. the
    /// sample still looks like training data.
    MemberLike,
    NonmemberLike,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleVulnerability {
    pub sample_id: usize,
    /// `None` when the retrained outputs lack this sample.
    pub retrained_value: Option<f64>,
    pub unlearned_value: f64,
    pub attacked_as: AttackedAs,
    pub flagged: bool,
    pub distance: f64,
}

/// Evaluates every unlearned-model sample against the worst-case rule.
/// A sample is flagged when the rule places it on the unlearned side, so
/// the attack singles it out. Flagged samples come first, each group sorted
/// by distance from the threshold, farthest first.
pub fn vulnerable_samples(report: &PrivacyReport, retrained: &OutputStatistics, unlearned: &OutputStatistics) -> Vec<SampleVulnerability> {
    vulnerable_samples_under(report.worst_case, retrained, unlearned)
}

/// [`vulnerable_samples`] for an arbitrary threshold rule.
pub fn vulnerable_samples_under(wc: WorstCase, retrained: &OutputStatistics, unlearned: &OutputStatistics) -> Vec<SampleVulnerability> {
    let rv = retrained.values(wc.statistic);
    let uv = unlearned.values(wc.statistic);
    let mut out: Vec<SampleVulnerability> = unlearned
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let u = uv[i];
            let looks_retrained = wc.direction.predicts_retrained(u, wc.threshold);
            let retrained_value = retrained
                .sample_ids
                .iter()
                .position(|&r| r == id)
                .map(|j| rv[j]);
            SampleVulnerability {
                sample_id: id,
                retrained_value,
                unlearned_value: u,
                attacked_as: if looks_retrained {
                    AttackedAs::NonmemberLike
                } else {
                    AttackedAs::MemberLike
                },
                flagged: !looks_retrained,
                distance: (u - wc.threshold).abs(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.flagged
            .cmp(&a.flagged)
            .then(b.distance.total_cmp(&a.distance))
            .then(a.sample_id.cmp(&b.sample_id))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_cases() {
        assert_eq!(confidence_score(&[0.0, 0.0]).unwrap(), 0.0);
        // softmax(ln 9, 0) = (0.9, 0.1)
        let c = confidence_score(&[9f64.ln(), 0.0]).unwrap();
        assert!((c - 9f64.ln()).abs() < 1e-12);
        assert!((c - 2.197_224_577_336_219_6).abs() < 1e-12);
        let peaked = confidence_score(&[1e4, 0.0, -1e4]).unwrap();
        let bound = ((1.0 - CONFIDENCE_CLAMP) / CONFIDENCE_CLAMP).ln();
        assert!((peaked - bound).abs() < 1e-3);
        assert!((peaked - 27.631).abs() < 1e-3);
        assert!(confidence_score(&[f64::NAN]).is_err());
    }

    #[test]
    fn entropy_cases() {
        for n in [2usize, 5, 10] {
            let h = entropy_score(&vec![3.0; n], 2.0).unwrap();
            assert!((h - (n as f64).ln()).abs() < 1e-12);
        }
        // (10, 0) at T = 2: p = (σ(5), σ(-5)), evaluated directly.
        let s = 1.0 / (1.0 + (-5f64).exp());
        let expected = -(s * s.ln() + (1.0 - s) * (1.0 - s).ln());
        let h = entropy_score(&[10.0, 0.0], 2.0).unwrap();
        assert!((h - expected).abs() < 1e-14);
        assert!((h - 0.040_179_603_110_542_34).abs() < 1e-12);
        let shifted = entropy_score(&[110.0, 100.0], 2.0).unwrap();
        assert!((h - shifted).abs() < 1e-14);
        assert!(entropy_score(&[1.0, 2.0], 0.0).is_err());
        assert!(entropy_score(&[f64::NAN, 2.0], 1.0).is_err());
    }

    fn stats(conf: &[f64], ent: &[f64]) -> OutputStatistics {
        OutputStatistics::from_values((0..conf.len()).collect(), conf.to_vec(), ent.to_vec()).unwrap()
    }

    #[test]
    fn identical_outputs_give_unit_wcps() {
        let s = stats(&[0.3, 1.2, -0.5, 4.0, 2.2], &[0.1, 0.5, 0.2, 0.9, 0.4]);
        let r = privacy_report(&s, &s).unwrap();
        assert_eq!(r.wcps, 1.0);
        assert_eq!(r.ps_c, 1.0);
        assert_eq!(r.ps_e, 1.0);
        assert!(r.sweeps.iter().all(|sw| sw.epsilon.iter().all(|&e| e == 0.0)));
        assert!(vulnerable_samples(&r, &s, &s).iter().all(|v| !v.flagged));
    }

    #[test]
    fn disjoint_ranges_give_near_zero_wcps() {
        let retrained = stats(&[0.1, 0.2, 0.3, 0.4], &[2.0, 2.1, 2.2, 2.3]);
        let unlearned = stats(&[20.0, 20.0, 20.0, 20.0], &[0.01, 0.01, 0.01, 0.01]);
        let r = privacy_report(&retrained, &unlearned).unwrap();
        assert!(r.wcps <= 0.001, "wcps {}", r.wcps);
        assert!(r.wcps <= r.ps_c && r.wcps <= r.ps_e);
    }

    #[test]
    fn empty_outputs_rejected() {
        let empty = stats(&[], &[]);
        let one = stats(&[1.0], &[1.0]);
        assert!(matches!(privacy_report(&empty, &one), Err(Error::Metric(_))));
    }

    #[test]
    fn planted_outlier_is_flagged_first() {
        let conf: Vec<f64> = (0..50).map(|i| 0.5 + (i as f64 * 0.37).sin()).collect();
        let ent: Vec<f64> = (0..50).map(|i| 1.0 + 0.3 * (i as f64 * 0.11).cos()).collect();
        let retrained = stats(&conf, &ent);
        let max = conf.iter().copied().fold(f64::MIN, f64::max);
        let mut planted = conf.clone();
        planted[17] = 10.0 * max;
        let unlearned = stats(&planted, &ent);
        let r = privacy_report(&retrained, &unlearned).unwrap();
        let v = vulnerable_samples(&r, &retrained, &unlearned);
        assert_eq!(v[0].sample_id, 17);
        assert!(v[0].flagged);
        assert!(v.iter().filter(|s| s.flagged).count() <= v.len());
        assert!(v.iter().all(|s| s.flagged == (s.attacked_as == AttackedAs::MemberLike)));
    }
}
