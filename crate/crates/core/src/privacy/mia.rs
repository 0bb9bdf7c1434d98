//! Standard threshold membership-inference attacks (C-MIA on the raw
//! probability of the true class, E-MIA on raw entropy), calibrated on the
//! original model.

use serde::{Deserialize, Serialize};

use super::entropy_of_log_probs;
use crate::dataset::{ForgetPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{log_softmax, softmax, Mlp};

/// Which side of the calibrated threshold counts as "member".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemberSide {
    /// `value ≥ τ` ⇒ member (confidence-style).
    AtOrAbove,
    /// `value ≤ τ` ⇒ member (entropy-style).
    AtOrBelow,
}

impl MemberSide {
    fn is_member(self, value: f64, tau: f64) -> bool {
        match self {
            MemberSide::AtOrAbove => value >= tau,
            MemberSide::AtOrBelow => value <= tau,
        }
    }
}

/// Softmax probability of each row's labeled class.
pub fn raw_true_class_probability(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != logits.rows() {
        return Err(Error::argument(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            softmax(row)?
                .get(y)
                .copied()
                .ok_or_else(|| Error::argument(format!("label {y} out of range")))
        })
        .collect()
}

/// Entropy at temperature 1.
pub fn raw_entropy(logits: &Matrix) -> Result<Vec<f64>> {
    logits
        .iter_rows()
        .map(|row| {
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric("NaN logit".into()));
            }
            Ok(entropy_of_log_probs(&log_softmax(row)))
        })
        .collect()
}

/// Threshold maximizing balanced member/non-member accuracy. Candidates are
/// the observed values; ties go to the candidate seen first in ascending
/// order. All-equal inputs yield that common value.
pub fn calibrate_member_threshold(members: &[f64], nonmembers: &[f64], side: MemberSide) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Metric("MIA calibration needs members and non-members".into()));
    }
    let mut candidates: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    if candidates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite calibration value".into()));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let (nm, nn) = (members.len() as f64, nonmembers.len() as f64);
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &tau in &candidates {
        let tpr = members.iter().filter(|&&v| side.is_member(v, tau)).count() as f64 / nm;
        let tnr = nonmembers.iter().filter(|&&v| !side.is_member(v, tau)).count() as f64 / nn;
        let balanced = 0.5 * (tpr + tnr);
        if balanced > best.0 {
            best = (balanced, tau);
        }
    }
    Ok(best.1)
}

fn nonmember_fraction(values: &[f64], tau: f64, side: MemberSide) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Metric("no forget-class samples to attack".into()));
    }
    Ok(values.iter().filter(|&&v| !side.is_member(v, tau)).count() as f64 / values.len() as f64)
}

/// Share of forget-class samples the confidence attack calls non-members
/// (`p_y < τ`). `members`/`nonmembers` are raw true-class probabilities of
/// the original model on its train and held-out data.
pub fn cmia(members: &[f64], nonmembers: &[f64], forget: &[f64]) -> Result<f64> {
    let tau = calibrate_member_threshold(members, nonmembers, MemberSide::AtOrAbove)?;
    nonmember_fraction(forget, tau, MemberSide::AtOrAbove)
}

/// Share of forget-class samples the entropy attack calls non-members
/// (`H > τ`).
pub fn emia(members: &[f64], nonmembers: &[f64], forget: &[f64]) -> Result<f64> {
    let tau = calibrate_member_threshold(members, nonmembers, MemberSide::AtOrBelow)?;
    nonmember_fraction(forget, tau, MemberSide::AtOrBelow)
}

/// Both attack thresholds, calibrated once on the original model with
/// retain_train as members and retain_test as non-members.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaThresholds {
    pub confidence: f64,
    pub entropy: f64,
}

impl MiaThresholds {
    pub fn calibrate(original: &Mlp, p: &ForgetPartition) -> Result<Self> {
        let (train, test) = (p.retain_train_set(), p.retain_test_set());
        let members = original.logits(&train.features)?;
        let nonmembers = original.logits(&test.features)?;
        Ok(Self {
            confidence: calibrate_member_threshold(
                &raw_true_class_probability(&members, &train.labels)?,
                &raw_true_class_probability(&nonmembers, &test.labels)?,
                MemberSide::AtOrAbove,
            )?,
            entropy: calibrate_member_threshold(&raw_entropy(&members)?, &raw_entropy(&nonmembers)?, MemberSide::AtOrBelow)?,
        })
    }

    /// `(C-MIA, E-MIA)` of `model` on labeled forget-class samples.
    pub fn attack(&self, model: &Mlp, forget: &LabeledDataset) -> Result<(f64, f64)> {
        let logits = model.logits(&forget.features)?;
        Ok((
            nonmember_fraction(
                &raw_true_class_probability(&logits, &forget.labels)?,
                self.confidence,
                MemberSide::AtOrAbove,
            )?,
            nonmember_fraction(&raw_entropy(&logits)?, self.entropy, MemberSide::AtOrBelow)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_separates_clean_split() {
        let tau = calibrate_member_threshold(&[0.9, 0.95, 0.99], &[0.5, 0.6], MemberSide::AtOrAbove).unwrap();
        assert_eq!(tau, 0.9);
        let tau = calibrate_member_threshold(&[0.01, 0.02], &[1.0, 2.0], MemberSide::AtOrBelow).unwrap();
        assert_eq!(tau, 0.02);
    }

    #[test]
    fn degenerate_calibration_uses_common_value() {
        let tau = calibrate_member_threshold(&[0.7, 0.7], &[0.7], MemberSide::AtOrAbove).unwrap();
        assert_eq!(tau, 0.7);
        assert_eq!(cmia(&[0.7], &[0.7], &[0.7, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn uniform_forget_outputs_are_nonmembers() {
        let n = 10;
        let uniform = Matrix::zeros(5, n);
        let p = raw_true_class_probability(&uniform, &[0, 3, 9, 1, 2]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert_eq!(cmia(&[0.99, 0.97], &[0.9, 0.5], &p).unwrap(), 1.0);
        let h = raw_entropy(&uniform).unwrap();
        assert_eq!(emia(&[0.01, 0.02], &[0.3, 0.5], &h).unwrap(), 1.0);
    }

    #[test]
    fn peaked_forget_outputs_are_members() {
        let mut peaked = Matrix::zeros(4, 3);
        for r in 0..4 {
            peaked.set(r, 0, 1e4);
        }
        let h = raw_entropy(&peaked).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert_eq!(emia(&[0.01, 0.02], &[0.3, 0.5], &h).unwrap(), 0.0);
    }

    #[test]
    fn confident_misclassification_reads_as_nonmember() {
        let mut logits = Matrix::zeros(2, 3);
        logits.set(0, 1, 50.0);
        logits.set(1, 0, 50.0);
        let p = raw_true_class_probability(&logits, &[0, 0]).unwrap();
        assert!(p[0] < 1e-20 && p[1] > 1.0 - 1e-15);
        assert_eq!(cmia(&[0.99, 0.98], &[0.6, 0.5], &p).unwrap(), 0.5);
        let h = raw_entropy(&logits).unwrap();
        assert_eq!(emia(&[0.01, 0.02], &[0.3, 0.5], &h).unwrap(), 0.0);
        assert!(raw_true_class_probability(&logits, &[0]).is_err());
        assert!(raw_true_class_probability(&logits, &[0, 3]).is_err());
    }
}
