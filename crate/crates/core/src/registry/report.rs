use serde::{Deserialize, Serialize};

use super::References;
use crate::dataset::Split;
use crate::error::Result;
use crate::metrics::{accuracy_summary, class_accuracy_diff, prediction_matrix, AccuracySummary, ClassAccuracyDiff, PredictionMatrix};
use crate::nn::Mlp;
use crate::privacy::{
    privacy_report, vulnerable_samples_under, AttackDirection, PrivacyReport, SampleVulnerability,
    Statistic, ThresholdSweep, WorstCase,
};
use crate::repr::{embedding_view, layer_similarity_profile, EmbeddingView, LayerSimilarityProfile, Projection};

/// Everything the comparison views show for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelView {
    pub model_id: String,
    pub accuracy: AccuracySummary,
    pub prediction_train: PredictionMatrix,
    pub prediction_test: PredictionMatrix,
    pub layer_similarity: LayerSimilarityProfile,
    pub embedding: EmbeddingView,
    /// Against the workspace's retrained model on forget_train.
    pub privacy: PrivacyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub workspace_id: String,
    pub model_a: String,
    pub model_b: String,
    pub class_diff_train: ClassAccuracyDiff,
    pub class_diff_test: ClassAccuracyDiff,
    pub a: ModelView,
    pub b: ModelView,
}

impl ComparisonReport {
    /// The same comparison seen from the other side: A and B trade places
    /// and every difference changes sign.
    pub fn swapped(self) -> Self {
        fn flip(d: ClassAccuracyDiff) -> ClassAccuracyDiff {
            ClassAccuracyDiff {
                split: d.split,
                diff: d.diff.iter().map(|v| -v).collect(),
                retain_avg_diff: -d.retain_avg_diff,
                acc_a: d.acc_b,
                acc_b: d.acc_a,
            }
        }
        Self {
            workspace_id: self.workspace_id,
            model_a: self.model_b,
            model_b: self.model_a,
            class_diff_train: flip(self.class_diff_train),
            class_diff_test: flip(self.class_diff_test),
            a: self.b,
            b: self.a,
        }
    }

    /// `<a>__<b>.json` with the ids in lexical order.
    pub fn file_name(a: &str, b: &str) -> String {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        format!("{lo}__{hi}.json")
    }
}

impl References {
    fn view(&self, id: &str, model: &Mlp) -> Result<ModelView> {
        let layers = model.arch.layer_names();
        Ok(ModelView {
            model_id: id.to_string(),
            accuracy: accuracy_summary(model, &self.partition)?,
            prediction_train: prediction_matrix(model, &self.partition.train)?,
            prediction_test: prediction_matrix(model, &self.partition.test)?,
            layer_similarity: layer_similarity_profile(model, &self.original, &self.retrained, &self.partition, &layers, self.seed)?,
            embedding: embedding_view(model, &self.partition, Projection::Pca)?,
            privacy: self.privacy(model)?,
        })
    }

    pub(crate) fn compare(&self, workspace_id: &str, (a_id, a): (&str, &Mlp), (b_id, b): (&str, &Mlp)) -> Result<ComparisonReport> {
        Ok(ComparisonReport {
            workspace_id: workspace_id.to_string(),
            model_a: a_id.to_string(),
            model_b: b_id.to_string(),
            class_diff_train: class_accuracy_diff(a, b, &self.partition, Split::Train)?,
            class_diff_test: class_accuracy_diff(a, b, &self.partition, Split::Test)?,
            a: self.view(a_id, a)?,
            b: self.view(b_id, b)?,
        })
    }

    pub(crate) fn attack(&self, model_id: &str, model: &Mlp, statistic: Statistic, direction: AttackDirection) -> Result<AttackDetail> {
        let unlearned = self.forget_stats(model)?;
        let report = privacy_report(&self.retrained_forget, &unlearned)?;
        let sweep = report.sweep(statistic, direction).clone();
        let k = sweep.strongest_index();
        let rule = WorstCase {
            statistic,
            direction,
            threshold_index: k,
            threshold: sweep.thresholds[k],
        };
        Ok(AttackDetail {
            model_id: model_id.to_string(),
            statistic,
            direction,
            privacy_score: sweep.privacy_score[k],
            strongest: rule,
            worst_case: report.worst_case,
            wcps: report.wcps,
            sample_ids: unlearned.sample_ids.clone(),
            retrained_values: self.retrained_forget.values(statistic).to_vec(),
            unlearned_values: unlearned.values(statistic).to_vec(),
            vulnerable: vulnerable_samples_under(rule, &self.retrained_forget, &unlearned),
            sweep,
        })
    }
}

/// One statistic/direction of the attack, with per-sample values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackDetail {
    pub model_id: String,
    pub statistic: Statistic,
    pub direction: AttackDirection,
    pub sweep: ThresholdSweep,
    /// Minimum PS of this sweep and where it is attained.
    pub privacy_score: f64,
    pub strongest: WorstCase,
    /// Worst case over all four sweeps, as in the privacy report.
    pub worst_case: WorstCase,
    pub wcps: f64,
    pub sample_ids: Vec<usize>,
    pub retrained_values: Vec<f64>,
    pub unlearned_values: Vec<f64>,
    /// Ranked under the `strongest` rule of this sweep.
    pub vulnerable: Vec<SampleVulnerability>,
}
