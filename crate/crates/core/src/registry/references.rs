use std::sync::Arc;

use super::{ModelSummary, WorkspaceSpec};
use crate::dataset::ForgetPartition;
use crate::error::Result;
use crate::metrics::accuracy_summary;
use crate::nn::Mlp;
use crate::privacy::{privacy_report, MiaThresholds, OutputStatistics, PrivacyReport};
use crate::repr::elbow_layer;
use crate::train::{train_original, train_retrained, Evaluator, TrainRun};
use crate::unlearn::UnlearnContext;

/// The fixed part of a workspace: data, both reference models, and what
/// every evaluation against them needs.
pub struct References {
    pub partition: ForgetPartition,
    pub original: Arc<Mlp>,
    pub retrained: Arc<Mlp>,
    /// Retrained-model outputs on forget_train.
    pub retrained_forget: OutputStatistics,
    pub mia: MiaThresholds,
    pub elbow_layer: usize,
    /// Subsampling seed for layer similarity.
    pub seed: u64,
}

pub struct ReferenceRuns {
    pub references: References,
    pub original: TrainRun,
    pub retrained: TrainRun,
}

impl References {
    /// Builds the partition and trains the retrained model, then the
    /// original (whose history carries per-epoch WCPS).
    pub fn train(spec: &WorkspaceSpec) -> Result<ReferenceRuns> {
        let arch = spec.arch();
        arch.validate()?;
        let partition = spec.dataset.build_partition()?;
        spec.train.validate(partition.retain_train.len())?;
        let retrained = train_retrained(&partition, &arch, &spec.train, &mut Evaluator::new(&partition))?;
        let original = {
            let mut evaluator = Evaluator::new(&partition).with_wcps(&retrained.model)?;
            train_original(&partition, &arch, &spec.train, &mut evaluator)?
        };
        let references = Self::from_models(spec, partition, original.model.clone(), retrained.model.clone(), None)?;
        Ok(ReferenceRuns {
            references,
            original,
            retrained,
        })
    }

    /// `elbow` skips elbow detection when already known.
    pub fn from_models(spec: &WorkspaceSpec, partition: ForgetPartition, original: Mlp, retrained: Mlp, elbow: Option<usize>) -> Result<Self> {
        let forget = partition.forget_train_set();
        let retrained_forget = OutputStatistics::compute(&retrained, &forget.features, &partition.forget_train)?;
        let mia = MiaThresholds::calibrate(&original, &partition)?;
        let seed = spec.dataset.seed;
        let elbow_layer = match elbow {
            Some(e) => e,
            None => elbow_layer(&original, &retrained, &partition, seed)?,
        };
        Ok(Self {
            partition,
            original: Arc::new(original),
            retrained: Arc::new(retrained),
            retrained_forget,
            mia,
            elbow_layer,
            seed,
        })
    }

    pub fn forget_stats(&self, model: &Mlp) -> Result<OutputStatistics> {
        let forget = self.partition.forget_train_set();
        OutputStatistics::compute(model, &forget.features, &self.partition.forget_train)
    }

    /// Privacy report against the retrained model, with C-MIA and E-MIA.
    pub fn privacy(&self, model: &Mlp) -> Result<PrivacyReport> {
        let mut report = privacy_report(&self.retrained_forget, &self.forget_stats(model)?)?;
        let (c, e) = self.mia.attack(model, &self.partition.forget_train_set())?;
        report.cmia = Some(c);
        report.emia = Some(e);
        Ok(report)
    }

    pub fn summarize(&self, model: &Mlp, rt_seconds: f64) -> Result<ModelSummary> {
        let acc = accuracy_summary(model, &self.partition)?;
        let wcps = privacy_report(&self.retrained_forget, &self.forget_stats(model)?)?.wcps;
        Ok(ModelSummary {
            ua: acc.ua,
            ra: acc.ra,
            tua: acc.tua,
            tra: acc.tra,
            rt_seconds,
            wcps,
        })
    }

    /// Per-epoch accuracy and WCPS.
    pub fn evaluator(&self) -> Result<Evaluator<'_>> {
        Evaluator::new(&self.partition).with_wcps(&self.retrained)
    }

    pub fn context<'a>(&'a self, base: &'a Mlp) -> UnlearnContext<'a> {
        UnlearnContext {
            base,
            partition: &self.partition,
            original: &self.original,
            elbow_layer: Some(self.elbow_layer),
        }
    }
}
