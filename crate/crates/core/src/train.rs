//! Seeded mini-batch SGD and the two reference models (original, retrained).

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ForgetPartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::accuracy_summary;
use crate::nn::{ArchitectureSpec, Direction, Gradients, Mlp};
use crate::privacy::{privacy_report, OutputStatistics};
use crate::rng::{self, Rng};

/// Missing fields take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.05,
            batch_size: 32,
            seed: 7,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::argument("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::argument("lr must be positive and finite"));
        }
        if self.batch_size < 1 || self.batch_size > n_train {
            return Err(Error::argument(format!(
                "batch_size must lie in 1..={n_train}, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ua: f64,
    pub ra: f64,
    pub tua: f64,
    pub tra: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wcps: Option<f64>,
}

/// Called after every epoch, outside the timed region.
pub trait EpochObserver {
    fn observe(&mut self, epoch: usize, model: &Mlp, loss: f64) -> Result<EpochRecord>;
}

impl<F> EpochObserver for F
where
    F: FnMut(usize, &Mlp, f64) -> Result<EpochRecord>,
{
    fn observe(&mut self, epoch: usize, model: &Mlp, loss: f64) -> Result<EpochRecord> {
        self(epoch, model, loss)
    }
}

type ProgressFn<'a> = Box<dyn FnMut(&EpochRecord) + Send + 'a>;

/// Standard observer: accuracy summary per epoch, optionally WCPS against
/// the retrained model's forget-class outputs, optionally a progress sink.
pub struct Evaluator<'a> {
    partition: &'a ForgetPartition,
    retrained_forget: Option<OutputStatistics>,
    progress: Option<ProgressFn<'a>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(partition: &'a ForgetPartition) -> Self {
        Self {
            partition,
            retrained_forget: None,
            progress: None,
        }
    }

    /// Enables per-epoch WCPS against `retrained`.
    pub fn with_wcps(mut self, retrained: &Mlp) -> Result<Self> {
        let forget = self.partition.forget_train_set();
        self.retrained_forget = Some(OutputStatistics::compute(retrained, &forget.features, &self.partition.forget_train)?);
        Ok(self)
    }

    pub fn with_progress(mut self, f: impl FnMut(&EpochRecord) + Send + 'a) -> Self {
        self.progress = Some(Box::new(f));
        self
    }
}

impl EpochObserver for Evaluator<'_> {
    fn observe(&mut self, epoch: usize, model: &Mlp, loss: f64) -> Result<EpochRecord> {
        let acc = accuracy_summary(model, self.partition)?;
        let wcps = match &self.retrained_forget {
            Some(reference) => {
                let forget = self.partition.forget_train_set();
                let stats = OutputStatistics::compute(model, &forget.features, &self.partition.forget_train)?;
                Some(privacy_report(reference, &stats)?.wcps)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            ua: acc.ua,
            ra: acc.ra,
            tua: acc.tua,
            tra: acc.tra,
            loss,
            wcps,
        };
        if let Some(progress) = &mut self.progress {
            progress(&record);
        }
        Ok(record)
    }
}

/// Observer that records only the loss; used where accuracy is irrelevant.
pub fn loss_only() -> impl EpochObserver {
    |epoch: usize, _: &Mlp, loss: f64| {
        Ok(EpochRecord {
            epoch,
            ua: 0.0,
            ra: 0.0,
            tua: 0.0,
            tra: 0.0,
            loss,
            wcps: None,
        })
    }
}

/// Accumulates time spent in optimization only.
#[derive(Default, Debug)]
pub struct Stopwatch {
    total: Duration,
}

impl Stopwatch {
    pub fn time<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.total += start.elapsed();
        out
    }

    pub fn seconds(&self) -> f64 {
        self.total.as_secs_f64()
    }
}

/// Feature rows and labels to optimize over. Labels may differ from the
/// dataset's (random or guided relabeling).
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn from_dataset(data: &LabeledDataset) -> Self {
        Self {
            features: data.features.clone(),
            labels: data.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &TrainingSet) -> TrainingSet {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        TrainingSet {
            features: self.features.vstack(&other.features),
            labels,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Visiting order for one epoch; shuffled with `rng` when requested.
pub fn epoch_order(n: usize, shuffle: bool, r: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(r);
    }
    order
}

/// One pass of cross-entropy SGD over `data`. Returns the mean batch loss.
pub fn sgd_epoch(
    model: &mut Mlp,
    data: &TrainingSet,
    lr: f64,
    batch_size: usize,
    order: &[usize],
    direction: Direction,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let (loss, grads) = model.loss_and_grads(&x, &y)?;
        if !loss.is_finite() {
            return Ok(f64::NAN);
        }
        apply(model, &grads, lr, direction, mask)?;
        total += loss;
        batches += 1;
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}

pub(crate) fn apply(model: &mut Mlp, grads: &Gradients, lr: f64, direction: Direction, mask: Option<&[bool]>) -> Result<()> {
    match mask {
        Some(m) => model.sgd_step_masked(grads, lr, direction, m),
        None => model.sgd_step(grads, lr, direction),
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: Mlp,
    pub history: Vec<EpochRecord>,
    pub rt_seconds: f64,
}

/// Mini-batch SGD with seeded shuffling. `rt_seconds` covers the
/// optimization loop only.
pub fn train_model(init: &Mlp, data: &TrainingSet, cfg: &TrainConfig, observer: &mut dyn EpochObserver) -> Result<TrainRun> {
    if data.is_empty() {
        return Err(Error::argument("training data is empty"));
    }
    cfg.validate(data.len())?;
    let mut model = init.clone();
    let mut r = rng::rng(rng::derive(cfg.seed, &[rng::tag("shuffle")]));
    let mut clock = Stopwatch::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = clock.time(|| {
            let order = epoch_order(data.len(), cfg.shuffle, &mut r);
            sgd_epoch(&mut model, data, cfg.lr, cfg.batch_size, &order, Direction::Descent, None)
        });
        let loss = match loss {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(Error::Numeric(_)) => {
                return Err(Error::Training {
                    epoch,
                    last_finite_epoch: epoch - 1,
                })
            }
            Err(e) => return Err(e),
        };
        history.push(observer.observe(epoch, &model, loss)?);
    }
    Ok(TrainRun {
        model,
        history,
        rt_seconds: clock.seconds(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Original,
    Retrained,
    Unlearned,
    Uploaded,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Original => "original",
            ModelKind::Retrained => "retrained",
            ModelKind::Unlearned => "unlearned",
            ModelKind::Uploaded => "uploaded",
        }
    }
}

/// Init seed for a reference model: independent per kind.
pub fn reference_init_seed(seed: u64, kind: ModelKind) -> u64 {
    rng::derive(seed, &[rng::tag(kind.as_str())])
}

/// Trains on the full train split (forget and retain classes).
pub fn train_original(p: &ForgetPartition, arch: &ArchitectureSpec, cfg: &TrainConfig, observer: &mut dyn EpochObserver) -> Result<TrainRun> {
    let init = Mlp::init(arch, reference_init_seed(cfg.seed, ModelKind::Original))?;
    train_model(&init, &TrainingSet::from_dataset(&p.train), cfg, observer)
}

/// Trains from scratch on retain_train only.
pub fn train_retrained(p: &ForgetPartition, arch: &ArchitectureSpec, cfg: &TrainConfig, observer: &mut dyn EpochObserver) -> Result<TrainRun> {
    let init = Mlp::init(arch, reference_init_seed(cfg.seed, ModelKind::Retrained))?;
    train_model(&init, &TrainingSet::from_dataset(&p.retain_train_set()), cfg, observer)
}
