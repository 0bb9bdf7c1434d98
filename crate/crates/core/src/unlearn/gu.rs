//! Guided unlearning: Warm-Up, then alternating Forgetting and Recovery.

use super::{UnlearnConfig, UnlearnOutcome};
use crate::dataset::ForgetPartition;
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::nn::{Direction, Mlp};
use crate::rng;
use crate::train::{epoch_order, sgd_epoch, EpochObserver, Stopwatch, TrainingSet};

/// Phase switches, mainly for ablations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuOptions {
    pub forgetting: bool,
    pub recovery: bool,
    pub forget_lr: f64,
}

impl GuOptions {
    pub fn from_config(cfg: &UnlearnConfig) -> Self {
        Self {
            forgetting: cfg.param_or("forgetting", 1.0) != 0.0,
            recovery: cfg.param_or("recovery", 1.0) != 0.0,
            forget_lr: cfg.param_or("forget_lr", cfg.lr),
        }
    }
}

/// Per forget sample, the original model's top class other than the true one.
pub fn guided_labels(original: &Mlp, p: &ForgetPartition) -> Result<Vec<usize>> {
    let forget = p.forget_train_set();
    if forget.is_empty() {
        return Ok(Vec::new());
    }
    let logits = original.logits(&forget.features)?;
    Ok(logits
        .iter_rows()
        .zip(&forget.labels)
        .map(|(row, &y)| {
            let mut masked = row.to_vec();
            masked[y] = f64::NEG_INFINITY;
            argmax(&masked)
        })
        .collect())
}

fn failed(epoch: usize, e: impl std::fmt::Display) -> Error {
    Error::Method {
        method: "gu".into(),
        epoch,
        message: e.to_string(),
    }
}

fn descent_epoch(model: &mut Mlp, data: &TrainingSet, cfg: &UnlearnConfig, r: &mut rng::Rng, epoch: usize) -> Result<f64> {
    let order = epoch_order(data.len(), true, r);
    let loss = sgd_epoch(model, data, cfg.lr, cfg.batch_size, &order, Direction::Descent, None).map_err(|e| failed(epoch, e))?;
    if !loss.is_finite() {
        return Err(failed(epoch, "non-finite loss"));
    }
    Ok(loss)
}

/// Warm-Up re-initializes every layer after `elbow` from a seeded fresh
/// init and runs one descent epoch on retain_train (reported to the
/// observer as epoch 0). Each later epoch is one full-batch ascent step on
/// the forget set followed by one descent epoch on retain_train plus the
/// forget set under guided labels.
pub fn unlearn_gu(
    base: &Mlp,
    p: &ForgetPartition,
    cfg: &UnlearnConfig,
    original: &Mlp,
    elbow: usize,
    observer: &mut dyn EpochObserver,
) -> Result<UnlearnOutcome> {
    if elbow + 1 >= base.layers.len() {
        return Err(Error::argument(format!(
            "elbow layer {elbow} must precede the last layer ({})",
            base.layers.len() - 1
        )));
    }
    let opts = GuOptions::from_config(cfg);
    let retain = TrainingSet::from_dataset(&p.retain_train_set());
    if retain.is_empty() {
        return Err(Error::argument("gu: retain set is empty"));
    }
    let forget = TrainingSet::from_dataset(&p.forget_train_set());
    let guided = TrainingSet {
        features: forget.features.clone(),
        labels: guided_labels(original, p)?,
    };
    let recovery_set = retain.concat(&guided);

    let mut r = rng::rng(rng::derive(cfg.seed, &[rng::tag("shuffle")]));
    let mut clock = Stopwatch::default();
    let mut model = base.clone();

    let warm_loss = clock.time(|| -> Result<f64> {
        model.reinit_from(elbow + 1, rng::derive(cfg.seed, &[rng::tag("gu-reinit")]))?;
        descent_epoch(&mut model, &retain, cfg, &mut r, 0)
    })?;
    let warmup = observer.observe(0, &model, warm_loss)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = clock.time(|| -> Result<f64> {
            let mut loss = f64::NAN;
            if opts.forgetting && !forget.is_empty() {
                let (l, grads) = model.loss_and_grads(&forget.features, &forget.labels)?;
                if !l.is_finite() || l > super::GA_LOSS_LIMIT {
                    return Err(failed(epoch, format!("forget loss {l:.3e} exceeds {:e}", super::GA_LOSS_LIMIT)));
                }
                model.sgd_step(&grads, opts.forget_lr, Direction::Ascent).map_err(|e| failed(epoch, e))?;
                loss = l;
            }
            if opts.recovery {
                loss = descent_epoch(&mut model, &recovery_set, cfg, &mut r, epoch)?;
            }
            Ok(if loss.is_nan() { 0.0 } else { loss })
        })?;
        history.push(observer.observe(epoch, &model, loss)?);
    }
    Ok(UnlearnOutcome {
        model,
        history,
        rt_seconds: clock.seconds(),
        warmup: Some(warmup),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_blobs, partition, split};
    use crate::nn::ArchitectureSpec;
    use crate::train::{loss_only, EpochRecord};
    use crate::unlearn::Method;

    fn setup() -> (ForgetPartition, Mlp) {
        let ds = generate_blobs(5, 4, 30, 6, 0.8).unwrap();
        let (train, test) = split(&ds, 0.25, 5).unwrap();
        let p = partition(train, test, 2).unwrap();
        let base = Mlp::init(&ArchitectureSpec::default_for(6, 4), 3).unwrap();
        (p, base)
    }

    #[test]
    fn guided_labels_skip_true_class() {
        let (p, base) = setup();
        let labels = guided_labels(&base, &p).unwrap();
        assert_eq!(labels.len(), p.forget_train.len());
        assert!(labels.iter().all(|&l| l != 2 && l < 4));
    }

    #[test]
    fn reinit_keeps_layers_up_to_elbow() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Gu, 1, 0.05, 16, 1);
        let mut snapshot = None;
        let mut obs = |epoch: usize, m: &Mlp, loss: f64| -> Result<EpochRecord> {
            if epoch == 0 {
                snapshot = Some(m.clone());
            }
            loss_only().observe(epoch, m, loss)
        };
        let out = unlearn_gu(&base, &p, &cfg, &base, 0, &mut obs).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.warmup.as_ref().unwrap().epoch, 0);
        // Directly after re-initialization (tiny lr keeps the warm-up step negligible).
        let mut m = base.clone();
        m.reinit_from(1, rng::derive(1, &[rng::tag("gu-reinit")])).unwrap();
        assert_eq!(m.layers[0], base.layers[0]);
        assert_ne!(m.layers[1], base.layers[1]);
        assert_ne!(m.layers[2], base.layers[2]);
        assert!(snapshot.is_some());
    }

    #[test]
    fn elbow_must_precede_logits() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Gu, 1, 0.05, 16, 1);
        assert!(unlearn_gu(&base, &p, &cfg, &base, 2, &mut loss_only()).is_err());
    }

    #[test]
    fn disabled_phases_leave_warm_model() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Gu, 2, 0.05, 16, 1)
            .with_param("forgetting", 0.0)
            .with_param("recovery", 0.0);
        let mut warm = None;
        let mut obs = |epoch: usize, m: &Mlp, loss: f64| -> Result<EpochRecord> {
            if epoch == 0 {
                warm = Some(m.clone());
            }
            loss_only().observe(epoch, m, loss)
        };
        let out = unlearn_gu(&base, &p, &cfg, &base, 1, &mut obs).unwrap();
        assert_eq!(Some(out.model), warm);
    }
}
