use rand::Rng as _;

use super::{UnlearnConfig, UnlearnOutcome};
use crate::dataset::ForgetPartition;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{kl_student_teacher, log_softmax_rows, Direction, Mlp};
use crate::rng;
use crate::train::{apply, epoch_order, sgd_epoch, EpochObserver, EpochRecord, Stopwatch, TrainingSet};

/// Ascent aborts once a batch loss exceeds this.
pub const GA_LOSS_LIMIT: f64 = 1e6;

fn shuffle_rng(cfg: &UnlearnConfig) -> rng::Rng {
    rng::rng(rng::derive(cfg.seed, &[rng::tag("shuffle")]))
}

fn diverged(method: &str, epoch: usize, what: impl Into<String>) -> Error {
    Error::Method {
        method: method.to_string(),
        epoch,
        message: what.into(),
    }
}

/// Descent over `data` for `cfg.epochs` epochs, optionally restricted to
/// `mask`. Shared by FT, RL and SalUn.
fn descent_run(
    method: &str,
    base: &Mlp,
    data: &TrainingSet,
    cfg: &UnlearnConfig,
    mask: Option<&[bool]>,
    observer: &mut dyn EpochObserver,
    clock: &mut Stopwatch,
) -> Result<(Mlp, Vec<EpochRecord>)> {
    if data.is_empty() {
        return Err(Error::argument(format!("{method}: nothing to train on")));
    }
    let mut model = base.clone();
    let mut r = shuffle_rng(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = clock.time(|| {
            let order = epoch_order(data.len(), true, &mut r);
            sgd_epoch(&mut model, data, cfg.lr, cfg.batch_size, &order, Direction::Descent, mask)
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
    Ok((model, history))
}

/// Fine-tuning on the retain set only.
pub fn unlearn_ft(base: &Mlp, p: &ForgetPartition, cfg: &UnlearnConfig, observer: &mut dyn EpochObserver) -> Result<UnlearnOutcome> {
    let retain = TrainingSet::from_dataset(&p.retain_train_set());
    let mut clock = Stopwatch::default();
    let (model, history) = descent_run("ft", base, &retain, cfg, None, observer, &mut clock)?;
    Ok(UnlearnOutcome {
        model,
        history,
        rt_seconds: clock.seconds(),
        warmup: None,
    })
}

/// One random label per forget sample, never its true label, drawn once
/// from a stream keyed by `seed`.
pub fn random_labels(true_labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::argument("random relabeling needs at least 2 classes"));
    }
    let mut r = rng::rng(rng::derive(seed, &[rng::tag("relabel")]));
    Ok(true_labels
        .iter()
        .map(|&y| {
            let k = r.random_range(0..n_classes - 1);
            if k >= y {
                k + 1
            } else {
                k
            }
        })
        .collect())
}

fn relabeled_training_set(p: &ForgetPartition, cfg: &UnlearnConfig) -> Result<TrainingSet> {
    let forget = p.forget_train_set();
    let labels = random_labels(&forget.labels, p.n_classes(), cfg.seed)?;
    let relabeled = TrainingSet {
        features: forget.features,
        labels,
    };
    Ok(TrainingSet::from_dataset(&p.retain_train_set()).concat(&relabeled))
}

/// Random labeling: descent on retain ∪ randomly relabeled forget samples.
pub fn unlearn_rl(base: &Mlp, p: &ForgetPartition, cfg: &UnlearnConfig, observer: &mut dyn EpochObserver) -> Result<UnlearnOutcome> {
    let data = relabeled_training_set(p, cfg)?;
    let mut clock = Stopwatch::default();
    let (model, history) = descent_run("rl", base, &data, cfg, None, observer, &mut clock)?;
    Ok(UnlearnOutcome {
        model,
        history,
        rt_seconds: clock.seconds(),
        warmup: None,
    })
}

/// Gradient ascent on forget-set batches.
pub fn unlearn_ga(base: &Mlp, p: &ForgetPartition, cfg: &UnlearnConfig, observer: &mut dyn EpochObserver) -> Result<UnlearnOutcome> {
    let forget = TrainingSet::from_dataset(&p.forget_train_set());
    if forget.is_empty() {
        return Err(Error::argument("ga: forget set is empty"));
    }
    let mut model = base.clone();
    let mut r = shuffle_rng(cfg);
    let mut clock = Stopwatch::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = clock.time(|| -> Result<f64> {
            let order = epoch_order(forget.len(), true, &mut r);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let (x, y) = forget.batch(chunk);
                let (loss, grads) = model.loss_and_grads(&x, &y)?;
                if !loss.is_finite() || loss > GA_LOSS_LIMIT {
                    return Err(diverged("ga", epoch, format!("forget loss {loss:.3e} exceeds {GA_LOSS_LIMIT:e}")));
                }
                model
                    .sgd_step(&grads, cfg.lr, Direction::Ascent)
                    .map_err(|e| diverged("ga", epoch, e.to_string()))?;
                total += loss;
                batches += 1;
            }
            Ok(total / batches as f64)
        })?;
        history.push(observer.observe(epoch, &model, loss)?);
    }
    Ok(UnlearnOutcome {
        model,
        history,
        rt_seconds: clock.seconds(),
        warmup: None,
    })
}

/// Teacher–student unlearning. Each epoch first runs ascent on
/// `KL(student ‖ teacher)` over forget batches (for the first
/// `forget_epochs` epochs), then descent on `CE + distill_weight · KL` over
/// retain batches. The teacher is a frozen copy of `base`.
///
/// Parameters: `distill_weight` (default 1), `forget_epochs` (default: all
/// epochs; 0 disables forget steps), `forget_lr` (default `cfg.lr`).
pub fn unlearn_scrub(base: &Mlp, p: &ForgetPartition, cfg: &UnlearnConfig, observer: &mut dyn EpochObserver) -> Result<UnlearnOutcome> {
    let weight = cfg.param_or("distill_weight", 1.0);
    let forget_epochs = cfg.param("forget_epochs").map_or(cfg.epochs, |v| v as usize);
    let forget_lr = cfg.param_or("forget_lr", cfg.lr);

    let retain = TrainingSet::from_dataset(&p.retain_train_set());
    let forget = TrainingSet::from_dataset(&p.forget_train_set());
    if retain.is_empty() {
        return Err(Error::argument("scrub: retain set is empty"));
    }
    let teacher_retain = log_softmax_rows(&base.logits(&retain.features)?);
    let teacher_forget = log_softmax_rows(&base.logits(&forget.features)?);

    let mut model = base.clone();
    let mut retain_rng = shuffle_rng(cfg);
    let mut forget_rng = rng::rng(rng::derive(cfg.seed, &[rng::tag("scrub-forget")]));
    let mut clock = Stopwatch::default();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let loss = clock.time(|| -> Result<f64> {
            if epoch <= forget_epochs && !forget.is_empty() {
                let order = epoch_order(forget.len(), true, &mut forget_rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let x = forget.features.select_rows(chunk);
                    let t = teacher_forget.select_rows(chunk);
                    let (kl, grads) = model.objective_and_grads(&x, |logits| Ok(kl_student_teacher(logits, &t)))?;
                    if !kl.is_finite() || kl > GA_LOSS_LIMIT {
                        return Err(diverged("scrub", epoch, format!("forget KL {kl:.3e} exceeds {GA_LOSS_LIMIT:e}")));
                    }
                    apply(&mut model, &grads, forget_lr, Direction::Ascent, None)
                        .map_err(|e| diverged("scrub", epoch, e.to_string()))?;
                }
            }
            let order = epoch_order(retain.len(), true, &mut retain_rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let (x, y) = retain.batch(chunk);
                let (loss, grads) = if weight == 0.0 {
                    model.loss_and_grads(&x, &y)?
                } else {
                    let t = teacher_retain.select_rows(chunk);
                    model.objective_and_grads(&x, |logits| {
                        let (ce, mut g) = crate::nn::cross_entropy(logits, &y);
                        let (kl, gk) = kl_student_teacher(logits, &t);
                        add_scaled(&mut g, &gk, weight);
                        Ok((ce + weight * kl, g))
                    })?
                };
                if !loss.is_finite() {
                    return Err(diverged("scrub", epoch, "non-finite retain loss"));
                }
                apply(&mut model, &grads, cfg.lr, Direction::Descent, None)
                    .map_err(|e| diverged("scrub", epoch, e.to_string()))?;
                total += loss;
                batches += 1;
            }
            Ok(total / batches as f64)
        })?;
        history.push(observer.observe(epoch, &model, loss)?);
    }
    Ok(UnlearnOutcome {
        model,
        history,
        rt_seconds: clock.seconds(),
        warmup: None,
    })
}

fn add_scaled(a: &mut Matrix, b: &Matrix, c: f64) {
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += c * y;
    }
}

/// Top `⌈fraction · n_params⌉` parameters by `|∂ CE_forget / ∂θ|` on `base`,
/// in [`Mlp::params_flat`] order. Ties keep the lower index.
pub fn saliency_mask(base: &Mlp, p: &ForgetPartition, fraction: f64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::argument("mask_fraction must lie in (0, 1]"));
    }
    let forget = p.forget_train_set();
    let (_, grads) = base.loss_and_grads(&forget.features, &forget.labels)?;
    let saliency: Vec<f64> = grads.flat().into_iter().map(f64::abs).collect();
    let n = saliency.len();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Random labeling restricted to the most forget-salient parameters.
pub fn unlearn_salun(base: &Mlp, p: &ForgetPartition, cfg: &UnlearnConfig, observer: &mut dyn EpochObserver) -> Result<UnlearnOutcome> {
    let fraction = cfg.param_or("mask_fraction", 0.5);
    let mut clock = Stopwatch::default();
    let mask = clock.time(|| saliency_mask(base, p, fraction))?;
    let data = relabeled_training_set(p, cfg)?;
    let (model, history) = descent_run("salun", base, &data, cfg, Some(&mask), observer, &mut clock)?;
    Ok(UnlearnOutcome {
        model,
        history,
        rt_seconds: clock.seconds(),
        warmup: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_blobs, partition, split};
    use crate::nn::ArchitectureSpec;
    use crate::train::loss_only;
    use crate::unlearn::Method;

    fn setup() -> (ForgetPartition, Mlp) {
        let ds = generate_blobs(3, 4, 40, 5, 0.8).unwrap();
        let (train, test) = split(&ds, 0.25, 3).unwrap();
        let p = partition(train, test, 1).unwrap();
        let arch = ArchitectureSpec::default_for(5, 4);
        let init = Mlp::init(&arch, 9).unwrap();
        let cfg = crate::train::TrainConfig {
            epochs: 15,
            lr: 0.05,
            batch_size: 16,
            seed: 1,
            shuffle: true,
        };
        let run = crate::train::train_model(&init, &TrainingSet::from_dataset(&p.train), &cfg, &mut loss_only()).unwrap();
        (p, run.model)
    }

    #[test]
    fn random_labels_are_deterministic_and_wrong() {
        let truth: Vec<usize> = (0..200).map(|i| i % 5).collect();
        let a = random_labels(&truth, 5, 3).unwrap();
        assert_eq!(a, random_labels(&truth, 5, 3).unwrap());
        assert!(a.iter().zip(&truth).all(|(x, y)| x != y && *x < 5));
        assert!(random_labels(&truth, 1, 3).is_err());
    }

    #[test]
    fn tiny_lr_barely_moves_ft() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Ft, 1, 1e-12, 16, 0);
        let out = unlearn_ft(&base, &p, &cfg, &mut loss_only()).unwrap();
        for (a, b) in out.model.params_flat().iter().zip(base.params_flat()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn rl_with_empty_forget_set_equals_ft() {
        let (mut p, base) = setup();
        p.forget_train.clear();
        let cfg = UnlearnConfig::new(Method::Rl, 2, 0.05, 16, 4);
        let rl = unlearn_rl(&base, &p, &cfg, &mut loss_only()).unwrap();
        let ft = unlearn_ft(&base, &p, &cfg, &mut loss_only()).unwrap();
        assert_eq!(rl.model, ft.model);
    }

    #[test]
    fn one_ascent_step_increases_forget_loss() {
        let (p, base) = setup();
        let forget = p.forget_train_set();
        let before = base.loss(&forget.features, &forget.labels).unwrap();
        let cfg = UnlearnConfig::new(Method::Ga, 1, 1e-3, forget.len(), 0);
        let out = unlearn_ga(&base, &p, &cfg, &mut loss_only()).unwrap();
        let after = out.model.loss(&forget.features, &forget.labels).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn ga_explosion_aborts_with_epoch() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Ga, 50, 50.0, 4, 0);
        match unlearn_ga(&base, &p, &cfg, &mut loss_only()) {
            Err(Error::Method { method, epoch, .. }) => {
                assert_eq!(method, "ga");
                assert!(epoch >= 1);
            }
            other => panic!("expected abort, got {:?}", other.map(|o| o.history.len())),
        }
    }

    #[test]
    fn scrub_degenerates_to_ft() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Scrub, 3, 0.05, 16, 8)
            .with_param("distill_weight", 0.0)
            .with_param("forget_epochs", 0.0);
        let scrub = unlearn_scrub(&base, &p, &cfg, &mut loss_only()).unwrap();
        let ft = unlearn_ft(&base, &p, &UnlearnConfig::new(Method::Ft, 3, 0.05, 16, 8), &mut loss_only()).unwrap();
        assert_eq!(scrub.model.params_flat(), ft.model.params_flat());
    }

    #[test]
    fn salun_mask_contract() {
        let (p, base) = setup();
        let n = base.n_params();
        let mask = saliency_mask(&base, &p, 0.3).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), (0.3 * n as f64).ceil() as usize);
        assert!(saliency_mask(&base, &p, 0.0).is_err());
        assert!(saliency_mask(&base, &p, 1.1).is_err());

        let cfg = UnlearnConfig::new(Method::Salun, 2, 0.05, 16, 5).with_param("mask_fraction", 0.3);
        let out = unlearn_salun(&base, &p, &cfg, &mut loss_only()).unwrap();
        for ((a, b), m) in out.model.params_flat().iter().zip(base.params_flat()).zip(&mask) {
            if !m {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn full_mask_salun_is_rl() {
        let (p, base) = setup();
        let cfg = UnlearnConfig::new(Method::Salun, 2, 0.05, 16, 5).with_param("mask_fraction", 1.0);
        let salun = unlearn_salun(&base, &p, &cfg, &mut loss_only()).unwrap();
        let mut rl_cfg = cfg.clone();
        rl_cfg.method = "rl".into();
        rl_cfg.method_params.clear();
        let rl = unlearn_rl(&base, &p, &rl_cfg, &mut loss_only()).unwrap();
        let bits = |m: &Mlp| m.params_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&salun.model), bits(&rl.model));
    }
}
