//! Unlearning procedures and hyperparameter-grid expansion.
//!
//! Built-in method ids are `ft`, `rl`, `ga`, `scrub`, `salun` and `gu`.
//! Extra methods can be registered at runtime through [`MethodRegistry`].

mod gu;
mod methods;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gu::{guided_labels, unlearn_gu, GuOptions};
pub use methods::{random_labels, saliency_mask, unlearn_ft, unlearn_ga, unlearn_rl, unlearn_salun, unlearn_scrub, GA_LOSS_LIMIT};

use crate::dataset::ForgetPartition;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng;
use crate::train::{EpochObserver, EpochRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ft,
    Rl,
    Ga,
    Scrub,
    Salun,
    Gu,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ft, Method::Rl, Method::Ga, Method::Scrub, Method::Salun, Method::Gu];

    pub fn id(self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::Rl => "rl",
            Method::Ga => "ga",
            Method::Scrub => "scrub",
            Method::Salun => "salun",
            Method::Gu => "gu",
        }
    }

    pub fn from_id(id: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.id() == id)
    }

    /// Method-specific parameter names accepted in `method_params`.
    pub fn allowed_params(self) -> &'static [&'static str] {
        match self {
            Method::Ft | Method::Rl | Method::Ga => &[],
            Method::Scrub => &["distill_weight", "forget_epochs", "forget_lr"],
            Method::Salun => &["mask_fraction"],
            Method::Gu => &["elbow_layer", "forget_lr", "forgetting", "recovery"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: String,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub method_params: BTreeMap<String, f64>,
}

impl UnlearnConfig {
    pub fn new(method: Method, epochs: usize, lr: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            method: method.id().to_string(),
            epochs,
            lr,
            batch_size,
            seed,
            method_params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.method_params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.method_params.get(key).copied()
    }

    pub fn param_or(&self, key: &str, default: f64) -> f64 {
        self.param(key).unwrap_or(default)
    }

    /// Generic checks plus per-method parameter validation for built-ins.
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::argument("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::argument("lr must be positive and finite"));
        }
        if self.batch_size < 1 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        let Some(method) = Method::from_id(&self.method) else {
            return Ok(());
        };
        for key in self.method_params.keys() {
            if !method.allowed_params().contains(&key.as_str()) {
                return Err(Error::argument(format!("method `{}` has no parameter `{key}`", self.method)));
            }
        }
        if let Some(f) = self.param("mask_fraction") {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::argument("mask_fraction must lie in (0, 1]"));
            }
        }
        if let Some(w) = self.param("distill_weight") {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::argument("distill_weight must be non-negative"));
            }
        }
        for key in ["forget_lr"] {
            if let Some(v) = self.param(key) {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::argument(format!("{key} must be positive")));
                }
            }
        }
        for key in ["forget_epochs", "elbow_layer"] {
            if let Some(v) = self.param(key) {
                if !(v >= 0.0 && v.fract() == 0.0) {
                    return Err(Error::argument(format!("{key} must be a non-negative integer")));
                }
            }
        }
        Ok(())
    }
}

/// Result of one unlearning run. `rt_seconds` covers optimization only.
#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub model: Mlp,
    /// One record per configured epoch.
    pub history: Vec<EpochRecord>,
    pub rt_seconds: f64,
    /// GU's Warm-Up evaluation, logged as epoch 0.
    pub warmup: Option<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    #[serde(default = "default_base")]
    pub base_model_id: String,
    pub method: String,
    pub epochs: Vec<usize>,
    pub lrs: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub method_params: BTreeMap<String, f64>,
}

fn default_base() -> String {
    "original".into()
}

impl HyperGrid {
    /// Built-in grid per method, sized for the default blob workspace.
    /// GA leans toward a single epoch with large batches and learning rates.
    /// GU's forgetting step uses a much smaller rate than its descent epochs.
    pub fn default_for(method: Method, base_model_id: &str, seed: u64) -> Self {
        let (epochs, lrs, batch_sizes): (Vec<usize>, Vec<f64>, Vec<usize>) = match method {
            Method::Ft => (vec![5, 10, 20], vec![0.05, 0.1, 0.2], vec![32]),
            Method::Rl => (vec![3, 6], vec![0.02, 0.05], vec![32]),
            Method::Ga => (vec![1], vec![0.01, 0.02, 0.05, 0.1, 0.5], vec![32, 64]),
            Method::Scrub => (vec![5, 10], vec![0.05, 0.1], vec![32]),
            Method::Salun => (vec![3, 6], vec![0.02, 0.05], vec![32]),
            Method::Gu => (vec![3, 5, 10], vec![0.02, 0.05, 0.1], vec![32]),
        };
        let mut method_params = BTreeMap::new();
        if method == Method::Gu {
            method_params.insert("forget_lr".to_string(), 0.001);
        }
        Self {
            base_model_id: base_model_id.to_string(),
            method: method.id().to_string(),
            epochs,
            lrs,
            batch_sizes,
            seed,
            method_params,
        }
    }
}

/// Seed of one grid cell, a pure function of the grid seed and the cell.
pub fn grid_cell_seed(grid_seed: u64, epochs: usize, lr: f64, batch_size: usize) -> u64 {
    rng::derive(grid_seed, &[epochs as u64, lr.to_bits(), batch_size as u64])
}

/// Cartesian product in (epochs, lr, batch_size) order.
pub fn expand_grid(grid: &HyperGrid) -> Result<Vec<UnlearnConfig>> {
    if grid.epochs.is_empty() || grid.lrs.is_empty() || grid.batch_sizes.is_empty() {
        return Err(Error::argument("every hyperparameter list must be non-empty"));
    }
    let mut out = Vec::with_capacity(grid.epochs.len() * grid.lrs.len() * grid.batch_sizes.len());
    for &epochs in &grid.epochs {
        for &lr in &grid.lrs {
            for &batch_size in &grid.batch_sizes {
                let cfg = UnlearnConfig {
                    method: grid.method.clone(),
                    epochs,
                    lr,
                    batch_size,
                    seed: grid_cell_seed(grid.seed, epochs, lr, batch_size),
                    method_params: grid.method_params.clone(),
                };
                cfg.validate()?;
                out.push(cfg);
            }
        }
    }
    Ok(out)
}

/// Everything a method may look at.
pub struct UnlearnContext<'a> {
    pub base: &'a Mlp,
    pub partition: &'a ForgetPartition,
    pub original: &'a Mlp,
    /// Elbow layer from the (original, retrained) pair; GU falls back to it
    /// unless `elbow_layer` is set.
    pub elbow_layer: Option<usize>,
}

/// Signature of a user-supplied method: `(base, partition, cfg)` to
/// `(model, history)`.
pub type CustomHook = dyn Fn(&Mlp, &ForgetPartition, &UnlearnConfig) -> Result<(Mlp, Vec<EpochRecord>)> + Send + Sync;

#[derive(Clone, Default)]
pub struct MethodRegistry {
    custom: BTreeMap<String, Arc<CustomHook>>,
}

impl std::fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MethodRegistry")
            .field("custom", &self.custom.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_custom_method(
        &mut self,
        name: &str,
        hook: impl Fn(&Mlp, &ForgetPartition, &UnlearnConfig) -> Result<(Mlp, Vec<EpochRecord>)> + Send + Sync + 'static,
    ) -> Result<String> {
        let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid {
            return Err(Error::argument(format!("invalid method name `{name}`")));
        }
        if Method::from_id(name).is_some() || self.custom.contains_key(name) {
            return Err(Error::Duplicate(format!("method `{name}`")));
        }
        self.custom.insert(name.to_string(), Arc::new(hook));
        Ok(name.to_string())
    }

    /// Built-in ids followed by custom ones in name order.
    pub fn list(&self) -> Vec<String> {
        Method::ALL
            .iter()
            .map(|m| m.id().to_string())
            .chain(self.custom.keys().cloned())
            .collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        Method::from_id(id).is_some() || self.custom.contains_key(id)
    }

    pub fn run(&self, ctx: &UnlearnContext<'_>, cfg: &UnlearnConfig, observer: &mut dyn EpochObserver) -> Result<UnlearnOutcome> {
        cfg.validate()?;
        let (base, p) = (ctx.base, ctx.partition);
        match Method::from_id(&cfg.method) {
            Some(Method::Ft) => unlearn_ft(base, p, cfg, observer),
            Some(Method::Rl) => unlearn_rl(base, p, cfg, observer),
            Some(Method::Ga) => unlearn_ga(base, p, cfg, observer),
            Some(Method::Scrub) => unlearn_scrub(base, p, cfg, observer),
            Some(Method::Salun) => unlearn_salun(base, p, cfg, observer),
            Some(Method::Gu) => {
                let elbow = match cfg.param("elbow_layer") {
                    Some(e) => e as usize,
                    None => ctx
                        .elbow_layer
                        .ok_or_else(|| Error::argument("GU needs an elbow layer (none detected or given)"))?,
                };
                unlearn_gu(base, p, cfg, ctx.original, elbow, observer)
            }
            None => {
                let hook = self
                    .custom
                    .get(&cfg.method)
                    .ok_or_else(|| Error::NotFound { kind: "method", id: cfg.method.clone() })?;
                let mut clock = crate::train::Stopwatch::default();
                let (model, history) = clock.time(|| hook(base, p, cfg))?;
                model.check_arch(&base.arch)?;
                Ok(UnlearnOutcome {
                    model,
                    history,
                    rt_seconds: clock.seconds(),
                    warmup: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(epochs: Vec<usize>, lrs: Vec<f64>, bs: Vec<usize>) -> HyperGrid {
        HyperGrid {
            base_model_id: "original".into(),
            method: "ft".into(),
            epochs,
            lrs,
            batch_sizes: bs,
            seed: 11,
            method_params: BTreeMap::new(),
        }
    }

    #[test]
    fn grid_expansion_counts_and_seeds() {
        let g = grid(vec![1, 3], vec![0.01, 0.05, 0.1], vec![64]);
        let a = expand_grid(&g).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, expand_grid(&g).unwrap());
        let mut seeds: Vec<u64> = a.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 6);
    }

    #[test]
    fn empty_grid_list_rejected() {
        assert!(expand_grid(&grid(vec![], vec![0.1], vec![8])).is_err());
    }

    #[test]
    fn params_validated_per_method() {
        let bad = UnlearnConfig::new(Method::Salun, 1, 0.1, 8, 0).with_param("mask_fraction", 1.5);
        assert!(bad.validate().is_err());
        let zero = UnlearnConfig::new(Method::Salun, 1, 0.1, 8, 0).with_param("mask_fraction", 0.0);
        assert!(zero.validate().is_err());
        let wrong_key = UnlearnConfig::new(Method::Ft, 1, 0.1, 8, 0).with_param("mask_fraction", 0.5);
        assert!(wrong_key.validate().is_err());
        assert!(UnlearnConfig::new(Method::Ga, 0, 0.1, 8, 0).validate().is_err());
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut reg = MethodRegistry::new();
        let hook = |m: &Mlp, _: &ForgetPartition, _: &UnlearnConfig| Ok((m.clone(), Vec::new()));
        assert_eq!(reg.register_custom_method("noop", hook).unwrap(), "noop");
        assert!(matches!(reg.register_custom_method("noop", hook), Err(Error::Duplicate(_))));
        assert!(matches!(reg.register_custom_method("ga", hook), Err(Error::Duplicate(_))));
        assert!(reg.list().contains(&"noop".to_string()));
    }
}
