//! Canned experiments on a reference workspace, each producing a JSON
//! document and a plot-ready CSV. Outputs hold no timings, so reruns with
//! the same seed are byte-identical.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;
use crate::metrics::accuracy_summary;
use crate::nn::Mlp;
use crate::registry::{References, WorkspaceSpec};
use crate::train::{EpochRecord, TrainConfig};
use crate::unlearn::{expand_grid, HyperGrid, Method, MethodRegistry, UnlearnConfig};
use crate::DatasetSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FtProgression,
    MethodShootout,
    GuAblation,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::FtProgression, Experiment::MethodShootout, Experiment::GuAblation];

    /// Workspace the experiment runs on unless the caller supplies one.
    ///
    /// The progression run uses wide, briefly trained blobs with a middle
    /// class as the forget class. The original then fits its training points
    /// noticeably better than held-out ones, and forget samples end up between
    /// two retain classes once the class is gone.
    pub fn default_spec(self, seed: u64) -> WorkspaceSpec {
        match self {
            Experiment::FtProgression => WorkspaceSpec {
                dataset: DatasetSpec {
                    seed,
                    dim: 128,
                    forget_class: 5,
                    ..DatasetSpec::default()
                },
                hidden_widths: vec![64, 32],
                train: TrainConfig {
                    epochs: 20,
                    seed,
                    ..TrainConfig::default()
                },
            },
            Experiment::MethodShootout | Experiment::GuAblation => default_spec(seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FtProgression => "ft-progression",
            Experiment::MethodShootout => "method-shootout",
            Experiment::GuAblation => "gu-ablation",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown experiment `{s}` (expected ft-progression, method-shootout or gu-ablation)")))
    }
}

/// The default 10-class blob workspace with the given seed.
pub fn default_spec(seed: u64) -> WorkspaceSpec {
    WorkspaceSpec::new(DatasetSpec {
        seed,
        ..DatasetSpec::default()
    })
}

/// Accuracy and privacy of one model against the references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(rename = "UA")]
    pub ua: f64,
    #[serde(rename = "RA")]
    pub ra: f64,
    #[serde(rename = "TUA")]
    pub tua: f64,
    #[serde(rename = "TRA")]
    pub tra: f64,
    #[serde(rename = "WCPS")]
    pub wcps: f64,
    #[serde(rename = "PS_C")]
    pub ps_c: f64,
    #[serde(rename = "PS_E")]
    pub ps_e: f64,
    #[serde(rename = "C_MIA")]
    pub cmia: f64,
    #[serde(rename = "E_MIA")]
    pub emia: f64,
}

impl Scores {
    pub fn of(refs: &References, model: &Mlp) -> Result<Self> {
        let acc = accuracy_summary(model, &refs.partition)?;
        let report = refs.privacy(model)?;
        Ok(Self {
            ua: acc.ua,
            ra: acc.ra,
            tua: acc.tua,
            tra: acc.tra,
            wcps: report.wcps,
            ps_c: report.ps_c,
            ps_e: report.ps_e,
            cmia: report.cmia.unwrap_or(f64::NAN),
            emia: report.emia.unwrap_or(f64::NAN),
        })
    }

    const CSV_HEADER: &'static str = "UA,RA,TUA,TRA,WCPS,PS_C,PS_E,C_MIA,E_MIA";

    fn csv_fields(&self) -> String {
        [self.ua, self.ra, self.tua, self.tra, self.wcps, self.ps_c, self.ps_e, self.cmia, self.emia]
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochScores {
    pub epoch: usize,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtProgression {
    pub config: UnlearnConfig,
    pub original: Scores,
    pub epochs: Vec<EpochScores>,
}

/// Full-batch fine-tuning, so per-epoch scores follow a smooth path.
pub fn ft_progression_config(refs: &References, seed: u64) -> UnlearnConfig {
    UnlearnConfig::new(Method::Ft, 300, 0.15, refs.partition.retain_train.len(), seed)
}

/// FT from the original model, scored after every epoch.
pub fn ft_progression(refs: &References, cfg: &UnlearnConfig) -> Result<FtProgression> {
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut observer = |epoch: usize, model: &Mlp, loss: f64| -> Result<EpochRecord> {
        let scores = Scores::of(refs, model)?;
        let record = EpochRecord {
            epoch,
            ua: scores.ua,
            ra: scores.ra,
            tua: scores.tua,
            tra: scores.tra,
            loss,
            wcps: Some(scores.wcps),
        };
        rows.push(EpochScores { epoch, scores });
        Ok(record)
    };
    MethodRegistry::new().run(&refs.context(&refs.original), cfg, &mut observer)?;
    Ok(FtProgression {
        config: cfg.clone(),
        original: Scores::of(refs, &refs.original)?,
        epochs: rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootoutRow {
    pub config: UnlearnConfig,
    #[serde(flatten)]
    pub scores: Option<Scores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Excluded from output to keep it deterministic.
    #[serde(skip)]
    pub rt_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodBest {
    pub method: String,
    /// Some config reached UA ≤ 0.05 with RA ≥ 0.9·RA(original).
    pub qualifies: bool,
    /// Highest WCPS among the qualifying configs.
    pub best_wcps: Option<f64>,
    pub best_config: Option<UnlearnConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shootout {
    pub original: Scores,
    pub rows: Vec<ShootoutRow>,
    pub best: Vec<MethodBest>,
}

pub const UA_TARGET: f64 = 0.05;
pub const RA_RETENTION: f64 = 0.9;

/// Configs that unlearn the class while keeping retain accuracy.
pub fn qualifies(s: &Scores, original_ra: f64) -> bool {
    s.ua <= UA_TARGET && s.ra >= RA_RETENTION * original_ra
}

/// Every method over its default grid, all from the original model.
pub fn method_shootout(refs: &References, seed: u64) -> Result<Shootout> {
    let mut configs = Vec::new();
    for method in Method::ALL {
        configs.extend(expand_grid(&HyperGrid::default_for(method, "original", seed))?);
    }
    let methods = MethodRegistry::new();
    let rows: Vec<ShootoutRow> = configs
        .into_par_iter()
        .map(|cfg| {
            let outcome = methods.run(&refs.context(&refs.original), &cfg, &mut crate::train::loss_only());
            match outcome.and_then(|o| Ok((Scores::of(refs, &o.model)?, o.rt_seconds))) {
                Ok((scores, rt)) => ShootoutRow {
                    config: cfg,
                    scores: Some(scores),
                    error: None,
                    rt_seconds: rt,
                },
                Err(e) => ShootoutRow {
                    config: cfg,
                    scores: None,
                    error: Some(e.to_string()),
                    rt_seconds: f64::NAN,
                },
            }
        })
        .collect();
    let original = Scores::of(refs, &refs.original)?;
    let best = Method::ALL
        .iter()
        .map(|m| {
            let mine: Vec<(&UnlearnConfig, &Scores)> = rows
                .iter()
                .filter(|r| r.config.method == m.id())
                .filter_map(|r| r.scores.as_ref().map(|s| (&r.config, s)))
                .collect();
            let top = mine
                .iter()
                .copied()
                .filter(|(_, s)| qualifies(s, original.ra))
                .reduce(|a, b| if b.1.wcps > a.1.wcps { b } else { a });
            MethodBest {
                method: m.id().to_string(),
                qualifies: top.is_some(),
                best_wcps: top.map(|t| t.1.wcps),
                best_config: top.map(|t| t.0.clone()),
            }
        })
        .collect();
    Ok(Shootout { original, rows, best })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuAblation {
    pub config: UnlearnConfig,
    pub elbow_layer: usize,
    pub rows: Vec<AblationRow>,
}

/// Short GU run, as in an efficiency-constrained setting.
pub fn gu_ablation_config(seed: u64) -> UnlearnConfig {
    UnlearnConfig::new(Method::Gu, 2, 0.05, 32, seed).with_param("forget_lr", 0.001)
}

/// Warm-Up alone, then adding Forgetting, then adding Recovery (full GU).
pub fn gu_ablation(refs: &References, cfg: &UnlearnConfig) -> Result<GuAblation> {
    let variants = [("warmup-only", 0.0, 0.0), ("+forgetting", 1.0, 0.0), ("+recovery", 1.0, 1.0)];
    let methods = MethodRegistry::new();
    let rows = variants
        .iter()
        .map(|&(name, forgetting, recovery)| {
            let c = cfg.clone().with_param("forgetting", forgetting).with_param("recovery", recovery);
            let out = methods.run(&refs.context(&refs.original), &c, &mut crate::train::loss_only())?;
            Ok(AblationRow {
                variant: name.to_string(),
                scores: Scores::of(refs, &out.model)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GuAblation {
        config: cfg.clone(),
        elbow_layer: refs.elbow_layer,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentResult {
    FtProgression(FtProgression),
    MethodShootout(Shootout),
    GuAblation(GuAblation),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDocument {
    pub experiment: Experiment,
    pub seed: u64,
    pub workspace: WorkspaceSpec,
    pub result: ExperimentResult,
}

impl ExperimentDocument {
    pub fn to_json(&self) -> Result<String> {
        json::to_string(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.result {
            ExperimentResult::FtProgression(p) => {
                let _ = writeln!(out, "epoch,{}", Scores::CSV_HEADER);
                for row in &p.epochs {
                    let _ = writeln!(out, "{},{}", row.epoch, row.scores.csv_fields());
                }
            }
            ExperimentResult::MethodShootout(s) => {
                let _ = writeln!(out, "method,epochs,lr,batch_size,{},error", Scores::CSV_HEADER);
                for row in &s.rows {
                    let c = &row.config;
                    let fields = row
                        .scores
                        .as_ref()
                        .map_or_else(|| [""; 9].join(","), Scores::csv_fields);
                    let err = row.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                    let _ = writeln!(out, "{},{},{},{},{fields},{err}", c.method, c.epochs, c.lr, c.batch_size);
                }
            }
            ExperimentResult::GuAblation(a) => {
                let _ = writeln!(out, "variant,{}", Scores::CSV_HEADER);
                for row in &a.rows {
                    let _ = writeln!(out, "{},{}", row.variant, row.scores.csv_fields());
                }
            }
        }
        out
    }
}

/// Trains the references for `spec` and runs `experiment` on them.
pub fn run_experiment(experiment: Experiment, spec: &WorkspaceSpec, seed: u64) -> Result<ExperimentDocument> {
    let refs = References::train(spec)?.references;
    run_on(experiment, &refs, spec, seed)
}

pub fn run_on(experiment: Experiment, refs: &References, spec: &WorkspaceSpec, seed: u64) -> Result<ExperimentDocument> {
    let result = match experiment {
        Experiment::FtProgression => ExperimentResult::FtProgression(ft_progression(refs, &ft_progression_config(refs, seed))?),
        Experiment::MethodShootout => ExperimentResult::MethodShootout(method_shootout(refs, seed)?),
        Experiment::GuAblation => ExperimentResult::GuAblation(gu_ablation(refs, &gu_ablation_config(seed))?),
    };
    Ok(ExperimentDocument {
        experiment,
        seed,
        workspace: spec.clone(),
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorkspaceSpec {
        WorkspaceSpec {
            dataset: DatasetSpec {
                seed: 5,
                n_classes: 4,
                n_per_class: 40,
                dim: 6,
                ..DatasetSpec::default()
            },
            hidden_widths: vec![16, 8],
            train: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("ft".parse::<Experiment>().is_err());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let spec = small();
        let refs = References::train(&spec).unwrap().references;
        for e in [Experiment::GuAblation, Experiment::FtProgression] {
            let a = run_on(e, &refs, &spec, 3).unwrap();
            let b = run_on(e, &refs, &spec, 3).unwrap();
            assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
            assert_eq!(a.to_csv(), b.to_csv());
            let back: ExperimentDocument = json::from_str(&a.to_json().unwrap()).unwrap();
            assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
        }
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let spec = small();
        let refs = References::train(&spec).unwrap().references;
        let doc = run_on(Experiment::GuAblation, &refs, &spec, 1).unwrap();
        let csv = doc.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], format!("variant,{}", Scores::CSV_HEADER));
        let variants: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(variants, vec!["warmup-only", "+forgetting", "+recovery"]);
        assert!(lines.iter().all(|l| l.split(',').count() == 10));

        let prog = run_on(Experiment::FtProgression, &refs, &spec, 1).unwrap();
        let ExperimentResult::FtProgression(p) = &prog.result else { panic!() };
        assert_eq!(prog.to_csv().lines().count(), p.epochs.len() + 1);
        assert_eq!(p.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), (1..=p.epochs.len()).collect::<Vec<_>>());
    }
}
