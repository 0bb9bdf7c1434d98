//! On-disk layout of a workspace directory:
//!
//! ```text
//! workspace.json
//! models/<id>.checkpoint.json
//! models/<id>.record.json
//! reports/<a>__<b>.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::report::ComparisonReport;
use super::{ModelRecord, WorkspaceSpec};
use crate::error::{Error, Result};
use crate::json;
use crate::nn::Mlp;

pub const INDEX_FILE: &str = "workspace.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceIndex {
    pub id: String,
    pub spec: WorkspaceSpec,
    pub elbow_layer: usize,
    pub next_seq: u64,
    pub model_ids: Vec<String>,
}

pub fn checkpoint_rel(id: &str) -> String {
    format!("models/{id}.checkpoint.json")
}

fn record_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("models").join(format!("{id}.record.json"))
}

/// Writes through a temporary file so readers never see partial content.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    json::from_str(&text).map_err(|e| match e {
        Error::Format { path: at, message } => Error::format(format!("{}: {at}", path.display()), message),
        other => other,
    })
}

pub fn write_index(dir: &Path, index: &WorkspaceIndex) -> Result<()> {
    write_atomic(&dir.join(INDEX_FILE), &json::to_string(index)?)
}

pub fn write_model(dir: &Path, record: &ModelRecord, model: &Mlp) -> Result<()> {
    write_atomic(&dir.join(checkpoint_rel(&record.id)), &model.serialize()?)?;
    write_atomic(&record_path(dir, &record.id), &json::to_string(record)?)
}

pub fn write_report(dir: &Path, report: &ComparisonReport) -> Result<()> {
    let name = ComparisonReport::file_name(&report.model_a, &report.model_b);
    write_atomic(&dir.join("reports").join(name), &json::to_string(report)?)
}

pub struct Loaded {
    pub index: WorkspaceIndex,
    pub models: Vec<(ModelRecord, Mlp)>,
    pub reports: Vec<ComparisonReport>,
}

pub fn load(dir: &Path) -> Result<Loaded> {
    let index: WorkspaceIndex = read_json(&dir.join(INDEX_FILE))?;
    let mut models = Vec::with_capacity(index.model_ids.len());
    for id in &index.model_ids {
        let record_file = record_path(dir, id);
        if !record_file.exists() {
            return Err(Error::NotFound {
                kind: "model record",
                id: id.clone(),
            });
        }
        let record: ModelRecord = read_json(&record_file)?;
        let ckpt = dir.join(&record.checkpoint);
        let text = fs::read_to_string(&ckpt).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound {
                kind: "checkpoint",
                id: id.clone(),
            },
            _ => Error::io(&ckpt, e),
        })?;
        let model = Mlp::deserialize(&text).map_err(|e| Error::format(format!("{}", ckpt.display()), format!("model `{id}`: {e}")))?;
        models.push((record, model));
    }
    let mut reports = Vec::new();
    let report_dir = dir.join("reports");
    if report_dir.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(&report_dir)
            .map_err(|e| Error::io(&report_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            reports.push(read_json(&path)?);
        }
    }
    Ok(Loaded { index, models, reports })
}
