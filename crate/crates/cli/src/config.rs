//! Run-config file, TOML or JSON.
//!
//! ```toml
//! data_dir = "runs"
//! workers = 4
//! port = 8080
//!
//! [workspace.dataset]
//! name = "blobs"
//! seed = 7
//! n_classes = 10
//! n_per_class = 100
//! dim = 16
//! spread = 1.0
//! forget_class = 0
//!
//! [grid]
//! method = "gu"
//! epochs = [3, 5]
//! lrs = [0.05]
//! batch_sizes = [32]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use unlearn_core::registry::WorkspaceSpec;

use crate::Failure;

/// Grid defaults; command-line flags override each field.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub method: Option<String>,
    pub base_model_id: Option<String>,
    pub epochs: Option<Vec<usize>>,
    pub lrs: Option<Vec<f64>>,
    pub batch_sizes: Option<Vec<usize>>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub method_params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub port: Option<u16>,
    pub host: Option<String>,
    pub workspace: Option<WorkspaceSpec>,
    #[serde(default)]
    pub grid: GridConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().and_then(|e| e.to_str()))
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// `.json` files are JSON, anything else TOML.
    pub fn parse(text: &str, extension: Option<&str>) -> Result<Self, String> {
        if extension.is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }
}
