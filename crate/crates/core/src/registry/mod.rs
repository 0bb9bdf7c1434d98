//! Workspaces of trained models, asynchronous build jobs and JSON persistence.
//!
//! A workspace is one dataset recipe with one forget class. Creating it
//! trains the original and retrained reference models; every later model is
//! built from a hyperparameter grid on a bounded worker pool, uploaded as a
//! checkpoint, and summarized against the retrained model.

mod jobs;
mod references;
mod report;
mod store;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use jobs::{JobEvent, JobState, JobStatus, Progress};
pub use references::{ReferenceRuns, References};
pub use report::{AttackDetail, ComparisonReport, ModelView};
pub use store::WorkspaceIndex;

use jobs::JobBoard;

use crate::dataset::{DatasetSpec, ForgetPartition};
use crate::error::{Error, Result};
use crate::json;
use crate::nn::{ArchitectureSpec, Mlp};
use crate::privacy::{AttackDirection, Statistic};
use crate::train::{EpochRecord, ModelKind, TrainConfig};
use crate::rng;
use crate::unlearn::{expand_grid, HyperGrid, MethodRegistry, UnlearnConfig};

pub const ORIGINAL_ID: &str = "original";
pub const RETRAINED_ID: &str = "retrained";

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

/// Recipe for a workspace: data, architecture and reference training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSpec {
    pub dataset: DatasetSpec,
    #[serde(default = "default_hidden")]
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl WorkspaceSpec {
    pub fn new(dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            hidden_widths: default_hidden(),
            train: TrainConfig::default(),
        }
    }

    pub fn arch(&self) -> ArchitectureSpec {
        let mut arch = ArchitectureSpec::default_for(self.dataset.dim, self.dataset.n_classes);
        arch.hidden_widths = self.hidden_widths.clone();
        arch
    }

    /// Stable id derived from the full recipe.
    pub fn id(&self) -> Result<String> {
        let digest = rng::tag(&json::to_string(self)?);
        Ok(format!("{}-fc{}-{:08x}", self.dataset.name, self.dataset.forget_class, digest as u32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    #[serde(rename = "UA")]
    pub ua: f64,
    #[serde(rename = "RA")]
    pub ra: f64,
    #[serde(rename = "TUA")]
    pub tua: f64,
    #[serde(rename = "TRA")]
    pub tra: f64,
    #[serde(rename = "RT_seconds")]
    pub rt_seconds: f64,
    #[serde(rename = "WCPS")]
    pub wcps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum RecordConfig {
    Train(TrainConfig),
    Unlearn(UnlearnConfig),
    Upload { label: Option<String> },
}

impl RecordConfig {
    /// `(epochs, lr, batch_size)` where they apply.
    pub fn hyperparameters(&self) -> Option<(usize, f64, usize)> {
        match self {
            RecordConfig::Train(c) => Some((c.epochs, c.lr, c.batch_size)),
            RecordConfig::Unlearn(c) => Some((c.epochs, c.lr, c.batch_size)),
            RecordConfig::Upload { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_model_id: Option<String>,
    pub config: RecordConfig,
    /// Relative to the workspace directory.
    pub checkpoint: String,
    pub summary: ModelSummary,
    pub history: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<EpochRecord>,
    /// Unix seconds.
    pub created_at: u64,
    pub forget_class: usize,
}

impl ModelRecord {
    /// Method id for unlearned models, otherwise the kind.
    pub fn method_label(&self) -> &str {
        self.method.as_deref().unwrap_or(self.kind.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortKey {
    Id,
    Ua,
    Ra,
    Tua,
    Tra,
    Rt,
    Wcps,
    Created,
}

impl std::str::FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "id" => SortKey::Id,
            "ua" => SortKey::Ua,
            "ra" => SortKey::Ra,
            "tua" => SortKey::Tua,
            "tra" => SortKey::Tra,
            "rt" | "rt_seconds" => SortKey::Rt,
            "wcps" => SortKey::Wcps,
            "created" | "created_at" => SortKey::Created,
            other => return Err(Error::argument(format!("unknown sort key `{other}`"))),
        })
    }
}

/// Listing options. A `-` prefix on the sort key means descending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ListQuery {
    pub sort: Option<(SortKey, bool)>,
    pub method: Option<String>,
}

impl ListQuery {
    pub fn parse(sort: Option<&str>, method: Option<&str>) -> Result<Self> {
        let sort = match sort.filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => match s.strip_prefix('-') {
                Some(key) => Some((key.parse()?, true)),
                None => Some((s.parse()?, false)),
            },
        };
        Ok(Self {
            sort,
            method: method.filter(|m| !m.is_empty()).map(str::to_string),
        })
    }
}

fn sort_value(r: &ModelRecord, key: SortKey) -> f64 {
    match key {
        SortKey::Ua => r.summary.ua,
        SortKey::Ra => r.summary.ra,
        SortKey::Tua => r.summary.tua,
        SortKey::Tra => r.summary.tra,
        SortKey::Rt => r.summary.rt_seconds,
        SortKey::Wcps => r.summary.wcps,
        SortKey::Created => r.created_at as f64,
        SortKey::Id => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceInfo {
    pub id: String,
    pub spec: WorkspaceSpec,
    pub elbow_layer: usize,
    pub model_count: usize,
}

struct Entry {
    record: ModelRecord,
    model: Arc<Mlp>,
}

struct Workspace {
    id: String,
    spec: WorkspaceSpec,
    fixed: Arc<References>,
    models: BTreeMap<String, Entry>,
    reports: BTreeMap<String, ComparisonReport>,
    next_seq: u64,
}

impl Workspace {
    fn index(&self) -> WorkspaceIndex {
        WorkspaceIndex {
            id: self.id.clone(),
            spec: self.spec.clone(),
            elbow_layer: self.fixed.elbow_layer,
            next_seq: self.next_seq,
            model_ids: self.models.keys().cloned().collect(),
        }
    }

    fn info(&self) -> WorkspaceInfo {
        WorkspaceInfo {
            id: self.id.clone(),
            spec: self.spec.clone(),
            elbow_layer: self.fixed.elbow_layer,
            model_count: self.models.len(),
        }
    }

    fn entry(&self, id: &str) -> Result<&Entry> {
        self.models.get(id).ok_or_else(|| Error::NotFound {
            kind: "model",
            id: id.to_string(),
        })
    }

    fn insert(&mut self, record: ModelRecord, model: Arc<Mlp>) {
        self.models.insert(record.id.clone(), Entry { record, model });
    }

    fn reserve_id(&mut self, prefix: &str) -> String {
        self.next_seq += 1;
        format!("{prefix}-{:04}", self.next_seq)
    }

    /// Writes every file of this workspace under `dir`.
    fn save(&self, dir: &Path) -> Result<()> {
        for e in self.models.values() {
            store::write_model(dir, &e.record, &e.model)?;
        }
        for report in self.reports.values() {
            store::write_report(dir, report)?;
        }
        store::write_index(dir, &self.index())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get().saturating_sub(1).max(1))
}

#[derive(Clone, Debug)]
pub struct RegistryOptions {
    /// Root for workspace directories; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub max_workers: usize,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        Self {
            data_dir: None,
            max_workers: default_workers(),
        }
    }
}

struct Inner {
    data_dir: Option<PathBuf>,
    max_workers: usize,
    workspaces: RwLock<BTreeMap<String, Arc<RwLock<Workspace>>>>,
    methods: RwLock<MethodRegistry>,
    jobs: JobBoard,
    pool: rayon::ThreadPool,
}

/// Cheap-to-clone handle; all clones share state.
#[derive(Clone)]
pub struct Registry {
    inner: Arc<Inner>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn read<T>(lock: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(lock: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|e| e.into_inner())
}

impl Registry {
    pub fn new(options: RegistryOptions) -> Result<Self> {
        if options.max_workers == 0 {
            return Err(Error::argument("max_workers must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.max_workers)
            .thread_name(|i| format!("unlearn-worker-{i}"))
            .build()
            .map_err(|e| Error::argument(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir: options.data_dir,
                max_workers: options.max_workers,
                workspaces: RwLock::new(BTreeMap::new()),
                methods: RwLock::new(MethodRegistry::new()),
                jobs: JobBoard::default(),
                pool,
            }),
        })
    }

    pub fn in_memory() -> Result<Self> {
        Self::new(RegistryOptions::default())
    }

    pub fn max_workers(&self) -> usize {
        self.inner.max_workers
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.inner.data_dir.as_deref()
    }

    fn workspace_dir(&self, id: &str) -> Option<PathBuf> {
        self.inner.data_dir.as_ref().map(|d| d.join(id))
    }

    fn workspace(&self, id: &str) -> Result<Arc<RwLock<Workspace>>> {
        read(&self.inner.workspaces).get(id).cloned().ok_or_else(|| Error::NotFound {
            kind: "workspace",
            id: id.to_string(),
        })
    }

    pub fn register_custom_method(
        &self,
        name: &str,
        hook: impl Fn(&Mlp, &ForgetPartition, &UnlearnConfig) -> Result<(Mlp, Vec<EpochRecord>)> + Send + Sync + 'static,
    ) -> Result<String> {
        write(&self.inner.methods).register_custom_method(name, hook)
    }

    pub fn methods(&self) -> Vec<String> {
        read(&self.inner.methods).list()
    }

    /// Returns the workspace for `spec`, training the reference models on
    /// first use. A workspace already in memory or on disk is reused.
    pub fn create_workspace(&self, spec: &WorkspaceSpec) -> Result<WorkspaceInfo> {
        let id = spec.id()?;
        if let Ok(ws) = self.workspace(&id) {
            return Ok(read(&ws).info());
        }
        if let Some(dir) = self.workspace_dir(&id) {
            if dir.join(store::INDEX_FILE).exists() {
                let loaded = self.load_workspace(&dir)?;
                return Ok(loaded);
            }
        }

        let ReferenceRuns {
            references: fixed,
            original: original_run,
            retrained: retrained_run,
        } = References::train(spec)?;

        let created_at = now_unix();
        let mut ws = Workspace {
            id: id.clone(),
            spec: spec.clone(),
            fixed: Arc::new(fixed),
            models: BTreeMap::new(),
            reports: BTreeMap::new(),
            next_seq: 0,
        };
        for (rid, kind, run) in [
            (ORIGINAL_ID, ModelKind::Original, original_run),
            (RETRAINED_ID, ModelKind::Retrained, retrained_run),
        ] {
            let record = ModelRecord {
                id: rid.to_string(),
                kind,
                method: None,
                base_model_id: None,
                config: RecordConfig::Train(spec.train.clone()),
                checkpoint: store::checkpoint_rel(rid),
                summary: ws.fixed.summarize(&run.model, run.rt_seconds)?,
                history: run.history,
                warmup: None,
                created_at,
                forget_class: spec.dataset.forget_class,
            };
            ws.insert(record, Arc::new(run.model));
        }
        if let Some(dir) = self.workspace_dir(&id) {
            ws.save(&dir)?;
        }
        let info = ws.info();
        write(&self.inner.workspaces)
            .entry(id)
            .or_insert_with(|| Arc::new(RwLock::new(ws)));
        Ok(info)
    }

    pub fn list_workspaces(&self) -> Vec<WorkspaceInfo> {
        read(&self.inner.workspaces).values().map(|w| read(w).info()).collect()
    }

    pub fn workspace_info(&self, id: &str) -> Result<WorkspaceInfo> {
        Ok(read(&*self.workspace(id)?).info())
    }

    pub fn partition(&self, workspace_id: &str) -> Result<ForgetPartition> {
        Ok(read(&*self.workspace(workspace_id)?).fixed.partition.clone())
    }

    /// Expands `grid` and queues one job per configuration. Model ids are
    /// assigned here, in grid order, so they do not depend on completion order.
    pub fn submit_build(&self, workspace_id: &str, grid: &HyperGrid) -> Result<Vec<JobStatus>> {
        let methods = read(&self.inner.methods).clone();
        if !methods.contains(&grid.method) {
            return Err(Error::NotFound {
                kind: "method",
                id: grid.method.clone(),
            });
        }
        let configs = expand_grid(grid)?;
        let ws_lock = self.workspace(workspace_id)?;
        let (fixed, base, ids) = {
            let mut ws = write(&ws_lock);
            let base = ws.entry(&grid.base_model_id)?.model.clone();
            let ids: Vec<String> = configs.iter().map(|_| ws.reserve_id(&grid.method)).collect();
            if let Some(dir) = self.workspace_dir(workspace_id) {
                store::write_index(&dir, &ws.index())?;
            }
            (ws.fixed.clone(), base, ids)
        };
        let mut statuses = Vec::with_capacity(configs.len());
        for (cfg, model_id) in configs.into_iter().zip(ids) {
            let status = self.inner.jobs.create(workspace_id, cfg.clone());
            let job = BuildJob {
                registry: self.clone(),
                workspace: ws_lock.clone(),
                fixed: fixed.clone(),
                base: base.clone(),
                base_id: grid.base_model_id.clone(),
                methods: methods.clone(),
                cfg,
                model_id,
                job_id: status.job_id.clone(),
            };
            self.inner.pool.spawn(move || job.run());
            statuses.push(status);
        }
        Ok(statuses)
    }

    pub fn job(&self, job_id: &str) -> Result<JobStatus> {
        self.inner.jobs.status(job_id)
    }

    pub fn jobs(&self) -> Vec<JobStatus> {
        self.inner.jobs.list()
    }

    pub fn wait_job(&self, job_id: &str) -> Result<JobStatus> {
        self.inner.jobs.wait(job_id)
    }

    pub fn wait_jobs(&self, statuses: &[JobStatus]) -> Result<Vec<JobStatus>> {
        statuses.iter().map(|s| self.wait_job(&s.job_id)).collect()
    }

    /// Progress events from index `from` on; waits up to `timeout` for news.
    pub fn job_events(&self, job_id: &str, from: usize, timeout: Duration) -> Result<(Vec<JobEvent>, JobState)> {
        self.inner.jobs.events_since(job_id, from, timeout)
    }

    /// Highest number of build jobs that ever ran at the same time.
    pub fn peak_concurrency(&self) -> usize {
        self.inner.jobs.peak_concurrency()
    }

    /// Records sorted by the query key (ties and unsorted listings by id).
    pub fn list_models(&self, workspace_id: &str, query: &ListQuery) -> Result<Vec<ModelRecord>> {
        let ws_lock = self.workspace(workspace_id)?;
        let ws = read(&ws_lock);
        let mut out: Vec<ModelRecord> = ws
            .models
            .values()
            .filter(|e| query.method.as_deref().is_none_or(|m| e.record.method_label() == m))
            .map(|e| e.record.clone())
            .collect();
        if let Some((key, descending)) = query.sort {
            out.sort_by(|a, b| {
                let ord = sort_value(a, key).total_cmp(&sort_value(b, key));
                let ord = if descending { ord.reverse() } else { ord };
                ord.then_with(|| a.id.cmp(&b.id))
            });
        }
        Ok(out)
    }

    pub fn model(&self, workspace_id: &str, model_id: &str) -> Result<ModelRecord> {
        Ok(read(&*self.workspace(workspace_id)?).entry(model_id)?.record.clone())
    }

    pub fn model_params(&self, workspace_id: &str, model_id: &str) -> Result<Arc<Mlp>> {
        Ok(read(&*self.workspace(workspace_id)?).entry(model_id)?.model.clone())
    }

    /// Full comparison of two models. Reports are cached (and persisted) in
    /// lexical id order; the reversed request is derived by swapping sides.
    pub fn compare(&self, workspace_id: &str, a: &str, b: &str) -> Result<ComparisonReport> {
        let ws_lock = self.workspace(workspace_id)?;
        let key = ComparisonReport::file_name(a, b);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let cached = read(&ws_lock).reports.get(&key).cloned();
        let canonical = match cached {
            Some(r) => r,
            None => {
                let (fixed, ma, mb) = {
                    let ws = read(&ws_lock);
                    (ws.fixed.clone(), ws.entry(lo)?.model.clone(), ws.entry(hi)?.model.clone())
                };
                let report = fixed.compare(workspace_id, (lo, &ma), (hi, &mb))?;
                let mut ws = write(&ws_lock);
                if let Some(dir) = self.workspace_dir(workspace_id) {
                    store::write_report(&dir, &report)?;
                }
                ws.reports.entry(key).or_insert(report).clone()
            }
        };
        Ok(if a == lo { canonical } else { canonical.swapped() })
    }

    pub fn attack_detail(&self, workspace_id: &str, model_id: &str, statistic: Statistic, direction: AttackDirection) -> Result<AttackDetail> {
        let (fixed, model) = {
            let ws_lock = self.workspace(workspace_id)?;
            let ws = read(&ws_lock);
            (ws.fixed.clone(), ws.entry(model_id)?.model.clone())
        };
        fixed.attack(model_id, &model, statistic, direction)
    }

    /// Registers a model from checkpoint JSON. The architecture must match
    /// the workspace's.
    pub fn upload_model(&self, workspace_id: &str, checkpoint_json: &str, label: Option<String>) -> Result<ModelRecord> {
        let ws_lock = self.workspace(workspace_id)?;
        let model = Mlp::deserialize(checkpoint_json)?;
        let (fixed, arch) = {
            let ws = read(&ws_lock);
            (ws.fixed.clone(), ws.spec.arch())
        };
        model.check_arch(&arch)?;
        let summary = fixed.summarize(&model, 0.0)?;
        let mut ws = write(&ws_lock);
        let id = ws.reserve_id("upload");
        let record = ModelRecord {
            checkpoint: store::checkpoint_rel(&id),
            id,
            kind: ModelKind::Uploaded,
            method: None,
            base_model_id: None,
            config: RecordConfig::Upload { label },
            summary,
            history: Vec::new(),
            warmup: None,
            created_at: now_unix(),
            forget_class: ws.spec.dataset.forget_class,
        };
        let model = Arc::new(model);
        if let Some(dir) = self.workspace_dir(workspace_id) {
            store::write_model(&dir, &record, &model)?;
        }
        ws.insert(record.clone(), model);
        if let Some(dir) = self.workspace_dir(workspace_id) {
            store::write_index(&dir, &ws.index())?;
        }
        Ok(record)
    }

    /// Writes the workspace into `dir` (any directory, not only the data dir).
    pub fn save_workspace(&self, workspace_id: &str, dir: &Path) -> Result<()> {
        read(&*self.workspace(workspace_id)?).save(dir)
    }

    /// Reads a workspace directory and registers it. The partition is
    /// regenerated from the stored recipe; metrics are taken as stored.
    pub fn load_workspace(&self, dir: &Path) -> Result<WorkspaceInfo> {
        let loaded = store::load(dir)?;
        let index = loaded.index;
        let mut models: BTreeMap<String, (ModelRecord, Mlp)> =
            loaded.models.into_iter().map(|(r, m)| (r.id.clone(), (r, m))).collect();
        let take = |models: &BTreeMap<String, (ModelRecord, Mlp)>, id: &str| {
            models.get(id).map(|(_, m)| m.clone()).ok_or_else(|| Error::NotFound {
                kind: "model",
                id: id.to_string(),
            })
        };
        let original = take(&models, ORIGINAL_ID)?;
        let retrained = take(&models, RETRAINED_ID)?;
        let partition = index.spec.dataset.build_partition()?;
        let fixed = References::from_models(&index.spec, partition, original, retrained, Some(index.elbow_layer))?;
        let mut ws = Workspace {
            id: index.id.clone(),
            spec: index.spec.clone(),
            fixed: Arc::new(fixed),
            models: BTreeMap::new(),
            reports: loaded
                .reports
                .into_iter()
                .map(|r| (ComparisonReport::file_name(&r.model_a, &r.model_b), r))
                .collect(),
            next_seq: index.next_seq,
        };
        for id in &index.model_ids {
            let (record, model) = models.remove(id).expect("loaded above");
            ws.insert(record, Arc::new(model));
        }
        let info = ws.info();
        write(&self.inner.workspaces).insert(index.id, Arc::new(RwLock::new(ws)));
        Ok(info)
    }

    /// Reloads every workspace directory found under the data dir.
    pub fn load_all(&self) -> Result<Vec<WorkspaceInfo>> {
        let Some(root) = self.inner.data_dir.clone() else {
            return Ok(Vec::new());
        };
        if !root.is_dir() {
            return Ok(Vec::new());
        }
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)
            .map_err(|e| Error::io(&root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(store::INDEX_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| self.load_workspace(d)).collect()
    }
}

struct BuildJob {
    registry: Registry,
    workspace: Arc<RwLock<Workspace>>,
    fixed: Arc<References>,
    base: Arc<Mlp>,
    base_id: String,
    methods: MethodRegistry,
    cfg: UnlearnConfig,
    model_id: String,
    job_id: String,
}

impl BuildJob {
    fn run(self) {
        let board = &self.registry.inner.jobs;
        board.start(&self.job_id);
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| self.build()));
        let outcome = match result {
            Ok(Ok(())) => Ok(vec![self.model_id.clone()]),
            Ok(Err(e)) => Err(e.to_string()),
            Err(panic) => Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "job panicked".into())),
        };
        board.finish(&self.job_id, outcome);
    }

    fn build(&self) -> Result<()> {
        let board = &self.registry.inner.jobs;
        let fixed = &self.fixed;
        let job_id = self.job_id.clone();
        let mut evaluator = fixed.evaluator()?.with_progress(move |rec: &EpochRecord| {
                board.record_epoch(JobEvent {
                    job_id: job_id.clone(),
                    epoch: rec.epoch,
                    ua: rec.ua,
                    ra: rec.ra,
                })
            });
        let ctx = fixed.context(&self.base);
        let outcome = self.methods.run(&ctx, &self.cfg, &mut evaluator)?;
        let record = ModelRecord {
            id: self.model_id.clone(),
            kind: ModelKind::Unlearned,
            method: Some(self.cfg.method.clone()),
            base_model_id: Some(self.base_id.clone()),
            config: RecordConfig::Unlearn(self.cfg.clone()),
            checkpoint: store::checkpoint_rel(&self.model_id),
            summary: fixed.summarize(&outcome.model, outcome.rt_seconds)?,
            history: outcome.history,
            warmup: outcome.warmup,
            created_at: now_unix(),
            forget_class: fixed.partition.forget_class,
        };
        let model = Arc::new(outcome.model);
        let dir = self.registry.workspace_dir(&read(&self.workspace).id);
        if let Some(dir) = &dir {
            store::write_model(dir, &record, &model)?;
        }
        let mut ws = write(&self.workspace);
        ws.insert(record, model);
        if let Some(dir) = &dir {
            store::write_index(dir, &ws.index())?;
        }
        Ok(())
    }
}
