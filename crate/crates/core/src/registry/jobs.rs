use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unlearn::UnlearnConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub workspace_id: String,
    pub config: UnlearnConfig,
    pub state: JobState,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Filled in when the job finishes successfully.
    pub model_ids: Vec<String>,
}

/// One line of a job's progress stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub job_id: String,
    pub epoch: usize,
    #[serde(rename = "UA")]
    pub ua: f64,
    #[serde(rename = "RA")]
    pub ra: f64,
}

struct Entry {
    status: JobStatus,
    events: Vec<JobEvent>,
}

/// Shared job table. Every state change wakes waiters.
#[derive(Default)]
pub(crate) struct JobBoard {
    entries: Mutex<BTreeMap<String, Entry>>,
    changed: Condvar,
    running: AtomicUsize,
    peak: AtomicUsize,
    issued: AtomicUsize,
}

impl JobBoard {
    fn lock(&self) -> MutexGuard<'_, BTreeMap<String, Entry>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create(&self, workspace_id: &str, config: UnlearnConfig) -> JobStatus {
        let n = self.issued.fetch_add(1, Ordering::SeqCst) + 1;
        let status = JobStatus {
            job_id: format!("job-{n:06}"),
            workspace_id: workspace_id.to_string(),
            progress: Progress {
                completed: 0,
                total: config.epochs,
            },
            config,
            state: JobState::Queued,
            error: None,
            model_ids: Vec::new(),
        };
        self.lock().insert(
            status.job_id.clone(),
            Entry {
                status: status.clone(),
                events: Vec::new(),
            },
        );
        status
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut Entry)) {
        if let Some(entry) = self.lock().get_mut(job_id) {
            f(entry);
        }
        self.changed.notify_all();
    }

    pub fn start(&self, job_id: &str) {
        let now = self.running.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.update(job_id, |e| e.status.state = JobState::Running);
    }

    pub fn record_epoch(&self, event: JobEvent) {
        let job_id = event.job_id.clone();
        self.update(&job_id, |e| {
            if event.epoch > 0 {
                e.status.progress.completed = event.epoch;
            }
            e.events.push(event);
        });
    }

    pub fn finish(&self, job_id: &str, outcome: std::result::Result<Vec<String>, String>) {
        self.running.fetch_sub(1, Ordering::SeqCst);
        self.update(job_id, |e| match outcome {
            Ok(ids) => {
                e.status.state = JobState::Done;
                e.status.model_ids = ids;
            }
            Err(message) => {
                e.status.state = JobState::Failed;
                e.status.error = Some(message);
            }
        });
    }

    pub fn status(&self, job_id: &str) -> Result<JobStatus> {
        self.lock()
            .get(job_id)
            .map(|e| e.status.clone())
            .ok_or_else(|| Error::NotFound {
                kind: "job",
                id: job_id.to_string(),
            })
    }

    pub fn list(&self) -> Vec<JobStatus> {
        self.lock().values().map(|e| e.status.clone()).collect()
    }

    /// Events from index `from` on, plus the current state. Blocks up to
    /// `timeout` while there is nothing new and the job is still live.
    pub fn events_since(&self, job_id: &str, from: usize, timeout: Duration) -> Result<(Vec<JobEvent>, JobState)> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.lock();
        loop {
            let entry = guard.get(job_id).ok_or_else(|| Error::NotFound {
                kind: "job",
                id: job_id.to_string(),
            })?;
            let fresh = entry.events.get(from..).unwrap_or_default();
            if !fresh.is_empty() || entry.status.state.is_terminal() {
                return Ok((fresh.to_vec(), entry.status.state));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok((Vec::new(), entry.status.state));
            }
            guard = self.changed.wait_timeout(guard, left).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Blocks until the job reaches a terminal state.
    pub fn wait(&self, job_id: &str) -> Result<JobStatus> {
        let mut guard = self.lock();
        loop {
            let entry = guard.get(job_id).ok_or_else(|| Error::NotFound {
                kind: "job",
                id: job_id.to_string(),
            })?;
            if entry.status.state.is_terminal() {
                return Ok(entry.status.clone());
            }
            guard = self.changed.wait(guard).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}
