use grader_core::data::{validate_submission, ExamItem, GradedResult, ItemRecord};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed)
    }
}

/// Result for one submitted item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Scored(GradedResult),
    Error {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        branch: Option<String>,
        message: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Submitted { job_id: String, items: Vec<ItemRecord>, at: String },
    Started { at: String },
    Outcome { index: usize, outcome: Outcome },
    Completed { at: String },
    Failed { at: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct Job {
    pub id: String,
    pub state: JobState,
    pub items: Vec<ExamItem>,
    pub outcomes: Vec<Option<Outcome>>,
    pub submitted_at: String,
    pub updated_at: String,
    pub failure: Option<String>,
}

impl Job {
    pub fn done(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: String,
    pub state: JobState,
    pub done: usize,
    pub total: usize,
    pub submitted_at: String,
    pub updated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("job {0} not found")]
    NotFound(String),
    #[error("job {id} is {state:?}")]
    NotReady { id: String, state: JobState },
    #[error("journal {path}: {message}")]
    Journal { path: String, message: String },
    #[error("job {0}: illegal state transition")]
    Transition(String),
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Jobs kept in memory and mirrored to one append-only journal per job.
pub struct JobStore {
    dir: PathBuf,
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobStore {
    /// Opens `dir`, replaying every journal in it. A torn final line (from a
    /// crash mid-write) is ignored.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |e: std::io::Error| StoreError::Journal { path: dir.display().to_string(), message: e.to_string() };
        fs::create_dir_all(&dir).map_err(io)?;
        let mut jobs = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match replay(&path) {
                Ok(Some(job)) => {
                    jobs.insert(job.id.clone(), job);
                }
                Ok(None) => log::warn!("{}: empty journal skipped", path.display()),
                Err(e) => return Err(e),
            }
        }
        Ok(Self { dir, jobs: Mutex::new(jobs) })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn append(&self, id: &str, event: &Event) -> Result<(), StoreError> {
        let path = self.path(id);
        let err = |e: std::io::Error| StoreError::Journal { path: path.display().to_string(), message: e.to_string() };
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        f.write_all(line.as_bytes()).map_err(err)?;
        f.sync_data().map_err(err)
    }

    /// Persists a new pending job before returning its id.
    pub fn create(&self, items: Vec<ExamItem>) -> Result<String, StoreError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let at = now();
        let records = items.iter().map(ItemRecord::from).collect();
        self.append(&id, &Event::Submitted { job_id: id.clone(), items: records, at: at.clone() })?;
        let outcomes = vec![None; items.len()];
        let job = Job { id: id.clone(), state: JobState::Pending, items, outcomes, submitted_at: at.clone(), updated_at: at, failure: None };
        self.jobs.lock().expect("store lock").insert(id.clone(), job);
        Ok(id)
    }

    fn update(&self, id: &str, event: Event, apply: impl FnOnce(&mut Job) -> Result<(), StoreError>) -> Result<(), StoreError> {
        let mut jobs = self.jobs.lock().expect("store lock");
        let job = jobs.get_mut(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let mut next = job.clone();
        apply(&mut next)?;
        self.append(id, &event)?;
        next.updated_at = now();
        *job = next;
        Ok(())
    }

    pub fn mark_running(&self, id: &str) -> Result<(), StoreError> {
        self.update(id, Event::Started { at: now() }, |j| match j.state {
            JobState::Pending | JobState::Running => {
                j.state = JobState::Running;
                Ok(())
            }
            _ => Err(StoreError::Transition(j.id.clone())),
        })
    }

    pub fn record_outcome(&self, id: &str, index: usize, outcome: Outcome) -> Result<(), StoreError> {
        let o = outcome.clone();
        self.update(id, Event::Outcome { index, outcome }, move |j| {
            if j.state != JobState::Running || index >= j.outcomes.len() {
                return Err(StoreError::Transition(j.id.clone()));
            }
            j.outcomes[index] = Some(o);
            Ok(())
        })
    }

    /// Completes the job if every item has an outcome, otherwise fails it.
    pub fn finish(&self, id: &str) -> Result<JobState, StoreError> {
        let complete = {
            let jobs = self.jobs.lock().expect("store lock");
            let job = jobs.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
            job.done() == job.items.len()
        };
        if complete {
            self.update(id, Event::Completed { at: now() }, |j| {
                j.state = JobState::Completed;
                Ok(())
            })?;
            Ok(JobState::Completed)
        } else {
            self.fail(id, "items left without an outcome")?;
            Ok(JobState::Failed)
        }
    }

    pub fn fail(&self, id: &str, reason: &str) -> Result<(), StoreError> {
        let r = reason.to_string();
        self.update(id, Event::Failed { at: now(), reason: reason.to_string() }, move |j| {
            if j.state.is_finished() {
                return Err(StoreError::Transition(j.id.clone()));
            }
            j.state = JobState::Failed;
            j.failure = Some(r);
            Ok(())
        })
    }

    pub fn summary(&self, id: &str) -> Result<JobSummary, StoreError> {
        let jobs = self.jobs.lock().expect("store lock");
        let j = jobs.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        Ok(JobSummary {
            job_id: j.id.clone(),
            state: j.state,
            done: j.done(),
            total: j.items.len(),
            submitted_at: j.submitted_at.clone(),
            updated_at: j.updated_at.clone(),
            results: j.state.is_finished().then(|| format!("/v1/batches/{}/results", j.id)),
            failure: j.failure.clone(),
        })
    }

    /// Outcomes in submission order. Items of a failed job that never ran
    /// carry an error record.
    pub fn results(&self, id: &str) -> Result<Vec<Outcome>, StoreError> {
        let jobs = self.jobs.lock().expect("store lock");
        let j = jobs.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if !j.state.is_finished() {
            return Err(StoreError::NotReady { id: id.to_string(), state: j.state });
        }
        Ok(j
            .outcomes
            .iter()
            .zip(&j.items)
            .map(|(o, item)| {
                o.clone().unwrap_or_else(|| Outcome::Error {
                    id: item.id.clone(),
                    branch: None,
                    message: j.failure.clone().unwrap_or_else(|| "not processed".into()),
                })
            })
            .collect())
    }

    /// Items still lacking an outcome.
    pub fn remaining(&self, id: &str) -> Result<Vec<(usize, ExamItem)>, StoreError> {
        let jobs = self.jobs.lock().expect("store lock");
        let j = jobs.get(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        Ok(j.items.iter().enumerate().filter(|(i, _)| j.outcomes[*i].is_none()).map(|(i, it)| (i, it.clone())).collect())
    }

    /// Jobs that were accepted but not finished, oldest first.
    pub fn unfinished(&self) -> Vec<String> {
        let jobs = self.jobs.lock().expect("store lock");
        let mut v: Vec<(&String, &String)> = jobs.values().filter(|j| !j.state.is_finished()).map(|j| (&j.submitted_at, &j.id)).collect();
        v.sort();
        v.into_iter().map(|(_, id)| id.clone()).collect()
    }
}

fn replay(path: &Path) -> Result<Option<Job>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::Journal { path: path.display().to_string(), message: e.to_string() })?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut job: Option<Job> = None;
    for (n, line) in lines.iter().enumerate() {
        let event: Event = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) if n + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final line ({e})", path.display());
                break;
            }
            Err(e) => {
                return Err(StoreError::Journal { path: path.display().to_string(), message: format!("line {}: {e}", n + 1) });
            }
        };
        let bad = |m: &str| StoreError::Journal { path: path.display().to_string(), message: format!("line {}: {m}", n + 1) };
        match (event, job.as_mut()) {
            (Event::Submitted { job_id, items, at }, None) => {
                let items = items
                    .into_iter()
                    .map(validate_submission)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
                let outcomes = vec![None; items.len()];
                job = Some(Job { id: job_id, state: JobState::Pending, items, outcomes, submitted_at: at.clone(), updated_at: at, failure: None });
            }
            (Event::Started { at }, Some(j)) => {
                j.state = JobState::Running;
                j.updated_at = at;
            }
            (Event::Outcome { index, outcome }, Some(j)) if index < j.outcomes.len() => j.outcomes[index] = Some(outcome),
            (Event::Completed { at }, Some(j)) => {
                j.state = JobState::Completed;
                j.updated_at = at;
            }
            (Event::Failed { at, reason }, Some(j)) => {
                j.state = JobState::Failed;
                j.updated_at = at;
                j.failure = Some(reason);
            }
            _ => return Err(bad("event out of order")),
        }
    }
    Ok(job)
}
