//! Runs live in `<data_dir>/<run_id>/events.jsonl`: one `created` line, then
//! one line per review. Loading replays the log; the pipeline is
//! deterministic, so the run is rebuilt from its stored inputs.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::http::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use melreject_core::ingest::{set_from_json_value, to_json_value, ParseOptions, Role};
use melreject_core::pipeline::{run_pipeline, PipelineOutput};
use melreject_core::rejection::RejectionPolicy;
use melreject_core::report::RowMeta;

use crate::error::ApiError;
use crate::model::{CreateRunRequest, ReviewRecord, ReviewRequest, RunStatus, RunView};

pub const LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created {
        run_id: String,
        created: String,
        policy: RejectionPolicy,
        meta: RowMeta,
        validation: Value,
        test: Value,
    },
    Review(ReviewRecord),
}

/// A run whose pipeline finished. Immutable after creation.
#[derive(Debug)]
pub struct Run {
    pub run_id: String,
    pub created: String,
    pub meta: RowMeta,
    /// Policy as requested, before threshold selection.
    pub requested: RejectionPolicy,
    pub output: PipelineOutput,
    rejected_ids: HashSet<String>,
}

impl Run {
    fn build(
        run_id: String,
        created: String,
        requested: RejectionPolicy,
        meta: RowMeta,
        validation: &melreject_core::EvaluationSet,
        test: &melreject_core::EvaluationSet,
    ) -> melreject_core::Result<Run> {
        let output = run_pipeline(validation, test, &requested, meta.clone())?;
        let rejected_ids = output
            .evaluation
            .partition
            .rejected
            .records()
            .iter()
            .map(|r| r.sample_id.clone())
            .collect();
        Ok(Run {
            run_id,
            created,
            meta,
            requested,
            output,
            rejected_ids,
        })
    }

    pub fn is_rejected(&self, sample_id: &str) -> bool {
        self.rejected_ids.contains(sample_id)
    }
}

#[derive(Debug)]
pub struct RunHandle {
    pub run_id: String,
    pub created: String,
    /// `Err` holds the reason a stored run could not be replayed.
    pub run: std::result::Result<Run, String>,
    reviews: Mutex<BTreeMap<String, ReviewRecord>>,
    log_path: PathBuf,
}

impl RunHandle {
    pub fn ready(&self) -> Result<&Run, ApiError> {
        self.run.as_ref().map_err(|reason| {
            ApiError::new(StatusCode::CONFLICT, "run_unavailable", "run could not be loaded")
                .with_detail(json!({ "run_id": self.run_id, "reason": reason }))
        })
    }

    pub fn reviews(&self) -> BTreeMap<String, ReviewRecord> {
        self.reviews.lock().expect("review lock").clone()
    }

    pub fn view(&self) -> RunView {
        let reviewed = self.reviews.lock().expect("review lock").len();
        match &self.run {
            Ok(run) => RunView {
                run_id: self.run_id.clone(),
                created: self.created.clone(),
                status: RunStatus::Ready,
                error: None,
                meta: run.meta.clone(),
                policy: Some(run.output.policy),
                validation_records: run.output.validation.len(),
                test_records: run.output.test.len(),
                accepted: run.output.evaluation.partition.accepted.len(),
                rejected: run.output.evaluation.partition.rejected.len(),
                reviewed,
            },
            Err(reason) => RunView {
                run_id: self.run_id.clone(),
                created: self.created.clone(),
                status: RunStatus::Error,
                error: Some(reason.clone()),
                meta: RowMeta::default(),
                policy: None,
                validation_records: 0,
                test_records: 0,
                accepted: 0,
                rejected: 0,
                reviewed,
            },
        }
    }

    /// Store a verdict for a sample in the rejected partition. The review
    /// lock is held across the log append, so concurrent duplicates
    /// serialize and all but the first get 409.
    pub fn submit_review(&self, req: ReviewRequest) -> Result<ReviewRecord, ApiError> {
        let run = self.ready()?;
        if req.reviewer.trim().is_empty() {
            return Err(ApiError::bad_request("reviewer must not be empty"));
        }
        if !run.is_rejected(&req.sample_id) {
            return Err(ApiError::not_found("sample is not in the uncertain queue")
                .with_detail(json!({ "run_id": self.run_id, "sample_id": req.sample_id })));
        }
        let mut reviews = self.reviews.lock().expect("review lock");
        if let Some(existing) = reviews.get(&req.sample_id) {
            return Err(ApiError::new(StatusCode::CONFLICT, "already_reviewed", "sample already reviewed")
                .with_detail(serde_json::to_value(existing).expect("review serializes")));
        }
        let record = ReviewRecord {
            run_id: self.run_id.clone(),
            sample_id: req.sample_id,
            human_label: req.human_label,
            reviewer: req.reviewer,
            timestamp: now(),
        };
        append_event(&self.log_path, &Event::Review(record.clone()))
            .map_err(|e| ApiError::internal(format!("cannot persist review: {e}")))?;
        reviews.insert(record.sample_id.clone(), record.clone());
        Ok(record)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn append_event(path: &Path, event: &Event) -> io::Result<()> {
    let mut line = serde_json::to_string(event).map_err(io::Error::other)?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.sync_data()
}

pub struct Store {
    dir: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<RunHandle>>>,
    ids: Mutex<ulid::Generator>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish_non_exhaustive()
    }
}

impl Store {
    /// Open (creating if needed) a data directory and replay every run in it.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Store> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut runs = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let log = entry.path().join(LOG_FILE);
            if entry.file_type()?.is_dir() && log.is_file() {
                let handle = load_run(&entry.file_name().to_string_lossy(), &log)?;
                runs.insert(handle.run_id.clone(), Arc::new(handle));
            }
        }
        Ok(Store {
            dir,
            runs: RwLock::new(runs),
            ids: Mutex::new(ulid::Generator::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, run_id: &str) -> Result<Arc<RunHandle>, ApiError> {
        self.runs
            .read()
            .expect("run map lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::run_not_found(run_id))
    }

    pub fn list(&self) -> Vec<RunView> {
        self.runs.read().expect("run map lock").values().map(|h| h.view()).collect()
    }

    fn next_id(&self) -> String {
        let mut generator = self.ids.lock().expect("id lock");
        // The generator only fails when the random part overflows within one
        // millisecond; fall back to a fresh id in that case.
        generator.generate().unwrap_or_else(|_| ulid::Ulid::new()).to_string()
    }

    /// Parse, sweep, select and persist. Nothing is written when any step
    /// fails.
    pub fn create_run(&self, req: CreateRunRequest) -> Result<Arc<RunHandle>, ApiError> {
        let positive = req.positive_class.as_deref();
        let validation = req
            .validation
            .parse("validation", Role::Validation, positive)
            .map_err(|e| ApiError::from(e).with_detail(json!({ "payload": "validation" })))?;
        let test = req
            .test
            .parse("test", Role::Test, positive)
            .map_err(|e| ApiError::from(e).with_detail(json!({ "payload": "test" })))?;
        for (which, set) in [("validation", &validation), ("test", &test)] {
            if set.is_empty() {
                return Err(ApiError::bad_request(format!("{which} payload has no records"))
                    .with_detail(json!({ "payload": which })));
            }
        }
        let requested = req.policy.apply(RejectionPolicy::default());
        let meta = req.meta.unwrap_or_else(|| RowMeta {
            test_set: test.name().to_string(),
            ..RowMeta::default()
        });
        let run_id = self.next_id();
        let created = now();
        let run = Run::build(run_id.clone(), created.clone(), requested, meta.clone(), &validation, &test)
            .map_err(ApiError::from)?;

        let run_dir = self.dir.join(&run_id);
        fs::create_dir(&run_dir).map_err(|e| ApiError::internal(format!("cannot create run directory: {e}")))?;
        let log_path = run_dir.join(LOG_FILE);
        let event = Event::Created {
            run_id: run_id.clone(),
            created: created.clone(),
            policy: requested,
            meta,
            validation: to_json_value(&validation),
            test: to_json_value(&test),
        };
        append_event(&log_path, &event).map_err(|e| ApiError::internal(format!("cannot persist run: {e}")))?;
        let handle = Arc::new(RunHandle {
            run_id: run_id.clone(),
            created,
            run: Ok(run),
            reviews: Mutex::new(BTreeMap::new()),
            log_path,
        });
        self.runs.write().expect("run map lock").insert(run_id, handle.clone());
        Ok(handle)
    }

    /// SHA-256 over every file in the data directory, in path order.
    pub fn fingerprint(&self) -> io::Result<String> {
        let mut files: Vec<PathBuf> = Vec::new();
        let mut stack = vec![self.dir.clone()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let entry = entry?;
                if entry.file_type()?.is_dir() {
                    stack.push(entry.path());
                } else {
                    files.push(entry.path());
                }
            }
        }
        files.sort();
        let mut hasher = Sha256::new();
        for f in files {
            let rel = f.strip_prefix(&self.dir).unwrap_or(&f);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(&f)?);
            hasher.update([0]);
        }
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn load_run(dir_name: &str, log: &Path) -> io::Result<RunHandle> {
    let text = fs::read_to_string(log)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let failed = |reason: String| RunHandle {
        run_id: dir_name.to_string(),
        created: String::new(),
        run: Err(reason),
        reviews: Mutex::new(BTreeMap::new()),
        log_path: log.to_path_buf(),
    };
    let Some((first, rest)) = lines.split_first() else {
        return Ok(failed("empty event log".into()));
    };
    let (run_id, created, policy, meta, validation, test) = match serde_json::from_str(first) {
        Ok(Event::Created {
            run_id,
            created,
            policy,
            meta,
            validation,
            test,
        }) => (run_id, created, policy, meta, validation, test),
        Ok(Event::Review(_)) => return Ok(failed("event log does not start with a created event".into())),
        Err(e) => return Ok(failed(format!("unreadable created event: {e}"))),
    };
    let opts = |role| ParseOptions {
        role,
        ..ParseOptions::default()
    };
    let built = set_from_json_value(validation, &opts(Role::Validation))
        .and_then(|v| set_from_json_value(test, &opts(Role::Test)).map(|t| (v, t)))
        .and_then(|(v, t)| Run::build(run_id.clone(), created.clone(), policy, meta, &v, &t));
    let mut reviews = BTreeMap::new();
    for (i, line) in rest.iter().enumerate() {
        match serde_json::from_str::<Event>(line) {
            Ok(Event::Review(r)) => {
                reviews.entry(r.sample_id.clone()).or_insert(r);
            }
            // A torn final line from an interrupted append is dropped.
            Err(_) if i + 1 == rest.len() => {}
            Ok(Event::Created { .. }) | Err(_) => {
                return Ok(failed(format!("corrupt event at line {}", i + 2)));
            }
        }
    }
    Ok(RunHandle {
        run_id,
        created,
        run: built.map_err(|e| e.to_string()),
        reviews: Mutex::new(reviews),
        log_path: log.to_path_buf(),
    })
}
