use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use alcoref::acquisition::{score_pool, Strategy};
use alcoref::active_loop::{ActiveLearner, LabeledPool, ReadBudget, Verdict};
use alcoref::clusterer::retain;
use alcoref::corpus::{Range, Span};
use alcoref::metrics::EvalResult;
use alcoref::scorer::ModelParams;
use chrono::{DateTime, SubsecRound, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::session::{build_queue, session_stats, Session, SessionMode, SessionStats, Submission};

pub const SCHEMA_VERSION: u32 = 1;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub annotator_id: String,
    pub mode: SessionMode,
    pub strategy: Strategy,
    pub k: usize,
    /// Defaults to the mode's budget.
    #[serde(default)]
    pub m: Option<ReadBudget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: String,
    pub cycle: usize,
    pub m: ReadBudget,
    pub queue: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub schema_version: u32,
    pub session_id: String,
    /// Index of the query in the session queue.
    pub position: usize,
    pub remaining: usize,
    pub query: Span,
    pub tokens: Vec<String>,
    pub sentence_starts: Vec<usize>,
    /// Retained spans of the same document that precede the query.
    pub candidates: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub query: Span,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub schema_version: u32,
    pub session_id: String,
    pub query: Span,
    pub verdict: Verdict,
    #[serde(serialize_with = "crate::session::ser_millis", deserialize_with = "crate::session::de_millis")]
    pub timestamp: DateTime<Utc>,
    pub position: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub session_id: String,
    #[serde(serialize_with = "crate::session::ser_millis", deserialize_with = "crate::session::de_millis")]
    pub started_at: DateTime<Utc>,
    #[serde(flatten)]
    pub stats: SessionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentPayload {
    pub schema_version: u32,
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub sentence_starts: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleStatus {
    pub schema_version: u32,
    /// Number of completed retraining cycles.
    pub cycle: usize,
    pub training: bool,
    pub n_labels: usize,
    pub last_eval: Option<EvalResult>,
    pub last_error: Option<String>,
}

struct Inner {
    learner: ActiveLearner,
    seed: u64,
    clock: Clock,
    model: RwLock<Arc<ModelParams>>,
    pool: Mutex<LabeledPool>,
    sessions: RwLock<BTreeMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    status: Mutex<CycleStatus>,
    candidates: Mutex<HashMap<String, Arc<Vec<Range>>>>,
    next_session: AtomicU64,
}

/// Shared service state. Each session sits behind its own lock; the pool,
/// the model and the cycle status are shared across sessions.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(learner: ActiveLearner, seed: u64) -> Self {
        Self::with_clock(learner, seed, Arc::new(Utc::now))
    }

    pub fn with_clock(learner: ActiveLearner, seed: u64, clock: Clock) -> Self {
        let model = Arc::new(learner.source.clone());
        Self {
            inner: Arc::new(Inner {
                learner,
                seed,
                clock,
                model: RwLock::new(model),
                pool: Mutex::new(LabeledPool::new()),
                sessions: RwLock::new(BTreeMap::new()),
                status: Mutex::new(CycleStatus {
                    schema_version: SCHEMA_VERSION,
                    ..Default::default()
                }),
                candidates: Mutex::new(HashMap::new()),
                next_session: AtomicU64::new(1),
            }),
        }
    }

    fn now(&self) -> DateTime<Utc> {
        (self.inner.clock)().trunc_subsecs(3)
    }

    fn model(&self) -> Arc<ModelParams> {
        self.inner.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn pool(&self) -> LabeledPool {
        lock(&self.inner.pool).clone()
    }

    fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    pub async fn create_session(&self, req: CreateSession) -> ApiResult<SessionCreated> {
        if req.k == 0 {
            return Err(ApiError::Unprocessable("k must be positive".into()));
        }
        if req.mode.per_doc_cap() == Some(0) {
            return Err(ApiError::Unprocessable("k_per_doc must be positive".into()));
        }
        let m = req.m.unwrap_or(req.mode.default_budget());
        if m == ReadBudget::Docs(0) {
            return Err(ApiError::Unprocessable("m must be positive".into()));
        }
        let n = self.inner.next_session.fetch_add(1, Ordering::SeqCst);
        let session_id = format!("s{n}");
        let model = self.model();
        let pool = self.pool();
        let cycle = lock(&self.inner.status).cycle;
        let state = self.clone();
        let queue = tokio::task::spawn_blocking(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(state.inner.seed);
            rng.set_stream(n);
            let learner = &state.inner.learner;
            let scored = score_pool(req.strategy, learner.model(&model), &learner.target, &pool, &mut rng)?;
            if scored.is_empty() {
                return Err(alcoref::Error::EmptyPool);
            }
            build_queue(&scored, req.k, m, req.mode.per_doc_cap())
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;

        let session = Session {
            session_id: session_id.clone(),
            annotator_id: req.annotator_id,
            mode: req.mode,
            strategy: req.strategy,
            k: req.k,
            m,
            cycle,
            queue: queue.clone(),
            completed: Vec::new(),
            started_at: self.now(),
        };
        tracing::info!(session = %session_id, queued = queue.len(), "session created");
        self.inner
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(session_id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        Ok(SessionCreated {
            schema_version: SCHEMA_VERSION,
            session_id,
            cycle,
            m,
            queue,
        })
    }

    pub async fn session_snapshot(&self, id: &str) -> ApiResult<Session> {
        Ok(self.session(id)?.lock().await.clone())
    }

    async fn retained(&self, doc_id: &str) -> ApiResult<Arc<Vec<Range>>> {
        if let Some(hit) = lock(&self.inner.candidates).get(doc_id) {
            return Ok(hit.clone());
        }
        let model = self.model();
        let state = self.clone();
        let id = doc_id.to_string();
        let ranges = tokio::task::spawn_blocking(move || -> alcoref::Result<Vec<Range>> {
            let learner = &state.inner.learner;
            let doc = learner.target_doc(&id).expect("queued spans come from target documents");
            Ok(retain(learner.model(&model), doc)?.into_iter().map(|e| e.range).collect())
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
        let ranges = Arc::new(ranges);
        lock(&self.inner.candidates).insert(doc_id.to_string(), ranges.clone());
        Ok(ranges)
    }

    /// The active query, or `None` once the queue is exhausted.
    pub async fn next(&self, id: &str) -> ApiResult<Option<QueryPayload>> {
        let (query, position, remaining) = {
            let session = self.session(id)?;
            let s = session.lock().await;
            match s.head() {
                Some(q) => (q.clone(), s.completed.len(), s.remaining()),
                None => return Ok(None),
            }
        };
        let doc = self
            .inner
            .learner
            .target_doc(&query.doc_id)
            .ok_or_else(|| ApiError::Internal(format!("queued span {query} has no document")))?;
        let candidates = self
            .retained(&query.doc_id)
            .await?
            .iter()
            .map(|&(s, e)| doc.span(s, e))
            .filter(|c| c.precedes(&query))
            .collect();
        Ok(Some(QueryPayload {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            position,
            remaining,
            query,
            tokens: doc.tokens.clone(),
            sentence_starts: doc.sentence_starts.clone(),
            candidates,
        }))
    }

    /// Records a label for the session's active query. Resubmitting an
    /// accepted `(query, verdict)` returns the original acknowledgement.
    pub async fn label(&self, id: &str, req: LabelRequest) -> ApiResult<LabelAck> {
        let session = self.session(id)?;
        let mut s = session.lock().await;
        let doc = self
            .inner
            .learner
            .target_doc(&req.query.doc_id)
            .ok_or_else(|| ApiError::Unprocessable(format!("unknown document {}", req.query.doc_id)))?;
        let label = match s.check(&req.query, &req.verdict, doc, self.now())? {
            Submission::Duplicate(label) => label,
            Submission::New(label) => {
                {
                    let mut pool = lock(&self.inner.pool);
                    let cycle = lock(&self.inner.status).cycle + 1;
                    pool.insert(label.clone(), cycle)
                        .map_err(|e| ApiError::Conflict(e.to_string()))?;
                }
                s.completed.push(label.clone());
                label
            }
        };
        let position = s.completed.iter().position(|l| l.query == label.query).unwrap_or_default();
        Ok(LabelAck {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            query: label.query,
            verdict: label.verdict,
            timestamp: label.timestamp,
            position,
            remaining: s.remaining(),
        })
    }

    pub async fn stats(&self, id: &str) -> ApiResult<StatsReport> {
        let session = self.session(id)?;
        let s = session.lock().await;
        Ok(StatsReport {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            started_at: s.started_at,
            stats: session_stats(s.started_at, &s.completed),
        })
    }

    pub fn document(&self, id: &str) -> ApiResult<DocumentPayload> {
        let doc = self
            .inner
            .learner
            .target_doc(id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown document {id}")))?;
        Ok(DocumentPayload {
            schema_version: SCHEMA_VERSION,
            doc_id: doc.doc_id.clone(),
            tokens: doc.tokens.clone(),
            sentence_starts: doc.sentence_starts.clone(),
        })
    }

    pub fn cycle_status(&self) -> CycleStatus {
        lock(&self.inner.status).clone()
    }

    /// Closes the current cycle and retrains from the source model on the
    /// whole pool in a background task. Sessions keep accepting labels while
    /// training runs; those labels count towards the following cycle.
    pub fn advance(&self) -> ApiResult<CycleStatus> {
        let pool = self.pool();
        if pool.is_empty() {
            return Err(ApiError::Unprocessable("no labels to train on".into()));
        }
        let snapshot = {
            let mut status = lock(&self.inner.status);
            if status.training {
                return Err(ApiError::Conflict("training is already running".into()));
            }
            status.training = true;
            status.n_labels = pool.len();
            status.last_error = None;
            status.clone()
        };
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let learner = &state.inner.learner;
            let seed = state.inner.seed.wrapping_add(snapshot.cycle as u64 + 1);
            let result = learner
                .retrain(&pool, seed)
                .and_then(|(model, _)| learner.evaluate(&model).map(|(eval, _)| (model, eval)));
            let mut status = lock(&state.inner.status);
            status.training = false;
            match result {
                Ok((model, eval)) => {
                    *state.inner.model.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(model);
                    lock(&state.inner.candidates).clear();
                    status.cycle += 1;
                    status.last_eval = Some(eval);
                    tracing::info!(cycle = status.cycle, avg_f1 = eval.avg_f1, "cycle trained");
                }
                Err(e) => {
                    tracing::error!(error = %e, "training failed");
                    status.last_error = Some(e.to_string());
                }
            }
        });
        Ok(snapshot)
    }

    /// Writes every session and the labeled pool under `dir`.
    pub async fn persist(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("sessions"))?;
        let sessions: Vec<_> = self
            .inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        for session in sessions {
            let s = session.lock().await;
            let path = dir.join("sessions").join(format!("{}.json", s.session_id));
            std::fs::write(path, serde_json::to_string_pretty(&*s)? + "\n")?;
        }
        std::fs::write(dir.join("pool.json"), serde_json::to_string(&self.pool())? + "\n")?;
        Ok(())
    }

    /// Reloads sessions and the pool written by [`AppState::persist`].
    pub fn restore(&self, dir: &Path) -> std::io::Result<usize> {
        let pool_path = dir.join("pool.json");
        if pool_path.exists() {
            *lock(&self.inner.pool) = serde_json::from_str(&std::fs::read_to_string(pool_path)?)?;
        }
        let mut restored = 0;
        let session_dir = dir.join("sessions");
        if !session_dir.exists() {
            return Ok(0);
        }
        let mut sessions = self.inner.sessions.write().unwrap_or_else(|e| e.into_inner());
        for entry in std::fs::read_dir(session_dir)? {
            let s: Session = serde_json::from_str(&std::fs::read_to_string(entry?.path())?)?;
            if let Some(n) = s.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                self.inner.next_session.fetch_max(n + 1, Ordering::SeqCst);
            }
            sessions.insert(s.session_id.clone(), Arc::new(tokio::sync::Mutex::new(s)));
            restored += 1;
        }
        Ok(restored)
    }
}
