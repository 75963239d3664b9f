use std::collections::HashMap;

use alcoref::acquisition::{AcquisitionScore, Strategy};
use alcoref::active_loop::{ranking_order, select_with_read_budget, Label, ReadBudget, Verdict};
use alcoref::corpus::{Document, Span};
use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ApiError, ApiResult};

/// Labels counted towards the headline throughput figure.
pub const THROUGHPUT_WINDOW_MINUTES: i64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// Many spans from a few documents (small `m`).
    FewDocs,
    /// One span per document, documents unconstrained.
    ManyDocs,
    Custom { k_per_doc: usize },
}

impl SessionMode {
    pub fn default_budget(self) -> ReadBudget {
        match self {
            SessionMode::FewDocs => ReadBudget::Docs(1),
            _ => ReadBudget::Unconstrained,
        }
    }

    pub fn per_doc_cap(self) -> Option<usize> {
        match self {
            SessionMode::FewDocs => None,
            SessionMode::ManyDocs => Some(1),
            SessionMode::Custom { k_per_doc } => Some(k_per_doc),
        }
    }
}

/// Orders the labeling queue. A per-document cap keeps only the best spans of
/// each document before the read budget is applied.
pub fn build_queue(
    scored: &[AcquisitionScore],
    k: usize,
    m: ReadBudget,
    per_doc_cap: Option<usize>,
) -> alcoref::Result<Vec<Span>> {
    let Some(cap) = per_doc_cap else {
        return select_with_read_budget(scored, k, m);
    };
    let mut ranked: Vec<&AcquisitionScore> = scored.iter().collect();
    ranked.sort_by(|a, b| ranking_order(a, b));
    let mut taken: HashMap<&str, usize> = HashMap::new();
    let capped: Vec<AcquisitionScore> = ranked
        .into_iter()
        .filter(|s| {
            let n = taken.entry(s.span.doc_id.as_str()).or_default();
            *n += 1;
            *n <= cap
        })
        .cloned()
        .collect();
    select_with_read_budget(&capped, k, m)
}

pub(crate) fn ser_millis<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
}

pub(crate) fn de_millis<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    let s = String::deserialize(d)?;
    DateTime::parse_from_rfc3339(&s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub annotator_id: String,
    pub mode: SessionMode,
    pub strategy: Strategy,
    pub k: usize,
    pub m: ReadBudget,
    /// Cycle whose model sampled the queue.
    pub cycle: usize,
    pub queue: Vec<Span>,
    pub completed: Vec<Label>,
    #[serde(serialize_with = "ser_millis", deserialize_with = "de_millis")]
    pub started_at: DateTime<Utc>,
}

pub enum Submission {
    New(Label),
    Duplicate(Label),
}

impl Session {
    pub fn head(&self) -> Option<&Span> {
        self.queue.get(self.completed.len())
    }

    pub fn remaining(&self) -> usize {
        self.queue.len() - self.completed.len()
    }

    /// Checks a submission against the single-active-query protocol and
    /// builds the label. Does not record it.
    pub fn check(&self, query: &Span, verdict: &Verdict, doc: &Document, now: DateTime<Utc>) -> ApiResult<Submission> {
        if let Some(done) = self.completed.iter().find(|l| &l.query == query) {
            return if &done.verdict == verdict {
                Ok(Submission::Duplicate(done.clone()))
            } else {
                Err(ApiError::Conflict(format!("{query} was already labeled with a different verdict")))
            };
        }
        let Some(head) = self.head() else {
            return Err(ApiError::Conflict("queue is exhausted".into()));
        };
        if head != query {
            return Err(ApiError::Conflict(format!("expected a label for {head}, got {query}")));
        }
        let label = Label {
            query: query.clone(),
            verdict: verdict.clone(),
            timestamp: now,
            annotator_id: self.annotator_id.clone(),
        };
        label
            .validate(doc)
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        Ok(Submission::New(label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub labels: usize,
    pub labels_in_window: usize,
    pub window_minutes: i64,
    /// Seconds between consecutive labels.
    pub inter_arrival_seconds: Vec<f64>,
    pub mean_inter_arrival_seconds: f64,
    /// Consecutive labels whose documents differ.
    pub document_switches: usize,
    pub documents: usize,
}

pub fn session_stats(started_at: DateTime<Utc>, labels: &[Label]) -> SessionStats {
    let window_end = started_at + Duration::minutes(THROUGHPUT_WINDOW_MINUTES);
    let inter_arrival: Vec<f64> = labels
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp).num_milliseconds() as f64 / 1000.0)
        .collect();
    let mean = if inter_arrival.is_empty() {
        0.0
    } else {
        inter_arrival.iter().sum::<f64>() / inter_arrival.len() as f64
    };
    let mut docs: Vec<&str> = labels.iter().map(|l| l.query.doc_id.as_str()).collect();
    let switches = docs.windows(2).filter(|w| w[0] != w[1]).count();
    docs.sort_unstable();
    docs.dedup();
    SessionStats {
        labels: labels.len(),
        labels_in_window: labels.iter().filter(|l| l.timestamp <= window_end).count(),
        window_minutes: THROUGHPUT_WINDOW_MINUTES,
        inter_arrival_seconds: inter_arrival,
        mean_inter_arrival_seconds: mean,
        document_switches: switches,
        documents: docs.len(),
    }
}
