//! Incremental inference: retained spans are read in document order and each
//! one either joins the best-scoring observed cluster or opens a new one.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{bucket, Document, Range, Span};
use crate::error::{Error, Result};
use crate::scorer::{
    argmax_positive, encode_candidates, nn::logistic, prune_indices, EncodedSpan, Model,
    ModelParams, NEW_CLUSTER_SCORE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<Range>,
    pub repr: Vec<f64>,
    /// Processing index of the most recent member.
    pub last: usize,
}

/// Observed clusters in creation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub clusters: Vec<Cluster>,
}

impl ClusterState {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster index of every member span.
    pub fn membership(&self) -> HashMap<Range, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.members.iter().map(move |&r| (r, ci)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "cluster")]
pub enum Action {
    NewCluster,
    Join(usize),
}

/// Decision record for one processed span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub start: usize,
    pub end: usize,
    /// `s(x, c)` for every cluster observed when the span was processed.
    pub scores: Vec<f64>,
    /// Softmax over `scores` followed by the new-cluster outcome.
    pub distribution: Vec<f64>,
    pub action: Action,
    pub s_m: f64,
    pub p_mention: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub doc_id: String,
    pub steps: Vec<TraceStep>,
}

impl InferenceTrace {
    pub fn step(&self, span: &Span) -> Result<&TraceStep> {
        if span.doc_id == self.doc_id {
            if let Some(step) = self
                .steps
                .iter()
                .find(|s| (s.start, s.end) == span.range())
            {
                return Ok(step);
            }
        }
        Err(Error::SpanNotInTrace(span.to_string()))
    }

    /// One JSON object per processed span.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut out, &TraceLine { doc_id: &self.doc_id, step })?;
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    doc_id: &'a str,
    #[serde(flatten)]
    step: &'a TraceStep,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrumentation {
    /// Most cluster representations alive at any point.
    pub peak_live_reps: usize,
    pub pair_evaluations: usize,
}

/// Everything produced by one pass over a document.
#[derive(Debug, Clone)]
pub struct DocInference {
    pub doc_id: String,
    /// Retained spans in document order, with representations and scores.
    pub retained: Vec<EncodedSpan>,
    pub state: ClusterState,
    pub trace: InferenceTrace,
    /// Predicted clusters after the singleton filter.
    pub clusters: Vec<Vec<Range>>,
    pub counters: Instrumentation,
}

/// Convex mix `gate * g_c + (1 - gate) * g_x`.
pub fn update_rep(g_c: &[f64], g_x: &[f64], gate: f64) -> Result<Vec<f64>> {
    if g_c.len() != g_x.len() {
        return Err(Error::Dimension {
            expected: g_c.len(),
            got: g_x.len(),
        });
    }
    Ok(g_c
        .iter()
        .zip(g_x)
        .map(|(c, x)| gate * c + (1.0 - gate) * x)
        .collect())
}

/// Softmax over `scores` plus a trailing new-cluster outcome scored 0.
pub fn softmax_with_new(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(NEW_CLUSTER_SCORE, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .chain(std::iter::once(&NEW_CLUSTER_SCORE))
        .map(|s| (s - max).exp())
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Assignment distribution recorded for `span` at processing time.
pub fn cluster_distribution<'t>(trace: &'t InferenceTrace, span: &Span) -> Result<&'t [f64]> {
    Ok(&trace.step(span)?.distribution)
}

pub fn retain(model: Model, doc: &Document) -> Result<Vec<EncodedSpan>> {
    let mut encoded = encode_candidates(model, doc)?;
    let scored: Vec<(Range, f64)> = encoded.iter().map(|e| (e.range, e.s_m)).collect();
    let keep = prune_indices(model.params, doc.len(), &scored);
    let mut taken: Vec<Option<EncodedSpan>> = encoded.drain(..).map(Some).collect();
    Ok(keep.into_iter().filter_map(|i| taken[i].take()).collect())
}

pub fn infer_document(model: Model, doc: &Document) -> Result<DocInference> {
    let retained = retain(model, doc)?;
    infer_retained(model.params, doc, retained)
}

/// Runs the incremental clusterer over an already encoded retained set.
pub fn infer_retained(
    params: &ModelParams,
    doc: &Document,
    retained: Vec<EncodedSpan>,
) -> Result<DocInference> {
    let mut state = ClusterState::default();
    let mut cluster_s_m: Vec<f64> = Vec::new();
    let mut steps = Vec::with_capacity(retained.len());
    let mut counters = Instrumentation::default();

    for (i, x) in retained.iter().enumerate() {
        let scores = state
            .clusters
            .iter()
            .zip(&cluster_s_m)
            .map(|(c, &s_c)| {
                Ok(x.s_m + s_c + params.pair_logit(&x.repr, &c.repr, bucket(i - c.last))?)
            })
            .collect::<Result<Vec<f64>>>()?;
        counters.pair_evaluations += scores.len();
        let distribution = softmax_with_new(&scores);
        let action = match argmax_positive(&scores) {
            Some(c) => {
                let cluster = &mut state.clusters[c];
                let gate = params.gate(&cluster.repr, &x.repr)?;
                cluster.repr = update_rep(&cluster.repr, &x.repr, gate)?;
                cluster.members.push(x.range);
                cluster.last = i;
                cluster_s_m[c] = params.mention_logit(&cluster.repr)?;
                Action::Join(c)
            }
            None => {
                state.clusters.push(Cluster {
                    members: vec![x.range],
                    repr: x.repr.clone(),
                    last: i,
                });
                cluster_s_m.push(x.s_m);
                Action::NewCluster
            }
        };
        counters.peak_live_reps = counters.peak_live_reps.max(state.clusters.len());
        steps.push(TraceStep {
            start: x.range.0,
            end: x.range.1,
            scores,
            distribution,
            action,
            s_m: x.s_m,
            p_mention: logistic(x.s_m),
        });
    }

    let p_by_range: HashMap<Range, f64> = steps
        .iter()
        .map(|s| ((s.start, s.end), s.p_mention))
        .collect();
    let threshold = params.hyper.mention_threshold;
    let clusters = state
        .clusters
        .iter()
        .filter(|c| c.members.len() > 1 || p_by_range[&c.members[0]] >= threshold)
        .map(|c| c.members.clone())
        .collect();

    Ok(DocInference {
        doc_id: doc.doc_id.clone(),
        retained,
        state,
        trace: InferenceTrace {
            doc_id: doc.doc_id.clone(),
            steps,
        },
        clusters,
        counters,
    })
}

/// Document-parallel inference; output order follows `docs`.
pub fn infer_corpus(model: Model, docs: &[Document]) -> Result<Vec<DocInference>> {
    docs.par_iter().map(|d| infer_document(model, d)).collect()
}

/// Antecedent distribution of retained span `index` over every preceding
/// retained span followed by the dummy antecedent at score 0.
pub fn antecedent_distribution_at(
    params: &ModelParams,
    retained: &[EncodedSpan],
    index: usize,
) -> Result<Vec<f64>> {
    let x = &retained[index];
    let scores = retained[..index]
        .iter()
        .enumerate()
        .map(|(j, y)| Ok(x.s_m + y.s_m + params.pair_logit(&x.repr, &y.repr, bucket(index - j))?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax_with_new(&scores))
}

/// [`antecedent_distribution_at`] for a span given by position in `doc`.
pub fn antecedent_distribution(model: Model, doc: &Document, span: &Span) -> Result<Vec<f64>> {
    let retained = retain(model, doc)?;
    let index = retained
        .iter()
        .position(|e| e.range == span.range() && span.doc_id == doc.doc_id)
        .ok_or_else(|| Error::SpanNotInTrace(span.to_string()))?;
    antecedent_distribution_at(model.params, &retained, index)
}
