//! Post-hoc analyses: what kinds of spans were sampled, what kinds of
//! clustering errors remain, and how long each strategy takes to sample.
//!
//! The error taxonomy is a simplified, alignment-based variant of the
//! Kummerfeld and Klein transformation categories: each predicted cluster is
//! greedily aligned to one gold cluster and the six categories are counted
//! from that alignment rather than from a sequence of repair operations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::active_loop::Label;
use crate::corpus::{lexicon, Document, Range, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounLexicon {
    words: HashSet<String>,
}

impl Default for PronounLexicon {
    fn default() -> Self {
        Self::from_words(lexicon::PRONOUNS.iter().copied())
    }
}

impl PronounLexicon {
    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        Self {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(&token.to_lowercase())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanTypeCounts {
    pub entity_mentions: usize,
    pub non_entities: usize,
    pub pronouns: usize,
    pub singletons: usize,
}

impl SpanTypeCounts {
    pub fn add(&mut self, other: SpanTypeCounts) {
        self.entity_mentions += other.entity_mentions;
        self.non_entities += other.non_entities;
        self.pronouns += other.pronouns;
        self.singletons += other.singletons;
    }

    pub fn total(&self) -> usize {
        self.entity_mentions + self.non_entities
    }
}

/// Counts the types of sampled spans against gold annotations.
pub fn classify_spans<'a>(
    spans: impl IntoIterator<Item = &'a Span>,
    docs: &[Document],
    pronouns: &PronounLexicon,
) -> Result<SpanTypeCounts> {
    let by_id: HashMap<&str, (&Document, HashMap<Range, usize>)> = docs
        .iter()
        .map(|d| (d.doc_id.as_str(), (d, d.gold_index())))
        .collect();
    let mut counts = SpanTypeCounts::default();
    for span in spans {
        let (doc, index) = by_id
            .get(span.doc_id.as_str())
            .ok_or_else(|| Error::InvalidLabel(format!("span {span} refers to an unknown document")))?;
        if !doc.contains(span) {
            return Err(Error::InvalidLabel(format!("span {span} outside its document")));
        }
        match index.get(&span.range()) {
            Some(&c) => {
                counts.entity_mentions += 1;
                if doc.gold_clusters[c].len() == 1 {
                    counts.singletons += 1;
                }
            }
            None => counts.non_entities += 1,
        }
        if span.width() == 1 && pronouns.contains(&doc.tokens[span.start]) {
            counts.pronouns += 1;
        }
    }
    Ok(counts)
}

pub fn classify_sampled_spans(labels: &[Label], docs: &[Document], pronouns: &PronounLexicon) -> Result<SpanTypeCounts> {
    classify_spans(labels.iter().map(|l| &l.query), docs, pronouns)
}

/// Running totals of per-cycle counts.
pub fn cumulative(per_cycle: &[SpanTypeCounts]) -> Vec<SpanTypeCounts> {
    let mut acc = SpanTypeCounts::default();
    per_cycle
        .iter()
        .map(|c| {
            acc.add(*c);
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub missing_entity: usize,
    pub extra_entity: usize,
    pub missing_mention: usize,
    pub extra_mention: usize,
    pub divided_entity: usize,
    pub conflated_entity: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, other: ErrorCounts) {
        self.missing_entity += other.missing_entity;
        self.extra_entity += other.extra_entity;
        self.missing_mention += other.missing_mention;
        self.extra_mention += other.extra_mention;
        self.divided_entity += other.divided_entity;
        self.conflated_entity += other.conflated_entity;
    }

    pub fn total(&self) -> usize {
        self.missing_entity
            + self.extra_entity
            + self.missing_mention
            + self.extra_mention
            + self.divided_entity
            + self.conflated_entity
    }
}

/// Gold clusters in a canonical order so that index tie-breaks do not depend
/// on how the input happened to be ordered.
fn canonical<M: Ord + Clone>(clusters: &[Vec<M>]) -> Vec<Vec<M>> {
    let mut out: Vec<Vec<M>> = clusters
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort();
            c
        })
        .collect();
    out.sort();
    out
}

/// Error taxonomy for one document.
pub fn error_report<M: Eq + Hash + Ord + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> ErrorCounts {
    let gold = canonical(gold);
    let gold_of: HashMap<&M, usize> = gold
        .iter()
        .enumerate()
        .flat_map(|(gi, c)| c.iter().map(move |m| (m, gi)))
        .collect();

    let mut counts = ErrorCounts::default();
    let mut touched = vec![false; gold.len()];
    let mut aligned_members: Vec<HashSet<&M>> = vec![HashSet::new(); gold.len()];
    let mut splits: Vec<HashSet<usize>> = vec![HashSet::new(); gold.len()];

    for (pi, p) in pred.iter().enumerate() {
        let mut overlap: BTreeMap<usize, usize> = BTreeMap::new();
        for m in p {
            if let Some(&gi) = gold_of.get(m) {
                *overlap.entry(gi).or_default() += 1;
            }
        }
        counts.conflated_entity += overlap.len().saturating_sub(1);
        for &gi in overlap.keys() {
            touched[gi] = true;
            splits[gi].insert(pi);
        }
        // Larger overlap, then larger gold cluster, then lower index.
        let best = overlap
            .iter()
            .max_by(|a, b| {
                a.1.cmp(b.1)
                    .then(gold[*a.0].len().cmp(&gold[*b.0].len()))
                    .then(b.0.cmp(a.0))
            })
            .map(|(&gi, _)| gi);
        match best {
            None => counts.extra_entity += 1,
            Some(gi) => {
                for m in p {
                    if gold_of.get(m) == Some(&gi) {
                        aligned_members[gi].insert(m);
                    } else {
                        counts.extra_mention += 1;
                    }
                }
            }
        }
    }

    for (gi, g) in gold.iter().enumerate() {
        if !touched[gi] {
            counts.missing_entity += 1;
            continue;
        }
        counts.missing_mention += g.iter().filter(|m| !aligned_members[gi].contains(m)).count();
        counts.divided_entity += splits[gi].len().saturating_sub(1);
    }
    counts
}

/// Error taxonomy summed over documents.
pub fn corpus_error_report(gold: &[Document], pred: &[Vec<Vec<Range>>]) -> Result<ErrorCounts> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidClustering(format!(
            "{} gold documents but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = ErrorCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        total.add(error_report(&g.gold_clusters, p));
    }
    Ok(total)
}

/// One sampling batch as recorded in a run's timing log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub run_id: String,
    pub cycle: usize,
    pub strategy: String,
    pub sample_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub strategy: String,
    pub batches: usize,
    pub mean_sample_seconds: f64,
    pub mean_train_seconds: f64,
}

/// Mean wall-clock seconds per batch for each strategy, in name order.
pub fn timing_report(records: &[TimingRecord]) -> Vec<TimingSummary> {
    let mut by_strategy: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let e = by_strategy.entry(&r.strategy).or_default();
        e.0 += 1;
        e.1 += r.sample_seconds;
        e.2 += r.train_seconds;
    }
    by_strategy
        .into_iter()
        .map(|(strategy, (n, sample, train))| TimingSummary {
            strategy: strategy.to_string(),
            batches: n,
            mean_sample_seconds: sample / n as f64,
            mean_train_seconds: train / n as f64,
        })
        .collect()
}
