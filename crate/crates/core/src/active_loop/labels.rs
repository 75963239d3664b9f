use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Document, Span};
use crate::error::{Error, Result};

/// Discrete annotation for one queried span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Verdict {
    Antecedent { span: Span },
    NoPriorAntecedent,
    NotAMention,
}

impl Verdict {
    pub fn is_mention(&self) -> bool {
        !matches!(self, Verdict::NotAMention)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub query: Span,
    pub verdict: Verdict,
    #[serde(serialize_with = "ser_millis", deserialize_with = "de_millis")]
    pub timestamp: DateTime<Utc>,
    pub annotator_id: String,
}

fn ser_millis<S: Serializer>(t: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
}

fn de_millis<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
    let s = String::deserialize(d)?;
    DateTime::parse_from_rfc3339(&s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(serde::de::Error::custom)
}

impl Label {
    /// Checks that both spans lie in `doc` and the antecedent precedes the query.
    pub fn validate(&self, doc: &Document) -> Result<()> {
        if !doc.contains(&self.query) {
            return Err(Error::InvalidLabel(format!(
                "query {} outside document {}",
                self.query, doc.doc_id
            )));
        }
        if let Verdict::Antecedent { span } = &self.verdict {
            if !doc.contains(span) {
                return Err(Error::InvalidLabel(format!(
                    "antecedent {span} outside document {}",
                    doc.doc_id
                )));
            }
            if !span.precedes(&self.query) {
                return Err(Error::InvalidLabel(format!(
                    "antecedent {span} does not precede query {}",
                    self.query
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub label: Label,
    pub cycle: usize,
}

/// Labels accumulated across cycles, at most one per span. Serialized as a
/// list of entries in span order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<PoolEntry>", into = "Vec<PoolEntry>")]
pub struct LabeledPool {
    entries: BTreeMap<Span, PoolEntry>,
}

impl From<Vec<PoolEntry>> for LabeledPool {
    fn from(entries: Vec<PoolEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.label.query.clone(), e)).collect(),
        }
    }
}

impl From<LabeledPool> for Vec<PoolEntry> {
    fn from(pool: LabeledPool) -> Self {
        pool.entries.into_values().collect()
    }
}

impl LabeledPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, span: &Span) -> bool {
        self.entries.contains_key(span)
    }

    pub fn get(&self, span: &Span) -> Option<&PoolEntry> {
        self.entries.get(span)
    }

    /// Adds a label. Returns `Ok(false)` for an identical resubmission and an
    /// error when the span already carries a different verdict.
    pub fn insert(&mut self, label: Label, cycle: usize) -> Result<bool> {
        if let Some(existing) = self.entries.get(&label.query) {
            return if existing.label.verdict == label.verdict {
                Ok(false)
            } else {
                Err(Error::InvalidLabel(format!(
                    "span {} already labeled differently",
                    label.query
                )))
            };
        }
        self.entries
            .insert(label.query.clone(), PoolEntry { label, cycle });
        Ok(true)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.entries.values().map(|e| &e.label)
    }

    pub fn for_doc<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a Label> + 'a {
        self.entries
            .values()
            .map(|e| &e.label)
            .filter(move |l| l.query.doc_id == doc_id)
    }

    pub fn doc_ids(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|s| s.doc_id.as_str()).collect()
    }

    pub fn labels_in_cycle(&self, cycle: usize) -> impl Iterator<Item = &Label> {
        self.entries
            .values()
            .filter(move |e| e.cycle == cycle)
            .map(|e| &e.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        Document {
            doc_id: "d".into(),
            tokens: vec!["a".into(); 6],
            sentence_starts: vec![0],
            gold_clusters: vec![],
        }
    }

    fn label(q: (usize, usize), verdict: Verdict) -> Label {
        Label {
            query: Span::new("d", q.0, q.1),
            verdict,
            timestamp: DateTime::UNIX_EPOCH,
            annotator_id: "t".into(),
        }
    }

    #[test]
    fn antecedent_must_precede() {
        let d = doc();
        let ok = label((3, 4), Verdict::Antecedent { span: Span::new("d", 0, 1) });
        ok.validate(&d).unwrap();
        let same_start = label((3, 5), Verdict::Antecedent { span: Span::new("d", 3, 4) });
        same_start.validate(&d).unwrap();
        let after = label((1, 2), Verdict::Antecedent { span: Span::new("d", 3, 4) });
        assert!(after.validate(&d).is_err());
        let other_doc = label((3, 4), Verdict::Antecedent { span: Span::new("e", 0, 1) });
        assert!(other_doc.validate(&d).is_err());
    }

    #[test]
    fn pool_is_idempotent_and_rejects_conflicts() {
        let mut pool = LabeledPool::new();
        assert!(pool.insert(label((1, 2), Verdict::NotAMention), 1).unwrap());
        assert!(!pool.insert(label((1, 2), Verdict::NotAMention), 2).unwrap());
        assert!(pool.insert(label((1, 2), Verdict::NoPriorAntecedent), 2).is_err());
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.get(&Span::new("d", 1, 2)).unwrap().cycle, 1);
    }

    #[test]
    fn label_json_uses_millisecond_timestamps() {
        let mut l = label((1, 2), Verdict::Antecedent { span: Span::new("d", 0, 1) });
        l.timestamp = DateTime::parse_from_rfc3339("2024-05-01T10:00:00.250Z")
            .unwrap()
            .with_timezone(&Utc);
        let json = serde_json::to_string(&l).unwrap();
        assert!(json.contains("\"2024-05-01T10:00:00.250Z\""), "{json}");
        assert!(json.contains("\"type\":\"antecedent\""));
        let back: Label = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
    }
}
