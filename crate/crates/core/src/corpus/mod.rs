//! Documents, spans and gold clusters.
//!
//! Spans use half-open token intervals `[start, end)`. A corpus file holds one
//! JSON document per line:
//!
//! ```text
//! {"doc_id": "d0", "tokens": ["Ann", "sang", "."], "sentence_starts": [0],
//!  "clusters": [[[0, 1]]]}
//! ```

mod features;
pub mod lexicon;
mod synth;

pub(crate) use features::fnv1a;
pub use features::{
    bucket, load_embeddings, ExternalEmbeddings, FeatureConfig, Featurizer, Provenance,
    SpanFeatures, N_BUCKETS,
};
pub use synth::{synth_generate, SynthConfig};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token interval `[start, end)` inside one document.
pub type Range = (usize, usize);

/// A candidate span, addressed globally by document id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(doc_id: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            start,
            end,
        }
    }

    pub fn range(&self) -> Range {
        (self.start, self.end)
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }

    /// True when `self` comes strictly before `other` in document order.
    pub fn precedes(&self, other: &Span) -> bool {
        self.doc_id == other.doc_id && (self.start, self.end) < (other.start, other.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{})", self.doc_id, self.start, self.end)
    }
}

/// A tokenized document with its gold entity clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub sentence_starts: Vec<usize>,
    #[serde(rename = "clusters")]
    pub gold_clusters: Vec<Vec<Range>>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn span(&self, start: usize, end: usize) -> Span {
        Span::new(self.doc_id.clone(), start, end)
    }

    pub fn contains(&self, span: &Span) -> bool {
        span.doc_id == self.doc_id && span.start < span.end && span.end <= self.tokens.len()
    }

    pub fn text(&self, range: Range) -> String {
        self.tokens[range.0..range.1].join(" ")
    }

    /// Index of the sentence containing `token`.
    pub fn sentence_of(&self, token: usize) -> usize {
        self.sentence_starts
            .partition_point(|&s| s <= token)
            .saturating_sub(1)
    }

    /// Checks the document invariants: non-empty in-bounds spans, sorted
    /// sentence starts, and a partition of gold mentions.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::Validation {
            doc_id: self.doc_id.clone(),
            message,
        };
        let n = self.tokens.len();
        match self.sentence_starts.first() {
            Some(0) => {}
            Some(s) => return Err(invalid(format!("first sentence starts at {s}, not 0"))),
            None if n == 0 => {}
            None => return Err(invalid("missing sentence_starts".into())),
        }
        if self.sentence_starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sentence_starts not strictly increasing".into()));
        }
        if self.sentence_starts.iter().any(|&s| s >= n.max(1)) {
            return Err(invalid("sentence start beyond end of document".into()));
        }
        let mut seen = HashSet::new();
        for (ci, cluster) in self.gold_clusters.iter().enumerate() {
            if cluster.is_empty() {
                return Err(invalid(format!("cluster {ci} is empty")));
            }
            for &(start, end) in cluster {
                if start >= end {
                    return Err(invalid(format!("empty span [{start},{end})")));
                }
                if end > n {
                    return Err(invalid(format!(
                        "span [{start},{end}) exceeds {n} tokens"
                    )));
                }
                if !seen.insert((start, end)) {
                    return Err(invalid(format!(
                        "span [{start},{end}) appears more than once"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Map from gold mention to the index of its cluster.
    pub fn gold_index(&self) -> HashMap<Range, usize> {
        self.gold_clusters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.iter().map(move |&r| (r, ci)))
            .collect()
    }

    pub fn gold_mentions(&self) -> impl Iterator<Item = Range> + '_ {
        self.gold_clusters.iter().flatten().copied()
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Reads a corpus file, validating every document.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in docs {
        writeln!(out, "{}", doc.to_json_line()?)?;
    }
    out.flush()?;
    Ok(())
}

/// All spans of width `1..=max_width`, ordered by `(start, end)`.
pub fn enumerate_spans(doc: &Document, max_width: usize) -> Vec<Span> {
    enumerate_ranges(doc.len(), max_width)
        .into_iter()
        .map(|(s, e)| doc.span(s, e))
        .collect()
}

pub(crate) fn enumerate_ranges(n_tokens: usize, max_width: usize) -> Vec<Range> {
    let mut out = Vec::new();
    for start in 0..n_tokens {
        for end in start + 1..=(start + max_width).min(n_tokens) {
            out.push((start, end));
        }
    }
    out
}
