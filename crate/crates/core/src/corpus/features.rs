use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{lexicon, Document, Range, Span};
use crate::error::{Error, Result};

const SUFFIX_LEN: usize = 3;

/// Number of buckets produced by [`bucket`].
pub const N_BUCKETS: usize = 9;

/// Log-scale bucket: 0, 1, 2, 3-4, 5-7, 8-15, 16-31, 32-63, 64+.
pub fn bucket(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        2 => 2,
        3..=4 => 3,
        5..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=63 => 7,
        _ => 8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Hashed,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanFeatures {
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Buckets for the signed lexical hash.
    pub hashed_dim: usize,
    pub max_width: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            hashed_dim: 256,
            max_width: 10,
        }
    }
}

/// Precomputed span vectors keyed by `(doc_id, start, end)`.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    dim: usize,
    vectors: HashMap<(String, usize, usize), Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, span: &Span, vector: Vec<f64>) -> Result<()> {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.vectors
            .insert((span.doc_id.clone(), span.start, span.end), vector);
        Ok(())
    }

    fn get(&self, doc_id: &str, range: Range) -> Option<&Vec<f64>> {
        self.vectors.get(&(doc_id.to_string(), range.0, range.1))
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    doc_id: String,
    start: usize,
    end: usize,
    vector: Vec<f64>,
}

/// Reads an embeddings file: one `{"doc_id", "start", "end", "vector"}` per line.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<ExternalEmbeddings> {
    let path = path.as_ref();
    let mut out = ExternalEmbeddings::default();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.start >= rec.end {
            return Err(parse_err(format!("empty span [{},{})", rec.start, rec.end)));
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite vector entry".into()));
        }
        out.insert(&Span::new(rec.doc_id, rec.start, rec.end), rec.vector)
            .map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(out)
}

/// Maps spans to fixed-width feature vectors.
///
/// The hashed layout is `[lexical hash | width bucket | sentence bucket]`; the
/// last two blocks are one-hot. Identical token content therefore yields
/// identical lexical and width blocks wherever it occurs.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeatureConfig,
    external: Option<Arc<ExternalEmbeddings>>,
}

const HASH_SEED: u64 = 0x5eed_c0de_2024_0001;

impl Featurizer {
    pub fn hashed(config: FeatureConfig) -> Self {
        Self {
            config,
            external: None,
        }
    }

    pub fn external(config: FeatureConfig, embeddings: Arc<ExternalEmbeddings>) -> Self {
        Self {
            config,
            external: Some(embeddings),
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        match &self.external {
            Some(e) => e.dim(),
            None => self.config.hashed_dim + 2 * N_BUCKETS,
        }
    }

    pub fn featurize(&self, doc: &Document, span: &Span) -> Result<SpanFeatures> {
        if !doc.contains(span) {
            return Err(Error::Validation {
                doc_id: doc.doc_id.clone(),
                message: format!("span {span} outside document"),
            });
        }
        self.featurize_range(doc, span.range())
    }

    pub(crate) fn featurize_range(&self, doc: &Document, range: Range) -> Result<SpanFeatures> {
        match &self.external {
            Some(ext) => match ext.get(&doc.doc_id, range) {
                Some(v) => Ok(SpanFeatures {
                    vector: v.clone(),
                    provenance: Provenance::External,
                }),
                None => Err(Error::MissingEmbedding {
                    doc_id: doc.doc_id.clone(),
                    start: range.0,
                    end: range.1,
                }),
            },
            None => Ok(SpanFeatures {
                vector: self.hashed_vector(doc, range),
                provenance: Provenance::Hashed,
            }),
        }
    }

    fn hashed_vector(&self, doc: &Document, (start, end): Range) -> Vec<f64> {
        let dim = self.config.hashed_dim;
        let mut v = vec![0.0; dim + 2 * N_BUCKETS];
        let tokens = &doc.tokens[start..end];
        let mut add = |kind: &str, text: &str, weight: f64| {
            let h = fnv1a(kind.as_bytes(), text.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % dim as u64) as usize] += sign * weight;
        };
        let inv = 1.0 / tokens.len() as f64;
        for t in tokens {
            add("w", &t.to_lowercase(), inv);
        }
        let first = &tokens[0];
        let last = &tokens[tokens.len() - 1];
        let head = tokens
            .iter()
            .rev()
            .find(|t| !lexicon::is_function_word(t))
            .unwrap_or(last);
        add("f", first, 1.0);
        add("l", last, 1.0);
        add("h", &head.to_lowercase(), 1.0);
        add("hs", &suffix(&head.to_lowercase(), SUFFIX_LEN), 1.0);
        add("fs", &shape(first), 1.0);
        add("ls", &shape(last), 1.0);
        if tokens.len() == 1 && lexicon::is_pronoun(first) {
            add("pron", "", 1.0);
        }
        v[dim + bucket(tokens.len())] = 1.0;
        v[dim + N_BUCKETS + bucket(doc.sentence_of(start))] = 1.0;
        v
    }
}

/// Last `n` characters of `word`, or all of it when shorter.
fn suffix(word: &str, n: usize) -> String {
    let chars: Vec<char> = word.chars().collect();
    chars[chars.len().saturating_sub(n)..].iter().collect()
}

pub(crate) fn fnv1a(kind: &[u8], text: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ HASH_SEED;
    for &b in kind.iter().chain(b"\x1f").chain(text) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // final avalanche so that the sign bit depends on every input byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Collapsed character-class pattern, e.g. `"Alice"` -> `"Xx"`.
fn shape(token: &str) -> String {
    let mut out = String::new();
    for c in token.chars() {
        let class = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if !out.ends_with(class) {
            out.push(class);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        Document {
            doc_id: "d".into(),
            tokens: "the lamp fell . later the lamp broke"
                .split(' ')
                .map(String::from)
                .collect(),
            sentence_starts: vec![0, 4],
            gold_clusters: vec![],
        }
    }

    #[test]
    fn buckets() {
        let got: Vec<_> = [0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 31, 32, 63, 64, 1000]
            .iter()
            .map(|&n| bucket(n))
            .collect();
        assert_eq!(got, vec![0, 1, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8]);
    }

    #[test]
    fn deterministic() {
        let f = Featurizer::hashed(FeatureConfig::default());
        let d = doc();
        let s = d.span(0, 2);
        let a = f.featurize(&d, &s).unwrap();
        let b = f.featurize(&d, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), f.dim());
        assert!(a.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_content_differs_only_in_position_block() {
        let f = Featurizer::hashed(FeatureConfig::default());
        let d = doc();
        let a = f.featurize(&d, &d.span(0, 2)).unwrap().vector;
        let b = f.featurize(&d, &d.span(5, 7)).unwrap().vector;
        let pos_start = f.config().hashed_dim + N_BUCKETS;
        assert_eq!(a[..pos_start], b[..pos_start]);
        assert_ne!(a[pos_start..], b[pos_start..]);
    }

    #[test]
    fn external_pass_through_and_missing_key() {
        let d = doc();
        let mut ext = ExternalEmbeddings::default();
        ext.insert(&d.span(0, 2), vec![0.25, -1.5, 3.0]).unwrap();
        assert!(ext.insert(&d.span(1, 2), vec![1.0]).is_err());
        let f = Featurizer::external(FeatureConfig::default(), Arc::new(ext));
        assert_eq!(f.dim(), 3);
        let got = f.featurize(&d, &d.span(0, 2)).unwrap();
        assert_eq!(got.vector, vec![0.25, -1.5, 3.0]);
        assert_eq!(got.provenance, Provenance::External);
        assert!(matches!(
            f.featurize(&d, &d.span(1, 3)),
            Err(Error::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn load_embeddings_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(
            &path,
            "{\"doc_id\":\"d\",\"start\":0,\"end\":2,\"vector\":[1.0,2.0]}\n",
        )
        .unwrap();
        let e = load_embeddings(&path).unwrap();
        assert_eq!(e.dim(), 2);
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn token_shapes() {
        assert_eq!(shape("Alice"), "Xx");
        assert_eq!(shape("the"), "x");
        assert_eq!(shape("B52"), "Xd");
    }
}
