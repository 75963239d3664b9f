use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionScore;
use crate::corpus::Span;
use crate::error::{Error, Result};

/// Maximum number of documents a cycle may draw labels from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub enum ReadBudget {
    Docs(usize),
    Unconstrained,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Docs(usize),
    Named(String),
}

impl TryFrom<BudgetRepr> for ReadBudget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Docs(m) => ReadBudget::Docs(m).validated(),
            BudgetRepr::Named(s) => s.parse(),
        }
    }
}

impl From<ReadBudget> for BudgetRepr {
    fn from(b: ReadBudget) -> Self {
        match b {
            ReadBudget::Docs(m) => BudgetRepr::Docs(m),
            ReadBudget::Unconstrained => BudgetRepr::Named("unconstrained".into()),
        }
    }
}

impl ReadBudget {
    fn validated(self) -> Result<Self> {
        if self == ReadBudget::Docs(0) {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn limit(self) -> Option<usize> {
        match self {
            ReadBudget::Docs(m) => Some(m),
            ReadBudget::Unconstrained => None,
        }
    }
}

impl fmt::Display for ReadBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadBudget::Docs(m) => write!(f, "{m}"),
            ReadBudget::Unconstrained => f.write_str("unconstrained"),
        }
    }
}

impl FromStr for ReadBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("unconstrained") || s == "inf" || s == "∞" {
            return Ok(ReadBudget::Unconstrained);
        }
        s.parse::<usize>()
            .map_err(|_| Error::Config(format!("m must be a positive integer or 'unconstrained', got '{s}'")))
            .and_then(|m| ReadBudget::Docs(m).validated())
    }
}

/// Highest score first; ties by document id, then start, then end.
pub fn ranking_order(a: &AcquisitionScore, b: &AcquisitionScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.span.doc_id.cmp(&b.span.doc_id))
        .then(a.span.start.cmp(&b.span.start))
        .then(a.span.end.cmp(&b.span.end))
}

/// Picks `k` spans for labeling. Under a budget of `m` documents only spans
/// from the documents of the `m` best-ranked spans are eligible; if that
/// leaves fewer than `k`, all of them are returned.
pub fn select_with_read_budget(scored: &[AcquisitionScore], k: usize, m: ReadBudget) -> Result<Vec<Span>> {
    if scored.is_empty() {
        return Err(Error::EmptyPool);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut ranked: Vec<&AcquisitionScore> = scored.iter().collect();
    ranked.sort_by(|a, b| ranking_order(a, b));

    let eligible: Vec<&AcquisitionScore> = match m.limit() {
        None => ranked,
        Some(m) => {
            let docs: BTreeSet<&str> = ranked.iter().take(m).map(|s| s.span.doc_id.as_str()).collect();
            ranked.into_iter().filter(|s| docs.contains(s.span.doc_id.as_str())).collect()
        }
    };
    if eligible.len() < k {
        tracing::warn!(available = eligible.len(), k, %m, "fewer spans than requested within the read budget");
    }
    Ok(eligible.into_iter().take(k).map(|s| s.span.clone()).collect())
}
