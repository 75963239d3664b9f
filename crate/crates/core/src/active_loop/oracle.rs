use chrono::{DateTime, Utc};

use super::{Label, Verdict};
use crate::corpus::{Document, Span};
use crate::error::{Error, Result};

pub const ORACLE_ID: &str = "oracle";

/// Answers a query from gold clusters: exact span match decides mention
/// status, and the antecedent is the closest earlier mention of the same entity.
pub fn oracle_label(gold: &Document, query: &Span, timestamp: DateTime<Utc>) -> Result<Label> {
    if !gold.contains(query) {
        return Err(Error::InvalidLabel(format!("query {query} outside document {}", gold.doc_id)));
    }
    let x = query.range();
    let verdict = match gold.gold_clusters.iter().find(|c| c.contains(&x)) {
        None => Verdict::NotAMention,
        Some(cluster) => match cluster.iter().filter(|&&r| r < x).max() {
            None => Verdict::NoPriorAntecedent,
            Some(&(s, e)) => Verdict::Antecedent {
                span: gold.span(s, e),
            },
        },
    };
    Ok(Label {
        query: query.clone(),
        verdict,
        timestamp,
        annotator_id: ORACLE_ID.into(),
    })
}
