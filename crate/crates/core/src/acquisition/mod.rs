//! Sampling strategies: random baselines and the entropy-based scores.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::active_loop::LabeledPool;
use crate::clusterer::{antecedent_distribution_at, infer_corpus, retain, DocInference};
use crate::corpus::{enumerate_ranges, Document, Span};
use crate::error::{Error, Result};
use crate::scorer::Model;

const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    RandomMent,
    MentEnt,
    ClustEnt,
    CondEnt,
    JointEnt,
    LiClustEnt,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::RandomMent,
        Strategy::MentEnt,
        Strategy::ClustEnt,
        Strategy::CondEnt,
        Strategy::JointEnt,
        Strategy::LiClustEnt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::RandomMent => "random-ment",
            Strategy::MentEnt => "ment-ent",
            Strategy::ClustEnt => "clust-ent",
            Strategy::CondEnt => "cond-ent",
            Strategy::JointEnt => "joint-ent",
            Strategy::LiClustEnt => "li-clust-ent",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Strategy::Random | Strategy::RandomMent)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub span: Span,
    pub score: f64,
    pub strategy: Strategy,
}

fn plogp(p: f64) -> f64 {
    let p = p.clamp(P_FLOOR, 1.0);
    -p * p.ln()
}

/// Shannon entropy in nats.
pub fn entropy(dist: &[f64]) -> f64 {
    if dist.len() <= 1 {
        return 0.0;
    }
    dist.iter().map(|&p| plogp(p)).sum::<f64>().max(0.0)
}

/// Binary entropy of the mention probability.
pub fn ment_ent(p_mention: f64) -> f64 {
    let p = p_mention.clamp(P_FLOOR, 1.0 - P_FLOOR);
    plogp(p) + plogp(1.0 - p)
}

/// Entropy of the cluster assignment given that the span is a mention.
pub fn clust_ent(dist: &[f64]) -> f64 {
    entropy(dist)
}

pub fn cond_ent(p_mention: f64, dist: &[f64]) -> f64 {
    p_mention * clust_ent(dist)
}

pub fn joint_ent(p_mention: f64, dist: &[f64]) -> f64 {
    ment_ent(p_mention) + cond_ent(p_mention, dist)
}

/// Entropy after summing antecedent probabilities by the cluster of each
/// candidate. `membership[j]` is the cluster of candidate `j`; the final
/// entry of `antecedent_dist` is the dummy antecedent, which forms its own group.
pub fn li_clust_ent(antecedent_dist: &[f64], membership: &[usize]) -> f64 {
    let (dummy, candidates) = antecedent_dist
        .split_last()
        .expect("antecedent distribution includes the dummy");
    let mut grouped: HashMap<usize, f64> = HashMap::new();
    for (p, c) in candidates.iter().zip(membership) {
        *grouped.entry(*c).or_default() += p;
    }
    let mut groups: Vec<(usize, f64)> = grouped.into_iter().collect();
    groups.sort_by_key(|g| g.0);
    let mut dist: Vec<f64> = groups.into_iter().map(|g| g.1).collect();
    dist.push(*dummy);
    entropy(&dist)
}

fn entropy_scores(
    strategy: Strategy,
    model: Model,
    doc: &Document,
    inference: &DocInference,
    pool: &LabeledPool,
) -> Result<Vec<AcquisitionScore>> {
    let membership = inference.state.membership();
    let mut out = Vec::new();
    for (i, (step, encoded)) in inference.trace.steps.iter().zip(&inference.retained).enumerate() {
        let span = doc.span(step.start, step.end);
        if pool.contains(&span) {
            continue;
        }
        let score = match strategy {
            Strategy::MentEnt => ment_ent(step.p_mention),
            Strategy::ClustEnt => clust_ent(&step.distribution),
            Strategy::CondEnt => cond_ent(step.p_mention, &step.distribution),
            Strategy::JointEnt => joint_ent(step.p_mention, &step.distribution),
            Strategy::LiClustEnt => {
                let dist = antecedent_distribution_at(model.params, &inference.retained, i)?;
                let groups: Vec<usize> = inference.retained[..i]
                    .iter()
                    .map(|e| membership[&e.range])
                    .collect();
                li_clust_ent(&dist, &groups)
            }
            Strategy::Random | Strategy::RandomMent => unreachable!("random strategies are not entropy based"),
        };
        debug_assert_eq!(encoded.range, span.range());
        out.push(AcquisitionScore {
            span,
            score,
            strategy,
        });
    }
    Ok(out)
}

/// Scores every unlabeled span of `docs` in document then span order.
///
/// `random` draws from all candidate spans; the other strategies only score
/// spans that survive pruning under `model`.
pub fn score_pool(
    strategy: Strategy,
    model: Model,
    docs: &[Document],
    pool: &LabeledPool,
    rng: &mut impl Rng,
) -> Result<Vec<AcquisitionScore>> {
    if docs.is_empty() {
        return Err(Error::Config("no documents to score".into()));
    }
    let mut out = Vec::new();
    match strategy {
        Strategy::Random => {
            for doc in docs {
                for (s, e) in enumerate_ranges(doc.len(), model.params.features.max_width) {
                    let span = doc.span(s, e);
                    if !pool.contains(&span) {
                        out.push(AcquisitionScore {
                            span,
                            score: rng.gen(),
                            strategy,
                        });
                    }
                }
            }
        }
        Strategy::RandomMent => {
            for doc in docs {
                for e in retain(model, doc)? {
                    let span = doc.span(e.range.0, e.range.1);
                    if !pool.contains(&span) {
                        out.push(AcquisitionScore {
                            span,
                            score: rng.gen(),
                            strategy,
                        });
                    }
                }
            }
        }
        _ => {
            let inferences = infer_corpus(model, docs)?;
            for (doc, inference) in docs.iter().zip(&inferences) {
                out.extend(entropy_scores(strategy, model, doc, inference, pool)?);
            }
        }
    }
    Ok(out)
}

/// Debug dump with one row per scored span.
pub fn write_scores_csv(out: impl Write, scores: &[AcquisitionScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["doc_id", "start", "end", "strategy", "score"])?;
    for s in scores {
        w.write_record([
            s.span.doc_id.clone(),
            s.span.start.to_string(),
            s.span.end.to_string(),
            s.strategy.to_string(),
            s.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
