//! Coreference scores: MUC, B³, CEAF-φ4 and mention detection.
//!
//! Every metric is computed as a pair of (numerator, denominator) counts for
//! precision and recall, so corpus scores are micro-averages over documents.

mod assignment;

pub use assignment::max_weight_assignment;

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Range};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Precision and recall as summable fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.p_num += other.p_num;
        self.p_den += other.p_den;
        self.r_num += other.r_num;
        self.r_den += other.r_den;
    }

    pub fn prf(&self) -> Prf {
        let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
        Prf::new(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }
}

fn index_clusters<M: Eq + Hash + Clone>(clusters: &[Vec<M>], what: &str) -> Result<HashMap<M, usize>> {
    let mut index = HashMap::new();
    for (ci, c) in clusters.iter().enumerate() {
        for m in c {
            if index.insert(m.clone(), ci).is_some() {
                return Err(Error::InvalidClustering(format!(
                    "{what} clustering places a mention in more than one cluster"
                )));
            }
        }
    }
    Ok(index)
}

fn muc_side<M: Eq + Hash>(keys: &[Vec<M>], responses: &HashMap<M, usize>) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in keys.iter().filter(|k| k.len() >= 2) {
        let mut parts = HashSet::new();
        let mut unaligned = 0;
        for m in k {
            match responses.get(m) {
                Some(&c) => {
                    parts.insert(c);
                }
                None => unaligned += 1,
            }
        }
        num += (k.len() - parts.len() - unaligned) as f64;
        den += (k.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Counts> {
    let gi = index_clusters(gold, "gold")?;
    let pi = index_clusters(pred, "predicted")?;
    let (r_num, r_den) = muc_side(gold, &pi);
    let (p_num, p_den) = muc_side(pred, &gi);
    Ok(Counts {
        p_num,
        p_den,
        r_num,
        r_den,
    })
}

fn b3_side<M: Eq + Hash>(keys: &[Vec<M>], responses: &HashMap<M, usize>) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in keys {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for m in k {
            if let Some(&c) = responses.get(m) {
                *overlap.entry(c).or_default() += 1;
            }
        }
        // Each mention of k scores |k ∩ r(m)| / |k|; summing over k gives
        // Σ_r |k ∩ r|² / |k|.
        num += overlap.values().map(|&n| (n * n) as f64).sum::<f64>() / k.len() as f64;
        den += k.len() as f64;
    }
    (num, den)
}

pub fn b_cubed_counts<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Counts> {
    let gi = index_clusters(gold, "gold")?;
    let pi = index_clusters(pred, "predicted")?;
    let (r_num, r_den) = b3_side(gold, &pi);
    let (p_num, p_den) = b3_side(pred, &gi);
    Ok(Counts {
        p_num,
        p_den,
        r_num,
        r_den,
    })
}

/// `φ4(K, R) = 2|K ∩ R| / (|K| + |R|)` for every gold/predicted pair.
pub fn phi4_matrix<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Vec<Vec<f64>>> {
    index_clusters(gold, "gold")?;
    let pi = index_clusters(pred, "predicted")?;
    Ok(gold
        .iter()
        .map(|k| {
            let mut overlap = vec![0usize; pred.len()];
            for m in k {
                if let Some(&c) = pi.get(m) {
                    overlap[c] += 1;
                }
            }
            overlap
                .iter()
                .zip(pred)
                .map(|(&n, r)| 2.0 * n as f64 / (k.len() + r.len()) as f64)
                .collect()
        })
        .collect())
}

pub fn ceaf_phi4_counts<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Counts> {
    let (similarity, _) = max_weight_assignment(&phi4_matrix(gold, pred)?);
    Ok(Counts {
        p_num: similarity,
        p_den: pred.len() as f64,
        r_num: similarity,
        r_den: gold.len() as f64,
    })
}

pub fn mention_counts<M: Eq + Hash>(gold: &[M], pred: &[M]) -> Counts {
    let g: HashSet<&M> = gold.iter().collect();
    let p: HashSet<&M> = pred.iter().collect();
    let hit = g.intersection(&p).count() as f64;
    Counts {
        p_num: hit,
        p_den: p.len() as f64,
        r_num: hit,
        r_den: g.len() as f64,
    }
}

pub fn muc<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Prf> {
    Ok(muc_counts(gold, pred)?.prf())
}

pub fn b_cubed<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Prf> {
    Ok(b_cubed_counts(gold, pred)?.prf())
}

pub fn ceaf_phi4<M: Eq + Hash + Clone>(gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<Prf> {
    Ok(ceaf_phi4_counts(gold, pred)?.prf())
}

pub fn mention_f1<M: Eq + Hash>(gold: &[M], pred: &[M]) -> Prf {
    mention_counts(gold, pred).prf()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub muc: Prf,
    pub b3: Prf,
    pub ceaf: Prf,
    pub mention: Prf,
    pub avg_f1: f64,
}

/// Micro-averaging accumulator over documents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub muc: Counts,
    pub b3: Counts,
    pub ceaf: Counts,
    pub mention: Counts,
    /// Drop predicted singletons before scoring.
    pub strip_singletons: bool,
}

impl Scorer {
    pub fn new(strip_singletons: bool) -> Self {
        Self {
            strip_singletons,
            ..Default::default()
        }
    }

    pub fn add<M: Eq + Hash + Clone>(&mut self, gold: &[Vec<M>], pred: &[Vec<M>]) -> Result<()> {
        let kept: Vec<Vec<M>>;
        let pred = if self.strip_singletons {
            kept = pred.iter().filter(|c| c.len() > 1).cloned().collect();
            &kept
        } else {
            pred
        };
        self.muc.add(muc_counts(gold, pred)?);
        self.b3.add(b_cubed_counts(gold, pred)?);
        self.ceaf.add(ceaf_phi4_counts(gold, pred)?);
        let gm: Vec<M> = gold.iter().flatten().cloned().collect();
        let pm: Vec<M> = pred.iter().flatten().cloned().collect();
        self.mention.add(mention_counts(&gm, &pm));
        Ok(())
    }

    pub fn result(&self) -> EvalResult {
        let (muc, b3, ceaf) = (self.muc.prf(), self.b3.prf(), self.ceaf.prf());
        EvalResult {
            muc,
            b3,
            ceaf,
            mention: self.mention.prf(),
            avg_f1: (muc.f1 + b3.f1 + ceaf.f1) / 3.0,
        }
    }
}

/// Scores one predicted clustering per gold document.
pub fn evaluate(gold: &[Document], pred: &[Vec<Vec<Range>>], strip_singletons: bool) -> Result<EvalResult> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidClustering(format!(
            "{} gold documents but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut scorer = Scorer::new(strip_singletons);
    for (g, p) in gold.iter().zip(pred) {
        scorer.add(&g.gold_clusters, p)?;
    }
    Ok(scorer.result())
}

#[cfg(test)]
mod tests;
