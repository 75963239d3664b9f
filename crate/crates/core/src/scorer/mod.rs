//! Mention, pairwise and gate scorers and their training loop.

mod gradcheck;
pub mod nn;
mod params;
mod train;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Hyperparams, LayerId, ModelDims, ModelParams};
pub use train::{
    batch_loss, train, DocExample, EpochLoss, LossParts, TrainMode, TrainReport, TrainingData,
};
pub(crate) use train::argmax_positive;


use crate::corpus::{enumerate_ranges, Document, Featurizer, Range, Span, SpanFeatures, N_BUCKETS};
use crate::error::{Error, Result};
use nn::{logistic, NodeId, Tape};

/// Score of the new-cluster (dummy antecedent) outcome.
pub const NEW_CLUSTER_SCORE: f64 = 0.0;

/// Frozen parameters together with the featurizer that feeds them.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub params: &'a ModelParams,
    pub features: &'a Featurizer,
}

impl<'a> Model<'a> {
    pub fn new(params: &'a ModelParams, features: &'a Featurizer) -> Self {
        Self { params, features }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanScores {
    pub s_m: f64,
    pub p_mention: f64,
}

impl SpanScores {
    pub fn from_logit(s_m: f64) -> Self {
        Self {
            s_m,
            p_mention: logistic(s_m),
        }
    }
}

/// A candidate span with its representation and unary score.
#[derive(Debug, Clone)]
pub struct EncodedSpan {
    pub range: Range,
    pub repr: Vec<f64>,
    pub s_m: f64,
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

impl ModelParams {
    /// Span representation `g = tanh(E f + b)`.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dims.feature_dim, features.len())?;
        let mut g = self.layer(LayerId::Embed).forward(features);
        g.iter_mut().for_each(|x| *x = x.tanh());
        Ok(g)
    }

    /// Unary mention score of a span or cluster representation.
    pub fn mention_logit(&self, repr: &[f64]) -> Result<f64> {
        check_dim(self.dims.repr_dim, repr.len())?;
        let mut h = self.layer(LayerId::MentionHidden).forward(repr);
        h.iter_mut().for_each(|x| *x = x.tanh());
        Ok(self.layer(LayerId::MentionOut).forward(&h)[0])
    }

    /// Antecedent score `s_a(x, c, φ)`.
    pub fn pair_logit(&self, g_x: &[f64], g_c: &[f64], dist_bucket: usize) -> Result<f64> {
        check_dim(self.dims.repr_dim, g_x.len())?;
        check_dim(self.dims.repr_dim, g_c.len())?;
        let input = pair_input(g_x, g_c, dist_bucket);
        let mut h = self.layer(LayerId::PairHidden).forward(&input);
        h.iter_mut().for_each(|x| *x = x.tanh());
        Ok(self.layer(LayerId::PairOut).forward(&h)[0])
    }

    /// Gate in `[0, 1]` weighting the old cluster representation.
    pub fn gate(&self, g_c: &[f64], g_x: &[f64]) -> Result<f64> {
        check_dim(self.dims.repr_dim, g_x.len())?;
        check_dim(self.dims.repr_dim, g_c.len())?;
        let input: Vec<f64> = g_c.iter().chain(g_x).copied().collect();
        Ok(logistic(self.layer(LayerId::Gate).forward(&input)[0]))
    }

    pub fn n_tokens_retained(&self, n_tokens: usize) -> usize {
        (self.hyper.prune_ratio * n_tokens as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

fn one_hot(bucket: usize) -> Vec<f64> {
    let mut v = vec![0.0; N_BUCKETS];
    v[bucket.min(N_BUCKETS - 1)] = 1.0;
    v
}

fn pair_input(g_x: &[f64], g_c: &[f64], bucket: usize) -> Vec<f64> {
    let mut input = Vec::with_capacity(3 * g_x.len() + N_BUCKETS);
    input.extend_from_slice(g_x);
    input.extend_from_slice(g_c);
    input.extend(g_x.iter().zip(g_c).map(|(a, b)| a * b));
    input.extend(one_hot(bucket));
    input
}

/// Unary mention score `s_m = FFNN_m(g_x)` and its logistic probability.
pub fn mention_score(params: &ModelParams, features: &SpanFeatures) -> Result<SpanScores> {
    let g = params.embed(&features.vector)?;
    Ok(SpanScores::from_logit(params.mention_logit(&g)?))
}

/// Cluster score `s(x, c) = s_m(x) + s_m(c) + s_a(x, c, φ)`.
pub fn pair_score(params: &ModelParams, g_x: &[f64], g_c: &[f64], dist_bucket: usize) -> Result<f64> {
    Ok(params.mention_logit(g_x)? + params.mention_logit(g_c)? + params.pair_logit(g_x, g_c, dist_bucket)?)
}

/// Encodes every candidate span of width up to the configured maximum.
pub fn encode_candidates(model: Model, doc: &Document) -> Result<Vec<EncodedSpan>> {
    enumerate_ranges(doc.len(), model.params.features.max_width)
        .into_iter()
        .map(|range| encode_range(model, doc, range))
        .collect()
}

pub fn encode_range(model: Model, doc: &Document, range: Range) -> Result<EncodedSpan> {
    let f = model.features.featurize_range(doc, range)?;
    let repr = model.params.embed(&f.vector)?;
    let s_m = model.params.mention_logit(&repr)?;
    Ok(EncodedSpan { range, repr, s_m })
}

/// Indices of the `ceil(prune_ratio * n_tokens)` highest-scoring candidates,
/// ties broken by `(start, end)`, returned in document order.
pub fn prune_indices(params: &ModelParams, n_tokens: usize, candidates: &[(Range, f64)]) -> Vec<usize> {
    let keep = params.n_tokens_retained(n_tokens).min(candidates.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, sa) = candidates[a];
        let (rb, sb) = candidates[b];
        sb.total_cmp(&sa).then(ra.cmp(&rb))
    });
    order.truncate(keep);
    order.sort_by(|&a, &b| candidates[a].0.cmp(&candidates[b].0));
    order
}

/// Retains the top spans by unary mention score.
pub fn prune_spans(model: Model, doc: &Document, candidates: &[Span]) -> Result<Vec<Span>> {
    let scored = candidates
        .iter()
        .map(|s| {
            let f = model.features.featurize(doc, s)?;
            Ok((s.range(), mention_score(model.params, &f)?.s_m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(prune_indices(model.params, doc.len(), &scored)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

// Tape builders mirroring the direct forward functions above.

pub(crate) fn tape_embed(tape: &mut Tape, features: Vec<f64>, dropout_mask: Option<Vec<f64>>) -> NodeId {
    let f = tape.input(features);
    let a = tape.affine(LayerId::Embed, f);
    let g = tape.tanh(a);
    match dropout_mask {
        Some(mask) => tape.mask(g, mask),
        None => g,
    }
}

pub(crate) fn tape_mention(tape: &mut Tape, repr: NodeId) -> NodeId {
    let h = tape.affine(LayerId::MentionHidden, repr);
    let h = tape.tanh(h);
    tape.affine(LayerId::MentionOut, h)
}

pub(crate) fn tape_pair(tape: &mut Tape, g_x: NodeId, g_c: NodeId, bucket: usize) -> NodeId {
    let prod = tape.hadamard(g_x, g_c);
    let phi = tape.input(one_hot(bucket));
    let input = tape.concat(&[g_x, g_c, prod, phi]);
    let h = tape.affine(LayerId::PairHidden, input);
    let h = tape.tanh(h);
    tape.affine(LayerId::PairOut, h)
}

pub(crate) fn tape_gate(tape: &mut Tape, g_c: NodeId, g_x: NodeId) -> NodeId {
    let input = tape.concat(&[g_c, g_x]);
    let z = tape.affine(LayerId::Gate, input);
    tape.sigmoid(z)
}
