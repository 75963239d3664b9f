//! Continued training of the scorers on discrete labels or full gold clusters.
//!
//! Each document is processed incrementally, as at inference time, but spans
//! with known cluster membership are teacher-forced into their gold-consistent
//! cluster. Supervised mentions contribute a cross-entropy over the clusters
//! observed at that moment plus the new-cluster outcome; labeled spans also
//! contribute a binary cross-entropy on their mention score.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{logistic, softplus, Adam, NodeId, Tape};
use super::{
    encode_candidates, prune_indices, tape_embed, tape_gate, tape_mention, tape_pair, Hyperparams,
    Model, ModelParams, NEW_CLUSTER_SCORE,
};
use crate::active_loop::{LabeledPool, Verdict};
use crate::corpus::{bucket, enumerate_ranges, fnv1a, Document, FeatureConfig, Featurizer, Range};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Discrete,
    FullGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Mention { component: usize },
    NonMention,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ClusterTarget {
    heldout: bool,
    /// The label says the span starts a new entity.
    force_new: bool,
}

/// Supervision extracted for one document.
#[derive(Debug, Clone)]
pub struct DocExample {
    pub doc_index: usize,
    roles: HashMap<Range, Role>,
    default_role: Role,
    /// `(range, is_mention, heldout)`, sorted by range.
    mention_targets: Vec<(Range, bool, bool)>,
    cluster_targets: BTreeMap<Range, ClusterTarget>,
    /// Retained set to use instead of pruning with the current parameters.
    retained: Option<Vec<Range>>,
    /// With full gold clusters, retained non-mentions are trained towards the
    /// new-cluster outcome; the flag is their held-out status.
    non_mention_target: Option<bool>,
}

impl DocExample {
    fn n_items(&self, heldout: bool) -> usize {
        self.mention_targets.iter().filter(|t| t.2 == heldout).count()
            + self.cluster_targets.values().filter(|t| t.heldout == heldout).count()
    }

    fn role(&self, range: Range) -> Role {
        self.roles.get(&range).copied().unwrap_or(self.default_role)
    }
}

pub struct TrainingData<'a> {
    pub docs: &'a [Document],
    pub examples: Vec<DocExample>,
    pub mode: TrainMode,
}

impl<'a> TrainingData<'a> {
    /// Supervision from every gold cluster; a hashed slice of documents is
    /// held out for early stopping.
    pub fn full_gold(docs: &'a [Document], features: &FeatureConfig, hyper: &Hyperparams) -> Result<Self> {
        if docs.iter().all(|d| d.gold_clusters.is_empty()) {
            return Err(Error::EmptyPool);
        }
        let held = holdout_set(
            docs.iter().map(|d| fnv1a(b"doc", d.doc_id.as_bytes())),
            hyper.holdout_fraction,
        );
        let mut examples = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let heldout = held.contains(&i);
            let mut roles = HashMap::new();
            let mut cluster_targets = BTreeMap::new();
            for (ci, cluster) in doc.gold_clusters.iter().enumerate() {
                for &r in cluster {
                    roles.insert(r, Role::Mention { component: ci });
                    cluster_targets.insert(
                        r,
                        ClusterTarget {
                            heldout,
                            force_new: false,
                        },
                    );
                }
            }
            let gold = doc.gold_index();
            let mut candidates: BTreeSet<Range> =
                enumerate_ranges(doc.len(), features.max_width).into_iter().collect();
            candidates.extend(gold.keys().copied());
            let mention_targets = candidates
                .into_iter()
                .map(|r| (r, gold.contains_key(&r), heldout))
                .collect();
            examples.push(DocExample {
                doc_index: i,
                roles,
                default_role: Role::NonMention,
                mention_targets,
                cluster_targets,
                retained: None,
                non_mention_target: Some(heldout),
            });
        }
        Ok(Self {
            docs,
            examples,
            mode: TrainMode::FullGold,
        })
    }

    /// Supervision from discrete labels; a hashed slice of labeled spans is
    /// held out for early stopping.
    pub fn discrete(docs: &'a [Document], pool: &LabeledPool, hyper: &Hyperparams) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let index: HashMap<&str, usize> =
            docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i)).collect();
        let labels: Vec<_> = pool.labels().collect();
        let held = holdout_set(
            labels
                .iter()
                .map(|l| fnv1a(b"label", l.query.to_string().as_bytes())),
            hyper.holdout_fraction,
        );

        let mut per_doc: BTreeMap<usize, Vec<(usize, bool)>> = BTreeMap::new();
        for (li, label) in labels.iter().enumerate() {
            let &di = index.get(label.query.doc_id.as_str()).ok_or_else(|| {
                Error::InvalidLabel(format!("label for unknown document {}", label.query.doc_id))
            })?;
            label.validate(&docs[di])?;
            per_doc.entry(di).or_default().push((li, held.contains(&li)));
        }

        let mut examples = Vec::new();
        for (di, items) in per_doc {
            let mut uf = UnionFind::default();
            let mut non_mentions = BTreeSet::new();
            let mut mention_targets = Vec::new();
            let mut cluster_targets = BTreeMap::new();
            let mut antecedents = BTreeMap::new();
            for (li, heldout) in items {
                let label = labels[li];
                let x = label.query.range();
                match &label.verdict {
                    Verdict::NotAMention => {
                        non_mentions.insert(x);
                        mention_targets.push((x, false, heldout));
                    }
                    Verdict::NoPriorAntecedent => {
                        uf.add(x);
                        mention_targets.push((x, true, heldout));
                        cluster_targets.insert(
                            x,
                            ClusterTarget {
                                heldout,
                                force_new: true,
                            },
                        );
                    }
                    Verdict::Antecedent { span } => {
                        uf.union(x, span.range());
                        antecedents.entry(span.range()).or_insert(heldout);
                        mention_targets.push((x, true, heldout));
                        cluster_targets.insert(
                            x,
                            ClusterTarget {
                                heldout,
                                force_new: false,
                            },
                        );
                    }
                }
            }
            // A span picked as an antecedent is itself a mention.
            let queried: BTreeSet<Range> = mention_targets.iter().map(|t| t.0).collect();
            for (a, heldout) in antecedents {
                if !queried.contains(&a) {
                    mention_targets.push((a, true, heldout));
                }
            }
            let mut roles: HashMap<Range, Role> =
                non_mentions.into_iter().map(|r| (r, Role::NonMention)).collect();
            for (r, component) in uf.components() {
                roles.insert(r, Role::Mention { component });
            }
            mention_targets.sort_by_key(|t| t.0);
            examples.push(DocExample {
                doc_index: di,
                roles,
                default_role: Role::Unknown,
                mention_targets,
                cluster_targets,
                retained: None,
                non_mention_target: None,
            });
        }
        Ok(Self {
            docs,
            examples,
            mode: TrainMode::Discrete,
        })
    }

    pub fn n_items(&self, heldout: bool) -> usize {
        self.examples.iter().map(|e| e.n_items(heldout)).sum()
    }

    /// Pins every example's retained set to the pruning decision of `params`,
    /// making the loss a smooth function of the weights.
    pub fn freeze_retained(&mut self, model: Model) -> Result<()> {
        for ex in &mut self.examples {
            ex.retained = Some(retained_ranges(model, &self.docs[ex.doc_index])?);
        }
        Ok(())
    }
}

/// Indices chosen for early stopping: `fraction` of the items (at least one,
/// provided at least two exist), ranked by hash.
fn holdout_set(hashes: impl Iterator<Item = u64>, fraction: f64) -> BTreeSet<usize> {
    let mut ranked: Vec<(u64, usize)> = hashes.enumerate().map(|(i, h)| (h, i)).collect();
    let n = ranked.len();
    if n < 2 || fraction <= 0.0 {
        return BTreeSet::new();
    }
    let n_hold = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    ranked.sort_unstable();
    ranked.into_iter().take(n_hold).map(|(_, i)| i).collect()
}

#[derive(Default)]
struct UnionFind {
    parent: BTreeMap<Range, Range>,
}

impl UnionFind {
    fn add(&mut self, r: Range) {
        self.parent.entry(r).or_insert(r);
    }

    fn root(&mut self, r: Range) -> Range {
        let p = *self.parent.entry(r).or_insert(r);
        if p == r {
            return r;
        }
        let root = self.root(p);
        self.parent.insert(r, root);
        root
    }

    fn union(&mut self, a: Range, b: Range) {
        let (ra, rb) = (self.root(a), self.root(b));
        if ra != rb {
            let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(drop, keep);
        }
    }

    /// Every member with a component index, numbered by first root.
    fn components(&mut self) -> Vec<(Range, usize)> {
        let members: Vec<Range> = self.parent.keys().copied().collect();
        let mut ids: BTreeMap<Range, usize> = BTreeMap::new();
        members
            .into_iter()
            .map(|r| {
                let root = self.root(r);
                let next = ids.len();
                (r, *ids.entry(root).or_insert(next))
            })
            .collect()
    }
}

pub(crate) fn retained_ranges(model: Model, doc: &Document) -> Result<Vec<Range>> {
    let encoded = encode_candidates(model, doc)?;
    let scored: Vec<(Range, f64)> = encoded.iter().map(|e| (e.range, e.s_m)).collect();
    Ok(prune_indices(model.params, doc.len(), &scored)
        .into_iter()
        .map(|i| scored[i].0)
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mention: f64,
    pub cluster: f64,
    pub n_items: usize,
}

impl LossParts {
    fn add(&mut self, other: LossParts) {
        self.mention += other.mention;
        self.cluster += other.cluster;
        self.n_items += other.n_items;
    }

    pub fn total(&self, hyper: &Hyperparams) -> f64 {
        hyper.mention_loss_weight * self.mention + hyper.cluster_loss_weight * self.cluster
    }

    /// Weighted loss per supervised item.
    pub fn mean(&self, hyper: &Hyperparams) -> f64 {
        if self.n_items == 0 {
            0.0
        } else {
            self.total(hyper) / self.n_items as f64
        }
    }
}

/// Which supervised items contribute to a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Heldout,
    All,
}

impl Split {
    fn includes(self, heldout: bool) -> bool {
        match self {
            Split::Train => !heldout,
            Split::Heldout => heldout,
            Split::All => true,
        }
    }
}

struct TapeCluster {
    rep: NodeId,
    mention: NodeId,
    last: usize,
    component: Option<usize>,
}

/// One incremental pass over a document. Gradients of the included loss terms
/// are accumulated into `grads` when given; `dropout` switches on training mode.
fn doc_pass(
    model: Model,
    doc: &Document,
    ex: &DocExample,
    split: Split,
    mut dropout: Option<&mut ChaCha8Rng>,
    grads: Option<&mut ModelParams>,
) -> Result<LossParts> {
    let params = model.params;
    let hyper = &params.hyper;
    let mut loss = LossParts::default();
    let mut tape = Tape::new(params);
    let mut seeds: Vec<(NodeId, Vec<f64>)> = Vec::new();
    let mut cache: HashMap<Range, (NodeId, NodeId)> = HashMap::new();
    let repr_dim = params.dims.repr_dim;

    let mut encode = |tape: &mut Tape, r: Range, rng: &mut Option<&mut ChaCha8Rng>| -> Result<(NodeId, NodeId)> {
        if let Some(&hit) = cache.get(&r) {
            return Ok(hit);
        }
        let f = model.features.featurize_range(doc, r)?.vector;
        let mask = rng.as_mut().filter(|_| hyper.dropout > 0.0).map(|rng| {
            let keep = 1.0 / (1.0 - hyper.dropout);
            (0..repr_dim)
                .map(|_| if rng.gen::<f64>() < hyper.dropout { 0.0 } else { keep })
                .collect()
        });
        let g = tape_embed(tape, f, mask);
        let m = tape_mention(tape, g);
        cache.insert(r, (g, m));
        Ok((g, m))
    };

    for &(r, is_mention, heldout) in &ex.mention_targets {
        if !split.includes(heldout) {
            continue;
        }
        let (_, m) = encode(&mut tape, r, &mut dropout)?;
        let s = tape.scalar(m);
        let y = if is_mention { 1.0 } else { 0.0 };
        loss.mention += softplus(s) - y * s;
        loss.n_items += 1;
        seeds.push((m, vec![hyper.mention_loss_weight * (logistic(s) - y)]));
    }

    let retained = match &ex.retained {
        Some(r) => r.clone(),
        None => retained_ranges(model, doc)?,
    };
    let retained_set: BTreeSet<Range> = retained.iter().copied().collect();
    let mut sequence = retained_set.clone();
    sequence.extend(
        ex.roles
            .iter()
            .filter(|(_, role)| matches!(role, Role::Mention { .. }))
            .map(|(&r, _)| r),
    );

    let mut clusters: Vec<TapeCluster> = Vec::new();
    for (i, r) in sequence.into_iter().enumerate() {
        let role = ex.role(r);
        let (gx, mx) = encode(&mut tape, r, &mut dropout)?;
        if role == Role::NonMention && !retained_set.contains(&r) {
            continue;
        }
        let scores: Vec<NodeId> = clusters
            .iter()
            .map(|c| {
                let pair = tape_pair(&mut tape, gx, c.rep, bucket(i - c.last));
                tape.sum(&[mx, c.mention, pair])
            })
            .collect();
        let values: Vec<f64> = scores.iter().map(|&s| tape.scalar(s)).collect();

        if role == Role::NonMention {
            if ex.non_mention_target.is_some_and(|h| split.includes(h)) {
                let (ce, d) = cross_entropy(&values, None);
                loss.cluster += ce;
                loss.n_items += 1;
                for (&node, dj) in scores.iter().zip(d) {
                    seeds.push((node, vec![hyper.cluster_loss_weight * dj]));
                }
            }
            clusters.push(TapeCluster {
                rep: gx,
                mention: mx,
                last: i,
                component: None,
            });
            continue;
        }
        let choice = match role {
            Role::Mention { component } => {
                let target = ex.cluster_targets.get(&r);
                let existing = clusters.iter().position(|c| c.component == Some(component));
                let chosen = match target {
                    Some(t) if t.force_new => None,
                    _ => existing,
                };
                if target.is_some_and(|t| split.includes(t.heldout)) {
                    let (ce, d) = cross_entropy(&values, chosen);
                    loss.cluster += ce;
                    loss.n_items += 1;
                    for (&node, dj) in scores.iter().zip(d) {
                        seeds.push((node, vec![hyper.cluster_loss_weight * dj]));
                    }
                }
                match chosen {
                    Some(c) => Some(c),
                    None => {
                        clusters.push(TapeCluster {
                            rep: gx,
                            mention: mx,
                            last: i,
                            component: Some(component),
                        });
                        continue;
                    }
                }
            }
            _ => argmax_positive(&values),
        };
        match choice {
            Some(c) => {
                let cl = &mut clusters[c];
                let gate = tape_gate(&mut tape, cl.rep, gx);
                cl.rep = tape.mix(gate, cl.rep, gx);
                cl.mention = tape_mention(&mut tape, cl.rep);
                cl.last = i;
            }
            None => clusters.push(TapeCluster {
                rep: gx,
                mention: mx,
                last: i,
                component: None,
            }),
        }
    }

    if let Some(grads) = grads {
        if !seeds.is_empty() {
            tape.backward(&seeds, grads);
        }
    }
    Ok(loss)
}

/// Cross-entropy over `scores` plus the new-cluster outcome; `target = None`
/// selects the new cluster. Returns the loss and d/d(score_j).
fn cross_entropy(scores: &[f64], target: Option<usize>) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(NEW_CLUSTER_SCORE, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum::<f64>() + (NEW_CLUSTER_SCORE - max).exp();
    let log_z = max + z.ln();
    let target_score = target.map_or(NEW_CLUSTER_SCORE, |t| scores[t]);
    let grads = scores
        .iter()
        .enumerate()
        .map(|(j, s)| (s - log_z).exp() - if Some(j) == target { 1.0 } else { 0.0 })
        .collect();
    (log_z - target_score, grads)
}

/// Index of the best cluster if its score is positive; first index wins ties.
pub(crate) fn argmax_positive(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &s) in scores.iter().enumerate() {
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(j);
        }
    }
    best.filter(|&b| scores[b] > NEW_CLUSTER_SCORE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training loss after the epoch, without dropout.
    pub train: f64,
    pub train_mention: f64,
    pub train_cluster: f64,
    pub heldout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose parameters were returned (1-based; 0 means the source).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train_items: usize,
    pub n_heldout_items: usize,
    pub steps: usize,
}

fn check_finite(loss: &LossParts, epoch: usize, what: &str) -> Result<()> {
    if loss.mention.is_finite() && loss.cluster.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            detail: format!(
                "{what}: mention loss {}, cluster loss {}",
                loss.mention, loss.cluster
            ),
        })
    }
}

fn evaluate(model: Model, data: &TrainingData, split: Split, epoch: usize) -> Result<LossParts> {
    let mut total = LossParts::default();
    for ex in &data.examples {
        if ex.n_items(split == Split::Heldout) == 0 && split != Split::All {
            continue;
        }
        let part = doc_pass(model, &data.docs[ex.doc_index], ex, split, None, None)?;
        check_finite(&part, epoch, &data.docs[ex.doc_index].doc_id)?;
        total.add(part);
    }
    Ok(total)
}

/// Trains a fresh copy of `source` with `hyper`. The source parameters are
/// never modified and no other model state is consulted.
pub fn train(
    source: &ModelParams,
    features: &Featurizer,
    data: &TrainingData,
    hyper: &Hyperparams,
) -> Result<(ModelParams, TrainReport)> {
    hyper.validate()?;
    if features.dim() != source.dims.feature_dim {
        return Err(Error::Dimension {
            expected: source.dims.feature_dim,
            got: features.dim(),
        });
    }
    let n_train = data.n_items(false);
    let n_heldout = data.n_items(true);
    if n_train == 0 {
        return Err(Error::EmptyPool);
    }
    let mut params = source.clone();
    params.hyper = *hyper;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam = Adam::new(params.n_params(), hyper.learning_rate);
    let mut order: Vec<usize> = (0..data.examples.len())
        .filter(|&i| data.examples[i].n_items(false) > 0)
        .collect();

    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut steps = 0;
    let mut stopped_early = false;

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &data.examples[i];
            let mut grads = params.zeros_like();
            let part = doc_pass(
                Model::new(&params, features),
                &data.docs[ex.doc_index],
                ex,
                Split::Train,
                Some(&mut rng),
                Some(&mut grads),
            )?;
            check_finite(&part, epoch, &data.docs[ex.doc_index].doc_id)?;
            let norm = grads.l2_norm();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("gradient norm {norm} on {}", data.docs[ex.doc_index].doc_id),
                });
            }
            if norm > hyper.grad_clip {
                grads.scale(hyper.grad_clip / norm);
            }
            adam.step(&mut params.flat_mut(), &grads.flat());
            steps += 1;
        }

        let model = Model::new(&params, features);
        let train_loss = evaluate(model, data, Split::Train, epoch)?;
        let heldout = if n_heldout > 0 {
            Some(evaluate(model, data, Split::Heldout, epoch)?.mean(hyper))
        } else {
            None
        };
        epochs.push(EpochLoss {
            epoch,
            train: train_loss.mean(hyper),
            train_mention: train_loss.mention / train_loss.n_items.max(1) as f64,
            train_cluster: train_loss.cluster / train_loss.n_items.max(1) as f64,
            heldout,
        });
        tracing::debug!(epoch, train = train_loss.mean(hyper), ?heldout, "epoch finished");

        match heldout {
            Some(h) if h < best_loss => {
                best_loss = h;
                best = params.clone();
                best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= hyper.early_stop_patience {
                    stopped_early = true;
                    break;
                }
            }
            None => {
                best_epoch = epoch;
            }
        }
    }
    if n_heldout == 0 {
        best = params;
    }
    Ok((
        best,
        TrainReport {
            mode: data.mode,
            epochs,
            best_epoch,
            stopped_early,
            n_train_items: n_train,
            n_heldout_items: n_heldout,
            steps,
        },
    ))
}

/// Summed loss and gradient over every supervised item of every example,
/// without dropout. Each example's gradient is computed on its own and the
/// results are added, so repeating an example scales its contribution exactly.
pub fn batch_loss(model: Model, data: &TrainingData) -> Result<(f64, ModelParams)> {
    let hyper = &model.params.hyper;
    let mut grads = model.params.zeros_like();
    let mut total = 0.0;
    for ex in &data.examples {
        let mut g = model.params.zeros_like();
        let part = doc_pass(model, &data.docs[ex.doc_index], ex, Split::All, None, Some(&mut g))?;
        check_finite(&part, 0, &data.docs[ex.doc_index].doc_id)?;
        total += part.total(hyper);
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active_loop::Label;
    use crate::corpus::{synth_generate, Span, SynthConfig};
    use crate::scorer::{grad_check, ModelDims};
    use chrono::DateTime;

    fn setup(seed: u64) -> (Vec<Document>, Featurizer, ModelParams) {
        let docs = synth_generate(&SynthConfig {
            n_docs: 6,
            tokens_per_doc: 30,
            n_entities: 3,
            seed,
            ..Default::default()
        })
        .unwrap();
        let fc = FeatureConfig {
            hashed_dim: 64,
            max_width: 4,
        };
        let f = Featurizer::hashed(fc);
        let hyper = Hyperparams {
            max_epochs: 3,
            seed,
            ..Default::default()
        };
        let dims = ModelDims {
            feature_dim: f.dim(),
            repr_dim: 8,
            hidden_dim: 8,
        };
        (docs, f, ModelParams::init(dims, hyper, fc))
    }

    fn oracle_pool(docs: &[Document], n: usize) -> LabeledPool {
        let mut pool = LabeledPool::new();
        for doc in docs.iter().take(2) {
            for cluster in &doc.gold_clusters {
                for (i, &(s, e)) in cluster.iter().enumerate() {
                    let verdict = match i {
                        0 => Verdict::NoPriorAntecedent,
                        _ => Verdict::Antecedent {
                            span: doc.span(cluster[i - 1].0, cluster[i - 1].1),
                        },
                    };
                    let label = Label {
                        query: doc.span(s, e),
                        verdict,
                        timestamp: DateTime::UNIX_EPOCH,
                        annotator_id: "test".into(),
                    };
                    if pool.len() < n {
                        pool.insert(label, 1).unwrap();
                    }
                }
            }
            let label = Label {
                query: doc.span(doc.len() - 1, doc.len()),
                verdict: Verdict::NotAMention,
                timestamp: DateTime::UNIX_EPOCH,
                annotator_id: "test".into(),
            };
            pool.insert(label, 1).unwrap();
        }
        pool
    }

    #[test]
    fn holdout_takes_a_tenth_with_floor_of_one() {
        assert!(holdout_set([1u64].into_iter(), 0.1).is_empty());
        assert_eq!(holdout_set([5u64, 3].into_iter(), 0.1).len(), 1);
        assert_eq!(holdout_set(0..40u64, 0.1).len(), 4);
        assert!(holdout_set(0..40u64, 0.0).is_empty());
    }

    #[test]
    fn union_find_numbers_components() {
        let mut uf = UnionFind::default();
        uf.union((5, 6), (1, 2));
        uf.add((3, 4));
        uf.union((7, 8), (5, 6));
        let comps: BTreeMap<Range, usize> = uf.components().into_iter().collect();
        assert_eq!(comps[&(1, 2)], comps[&(5, 6)]);
        assert_eq!(comps[&(1, 2)], comps[&(7, 8)]);
        assert_ne!(comps[&(1, 2)], comps[&(3, 4)]);
    }

    #[test]
    fn cross_entropy_matches_softmax() {
        let (loss, d) = cross_entropy(&[3f64.ln()], Some(0));
        assert!((loss - (4f64 / 3.0).ln()).abs() < 1e-12);
        assert!((d[0] - (0.75 - 1.0)).abs() < 1e-12);
        let (loss, d) = cross_entropy(&[0.0, 0.0], None);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!(cross_entropy(&[], None).0.abs() < 1e-15);
    }

    #[test]
    fn argmax_requires_positive_score() {
        assert_eq!(argmax_positive(&[]), None);
        assert_eq!(argmax_positive(&[-1.0, 0.0]), None);
        assert_eq!(argmax_positive(&[0.5, 2.0, 2.0]), Some(1));
    }

    #[test]
    fn empty_pool_is_rejected() {
        let (docs, _, p) = setup(1);
        assert!(matches!(
            TrainingData::discrete(&docs, &LabeledPool::new(), &p.hyper),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn training_is_deterministic_and_ignores_other_runs() {
        let (docs, f, source) = setup(3);
        let pool = oracle_pool(&docs, 12);
        let data = TrainingData::discrete(&docs, &pool, &source.hyper).unwrap();
        let (a, ra) = train(&source, &f, &data, &source.hyper).unwrap();
        let other = TrainingData::full_gold(&docs, &source.features, &source.hyper).unwrap();
        let (unrelated, _) = train(&a, &f, &other, &source.hyper).unwrap();
        assert_ne!(unrelated.flat(), a.flat());
        let (b, rb) = train(&source, &f, &data, &source.hyper).unwrap();
        let bits = |p: &ModelParams| p.flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ra, rb);
        assert_ne!(bits(&a), bits(&source));
    }

    #[test]
    fn not_a_mention_pool_lowers_mention_loss_each_epoch() {
        let (docs, f, source) = setup(4);
        let mut pool = LabeledPool::new();
        for doc in &docs {
            for s in 0..doc.len() {
                let label = Label {
                    query: Span::new(doc.doc_id.clone(), s, s + 1),
                    verdict: Verdict::NotAMention,
                    timestamp: DateTime::UNIX_EPOCH,
                    annotator_id: "test".into(),
                };
                pool.insert(label, 1).unwrap();
            }
        }
        let hyper = Hyperparams {
            max_epochs: 5,
            ..source.hyper
        };
        let data = TrainingData::discrete(&docs, &pool, &hyper).unwrap();
        let (_, report) = train(&source, &f, &data, &hyper).unwrap();
        assert_eq!(report.epochs.len(), 5);
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_mention).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert!(report.epochs.iter().all(|e| e.train_cluster == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (docs, f, params) = setup(5);
        let mut data = TrainingData::full_gold(&docs[..2], &params.features, &params.hyper).unwrap();
        data.freeze_retained(Model::new(&params, &f)).unwrap();
        let report = grad_check(&params, &f, &data, 40, 9).unwrap();
        let expected: usize = crate::scorer::LayerId::ALL
            .iter()
            .map(|&id| params.layer(id).n_params().min(40))
            .sum();
        assert_eq!(report.n_checked, expected);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn zero_network_with_zero_loss_has_zero_gradient() {
        let (docs, f, mut params) = setup(6);
        params.scale(0.0);
        params.hyper.mention_loss_weight = 0.0;
        params.hyper.cluster_loss_weight = 0.0;
        let data = TrainingData::full_gold(&docs[..2], &params.features, &params.hyper).unwrap();
        let (loss, grads) = batch_loss(Model::new(&params, &f), &data).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_example_doubles_gradient() {
        let (docs, f, params) = setup(7);
        let mut data = TrainingData::full_gold(&docs[..1], &params.features, &params.hyper).unwrap();
        data.freeze_retained(Model::new(&params, &f)).unwrap();
        let (l1, g1) = batch_loss(Model::new(&params, &f), &data).unwrap();
        let dup = data.examples[0].clone();
        data.examples.push(dup);
        let (l2, g2) = batch_loss(Model::new(&params, &f), &data).unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert_eq!(2.0 * a, b);
        }
    }
}
