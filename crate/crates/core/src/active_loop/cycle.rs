use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use chrono::DateTime;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::oracle_label;
use super::select::{select_with_read_budget, ReadBudget};
use super::{Label, LabeledPool};
use crate::acquisition::{score_pool, Strategy};
use crate::analysis::{classify_spans, corpus_error_report, ErrorCounts, PronounLexicon, SpanTypeCounts};
use crate::clusterer::infer_corpus;
use crate::corpus::{Document, Featurizer, Span};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::scorer::{train, Hyperparams, Model, ModelParams, TrainReport, TrainingData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Spans labeled per cycle.
    pub k: usize,
    pub m: ReadBudget,
    /// Number of cycles, T.
    pub cycles: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            k: 50,
            m: ReadBudget::Docs(1),
            cycles: 6,
            strategy: Strategy::MentEnt,
            seed: 0,
            repeats: 5,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.m == ReadBudget::Docs(0) {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.cycles == 0 {
            return Err(Error::Config("the number of cycles must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn run_id(&self, repeat: usize) -> String {
        format!("{}-k{}-m{}-s{}-r{}", self.strategy, self.k, self.m, self.seed, repeat)
    }

    /// Seed of one repeat, drawn from its own ChaCha stream.
    pub fn run_seed(&self, repeat: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(repeat as u64);
        rng.next_u64()
    }
}

/// Mutable state of one run between cycles.
#[derive(Debug, Clone)]
pub struct RunState {
    pub run_id: String,
    pub seed: u64,
    /// Completed cycles.
    pub cycle: usize,
    /// Acquisition model h_{t-1}; the source model before the first cycle.
    pub model: ModelParams,
    pub pool: LabeledPool,
    rng: ChaCha8Rng,
}

impl RunState {
    pub fn new(run_id: impl Into<String>, seed: u64, source: &ModelParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            run_id: run_id.into(),
            seed,
            cycle: 0,
            model: source.clone(),
            pool: LabeledPool::new(),
            rng,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub run_id: String,
    pub cycle: usize,
    pub strategy: Strategy,
    pub k: usize,
    pub m: ReadBudget,
    pub eval: EvalResult,
    /// Pool size after the cycle.
    pub n_labels: usize,
    pub n_new_labels: usize,
    /// Distinct documents with at least one label, over all cycles so far.
    pub n_docs_read: usize,
    /// Distinct documents labeled in this cycle alone.
    pub cycle_docs: usize,
    /// Types of all spans sampled so far.
    pub span_types: SpanTypeCounts,
    pub errors: ErrorCounts,
    pub sample_seconds: f64,
    pub train_seconds: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config: CycleConfig,
    pub repeat: usize,
    pub seed: u64,
    /// The source model on the test documents, before any target labels.
    pub baseline: EvalResult,
    pub cycles: Vec<CycleReport>,
    pub labels: Vec<Label>,
}

/// Everything a run needs that does not change between cycles: the source
/// checkpoint h0, the unlabeled target documents, and the test documents.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    pub source: ModelParams,
    pub features: Featurizer,
    /// Hyperparameters for continued training; the seed is replaced per run.
    pub hyper: Hyperparams,
    pub target: Vec<Document>,
    pub test: Vec<Document>,
    pub pronouns: PronounLexicon,
}

impl ActiveLearner {
    pub fn new(
        source: ModelParams,
        features: Featurizer,
        hyper: Hyperparams,
        target: Vec<Document>,
        test: Vec<Document>,
    ) -> Result<Self> {
        hyper.validate()?;
        if features.dim() != source.dims.feature_dim {
            return Err(Error::Dimension {
                expected: source.dims.feature_dim,
                got: features.dim(),
            });
        }
        if target.is_empty() {
            return Err(Error::Config("the target corpus is empty".into()));
        }
        let target_ids: HashSet<&str> = target.iter().map(|d| d.doc_id.as_str()).collect();
        if target_ids.len() != target.len() {
            return Err(Error::Config("duplicate document ids in the target corpus".into()));
        }
        if let Some(d) = test.iter().find(|d| target_ids.contains(d.doc_id.as_str())) {
            return Err(Error::Config(format!(
                "test document {} also appears in the target corpus",
                d.doc_id
            )));
        }
        Ok(Self {
            source,
            features,
            hyper,
            target,
            test,
            pronouns: PronounLexicon::default(),
        })
    }

    pub fn model<'a>(&'a self, params: &'a ModelParams) -> Model<'a> {
        Model::new(params, &self.features)
    }

    pub fn target_doc(&self, doc_id: &str) -> Option<&Document> {
        self.target.iter().find(|d| d.doc_id == doc_id)
    }

    /// Scores the unlabeled target spans with the run's current model and
    /// applies the reading budget. Returns an empty list once every
    /// candidate is labeled.
    pub fn sample(&self, state: &mut RunState, strategy: Strategy, k: usize, m: ReadBudget) -> Result<Vec<Span>> {
        let scored = score_pool(strategy, self.model(&state.model), &self.target, &state.pool, &mut state.rng)?;
        if scored.is_empty() {
            tracing::warn!(run = %state.run_id, "no unlabeled spans left");
            return Ok(Vec::new());
        }
        select_with_read_budget(&scored, k, m)
    }

    /// Trains h_t from h0 on the whole pool.
    pub fn retrain(&self, pool: &LabeledPool, seed: u64) -> Result<(ModelParams, TrainReport)> {
        let hyper = Hyperparams { seed, ..self.hyper };
        let data = TrainingData::discrete(&self.target, pool, &hyper)?;
        train(&self.source, &self.features, &data, &hyper)
    }

    pub fn evaluate(&self, params: &ModelParams) -> Result<(EvalResult, ErrorCounts)> {
        if self.test.is_empty() {
            return Ok(Default::default());
        }
        let inference = infer_corpus(self.model(params), &self.test)?;
        let pred: Vec<_> = inference.into_iter().map(|d| d.clusters).collect();
        Ok((evaluate(&self.test, &pred, false)?, corpus_error_report(&self.test, &pred)?))
    }

    pub fn span_types(&self, pool: &LabeledPool) -> Result<SpanTypeCounts> {
        classify_spans(pool.labels().map(|l| &l.query), &self.target, &self.pronouns)
    }

    /// One pass of sample, label with the gold oracle, retrain, evaluate.
    pub fn run_cycle(&self, state: &mut RunState, config: &CycleConfig) -> Result<CycleReport> {
        let cycle = state.cycle + 1;
        let t0 = Instant::now();
        let queries = self.sample(state, config.strategy, config.k, config.m)?;
        let sample_seconds = t0.elapsed().as_secs_f64();

        let mut n_new = 0;
        for q in &queries {
            let doc = self
                .target_doc(&q.doc_id)
                .ok_or_else(|| Error::InvalidLabel(format!("span {q} from an unknown document")))?;
            let label = oracle_label(doc, q, DateTime::UNIX_EPOCH)?;
            if state.pool.insert(label, cycle)? {
                n_new += 1;
            }
        }
        let cycle_docs: BTreeSet<&str> = queries.iter().map(|q| q.doc_id.as_str()).collect();
        if let Some(m) = config.m.limit() {
            assert!(
                cycle_docs.len() <= m,
                "cycle {cycle} of {} read {} documents with m = {m}",
                state.run_id,
                cycle_docs.len()
            );
        }
        if state.pool.is_empty() {
            return Err(Error::EmptyPool);
        }

        let t1 = Instant::now();
        let (model, report) = self.retrain(&state.pool, state.seed)?;
        let train_seconds = t1.elapsed().as_secs_f64();
        let (eval, errors) = self.evaluate(&model)?;
        tracing::info!(run = %state.run_id, cycle, avg_f1 = eval.avg_f1, labels = state.pool.len(), "cycle finished");

        let out = CycleReport {
            run_id: state.run_id.clone(),
            cycle,
            strategy: config.strategy,
            k: config.k,
            m: config.m,
            eval,
            n_labels: state.pool.len(),
            n_new_labels: n_new,
            n_docs_read: state.pool.doc_ids().len(),
            cycle_docs: cycle_docs.len(),
            span_types: self.span_types(&state.pool)?,
            errors,
            sample_seconds,
            train_seconds,
            best_epoch: report.best_epoch,
        };
        state.model = model;
        state.cycle = cycle;
        Ok(out)
    }

    /// A full simulated run of `config.cycles` cycles for one repeat.
    pub fn simulate(&self, config: &CycleConfig, repeat: usize) -> Result<RunResult> {
        self.simulate_with(config, repeat, |_, _| Ok(()))
    }

    /// Like [`ActiveLearner::simulate`], calling `on_cycle` with the state
    /// (holding the freshly trained model) after every cycle.
    pub fn simulate_with(
        &self,
        config: &CycleConfig,
        repeat: usize,
        mut on_cycle: impl FnMut(&RunState, &CycleReport) -> Result<()>,
    ) -> Result<RunResult> {
        config.validate()?;
        let seed = config.run_seed(repeat);
        let mut state = RunState::new(config.run_id(repeat), seed, &self.source);
        let (baseline, _) = self.evaluate(&self.source)?;
        let mut cycles = Vec::with_capacity(config.cycles);
        for _ in 0..config.cycles {
            let report = self.run_cycle(&mut state, config)?;
            on_cycle(&state, &report)?;
            cycles.push(report);
        }
        Ok(RunResult {
            run_id: state.run_id,
            config: config.clone(),
            repeat,
            seed,
            baseline,
            cycles,
            labels: state.pool.labels().cloned().collect(),
        })
    }
}
