use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cycle::{ActiveLearner, CycleConfig, RunResult};
use super::select::ReadBudget;
use crate::acquisition::Strategy;
use crate::error::{Error, Result};
use crate::metrics::EvalResult;

/// Cartesian grid over k, m and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ks: Vec<usize>,
    pub ms: Vec<ReadBudget>,
    pub strategies: Vec<Strategy>,
    pub cycles: usize,
    pub seed: u64,
    pub repeats: usize,
}

impl GridSpec {
    pub fn configs(&self) -> Vec<CycleConfig> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for &k in &self.ks {
                for &m in &self.ms {
                    out.push(CycleConfig {
                        k,
                        m,
                        cycles: self.cycles,
                        strategy,
                        seed: self.seed,
                        repeats: self.repeats,
                    });
                }
            }
        }
        out
    }
}

/// Every (config, repeat) pair, in a fixed order.
pub fn enumerate_runs(configs: &[CycleConfig]) -> Vec<(CycleConfig, usize)> {
    configs
        .iter()
        .flat_map(|c| (0..c.repeats).map(move |r| (c.clone(), r)))
        .collect()
}

/// Runs every repeat of every config, `jobs` at a time. Results come back in
/// `enumerate_runs` order regardless of scheduling.
pub fn run_grid(learner: &ActiveLearner, runs: &[(CycleConfig, usize)], jobs: usize) -> Result<Vec<RunResult>> {
    run_grid_with(learner, runs, jobs, |_| Ok(()))
}

/// Like [`run_grid`], calling `on_done` as each run finishes so artifacts can
/// be written before the whole grid completes.
pub fn run_grid_with(
    learner: &ActiveLearner,
    runs: &[(CycleConfig, usize)],
    jobs: usize,
    on_done: impl Fn(&RunResult) -> Result<()> + Sync,
) -> Result<Vec<RunResult>> {
    for (c, _) in runs {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        runs.par_iter()
            .map(|(c, r)| {
                let run = learner.simulate(c, *r)?;
                on_done(&run)?;
                Ok(run)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    /// Unbiased sample variance; zero for a single value.
    pub variance: f64,
}

impl MeanVar {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        if values.iter().all(|&v| v == values[0]) {
            return Self { mean: values[0], variance: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub k: usize,
    pub m: ReadBudget,
    /// Cycle 0 is the source model before any labels.
    pub cycle: usize,
    pub n_runs: usize,
    pub avg_f1: MeanVar,
    pub muc_f1: MeanVar,
    pub b3_f1: MeanVar,
    pub ceaf_f1: MeanVar,
    pub mention_f1: MeanVar,
}

/// Mean and variance over repeats for every (strategy, k, m, cycle).
pub fn aggregate(runs: &[RunResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Strategy, usize, ReadBudget, usize), Vec<EvalResult>> = BTreeMap::new();
    for run in runs {
        let c = &run.config;
        groups.entry((c.strategy, c.k, c.m, 0)).or_default().push(run.baseline);
        for r in &run.cycles {
            groups.entry((c.strategy, c.k, c.m, r.cycle)).or_default().push(r.eval);
        }
    }
    groups
        .into_iter()
        .map(|((strategy, k, m, cycle), evals)| {
            let stat = |f: fn(&EvalResult) -> f64| MeanVar::of(&evals.iter().map(f).collect::<Vec<_>>());
            AggregateRow {
                strategy,
                k,
                m,
                cycle,
                n_runs: evals.len(),
                avg_f1: stat(|e| e.avg_f1),
                muc_f1: stat(|e| e.muc.f1),
                b3_f1: stat(|e| e.b3.f1),
                ceaf_f1: stat(|e| e.ceaf.f1),
                mention_f1: stat(|e| e.mention.f1),
            }
        })
        .collect()
}
