use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cycle::{CycleConfig, CycleReport};
use super::grid::AggregateRow;
use crate::analysis::TimingRecord;
use crate::error::{Error, Result};
use crate::scorer::Hyperparams;

pub const MANIFEST_FORMAT: &str = "alcoref-run";
pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to reproduce a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub config: CycleConfig,
    pub repeat: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
    /// Named input files, e.g. `source`, `target`, `test`, `checkpoint`.
    pub inputs: BTreeMap<String, String>,
    /// Named output files relative to the manifest.
    pub artifacts: BTreeMap<String, String>,
    pub completed: bool,
}

impl RunManifest {
    pub fn new(run_id: String, config: CycleConfig, repeat: usize, seed: u64, hyper: Hyperparams) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            run_id,
            config,
            repeat,
            seed,
            hyper,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            completed: false,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest {} v{}",
                m.format, m.version
            )));
        }
        Ok(m)
    }
}

pub const CYCLE_COLUMNS: [&str; 22] = [
    "run_id",
    "cycle",
    "strategy",
    "k",
    "m",
    "avg_f1",
    "muc_f1",
    "b3_f1",
    "ceaf_f1",
    "mention_f1",
    "n_labels",
    "n_docs_read",
    "entity_mentions",
    "non_entities",
    "pronouns",
    "singletons",
    "missing_entity",
    "extra_entity",
    "missing_mention",
    "extra_mention",
    "divided_entity",
    "conflated_entity",
];

/// Per-cycle metrics. Wall-clock timings go to a separate file so that this
/// one is byte-identical across reruns.
pub fn write_cycles_csv(out: impl Write, reports: &[CycleReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CYCLE_COLUMNS)?;
    for r in reports {
        let t = &r.span_types;
        let e = &r.errors;
        w.write_record([
            r.run_id.clone(),
            r.cycle.to_string(),
            r.strategy.to_string(),
            r.k.to_string(),
            r.m.to_string(),
            r.eval.avg_f1.to_string(),
            r.eval.muc.f1.to_string(),
            r.eval.b3.f1.to_string(),
            r.eval.ceaf.f1.to_string(),
            r.eval.mention.f1.to_string(),
            r.n_labels.to_string(),
            r.n_docs_read.to_string(),
            t.entity_mentions.to_string(),
            t.non_entities.to_string(),
            t.pronouns.to_string(),
            t.singletons.to_string(),
            e.missing_entity.to_string(),
            e.extra_entity.to_string(),
            e.missing_mention.to_string(),
            e.extra_mention.to_string(),
            e.divided_entity.to_string(),
            e.conflated_entity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn timing_records(reports: &[CycleReport]) -> Vec<TimingRecord> {
    reports
        .iter()
        .map(|r| TimingRecord {
            run_id: r.run_id.clone(),
            cycle: r.cycle,
            strategy: r.strategy.to_string(),
            sample_seconds: r.sample_seconds,
            train_seconds: r.train_seconds,
        })
        .collect()
}

pub fn write_timings_csv(out: impl Write, records: &[TimingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timings_csv(path: impl AsRef<Path>) -> Result<Vec<TimingRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_aggregate_csv(out: impl Write, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy", "k", "m", "cycle", "n_runs", "avg_f1_mean", "avg_f1_var", "muc_f1_mean", "muc_f1_var",
        "b3_f1_mean", "b3_f1_var", "ceaf_f1_mean", "ceaf_f1_var", "mention_f1_mean", "mention_f1_var",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.strategy.to_string(),
            r.k.to_string(),
            r.m.to_string(),
            r.cycle.to_string(),
            r.n_runs.to_string(),
        ];
        for s in [r.avg_f1, r.muc_f1, r.b3_f1, r.ceaf_f1, r.mention_f1] {
            rec.push(s.mean.to_string());
            rec.push(s.variance.to_string());
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
