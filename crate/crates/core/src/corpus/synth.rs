//! Templated synthetic corpora with controllable domain shift.
//!
//! Every lexical choice (first names, surnames, object nouns, filler words)
//! is drawn from a fixed "source" pool, or from a disjoint "target" pool with
//! probability `vocab_shift`. The same probability switches object mentions
//! from `the <noun>` to the demonstrative `this <noun>`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, Range};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    /// Minimum document length; documents are padded with filler sentences.
    pub tokens_per_doc: usize,
    /// Entities per document.
    pub n_entities: usize,
    /// Controls how densely mentions are packed between filler words; 0 means
    /// no mentions at all.
    pub mention_rate: f64,
    /// Probability that a repeated mention of the most recent entity is a pronoun.
    pub pronoun_rate: f64,
    /// Fraction of entities mentioned exactly once.
    pub singleton_rate: f64,
    pub vocab_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 50,
            tokens_per_doc: 60,
            n_entities: 6,
            mention_rate: 0.5,
            pronoun_rate: 0.3,
            singleton_rate: 0.2,
            vocab_shift: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mention_rate", self.mention_rate),
            ("pronoun_rate", self.pronoun_rate),
            ("singleton_rate", self.singleton_rate),
            ("vocab_shift", self.vocab_shift),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.n_docs == 0 || self.tokens_per_doc == 0 || self.n_entities == 0 {
            return Err(Error::Config(
                "n_docs, tokens_per_doc and n_entities must be positive".into(),
            ));
        }
        Ok(())
    }
}

const SOURCE_SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "te", "su", "no", "vi", "da", "pe", "ro", "ga", "bi", "fu", "ze",
];
const TARGET_SYLLABLES: &[&str] = &[
    "qua", "xen", "yor", "thu", "wex", "zhi", "plo", "gry", "sko", "vrn", "jha", "kwe", "oxi",
    "urb", "ilt",
];

/// Words per category in the target pool. A target domain reuses a small
/// vocabulary, so a few labeled documents cover much of it.
const TARGET_POOL_SIZE: usize = 20;

struct Pools {
    female: Vec<String>,
    male: Vec<String>,
    surnames: Vec<String>,
    nouns: Vec<String>,
    verbs: Vec<String>,
    fillers: Vec<String>,
}

impl Pools {
    fn new(syllables: &[&str], size: usize) -> Self {
        let words = |suffix: &str, capital: bool, offset: usize| -> Vec<String> {
            let n = syllables.len();
            (0..(n * n).min(size))
                .map(|i| {
                    let j = i + offset;
                    let w = format!("{}{}{suffix}", syllables[j % n], syllables[(j / n) % n]);
                    if capital {
                        let mut c = w.chars();
                        let first = c.next().unwrap().to_uppercase();
                        first.chain(c).collect()
                    } else {
                        w
                    }
                })
                .collect()
        };
        Self {
            female: words("a", true, 0),
            male: words("o", true, 7),
            surnames: words("ek", true, 3),
            nouns: words("ine", false, 5),
            verbs: words("ed", false, 11),
            fillers: words("ly", false, 2),
        }
    }
}

const PREPOSITIONS: &[&str] = &["near", "with", "for", "about", "under"];

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Female,
    Male,
    Object,
}

struct Entity {
    kind: Kind,
    name: Vec<String>,
    mentions: usize,
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    source: &'a Pools,
    target: &'a Pools,
    shift: f64,
}

impl Gen<'_> {
    fn word(&mut self, pick: impl Fn(&Pools) -> &Vec<String>) -> String {
        let shifted = self.rng.gen_bool(self.shift);
        let pool = if shifted { pick(self.target) } else { pick(self.source) };
        pool[self.rng.gen_range(0..pool.len())].clone()
    }
}

/// Generates a reproducible synthetic corpus.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Document>> {
    config.validate()?;
    let source = Pools::new(SOURCE_SYLLABLES, usize::MAX);
    let target = Pools::new(TARGET_SYLLABLES, TARGET_POOL_SIZE);
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        source: &source,
        target: &target,
        shift: config.vocab_shift,
    };
    let mut entities_so_far = 0usize;
    let mut singletons_so_far = 0usize;
    let mut docs = Vec::with_capacity(config.n_docs);
    for d in 0..config.n_docs {
        let doc_id = format!("synth-{}-{d:04}", config.seed);
        let entities = if config.mention_rate > 0.0 {
            // Carry rounding across documents so the corpus-level singleton
            // fraction tracks singleton_rate to within 1/total entities.
            let total = entities_so_far + config.n_entities;
            let wanted = (config.singleton_rate * total as f64).round() as usize;
            let n_single = wanted.saturating_sub(singletons_so_far).min(config.n_entities);
            entities_so_far = total;
            singletons_so_far += n_single;
            make_entities(&mut gen, config.n_entities, n_single)
        } else {
            Vec::new()
        };
        docs.push(render(&mut gen, config, doc_id, entities));
    }
    Ok(docs)
}

fn make_entities(gen: &mut Gen, n: usize, n_single: usize) -> Vec<Entity> {
    let mut singles: Vec<bool> = (0..n).map(|i| i < n_single).collect();
    singles.shuffle(&mut gen.rng);
    let mut used = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    for single in singles {
        let kind = match gen.rng.gen_range(0..10) {
            0..=2 => Kind::Female,
            3..=5 => Kind::Male,
            _ => Kind::Object,
        };
        // Distinct head words within a document keep gold clusters unambiguous.
        let name = loop {
            let name = match kind {
                Kind::Female | Kind::Male => {
                    let first = if kind == Kind::Female {
                        gen.word(|p| &p.female)
                    } else {
                        gen.word(|p| &p.male)
                    };
                    vec![first, gen.word(|p| &p.surnames)]
                }
                Kind::Object => vec![gen.word(|p| &p.nouns)],
            };
            if used.insert(name.last().cloned().unwrap()) {
                break name;
            }
        };
        let mentions = if single { 1 } else { 2 + gen.rng.gen_range(0..=2) };
        out.push(Entity {
            kind,
            name,
            mentions,
        });
    }
    out
}

/// Orders the mention multiset; a pronoun marks an immediate repeat.
fn mention_order(gen: &mut Gen, entities: &[Entity], pronoun_rate: f64) -> Vec<(usize, bool)> {
    let mut remaining: Vec<usize> = entities.iter().map(|e| e.mentions).collect();
    let mut order = Vec::new();
    let mut last: Option<usize> = None;
    while remaining.iter().any(|&r| r > 0) {
        if let Some(l) = last {
            if remaining[l] > 0 && gen.rng.gen_bool(pronoun_rate) {
                remaining[l] -= 1;
                order.push((l, true));
                continue;
            }
        }
        let total: usize = remaining.iter().sum();
        let mut pick = gen.rng.gen_range(0..total);
        let e = remaining
            .iter()
            .position(|&r| {
                if pick < r {
                    true
                } else {
                    pick -= r;
                    false
                }
            })
            .unwrap();
        remaining[e] -= 1;
        order.push((e, false));
        last = Some(e);
    }
    order
}

fn render(gen: &mut Gen, config: &SynthConfig, doc_id: String, entities: Vec<Entity>) -> Document {
    let order = mention_order(gen, &entities, config.pronoun_rate);
    let mut tokens: Vec<String> = Vec::new();
    let mut sentence_starts = Vec::new();
    let mut clusters: Vec<Vec<Range>> = vec![Vec::new(); entities.len()];
    let mut next = order.into_iter().peekable();

    let mut emit = |tokens: &mut Vec<String>, gen: &mut Gen, (e, pronoun): (usize, bool), subject: bool| {
        let entity = &entities[e];
        let start = tokens.len();
        if pronoun {
            let p = match (entity.kind, subject) {
                (Kind::Female, true) => "she",
                (Kind::Female, false) => "her",
                (Kind::Male, true) => "he",
                (Kind::Male, false) => "him",
                (Kind::Object, _) => "it",
            };
            tokens.push(p.to_string());
        } else {
            if entity.kind == Kind::Object {
                let det = if gen.rng.gen_bool(gen.shift) { "this" } else { "the" };
                tokens.push(det.to_string());
            }
            tokens.extend(entity.name.iter().cloned());
        }
        clusters[e].push((start, tokens.len()));
    };

    while next.peek().is_some() || tokens.len() < config.tokens_per_doc {
        sentence_starts.push(tokens.len());
        match next.next() {
            Some(m) => emit(&mut tokens, gen, m, true),
            None => {
                let w = gen.word(|p| &p.fillers);
                tokens.push(w);
            }
        }
        tokens.push(gen.word(|p| &p.verbs));
        // Filler density falls as mention_rate rises.
        let mut gap = 0;
        while gap < 4 && !gen.rng.gen_bool(config.mention_rate.max(0.2)) {
            tokens.push(gen.word(|p| &p.fillers));
            gap += 1;
        }
        if next.peek().is_some() && gen.rng.gen_bool(config.mention_rate) {
            let prep = PREPOSITIONS[gen.rng.gen_range(0..PREPOSITIONS.len())];
            tokens.push(prep.to_string());
            let m = next.next().unwrap();
            emit(&mut tokens, gen, m, false);
        } else {
            tokens.push(gen.word(|p| &p.fillers));
        }
        tokens.push(".".to_string());
    }

    let gold_clusters = clusters.into_iter().filter(|c| !c.is_empty()).collect();
    Document {
        doc_id,
        tokens,
        sentence_starts,
        gold_clusters,
    }
}
