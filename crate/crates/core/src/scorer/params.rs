use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::Linear;
use crate::corpus::{FeatureConfig, N_BUCKETS};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "alcoref-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    /// Width of span and cluster representations.
    pub repr_dim: usize,
    /// Hidden width of the mention and pairwise scorers.
    pub hidden_dim: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            repr_dim: 64,
            hidden_dim: 64,
        }
    }

    fn pair_input(&self) -> usize {
        3 * self.repr_dim + N_BUCKETS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub prune_ratio: f64,
    pub dropout: f64,
    pub grad_clip: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub mention_loss_weight: f64,
    pub cluster_loss_weight: f64,
    /// Fraction of supervised items held out for early stopping.
    pub holdout_fraction: f64,
    /// Predicted singletons below this mention probability are dropped.
    pub mention_threshold: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            early_stop_patience: 10,
            prune_ratio: 0.4,
            dropout: 0.4,
            grad_clip: 10.0,
            learning_rate: 1e-4,
            seed: 0,
            mention_loss_weight: 1.0,
            cluster_loss_weight: 1.0,
            holdout_fraction: 0.1,
            mention_threshold: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.prune_ratio > 0.0 && self.prune_ratio <= 1.0) {
            return bad("prune_ratio must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("max_epochs and early_stop_patience must be positive");
        }
        if !(self.grad_clip > 0.0 && self.learning_rate > 0.0) {
            return bad("grad_clip and learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if self.mention_loss_weight < 0.0 || self.cluster_loss_weight < 0.0 {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerId {
    Embed = 0,
    MentionHidden = 1,
    MentionOut = 2,
    PairHidden = 3,
    PairOut = 4,
    Gate = 5,
}

impl LayerId {
    pub const ALL: [LayerId; 6] = [
        LayerId::Embed,
        LayerId::MentionHidden,
        LayerId::MentionOut,
        LayerId::PairHidden,
        LayerId::PairOut,
        LayerId::Gate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerId::Embed => "embed",
            LayerId::MentionHidden => "mention_hidden",
            LayerId::MentionOut => "mention_out",
            LayerId::PairHidden => "pair_hidden",
            LayerId::PairOut => "pair_out",
            LayerId::Gate => "gate",
        }
    }
}

/// Trainable state: span embedder, mention scorer, pairwise scorer and gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub hyper: Hyperparams,
    pub features: FeatureConfig,
    layers: Vec<Linear>,
}

impl ModelParams {
    pub fn init(dims: ModelDims, hyper: Hyperparams, features: FeatureConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let layers = Self::shapes(&dims)
            .iter()
            .map(|&(i, o)| Linear::init(i, o, &mut rng))
            .collect();
        Self {
            dims,
            hyper,
            features,
            layers,
        }
    }

    fn shapes(d: &ModelDims) -> [(usize, usize); 6] {
        [
            (d.feature_dim, d.repr_dim),
            (d.repr_dim, d.hidden_dim),
            (d.hidden_dim, 1),
            (d.pair_input(), d.hidden_dim),
            (d.hidden_dim, 1),
            (2 * d.repr_dim, 1),
        ]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            hyper: self.hyper,
            features: self.features,
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn layer(&self, id: LayerId) -> &Linear {
        &self.layers[id as usize]
    }

    pub fn layer_mut(&mut self, id: LayerId) -> &mut Linear {
        &mut self.layers[id as usize]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Linear::n_params).sum()
    }

    /// All weights then biases of each layer, in [`LayerId::ALL`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.flat_mut() {
            *p *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (p, q) in self.flat_mut().into_iter().zip(other.flat()) {
            *p += q;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|x| x.is_finite())
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        if !self.is_finite() {
            return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
        }
        let layers = LayerId::ALL
            .iter()
            .map(|&id| {
                let l = self.layer(id);
                CheckpointLayer {
                    name: id.name().to_string(),
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: l.weight.chunks(l.out_dim).map(<[f64]>::to_vec).collect(),
                    bias: l.bias.clone(),
                }
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            hyper: self.hyper,
            features: self.features,
            layers,
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let shapes = Self::shapes(&ck.dims);
        if ck.layers.len() != shapes.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} layers, found {}",
                shapes.len(),
                ck.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for ((layer, &(i, o)), id) in ck.layers.into_iter().zip(&shapes).zip(LayerId::ALL) {
            if layer.name != id.name()
                || layer.in_dim != i
                || layer.out_dim != o
                || layer.weight.len() != i
                || layer.weight.iter().any(|r| r.len() != o)
                || layer.bias.len() != o
            {
                return Err(Error::Checkpoint(format!(
                    "layer {} does not match dimensions {i}x{o}",
                    layer.name
                )));
            }
            layers.push(Linear {
                in_dim: i,
                out_dim: o,
                weight: layer.weight.into_iter().flatten().collect(),
                bias: layer.bias,
            });
        }
        let params = Self {
            dims: ck.dims,
            hyper: ck.hyper,
            features: ck.features,
            layers,
        };
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    dims: ModelDims,
    hyper: Hyperparams,
    features: FeatureConfig,
    layers: Vec<CheckpointLayer>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    name: String,
    in_dim: usize,
    out_dim: usize,
    /// One row per input unit.
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64) -> ModelParams {
        let dims = ModelDims {
            feature_dim: 5,
            repr_dim: 3,
            hidden_dim: 4,
        };
        ModelParams::init(
            dims,
            Hyperparams {
                seed,
                ..Default::default()
            },
            FeatureConfig::default(),
        )
    }

    #[test]
    fn paper_defaults() {
        let h = Hyperparams::default();
        assert_eq!(h.max_epochs, 50);
        assert_eq!(h.early_stop_patience, 10);
        assert_eq!(h.prune_ratio, 0.4);
        assert_eq!(h.dropout, 0.4);
        assert_eq!(h.grad_clip, 10.0);
        assert_eq!(h.learning_rate, 1e-4);
        h.validate().unwrap();
    }

    #[test]
    fn rejects_bad_hyperparams() {
        for h in [
            Hyperparams {
                prune_ratio: 0.0,
                ..Default::default()
            },
            Hyperparams {
                dropout: 1.0,
                ..Default::default()
            },
            Hyperparams {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(h.validate().is_err());
        }
    }

    #[test]
    fn rejects_mismatched_checkpoint() {
        let text = small(1).to_checkpoint().unwrap();
        let broken = text.replace("\"repr_dim\":3", "\"repr_dim\":4");
        assert!(ModelParams::from_checkpoint(&broken).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), scale in -1e6f64..1e6) {
            let mut p = small(seed);
            for (i, w) in p.flat_mut().into_iter().enumerate() {
                *w *= scale / (i as f64 + 1.0).sqrt();
            }
            let back = ModelParams::from_checkpoint(&p.to_checkpoint().unwrap()).unwrap();
            let a: Vec<u64> = p.flat().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.flat().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.dims, p.dims);
            prop_assert_eq!(back.hyper, p.hyper);
        }
    }
}
