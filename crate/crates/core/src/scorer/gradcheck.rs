use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{batch_loss, TrainingData};
use super::{LayerId, Model, ModelParams};
use crate::corpus::Featurizer;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;

/// Denominator floor for the relative error of gradients that are both ~0.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// `(flat index, analytic, numeric)` of the worst weight.
    pub worst: Option<(usize, f64, f64)>,
}

/// Compares analytic gradients of the summed loss against central finite
/// differences on `per_layer` randomly chosen weights of each layer.
///
/// The retained span sets in `data` should be frozen so the loss is smooth.
pub fn grad_check(
    params: &ModelParams,
    features: &Featurizer,
    data: &TrainingData,
    per_layer: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = batch_loss(Model::new(params, features), data)?;
    let analytic = analytic.flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut indices = Vec::new();
    let mut offset = 0;
    for id in LayerId::ALL {
        let n = params.layer(id).n_params();
        indices.extend(sample(&mut rng, n, per_layer.min(n)).into_iter().map(|i| offset + i));
        offset += n;
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        n_checked: 0,
        worst: None,
    };
    for i in indices {
        let original = params.flat()[i];
        *probe.flat_mut()[i] = original + FD_STEP;
        let (plus, _) = batch_loss(Model::new(&probe, features), data)?;
        *probe.flat_mut()[i] = original - FD_STEP;
        let (minus, _) = batch_loss(Model::new(&probe, features), data)?;
        *probe.flat_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.n_checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((i, a, numeric));
        }
    }
    Ok(report)
}
