//! Central finite-difference check of [`loss_and_grads`] on a small model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Arch, ModelConfig};
use super::model::loss_and_grads;
use super::params::ModelParams;
use crate::error::Result;
use crate::losses::TokenWeights;

/// Relative errors use `max(|analytic|, |numeric|, ABS_FLOOR)` as the
/// denominator so coordinates with vanishing gradient are judged absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub arch: Arch,
    /// Worst relative error per parameter group.
    pub max_rel_err: BTreeMap<&'static str, f64>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.values().copied().fold(0.0, f64::max)
    }
}

/// A reduced-width configuration: V = 5, L = 3, width 8, two heads.
pub fn small_config(arch: Arch, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 5,
        seq_len: 3,
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        arch,
        init_std: 0.5,
        seed,
        ..ModelConfig::standard(5, 3)
    }
}

/// Compares every gradient coordinate against central differences with step
/// `h` on a random batch with random non-negative token weights.
pub fn check_gradients(cfg: &ModelConfig, batch: usize, h: f64) -> Result<GradCheckReport> {
    let params = ModelParams::<f64>::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let seqs: Vec<Vec<usize>> = (0..batch)
        .map(|_| (0..cfg.seq_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect())
        .collect();
    let weights = TokenWeights::new(
        (0..batch)
            .map(|_| (0..cfg.seq_len).map(|_| rng.gen_range(0.0..2.0)).collect())
            .collect(),
    )?;
    let (_, grads) = loss_and_grads(&params, &seqs, &weights)?;
    let mut report = GradCheckReport {
        arch: cfg.arch,
        max_rel_err: BTreeMap::new(),
        coordinates: 0,
    };
    let mut probe = params.clone();
    for tensor in params.layout().tensors(cfg) {
        let worst = report.max_rel_err.entry(tensor.group).or_insert(0.0);
        for i in tensor.range.clone() {
            let orig = probe.data[i];
            probe.data[i] = orig + h;
            let (up, _) = loss_and_grads(&probe, &seqs, &weights)?;
            probe.data[i] = orig - h;
            let (down, _) = loss_and_grads(&probe, &seqs, &weights)?;
            probe.data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.data[i];
            let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
            *worst = worst.max((analytic - numeric).abs() / denom);
            report.coordinates += 1;
        }
    }
    Ok(report)
}
