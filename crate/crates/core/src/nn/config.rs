use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::losses::LossSpec;

/// Block recipe of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// RMSNorm, rotary positions, SwiGLU feed-forward.
    Llama,
    /// RMSNorm, learned absolute positions, GELU feed-forward.
    Simple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Output vocabulary size V. The input embedding has one extra row for
    /// the beginning-of-sequence token.
    pub vocab_size: usize,
    pub seq_len: usize,
    #[serde(default = "defaults::n_layers")]
    pub n_layers: usize,
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default = "defaults::n_heads")]
    pub n_heads: usize,
    #[serde(default = "defaults::d_ff")]
    pub d_ff: usize,
    #[serde(default = "defaults::arch")]
    pub arch: Arch,
    #[serde(default = "defaults::init_std")]
    pub init_std: f64,
    #[serde(default = "defaults::rope_base")]
    pub rope_base: f64,
    #[serde(default = "defaults::norm_eps")]
    pub norm_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::Arch;

    pub fn n_layers() -> usize {
        4
    }
    pub fn d_model() -> usize {
        32
    }
    pub fn n_heads() -> usize {
        4
    }
    pub fn d_ff() -> usize {
        128
    }
    pub fn arch() -> Arch {
        Arch::Llama
    }
    pub fn init_std() -> f64 {
        0.02
    }
    pub fn rope_base() -> f64 {
        10_000.0
    }
    pub fn norm_eps() -> f64 {
        1e-5
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn weight_decay() -> f64 {
        1.0
    }
    pub fn epochs() -> usize {
        500
    }
    pub fn batch_size() -> usize {
        512
    }
    pub fn micro_batch() -> usize {
        128
    }
    pub fn loss() -> crate::losses::LossSpec {
        crate::losses::LossSpec::nll()
    }
}

impl ModelConfig {
    /// The 4-layer, width-32 configuration used for the multiplication task.
    pub fn standard(vocab_size: usize, seq_len: usize) -> Self {
        Self {
            vocab_size,
            seq_len,
            n_layers: defaults::n_layers(),
            d_model: defaults::d_model(),
            n_heads: defaults::n_heads(),
            d_ff: defaults::d_ff(),
            arch: defaults::arch(),
            init_std: defaults::init_std(),
            rope_base: defaults::rope_base(),
            norm_eps: defaults::norm_eps(),
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Input vocabulary: the V output tokens plus BOS.
    pub fn input_vocab(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.seq_len == 0 || self.n_layers == 0 {
            return Err(domain("vocab_size, seq_len and n_layers must be positive"));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(domain(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.arch == Arch::Llama && self.head_dim() % 2 != 0 {
            return Err(domain("rotary positions need an even head dimension"));
        }
        if self.d_ff == 0 {
            return Err(domain("d_ff must be positive"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(domain("init_std must be positive"));
        }
        if !(self.norm_eps > 0.0) || !(self.rope_base > 1.0) {
            return Err(domain("norm_eps must be positive and rope_base above 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Decoupled decay: every step multiplies all parameters by
    /// `1 - learning_rate * weight_decay`.
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Sequences per parallel work item. Gradients are summed over work items
    /// in a fixed order, so results do not depend on the thread count.
    #[serde(default = "defaults::micro_batch")]
    pub micro_batch: usize,
    /// Leading epochs trained with plain NLL before `loss` takes over.
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default = "defaults::loss")]
    pub loss: LossSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            weight_decay: defaults::weight_decay(),
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            micro_batch: defaults::micro_batch(),
            warmup_epochs: 0,
            loss: defaults::loss(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(domain("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) || self.learning_rate * self.weight_decay >= 1.0 {
            return Err(domain("weight_decay must be non-negative with learning_rate * weight_decay < 1"));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(domain("batch_size and micro_batch must be positive"));
        }
        self.loss.validate()
    }
}
