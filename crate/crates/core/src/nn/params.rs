use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Arch, ModelConfig};
use super::real::Real;
use crate::error::Result;

/// Offsets of one decoder block inside the flat parameter vector. Matrices are
/// row-major `d_in x d_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    /// SwiGLU gate (`Llama`) or first projection (`Simple`), `d x ff`.
    pub w_in: usize,
    /// SwiGLU up projection, `Llama` only.
    pub w_up: Option<usize>,
    /// `ff x d`.
    pub w_down: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: Option<usize>,
    pub blocks: Vec<BlockOffsets>,
    pub final_norm: usize,
    pub w_out: usize,
    pub total: usize,
}

/// Whether a parameter tensor is a normalization gain (initialized to 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Gain,
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    /// Coarse group used when reporting gradient checks.
    pub group: &'static str,
    pub kind: TensorKind,
    pub range: Range<usize>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let mut next = 0usize;
        let mut take = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let tok_emb = take(cfg.input_vocab() * d);
        let pos_emb = (cfg.arch == Arch::Simple).then(|| take(cfg.seq_len * d));
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockOffsets {
                attn_norm: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                ffn_norm: take(d),
                w_in: take(d * ff),
                w_up: (cfg.arch == Arch::Llama).then(|| take(d * ff)),
                w_down: take(ff * d),
            })
            .collect();
        let final_norm = take(d);
        let w_out = take(d * cfg.vocab_size);
        Layout {
            tok_emb,
            pos_emb,
            blocks,
            final_norm,
            w_out,
            total: next,
        }
    }

    pub fn tensors(&self, cfg: &ModelConfig) -> Vec<TensorInfo> {
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let mut out = Vec::new();
        let mut push = |name: String, group, kind, at: usize, len: usize| {
            out.push(TensorInfo {
                name,
                group,
                kind,
                range: at..at + len,
            })
        };
        push("tok_emb".into(), "embedding", TensorKind::Matrix, self.tok_emb, cfg.input_vocab() * d);
        if let Some(p) = self.pos_emb {
            push("pos_emb".into(), "embedding", TensorKind::Matrix, p, cfg.seq_len * d);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            push(format!("blocks.{i}.attn_norm"), "norm", TensorKind::Gain, b.attn_norm, d);
            for (n, at) in [("wq", b.wq), ("wk", b.wk), ("wv", b.wv), ("wo", b.wo)] {
                push(format!("blocks.{i}.{n}"), "attention", TensorKind::Matrix, at, d * d);
            }
            push(format!("blocks.{i}.ffn_norm"), "norm", TensorKind::Gain, b.ffn_norm, d);
            push(format!("blocks.{i}.w_in"), "feed_forward", TensorKind::Matrix, b.w_in, d * ff);
            if let Some(u) = b.w_up {
                push(format!("blocks.{i}.w_up"), "feed_forward", TensorKind::Matrix, u, d * ff);
            }
            push(format!("blocks.{i}.w_down"), "feed_forward", TensorKind::Matrix, b.w_down, ff * d);
        }
        push("final_norm".into(), "norm", TensorKind::Gain, self.final_norm, d);
        push("w_out".into(), "output", TensorKind::Matrix, self.w_out, d * cfg.vocab_size);
        out
    }
}

/// Weights of the decoder in one flat vector addressed through [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    config: ModelConfig,
    layout: Layout,
    pub(crate) data: Vec<F>,
}

impl<F: Real> ModelParams<F> {
    /// Normal(0, `init_std`) matrices and unit gains, seeded by `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![F::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_std).expect("positive std");
        for t in layout.tensors(config) {
            match t.kind {
                TensorKind::Gain => data[t.range].fill(F::one()),
                TensorKind::Matrix => {
                    for x in &mut data[t.range] {
                        *x = F::c(normal.sample(&mut rng));
                    }
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn from_data(config: &ModelConfig, data: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if data.len() != layout.total {
            return Err(crate::error::domain(format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::c(x.f64())).collect(),
        }
    }

    pub(crate) fn slice(&self, at: usize, len: usize) -> &[F] {
        &self.data[at..at + len]
    }
}

/// Gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub data: Vec<F>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![F::zero(); len],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, x| m.max(x.abs()))
    }
}
