//! The weighted-NLL training loop: per batch, detached token probabilities
//! are turned into weights by the configured loss, then one AdamW step is
//! taken on the weighted objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::config::{ModelConfig, TrainConfig};
use super::model::{backward, forward_cached, split_sequences};
use super::params::{Gradients, ModelParams};
use super::real::Real;
use crate::error::{domain, Error, Result};
use crate::losses::{compute_weights, LossSpec, QuantileBuffer, WeightStats};

/// Epoch losses above this multiple of the first epoch's loss count toward
/// divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive epochs above the factor that abort training.
pub const DIVERGENCE_PATIENCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Weighted objective of the batch.
    pub loss: f64,
    /// Unweighted per-sequence NLL of the batch.
    pub nll: f64,
    pub mean_weight: f64,
    pub kept_fraction: f64,
    pub floor_hits: usize,
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub method: String,
    pub loss: f64,
    pub nll: f64,
    pub mean_weight: f64,
    pub kept_fraction: f64,
    pub floor_hits: usize,
    pub batches: usize,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub params: ModelParams<F>,
    pub adam: AdamState<F>,
    pub buffer: QuantileBuffer,
    /// Completed epochs.
    pub epoch: usize,
}

impl<F: Real> TrainState<F> {
    pub fn new(model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(model)?;
        let adam = AdamState::new(params.len());
        Ok(Self {
            params,
            adam,
            buffer: QuantileBuffer::new(train.loss.buffer_capacity),
            epoch: 0,
        })
    }
}

/// Maps `f` over `items` keeping their order, on the rayon pool when it has
/// more than one thread.
pub(crate) fn map_ordered<T, U, G>(items: &[T], f: G) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    G: Fn(&T) -> Result<U> + Sync + Send,
{
    if rayon::current_num_threads() > 1 && items.len() > 1 {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// One optimizer step on a batch of full sequences.
pub fn train_step<F: Real>(
    state: &mut TrainState<F>,
    batch: &[Vec<usize>],
    spec: &LossSpec,
    hyper: &AdamHyper,
    micro_batch: usize,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(domain("empty batch"));
    }
    let vocab = state.params.config().vocab_size;
    let (ctx, tgt) = split_sequences(batch)?;
    if let Some(&bad) = tgt.iter().flat_map(|x| x.iter()).find(|&&y| y >= vocab) {
        return Err(domain(format!("token id {bad} is outside the vocabulary of size {vocab}")));
    }
    let params = &state.params;
    let chunks: Vec<(usize, usize)> = (0..batch.len())
        .step_by(micro_batch)
        .map(|s| (s, (s + micro_batch).min(batch.len())))
        .collect();
    let caches = map_ordered(&chunks, |&(s, e)| forward_cached(params, &ctx[s..e]))?;

    let mut logprobs = Vec::with_capacity(batch.len());
    for (cache, &(s, e)) in caches.iter().zip(&chunks) {
        logprobs.extend(cache.target_logprobs(&tgt[s..e], vocab));
    }
    let probs: Vec<Vec<f64>> = logprobs
        .iter()
        .map(|r| r.iter().map(|l| l.exp()).collect())
        .collect();
    let (weights, stats): (_, WeightStats) = compute_weights(spec, &probs, &mut state.buffer)?;
    let rows = weights.rows();
    let scale = 1.0 / batch.len() as f64;

    let jobs: Vec<_> = caches.iter().zip(&chunks).collect();
    let parts = map_ordered(&jobs, |&(cache, &(s, e))| backward(params, cache, &tgt[s..e], &rows[s..e], scale))?;
    let mut loss = 0.0;
    let mut grads = Gradients::<F>::zeros(params.len());
    for (l, g) in &parts {
        loss += l;
        grads.add_assign(g);
    }
    let nll = -logprobs.iter().flatten().sum::<f64>() * scale;
    if !loss.is_finite() || grads.data.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            epoch: state.epoch + 1,
            batch: 0,
            loss,
        });
    }
    adam_step(&mut state.params, &grads, &mut state.adam, hyper)?;
    Ok(StepMetrics {
        loss,
        nll,
        mean_weight: stats.mean_weight,
        kept_fraction: stats.kept_fraction,
        floor_hits: stats.floor_hits,
        gated: stats.gated,
    })
}

/// Epoch-by-epoch driver with divergence monitoring.
pub struct Trainer<F> {
    model: ModelConfig,
    train: TrainConfig,
    state: TrainState<F>,
    first_loss: Option<f64>,
    over: usize,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let state = TrainState::new(model, train)?;
        Self::from_state(model, train, state)
    }

    pub fn from_state(model: &ModelConfig, train: &TrainConfig, state: TrainState<F>) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        if state.params.config() != model {
            return Err(domain("state was built for a different model configuration"));
        }
        Ok(Self {
            model: model.clone(),
            train: train.clone(),
            state,
            first_loss: None,
            over: 0,
        })
    }

    pub fn state(&self) -> &TrainState<F> {
        &self.state
    }

    pub fn into_state(self) -> TrainState<F> {
        self.state
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    /// Loss used in epoch `epoch` (1-based), honouring NLL warm-up.
    pub fn spec_for_epoch(&self, epoch: usize) -> LossSpec {
        if epoch <= self.train.warmup_epochs {
            LossSpec::nll()
        } else {
            self.train.loss
        }
    }

    /// Shuffles with a stream derived from the seed and the epoch number, so
    /// resumed runs see the same order.
    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(epoch as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }

    pub fn run_epoch(&mut self, dataset: &[Vec<usize>]) -> Result<EpochMetrics> {
        if dataset.is_empty() {
            return Err(domain("empty dataset"));
        }
        let len = self.model.seq_len;
        if let Some(bad) = dataset.iter().find(|s| s.len() != len) {
            return Err(domain(format!(
                "dataset sequences must have length {len}, found {}",
                bad.len()
            )));
        }
        let epoch = self.state.epoch + 1;
        let spec = self.spec_for_epoch(epoch);
        let hyper = AdamHyper::from_train(&self.train);
        let order = self.epoch_order(epoch, dataset.len());
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut floor_hits = 0;
        let mut batches = 0;
        for (bi, idx) in order.chunks(self.train.batch_size).enumerate() {
            let batch: Vec<Vec<usize>> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let m = train_step(&mut self.state, &batch, &spec, &hyper, self.train.micro_batch)
                .map_err(|e| match e {
                    Error::NonFinite { loss, .. } => Error::NonFinite { epoch, batch: bi, loss },
                    other => other,
                })?;
            sums.0 += m.loss;
            sums.1 += m.nll;
            sums.2 += m.mean_weight;
            sums.3 += m.kept_fraction;
            floor_hits += m.floor_hits;
            batches += 1;
        }
        self.state.epoch = epoch;
        let nb = batches as f64;
        let metrics = EpochMetrics {
            epoch,
            method: spec.method.to_string(),
            loss: sums.0 / nb,
            nll: sums.1 / nb,
            mean_weight: sums.2 / nb,
            kept_fraction: sums.3 / nb,
            floor_hits,
            batches,
        };
        self.watch_divergence(&metrics)?;
        Ok(metrics)
    }

    fn watch_divergence(&mut self, m: &EpochMetrics) -> Result<()> {
        let first = *self.first_loss.get_or_insert(m.loss);
        if first > 0.0 && m.loss > DIVERGENCE_FACTOR * first {
            self.over += 1;
            if self.over >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    epoch: m.epoch,
                    loss: m.loss,
                    initial: first,
                });
            }
        } else {
            self.over = 0;
        }
        Ok(())
    }

    /// Runs the remaining epochs, reporting each to `on_epoch`.
    pub fn run(&mut self, dataset: &[Vec<usize>], mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::new();
        while self.state.epoch < self.train.epochs {
            let m = self.run_epoch(dataset)?;
            on_epoch(&m);
            log.push(m);
        }
        Ok(log)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub state: TrainState<F>,
    pub log: Vec<EpochMetrics>,
}

/// Trains a freshly initialized model for `train.epochs` epochs.
pub fn train<F: Real>(model: &ModelConfig, train: &TrainConfig, dataset: &[Vec<usize>]) -> Result<TrainOutcome<F>> {
    let mut trainer = Trainer::<F>::new(model, train)?;
    let log = trainer.run(dataset, |m| {
        log::info!(
            "epoch {} [{}] loss {:.5} nll {:.5} mean_weight {:.4} kept {:.3}",
            m.epoch,
            m.method,
            m.loss,
            m.nll,
            m.mean_weight,
            m.kept_fraction
        )
    })?;
    Ok(TrainOutcome {
        state: trainer.into_state(),
        log,
    })
}
