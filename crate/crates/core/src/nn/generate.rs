use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::forward;
use super::params::ModelParams;
use super::real::Real;
use super::train::map_ordered;
use crate::dist::{sample, top_p, Categorical};
use crate::error::{domain, Result};

/// Sequences per parallel work item during batched generation.
pub const GENERATION_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decoding {
    Plain,
    TopP { p: f64 },
}

impl Decoding {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Decoding::Plain => Ok(()),
            Decoding::TopP { p } if p > 0.0 && p <= 1.0 => Ok(()),
            Decoding::TopP { p } => Err(domain(format!("top-p mass must lie in (0, 1], got {p}"))),
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("temperature must be finite and non-negative, got {t}")))
    }
}

/// `softmax(z / t)`, optionally top-p truncated. `None` at `t = 0`.
pub fn next_token_dist(logits: &[f64], t: f64, decoding: Decoding) -> Result<Option<Categorical>> {
    check_temperature(t)?;
    if t == 0.0 {
        return Ok(None);
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    let d = Categorical::from_logits(&scaled)?;
    match decoding {
        Decoding::Plain => Ok(Some(d)),
        Decoding::TopP { p } => Ok(Some(top_p(&d, p)?)),
    }
}

/// Lowest id among the maximal logits.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

pub fn pick_token<R: Rng + ?Sized>(logits: &[f64], t: f64, decoding: Decoding, rng: &mut R) -> Result<usize> {
    match next_token_dist(logits, t, decoding)? {
        None => Ok(argmax(logits)),
        Some(d) => Ok(sample(&d, rng)),
    }
}

fn complete<F: Real>(
    params: &ModelParams<F>,
    prompt: &[usize],
    t: f64,
    decoding: Decoding,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Vec<usize>>> {
    let len = params.config().seq_len;
    let mut seqs: Vec<Vec<usize>> = vec![prompt.to_vec(); rngs.len()];
    while seqs.first().is_some_and(|s| s.len() < len) {
        let logits = forward(params, &seqs)?;
        for (b, (s, rng)) in seqs.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let z: Vec<f64> = logits.last(b).iter().map(|x| x.f64()).collect();
            s.push(pick_token(&z, t, decoding, rng)?);
        }
    }
    Ok(seqs)
}

fn check_request<F: Real>(params: &ModelParams<F>, prompt: &[usize], t: f64, decoding: Decoding) -> Result<()> {
    check_temperature(t)?;
    decoding.validate()?;
    let cfg = params.config();
    if prompt.len() >= cfg.seq_len {
        return Err(domain(format!(
            "prompt length {} leaves nothing to generate (sequence length {})",
            prompt.len(),
            cfg.seq_len
        )));
    }
    if let Some(&bad) = prompt.iter().find(|&&x| x >= cfg.vocab_size) {
        return Err(domain(format!("prompt token {bad} is outside the vocabulary")));
    }
    Ok(())
}

/// Completes `prompt` to the model's full sequence length by sampling each
/// token from the tempered (and optionally top-p truncated) conditional.
pub fn generate<F: Real, R: Rng + ?Sized>(
    params: &ModelParams<F>,
    prompt: &[usize],
    t: f64,
    decoding: Decoding,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_request(params, prompt, t, decoding)?;
    let mut own = [ChaCha8Rng::from_rng(rng).map_err(|e| domain(e.to_string()))?];
    Ok(complete(params, prompt, t, decoding, &mut own)?.remove(0))
}

/// The random stream used for sequence `index` of a batch seeded by `seed`.
pub fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` independent completions; sequence `i` draws from
/// [`sequence_rng`]`(seed, i)`, so the output does not depend on how the work
/// is split across threads.
pub fn generate_many<F: Real>(
    params: &ModelParams<F>,
    prompt: &[usize],
    n: usize,
    t: f64,
    decoding: Decoding,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    check_request(params, prompt, t, decoding)?;
    let starts: Vec<usize> = (0..n).step_by(GENERATION_CHUNK).collect();
    let parts = map_ordered(&starts, |&s| {
        let e = (s + GENERATION_CHUNK).min(n);
        let mut rngs: Vec<ChaCha8Rng> = (s..e).map(|i| sequence_rng(seed, i)).collect();
        complete(params, prompt, t, decoding, &mut rngs)
    })?;
    Ok(parts.into_iter().flatten().collect())
}
