//! Categorical distributions over a finite vocabulary and factorized
//! distributions over fixed-length token sequences.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{domain, Result};

/// Tolerance on the total mass of a [`Categorical`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Slack used when comparing cumulative mass against a coverage target, so
/// that e.g. nine tokens of mass 0.1 cover p = 0.9.
pub(crate) const COVERAGE_SLACK: f64 = 1e-12;

/// A probability vector over `V` tokens.
#[derive(Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl fmt::Debug for Categorical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Categorical").field(&self.probs).finish()
    }
}

impl Categorical {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(domain("categorical over an empty vocabulary"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(domain(format!("entry {i} = {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE * (probs.len() as f64).max(1.0) {
            return Err(domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(domain("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(domain("weights have zero total mass"));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Softmax of a logit vector.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
            return Err(domain("logits must be finite and non-empty"));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(Self {
            probs: exps.into_iter().map(|e| e / total).collect(),
        })
    }

    /// Uniform distribution over `v` tokens.
    pub fn uniform(v: usize) -> Result<Self> {
        if v == 0 {
            return Err(domain("uniform over an empty vocabulary"));
        }
        Ok(Self {
            probs: vec![1.0 / v as f64; v],
        })
    }

    /// Point mass on `token`.
    pub fn point(v: usize, token: usize) -> Result<Self> {
        if token >= v {
            return Err(domain(format!("token {token} out of range for V = {v}")));
        }
        let mut probs = vec![0.0; v];
        probs[token] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    /// Token ids sorted by descending probability, ties by ascending id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.probs.len()).collect();
        ids.sort_by(|&i, &j| self.probs[j].total_cmp(&self.probs[i]).then(i.cmp(&j)));
        ids
    }

    /// Smallest number of highest-probability tokens whose mass reaches `p`.
    pub fn coverage_count(&self, p: f64) -> usize {
        let mut cum = 0.0;
        for (n, id) in self.ranked().into_iter().enumerate() {
            cum += self.probs[id];
            if cum >= p - COVERAGE_SLACK {
                return n + 1;
            }
        }
        self.probs.len()
    }
}

/// Temperature scaling: `d_i^(1/t) / sum_j d_j^(1/t)`.
///
/// Computed in log space so that small temperatures do not underflow. Zero
/// entries stay exactly zero.
pub fn temper(d: &Categorical, t: f64) -> Result<Categorical> {
    if !t.is_finite() || t <= 0.0 {
        return Err(domain(format!("temperature must be positive and finite, got {t}")));
    }
    if t == 1.0 {
        return Ok(d.clone());
    }
    let scaled: Vec<Option<f64>> = d
        .probs
        .iter()
        .map(|&p| (p > 0.0).then(|| p.ln() / t))
        .collect();
    let max = scaled
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled
        .iter()
        .map(|s| s.map_or(0.0, |s| (s - max).exp()))
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(Categorical {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(d: &Categorical) -> f64 {
    -d.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Nucleus truncation: keep the smallest prefix of the tokens ranked by
/// probability (ties by lower id) whose mass reaches `p`, then renormalize.
pub fn top_p(d: &Categorical, p: f64) -> Result<Categorical> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain(format!("top-p mass must lie in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(d.clone());
    }
    let keep = d.coverage_count(p);
    let mut probs = vec![0.0; d.probs.len()];
    for id in d.ranked().into_iter().take(keep) {
        probs[id] = d.probs[id];
    }
    Categorical::from_weights(probs)
}

/// Token ids with probability strictly above `tol`.
pub fn support(d: &Categorical, tol: f64) -> Vec<usize> {
    d.probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > tol)
        .map(|(i, _)| i)
        .collect()
}

/// Draws one token by inverting the cumulative distribution.
pub fn sample<R: Rng + ?Sized>(d: &Categorical, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in d.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

type ConditionalFn = dyn Fn(&[usize]) -> Categorical + Send + Sync;

/// A distribution over `V^L` given by its next-token conditionals,
/// `P(x) = prod_l P(x_l | x_<l)`.
#[derive(Clone)]
pub struct FactorizedSeqDist {
    vocab_size: usize,
    len: usize,
    conditional: Arc<ConditionalFn>,
}

impl fmt::Debug for FactorizedSeqDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactorizedSeqDist")
            .field("vocab_size", &self.vocab_size)
            .field("len", &self.len)
            .finish_non_exhaustive()
    }
}

impl FactorizedSeqDist {
    /// Wraps a conditional function. The function must be deterministic and
    /// return `vocab_size` entries for every context shorter than `len`.
    pub fn from_fn<F>(vocab_size: usize, len: usize, conditional: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> Categorical + Send + Sync + 'static,
    {
        if vocab_size == 0 || len == 0 {
            return Err(domain("vocabulary size and length must be positive"));
        }
        Ok(Self {
            vocab_size,
            len,
            conditional: Arc::new(conditional),
        })
    }

    /// Context-free conditionals: position `l` always uses `positions[l]`.
    pub fn from_positions(positions: Vec<Categorical>) -> Result<Self> {
        let vocab_size = positions
            .first()
            .ok_or_else(|| domain("at least one position is required"))?
            .vocab_size();
        if positions.iter().any(|c| c.vocab_size() != vocab_size) {
            return Err(domain("all positions must share one vocabulary"));
        }
        let len = positions.len();
        Self::from_fn(vocab_size, len, move |ctx| positions[ctx.len()].clone())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Next-token distribution after `context`.
    pub fn conditional(&self, context: &[usize]) -> Categorical {
        debug_assert!(context.len() < self.len);
        (self.conditional)(context)
    }

    /// Tempers every conditional independently.
    pub fn tempered(&self, t: f64) -> Result<Self> {
        // validate eagerly so the closure cannot fail later
        temper(&Categorical::uniform(1)?, t)?;
        if t == 1.0 {
            return Ok(self.clone());
        }
        let inner = Arc::clone(&self.conditional);
        Self::from_fn(self.vocab_size, self.len, move |ctx| {
            temper(&inner(ctx), t).expect("temperature validated")
        })
    }

    /// Probability of a complete sequence.
    pub fn seq_prob(&self, x: &[usize]) -> Result<f64> {
        if x.len() != self.len {
            return Err(domain(format!(
                "sequence has length {}, distribution has length {}",
                x.len(),
                self.len
            )));
        }
        if let Some(&bad) = x.iter().find(|&&tok| tok >= self.vocab_size) {
            return Err(domain(format!("token {bad} out of range for V = {}", self.vocab_size)));
        }
        let mut prob = 1.0;
        for l in 0..self.len {
            prob *= self.conditional(&x[..l]).prob(x[l]);
            if prob == 0.0 {
                break;
            }
        }
        Ok(prob)
    }
}

/// Per-context logit vectors for every prefix of length `< L` of a
/// `V`-token vocabulary, i.e. a fully general autoregressive model small
/// enough to tabulate.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    vocab_size: usize,
    len: usize,
    // indexed by prefix id: offset(len(ctx)) + base-V value of ctx
    logits: Vec<Vec<f64>>,
}

impl LogitTable {
    /// Number of contexts for the given shape: `sum_{l < L} V^l`.
    pub fn context_count(vocab_size: usize, len: usize) -> usize {
        (0..len).map(|l| vocab_size.pow(l as u32)).sum()
    }

    pub fn new(vocab_size: usize, len: usize, logits: Vec<Vec<f64>>) -> Result<Self> {
        if vocab_size == 0 || len == 0 {
            return Err(domain("vocabulary size and length must be positive"));
        }
        if logits.len() != Self::context_count(vocab_size, len) {
            return Err(domain(format!(
                "expected {} contexts, got {}",
                Self::context_count(vocab_size, len),
                logits.len()
            )));
        }
        if logits
            .iter()
            .any(|z| z.len() != vocab_size || z.iter().any(|v| !v.is_finite()))
        {
            return Err(domain("every context needs V finite logits"));
        }
        Ok(Self {
            vocab_size,
            len,
            logits,
        })
    }

    /// Independent `N(0, scale^2)` logits for every context.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, len: usize, scale: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, scale).expect("valid scale");
        let logits = (0..Self::context_count(vocab_size, len))
            .map(|_| (0..vocab_size).map(|_| normal.sample(rng)).collect())
            .collect();
        Self {
            vocab_size,
            len,
            logits,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All logit vectors, one per context.
    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    fn index(vocab_size: usize, ctx: &[usize]) -> usize {
        let offset: usize = (0..ctx.len()).map(|l| vocab_size.pow(l as u32)).sum();
        offset + ctx.iter().fold(0, |acc, &tok| acc * vocab_size + tok)
    }

    pub fn context_logits(&self, ctx: &[usize]) -> &[f64] {
        &self.logits[Self::index(self.vocab_size, ctx)]
    }

    /// The softmax model at temperature `t`, i.e. `softmax(logits / t)`.
    pub fn to_dist(&self, t: f64) -> Result<FactorizedSeqDist> {
        if !t.is_finite() || t <= 0.0 {
            return Err(domain(format!("temperature must be positive and finite, got {t}")));
        }
        let table = self.clone();
        FactorizedSeqDist::from_fn(self.vocab_size, self.len, move |ctx| {
            let z: Vec<f64> = table.context_logits(ctx).iter().map(|v| v / t).collect();
            Categorical::from_logits(&z).expect("finite logits")
        })
    }
}
