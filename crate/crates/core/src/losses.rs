//! Per-token weights for the reweighted negative log-likelihood family.
//!
//! Every method trains with the same objective,
//! `-mean_batch sum_l w(x, l) log Q(x_l | x_<l)`, and differs only in how the
//! detached weights `w` are computed from the model's own probabilities:
//!
//! | method     | weight                                                     |
//! |------------|------------------------------------------------------------|
//! | `Nll`      | 1                                                          |
//! | `Trunc`    | `1{log Q(x) >= delta}`, delta the top `1 - Δ` quantile     |
//! | `TruncR`   | `1{log Q(x) <= delta}`, delta the bottom `1 - Δ` quantile  |
//! | `CDiv`     | `q^(1 - α)` (α = 0.5 is GOLD, α = 1 is NLL)                |
//! | `TaiLr`    | `q / (γ + (1 - γ) q)`                                      |
//! | `LambdaPr` | `λ^((l-1)/L) 1{q <= δ} q / (γ + (1 - γ) q)`                |

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Probability floor inside the weight formulas.
pub const Q_FLOOR: f64 = 1e-12;

/// Default capacity of the rolling log-likelihood buffer.
pub const DEFAULT_BUFFER_CAPACITY: usize = 2048;

/// Fraction of the buffer that must be filled before quantile gating starts.
pub const WARMUP_FILL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMethod {
    #[serde(rename = "nll")]
    Nll,
    #[serde(rename = "trunc")]
    Trunc,
    #[serde(rename = "truncr")]
    TruncR,
    #[serde(rename = "cdiv")]
    CDiv,
    #[serde(rename = "tailr")]
    TaiLr,
    #[serde(rename = "lambda-pr")]
    LambdaPr,
}

impl LossMethod {
    pub const ALL: [LossMethod; 6] = [
        LossMethod::Nll,
        LossMethod::Trunc,
        LossMethod::TruncR,
        LossMethod::CDiv,
        LossMethod::TaiLr,
        LossMethod::LambdaPr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMethod::Nll => "nll",
            LossMethod::Trunc => "trunc",
            LossMethod::TruncR => "truncr",
            LossMethod::CDiv => "cdiv",
            LossMethod::TaiLr => "tailr",
            LossMethod::LambdaPr => "lambda-pr",
        }
    }
}

impl fmt::Display for LossMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| domain(format!("unknown loss method {s:?}")))
    }
}

/// A loss method with its hyperparameters. Only the fields relevant to the
/// method are read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub method: LossMethod,
    /// Δ, the fraction of sequences dropped by `Trunc`/`TruncR`.
    #[serde(default = "defaults::delta_frac")]
    pub delta_frac: f64,
    /// Order of the conditional Tsallis divergence.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Mixing weight of the one-hot proxy.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Target trade-off for `LambdaPr`.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// Capacity of the rolling buffer for quantile thresholds.
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
}

mod defaults {
    pub fn delta_frac() -> f64 {
        0.25
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn gamma() -> f64 {
        1e-5
    }
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn buffer_capacity() -> usize {
        super::DEFAULT_BUFFER_CAPACITY
    }
}

impl LossSpec {
    pub fn new(method: LossMethod) -> Self {
        Self {
            method,
            delta_frac: defaults::delta_frac(),
            alpha: defaults::alpha(),
            gamma: defaults::gamma(),
            lambda: defaults::lambda(),
            buffer_capacity: defaults::buffer_capacity(),
        }
    }

    pub fn nll() -> Self {
        Self::new(LossMethod::Nll)
    }

    pub fn trunc(delta_frac: f64) -> Self {
        Self {
            delta_frac,
            ..Self::new(LossMethod::Trunc)
        }
    }

    pub fn truncr(delta_frac: f64) -> Self {
        Self {
            delta_frac,
            ..Self::new(LossMethod::TruncR)
        }
    }

    pub fn cdiv(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::new(LossMethod::CDiv)
        }
    }

    pub fn tailr(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::new(LossMethod::TaiLr)
        }
    }

    pub fn lambda_pr(gamma: f64, lambda: f64) -> Self {
        Self {
            gamma,
            lambda,
            ..Self::new(LossMethod::LambdaPr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            LossMethod::Nll => {}
            LossMethod::Trunc | LossMethod::TruncR => {
                if !(self.delta_frac > 0.0 && self.delta_frac < 1.0) {
                    return Err(domain(format!("delta_frac must lie in (0, 1), got {}", self.delta_frac)));
                }
                if self.buffer_capacity == 0 {
                    return Err(domain("buffer_capacity must be positive"));
                }
            }
            LossMethod::CDiv => {
                if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                    return Err(domain(format!("alpha must be positive, got {}", self.alpha)));
                }
            }
            LossMethod::TaiLr => {
                if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                    return Err(domain(format!("gamma must lie in (0, 1], got {}", self.gamma)));
                }
            }
            LossMethod::LambdaPr => {
                if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                    return Err(domain(format!("gamma must lie in (0, 1], got {}", self.gamma)));
                }
                if !(self.lambda > 0.0 && self.lambda <= 1.0) {
                    return Err(domain(format!("lambda must lie in (0, 1], got {}", self.lambda)));
                }
            }
        }
        Ok(())
    }

    /// Short `key=value` rendering of the hyperparameters the method reads.
    pub fn params_label(&self) -> String {
        match self.method {
            LossMethod::Nll => String::new(),
            LossMethod::Trunc | LossMethod::TruncR => format!("delta={}", self.delta_frac),
            LossMethod::CDiv => format!("alpha={}", self.alpha),
            LossMethod::TaiLr => format!("gamma={}", self.gamma),
            LossMethod::LambdaPr => format!("gamma={};lambda={}", self.gamma, self.lambda),
        }
    }
}

/// Which end of the buffer a quantile threshold selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Highest,
    Lowest,
}

/// Rolling window of sequence log-likelihoods (nats), oldest evicted first.
#[derive(Debug, Clone)]
pub struct QuantileBuffer {
    capacity: usize,
    entries: VecDeque<f64>,
}

impl QuantileBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, loglik: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(loglik);
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().copied()
    }

    /// The threshold that selects a fraction `frac` of the buffered values
    /// from the requested side: the order statistic at 1-based rank
    /// `ceil(frac * n)` counted from that side.
    pub fn quantile_threshold(&self, frac: f64, side: Side) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::State("quantile of an empty buffer".into()));
        }
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(domain(format!("quantile fraction must lie in (0, 1], got {frac}")));
        }
        let mut sorted: Vec<f64> = self.entries.iter().copied().collect();
        match side {
            Side::Highest => sorted.sort_by(|a, b| b.total_cmp(a)),
            Side::Lowest => sorted.sort_by(|a, b| a.total_cmp(b)),
        }
        let n = sorted.len();
        let rank = ((frac * n as f64).ceil() as usize).clamp(1, n);
        Ok(sorted[rank - 1])
    }
}

/// `Trunc`: keep the sequence iff its log-likelihood reaches the threshold.
pub fn weights_trunc(seq_loglik: f64, delta_thresh: f64) -> f64 {
    if seq_loglik >= delta_thresh {
        1.0
    } else {
        0.0
    }
}

/// `TruncR`: keep the sequence iff its log-likelihood is at most the threshold.
pub fn weights_truncr(seq_loglik: f64, delta_thresh: f64) -> f64 {
    if seq_loglik <= delta_thresh {
        1.0
    } else {
        0.0
    }
}

/// A weight together with whether the probability floor was involved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlaggedWeight {
    pub value: f64,
    pub floored: bool,
}

/// `c-Div`: `q^(1 - α)`.
///
/// Below [`Q_FLOOR`] the weight is 0 for `α < 1` and `Q_FLOOR^(1 - α)` for
/// `α > 1`; both cases are flagged.
pub fn weights_cdiv_flagged(token_prob: f64, alpha: f64) -> FlaggedWeight {
    if alpha == 1.0 {
        return FlaggedWeight {
            value: 1.0,
            floored: false,
        };
    }
    if token_prob < Q_FLOOR {
        let value = if alpha < 1.0 {
            0.0
        } else {
            Q_FLOOR.powf(1.0 - alpha)
        };
        return FlaggedWeight {
            value,
            floored: true,
        };
    }
    FlaggedWeight {
        value: token_prob.powf(1.0 - alpha),
        floored: false,
    }
}

pub fn weights_cdiv(token_prob: f64, alpha: f64) -> f64 {
    weights_cdiv_flagged(token_prob, alpha).value
}

/// `TaiLr`: `q / (γ + (1 - γ) q)`.
pub fn weights_tailr(token_prob: f64, gamma: f64) -> f64 {
    token_prob / (gamma + (1.0 - gamma) * token_prob)
}

/// Likelihood cap `δ_{λ^(1/L)} = λ^(1/L) γ / (1 - (1 - γ) λ^(1/L))` of the
/// λ-PR weight.
pub fn lambda_pr_cap(gamma: f64, lambda: f64, seq_len: usize) -> f64 {
    let root = lambda.powf(1.0 / seq_len as f64);
    let denom = 1.0 - (1.0 - gamma) * root;
    assert!(
        denom > 0.0,
        "λ-PR cap denominator {denom} must be positive (γ = {gamma}, λ = {lambda})"
    );
    root * gamma / denom
}

/// `λ-PR` weight at 1-based position `l` of a length-`seq_len` sequence.
pub fn weights_lambda_pr(token_prob: f64, gamma: f64, lambda: f64, l: usize, seq_len: usize) -> f64 {
    debug_assert!((1..=seq_len).contains(&l));
    if token_prob > lambda_pr_cap(gamma, lambda, seq_len) {
        return 0.0;
    }
    let discount = lambda.powf((l - 1) as f64 / seq_len as f64);
    discount * weights_tailr(token_prob, gamma)
}

/// Detached per-token weights, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeights {
    rows: Vec<Vec<f64>>,
}

impl TokenWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().flatten().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(domain("token weights must be finite and non-negative"));
        }
        Ok(Self { rows })
    }

    pub fn ones(batch: usize, len: usize) -> Self {
        Self {
            rows: vec![vec![1.0; len]; batch],
        }
    }

    pub fn zeros(batch: usize, len: usize) -> Self {
        Self {
            rows: vec![vec![0.0; len]; batch],
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn batch_size(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, seq: usize, pos: usize) -> f64 {
        self.rows[seq][pos]
    }

    pub fn mean(&self) -> f64 {
        let n: usize = self.rows.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.rows.iter().flatten().sum::<f64>() / n as f64
    }

    /// Element-wise sum, used to check linearity of gradients in the weights.
    pub fn add(&self, other: &TokenWeights) -> Result<TokenWeights> {
        if self.rows.len() != other.rows.len()
            || self.rows.iter().zip(&other.rows).any(|(a, b)| a.len() != b.len())
        {
            return Err(domain("token weight shapes differ"));
        }
        Ok(TokenWeights {
            rows: self
                .rows
                .iter()
                .zip(&other.rows)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }
}

/// `-(1/B) sum_b sum_l w[b][l] * logprobs[b][l]`: mean over the batch of the
/// per-sequence weighted sums.
pub fn weighted_nll(logprobs: &[Vec<f64>], weights: &TokenWeights) -> Result<f64> {
    if logprobs.len() != weights.rows.len()
        || logprobs
            .iter()
            .zip(&weights.rows)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(domain("log-probability and weight shapes differ"));
    }
    if logprobs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logprobs
        .iter()
        .zip(&weights.rows)
        .map(|(lp, w)| {
            lp.iter()
                .zip(w)
                .filter(|(_, &w)| w != 0.0)
                .map(|(l, w)| w * l)
                .sum::<f64>()
        })
        .sum();
    Ok(-total / logprobs.len() as f64)
}

/// Summary of one weight computation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightStats {
    pub mean_weight: f64,
    /// Fraction of sequences with at least one non-zero weight.
    pub kept_fraction: f64,
    /// Number of tokens whose probability fell under [`Q_FLOOR`].
    pub floor_hits: usize,
    /// Whether quantile gating was active (false during buffer warm-up).
    pub gated: bool,
}

/// Computes per-token weights from detached token probabilities and the
/// rolling buffer. For `Trunc`/`TruncR` the batch's sequence log-likelihoods
/// are pushed into `buffer` before the threshold is read.
pub fn compute_weights(
    spec: &LossSpec,
    token_probs: &[Vec<f64>],
    buffer: &mut QuantileBuffer,
) -> Result<(TokenWeights, WeightStats)> {
    let mut floor_hits = 0;
    let mut gated = false;
    let rows: Vec<Vec<f64>> = match spec.method {
        LossMethod::Nll => token_probs.iter().map(|r| vec![1.0; r.len()]).collect(),
        LossMethod::Trunc | LossMethod::TruncR => {
            let logliks: Vec<f64> = token_probs
                .iter()
                .map(|r| r.iter().map(|q| q.max(f64::MIN_POSITIVE).ln()).sum())
                .collect();
            buffer.extend(logliks.iter().copied());
            if (buffer.len() as f64) < WARMUP_FILL * buffer.capacity() as f64 {
                token_probs.iter().map(|r| vec![1.0; r.len()]).collect()
            } else {
                gated = true;
                let keep = 1.0 - spec.delta_frac;
                let (thresh, rule): (f64, fn(f64, f64) -> f64) = if spec.method == LossMethod::Trunc {
                    (buffer.quantile_threshold(keep, Side::Highest)?, weights_trunc)
                } else {
                    (buffer.quantile_threshold(keep, Side::Lowest)?, weights_truncr)
                };
                token_probs
                    .iter()
                    .zip(&logliks)
                    .map(|(r, &ll)| vec![rule(ll, thresh); r.len()])
                    .collect()
            }
        }
        LossMethod::CDiv => token_probs
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&q| {
                        let w = weights_cdiv_flagged(q, spec.alpha);
                        floor_hits += usize::from(w.floored);
                        w.value
                    })
                    .collect()
            })
            .collect(),
        LossMethod::TaiLr => token_probs
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&q| {
                        floor_hits += usize::from(q < Q_FLOOR);
                        weights_tailr(q.max(Q_FLOOR), spec.gamma)
                    })
                    .collect()
            })
            .collect(),
        LossMethod::LambdaPr => token_probs
            .iter()
            .map(|r| {
                let len = r.len();
                r.iter()
                    .enumerate()
                    .map(|(i, &q)| {
                        floor_hits += usize::from(q < Q_FLOOR);
                        weights_lambda_pr(q.max(Q_FLOOR), spec.gamma, spec.lambda, i + 1, len)
                    })
                    .collect()
            })
            .collect(),
    };
    if floor_hits > 0 {
        log::debug!("{floor_hits} token probabilities hit the floor {Q_FLOOR}");
    }
    let weights = TokenWeights::new(rows)?;
    let kept = weights
        .rows
        .iter()
        .filter(|r| r.iter().any(|&w| w > 0.0))
        .count();
    let stats = WeightStats {
        mean_weight: weights.mean(),
        kept_fraction: if weights.rows.is_empty() {
            0.0
        } else {
            kept as f64 / weights.rows.len() as f64
        },
        floor_hits,
        gated,
    };
    Ok((weights, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn buffer_of(values: &[f64]) -> QuantileBuffer {
        let mut b = QuantileBuffer::new(values.len().max(1));
        b.extend(values.iter().copied());
        b
    }

    #[test]
    fn quantile_examples() {
        let b = buffer_of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.quantile_threshold(0.5, Side::Highest).unwrap(), 3.0);
        assert_eq!(b.quantile_threshold(0.5, Side::Lowest).unwrap(), 2.0);
        assert_eq!(b.quantile_threshold(1.0, Side::Highest).unwrap(), 1.0);
        assert_eq!(b.quantile_threshold(0.999, Side::Highest).unwrap(), 1.0);
        let flat = buffer_of(&[-2.5; 7]);
        for frac in [0.1, 0.5, 0.9] {
            assert_eq!(flat.quantile_threshold(frac, Side::Highest).unwrap(), -2.5);
        }
    }

    #[test]
    fn quantile_of_empty_buffer_is_a_state_error() {
        let b = QuantileBuffer::new(4);
        assert!(matches!(b.quantile_threshold(0.5, Side::Lowest), Err(Error::State(_))));
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = QuantileBuffer::new(3);
        b.extend([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.values().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn trunc_boundaries() {
        assert_eq!(weights_trunc(-3.0, -3.0), 1.0);
        assert_eq!(weights_trunc(-3.0 - 1e-9, -3.0), 0.0);
        assert_eq!(weights_truncr(-3.0, -3.0), 1.0);
        assert_eq!(weights_truncr(-2.0, -3.0), 0.0);
    }

    #[test]
    fn trunc_keeps_one_minus_delta_of_the_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..2048).map(|_| -rng.gen::<f64>() * 20.0).collect();
        let b = buffer_of(&values);
        for delta in [0.1, 0.25, 0.5] {
            let hi = b.quantile_threshold(1.0 - delta, Side::Highest).unwrap();
            let kept = values.iter().filter(|&&v| weights_trunc(v, hi) == 1.0).count();
            let frac = kept as f64 / values.len() as f64;
            assert!((frac - (1.0 - delta)).abs() <= 1.0 / values.len() as f64, "{frac}");
            let lo = b.quantile_threshold(1.0 - delta, Side::Lowest).unwrap();
            let kept = values.iter().filter(|&&v| weights_truncr(v, lo) == 1.0).count();
            let frac = kept as f64 / values.len() as f64;
            assert!((frac - (1.0 - delta)).abs() <= 1.0 / values.len() as f64, "{frac}");
        }
    }

    #[test]
    fn trunc_and_truncr_partition_at_a_shared_threshold() {
        // tie-free buffer; a threshold strictly between two values
        let values: Vec<f64> = (0..100).map(|i| -(i as f64) - 0.5).collect();
        let thresh = -40.0;
        for v in &values {
            let a = weights_trunc(*v, thresh);
            let b = weights_truncr(*v, thresh);
            assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn cdiv_examples() {
        for q in [1e-6, 0.1, 0.5, 1.0] {
            assert_eq!(weights_cdiv(q, 1.0), 1.0);
        }
        assert_abs_diff_eq!(weights_cdiv(0.25, 0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(weights_cdiv(0.25, 1.4), 1.741_101_126_592_248, epsilon = 1e-12);
    }

    #[test]
    fn cdiv_floor_behaviour() {
        let low = weights_cdiv_flagged(0.0, 0.5);
        assert_eq!(low, FlaggedWeight { value: 0.0, floored: true });
        let high = weights_cdiv_flagged(0.0, 1.4);
        assert!(high.floored);
        assert_abs_diff_eq!(high.value, Q_FLOOR.powf(-0.4), epsilon = 1e-6);
        assert!(high.value.is_finite());
    }

    #[test]
    fn tailr_examples() {
        assert_abs_diff_eq!(weights_tailr(0.37, 1.0), 0.37, epsilon = 1e-15);
        for g in [1e-5, 0.3, 1.0] {
            assert_abs_diff_eq!(weights_tailr(1.0, g), 1.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(weights_tailr(0.5, 1e-5), 0.999_990_000_099_998_9, epsilon = 1e-12);
    }

    #[test]
    fn lambda_pr_examples() {
        for q in [1e-4, 0.2, 0.9] {
            for l in 1..=4 {
                assert_abs_diff_eq!(
                    weights_lambda_pr(q, 0.01, 1.0, l, 4),
                    weights_tailr(q, 0.01),
                    epsilon = 1e-15
                );
            }
        }
        assert_abs_diff_eq!(lambda_pr_cap(0.01, 1.0, 4), 1.0, epsilon = 1e-15);
        // cap is ~4.62e-6, so q = 0.5 is gated out
        assert_eq!(weights_lambda_pr(0.5, 1e-5, 0.1, 2, 2), 0.0);
        assert_abs_diff_eq!(lambda_pr_cap(1e-5, 0.1, 2), 4.624_731_567_501_658e-6, epsilon = 1e-15);
        assert_abs_diff_eq!(
            weights_lambda_pr(1e-6, 1e-5, 0.1, 2, 2),
            0.028_748_004_863_353_32,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weighted_nll_examples() {
        let lp = vec![vec![-1.0, -2.0], vec![-0.5, -0.25]];
        assert_abs_diff_eq!(
            weighted_nll(&lp, &TokenWeights::ones(2, 2)).unwrap(),
            (3.0 + 0.75) / 2.0,
            epsilon = 1e-15
        );
        assert_eq!(weighted_nll(&lp, &TokenWeights::zeros(2, 2)).unwrap(), 0.0);
        assert!(weighted_nll(&lp, &TokenWeights::ones(2, 3)).is_err());
    }

    #[test]
    fn compute_weights_nll_is_all_ones() {
        let probs = vec![vec![0.1, 0.9, 0.5]; 3];
        let mut buf = QuantileBuffer::new(8);
        let (w, stats) = compute_weights(&LossSpec::nll(), &probs, &mut buf).unwrap();
        assert_eq!(w, TokenWeights::ones(3, 3));
        assert_eq!(stats.kept_fraction, 1.0);
        assert!(buf.is_empty());
    }

    #[test]
    fn compute_weights_trunc_waits_for_warmup_then_gates_whole_sequences() {
        let spec = LossSpec {
            buffer_capacity: 16,
            ..LossSpec::trunc(0.5)
        };
        let mut buf = QuantileBuffer::new(spec.buffer_capacity);
        let probs: Vec<Vec<f64>> = (1..=2).map(|i| vec![0.1 * i as f64; 3]).collect();
        let (w, stats) = compute_weights(&spec, &probs, &mut buf).unwrap();
        assert!(!stats.gated);
        assert_eq!(w, TokenWeights::ones(2, 3));

        let probs: Vec<Vec<f64>> = (1..=4).map(|i| vec![0.2 * i as f64; 3]).collect();
        let (w, stats) = compute_weights(&spec, &probs, &mut buf).unwrap();
        assert!(stats.gated);
        for row in w.rows() {
            assert!(row.iter().all(|&x| x == row[0]));
        }
        // the two most likely sequences of this batch sit in the buffer's top half
        assert_eq!(w.rows()[3][0], 1.0);
        assert_eq!(w.rows()[0][0], 0.0);
    }

    #[test]
    fn compute_weights_lambda_pr_at_one_matches_tailr() {
        let probs = vec![vec![0.01, 0.3, 0.99]];
        let mut buf = QuantileBuffer::new(4);
        let (a, _) = compute_weights(&LossSpec::lambda_pr(0.2, 1.0), &probs, &mut buf).unwrap();
        let (b, _) = compute_weights(&LossSpec::tailr(0.2), &probs, &mut buf).unwrap();
        for (x, y) in a.rows()[0].iter().zip(&b.rows()[0]) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::lambda_pr(1e-5, 1.5).validate().is_err());
        assert!(LossSpec::lambda_pr(0.0, 0.5).validate().is_err());
        assert!(LossSpec::trunc(1.0).validate().is_err());
        assert!(LossSpec::cdiv(-1.0).validate().is_err());
        assert!(LossSpec::cdiv(1.4).validate().is_ok());
        assert_eq!("lambda-pr".parse::<LossMethod>().unwrap(), LossMethod::LambdaPr);
        assert!("gold".parse::<LossMethod>().is_err());
    }

    proptest! {
        #[test]
        fn tailr_strictly_increasing(q1 in 1e-9f64..1.0, q2 in 1e-9f64..1.0, g in 1e-6f64..0.999) {
            prop_assume!((q1 - q2).abs() > 1e-9);
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(weights_tailr(lo, g) < weights_tailr(hi, g));
        }

        #[test]
        fn cdiv_monotone_by_order(q1 in 1e-6f64..1.0, q2 in 1e-6f64..1.0, alpha in 0.05f64..3.0) {
            prop_assume!((q1 - q2).abs() > 1e-6 && (alpha - 1.0).abs() > 1e-3);
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            let (wl, wh) = (weights_cdiv(lo, alpha), weights_cdiv(hi, alpha));
            if alpha < 1.0 { prop_assert!(wl < wh); } else { prop_assert!(wl > wh); }
        }
    }
}
