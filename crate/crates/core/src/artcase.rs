//! A two-defect model with a closed-form PR-curve under temperature.
//!
//! The reference `P` is uniform over the first `K` of `V` tokens at every
//! position. The model `Q` matches it except at two positions: at `l1` the
//! first `ρK` tokens carry total mass `a` and the next `(1-ρ)K` carry `1-a`;
//! at `l2` a mass `ε` leaks uniformly onto the `V-K` tokens outside the
//! support. Tempering each conditional by `t` keeps this structure, so on
//! `Supp P` the likelihood ratio `Q^t/P` takes only two values,
//! `λ_max = A_t F_t / ρ` and `λ_min = (1-A_t) F_t / (1-ρ)`, where `A_t` is the
//! tempered over-represented mass at `l1` and `F_t` the tempered in-support
//! mass at `l2`. Hence
//!
//! ```text
//! α_λ = ρ min(λ, λ_max) + (1-ρ) min(λ, λ_min),   β_λ = α_λ / λ.
//! ```

use serde::{Deserialize, Serialize};

use crate::dist::{Categorical, FactorizedSeqDist};
use crate::error::{domain, Result};
use crate::prmetrics::{self, PRPoint};

const INTEGRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtCaseParams {
    pub vocab_size: usize,
    /// Support size of every reference conditional.
    pub k: usize,
    pub len: usize,
    /// 1-based position of the over/under-representation defect.
    pub l1: usize,
    /// 1-based position of the off-support noise.
    pub l2: usize,
    pub rho: f64,
    pub a: f64,
    pub epsilon: f64,
}

fn as_count(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() <= INTEGRAL_TOL && r >= 1.0).then_some(r as usize)
}

impl ArtCaseParams {
    pub fn validate(&self) -> Result<()> {
        let Self { vocab_size: v, k, len, l1, l2, rho, a, epsilon } = *self;
        if k == 0 || k > v {
            return Err(domain(format!("need 1 <= K <= V, got K={k} V={v}")));
        }
        if len < 2 || l1 == l2 || !(1..=len).contains(&l1) || !(1..=len).contains(&l2) {
            return Err(domain(format!("l1={l1} and l2={l2} must be distinct positions in [1, {len}]")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(domain(format!("rho must lie in (0, 1), got {rho}")));
        }
        if as_count(rho * k as f64).is_none() || as_count((1.0 - rho) * k as f64).is_none() {
            return Err(domain(format!("rho*K and (1-rho)*K must be positive integers, got rho={rho} K={k}")));
        }
        if !(a >= rho && a <= 1.0) {
            return Err(domain(format!("a must lie in [rho, 1] = [{rho}, 1], got {a}")));
        }
        if !(0.0..=0.5).contains(&epsilon) {
            return Err(domain(format!("epsilon must lie in [0, 1/2], got {epsilon}")));
        }
        if epsilon > 0.0 && k == v {
            return Err(domain("epsilon > 0 needs tokens outside the support (K < V)"));
        }
        Ok(())
    }

    /// `b = μ(1-a)` with `μ = ρ/(1-ρ)`; an under-represented token has
    /// probability `b/(ρK)`.
    pub fn b(&self) -> f64 {
        self.rho / (1.0 - self.rho) * (1.0 - self.a)
    }

    fn over_count(&self) -> usize {
        as_count(self.rho * self.k as f64).expect("validated")
    }
}

/// Uniform over tokens `0..K` at every position.
pub fn build_p(params: &ArtCaseParams) -> Result<FactorizedSeqDist> {
    params.validate()?;
    let mut w = vec![0.0; params.vocab_size];
    w[..params.k].fill(1.0);
    let c = Categorical::from_weights(w)?;
    FactorizedSeqDist::from_positions(vec![c; params.len])
}

/// The untempered two-defect model.
pub fn build_q(params: &ArtCaseParams) -> Result<FactorizedSeqDist> {
    params.validate()?;
    let (v, k) = (params.vocab_size, params.k);
    let n_over = params.over_count();
    let mut uniform = vec![0.0; v];
    uniform[..k].fill(1.0 / k as f64);
    let mut skewed = vec![0.0; v];
    skewed[..n_over].fill(params.a / n_over as f64);
    skewed[n_over..k].fill(params.b() / n_over as f64);
    let mut noisy = vec![0.0; v];
    noisy[..k].fill((1.0 - params.epsilon) / k as f64);
    if k < v {
        noisy[k..].fill(params.epsilon / (v - k) as f64);
    }
    let positions = (1..=params.len)
        .map(|l| {
            let w = if l == params.l1 {
                skewed.clone()
            } else if l == params.l2 {
                noisy.clone()
            } else {
                uniform.clone()
            };
            Categorical::from_weights(w)
        })
        .collect::<Result<Vec<_>>>()?;
    FactorizedSeqDist::from_positions(positions)
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("temperature must be positive and finite, got {t}")));
    }
    Ok(())
}

/// `1 / (1 + e^x)` and `1 / (1 + e^-x)`, each without cancellation.
fn logistic_pair(x: f64) -> (f64, f64) {
    let lo = 1.0 / (1.0 + x.exp());
    let hi = 1.0 / (1.0 + (-x).exp());
    (lo, hi)
}

/// Tempered mass of the first `ρK` tokens at `l1`, and its complement.
fn over_mass(params: &ArtCaseParams, t: f64) -> (f64, f64) {
    let tau = 1.0 / t;
    let (rho, a) = (params.rho, params.a);
    if a == 1.0 {
        return (1.0, 0.0);
    }
    // log weight of the under group minus that of the over group
    let x = (1.0 - tau) * ((1.0 - rho).ln() - rho.ln()) + tau * ((1.0 - a).ln() - a.ln());
    logistic_pair(x)
}

/// Tempered in-support mass at `l2`:
/// `f_ε(t) = (1-ε)^τ / ((1-ε)^τ + (V/K-1)^{1-τ} ε^τ)`.
pub fn high_lambda_alpha(params: &ArtCaseParams, t: f64) -> Result<f64> {
    params.validate()?;
    check_t(t)?;
    Ok(support_mass(params, t))
}

fn support_mass(params: &ArtCaseParams, t: f64) -> f64 {
    let eps = params.epsilon;
    if eps == 0.0 || params.k == params.vocab_size {
        return 1.0;
    }
    let tau = 1.0 / t;
    let r = params.vocab_size as f64 / params.k as f64 - 1.0;
    let x = (1.0 - tau) * r.ln() + tau * (eps.ln() - (1.0 - eps).ln());
    logistic_pair(x).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeBoundaries {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub t: f64,
    /// `a = 1`: the under-represented tokens carry no mass and `λ_min = 0`.
    pub degenerate: bool,
}

/// `λ_min` and `λ_max` at temperature `t`.
pub fn regime_boundaries(params: &ArtCaseParams, t: f64) -> Result<RegimeBoundaries> {
    params.validate()?;
    check_t(t)?;
    let (over, under) = over_mass(params, t);
    let f = support_mass(params, t);
    Ok(RegimeBoundaries {
        lambda_min: under * f / (1.0 - params.rho),
        lambda_max: over * f / params.rho,
        t,
        degenerate: params.a == 1.0,
    })
}

/// The PR point at temperature `t` and trade-off `λ > 0`.
pub fn pr_closed_form(params: &ArtCaseParams, t: f64, lambda: f64) -> Result<PRPoint> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be positive and finite, got {lambda}")));
    }
    let r = regime_boundaries(params, t)?;
    let alpha = if lambda <= r.lambda_min {
        lambda
    } else if lambda <= r.lambda_max {
        params.rho * lambda + (1.0 - params.rho) * r.lambda_min
    } else {
        params.rho * r.lambda_max + (1.0 - params.rho) * r.lambda_min
    };
    let beta = if lambda <= r.lambda_min { 1.0 } else { alpha / lambda };
    Ok(PRPoint { lambda, alpha, beta })
}

/// The same point by exhaustive enumeration of `P` and the tempered `Q`.
pub fn pr_enumerated(params: &ArtCaseParams, t: f64, lambdas: &[f64]) -> Result<Vec<PRPoint>> {
    check_t(t)?;
    let p = build_p(params)?;
    let q = build_q(params)?.tempered(t)?;
    Ok(prmetrics::pr_curve_exact(&p, &q, lambdas)?.points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilon0 {
    pub value: f64,
    /// `b = 0`: the threshold is reported as 0.
    pub degenerate: bool,
}

/// Noise level separating the two large-temperature behaviours of `λ_min`:
/// below it `λ_min(t)` eventually decreases in `t`, above it it eventually
/// increases. `ε₀ = (V/K-1) / (V/K-1 + (a/b)^{ρ/(1-K/V)})`.
pub fn epsilon0(params: &ArtCaseParams) -> Result<Epsilon0> {
    params.validate()?;
    let b = params.b();
    if b == 0.0 {
        return Ok(Epsilon0 { value: 0.0, degenerate: true });
    }
    let kv = params.k as f64 / params.vocab_size as f64;
    let r = 1.0 / kv - 1.0;
    let c = (params.a / b).powf(params.rho / (1.0 - kv));
    Ok(Epsilon0 { value: r / (r + c), degenerate: false })
}

/// `β_λ` along an ascending temperature grid.
pub fn recall_vs_temperature(params: &ArtCaseParams, lambda: f64, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain("t_grid must be strictly ascending"));
    }
    t_grid
        .iter()
        .map(|&t| Ok((t, pr_closed_form(params, t, lambda)?.beta)))
        .collect()
}

/// Central-difference slope of `λ_min` in `t`.
pub fn lambda_min_slope(params: &ArtCaseParams, t: f64) -> Result<f64> {
    let h = 1e-3 * t;
    let up = regime_boundaries(params, t + h)?.lambda_min;
    let down = regime_boundaries(params, t - h)?.lambda_min;
    Ok((up - down) / (2.0 * h))
}

/// Smallest `t₀ ≥ 1` (to relative precision `1e-9`) such that
/// `β_λ(t) < β_λ(1)` for every sampled `t` in `[t₀, t_max]`. The scan uses a
/// geometric grid of `steps` points; the crossing is then refined by
/// bisection. `None` when `β_λ(t_max) ≥ β_λ(1)`.
pub fn find_t0(params: &ArtCaseParams, lambda: f64, t_max: f64, steps: usize) -> Result<Option<f64>> {
    if !(t_max > 1.0) || steps < 2 {
        return Err(domain("need t_max > 1 and at least two grid steps"));
    }
    let beta = |t: f64| pr_closed_form(params, t, lambda).map(|p| p.beta);
    let base = beta(1.0)?;
    let grid: Vec<f64> = (0..steps).map(|i| t_max.powf(i as f64 / (steps - 1) as f64)).collect();
    let mut last_bad = None;
    for (i, &t) in grid.iter().enumerate().skip(1) {
        if beta(t)? >= base {
            last_bad = Some(i);
        }
    }
    let (mut lo, mut hi) = match last_bad {
        Some(i) if i == steps - 1 => return Ok(None),
        Some(i) => (grid[i], grid[i + 1]),
        None => (1.0, grid[1]),
    };
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if beta(mid)? >= base {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(hi))
}
