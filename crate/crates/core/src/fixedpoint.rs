//! Optimal single-context distributions of the reweighted losses, and the
//! projected-gradient machinery used to check them numerically.
//!
//! For a reference `P` over `V` tokens, the TaiLr loss with parameter `γ` is
//! minimized at `Q*(x) = (P(x)(1-γ+Vγ) - γ)/(1-γ)` whenever that vector is
//! positive. The TruncR loss with gated set `S` (the tokens whose model
//! probability lies below the threshold `δ`, of reference mass `1-Δ`) is
//! minimized, over the closure `Q_i ≤ δ ≤ Q_j` (`i ∈ S`, `j ∉ S`), by
//! `Q_i = min(δ, γP_i)` on `S` and `Q_j = δ` off it, with `γ = 1/(1-Δ)` and
//! `δ = γr` where `r = P(C)/(|S^c| + |C|)` for the capped set
//! `C = {i ∈ S : P_i ≥ r}`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Euclidean projection onto `{x : lo ≤ x ≤ hi, Σx = total}`, which must be
/// non-empty: `x_i = clamp(y_i - θ, lo_i, hi_i)` with `θ` found by bisection.
pub fn project_box_sum(y: &[f64], lo: &[f64], hi: &[f64], total: f64) -> Vec<f64> {
    let at = |theta: f64| -> Vec<f64> {
        y.iter()
            .zip(lo.iter().zip(hi))
            .map(|(&v, (&l, &h))| (v - theta).clamp(l, h))
            .collect()
    };
    let span = y.iter().map(|v| v.abs()).fold(0.0, f64::max) + hi.iter().map(|v| v.abs()).fold(0.0, f64::max) + 1.0;
    let (mut a, mut b) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if at(mid).iter().sum::<f64>() > total {
            a = mid;
        } else {
            b = mid;
        }
    }
    at(0.5 * (a + b))
}

fn check_dist(p: &[f64]) -> Result<()> {
    if p.len() < 2 || p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(domain("reference must be a probability vector over at least two tokens"));
    }
    Ok(())
}

/// Closed-form TaiLr optimum; fails when some entry would be non-positive.
pub fn tailr_optimum(p: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_dist(p)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let v = p.len() as f64;
    let q: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - gamma + v * gamma) - gamma) / (1.0 - gamma)).collect();
    if q.iter().any(|&x| x <= 0.0) {
        return Err(domain("the optimum is not interior: some P(x) <= γ/(1-γ+Vγ)"));
    }
    Ok(q)
}

/// Minimizes the detached-weight objective `-Σ P_i w(Q̄_i) log Q_i` over the
/// simplex by projected gradient descent on its semi-gradient
/// `-P_i w(Q_i)/Q_i`, starting from uniform. Entries are kept above `1e-12`.
pub fn pgd_weighted(p: &[f64], weight: impl Fn(f64) -> f64, step: f64, iters: usize) -> Vec<f64> {
    let n = p.len();
    let mut q = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let y: Vec<f64> = q
            .iter()
            .zip(p)
            .map(|(&qi, &pi)| qi + step * pi * weight(qi) / qi)
            .collect();
        q = project_simplex(&y).into_iter().map(|x| x.max(1e-12)).collect();
    }
    q
}

/// `-Σ_{i∈S} P_i log Q_i`.
pub fn truncr_objective(p: &[f64], gated: &[usize], q: &[f64]) -> f64 {
    -gated.iter().map(|&i| p[i] * q[i].ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncROptimum {
    pub q: Vec<f64>,
    pub delta: f64,
    pub gamma: f64,
    /// Tokens below the threshold, ascending.
    pub gated: Vec<usize>,
    pub objective: f64,
}

/// The TruncR optimum for a fixed gated set.
pub fn truncr_optimum_gated(p: &[f64], gated: &[usize]) -> Result<TruncROptimum> {
    check_dist(p)?;
    let n = p.len();
    let mut gated = gated.to_vec();
    gated.sort_unstable();
    gated.dedup();
    if gated.is_empty() || gated.len() >= n || gated.iter().any(|&i| i >= n) {
        return Err(domain("the gated set must be a non-empty proper subset of the tokens"));
    }
    let keep: f64 = gated.iter().map(|&i| p[i]).sum();
    if keep <= 0.0 {
        return Err(domain("the gated set needs positive reference mass"));
    }
    let m = (n - gated.len()) as f64;
    let gamma = 1.0 / keep;
    let mut order = gated.clone();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let mut best: Option<TruncROptimum> = None;
    let mut top = 0.0;
    for (c, &i) in order.iter().enumerate() {
        top += p[i];
        let r = top / (m + (c + 1) as f64);
        let delta = gamma * r;
        let mut q = vec![delta; n];
        for &j in &gated {
            q[j] = delta.min(gamma * p[j]);
        }
        if (q.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            continue;
        }
        let objective = truncr_objective(p, &gated, &q);
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(TruncROptimum { q, delta, gamma, gated: gated.clone(), objective });
        }
    }
    best.ok_or_else(|| domain("no consistent capped set found"))
}

/// The TruncR optimum over all gated sets whose reference mass is `keep`
/// (within `1e-12`).
pub fn truncr_optimum(p: &[f64], keep: f64) -> Result<TruncROptimum> {
    check_dist(p)?;
    let n = p.len();
    if n > 20 {
        return Err(domain("gated-set enumeration is limited to 20 tokens"));
    }
    let mut best: Option<TruncROptimum> = None;
    for mask in 1u32..(1 << n) - 1 {
        let s: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let mass: f64 = s.iter().map(|&i| p[i]).sum();
        if (mass - keep).abs() > 1e-12 {
            continue;
        }
        let cand = truncr_optimum_gated(p, &s)?;
        if best.as_ref().map_or(true, |b| cand.objective < b.objective) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| domain(format!("no set of tokens has reference mass {keep}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::weights_tailr;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let x = project_simplex(&[0.5, 0.5, 0.5]);
        for v in x {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn projections_are_feasible_and_idempotent(y in proptest::collection::vec(-3.0f64..3.0, 2..8)) {
            let x = project_simplex(&y);
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(x.iter().all(|&v| v >= 0.0));
            let again = project_simplex(&x);
            for (a, b) in x.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let n = y.len();
            let lo = vec![0.0; n];
            let hi = vec![0.6; n];
            let b = project_box_sum(&y, &lo, &hi, 1.0);
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(b.iter().all(|&v| (0.0..=0.6).contains(&v)));
        }
    }

    #[test]
    fn tailr_closed_form_is_the_stationary_point() {
        let p = [0.5, 0.3, 0.2];
        let gamma = 0.1;
        let q = tailr_optimum(&p, gamma).unwrap();
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // P_i w(Q_i) / Q_i = P_i / (γ + (1-γ) Q_i) is constant at the optimum
        let g: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| pi * weights_tailr(*qi, gamma) / qi).collect();
        for x in &g {
            assert_abs_diff_eq!(*x, g[0], epsilon = 1e-12);
        }
        let pgd = pgd_weighted(&p, |x| weights_tailr(x, gamma), 0.05, 5000);
        for (a, b) in pgd.iter().zip(&q) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        assert!(tailr_optimum(&[0.9, 0.1, 0.0], 0.1).is_err());
    }

    #[test]
    fn truncr_structure_on_a_small_instance() {
        let p = [0.02, 0.08, 0.3, 0.6];
        let opt = truncr_optimum(&p, 0.1).unwrap();
        assert_eq!(opt.gated, vec![0, 1]);
        assert_abs_diff_eq!(opt.gamma, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(opt.delta, 0.8 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(opt.q[0], 0.2, epsilon = 1e-12);
        for (i, &qi) in opt.q.iter().enumerate() {
            assert_abs_diff_eq!(qi, opt.delta.min(opt.gamma * p[i]), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(opt.q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // the uncapped choice δ = γ' P_max(S), γ' = 1/((1-Δ) + P_max(S)|S^c|) is worse
        let g2 = 1.0 / (0.1 + 0.08 * 2.0);
        let d2 = g2 * 0.08;
        let q2 = [g2 * 0.02, d2, d2, d2];
        assert_abs_diff_eq!(q2.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(opt.objective < truncr_objective(&p, &[0, 1], &q2) - 1e-3);
        // every gated token capped: the optimum is uniform
        let flat = truncr_optimum(&[0.05, 0.15, 0.3, 0.5], 0.2).unwrap();
        for q in flat.q {
            assert_abs_diff_eq!(q, 0.25, epsilon = 1e-12);
        }
        assert!(truncr_optimum(&p, 0.33).is_err());
    }
}
