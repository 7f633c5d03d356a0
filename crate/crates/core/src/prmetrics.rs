//! Precision and recall between a reference distribution `P` and a model `Q`.
//!
//! Support-based values `α̅ = Q(Supp P)`, `β̅ = P(Supp Q)`; the PR-curve
//! `α_λ = Σ_x min(λP(x), Q(x))`, `β_λ = Σ_x min(P(x), Q(x)/λ)` by exhaustive
//! enumeration; the sparsity upper bound on `α_λ` for softmax models; a k-NN
//! estimator on feature vectors; and the unbiased pass@k estimator.

use serde::{Deserialize, Serialize};

use crate::dist::{FactorizedSeqDist, LogitTable};
use crate::error::{domain, Error, Result};
use crate::nn::map_ordered;

/// Default cap on `V^L` for exhaustive enumeration.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    /// Trade-off parameter; `0` and `+∞` denote the support-based endpoints.
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

impl PRCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest `|α - λβ|` over finite positive `λ`.
    pub fn identity_error(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.lambda.is_finite() && p.lambda > 0.0)
            .map(|p| (p.alpha - p.lambda * p.beta).abs())
            .fold(0.0, f64::max)
    }
}

fn check_pair(p: &FactorizedSeqDist, q: &FactorizedSeqDist, budget: u64) -> Result<()> {
    if p.vocab_size() != q.vocab_size() || p.len() != q.len() {
        return Err(domain(format!(
            "distributions differ in shape: V={} L={} vs V={} L={}",
            p.vocab_size(),
            p.len(),
            q.vocab_size(),
            q.len()
        )));
    }
    check_budget(p.vocab_size(), p.len(), budget)
}

fn check_budget(vocab: usize, len: usize, budget: u64) -> Result<()> {
    let outcomes = (vocab as f64).powi(len as i32);
    if outcomes > budget as f64 {
        return Err(Error::Budget {
            vocab,
            len,
            outcomes,
            budget,
        });
    }
    Ok(())
}

/// Visits every sequence with `P(x) > 0` or `Q(x) > 0`, passing `(P(x), Q(x))`.
/// Subtrees where both prefix probabilities vanish are skipped. Branches under
/// each first token are folded independently (possibly in parallel) and then
/// merged in token order, so the result does not depend on the thread count.
fn fold_joint<A, I, F, M>(p: &FactorizedSeqDist, q: &FactorizedSeqDist, budget: u64, init: I, f: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, f64, f64) + Sync + Send,
    M: Fn(&mut A, A),
{
    check_pair(p, q, budget)?;
    let v = p.vocab_size();
    let (p0, q0) = (p.conditional(&[]), q.conditional(&[]));
    let first: Vec<usize> = (0..v).collect();
    let parts = map_ordered(&first, |&tok| {
        let mut acc = init();
        let mut prefix = vec![tok];
        descend(p, q, &mut prefix, p0.prob(tok), q0.prob(tok), &mut acc, &f);
        Ok(acc)
    })?;
    let mut acc = init();
    for part in parts {
        merge(&mut acc, part);
    }
    Ok(acc)
}

fn descend<A, F: Fn(&mut A, f64, f64)>(
    p: &FactorizedSeqDist,
    q: &FactorizedSeqDist,
    prefix: &mut Vec<usize>,
    pp: f64,
    qq: f64,
    acc: &mut A,
    f: &F,
) {
    if pp == 0.0 && qq == 0.0 {
        return;
    }
    if prefix.len() == p.len() {
        f(acc, pp, qq);
        return;
    }
    let pc = if pp > 0.0 { Some(p.conditional(prefix)) } else { None };
    let qc = if qq > 0.0 { Some(q.conditional(prefix)) } else { None };
    for tok in 0..p.vocab_size() {
        let np = pc.as_ref().map_or(0.0, |c| pp * c.prob(tok));
        let nq = qc.as_ref().map_or(0.0, |c| qq * c.prob(tok));
        prefix.push(tok);
        descend(p, q, prefix, np, nq, acc, f);
        prefix.pop();
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(domain(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(())
}

/// The point at `λ`; `λ = 0` gives `(0, β̅)` and `λ = ∞` gives `(α̅, 0)`.
pub fn pr_point_exact(p: &FactorizedSeqDist, q: &FactorizedSeqDist, lambda: f64) -> Result<PRPoint> {
    Ok(pr_curve_exact_with_budget(p, q, &[lambda], DEFAULT_BUDGET)?.points[0])
}

pub fn pr_curve_exact(p: &FactorizedSeqDist, q: &FactorizedSeqDist, lambdas: &[f64]) -> Result<PRCurve> {
    pr_curve_exact_with_budget(p, q, lambdas, DEFAULT_BUDGET)
}

/// One enumeration pass for all of `lambdas`, which must be ascending.
pub fn pr_curve_exact_with_budget(
    p: &FactorizedSeqDist,
    q: &FactorizedSeqDist,
    lambdas: &[f64],
    budget: u64,
) -> Result<PRCurve> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("lambdas must be ascending"));
    }
    let n = lambdas.len();
    // per lambda: (alpha, beta); plus the two support masses
    let (sums, (alpha_bar, beta_bar)) = fold_joint(
        p,
        q,
        budget,
        || (vec![(0.0, 0.0); n], (0.0, 0.0)),
        |acc, px, qx| {
            for (s, &l) in acc.0.iter_mut().zip(lambdas) {
                if l > 0.0 && l.is_finite() {
                    s.0 += (l * px).min(qx);
                    s.1 += px.min(qx / l);
                }
            }
            if px > 0.0 {
                acc.1 .0 += qx;
            }
            if qx > 0.0 {
                acc.1 .1 += px;
            }
        },
        |acc, part| {
            for (a, b) in acc.0.iter_mut().zip(part.0) {
                a.0 += b.0;
                a.1 += b.1;
            }
            acc.1 .0 += part.1 .0;
            acc.1 .1 += part.1 .1;
        },
    )?;
    let points = lambdas
        .iter()
        .zip(sums)
        .map(|(&lambda, (alpha, beta))| {
            if lambda == 0.0 {
                PRPoint { lambda, alpha: 0.0, beta: beta_bar }
            } else if lambda.is_infinite() {
                PRPoint { lambda, alpha: alpha_bar, beta: 0.0 }
            } else {
                PRPoint { lambda, alpha, beta }
            }
        })
        .collect();
    Ok(PRCurve { points })
}

/// `(α̅, β̅) = (Q(Supp P), P(Supp Q))`.
pub fn support_pr(p: &FactorizedSeqDist, q: &FactorizedSeqDist) -> Result<(f64, f64)> {
    let c = pr_curve_exact(p, q, &[0.0, f64::INFINITY])?;
    Ok((c.points[1].alpha, c.points[0].beta))
}

/// Number of sequences with positive probability.
pub fn support_size(p: &FactorizedSeqDist) -> Result<u64> {
    fold_joint(p, p, DEFAULT_BUDGET, || 0u64, |n, px, _| *n += u64::from(px > 0.0), |a, b| *a += b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityBound {
    /// `min(1, raw_alpha)`.
    pub alpha_ub: f64,
    /// `min(1, raw_beta)`.
    pub beta_ub: f64,
    /// `(|Supp P| / V^L) · exp(Z L / t)`.
    pub raw_alpha: f64,
    /// `raw_alpha / λ`.
    pub raw_beta: f64,
}

/// Upper bound on `α_λ` and `β_λ` for any softmax model whose logits differ
/// by at most `z` within a context, sampled at temperature `t`.
pub fn sparsity_bound(supp_size: u64, vocab: usize, len: usize, z: f64, t: f64, lambda: f64) -> Result<SparsityBound> {
    if supp_size == 0 || vocab == 0 || len == 0 {
        return Err(domain("support size, V and L must be positive"));
    }
    let log_outcomes = len as f64 * (vocab as f64).ln();
    if (supp_size as f64).ln() > log_outcomes + 1e-9 {
        return Err(domain(format!("support size {supp_size} exceeds V^L = {vocab}^{len}")));
    }
    if !(z >= 0.0 && z.is_finite()) || !(t > 0.0) || !(lambda > 0.0) {
        return Err(domain("need Z >= 0 finite, t > 0 and lambda > 0"));
    }
    let raw_alpha = ((supp_size as f64).ln() - log_outcomes + z * len as f64 / t).exp();
    let raw_beta = raw_alpha / lambda;
    Ok(SparsityBound {
        alpha_ub: raw_alpha.min(1.0),
        beta_ub: raw_beta.min(1.0),
        raw_alpha,
        raw_beta,
    })
}

/// Largest within-context spread `max_i z_i - min_j z_j` over all contexts.
pub fn max_logit_gap(contexts: &[Vec<f64>]) -> Result<f64> {
    if contexts.is_empty() || contexts.iter().any(Vec::is_empty) {
        return Err(domain("logit table must have at least one non-empty context"));
    }
    Ok(contexts
        .iter()
        .map(|z| {
            let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max))
}

pub fn table_logit_gap(table: &LogitTable) -> f64 {
    max_logit_gap(table.logits()).expect("logit tables are never empty")
}

/// Points of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().ok_or_else(|| domain("feature set is empty"))?.len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(domain("feature vectors must share one positive dimension"));
        }
        let data: Vec<f64> = vectors.concat();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(domain("feature vectors must be finite"));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each point to its `k`-th nearest other point.
fn knn_radii(set: &FeatureSet, k: usize) -> Vec<f64> {
    let n = set.len();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sq_dist(set.point(i), set.point(j))).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `probe` points inside at least one ball of `manifold`.
fn coverage(manifold: &FeatureSet, radii: &[f64], probe: &FeatureSet) -> f64 {
    let inside = (0..probe.len())
        .filter(|&i| (0..manifold.len()).any(|j| sq_dist(probe.point(i), manifold.point(j)) <= radii[j]))
        .count();
    inside as f64 / probe.len() as f64
}

/// k-NN manifold precision and recall: each set is approximated by the union
/// of balls reaching every point's `k`-th nearest neighbour within its set.
pub fn knn_pr(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(domain("k must be positive"));
    }
    if real.dim() != fake.dim() {
        return Err(domain("feature sets differ in dimension"));
    }
    if real.len() <= k || fake.len() <= k {
        return Err(domain(format!("both sets need at least k+1 = {} points", k + 1)));
    }
    let precision = coverage(real, &knn_radii(real, k), fake);
    let recall = coverage(fake, &knn_radii(fake, k), real);
    Ok((precision, recall))
}

fn binomial_exact(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// Unbiased pass@k from `c` correct out of `n` samples:
/// `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if k == 0 || k > n || c > n {
        return Err(domain(format!("need 1 <= k <= n and c <= n, got n={n} c={c} k={k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    const EXACT: u128 = 1 << 53;
    if let (Some(total), Some(fail)) = (binomial_exact(n, k), binomial_exact(n - c, k)) {
        if total <= EXACT {
            return Ok((total - fail) as f64 / total as f64);
        }
    }
    let fail: f64 = (0..k).map(|i| 1.0 - c as f64 / (n - i) as f64).product();
    Ok(1.0 - fail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Categorical;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(probs: &[f64]) -> FactorizedSeqDist {
        FactorizedSeqDist::from_positions(vec![Categorical::new(probs.to_vec()).unwrap()]).unwrap()
    }

    fn random_table(v: usize, l: usize, seed: u64) -> LogitTable {
        LogitTable::random(v, l, 1.5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Brute-force oracle over an explicit outcome list.
    fn brute(p: &FactorizedSeqDist, q: &FactorizedSeqDist, lambda: f64) -> (f64, f64) {
        let (v, l) = (p.vocab_size(), p.len());
        let mut a = 0.0;
        let mut b = 0.0;
        for id in 0..v.pow(l as u32) {
            let x: Vec<usize> = (0..l).map(|i| id / v.pow((l - 1 - i) as u32) % v).collect();
            let (px, qx) = (p.seq_prob(&x).unwrap(), q.seq_prob(&x).unwrap());
            a += (lambda * px).min(qx);
            b += px.min(qx / lambda);
        }
        (a, b)
    }

    #[test]
    fn worked_examples() {
        let p = single(&[0.5, 0.5, 0.0]);
        let q = single(&[0.5, 0.25, 0.25]);
        let pt = pr_point_exact(&p, &q, 1.0).unwrap();
        assert_abs_diff_eq!(pt.alpha, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(pt.beta, 0.75, epsilon = 1e-15);

        let same = random_table(3, 3, 1).to_dist(1.0).unwrap();
        let c = pr_curve_exact(&same, &same, &[0.1, 1.0, 10.0]).unwrap();
        let got: Vec<(f64, f64)> = c.points.iter().map(|p| (p.alpha, p.beta)).collect();
        for (g, e) in got.iter().zip([(0.1, 1.0), (1.0, 1.0), (1.0, 0.1)]) {
            assert_abs_diff_eq!(g.0, e.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.1, e.1, epsilon = 1e-12);
        }
        let (a, b) = support_pr(&same, &same).unwrap();
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_and_nested_supports() {
        let p = single(&[0.5, 0.5, 0.0, 0.0]);
        let q = single(&[0.0, 0.0, 0.3, 0.7]);
        let pt = pr_point_exact(&p, &q, 1.0).unwrap();
        assert_eq!((pt.alpha, pt.beta), (0.0, 0.0));
        assert_eq!(support_pr(&p, &q).unwrap(), (0.0, 0.0));

        let wide = single(&[0.25, 0.25, 0.25, 0.25]);
        let narrow = single(&[0.6, 0.4, 0.0, 0.0]);
        // Supp(Q) strictly inside Supp(P)
        let (a, b) = support_pr(&wide, &narrow).unwrap();
        assert_eq!(a, 1.0);
        assert_abs_diff_eq!(b, 0.5, epsilon = 1e-15);
        let c = pr_curve_exact(&wide, &narrow, &[0.0, f64::INFINITY]).unwrap();
        assert_eq!(c.points[0].alpha, 0.0);
        assert_eq!(c.points[1].beta, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let p = single(&[0.5, 0.5]);
        let q = random_table(2, 2, 0).to_dist(1.0).unwrap();
        assert!(pr_point_exact(&p, &q, 1.0).is_err());
        assert!(pr_point_exact(&p, &p, -1.0).is_err());
        assert!(pr_curve_exact(&p, &p, &[2.0, 1.0]).is_err());
        let big = FactorizedSeqDist::from_positions(vec![Categorical::uniform(10).unwrap(); 8]).unwrap();
        match pr_point_exact(&big, &big, 1.0) {
            Err(Error::Budget { vocab: 10, len: 8, .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn matches_brute_force_and_is_thread_independent() {
        let p = random_table(3, 4, 5).to_dist(0.7).unwrap();
        let q = random_table(3, 4, 6).to_dist(1.3).unwrap();
        let lambdas = [0.3, 1.0, 2.5];
        let c = pr_curve_exact(&p, &q, &lambdas).unwrap();
        for (pt, &l) in c.points.iter().zip(&lambdas) {
            let (a, b) = brute(&p, &q, l);
            assert_abs_diff_eq!(pt.alpha, a, epsilon = 1e-12);
            assert_abs_diff_eq!(pt.beta, b, epsilon = 1e-12);
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool.install(|| pr_curve_exact(&p, &q, &lambdas).unwrap());
        assert_eq!(threaded, c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn curve_invariants(seed in any::<u64>(), v in 2usize..5, l in 1usize..4, t in 0.3f64..3.0) {
            let p = random_table(v, l, seed).to_dist(1.0).unwrap();
            let q = random_table(v, l, seed ^ 0xabc).to_dist(t).unwrap();
            let lambdas = [0.0, 0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0, f64::INFINITY];
            let c = pr_curve_exact(&p, &q, &lambdas).unwrap();
            prop_assert!(c.identity_error() <= 1e-9);
            for w in c.points.windows(2) {
                prop_assert!(w[1].alpha >= w[0].alpha - 1e-12);
                prop_assert!(w[1].beta <= w[0].beta + 1e-12);
            }
            for pt in &c.points {
                prop_assert!(pt.alpha <= pt.lambda.min(1.0) + 1e-12);
                prop_assert!(pt.beta <= (1.0 / pt.lambda).min(1.0) + 1e-12);
                prop_assert!(pt.alpha >= 0.0 && pt.beta >= 0.0);
            }
        }

        #[test]
        fn sparsity_bound_holds(seed in any::<u64>(), v in 2usize..5, l in 1usize..4, t in 0.2f64..4.0, lambda in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = random_table(v, l, seed);
            let q = table.to_dist(t).unwrap();
            // sparse reference: a random subset of tokens at each position
            let keep: Vec<Vec<bool>> = (0..l).map(|_| {
                let mut m: Vec<bool> = (0..v).map(|_| rng.gen_bool(0.5)).collect();
                m[rng.gen_range(0..v)] = true;
                m
            }).collect();
            let p = FactorizedSeqDist::from_positions(keep.iter().map(|m| {
                Categorical::from_weights(m.iter().map(|&k| f64::from(u8::from(k))).collect()).unwrap()
            }).collect()).unwrap();
            let supp = support_size(&p).unwrap();
            prop_assert_eq!(supp, keep.iter().map(|m| m.iter().filter(|&&k| k).count() as u64).product::<u64>());
            let z = table_logit_gap(&table);
            let bound = sparsity_bound(supp, v, l, z, t, lambda).unwrap();
            let pt = pr_point_exact(&p, &q, lambda).unwrap();
            prop_assert!(pt.alpha <= bound.raw_alpha * (1.0 + 1e-12));
            prop_assert!(pt.beta <= bound.raw_beta * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sparsity_bound_limits() {
        let b = sparsity_bound(8, 4, 3, 0.0, 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(b.raw_alpha, 8.0 / 64.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.raw_beta, 4.0 / 64.0, epsilon = 1e-15);
        let hot = sparsity_bound(8, 4, 3, 2.0, 1e9, 1.0).unwrap();
        assert_abs_diff_eq!(hot.raw_alpha, 0.125, epsilon = 1e-8);
        let cold = sparsity_bound(8, 4, 3, 2.0, 0.1, 1.0).unwrap();
        assert_eq!(cold.alpha_ub, 1.0);
        assert!(cold.raw_alpha > 1.0);
        assert!(sparsity_bound(65, 4, 3, 0.0, 1.0, 1.0).is_err());
        assert!(sparsity_bound(8, 4, 3, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn logit_gap_examples() {
        assert_eq!(max_logit_gap(&[vec![2.0; 4], vec![-1.0; 4]]).unwrap(), 0.0);
        assert_eq!(max_logit_gap(&[vec![3.0, 1.0, 0.0]]).unwrap(), 3.0);
        assert!(max_logit_gap(&[]).is_err());
        let table = random_table(4, 3, 9);
        let scaled: Vec<Vec<f64>> = table.logits().iter().map(|z| z.iter().map(|x| x / 2.5).collect()).collect();
        assert_abs_diff_eq!(max_logit_gap(&scaled).unwrap(), table_logit_gap(&table) / 2.5, epsilon = 1e-12);
    }

    fn blob(n: usize, center: f64, seed: u64) -> FeatureSet {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| center + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
            .collect();
        FeatureSet::new(&pts).unwrap()
    }

    #[test]
    fn knn_examples() {
        let x = blob(60, 0.0, 1);
        for k in [1, 3, 10] {
            assert_eq!(knn_pr(&x, &x, k).unwrap(), (1.0, 1.0));
        }
        let far = blob(60, 1000.0, 2);
        assert_eq!(knn_pr(&x, &far, 4).unwrap(), (0.0, 0.0));
        assert!(knn_pr(&x, &blob(4, 0.0, 3), 4).is_err());
        assert!(knn_pr(&x, &x, 0).is_err());
        assert!(FeatureSet::new(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn knn_on_matched_blobs() {
        for seed in 0..5 {
            let (p, r) = knn_pr(&blob(500, 0.0, 10 + seed), &blob(500, 0.0, 20 + seed), 4).unwrap();
            assert!((0.85..=1.0).contains(&p) && (0.85..=1.0).contains(&r), "seed {seed}: {p} {r}");
        }
    }

    /// Average over all k-subsets of n samples (c of them correct) of the
    /// indicator that the subset contains a correct one.
    fn pass_at_k_exhaustive(n: u64, c: u64, k: u64) -> f64 {
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if u64::from(mask.count_ones()) == k {
                total += 1;
                // samples 0..c are the correct ones
                hit += u64::from(mask & ((1u32 << c) - 1) != 0);
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn pass_at_k_matches_exhaustive_averaging() {
        assert_eq!(pass_at_k(5, 2, 2).unwrap(), 0.7);
        for n in 1..=12 {
            for c in 0..=n {
                for k in 1..=n {
                    assert_eq!(pass_at_k(n, c, k).unwrap(), pass_at_k_exhaustive(n, c, k), "n={n} c={c} k={k}");
                }
            }
        }
        assert_eq!(pass_at_k(10, 0, 3).unwrap(), 0.0);
        assert_eq!(pass_at_k(10, 10, 3).unwrap(), 1.0);
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
    }

    #[test]
    fn pass_at_k_large_n_uses_product_form() {
        let v = pass_at_k(1_000_000, 1000, 500).unwrap();
        let expect: f64 = 1.0 - (0..500).map(|i| 1.0 - 1000.0 / (1_000_000 - i) as f64).product::<f64>();
        assert_abs_diff_eq!(v, expect, epsilon = 1e-15);
        assert!(v > 0.0 && v < 1.0);
    }
}
