//! The oracle suite: closed forms against enumeration, bounds, gradient
//! checks, loss identities, fixed points and estimator identities. Each
//! property reports the acceptance criterion (1 to 8) it backs.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::artcase::{self, ArtCaseParams};
use crate::dist::{Categorical, FactorizedSeqDist, LogitTable};
use crate::error::{domain, Error, Result};
use crate::fixedpoint::{self, project_box_sum, truncr_objective};
use crate::losses::{self, LossSpec};
use crate::nn::{self, gradcheck, Arch, ModelConfig, TrainConfig};
use crate::prmetrics::{self, PRPoint};

/// A deliberate defect used to check that the suite catches regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// TaiLr weights computed as `q/(γ + q)` instead of `q/(γ + (1-γ)q)`.
    TailrDenominator,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tailr-denominator" => Ok(Fault::TailrDenominator),
            other => Err(domain(format!("unknown fault {other:?}; known: tailr-denominator"))),
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("tailr-denominator")
    }
}

fn tailr_weight(q: f64, gamma: f64, fault: Option<Fault>) -> f64 {
    match fault {
        Some(Fault::TailrDenominator) => q / (gamma + q),
        None => losses::weights_tailr(q, gamma),
    }
}

fn lambda_pr_weight(q: f64, gamma: f64, lambda: f64, l: usize, len: usize, fault: Option<Fault>) -> f64 {
    if q > losses::lambda_pr_cap(gamma, lambda, len) {
        return 0.0;
    }
    lambda.powf((l - 1) as f64 / len as f64) * tailr_weight(q, gamma, fault)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyOutcome {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub outcomes: Vec<PropertyOutcome>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    /// Outcomes backing one criterion.
    pub fn criterion(&self, c: u8) -> impl Iterator<Item = &PropertyOutcome> {
        self.outcomes.iter().filter(move |o| o.criterion == c)
    }
}

fn timed(criterion: u8, name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> PropertyOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    PropertyOutcome {
        criterion,
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the properties for the given criteria (all of 1 to 8 when empty).
pub fn run_verify(criteria: &[u8], fault: Option<Fault>) -> VerifyReport {
    let start = Instant::now();
    let want = |c: u8| criteria.is_empty() || criteria.contains(&c);
    let mut outcomes = Vec::new();
    if want(1) || want(2) {
        let (closed, identity) = closed_form_properties();
        if want(1) {
            outcomes.push(closed);
        }
        if want(2) {
            outcomes.push(identity);
        }
    }
    if want(3) {
        outcomes.push(timed(3, "sparsity-bound", sparsity_bound_property));
    }
    if want(4) {
        outcomes.push(timed(4, "epsilon0-threshold", epsilon0_property));
    }
    if want(5) {
        outcomes.push(timed(5, "gradient-check", gradient_property));
    }
    if want(6) {
        outcomes.push(timed(6, "cdiv-nll-trajectory", cdiv_trajectory_property));
        outcomes.push(timed(6, "lambda-pr-tailr-weights", || lambda_pr_property(fault)));
        outcomes.push(timed(6, "cdiv-gradient-identity", cdiv_gradient_property));
    }
    if want(7) {
        outcomes.push(timed(7, "tailr-fixed-point", || tailr_fixed_point_property(fault)));
        outcomes.push(timed(7, "truncr-fixed-point", truncr_fixed_point_property));
    }
    if want(8) {
        outcomes.push(timed(8, "pass-at-k-exhaustive", pass_at_k_property));
    }
    VerifyReport {
        outcomes,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Random two-defect instances with `V ≤ 8`, `L ≤ 4`.
pub fn artcase_grid(n: usize, seed: u64) -> Vec<ArtCaseParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(2..=4);
            let v = rng.gen_range(k..=8);
            let len = rng.gen_range(2..=4);
            let rho = rng.gen_range(1..k) as f64 / k as f64;
            let a = rho + (1.0 - rho) * rng.gen_range(0.0..1.0);
            let epsilon = if v > k { rng.gen_range(0.0..=0.5) } else { 0.0 };
            let l1 = rng.gen_range(1..=len);
            let l2 = (l1 + rng.gen_range(0..len - 1)) % len + 1;
            ArtCaseParams { vocab_size: v, k, len, l1, l2, rho, a, epsilon }
        })
        .collect()
}

fn identity_err(p: &PRPoint) -> f64 {
    (p.alpha - p.lambda * p.beta).abs()
}

/// Criteria 1 and 2 share the enumeration work.
fn closed_form_properties() -> (PropertyOutcome, PropertyOutcome) {
    let start = Instant::now();
    let temps = [0.3, 0.7, 1.0, 2.0, 5.0];
    let lambdas = [0.05, 0.3, 0.8, 1.5, 4.0, 20.0];
    let mut max_dev: f64 = 0.0;
    let mut max_identity: f64 = 0.0;
    let mut combos = 0;
    let mut run = || -> Result<()> {
        for params in artcase_grid(12, 11) {
            for &t in &temps {
                let enumerated = artcase::pr_enumerated(&params, t, &lambdas)?;
                for (e, &lambda) in enumerated.iter().zip(&lambdas) {
                    let c = artcase::pr_closed_form(&params, t, lambda)?;
                    max_dev = max_dev.max((c.alpha - e.alpha).abs()).max((c.beta - e.beta).abs());
                    max_identity = max_identity.max(identity_err(&c)).max(identity_err(e));
                    combos += 1;
                }
            }
        }
        Ok(())
    };
    let result = run();
    let seconds = start.elapsed().as_secs_f64();
    let closed = match &result {
        Ok(()) => PropertyOutcome {
            criterion: 1,
            name: "closed-form-vs-enumeration".into(),
            passed: combos >= 200 && max_dev <= 1e-9 && seconds <= 120.0,
            detail: format!("{combos} combinations, max |closed - enumerated| = {max_dev:.2e}, {seconds:.2}s"),
            seconds,
        },
        Err(e) => PropertyOutcome {
            criterion: 1,
            name: "closed-form-vs-enumeration".into(),
            passed: false,
            detail: format!("error: {e}"),
            seconds,
        },
    };
    let identity = timed(2, "pr-identity", || {
        result.as_ref().map_err(|e| domain(e.to_string()))?;
        // add general models: random logit tables against random references
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut points = 2 * combos;
        for _ in 0..40 {
            let v = rng.gen_range(2..=5);
            let l = rng.gen_range(1..=3);
            let p = LogitTable::random(v, l, 2.0, &mut rng).to_dist(1.0)?;
            let q = LogitTable::random(v, l, 2.0, &mut rng).to_dist(rng.gen_range(0.3..3.0))?;
            let curve = prmetrics::pr_curve_exact(&p, &q, &[0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0])?;
            max_identity = max_identity.max(curve.identity_error());
            points += curve.len();
        }
        Ok((
            max_identity <= 1e-9,
            format!("{points} points (exact and closed form), max |α - λβ| = {max_identity:.2e}"),
        ))
    });
    (closed, identity)
}

/// A sparse context-dependent reference: every conditional keeps a random
/// non-empty subset of tokens with random weights.
fn random_sparse_reference(v: usize, len: usize, rng: &mut ChaCha8Rng) -> Result<FactorizedSeqDist> {
    let mut table: HashMap<Vec<usize>, Categorical> = HashMap::new();
    let mut stack = vec![Vec::new()];
    while let Some(ctx) = stack.pop() {
        let mut w: Vec<f64> = (0..v)
            .map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.1..1.0) } else { 0.0 })
            .collect();
        w[rng.gen_range(0..v)] = 1.0;
        if ctx.len() + 1 < len {
            for tok in 0..v {
                let mut next = ctx.clone();
                next.push(tok);
                stack.push(next);
            }
        }
        table.insert(ctx, Categorical::from_weights(w)?);
    }
    FactorizedSeqDist::from_fn(v, len, move |ctx| table[ctx].clone())
}

fn sparsity_bound_property() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let temps = [0.25, 0.5, 1.0, 2.0, 4.0];
    let lambdas = [0.1, 0.5, 1.0, 2.0, 10.0];
    let (mut checks, mut violations) = (0usize, 0usize);
    let mut tightest: f64 = 0.0;
    for _ in 0..100 {
        let v = rng.gen_range(2..=6);
        let l = rng.gen_range(1..=3);
        let table = LogitTable::random(v, l, rng.gen_range(0.5..3.0), &mut rng);
        let z = prmetrics::table_logit_gap(&table);
        let p = random_sparse_reference(v, l, &mut rng)?;
        let supp = prmetrics::support_size(&p)?;
        for &t in &temps {
            let q = table.to_dist(t)?;
            let curve = prmetrics::pr_curve_exact(&p, &q, &lambdas)?;
            for pt in &curve.points {
                let bound = prmetrics::sparsity_bound(supp, v, l, z, t, pt.lambda)?;
                checks += 1;
                if pt.alpha > bound.raw_alpha * (1.0 + 1e-12) || pt.beta > bound.raw_beta * (1.0 + 1e-12) {
                    violations += 1;
                }
                tightest = tightest.max(pt.alpha / bound.raw_alpha);
            }
        }
    }
    Ok((
        violations == 0,
        format!("100 models, {checks} (t, λ) checks, {violations} violations, max α/bound = {tightest:.3}"),
    ))
}

/// Sign agreement of `dλ_min/dt` with the ε₀ prediction at the given
/// temperatures, for 24 random parameter sets probed at `ε₀(1 ± m)`,
/// `m ∈ {0.1, 0.3, 0.5}`. Returns `(checks, disagreements, examples)`.
pub fn epsilon0_sign_checks(temps: &[f64]) -> Result<(usize, usize, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut sets, mut checks, mut disagree) = (0, 0, 0);
    let mut notes = Vec::new();
    while sets < 24 {
        let k = rng.gen_range(2..=20);
        let v = rng.gen_range(k + 1..=10 * k);
        let rho = rng.gen_range(1..k) as f64 / k as f64;
        let a = rho + (1.0 - rho) * rng.gen_range(0.05..0.95);
        let base = ArtCaseParams { vocab_size: v, k, len: 2, l1: 1, l2: 2, rho, a, epsilon: 0.0 };
        let e0 = artcase::epsilon0(&base)?.value;
        // both sides of the threshold must be admissible noise levels
        if e0 * 1.1 > 0.5 || e0 < 1e-6 {
            continue;
        }
        sets += 1;
        for margin in [0.1, 0.3, 0.5] {
            for (eps, sign) in [(e0 * (1.0 - margin), -1.0), (e0 * (1.0 + margin), 1.0)] {
                if eps > 0.5 {
                    continue;
                }
                let p = ArtCaseParams { epsilon: eps, ..base };
                checks += 1;
                let slopes: Vec<f64> = temps.iter().map(|&t| artcase::lambda_min_slope(&p, t)).collect::<Result<_>>()?;
                if slopes.iter().any(|s| s.signum() != sign) {
                    disagree += 1;
                    if notes.len() < 3 {
                        notes.push(format!("V={v} K={k} ρ={rho:.3} a={a:.3} ε={eps:.4} (ε₀={e0:.4})"));
                    }
                }
            }
        }
    }
    Ok((checks, disagree, notes))
}

fn epsilon0_property() -> Result<(bool, String)> {
    let (checks, window, notes) = epsilon0_sign_checks(&[80.0, 90.0, 100.0])?;
    let (_, asymptotic, _) = epsilon0_sign_checks(&[1e3, 1e4, 1e5])?;
    let mut detail = format!(
        "24 parameter sets, {checks} sign checks: {window} disagreements at t ∈ {{80, 90, 100}}, \
         {asymptotic} at t ∈ {{1e3, 1e4, 1e5}}"
    );
    if !notes.is_empty() {
        detail.push_str(&format!("; late turns: {}", notes.join("; ")));
    }
    Ok((window == 0, detail))
}

fn gradient_property() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut ok = true;
    for arch in [Arch::Llama, Arch::Simple] {
        let report = gradcheck::check_gradients(&gradcheck::small_config(arch, 3), 4, 1e-5)?;
        ok &= report.max_rel_err.len() == 5 && report.worst() < 1e-4;
        worst.push(format!("{arch:?} worst {:.1e} over {} coordinates", report.worst(), report.coordinates));
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok((ok && seconds <= 60.0, format!("{}, {seconds:.1}s", worst.join(", "))))
}

fn tiny_run(loss: LossSpec) -> Result<nn::TrainOutcome<f32>> {
    let cfg = ModelConfig {
        init_std: 0.02,
        ..gradcheck::small_config(Arch::Llama, 7)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<Vec<usize>> = (0..96)
        .map(|_| {
            let x = rng.gen_range(0..cfg.vocab_size);
            vec![x; cfg.seq_len]
        })
        .collect();
    let train = TrainConfig {
        epochs: 3,
        batch_size: 16,
        micro_batch: 8,
        loss,
        seed: 9,
        ..TrainConfig::default()
    };
    nn::train(&cfg, &train, &data)
}

fn cdiv_trajectory_property() -> Result<(bool, String)> {
    let a = tiny_run(LossSpec::nll())?;
    let b = tiny_run(LossSpec::cdiv(1.0))?;
    let same = a.state.params == b.state.params && a.state.adam == b.state.adam;
    let differ = a.state.params.data().iter().zip(b.state.params.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    Ok((
        same,
        format!("{} steps, {differ} of {} parameters differ bitwise", a.state.adam.step, a.state.params.len()),
    ))
}

fn lambda_pr_property(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let q = 1.0 - rng.gen_range(0.0..1.0);
        let gamma = 1.0 - rng.gen_range(0.0..1.0);
        let len = rng.gen_range(1..=16);
        let l = rng.gen_range(1..=len);
        let w = lambda_pr_weight(q, gamma, 1.0, l, len, fault);
        worst = worst.max((w - tailr_weight(q, gamma, fault)).abs());
    }
    Ok((worst <= 1e-12, format!("10^4 (q, γ) pairs, max |λ-PR(1) - TaiLr| = {worst:.2e}")))
}

/// For `q = softmax(θ)` and tokens drawn from `P`, the detached-weight
/// gradient `Σ P_x q_x^{1-α} (q - e_x)` equals the gradient of
/// `-Σ P_x q_x^{1-α}/(1-α)`.
fn cdiv_gradient_property() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for &v in &[2usize, 5] {
        for &alpha in &[0.5, 1.4, 2.0] {
            for _ in 0..5 {
                let theta: Vec<f64> = (0..v).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let p = Categorical::from_weights((0..v).map(|_| rng.gen_range(0.05..1.0)).collect())?;
                let softmax = |th: &[f64]| Categorical::from_logits(th).expect("finite").into_probs();
                let surrogate = |th: &[f64]| -> f64 {
                    let q = softmax(th);
                    -(0..v).map(|x| p.prob(x) * q[x].powf(1.0 - alpha)).sum::<f64>() / (1.0 - alpha)
                };
                let q = softmax(&theta);
                let analytic: Vec<f64> = (0..v)
                    .map(|j| {
                        (0..v)
                            .map(|x| {
                                let w = losses::weights_cdiv(q[x], alpha);
                                p.prob(x) * w * (q[j] - f64::from(u8::from(j == x)))
                            })
                            .sum()
                    })
                    .collect();
                for j in 0..v {
                    let mut up = theta.clone();
                    up[j] += h;
                    let mut down = theta.clone();
                    down[j] -= h;
                    let numeric = (surrogate(&up) - surrogate(&down)) / (2.0 * h);
                    let rel = (numeric - analytic[j]).abs() / analytic[j].abs().max(numeric.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
    }
    Ok((worst < 1e-5, format!("V ∈ {{2, 5}}, α ∈ {{0.5, 1.4, 2}}, max relative error {worst:.1e}")))
}

fn dirichlet(v: usize, shape: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = Gamma::new(shape, 1.0).expect("valid shape");
    let x: Vec<f64> = (0..v).map(|_| g.sample(rng)).collect();
    let s: f64 = x.iter().sum();
    x.into_iter().map(|xi| xi / s).collect()
}

fn tailr_fixed_point_property(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &v in &[2usize, 5] {
        for &gamma in &[0.05, 0.2] {
            for _ in 0..4 {
                // keep every entry above γ/(1-γ+Vγ) so the optimum is interior
                let floor = 1.2 * gamma / (1.0 - gamma + v as f64 * gamma);
                let free = 1.0 - v as f64 * floor;
                let p: Vec<f64> = dirichlet(v, 1.0, &mut rng).into_iter().map(|x| floor + free * x).collect();
                let expected = fixedpoint::tailr_optimum(&p, gamma)?;
                let got = fixedpoint::pgd_weighted(&p, |q| tailr_weight(q, gamma, fault), 0.05, 20_000);
                let err = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    Ok((worst <= 1e-4, format!("{cases} interior cases, V ∈ {{2, 5}}, γ ∈ {{0.05, 0.2}}, sup-norm error {worst:.1e}")))
}

/// Independent numerical optimum of the TruncR objective for gated set `s`
/// over `{Q_i ≤ δ ≤ Q_j, ΣQ = 1}`: projected gradient descent for each `δ`,
/// a grid over `δ`, then golden-section refinement.
fn truncr_oracle(p: &[f64], s: &[usize]) -> (f64, Vec<f64>) {
    let n = p.len();
    let m = n - s.len();
    let inner = |delta: f64, start: &[f64]| -> (f64, Vec<f64>) {
        let mut lo = vec![delta; n];
        let mut hi = vec![1.0; n];
        for &i in s {
            lo[i] = 1e-9;
            hi[i] = delta;
        }
        let mut q = project_box_sum(start, &lo, &hi, 1.0);
        let mut f = truncr_objective(p, s, &q);
        let mut step = 0.1;
        for _ in 0..2000 {
            let mut y = q.clone();
            for &i in s {
                y[i] += step * p[i] / q[i];
            }
            let cand = project_box_sum(&y, &lo, &hi, 1.0);
            let fc = truncr_objective(p, s, &cand);
            if fc < f - 1e-15 {
                let moved = cand.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                q = cand;
                f = fc;
                step *= 1.5;
                if moved < 1e-13 {
                    break;
                }
            } else {
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
        }
        (f, q)
    };
    let (d_lo, d_hi) = (1.0 / n as f64, if m == 0 { 1.0 } else { 1.0 / m as f64 });
    let uniform = vec![1.0 / n as f64; n];
    let grid = 60;
    let mut best = (f64::INFINITY, 0.0);
    for g in 0..=grid {
        let d = d_lo + (d_hi - d_lo) * g as f64 / grid as f64;
        let (f, _) = inner(d, &uniform);
        if f < best.0 {
            best = (f, d);
        }
    }
    let width = (d_hi - d_lo) / grid as f64;
    let (mut a, mut b) = ((best.1 - width).max(d_lo), (best.1 + width).min(d_hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if inner(c, &uniform).0 <= inner(d, &uniform).0 {
            b = d;
        } else {
            a = c;
        }
    }
    inner(0.5 * (a + b), &uniform)
}

fn truncr_fixed_point_property() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let (mut cases, mut bad) = (0, 0);
    let (mut worst_obj, mut worst_q, mut worst_struct): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut capped_cases = 0;
    for _ in 0..30 {
        let n = rng.gen_range(3..=6);
        // a spread-out reference leaves some gated tokens below the cap
        let p = dirichlet(n, 0.3, &mut rng);
        let k = rng.gen_range(1..n);
        // the gated set holds the k least likely tokens
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        let keep: f64 = order[..k].iter().map(|&i| p[i]).sum();
        let lib = fixedpoint::truncr_optimum(&p, keep)?;
        let (obj, q) = truncr_oracle(&p, &lib.gated);
        // read δ and γ off the oracle's solution
        let delta = q.iter().copied().fold(0.0, f64::max);
        let uncapped: Vec<usize> = lib.gated.iter().copied().filter(|&i| q[i] < delta - 1e-4).collect();
        let gamma = if uncapped.is_empty() {
            lib.gamma
        } else {
            uncapped.iter().map(|&i| q[i]).sum::<f64>() / uncapped.iter().map(|&i| p[i]).sum::<f64>()
        };
        if !uncapped.is_empty() {
            capped_cases += 1;
        }
        let structure = (0..n).map(|i| (q[i] - delta.min(gamma * p[i])).abs()).fold(0.0, f64::max);
        let dq = q.iter().zip(&lib.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dobj = (obj - lib.objective).abs();
        worst_obj = worst_obj.max(dobj);
        worst_q = worst_q.max(dq);
        worst_struct = worst_struct.max(structure);
        cases += 1;
        if dobj > 1e-7 || dq > 1e-3 || structure > 1e-3 {
            bad += 1;
        }
    }
    Ok((
        bad == 0,
        format!(
            "{cases} instances (V ≤ 6, {capped_cases} with gated tokens below the cap): |Δobjective| ≤ {worst_obj:.1e}, \
             |ΔQ| ≤ {worst_q:.1e}, max |Q - min(δ, γP)| = {worst_struct:.1e}, {bad} failures"
        ),
    ))
}

fn pass_at_k_property() -> Result<(bool, String)> {
    let mut mismatches = 0;
    let mut checked = 0;
    for n in 1u64..=12 {
        for c in 0..=n {
            for k in 1..=n {
                let (mut hit, mut total) = (0u64, 0u64);
                for mask in 0u32..(1 << n) {
                    if u64::from(mask.count_ones()) == k {
                        total += 1;
                        hit += u64::from(mask & ((1u32 << c) - 1) != 0);
                    }
                }
                checked += 1;
                if prmetrics::pass_at_k(n, c, k)? != hit as f64 / total as f64 {
                    mismatches += 1;
                }
            }
        }
    }
    let example = prmetrics::pass_at_k(5, 2, 2)?;
    Ok((
        mismatches == 0 && example == 0.7,
        format!("{checked} (n, c, k) triples with n ≤ 12, {mismatches} mismatches; pass@2 (n=5, c=2) = {example}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_names_round_trip() {
        let f: Fault = "tailr-denominator".parse().unwrap();
        assert_eq!(f.to_string(), "tailr-denominator");
        assert!("other".parse::<Fault>().is_err());
    }

    #[test]
    fn fast_properties_pass() {
        let report = run_verify(&[3, 6, 7, 8], None);
        for o in &report.outcomes {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
        assert_eq!(report.criterion(6).count(), 3);
    }

    #[test]
    fn injected_tailr_fault_is_caught_by_the_fixed_point_property() {
        let report = run_verify(&[6, 7], Some(Fault::TailrDenominator));
        let failed: Vec<&str> = report.failures().map(|o| o.name.as_str()).collect();
        assert_eq!(failed, vec!["tailr-fixed-point"]);
    }

    #[test]
    fn epsilon0_predicts_the_asymptotic_slope_sign() {
        let (checks, disagree, _) = epsilon0_sign_checks(&[1e3, 1e4, 1e5]).unwrap();
        assert!(checks >= 100);
        assert_eq!(disagree, 0);
    }

    #[test]
    fn artcase_grid_is_valid() {
        for p in artcase_grid(50, 3) {
            p.validate().unwrap();
            assert!(p.vocab_size <= 8 && p.len <= 4);
        }
    }
}
