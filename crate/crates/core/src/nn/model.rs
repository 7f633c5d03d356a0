//! Forward pass with activation caching and the matching reverse pass.

use super::config::Arch;
use super::params::{Gradients, ModelParams};
use super::real::{gemm, Real};
use crate::error::{domain, Result};

/// Logits for every position of a batch of equal-length contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<F> {
    pub batch: usize,
    pub positions: usize,
    pub vocab: usize,
    pub data: Vec<F>,
}

impl<F: Real> Logits<F> {
    /// Logits of `Q(. | BOS, x_1..x_pos)` for sequence `b`.
    pub fn row(&self, b: usize, pos: usize) -> &[F] {
        let at = (b * self.positions + pos) * self.vocab;
        &self.data[at..at + self.vocab]
    }

    pub fn last(&self, b: usize) -> &[F] {
        self.row(b, self.positions - 1)
    }
}

struct BlockCache<F> {
    h_in: Vec<F>,
    inv1: Vec<F>,
    n1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    h_mid: Vec<F>,
    inv2: Vec<F>,
    n2: Vec<F>,
    pre: Vec<F>,
    up: Vec<F>,
    act: Vec<F>,
}

/// Activations of one forward pass, kept for the reverse pass.
pub(crate) struct Cache<F> {
    batch: usize,
    positions: usize,
    tokens: Vec<usize>,
    blocks: Vec<BlockCache<F>>,
    h_final: Vec<F>,
    inv_f: Vec<F>,
    n_f: Vec<F>,
    logits: Vec<F>,
    lse: Vec<f64>,
}

impl<F: Real> Cache<F> {
    /// `log Q(target | context)` for each sequence and position.
    pub(crate) fn target_logprobs(&self, targets: &[&[usize]], vocab: usize) -> Vec<Vec<f64>> {
        targets
            .iter()
            .enumerate()
            .map(|(b, tg)| {
                tg.iter()
                    .enumerate()
                    .map(|(p, &y)| {
                        let r = b * self.positions + p;
                        self.logits[r * vocab + y].f64() - self.lse[r]
                    })
                    .collect()
            })
            .collect()
    }

    pub(crate) fn into_logits(self, vocab: usize) -> Logits<F> {
        Logits {
            batch: self.batch,
            positions: self.positions,
            vocab,
            data: self.logits,
        }
    }
}

struct Rope<F> {
    cos: Vec<F>,
    sin: Vec<F>,
    half: usize,
}

impl<F: Real> Rope<F> {
    fn new(positions: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions * half);
        let mut sin = Vec::with_capacity(positions * half);
        for p in 0..positions {
            for i in 0..half {
                let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = p as f64 * freq;
                cos.push(F::c(angle.cos()));
                sin.push(F::c(angle.sin()));
            }
        }
        Self { cos, sin, half }
    }

    /// Rotates consecutive pairs of every head of row `x` at position `p`;
    /// `inverse` applies the transpose rotation.
    fn apply(&self, x: &mut [F], p: usize, head_dim: usize, inverse: bool) {
        let base = p * self.half;
        for head in x.chunks_exact_mut(head_dim) {
            for i in 0..self.half {
                let (c, s) = (self.cos[base + i], self.sin[base + i]);
                let s = if inverse { -s } else { s };
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * c - b * s;
                head[2 * i + 1] = a * s + b * c;
            }
        }
    }
}

fn rms_forward<F: Real>(x: &[F], g: &[F], eps: F, out: &mut [F], inv: &mut [F]) {
    let d = g.len();
    let dn = F::c(d as f64);
    for ((xr, yr), iv) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(inv.iter_mut()) {
        let ms = xr.iter().map(|&v| v * v).sum::<F>() / dn;
        let r = F::one() / (ms + eps).sqrt();
        *iv = r;
        for ((y, &v), &gc) in yr.iter_mut().zip(xr).zip(g) {
            *y = gc * v * r;
        }
    }
}

/// Adds the input gradient of RMSNorm to `dx` and the gain gradient to `dg`.
fn rms_backward<F: Real>(x: &[F], g: &[F], inv: &[F], dy: &[F], dx: &mut [F], dg: &mut [F]) {
    let d = g.len();
    let dn = F::c(d as f64);
    for (((xr, dyr), dxr), &r) in x
        .chunks_exact(d)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(inv)
    {
        let mut dot = F::zero();
        for c in 0..d {
            dot = dot + g[c] * dyr[c] * xr[c];
            dg[c] = dg[c] + dyr[c] * xr[c] * r;
        }
        let k = r * r * r * dot / dn;
        for c in 0..d {
            dxr[c] = dxr[c] + g[c] * dyr[c] * r - xr[c] * k;
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp_act())
}

fn tanh<F: Real>(x: F) -> F {
    let two = F::one() + F::one();
    F::one() - two / ((two * x).exp_act() + F::one())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Real>(x: F) -> F {
    let inner = F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x);
    F::c(0.5) * x * (F::one() + tanh(inner))
}

fn gelu_grad<F: Real>(x: F) -> F {
    let inner = F::c(GELU_C) * (x + F::c(GELU_A) * x * x * x);
    let th = tanh(inner);
    let dinner = F::c(GELU_C) * (F::one() + F::c(3.0 * GELU_A) * x * x);
    F::c(0.5) * (F::one() + th) + F::c(0.5) * x * (F::one() - th * th) * dinner
}

/// Copies head `hh` of every position of sequence `bi` into a contiguous
/// `t x hd` block.
fn gather_head<F: Real>(x: &[F], bi: usize, hh: usize, t: usize, d: usize, hd: usize, out: &mut [F]) {
    for (i, dst) in out.chunks_exact_mut(hd).enumerate() {
        let at = (bi * t + i) * d + hh * hd;
        dst.copy_from_slice(&x[at..at + hd]);
    }
}

fn scatter_head<F: Real>(src: &[F], bi: usize, hh: usize, t: usize, d: usize, hd: usize, x: &mut [F]) {
    for (i, s) in src.chunks_exact(hd).enumerate() {
        let at = (bi * t + i) * d + hh * hd;
        x[at..at + hd].copy_from_slice(s);
    }
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

/// Causal softmax attention; `probs` is `b x nh x t x t`, `att` row-major
/// `(b t) x d`.
#[allow(clippy::too_many_arguments)]
fn attention_forward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    b: usize,
    t: usize,
    nh: usize,
    hd: usize,
    scale: F,
    probs: &mut [F],
    att: &mut [F],
) {
    let d = nh * hd;
    let mut qh = vec![F::zero(); t * hd];
    let mut kh = vec![F::zero(); t * hd];
    let mut vh = vec![F::zero(); t * hd];
    let mut oh = vec![F::zero(); t * hd];
    for bi in 0..b {
        for hh in 0..nh {
            gather_head(q, bi, hh, t, d, hd, &mut qh);
            gather_head(k, bi, hh, t, d, hd, &mut kh);
            gather_head(v, bi, hh, t, d, hd, &mut vh);
            oh.fill(F::zero());
            let pblock = &mut probs[(bi * nh + hh) * t * t..][..t * t];
            for i in 0..t {
                let qi = &qh[i * hd..(i + 1) * hd];
                let prow = &mut pblock[i * t..(i + 1) * t];
                let mut mx = F::neg_infinity();
                for (j, kj) in kh.chunks_exact(hd).take(i + 1).enumerate() {
                    let s = dot(qi, kj) * scale;
                    prow[j] = s;
                    mx = mx.max(s);
                }
                let mut z = F::zero();
                for p in &mut prow[..=i] {
                    *p = (*p - mx).exp_act();
                    z = z + *p;
                }
                let inv = F::one() / z;
                let oi = &mut oh[i * hd..(i + 1) * hd];
                for (p, vj) in prow[..=i].iter_mut().zip(vh.chunks_exact(hd)) {
                    *p = *p * inv;
                    axpy(*p, vj, oi);
                }
            }
            scatter_head(&oh, bi, hh, t, d, hd, att);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<F: Real>(
    c: &BlockCache<F>,
    datt: &[F],
    b: usize,
    t: usize,
    nh: usize,
    hd: usize,
    scale: F,
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let d = nh * hd;
    let mut qh = vec![F::zero(); t * hd];
    let mut kh = vec![F::zero(); t * hd];
    let mut vh = vec![F::zero(); t * hd];
    let mut doh = vec![F::zero(); t * hd];
    let mut dqh = vec![F::zero(); t * hd];
    let mut dkh = vec![F::zero(); t * hd];
    let mut dvh = vec![F::zero(); t * hd];
    let mut dp = vec![F::zero(); t];
    for bi in 0..b {
        for hh in 0..nh {
            gather_head(&c.q, bi, hh, t, d, hd, &mut qh);
            gather_head(&c.k, bi, hh, t, d, hd, &mut kh);
            gather_head(&c.v, bi, hh, t, d, hd, &mut vh);
            gather_head(datt, bi, hh, t, d, hd, &mut doh);
            dqh.fill(F::zero());
            dkh.fill(F::zero());
            dvh.fill(F::zero());
            let pblock = &c.probs[(bi * nh + hh) * t * t..][..t * t];
            for i in 0..t {
                let prow = &pblock[i * t..i * t + i + 1];
                let doi = &doh[i * hd..(i + 1) * hd];
                let mut acc = F::zero();
                for (j, &p) in prow.iter().enumerate() {
                    let s = dot(doi, &vh[j * hd..(j + 1) * hd]);
                    dp[j] = s;
                    acc = acc + p * s;
                    axpy(p, doi, &mut dvh[j * hd..(j + 1) * hd]);
                }
                let qi = &qh[i * hd..(i + 1) * hd];
                for (j, &p) in prow.iter().enumerate() {
                    let ds = p * (dp[j] - acc) * scale;
                    axpy(ds, &kh[j * hd..(j + 1) * hd], &mut dqh[i * hd..(i + 1) * hd]);
                    axpy(ds, qi, &mut dkh[j * hd..(j + 1) * hd]);
                }
            }
            scatter_head(&dqh, bi, hh, t, d, hd, dq);
            scatter_head(&dkh, bi, hh, t, d, hd, dk);
            scatter_head(&dvh, bi, hh, t, d, hd, dv);
        }
    }
}

fn check_contexts(contexts: &[&[usize]], vocab: usize, max_len: usize) -> Result<usize> {
    let m = contexts.first().map_or(0, |c| c.len());
    if contexts.iter().any(|c| c.len() != m) {
        return Err(domain("contexts in a batch must share one length"));
    }
    if m + 1 > max_len {
        return Err(domain(format!(
            "context of length {m} exceeds the model's {max_len} positions"
        )));
    }
    if let Some(&bad) = contexts.iter().flat_map(|c| c.iter()).find(|&&x| x >= vocab) {
        return Err(domain(format!("token id {bad} is outside the vocabulary of size {vocab}")));
    }
    Ok(m + 1)
}

/// Runs the decoder on `[BOS, x_1..x_m]` for every context and caches the
/// activations.
pub(crate) fn forward_cached<F: Real>(params: &ModelParams<F>, contexts: &[&[usize]]) -> Result<Cache<F>> {
    let cfg = params.config();
    let lay = params.layout();
    let t = check_contexts(contexts, cfg.vocab_size, cfg.seq_len)?;
    let b = contexts.len();
    let n = b * t;
    let (d, ff, hd, nh, v) = (cfg.d_model, cfg.d_ff, cfg.head_dim(), cfg.n_heads, cfg.vocab_size);
    let eps = F::c(cfg.norm_eps);
    let scale = F::c(1.0 / (hd as f64).sqrt());

    let tokens: Vec<usize> = contexts
        .iter()
        .flat_map(|c| std::iter::once(cfg.bos()).chain(c.iter().copied()))
        .collect();
    let mut h = vec![F::zero(); n * d];
    let emb = params.slice(lay.tok_emb, cfg.input_vocab() * d);
    for (r, &tok) in tokens.iter().enumerate() {
        h[r * d..(r + 1) * d].copy_from_slice(&emb[tok * d..(tok + 1) * d]);
    }
    if let Some(off) = lay.pos_emb {
        let pos = params.slice(off, cfg.seq_len * d);
        for r in 0..n {
            let p = r % t;
            for c in 0..d {
                h[r * d + c] = h[r * d + c] + pos[p * d + c];
            }
        }
    }
    let rope = (cfg.arch == Arch::Llama).then(|| Rope::<F>::new(t, hd, cfg.rope_base));

    let mut blocks = Vec::with_capacity(lay.blocks.len());
    for off in &lay.blocks {
        let h_in = h;
        let mut inv1 = vec![F::zero(); n];
        let mut n1 = vec![F::zero(); n * d];
        rms_forward(&h_in, params.slice(off.attn_norm, d), eps, &mut n1, &mut inv1);

        let mut q = vec![F::zero(); n * d];
        let mut k = vec![F::zero(); n * d];
        let mut vv = vec![F::zero(); n * d];
        gemm(n, d, d, &n1, false, params.slice(off.wq, d * d), false, &mut q, false);
        gemm(n, d, d, &n1, false, params.slice(off.wk, d * d), false, &mut k, false);
        gemm(n, d, d, &n1, false, params.slice(off.wv, d * d), false, &mut vv, false);
        if let Some(rope) = &rope {
            for r in 0..n {
                rope.apply(&mut q[r * d..(r + 1) * d], r % t, hd, false);
                rope.apply(&mut k[r * d..(r + 1) * d], r % t, hd, false);
            }
        }

        let mut probs = vec![F::zero(); b * nh * t * t];
        let mut att = vec![F::zero(); n * d];
        attention_forward(&q, &k, &vv, b, t, nh, hd, scale, &mut probs, &mut att);

        let mut h_mid = h_in.clone();
        gemm(n, d, d, &att, false, params.slice(off.wo, d * d), false, &mut h_mid, true);

        let mut inv2 = vec![F::zero(); n];
        let mut n2 = vec![F::zero(); n * d];
        rms_forward(&h_mid, params.slice(off.ffn_norm, d), eps, &mut n2, &mut inv2);

        let mut pre = vec![F::zero(); n * ff];
        gemm(n, d, ff, &n2, false, params.slice(off.w_in, d * ff), false, &mut pre, false);
        let (up, act): (Vec<F>, Vec<F>) = match off.w_up {
            Some(u_off) => {
                let mut up = vec![F::zero(); n * ff];
                gemm(n, d, ff, &n2, false, params.slice(u_off, d * ff), false, &mut up, false);
                let act = pre.iter().zip(&up).map(|(&g, &u)| g * sigmoid(g) * u).collect();
                (up, act)
            }
            None => (Vec::new(), pre.iter().map(|&x| gelu(x)).collect()),
        };
        let mut h_out = h_mid.clone();
        gemm(n, ff, d, &act, false, params.slice(off.w_down, ff * d), false, &mut h_out, true);
        h = h_out;

        blocks.push(BlockCache {
            h_in,
            inv1,
            n1,
            q,
            k,
            v: vv,
            probs,
            att,
            h_mid,
            inv2,
            n2,
            pre,
            up,
            act,
        });
    }

    let mut inv_f = vec![F::zero(); n];
    let mut n_f = vec![F::zero(); n * d];
    rms_forward(&h, params.slice(lay.final_norm, d), eps, &mut n_f, &mut inv_f);
    let mut logits = vec![F::zero(); n * v];
    gemm(n, d, v, &n_f, false, params.slice(lay.w_out, d * v), false, &mut logits, false);
    let lse = logits
        .chunks_exact(v)
        .map(|row| {
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.f64()));
            mx + row.iter().map(|z| (z.f64() - mx).exp()).sum::<f64>().ln()
        })
        .collect();

    Ok(Cache {
        batch: b,
        positions: t,
        tokens,
        blocks,
        h_final: h,
        inv_f,
        n_f,
        logits,
        lse,
    })
}

/// Gradient of `scale * sum_{b,l} -w[b][l] log Q(target[b][l])` for a cached
/// forward pass. Returns the (scaled) loss alongside the gradient.
pub(crate) fn backward<F: Real>(
    params: &ModelParams<F>,
    cache: &Cache<F>,
    targets: &[&[usize]],
    weights: &[Vec<f64>],
    scale: f64,
) -> Result<(f64, Gradients<F>)> {
    let cfg = params.config();
    let lay = params.layout();
    let (b, t) = (cache.batch, cache.positions);
    let n = b * t;
    let (d, ff, hd, nh, v) = (cfg.d_model, cfg.d_ff, cfg.head_dim(), cfg.n_heads, cfg.vocab_size);
    if targets.len() != b || weights.len() != b {
        return Err(domain("targets and weights must match the cached batch"));
    }
    if targets.iter().zip(weights).any(|(tg, w)| tg.len() != t || w.len() != t) {
        return Err(domain(format!("targets and weights need {t} positions per sequence")));
    }
    if let Some(&bad) = targets.iter().flat_map(|x| x.iter()).find(|&&y| y >= v) {
        return Err(domain(format!("target id {bad} is outside the vocabulary of size {v}")));
    }
    let attn_scale = F::c(1.0 / (hd as f64).sqrt());

    let mut grads = Gradients::<F>::zeros(lay.total);
    let g = &mut grads.data;

    let mut loss = 0.0;
    let mut dlogits = vec![F::zero(); n * v];
    for bi in 0..b {
        for p in 0..t {
            let w = weights[bi][p];
            if w == 0.0 {
                continue;
            }
            let r = bi * t + p;
            let y = targets[bi][p];
            let row = &cache.logits[r * v..(r + 1) * v];
            let lse = cache.lse[r];
            loss -= scale * w * (row[y].f64() - lse);
            let coef = scale * w;
            for (j, (dz, z)) in dlogits[r * v..(r + 1) * v].iter_mut().zip(row).enumerate() {
                let pj = (z.f64() - lse).exp();
                let ind = if j == y { 1.0 } else { 0.0 };
                *dz = F::c(coef * (pj - ind));
            }
        }
    }

    gemm(d, n, v, &cache.n_f, true, &dlogits, false, &mut g[lay.w_out..lay.w_out + d * v], true);
    let mut dn = vec![F::zero(); n * d];
    gemm(n, v, d, &dlogits, false, params.slice(lay.w_out, d * v), true, &mut dn, false);
    let mut dh = vec![F::zero(); n * d];
    rms_backward(
        &cache.h_final,
        params.slice(lay.final_norm, d),
        &cache.inv_f,
        &dn,
        &mut dh,
        &mut g[lay.final_norm..lay.final_norm + d],
    );

    let rope = (cfg.arch == Arch::Llama).then(|| Rope::<F>::new(t, hd, cfg.rope_base));

    for (off, c) in lay.blocks.iter().zip(&cache.blocks).rev() {
        // feed-forward: h_out = h_mid + act W_down
        gemm(ff, n, d, &c.act, true, &dh, false, &mut g[off.w_down..off.w_down + ff * d], true);
        let mut dact = vec![F::zero(); n * ff];
        gemm(n, d, ff, &dh, false, params.slice(off.w_down, ff * d), true, &mut dact, false);
        let mut dn2 = vec![F::zero(); n * d];
        match off.w_up {
            Some(u_off) => {
                let mut dpre = vec![F::zero(); n * ff];
                let mut dup = vec![F::zero(); n * ff];
                for ((((dp, du), &da), &x), &u) in dpre
                    .iter_mut()
                    .zip(dup.iter_mut())
                    .zip(&dact)
                    .zip(&c.pre)
                    .zip(&c.up)
                {
                    let s = sigmoid(x);
                    *du = da * x * s;
                    *dp = da * u * s * (F::one() + x * (F::one() - s));
                }
                gemm(d, n, ff, &c.n2, true, &dpre, false, &mut g[off.w_in..off.w_in + d * ff], true);
                gemm(d, n, ff, &c.n2, true, &dup, false, &mut g[u_off..u_off + d * ff], true);
                gemm(n, ff, d, &dpre, false, params.slice(off.w_in, d * ff), true, &mut dn2, false);
                gemm(n, ff, d, &dup, false, params.slice(u_off, d * ff), true, &mut dn2, true);
            }
            None => {
                let dpre: Vec<F> = dact.iter().zip(&c.pre).map(|(&da, &x)| da * gelu_grad(x)).collect();
                gemm(d, n, ff, &c.n2, true, &dpre, false, &mut g[off.w_in..off.w_in + d * ff], true);
                gemm(n, ff, d, &dpre, false, params.slice(off.w_in, d * ff), true, &mut dn2, false);
            }
        }
        let mut dh_mid = dh;
        rms_backward(
            &c.h_mid,
            params.slice(off.ffn_norm, d),
            &c.inv2,
            &dn2,
            &mut dh_mid,
            &mut g[off.ffn_norm..off.ffn_norm + d],
        );

        // attention: h_mid = h_in + att W_o
        gemm(d, n, d, &c.att, true, &dh_mid, false, &mut g[off.wo..off.wo + d * d], true);
        let mut datt = vec![F::zero(); n * d];
        gemm(n, d, d, &dh_mid, false, params.slice(off.wo, d * d), true, &mut datt, false);

        let mut dq = vec![F::zero(); n * d];
        let mut dk = vec![F::zero(); n * d];
        let mut dv = vec![F::zero(); n * d];
        attention_backward(c, &datt, b, t, nh, hd, attn_scale, &mut dq, &mut dk, &mut dv);
        if let Some(rope) = &rope {
            for r in 0..n {
                rope.apply(&mut dq[r * d..(r + 1) * d], r % t, hd, true);
                rope.apply(&mut dk[r * d..(r + 1) * d], r % t, hd, true);
            }
        }
        gemm(d, n, d, &c.n1, true, &dq, false, &mut g[off.wq..off.wq + d * d], true);
        gemm(d, n, d, &c.n1, true, &dk, false, &mut g[off.wk..off.wk + d * d], true);
        gemm(d, n, d, &c.n1, true, &dv, false, &mut g[off.wv..off.wv + d * d], true);
        let mut dn1 = vec![F::zero(); n * d];
        gemm(n, d, d, &dq, false, params.slice(off.wq, d * d), true, &mut dn1, false);
        gemm(n, d, d, &dk, false, params.slice(off.wk, d * d), true, &mut dn1, true);
        gemm(n, d, d, &dv, false, params.slice(off.wv, d * d), true, &mut dn1, true);
        let mut dh_in = dh_mid;
        rms_backward(
            &c.h_in,
            params.slice(off.attn_norm, d),
            &c.inv1,
            &dn1,
            &mut dh_in,
            &mut g[off.attn_norm..off.attn_norm + d],
        );
        dh = dh_in;
    }

    for (r, &tok) in cache.tokens.iter().enumerate() {
        let at = lay.tok_emb + tok * d;
        for e in 0..d {
            g[at + e] = g[at + e] + dh[r * d + e];
        }
    }
    if let Some(off) = lay.pos_emb {
        for r in 0..n {
            let at = off + (r % t) * d;
            for e in 0..d {
                g[at + e] = g[at + e] + dh[r * d + e];
            }
        }
    }
    Ok((loss, grads))
}

/// Logits at every position of `[BOS, x_1..x_m]` for each context.
pub fn forward<F: Real>(params: &ModelParams<F>, contexts: &[Vec<usize>]) -> Result<Logits<F>> {
    let refs: Vec<&[usize]> = contexts.iter().map(Vec::as_slice).collect();
    Ok(forward_cached(params, &refs)?.into_logits(params.config().vocab_size))
}

/// Splits full sequences `x_1..x_T` into model inputs `x_1..x_{T-1}` and
/// targets `x_1..x_T`.
pub(crate) fn split_sequences(sequences: &[Vec<usize>]) -> Result<(Vec<&[usize]>, Vec<&[usize]>)> {
    if sequences.iter().any(Vec::is_empty) {
        return Err(domain("training sequences must be non-empty"));
    }
    Ok(sequences
        .iter()
        .map(|s| (&s[..s.len() - 1], s.as_slice()))
        .unzip())
}

/// Per-position `log Q(x_l | x_<l)` of each full sequence.
pub fn sequence_logprobs<F: Real>(params: &ModelParams<F>, sequences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let (ctx, tgt) = split_sequences(sequences)?;
    if let Some(&bad) = tgt.iter().flat_map(|x| x.iter()).find(|&&y| y >= params.config().vocab_size) {
        return Err(domain(format!("token id {bad} is outside the vocabulary")));
    }
    let cache = forward_cached(params, &ctx)?;
    Ok(cache.target_logprobs(&tgt, params.config().vocab_size))
}

/// Weighted NLL `-(1/B) sum_b sum_l w[b][l] log Q(x_l | x_<l)` over full
/// sequences and its exact gradient.
pub fn loss_and_grads<F: Real>(
    params: &ModelParams<F>,
    sequences: &[Vec<usize>],
    weights: &crate::losses::TokenWeights,
) -> Result<(f64, Gradients<F>)> {
    if sequences.is_empty() {
        return Ok((0.0, Gradients::zeros(params.len())));
    }
    let (ctx, tgt) = split_sequences(sequences)?;
    let cache = forward_cached(params, &ctx)?;
    backward(params, &cache, &tgt, weights.rows(), 1.0 / sequences.len() as f64)
}
