//! Modular multiplication task: `a × b = (a·b) mod 97` over two-digit
//! operands, rendered as eight tokens `a1 a2 × b1 b2 = c1 c2`.
//!
//! Provides skewed dataset generation, an exact grammar check, sampled
//! precision/recall evaluation, temperature sweeps, the support-size probe,
//! and a content-addressed cache of trained models.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{Categorical, FactorizedSeqDist};
use crate::error::{domain, Error, Result};
use crate::nn::{self, Checkpoint, Decoding, EpochMetrics, ModelConfig, ModelParams, Real, TrainConfig};

pub const MODULUS: u32 = 97;
pub const TIMES: usize = 10;
pub const EQUALS: usize = 11;
pub const VOCAB: usize = 12;
pub const SEQ_LEN: usize = 8;
pub const MIN_OPERAND: u32 = 1;
pub const MAX_OPERAND: u32 = 99;
/// Operands below this value have a tens digit in the first group `0..=4`.
pub const SKEW_SPLIT: u32 = 50;
pub const DEFAULT_RECALL_DENOMINATOR: usize = 99 * 99;
pub const DEFAULT_EVAL_SAMPLES: usize = 20_000;

fn token_char(tok: usize) -> Option<char> {
    match tok {
        0..=9 => char::from_digit(tok as u32, 10),
        TIMES => Some('×'),
        EQUALS => Some('='),
        _ => None,
    }
}

/// Renders tokens as text; out-of-vocabulary tokens show as `?`.
pub fn render_tokens(tokens: &[usize]) -> String {
    tokens.iter().map(|&t| token_char(t).unwrap_or('?')).collect()
}

/// Inverse of [`render_tokens`] for in-vocabulary text. `x` and `*` are
/// accepted as spellings of `×`.
pub fn tokenize(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0'..='9' => Ok(c as usize - '0' as usize),
            '×' | 'x' | '*' => Ok(TIMES),
            '=' => Ok(EQUALS),
            other => Err(domain(format!("character {other:?} is not in the task vocabulary"))),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MulSample {
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

impl MulSample {
    pub fn new(a: u32, b: u32) -> Result<Self> {
        for x in [a, b] {
            if !(MIN_OPERAND..=MAX_OPERAND).contains(&x) {
                return Err(domain(format!("operand {x} outside [{MIN_OPERAND}, {MAX_OPERAND}]")));
            }
        }
        Ok(Self { a, b, c: a * b % MODULUS })
    }

    pub fn tokens(&self) -> Vec<usize> {
        let d = |x: u32| [(x / 10) as usize, (x % 10) as usize];
        let [a1, a2] = d(self.a);
        let [b1, b2] = d(self.b);
        let [c1, c2] = d(self.c);
        vec![a1, a2, TIMES, b1, b2, EQUALS, c1, c2]
    }
}

impl fmt::Display for MulSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}×{:02}={:02}", self.a, self.b, self.c)
    }
}

impl FromStr for MulSample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match parse_and_check(&tokenize(s)?) {
            Outcome::Correct { a, b } => MulSample::new(a, b),
            Outcome::Incorrect { .. } => Err(domain(format!("{s:?} has the wrong product"))),
            Outcome::Malformed => Err(domain(format!("{s:?} is not a well-formed equation"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Malformed,
    Incorrect { a: u32, b: u32 },
    Correct { a: u32, b: u32 },
}

/// Checks the grammar `d d × d d = d d` (operands in `[1, 99]`, result in
/// `[0, 96]`) and then the arithmetic.
pub fn parse_and_check(tokens: &[usize]) -> Outcome {
    if tokens.len() != SEQ_LEN || tokens[2] != TIMES || tokens[5] != EQUALS {
        return Outcome::Malformed;
    }
    let pair = |i: usize| -> Option<u32> {
        let (hi, lo) = (tokens[i], tokens[i + 1]);
        (hi < 10 && lo < 10).then_some((hi * 10 + lo) as u32)
    };
    let (Some(a), Some(b), Some(c)) = (pair(0), pair(3), pair(6)) else {
        return Outcome::Malformed;
    };
    if a < MIN_OPERAND || b < MIN_OPERAND || c >= MODULUS {
        return Outcome::Malformed;
    }
    if a * b % MODULUS == c {
        Outcome::Correct { a, b }
    } else {
        Outcome::Incorrect { a, b }
    }
}

/// Fraction `b_level` of first operands have tens digit in `0..=4`
/// (`a < 50`); the rest have tens digit in `5..=9`. Within a group the
/// operand is uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewSpec {
    pub b_level: f64,
}

impl SkewSpec {
    pub fn new(b_level: f64) -> Result<Self> {
        let s = Self { b_level };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_level > 0.0 && self.b_level <= 1.0) {
            return Err(domain(format!("b_level must lie in (0, 1], got {}", self.b_level)));
        }
        Ok(())
    }

    pub fn sample_a<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if rng.gen_bool(self.b_level) {
            rng.gen_range(MIN_OPERAND..SKEW_SPLIT)
        } else {
            rng.gen_range(SKEW_SPLIT..=MAX_OPERAND)
        }
    }

    /// Probability of first operand `a` under the skew.
    pub fn prob_a(&self, a: u32) -> f64 {
        match a {
            MIN_OPERAND..=49 => self.b_level / f64::from(SKEW_SPLIT - MIN_OPERAND),
            SKEW_SPLIT..=MAX_OPERAND => (1.0 - self.b_level) / f64::from(MAX_OPERAND + 1 - SKEW_SPLIT),
            _ => 0.0,
        }
    }
}

pub fn gen_dataset<R: Rng + ?Sized>(n: usize, skew: SkewSpec, rng: &mut R) -> Result<Vec<MulSample>> {
    if n == 0 {
        return Err(domain("dataset size must be positive"));
    }
    skew.validate()?;
    Ok((0..n)
        .map(|_| {
            let a = skew.sample_a(rng);
            let b = rng.gen_range(MIN_OPERAND..=MAX_OPERAND);
            MulSample::new(a, b).expect("operands sampled in range")
        })
        .collect())
}

/// One equation per line.
pub fn write_dataset(samples: &[MulSample], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(samples.len() * 12);
    for s in samples {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<MulSample>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| l.parse().map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// The true sequence distribution of the task under `skew`: skewed first
/// operand, uniform second operand, deterministic result.
pub fn reference_dist(skew: SkewSpec) -> Result<FactorizedSeqDist> {
    skew.validate()?;
    let point = |tok: usize| Categorical::point(VOCAB, tok).expect("token in range");
    FactorizedSeqDist::from_fn(VOCAB, SEQ_LEN, move |ctx| {
        let digits = |range: std::ops::RangeInclusive<u32>, weight: &dyn Fn(u32) -> f64, hi: Option<usize>| {
            let mut w = vec![0.0; VOCAB];
            for x in range {
                let (d1, d2) = ((x / 10) as usize, (x % 10) as usize);
                match hi {
                    None => w[d1] += weight(x),
                    Some(h) if h == d1 => w[d2] += weight(x),
                    Some(_) => {}
                }
            }
            Categorical::from_weights(w).expect("some operand has this prefix")
        };
        let prob_a = |a| skew.prob_a(a);
        let uniform_b = |_| 1.0;
        match ctx.len() {
            0 => digits(MIN_OPERAND..=MAX_OPERAND, &prob_a, None),
            1 => digits(MIN_OPERAND..=MAX_OPERAND, &prob_a, Some(ctx[0])),
            2 => point(TIMES),
            3 => digits(MIN_OPERAND..=MAX_OPERAND, &uniform_b, None),
            4 => digits(MIN_OPERAND..=MAX_OPERAND, &uniform_b, Some(ctx[3])),
            5 => point(EQUALS),
            l => {
                let a = (ctx[0] * 10 + ctx[1]) as u32;
                let b = (ctx[3] * 10 + ctx[4]) as u32;
                let c = a * b % MODULUS;
                point(if l == 6 { (c / 10) as usize } else { (c % 10) as usize })
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub temperature: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub n_wellformed: usize,
    pub n_correct: usize,
    pub unique_pairs: BTreeSet<(u32, u32)>,
    pub recall_denominator: usize,
    pub precision: f64,
    pub recall: f64,
}

impl EvalReport {
    /// Tallies generated sequences. Only correct equations contribute pairs.
    pub fn from_sequences(sequences: &[Vec<usize>], temperature: f64, seed: u64, recall_denominator: usize) -> Self {
        let mut n_wellformed = 0;
        let mut n_correct = 0;
        let mut unique_pairs = BTreeSet::new();
        for s in sequences {
            match parse_and_check(s) {
                Outcome::Malformed => {}
                Outcome::Incorrect { .. } => n_wellformed += 1,
                Outcome::Correct { a, b } => {
                    n_wellformed += 1;
                    n_correct += 1;
                    unique_pairs.insert((a, b));
                }
            }
        }
        let n = sequences.len();
        Self {
            temperature,
            seed,
            n_samples: n,
            n_wellformed,
            n_correct,
            precision: if n == 0 { 0.0 } else { n_correct as f64 / n as f64 },
            recall: unique_pairs.len() as f64 / recall_denominator as f64,
            unique_pairs,
            recall_denominator,
        }
    }
}

/// Evaluation settings shared by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_eval_samples")]
    pub n_samples: usize,
    #[serde(default = "default_decoding")]
    pub decoding: Decoding,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_recall_denominator")]
    pub recall_denominator: usize,
}

fn default_t_grid() -> Vec<f64> {
    vec![0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0]
}
fn default_eval_samples() -> usize {
    DEFAULT_EVAL_SAMPLES
}
fn default_decoding() -> Decoding {
    Decoding::Plain
}
fn default_recall_denominator() -> usize {
    DEFAULT_RECALL_DENOMINATOR
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            t_grid: default_t_grid(),
            n_samples: default_eval_samples(),
            decoding: default_decoding(),
            seed: 0,
            recall_denominator: default_recall_denominator(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(domain("t_grid must be a non-empty list of finite non-negative temperatures"));
        }
        if self.n_samples == 0 || self.recall_denominator == 0 {
            return Err(domain("n_samples and recall_denominator must be positive"));
        }
        self.decoding.validate()
    }
}

fn check_task_model<F: Real>(params: &ModelParams<F>) -> Result<()> {
    let cfg = params.config();
    if cfg.vocab_size != VOCAB || cfg.seq_len != SEQ_LEN {
        return Err(domain(format!(
            "model has V={} L={}, the task needs V={VOCAB} L={SEQ_LEN}",
            cfg.vocab_size, cfg.seq_len
        )));
    }
    Ok(())
}

/// Samples `n` equations from the model at temperature `t` and scores them.
pub fn eval_pr<F: Real>(
    params: &ModelParams<F>,
    n: usize,
    t: f64,
    decoding: Decoding,
    seed: u64,
    recall_denominator: usize,
) -> Result<EvalReport> {
    check_task_model(params)?;
    if recall_denominator == 0 {
        return Err(domain("recall_denominator must be positive"));
    }
    let seqs = nn::generate_many(params, &[], n, t, decoding, seed)?;
    Ok(EvalReport::from_sequences(&seqs, t, seed, recall_denominator))
}

/// Seed for grid point `index` of a sweep seeded by `seed`.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - index as u64);
    rng.gen()
}

/// [`eval_pr`] at every temperature of the grid, each with its own seed.
pub fn temperature_sweep<F: Real>(params: &ModelParams<F>, eval: &EvalConfig) -> Result<Vec<EvalReport>> {
    eval.validate()?;
    eval.t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            eval_pr(
                params,
                eval.n_samples,
                t,
                eval.decoding,
                point_seed(eval.seed, i),
                eval.recall_denominator,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub mass: f64,
    /// Geometric mean over samples of the per-sample maximum token count.
    pub geometric_mean: f64,
    /// `histogram[l][k]` counts samples whose position-`l` conditional needs
    /// `k` tokens to reach `mass`.
    pub histogram: Vec<Vec<usize>>,
    pub n_samples: usize,
}

/// Support-size estimate from next-token distributions along each sample.
/// `conditionals(sample)` must return one distribution per position.
pub fn sparsity_probe_with<S>(
    samples: &[S],
    mass: f64,
    mut conditionals: impl FnMut(&S) -> Result<Vec<Categorical>>,
) -> Result<SparsityReport> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(domain(format!("mass threshold must lie in (0, 1), got {mass}")));
    }
    if samples.is_empty() {
        return Err(domain("sparsity probe needs at least one sample"));
    }
    let mut histogram: Vec<Vec<usize>> = Vec::new();
    let mut log_sum = 0.0;
    for s in samples {
        let conds = conditionals(s)?;
        if histogram.len() < conds.len() {
            histogram.resize(conds.len(), Vec::new());
        }
        let mut worst = 1;
        for (l, c) in conds.iter().enumerate() {
            let k = c.coverage_count(mass);
            if histogram[l].len() <= k {
                histogram[l].resize(k + 1, 0);
            }
            histogram[l][k] += 1;
            worst = worst.max(k);
        }
        log_sum += (worst as f64).ln();
    }
    Ok(SparsityReport {
        mass,
        geometric_mean: (log_sum / samples.len() as f64).exp(),
        histogram,
        n_samples: samples.len(),
    })
}

/// Probe against an explicit reference distribution.
pub fn sparsity_probe_dist(reference: &FactorizedSeqDist, dataset: &[Vec<usize>], mass: f64) -> Result<SparsityReport> {
    sparsity_probe_with(dataset, mass, |x| {
        if x.len() != reference.len() {
            return Err(domain("sample length differs from the distribution length"));
        }
        Ok((0..x.len()).map(|l| reference.conditional(&x[..l])).collect())
    })
}

/// Probe against a trained model's untempered conditionals.
pub fn sparsity_probe_model<F: Real>(
    params: &ModelParams<F>,
    dataset: &[Vec<usize>],
    mass: f64,
) -> Result<SparsityReport> {
    check_task_model(params)?;
    if dataset.iter().any(|x| x.len() != SEQ_LEN) {
        return Err(domain(format!("probe samples must have length {SEQ_LEN}")));
    }
    let contexts: Vec<Vec<usize>> = dataset.iter().map(|x| x[..SEQ_LEN - 1].to_vec()).collect();
    let logits = nn::forward(params, &contexts)?;
    let mut next = 0;
    sparsity_probe_with(dataset, mass, |x| {
        let b = next;
        next += 1;
        (0..x.len())
            .map(|l| Categorical::from_logits(&logits.row(b, l).iter().map(|v| v.f64()).collect::<Vec<_>>()))
            .collect()
    })
}

/// Task-level settings: dataset size, skew and dataset seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default = "default_skew")]
    pub skew: SkewSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_dataset_size() -> usize {
    25_000
}
fn default_skew() -> SkewSpec {
    SkewSpec { b_level: 0.1 }
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            dataset_size: default_dataset_size(),
            skew: default_skew(),
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(domain("dataset_size must be positive"));
        }
        self.skew.validate()
    }

    pub fn dataset(&self) -> Result<Vec<MulSample>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        gen_dataset(self.dataset_size, self.skew, &mut rng)
    }

    pub fn token_dataset(&self) -> Result<Vec<Vec<usize>>> {
        Ok(self.dataset()?.iter().map(MulSample::tokens).collect())
    }
}

/// Everything that determines a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Bump when a change alters what a given [`RunSpec`] trains to.
const CACHE_VERSION: u32 = 1;

impl RunSpec {
    /// The standard model on the task with one seed for data, init and
    /// shuffling.
    pub fn standard(loss: crate::losses::LossSpec, seed: u64) -> Self {
        let mut model = ModelConfig::standard(VOCAB, SEQ_LEN);
        model.seed = seed;
        Self {
            task: TaskConfig { seed, ..TaskConfig::default() },
            model,
            train: TrainConfig { loss, seed, ..TrainConfig::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.vocab_size != VOCAB || self.model.seq_len != SEQ_LEN {
            return Err(domain(format!("the task needs vocab_size={VOCAB} and seq_len={SEQ_LEN}")));
        }
        Ok(())
    }

    /// Hex digest identifying the run in a cache directory.
    pub fn cache_key(&self) -> String {
        let json = serde_json::to_vec(&(CACHE_VERSION, self)).expect("run spec serializes");
        let digest = Sha256::digest(&json);
        digest[..12].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train<F: Real>(&self, on_epoch: impl FnMut(&EpochMetrics)) -> Result<(Checkpoint<F>, Vec<EpochMetrics>)> {
        self.validate()?;
        let data = self.task.token_dataset()?;
        let mut trainer = nn::Trainer::<F>::new(&self.model, &self.train)?;
        let log = trainer.run(&data, on_epoch)?;
        let state = trainer.into_state();
        let ck = Checkpoint {
            params: state.params,
            adam: state.adam,
            train: Some(self.train.clone()),
            epoch: state.epoch,
        };
        Ok((ck, log))
    }
}

/// Trained models stored as `<key>.ckpt` with a `<key>.json` sidecar holding
/// the run spec and the training log.
#[derive(Debug, Clone)]
pub struct ModelCache {
    dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub spec: RunSpec,
    pub log: Vec<EpochMetrics>,
}

impl ModelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn checkpoint_path(&self, spec: &RunSpec) -> PathBuf {
        self.dir.join(format!("{}.ckpt", spec.cache_key()))
    }

    fn sidecar_path(&self, spec: &RunSpec) -> PathBuf {
        self.dir.join(format!("{}.json", spec.cache_key()))
    }

    pub fn get(&self, spec: &RunSpec) -> Result<Option<(Checkpoint<f32>, CacheEntry)>> {
        let (ck, side) = (self.checkpoint_path(spec), self.sidecar_path(spec));
        if !ck.exists() || !side.exists() {
            return Ok(None);
        }
        let entry: CacheEntry = serde_json::from_slice(&std::fs::read(&side)?)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", side.display())))?;
        if &entry.spec != spec {
            return Err(Error::Corrupt(format!("{} belongs to a different run", side.display())));
        }
        Ok(Some((Checkpoint::load(&ck)?, entry)))
    }

    /// Returns the cached model for `spec`, training and storing it first if
    /// needed.
    pub fn get_or_train(
        &self,
        spec: &RunSpec,
        on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<(Checkpoint<f32>, CacheEntry)> {
        if let Some(hit) = self.get(spec)? {
            return Ok(hit);
        }
        let (ck, log) = spec.train::<f32>(on_epoch)?;
        std::fs::create_dir_all(&self.dir)?;
        let entry = CacheEntry { spec: spec.clone(), log };
        let side = self.sidecar_path(spec);
        let tmp = side.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&entry).expect("entry serializes"))?;
        std::fs::rename(&tmp, &side)?;
        ck.save(&self.checkpoint_path(spec))?;
        Ok((ck, entry))
    }
}
