use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use prtrade::artcase;
use prtrade::multask;
use prtrade::nn::Checkpoint;
use prtrade::verify::{self, Fault, VerifyReport};

use crate::config::ExperimentConfig;
use crate::csvout::{self, ensure_dir, method_params, sig6, CsvRow};
use crate::error::CliError;

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
}

/// Trains the configured model and writes checkpoint, log and resolved
/// config into the output directory. Returns that directory.
pub fn train(args: TrainArgs<'_>) -> Result<PathBuf, CliError> {
    let mut cfg = ExperimentConfig::load_or_default(args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    cfg.validate_training()?;
    let dir = cfg.out_dir(args.out);
    ensure_dir(&dir)?;
    cfg.write_resolved(&dir)?;
    let spec = cfg.run_spec();
    log::info!(
        "training {} ({} epochs, {} samples) into {}",
        cfg.run_id(),
        spec.train.epochs,
        spec.task.dataset_size,
        dir.display()
    );
    let start = Instant::now();
    let (ck, log) = spec.train::<f32>(|m| {
        log::info!(
            "epoch {} [{}] loss {:.5} nll {:.5} kept {:.3} ({:.0}s)",
            m.epoch,
            m.method,
            m.loss,
            m.nll,
            m.kept_fraction,
            start.elapsed().as_secs_f64()
        )
    })?;
    ck.save(&dir.join(&cfg.output.checkpoint))?;
    csvout::write_train_log(&dir.join(&cfg.output.train_log), &log)?;
    Ok(dir)
}

pub struct SweepArgs<'a> {
    pub checkpoint: &'a Path,
    pub config: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub t_grid: Option<Vec<f64>>,
    pub n_samples: Option<usize>,
}

/// Samples the checkpoint at each temperature and writes one row per point.
pub fn sweep(args: SweepArgs<'_>) -> Result<PathBuf, CliError> {
    let mut cfg = ExperimentConfig::load_or_default(args.config)?;
    if let Some(seed) = args.seed {
        cfg.eval.seed = seed;
    }
    if let Some(t) = args.t_grid {
        cfg.eval.t_grid = t;
    }
    if let Some(n) = args.n_samples {
        cfg.eval.n_samples = n;
    }
    cfg.eval.validate().map_err(|e| CliError::config(format!("invalid [eval]: {e}")))?;
    let ck = load_checkpoint(args.checkpoint)?;
    let loss = ck.train.as_ref().map(|t| t.loss).unwrap_or_else(prtrade::LossSpec::nll);
    if let Some(train) = &ck.train {
        cfg.train = train.clone();
    }
    cfg.model = ck.params.config().clone();
    let run_id = cfg.run_id.clone().unwrap_or_else(|| {
        args.checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| cfg.run_id())
    });
    let reports = multask::temperature_sweep(&ck.params, &cfg.eval)?;
    let rows: Vec<CsvRow> = reports
        .iter()
        .map(|r| CsvRow {
            run_id: run_id.clone(),
            method: loss.method.to_string(),
            method_params: method_params(&loss),
            temperature: r.temperature,
            lambda: None,
            precision: r.precision,
            recall: r.recall,
            n_samples: r.n_samples,
            seed: r.seed,
        })
        .collect();
    let dir = cfg.out_dir(args.out);
    ensure_dir(&dir)?;
    cfg.write_resolved(&dir)?;
    let path = dir.join(&cfg.output.sweep_csv);
    csvout::write_rows(&path, &rows)?;
    for r in &reports {
        println!(
            "t={:<6} precision={:<9} recall={:<9} wellformed={}/{}",
            sig6(r.temperature),
            sig6(r.precision),
            sig6(r.recall),
            r.n_wellformed,
            r.n_samples
        );
    }
    Ok(path)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>, CliError> {
    Checkpoint::<f32>::load(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub struct ArtCaseArgs<'a> {
    pub config: &'a Path,
    pub out: Option<&'a Path>,
    pub t_grid: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
}

pub struct ArtCaseOutcome {
    pub csv: PathBuf,
    /// Largest |closed form − enumeration| when enumeration fit the budget.
    pub max_deviation: Option<f64>,
}

/// Closed-form PR table of the two-defect construction, cross-checked by
/// enumeration when `V^L` fits the default budget.
pub fn artcase(args: ArtCaseArgs<'_>) -> Result<ArtCaseOutcome, CliError> {
    let mut cfg = ExperimentConfig::load(args.config)?;
    let mut section = cfg
        .artcase
        .clone()
        .ok_or_else(|| CliError::config("the config has no [artcase] section"))?;
    if let Some(t) = args.t_grid {
        section.t_grid = t;
    }
    if let Some(l) = args.lambda_grid {
        section.lambda_grid = l;
    }
    let p = section.params;
    p.validate().map_err(|e| CliError::config(format!("invalid [artcase.params]: {e}")))?;
    if section.t_grid.is_empty() || section.lambda_grid.is_empty() {
        return Err(CliError::config("t_grid and lambda_grid must be non-empty"));
    }
    let label = format!(
        "V={};K={};L={};l1={};l2={};rho={};a={};epsilon={}",
        p.vocab_size,
        p.k,
        p.len,
        p.l1,
        p.l2,
        sig6(p.rho),
        sig6(p.a),
        sig6(p.epsilon)
    );
    let run_id = cfg.run_id.clone().unwrap_or_else(|| "artcase".into());
    let enumerable = (p.vocab_size as f64).powi(p.len as i32) <= prtrade::prmetrics::DEFAULT_BUDGET as f64;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut max_dev: Option<f64> = None;
    for &t in &section.t_grid {
        let exact = if enumerable {
            Some(artcase::pr_enumerated(&p, t, &section.lambda_grid)?)
        } else {
            None
        };
        for (i, &lambda) in section.lambda_grid.iter().enumerate() {
            let c = artcase::pr_closed_form(&p, t, lambda)?;
            rows.push(CsvRow {
                run_id: run_id.clone(),
                method: "artcase".into(),
                method_params: label.clone(),
                temperature: t,
                lambda: Some(lambda),
                precision: c.alpha,
                recall: c.beta,
                n_samples: 0,
                seed: 0,
            });
            if let Some(e) = &exact {
                let dev = (c.alpha - e[i].alpha).abs().max((c.beta - e[i].beta).abs());
                max_dev = Some(max_dev.map_or(dev, |m: f64| m.max(dev)));
                checks.push(vec![
                    sig6(t),
                    sig6(lambda),
                    format!("{:e}", c.alpha),
                    format!("{:e}", c.beta),
                    format!("{:e}", e[i].alpha),
                    format!("{:e}", e[i].beta),
                    format!("{dev:e}"),
                ]);
            }
        }
    }
    cfg.artcase = Some(section);
    let dir = cfg.out_dir(args.out);
    ensure_dir(&dir)?;
    cfg.write_resolved(&dir)?;
    let csv = dir.join(&cfg.output.artcase_csv);
    csvout::write_rows(&csv, &rows)?;
    match max_dev {
        Some(dev) => {
            csvout::write_table(
                &dir.join(&cfg.output.artcase_check_csv),
                &["temperature", "lambda", "alpha_closed", "beta_closed", "alpha_enum", "beta_enum", "abs_dev"],
                &checks,
            )?;
            println!("{} points; max |closed form - enumeration| = {dev:.3e}", rows.len());
        }
        None => println!("{} points; V^L too large to enumerate, no cross-check", rows.len()),
    }
    Ok(ArtCaseOutcome { csv, max_deviation: max_dev })
}

pub struct VerifyArgs<'a> {
    pub criteria: &'a [u8],
    pub fault: Option<Fault>,
    pub json: Option<&'a Path>,
}

/// Runs the oracle suite and prints one line per property.
pub fn verify(args: VerifyArgs<'_>) -> Result<VerifyReport, CliError> {
    if let Some(c) = args.criteria.iter().find(|c| !(1..=8).contains(*c)) {
        return Err(CliError::config(format!("no verification criterion {c}; choose from 1 to 8")));
    }
    if let Some(f) = args.fault {
        println!("fault injected: {f}");
    }
    let report = verify::run_verify(args.criteria, args.fault);
    for o in &report.outcomes {
        println!(
            "[{}] {} {} ({:.2}s): {}",
            o.criterion,
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.detail
        );
    }
    println!("total {:.1}s", report.seconds);
    if let Some(path) = args.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    if report.passed() {
        Ok(report)
    } else {
        let names: Vec<&str> = report.failures().map(|o| o.name.as_str()).collect();
        Err(CliError::verify(format!("verification failed: {}", names.join(", "))))
    }
}

pub struct SparsityArgs<'a> {
    /// Probe this model; the reference distribution when `None`.
    pub checkpoint: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub mass: f64,
    pub n_samples: usize,
}

/// Support-size estimate along training-distribution samples.
pub fn sparsity(args: SparsityArgs<'_>) -> Result<multask::SparsityReport, CliError> {
    let mut cfg = ExperimentConfig::load_or_default(args.config)?;
    if let Some(seed) = args.seed {
        cfg.task.seed = seed;
    }
    if args.n_samples == 0 {
        return Err(CliError::config("--n must be positive"));
    }
    cfg.task.dataset_size = args.n_samples;
    cfg.task.validate().map_err(|e| CliError::config(format!("invalid [task]: {e}")))?;
    let data = cfg.task.token_dataset()?;
    let (source, report) = match args.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            ("model", multask::sparsity_probe_model(&ck.params, &data, args.mass)?)
        }
        None => {
            let reference = multask::reference_dist(cfg.task.skew)?;
            ("reference", multask::sparsity_probe_dist(&reference, &data, args.mass)?)
        }
    };
    let rows: Vec<Vec<String>> = report
        .histogram
        .iter()
        .enumerate()
        .flat_map(|(l, counts)| {
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(move |(k, &c)| vec![source.to_string(), (l + 1).to_string(), k.to_string(), c.to_string()])
        })
        .collect();
    let dir = cfg.out_dir(args.out);
    ensure_dir(&dir)?;
    cfg.write_resolved(&dir)?;
    csvout::write_table(&dir.join(&cfg.output.sparsity_csv), &["source", "position", "tokens", "count"], &rows)?;
    println!(
        "{source}: {} samples, mass {}, geometric mean of the per-sample support size {}",
        report.n_samples,
        sig6(report.mass),
        sig6(report.geometric_mean)
    );
    Ok(report)
}
