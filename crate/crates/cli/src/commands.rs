use std::io::Write;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use volo::data::SyntheticDataset;
use volo::gradcheck::{gradcheck_case, GradcheckOptions, GradcheckReport, GRADCHECK_CASES};
use volo::model::TINY;
use volo::oracle::{oracle_case, OracleReport, ORACLE_CASES};
use volo::train::{train_toy, TrainConfig, TrainRecord, TrainSummary};
use volo::TensorError;

use crate::{load_config, thread_pool, write_csv, CliError, CliResult, Common};

fn pick_cases(requested: &[String], known: &[&'static str]) -> CliResult<Vec<&'static str>> {
    if requested.is_empty() {
        return Ok(known.to_vec());
    }
    requested
        .iter()
        .map(|r| {
            known
                .iter()
                .find(|k| **k == r.as_str())
                .copied()
                .ok_or_else(|| CliError::Usage(format!("unknown case '{r}' (expected one of {})", known.join(", "))))
        })
        .collect()
}

fn seed_range(first: u64, count: usize) -> CliResult<Vec<u64>> {
    if count == 0 {
        return Err(CliError::Usage("need at least one seed".into()));
    }
    Ok((0..count as u64).map(|i| first.wrapping_add(i)).collect())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of consecutive seeds per case, starting at --seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Restrict to these cases (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub cases: Vec<String>,
    /// Perturb the analytic gradients; every case should then fail.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

pub fn gradcheck_report(first_seed: u64, args: &GradcheckArgs) -> CliResult<GradcheckReport> {
    let cases = pick_cases(&args.cases, &GRADCHECK_CASES)?;
    let seeds = seed_range(first_seed, args.seeds)?;
    if !(args.tolerance > 0.0 && args.step > 0.0) {
        return Err(CliError::Usage("tolerance and step must be positive".into()));
    }
    let opts = GradcheckOptions {
        tolerance: args.tolerance,
        step: args.step,
        corrupt_backward: args.corrupt_backward,
    };
    let jobs: Vec<(&str, u64)> = cases.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let results = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| gradcheck_case(c, s, &opts))
            .collect::<Result<Vec<_>, TensorError>>()
    })?;
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        step: opts.step,
        seeds,
        cases: results,
    })
}

pub fn cmd_gradcheck(common: &Common, args: &GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let report = gradcheck_report(common.seed, args)?;
    if common.json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        writeln!(out, "{report}")?;
    }
    if let Some(path) = &common.csv {
        let rows: Vec<String> = report
            .cases
            .iter()
            .map(|c| format!("{},{},{},{:e},{:e},{}", c.name, c.seed, c.entries, c.max_abs_error, c.max_rel_error, c.passed))
            .collect();
        write_csv(path, "case,seed,entries,max_abs_error,max_rel_error,passed", &rows)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed = report.cases.iter().filter(|c| !c.passed).count();
        Err(CliError::Verification(format!("{failed} gradient check(s) above tolerance")))
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Number of consecutive seeds per case, starting at --seed.
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Restrict to these cases (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub cases: Vec<String>,
}

pub fn oracle_report(first_seed: u64, args: &OracleArgs) -> CliResult<OracleReport> {
    let cases = pick_cases(&args.cases, &ORACLE_CASES)?;
    let seeds = seed_range(first_seed, args.seeds)?;
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        return Err(CliError::Usage("tolerance must be non-negative".into()));
    }
    let jobs: Vec<(&str, u64)> = cases.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let results = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| oracle_case(c, s, args.tolerance))
            .collect::<Result<Vec<_>, TensorError>>()
    })?;
    Ok(OracleReport::new(args.tolerance, seeds, results))
}

pub fn cmd_oracle_check(common: &Common, args: &OracleArgs, out: &mut dyn Write) -> CliResult {
    let report = oracle_report(common.seed, args)?;
    if common.json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        writeln!(out, "{report}")?;
    }
    if let Some(path) = &common.csv {
        let rows: Vec<String> = report
            .cases
            .iter()
            .map(|c| format!("{},{},{:e},{:e},{}", c.name, c.seed, c.max_abs_error, c.max_rel_error, c.passed))
            .collect();
        write_csv(path, "case,seed,max_abs_error,max_rel_error,passed", &rows)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed = report.failures().count();
        Err(CliError::Verification(format!("{failed} oracle comparison(s) above tolerance")))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    /// Print a progress line every this many steps (0: only the summary).
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    /// Exit with status 1 when the final training accuracy is lower.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
}

/// Parameter count above which a warning is printed.
const TOY_PARAM_LIMIT: u64 = 1_000_000;
/// Largest synthetic training set, in bytes.
const TOY_DATA_LIMIT: usize = 1 << 30;

#[derive(Debug, Serialize)]
struct TrainOutput<'a> {
    model: &'a str,
    config: &'a TrainConfig,
    summary: &'a TrainSummary,
}

pub fn train_config(common: &Common, args: &TrainArgs) -> TrainConfig {
    let defaults = TrainConfig::default();
    TrainConfig {
        steps: common.steps.unwrap_or(defaults.steps),
        lr: common.lr.unwrap_or(defaults.lr),
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        seed: common.seed,
        dataset: SyntheticDataset {
            samples_per_class: args.samples_per_class,
            noise_std: args.noise,
            seed: common.seed,
            ..defaults.dataset
        },
    }
}

pub fn cmd_train_toy(common: &Common, args: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let (name, model) = match &common.config {
        Some(c) => load_config(c)?,
        None => ("tiny".to_string(), TINY),
    };
    if let Some(r) = common.resolution {
        if r != model.image_size {
            return Err(CliError::Usage(format!(
                "train-toy runs at the config's image size {}; got --resolution {r}",
                model.image_size
            )));
        }
    }
    let params = volo::param_count(&model);
    if params > TOY_PARAM_LIMIT {
        eprintln!("warning: {name} has {params} parameters; toy training is meant for small configs");
    }
    let config = train_config(common, args);
    let bytes = (model.num_classes * config.dataset.samples_per_class * model.image_size * model.image_size * 3)
        .saturating_mul(std::mem::size_of::<f32>());
    if bytes > TOY_DATA_LIMIT {
        return Err(CliError::Usage(format!(
            "the synthetic set for {name} ({} classes at {}px) needs {:.1} GiB; use a smaller config",
            model.num_classes,
            model.image_size,
            bytes as f64 / (1u64 << 30) as f64
        )));
    }
    let mut io_error = None;
    let result = train_toy::<f32>(&model, &config, |r: &TrainRecord| {
        if !common.json && args.log_every > 0 && (r.step.is_multiple_of(args.log_every) || r.step + 1 == config.steps) {
            if let Err(e) = writeln!(
                out,
                "step {:>5}  loss {:.5}  batch acc {:.3}  lr {:.1e}  {:.0} ms",
                r.step, r.loss, r.train_accuracy, r.learning_rate, r.wall_clock_ms
            ) {
                io_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let (_, summary) = match result {
        Err(TensorError::Diverged { step, loss }) => {
            return Err(CliError::Verification(format!(
                "loss became {loss} at step {step}; lower --lr or check the config"
            )))
        }
        other => other?,
    };
    if common.json {
        let doc = TrainOutput {
            model: &name,
            config: &config,
            summary: &summary,
        };
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?)?;
    } else {
        writeln!(
            out,
            "{name}: {} parameters, {} steps, final training-set accuracy {:.4}",
            summary.parameters,
            summary.records.len(),
            summary.final_accuracy
        )?;
    }
    if let Some(path) = &common.csv {
        let rows: Vec<String> = summary
            .records
            .iter()
            .map(|r| format!("{},{},{},{},{:.3}", r.step, r.loss, r.train_accuracy, r.learning_rate, r.wall_clock_ms))
            .collect();
        write_csv(path, "step,loss,train_accuracy,learning_rate,wall_clock_ms", &rows)?;
    }
    match args.min_accuracy {
        Some(min) if summary.final_accuracy < min => Err(CliError::Verification(format!(
            "final accuracy {:.4} below {min}",
            summary.final_accuracy
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
}

#[derive(Debug, Serialize)]
pub struct ClassStats {
    pub class: usize,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Serialize)]
pub struct GenDataSummary {
    pub dataset: SyntheticDataset,
    pub classes: Vec<ClassStats>,
}

pub fn cmd_gen_data(common: &Common, args: &GenDataArgs, out: &mut dyn Write) -> CliResult {
    let dataset = SyntheticDataset {
        num_classes: args.classes,
        samples_per_class: args.samples_per_class,
        image_size: common.resolution.unwrap_or(args.image_size),
        noise_std: args.noise,
        seed: common.seed,
    };
    let samples = dataset.generate::<f32>()?;
    let per = dataset.image_size * dataset.image_size * 3;
    let classes: Vec<ClassStats> = (0..dataset.num_classes)
        .map(|class| {
            let values: Vec<f64> = (0..samples.len())
                .filter(|&i| samples.labels[i] == class)
                .flat_map(|i| samples.images.data()[i * per..(i + 1) * per].iter().map(|&v| v as f64))
                .collect();
            let n = values.len().max(1) as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            ClassStats {
                class,
                samples: values.len() / per.max(1),
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    let summary = GenDataSummary { dataset, classes };
    if common.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?)?;
    } else {
        writeln!(
            out,
            "{} samples, {} classes, {}x{}x3, noise std {}, seed {}",
            samples.len(),
            dataset.num_classes,
            dataset.image_size,
            dataset.image_size,
            dataset.noise_std,
            dataset.seed
        )?;
        writeln!(out, "{:>6} {:>8} {:>10} {:>10}", "class", "samples", "mean", "std")?;
        for c in &summary.classes {
            writeln!(out, "{:>6} {:>8} {:>10.4} {:>10.4}", c.class, c.samples, c.mean, c.std)?;
        }
    }
    if let Some(path) = &common.csv {
        let header = std::iter::once("label".to_string())
            .chain((0..per).map(|i| format!("p{i}")))
            .collect::<Vec<_>>()
            .join(",");
        let rows: Vec<String> = (0..samples.len())
            .map(|i| {
                let mut row = samples.labels[i].to_string();
                for v in &samples.images.data()[i * per..(i + 1) * per] {
                    row.push(',');
                    row.push_str(&v.to_string());
                }
                row
            })
            .collect();
        write_csv(path, &header, &rows)?;
    }
    Ok(())
}
