use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use angleforge::data::write_manifest;
use angleforge::eval::format_embeddings;
use angleforge::experiment::{evaluate_extractor, run_experiment, DatasetConfig, ExperimentConfig};
use angleforge::gradsuite::{run_suite, SuiteConfig};
use angleforge::nn::checkpoint;
use anyhow::{Context, Result};
use log::info;

use crate::artifacts::OutputDir;
use crate::compare::{CONFIG_FILE, EMBEDDINGS_FILE, REPORT_FILE};
use crate::{UsageError, VerificationFailed};

pub const EXTRACTOR_FILE: &str = "extractor.ckpt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.ckpt";

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn out_dir(cli_out: Option<&Path>, cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

pub struct GenDataArgs<'a> {
    pub config: Option<&'a Path>,
    pub preset: Option<&'a str>,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
}

/// Writes the dataset as a CSV manifest plus its summary counts.
pub fn gen_data(args: GenDataArgs<'_>) -> Result<PathBuf> {
    let (dataset_cfg, cfg_out) = match (args.config, args.preset) {
        (Some(p), None) => {
            let cfg = load_config(p)?;
            (cfg.dataset.clone(), cfg.out.clone())
        }
        (None, Some(name)) => {
            let d = DatasetConfig::synthetic_preset(name);
            d.synthetic_spec()?;
            (d, None)
        }
        _ => {
            return Err(
                UsageError("gen-data needs exactly one of --config or --preset".into()).into(),
            )
        }
    };
    let dir = args
        .out
        .map(Path::to_path_buf)
        .or(cfg_out)
        .unwrap_or_else(|| PathBuf::from("data/generated"));
    let ds = dataset_cfg.load(args.seed, Path::new("."))?;
    let mut out = OutputDir::create(&dir)?;
    out.write("manifest.csv", write_manifest(&ds).as_bytes())?;
    out.write("stats.json", &pretty(&ds.stats())?)?;
    let cfg_json = serde_json::to_string_pretty(&dataset_cfg)?;
    out.write("dataset.json", (cfg_json.clone() + "\n").as_bytes())?;
    out.finish("gen-data", &cfg_json, args.seed)?;
    info!("wrote {} samples to {}", ds.len(), dir.display());
    Ok(dir)
}

pub struct TrainArgs<'a> {
    pub configs: &'a [PathBuf],
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub dump_embeddings: bool,
    pub jobs: usize,
}

pub fn train(args: TrainArgs<'_>) -> Result<()> {
    match args.configs {
        [] => Err(UsageError("train needs at least one --config".into()).into()),
        [one] => train_one(one, args.out, args.seed, args.dump_embeddings).map(|_| ()),
        many if args.jobs <= 1 => {
            for c in many {
                train_one(
                    c,
                    sweep_out(args.out, c).as_deref(),
                    args.seed,
                    args.dump_embeddings,
                )?;
            }
            Ok(())
        }
        many => train_parallel(many, &args),
    }
}

/// Under a shared `--out`, each config of a sweep gets its own subdirectory.
fn sweep_out(out: Option<&Path>, config: &Path) -> Option<PathBuf> {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    out.map(|o| o.join(stem))
}

/// Runs each config in its own worker process, at most `jobs` at a time.
fn train_parallel(configs: &[PathBuf], args: &TrainArgs<'_>) -> Result<()> {
    let exe = std::env::current_exe()?;
    let mut pending: Vec<&PathBuf> = configs.iter().rev().collect();
    let mut running: Vec<(PathBuf, Child)> = Vec::new();
    let mut worst: Option<(i32, PathBuf)> = None;
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < args.jobs {
            let Some(c) = pending.pop() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("train").arg("--config").arg(c);
            if let Some(o) = sweep_out(args.out, c) {
                cmd.arg("--out").arg(o);
            }
            if let Some(s) = args.seed {
                cmd.arg("--seed").arg(s.to_string());
            }
            if args.dump_embeddings {
                cmd.arg("--dump-embeddings");
            }
            running.push((c.clone(), cmd.spawn()?));
        }
        let (c, mut child) = running.remove(0);
        let status = child.wait()?;
        let code = status.code().unwrap_or(2);
        if code != 0 && worst.as_ref().is_none_or(|(w, _)| code > *w) {
            worst = Some((code, c));
        }
    }
    match worst {
        None => Ok(()),
        Some((code, c)) => Err(crate::WorkerFailed {
            code,
            config: c.display().to_string(),
        }
        .into()),
    }
}

pub fn train_one(
    config: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    dump: bool,
) -> Result<PathBuf> {
    let cfg = load_config(config)?.resolved(seed);
    let dir = out_dir(out, &cfg, "runs/latest");
    info!(
        "training {} ({}) -> {}",
        config.display(),
        cfg.trainer.mode.as_str(),
        dir.display()
    );
    let result = run_experiment(&cfg, Path::new("."))?;
    let mut files = OutputDir::create(&dir)?;
    let cfg_json = cfg.to_json();
    files.write(CONFIG_FILE, (cfg_json.clone() + "\n").as_bytes())?;
    checkpoint::save(
        &files.path(EXTRACTOR_FILE),
        result.training.extractor.parameters(),
    )?;
    files.register(EXTRACTOR_FILE)?;
    if let Some(d) = &result.training.discriminator {
        checkpoint::save(&files.path(DISCRIMINATOR_FILE), d.parameters())?;
        files.register(DISCRIMINATOR_FILE)?;
    }
    files.write("train_log.csv", result.training.log.to_csv().as_bytes())?;
    files.write(
        "diagnostics.csv",
        result.training.log.diagnostics_csv().as_bytes(),
    )?;
    if cfg.trainer.verify_isolation {
        files.write("isolation_audit.json", &pretty(&result.training.audit)?)?;
    }
    files.write(REPORT_FILE, &pretty(&result.report)?)?;
    if dump {
        files.write(
            EMBEDDINGS_FILE,
            format_embeddings(&result.embeddings).as_bytes(),
        )?;
    }
    files.finish("train", &cfg_json, cfg.seed)?;
    info!(
        "done: mAP {:.4}, rank-1 {:.4}, probe {:?}",
        result.report.map,
        result.report.rank1(),
        result.report.probe_accuracy
    );
    if result.training.audit.violations > 0 {
        return Err(VerificationFailed(format!(
            "isolation audit found {} steps that altered the idle network",
            result.training.audit.violations
        ))
        .into());
    }
    Ok(dir)
}

pub fn eval(
    config: &Path,
    ckpt: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    dump: bool,
) -> Result<PathBuf> {
    let cfg = load_config(config)?.resolved(seed);
    let dataset = cfg.dataset.load(cfg.seed, Path::new("."))?;
    let mut extractor = cfg.model.build(dataset.input_dim(), cfg.trainer.seed)?;
    let stored = checkpoint::load(ckpt)
        .with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    checkpoint::restore(&stored, &mut extractor.parameters_mut()).with_context(|| {
        format!(
            "checkpoint {} does not fit the configured model and dataset",
            ckpt.display()
        )
    })?;
    let (report, embeddings) = evaluate_extractor(&extractor, &dataset, &cfg.eval, cfg.metric())?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).to_path_buf());
    let mut files = OutputDir::create(&dir)?;
    files.write(REPORT_FILE, &pretty(&report)?)?;
    if dump {
        files.write(EMBEDDINGS_FILE, format_embeddings(&embeddings).as_bytes())?;
    }
    files.finish("eval", &cfg.to_json(), cfg.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(dir)
}

pub fn gradcheck(seeds: usize) -> Result<()> {
    let cfg = SuiteConfig {
        seeds,
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg)?;
    print!("{}", report.table());
    println!("elapsed {:.2}s", report.elapsed.as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        Err(VerificationFailed(format!(
            "gradient check failed for {}",
            report.failures().join(", ")
        ))
        .into())
    }
}
