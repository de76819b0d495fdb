use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use angleforge::eval::{angular_spread, parse_embeddings, AngularSpread, EvalReport};
use angleforge::experiment::ExperimentConfig;
use angleforge::losses::EmbeddingLoss;
use anyhow::{Context, Result};

use crate::UsageError;

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run: String,
    pub mode: String,
    pub loss: String,
    pub margin: f64,
    pub map: f64,
    pub rank1: f64,
    pub probe_accuracy: Option<f64>,
    pub spread: Option<AngularSpread>,
}

pub fn load_run(dir: &Path) -> Result<RunRow> {
    let report_path = dir.join(REPORT_FILE);
    let report: EvalReport = serde_json::from_str(
        &fs::read_to_string(&report_path)
            .map_err(|e| UsageError(format!("missing report {}: {e}", report_path.display())))?,
    )
    .with_context(|| format!("malformed report {}", report_path.display()))?;
    let cfg =
        ExperimentConfig::from_json(&fs::read_to_string(dir.join(CONFIG_FILE)).map_err(|e| {
            UsageError(format!(
                "missing config {}: {e}",
                dir.join(CONFIG_FILE).display()
            ))
        })?)?;
    let kind = cfg.trainer.loss_kind();
    let loss = cfg.loss();
    let margin = match kind {
        EmbeddingLoss::Euclidean => loss.euclidean_margin,
        _ => loss.angular_margin,
    };
    let emb = dir.join(EMBEDDINGS_FILE);
    let spread = if emb.exists() {
        Some(angular_spread(&parse_embeddings(&fs::read_to_string(
            &emb,
        )?)?)?)
    } else {
        None
    };
    Ok(RunRow {
        run: dir.display().to_string(),
        mode: cfg.trainer.mode.as_str().to_string(),
        loss: serde_json::to_value(kind)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        margin,
        map: report.map,
        rank1: report.rank1(),
        probe_accuracy: report.probe_accuracy,
        spread,
    })
}

fn best_index(values: impl Iterator<Item = Option<f64>>, higher: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            let better = best.is_none_or(|(_, b)| if higher { v > b } else { v < b });
            if better {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per run with the best mAP, best rank-1 and lowest probe accuracy
/// flagged. The spread columns are filled when a run dumped embeddings.
pub fn comparison_csv(rows: &[RunRow]) -> String {
    let best_map = best_index(rows.iter().map(|r| Some(r.map)), true);
    let best_r1 = best_index(rows.iter().map(|r| Some(r.rank1)), true);
    let best_probe = best_index(rows.iter().map(|r| r.probe_accuracy), false);
    let mut s = String::from(
        "run,mode,loss,margin,map,rank1,probe_accuracy,within_class_deviation,between_centroid_separation,best_map,best_rank1,lowest_probe\n",
    );
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{},{},{},{},{},{}",
            r.run,
            r.mode,
            r.loss,
            r.margin,
            r.map,
            r.rank1,
            opt(r.probe_accuracy),
            opt(r.spread.as_ref().map(|s| s.within_class_mean_deviation)),
            opt(r
                .spread
                .as_ref()
                .map(|s| s.between_centroid_mean_separation)),
            u8::from(best_map == Some(i)),
            u8::from(best_r1 == Some(i)),
            u8::from(best_probe == Some(i)),
        );
    }
    s
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<String> {
    if dirs.len() < 2 {
        return Err(UsageError(format!(
            "compare needs at least 2 run directories, got {}",
            dirs.len()
        ))
        .into());
    }
    let rows = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(comparison_csv(&rows))
}
