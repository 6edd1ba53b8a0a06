//! Tidy plot-data export from a finished run directory.

use anyhow::{bail, Context, Result};
use std::path::Path;

/// Long-format series CSV: (series, step, value). Sources: metrics.csv
/// always; eval.json reliability bins when the run produced calibration
/// data; UA point files pass through as-is.
pub fn export_plotdata(run_dir: &Path, out_path: &Path) -> Result<()> {
    if !run_dir.is_dir() {
        bail!("run directory {} does not exist", run_dir.display());
    }
    let metrics_path = run_dir.join("metrics.csv");
    let metrics = std::fs::read_to_string(&metrics_path)
        .with_context(|| format!("missing metrics at {}", metrics_path.display()))?;
    let mut tidy = String::from("series,step,value\n");
    for (i, line) in metrics.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            continue;
        }
        let step = fields[1];
        tidy.push_str(&format!("loss,{step},{}\n", fields[2]));
        tidy.push_str(&format!("val_metric,{step},{}\n", fields[3]));
    }

    // Reliability-diagram rows for calibration-producing runs.
    let eval_path = run_dir.join("eval.json");
    if let Ok(text) = std::fs::read_to_string(&eval_path) {
        if let Ok(eval) = serde_json::from_str::<serde_json::Value>(&text) {
            if let Some(bins) = eval["reliability"].as_array() {
                for bin in bins {
                    let b = bin["bin"].as_u64().unwrap_or(0);
                    tidy.push_str(&format!(
                        "reliability_confidence,{b},{}\n",
                        bin["confidence"].as_f64().unwrap_or(0.0)
                    ));
                    tidy.push_str(&format!(
                        "reliability_accuracy,{b},{}\n",
                        bin["accuracy"].as_f64().unwrap_or(0.0)
                    ));
                }
            }
        }
    }
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out_path, tidy)?;
    Ok(())
}

/// Number of logged metric steps, used by tests for series-length checks.
pub fn metric_steps(run_dir: &Path) -> Result<usize> {
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv"))?;
    Ok(metrics.lines().count().saturating_sub(1))
}
