//! Config-by-seed grids: one row per reward setting, mean ± std over seeds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, DatasetRecord, EvalError, EvalMode, EvalOptions};
use crate::grpo::{train_toy, ToyTrainConfig};
use crate::protocol::Policy;
use crate::reward::{RewardConfig, RewardVariant};

/// One grid row. Unset fields keep the base configuration's values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub label: String,
    pub variant: Option<RewardVariant>,
    pub lambda_acc: Option<f64>,
    pub lambda_format: Option<f64>,
    pub lambda_tool: Option<f64>,
    pub lambda_center: Option<f64>,
    pub lambda_overlap: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma_scale: Option<f64>,
}

impl SweepRow {
    pub fn apply(&self, base: &RewardConfig) -> RewardConfig {
        let mut c = *base;
        let w = &mut c.weights;
        for (slot, v) in [
            (&mut w.lambda_acc, self.lambda_acc),
            (&mut w.lambda_format, self.lambda_format),
            (&mut w.lambda_tool, self.lambda_tool),
            (&mut w.lambda_center, self.lambda_center),
            (&mut w.lambda_overlap, self.lambda_overlap),
            (&mut w.alpha, self.alpha),
            (&mut w.sigma_scale, self.sigma_scale),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(v) = self.variant {
            c.variant = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub name: String,
    #[serde(rename = "row")]
    pub rows: Vec<SweepRow>,
}

pub fn load_sweep_grid(path: impl AsRef<Path>) -> Result<SweepGrid, EvalError> {
    let grid: SweepGrid = crate::config::load_flat(path)?;
    if grid.rows.is_empty() {
        return Err(EvalError::InvalidSweep("grid has no rows".into()));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRowResult {
    pub label: String,
    pub config: RewardConfig,
    /// One entry per seed; errors annotate the cell.
    pub values: Vec<Result<f64, String>>,
    /// Over the seeds that succeeded.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single value.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub name: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRowResult>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Runs `runner` for every row and seed.
pub fn sweep(
    grid: &SweepGrid,
    base: &RewardConfig,
    seeds: &[u64],
    metric: &str,
    mut runner: impl FnMut(&RewardConfig, u64) -> Result<f64, String>,
) -> Result<SweepTable, EvalError> {
    if grid.rows.is_empty() || seeds.is_empty() {
        return Err(EvalError::InvalidSweep(
            "need at least one row and one seed".into(),
        ));
    }
    let rows = grid
        .rows
        .iter()
        .map(|row| {
            let config = row.apply(base);
            let values: Vec<Result<f64, String>> = match config.weights.validate() {
                Ok(()) => seeds.iter().map(|&s| runner(&config, s)).collect(),
                Err(e) => seeds.iter().map(|_| Err(e.to_string())).collect(),
            };
            let ok: Vec<f64> = values.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
            let (mean, std) = mean_std(&ok);
            SweepRowResult {
                label: row.label.clone(),
                config,
                values,
                mean,
                std,
            }
        })
        .collect();
    Ok(SweepTable {
        name: grid.name.clone(),
        metric: metric.to_owned(),
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Final held-out success of a toy training run, per config and seed.
pub fn toy_training_runner(base: ToyTrainConfig) -> impl FnMut(&RewardConfig, u64) -> Result<f64, String> {
    move |reward, seed| {
        let cfg = ToyTrainConfig {
            reward: reward.weights,
            variant: reward.variant,
            ..base.clone()
        };
        train_toy(&cfg, seed)
            .map(|run| run.final_eval.success_rate)
            .map_err(|e| e.to_string())
    }
}

/// Micro-averaged accuracy (as a fraction) of `policy` on `records`.
pub fn evaluation_runner<'a, P: Policy>(
    records: &'a [DatasetRecord],
    policy: &'a P,
    mode: EvalMode,
) -> impl FnMut(&RewardConfig, u64) -> Result<f64, String> + 'a {
    move |reward, seed| {
        let opts = EvalOptions {
            reward: *reward,
            ..EvalOptions::new(seed)
        };
        let (report, _) = evaluate(records, policy, mode, &opts);
        report
            .summary
            .micro_average
            .map(|a| a / 100.0)
            .ok_or_else(|| "no scored records".to_string())
    }
}

impl SweepTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# Sweep: {}\n\n{} over seeds {:?}\n\n| Config | Mean ± Std | Per seed |\n|---|---|---|\n",
            self.name, self.metric, self.seeds
        );
        for r in &self.rows {
            let summary = match (r.mean, r.std) {
                (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                _ => "n/a".into(),
            };
            let per_seed: Vec<String> = r
                .values
                .iter()
                .map(|v| match v {
                    Ok(x) => format!("{x:.4}"),
                    Err(e) => format!("error: {e}"),
                })
                .collect();
            let _ = writeln!(out, "| {} | {} | {} |", r.label, summary, per_seed.join("; "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,variant,lambda_acc,lambda_format,lambda_tool,mean,std,errors\n");
        for r in &self.rows {
            let w = &r.config.weights;
            let errors = r.values.iter().filter(|v| v.is_err()).count();
            let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| x.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.label,
                r.config.variant,
                w.lambda_acc,
                w.lambda_format,
                w.lambda_tool,
                fmt(r.mean),
                fmt(r.std),
                errors
            );
        }
        out
    }
}
