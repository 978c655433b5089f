//! Benchmark-style evaluation.
//!
//! Records come from a JSONL file, each run through a policy either as a
//! full two-stage episode or as a single direct query, and are scored by
//! point-in-box membership. Results are aggregated per (platform, query
//! type) and per (group, query type).

mod dataset;
mod report;
mod sweep;

pub use dataset::{
    load_dataset, load_reference_points, Dataset, DatasetRecord, LineError, Platform, RecordKey,
    ReferencePoints, UiType,
};
pub use report::{CellStats, CellTable, EvalEcho, EvalReport, EvalSummary, RecordResult};
pub use sweep::{
    evaluation_runner, load_sweep_grid, sweep, toy_training_runner, SweepGrid, SweepRow, SweepRowResult,
    SweepTable,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::{episode_rng, run_episode, run_focused_query, EpisodeRecord, Policy, Task};
use crate::reward::{hits_target, RewardConfig};
use crate::tools::{read_png, BBox, ImageDims, Point};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no valid records in {path} ({rejected} line(s) rejected)")]
    NoValidRecords { path: PathBuf, rejected: usize },
    #[error("baseline alpha {0} must lie in [0, 1]")]
    InvalidAlpha(f64),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

/// 1 iff `pred` lies inside or on `gt`; the same rule as the accuracy reward.
pub fn score_prediction(pred: Point, gt: &BBox) -> u8 {
    hits_target(pred, gt) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Two-stage episode; the policy may call a tool.
    #[default]
    Full,
    /// One answer-only query on the whole screenshot.
    Direct,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(EvalMode::Full),
            "direct" => Ok(EvalMode::Direct),
            other => Err(format!("unknown mode {other:?} (expected full or direct)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    pub reward: RewardConfig,
    /// Drop errored records from accuracy denominators instead of counting
    /// them as incorrect.
    pub exclude_errors: bool,
}

impl EvalOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            reward: RewardConfig::default(),
            exclude_errors: false,
        }
    }
}

/// RNG stream index derived from record content, so a record sees the same
/// randomness wherever it sits in the file.
fn record_stream(rec: &DatasetRecord) -> u64 {
    let mut h = Sha256::new();
    h.update(rec.image_ref.as_bytes());
    h.update([0]);
    h.update(rec.instruction.as_bytes());
    h.update([0]);
    for v in [rec.gt.x1(), rec.gt.y1(), rec.gt.x2(), rec.gt.y2()] {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// How a single record is queried.
#[derive(Debug, Clone, Copy)]
enum Query {
    Episode,
    Region(Option<BBox>),
}

fn run_record<P: Policy>(
    rec: &DatasetRecord,
    policy: &P,
    query: Query,
    opts: &EvalOptions,
) -> Result<EpisodeRecord, String> {
    let image = read_png(&rec.image).map_err(|e| format!("image {}: {e}", rec.image.display()))?;
    let task = Task {
        instruction: &rec.instruction,
        image: &image,
        gt: rec.gt,
        image_path: Some(&rec.image_ref),
    };
    let mut rng = episode_rng(opts.seed, record_stream(rec));
    let ep = match query {
        Query::Episode => run_episode(policy, &task, &opts.reward, &mut rng),
        Query::Region(region) => run_focused_query(policy, &task, region, &opts.reward, &mut rng),
    };
    ep.map(|e| e.record).map_err(|e| e.to_string())
}

fn result_of(
    rec: &DatasetRecord,
    outcome: Result<EpisodeRecord, String>,
) -> (RecordResult, Option<EpisodeRecord>) {
    let (prediction, correct, error, episode) = match outcome {
        Ok(ep) => {
            let pred = ep.outcome.final_point_original.filter(|_| ep.outcome.format_ok);
            let correct = pred.is_some_and(|p| score_prediction(p, &rec.gt) == 1);
            (pred, correct, None, Some(ep))
        }
        Err(e) => (None, false, Some(e), None),
    };
    (
        RecordResult {
            key: rec.key(),
            platform: rec.platform,
            ui_type: rec.ui_type,
            group: rec.group.clone(),
            prediction,
            correct,
            error,
        },
        episode,
    )
}

fn evaluate_with<P: Policy>(
    records: &[DatasetRecord],
    policy: &P,
    opts: &EvalOptions,
    echo: EvalEcho,
    mut query: impl FnMut(&DatasetRecord) -> Result<Query, String>,
) -> (EvalReport, Vec<EpisodeRecord>) {
    let mut results = Vec::with_capacity(records.len());
    let mut episodes = Vec::with_capacity(records.len());
    for rec in records {
        let outcome = query(rec).and_then(|q| run_record(rec, policy, q, opts));
        let (result, episode) = result_of(rec, outcome);
        results.push(result);
        episodes.extend(episode);
    }
    (EvalReport::new(echo, results, opts.exclude_errors), episodes)
}

/// Runs every record and aggregates. Also returns the episode log of every
/// record that did not error, in input order.
pub fn evaluate<P: Policy>(
    records: &[DatasetRecord],
    policy: &P,
    mode: EvalMode,
    opts: &EvalOptions,
) -> (EvalReport, Vec<EpisodeRecord>) {
    let echo = EvalEcho::new(mode_name(mode), None, opts);
    let query = match mode {
        EvalMode::Full => Query::Episode,
        EvalMode::Direct => Query::Region(None),
    };
    evaluate_with(records, policy, opts, echo, |_| Ok(query))
}

fn mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Full => "full",
        EvalMode::Direct => "direct",
    }
}

/// A box of `alpha * W` by `alpha * H` centered on `reference`, shifted as
/// needed to lie inside the image.
pub fn static_crop_region(reference: Point, alpha: f64, dims: ImageDims) -> Result<BBox, EvalError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EvalError::InvalidAlpha(alpha));
    }
    let (iw, ih) = (dims.width as f64, dims.height as f64);
    let (w, h) = (alpha * iw, alpha * ih);
    let x1 = (reference.x - w / 2.0).clamp(0.0, iw - w);
    let y1 = (reference.y - h / 2.0).clamp(0.0, ih - h);
    BBox::new(x1, y1, x1 + w, y1 + h).map_err(|_| EvalError::InvalidAlpha(alpha))
}

/// Crops a fixed fraction of the screenshot around an externally supplied
/// reference point and asks for an answer on the crop. `alpha = 0` is
/// direct evaluation.
pub fn static_crop_baseline<P: Policy>(
    records: &[DatasetRecord],
    references: &ReferencePoints,
    alpha: f64,
    policy: &P,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<EpisodeRecord>), EvalError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EvalError::InvalidAlpha(alpha));
    }
    if alpha == 0.0 {
        let (mut report, episodes) = evaluate(records, policy, EvalMode::Direct, opts);
        report.config.alpha = Some(alpha);
        return Ok((report, episodes));
    }
    let echo = EvalEcho::new("static_crop", Some(alpha), opts);
    Ok(evaluate_with(records, policy, opts, echo, |rec| {
        let reference = references
            .get(&rec.key())
            .ok_or_else(|| format!("no reference point for {:?}", rec.instruction))?;
        static_crop_region(reference, alpha, rec.dims)
            .map(|r| Query::Region(Some(r)))
            .map_err(|e| e.to_string())
    }))
}

#[cfg(test)]
mod tests;
