//! Trajectory rewards.
//!
//! One scalar per trajectory:
//!
//! ```text
//! total  = lambda_acc * r_acc + lambda_format * r_format + lambda_tool * r_tool
//! r_tool = lambda_center * exp(-alpha * (d / sigma)^2) + lambda_overlap * |crop ∩ gt| / |gt|
//! sigma  = sigma_scale * diag(gt)
//! ```
//!
//! `d` is the distance from the chosen center to the target box (zero
//! inside). Without a tool the chosen center is the final click and the
//! overlap term is zero.

pub mod oracle;

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{self, ConfigError};
use crate::tools::{boundary_distance, coverage_fraction, BBox, Point, ToolError, ToolSpec};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("degenerate target box {0:?}: area must be positive")]
    DegenerateTarget(BBox),
    #[error("contract violation: {0}")]
    ContractViolation(&'static str),
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub lambda_acc: f64,
    pub lambda_format: f64,
    pub lambda_tool: f64,
    pub lambda_center: f64,
    pub lambda_overlap: f64,
    pub alpha: f64,
    pub sigma_scale: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_acc: 0.6,
            lambda_format: 0.1,
            lambda_tool: 0.3,
            lambda_center: 0.7,
            lambda_overlap: 0.3,
            alpha: 1.5,
            sigma_scale: 1.6,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let fields = [
            ("lambda_acc", self.lambda_acc),
            ("lambda_format", self.lambda_format),
            ("lambda_tool", self.lambda_tool),
            ("lambda_center", self.lambda_center),
            ("lambda_overlap", self.lambda_overlap),
            ("alpha", self.alpha),
            ("sigma_scale", self.sigma_scale),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(RewardError::InvalidWeights(format!(
                    "{name} = {v} must be finite and non-negative"
                )));
            }
        }
        if self.alpha == 0.0 || self.sigma_scale == 0.0 {
            return Err(RewardError::InvalidWeights(
                "alpha and sigma_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound of the total reward.
    pub fn max_total(&self) -> f64 {
        self.lambda_acc + self.lambda_format + self.lambda_tool
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RewardError> {
        let w: Self = config::parse_flat(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let w: Self = config::load_flat(path)?;
        w.validate()?;
        Ok(w)
    }
}

/// Which parts of the tool reward are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    #[default]
    Full,
    CenterOnly,
    OverlapOnly,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 3] = [
        RewardVariant::CenterOnly,
        RewardVariant::OverlapOnly,
        RewardVariant::Full,
    ];

    /// `(lambda_center, lambda_overlap)` after dropping the disabled term.
    pub fn tool_weights(self, w: &RewardWeights) -> (f64, f64) {
        match self {
            RewardVariant::Full => (w.lambda_center, w.lambda_overlap),
            RewardVariant::CenterOnly => (w.lambda_center, 0.0),
            RewardVariant::OverlapOnly => (0.0, w.lambda_overlap),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardVariant::Full => "full",
            RewardVariant::CenterOnly => "center_only",
            RewardVariant::OverlapOnly => "overlap_only",
        }
    }
}

impl std::fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(RewardVariant::Full),
            "center_only" | "center" => Ok(RewardVariant::CenterOnly),
            "overlap_only" | "overlap" => Ok(RewardVariant::OverlapOnly),
            other => Err(format!("unknown reward variant `{other}`")),
        }
    }
}

/// Weights plus the tool-reward variant: everything needed to score a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub variant: RewardVariant,
}

impl RewardConfig {
    pub fn score(&self, outcome: &TrajectoryOutcome) -> Result<RewardBreakdown, RewardError> {
        total_reward(outcome, &self.weights, self.variant)
    }
}

/// Reward inputs of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    /// Every stage the policy emitted parsed and carried a valid action.
    pub format_ok: bool,
    pub tool: ToolSpec,
    /// Region the tool actually showed, in original-image pixels.
    pub tool_region: Option<BBox>,
    /// Final click in original-image coordinates.
    pub final_point_original: Option<Point>,
    pub gt: BBox,
}

impl TrajectoryOutcome {
    pub fn malformed(tool: ToolSpec, tool_region: Option<BBox>, gt: BBox) -> Self {
        Self {
            format_ok: false,
            tool,
            tool_region,
            final_point_original: None,
            gt,
        }
    }

    pub fn direct(point: Point, gt: BBox) -> Self {
        Self {
            format_ok: true,
            tool: ToolSpec::NoTool,
            tool_region: None,
            final_point_original: Some(point),
            gt,
        }
    }

    pub fn with_tool(tool: ToolSpec, region: BBox, point: Point, gt: BBox) -> Self {
        Self {
            format_ok: true,
            tool,
            tool_region: Some(region),
            final_point_original: Some(point),
            gt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_acc: f64,
    pub r_tool: f64,
    pub center_term: f64,
    pub overlap_term: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const ZERO: RewardBreakdown = RewardBreakdown {
        r_format: 0.0,
        r_acc: 0.0,
        r_tool: 0.0,
        center_term: 0.0,
        overlap_term: 0.0,
        total: 0.0,
    };
}

/// The tool-reward part of a [`RewardBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolReward {
    pub center_term: f64,
    pub overlap_term: f64,
    pub r_tool: f64,
}

fn check_target(gt: &BBox) -> Result<(), RewardError> {
    if gt.area() > 0.0 {
        Ok(())
    } else {
        Err(RewardError::DegenerateTarget(*gt))
    }
}

/// Distance normalizer: the target diagonal scaled by `sigma_scale`.
pub fn sigma_of(gt: &BBox, w: &RewardWeights) -> Result<f64, RewardError> {
    check_target(gt)?;
    Ok(w.sigma_scale * gt.diagonal())
}

/// Gaussian proximity of `c` to the target box; 1 anywhere inside it.
pub fn center_term(c: Point, gt: &BBox, w: &RewardWeights) -> Result<f64, RewardError> {
    let sigma = sigma_of(gt, w)?;
    let d = boundary_distance(c, gt)?;
    let r = d / sigma;
    Ok((-w.alpha * r * r).exp())
}

/// Point-in-box membership shared by training accuracy and benchmark scoring.
pub fn hits_target(p: Point, gt: &BBox) -> bool {
    gt.contains(p)
}

pub fn accuracy_reward(outcome: &TrajectoryOutcome) -> f64 {
    match outcome.final_point_original {
        Some(p) if outcome.format_ok && hits_target(p, &outcome.gt) => 1.0,
        _ => 0.0,
    }
}

pub fn format_reward(outcome: &TrajectoryOutcome) -> f64 {
    if outcome.format_ok {
        1.0
    } else {
        0.0
    }
}

pub fn tool_reward(
    outcome: &TrajectoryOutcome,
    w: &RewardWeights,
    variant: RewardVariant,
) -> Result<ToolReward, RewardError> {
    check_target(&outcome.gt)?;
    let (center, overlap) = match outcome.tool.center() {
        Some(c) => {
            let region = outcome.tool_region.ok_or(RewardError::ContractViolation(
                "tool trajectory without a tool region",
            ))?;
            (
                center_term(c, &outcome.gt, w)?,
                coverage_fraction(&region, &outcome.gt)?,
            )
        }
        None => {
            let center = match outcome.final_point_original {
                Some(p) => center_term(p, &outcome.gt, w)?,
                None => 0.0,
            };
            (center, 0.0)
        }
    };
    let (lc, lo) = variant.tool_weights(w);
    Ok(ToolReward {
        center_term: center,
        overlap_term: overlap,
        r_tool: lc * center + lo * overlap,
    })
}

/// All reward terms of one trajectory. Malformed trajectories score zero on
/// every term.
pub fn total_reward(
    outcome: &TrajectoryOutcome,
    w: &RewardWeights,
    variant: RewardVariant,
) -> Result<RewardBreakdown, RewardError> {
    check_target(&outcome.gt)?;
    if !outcome.format_ok {
        return Ok(RewardBreakdown::ZERO);
    }
    let r_format = format_reward(outcome);
    let r_acc = accuracy_reward(outcome);
    let tool = tool_reward(outcome, w, variant)?;
    Ok(RewardBreakdown {
        r_format,
        r_acc,
        r_tool: tool.r_tool,
        center_term: tool.center_term,
        overlap_term: tool.overlap_term,
        total: w.lambda_acc * r_acc + w.lambda_format * r_format + w.lambda_tool * tool.r_tool,
    })
}
