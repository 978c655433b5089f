//! Two-stage active-perception rollouts.
//!
//! Stage 1 sees the full screenshot and either answers or calls a tool. A
//! tool call produces a cropped (and possibly zoomed) image, and stage 2 sees
//! only that image and its own prompt, then answers in tool-image
//! coordinates. The answer is mapped back to the original screenshot and the
//! trajectory is scored.

mod grammar;
mod prompt;

pub use grammar::{format_action, parse_action, Action, FormatError, FormatErrorKind, ParsedAction};
pub use prompt::{render_prompt, PromptError, PROMPT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{RewardBreakdown, RewardConfig, RewardError, TrajectoryOutcome};
use crate::tools::{
    crop_image, crop_region, map_from_crop, map_from_zoom, snap_region, zoom_image, BBox, Image, ImageDims,
    Point, ToolError, ToolSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One,
    Two,
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(format!("stage must be 1 or 2, got {other}")),
        }
    }
}

/// The region a stage-2 image was cut from and its magnification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolMeta {
    pub region: BBox,
    pub scale: f64,
}

impl ToolMeta {
    /// Original-image coordinates of a point given in tool-image coordinates.
    pub fn to_original(&self, p: Point) -> Result<Point, ToolError> {
        if self.scale == 1.0 {
            Ok(map_from_crop(p, &self.region))
        } else {
            map_from_zoom(p, &self.region, self.scale)
        }
    }
}

/// What a policy sees at one decision step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub stage: Stage,
    pub instruction: &'a str,
    pub prompt: &'a str,
    pub image: &'a Image,
    pub tool_meta: Option<ToolMeta>,
}

pub struct Reply<T> {
    pub text: String,
    pub trace: T,
}

/// Failure to obtain an output from the policy at all. Unlike a
/// [`FormatError`] this says nothing about the policy's behavior.
#[derive(Debug, Error)]
#[error("policy failed: {0}")]
pub struct PolicyError(#[source] pub Box<dyn std::error::Error + Send + Sync>);

impl PolicyError {
    pub fn new(e: impl std::error::Error + Send + Sync + 'static) -> Self {
        Self(Box::new(e))
    }

    pub fn msg(m: impl Into<String>) -> Self {
        Self(m.into().into())
    }
}

/// Anything that maps an observation to raw text. `Trace` carries whatever
/// per-step bookkeeping the caller needs back (log-probabilities for
/// trainable policies, `()` otherwise).
pub trait Policy {
    type Trace;

    fn respond(&self, obs: &Observation<'_>, rng: &mut ChaCha8Rng)
        -> Result<Reply<Self::Trace>, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for &P {
    type Trace = P::Trace;

    fn respond(
        &self,
        obs: &Observation<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Reply<Self::Trace>, PolicyError> {
        (**self).respond(obs, rng)
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageParse {
    Ok(ParsedAction),
    Invalid(FormatError),
}

impl StageParse {
    pub fn action(&self) -> Option<&Action> {
        match self {
            StageParse::Ok(p) => Some(&p.action),
            StageParse::Invalid(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub raw: String,
    pub parsed: StageParse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub width: u32,
    pub height: u32,
}

/// Everything that happened in one episode; serialized one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instruction: String,
    pub image: ImageRef,
    pub prompt_version: String,
    pub stage1: StageRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<StageRecord>,
    /// Pixel-aligned region actually shown at stage 2.
    pub tool_region: Option<BBox>,
    pub zoom_scale: Option<f64>,
    pub outcome: TrajectoryOutcome,
    pub reward: RewardBreakdown,
    pub step_count: u8,
}

impl EpisodeRecord {
    pub fn used_tool(&self) -> bool {
        self.step_count == 2
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode records always serialize")
    }
}

pub struct Episode<T> {
    pub record: EpisodeRecord,
    /// One entry per policy call, in stage order.
    pub traces: Vec<T>,
}

/// One grounding task.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub instruction: &'a str,
    pub image: &'a Image,
    pub gt: BBox,
    pub image_path: Option<&'a str>,
}

impl<'a> Task<'a> {
    pub fn new(instruction: &'a str, image: &'a Image, gt: BBox) -> Self {
        Self {
            instruction,
            image,
            gt,
            image_path: None,
        }
    }

    fn image_ref(&self) -> ImageRef {
        ImageRef {
            path: self.image_path.map(str::to_owned),
            width: self.image.width(),
            height: self.image.height(),
        }
    }

    fn validate(&self) -> Result<(), EpisodeError> {
        if self.gt.area() <= 0.0 {
            return Err(RewardError::DegenerateTarget(self.gt).into());
        }
        Ok(())
    }
}

/// RNG stream for episode `index` of a run seeded with `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Stage2Input {
    image: Image,
    meta: ToolMeta,
}

/// Builds the stage-2 image for a tool call. `Err(detail)` means the call is
/// well-formed but cannot be executed on this screenshot.
fn execute_tool(spec: &ToolSpec, image: &Image) -> Result<Stage2Input, String> {
    let dims = image.dims();
    let region = crop_region(spec, dims).map_err(|e| e.to_string())?;
    let snapped = snap_region(&region, dims).map_err(|e| format!("tool region: {e}"))?;
    let cropped = crop_image(image, &snapped).map_err(|e| e.to_string())?;
    let scale = spec.scale().unwrap_or(1.0);
    let shown = if scale == 1.0 {
        cropped
    } else {
        zoom_image(&cropped, scale).map_err(|e| format!("zoom: {e}"))?
    };
    Ok(Stage2Input {
        image: shown,
        meta: ToolMeta {
            region: snapped,
            scale,
        },
    })
}

fn ask<P: Policy>(
    policy: &P,
    stage: Stage,
    task: &Task<'_>,
    image: &Image,
    meta: Option<ToolMeta>,
    rng: &mut ChaCha8Rng,
    traces: &mut Vec<P::Trace>,
) -> Result<(String, Result<ParsedAction, FormatError>), EpisodeError> {
    let prompt = render_prompt(stage, task.instruction, meta.as_ref(), image.dims())?;
    let obs = Observation {
        stage,
        instruction: task.instruction,
        prompt: &prompt,
        image,
        tool_meta: meta,
    };
    let reply = policy.respond(&obs, rng)?;
    traces.push(reply.trace);
    let parsed = parse_action(&reply.text, stage);
    Ok((reply.text, parsed))
}

/// Runs the full two-stage rollout.
pub fn run_episode<P: Policy>(
    policy: &P,
    task: &Task<'_>,
    reward: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Episode<P::Trace>, EpisodeError> {
    task.validate()?;
    let mut traces = Vec::with_capacity(2);
    let (raw1, parsed1) = ask(policy, Stage::One, task, task.image, None, rng, &mut traces)?;

    let mut record = EpisodeRecord {
        instruction: task.instruction.to_owned(),
        image: task.image_ref(),
        prompt_version: PROMPT_VERSION.to_owned(),
        stage1: StageRecord {
            raw: raw1,
            parsed: StageParse::Invalid(FormatError::new(FormatErrorKind::BadPayload, "")),
        },
        stage2: None,
        tool_region: None,
        zoom_scale: None,
        outcome: TrajectoryOutcome::malformed(ToolSpec::NoTool, None, task.gt),
        reward: RewardBreakdown::ZERO,
        step_count: 1,
    };

    let parsed1 = match parsed1 {
        Ok(p) => p,
        Err(e) => {
            record.stage1.parsed = StageParse::Invalid(e);
            return finish(record, traces, reward);
        }
    };

    let spec = match parsed1.action {
        Action::Answer { point } => {
            record.stage1.parsed = StageParse::Ok(parsed1);
            record.outcome = TrajectoryOutcome::direct(point, task.gt);
            return finish(record, traces, reward);
        }
        Action::ToolCall { spec } => spec,
    };

    let input = match execute_tool(&spec, task.image) {
        Ok(input) => input,
        Err(detail) => {
            record.stage1.parsed = StageParse::Invalid(FormatError::new(FormatErrorKind::BadPayload, detail));
            return finish(record, traces, reward);
        }
    };
    record.stage1.parsed = StageParse::Ok(parsed1);
    record.step_count = 2;
    record.tool_region = Some(input.meta.region);
    record.zoom_scale = match spec {
        ToolSpec::Zoom { scale, .. } => Some(scale),
        _ => None,
    };
    record.outcome = TrajectoryOutcome::malformed(spec, Some(input.meta.region), task.gt);

    let (raw2, parsed2) = ask(
        policy,
        Stage::Two,
        task,
        &input.image,
        Some(input.meta),
        rng,
        &mut traces,
    )?;
    let parsed2 = match parsed2 {
        Ok(p) => p,
        Err(e) => {
            record.stage2 = Some(StageRecord {
                raw: raw2,
                parsed: StageParse::Invalid(e),
            });
            return finish(record, traces, reward);
        }
    };
    let Action::Answer { point } = parsed2.action else {
        unreachable!("stage-2 parsing only accepts answers")
    };
    let original = input.meta.to_original(point)?;
    record.stage2 = Some(StageRecord {
        raw: raw2,
        parsed: StageParse::Ok(parsed2),
    });
    record.outcome = TrajectoryOutcome::with_tool(spec, input.meta.region, original, task.gt);
    finish(record, traces, reward)
}

/// A single answer-only query on `region` of the screenshot (the whole
/// screenshot when `region` is `None`). Used for direct evaluation and for
/// static-crop baselines, where the tool region is chosen externally.
pub fn run_focused_query<P: Policy>(
    policy: &P,
    task: &Task<'_>,
    region: Option<BBox>,
    reward: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Episode<P::Trace>, EpisodeError> {
    task.validate()?;
    let dims: ImageDims = task.image.dims();
    let (image, meta, spec) = match region {
        None => (
            task.image.clone(),
            ToolMeta {
                region: BBox::full(dims),
                scale: 1.0,
            },
            ToolSpec::NoTool,
        ),
        Some(r) => {
            let snapped = snap_region(&r.clamp_to(dims), dims)?;
            let spec = ToolSpec::Crop {
                center: r.center(),
                size: crate::tools::Extent::new(r.width(), r.height()),
            };
            (
                crop_image(task.image, &snapped)?,
                ToolMeta {
                    region: snapped,
                    scale: 1.0,
                },
                spec,
            )
        }
    };
    let mut traces = Vec::with_capacity(1);
    let (raw, parsed) = ask(policy, Stage::Two, task, &image, Some(meta), rng, &mut traces)?;
    let tool_region = spec.is_tool().then_some(meta.region);
    let (parsed, outcome) = match parsed {
        Ok(p) => {
            let Action::Answer { point } = p.action else {
                unreachable!("stage-2 parsing only accepts answers")
            };
            let original = meta.to_original(point)?;
            let outcome = match tool_region {
                Some(r) => TrajectoryOutcome::with_tool(spec, r, original, task.gt),
                None => TrajectoryOutcome::direct(original, task.gt),
            };
            (StageParse::Ok(p), outcome)
        }
        Err(e) => (
            StageParse::Invalid(e),
            TrajectoryOutcome::malformed(spec, tool_region, task.gt),
        ),
    };
    let record = EpisodeRecord {
        instruction: task.instruction.to_owned(),
        image: task.image_ref(),
        prompt_version: PROMPT_VERSION.to_owned(),
        stage1: StageRecord { raw, parsed },
        stage2: None,
        tool_region,
        zoom_scale: None,
        outcome,
        reward: RewardBreakdown::ZERO,
        step_count: 1,
    };
    finish(record, traces, reward)
}

fn finish<T>(
    mut record: EpisodeRecord,
    traces: Vec<T>,
    reward: &RewardConfig,
) -> Result<Episode<T>, EpisodeError> {
    record.reward = reward.score(&record.outcome)?;
    Ok(Episode { record, traces })
}

#[cfg(test)]
mod tests;
