//! Active-perception GUI grounding machinery.
//!
//! A policy looks at a screenshot, optionally crops or zooms into a region,
//! and then clicks. This crate provides everything around that loop:
//!
//! - [`tools`]: pixel-space geometry, crop/zoom image operations and the
//!   coordinate maps from tool-image space back to the original screenshot.
//! - [`reward`]: format, accuracy and spatial tool rewards.
//! - [`protocol`]: the two-stage rollout, its prompts and action grammar.
//! - [`grpo`]: group-relative advantages, the clipped surrogate and a
//!   training step for the toy policy.
//! - [`agents`]: synthetic screens, scripted policies, a trainable toy policy
//!   and an HTTP client for real multimodal model servers.
//! - [`evalharness`]: benchmark loading, scoring, aggregation, static-crop
//!   baselines and sweeps.

pub mod agents;
pub mod config;
pub mod evalharness;
pub mod grpo;
pub mod protocol;
pub mod reward;
pub mod tools;

pub use reward::{RewardBreakdown, RewardVariant, RewardWeights, TrajectoryOutcome};
pub use tools::{BBox, Image, ImageDims, Point, ToolSpec};
