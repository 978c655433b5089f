//! C ABI for the guieyes core library.
//!
//! Every fallible function returns a [`GeStatus`] and writes results through
//! out-pointers. Out-pointers are left untouched on failure. A description of
//! the last failure on the calling thread is available from
//! [`ge_last_error_message`]. Panics never cross the boundary; they surface
//! as [`GeStatus::Panic`].
//!
//! Handles ([`GeRewardWeights`], [`GeTrainer`]) are opaque. They are created
//! by `*_new`/`*_default` functions and must be released with the matching
//! `*_free`. A handle may be used from one thread at a time.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use guieyes::grpo::{clipped_term, group_advantages, StepMetrics, ToyTrainConfig, ToyTrainer};
use guieyes::protocol::{parse_action, Action, Stage};
use guieyes::reward::{center_term, total_reward};
use guieyes::tools::{coverage_fraction, map_from_zoom, map_to_tool, Extent};
use guieyes::{BBox, Point, RewardBreakdown, RewardVariant, RewardWeights, ToolSpec, TrajectoryOutcome};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The text did not parse under the action grammar.
    FormatError = 3,
    /// The trainer has completed all configured steps.
    Finished = 4,
    Internal = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GePoint {
    pub x: f64,
    pub y: f64,
}

/// Axis-aligned box in pixels, `x1 <= x2`, `y1 <= y2`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeVariant {
    Full = 0,
    CenterOnly = 1,
    OverlapOnly = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeActionKind {
    Answer = 0,
    Crop = 1,
    Zoom = 2,
}

/// A parsed action. `point` is set for answers; `center`, `width` and
/// `height` for tool calls; `scale` is 1 except for zoom.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeAction {
    pub kind: GeActionKind,
    pub point: GePoint,
    pub center: GePoint,
    pub width: f64,
    pub height: f64,
    pub scale: f64,
}

/// Reward inputs of one trajectory, in original-image pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeOutcome {
    pub format_ok: bool,
    pub used_tool: bool,
    /// Requested tool center; read when `used_tool`.
    pub tool_center: GePoint,
    /// Region the tool showed; read when `used_tool`.
    pub tool_region: GeBox,
    pub has_point: bool,
    pub point: GePoint,
    pub gt: GeBox,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeRewardBreakdown {
    pub r_format: f64,
    pub r_acc: f64,
    pub r_tool: f64,
    pub center_term: f64,
    pub overlap_term: f64,
    pub total: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeStepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub tool_rate: f64,
}

/// Opaque reward weights.
pub struct GeRewardWeights(RewardWeights);

/// Opaque toy-policy training run.
pub struct GeTrainer(ToyTrainer);

struct Fail {
    status: GeStatus,
    message: String,
}

impl Fail {
    fn new(status: GeStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn invalid(e: impl std::fmt::Display) -> Self {
        Self::new(GeStatus::InvalidArgument, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GeStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            GeStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail::new(GeStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail::new(GeStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(GeStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(GeStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

impl From<GePoint> for Point {
    fn from(p: GePoint) -> Self {
        Point::new(p.x, p.y)
    }
}

impl From<Point> for GePoint {
    fn from(p: Point) -> Self {
        GePoint { x: p.x, y: p.y }
    }
}

impl GeBox {
    fn to_bbox(self) -> Result<BBox, Fail> {
        BBox::new(self.x1, self.y1, self.x2, self.y2).map_err(Fail::invalid)
    }
}

fn variant_of(v: u32) -> Result<RewardVariant, Fail> {
    Ok(match v {
        x if x == GeVariant::Full as u32 => RewardVariant::Full,
        x if x == GeVariant::CenterOnly as u32 => RewardVariant::CenterOnly,
        x if x == GeVariant::OverlapOnly as u32 => RewardVariant::OverlapOnly,
        other => return Err(Fail::invalid(format!("unknown variant {other}"))),
    })
}

impl From<RewardBreakdown> for GeRewardBreakdown {
    fn from(b: RewardBreakdown) -> Self {
        Self {
            r_format: b.r_format,
            r_acc: b.r_acc,
            r_tool: b.r_tool,
            center_term: b.center_term,
            overlap_term: b.overlap_term,
            total: b.total,
        }
    }
}

impl From<StepMetrics> for GeStepMetrics {
    fn from(m: StepMetrics) -> Self {
        Self {
            step: m.step as u64,
            mean_reward: m.mean_reward,
            success_rate: m.success_rate,
            tool_rate: m.tool_rate,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ge_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default weights. Never null; release with [`ge_reward_weights_free`].
#[no_mangle]
pub extern "C" fn ge_reward_weights_default() -> *mut GeRewardWeights {
    Box::into_raw(Box::new(GeRewardWeights(RewardWeights::default())))
}

/// Weights from flat TOML text (`lambda_acc = 0.6` ...); unset keys keep defaults.
#[no_mangle]
pub unsafe extern "C" fn ge_reward_weights_from_toml(
    toml: *const c_char,
    out_handle: *mut *mut GeRewardWeights,
) -> GeStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let w = RewardWeights::from_toml_str(text(toml, "toml")?).map_err(Fail::invalid)?;
        *slot = Box::into_raw(Box::new(GeRewardWeights(w)));
        Ok(())
    })
}

fn weight_slot<'a>(w: &'a mut RewardWeights, name: &str) -> Result<&'a mut f64, Fail> {
    Ok(match name {
        "lambda_acc" => &mut w.lambda_acc,
        "lambda_format" => &mut w.lambda_format,
        "lambda_tool" => &mut w.lambda_tool,
        "lambda_center" => &mut w.lambda_center,
        "lambda_overlap" => &mut w.lambda_overlap,
        "alpha" => &mut w.alpha,
        "sigma_scale" => &mut w.sigma_scale,
        other => return Err(Fail::invalid(format!("unknown weight `{other}`"))),
    })
}

/// Sets one weight by name. The handle is unchanged if the result is invalid.
#[no_mangle]
pub unsafe extern "C" fn ge_reward_weights_set(
    handle: *mut GeRewardWeights,
    name: *const c_char,
    value: f64,
) -> GeStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        let mut w = h.0;
        *weight_slot(&mut w, text(name, "name")?)? = value;
        w.validate().map_err(Fail::invalid)?;
        h.0 = w;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ge_reward_weights_get(
    handle: *const GeRewardWeights,
    name: *const c_char,
    out_value: *mut f64,
) -> GeStatus {
    guard(|| {
        let mut w = arg(handle, "handle")?.0;
        let v = *weight_slot(&mut w, text(name, "name")?)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Releases weights; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ge_reward_weights_free(handle: *mut GeRewardWeights) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// `|crop ∩ gt| / |gt|`.
#[no_mangle]
pub unsafe extern "C" fn ge_coverage(crop: GeBox, gt: GeBox, out_value: *mut f64) -> GeStatus {
    guard(|| {
        let v = coverage_fraction(&crop.to_bbox()?, &gt.to_bbox()?).map_err(Fail::invalid)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Gaussian proximity of `center` to `gt` under `weights`.
#[no_mangle]
pub unsafe extern "C" fn ge_center_term(
    weights: *const GeRewardWeights,
    center: GePoint,
    gt: GeBox,
    out_value: *mut f64,
) -> GeStatus {
    guard(|| {
        let w = arg(weights, "weights")?;
        let v = center_term(center.into(), &gt.to_bbox()?, &w.0).map_err(Fail::invalid)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Tool-image point to original-image point for a region shown at scale `z`.
#[no_mangle]
pub unsafe extern "C" fn ge_map_from_tool(
    p: GePoint,
    region: GeBox,
    z: f64,
    out_point: *mut GePoint,
) -> GeStatus {
    guard(|| {
        let q = map_from_zoom(p.into(), &region.to_bbox()?, z).map_err(Fail::invalid)?;
        *out(out_point, "out_point")? = q.into();
        Ok(())
    })
}

/// Original-image point to tool-image point; inverse of [`ge_map_from_tool`].
#[no_mangle]
pub unsafe extern "C" fn ge_map_to_tool(
    p: GePoint,
    region: GeBox,
    z: f64,
    out_point: *mut GePoint,
) -> GeStatus {
    guard(|| {
        if !(z.is_finite() && z > 0.0) {
            return Err(Fail::invalid(format!("scale must be positive, got {z}")));
        }
        let q = map_to_tool(p.into(), &region.to_bbox()?, z);
        *out(out_point, "out_point")? = q.into();
        Ok(())
    })
}

/// All reward terms of one trajectory; `variant` is a [`GeVariant`] value.
/// Malformed trajectories score zero.
#[no_mangle]
pub unsafe extern "C" fn ge_total_reward(
    weights: *const GeRewardWeights,
    variant: u32,
    outcome: *const GeOutcome,
    out_reward: *mut GeRewardBreakdown,
) -> GeStatus {
    guard(|| {
        let w = arg(weights, "weights")?;
        let o = arg(outcome, "outcome")?;
        let variant = variant_of(variant)?;
        let gt = o.gt.to_bbox()?;
        let (tool, region) = if o.used_tool {
            let region = o.tool_region.to_bbox()?;
            let spec = ToolSpec::Crop {
                center: o.tool_center.into(),
                size: Extent::new(region.width(), region.height()),
            };
            (spec, Some(region))
        } else {
            (ToolSpec::NoTool, None)
        };
        let outcome = TrajectoryOutcome {
            format_ok: o.format_ok,
            tool,
            tool_region: region,
            final_point_original: o.has_point.then(|| o.point.into()),
            gt,
        };
        let b = total_reward(&outcome, &w.0, variant).map_err(Fail::invalid)?;
        *out(out_reward, "out_reward")? = b.into();
        Ok(())
    })
}

/// Parses one stage output (`stage` is 1 or 2). Returns
/// [`GeStatus::FormatError`] for text outside the grammar.
#[no_mangle]
pub unsafe extern "C" fn ge_parse_action(
    raw: *const c_char,
    stage: u8,
    out_action: *mut GeAction,
) -> GeStatus {
    guard(|| {
        let stage = match stage {
            1 => Stage::One,
            2 => Stage::Two,
            s => return Err(Fail::invalid(format!("stage must be 1 or 2, got {s}"))),
        };
        let parsed = parse_action(text(raw, "raw")?, stage)
            .map_err(|e| Fail::new(GeStatus::FormatError, e.to_string()))?;
        let origin = GePoint { x: 0.0, y: 0.0 };
        let mut a = GeAction {
            kind: GeActionKind::Answer,
            point: origin,
            center: origin,
            width: 0.0,
            height: 0.0,
            scale: 1.0,
        };
        match parsed.action {
            Action::Answer { point } => a.point = point.into(),
            Action::ToolCall { spec } => {
                let (kind, center, size, scale) = match spec {
                    ToolSpec::Crop { center, size } => (GeActionKind::Crop, center, size, 1.0),
                    ToolSpec::Zoom { center, size, scale } => (GeActionKind::Zoom, center, size, scale),
                    ToolSpec::NoTool => {
                        return Err(Fail::new(GeStatus::Internal, "tool call without a tool"))
                    }
                };
                a.kind = kind;
                a.center = center.into();
                a.width = size.w;
                a.height = size.h;
                a.scale = scale;
            }
        }
        *out(out_action, "out_action")? = a;
        Ok(())
    })
}

/// Group-normalized advantages of `n >= 2` rewards, written to `out_values[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn ge_group_advantages(
    rewards: *const f64,
    n: usize,
    out_values: *mut f64,
) -> GeStatus {
    guard(|| {
        if rewards.is_null() || out_values.is_null() {
            return Err(Fail::new(
                GeStatus::NullPointer,
                "`rewards` or `out_values` is null",
            ));
        }
        let r = std::slice::from_raw_parts(rewards, n);
        let a = group_advantages(r).map_err(Fail::invalid)?;
        std::slice::from_raw_parts_mut(out_values, n).copy_from_slice(&a);
        Ok(())
    })
}

/// `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
#[no_mangle]
pub unsafe extern "C" fn ge_clipped_term(
    rho: f64,
    advantage: f64,
    epsilon: f64,
    out_value: *mut f64,
) -> GeStatus {
    guard(|| {
        let v = clipped_term(rho, advantage, epsilon).map_err(Fail::invalid)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Starts a toy training run. `config_toml` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn ge_trainer_new(
    config_toml: *const c_char,
    seed: u64,
    out_handle: *mut *mut GeTrainer,
) -> GeStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let cfg = if config_toml.is_null() {
            ToyTrainConfig::default()
        } else {
            ToyTrainConfig::from_toml_str(text(config_toml, "config_toml")?).map_err(Fail::invalid)?
        };
        let t = ToyTrainer::new(&cfg, seed).map_err(Fail::invalid)?;
        *slot = Box::into_raw(Box::new(GeTrainer(t)));
        Ok(())
    })
}

/// One GRPO update; writes the rollout metrics. Returns
/// [`GeStatus::Finished`] once all configured steps have run.
#[no_mangle]
pub unsafe extern "C" fn ge_trainer_step(
    handle: *mut GeTrainer,
    out_metrics: *mut GeStepMetrics,
) -> GeStatus {
    guard(|| {
        let t = out(handle, "handle")?;
        let slot = out(out_metrics, "out_metrics")?;
        match t
            .0
            .step()
            .map_err(|e| Fail::new(GeStatus::Internal, e.to_string()))?
        {
            Some(m) => {
                *slot = m.into();
                Ok(())
            }
            None => Err(Fail::new(GeStatus::Finished, "all configured steps are done")),
        }
    })
}

/// Held-out metrics of the current policy.
#[no_mangle]
pub unsafe extern "C" fn ge_trainer_evaluate(
    handle: *const GeTrainer,
    out_metrics: *mut GeStepMetrics,
) -> GeStatus {
    guard(|| {
        let t = arg(handle, "handle")?;
        let m =
            t.0.evaluate()
                .map_err(|e| Fail::new(GeStatus::Internal, e.to_string()))?;
        *out(out_metrics, "out_metrics")? = m.into();
        Ok(())
    })
}

/// Releases a trainer; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ge_trainer_free(handle: *mut GeTrainer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
