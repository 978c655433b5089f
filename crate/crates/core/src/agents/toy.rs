//! A linear-softmax policy over a coarse grid.
//!
//! The visible image is split into `G x G` cells and each cell gets one
//! feature: its count of target-colored pixels relative to the best cell (so
//! the most-covered cell reads 1 and cells without the color read 0). Two
//! location heads (one per stage) map the `G²` features to `G²` cell logits
//! through a weight matrix; stage 1 additionally samples a direct-vs-crop
//! decision from two free logits. Every emitted point is a cell center, and a
//! crop always spans `crop_fraction` of the visible image per side.
//!
//! The weight matrix is either a free `G² x G²` matrix or tied so that
//! `W[j, k]` depends only on the grid offset between cells `j` and `k`
//! (`(2G-1)²` parameters, a convolution). Tying lets one screen teach every
//! position, which is what makes short training runs work.
//!
//! Parameter layout in [`ToyPolicyParams::theta`]:
//! `[stage-1 head | tool logits (2) | stage-2 head]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::screen::{color_of, target_color_id};
use super::AgentError;
use crate::protocol::{format_action, Action, Observation, Policy, PolicyError, Reply, Stage};
use crate::tools::{Extent, Image, ImageDims, Point, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    #[default]
    Sample,
    /// Argmax of every categorical; ties go to the lowest index (direct
    /// answer before crop).
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTying {
    /// One weight per (output cell, input cell) pair.
    Full,
    /// One weight per relative offset between output and input cell.
    #[default]
    Offset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicyParams {
    pub grid: usize,
    pub crop_fraction: f64,
    pub tying: WeightTying,
    pub theta: Vec<f64>,
}

/// Index of the "crop" entry among the two tool-decision logits.
const CROP: usize = 1;

impl ToyPolicyParams {
    pub fn zeros(grid: usize, crop_fraction: f64, tying: WeightTying) -> Result<Self, AgentError> {
        if grid == 0 {
            return Err(AgentError::Config("grid must be positive".into()));
        }
        if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
            return Err(AgentError::Config(format!(
                "crop fraction {crop_fraction} must lie in (0, 1]"
            )));
        }
        let head = Self::head_len_for(grid, tying);
        Ok(Self {
            grid,
            crop_fraction,
            tying,
            theta: vec![0.0; 2 * head + 2],
        })
    }

    fn head_len_for(grid: usize, tying: WeightTying) -> usize {
        match tying {
            WeightTying::Full => grid.pow(4),
            WeightTying::Offset => (2 * grid - 1).pow(2),
        }
    }

    pub fn head_len(&self) -> usize {
        Self::head_len_for(self.grid, self.tying)
    }

    /// Position of `W[j, k]` inside a head.
    pub fn weight_index(&self, j: usize, k: usize) -> usize {
        match self.tying {
            WeightTying::Full => j * self.cells() + k,
            WeightTying::Offset => {
                let g = self.grid;
                let dx = k % g + g - 1 - j % g;
                let dy = k / g + g - 1 - j / g;
                dy * (2 * g - 1) + dx
            }
        }
    }

    /// Both heads look where the target color is (`gain` on the diagonal);
    /// `crop_bias` is the crop logit relative to answering directly.
    pub fn attentive(
        grid: usize,
        crop_fraction: f64,
        tying: WeightTying,
        gain: f64,
        crop_bias: f64,
    ) -> Result<Self, AgentError> {
        let mut p = Self::zeros(grid, crop_fraction, tying)?;
        for stage in [Stage::One, Stage::Two] {
            let off = p.head_offset(stage);
            for j in 0..p.cells() {
                let i = off + p.weight_index(j, j);
                p.theta[i] = gain;
            }
        }
        let t = p.tool_offset();
        p.theta[t + CROP] = crop_bias;
        Ok(p)
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn head_offset(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => 0,
            Stage::Two => self.head_len() + 2,
        }
    }

    fn tool_offset(&self) -> usize {
        self.head_len()
    }

    pub fn tool_logits(&self) -> [f64; 2] {
        let o = self.tool_offset();
        [self.theta[o], self.theta[o + 1]]
    }

    pub fn location_logits(&self, stage: Stage, features: &[f64]) -> Vec<f64> {
        let w = &self.theta[self.head_offset(stage)..][..self.head_len()];
        let active = nonzero(features);
        (0..self.cells())
            .map(|j| active.iter().map(|&(k, f)| w[self.weight_index(j, k)] * f).sum())
            .collect()
    }

    /// Exact log-probability of `choice` given the features.
    pub fn log_prob(&self, stage: Stage, features: &[f64], choice: &ToyChoice) -> f64 {
        let loc = log_softmax(&self.location_logits(stage, features));
        let mut lp = loc[choice.cell];
        if let Some(tool) = choice.use_tool {
            lp += log_softmax(&self.tool_logits())[tool as usize];
        }
        lp
    }

    /// Adds `weight * ∇θ log π(choice)` into `out`.
    pub fn accumulate_grad_log_prob(
        &self,
        stage: Stage,
        features: &[f64],
        choice: &ToyChoice,
        weight: f64,
        out: &mut [f64],
    ) {
        let probs = softmax(&self.location_logits(stage, features));
        let off = self.head_offset(stage);
        let active = nonzero(features);
        for (j, p) in probs.iter().enumerate() {
            let coef = weight * (if j == choice.cell { 1.0 } else { 0.0 } - p);
            for &(k, f) in &active {
                out[off + self.weight_index(j, k)] += coef * f;
            }
        }
        if let Some(tool) = choice.use_tool {
            let q = softmax(&self.tool_logits());
            let o = self.tool_offset();
            for (d, qd) in q.iter().enumerate() {
                out[o + d] += weight * (if d == tool as usize { 1.0 } else { 0.0 } - qd);
            }
        }
    }

    pub fn log_prob_grad(&self, stage: Stage, features: &[f64], choice: &ToyChoice) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.len()];
        self.accumulate_grad_log_prob(stage, features, choice, 1.0, &mut g);
        (self.log_prob(stage, features, choice), g)
    }
}

fn nonzero(features: &[f64]) -> Vec<(usize, f64)> {
    features
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, f)| f != 0.0)
        .collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One atomic decision: `use_tool` is set only at stage 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyChoice {
    pub use_tool: Option<bool>,
    pub cell: usize,
}

/// Per-step record kept for training.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyStep {
    pub stage: Stage,
    pub features: Vec<f64>,
    pub choice: ToyChoice,
    pub logp: f64,
}

fn axis_cell(pos: u32, len: u32, grid: usize) -> usize {
    ((pos as u64 * grid as u64) / len as u64) as usize
}

/// Per-cell count of pixels exactly matching `rgb`, divided by the largest
/// count; cells row-major. All zeros when the color is absent.
pub fn cell_features(image: &Image, grid: usize, rgb: [u8; 3]) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let mut hits = vec![0u32; grid * grid];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        if px == rgb {
            let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
            hits[axis_cell(y, h, grid) * grid + axis_cell(x, w, grid)] += 1;
        }
    }
    let best = hits.iter().copied().max().unwrap_or(0);
    hits.iter()
        .map(|&c| if best == 0 { 0.0 } else { c as f64 / best as f64 })
        .collect()
}

/// Center of `cell` in the coordinates of an image of size `dims`.
pub fn cell_center(dims: ImageDims, grid: usize, cell: usize) -> Point {
    let (cx, cy) = (cell % grid, cell / grid);
    Point::new(
        (cx as f64 + 0.5) * dims.width as f64 / grid as f64,
        (cy as f64 + 0.5) * dims.height as f64 / grid as f64,
    )
}

pub struct ToyAct {
    pub text: String,
    pub step: ToyStep,
}

/// Chooses an action for one stage and renders it in the action grammar.
pub fn toy_act(
    params: &ToyPolicyParams,
    stage: Stage,
    features: Vec<f64>,
    dims: ImageDims,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
) -> ToyAct {
    let loc = softmax(&params.location_logits(stage, &features));
    let pick = |probs: &[f64], rng: &mut ChaCha8Rng| match mode {
        ActMode::Sample => sample(probs, rng),
        ActMode::Greedy => argmax(probs),
    };
    let use_tool = match stage {
        Stage::One => Some(pick(&softmax(&params.tool_logits()), rng) == CROP),
        Stage::Two => None,
    };
    let cell = pick(&loc, rng);
    let choice = ToyChoice { use_tool, cell };
    let center = cell_center(dims, params.grid, cell);
    let action = if use_tool == Some(true) {
        Action::ToolCall {
            spec: ToolSpec::Crop {
                center,
                size: Extent::new(
                    params.crop_fraction * dims.width as f64,
                    params.crop_fraction * dims.height as f64,
                ),
            },
        }
    } else {
        Action::Answer { point: center }
    };
    let logp = params.log_prob(stage, &features, &choice);
    ToyAct {
        text: format_action(&action),
        step: ToyStep {
            stage,
            features,
            choice,
            logp,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub params: ToyPolicyParams,
    pub mode: ActMode,
}

impl ToyPolicy {
    pub fn new(params: ToyPolicyParams, mode: ActMode) -> Self {
        Self { params, mode }
    }

    /// Target-color features of what the policy currently sees.
    pub fn observe(&self, obs: &Observation<'_>) -> Vec<f64> {
        match target_color_id(obs.instruction).and_then(color_of) {
            Some(rgb) => cell_features(obs.image, self.params.grid, rgb),
            None => vec![0.0; self.params.cells()],
        }
    }
}

impl Policy for ToyPolicy {
    type Trace = ToyStep;

    fn respond(&self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Reply<ToyStep>, PolicyError> {
        let features = self.observe(obs);
        let act = toy_act(
            &self.params,
            obs.stage,
            features,
            obs.image.dims(),
            self.mode,
            rng,
        );
        Ok(Reply {
            text: act.text,
            trace: act.step,
        })
    }
}
