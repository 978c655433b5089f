//! Group-relative policy optimization.
//!
//! Each prompt is rolled out `N` times. Rewards are normalized within that
//! group into advantages, and every step of a trajectory shares its
//! trajectory's advantage in a clipped importance-weighted surrogate. The toy
//! trainer ascends that surrogate with exact gradients.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    generate_screen, ActMode, AgentError, ScreenConfig, SyntheticScreen, ToyPolicy, ToyPolicyParams, ToyStep,
    WeightTying,
};
use crate::config::{self, ConfigError};
use crate::protocol::{episode_rng, run_episode, EpisodeError, EpisodeRecord, Task};
use crate::reward::{RewardConfig, RewardVariant, RewardWeights};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 trajectories, got {0}")]
    InvalidGroup(usize),
    #[error("importance ratio must be positive, got {0}")]
    InvalidRatio(f64),
    #[error("invalid GRPO configuration: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    ContractViolation(&'static str),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub type Result<T, E = GrpoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub inner_epochs: usize,
    /// Reserved; only 0 is accepted.
    pub kl_beta: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            group_size: 6,
            learning_rate: 1e-6,
            inner_epochs: 1,
            kl_beta: 0.0,
        }
    }
}

impl GrpoConfig {
    /// Defaults with the step size used for the toy policy. The update is a
    /// mean over every trajectory in the batch and features lie in [0, 1],
    /// so the toy needs a large step.
    pub fn toy() -> Self {
        Self {
            learning_rate: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if self.group_size < 2 {
            return Err(GrpoError::InvalidGroup(self.group_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.inner_epochs == 0 {
            return Err(GrpoError::InvalidConfig("inner_epochs must be at least 1".into()));
        }
        if self.kl_beta != 0.0 {
            return Err(GrpoError::InvalidConfig(
                "the KL penalty is not implemented; kl_beta must be 0".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = config::parse_flat(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Self = config::load_flat(path)?;
        c.validate()?;
        Ok(c)
    }
}

/// Groups whose population std falls below this get zero advantages.
pub const DEGENERATE_STD: f64 = 1e-8;

/// `(R_i - mean) / std` with the population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::InvalidGroup(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok(vec![0.0; n]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

fn check_ratio(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(GrpoError::InvalidRatio(rho))
    }
}

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_term(rho: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    check_ratio(rho)?;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((rho * advantage).min(clipped * advantage))
}

/// Whether [`clipped_term`] currently follows the unclipped branch, i.e.
/// whether it has a nonzero derivative in `rho`.
pub fn gradient_flows(rho: f64, advantage: f64, epsilon: f64) -> bool {
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
    rho * advantage <= clipped * advantage
}

/// Rollouts of one prompt with their rewards and per-step log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub records: Vec<EpisodeRecord>,
    pub rewards: Vec<f64>,
    /// Filled by [`Group::compute_advantages`].
    pub advantages: Option<Vec<f64>>,
    /// Per trajectory, one entry per step actually taken.
    pub logp_old: Vec<Vec<f64>>,
    pub logp_new: Option<Vec<Vec<f64>>>,
}

impl Group {
    pub fn new(rewards: Vec<f64>, logp_old: Vec<Vec<f64>>) -> Self {
        Self {
            records: Vec::new(),
            rewards,
            advantages: None,
            logp_old,
            logp_new: None,
        }
    }

    pub fn compute_advantages(&mut self) -> Result<&[f64]> {
        Ok(self.advantages.insert(group_advantages(&self.rewards)?))
    }
}

/// Mean over trajectories of the mean over that trajectory's steps of the
/// clipped term.
pub fn surrogate_objective(groups: &[Group], cfg: &GrpoConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for g in groups {
        let adv = g
            .advantages
            .as_ref()
            .ok_or(GrpoError::ContractViolation("advantages not computed"))?;
        let new = g
            .logp_new
            .as_ref()
            .ok_or(GrpoError::ContractViolation("current-policy log-probs missing"))?;
        if adv.len() != g.logp_old.len() || new.len() != g.logp_old.len() {
            return Err(GrpoError::ContractViolation("group arrays differ in length"));
        }
        for ((a, old), new) in adv.iter().zip(&g.logp_old).zip(new) {
            if old.is_empty() || old.len() != new.len() {
                return Err(GrpoError::ContractViolation("per-step log-probs mismatch"));
            }
            let mut s = 0.0;
            for (lo, ln) in old.iter().zip(new) {
                s += clipped_term((ln - lo).exp(), *a, cfg.epsilon)?;
            }
            total += s / old.len() as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(GrpoError::ContractViolation("no trajectories"));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub tool_rate: f64,
}

pub const METRICS_CSV_HEADER: &str = "step,mean_reward,success_rate,tool_rate";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.step, self.mean_reward, self.success_rate, self.tool_rate
        )
    }

    fn from_records<'a>(step: usize, records: impl IntoIterator<Item = &'a EpisodeRecord>) -> Self {
        let (mut n, mut reward, mut success, mut tool) = (0usize, 0.0, 0.0, 0.0);
        for r in records {
            n += 1;
            reward += r.reward.total;
            success += r.reward.r_acc;
            tool += if r.used_tool() { 1.0 } else { 0.0 };
        }
        let n = n.max(1) as f64;
        Self {
            step,
            mean_reward: reward / n,
            success_rate: success / n,
            tool_rate: tool / n,
        }
    }
}

struct Rollout {
    record: EpisodeRecord,
    steps: Vec<ToyStep>,
}

fn rollout_groups(
    params: &ToyPolicyParams,
    screens: &[SyntheticScreen],
    group_size: usize,
    reward: &RewardConfig,
    seed: u64,
) -> Result<Vec<Vec<Rollout>>> {
    let policy = ToyPolicy::new(params.clone(), ActMode::Sample);
    let mut groups = Vec::with_capacity(screens.len());
    for (i, screen) in screens.iter().enumerate() {
        let image = screen.render();
        let task = Task::new(&screen.instruction, &image, screen.gt);
        let mut group = Vec::with_capacity(group_size);
        for k in 0..group_size {
            let mut rng = episode_rng(seed, (i * group_size + k) as u64);
            let ep = run_episode(&policy, &task, reward, &mut rng)?;
            group.push(Rollout {
                record: ep.record,
                steps: ep.traces,
            });
        }
        groups.push(group);
    }
    Ok(groups)
}

/// One GRPO update on `params` from `group_size` rollouts per screen.
/// Returns metrics of the rollouts (sampled before the update).
pub fn train_step(
    params: &mut ToyPolicyParams,
    screens: &[SyntheticScreen],
    cfg: &GrpoConfig,
    reward: &RewardConfig,
    seed: u64,
    step: usize,
) -> Result<StepMetrics> {
    cfg.validate()?;
    if screens.is_empty() {
        return Err(GrpoError::ContractViolation("empty screen batch"));
    }
    let groups = rollout_groups(params, screens, cfg.group_size, reward, seed)?;
    let metrics = StepMetrics::from_records(step, groups.iter().flatten().map(|r| &r.record));

    let mut advantages = Vec::with_capacity(groups.len());
    for g in &groups {
        let rewards: Vec<f64> = g.iter().map(|r| r.record.reward.total).collect();
        advantages.push(group_advantages(&rewards)?);
    }
    let n_traj = (groups.len() * cfg.group_size) as f64;

    for _ in 0..cfg.inner_epochs {
        let mut grad = vec![0.0; params.len()];
        for (g, adv) in groups.iter().zip(&advantages) {
            for (r, &a) in g.iter().zip(adv) {
                if a == 0.0 {
                    continue;
                }
                let t = r.steps.len() as f64;
                for s in &r.steps {
                    let logp = params.log_prob(s.stage, &s.features, &s.choice);
                    let rho = (logp - s.logp).exp();
                    if gradient_flows(rho, a, cfg.epsilon) {
                        params.accumulate_grad_log_prob(
                            s.stage,
                            &s.features,
                            &s.choice,
                            a * rho / (n_traj * t),
                            &mut grad,
                        );
                    }
                }
            }
        }
        for (p, g) in params.theta.iter_mut().zip(&grad) {
            *p += cfg.learning_rate * g;
        }
    }
    Ok(metrics)
}

/// Surrogate value of `params` on the rollouts of a previous policy; exposed
/// so the trainer's update direction can be checked numerically.
pub fn toy_surrogate(
    params: &ToyPolicyParams,
    old_steps: &[Vec<Vec<ToyStep>>],
    rewards: &[Vec<f64>],
    cfg: &GrpoConfig,
) -> Result<f64> {
    let mut groups = Vec::with_capacity(old_steps.len());
    for (steps, r) in old_steps.iter().zip(rewards) {
        let old: Vec<Vec<f64>> = steps.iter().map(|t| t.iter().map(|s| s.logp).collect()).collect();
        let new: Vec<Vec<f64>> = steps
            .iter()
            .map(|t| {
                t.iter()
                    .map(|s| params.log_prob(s.stage, &s.features, &s.choice))
                    .collect()
            })
            .collect();
        let mut g = Group::new(r.clone(), old);
        g.compute_advantages()?;
        g.logp_new = Some(new);
        groups.push(g);
    }
    surrogate_objective(&groups, cfg)
}

/// Everything a toy training run needs. Loaded from TOML with `[grpo]`,
/// `[reward]` and `[screen]` tables next to the top-level keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainConfig {
    pub grid: usize,
    pub crop_fraction: f64,
    pub tying: WeightTying,
    pub variant: RewardVariant,
    pub steps: usize,
    pub screens_per_step: usize,
    pub eval_screens: usize,
    /// Rollouts per evaluation screen (ignored in greedy mode).
    pub eval_samples: usize,
    pub eval_mode: ActMode,
    pub grpo: GrpoConfig,
    pub reward: RewardWeights,
    pub screen: ScreenConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            crop_fraction: 0.4,
            tying: WeightTying::Offset,
            variant: RewardVariant::Full,
            steps: 75,
            screens_per_step: 4,
            eval_screens: 100,
            eval_samples: 4,
            eval_mode: ActMode::Sample,
            grpo: GrpoConfig::toy(),
            reward: RewardWeights::default(),
            screen: ScreenConfig::default(),
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        self.reward
            .validate()
            .map_err(|e| GrpoError::InvalidConfig(e.to_string()))?;
        ToyPolicyParams::zeros(self.grid, self.crop_fraction, self.tying)?;
        if self.steps == 0 || self.screens_per_step == 0 {
            return Err(GrpoError::InvalidConfig(
                "steps and screens_per_step must be positive".into(),
            ));
        }
        if self.eval_screens == 0 || self.eval_samples == 0 {
            return Err(GrpoError::InvalidConfig(
                "evaluation needs screens and samples".into(),
            ));
        }
        Ok(())
    }

    /// Number of training groups (one per screen per step).
    pub fn total_groups(&self) -> usize {
        self.steps * self.screens_per_step
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            weights: self.reward,
            variant: self.variant,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRun {
    pub seed: u64,
    pub initial: StepMetrics,
    pub final_eval: StepMetrics,
    /// Rollout metrics of every training step.
    pub history: Vec<StepMetrics>,
    pub params: ToyPolicyParams,
}

impl ToyRun {
    pub fn improvement(&self) -> f64 {
        self.final_eval.success_rate - self.initial.success_rate
    }
}

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const ROLLOUT_STREAM: u64 = 3;

fn screen_seeds(seed: u64, stream: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Held-out screens for a run seeded with `seed`.
pub fn eval_screens(seed: u64, cfg: &ToyTrainConfig) -> Result<Vec<SyntheticScreen>> {
    screen_seeds(seed, EVAL_STREAM, cfg.eval_screens)
        .into_iter()
        .map(|s| generate_screen(s, &cfg.screen).map_err(GrpoError::from))
        .collect()
}

/// Success, reward and tool rate of `params` on `screens`.
pub fn evaluate_toy(
    params: &ToyPolicyParams,
    screens: &[SyntheticScreen],
    cfg: &ToyTrainConfig,
    seed: u64,
    step: usize,
) -> Result<StepMetrics> {
    let policy = ToyPolicy::new(params.clone(), cfg.eval_mode);
    let samples = match cfg.eval_mode {
        ActMode::Sample => cfg.eval_samples,
        ActMode::Greedy => 1,
    };
    let reward = cfg.reward_config();
    let mut records = Vec::with_capacity(screens.len() * samples);
    for (i, screen) in screens.iter().enumerate() {
        let image = screen.render();
        let task = Task::new(&screen.instruction, &image, screen.gt);
        for k in 0..samples {
            let mut rng = episode_rng(seed ^ EVAL_STREAM.rotate_right(8), (i * samples + k) as u64);
            records.push(run_episode(&policy, &task, &reward, &mut rng)?.record);
        }
    }
    Ok(StepMetrics::from_records(step, &records))
}

/// A toy training run advanced one step at a time.
#[derive(Debug, Clone)]
pub struct ToyTrainer {
    cfg: ToyTrainConfig,
    seed: u64,
    params: ToyPolicyParams,
    held_out: Vec<SyntheticScreen>,
    train_seeds: Vec<u64>,
    rollout_seeds: Vec<u64>,
    history: Vec<StepMetrics>,
}

impl ToyTrainer {
    /// Starts from zero parameters.
    pub fn new(cfg: &ToyTrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: ToyPolicyParams::zeros(cfg.grid, cfg.crop_fraction, cfg.tying)?,
            held_out: eval_screens(seed, cfg)?,
            train_seeds: screen_seeds(seed, TRAIN_STREAM, cfg.total_groups()),
            rollout_seeds: screen_seeds(seed, ROLLOUT_STREAM, cfg.steps),
            history: Vec::with_capacity(cfg.steps),
            cfg: cfg.clone(),
            seed,
        })
    }

    pub fn config(&self) -> &ToyTrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ToyPolicyParams {
        &self.params
    }

    pub fn history(&self) -> &[StepMetrics] {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done() >= self.cfg.steps
    }

    /// Runs the next update. `None` once all configured steps are done.
    pub fn step(&mut self) -> Result<Option<StepMetrics>> {
        if self.is_finished() {
            return Ok(None);
        }
        let k = self.steps_done();
        let per = self.cfg.screens_per_step;
        let screens = self.train_seeds[k * per..(k + 1) * per]
            .iter()
            .map(|&s| generate_screen(s, &self.cfg.screen))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let reward = self.cfg.reward_config();
        let m = train_step(
            &mut self.params,
            &screens,
            &self.cfg.grpo,
            &reward,
            self.rollout_seeds[k],
            k + 1,
        )?;
        self.history.push(m);
        Ok(Some(m))
    }

    /// Held-out metrics of the current parameters.
    pub fn evaluate(&self) -> Result<StepMetrics> {
        evaluate_toy(
            &self.params,
            &self.held_out,
            &self.cfg,
            self.seed,
            self.steps_done(),
        )
    }
}

/// Trains a fresh policy from zero parameters and evaluates it before and
/// after on the same held-out screens.
pub fn train_toy(cfg: &ToyTrainConfig, seed: u64) -> Result<ToyRun> {
    let mut trainer = ToyTrainer::new(cfg, seed)?;
    let initial = trainer.evaluate()?;
    while trainer.step()?.is_some() {}
    let final_eval = trainer.evaluate()?;
    Ok(ToyRun {
        seed,
        initial,
        final_eval,
        history: trainer.history,
        params: trainer.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn advantages_of_the_binary_example() {
        let a = group_advantages(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let hi = 0.5f64.sqrt();
        let lo = -2.0f64.sqrt();
        for (got, want) in a.iter().zip([hi, lo, hi, lo, hi, hi]) {
            assert!(close(*got, want, 1e-12), "{got} vs {want}");
        }
        assert_eq!(group_advantages(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn degenerate_and_tiny_groups() {
        assert_eq!(group_advantages(&[0.3; 6]).unwrap(), vec![0.0; 6]);
        assert!(matches!(
            group_advantages(&[1.0]),
            Err(GrpoError::InvalidGroup(1))
        ));
        assert!(matches!(group_advantages(&[]), Err(GrpoError::InvalidGroup(0))));
    }

    #[test]
    fn clipped_term_examples() {
        assert!(close(clipped_term(1.5, 1.0, 0.2).unwrap(), 1.2, 1e-15));
        assert_eq!(clipped_term(1.0, -3.7, 0.2).unwrap(), -3.7);
        assert!(close(clipped_term(0.5, -2.0, 0.2).unwrap(), -1.6, 1e-15));
        assert!(matches!(
            clipped_term(0.0, 1.0, 0.2),
            Err(GrpoError::InvalidRatio(_))
        ));
        assert!(matches!(
            clipped_term(-1.0, 1.0, 0.2),
            Err(GrpoError::InvalidRatio(_))
        ));
    }

    #[test]
    fn surrogate_examples() {
        let cfg = GrpoConfig::default();
        let mut g = Group::new(vec![1.0, 0.0], vec![vec![0.0, 0.0], vec![0.0]]);
        g.advantages = Some(vec![1.0, -1.0]);
        g.logp_new = Some(vec![vec![1.5f64.ln(), 0.9f64.ln()], vec![0.0]]);
        // (1.2 + 0.9) / 2 for the first trajectory, -1 for the second.
        let s = surrogate_objective(std::slice::from_ref(&g), &cfg).unwrap();
        assert!(close(s, (1.05 - 1.0) / 2.0, 1e-12), "{s}");

        let mut on = Group::new(vec![1.0, 0.0, 0.5], vec![vec![-1.0, -2.0]; 3]);
        on.compute_advantages().unwrap();
        on.logp_new = Some(on.logp_old.clone());
        assert!(surrogate_objective(&[on], &cfg).unwrap().abs() < 1e-12);

        let mut flat = Group::new(vec![0.4; 4], vec![vec![-1.0]; 4]);
        flat.compute_advantages().unwrap();
        flat.logp_new = Some(vec![vec![-0.3]; 4]);
        assert_eq!(surrogate_objective(&[flat], &cfg).unwrap(), 0.0);

        let missing = Group::new(vec![1.0, 0.0], vec![vec![0.0]; 2]);
        assert!(matches!(
            surrogate_objective(&[missing], &cfg),
            Err(GrpoError::ContractViolation(_))
        ));
    }

    #[test]
    fn config_rules() {
        GrpoConfig::default().validate().unwrap();
        assert_eq!(GrpoConfig::toy().learning_rate, 2.0);
        let c = GrpoConfig::from_toml_str("epsilon = 0.1\ngroup_size = 8\n").unwrap();
        assert_eq!((c.epsilon, c.group_size, c.inner_epochs), (0.1, 8, 1));
        assert!(GrpoConfig::from_toml_str("kl_beta = 0.01").is_err());
        assert!(GrpoConfig::from_toml_str("group_size = 1").is_err());
        assert!(GrpoConfig::from_toml_str("epsilon = 0").is_err());
        assert!(GrpoConfig::from_toml_str("learning_rat = 1").is_err());

        let t = ToyTrainConfig::from_toml_str(
            "steps = 3\nvariant = \"center_only\"\n[grpo]\nlearning_rate = 0.5\n[reward]\nlambda_acc = 0.7\n",
        )
        .unwrap();
        assert_eq!(t.steps, 3);
        assert_eq!(t.variant, RewardVariant::CenterOnly);
        assert_eq!(t.grpo.learning_rate, 0.5);
        assert_eq!(t.grpo.group_size, 6);
        assert_eq!(t.reward.lambda_acc, 0.7);
        assert!(ToyTrainConfig::from_toml_str("bogus = 1").is_err());
    }

    fn small_cfg() -> ToyTrainConfig {
        ToyTrainConfig {
            steps: 2,
            screens_per_step: 2,
            eval_screens: 4,
            eval_samples: 2,
            ..ToyTrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let cfg = small_cfg();
        let screens: Vec<_> = (0..3).map(|s| generate_screen(s, &cfg.screen).unwrap()).collect();
        let mut params = ToyPolicyParams::zeros(8, 0.4, WeightTying::Offset).unwrap();
        let before = params.clone();
        let grpo = GrpoConfig {
            learning_rate: 0.0,
            ..GrpoConfig::toy()
        };
        let m = train_step(&mut params, &screens, &grpo, &RewardConfig::default(), 5, 1).unwrap();
        assert_eq!(params, before);
        assert!((0.0..=1.0).contains(&m.success_rate));
        assert!((0.0..=1.0).contains(&m.tool_rate));
    }

    /// With one inner epoch every ratio is 1, so the update is the gradient
    /// of the on-policy surrogate; check it against finite differences.
    #[test]
    fn update_is_the_surrogate_gradient() {
        let cfg = small_cfg();
        let screens: Vec<_> = (10..13)
            .map(|s| generate_screen(s, &cfg.screen).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ToyPolicyParams::zeros(4, 0.4, WeightTying::Offset).unwrap();
        for t in params.theta.iter_mut() {
            *t = (rng.next_u32() as f64 / u32::MAX as f64 - 0.5) * 2.0;
        }
        let reward = RewardConfig::default();
        let grpo = GrpoConfig {
            learning_rate: 1.0,
            ..GrpoConfig::toy()
        };
        let groups = rollout_groups(&params, &screens, grpo.group_size, &reward, 9).unwrap();
        let steps: Vec<Vec<Vec<ToyStep>>> = groups
            .iter()
            .map(|g| g.iter().map(|r| r.steps.clone()).collect())
            .collect();
        let rewards: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|r| r.record.reward.total).collect())
            .collect();

        let mut updated = params.clone();
        train_step(&mut updated, &screens, &grpo, &reward, 9, 1).unwrap();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut up = params.clone();
            up.theta[i] += h;
            let mut down = params.clone();
            down.theta[i] -= h;
            let fd = (toy_surrogate(&up, &steps, &rewards, &grpo).unwrap()
                - toy_surrogate(&down, &steps, &rewards, &grpo).unwrap())
                / (2.0 * h);
            let analytic = updated.theta[i] - params.theta[i];
            assert!(
                (fd - analytic).abs() <= 1e-4 * fd.abs().max(1e-4),
                "param {i}: fd {fd} vs update {analytic}"
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_cfg();
        let a = train_toy(&cfg, 4).unwrap();
        let b = train_toy(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 2);
        assert_eq!(a.history[1].step, 2);
    }

    #[test]
    fn metrics_csv_row() {
        let m = StepMetrics {
            step: 3,
            mean_reward: 0.5,
            success_rate: 0.25,
            tool_rate: 1.0,
        };
        assert_eq!(m.csv_row(), "3,0.5,0.25,1");
        assert_eq!(METRICS_CSV_HEADER.split(',').count(), 4);
    }

    proptest! {
        #[test]
        fn normalized_groups(rewards in prop::collection::vec(-10.0f64..10.0, 2..32)) {
            let a = group_advantages(&rewards).unwrap();
            let n = a.len() as f64;
            let mean = rewards.iter().sum::<f64>() / n;
            let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std >= DEGENERATE_STD {
                let m = a.iter().sum::<f64>() / n;
                let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() <= 1e-12);
                prop_assert!((s - 1.0).abs() <= 1e-9);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn clip_identity(rho in 1e-3f64..3.0, adv in -5.0f64..5.0, eps in 0.01f64..0.5) {
            let c = clipped_term(rho, adv, eps).unwrap();
            prop_assert!(c <= rho * adv);
            if (rho - 1.0).abs() <= eps {
                prop_assert_eq!(c, rho * adv);
            }
        }

        #[test]
        fn surrogate_ignores_reward_shift_and_scale(
            rewards in prop::collection::vec(0.0f64..1.0, 2..8),
            shift in -3.0f64..3.0,
            scale in 0.1f64..10.0,
            drift in prop::collection::vec(-0.5f64..0.5, 8),
        ) {
            let cfg = GrpoConfig::default();
            let build = |r: Vec<f64>| {
                let n = r.len();
                let mut g = Group::new(r, vec![vec![-1.0, -0.5]; n]);
                g.compute_advantages().unwrap();
                g.logp_new = Some((0..n).map(|i| vec![-1.0 + drift[i], -0.5 - drift[i]]).collect());
                g
            };
            let base = surrogate_objective(&[build(rewards.clone())], &cfg).unwrap();
            let moved: Vec<f64> = rewards.iter().map(|r| r * scale + shift).collect();
            let other = surrogate_objective(&[build(moved)], &cfg).unwrap();
            prop_assert!((base - other).abs() <= 1e-9, "{base} vs {other}");
        }
    }
}
