use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha8Rng;

use guieyes::agents::{AnswerKey, RemoteConfig, RemotePolicy};
use guieyes::evalharness::{
    evaluate, evaluation_runner, load_dataset, load_reference_points, load_sweep_grid, static_crop_baseline,
    sweep, toy_training_runner, DatasetRecord, EvalMode, EvalOptions, EvalReport, SweepTable,
};
use guieyes::grpo::{train_toy, ToyTrainConfig, METRICS_CSV_HEADER};
use guieyes::protocol::{EpisodeRecord, Observation, Policy, PolicyError, Reply};
use guieyes::reward::oracle::{check_identities, check_random_cases};
use guieyes::reward::RewardConfig;
use guieyes::{RewardVariant, RewardWeights};

#[derive(Parser)]
#[command(
    name = "guieyes",
    version,
    about = "Active-perception grounding: rollouts, rewards, GRPO and evaluation"
)]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a policy on a JSONL dataset.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        #[command(flatten)]
        reward: RewardArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Static-crop baseline around externally supplied reference points.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Crop side as a fraction of the screenshot side, in [0, 1].
        #[arg(long)]
        alpha: f64,
        /// JSONL of {"image", "instruction", "point"} reference clicks.
        #[arg(long)]
        refs: PathBuf,
        #[command(flatten)]
        reward: RewardArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a grid of reward settings over several seeds.
    Sweep {
        /// TOML file with a `name` and `[[row]]` entries.
        #[arg(long)]
        grid_file: PathBuf,
        #[arg(long, value_enum)]
        runner: RunnerArg,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Toy training configuration (toy-training runner).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset for the evaluation runner.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the grid policy on synthetic screens.
    TrainToy {
        /// TOML training configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Per-step metrics CSV. With several seeds, one file per seed named
        /// `<stem>-seed<k>.<ext>`.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Check the reward implementation against brute-force oracles.
    RewardCheck {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 64)]
        grid: i64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Direct,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => EvalMode::Full,
            ModeArg::Direct => EvalMode::Direct,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RunnerArg {
    ToyTraining,
    Evaluation,
}

#[derive(Args)]
struct DataArgs {
    /// JSONL dataset; image paths are relative to its directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Drop errored records from accuracy denominators.
    #[arg(long)]
    exclude_errors: bool,
}

#[derive(Args)]
struct PolicyArgs {
    /// Chat-completions endpoint URL.
    #[arg(long, env = "GUIEYES_ENDPOINT", conflicts_with = "scripted")]
    endpoint: Option<String>,
    /// JSONL answer key of {"instruction", "point"} instead of a model.
    #[arg(long)]
    scripted: Option<PathBuf>,
    #[arg(long, env = "GUIEYES_MODEL", default_value = "default")]
    model: String,
    #[arg(long, env = "GUIEYES_TIMEOUT_SECS", default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long, env = "GUIEYES_RETRIES", default_value_t = 2)]
    retries: u32,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 256)]
    max_tokens: u32,
    #[arg(long, env = "GUIEYES_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
}

#[derive(Args)]
struct RewardArgs {
    /// Flat TOML file of reward weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    variant: RewardVariant,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for report.md, report.csv and episodes.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliPolicy {
    Remote(RemotePolicy),
    Scripted(AnswerKey),
}

impl Policy for CliPolicy {
    type Trace = ();

    fn respond(&self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Reply<()>, PolicyError> {
        match self {
            CliPolicy::Remote(p) => p.respond(obs, rng).map(|r| Reply {
                text: r.text,
                trace: (),
            }),
            CliPolicy::Scripted(p) => p.respond(obs, rng),
        }
    }
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

impl PolicyArgs {
    fn build(&self) -> CliResult<CliPolicy> {
        match (&self.endpoint, &self.scripted) {
            (_, Some(path)) => Ok(CliPolicy::Scripted(AnswerKey::from_jsonl(path)?)),
            (Some(url), None) => Ok(CliPolicy::Remote(RemotePolicy::new(RemoteConfig {
                endpoint: url.clone(),
                model: self.model.clone(),
                timeout: Duration::from_secs(self.timeout_secs),
                retries: self.retries,
                temperature: self.temperature,
                max_tokens: self.max_tokens,
                api_key: self.api_key.clone(),
            }))),
            (None, None) => Err("pass --endpoint (or GUIEYES_ENDPOINT) or --scripted".into()),
        }
    }
}

impl RewardArgs {
    fn build(&self) -> CliResult<RewardConfig> {
        let weights = match &self.weights {
            Some(p) => RewardWeights::load(p)?,
            None => RewardWeights::default(),
        };
        Ok(RewardConfig {
            weights,
            variant: self.variant,
        })
    }
}

fn load_records(data: &DataArgs) -> CliResult<Vec<DatasetRecord>> {
    let ds = load_dataset(&data.dataset)?;
    for e in &ds.rejected {
        eprintln!("skipped {}: {e}", data.dataset.display());
    }
    Ok(ds.records)
}

fn write_outputs(out: &OutArgs, md: &str, csv: &str, episodes: &[EpisodeRecord]) -> CliResult<()> {
    print!("{md}");
    if let Some(dir) = &out.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.md"), md)?;
        fs::write(dir.join("report.csv"), csv)?;
        if !episodes.is_empty() {
            let lines: String = episodes.iter().map(|e| e.to_json_line() + "\n").collect();
            fs::write(dir.join("episodes.jsonl"), lines)?;
        }
        eprintln!("wrote reports to {}", dir.display());
    }
    Ok(())
}

fn write_report(out: &OutArgs, report: &EvalReport, episodes: &[EpisodeRecord]) -> CliResult<()> {
    write_outputs(out, &report.to_markdown(), &report.to_csv(), episodes)
}

fn write_table(out: &OutArgs, table: &SweepTable) -> CliResult<()> {
    write_outputs(out, &table.to_markdown(), &table.to_csv(), &[])
}

fn seed_list(start: u64, count: u64) -> CliResult<Vec<u64>> {
    if count == 0 {
        return Err("--seeds must be at least 1".into());
    }
    Ok((0..count).map(|i| start.wrapping_add(i)).collect())
}

fn toy_config(path: Option<&Path>) -> CliResult<ToyTrainConfig> {
    Ok(match path {
        Some(p) => ToyTrainConfig::load(p)?,
        None => ToyTrainConfig::default(),
    })
}

fn metrics_path(base: &Path, seed: u64, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-seed{seed}.{ext}"),
        None => format!("{stem}-seed{seed}"),
    };
    base.with_file_name(name)
}

fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Eval {
            data,
            policy,
            mode,
            reward,
            out,
        } => {
            let records = load_records(&data)?;
            let opts = EvalOptions {
                seed: cli.seed,
                reward: reward.build()?,
                exclude_errors: data.exclude_errors,
            };
            let (report, episodes) = evaluate(&records, &policy.build()?, mode.into(), &opts);
            write_report(&out, &report, &episodes)?;
        }
        Command::Baseline {
            data,
            policy,
            alpha,
            refs,
            reward,
            out,
        } => {
            let records = load_records(&data)?;
            let refs = load_reference_points(&refs)?;
            let opts = EvalOptions {
                seed: cli.seed,
                reward: reward.build()?,
                exclude_errors: data.exclude_errors,
            };
            let (report, episodes) = static_crop_baseline(&records, &refs, alpha, &policy.build()?, &opts)?;
            write_report(&out, &report, &episodes)?;
        }
        Command::Sweep {
            grid_file,
            runner,
            seeds,
            config,
            dataset,
            policy,
            mode,
            out,
        } => {
            let grid = load_sweep_grid(&grid_file)?;
            let seeds = seed_list(cli.seed, seeds)?;
            let table = match runner {
                RunnerArg::ToyTraining => {
                    let cfg = toy_config(config.as_deref())?;
                    let base = cfg.reward_config();
                    sweep(
                        &grid,
                        &base,
                        &seeds,
                        "final success rate",
                        toy_training_runner(cfg),
                    )?
                }
                RunnerArg::Evaluation => {
                    let path = dataset.ok_or("the evaluation runner needs --dataset")?;
                    let records = load_dataset(&path)?.records;
                    let policy = policy.build()?;
                    sweep(
                        &grid,
                        &RewardConfig::default(),
                        &seeds,
                        "accuracy",
                        evaluation_runner(&records, &policy, mode.into()),
                    )?
                }
            };
            write_table(&out, &table)?;
        }
        Command::TrainToy {
            config,
            seeds,
            metrics_out,
        } => {
            let cfg = toy_config(config.as_deref())?;
            let seeds = seed_list(cli.seed, seeds)?;
            println!("seed,initial_success,final_success,final_tool_rate,final_mean_reward");
            for &seed in &seeds {
                let run = train_toy(&cfg, seed)?;
                println!(
                    "{seed},{:.4},{:.4},{:.4},{:.4}",
                    run.initial.success_rate,
                    run.final_eval.success_rate,
                    run.final_eval.tool_rate,
                    run.final_eval.mean_reward
                );
                if let Some(base) = &metrics_out {
                    let path = metrics_path(base, seed, seeds.len() > 1);
                    let mut csv = format!("{METRICS_CSV_HEADER}\n");
                    for m in &run.history {
                        csv.push_str(&m.csv_row());
                        csv.push('\n');
                    }
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir)?;
                    }
                    fs::write(&path, csv).map_err(|e| format!("{}: {e}", path.display()))?;
                }
            }
        }
        Command::RewardCheck { cases, grid } => {
            let mut lines = check_random_cases(cases, grid, cli.seed);
            lines.extend(check_identities());
            let ok = lines.iter().all(|l| l.passed);
            for l in &lines {
                println!("{l}");
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
