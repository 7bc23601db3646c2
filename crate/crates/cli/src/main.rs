mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "surgvqla", version, about = "Dataset, reward, training and evaluation tools for surgical VQLA")]
struct Cli {
    /// Seed for every randomised step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// INI file with per-module sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct FrameArgs {
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

#[derive(Debug, Args)]
struct RewardArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    w_vg: Option<f64>,
    #[arg(long)]
    w_la: Option<f64>,
    #[arg(long)]
    w_mc: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every record of a dataset file against the schema.
    Validate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Count records by kind and question type.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Partition reasoning-chain records into SFT and RFT files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sft_fraction: Option<f64>,
        /// `record` or `sequence`.
        #[arg(long)]
        unit: Option<String>,
        #[arg(long)]
        out_sft: PathBuf,
        #[arg(long)]
        out_rft: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Generate reasoning chains and sub-question records from annotations.
    Forge {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        audit: PathBuf,
        #[arg(long)]
        max_inflight: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        timeout_ms: Option<u64>,
        #[arg(long)]
        max_attempts: Option<u32>,
        #[arg(long)]
        backoff_ms: Option<u64>,
    },
    /// Score reasoning traces against reference records.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        reward: RewardArgs,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// Train the toy policy with group-relative policy optimisation.
    TrainToy {
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long)]
        out_params: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        /// `clipped` or `as_written`.
        #[arg(long)]
        objective_mode: Option<String>,
        #[arg(long)]
        inner_epochs: Option<usize>,
        #[command(flatten)]
        reward: RewardArgs,
    },
    /// Compute accuracy, macro F-score and mIoU of predictions.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
    },
}

/// Collects the flags that were actually given as config overrides.
#[derive(Default)]
struct Flags(Vec<(&'static str, String)>);

impl Flags {
    fn set<T: ToString>(&mut self, key: &'static str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn frame(&mut self, f: &FrameArgs) -> &mut Self {
        self.set("frame.width", &f.width).set("frame.height", &f.height)
    }

    fn reward(&mut self, r: &RewardArgs) -> &mut Self {
        self.set("reward.tau", &r.tau)
            .set("reward.w_vg", &r.w_vg)
            .set("reward.w_la", &r.w_la)
            .set("reward.w_mc", &r.w_mc)
    }
}

fn flags_for(cli: &Cli) -> Flags {
    let mut f = Flags::default();
    f.set("seed", &cli.seed);
    match &cli.command {
        Command::Validate { frame, .. }
        | Command::Stats { frame, .. }
        | Command::Eval { frame, .. } => {
            f.frame(frame);
        }
        Command::Split { sft_fraction, unit, frame, .. } => {
            f.set("split.sft_fraction", sft_fraction)
                .set("split.unit", unit)
                .frame(frame);
        }
        Command::Forge {
            endpoint,
            model,
            max_inflight,
            temperature,
            timeout_ms,
            max_attempts,
            backoff_ms,
            ..
        } => {
            f.set("forge.endpoint", endpoint)
                .set("forge.model", model)
                .set("forge.max_inflight", max_inflight)
                .set("forge.temperature", temperature)
                .set("forge.timeout_ms", timeout_ms)
                .set("forge.max_attempts", max_attempts)
                .set("forge.backoff_ms", backoff_ms);
        }
        Command::Score { reward, frame, .. } => {
            f.reward(reward).frame(frame);
        }
        Command::TrainToy {
            iterations,
            learning_rate,
            beta,
            epsilon,
            group_size,
            temperature,
            objective_mode,
            inner_epochs,
            reward,
            ..
        } => {
            f.set("grpo.iterations", iterations)
                .set("grpo.learning_rate", learning_rate)
                .set("grpo.beta", beta)
                .set("grpo.epsilon", epsilon)
                .set("grpo.group_size", group_size)
                .set("grpo.temperature", temperature)
                .set("grpo.objective_mode", objective_mode)
                .set("grpo.inner_epochs", inner_epochs)
                .reward(reward);
        }
    }
    f
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &flags_for(&cli).0)?;
    match &cli.command {
        Command::Validate { input, .. } => commands::validate(&cfg, input),
        Command::Stats { input, out, .. } => commands::stats(&cfg, input, out.as_deref()),
        Command::Split { input, out_sft, out_rft, .. } => {
            commands::split(&cfg, input, out_sft, out_rft)
        }
        Command::Forge { annotations, out, audit, .. } => {
            commands::forge(&cfg, annotations, out, audit)
        }
        Command::Score { pred, gt, out, .. } => commands::score(&cfg, pred, gt, out),
        Command::TrainToy { out_report, out_params, .. } => {
            commands::train_toy(&cfg, out_report, out_params)
        }
        Command::Eval { pred, gt, out, .. } => commands::eval(&cfg, pred, gt, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            let report = CliError::Usage(e.render().to_string().trim().to_string()).report();
            eprintln!("{report}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
