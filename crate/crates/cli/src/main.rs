use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use critic_pi2::trainer::{AgentKind, ExperimentConfig};
use critic_pi2_cli::commands::{cmd_ablation, cmd_benchmark, cmd_train};
use critic_pi2_cli::output::write_json;
use critic_pi2_cli::{parse_config, ConfigError, Precision};

/// Critic PI2 experiments on the inverted pendulum tasks.
#[derive(Parser)]
#[command(name = "critic-pi2", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `planner.K=20`; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "CRITIC_PI2_OUT", default_value = "runs")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its learning curve.
    Train(Common),
    /// Time single planning calls of every method.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        calls: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
    },
    /// Run the four Critic PI2 ablation variants over several seeds.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    parse_config(common.config.as_deref(), &overrides).map_err(Failure::Config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let outcome = cmd_train(&cfg, &common.out, common.precision)?;
            let s = &outcome.summary;
            println!(
                "{} seed {}: {} episodes, final eval {:?}, best eval {:?} -> {}",
                s.agent,
                s.seed,
                s.episodes_run,
                s.final_eval_return,
                s.best_eval_return,
                common.out.display()
            );
        }
        Command::Benchmark { common, calls, warmup } => {
            let cfg = load(&common)?;
            let report = cmd_benchmark(&cfg, calls, warmup, common.precision)?;
            std::fs::create_dir_all(&common.out).map_err(anyhow::Error::from)?;
            write_json(&common.out.join("benchmark.json"), &report)?;
            print!("{}", report.render());
        }
        Command::Ablation { common, seeds } => {
            let cfg = load(&common)?;
            if cfg.agent != AgentKind::CriticPi2 {
                return Err(Failure::Config(ConfigError::Invalid(
                    "ablation requires agent = critic_pi2".into(),
                )));
            }
            let report = cmd_ablation(&cfg, &seeds, &common.out, common.precision)?;
            for v in &report.variants {
                println!(
                    "{:<18} mean final {:>9.2}  mean first {:>9.2}",
                    v.name, v.mean_final_return, v.mean_first_return
                );
            }
            println!("ranking: {}", report.ranking.join(" > "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
