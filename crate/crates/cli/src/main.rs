use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracshe_cli::{load_and_validate, run, Kind};

#[derive(Parser)]
#[command(name = "fracshe", version, about = "Stochastic fractional heat equation experiments")]
struct Cli {
    /// Worker threads (overrides the config).
    #[arg(long, global = true, env = "FRACSHE_WORKERS")]
    workers: Option<usize>,
    /// Validate the config, print it normalized with its hash, and stop.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigPath {
    /// Experiment config (JSON).
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Green kernel property battery.
    Kernel(ConfigPath),
    /// Noise sampler covariance battery.
    NoiseValidate(ConfigPath),
    /// Trajectories, snapshots and the additive point-variance check.
    Simulate(ConfigPath),
    /// Geometric and moment constants of the limit.
    Constants(ConfigPath),
    /// Variance scaling, limiting covariance and distance to normality.
    Clt(ConfigPath),
    /// Covariance of the normalized path.
    Fclt(ConfigPath),
    /// Tightness kernel battery.
    Tightness(ConfigPath),
    /// Witness constants of the inequality suite.
    Inequalities(ConfigPath),
    /// Everything the config supports.
    All(ConfigPath),
}

impl Command {
    fn split(&self) -> (Kind, &PathBuf) {
        match self {
            Command::Kernel(c) => (Kind::Kernel, &c.config),
            Command::NoiseValidate(c) => (Kind::NoiseValidate, &c.config),
            Command::Simulate(c) => (Kind::Simulate, &c.config),
            Command::Constants(c) => (Kind::Constants, &c.config),
            Command::Clt(c) => (Kind::Clt, &c.config),
            Command::Fclt(c) => (Kind::Fclt, &c.config),
            Command::Tightness(c) => (Kind::Tightness, &c.config),
            Command::Inequalities(c) => (Kind::Inequalities, &c.config),
            Command::All(c) => (Kind::All, &c.config),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (kind, path) = cli.command.split();
    let cfg = match load_and_validate(path, Some(kind)) {
        Ok(c) => c,
        Err(v) => {
            eprint!("{v}");
            return ExitCode::from(2);
        }
    };
    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        println!("config hash: {}", cfg.hash());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.workers.or(cfg.workers) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cfg) {
        Ok(outcome) => {
            for c in &outcome.verdict.contracts {
                println!("criterion {:>2} {:<34} {}", c.criterion, c.title, if c.pass { "PASS" } else { "FAIL" });
            }
            println!("run directory: {}", outcome.dir.display());
            if let Some(e) = &outcome.manifest.error {
                eprintln!("incomplete run: {e}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
