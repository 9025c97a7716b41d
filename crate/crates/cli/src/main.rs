use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netcausal_cli::artifacts::{to_json, write_text};
use netcausal_cli::{cmd_generate, policy, regret, report, train, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "netcausal", version, about = "Causal effects and policies under network interference")]
struct Cli {
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment TOML; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the root seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset directory.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: [output] dir of the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured estimators and write test metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`
        #[arg(long)]
        data: PathBuf,
        /// Output directory (default: [output] dir of the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test metrics of a saved model (printed, or written to --out).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`
        #[arg(long)]
        data: PathBuf,
        /// Model file under <train out>/models/
        #[arg(long)]
        model: PathBuf,
        /// Write the record here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn capacity-constrained policies through a saved GNN estimator.
    Policy {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`
        #[arg(long)]
        data: PathBuf,
        /// Model file under <train out>/models/
        #[arg(long)]
        model: PathBuf,
        /// Output directory (default: [output] dir of the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Concentration, regret-bound and Lipschitz checks over graph families.
    Regret {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: [output] dir of the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Markdown tables from run directories (printed, or written to --out).
    Report {
        /// Run directories holding metrics.json, policy.json or regret.json
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the tables here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    ExperimentConfig::resolve(c.config.as_deref(), c.seed)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.output.dir.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { common, out } => {
            let cfg = load(&common)?;
            let dir = out_dir(&cfg, out);
            let data = cmd_generate(&cfg, &dir)?;
            println!("wrote {} nodes to {}", data.n(), dir.display());
        }
        Cmd::Train { common, data, out } => {
            let cfg = load(&common)?;
            let dir = out_dir(&cfg, out);
            let m = train::cmd_train(&cfg, &data, &dir)?;
            print!("{}", report::metrics_table(&[m]));
        }
        Cmd::Eval { common, data, model, out } => {
            let cfg = load(&common)?;
            let text = to_json(&train::cmd_eval(&cfg, &data, &model)?)?;
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Policy { common, data, model, out } => {
            let cfg = load(&common)?;
            let dir = out_dir(&cfg, out);
            let p = policy::cmd_policy(&cfg, &data, &model, &dir)?;
            print!("{}", report::policy_table(&[p]));
        }
        Cmd::Regret { common, out } => {
            let cfg = load(&common)?;
            let dir = out_dir(&cfg, out);
            let s = regret::cmd_regret(&cfg, &dir)?;
            print!("{}", report::regret_table(&[s]));
        }
        Cmd::Report { runs, out } => {
            let dirs: Vec<&std::path::Path> = runs.iter().map(PathBuf::as_path).collect();
            let text = report::render(&dirs)?;
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NETCAUSAL_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
