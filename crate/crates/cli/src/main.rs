use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netadapt_core::harness::{
    self, report, Checkpoint, ExperimentConfig, Method, MetricsReport, ResolvedConfig,
};
use netadapt_core::{Error, Result};

#[derive(Parser)]
#[command(name = "netadapt", version, about = "Adapt a frozen sequence model to networking tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "NETADAPT_SEED")]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, env = "NETADAPT_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the behaviour policy and write an experience dataset.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a model and write a checkpoint.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Experience dataset directory (RL tasks); defaults to the collect output.
        #[arg(long, env = "NETADAPT_DATASET")]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or a named baseline.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "policy")]
        checkpoint: Option<PathBuf>,
        /// Baseline name, e.g. bba, mpc, fifo, fair, hold, lr, velocity.
        #[arg(long)]
        policy: Option<String>,
        /// Test setting id; overrides the config.
        #[arg(long)]
        setting: Option<String>,
        /// Episodes (or workloads) to roll; overrides the config.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare result summaries and emit tables and plots.
    Report {
        /// `*.summary.json` files written by `test`.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
    },
}

fn resolve(common: &Common, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<ResolvedConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.paths.out_dir = Some(dir.clone());
    }
    tweak(&mut cfg);
    cfg.resolve()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { common } => {
            let cfg = resolve(&common, |_| {})?;
            let data = harness::collect(&cfg)?;
            let dir = harness::dataset_dir(&cfg);
            data.save(&dir)?;
            println!(
                "{} trajectories ({} aborted), max return {:.4}",
                data.len(),
                data.aborted_episodes,
                data.max_return()
            );
            println!("{}", dir.display());
        }
        Command::Adapt { common, dataset } => {
            let cfg = resolve(&common, |_| {})?;
            let data = if cfg.task.is_rl() {
                let dir = dataset.unwrap_or_else(|| harness::dataset_dir(&cfg));
                Some(harness::load_dataset(&dir)?)
            } else if dataset.is_some() {
                return Err(Error::Usage("viewport adaptation builds its own samples; drop --dataset".into()));
            } else {
                None
            };
            let ck = harness::adapt(&cfg, data.as_ref())?;
            let dir = harness::checkpoint_dir(&cfg);
            ck.save(&dir)?;
            let last = ck.loss_curve.iter().rev().find(|v| v.is_finite()).copied().unwrap_or(f64::NAN);
            println!("{} steps, final loss {last:.5}", ck.loss_curve.len());
            println!("{}", dir.display());
        }
        Command::Test {
            common,
            checkpoint,
            policy,
            setting,
            episodes,
        } => {
            let cfg = resolve(&common, |c| {
                if setting.is_some() {
                    c.test.setting = setting.clone();
                }
                if episodes.is_some() {
                    c.test.episodes = episodes;
                }
            })?;
            let loaded;
            let method = match (&checkpoint, &policy) {
                (Some(dir), None) => {
                    loaded = Checkpoint::load(dir)?;
                    Method::Adapted(&loaded)
                }
                (None, Some(name)) => Method::Baseline(name),
                _ => return Err(Error::Usage("pass exactly one of --checkpoint or --policy".into())),
            };
            let r = harness::test(&cfg, &method)?;
            let dir = harness::results_dir(&cfg);
            r.save(&dir, method.name())?;
            println!(
                "{} on {}: mean {:.4}, p10 {:.4}, p50 {:.4}, p90 {:.4} over {} records",
                r.method,
                r.setting,
                r.mean,
                r.percentiles.p10,
                r.percentiles.p50,
                r.percentiles.p90,
                r.records.len()
            );
            println!("{}", dir.join(format!("{}.summary.json", method.name())).display());
        }
        Command::Report { results, out } => {
            let reports = results
                .iter()
                .map(|p| MetricsReport::load(p))
                .collect::<Result<Vec<_>>>()?;
            let cmp = report::compare(&reports)?;
            print!("{}", cmp.markdown());
            for f in cmp.write(&out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) | Error::Config(_) => 2,
                Error::Invariant(_) => 3,
                _ => 1,
            })
        }
    }
}
