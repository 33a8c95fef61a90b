use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stgrid::config::{FrameMode, PolicyKind, RunConfig};
use stgrid::error::Result;
use stgrid::harness::{self, Overrides};

#[derive(Parser)]
#[command(name = "stgrid", version, about = "Path planning over hidden Markov grid maps")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Free-run the wildfire environment and export frames and occupancy.
    Simulate(Common),
    /// Filter with the known model under full observation.
    FilterDemo(Common),
    /// Run the planning loop for one policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint `.bin` written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run all four policies over the seed set and tabulate rewards.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// INI config; omitted keys keep their desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    iters: Option<u64>,
    /// none, all or every-K
    #[arg(long, value_parser = parse_frames)]
    frames: Option<FrameMode>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: stgrid::error::Error| e.to_string())
}

fn parse_frames(s: &str) -> std::result::Result<FrameMode, String> {
    s.parse().map_err(|e: stgrid::error::Error| e.to_string())
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let ov = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            policy: self.policy,
            iters: self.iters,
            frames: self.frames,
        };
        harness::load_config(self.config.as_deref(), &ov)
    }
}

#[cfg(feature = "parallel")]
fn init_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("STGRID_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("STGRID_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
fn init_threads() -> std::result::Result<(), String> {
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Simulate(c) => {
            let config = c.load()?;
            for occ in harness::cmd_simulate(&config)? {
                let last = occ.counts.last().cloned().unwrap_or_default();
                println!("seed {}: final state counts {:?}", occ.seed, last);
            }
        }
        Verb::FilterDemo(c) => {
            let config = c.load()?;
            for t in harness::cmd_filter_demo(&config)? {
                println!(
                    "seed {}: mean cross-entropy filter {:.4} prior {:.4}",
                    t.seed,
                    t.mean_filter(),
                    t.mean_prior()
                );
            }
        }
        Verb::Train { common, resume } => {
            let config = common.load()?;
            for rows in harness::cmd_train(&config, resume.as_deref())? {
                let tail = stgrid::orchestrator::tail_mean_reward(&rows, harness::TAIL_FRACTION);
                println!("{} rows, tail mean reward {:.3}", rows.len(), tail);
            }
        }
        Verb::Compare(c) => {
            let config = c.load()?;
            let rows = harness::cmd_compare(&config)?;
            print!("{}", harness::format_summary(&rows, config.run.iterations));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("stgrid: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stgrid: {e}");
            ExitCode::FAILURE
        }
    }
}
