//! `genfil`: law checks, pricing, replication, arbitrage and experienced
//! paths for binomial scenarios under full and drop filtrations.
//!
//! Exit codes: 0 when every check passes, 1 on violations or a failed
//! computation, 2 on malformed input.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod export;
mod report;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CommandError, Context};
use export::What;
use scenario::Scenario;

#[derive(Parser)]
#[command(name = "genfil", version, about = "Binomial markets under generalized filtrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Functor laws, naturality, martingale and measure conditions.
    Check(Common),
    /// Price lattice of the scenario's claim.
    Price(Common),
    /// Replicating strategy of the scenario's claim.
    Replicate(Common),
    /// Constructs and verifies an arbitrage outside the no-arbitrage bound.
    Arbitrage(Common),
    /// Experienced path of `--path` and the tilde filtration summary.
    Experienced(Common),
    /// Writes lattice and measure files into `--out`.
    Export {
        #[command(flatten)]
        common: Common,
        /// Files to write; all when omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        what: Vec<What>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for report.json and exported files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Equality tolerance; overrides the scenario's.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Free risk-neutral value, `default=VALUE` or `UPCHILD=VALUE`.
    #[arg(long = "free-q", value_name = "NODE=VALUE")]
    free_q: Vec<String>,
    /// Path bits, earliest first.
    #[arg(long)]
    path: Option<String>,
}

fn run(cli: Cli) -> Result<(report::Report, Option<PathBuf>), CommandError> {
    let (common, what) = match &cli.command {
        Command::Check(c)
        | Command::Price(c)
        | Command::Replicate(c)
        | Command::Arbitrage(c)
        | Command::Experienced(c) => (c, None),
        Command::Export { common, what } => (common, Some(what.as_slice())),
    };
    let scenario = Scenario::load(&common.scenario)?;
    let ctx = Context::new(scenario, common.tolerance, &common.free_q)?;
    let report = match &cli.command {
        Command::Check(_) => commands::check(&ctx)?,
        Command::Price(_) => commands::price(&ctx)?,
        Command::Replicate(_) => commands::replicate_cmd(&ctx)?,
        Command::Arbitrage(_) => commands::arbitrage(&ctx)?,
        Command::Experienced(_) => commands::experienced(&ctx, common.path.as_deref())?,
        Command::Export { .. } => export::export(&ctx, what.unwrap_or_default(), common.out.as_deref())?,
    };
    Ok((report, common.out.clone()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((report, out)) => {
            let text = report.render();
            print!("{text}");
            if let Some(dir) = out {
                let file = dir.join("report.json");
                if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&file, &text)) {
                    eprintln!("genfil: cannot write {}: {e}", file.display());
                    return ExitCode::from(1);
                }
            }
            for w in &report.warnings {
                eprintln!("genfil: warning: {w}");
            }
            ExitCode::from(if report.all_pass() { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("genfil: {e}");
            ExitCode::from(match e {
                CommandError::Input(_) => 2,
                CommandError::Compute(_) => 1,
            })
        }
    }
}
