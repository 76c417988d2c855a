use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use orbicheck::{describe, dump_fields, run_suite, FieldKind, SuiteConfig};

#[derive(Parser)]
#[command(name = "orbicheck", version, about = "Run orbifold verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected suites (the default).
    Run,
    /// Print strata, isotropy orders and charts.
    Describe,
    /// Write a field sampled on a grid as CSV.
    Dump {
        #[arg(long, value_enum)]
        which: FieldKind,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults to the football of order 3.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suite to run; repeat to select several.
    #[arg(long = "suite", global = true)]
    suites: Vec<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplies every tolerance.
    #[arg(long, global = true)]
    tol_scale: Option<f64>,
    /// Grid resolution for strata and dumps.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

fn load(c: &Common) -> anyhow::Result<SuiteConfig> {
    let mut cfg = match &c.config {
        Some(p) => SuiteConfig::load(p)?,
        None => SuiteConfig::default(),
    };
    if !c.suites.is_empty() {
        cfg.suites = c.suites.clone();
    }
    if let Some(o) = &c.out {
        cfg.out = o.display().to_string();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.tol_scale {
        cfg.tolerances = cfg.tolerances.scaled(t);
    }
    if let Some(g) = c.grid {
        cfg.grids.strata = g;
        cfg.grids.dump = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<bool> {
    let cfg = load(&cli.common)?;
    match cli.command.unwrap_or(Command::Run) {
        Command::Run => {
            let report = run_suite(&cfg).context("running suites")?;
            for r in report.records() {
                println!("{} {} residual={:e} tol={:e}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.residual, r.tolerance);
            }
            println!("{}/{} checks passed; report in {}", report.summary.passed, report.summary.checks, cfg.out);
            Ok(report.pass())
        }
        Command::Describe => {
            print!("{}", describe(&cfg)?);
            Ok(true)
        }
        Command::Dump { which } => {
            let path = dump_fields(&cfg, which, cfg.grids.dump)?;
            println!("{}", path.display());
            Ok(true)
        }
    }
}
