use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dlab_core::report::{render_trace_matrix, trace_matrix, TraceStatus, CHECKS, REGISTRY};
use serde::de::DeserializeOwned;
use serde::Serialize;

mod cmd;
mod config;
mod gen;
mod output;

use cmd::{Ctx, Outcome};
use output::{write_report, Output, RunMeta};

#[derive(Parser)]
#[command(
    name = "dlab",
    version,
    about = "Certify disagreement bounds for learning-curve experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; overrides DLAB_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out` or `dlab-out/<subcommand>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized identity, anchor and local-curve checks, plus fixtures.
    Selftest(Common),
    /// Stacking learning curves against the factor-4 bound.
    Stacking(Common),
    /// The near-tightness construction for stacking.
    Tightness(Common),
    /// Gradient boosting rates and two-run agreement.
    Boost(Common),
    /// Frank-Wolfe rates and agreement under strongly convex losses.
    Fw(Common),
    /// Exact tree learning curves and greedy-tree agreement.
    Trees(Common),
    /// ReLU network midpoint closure and trained agreement.
    Nn(Common),
    /// Map every registered result to the checks that certify it.
    TraceMatrix {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_experiment<P: DeserializeOwned + Default>(
    name: &'static str,
    args: &Common,
    run: fn(&Ctx, &P) -> Result<Outcome>,
) -> Result<bool> {
    let loaded = config::load::<P>(args.config.as_deref())?;
    let cfg = &loaded.config;
    let env = std::env::var(config::SEED_ENV).ok();
    let (seed, seed_source) = config::resolve_seed(args.seed, env.as_deref(), cfg.seed)?;
    if let Some(jobs) = args.jobs.or(cfg.jobs) {
        if jobs == 0 {
            anyhow::bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let out_dir = match (&args.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => config::resolve_path(&loaded.base_dir, o),
        (None, None) => Path::new("dlab-out").join(name),
    };
    let ctx = Ctx {
        seed,
        z: cfg.z,
        tol: cfg.tolerances,
        out: Output::create(&out_dir)?,
        base_dir: loaded.base_dir.clone(),
    };
    let outcome = run(&ctx, &cfg.experiment)?;
    let meta = RunMeta {
        subcommand: name,
        config_sha256: loaded.sha256.clone(),
        seed,
        seed_source,
        z: cfg.z,
        tolerances: cfg.tolerances,
    };
    write_report(&ctx.out, &meta, &outcome.reports)?;
    let text = format!("{}\n{}", outcome.summary, outcome.reports.render());
    ctx.out.text("summary.txt", &text)?;
    print!("{text}");
    println!("outputs written to {}", out_dir.display());
    Ok(outcome.reports.all_gating_passed())
}

#[derive(Serialize)]
struct TraceCsvRow<'a> {
    id: &'a str,
    module: &'a str,
    verdict: &'a str,
    status: &'a str,
    checks: String,
}

fn run_trace_matrix(out: Option<&Path>) -> Result<bool> {
    let rows = trace_matrix(&REGISTRY, CHECKS);
    print!("{}", render_trace_matrix(&rows));
    if let Some(dir) = out {
        let csv_rows: Vec<TraceCsvRow> = rows
            .iter()
            .map(|r| TraceCsvRow {
                id: r.entry.id,
                module: r.entry.module,
                verdict: r.entry.verdict.as_str(),
                status: r.status.as_str(),
                checks: r.checks.join(";"),
            })
            .collect();
        Output::create(dir)?.csv("trace_matrix.csv", &csv_rows)?;
    }
    Ok(rows.iter().all(|r| r.status == TraceStatus::Covered))
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Selftest(a) => run_experiment("selftest", a, cmd::selftest::run),
        Command::Stacking(a) => run_experiment("stacking", a, cmd::stacking::run),
        Command::Tightness(a) => run_experiment("tightness", a, cmd::tightness::run),
        Command::Boost(a) => run_experiment("boost", a, cmd::boost::run),
        Command::Fw(a) => run_experiment("fw", a, cmd::fw::run),
        Command::Trees(a) => run_experiment("trees", a, cmd::trees::run),
        Command::Nn(a) => run_experiment("nn", a, cmd::nn::run),
        Command::TraceMatrix { out } => run_trace_matrix(out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more gating checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
