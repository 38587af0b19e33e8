//! Command-line front end: single runs, sweeps, the cooperation ablation,
//! the verification suites, and independence-number queries.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coop_ftpl::config::{load_config, ParsedConfig, SweepDimension};
use coop_ftpl::estimator::ResampleMode;
use coop_ftpl::graph::{Graph, GraphError};
use coop_ftpl::harness::{compare_cooperation, run_sweep, write_trace_csv, SweepSpec};
use coop_ftpl::sim::{resolve_parameters, run_episode};
use coop_ftpl::verify;

#[derive(Parser)]
#[command(name = "coop-ftpl", about = "Cooperative semi-bandit simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Root seed (default 0).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV traces and metadata.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the independence number used for tuning.
    #[arg(long)]
    alpha1: Option<usize>,
    /// Override the resampling mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ResampleMode>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Root seed of the first run; seed i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds per sweep point (overrides the config).
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha1: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ResampleMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode and print its summary.
    Run(RunArgs),
    /// Run a multi-seed sweep and aggregate the results.
    Sweep(SweepArgs),
    /// Paired comparison of cooperation against the no-exchange baseline.
    Compare(SweepArgs),
    /// Execute the distribution and tuning property suites.
    Verify {
        /// Seed for the suites' random instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the independence number of a graph file.
    Alpha {
        /// Edge-list file (`u v` per line, optional `n N` directive).
        graph: PathBuf,
        /// Declared agent count, if the file does not carry one.
        #[arg(long)]
        nodes: Option<usize>,
    },
}

fn parse_mode(text: &str) -> Result<ResampleMode, String> {
    match text {
        "independent" => Ok(ResampleMode::Independent),
        "shared" => Ok(ResampleMode::Shared),
        other => Err(format!("expected independent|shared, got {other:?}")),
    }
}

fn load_with_overrides(
    path: &Path,
    alpha1: Option<usize>,
    mode: Option<ResampleMode>,
) -> Result<ParsedConfig> {
    let mut parsed = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(a) = alpha1 {
        parsed.sim.alpha1_override = Some(a);
    }
    if let Some(m) = mode {
        parsed.sim.mode = m;
    }
    Ok(parsed)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let parsed = load_with_overrides(&args.config, args.alpha1, args.mode)?;
    let params = resolve_parameters(&parsed.sim)?;
    if params.beta_clamped {
        eprintln!("warning: tuned beta was below 1 and has been clamped to 1");
    }
    if params.alpha1_source == coop_ftpl::sim::Alpha1Source::GreedyLowerBound {
        eprintln!(
            "warning: graph exceeds the exact independence-number cap; using greedy lower bound {} (supply --alpha1 to override)",
            params.alpha1
        );
    }
    let trace = run_episode(&parsed.sim, args.seed)?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join(format!("run_s{}.csv", args.seed));
        write_trace_csv(&trace, &path)?;
        println!("trace written to {}", path.display());
    }
    println!(
        "seed {}: T={}, eta={}, beta={}, alpha1={}, Q={}",
        args.seed,
        parsed.sim.horizon,
        params.eta,
        params.beta,
        params.alpha1,
        params.q_total
    );
    println!(
        "final cumulative loss {:.4}, realized regret {:.4}, bound {:.4}, oracle calls {}",
        trace.final_cum_loss(),
        trace.final_regret(),
        params.bound_value,
        trace.total_oracle_calls()
    );
    Ok(())
}

fn build_spec(args: &SweepArgs) -> Result<SweepSpec> {
    let parsed = load_with_overrides(&args.config, args.alpha1, args.mode)?;
    Ok(SweepSpec {
        base: parsed.sim,
        dimension: parsed.sweep,
        seeds: args.seeds.unwrap_or(parsed.seeds),
        base_seed: args.seed,
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let spec = build_spec(&args)?;
    let out = run_sweep(&spec, &args.out)?;
    println!("point,seeds,mean_final_regret,stderr,bound,regret/bound,mean_oracle_calls");
    for row in &out.rows {
        println!(
            "{},{},{:.4},{:.4},{:.4},{:.6},{:.1}",
            row.point,
            row.seeds,
            row.mean_final_regret,
            row.stderr_final_regret,
            row.bound_value,
            row.regret_over_bound,
            row.mean_oracle_calls
        );
    }
    println!("{} trace files under {}", out.run_files.len(), args.out.display());
    Ok(())
}

fn cmd_compare(args: SweepArgs) -> Result<()> {
    let spec = build_spec(&args)?;
    if matches!(spec.dimension, SweepDimension::Single) && spec.seeds < 2 {
        eprintln!("note: paired comparison with a single seed has no error estimate");
    }
    let out = compare_cooperation(&spec, &args.out)?;
    println!("point,coop_mean_regret,solo_mean_regret,paired_diff,stderr_diff");
    for ((coop, solo), diff) in out
        .cooperative
        .iter()
        .zip(&out.baseline)
        .zip(&out.paired)
    {
        println!(
            "{},{:.4},{:.4},{:.4},{:.4}",
            coop.point,
            coop.mean_final_regret,
            solo.mean_final_regret,
            diff.mean_diff,
            diff.stderr_diff
        );
    }
    Ok(())
}

fn cmd_verify(seed: u64) -> Result<()> {
    let reports = verify::all_checks(seed);
    let mut failed = 0;
    for report in &reports {
        println!("{}", report.line());
        if !report.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", reports.len());
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}

fn cmd_alpha(path: PathBuf, nodes: Option<usize>) -> Result<()> {
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let graph = Graph::parse(&text, nodes)?;
    match graph.independence_number_exact() {
        Ok(alpha) => println!("{alpha}"),
        Err(GraphError::ExactAlphaCapExceeded { n, cap }) => {
            let greedy = graph.greedy_independent_set().size();
            eprintln!(
                "warning: {n} agents exceeds the exact cap {cap}; greedy lower bound follows"
            );
            println!("{greedy}");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Verify { seed } => cmd_verify(seed),
        Command::Alpha { graph, nodes } => cmd_alpha(graph, nodes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
