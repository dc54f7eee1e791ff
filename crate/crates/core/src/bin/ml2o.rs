use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ml2o::harness::{
    compare_runs, exit_code, front_experiment, quick_suite, run_experiment, train_ml2o, write_report, CompareMetric,
    RunConfig, TrainConfig, EXIT_CHECK, EXIT_CONFIG,
};
use ml2o::problems::ProblemRegistry;
use ml2o::Error;

#[derive(Parser)]
#[command(name = "ml2o", version, about = "Multi-objective optimizers, learned and guarded")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `outputs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run(RunArgs),
    /// Population run that also writes per-seed Pareto fronts.
    Front(RunArgs),
    /// Meta-train the learned optimizer.
    TrainMl2o {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a metric over several run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "final-max-loss")]
        metric: String,
        /// Report CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick invariant suites.
    Check {
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn out_dir(cli: Option<PathBuf>, cfg: Option<&PathBuf>) -> ml2o::Result<PathBuf> {
    cli.or_else(|| cfg.cloned())
        .ok_or_else(|| Error::Config(vec!["outputs: no output directory (use --out)".into()]))
}

fn load_run(args: &RunArgs) -> ml2o::Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    let out = out_dir(args.out.clone(), cfg.outputs.as_ref())?;
    Ok((cfg, out))
}

fn report_dir(kind: &str, dir: &Path) {
    println!("{kind} written to {}", dir.display());
}

fn execute(cli: Cli) -> ml2o::Result<i32> {
    let registry = ProblemRegistry::with_builtins();
    match cli.command {
        Command::Run(args) => {
            let (cfg, out) = load_run(&args)?;
            let res = run_experiment(&cfg, &registry, &out, args.threads)?;
            report_dir(&format!("{} runs", res.summary.len()), &res.dir);
        }
        Command::Front(args) => {
            let (cfg, out) = load_run(&args)?;
            let res = front_experiment(&cfg, &registry, &out, args.threads)?;
            report_dir("fronts", &res.dir);
        }
        Command::TrainMl2o { config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let out = out_dir(out, cfg.outputs.as_ref())?;
            let res = train_ml2o(&cfg, &registry, &out)?;
            if let Some(last) = res.trace.last() {
                println!("final meta-loss {:.6e}", last.meta_loss);
            }
            report_dir("checkpoint", &res.checkpoint);
        }
        Command::Compare { runs, metric, out } => {
            let metric: CompareMetric = metric.parse()?;
            let rows = compare_runs(&runs, metric)?;
            match out {
                Some(path) => write_report(&path, metric, &rows)?,
                None => {
                    for r in &rows {
                        println!("{}\t{}\t{metric}\tmean {:.6e}\tstd {:.6e}", r.run.display(), r.optimizer, r.mean, r.std);
                    }
                }
            }
        }
        Command::Check { threads } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
            let mut failed = 0;
            for r in quick_suite()? {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Ok(EXIT_CHECK);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            match &e {
                Error::Config(errs) => {
                    eprintln!("config error:");
                    for m in errs {
                        eprintln!("  {m}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
