use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedmgp::commands::{cmd_compare, cmd_report, cmd_run, cmd_verify, RunOptions};
use fedmgp::config::parse_strategy;

#[derive(Parser)]
#[command(name = "fedmgp", version, about = "Federated multi-group prompt learning simulator")]
struct Cli {
    /// Output directory; defaults to a subdirectory of the output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "FEDMGP_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,
    /// Worker threads for client updates and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one federation and write its metrics, traces and manifest.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// full | fixed | dynamic
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Run the theory and numerics checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Matched-seed comparison of two or more strategies.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// e.g. `full`, `fixed`, `dynamic(policy=all)`; repeat the flag per strategy
        #[arg(long = "strategy", required = true)]
        strategies: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
        seeds: Vec<u64>,
    },
    /// Summaries and selection frequencies for a finished run directory.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = |name: &str| cli.out.clone().unwrap_or_else(|| cli.out_root.join(name));
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            strategy,
            rounds,
        } => {
            let strategy = match strategy.as_deref().map(|s| (s, parse_strategy(s))) {
                Some((s, None)) => {
                    eprintln!("error: unknown strategy `{s}`");
                    return ExitCode::FAILURE;
                }
                Some((_, parsed)) => parsed,
                None => None,
            };
            let opts = RunOptions {
                config,
                out: out("run"),
                seed,
                strategy,
                rounds,
                threads: cli.threads,
            };
            cmd_run(&opts).map(|r| {
                let last = r.run.records.last().map(|rec| rec.mean.cm).unwrap_or(f64::NAN);
                println!("wrote {} files to {}; final cm {last:.4}", r.manifest.files.len() + 1, opts.out.display());
            })
        }
        Command::Verify { seed } => {
            let dir = out("verify");
            match cmd_verify(&dir, seed) {
                Ok(v) => {
                    for c in &v.checks {
                        let status = match (c.mandatory, c.passed) {
                            (false, _) => "info",
                            (true, true) => "pass",
                            (true, false) => "FAIL",
                        };
                        println!("{status:4}  {:28} {:>14.6e}  {}", c.name, c.measured, c.detail);
                    }
                    if !v.failed.is_empty() {
                        eprintln!("failing checks: {}", v.failed.join(", "));
                        return ExitCode::FAILURE;
                    }
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
        Command::Compare {
            config,
            strategies,
            seeds,
        } => cmd_compare(config.as_deref(), &strategies, &seeds, &out("compare"), cli.threads).map(|rows| {
            println!("{:32} {:>16} {:>16} {:>16} {:>16}", "strategy", "local", "base", "novel", "cm");
            for r in rows {
                let f = |(m, s): (f64, f64)| format!("{m:.4}±{s:.4}");
                println!("{:32} {:>16} {:>16} {:>16} {:>16}", r.strategy, f(r.local), f(r.base), f(r.novel), f(r.cm));
            }
        }),
        Command::Report => cmd_report(&out("run")).map(|lines| {
            for l in lines {
                println!("{l}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
