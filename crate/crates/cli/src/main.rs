use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracperim_cli::commands::{
    cmd_gamma_sweep, cmd_grad_check, cmd_kernel_table, cmd_solve, cmd_subproblem, cmd_variation_check,
    load_config, CliError,
};

const EXIT_PROPERTY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fracperim", about = "Fractional-perimeter regularized binary control")]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trust-region method on the tracking problem.
    Solve,
    /// Compare (1 - alpha) P_alpha of a rectangle with its limit.
    GammaSweep,
    /// Finite-difference check of the adjoint gradient.
    GradCheck,
    /// Solve a stored subproblem instance.
    Subproblem {
        #[arg(long)]
        instance: PathBuf,
    },
    /// First-variation, symmetric-difference and stationarity diagnostics.
    VariationCheck,
    /// Tabulate the configured kernel and write it to disk.
    KernelTable,
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok(match cli.command {
        Command::Solve => {
            let o = cmd_solve(&cfg, &out)?;
            println!(
                "termination {} after {} accepted steps, J = {}",
                o.summary.termination, o.summary.accepted_steps, o.summary.final_j
            );
            o.passed
        }
        Command::GammaSweep => {
            let o = cmd_gamma_sweep(&cfg, &out)?;
            for r in &o.rows {
                println!("alpha {} (1-alpha)P {} reference {} deviation {}", r.alpha, r.scaled_perimeter, r.reference, r.deviation);
            }
            o.passed
        }
        Command::GradCheck => {
            let o = cmd_grad_check(&cfg, &out)?;
            for (eps, err) in &o.errors {
                println!("eps {eps} max relative error {err}");
            }
            o.passed
        }
        Command::Subproblem { instance } => {
            let o = cmd_subproblem(&instance, &cfg.trust_region.budget(), &out)?;
            println!("objective {} pred {} gap {} exact {}", o.objective, o.pred, o.gap, o.exact);
            true
        }
        Command::VariationCheck => {
            let o = cmd_variation_check(&cfg, &out)?;
            for c in &o.cases {
                println!(
                    "{}: first variation decreasing {}, sym-diff band {}",
                    c.case, c.first_variation_decreasing, c.sym_diff_band
                );
            }
            o.passed
        }
        Command::KernelTable => {
            println!("{}", cmd_kernel_table(&cfg, &out)?.display());
            true
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("internal error: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("property check failed");
            ExitCode::from(EXIT_PROPERTY)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Internal(_) => EXIT_INTERNAL,
            })
        }
    }
}
