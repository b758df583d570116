use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncollapse::io::{exit, run_command, Command, CommandOptions};
use ncollapse::validate::Suite;

#[derive(Parser)]
#[command(
    name = "ncollapse",
    version,
    about = "Imbalanced neural-collapse geometry of the unconstrained feature model"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one configuration by the analytic and numeric routes.
    Solve(Common),
    /// Sweep one parameter and locate regime transitions.
    Sweep(Common),
    /// Print the collapse thresholds of a two-cluster problem.
    Threshold(Common),
    /// Ratio deviations from the ETF along a growing-N grid.
    Asymptotic(Common),
    /// Run the randomized oracle suites.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: ./out, or [output] dir].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    workers: Option<usize>,
    /// Override lambda_b with +inf.
    #[arg(long)]
    bias_free: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Test hook: corrupt one suite's checked quantity.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn options(c: Common) -> CommandOptions {
    CommandOptions {
        config_path: c.config,
        out: c.out,
        workers: c.workers,
        bias_free: c.bias_free,
        ..Default::default()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (cmd, opts) = match cli.command {
        Cmd::Solve(c) => (Command::Solve, options(c)),
        Cmd::Sweep(c) => (Command::Sweep, options(c)),
        Cmd::Threshold(c) => (Command::Threshold, options(c)),
        Cmd::Asymptotic(c) => (Command::Asymptotic, options(c)),
        Cmd::Validate(v) => {
            let fault = match v.inject_fault.as_deref().map(str::parse::<Suite>).transpose() {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit::USAGE as u8);
                }
            };
            let mut o = options(v.common);
            o.seed = v.seed;
            o.inject_fault = fault;
            (Command::Validate, o)
        }
    };
    ExitCode::from(run_command(cmd, &opts) as u8)
}
