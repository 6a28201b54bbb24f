use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedot_core::Cost;
use fedotlab::commands::{cmd_gradcheck, cmd_ot_check, cmd_report, cmd_run, OtInput};
use fedotlab::LabError;

#[derive(Parser)]
#[command(name = "fedotlab", version, about = "Federated optimal-transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment plan.
    Run { plan: PathBuf },
    /// Compare primal, barycenter and dual values of an n-ary transport problem.
    OtCheck {
        /// Distribution files (`d k` header, then `x_1 .. x_d w` per atom).
        files: Vec<PathBuf>,
        /// Random instance instead of files: N K D.
        #[arg(long, num_args = 3, value_names = ["N", "K", "D"], conflicts_with = "files")]
        random: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// w1 or w2.
        #[arg(long, default_value = "w2")]
        cost: Cost,
        /// Largest joint support the LP may have.
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        points: usize,
        /// Corrupt the named block's gradient to confirm the check fails.
        #[arg(long, value_name = "BLOCK")]
        inject_fault: Option<String>,
    },
    /// Summarise a results.csv.
    Report { results: PathBuf },
}

fn dispatch(cli: Cli) -> Result<(), LabError> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Run { plan } => cmd_run(&plan, &mut out).map(drop),
        Command::OtCheck { files, random, seed, cost, cap } => {
            let input = match random {
                Some(v) => OtInput::Random { n: v[0], k: v[1], d: v[2], seed },
                None if files.is_empty() => return Err(LabError::Validation("give distribution files or --random N K D".into())),
                None => OtInput::Files(files),
            };
            cmd_ot_check(&input, cost, cap, &mut out).map(drop)
        }
        Command::Gradcheck { seed, points, inject_fault } => cmd_gradcheck(seed, points, inject_fault.as_deref(), &mut out).map(drop),
        Command::Report { results } => cmd_report(&results, &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
