use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rnaforge_core::{Error, ErrorClass};

mod commands;

use commands::Ctx;

/// Structure-conditioned RNA sequence design.
#[derive(Debug, Parser)]
#[command(name = "rnaforge", version)]
struct Cli {
    /// Energy parameter file; the built-in parameters are used otherwise.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (RNAFORGE_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for files written by the subcommand.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fold sequences: MFE structure, energy, co-optimal count, ensemble energy.
    Fold(commands::FoldArgs),
    /// Score (structure, sequence) pairs.
    Eval(commands::EvalArgs),
    /// Best-of-N design for each target structure.
    Design(commands::DesignArgs),
    /// Random-sequence MFE corpus and teacher designs.
    GenData(commands::GenDataArgs),
    /// Drop candidates close to a test set.
    FilterData(commands::FilterArgs),
    /// Select structures for reinforcement learning.
    SelectRl(commands::SelectRlArgs),
    /// Supervised training on (structure, sequence) pairs.
    TrainSl(commands::TrainSlArgs),
    /// Group-relative policy optimization.
    TrainRl(commands::TrainRlArgs),
    /// Best-of-N benchmark with tables, curves and a JSON summary.
    Bench(commands::BenchArgs),
    /// Validity of constrained vs unconstrained decoding by length.
    ValiditySweep(commands::SweepArgs),
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn fail(code: &str, class: ErrorClass, message: &str) -> ExitCode {
    let message = message.trim().replace('\n', " ");
    eprintln!("error[{code}]: {message}");
    ExitCode::from(exit_code(class))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    match std::env::var("RNAFORGE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Usage(format!("RNAFORGE_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    let ctx = Ctx::new(cli.params.as_deref(), cli.seed, cli.out)?;
    match cli.command {
        Command::Fold(a) => commands::fold(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Design(a) => commands::design(&ctx, a),
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::FilterData(a) => commands::filter_data(&ctx, a),
        Command::SelectRl(a) => commands::select_rl(&ctx, a),
        Command::TrainSl(a) => commands::train_sl(&ctx, a),
        Command::TrainRl(a) => commands::train_rl(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
        Command::ValiditySweep(a) => commands::validity_sweep(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return fail("usage", ErrorClass::Usage, first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.class(), &e.to_string()),
    }
}
