use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use texsr::commands::{self, THREADS_ENV};

/// Multi-view texture super-resolution.
///
/// Exit codes: 0 success, 1 numerical failure, 2 usage or config error,
/// 3 I/O error. TEXSR_THREADS caps the worker count (0 = automatic).
#[derive(Debug, Parser)]
#[command(name = "texsr", version, about)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene bundle from a scene config.
    Synth { config: PathBuf },
    /// Super-resolve a scene bundle and score the result.
    Solve { config: PathBuf },
    /// Learn the solver weights, blur widths and prior on a scene bundle.
    Train { config: PathBuf },
    /// Score an existing texture against a scene's ground truth.
    Eval { config: PathBuf },
}

fn run(cli: Cli) -> texsr::Result<()> {
    let threads = commands::init_thread_pool(std::env::var(THREADS_ENV).ok().as_deref())?;
    log::debug!("using {threads} worker threads");
    match cli.command {
        Command::Synth { config } => commands::synth(&config).map(drop),
        Command::Solve { config } => {
            let report = commands::solve(&config)?;
            println!("{}", report.to_line());
            Ok(())
        }
        Command::Train { config } => {
            for e in commands::train(&config)? {
                match e.validation_psnr {
                    Some(p) => println!("epoch {} loss {:.6} val_psnr {p:.4}", e.epoch, e.loss),
                    None => println!("epoch {} loss {:.6}", e.epoch, e.loss),
                }
            }
            Ok(())
        }
        Command::Eval { config } => {
            let report = commands::eval(&config)?;
            println!("{}", report.to_line());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("TEXSR_LOG")
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
