use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hjcone::Exec;
use hjcone_cli::{parse_config, run, Command, RunError};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    PsiTable,
    HjSolve,
    Identities,
    ResidualScan,
    Concentration,
    Convergence,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::PsiTable => Command::PsiTable,
            Sub::HjSolve => Command::HjSolve,
            Sub::Identities => Command::Identities,
            Sub::ResidualScan => Command::ResidualScan,
            Sub::Concentration => Command::Concentration,
            Sub::Convergence => Command::Convergence,
        }
    }
}

/// Hopf-Lax solutions and finite-N matrix inference experiments.
#[derive(Parser, Debug)]
#[command(name = "hjcone", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// Experiment config (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(args: Args) -> Result<PathBuf, RunError> {
    let text = std::fs::read_to_string(&args.config).map_err(RunError::Io)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output = out;
    }
    let exec = match args.threads {
        Some(0) => {
            return Err(RunError::Config(hjcone_cli::ConfigError {
                errors: vec![hjcone_cli::config::LineError { line: 0, message: "--threads must be positive".into() }],
            }))
        }
        Some(1) => Exec::Sequential,
        Some(n) => {
            hjcone::exec::set_threads(n).map_err(|e| RunError::Io(std::io::Error::other(e)))?;
            Exec::default()
        }
        None => Exec::default(),
    };
    let out = cfg.output.clone();
    run(args.command.into(), &cfg, &out, exec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hjcone: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
