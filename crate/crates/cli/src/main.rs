use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abc_evolution::{run_job, validate_config, write_artifacts, JobConfig};
use clap::{Parser, Subcommand};

const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "abc-evolution", version, about = "Second-order ABC decomposition jobs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one job and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Quadrature seed; overrides `quadrature.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the parallel kernels.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config and print its canonical form.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<JobConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: reading {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })?;
    validate_config(&text).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })
}

fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> Result<(), ExitCode> {
    let mut cfg = load(config)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return Err(ExitCode::from(CONFIG_ERROR));
        }
    }
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let base = config.parent().unwrap_or(Path::new("."));
    let fail = |e: abc_evolution::JobError| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code() as u8)
    };
    let files = run_job(&cfg, base).map_err(fail)?;
    write_artifacts(&dir, &files).map_err(fail)?;
    println!("{}: wrote {} files to {}", cfg.job, files.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, threads } => run(&config, out, seed, threads),
        Command::Validate { config } => load(&config).map(|cfg| print!("{}", cfg.canonical_json())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
