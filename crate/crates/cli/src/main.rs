use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rigidlab_cli::output::OutDir;
use rigidlab_cli::{run, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "rigidlab", version, about = "Distance-to-isometry experiments on the sphere and the flat torus")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-member parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Per-map energy, degree and weak Piola residual.
    Energy,
    /// Nearest-isometry pipeline report and deficit map per map.
    Recover,
    /// Distance versus energy over the ε ladder, with a log-log plot.
    Scaling,
    /// Low spectrum and nullspace of the Korn-type operator.
    Nullspace,
    /// Heat-flow monitor series per map.
    Heatflow,
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let cmd = match cli.command {
        Cmd::Energy => Command::Energy,
        Cmd::Recover => Command::Recover,
        Cmd::Scaling => Command::Scaling,
        Cmd::Nullspace => Command::Nullspace,
        Cmd::Heatflow => Command::Heatflow,
    };
    let mut out = OutDir::new(cfg.out.clone().unwrap_or_else(|| PathBuf::from("rigidlab-out")));
    let result = run(cmd, &cfg, &mut out);
    for p in &out.written {
        println!("{}", p.display());
    }
    result.map(|_| out.written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
