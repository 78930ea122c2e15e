use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dwropt::optim::Status;
use dwropt_cli::config::{preset, ExperimentConfig, PRESETS};
use dwropt_cli::scenario;
use dwropt_cli::{exit_code, PhaseError, RunReport};

#[derive(Parser)]
#[command(name = "dwropt", version, about = "Goal-oriented optimization of effective coefficient models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the coefficient (and advection) fields.
    GenerateField(Common),
    /// Compute and write the initial effective model.
    Upscale(Common),
    /// Run the fine-scale reference solve.
    Reference(Common),
    /// Split the error of the initial model into local indicators.
    Estimate(Common),
    /// Run the Gauss-Newton optimization.
    Optimize(Common),
    /// Optimize with the fully resolved and the enhanced dual side by side.
    CompareDuals(Common),
    /// List the built-in scenarios.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, short, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario name instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default: the config's `output`, else out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, dwropt::Error> {
        let mut c = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => unreachable!("clap requires one of them"),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

fn finish(report: &RunReport) -> ExitCode {
    println!("{}", report.render());
    eprintln!("wrote {}", report.out_dir.display());
    if report.status == Some(Status::Diverged) {
        eprintln!("error: optimization diverged");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn fail(e: &PhaseError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::GenerateField(c)
        | Command::Upscale(c)
        | Command::Reference(c)
        | Command::Estimate(c)
        | Command::Optimize(c)
        | Command::CompareDuals(c) => c,
    };
    let config = match common.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    let out = common.out.as_deref();
    let result = match cli.command {
        Command::GenerateField(_) => scenario::generate_field(&config, out),
        Command::Upscale(_) => scenario::upscale(&config, out),
        Command::Reference(_) => scenario::reference(&config, out),
        Command::Estimate(_) => scenario::estimate(&config, out).map(|(r, _)| r),
        Command::Optimize(_) => scenario::run_scenario(&config, out),
        Command::CompareDuals(_) => scenario::compare_duals(&config, out).map(|(r, _)| r),
        Command::Presets => unreachable!(),
    };
    match result {
        Ok(report) => finish(&report),
        Err(e) => fail(&e),
    }
}
