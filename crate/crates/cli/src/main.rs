use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrl_cli::runner::{self, RunError};
use nrl_cli::{exit, Experiment, ExperimentConfig, Table};

#[derive(Parser)]
#[command(name = "nrl", version, about = "Nonreversible Langevin sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic variance against the perturbation strength α
    SweepAlpha(Common),
    /// MSE against the step size at a fixed gradient budget
    SweepDt(Common),
    /// Closed-form variance curve for a Gaussian target and quadratic observable
    Analytic(Common),
    /// Metropolis chains with the perturbed proposal
    MhStudy(Common),
    /// Reference expectation by quadrature (two-dimensional targets)
    Reference(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output path
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<Experiment, RunError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output = Some(out.clone());
    }
    Ok(Experiment::from_config(&config)?)
}

fn run(command: Command) -> Result<i32, RunError> {
    let (Command::SweepAlpha(common)
    | Command::SweepDt(common)
    | Command::Analytic(common)
    | Command::MhStudy(common)
    | Command::Reference(common)) = &command;
    let exp = load(common)?;
    let out = exp.output.as_deref();
    let sweep = match command {
        Command::SweepAlpha(_) => runner::sweep_alpha(&exp)?,
        Command::SweepDt(_) => runner::sweep_dt(&exp)?,
        Command::MhStudy(_) => runner::mh_study(&exp)?,
        Command::Analytic(_) => {
            Table::analytic(&runner::analytic(&exp)?).write(out)?;
            return Ok(exit::SUCCESS);
        }
        Command::Reference(_) => {
            Table::reference(&runner::reference(&exp)?).write(out)?;
            return Ok(exit::SUCCESS);
        }
    };
    sweep.table().write(out)?;
    if sweep.all_blown() {
        eprintln!("nrl: every cell blew up");
        return Ok(exit::ALL_BLOWN_UP);
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nrl: {e}");
            match e {
                RunError::Config(_) => exit::CONFIG,
                _ => exit::FAILURE,
            }
        }
    };
    ExitCode::from(code as u8)
}
