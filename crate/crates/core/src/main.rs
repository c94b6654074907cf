use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trustgrid::cli::{self, CliError, ExperimentSpec, ModelFile};
use trustgrid::linsys::{ContinuousCaseStudy, DEFAULT_DT, DEFAULT_MEASUREMENT_NOISE, DEFAULT_PROCESS_NOISE};

#[derive(Parser)]
#[command(name = "trustgrid", version, about = "Trust-weighted secure control experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Base seed (replaces sim.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of realizations.
    #[arg(long)]
    realizations: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its CSV and metadata sidecar.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a spec and print it with all defaults filled in.
    Validate {
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the discretized case-study model as a model file.
    ShowModel {
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        #[arg(long, default_value_t = DEFAULT_PROCESS_NOISE)]
        w_base: f64,
        #[arg(long, default_value_t = DEFAULT_MEASUREMENT_NOISE)]
        v: f64,
    },
}

fn load(path: &Path, o: &Overrides) -> Result<ExperimentSpec, CliError> {
    let mut spec = cli::parse_spec(path)?;
    if let Some(seed) = o.seed {
        spec.sim.seed = seed;
    }
    if let Some(n) = o.realizations {
        spec.realizations = Some(n);
    }
    if let Some(out) = &o.output {
        spec.output = Some(out.clone());
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes to stdout, ignoring a closed pipe.
fn print_out(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn dispatch(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Run { spec, overrides } => {
            let spec = load(&spec, &overrides)?;
            let done = cli::execute(&spec)?;
            log::info!("{} rows written", done.rows);
            print_out(&done.output.display().to_string());
        }
        Command::Validate { spec, overrides } => {
            let spec = load(&spec, &overrides)?;
            print_out(&serde_json::to_string_pretty(&spec).expect("spec serializes"));
        }
        Command::ShowModel { dt, w_base, v } => {
            let model = ContinuousCaseStudy::grid(dt)
                .build_isotropic(w_base, v)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            print_out(&ModelFile::from_model(&model).to_pretty_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
