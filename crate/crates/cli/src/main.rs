mod error;
mod io;
mod levels;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use thermoscope::dataset::DatasetFile;
use thermoscope::gibbs::GaussianRegime;
use thermoscope::hamiltonian::{estimate_hamiltonian, EstimateOptions, HamiltonianEstimate, XiMethod};
use thermoscope::report::{assess, AssessOptions, Candidates, DEFAULT_MARGIN_FACTOR};
use thermoscope::sim::{recovery_study, simulate_dataset, NoiseModel, Preset, SimulationFile};
use thermoscope::{Analysis, Dataset};

use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "thermoscope", version, about = "Thermalization assessment from tomography data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score levels of description, pick a winner and issue a verdict.
    Assess(AssessArgs),
    /// Estimate the Hamiltonian direction and inverse temperatures, assuming p = 1.
    Estimate(EstimateArgs),
    /// Generate a synthetic dataset or run a recovery study.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct AssessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// `auto` or a level file with the candidate levels.
    #[arg(long, default_value = "auto")]
    candidates: String,
    /// Extra candidate levels; replaces the automatic set.
    #[arg(long)]
    level_file: Option<PathBuf>,
    /// `auto` or a fixed positive value.
    #[arg(long, default_value = "auto", value_parser = parse_alpha)]
    alpha: Alpha,
    #[arg(long, default_value_t = DEFAULT_MARGIN_FACTOR)]
    margin_factor: f64,
    #[arg(long, default_value = "exact", value_parser = parse_method)]
    method: XiMethod,
    /// Per-sample plot data as CSV.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MARGIN_FACTOR)]
    margin_factor: f64,
    #[arg(long, default_value = "exact", value_parser = parse_method)]
    method: XiMethod,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<Preset>,
    /// Simulation setup as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of a config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<NoiseModel>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// `trials=K`: run K trials through the assessment and write a CSV.
    #[arg(long, value_parser = parse_study)]
    study: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MARGIN_FACTOR)]
    margin_factor: f64,
    #[arg(long, default_value = "exact", value_parser = parse_method)]
    method: XiMethod,
}

#[derive(Clone, Copy)]
enum Alpha {
    Auto,
    Fixed(f64),
}

fn parse_alpha(s: &str) -> Result<Alpha, String> {
    if s == "auto" {
        return Ok(Alpha::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Alpha::Fixed(v)),
        _ => Err(format!("expected 'auto' or a positive number, found '{s}'")),
    }
}

fn parse_method(s: &str) -> Result<XiMethod, String> {
    match s {
        "exact" => Ok(XiMethod::Exact),
        "perturbative" => Ok(XiMethod::Perturbative),
        _ => Err(format!("expected 'exact' or 'perturbative', found '{s}'")),
    }
}

fn parse_study(s: &str) -> Result<usize, String> {
    let k = s.strip_prefix("trials=").unwrap_or(s);
    match k.parse::<usize>() {
        Ok(k) if k > 0 => Ok(k),
        _ => Err(format!("expected trials=K with K a positive integer, found '{s}'")),
    }
}

fn load_dataset(path: &PathBuf) -> CliResult<Dataset> {
    let file: DatasetFile = io::read_json(path)?;
    let ds = Dataset::from_file(file)?;
    info!("loaded {}: d = {}, m = {}, R = {}", path.display(), ds.dim(), ds.m(), ds.r());
    Ok(ds)
}

fn load_levels(path: &PathBuf, ds: &Dataset) -> CliResult<Vec<thermoscope::LevelOfDescription>> {
    levels::resolve(io::read_json(path)?, ds)
}

fn cmd_assess(args: AssessArgs) -> CliResult<()> {
    let ds = load_dataset(&args.input)?;
    let mut explicit = Vec::new();
    if args.candidates != "auto" {
        explicit.extend(load_levels(&PathBuf::from(&args.candidates), &ds)?);
    }
    if let Some(path) = &args.level_file {
        explicit.extend(load_levels(path, &ds)?);
    }
    let options = AssessOptions {
        candidates: if explicit.is_empty() { Candidates::Auto } else { Candidates::Explicit(explicit) },
        alpha: match args.alpha {
            Alpha::Auto => None,
            Alpha::Fixed(a) => Some(a),
        },
        margin_factor: args.margin_factor,
        method: args.method,
    };
    let assessment = assess(&ds, &options)?;
    for w in &assessment.report.warnings {
        warn!("{w}");
    }
    info!(
        "winner {} (p = {}), verdict {}",
        assessment.report.winner,
        assessment.report.winner_p,
        assessment.report.verdict.status.as_str()
    );
    if let Some(path) = &args.plot_data {
        io::emit(Some(path), &assessment.plot_csv()?)?;
    }
    io::emit(args.output.as_ref(), &(assessment.report.to_json_pretty() + "\n"))
}

#[derive(Serialize)]
struct EstimateReport {
    dataset_digest: String,
    gaussian_regime: GaussianRegime,
    hamiltonian: HamiltonianEstimate,
}

fn cmd_estimate(args: EstimateArgs) -> CliResult<()> {
    if !(args.margin_factor > 0.0) {
        return Err(CliError::Usage(format!("margin factor must be positive, got {}", args.margin_factor)));
    }
    let ds = load_dataset(&args.input)?;
    let analysis = Analysis::new(&ds)?;
    let hamiltonian = estimate_hamiltonian(
        &analysis,
        EstimateOptions {
            method: args.method,
            margin_factor: args.margin_factor,
        },
    )?;
    for w in &hamiltonian.warnings {
        warn!("{w}");
    }
    let report = EstimateReport {
        dataset_digest: ds.digest(),
        gaussian_regime: analysis.regime,
        hamiltonian,
    };
    let text = serde_json::to_string_pretty(&report).expect("estimate serialization is infallible");
    io::emit(args.output.as_ref(), &(text + "\n"))
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut config = match (&args.preset, &args.config) {
        (Some(preset), _) => preset.config(args.seed.unwrap_or(0), args.noise)?,
        (None, Some(path)) => {
            let file: SimulationFile = io::read_json(path)?;
            file.into_config()?
        }
        (None, None) => return Err(CliError::Usage("one of --preset or --config is required".into())),
    };
    if args.config.is_some() {
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(noise) = args.noise {
            config.noise = noise;
        }
    }
    match args.study {
        Some(trials) => {
            let options = AssessOptions {
                margin_factor: args.margin_factor,
                method: args.method,
                ..Default::default()
            };
            info!("running {trials} trials");
            let study = recovery_study(&config, trials, &options)?;
            io::emit(args.output.as_ref(), &study.to_csv()?)
        }
        None => {
            let ds = simulate_dataset(&config)?;
            info!("simulated R = {} samples, digest {}", ds.r(), ds.digest());
            io::emit(args.output.as_ref(), &(ds.to_json_pretty() + "\n"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("THERMOSCOPE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Assess(a) => cmd_assess(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
