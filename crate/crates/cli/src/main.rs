use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use lcvine::bicop::{parse_family_set, FamilyKind};
use lcvine::geo::{read_stations_csv, Location};
use lcvine::margins::{MarginOptions, Observations};
use lcvine::model::{FitMode, ModelFile};
use lcvine::optim::LbfgsOptions;
use lcvine::pipeline::{
    comparison_table, expand_times, fit_model, parameter_table, predict_location, simulate, validate_models,
    write_report, write_simulation, FitOptions, SimulateOptions,
};
use lcvine::predict::{write_predictions_csv, DEFAULT_MEMBERS};
use lcvine::slcvcl::SpatialParam;
use lcvine::synth::{default_beta, WorldKind};
use lcvine::Error;

#[derive(Parser)]
#[command(name = "lcvine", version, about = "Spatial dependence modeling with local C-vines")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit margins, structure and copula parameters; write a model file.
    Fit(FitArgs),
    /// Ensemble prediction at a new location.
    Predict(PredictArgs),
    /// Score one or more models at held-out stations.
    Validate(ValidateArgs),
    /// Generate a synthetic network with known dependence.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// `all` or a comma list such as `gaussian,t,clayton`.
    #[arg(long, default_value = "all")]
    families: String,
    /// lcvcl, slcvcl or gauss-baseline.
    #[arg(long, default_value = "slcvcl")]
    mode: FitMode,
    #[arg(long)]
    out: PathBuf,
    /// Recorded in the model file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Pre-whiten residuals with an AR(1) filter (disables prediction).
    #[arg(long)]
    ar1: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// LON,LAT,ELEV of the target.
    #[arg(long, allow_hyphen_values = true)]
    coords: String,
    /// Observations of the training stations.
    #[arg(long)]
    obs: PathBuf,
    /// `all`, a date, or START:END.
    #[arg(long, default_value = "all")]
    times: String,
    #[arg(long, default_value_t = DEFAULT_MEMBERS)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write every ensemble member.
    #[arg(long)]
    samples: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<PathBuf>,
    /// Observations at the held-out stations.
    #[arg(long)]
    truth: PathBuf,
    /// Locations of the held-out stations.
    #[arg(long)]
    truth_stations: PathBuf,
    /// Observations of the training stations.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MEMBERS)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Training stations.
    #[arg(long)]
    d: usize,
    /// Time steps.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON file with the 16 named coefficients (default built in).
    #[arg(long)]
    beta: Option<PathBuf>,
    /// Extra stations written separately as truth for validation.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    /// gaussian-field or linked-vine.
    #[arg(long, default_value = "gaussian-field")]
    world: String,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Exit codes: 2 input or format problems, 3 numeric failure,
/// 4 non-convergence, 5 requested times without data.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::Format(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
        Error::Numeric(_) | Error::InvalidParameter(_) => 3,
        Error::NonConvergence(_) => 4,
        Error::MissingData(_) => 5,
    }
}

fn parse_coords(s: &str) -> lcvine::Result<Location> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("coordinates '{s}' are not LON,LAT,ELEV")))?;
    match parts[..] {
        [lon, lat, elev] => Location::new(lon, lat, elev),
        _ => Err(Error::InvalidInput(format!("coordinates '{s}' are not LON,LAT,ELEV"))),
    }
}

fn families(s: &str) -> lcvine::Result<Vec<FamilyKind>> {
    match s.trim() {
        "all" => Ok(FamilyKind::PARAMETRIC.to_vec()),
        "gaussian-only" => Ok(vec![FamilyKind::Gaussian]),
        other => parse_family_set(other),
    }
}

fn read_beta(path: &Path) -> lcvine::Result<SpatialParam> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn model_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for p in paths {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        let mut label = stem.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{stem}_{k}");
            k += 1;
        }
        labels.push(label);
    }
    labels
}

/// Returns the exit code for a completed run.
fn run(cli: Cli) -> lcvine::Result<u8> {
    match cli.command {
        Command::Fit(a) => {
            let stations = read_stations_csv(&a.stations)?;
            let obs = Observations::read_csv(&a.obs)?;
            let opts = FitOptions {
                mode: a.mode,
                families: families(&a.families)?,
                margins: MarginOptions { ar1: a.ar1 },
                lbfgs: LbfgsOptions {
                    max_iter: a.max_iter,
                    ..LbfgsOptions::default()
                },
                seed: a.seed,
            };
            let model = fit_model(&stations, &obs, &opts)?;
            model.write(&a.out)?;
            print!("{}", parameter_table(&model));
            if !model.converged() {
                warn!("optimizer did not converge; model written with converged = false");
                return Ok(4);
            }
            Ok(0)
        }
        Command::Predict(a) => {
            let model = ModelFile::read(&a.model)?;
            let location = parse_coords(&a.coords)?;
            let obs = Observations::read_csv(&a.obs)?;
            let dates = expand_times(&a.times, &obs)?;
            let rows = predict_location(&model, &location, &obs, &dates, a.m, a.seed)?;
            write_predictions_csv(&a.out, &rows, a.samples)?;
            let missing = rows.iter().filter(|r| r.is_missing()).count();
            if missing > 0 {
                warn!("{missing} of {} times lack neighbour observations", rows.len());
            }
            Ok(0)
        }
        Command::Validate(a) => {
            let labels = model_labels(&a.model);
            let models = labels
                .into_iter()
                .zip(&a.model)
                .map(|(l, p)| Ok((l, ModelFile::read(p)?)))
                .collect::<lcvine::Result<Vec<_>>>()?;
            let truth_stations = read_stations_csv(&a.truth_stations)?;
            let truth = Observations::read_csv(&a.truth)?;
            let obs = Observations::read_csv(&a.obs)?;
            let report = validate_models(&models, &truth_stations, &truth, &obs, a.m, a.seed)?;
            write_report(&report, &a.out_dir)?;
            print!("{}", comparison_table(&report));
            Ok(0)
        }
        Command::Simulate(a) => {
            let kind = match a.world.as_str() {
                "gaussian-field" => WorldKind::GaussianField,
                "linked-vine" => WorldKind::LinkedVine,
                w => return Err(Error::InvalidInput(format!("unknown world '{w}'"))),
            };
            let beta = match &a.beta {
                Some(p) => read_beta(p)?,
                None => default_beta(),
            };
            let sim = simulate(&SimulateOptions {
                kind,
                d: a.d,
                holdout: a.holdout,
                n: a.n,
                seed: a.seed,
                beta,
            })?;
            write_simulation(&sim, &a.out_dir)?;
            println!(
                "wrote {} stations, {} held out, {} days to {}",
                sim.stations.len(),
                sim.truth_stations.len(),
                a.n,
                a.out_dir.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
