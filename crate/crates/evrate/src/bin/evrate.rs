//! Command-line harness over the library: catalog tooling, single-case
//! simulation, stream estimation, Monte Carlo campaigns, and summary
//! recomputation.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 every campaign
//! case failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evrate::catalog::{parse_catalog, synthetic_catalog, write_catalog_csv};
use evrate::estimator::EstimateRecord;
use evrate::event_sim::{simulate_case, EventStream};
use evrate::fusion::DualMounting;
use evrate::geometry::boresight_attitude;
use evrate::harness::{
    compute_rms, draw_case, emit_results, estimate_stream, load_catalog, read_cases_csv,
    run_campaign, SimulationConfig,
};
use evrate::kinematics::AngularRates;

#[derive(Parser)]
#[command(
    name = "evrate",
    version,
    about = "Event-camera star-field simulation and angular-rate estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Star catalog utilities.
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Simulate one case and write its event stream files.
    Simulate(SimulateArgs),
    /// Estimate angular rates from an event stream file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo campaign.
    Campaign(CampaignArgs),
    /// Recompute summary statistics from an existing cases.csv.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Generate a synthetic catalog CSV.
    Gen(CatalogGenArgs),
    /// Print basic statistics of a catalog CSV.
    Inspect(CatalogInspectArgs),
}

#[derive(Args)]
struct CatalogGenArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    stars: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Brightest generated magnitude.
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    mag_min: f64,
    /// Faintest generated magnitude.
    #[arg(long, default_value_t = 6.0)]
    mag_max: f64,
}

#[derive(Args)]
struct CatalogInspectArgs {
    /// Catalog CSV path.
    path: PathBuf,
    /// Only count stars at or brighter than this magnitude.
    #[arg(long, default_value_t = f64::INFINITY)]
    mag_cutoff: f64,
}

/// Overrides for any configuration key; unset flags keep the config-file or
/// built-in default. Flags win over the file.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dual_camera: Option<bool>,
    #[arg(long)]
    rate_max_deg_s: Option<f64>,
    #[arg(long)]
    alpha_min_deg: Option<f64>,
    #[arg(long)]
    alpha_max_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta_min_deg: Option<f64>,
    #[arg(long)]
    delta_max_deg: Option<f64>,
    /// "synthetic" or a catalog CSV path.
    #[arg(long)]
    catalog: Option<String>,
    #[arg(long)]
    catalog_stars: Option<usize>,
    #[arg(long)]
    catalog_seed: Option<u64>,
    #[arg(long)]
    limit_magnitude: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    bright_magnitude: Option<f64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    focal_length_px: Option<f64>,
    #[arg(long)]
    event_threshold: Option<f64>,
    #[arg(long)]
    window_s: Option<f64>,
    #[arg(long)]
    max_window_s: Option<f64>,
    #[arg(long)]
    internal_rate_hz: Option<f64>,
    #[arg(long)]
    psf_sigma_px: Option<f64>,
    #[arg(long)]
    psf_truncate_sigmas: Option<f64>,
    #[arg(long)]
    background_intensity: Option<f64>,
    #[arg(long)]
    limit_flux: Option<f64>,
    #[arg(long)]
    noise_rate_hz: Option<f64>,
    #[arg(long)]
    tile_cols: Option<u32>,
    #[arg(long)]
    tile_rows: Option<u32>,
    #[arg(long)]
    min_events_per_tile: Option<usize>,
    #[arg(long)]
    search_margin: Option<f64>,
    #[arg(long)]
    grid_divisions: Option<u32>,
    #[arg(long)]
    newton_tol_px_s: Option<f64>,
    #[arg(long)]
    newton_max_iter: Option<usize>,
    #[arg(long)]
    newton_fd_step_px_s: Option<f64>,
    #[arg(long)]
    bilinear_refinement: Option<bool>,
    #[arg(long)]
    weighted_least_squares: Option<bool>,
    #[arg(long)]
    measurement_sigma_px_s: Option<f64>,
    #[arg(long)]
    inverse_variance_fusion: Option<bool>,
    #[arg(long)]
    reject_outlier_tiles: Option<bool>,
    #[arg(long)]
    outlier_median_factor: Option<f64>,
}

impl ConfigOverrides {
    fn apply(&self, config: &mut SimulationConfig) {
        macro_rules! set {
            ($($field:ident <- $flag:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { config.$field = v; })*
            };
        }
        set!(
            case_count <- cases,
            seed <- seed,
            dual_camera <- dual_camera,
            rate_max_deg_s <- rate_max_deg_s,
            alpha_min_deg <- alpha_min_deg,
            alpha_max_deg <- alpha_max_deg,
            delta_min_deg <- delta_min_deg,
            delta_max_deg <- delta_max_deg,
            catalog <- catalog,
            catalog_stars <- catalog_stars,
            catalog_seed <- catalog_seed,
            limit_magnitude <- limit_magnitude,
            bright_magnitude <- bright_magnitude,
            width <- width,
            height <- height,
            focal_length_px <- focal_length_px,
            event_threshold <- event_threshold,
            window_s <- window_s,
            max_window_s <- max_window_s,
            internal_rate_hz <- internal_rate_hz,
            psf_sigma_px <- psf_sigma_px,
            psf_truncate_sigmas <- psf_truncate_sigmas,
            background_intensity <- background_intensity,
            limit_flux <- limit_flux,
            noise_rate_hz <- noise_rate_hz,
            tile_cols <- tile_cols,
            tile_rows <- tile_rows,
            min_events_per_tile <- min_events_per_tile,
            search_margin <- search_margin,
            grid_divisions <- grid_divisions,
            newton_tol_px_s <- newton_tol_px_s,
            newton_max_iter <- newton_max_iter,
            newton_fd_step_px_s <- newton_fd_step_px_s,
            bilinear_refinement <- bilinear_refinement,
            weighted_least_squares <- weighted_least_squares,
            measurement_sigma_px_s <- measurement_sigma_px_s,
            inverse_variance_fusion <- inverse_variance_fusion,
            reject_outlier_tiles <- reject_outlier_tiles,
            outlier_median_factor <- outlier_median_factor,
        );
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Configuration file (TOML key/value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Campaign case id whose seeded draw supplies unset pointing/rates.
    #[arg(long, default_value_t = 0)]
    case_id: usize,
    #[arg(long)]
    alpha_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta_deg: Option<f64>,
    #[arg(long)]
    roll_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    p_deg_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    q_deg_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r_deg_s: Option<f64>,
    /// Output directory for stream and truth files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Stream file format.
    #[arg(long, value_enum, default_value_t = StreamFormat::Both)]
    format: StreamFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StreamFormat {
    Csv,
    Evs,
    Both,
}

#[derive(Args)]
struct EstimateArgs {
    /// Event stream file (.csv or .evs).
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Output directory for cases.csv, summary.json, and scatter files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Suppress per-case progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// An existing cases.csv.
    #[arg(long)]
    cases: PathBuf,
    /// Output summary JSON path.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Config(String),
    Io(String),
    AllCasesFailed,
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Io(_) => ExitCode::from(3),
            CliError::AllCasesFailed => ExitCode::from(4),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::AllCasesFailed => write!(f, "every campaign case failed"),
        }
    }
}

fn load_config(
    path: &Option<PathBuf>,
    overrides: &ConfigOverrides,
) -> Result<SimulationConfig, CliError> {
    let mut config = match path {
        Some(p) => SimulationConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => SimulationConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn run_catalog(cmd: &CatalogCommand) -> Result<(), CliError> {
    match cmd {
        CatalogCommand::Gen(args) => {
            if args.stars == 0 {
                return Err(CliError::Config("--stars must be at least 1".into()));
            }
            if args.mag_min > args.mag_max {
                return Err(CliError::Config("--mag-min must not exceed --mag-max".into()));
            }
            let catalog = synthetic_catalog(args.stars, args.seed, args.mag_min, args.mag_max);
            write_catalog_csv(&catalog, &args.out).map_err(io_err)?;
            println!("wrote {} stars to {}", catalog.len(), args.out.display());
            Ok(())
        }
        CatalogCommand::Inspect(args) => {
            let catalog = parse_catalog(&args.path, args.mag_cutoff)
                .map_err(|e| CliError::Io(e.to_string()))?;
            let mags: Vec<f64> = catalog.stars().iter().map(|s| s.magnitude).collect();
            let brightest = mags.iter().cloned().fold(f64::INFINITY, f64::min);
            let faintest = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!("source: {}", catalog.source_name());
            println!("stars: {}", catalog.len());
            println!("magnitude range: {brightest:.2} to {faintest:.2}");
            Ok(())
        }
    }
}

fn write_stream(
    stream: &EventStream,
    out_dir: &Path,
    tag: &str,
    format: StreamFormat,
) -> Result<(), CliError> {
    if matches!(format, StreamFormat::Csv | StreamFormat::Both) {
        let path = out_dir.join(format!("events_{tag}.csv"));
        stream.write_csv_file(&path).map_err(io_err)?;
        println!("wrote {} events to {}", stream.len(), path.display());
    }
    if matches!(format, StreamFormat::Evs | StreamFormat::Both) {
        let path = out_dir.join(format!("events_{tag}.evs"));
        stream.write_evs_file(&path).map_err(io_err)?;
        println!("wrote {} events to {}", stream.len(), path.display());
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, &args.overrides)?;
    let catalog = load_catalog(&config).map_err(|e| CliError::Io(e.to_string()))?;
    let camera = config.camera().map_err(|e| CliError::Config(e.to_string()))?;

    let draw = draw_case(&config, args.case_id);
    let alpha_deg = args.alpha_deg.unwrap_or(draw.alpha_deg);
    let delta_deg = args.delta_deg.unwrap_or(draw.delta_deg);
    let roll_rad = args.roll_deg.map_or(draw.roll_rad, f64::to_radians);
    let (dp, dq, dr) = draw.rates.to_deg_s();
    let rates = AngularRates::from_deg_s(
        args.p_deg_s.unwrap_or(dp),
        args.q_deg_s.unwrap_or(dq),
        args.r_deg_s.unwrap_or(dr),
    );

    std::fs::create_dir_all(&args.out_dir).map_err(io_err)?;
    let attitude_a = boresight_attitude(alpha_deg.to_radians(), delta_deg.to_radians(), roll_rad);
    let stream_a = simulate_case(
        &catalog,
        &camera,
        &attitude_a,
        &rates,
        config.window_s,
        &config.sim_settings(draw.noise_seed_a),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    write_stream(&stream_a, &args.out_dir, "a", args.format)?;

    let (p, q, r) = rates.to_deg_s();
    let mut truth = serde_json::json!({
        "case_id": args.case_id,
        "alpha_b_deg": alpha_deg,
        "delta_b_deg": delta_deg,
        "roll_deg": roll_rad.to_degrees(),
        "rates_deg_s": { "p": p, "q": q, "r": r },
        "config": config,
    });

    if config.dual_camera {
        let mounting = DualMounting::orthogonal();
        let attitude_b = mounting.a_to_b() * attitude_a;
        let rates_b = AngularRates::from_vector(&(mounting.a_to_b() * rates.as_vector()));
        let stream_b = simulate_case(
            &catalog,
            &camera,
            &attitude_b,
            &rates_b,
            config.window_s,
            &config.sim_settings(draw.noise_seed_b),
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        write_stream(&stream_b, &args.out_dir, "b", args.format)?;
        let (pb, qb, rb) = rates_b.to_deg_s();
        truth["rates_b_deg_s"] = serde_json::json!({ "p": pb, "q": qb, "r": rb });
    }

    let truth_path = args.out_dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth).expect("serializable") + "\n")
        .map_err(io_err)?;
    println!("wrote {}", truth_path.display());
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, &args.overrides)?;
    let camera = config.camera().map_err(|e| CliError::Config(e.to_string()))?;
    let binary = args.stream.extension().is_some_and(|ext| ext == "evs");
    let stream = if binary {
        EventStream::read_evs_file(&args.stream, camera)
    } else {
        EventStream::read_csv_file(&args.stream, camera)
    }
    .map_err(|e| CliError::Io(e.to_string()))?;

    let (estimate, tiles) =
        estimate_stream(&stream, &config).map_err(|e| CliError::Config(e.to_string()))?;
    let record = EstimateRecord::new(&estimate, &tiles);
    let json = serde_json::to_string_pretty(&record).expect("serializable");
    match &args.out {
        Some(path) => {
            std::fs::write(path, json + "\n").map_err(io_err)?;
            println!(
                "rates: p {:+.4} q {:+.4} r {:+.4} deg/s ({} tiles) -> {}",
                record.rates_deg_s[0],
                record.rates_deg_s[1],
                record.rates_deg_s[2],
                record.tiles.len(),
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run_campaign_cmd(args: &CampaignArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, &args.overrides)?;
    let output = run_campaign(&config).map_err(|e| match e {
        evrate::harness::CampaignError::Config(c) => CliError::Config(c.to_string()),
        evrate::harness::CampaignError::Catalog(c) => CliError::Io(c.to_string()),
    })?;

    if !args.quiet {
        for result in &output.results {
            let row = &result.row;
            println!(
                "case {:4}  status {:<14} events {:>8}  tiles {:>3}  {:.0} ms",
                row.case_id,
                row.status.as_str(),
                row.n_events_a,
                row.n_tiles_a,
                result.duration_ms
            );
        }
    }

    let rows: Vec<_> = output.results.iter().map(|r| r.row.clone()).collect();
    emit_results(&rows, &output.summary, Some(&config), &args.out_dir)
        .map_err(|e| CliError::Io(e.to_string()))?;

    let summary = &output.summary;
    println!("cases: {} ({} failed)", summary.n_cases, summary.n_failed);
    if let Some(single) = &summary.rms_single {
        println!(
            "single-camera RMS [deg/s]: p {:.4}  q {:.4}  r {:.4}  total {:.4}",
            single.p, single.q, single.r, single.total
        );
    }
    if let Some(fused) = &summary.rms_fused {
        println!(
            "fused RMS         [deg/s]: p {:.4}  q {:.4}  r {:.4}  total {:.4}",
            fused.p, fused.q, fused.r, fused.total
        );
    }
    if let Some(inertial) = &summary.rms_inertial {
        println!(
            "inertial RMS      [deg/s]: x {:.4}  y {:.4}  z {:.4}  total {:.4}",
            inertial.x, inertial.y, inertial.z, inertial.total
        );
    }
    println!("results written to {}", args.out_dir.display());

    if summary.n_failed == summary.n_cases {
        return Err(CliError::AllCasesFailed);
    }
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<(), CliError> {
    let rows = read_cases_csv(&args.cases).map_err(|e| CliError::Io(e.to_string()))?;
    let summary = compute_rms(&rows).map_err(|e| CliError::Io(e.to_string()))?;
    let mut object = serde_json::to_value(&summary)
        .expect("serializable")
        .as_object()
        .cloned()
        .unwrap_or_default();
    object.insert("config_echo".into(), serde_json::Value::Null);
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&object).expect("serializable") + "\n",
    )
    .map_err(io_err)?;
    println!(
        "{} cases ({} failed) -> {}",
        summary.n_cases,
        summary.n_failed,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Catalog(cmd) => run_catalog(cmd),
        Command::Simulate(args) => run_simulate(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Campaign(args) => run_campaign_cmd(args),
        Command::Report(args) => run_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
