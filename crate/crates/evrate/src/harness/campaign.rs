//! Monte Carlo campaign execution: seeded case generation, end-to-end
//! simulate/estimate/fuse per case, and deterministic result collection.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::catalog::{parse_catalog, synthetic_catalog, CatalogError, StarCatalog};
use crate::estimator::{
    estimate_local_flow, solve_rates, EstimatorError, RateEstimate, TileFlow,
};
use crate::event_sim::{simulate_case, EventStream, SimError};
use crate::fusion::{fuse, rates_to_inertial, DualMounting};
use crate::geometry::boresight_attitude;
use crate::harness::config::{ConfigError, SimulationConfig};
use crate::harness::report::{compute_rms, RmsSummary};
use crate::kinematics::AngularRates;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("catalog error: {0}")]
    Catalog(#[from] CatalogError),
}

/// Per-case outcome classification. Failures are recorded, never fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseStatus {
    Ok,
    /// The camera saw too few stars to produce events.
    EmptyStream,
    /// Fewer than two tiles gathered enough events.
    TooFewTiles,
    /// The stacked system could not observe all three axes.
    RankDeficient,
    /// No tile's refinement converged; the estimate is grid-limited.
    NonConverged,
    /// The simulation itself rejected the case.
    SimFailed,
}

impl CaseStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseStatus::Ok => "ok",
            CaseStatus::EmptyStream => "empty-stream",
            CaseStatus::TooFewTiles => "too-few-tiles",
            CaseStatus::RankDeficient => "rank-deficient",
            CaseStatus::NonConverged => "non-converged",
            CaseStatus::SimFailed => "sim-failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => CaseStatus::Ok,
            "empty-stream" => CaseStatus::EmptyStream,
            "too-few-tiles" => CaseStatus::TooFewTiles,
            "rank-deficient" => CaseStatus::RankDeficient,
            "non-converged" => CaseStatus::NonConverged,
            "sim-failed" => CaseStatus::SimFailed,
            _ => return None,
        })
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, CaseStatus::Ok)
    }
}

/// Exactly the contents of one `cases.csv` row. Rates and errors are in
/// deg/s; estimates are absent for cameras that failed or were not flown.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub case_id: usize,
    pub alpha_b_deg: f64,
    pub delta_b_deg: f64,
    pub roll_deg: f64,
    /// Ground-truth rates in the camera-A frame, deg/s.
    pub truth_deg_s: [f64; 3],
    pub est_a_deg_s: Option<[f64; 3]>,
    pub est_b_deg_s: Option<[f64; 3]>,
    pub fused_deg_s: Option<[f64; 3]>,
    /// Inertial-frame rate errors (estimate minus truth), deg/s.
    pub inertial_err_deg_s: Option<[f64; 3]>,
    pub n_events_a: usize,
    pub n_events_b: Option<usize>,
    pub n_tiles_a: usize,
    pub n_tiles_b: Option<usize>,
    pub status: CaseStatus,
}

/// One executed Monte Carlo case: the CSV row plus diagnostics that stay out
/// of the deterministic output files.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub row: CaseRow,
    pub condition_a: Option<f64>,
    pub condition_b: Option<f64>,
    pub duration_ms: f64,
}

/// Campaign output: per-case results ordered by case id plus the RMS
/// summary.
#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub results: Vec<CaseResult>,
    pub summary: RmsSummary,
}

/// Load the configured catalog: either the bundled synthetic generator or a
/// CSV file filtered at the camera's limit magnitude.
pub fn load_catalog(config: &SimulationConfig) -> Result<StarCatalog, CatalogError> {
    if config.catalog == "synthetic" {
        Ok(synthetic_catalog(
            config.catalog_stars,
            config.catalog_seed,
            config.bright_magnitude,
            config.limit_magnitude,
        ))
    } else {
        parse_catalog(&config.catalog, config.limit_magnitude)
    }
}

/// Run the configured estimator pipeline on one stream: tile-based local
/// flow, the weighted least-squares rate solve, and (when enabled) one
/// residual-based outlier-rejection pass over the tile samples.
pub fn estimate_stream(
    stream: &EventStream,
    config: &SimulationConfig,
) -> Result<(RateEstimate, Vec<TileFlow>), EstimatorError> {
    let camera = stream.camera.clone();
    let (tile_w, tile_h) = config.tile_size();
    let tiles = estimate_local_flow(
        stream,
        &camera,
        tile_w,
        tile_h,
        config.min_events_per_tile,
        &config.flow_settings(),
    )?;
    let samples: Vec<_> = tiles.iter().map(|t| t.sample).collect();
    let solve = |s: &[crate::kinematics::MotionFieldSample]| {
        solve_rates(s, &camera, config.measurement_sigma_px_s, config.weighted_least_squares)
    };
    let estimate = solve(&samples)?;

    if !config.reject_outlier_tiles {
        return Ok((estimate, tiles));
    }
    // A tile that locked onto a spurious contrast maximum shows up as a
    // gross residual against the consensus solution; drop such samples and
    // re-solve once.
    let x = estimate.rates.as_vector();
    let residuals: Vec<f64> = samples
        .iter()
        .map(|s| {
            let predicted = crate::kinematics::motion_matrix(s.x, s.y, camera.focal_length) * x;
            ((s.u - predicted.x).powi(2) + (s.v - predicted.y).powi(2)).sqrt()
        })
        .collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("residuals are finite"));
    let median = sorted[sorted.len() / 2];
    let threshold = (config.outlier_median_factor * median).max(1.0);
    let kept: Vec<_> = samples
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r <= threshold)
        .map(|(s, _)| *s)
        .collect();
    if kept.len() == samples.len() || kept.len() < 2 {
        return Ok((estimate, tiles));
    }
    match solve(&kept) {
        Ok(refined) => Ok((refined, tiles)),
        // Dropping tiles can lose observability; keep the first solution.
        Err(_) => Ok((estimate, tiles)),
    }
}

fn estimator_status(err: &EstimatorError) -> CaseStatus {
    match err {
        EstimatorError::EmptyStream => CaseStatus::EmptyStream,
        EstimatorError::TooFewTiles { .. } | EstimatorError::TooFewSamples(_) => {
            CaseStatus::TooFewTiles
        }
        EstimatorError::RankDeficient { .. } => CaseStatus::RankDeficient,
        EstimatorError::TileTooSmall { .. } => CaseStatus::SimFailed,
    }
}

struct CameraRun {
    estimate: Option<RateEstimate>,
    n_events: usize,
    n_tiles: usize,
    any_tile_converged: bool,
    status: CaseStatus,
}

fn run_one_camera(
    catalog: &StarCatalog,
    config: &SimulationConfig,
    attitude: &crate::geometry::RotationMatrix,
    rates: &AngularRates,
    noise_seed: u64,
) -> Result<CameraRun, SimError> {
    let camera = config.camera().expect("config validated");
    let stream = simulate_case(
        catalog,
        &camera,
        attitude,
        rates,
        config.window_s,
        &config.sim_settings(noise_seed),
    )?;
    let n_events = stream.len();
    match estimate_stream(&stream, config) {
        Ok((estimate, tiles)) => Ok(CameraRun {
            n_tiles: tiles.len(),
            any_tile_converged: tiles.iter().any(|t| t.result.converged),
            estimate: Some(estimate),
            n_events,
            status: CaseStatus::Ok,
        }),
        Err(e) => Ok(CameraRun {
            estimate: None,
            n_events,
            n_tiles: 0,
            any_tile_converged: false,
            status: estimator_status(&e),
        }),
    }
}

fn draw_in_range(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// The random pointing and motion state of one Monte Carlo case.
#[derive(Debug, Clone, Copy)]
pub struct CaseDraw {
    pub alpha_deg: f64,
    pub delta_deg: f64,
    pub roll_rad: f64,
    /// Ground-truth rates in the camera-A frame.
    pub rates: AngularRates,
    pub noise_seed_a: u64,
    pub noise_seed_b: u64,
}

/// Draw the pointing, boresight roll, and rates for a case. The draw
/// depends only on the campaign seed and the case id.
pub fn draw_case(config: &SimulationConfig, case_id: usize) -> CaseDraw {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(case_id as u64 + 1);
    let alpha_deg = draw_in_range(&mut rng, config.alpha_min_deg, config.alpha_max_deg);
    let delta_deg = draw_in_range(&mut rng, config.delta_min_deg, config.delta_max_deg);
    let roll_rad = rng.random_range(0.0..std::f64::consts::TAU);
    let m = config.rate_max_deg_s;
    let rates = AngularRates::from_deg_s(
        draw_in_range(&mut rng, -m, m),
        draw_in_range(&mut rng, -m, m),
        draw_in_range(&mut rng, -m, m),
    );
    CaseDraw {
        alpha_deg,
        delta_deg,
        roll_rad,
        rates,
        noise_seed_a: rng.random::<u64>(),
        noise_seed_b: rng.random::<u64>(),
    }
}

/// Execute one seeded case. The per-case RNG stream depends only on the
/// campaign seed and the case id, so results are independent of execution
/// order and thread count.
pub fn run_case(config: &SimulationConfig, catalog: &StarCatalog, case_id: usize) -> CaseResult {
    let start = std::time::Instant::now();
    let CaseDraw { alpha_deg, delta_deg, roll_rad: roll, rates: rates_a, noise_seed_a, noise_seed_b } =
        draw_case(config, case_id);

    let attitude_a = boresight_attitude(alpha_deg.to_radians(), delta_deg.to_radians(), roll);
    let truth_inertial = rates_to_inertial(&rates_a, &attitude_a);
    let mounting = DualMounting::orthogonal();

    let mut status = CaseStatus::Ok;
    let mut row = CaseRow {
        case_id,
        alpha_b_deg: alpha_deg,
        delta_b_deg: delta_deg,
        roll_deg: roll.to_degrees(),
        truth_deg_s: deg3(&rates_a),
        est_a_deg_s: None,
        est_b_deg_s: None,
        fused_deg_s: None,
        inertial_err_deg_s: None,
        n_events_a: 0,
        n_events_b: None,
        n_tiles_a: 0,
        n_tiles_b: None,
        status: CaseStatus::Ok,
    };
    let mut condition_a = None;
    let mut condition_b = None;

    let run_a = run_one_camera(catalog, config, &attitude_a, &rates_a, noise_seed_a);
    let mut estimate_a = None;
    match run_a {
        Ok(run) => {
            row.n_events_a = run.n_events;
            row.n_tiles_a = run.n_tiles;
            if let Some(est) = &run.estimate {
                row.est_a_deg_s = Some(deg3(&est.rates));
                condition_a = Some(est.condition_number);
                if !run.any_tile_converged {
                    status = CaseStatus::NonConverged;
                }
            } else {
                status = run.status;
            }
            estimate_a = run.estimate;
        }
        Err(_) => status = CaseStatus::SimFailed,
    }

    let mut estimate_b = None;
    if config.dual_camera {
        let attitude_b = mounting.a_to_b() * attitude_a;
        let rates_b = AngularRates::from_vector(&(mounting.a_to_b() * rates_a.as_vector()));
        match run_one_camera(catalog, config, &attitude_b, &rates_b, noise_seed_b) {
            Ok(run) => {
                row.n_events_b = Some(run.n_events);
                row.n_tiles_b = Some(run.n_tiles);
                if let Some(est) = &run.estimate {
                    row.est_b_deg_s = Some(deg3(&est.rates));
                    condition_b = Some(est.condition_number);
                    if status.is_ok() && !run.any_tile_converged {
                        status = CaseStatus::NonConverged;
                    }
                } else if status.is_ok() {
                    status = run.status;
                }
                estimate_b = run.estimate;
            }
            Err(_) => {
                if status.is_ok() {
                    status = CaseStatus::SimFailed;
                }
            }
        }
    }

    // Inertial output uses the fused estimate when both cameras delivered,
    // otherwise the single-camera estimate.
    let primary = match (&estimate_a, &estimate_b) {
        (Some(a), Some(b)) => match fuse(a, b, &mounting, config.inverse_variance_fusion) {
            Ok(fused) => {
                row.fused_deg_s = Some(deg3(&fused.rates));
                Some(fused.rates)
            }
            Err(_) => {
                if status.is_ok() {
                    status = CaseStatus::RankDeficient;
                }
                None
            }
        },
        (Some(a), None) if !config.dual_camera => Some(a.rates),
        _ => None,
    };
    if let Some(rates) = primary {
        let inertial_est = rates_to_inertial(&rates, &attitude_a);
        let err: Vector3<f64> = inertial_est - truth_inertial;
        row.inertial_err_deg_s =
            Some([err.x.to_degrees(), err.y.to_degrees(), err.z.to_degrees()]);
    }

    row.status = status;
    CaseResult {
        row,
        condition_a,
        condition_b,
        duration_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

fn deg3(rates: &AngularRates) -> [f64; 3] {
    let (p, q, r) = rates.to_deg_s();
    [p, q, r]
}

/// Run the full campaign: validate, load the catalog, execute every case in
/// a work pool, and summarize. Per-case failures are recorded in the rows
/// rather than aborting the run.
pub fn run_campaign(config: &SimulationConfig) -> Result<CampaignOutput, CampaignError> {
    config.validate()?;
    let catalog = load_catalog(config)?;
    let results: Vec<CaseResult> = (0..config.case_count)
        .into_par_iter()
        .map(|case_id| run_case(config, &catalog, case_id))
        .collect();
    let rows: Vec<CaseRow> = results.iter().map(|r| r.row.clone()).collect();
    let summary = compute_rms(&rows).expect("case_count >= 1 was validated");
    Ok(CampaignOutput { results, summary })
}
