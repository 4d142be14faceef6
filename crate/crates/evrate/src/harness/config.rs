//! Campaign configuration: a flat key/value TOML file with defaults for
//! every field, overridable from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{FlowSettings, ScoreKind};
use crate::event_sim::{peak_image_speed, RenderSettings, SimSettings};
use crate::geometry::CameraModel;
use crate::kinematics::AngularRates;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Full simulation-campaign configuration. Every field has a default; a
/// config file only needs the keys it wants to change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    // Campaign.
    pub case_count: usize,
    pub seed: u64,
    pub dual_camera: bool,
    /// Largest magnitude of each drawn rate component, deg/s.
    pub rate_max_deg_s: f64,
    pub alpha_min_deg: f64,
    pub alpha_max_deg: f64,
    pub delta_min_deg: f64,
    pub delta_max_deg: f64,

    // Catalog: "synthetic" or a path to a catalog CSV.
    pub catalog: String,
    pub catalog_stars: usize,
    pub catalog_seed: u64,
    pub limit_magnitude: f64,
    /// Brightest magnitude the synthetic catalog will draw.
    pub bright_magnitude: f64,

    // Camera.
    pub width: u32,
    pub height: u32,
    pub focal_length_px: f64,
    pub event_threshold: f64,

    // Event simulation.
    pub window_s: f64,
    pub max_window_s: f64,
    pub internal_rate_hz: f64,
    pub psf_sigma_px: f64,
    pub psf_truncate_sigmas: f64,
    pub background_intensity: f64,
    pub limit_flux: f64,
    pub noise_rate_hz: f64,

    // Estimator.
    pub tile_cols: u32,
    pub tile_rows: u32,
    pub min_events_per_tile: usize,
    /// Multiplier on `f * tan(rate_max)` for the velocity search box.
    pub search_margin: f64,
    /// Grid divisions per axis half-width (grid step = range / divisions).
    pub grid_divisions: u32,
    pub newton_tol_px_s: f64,
    pub newton_max_iter: usize,
    pub newton_fd_step_px_s: f64,
    pub bilinear_refinement: bool,
    pub score: ScoreKind,
    pub weighted_least_squares: bool,
    /// Per-channel velocity measurement sigma feeding the analytical
    /// covariance, px/s.
    pub measurement_sigma_px_s: f64,
    pub inverse_variance_fusion: bool,
    /// Drop tile samples whose fit residual exceeds
    /// `outlier_median_factor` times the median residual, then re-solve.
    /// Guards the equal-weight solve against tiles that locked onto a
    /// spurious contrast maximum.
    pub reject_outlier_tiles: bool,
    pub outlier_median_factor: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            case_count: 100,
            seed: 1,
            dual_camera: true,
            rate_max_deg_s: 30.0,
            alpha_min_deg: 0.0,
            alpha_max_deg: 360.0,
            delta_min_deg: -90.0,
            delta_max_deg: 90.0,
            catalog: "synthetic".into(),
            catalog_stars: 5000,
            catalog_seed: 2024,
            limit_magnitude: 6.0,
            bright_magnitude: -1.5,
            width: 640,
            height: 480,
            focal_length_px: 1464.0,
            event_threshold: 0.2,
            window_s: 0.1,
            max_window_s: 0.1,
            internal_rate_hz: 2000.0,
            psf_sigma_px: 0.8,
            psf_truncate_sigmas: 3.0,
            background_intensity: 1.0,
            limit_flux: 5.0,
            noise_rate_hz: 0.0,
            tile_cols: 4,
            tile_rows: 4,
            min_events_per_tile: 20,
            search_margin: 1.2,
            grid_divisions: 25,
            newton_tol_px_s: 1e-3,
            newton_max_iter: 50,
            newton_fd_step_px_s: 0.5,
            bilinear_refinement: true,
            score: ScoreKind::SumSquares,
            weighted_least_squares: false,
            measurement_sigma_px_s: 2.0,
            inverse_variance_fusion: false,
            reject_outlier_tiles: true,
            outlier_median_factor: 4.0,
        }
    }
}

impl SimulationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn camera(&self) -> Result<CameraModel, ConfigError> {
        CameraModel::new(
            self.focal_length_px,
            self.width,
            self.height,
            self.limit_magnitude,
            self.event_threshold,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sim_settings(&self, noise_seed: u64) -> SimSettings {
        SimSettings {
            internal_rate_hz: self.internal_rate_hz,
            max_window_s: self.max_window_s,
            render: RenderSettings {
                psf_sigma: self.psf_sigma_px,
                psf_truncate: self.psf_truncate_sigmas,
                background: self.background_intensity,
                limit_flux: self.limit_flux,
            },
            noise_rate_hz: self.noise_rate_hz,
            noise_seed,
        }
    }

    pub fn flow_settings(&self) -> FlowSettings {
        // tan() blows up toward 90 deg; the validation cap keeps this sane.
        let range =
            self.focal_length_px * self.rate_max_deg_s.to_radians().tan() * self.search_margin;
        let range = range.max(10.0);
        FlowSettings {
            search_range: range,
            grid_step: range / f64::from(self.grid_divisions),
            newton_tol: self.newton_tol_px_s,
            newton_max_iter: self.newton_max_iter,
            fd_step: self.newton_fd_step_px_s,
            bilinear_refine: self.bilinear_refinement,
            score: self.score,
        }
    }

    /// Tile size in pixels implied by the configured tile grid.
    pub fn tile_size(&self) -> (u32, u32) {
        (self.width.div_ceil(self.tile_cols), self.height.div_ceil(self.tile_rows))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        self.camera()?;
        if self.case_count == 0 {
            return invalid("case_count must be at least 1".into());
        }
        if !(self.rate_max_deg_s >= 0.0) || self.rate_max_deg_s >= 80.0 {
            return invalid(format!(
                "rate_max_deg_s must be in [0, 80), got {}",
                self.rate_max_deg_s
            ));
        }
        if self.alpha_min_deg > self.alpha_max_deg {
            return invalid("alpha range is inverted".into());
        }
        if self.delta_min_deg > self.delta_max_deg
            || self.delta_min_deg < -90.0
            || self.delta_max_deg > 90.0
        {
            return invalid("delta range must lie inside [-90, 90] deg".into());
        }
        if !(self.window_s > 0.0) {
            return invalid(format!("window_s must be positive, got {}", self.window_s));
        }
        if self.window_s > self.max_window_s {
            return invalid(format!(
                "window_s {} exceeds max_window_s {}",
                self.window_s, self.max_window_s
            ));
        }
        if !(self.internal_rate_hz > 0.0) {
            return invalid("internal_rate_hz must be positive".into());
        }
        if self.catalog == "synthetic" && self.catalog_stars == 0 {
            return invalid("catalog_stars must be at least 1".into());
        }
        if self.bright_magnitude > self.limit_magnitude {
            return invalid("bright_magnitude must not exceed limit_magnitude".into());
        }
        if self.tile_cols == 0 || self.tile_rows == 0 {
            return invalid("tile grid must be at least 1x1".into());
        }
        let (tw, th) = self.tile_size();
        if tw < 16 || th < 16 {
            return invalid(format!("tiles of {tw}x{th} px are below the 16 px minimum"));
        }
        if self.grid_divisions == 0 {
            return invalid("grid_divisions must be at least 1".into());
        }
        if !(self.psf_sigma_px > 0.0) || !(self.background_intensity > 0.0) || !(self.limit_flux > 0.0)
        {
            return invalid("psf_sigma_px, background_intensity and limit_flux must be positive".into());
        }
        if !(self.measurement_sigma_px_s > 0.0) {
            return invalid("measurement_sigma_px_s must be positive".into());
        }
        if !(self.outlier_median_factor > 1.0) {
            return invalid("outlier_median_factor must exceed 1".into());
        }
        if self.noise_rate_hz < 0.0 {
            return invalid("noise_rate_hz must be non-negative".into());
        }

        // Sub-pixel propagation: the fastest star displacement per internal
        // frame must stay below one pixel for the worst-case rate draw.
        let camera = self.camera()?;
        let m = self.rate_max_deg_s.to_radians();
        let mut peak = 0.0_f64;
        for signs in [[1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [1.0, -1.0, -1.0]] {
            let rates = AngularRates::new(m * signs[0], m * signs[1], m * signs[2]);
            peak = peak.max(peak_image_speed(&camera, &rates));
        }
        if peak / self.internal_rate_hz >= 1.0 {
            return invalid(format!(
                "internal_rate_hz {} cannot keep star motion sub-pixel at {} deg/s (needs > {:.0} Hz)",
                self.internal_rate_hz, self.rate_max_deg_s, peak
            ));
        }
        Ok(())
    }
}
