//! Angular-rate estimation from event streams: contrast-maximization flow
//! recovery (coarse grid search plus Newton refinement) followed by a
//! weighted least-squares solve with analytical covariance.

use nalgebra::{Cholesky, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_sim::{Event, EventStream};
use crate::geometry::CameraModel;
use crate::kinematics::{motion_matrix, AngularRates, MotionFieldSample};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("event stream is empty")]
    EmptyStream,
    #[error("tiles must be at least 16 px on a side, got {width}x{height}")]
    TileTooSmall { width: u32, height: u32 },
    #[error("only {found} tile(s) had enough events; at least 2 are needed to observe rates")]
    TooFewTiles { found: usize },
    #[error("at least 2 motion-field samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("normal matrix is rank deficient (condition number {condition_number:.3e}); rates unobservable from this geometry")]
    RankDeficient { condition_number: f64 },
}

/// Polarity-summed accumulator image of warped events.
#[derive(Debug, Clone)]
pub struct WarpedImage {
    /// Row-major `H x W` sums of event polarities.
    pub pixels: Vec<f64>,
    pub width: u32,
    pub height: u32,
    /// Reference time the events were warped to, seconds.
    pub reference_time: f64,
    /// Velocity hypothesis used for the warp, pixels/s.
    pub velocity: (f64, f64),
}

/// One event after warping to the reference time; position is continuous,
/// in sensor array coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedEvent {
    pub x: f64,
    pub y: f64,
    pub polarity: i8,
}

/// Warped event positions together with the warp parameters.
#[derive(Debug, Clone)]
pub struct WarpedEvents {
    pub positions: Vec<WarpedEvent>,
    pub reference_time: f64,
    pub velocity: (f64, f64),
}

/// Translate each event back to the reference time along the velocity
/// hypothesis: `x_w = x - u (t - t0)`, `y_w = y - v (t - t0)`.
pub fn warp_events(stream: &EventStream, velocity: (f64, f64), t0: f64) -> WarpedEvents {
    let (u, v) = velocity;
    let positions = stream
        .events
        .iter()
        .map(|e| {
            let dt = e.t_seconds() - t0;
            WarpedEvent {
                x: f64::from(e.x) - u * dt,
                y: f64::from(e.y) - v * dt,
                polarity: e.polarity,
            }
        })
        .collect();
    WarpedEvents { positions, reference_time: t0, velocity }
}

/// Accumulate warped events into an image by rounding each position to the
/// nearest pixel and summing polarities; out-of-bounds positions are
/// discarded.
pub fn accumulate_image(warped: &WarpedEvents, camera: &CameraModel) -> WarpedImage {
    let mut pixels = vec![0.0; camera.pixel_count()];
    let w = camera.width as i64;
    let h = camera.height as i64;
    for ev in &warped.positions {
        let ix = ev.x.round() as i64;
        let iy = ev.y.round() as i64;
        if ix >= 0 && ix < w && iy >= 0 && iy < h {
            pixels[(iy * w + ix) as usize] += f64::from(ev.polarity);
        }
    }
    WarpedImage {
        pixels,
        width: camera.width,
        height: camera.height,
        reference_time: warped.reference_time,
        velocity: warped.velocity,
    }
}

/// Accumulate with bilinear splatting instead of nearest-pixel rounding.
/// Used during Newton refinement to smooth the objective; portions falling
/// outside the sensor are discarded.
pub fn accumulate_image_bilinear(warped: &WarpedEvents, camera: &CameraModel) -> WarpedImage {
    let mut pixels = vec![0.0; camera.pixel_count()];
    let w = camera.width as i64;
    let h = camera.height as i64;
    for ev in &warped.positions {
        let x0 = ev.x.floor();
        let y0 = ev.y.floor();
        let fx = ev.x - x0;
        let fy = ev.y - y0;
        let k = f64::from(ev.polarity);
        let ix = x0 as i64;
        let iy = y0 as i64;
        let mut splat = |px: i64, py: i64, weight: f64| {
            if px >= 0 && px < w && py >= 0 && py < h && weight > 0.0 {
                pixels[(py * w + px) as usize] += k * weight;
            }
        };
        splat(ix, iy, (1.0 - fx) * (1.0 - fy));
        splat(ix + 1, iy, fx * (1.0 - fy));
        splat(ix, iy + 1, (1.0 - fx) * fy);
        splat(ix + 1, iy + 1, fx * fy);
    }
    WarpedImage {
        pixels,
        width: camera.width,
        height: camera.height,
        reference_time: warped.reference_time,
        velocity: warped.velocity,
    }
}

/// Contrast score definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Sum of squared accumulator values (the default).
    SumSquares,
    /// Mean-removed image variance; differs from `SumSquares` when the
    /// polarity sum is nonzero.
    Variance,
}

/// Sharpness score of an accumulated image: sum of squared pixel values.
pub fn contrast_score(image: &WarpedImage) -> f64 {
    image.pixels.iter().map(|p| p * p).sum()
}

pub fn contrast_score_kind(image: &WarpedImage, kind: ScoreKind) -> f64 {
    match kind {
        ScoreKind::SumSquares => contrast_score(image),
        ScoreKind::Variance => {
            let n = image.pixels.len() as f64;
            let sum: f64 = image.pixels.iter().sum();
            contrast_score(image) - sum * sum / n
        }
    }
}

/// Flow-estimation parameters: grid-search extent plus Newton refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSettings {
    /// Half-width of the velocity search box, pixels/s per axis.
    pub search_range: f64,
    /// Grid spacing, pixels/s.
    pub grid_step: f64,
    /// Newton stops when the step norm drops below this, pixels/s.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Central finite-difference step for gradient/Hessian, pixels/s. Must
    /// stay above the pixel-discretization noise floor of the score.
    pub fd_step: f64,
    /// Accumulate bilinearly during refinement to smooth the objective.
    pub bilinear_refine: bool,
    pub score: ScoreKind,
}

impl FlowSettings {
    /// Settings sized for a camera and a maximum expected angular rate: the
    /// search box covers `f tan(w_max)` plus a 20% margin, with 25 grid
    /// divisions per side.
    pub fn for_max_rate(camera: &CameraModel, max_rate_rad_s: f64) -> Self {
        let range = camera.focal_length * max_rate_rad_s.tan() * 1.2;
        Self::with_range(range)
    }

    pub fn with_range(search_range: f64) -> Self {
        Self {
            search_range,
            grid_step: search_range / 25.0,
            newton_tol: 1e-3,
            newton_max_iter: 50,
            fd_step: 0.5,
            bilinear_refine: true,
            score: ScoreKind::SumSquares,
        }
    }
}

/// Outcome of a contrast-maximization flow estimate.
#[derive(Debug, Clone)]
pub struct ContrastResult {
    /// Best-fit image velocity, pixels/s.
    pub velocity: (f64, f64),
    /// Contrast score at the returned velocity.
    pub score: f64,
    /// Newton iterations performed.
    pub iterations: usize,
    /// False when refinement stopped on a degenerate Hessian, a failed line
    /// search, or the iteration cap.
    pub converged: bool,
    /// Score at the grid winner and after each accepted Newton step
    /// (non-decreasing by construction).
    pub score_trace: Vec<f64>,
}

/// Reusable scratch buffer that scores a velocity hypothesis without
/// allocating a fresh image: only pixels actually hit by warped events are
/// touched and reset.
struct ScoreScratch {
    buf: Vec<f64>,
    touched: Vec<u32>,
    width: i64,
    height: i64,
}

impl ScoreScratch {
    fn new(camera: &CameraModel) -> Self {
        Self {
            buf: vec![0.0; camera.pixel_count()],
            touched: Vec::new(),
            width: i64::from(camera.width),
            height: i64::from(camera.height),
        }
    }

    fn score(
        &mut self,
        events: &[Event],
        t0: f64,
        u: f64,
        v: f64,
        bilinear: bool,
        kind: ScoreKind,
    ) -> f64 {
        let mut polarity_sum = 0.0;
        if bilinear {
            for e in events {
                let dt = e.t_seconds() - t0;
                let xw = f64::from(e.x) - u * dt;
                let yw = f64::from(e.y) - v * dt;
                let x0 = xw.floor();
                let y0 = yw.floor();
                let fx = xw - x0;
                let fy = yw - y0;
                let k = f64::from(e.polarity);
                let ix = x0 as i64;
                let iy = y0 as i64;
                for (px, py, wgt) in [
                    (ix, iy, (1.0 - fx) * (1.0 - fy)),
                    (ix + 1, iy, fx * (1.0 - fy)),
                    (ix, iy + 1, (1.0 - fx) * fy),
                    (ix + 1, iy + 1, fx * fy),
                ] {
                    if px >= 0 && px < self.width && py >= 0 && py < self.height && wgt > 0.0 {
                        let idx = (py * self.width + px) as usize;
                        if self.buf[idx] == 0.0 {
                            self.touched.push(idx as u32);
                        }
                        self.buf[idx] += k * wgt;
                        polarity_sum += k * wgt;
                    }
                }
            }
        } else {
            for e in events {
                let dt = e.t_seconds() - t0;
                let ix = (f64::from(e.x) - u * dt).round() as i64;
                let iy = (f64::from(e.y) - v * dt).round() as i64;
                if ix >= 0 && ix < self.width && iy >= 0 && iy < self.height {
                    let idx = (iy * self.width + ix) as usize;
                    if self.buf[idx] == 0.0 {
                        self.touched.push(idx as u32);
                    }
                    self.buf[idx] += f64::from(e.polarity);
                    polarity_sum += f64::from(e.polarity);
                }
            }
        }
        let mut sum_sq = 0.0;
        for &idx in &self.touched {
            let value = self.buf[idx as usize];
            sum_sq += value * value;
            self.buf[idx as usize] = 0.0;
        }
        self.touched.clear();
        match kind {
            ScoreKind::SumSquares => sum_sq,
            ScoreKind::Variance => {
                sum_sq - polarity_sum * polarity_sum / (self.width * self.height) as f64
            }
        }
    }
}

/// Estimate a single global image velocity by contrast maximization: a
/// coarse grid search over the velocity box followed by Newton refinement on
/// the negated score with finite-difference derivatives and a step-halving
/// safeguard.
pub fn estimate_global_flow(
    stream: &EventStream,
    settings: &FlowSettings,
) -> Result<ContrastResult, EstimatorError> {
    if stream.is_empty() {
        return Err(EstimatorError::EmptyStream);
    }
    let t0 = stream.events.first().map(Event::t_seconds).unwrap_or(0.0);
    let mut scratch = ScoreScratch::new(&stream.camera);
    let events = &stream.events;

    // Coarse grid; ties resolve to the lexicographically smallest (u, v)
    // because iteration ascends and only strict improvements are kept.
    let range = settings.search_range;
    let step = settings.grid_step;
    let divisions = (2.0 * range / step).ceil().max(1.0) as usize;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=divisions {
        let u = -range + i as f64 * step;
        for j in 0..=divisions {
            let v = -range + j as f64 * step;
            let s = scratch.score(events, t0, u, v, false, settings.score);
            if s > best.0 {
                best = (s, u, v);
            }
        }
    }

    // Fine grid around the coarse winner so Newton starts inside the smooth
    // basin of the optimum rather than on a flank one coarse cell away.
    let fine_step = step / 5.0;
    let (_, coarse_u, coarse_v) = best;
    for i in -5..=5_i32 {
        let u = coarse_u + f64::from(i) * fine_step;
        for j in -5..=5_i32 {
            let v = coarse_v + f64::from(j) * fine_step;
            let s = scratch.score(events, t0, u, v, false, settings.score);
            if s > best.0 {
                best = (s, u, v);
            }
        }
    }
    let (_, mut u, mut v) = best;

    // Newton refinement on J = -S.
    let bilinear = settings.bilinear_refine;
    let kind = settings.score;
    let objective =
        |scratch: &mut ScoreScratch, u: f64, v: f64| -scratch.score(events, t0, u, v, bilinear, kind);

    let h = settings.fd_step;
    let mut j_here = objective(&mut scratch, u, v);
    let mut trace = vec![-j_here];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=settings.newton_max_iter {
        iterations = iter;
        let jpu = objective(&mut scratch, u + h, v);
        let jmu = objective(&mut scratch, u - h, v);
        let jpv = objective(&mut scratch, u, v + h);
        let jmv = objective(&mut scratch, u, v - h);
        let jpp = objective(&mut scratch, u + h, v + h);
        let jpm = objective(&mut scratch, u + h, v - h);
        let jmp = objective(&mut scratch, u - h, v + h);
        let jmm = objective(&mut scratch, u - h, v - h);

        let gu = (jpu - jmu) / (2.0 * h);
        let gv = (jpv - jmv) / (2.0 * h);
        let mut huu = (jpu - 2.0 * j_here + jmu) / (h * h);
        let mut hvv = (jpv - 2.0 * j_here + jmv) / (h * h);
        let huv = (jpp - jpm - jmp + jmm) / (4.0 * h * h);

        // The Hessian of J must be positive definite for a descent step.
        // Away from the optimum it may not be; damp it toward the identity
        // instead of giving up so the iteration can still walk downhill.
        let half_gap = 0.5 * (huu - hvv).hypot(2.0 * huv);
        let eig_min = 0.5 * (huu + hvv) - half_gap;
        let eig_max = 0.5 * (huu + hvv) + half_gap;
        let positive_definite = eig_min > 1e-12 * eig_max.abs().max(1.0);
        if !positive_definite {
            let grad_norm = gu.hypot(gv);
            if grad_norm < 1e-12 {
                // Flat and degenerate: nothing to refine.
                converged = false;
                break;
            }
            let damping = -eig_min + eig_max.abs().max(grad_norm / settings.grid_step);
            huu += damping;
            hvv += damping;
        }
        let det = huu * hvv - huv * huv;
        let step_u = -(hvv * gu - huv * gv) / det;
        let step_v = -(huu * gv - huv * gu) / det;
        let step_norm = (step_u * step_u + step_v * step_v).sqrt();
        if step_norm < settings.newton_tol {
            converged = positive_definite;
            break;
        }

        // Step halving until the objective actually decreases.
        let mut scale = 1.0;
        let mut accepted = false;
        while scale > 1.0 / 1024.0 {
            let ju = objective(&mut scratch, u + scale * step_u, v + scale * step_v);
            if ju < j_here {
                u += scale * step_u;
                v += scale * step_v;
                j_here = ju;
                trace.push(-j_here);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No improvement at any scale: either the surface is rugged here
            // (failure) or the proposal is below the finite-difference
            // resolution, which is as converged as the discrete score allows.
            converged = positive_definite && step_norm < h;
            break;
        }
        if scale * step_norm < settings.newton_tol {
            converged = positive_definite;
            break;
        }
    }

    Ok(ContrastResult {
        velocity: (u, v),
        score: -j_here,
        iterations,
        converged,
        score_trace: trace,
    })
}

/// Flow estimate for one sensor tile.
#[derive(Debug, Clone)]
pub struct TileFlow {
    pub col: u32,
    pub row: u32,
    /// Events that fell in this tile.
    pub events: usize,
    /// Sample at the tile's event centroid, in centered coordinates.
    pub sample: MotionFieldSample,
    pub result: ContrastResult,
}

/// Partition the sensor into tiles and estimate a velocity per tile,
/// bridging the single global flow to the spatially distributed samples the
/// rate solver needs. Each qualifying tile (at least `min_events_per_tile`
/// events) yields one sample at its event centroid, weighted by event count.
pub fn estimate_local_flow(
    stream: &EventStream,
    camera: &CameraModel,
    tile_width: u32,
    tile_height: u32,
    min_events_per_tile: usize,
    settings: &FlowSettings,
) -> Result<Vec<TileFlow>, EstimatorError> {
    if tile_width < 16 || tile_height < 16 {
        return Err(EstimatorError::TileTooSmall { width: tile_width, height: tile_height });
    }
    if stream.is_empty() {
        return Err(EstimatorError::EmptyStream);
    }
    let cols = camera.width.div_ceil(tile_width) as usize;
    let rows = camera.height.div_ceil(tile_height) as usize;

    let mut buckets: Vec<Vec<Event>> = vec![Vec::new(); cols * rows];
    for e in &stream.events {
        let c = (u32::from(e.x) / tile_width) as usize;
        let r = (u32::from(e.y) / tile_height) as usize;
        buckets[r * cols + c].push(*e);
    }

    let mut tiles = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let events = std::mem::take(&mut buckets[row * cols + col]);
            if events.len() < min_events_per_tile.max(1) {
                continue;
            }
            let count = events.len();
            let cx = events.iter().map(|e| f64::from(e.x)).sum::<f64>() / count as f64;
            let cy = events.iter().map(|e| f64::from(e.y)).sum::<f64>() / count as f64;
            let sub = EventStream {
                events,
                t_start: stream.t_start,
                t_end: stream.t_end,
                camera: stream.camera.clone(),
            };
            let result = estimate_global_flow(&sub, settings)?;
            let sample = MotionFieldSample {
                // Pixel index i has its center at i + 0.5 - W/2.
                x: cx + 0.5 - f64::from(camera.width) / 2.0,
                y: cy + 0.5 - f64::from(camera.height) / 2.0,
                u: result.velocity.0,
                v: result.velocity.1,
                weight: count as f64,
            };
            tiles.push(TileFlow { col: col as u32, row: row as u32, events: count, sample, result });
        }
    }
    if tiles.len() < 2 {
        return Err(EstimatorError::TooFewTiles { found: tiles.len() });
    }
    Ok(tiles)
}

/// Angular-rate solution with analytical covariance.
#[derive(Debug, Clone)]
pub struct RateEstimate {
    pub rates: AngularRates,
    /// Covariance of the rate solution, (rad/s)^2.
    pub covariance: Matrix3<f64>,
    /// Weighted RMS of the per-sample velocity residuals, pixels/s.
    pub residual_rms: f64,
    pub sample_count: usize,
    /// Square root of the normal-matrix eigenvalue ratio.
    pub condition_number: f64,
}

/// Solve the stacked motion-field system for the angular rates.
///
/// Each sample contributes two rows `F(x_i, y_i)` and measurements
/// `(u_i, v_i)`. With `weighted` the rows are weighted by the sample weights
/// (event counts); otherwise all samples count equally. The covariance is
/// `(H'WH)^-1 H'W Ryy WH (H'WH)^-T` with `Ryy = sigma^2 I`, which reduces to
/// `sigma^2 (H'H)^-1` in the unweighted case.
pub fn solve_rates(
    samples: &[MotionFieldSample],
    camera: &CameraModel,
    measurement_sigma: f64,
    weighted: bool,
) -> Result<RateEstimate, EstimatorError> {
    if samples.len() < 2 {
        return Err(EstimatorError::TooFewSamples(samples.len()));
    }
    let f = camera.focal_length;
    let mut normal = Matrix3::zeros();
    let mut normal_w2 = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for s in samples {
        let w = if weighted { s.weight.max(0.0) } else { 1.0 };
        let fm = motion_matrix(s.x, s.y, f);
        let ftf = fm.transpose() * fm;
        normal += w * ftf;
        normal_w2 += w * w * ftf;
        rhs += w * fm.transpose() * nalgebra::Vector2::new(s.u, s.v);
    }

    let eigen = normal.symmetric_eigenvalues();
    let lambda_max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition_number = if lambda_min > 0.0 {
        (lambda_max / lambda_min).sqrt()
    } else {
        f64::INFINITY
    };
    if !(lambda_min > lambda_max * 1e-12) {
        return Err(EstimatorError::RankDeficient { condition_number });
    }
    let chol = Cholesky::new(normal)
        .ok_or(EstimatorError::RankDeficient { condition_number })?;
    let x = chol.solve(&rhs);
    let normal_inv = chol.inverse();
    let covariance =
        measurement_sigma * measurement_sigma * normal_inv * normal_w2 * normal_inv.transpose();

    let mut weighted_sq = 0.0;
    let mut weight_sum = 0.0;
    for s in samples {
        let w = if weighted { s.weight.max(0.0) } else { 1.0 };
        let predicted = motion_matrix(s.x, s.y, f) * x;
        let du = s.u - predicted.x;
        let dv = s.v - predicted.y;
        weighted_sq += w * (du * du + dv * dv);
        weight_sum += w;
    }
    let residual_rms = (weighted_sq / (2.0 * weight_sum)).sqrt();

    Ok(RateEstimate {
        rates: AngularRates::from_vector(&x),
        covariance,
        residual_rms,
        sample_count: samples.len(),
        condition_number,
    })
}

/// Serializable estimate record (rates in deg/s) with per-tile diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub rates_deg_s: [f64; 3],
    pub covariance_deg2_s2: [[f64; 3]; 3],
    pub residual_px_s: f64,
    pub sample_count: usize,
    pub condition_number: f64,
    pub tiles: Vec<TileRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileRecord {
    pub col: u32,
    pub row: u32,
    pub events: usize,
    /// Sample position, centered pixels.
    pub x: f64,
    pub y: f64,
    /// Estimated tile velocity, pixels/s.
    pub u: f64,
    pub v: f64,
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EstimateRecord {
    pub fn new(estimate: &RateEstimate, tiles: &[TileFlow]) -> Self {
        let (p, q, r) = estimate.rates.to_deg_s();
        let scale = (180.0 / std::f64::consts::PI).powi(2);
        let mut covariance = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                covariance[i][j] = estimate.covariance[(i, j)] * scale;
            }
        }
        Self {
            rates_deg_s: [p, q, r],
            covariance_deg2_s2: covariance,
            residual_px_s: estimate.residual_rms,
            sample_count: estimate.sample_count,
            condition_number: estimate.condition_number,
            tiles: tiles
                .iter()
                .map(|t| TileRecord {
                    col: t.col,
                    row: t.row,
                    events: t.events,
                    x: t.sample.x,
                    y: t.sample.y,
                    u: t.sample.u,
                    v: t.sample.v,
                    score: t.result.score,
                    iterations: t.result.iterations,
                    converged: t.result.converged,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::motion_field;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn camera() -> CameraModel {
        CameraModel::new(1464.0, 640, 480, 6.0, 0.2).unwrap()
    }

    /// Synthesize a noise-free stream of point tracks moving at a common
    /// velocity. Positions are in array coordinates.
    fn track_stream(
        camera: &CameraModel,
        starts: &[(f64, f64)],
        velocity: (f64, f64),
        window: f64,
        dt: f64,
    ) -> EventStream {
        let mut events = Vec::new();
        let steps = (window / dt).round() as usize;
        for i in 0..=steps {
            let t = i as f64 * dt;
            for &(x0, y0) in starts {
                let x = x0 + velocity.0 * t;
                let y = y0 + velocity.1 * t;
                let ix = x.round();
                let iy = y.round();
                if ix >= 0.0 && ix < f64::from(camera.width) && iy >= 0.0 && iy < f64::from(camera.height)
                {
                    events.push(Event {
                        t_us: (t * 1e6).round() as u64,
                        x: ix as u16,
                        y: iy as u16,
                        polarity: 1,
                    });
                }
            }
        }
        EventStream::new(events, 0.0, window, camera.clone()).unwrap()
    }

    #[test]
    fn warp_identity_at_zero_velocity() {
        let cam = camera();
        let stream = track_stream(&cam, &[(100.0, 100.0)], (50.0, 0.0), 0.1, 0.01);
        let warped = warp_events(&stream, (0.0, 0.0), 0.0);
        for (w, e) in warped.positions.iter().zip(&stream.events) {
            assert_eq!(w.x, f64::from(e.x));
            assert_eq!(w.y, f64::from(e.y));
        }
    }

    #[test]
    fn warp_shifts_by_velocity_times_dt() {
        let cam = camera();
        let stream = EventStream::new(
            vec![Event { t_us: 50_000, x: 10, y: 10, polarity: 1 }],
            0.0,
            0.1,
            cam,
        )
        .unwrap();
        let warped = warp_events(&stream, (100.0, 0.0), 0.0);
        assert_abs_diff_eq!(warped.positions[0].x, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(warped.positions[0].y, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn warp_by_true_velocity_collapses_tracks() {
        let cam = camera();
        let velocity = (180.0, -60.0);
        let stream = track_stream(&cam, &[(120.0, 300.0)], velocity, 0.1, 0.0005);
        let warped = warp_events(&stream, velocity, 0.0);
        let n = warped.positions.len() as f64;
        let cx = warped.positions.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = warped.positions.iter().map(|p| p.y).sum::<f64>() / n;
        for p in &warped.positions {
            let dist = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt();
            assert!(dist < 1.0, "warped spread {dist} px exceeds rounding radius");
        }
    }

    #[test]
    fn accumulate_empty_is_zero() {
        let cam = camera();
        let warped = WarpedEvents { positions: vec![], reference_time: 0.0, velocity: (0.0, 0.0) };
        let image = accumulate_image(&warped, &cam);
        assert!(image.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn accumulate_cancels_opposite_polarities() {
        let cam = camera();
        let warped = WarpedEvents {
            positions: vec![
                WarpedEvent { x: 20.2, y: 30.0, polarity: 1 },
                WarpedEvent { x: 19.8, y: 30.4, polarity: -1 },
            ],
            reference_time: 0.0,
            velocity: (0.0, 0.0),
        };
        let image = accumulate_image(&warped, &cam);
        assert_eq!(image.pixels[30 * 640 + 20], 0.0);
    }

    #[test]
    fn accumulate_checksum_matches_polarity_sum() {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let positions: Vec<WarpedEvent> = (0..500)
            .map(|_| WarpedEvent {
                // Some positions fall off-sensor and must be dropped.
                x: rng.random_range(-30.0..700.0),
                y: rng.random_range(-30.0..520.0),
                polarity: if rng.random::<bool>() { 1 } else { -1 },
            })
            .collect();
        let in_bounds_sum: f64 = positions
            .iter()
            .filter(|p| {
                let ix = p.x.round();
                let iy = p.y.round();
                ix >= 0.0 && ix < 640.0 && iy >= 0.0 && iy < 480.0
            })
            .map(|p| f64::from(p.polarity))
            .sum();
        let warped = WarpedEvents { positions, reference_time: 0.0, velocity: (0.0, 0.0) };
        let image = accumulate_image(&warped, &cam);
        assert_abs_diff_eq!(image.pixels.iter().sum::<f64>(), in_bounds_sum, epsilon = 1e-12);
    }

    #[test]
    fn score_of_zero_image_is_zero() {
        let cam = camera();
        let image = WarpedImage {
            pixels: vec![0.0; cam.pixel_count()],
            width: cam.width,
            height: cam.height,
            reference_time: 0.0,
            velocity: (0.0, 0.0),
        };
        assert_eq!(contrast_score(&image), 0.0);
    }

    #[test]
    fn score_squares_pixel_values() {
        let cam = camera();
        let mut pixels = vec![0.0; cam.pixel_count()];
        pixels[1234] = 3.0;
        let image = WarpedImage {
            pixels,
            width: cam.width,
            height: cam.height,
            reference_time: 0.0,
            velocity: (0.0, 0.0),
        };
        assert_eq!(contrast_score(&image), 9.0);
    }

    #[test]
    fn score_peaks_at_true_velocity() {
        let cam = camera();
        let velocity = (220.0, 40.0);
        let stream = track_stream(&cam, &[(100.0, 200.0)], velocity, 0.1, 0.0005);
        let at = |v: (f64, f64)| contrast_score(&accumulate_image(&warp_events(&stream, v, 0.0), &cam));
        assert!(at(velocity) > at((velocity.0 + 50.0, velocity.1)));
        assert!(at(velocity) > at((velocity.0, velocity.1 + 50.0)));
    }

    #[test]
    fn score_invariant_under_polarity_flip() {
        let cam = camera();
        let stream = track_stream(&cam, &[(100.0, 200.0), (400.0, 150.0)], (150.0, -80.0), 0.1, 0.001);
        let flipped = EventStream::new(
            stream.events.iter().map(|e| Event { polarity: -e.polarity, ..*e }).collect(),
            stream.t_start,
            stream.t_end,
            cam.clone(),
        )
        .unwrap();
        for v in [(0.0, 0.0), (150.0, -80.0), (60.0, 25.0)] {
            let a = contrast_score(&accumulate_image(&warp_events(&stream, v, 0.0), &cam));
            let b = contrast_score(&accumulate_image(&warp_events(&flipped, v, 0.0), &cam));
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn scratch_score_matches_public_path() {
        let cam = camera();
        let stream = track_stream(&cam, &[(90.0, 210.0), (350.0, 120.0)], (130.0, -45.0), 0.1, 0.001);
        let mut scratch = ScoreScratch::new(&cam);
        for v in [(0.0, 0.0), (130.0, -45.0), (-200.0, 310.0)] {
            for bilinear in [false, true] {
                let warped = warp_events(&stream, v, 0.0);
                let image = if bilinear {
                    accumulate_image_bilinear(&warped, &cam)
                } else {
                    accumulate_image(&warped, &cam)
                };
                let reference = contrast_score(&image);
                let fast =
                    scratch.score(&stream.events, 0.0, v.0, v.1, bilinear, ScoreKind::SumSquares);
                assert_abs_diff_eq!(fast, reference, epsilon = 1e-9 * reference.max(1.0));
            }
        }
    }

    #[test]
    fn global_flow_recovers_known_velocity() {
        let cam = camera();
        let velocity = (240.0, -120.0);
        let stream = track_stream(
            &cam,
            &[(100.0, 300.0), (300.0, 100.0), (480.0, 380.0)],
            velocity,
            0.1,
            0.0005,
        );
        let settings = FlowSettings::with_range(400.0);
        let result = estimate_global_flow(&stream, &settings).unwrap();
        assert!(result.converged);
        assert_abs_diff_eq!(result.velocity.0, velocity.0, epsilon = 0.5);
        assert_abs_diff_eq!(result.velocity.1, velocity.1, epsilon = 0.5);
    }

    #[test]
    fn global_flow_grid_point_velocity() {
        let cam = camera();
        // Exactly on the coarse grid: range 400, step 16.
        let velocity = (144.0, -272.0);
        let stream = track_stream(&cam, &[(150.0, 350.0), (420.0, 240.0)], velocity, 0.1, 0.0005);
        let mut settings = FlowSettings::with_range(400.0);

        // Stage one only: the winner must land within one grid step.
        settings.newton_max_iter = 0;
        let coarse = estimate_global_flow(&stream, &settings).unwrap();
        assert!((coarse.velocity.0 - velocity.0).abs() <= settings.grid_step);
        assert!((coarse.velocity.1 - velocity.1).abs() <= settings.grid_step);

        // With refinement the estimate tightens to sub-px/s.
        settings.newton_max_iter = 50;
        let refined = estimate_global_flow(&stream, &settings).unwrap();
        assert_abs_diff_eq!(refined.velocity.0, velocity.0, epsilon = 0.5);
        assert_abs_diff_eq!(refined.velocity.1, velocity.1, epsilon = 0.5);
    }

    #[test]
    fn global_flow_zero_motion() {
        let cam = camera();
        let stream = track_stream(&cam, &[(200.0, 200.0), (400.0, 300.0)], (0.0, 0.0), 0.1, 0.0005);
        let settings = FlowSettings::with_range(400.0);
        let result = estimate_global_flow(&stream, &settings).unwrap();
        assert!(result.velocity.0.abs() < 0.5);
        assert!(result.velocity.1.abs() < 0.5);
    }

    #[test]
    fn global_flow_trace_is_monotone() {
        let cam = camera();
        let stream = track_stream(
            &cam,
            &[(150.0, 250.0), (320.0, 140.0)],
            (175.0, 85.0),
            0.1,
            0.0005,
        );
        let settings = FlowSettings::with_range(400.0);
        let result = estimate_global_flow(&stream, &settings).unwrap();
        for pair in result.score_trace.windows(2) {
            assert!(
                pair[1] >= pair[0],
                "score must not decrease across accepted steps: {:?}",
                result.score_trace
            );
        }
    }

    #[test]
    fn global_flow_rejects_empty_stream() {
        let cam = camera();
        let stream = EventStream::new(vec![], 0.0, 0.1, cam).unwrap();
        assert!(matches!(
            estimate_global_flow(&stream, &FlowSettings::with_range(100.0)),
            Err(EstimatorError::EmptyStream)
        ));
    }

    #[test]
    fn local_flow_pure_roll_has_opposite_v_signs() {
        let cam = camera();
        // Roll rate r: u = r*y, v = -r*x in centered coordinates.
        let r = 0.6;
        let mut events = Vec::new();
        for &(x0c, y0c) in &[(-200.0_f64, 10.0_f64), (200.0, -15.0), (-180.0, -40.0), (210.0, 35.0)] {
            let (u, v) = (r * y0c, -r * x0c);
            for i in 0..=200 {
                let t = i as f64 * 0.0005;
                let x = x0c + u * t + 320.0 - 0.5;
                let y = y0c + v * t + 240.0 - 0.5;
                if x >= 0.0 && x < 640.0 && y >= 0.0 && y < 480.0 {
                    events.push(Event {
                        t_us: (t * 1e6) as u64,
                        x: x.round() as u16,
                        y: y.round() as u16,
                        polarity: 1,
                    });
                }
            }
        }
        events.sort_by_key(|e| e.t_us);
        let stream = EventStream::new(events, 0.0, 0.1, cam.clone()).unwrap();
        let tiles = estimate_local_flow(
            &stream,
            &cam,
            320,
            480,
            20,
            &FlowSettings::with_range(300.0),
        )
        .unwrap();
        assert_eq!(tiles.len(), 2);
        let left = tiles.iter().find(|t| t.col == 0).unwrap();
        let right = tiles.iter().find(|t| t.col == 1).unwrap();
        assert!(
            left.sample.v > 0.0 && right.sample.v < 0.0,
            "left v {} right v {}",
            left.sample.v,
            right.sample.v
        );
    }

    #[test]
    fn local_flow_passthrough_one_star_per_tile() {
        let cam = camera();
        // One track per quadrant, each at the local motion-field velocity of
        // a common rate vector.
        let rates = AngularRates::from_deg_s(4.0, -3.0, 8.0);
        let starts = [(160.0, 120.0), (480.0, 120.0), (160.0, 360.0), (480.0, 360.0)];
        let mut events = Vec::new();
        for &(x0, y0) in &starts {
            let (u, v) = motion_field(
                x0 + 0.5 - 320.0,
                y0 + 0.5 - 240.0,
                cam.focal_length,
                &rates,
            );
            for i in 0..=200 {
                let t = i as f64 * 0.0005;
                events.push(Event {
                    t_us: (t * 1e6) as u64,
                    x: (x0 + u * t).round() as u16,
                    y: (y0 + v * t).round() as u16,
                    polarity: 1,
                });
            }
        }
        events.sort_by_key(|e| e.t_us);
        let stream = EventStream::new(events, 0.0, 0.1, cam.clone()).unwrap();
        let tiles =
            estimate_local_flow(&stream, &cam, 320, 240, 20, &FlowSettings::with_range(300.0))
                .unwrap();
        assert_eq!(tiles.len(), 4);
        for tile in &tiles {
            let (u_true, v_true) =
                motion_field(tile.sample.x, tile.sample.y, cam.focal_length, &rates);
            assert_abs_diff_eq!(tile.sample.u, u_true, epsilon = 1.5);
            assert_abs_diff_eq!(tile.sample.v, v_true, epsilon = 1.5);
        }
    }

    #[test]
    fn local_flow_skips_sparse_tiles() {
        let cam = camera();
        let mut events = Vec::new();
        // Dense track in the left half, 3 stray events on the right.
        for i in 0..=200 {
            let t = i as f64 * 0.0005;
            events.push(Event {
                t_us: (t * 1e6) as u64,
                x: (100.0 + 100.0 * t).round() as u16,
                y: 240,
                polarity: 1,
            });
            events.push(Event {
                t_us: (t * 1e6) as u64,
                x: (200.0 + 100.0 * t).round() as u16,
                y: 100,
                polarity: 1,
            });
        }
        for t_us in [1000, 2000, 3000] {
            events.push(Event { t_us, x: 600, y: 400, polarity: 1 });
        }
        events.sort_by_key(|e| e.t_us);
        let stream = EventStream::new(events, 0.0, 0.1, cam.clone()).unwrap();
        let tiles =
            estimate_local_flow(&stream, &cam, 320, 240, 20, &FlowSettings::with_range(300.0))
                .unwrap();
        assert!(tiles.iter().all(|t| !(t.col == 1 && t.row == 1)), "sparse tile must be skipped");
    }

    #[test]
    fn solve_rates_zero_field_gives_zero_rates() {
        let cam = camera();
        let samples: Vec<MotionFieldSample> = [(100.0, 50.0), (-80.0, 120.0), (30.0, -90.0)]
            .iter()
            .map(|&(x, y)| MotionFieldSample { x, y, u: 0.0, v: 0.0, weight: 1.0 })
            .collect();
        let est = solve_rates(&samples, &cam, 1.0, false).unwrap();
        assert_abs_diff_eq!(est.rates.as_vector(), Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn solve_rates_recovers_forward_model() {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..200 {
            let rates = AngularRates::new(
                rng.random_range(-0.52..0.52),
                rng.random_range(-0.52..0.52),
                rng.random_range(-0.52..0.52),
            );
            let samples: Vec<MotionFieldSample> = (0..20)
                .map(|_| {
                    let x = rng.random_range(-320.0..320.0);
                    let y = rng.random_range(-240.0..240.0);
                    let (u, v) = motion_field(x, y, cam.focal_length, &rates);
                    MotionFieldSample { x, y, u, v, weight: rng.random_range(1.0..50.0) }
                })
                .collect();
            for weighted in [false, true] {
                let est = solve_rates(&samples, &cam, 1.0, weighted).unwrap();
                let err = (est.rates.as_vector() - rates.as_vector()).amax();
                assert!(err < 1e-9, "recovery error {err}");
            }
        }
    }

    #[test]
    fn solve_rates_rank_deficient_at_center() {
        let cam = camera();
        // Samples at the optical center leave roll unobservable (third
        // column of F(0,0) vanishes).
        let samples = vec![
            MotionFieldSample { x: 0.0, y: 0.0, u: 10.0, v: 5.0, weight: 1.0 },
            MotionFieldSample { x: 0.0, y: 0.0, u: 10.0, v: 5.0, weight: 1.0 },
        ];
        assert!(matches!(
            solve_rates(&samples, &cam, 1.0, false),
            Err(EstimatorError::RankDeficient { .. })
        ));
    }

    #[test]
    fn solve_rates_requires_two_samples() {
        let cam = camera();
        let samples = vec![MotionFieldSample { x: 10.0, y: 10.0, u: 1.0, v: 1.0, weight: 1.0 }];
        assert!(matches!(
            solve_rates(&samples, &cam, 1.0, false),
            Err(EstimatorError::TooFewSamples(1))
        ));
    }

    #[test]
    fn covariance_matches_monte_carlo_spread() {
        let cam = camera();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let sigma = 2.0;
        let truth = AngularRates::from_deg_s(6.0, -11.0, 17.0);
        // Fixed asymmetric geometry so every covariance entry is well away
        // from zero relative to the Monte Carlo noise floor.
        let samples: Vec<MotionFieldSample> = (0..15)
            .map(|_| {
                let x = rng.random_range(40.0..320.0);
                let y = rng.random_range(-240.0..-20.0);
                let (u, v) = motion_field(x, y, cam.focal_length, &truth);
                MotionFieldSample { x, y, u, v, weight: 1.0 }
            })
            .collect();
        let analytic = solve_rates(&samples, &cam, sigma, false).unwrap().covariance;

        let reps = 500;
        let mut mean = Vector3::zeros();
        let mut sum_outer = Matrix3::zeros();
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let noisy: Vec<MotionFieldSample> = samples
                .iter()
                .map(|s| MotionFieldSample {
                    u: s.u + gaussian(&mut rng, sigma),
                    v: s.v + gaussian(&mut rng, sigma),
                    ..*s
                })
                .collect();
            let est = solve_rates(&noisy, &cam, sigma, false).unwrap();
            let x = est.rates.as_vector();
            mean += x;
            draws.push(x);
        }
        mean /= reps as f64;
        for x in draws {
            let d = x - mean;
            sum_outer += d * d.transpose();
        }
        let empirical = sum_outer / (reps as f64 - 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let ratio = empirical[(i, j)] / analytic[(i, j)];
                assert!(
                    (1.0 / 1.5..=1.5).contains(&ratio),
                    "covariance entry ({i},{j}) ratio {ratio}"
                );
            }
        }
    }

    #[test]
    fn roll_variance_grows_as_samples_cluster_to_center() {
        let cam = camera();
        let mut previous_roll_var = 0.0;
        let mut transverse = Vec::new();
        for &rho in &[200.0, 100.0, 50.0, 25.0] {
            let mut rng = ChaCha12Rng::seed_from_u64(5);
            let samples: Vec<MotionFieldSample> = (0..16)
                .map(|i| {
                    let angle = f64::from(i) * std::f64::consts::TAU / 16.0
                        + rng.random_range(0.0..0.1);
                    MotionFieldSample {
                        x: rho * angle.cos(),
                        y: rho * angle.sin(),
                        u: 0.0,
                        v: 0.0,
                        weight: 1.0,
                    }
                })
                .collect();
            let cov = solve_rates(&samples, &cam, 2.0, false).unwrap().covariance;
            assert!(
                cov[(2, 2)] > previous_roll_var,
                "roll variance must grow as rho shrinks ({rho} px)"
            );
            previous_roll_var = cov[(2, 2)];
            transverse.push((cov[(0, 0)], cov[(1, 1)]));
        }
        // Transverse-axis variances stay bounded while roll blows up.
        let first = transverse.first().unwrap();
        let last = transverse.last().unwrap();
        assert!(last.0 < first.0 * 10.0 && last.1 < first.1 * 10.0);
    }

    fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
        // Box-Muller; plenty for test noise.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn warp_accumulate_identity_path(
            xs in proptest::collection::vec((0u16..640, 0u16..480, 0u64..100_000), 1..100)
        ) {
            let cam = camera();
            let mut events: Vec<Event> = xs
                .into_iter()
                .map(|(x, y, t_us)| Event { t_us, x, y, polarity: 1 })
                .collect();
            events.sort_by_key(|e| e.t_us);
            let stream = EventStream::new(events, 0.0, 0.1, cam.clone()).unwrap();

            // Zero-velocity warp + accumulate equals direct accumulation.
            let image = accumulate_image(&warp_events(&stream, (0.0, 0.0), 0.0), &cam);
            let mut direct = vec![0.0; cam.pixel_count()];
            for e in &stream.events {
                direct[e.y as usize * 640 + e.x as usize] += f64::from(e.polarity);
            }
            prop_assert_eq!(image.pixels, direct);
        }
    }
}
