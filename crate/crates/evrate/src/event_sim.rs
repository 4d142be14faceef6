//! Synthetic event-stream generation: renders the rotating star field into a
//! high-rate internal frame sequence and converts it into an asynchronous
//! event stream with a per-pixel log-intensity threshold model.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{query_fov, StarCatalog};
use crate::geometry::{CameraModel, RotationMatrix};
use crate::kinematics::{motion_field, AngularRates};

pub const EVS_MAGIC: &[u8; 4] = b"EVS1";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame timestamps must be strictly increasing ({previous} then {current})")]
    NonMonotoneFrames { previous: f64, current: f64 },
    #[error("frame shape {got_w}x{got_h} does not match generator {want_w}x{want_h}")]
    FrameShapeMismatch { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("pixel intensity must be positive for the log threshold model (pixel {index} = {value})")]
    NonPositiveIntensity { index: usize, value: f64 },
    #[error("window {window_s} s exceeds the configured maximum {max_s} s")]
    WindowTooLong { window_s: f64, max_s: f64 },
    #[error("window must be positive, got {0} s")]
    InvalidWindow(f64),
    #[error("internal rate {rate_hz} Hz too low: star motion up to {peak_px_s:.1} px/s needs at least {required_hz:.0} Hz for sub-pixel steps")]
    RateTooLow { rate_hz: f64, peak_px_s: f64, required_hz: f64 },
    #[error("malformed event at line {line}: {reason}")]
    MalformedEvent { line: usize, reason: String },
    #[error("bad event file magic (expected \"EVS1\")")]
    BadMagic,
    #[error("event file truncated")]
    Truncated,
    #[error("events must be sorted by timestamp (index {index})")]
    UnsortedEvents { index: usize },
    #[error("event at index {index} lies outside the {width}x{height} sensor")]
    EventOutOfBounds { index: usize, width: u32, height: u32 },
    #[error("invalid camera: {0}")]
    Camera(#[from] crate::geometry::GeometryError),
}

/// A single brightness-change event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Microseconds from the window start.
    pub t_us: u64,
    /// Pixel column index, `0 <= x < W`.
    pub x: u16,
    /// Pixel row index, `0 <= y < H`.
    pub y: u16,
    /// +1 for a brightness increase, -1 for a decrease.
    pub polarity: i8,
}

impl Event {
    pub fn t_seconds(&self) -> f64 {
        self.t_us as f64 * 1e-6
    }
}

/// Time-ordered event sequence over a fixed acquisition window.
#[derive(Debug, Clone)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// Window start, seconds.
    pub t_start: f64,
    /// Window end, seconds.
    pub t_end: f64,
    pub camera: CameraModel,
}

impl EventStream {
    /// Build a stream, validating timestamp order and sensor bounds.
    pub fn new(
        events: Vec<Event>,
        t_start: f64,
        t_end: f64,
        camera: CameraModel,
    ) -> Result<Self, SimError> {
        for (i, e) in events.iter().enumerate() {
            if i > 0 && e.t_us < events[i - 1].t_us {
                return Err(SimError::UnsortedEvents { index: i });
            }
            if u32::from(e.x) >= camera.width || u32::from(e.y) >= camera.height {
                return Err(SimError::EventOutOfBounds {
                    index: i,
                    width: camera.width,
                    height: camera.height,
                });
            }
        }
        Ok(Self { events, t_start, t_end, camera })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn window_seconds(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Write as CSV: header `t_us,x,y,k`, one event per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_us,x,y,k")?;
        for e in &self.events {
            writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity)?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()
    }

    /// Read the CSV form. The acquisition window is taken as
    /// `[0, last timestamp]` since the file does not carry it.
    pub fn read_csv_file(path: impl AsRef<Path>, camera: CameraModel) -> Result<Self, SimError> {
        let reader = BufReader::new(File::open(path)?);
        let mut events = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if idx == 0 {
                if trimmed != "t_us,x,y,k" {
                    return Err(SimError::MalformedEvent {
                        line: 1,
                        reason: format!("expected header \"t_us,x,y,k\", got {trimmed:?}"),
                    });
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 4 {
                return Err(SimError::MalformedEvent {
                    line: line_no,
                    reason: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let parse_err = |what: &str| SimError::MalformedEvent {
                line: line_no,
                reason: format!("invalid {what}"),
            };
            let t_us: u64 = fields[0].parse().map_err(|_| parse_err("timestamp"))?;
            let x: u16 = fields[1].parse().map_err(|_| parse_err("x"))?;
            let y: u16 = fields[2].parse().map_err(|_| parse_err("y"))?;
            let k: i8 = fields[3].parse().map_err(|_| parse_err("polarity"))?;
            if k != 1 && k != -1 {
                return Err(parse_err("polarity (must be 1 or -1)"));
            }
            events.push(Event { t_us, x, y, polarity: k });
        }
        let t_end = events.last().map_or(0.0, |e| e.t_seconds());
        Self::new(events, 0.0, t_end, camera)
    }

    /// Write the compact binary form: magic `EVS1`, little-endian `u32`
    /// count, then per event `u64 t_us, u16 x, u16 y, i8 k`.
    pub fn write_evs<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(EVS_MAGIC)?;
        w.write_all(&(self.events.len() as u32).to_le_bytes())?;
        for e in &self.events {
            w.write_all(&e.t_us.to_le_bytes())?;
            w.write_all(&e.x.to_le_bytes())?;
            w.write_all(&e.y.to_le_bytes())?;
            w.write_all(&e.polarity.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_evs_file(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_evs(&mut w)?;
        w.flush()
    }

    pub fn read_evs<R: Read>(mut r: R, camera: CameraModel) -> Result<Self, SimError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| SimError::Truncated)?;
        if &magic != EVS_MAGIC {
            return Err(SimError::BadMagic);
        }
        let mut count_buf = [0u8; 4];
        r.read_exact(&mut count_buf).map_err(|_| SimError::Truncated)?;
        let count = u32::from_le_bytes(count_buf) as usize;
        let mut events = Vec::with_capacity(count);
        let mut rec = [0u8; 13];
        for _ in 0..count {
            r.read_exact(&mut rec).map_err(|_| SimError::Truncated)?;
            events.push(Event {
                t_us: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
                x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
                y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
                polarity: rec[12] as i8,
            });
        }
        let t_end = events.last().map_or(0.0, |e| e.t_seconds());
        Self::new(events, 0.0, t_end, camera)
    }

    pub fn read_evs_file(path: impl AsRef<Path>, camera: CameraModel) -> Result<Self, SimError> {
        Self::read_evs(BufReader::new(File::open(path)?), camera)
    }
}

/// Linear-intensity frame used internally by the event generator.
#[derive(Debug, Clone)]
pub struct IntensityFrame {
    /// Row-major `H x W` linear intensities, all positive.
    pub pixels: Vec<f64>,
    pub width: u32,
    pub height: u32,
    /// Seconds from the window start.
    pub timestamp: f64,
}

/// Star rendering parameters for the internal frame sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Gaussian point-spread sigma, pixels.
    pub psf_sigma: f64,
    /// PSF truncation radius in sigmas.
    pub psf_truncate: f64,
    /// Constant background intensity floor (> 0, guards the log).
    pub background: f64,
    /// Total flux deposited by a star at the camera's limit magnitude;
    /// brighter stars scale as 10^(-0.4 (mag - limit)).
    pub limit_flux: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { psf_sigma: 0.8, psf_truncate: 3.0, background: 1.0, limit_flux: 5.0 }
    }
}

impl RenderSettings {
    pub fn flux_for_magnitude(&self, magnitude: f64, limit_magnitude: f64) -> f64 {
        self.limit_flux * 10f64.powf(-0.4 * (magnitude - limit_magnitude))
    }
}

/// Full event-simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    /// Internal frame rate for rendering, Hz.
    pub internal_rate_hz: f64,
    /// Longest admissible acquisition window, seconds.
    pub max_window_s: f64,
    pub render: RenderSettings,
    /// Mean spurious (shot/leak) event rate for the whole sensor, events/s.
    /// Zero disables noise.
    pub noise_rate_hz: f64,
    pub noise_seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            internal_rate_hz: 2000.0,
            max_window_s: 0.1,
            render: RenderSettings::default(),
            noise_rate_hz: 0.0,
            noise_seed: 0,
        }
    }
}

/// Deposit a Gaussian PSF for one star onto the intensity buffer.
/// `(xc, yc)` is the continuous projection in centered coordinates. Touched
/// pixel indices are appended to `touched` (duplicates allowed).
fn deposit_star(
    buf: &mut [f64],
    width: u32,
    height: u32,
    xc: f64,
    yc: f64,
    flux: f64,
    settings: &RenderSettings,
    touched: &mut Vec<u32>,
) {
    let sigma = settings.psf_sigma;
    let radius = settings.psf_truncate * sigma;
    // Continuous array coordinates of the star center: pixel (ix, iy) has its
    // center at centered coordinates (ix + 0.5 - W/2, iy + 0.5 - H/2).
    let ax = xc + f64::from(width) / 2.0 - 0.5;
    let ay = yc + f64::from(height) / 2.0 - 0.5;
    let amplitude = flux / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let r2_max = radius * radius;

    let ix_lo = ((ax - radius).ceil().max(0.0)) as i64;
    let ix_hi = ((ax + radius).floor().min(f64::from(width) - 1.0)) as i64;
    let iy_lo = ((ay - radius).ceil().max(0.0)) as i64;
    let iy_hi = ((ay + radius).floor().min(f64::from(height) - 1.0)) as i64;
    if ix_lo > ix_hi || iy_lo > iy_hi {
        return;
    }
    for iy in iy_lo..=iy_hi {
        let dy = iy as f64 - ay;
        for ix in ix_lo..=ix_hi {
            let dx = ix as f64 - ax;
            let r2 = dx * dx + dy * dy;
            if r2 > r2_max {
                continue;
            }
            let idx = iy as usize * width as usize + ix as usize;
            buf[idx] += amplitude * (-r2 * inv_two_sigma2).exp();
            touched.push(idx as u32);
        }
    }
}

/// Render the star field seen from `attitude` into a full intensity frame:
/// constant background plus one Gaussian point-spread per visible star.
pub fn render_frame(
    catalog: &StarCatalog,
    attitude: &RotationMatrix,
    camera: &CameraModel,
    settings: &RenderSettings,
    timestamp: f64,
) -> IntensityFrame {
    let mut pixels = vec![settings.background; camera.pixel_count()];
    let mut touched = Vec::new();
    for vis in query_fov(catalog, attitude, camera) {
        let flux = settings.flux_for_magnitude(vis.star.magnitude, camera.limit_magnitude);
        deposit_star(
            &mut pixels,
            camera.width,
            camera.height,
            vis.image.x,
            vis.image.y,
            flux,
            settings,
            &mut touched,
        );
    }
    IntensityFrame { pixels, width: camera.width, height: camera.height, timestamp }
}

/// Per-pixel log-intensity reference state of the event generator.
///
/// A pixel fires `floor(|log I - log I*| / e_t)` events when the log change
/// since the last trigger exceeds the threshold; the stored reference then
/// advances by the emitted multiple of the threshold.
#[derive(Debug, Clone)]
pub struct EventGeneratorState {
    last_log: Vec<f64>,
    threshold: f64,
    width: u32,
    height: u32,
    last_timestamp: Option<f64>,
    primed: bool,
}

impl EventGeneratorState {
    pub fn new(camera: &CameraModel) -> Self {
        Self {
            last_log: vec![0.0; camera.pixel_count()],
            threshold: camera.event_threshold,
            width: camera.width,
            height: camera.height,
            last_timestamp: None,
            primed: false,
        }
    }

    pub fn is_primed(&self) -> bool {
        self.primed
    }

    fn prime_uniform(&mut self, log_value: f64, timestamp: f64) {
        self.last_log.fill(log_value);
        self.primed = true;
        self.last_timestamp = Some(timestamp);
    }

    fn set_reference(&mut self, index: usize, log_value: f64) {
        self.last_log[index] = log_value;
    }

    /// Apply the threshold model to one pixel at the given log intensity,
    /// appending any emitted events.
    fn update_pixel(&mut self, index: usize, new_log: f64, t_us: u64, out: &mut Vec<Event>) {
        let delta = new_log - self.last_log[index];
        if delta.abs() < self.threshold {
            return;
        }
        let count = (delta.abs() / self.threshold).floor();
        let polarity: i8 = if delta > 0.0 { 1 } else { -1 };
        let x = (index % self.width as usize) as u16;
        let y = (index / self.width as usize) as u16;
        for _ in 0..count as u64 {
            out.push(Event { t_us, x, y, polarity });
        }
        self.last_log[index] += count * self.threshold * f64::from(polarity);
    }
}

fn seconds_to_us(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

/// Convert a time-ordered frame sequence into events.
///
/// An unprimed state takes the first frame as the per-pixel reference (no
/// events are emitted for it); every later frame is compared pixel-by-pixel
/// against the evolving reference. Within a frame, pixels are scanned in
/// row-major order, so output order is deterministic.
pub fn generate_events(
    frames: &[IntensityFrame],
    state: &mut EventGeneratorState,
) -> Result<Vec<Event>, SimError> {
    let mut out = Vec::new();
    for frame in frames {
        if frame.width != state.width || frame.height != state.height {
            return Err(SimError::FrameShapeMismatch {
                got_w: frame.width,
                got_h: frame.height,
                want_w: state.width,
                want_h: state.height,
            });
        }
        if let Some(prev) = state.last_timestamp {
            if frame.timestamp <= prev {
                return Err(SimError::NonMonotoneFrames {
                    previous: prev,
                    current: frame.timestamp,
                });
            }
        }
        for (idx, &intensity) in frame.pixels.iter().enumerate() {
            if !(intensity > 0.0) {
                return Err(SimError::NonPositiveIntensity { index: idx, value: intensity });
            }
            if !state.primed {
                state.set_reference(idx, intensity.ln());
            } else {
                state.update_pixel(idx, intensity.ln(), seconds_to_us(frame.timestamp), &mut out);
            }
        }
        state.primed = true;
        state.last_timestamp = Some(frame.timestamp);
    }
    Ok(out)
}

/// Largest apparent image speed (px/s) over the sensor for the given rates,
/// evaluated at the center, edge midpoints, and corners (where the field
/// peaks).
pub fn peak_image_speed(camera: &CameraModel, rates: &AngularRates) -> f64 {
    let hw = f64::from(camera.width) / 2.0;
    let hh = f64::from(camera.height) / 2.0;
    let mut peak = 0.0_f64;
    for &x in &[-hw, 0.0, hw] {
        for &y in &[-hh, 0.0, hh] {
            let (u, v) = motion_field(x, y, camera.focal_length, rates);
            peak = peak.max((u * u + v * v).sqrt());
        }
    }
    peak
}

/// Simulate one acquisition window: propagate the attitude under constant
/// angular rates, render internal frames, and run the event generator.
///
/// The attitude evolves as `R(t) = exp(-skew(w) t) * R0` (inertial-to-camera
/// convention), which makes stars drift across the focal plane consistently
/// with [`motion_field`]. Rendering and thresholding only touch pixels near
/// stars, so the cost scales with star count rather than sensor area; the
/// result is identical to rendering full frames and calling
/// [`generate_events`].
pub fn simulate_case(
    catalog: &StarCatalog,
    camera: &CameraModel,
    attitude0: &RotationMatrix,
    rates: &AngularRates,
    window_s: f64,
    settings: &SimSettings,
) -> Result<EventStream, SimError> {
    camera.validate()?;
    if !(window_s > 0.0) {
        return Err(SimError::InvalidWindow(window_s));
    }
    if window_s > settings.max_window_s {
        return Err(SimError::WindowTooLong { window_s, max_s: settings.max_window_s });
    }
    let rate = settings.internal_rate_hz;
    let n_steps = (window_s * rate).round() as usize;
    if n_steps == 0 {
        return Err(SimError::InvalidWindow(window_s));
    }
    let dt = 1.0 / rate;
    let peak = peak_image_speed(camera, rates);
    if peak * dt >= 1.0 {
        return Err(SimError::RateTooLow { rate_hz: rate, peak_px_s: peak, required_hz: peak });
    }

    // Pre-select stars that can enter the field of view during the window:
    // everything within the sensor cone around the initial boresight, widened
    // by the total rotation plus a safety margin.
    let bore0 = attitude0.inverse() * Vector3::z();
    let cone = camera.half_diagonal() + rates.norm() * window_s + 0.02;
    let candidates: Vec<(Vector3<f64>, f64)> = catalog
        .stars()
        .iter()
        .filter(|s| s.magnitude <= camera.limit_magnitude)
        .map(|s| {
            (
                crate::catalog::star_unit_vector(s),
                settings.render.flux_for_magnitude(s.magnitude, camera.limit_magnitude),
            )
        })
        .filter(|(dir, _)| cone >= std::f64::consts::PI || dir.dot(&bore0) >= cone.cos())
        .collect();

    let npx = camera.pixel_count();
    let background = settings.render.background;
    let mut frame_buf = vec![background; npx];
    let mut touched: Vec<u32> = Vec::new();
    let mut touched_prev: Vec<u32> = Vec::new();
    let mut candidates_buf: Vec<u32> = Vec::new();
    let mut state = EventGeneratorState::new(camera);
    let mut events: Vec<Event> = Vec::new();

    let mut noise = if settings.noise_rate_hz > 0.0 {
        let poisson = Poisson::new(settings.noise_rate_hz * dt).expect("positive noise rate");
        Some((ChaCha12Rng::seed_from_u64(settings.noise_seed), poisson))
    } else {
        None
    };

    for step in 0..=n_steps {
        let t = step as f64 * dt;
        let attitude = Rotation3::from_scaled_axis(-rates.as_vector() * t) * attitude0;

        touched.clear();
        for (dir, flux) in &candidates {
            let v_cam = attitude * dir;
            if v_cam.z <= 0.0 {
                continue;
            }
            let x = camera.focal_length * v_cam.x / v_cam.z;
            let y = camera.focal_length * v_cam.y / v_cam.z;
            if !camera.contains(x, y) {
                continue;
            }
            deposit_star(
                &mut frame_buf,
                camera.width,
                camera.height,
                x,
                y,
                *flux,
                &settings.render,
                &mut touched,
            );
        }

        if step == 0 {
            state.prime_uniform(background.ln(), t);
            for &idx in &touched {
                let i = idx as usize;
                state.set_reference(i, frame_buf[i].ln());
            }
        } else {
            let t_us = seconds_to_us(t);
            // Only pixels deposited on now or in the previous frame can
            // change; everything else sits at the background with a settled
            // reference.
            candidates_buf.clear();
            candidates_buf.extend_from_slice(&touched);
            candidates_buf.extend_from_slice(&touched_prev);
            candidates_buf.sort_unstable();
            candidates_buf.dedup();
            for &idx in &candidates_buf {
                let i = idx as usize;
                state.update_pixel(i, frame_buf[i].ln(), t_us, &mut events);
            }
            state.last_timestamp = Some(t);

            if let Some((rng, poisson)) = noise.as_mut() {
                let count = poisson.sample(rng) as u64;
                for _ in 0..count {
                    events.push(Event {
                        t_us,
                        x: rng.random_range(0..camera.width as u16),
                        y: rng.random_range(0..camera.height as u16),
                        polarity: if rng.random::<bool>() { 1 } else { -1 },
                    });
                }
            }
        }

        for &idx in &touched {
            frame_buf[idx as usize] = background;
        }
        std::mem::swap(&mut touched, &mut touched_prev);
    }

    EventStream::new(events, 0.0, window_s, camera.clone())
}
