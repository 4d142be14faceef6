//! Star catalog ingestion, synthetic catalog generation, and field-of-view
//! queries.
//!
//! The on-disk format is a fixed CSV schema with header `id,ra_deg,dec_deg,mag`
//! (angles in degrees, converted to radians on load). Real HIPPARCOS/GAIA
//! exports must be pre-converted to this schema; see the README for a sample
//! conversion recipe.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::geometry::{project_pinhole, radec_unit, CameraModel, FocalPlanePoint, RotationMatrix};

pub const CATALOG_CSV_HEADER: &str = "id,ra_deg,dec_deg,mag";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog file not found: {0}")]
    FileNotFound(String),
    #[error("i/o error reading catalog: {0}")]
    Io(#[from] io::Error),
    #[error("malformed catalog row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("no stars with magnitude <= {cutoff} in catalog")]
    EmptyResult { cutoff: f64 },
}

/// A single catalogued star: inertial direction plus visual magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct StarRecord {
    /// Opaque catalog identifier.
    pub id: String,
    /// Right ascension, radians, in [0, 2*pi).
    pub right_ascension: f64,
    /// Declination, radians, in [-pi/2, +pi/2].
    pub declination: f64,
    /// Visual magnitude (smaller is brighter).
    pub magnitude: f64,
}

/// Immutable star catalog. Identifiers are unique and the catalog is
/// non-empty by construction; safe for concurrent read access.
#[derive(Debug, Clone)]
pub struct StarCatalog {
    stars: Vec<StarRecord>,
    source_name: String,
}

impl StarCatalog {
    pub fn new(stars: Vec<StarRecord>, source_name: impl Into<String>) -> Result<Self, CatalogError> {
        if stars.is_empty() {
            return Err(CatalogError::EmptyResult { cutoff: f64::INFINITY });
        }
        let mut seen = HashSet::with_capacity(stars.len());
        for (i, star) in stars.iter().enumerate() {
            if !seen.insert(star.id.as_str()) {
                return Err(CatalogError::MalformedRow {
                    line: i + 2,
                    reason: format!("duplicate star id {:?}", star.id),
                });
            }
        }
        Ok(Self { stars, source_name: source_name.into() })
    }

    pub fn stars(&self) -> &[StarRecord] {
        &self.stars
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn len(&self) -> usize {
        self.stars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stars.is_empty()
    }
}

/// Unit direction to a star in inertial coordinates:
/// `[cos d cos a, cos d sin a, sin d]`.
pub fn star_unit_vector(record: &StarRecord) -> Vector3<f64> {
    radec_unit(record.right_ascension, record.declination)
}

/// A catalog star visible to a camera pose, with its camera-frame direction
/// and focal-plane projection.
#[derive(Debug, Clone)]
pub struct VisibleStar<'a> {
    pub star: &'a StarRecord,
    /// Unit direction in the camera frame (Z > 0).
    pub direction: Vector3<f64>,
    pub image: FocalPlanePoint,
}

/// Return exactly the stars that are brighter than the camera's limit
/// magnitude, in front of the camera, and whose pinhole projection falls on
/// the sensor. Result order follows catalog order.
pub fn query_fov<'a>(
    catalog: &'a StarCatalog,
    attitude: &RotationMatrix,
    camera: &CameraModel,
) -> Vec<VisibleStar<'a>> {
    let mut visible = Vec::new();
    for star in catalog.stars() {
        if star.magnitude > camera.limit_magnitude {
            continue;
        }
        let v_cam = attitude * star_unit_vector(star);
        if v_cam.z <= 0.0 {
            continue;
        }
        let image = match project_pinhole(&v_cam, camera) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if image.on_sensor {
            visible.push(VisibleStar { star, direction: v_cam, image });
        }
    }
    visible
}

/// Parse a catalog CSV, keeping records with `magnitude <= magnitude_cutoff`.
pub fn parse_catalog(path: impl AsRef<Path>, magnitude_cutoff: f64) -> Result<StarCatalog, CatalogError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            CatalogError::FileNotFound(path.display().to_string())
        } else {
            CatalogError::Io(e)
        }
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(header))) if header.trim() == CATALOG_CSV_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(CatalogError::MalformedRow {
                line: 1,
                reason: format!("expected header {CATALOG_CSV_HEADER:?}, got {:?}", header.trim()),
            })
        }
        Some((_, Err(e))) => return Err(CatalogError::Io(e)),
        None => {
            return Err(CatalogError::MalformedRow { line: 1, reason: "empty file".into() })
        }
    }

    let mut stars = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record = parse_row(trimmed, line_no)?;
        if !seen.insert(record.id.clone()) {
            return Err(CatalogError::MalformedRow {
                line: line_no,
                reason: format!("duplicate star id {:?}", record.id),
            });
        }
        if record.magnitude <= magnitude_cutoff {
            stars.push(record);
        }
    }

    if stars.is_empty() {
        return Err(CatalogError::EmptyResult { cutoff: magnitude_cutoff });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "catalog".to_string());
    StarCatalog::new(stars, name)
}

fn parse_row(row: &str, line: usize) -> Result<StarRecord, CatalogError> {
    let malformed = |reason: String| CatalogError::MalformedRow { line, reason };
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(malformed(format!("expected 4 fields, got {}", fields.len())));
    }
    let id = fields[0];
    if id.is_empty() {
        return Err(malformed("empty star id".into()));
    }
    let ra_deg: f64 = fields[1]
        .parse()
        .map_err(|_| malformed(format!("invalid right ascension {:?}", fields[1])))?;
    let dec_deg: f64 = fields[2]
        .parse()
        .map_err(|_| malformed(format!("invalid declination {:?}", fields[2])))?;
    let mag: f64 = fields[3]
        .parse()
        .map_err(|_| malformed(format!("invalid magnitude {:?}", fields[3])))?;
    if !ra_deg.is_finite() {
        return Err(malformed("right ascension must be finite".into()));
    }
    if !dec_deg.is_finite() || dec_deg < -90.0 || dec_deg > 90.0 {
        return Err(malformed(format!("declination {dec_deg} outside [-90, 90] deg")));
    }
    if !mag.is_finite() {
        return Err(malformed("magnitude must be finite".into()));
    }
    Ok(StarRecord {
        id: id.to_string(),
        right_ascension: ra_deg.rem_euclid(360.0).to_radians(),
        declination: dec_deg.to_radians(),
        magnitude: mag,
    })
}

/// Write a catalog in the CSV schema accepted by [`parse_catalog`].
pub fn write_catalog_csv(catalog: &StarCatalog, path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CATALOG_CSV_HEADER}")?;
    for star in catalog.stars() {
        writeln!(
            w,
            "{},{},{},{}",
            star.id,
            star.right_ascension.to_degrees(),
            star.declination.to_degrees(),
            star.magnitude
        )?;
    }
    w.flush()
}

/// Generate a synthetic "desk" catalog: `count` stars uniformly distributed
/// on the sphere with magnitudes following a bright-star-like power law in
/// `[mag_min, mag_max]`. Deterministic for a fixed seed, so simulation runs
/// need no external catalog downloads.
pub fn synthetic_catalog(count: usize, seed: u64, mag_min: f64, mag_max: f64) -> StarCatalog {
    assert!(count > 0, "synthetic catalog needs at least one star");
    assert!(mag_min <= mag_max, "magnitude range inverted");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut stars = Vec::with_capacity(count);
    for i in 0..count {
        let alpha = rng.random_range(0.0..TAU);
        let z: f64 = rng.random_range(-1.0..=1.0);
        let delta = z.asin();
        // Cumulative star counts roughly follow N(<m) ~ 10^(0.5 m).
        let u: f64 = rng.random::<f64>();
        let mag = (mag_max + 2.0 * (1.0 - u).max(1e-12).log10()).max(mag_min);
        stars.push(StarRecord {
            id: format!("SYN-{i:06}"),
            right_ascension: alpha,
            declination: delta,
            magnitude: mag,
        });
    }
    StarCatalog::new(stars, format!("synthetic-{count}")).expect("synthetic ids are unique")
}
