//! Accuracy metrics and result emission: `cases.csv`, `summary.json`, and
//! plot-ready per-case error scatter files.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::campaign::{CaseRow, CaseStatus};
use crate::harness::config::SimulationConfig;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("no case results to summarize")]
    EmptyResults,
    #[error("malformed cases file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

pub const CASES_CSV_HEADER: &str = "case_id,alpha_b_deg,delta_b_deg,roll_deg,p_true,q_true,r_true,\
p_est_a,q_est_a,r_est_a,p_est_b,q_est_b,r_est_b,p_fused,q_fused,r_fused,\
wx_err,wy_err,wz_err,n_events_a,n_events_b,n_tiles_a,n_tiles_b,status";

/// Per-axis camera-frame RMS errors, deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRms {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    /// `sqrt(p^2 + q^2 + r^2)` of the per-axis RMS values.
    pub total: f64,
}

/// Inertial-frame RMS errors, deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertialRms {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub total: f64,
}

/// Campaign-level accuracy summary.
///
/// `eps_rms_std` is the conventional total RMS `sqrt(mean(sum of squared
/// per-axis errors))` over the primary estimate (fused when available,
/// single-camera otherwise). `eps_rms_paper` divides the root sum by N
/// instead (`eps_rms_std / sqrt(N)`); both are emitted since the two
/// definitions coincide only at N = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsSummary {
    pub n_cases: usize,
    pub n_failed: usize,
    pub rms_single: Option<AxisRms>,
    pub rms_fused: Option<AxisRms>,
    pub rms_inertial: Option<InertialRms>,
    pub eps_rms_paper: Option<f64>,
    pub eps_rms_std: Option<f64>,
}

fn axis_rms(errors: &[[f64; 3]]) -> Option<AxisRms> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let mut sums = [0.0; 3];
    for e in errors {
        for (s, v) in sums.iter_mut().zip(e) {
            *s += v * v;
        }
    }
    let p = (sums[0] / n).sqrt();
    let q = (sums[1] / n).sqrt();
    let r = (sums[2] / n).sqrt();
    Some(AxisRms { p, q, r, total: (p * p + q * q + r * r).sqrt() })
}

fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Compute the campaign summary from case rows. Failed cases count toward
/// `n_failed` and are excluded from every RMS figure.
pub fn compute_rms(rows: &[CaseRow]) -> Result<RmsSummary, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let ok_rows: Vec<&CaseRow> = rows.iter().filter(|r| r.status.is_ok()).collect();

    let single: Vec<[f64; 3]> = ok_rows
        .iter()
        .filter_map(|r| r.est_a_deg_s.map(|e| sub3(&e, &r.truth_deg_s)))
        .collect();
    let fused: Vec<[f64; 3]> = ok_rows
        .iter()
        .filter_map(|r| r.fused_deg_s.map(|e| sub3(&e, &r.truth_deg_s)))
        .collect();
    let inertial: Vec<[f64; 3]> = ok_rows.iter().filter_map(|r| r.inertial_err_deg_s).collect();

    // Primary camera-frame errors: fused when the campaign fused, otherwise
    // the single-camera estimates.
    let primary = if fused.is_empty() { &single } else { &fused };
    let (eps_rms_std, eps_rms_paper) = if primary.is_empty() {
        (None, None)
    } else {
        let n = primary.len() as f64;
        let sum_sq: f64 = primary.iter().map(|e| e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sum();
        (Some((sum_sq / n).sqrt()), Some(sum_sq.sqrt() / n))
    };

    Ok(RmsSummary {
        n_cases: rows.len(),
        n_failed: rows.len() - ok_rows.len(),
        rms_single: axis_rms(&single),
        rms_fused: axis_rms(&fused),
        rms_inertial: axis_rms(&inertial).map(|a| InertialRms {
            x: a.p,
            y: a.q,
            z: a.r,
            total: a.total,
        }),
        eps_rms_paper,
        eps_rms_std,
    })
}

fn push_opt3(line: &mut String, value: &Option<[f64; 3]>) {
    match value {
        Some(v) => {
            for x in v {
                line.push(',');
                line.push_str(&x.to_string());
            }
        }
        None => line.push_str(",,,"),
    }
}

fn row_to_csv(row: &CaseRow) -> String {
    let mut line = format!(
        "{},{},{},{},{},{},{}",
        row.case_id,
        row.alpha_b_deg,
        row.delta_b_deg,
        row.roll_deg,
        row.truth_deg_s[0],
        row.truth_deg_s[1],
        row.truth_deg_s[2]
    );
    push_opt3(&mut line, &row.est_a_deg_s);
    push_opt3(&mut line, &row.est_b_deg_s);
    push_opt3(&mut line, &row.fused_deg_s);
    push_opt3(&mut line, &row.inertial_err_deg_s);
    line.push_str(&format!(",{}", row.n_events_a));
    match row.n_events_b {
        Some(n) => line.push_str(&format!(",{n}")),
        None => line.push(','),
    }
    line.push_str(&format!(",{}", row.n_tiles_a));
    match row.n_tiles_b {
        Some(n) => line.push_str(&format!(",{n}")),
        None => line.push(','),
    }
    line.push_str(&format!(",{}", row.status.as_str()));
    line
}

/// Write `cases.csv` (one row per case, full-precision floats so downstream
/// recomputation is exact).
pub fn write_cases_csv(rows: &[CaseRow], path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CASES_CSV_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row_to_csv(row))?;
    }
    w.flush()
}

fn parse_opt3(fields: &[&str], start: usize, line: usize) -> Result<Option<[f64; 3]>, ReportError> {
    let slots = &fields[start..start + 3];
    if slots.iter().all(|s| s.is_empty()) {
        return Ok(None);
    }
    let mut out = [0.0; 3];
    for (o, s) in out.iter_mut().zip(slots) {
        *o = s.parse().map_err(|_| ReportError::Malformed {
            line,
            reason: format!("invalid float {s:?}"),
        })?;
    }
    Ok(Some(out))
}

/// Read a `cases.csv` back into rows (used by the report command).
pub fn read_cases_csv(path: impl AsRef<Path>) -> Result<Vec<CaseRow>, ReportError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if idx == 0 {
            if trimmed != CASES_CSV_HEADER {
                return Err(ReportError::Malformed {
                    line: 1,
                    reason: "unexpected cases.csv header".into(),
                });
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 24 {
            return Err(ReportError::Malformed {
                line: line_no,
                reason: format!("expected 24 fields, got {}", fields.len()),
            });
        }
        let float = |i: usize| -> Result<f64, ReportError> {
            fields[i].parse().map_err(|_| ReportError::Malformed {
                line: line_no,
                reason: format!("invalid float {:?}", fields[i]),
            })
        };
        let int = |i: usize| -> Result<usize, ReportError> {
            fields[i].parse().map_err(|_| ReportError::Malformed {
                line: line_no,
                reason: format!("invalid integer {:?}", fields[i]),
            })
        };
        let opt_int = |i: usize| -> Result<Option<usize>, ReportError> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                int(i).map(Some)
            }
        };
        let status = CaseStatus::parse(fields[23]).ok_or_else(|| ReportError::Malformed {
            line: line_no,
            reason: format!("unknown status {:?}", fields[23]),
        })?;
        rows.push(CaseRow {
            case_id: int(0)?,
            alpha_b_deg: float(1)?,
            delta_b_deg: float(2)?,
            roll_deg: float(3)?,
            truth_deg_s: [float(4)?, float(5)?, float(6)?],
            est_a_deg_s: parse_opt3(&fields, 7, line_no)?,
            est_b_deg_s: parse_opt3(&fields, 10, line_no)?,
            fused_deg_s: parse_opt3(&fields, 13, line_no)?,
            inertial_err_deg_s: parse_opt3(&fields, 16, line_no)?,
            n_events_a: int(19)?,
            n_events_b: opt_int(20)?,
            n_tiles_a: int(21)?,
            n_tiles_b: opt_int(22)?,
            status,
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: &'a RmsSummary,
    config_echo: Option<&'a SimulationConfig>,
}

/// Write one per-case error scatter file (`case_id` plus three error
/// columns) for plotting.
fn write_scatter(
    path: &Path,
    header: &str,
    rows: &[CaseRow],
    select: impl Fn(&CaseRow) -> Option<[f64; 3]>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        if let Some(e) = select(row) {
            writeln!(w, "{},{},{},{}", row.case_id, e[0], e[1], e[2])?;
        }
    }
    w.flush()
}

/// Write all campaign outputs into `out_dir`: `cases.csv`, `summary.json`,
/// and the per-case error scatter files for the single-camera, fused, and
/// inertial estimates.
pub fn emit_results(
    rows: &[CaseRow],
    summary: &RmsSummary,
    config_echo: Option<&SimulationConfig>,
    out_dir: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    write_cases_csv(rows, out_dir.join("cases.csv"))?;

    let summary_file = SummaryFile { summary, config_echo };
    let json = serde_json::to_string_pretty(&summary_file).expect("summary serializes");
    std::fs::write(out_dir.join("summary.json"), json + "\n")?;

    write_scatter(
        &out_dir.join("errors_single_pqr.csv"),
        "case_id,eps_p,eps_q,eps_r",
        rows,
        |r| {
            if !r.status.is_ok() {
                return None;
            }
            r.est_a_deg_s.map(|e| sub3(&e, &r.truth_deg_s))
        },
    )?;
    write_scatter(
        &out_dir.join("errors_fused_pqr.csv"),
        "case_id,eps_p,eps_q,eps_r",
        rows,
        |r| {
            if !r.status.is_ok() {
                return None;
            }
            r.fused_deg_s.map(|e| sub3(&e, &r.truth_deg_s))
        },
    )?;
    write_scatter(
        &out_dir.join("errors_inertial_xyz.csv"),
        "case_id,eps_wx,eps_wy,eps_wz",
        rows,
        |r| if r.status.is_ok() { r.inertial_err_deg_s } else { None },
    )?;
    Ok(())
}
