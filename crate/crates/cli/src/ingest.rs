//! CSV datasets: one point per row after a header row. Sphere rows hold the
//! ambient coordinates, SPD rows the row-major matrix entries.

use crate::error::{io_error, CliError, CliResult};
use manifold_dp::frechet::{karcher_mean, Dataset, DEFAULT_MAX_ITER, DEFAULT_TOL};
use manifold_dp::manifold::{distance, exp_map, log_map, ManifoldKind, ManifoldPoint};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

/// Sphere rows with norm within this distance of 1 are renormalized.
pub const SPHERE_NORM_TOL: f64 = 1e-6;
/// Norm deviation below which sphere rows are taken as they are.
const SPHERE_EXACT_TOL: f64 = 1e-12;
/// Relative asymmetry below which SPD rows are symmetrized.
pub const SPD_SYMMETRY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterPolicy {
    /// Truncate around the user-supplied center.
    Declared,
    /// Truncate around the sample Frechet mean of the raw data.
    PaperCompat,
}

#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Rows projected onto the boundary of the ball.
    pub truncated: usize,
}

/// Numeric rows of a CSV file with a header row.
pub fn read_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error("read", path, e))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::validation(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::validation(format!("{}: row {}: non-numeric field", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Validates one row; `row` is the 1-based data row used in messages.
pub fn parse_point(kind: ManifoldKind, values: &[f64], row: usize) -> CliResult<ManifoldPoint> {
    let fail = |msg: String| CliError::validation(format!("row {row}: {msg}"));
    match kind {
        ManifoldKind::Sphere { ambient_dim } => {
            if values.len() != ambient_dim {
                return Err(fail(format!("expected {ambient_dim} coordinates, found {}", values.len())));
            }
            let v = DVector::from_column_slice(values);
            let norm = v.norm();
            if (norm - 1.0).abs() <= SPHERE_EXACT_TOL {
                ManifoldPoint::sphere(v).map_err(|e| fail(e.to_string()))
            } else if (norm - 1.0).abs() <= SPHERE_NORM_TOL {
                ManifoldPoint::sphere(v / norm).map_err(|e| fail(e.to_string()))
            } else {
                Err(fail(format!("norm {norm} is not within {SPHERE_NORM_TOL} of 1")))
            }
        }
        ManifoldKind::Spd { matrix_size: m } => {
            if values.len() != m * m {
                return Err(fail(format!("expected {} matrix entries, found {}", m * m, values.len())));
            }
            let a = DMatrix::from_row_slice(m, m, values);
            let asym = (&a - a.transpose()).amax();
            if asym > SPD_SYMMETRY_TOL * a.amax().max(f64::MIN_POSITIVE) {
                return Err(fail(format!("matrix is not symmetric (max asymmetry {asym:e})")));
            }
            let sym = (&a + a.transpose()) * 0.5;
            ManifoldPoint::spd(sym).map_err(|e| fail(e.to_string()))
        }
    }
}

/// Parses a single-point CSV file (header plus one row).
pub fn read_point(path: &Path, kind: ManifoldKind) -> CliResult<ManifoldPoint> {
    let rows = read_rows(path)?;
    if rows.len() != 1 {
        return Err(CliError::validation(format!(
            "{}: expected exactly one data row, found {}",
            path.display(),
            rows.len()
        )));
    }
    parse_point(kind, &rows[0], 1).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// `x` if it lies in `B(center, radius)`, otherwise its radial projection
/// onto the boundary sphere.
pub fn project_to_ball(center: &ManifoldPoint, radius: f64, x: &ManifoldPoint) -> manifold_dp::Result<(ManifoldPoint, bool)> {
    if distance(center, x)? <= radius {
        return Ok((x.clone(), false));
    }
    let v = log_map(center, x)?;
    let scaled = v.scaled(radius / v.norm());
    Ok((exp_map(center, &scaled)?, true))
}

/// Reads, validates and truncates a dataset.
pub fn ingest_dataset(
    path: &Path,
    kind: ManifoldKind,
    center: Option<&ManifoldPoint>,
    radius: f64,
    policy: CenterPolicy,
) -> CliResult<Ingested> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CliError::validation(format!("radius must be positive, got {radius}")));
    }
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    let points = rows
        .iter()
        .enumerate()
        .map(|(i, r)| parse_point(kind, r, i + 1))
        .collect::<CliResult<Vec<_>>>()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;

    let center = match policy {
        CenterPolicy::Declared => center
            .cloned()
            .ok_or_else(|| CliError::validation("missing --center (required with --center-policy declared)"))?,
        CenterPolicy::PaperCompat => {
            log::warn!(
                "--center-policy paper-compat truncates around the sample Frechet mean; that center depends on \
                 the data and its release is not covered by the privacy budget"
            );
            let start = center.unwrap_or(&points[0]);
            karcher_mean(&points, start, DEFAULT_TOL, DEFAULT_MAX_ITER)?.mean
        }
    };
    if center.kind() != kind {
        return Err(CliError::validation(format!("center is a {} point, data are {kind}", center.kind())));
    }

    let mut truncated = 0;
    let mut kept = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let (q, moved) = project_to_ball(&center, radius, p)
            .map_err(|e| CliError::validation(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        truncated += moved as usize;
        kept.push(q);
    }
    if truncated > 0 {
        log::info!("projected {truncated} of {} rows onto the boundary of the ball", kept.len());
    }
    Ok(Ingested {
        dataset: Dataset::new(kept, center, radius)?,
        truncated,
    })
}

/// Writes points in the ingestion format.
pub fn write_points(path: &Path, points: &[ManifoldPoint]) -> CliResult<()> {
    let Some(first) = points.first() else {
        return Err(CliError::validation("no points to write"));
    };
    let width = first.to_row_major().len();
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error("write", path, e))?;
    let header: Vec<String> = (1..=width).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(|e| io_error("write", path, e))?;
    for p in points {
        let row: Vec<String> = p.to_row_major().iter().map(|x| format!("{x:?}")).collect();
        w.write_record(&row).map_err(|e| io_error("write", path, e))?;
    }
    w.flush().map_err(|e| io_error("write", path, e))
}
