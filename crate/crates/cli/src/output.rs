//! Result files: CSV tables, region boundary clouds, JSON reports and the
//! run manifest.
//!
//! Field order of every CSV is fixed:
//!
//! | file | columns |
//! |------|---------|
//! | `mean_table.csv`, `variance_table.csv` | `mu,md_dp,md_nondp,coverage_dp,coverage_nondp,se` |
//! | `region_dp.csv`, `region_nondp.csv` | `slice,theta_1,...,theta_d` |
//! | `records.csv` | fields of [`ReplicationRecord`] in declaration order |
//! | `budget_table.csv` | `mu,sigma,mu_star,max_standard_error` |
//! | `ingested.csv` | `x1,...,xk` (ambient coordinates or row-major entries) |

use crate::error::{io_error, CliError, CliResult};
use manifold_dp::inference::ConfidenceRegion;
use manifold_dp::linalg::vecd;
use manifold_dp::sim::{AggregateRow, ReplicationRecord};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Points per closed curve of a boundary cloud.
pub const CURVE_POINTS: usize = 360;
/// Polar and azimuthal resolution of a 3-D ellipsoid surface.
const SURFACE_GRID: (usize, usize) = (48, 96);

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub mu: f64,
    pub md_dp: f64,
    pub md_nondp: f64,
    pub coverage_dp: f64,
    pub coverage_nondp: f64,
    /// Binomial standard error of `coverage_dp`.
    pub se: f64,
}

pub fn mean_table(rows: &[AggregateRow]) -> Vec<TableRow> {
    rows.iter()
        .map(|r| TableRow {
            mu: r.mu,
            md_dp: r.md_mean_dp,
            md_nondp: r.md_mean_nondp,
            coverage_dp: r.coverage_mean_dp,
            coverage_nondp: r.coverage_mean_nondp,
            se: r.se_mean_coverage,
        })
        .collect()
}

pub fn variance_table(rows: &[AggregateRow]) -> Vec<TableRow> {
    rows.iter()
        .map(|r| TableRow {
            mu: r.mu,
            md_dp: r.md_var_dp,
            md_nondp: r.md_var_nondp,
            coverage_dp: r.coverage_var_dp,
            coverage_nondp: r.coverage_var_nondp,
            se: r.se_var_coverage,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error("write", path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_error("write", path, e))?;
    }
    w.flush().map_err(|e| io_error("write", path, e))
}

pub fn read_records(path: &Path) -> CliResult<Vec<ReplicationRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_error("read", path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| CliError::validation(format!("{}: row {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error("serialize", path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error("write", path, e))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(CliError::validation("matrix must be square"));
    }
    Ok(DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied()))
}

/// Spectral summary of a region covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    /// Up to three largest eigenvalues, descending.
    pub top_eigenvalues: Vec<f64>,
    /// Share of the trace carried by `top_eigenvalues`.
    pub explained_ratio: f64,
    /// `sqrt(trace)`.
    pub rad: f64,
    /// `sqrt(det)`.
    pub vol: f64,
    /// Geodesic distance between the non-private and private estimates.
    pub dist: f64,
}

pub fn eigen_summary(gamma: &DMatrix<f64>, dist: f64) -> EigenSummary {
    let mut values: Vec<f64> = gamma.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let trace = gamma.trace();
    let top: Vec<f64> = values.iter().take(3).copied().collect();
    EigenSummary {
        explained_ratio: top.iter().sum::<f64>() / trace,
        top_eigenvalues: top,
        rad: trace.sqrt(),
        vol: values.iter().product::<f64>().max(0.0).sqrt(),
        dist,
    }
}

/// Serialized confidence region; enough to redraw its boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    /// Ambient coordinates or row-major entries of the chart base point.
    pub chart_base: Vec<f64>,
    /// Chart coordinates of the estimate.
    pub center: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub gamma_vecd: Vec<f64>,
    pub threshold: f64,
    pub alpha: f64,
    pub summary: EigenSummary,
}

impl RegionRecord {
    pub fn from_region(region: &ConfidenceRegion, dist: f64) -> CliResult<Self> {
        Ok(RegionRecord {
            chart_base: region.chart_base().to_row_major(),
            center: region.center().iter().copied().collect(),
            gamma: matrix_rows(region.gamma()),
            gamma_vecd: vecd(region.gamma())?.iter().copied().collect(),
            threshold: region.threshold(),
            alpha: region.alpha(),
            summary: eigen_summary(region.gamma(), dist),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloudPoint {
    pub slice: usize,
    pub theta: DVector<f64>,
}

/// Points on `{theta : (theta - c)^T Gamma^{-1} (theta - c) = q}`. For
/// `d <= 3` the whole surface is sampled; above that, the 2-D sections
/// spanned by pairs of the three leading principal axes.
pub fn boundary_cloud(center: &DVector<f64>, gamma: &DMatrix<f64>, threshold: f64) -> CliResult<Vec<CloudPoint>> {
    let d = center.len();
    if gamma.shape() != (d, d) || d == 0 {
        return Err(CliError::validation(format!("region covariance must be {d}x{d}")));
    }
    let scale = threshold.sqrt();
    let mut out = Vec::new();
    let mut push = |slice: usize, u: DVector<f64>, factor: &DMatrix<f64>| {
        out.push(CloudPoint {
            slice,
            theta: center + factor * u * scale,
        });
    };
    let circle = |k: usize| {
        let a = std::f64::consts::TAU * k as f64 / CURVE_POINTS as f64;
        (a.cos(), a.sin())
    };
    if d <= 3 {
        let l = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| CliError::validation("region covariance is not positive definite"))?
            .l();
        match d {
            1 => {
                for s in [-1.0, 1.0] {
                    push(0, DVector::from_element(1, s), &l);
                }
            }
            2 => {
                for k in 0..CURVE_POINTS {
                    let (c, s) = circle(k);
                    push(0, DVector::from_vec(vec![c, s]), &l);
                }
            }
            _ => {
                let (np, na) = SURFACE_GRID;
                for i in 0..=np {
                    let polar = std::f64::consts::PI * i as f64 / np as f64;
                    let ring = if i == 0 || i == np { 1 } else { na };
                    for j in 0..ring {
                        let az = std::f64::consts::TAU * j as f64 / na as f64;
                        let u = DVector::from_vec(vec![polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()]);
                        push(0, u, &l);
                    }
                }
            }
        }
    } else {
        let eig = gamma.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        if eig.eigenvalues[order[d - 1]] <= 0.0 {
            return Err(CliError::validation("region covariance is not positive definite"));
        }
        let mut slice = 0;
        for a in 0..3 {
            for b in a + 1..3 {
                let (ia, ib) = (order[a], order[b]);
                let mut factor = DMatrix::zeros(d, 2);
                factor.set_column(0, &(eig.eigenvectors.column(ia) * eig.eigenvalues[ia].sqrt()));
                factor.set_column(1, &(eig.eigenvectors.column(ib) * eig.eigenvalues[ib].sqrt()));
                for k in 0..CURVE_POINTS {
                    let (c, s) = circle(k);
                    push(slice, DVector::from_vec(vec![c, s]), &factor);
                }
                slice += 1;
            }
        }
    }
    Ok(out)
}

pub fn write_cloud(path: &Path, cloud: &[CloudPoint], dim: usize) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error("write", path, e))?;
    let mut header = vec!["slice".to_string()];
    header.extend((1..=dim).map(|j| format!("theta_{j}")));
    w.write_record(&header).map_err(|e| io_error("write", path, e))?;
    for p in cloud {
        let mut row = vec![p.slice.to_string()];
        row.extend(p.theta.iter().map(|&x| fmt_f64(x)));
        w.write_record(&row).map_err(|e| io_error("write", path, e))?;
    }
    w.flush().map_err(|e| io_error("write", path, e))
}

/// Writes the boundary cloud of `region` to `path`.
pub fn write_region_cloud(path: &Path, region: &RegionRecord) -> CliResult<()> {
    let center = DVector::from_vec(region.center.clone());
    let gamma = matrix_from_rows(&region.gamma)?;
    let cloud = boundary_cloud(&center, &gamma, region.threshold)?;
    write_cloud(path, &cloud, center.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<FileEntry> {
    let bytes = fs::read(path).map_err(|e| io_error("read", path, e))?;
    Ok(FileEntry {
        path: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Hashes `files` (relative to `dir`) and writes `manifest.json`.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config_json: &str,
    master_seed: u64,
    started_unix: u64,
    files: &[&str],
) -> CliResult<RunManifest> {
    let mut entries = files
        .iter()
        .map(|f| hash_file(&dir.join(f)))
        .collect::<CliResult<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash: sha256_hex(config_json.as_bytes()),
        master_seed,
        started_unix,
        finished_unix: unix_now(),
        files: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Creates `dir` if needed and checks that it is a directory.
pub fn prepare_out_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_error("create output directory", dir, e))?;
    if !dir.is_dir() {
        return Err(CliError::validation(format!("{} is not a directory", dir.display())));
    }
    Ok(dir.to_path_buf())
}
