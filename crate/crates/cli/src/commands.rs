use crate::error::{io_error, CliError, CliResult};
use crate::ingest::{ingest_dataset, read_point, write_points, CenterPolicy};
use crate::output::{
    mean_table, prepare_out_dir, read_records, unix_now, variance_table, write_csv, write_json, write_manifest,
    write_region_cloud, matrix_rows, RegionRecord, TableRow,
};
use clap::{Args, Parser, Subcommand};
use manifold_dp::frechet::{frechet_mean, DEFAULT_MAX_ITER, DEFAULT_TOL};
use manifold_dp::inference::{mean_confidence_region, nonprivate_inference, run_pipeline_from, CovarianceBounds, Mechanism};
use manifold_dp::manifold::{distance, ManifoldKind};
use manifold_dp::privacy::{PrivacyBudget, ProfileVerificationConfig};
use manifold_dp::rng::seeded;
use manifold_dp::sim::{aggregate, run_budget_verification, run_campaign, AggregateRow, ExperimentConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "MANIFOLD_DP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "manifold-dp", version, about = "Differentially private Frechet means and variances on the sphere and SPD manifold")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo coverage campaign from a JSON config.
    Simulate(SimulateArgs),
    /// Private estimates and confidence sets for a CSV dataset.
    Estimate(EstimateArgs),
    /// Check the privacy profile of the calibrated mean mechanism.
    VerifyBudget(VerifyBudgetArgs),
    /// Re-render tables and region clouds from an output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// CSV with a header row; one point per row.
    #[arg(long)]
    pub data: PathBuf,
    /// `sphere:D` for the unit sphere S^D (rows of D+1 coordinates) or
    /// `spd:M` for M x M matrices (rows of M*M row-major entries).
    #[arg(long, value_parser = parse_manifold)]
    #[serde(skip)]
    pub manifold: ManifoldKind,
    /// Single-point CSV holding the center of the truncation ball.
    #[arg(long)]
    pub center: Option<PathBuf>,
    #[arg(long)]
    pub radius: f64,
    /// Total privacy budget.
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "declared")]
    pub center_policy: CenterPolicy,
    /// Bound on the operator norm of the pointwise Hessian.
    #[arg(long)]
    pub hessian_bound: Option<f64>,
    /// Bound on the norm of log maps at the released mean.
    #[arg(long)]
    pub log_radius_bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyBudgetArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Budgets to check; defaults to the config's grid.
    #[arg(long, value_delimiter = ',')]
    pub mu: Option<Vec<f64>>,
    /// Monte Carlo draws per privacy-loss estimate.
    #[arg(long)]
    pub n_mc: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_manifold(s: &str) -> Result<ManifoldKind, String> {
    let (name, size) = s
        .split_once(':')
        .ok_or_else(|| format!("expected sphere:D or spd:M, got '{s}'"))?;
    let size: usize = size.parse().map_err(|_| format!("bad dimension in '{s}'"))?;
    let kind = match name {
        "sphere" => ManifoldKind::sphere(size + 1),
        "spd" => ManifoldKind::spd(size),
        _ => return Err(format!("unknown manifold '{name}' (expected sphere or spd)")),
    };
    kind.map_err(|e| e.to_string())
}

/// Worker count from `MANIFOLD_DP_THREADS`, if set.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::validation(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        _ => Ok(None),
    }
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_error("read config", path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
}

#[derive(Serialize)]
struct TruthJson {
    variance: f64,
    sigma_f2: f64,
    lambda: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CampaignReport<'a> {
    config: &'a ExperimentConfig,
    truth: TruthJson,
    table: &'a [AggregateRow],
    failures: usize,
}

fn write_tables(dir: &Path, table: &[AggregateRow]) -> CliResult<()> {
    write_csv::<TableRow>(&dir.join("mean_table.csv"), &mean_table(table))?;
    write_csv::<TableRow>(&dir.join("variance_table.csv"), &variance_table(table))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let started = unix_now();
    let config = load_config(&args.config)?;
    let threads = threads_from_env()?;
    let dir = prepare_out_dir(&args.out)?;
    log::info!(
        "running {} replications at {} budgets on {}",
        config.n_replications,
        config.mu_grid.len(),
        config.manifold
    );
    let result = run_campaign(&config, threads)?;
    write_csv(&dir.join("records.csv"), &result.records)?;
    write_tables(&dir, &result.table)?;
    let report = CampaignReport {
        config: &config,
        truth: TruthJson {
            variance: result.truth.variance,
            sigma_f2: result.truth.sigma_f2,
            lambda: matrix_rows(&result.truth.lambda),
            c: matrix_rows(&result.truth.c),
        },
        table: &result.table,
        failures: result.failures(),
    };
    write_json(&dir.join("report.json"), &report)?;
    let config_json = serde_json::to_string(&config).map_err(|e| CliError::validation(e.to_string()))?;
    write_manifest(
        &dir,
        "simulate",
        &config_json,
        config.master_seed,
        started,
        &["records.csv", "mean_table.csv", "variance_table.csv", "report.json"],
    )?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct EstimateReport {
    pub manifold: ManifoldKind,
    pub n: usize,
    pub truncated: usize,
    pub radius: f64,
    pub ball_center: Vec<f64>,
    pub mu: f64,
    pub alpha: f64,
    pub seed: u64,
    pub mechanism: Mechanism,
    pub mean_nondp: Vec<f64>,
    pub mean_dp: Vec<f64>,
    pub sigma_n_eta: f64,
    pub variance_nondp: f64,
    pub variance_dp: f64,
    pub sigma_n_v: f64,
    pub sigma_f2_dp: f64,
    pub sigma_f2_floored: bool,
    pub interval_nondp: (f64, f64),
    pub interval_dp: (f64, f64),
    pub region_nondp: RegionRecord,
    pub region_dp: RegionRecord,
    pub budget_mean: PrivacyBudget,
    pub budget_variance: PrivacyBudget,
}

pub fn estimate(args: &EstimateArgs) -> CliResult<()> {
    let started = unix_now();
    let kind = args.manifold;
    let center = args.center.as_deref().map(|p| read_point(p, kind)).transpose()?;
    let ingested = ingest_dataset(&args.data, kind, center.as_ref(), args.radius, args.center_policy)?;
    let data = &ingested.dataset;
    let dir = prepare_out_dir(&args.out)?;

    let solution = frechet_mean(data, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let bounds = CovarianceBounds {
        hessian_bound: args.hessian_bound,
        log_radius_bound: args.log_radius_bound,
    };
    let mut rng = seeded(args.seed);
    let (mean_report, var_report) = run_pipeline_from(data, &solution, args.mu, args.alpha, bounds, &mut rng)?;
    let region_dp = mean_confidence_region(&mean_report, args.alpha)?;
    let (region_nondp, interval_nondp) = nonprivate_inference(data, &solution, args.alpha)?;
    let dist = distance(&solution.mean, &mean_report.mean_dp)?;

    let report = EstimateReport {
        manifold: kind,
        n: data.len(),
        truncated: ingested.truncated,
        radius: args.radius,
        ball_center: data.center().to_row_major(),
        mu: args.mu,
        alpha: args.alpha,
        seed: args.seed,
        mechanism: mean_report.mechanism,
        mean_nondp: solution.mean.to_row_major(),
        mean_dp: mean_report.mean_dp.to_row_major(),
        sigma_n_eta: mean_report.sigma_n_eta,
        variance_nondp: solution.variance,
        variance_dp: var_report.variance_dp,
        sigma_n_v: var_report.sigma_n_v,
        sigma_f2_dp: var_report.sigma_f2_dp,
        sigma_f2_floored: var_report.sigma_f2_floored,
        interval_nondp,
        interval_dp: var_report.interval,
        region_nondp: RegionRecord::from_region(&region_nondp, 0.0)?,
        region_dp: RegionRecord::from_region(&region_dp, dist)?,
        budget_mean: mean_report.budget_spent,
        budget_variance: var_report.budget_spent,
    };
    write_points(&dir.join("ingested.csv"), data.points())?;
    write_json(&dir.join("report.json"), &report)?;
    write_region_cloud(&dir.join("region_dp.csv"), &report.region_dp)?;
    write_region_cloud(&dir.join("region_nondp.csv"), &report.region_nondp)?;
    let mut flags = serde_json::to_value(args).map_err(|e| CliError::validation(e.to_string()))?;
    flags["manifold"] = serde_json::to_value(kind).map_err(|e| CliError::validation(e.to_string()))?;
    write_manifest(
        &dir,
        "estimate",
        &flags.to_string(),
        args.seed,
        started,
        &["ingested.csv", "report.json", "region_dp.csv", "region_nondp.csv"],
    )?;
    Ok(())
}

pub fn verify_budget(args: &VerifyBudgetArgs) -> CliResult<()> {
    let started = unix_now();
    let config = load_config(&args.config)?;
    let threads = threads_from_env()?;
    let dir = prepare_out_dir(&args.out)?;
    let mut verification = ProfileVerificationConfig::default();
    if let Some(n) = args.n_mc {
        verification.n_mc = n;
    }
    let grid = args.mu.clone().unwrap_or_else(|| config.mu_grid.clone());
    let rows = run_budget_verification(&config, &grid, &verification, threads)?;
    write_csv(&dir.join("budget_table.csv"), &rows)?;
    let config_json = serde_json::to_string(&(&config, &grid, &verification)).map_err(|e| CliError::validation(e.to_string()))?;
    write_manifest(&dir, "verify-budget", &config_json, config.master_seed, started, &["budget_table.csv"])?;
    Ok(())
}

#[derive(Deserialize)]
struct RegionsOnly {
    region_dp: RegionRecord,
    region_nondp: RegionRecord,
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let started = unix_now();
    let records_path = args.input.join("records.csv");
    let report_path = args.input.join("report.json");
    let has_records = records_path.is_file();
    let regions = if report_path.is_file() {
        let text = fs::read_to_string(&report_path).map_err(|e| io_error("read", &report_path, e))?;
        serde_json::from_str::<RegionsOnly>(&text).ok()
    } else {
        None
    };
    if !has_records && regions.is_none() {
        return Err(CliError::validation(format!(
            "{} holds neither records.csv from `simulate` nor report.json from `estimate`",
            args.input.display()
        )));
    }
    let dir = prepare_out_dir(&args.out)?;
    let mut files = Vec::new();
    let mut hash_input = String::new();
    if has_records {
        let records = read_records(&records_path)?;
        let mut grid: Vec<f64> = Vec::new();
        for r in &records {
            if !grid.contains(&r.mu) {
                grid.push(r.mu);
            }
        }
        write_tables(&dir, &aggregate(&grid, &records))?;
        files.extend(["mean_table.csv", "variance_table.csv"]);
        hash_input.push_str(&fs::read_to_string(&records_path).map_err(|e| io_error("read", &records_path, e))?);
    }
    if let Some(r) = regions {
        write_region_cloud(&dir.join("region_dp.csv"), &r.region_dp)?;
        write_region_cloud(&dir.join("region_nondp.csv"), &r.region_nondp)?;
        files.extend(["region_dp.csv", "region_nondp.csv"]);
        hash_input.push_str(&fs::read_to_string(&report_path).map_err(|e| io_error("read", &report_path, e))?);
    }
    write_manifest(&dir, "report", &hash_input, 0, started, &files)?;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::VerifyBudget(a) => verify_budget(a),
        Command::Report(a) => report(a),
    }
}
