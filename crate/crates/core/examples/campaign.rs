//! Runs a default campaign and prints the aggregate table.
//!
//! `cargo run --release --example campaign -- sphere 1000`

use manifold_dp::sim::{run_campaign, ExperimentConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut config = match args.get(1).map(String::as_str) {
        Some("spd") => ExperimentConfig::spd_default(),
        _ => ExperimentConfig::sphere_default(),
    };
    if let Some(reps) = args.get(2).and_then(|s| s.parse().ok()) {
        config.n_replications = reps;
    }
    let start = Instant::now();
    let result = run_campaign(&config, None).expect("campaign failed");
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>7} {:>7} {:>7} {:>7} {:>4}",
        "mu", "md_dp", "md_nondp", "mdv_dp", "mdv_nondp", "cov", "cov_nd", "covv", "covv_nd", "fail"
    );
    for r in &result.table {
        println!(
            "{:>5} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>4}",
            r.mu,
            r.md_mean_dp,
            r.md_mean_nondp,
            r.md_var_dp,
            r.md_var_nondp,
            r.coverage_mean_dp,
            r.coverage_mean_nondp,
            r.coverage_var_dp,
            r.coverage_var_nondp,
            r.failures
        );
    }
    eprintln!("elapsed {:.1?}", start.elapsed());
}
