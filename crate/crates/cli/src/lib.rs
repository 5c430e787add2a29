//! Command-line front end for `manifold-dp`.
//!
//! Exit codes: 0 on success, 1 for invalid input or unusable files, 2 when
//! a computation fails numerically.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod output;

use clap::error::ErrorKind;
use clap::Parser;
use std::ffi::OsString;

pub use commands::{Cli, Command};
pub use error::{CliError, CliResult};

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprintln!("{}", first_line(&e.to_string()));
                    1
                }
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn first_line(msg: &str) -> String {
    let parts: Vec<&str> = msg
        .lines()
        .map(str::trim)
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .filter(|l| !l.is_empty())
        .collect();
    let line = if parts.is_empty() { "invalid arguments".to_string() } else { parts.join(" ") };
    format!("{line} (see --help)")
}

#[cfg(test)]
mod tests {
    use super::*;
    use commands::parse_manifold;
    use manifold_dp::manifold::ManifoldKind;

    #[test]
    fn missing_flag_is_named() {
        let err = Cli::try_parse_from([
            "manifold-dp", "estimate", "--data", "d.csv", "--manifold", "sphere:2", "--center", "c.csv",
            "--radius", "0.3", "--alpha", "0.05", "--seed", "1", "--out", "o",
        ])
        .unwrap_err();
        assert!(first_line(&err.to_string()).contains("--mu"));
        assert_eq!(
            run(["manifold-dp", "estimate", "--data", "d.csv", "--manifold", "sphere:2", "--radius", "0.3",
                 "--alpha", "0.05", "--seed", "1", "--out", "o"]),
            1
        );
    }

    #[test]
    fn help_and_unknown_flags() {
        assert_eq!(run(["manifold-dp", "--help"]), 0);
        assert_eq!(run(["manifold-dp", "simulate", "--bogus"]), 1);
        assert_eq!(run(["manifold-dp", "frobnicate"]), 1);
    }

    #[test]
    fn empty_report_dir_fails() {
        let input = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let code = run([
            "manifold-dp".as_ref(),
            "report".as_ref(),
            "--in".as_ref(),
            input.path().as_os_str(),
            "--out".as_ref(),
            out.path().as_os_str(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn malformed_config_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"n": 10, "colour": "red"}"#).unwrap();
        let err = commands::load_config(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("colour"), "{err}");
        std::fs::write(&cfg, r#"{"n": 10, "alpha": 2.0}"#).unwrap();
        assert!(commands::load_config(&cfg).unwrap_err().to_string().contains("alpha"));
    }

    #[test]
    fn manifold_flag_parses() {
        assert_eq!(parse_manifold("sphere:2").unwrap(), ManifoldKind::sphere(3).unwrap());
        assert_eq!(parse_manifold("spd:3").unwrap(), ManifoldKind::spd(3).unwrap());
        assert!(parse_manifold("torus:2").is_err());
        assert!(parse_manifold("spd").is_err());
    }
}
