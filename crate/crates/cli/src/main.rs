use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use hydrogeo_cli::config::parse_config;
use hydrogeo_cli::scenario::default_out_dir;
use hydrogeo_cli::{exit, run_scenario, RunError, RunOptions, ScenarioKind};

const THREADS_VAR: &str = "HYDROGEO_THREADS";

#[derive(Parser)]
#[command(
    name = "hydrogeo",
    version,
    about = "Geometry of density manifolds with nonlinear mobility"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file.
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run(Common),
    /// Run an identity_suite scenario.
    Suite(Common),
    /// Run an oracle scenario.
    Oracle(Common),
}

fn error_json(
    code: i32,
    kind: &str,
    message: &str,
    config: &Path,
    line: Option<usize>,
    scenario: Option<&str>,
) {
    let v = json!({
        "error": {
            "code": code,
            "kind": kind,
            "message": message,
            "config": config.display().to_string(),
            "line": line,
            "scenario": scenario,
        }
    });
    eprintln!("{v}");
}

fn threads() -> Result<usize, String> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!(
                "{THREADS_VAR} must be a positive integer, got `{v}`"
            )),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, expected) = match cli.command {
        Command::Run(a) => (a, None),
        Command::Suite(a) => (a, Some(ScenarioKind::IdentitySuite)),
        Command::Oracle(a) => (a, Some(ScenarioKind::Oracle)),
    };
    ExitCode::from(execute(&args, expected) as u8)
}

fn execute(args: &Common, expected: Option<ScenarioKind>) -> i32 {
    let cfg = &args.config;
    let started = Instant::now();
    let text = match std::fs::read_to_string(cfg) {
        Ok(t) => t,
        Err(e) => {
            error_json(
                exit::CONFIG,
                "config",
                &format!("cannot read config: {e}"),
                cfg,
                None,
                None,
            );
            return exit::CONFIG;
        }
    };
    let mut scenario = match parse_config(&text) {
        Ok(s) => s,
        Err(e) => {
            error_json(exit::CONFIG, "config", &e.message, cfg, e.line, None);
            return exit::CONFIG;
        }
    };
    let kind = scenario.kind.as_str();
    if let Some(k) = expected {
        if scenario.kind != k {
            let msg = format!(
                "this command runs kind {}, the config has kind {kind}",
                k.as_str()
            );
            error_json(exit::CONFIG, "config", &msg, cfg, None, Some(kind));
            return exit::CONFIG;
        }
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let threads = match threads() {
        Ok(n) => n,
        Err(msg) => {
            error_json(exit::CONFIG, "config", &msg, cfg, None, Some(kind));
            return exit::CONFIG;
        }
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| scenario.out_dir.clone())
        .unwrap_or_else(|| default_out_dir(&scenario));
    let opts = RunOptions {
        out_dir,
        threads,
        parse_time: started.elapsed(),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            error_json(
                exit::IO,
                "io",
                &format!("thread pool: {e}"),
                cfg,
                None,
                Some(kind),
            );
            return exit::IO;
        }
    };
    match pool.install(|| run_scenario(&scenario, &opts)) {
        Ok(outcome) => {
            let code = outcome.exit_code();
            let manifest = outcome.manifest_path.display().to_string();
            if let Some(f) = &outcome.failure {
                let msg = match f {
                    hydrogeo_cli::Failure::Numeric(m) => m.clone(),
                    hydrogeo_cli::Failure::Suite { failed } => {
                        format!("{failed} identity rows failed")
                    }
                };
                let kind_str = if code == exit::SUITE {
                    "suite"
                } else {
                    "numeric"
                };
                error_json(
                    code,
                    kind_str,
                    &format!("{msg} (outputs in {manifest})"),
                    cfg,
                    None,
                    Some(kind),
                );
            }
            println!(
                "{}",
                json!({
                    "status": outcome.manifest.status,
                    "manifest": manifest,
                    "files": outcome.manifest.files.len(),
                })
            );
            code
        }
        Err(e) => {
            let code = e.exit_code();
            let msg = match &e {
                RunError::Config(_) => e.to_string(),
                _ => format!("scenario {kind}: {e}"),
            };
            error_json(code, e.kind(), &msg, cfg, e.line(), Some(kind));
            code
        }
    }
}
