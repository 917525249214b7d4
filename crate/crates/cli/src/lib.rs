//! Batch front end for `cylwell-core`: config parsing, command pipelines and
//! manifests with content digests.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::time::Instant;

use config::{Cli, ConfigError, RunConfig};
use manifest::{write_files, write_manifest, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Runs a parsed command line and returns the process exit status.
pub fn execute(cli: &Cli) -> i32 {
    let cfg = match config::parse_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_config(cfg) {
        Ok((status, _)) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_NUMERICAL
        }
    }
}

/// Executes the configured command, writes outputs and the manifest.
pub fn run_config(cfg: RunConfig) -> anyhow::Result<(i32, RunManifest)> {
    let command = cfg
        .command
        .ok_or_else(|| ConfigError("no command given".into()))?;
    let started = Instant::now();
    let dir = cfg.output_dir.clone();
    let mut manifest = RunManifest {
        artifact: "cylwell",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name().to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        wall_clock_seconds: 0.0,
        all_pass: false,
        verdicts: Default::default(),
        files: Vec::new(),
        error: None,
    };
    let outcome = pipeline::Context::new(cfg).and_then(|ctx| pipeline::run(&ctx, command));
    let status = match outcome {
        Ok(out) => {
            manifest.files = write_files(&dir, &out.files)?;
            manifest.all_pass = out.verdicts.values().all(|v| v.pass);
            manifest.verdicts = out.verdicts;
            if manifest.all_pass {
                EXIT_OK
            } else {
                EXIT_VERDICT_FAILED
            }
        }
        Err(e) => {
            let status = if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            };
            eprintln!("error: {e:#}");
            manifest.error = Some(format!("{e:#}"));
            status
        }
    };
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_manifest(&dir, &manifest)?;
    for (name, v) in &manifest.verdicts {
        println!("{} {name}: {:.6e} ({})", if v.pass { "PASS" } else { "FAIL" }, v.value, v.detail);
    }
    Ok((status, manifest))
}
