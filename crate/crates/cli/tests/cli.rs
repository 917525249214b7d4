use std::process::Command;

use clap::Parser;

use cylwell_cli::config::{parse_config, parse_config_text, Cli, RunConfig};
use cylwell_cli::{EXIT_CONFIG, EXIT_OK};

fn cylwell() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cylwell"))
}

fn manifest(dir: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn defaults_are_valid_for_gl() {
    let cli = Cli::try_parse_from(["cylwell", "wells"]).unwrap();
    let cfg = parse_config(&cli).unwrap();
    assert_eq!(cfg.potential, "gl1d");
    assert_eq!(cfg, RunConfig { command: cfg.command, ..RunConfig::default() });
}

#[test]
fn unknown_keys_are_rejected() {
    let err = parse_config_text(r#"{"potential": "gl1d", "bogus": 1}"#).unwrap_err();
    assert!(err.0.contains("bogus"), "{}", err.0);
}

#[test]
fn malformed_json_reports_position() {
    let err = parse_config_text("{\n  \"L\": 10,\n  oops\n}").unwrap_err();
    assert!(err.0.contains("line 3"), "{}", err.0);
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"L": 10, "M1": 401, "seed": 4}"#).unwrap();
    let cli = Cli::try_parse_from(["cylwell", "cylinder", "--config", path.to_str().unwrap(), "--L", "15"]).unwrap();
    let cfg = parse_config(&cli).unwrap();
    assert_eq!(cfg.half_length, 15.0);
    assert_eq!(cfg.axial_nodes, 401);
    assert_eq!(cfg.seed, 4);
}

#[test]
fn negative_vector_flags_parse() {
    let cli = Cli::try_parse_from(["cylwell", "heteroclinic", "--from", "-1,0", "--to", "1,0"]).unwrap();
    let cfg = parse_config(&cli).unwrap();
    assert_eq!(cfg.from, Some(vec![-1.0, 0.0]));
}

#[test]
fn wells_command_lists_gl_wells() {
    let dir = tempfile::tempdir().unwrap();
    let status = cylwell().args(["wells", "--potential", "gl1d", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    let wells: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("wells.json")).unwrap()).unwrap();
    let locs: Vec<f64> = wells["wells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w[0].as_f64().unwrap())
        .collect();
    assert_eq!(locs.len(), 2);
    assert!((locs[0] + 1.0).abs() < 1e-6 && (locs[1] - 1.0).abs() < 1e-6);
}

#[test]
fn heteroclinic_command_reports_gl_energy() {
    let dir = tempfile::tempdir().unwrap();
    let status = cylwell()
        .args(["heteroclinic", "--potential", "gl1d", "--T", "10", "--M", "2000", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    let m = manifest(dir.path());
    let anchor = &m["verdicts"]["gl_energy_anchor"];
    assert_eq!(anchor["pass"], true);
    assert!(anchor["value"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn malformed_config_file_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ \"L\": 10,, }").unwrap();
    let out = cylwell()
        .args(["cylinder", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1 column"));
}

#[test]
fn manifest_echoes_overridden_half_length() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"L": 10, "M1": 201, "P": 17, "jensen_fields": 1, "holder_pairs": 20, "end_rerun": false}"#).unwrap();
    let out_dir = dir.path().join("o");
    let status = cylwell()
        .args(["cylinder", "--config"])
        .arg(&path)
        .args(["--L", "15", "--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.code().is_some());
    let m = manifest(&out_dir);
    assert_eq!(m["config"]["L"], 15.0);
    for f in m["files"].as_array().unwrap() {
        let bytes = std::fs::read(out_dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(cylwell_cli::manifest::sha256_hex(&bytes), f["sha256"].as_str().unwrap());
    }
}

proptest::proptest! {
    #[test]
    fn config_survives_json_round_trip(l in 1.0f64..100.0, m1 in 16usize..5000, seed in proptest::num::u64::ANY, amp in 0.0f64..2.0) {
        let cfg = RunConfig { half_length: l, axial_nodes: m1, seed, amplitude: amp, ..RunConfig::default() };
        let back = parse_config_text(&serde_json::to_string(&cfg).unwrap()).unwrap();
        proptest::prop_assert_eq!(back, cfg);
    }
}

#[test]
fn snake_case_flag_aliases_match_config_keys() {
    let cli = Cli::try_parse_from(["cylwell", "cylinder", "--max_steps", "7", "--residual-tol", "1e-3"]).unwrap();
    let cfg = parse_config(&cli).unwrap();
    assert_eq!((cfg.max_steps, cfg.residual_tol), (7, 1e-3));
}
