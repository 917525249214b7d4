//! Run configuration. One JSON schema; command-line flags use the same key
//! names and override values read from `--config`.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Wells,
    Heteroclinic,
    Geodesic,
    Avgpot,
    Keps,
    Cylinder,
    VerifyAll,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Wells => "wells",
            Command::Heteroclinic => "heteroclinic",
            Command::Geodesic => "geodesic",
            Command::Avgpot => "avgpot",
            Command::Keps => "keps",
            Command::Cylinder => "cylinder",
            Command::VerifyAll => "verify-all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    /// Built-in name (`gl1d`, `fourwell:<lambda>`, `quadratic:<n>`) or a
    /// path to a JSON potential spec.
    pub potential: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,

    /// Endpoint wells; unset means the first and last well found.
    pub from: Option<Vec<f64>>,
    pub to: Option<Vec<f64>>,
    #[serde(rename = "T")]
    pub t_half: f64,
    #[serde(rename = "M")]
    pub segments: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub perturbation: f64,

    /// Grid-oracle cells per axis; unset picks a dimension default.
    pub resolution: Option<usize>,
    pub geod_segments: usize,

    pub z_min: f64,
    pub z_max: f64,
    pub z_points: usize,
    pub restarts: usize,
    pub r_check: f64,

    /// `interval`, `torus` or `torus2`; unset picks `interval` for scalar
    /// potentials and a torus of dimension `N - 1` otherwise.
    pub section: Option<String>,
    #[serde(rename = "P")]
    pub section_points: Option<usize>,
    pub eps: Vec<f64>,
    /// First-component average for the constrained flavors; unset in
    /// `verify-all` picks the value shared by most wells.
    pub a: Option<f64>,

    #[serde(rename = "L")]
    pub half_length: f64,
    #[serde(rename = "M1")]
    pub axial_nodes: usize,
    /// `neumann` or `clamped`.
    pub ends: String,
    /// `auto`, `constant`, `heteroclinic`, `perturbed`, `divergence_free`
    /// or `two_connection`.
    pub init: String,
    pub amplitude: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub stall: f64,
    pub residual_tol: f64,
    pub trace_tol: f64,
    pub end_rerun: bool,
    pub holder_pairs: usize,
    pub jensen_fields: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            potential: "gl1d".into(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            jobs: 1,
            from: None,
            to: None,
            t_half: 10.0,
            segments: 2000,
            tol: 1e-8,
            max_iter: 200_000,
            perturbation: 0.0,
            resolution: None,
            geod_segments: 800,
            z_min: -2.0,
            z_max: 2.0,
            z_points: 21,
            restarts: 3,
            r_check: 3.0,
            section: None,
            section_points: None,
            eps: vec![0.4, 0.2, 0.1, 0.05],
            a: None,
            half_length: 10.0,
            axial_nodes: 801,
            ends: "neumann".into(),
            init: "auto".into(),
            amplitude: 0.2,
            dt: 0.1,
            max_steps: 20_000,
            stall: 1e-12,
            residual_tol: 1e-5,
            trace_tol: 1e-2,
            end_rerun: true,
            holder_pairs: 200,
            jensen_fields: 10,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cylwell", version, about = "Heteroclinics, geodesic distances and cylinder relaxations for multi-well energies")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long = "out", visible_alias = "output_dir")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub from: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub to: Option<Vec<f64>>,
    #[arg(long = "T")]
    pub t_half: Option<f64>,
    #[arg(long = "M")]
    pub segments: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, alias = "max_iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub perturbation: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, alias = "geod_segments")]
    pub geod_segments: Option<usize>,
    #[arg(long, alias = "z_min", allow_hyphen_values = true)]
    pub z_min: Option<f64>,
    #[arg(long, alias = "z_max", allow_hyphen_values = true)]
    pub z_max: Option<f64>,
    #[arg(long, alias = "z_points")]
    pub z_points: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, alias = "r_check")]
    pub r_check: Option<f64>,
    #[arg(long)]
    pub section: Option<String>,
    #[arg(long = "P")]
    pub section_points: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long = "L")]
    pub half_length: Option<f64>,
    #[arg(long = "M1")]
    pub axial_nodes: Option<usize>,
    #[arg(long)]
    pub ends: Option<String>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, alias = "max_steps")]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub stall: Option<f64>,
    #[arg(long, alias = "residual_tol")]
    pub residual_tol: Option<f64>,
    #[arg(long, alias = "trace_tol")]
    pub trace_tol: Option<f64>,
    #[arg(long, alias = "end_rerun")]
    pub end_rerun: Option<bool>,
    #[arg(long, alias = "holder_pairs")]
    pub holder_pairs: Option<usize>,
    #[arg(long, alias = "jensen_fields")]
    pub jensen_fields: Option<usize>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn put<T: Serialize>(map: &mut Map<String, Value>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), serde_json::to_value(v).expect("flag value serializes"));
    }
}

impl Cli {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        put(&mut m, "potential", &self.potential);
        put(&mut m, "output_dir", &self.output_dir);
        put(&mut m, "seed", &self.seed);
        put(&mut m, "jobs", &self.jobs);
        put(&mut m, "from", &self.from);
        put(&mut m, "to", &self.to);
        put(&mut m, "T", &self.t_half);
        put(&mut m, "M", &self.segments);
        put(&mut m, "tol", &self.tol);
        put(&mut m, "max_iter", &self.max_iter);
        put(&mut m, "perturbation", &self.perturbation);
        put(&mut m, "resolution", &self.resolution);
        put(&mut m, "geod_segments", &self.geod_segments);
        put(&mut m, "z_min", &self.z_min);
        put(&mut m, "z_max", &self.z_max);
        put(&mut m, "z_points", &self.z_points);
        put(&mut m, "restarts", &self.restarts);
        put(&mut m, "r_check", &self.r_check);
        put(&mut m, "section", &self.section);
        put(&mut m, "P", &self.section_points);
        put(&mut m, "eps", &self.eps);
        put(&mut m, "a", &self.a);
        put(&mut m, "L", &self.half_length);
        put(&mut m, "M1", &self.axial_nodes);
        put(&mut m, "ends", &self.ends);
        put(&mut m, "init", &self.init);
        put(&mut m, "amplitude", &self.amplitude);
        put(&mut m, "dt", &self.dt);
        put(&mut m, "max_steps", &self.max_steps);
        put(&mut m, "stall", &self.stall);
        put(&mut m, "residual_tol", &self.residual_tol);
        put(&mut m, "trace_tol", &self.trace_tol);
        put(&mut m, "end_rerun", &self.end_rerun);
        put(&mut m, "holder_pairs", &self.holder_pairs);
        put(&mut m, "jensen_fields", &self.jensen_fields);
        m
    }
}

/// Parses config text; errors carry serde's line and column.
pub fn parse_config_text(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
}

/// Defaults, then the config file, then flags.
pub fn parse_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut merged = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            match value {
                Value::Object(m) => m,
                _ => return Err(ConfigError(format!("{}: top level must be an object", path.display()))),
            }
        }
        None => Map::new(),
    };
    merged.extend(cli.overrides());
    merged.insert("command".into(), serde_json::to_value(cli.command).expect("command serializes"));
    let cfg: RunConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigError(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError(msg));
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if !matches!(self.ends.as_str(), "neumann" | "clamped") {
            return bad(format!("ends `{}` is not `neumann` or `clamped`", self.ends));
        }
        if !matches!(
            self.init.as_str(),
            "auto" | "constant" | "heteroclinic" | "perturbed" | "divergence_free" | "two_connection"
        ) {
            return bad(format!("unknown init `{}`", self.init));
        }
        if let Some(s) = &self.section {
            if !matches!(s.as_str(), "interval" | "torus" | "torus2") {
                return bad(format!("section `{s}` is not `interval`, `torus` or `torus2`"));
            }
        }
        if self.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("eps values must be positive".into());
        }
        if !(self.z_min < self.z_max) || self.z_points < 2 {
            return bad("need z_min < z_max and z_points >= 2".into());
        }
        if looks_like_path(&self.potential) && !Path::new(&self.potential).exists() {
            return bad(format!("potential file {} does not exist", self.potential));
        }
        Ok(())
    }
}

pub fn looks_like_path(potential: &str) -> bool {
    potential.ends_with(".json") || potential.contains('/')
}
