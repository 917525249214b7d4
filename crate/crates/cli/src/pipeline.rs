//! Command pipelines. Each stage returns its files and named verdicts; the
//! caller writes them and the manifest.

use std::collections::BTreeMap;

use anyhow::{anyhow, Context as _, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use cylwell_core::cross_section::{
    k_epsilon_ladder, verify_v_props, AvgPotOptions, KEpsFlavor, KEpsOptions, KEpsResult,
};
use cylwell_core::curve::{
    equipartition_defect, minimize_heteroclinic, HeteroclinicOptions, HeteroclinicResult,
};
use cylwell_core::cylinder::{
    cylinder_energy, holder_check, jensen_check, make_initial, relax, slice_diagnostics, slice_integral,
    trace_convergence_verdict, InitialKind, RelaxOptions, TraceOptions, TraceVerdict, VTable, Verdict,
};
use cylwell_core::geodesic::{
    default_resolution, geod_grid_oracle, geod_upper, oracle_box, total_variation_geod,
    verify_energy_geodesic_bound, GeodUpperOptions,
};
use cylwell_core::io;
use cylwell_core::potential::{check_hypotheses, find_wells, HypothesisOptions, WellSearchOptions};
use cylwell_core::{
    AxisBox, CylinderField, CylinderGrid, EndCondition, PotentialSpec, SectionGrid, SectionKind,
};

use crate::config::{looks_like_path, Command, ConfigError, RunConfig};

/// Energy of the GL heteroclinic.
pub const GL_HETEROCLINIC_ENERGY: f64 = 1.885_618_083_164_126_7;
/// Per-evaluation slack for energy-versus-geodesic comparisons.
pub const GEOD_SLACK: f64 = 5e-3;
pub const JENSEN_TOL: f64 = 5e-3;
pub const END_SHIFT_TOL: f64 = 2e-3;

#[derive(Default)]
pub struct Outputs {
    pub files: BTreeMap<String, Vec<u8>>,
    pub verdicts: BTreeMap<String, Verdict>,
}

impl Outputs {
    fn file(&mut self, name: &str, content: String) {
        self.files.insert(name.to_string(), content.into_bytes());
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.file(name, io::json_pretty(value)?);
        Ok(())
    }

    fn verdict(&mut self, name: &str, pass: bool, value: f64, threshold: f64, detail: impl Into<String>) {
        self.verdicts.insert(
            name.to_string(),
            Verdict {
                pass,
                value,
                threshold,
                detail: detail.into(),
            },
        );
    }

    fn merge(&mut self, prefix: &str, other: Outputs) {
        self.files.extend(other.files);
        for (k, v) in other.verdicts {
            self.verdicts.insert(format!("{prefix}.{k}"), v);
        }
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub spec: PotentialSpec,
    pub wells: Vec<Vec<f64>>,
    pool: rayon::ThreadPool,
}

pub fn load_potential(name: &str) -> std::result::Result<PotentialSpec, ConfigError> {
    if looks_like_path(name) {
        let text = std::fs::read_to_string(name).map_err(|e| ConfigError(format!("{name}: {e}")))?;
        PotentialSpec::from_json(&text).map_err(|e| ConfigError(format!("{name}: {e}")))
    } else {
        PotentialSpec::from_name(name).map_err(|e| ConfigError(e.to_string()))
    }
}

fn well_search_resolution(n: usize) -> usize {
    match n {
        1 => 256,
        2 => 64,
        _ => 12,
    }
}

/// Wells of `spec` in lexicographic order.
pub fn discover_wells(spec: &PotentialSpec) -> Result<Vec<Vec<f64>>> {
    let b = spec.default_check_box();
    let mut wells: Vec<Vec<f64>> = find_wells(spec, &b, well_search_resolution(spec.dimension()), &WellSearchOptions::default())?
        .into_iter()
        .map(|w| w.location.iter().map(|x| if x.abs() < 1e-12 { 0.0 } else { *x }).collect())
        .collect();
    wells.sort_by(|a: &Vec<f64>, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(wells)
}

/// The first coordinate shared by the most wells; ties go to the smallest
/// absolute value.
pub fn auto_a(wells: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<(usize, f64)> = None;
    for w in wells {
        let count = wells.iter().filter(|v| (v[0] - w[0]).abs() < 1e-8).count();
        let better = match best {
            None => true,
            Some((c, a)) => count > c || (count == c && w[0].abs() < a.abs()),
        };
        if count >= 2 && better {
            best = Some((count, w[0]));
        }
    }
    best.map(|(_, a)| a)
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let spec = load_potential(&cfg.potential)?;
        spec.ensure_finite_valued()
            .map_err(|e| ConfigError(format!("potential: {e}")))?;
        let wells = discover_wells(&spec)?;
        if wells.is_empty() {
            return Err(anyhow!("no wells found for `{}`", spec.name()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .context("thread pool")?;
        Ok(Context { cfg, spec, wells, pool })
    }

    fn n(&self) -> usize {
        self.spec.dimension()
    }

    fn wells_in_slice(&self, a: Option<f64>) -> Vec<Vec<f64>> {
        match a {
            Some(a) => self.wells.iter().filter(|w| (w[0] - a).abs() < 1e-8).cloned().collect(),
            None => self.wells.clone(),
        }
    }

    /// Configured endpoints, else the first and last well (of the a-slice).
    fn endpoints(&self, a: Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let pool = self.wells_in_slice(a);
        let from = match &self.cfg.from {
            Some(v) => v.clone(),
            None => pool.first().cloned().ok_or_else(|| ConfigError("no wells in the a-slice".into()))?,
        };
        let to = match &self.cfg.to {
            Some(v) => v.clone(),
            None => pool.last().cloned().ok_or_else(|| ConfigError("no wells in the a-slice".into()))?,
        };
        for p in [&from, &to] {
            if p.len() != self.n() {
                return Err(ConfigError(format!("endpoint {p:?} has the wrong dimension")).into());
            }
        }
        Ok((from, to))
    }

    fn geodesic_box(&self, extra: &[Vec<f64>]) -> Result<AxisBox> {
        let mut pts = self.wells.clone();
        pts.extend(extra.iter().cloned());
        Ok(oracle_box(&pts, 0.5)?)
    }

    fn resolution(&self) -> usize {
        self.cfg.resolution.unwrap_or_else(|| default_resolution(self.n()))
    }

    pub fn section(&self) -> Result<SectionGrid> {
        let kind = self.cfg.section.clone().unwrap_or_else(|| {
            match self.n() {
                1 => "interval",
                2 => "torus",
                _ => "torus2",
            }
            .to_string()
        });
        let grid = match kind.as_str() {
            "interval" => SectionGrid::interval(self.cfg.section_points.unwrap_or(65)),
            "torus" => SectionGrid::torus(self.cfg.section_points.unwrap_or(64)),
            _ => SectionGrid::torus2(self.cfg.section_points.unwrap_or(16)),
        };
        Ok(grid.map_err(|e| ConfigError(format!("section: {e}")))?)
    }

    fn effective_a(&self, auto: bool) -> Option<f64> {
        self.cfg.a.or_else(|| if auto && self.n() >= 2 { auto_a(&self.wells) } else { None })
    }
}

pub fn run(ctx: &Context, command: Command) -> Result<Outputs> {
    match command {
        Command::Wells => run_wells(ctx, ctx.cfg.a),
        Command::Heteroclinic => run_heteroclinic(ctx),
        Command::Geodesic => run_geodesic(ctx),
        Command::Avgpot => run_avgpot(ctx),
        Command::Keps => run_keps(ctx, ctx.cfg.a),
        Command::Cylinder => run_cylinder(ctx, ctx.cfg.a),
        Command::VerifyAll => {
            let a = ctx.effective_a(true);
            let mut out = Outputs::default();
            out.merge("wells", run_wells(ctx, a)?);
            out.merge("heteroclinic", run_heteroclinic(ctx)?);
            out.merge("geodesic", run_geodesic(ctx)?);
            out.merge("avgpot", run_avgpot(ctx)?);
            out.merge("keps", run_keps(ctx, a)?);
            out.merge("cylinder", run_cylinder(ctx, a)?);
            Ok(out)
        }
    }
}

fn run_wells(ctx: &Context, a: Option<f64>) -> Result<Outputs> {
    let mut out = Outputs::default();
    let opts = HypothesisOptions {
        seed: ctx.cfg.seed,
        ..Default::default()
    };
    let report = check_hypotheses(&ctx.spec, &ctx.spec.default_check_box(), ctx.cfg.r_check, a, &opts)?;
    out.json(
        "wells.json",
        &json!({
            "potential": ctx.spec.name(),
            "wells": ctx.wells,
            "hypotheses": report,
        }),
    )?;
    out.verdict(
        "found",
        !ctx.wells.is_empty(),
        ctx.wells.len() as f64,
        1.0,
        format!("{} wells", ctx.wells.len()),
    );
    out.verdict(
        "coercive",
        report.h2_holds,
        report.h2_infimum_at_radius,
        opts.h2_threshold,
        format!("min W on |z| = {}", report.r_check),
    );
    if let Some(s) = &report.a_slice_report {
        out.verdict(
            "a_slice",
            s.h2a_holds && s.well_count >= 1,
            s.well_count as f64,
            1.0,
            format!("{} wells with first coordinate {}", s.well_count, s.a),
        );
    }
    Ok(out)
}

fn heteroclinic_opts(cfg: &RunConfig) -> HeteroclinicOptions {
    HeteroclinicOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        perturbation: cfg.perturbation,
        seed: cfg.seed,
        ..Default::default()
    }
}

/// Indices splitting `0..=m` into four equal parts.
pub fn quartiles(m: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..=4).map(|i| i * m / 4).collect();
    p.dedup();
    p
}

fn run_heteroclinic(ctx: &Context) -> Result<Outputs> {
    let mut out = Outputs::default();
    let (from, to) = ctx.endpoints(None)?;
    let r = minimize_heteroclinic(&ctx.spec, &from, &to, ctx.cfg.t_half, ctx.cfg.segments, &heteroclinic_opts(&ctx.cfg))?;
    out.file("heteroclinic.csv", io::curve_csv(&r.curve));
    let defect = equipartition_defect(&r.curve, &ctx.spec)?;
    out.json(
        "heteroclinic.json",
        &json!({
            "from": from,
            "to": to,
            "T": ctx.cfg.t_half,
            "M": ctx.cfg.segments,
            "energy": r.breakdown,
            "converged": r.converged,
            "iterations": r.iterations,
            "grad_max": r.grad_max,
            "equipartition_defect": defect,
        }),
    )?;
    out.verdict("converged", r.converged, r.grad_max, ctx.cfg.tol, "max nodal gradient");

    let reference = geod_upper(
        &ctx.spec,
        &from,
        &to,
        &GeodUpperOptions {
            segments: ctx.cfg.geod_segments,
            grid_resolution: (ctx.n() > 1).then(|| ctx.resolution()),
            grid_box: Some(ctx.geodesic_box(&[from.clone(), to.clone()])?),
            ..Default::default()
        },
    )?;
    let margin = verify_energy_geodesic_bound(&r.curve, &ctx.spec, &reference)?;
    out.verdict(
        "energy_geodesic_bound",
        margin >= -GEOD_SLACK,
        margin,
        -GEOD_SLACK,
        format!("E = {:.10}, geod <= {:.10}", r.breakdown.total, reference.value),
    );

    let tv_box = oracle_box(&r.curve.nodes().map(<[f64]>::to_vec).collect::<Vec<_>>(), 0.5)?;
    let tv = total_variation_geod(&r.curve, &ctx.spec, &quartiles(r.curve.segments()), &tv_box, ctx.resolution())?;
    let slack = 4.0 * GEOD_SLACK;
    out.verdict(
        "total_variation",
        tv <= r.breakdown.total + slack,
        tv - r.breakdown.total,
        slack,
        "sum of grid geodesics over quartiles minus energy",
    );

    if ctx.spec.name() == "gl1d" && (from[0].abs() - 1.0).abs() < 1e-6 && (from[0] + to[0]).abs() < 1e-6 {
        let err = (r.breakdown.total - GL_HETEROCLINIC_ENERGY).abs();
        out.verdict("gl_energy_anchor", err <= 1e-3, err, 1e-3, "|E - 4 sqrt(2) / 3|");
    }
    Ok(out)
}

fn run_geodesic(ctx: &Context) -> Result<Outputs> {
    let mut out = Outputs::default();
    let (from, to) = ctx.endpoints(None)?;
    let b = ctx.geodesic_box(&[from.clone(), to.clone()])?;
    let res = ctx.resolution();
    let (upper, grid) = ctx.pool.install(|| {
        rayon::join(
            || {
                geod_upper(
                    &ctx.spec,
                    &from,
                    &to,
                    &GeodUpperOptions {
                        segments: ctx.cfg.geod_segments,
                        grid_resolution: (ctx.n() > 1).then_some(res),
                        grid_box: Some(b.clone()),
                        ..Default::default()
                    },
                )
            },
            || geod_grid_oracle(&ctx.spec, &from, &to, &b, res),
        )
    });
    let (upper, grid) = (upper?, grid?);
    if let Some(w) = &upper.witness {
        out.file("geodesic_witness.csv", io::curve_csv(w));
    }
    if let Some(p) = &grid.path {
        let header: Vec<String> = (1..=ctx.n()).map(|i| format!("u{i}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.file("geodesic_grid_path.csv", io::table_csv(&header, p));
    }
    out.json("geodesic.json", &json!({ "upper": upper, "grid": grid }))?;
    let tol = if ctx.n() == 1 { GEOD_SLACK } else { 2e-2 };
    let gap = (upper.value - grid.value).abs();
    out.verdict(
        "sandwich",
        gap <= tol,
        gap,
        tol,
        format!("relaxed {:.10} vs grid {:.10}", upper.value, grid.value),
    );
    Ok(out)
}

fn avg_opts(cfg: &RunConfig) -> AvgPotOptions {
    AvgPotOptions {
        n_restarts: cfg.restarts,
        seed: cfg.seed,
        ..Default::default()
    }
}

fn run_avgpot(ctx: &Context) -> Result<Outputs> {
    let mut out = Outputs::default();
    let section = ctx.section()?;
    let n = ctx.n();
    let zs: Vec<Vec<f64>> = (0..ctx.cfg.z_points)
        .map(|i| {
            let t = ctx.cfg.z_min + (ctx.cfg.z_max - ctx.cfg.z_min) * i as f64 / (ctx.cfg.z_points - 1) as f64;
            let mut z = vec![0.0; n];
            z[0] = t;
            z
        })
        .collect();
    let report = verify_v_props(&ctx.spec, &ctx.wells, &zs, &section, ctx.cfg.r_check, 32, &avg_opts(&ctx.cfg))?;
    let mut header: Vec<String> = (1..=n).map(|i| format!("z{i}")).collect();
    header.extend(["V".to_string(), "W".to_string()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| s.z.iter().copied().chain([s.v, s.w]).collect())
        .collect();
    out.file("avgpot.csv", io::table_csv(&header, &rows));
    out.json("avgpot.json", &report)?;
    let excess = report.samples.iter().map(|s| s.v - s.w).fold(f64::NEG_INFINITY, f64::max);
    out.verdict("v_le_w", report.v_le_w, excess, 1e-9, "max V - W over samples");
    let at_wells = report
        .samples
        .iter()
        .filter(|s| ctx.wells.iter().any(|w| dist(w, &s.z) < 1e-12))
        .map(|s| s.v)
        .fold(0.0, f64::max);
    out.verdict("zero_at_wells", at_wells <= 1e-6, at_wells, 1e-6, "max V at wells");
    let off = report
        .samples
        .iter()
        .filter(|s| ctx.wells.iter().all(|w| dist(w, &s.z) >= 0.25))
        .map(|s| s.v)
        .fold(f64::INFINITY, f64::min);
    out.verdict(
        "positive_off_wells",
        report.zero_set_equal && off > 1e-3,
        off,
        1e-3,
        "min V at samples at least 0.25 from every well",
    );
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn run_keps(ctx: &Context, a: Option<f64>) -> Result<Outputs> {
    let mut out = Outputs::default();
    let section = ctx.section()?;
    let flavor = if a.is_some() { KEpsFlavor::MeanConstrainedA } else { KEpsFlavor::Plain };
    let opts = KEpsOptions {
        seed: ctx.cfg.seed,
        ..Default::default()
    };
    let results = k_epsilon_ladder(&ctx.spec, &section, &ctx.cfg.eps, &ctx.wells, flavor, a, &opts)?;
    let rows: Vec<Vec<f64>> = results
        .iter()
        .map(|r| vec![r.epsilon, r.value, r.constrained_distance])
        .collect();
    out.file("keps.csv", io::table_csv(&["eps", "k", "distance"], &rows));
    let summary: Vec<Value> = results
        .iter()
        .map(|r| json!({ "eps": r.epsilon, "k": r.value, "distance": r.constrained_distance, "flavor": r.flavor, "a": r.a }))
        .collect();
    out.json("keps.json", &summary)?;
    let min_k = results.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    out.verdict("positive", min_k > 1e-6, min_k, 1e-6, "smallest k_eps estimate");
    let viol = monotone_violation(&results);
    out.verdict("monotone", viol <= 1e-12, viol, 1e-12, "largest increase of k as eps shrinks");
    Ok(out)
}

/// Largest `k(eps_small) - k(eps_large)` over ladder pairs.
pub fn monotone_violation(results: &[KEpsResult]) -> f64 {
    let mut sorted: Vec<&KEpsResult> = results.iter().collect();
    sorted.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    sorted
        .windows(2)
        .map(|w| w[1].value - w[0].value)
        .fold(0.0, f64::max)
}

struct CylinderRun {
    field: CylinderField,
    report: cylwell_core::RunReport,
    trace: TraceVerdict,
}

fn cylinder_grid(ctx: &Context, half_length: f64, axial_nodes: usize, ends: (&[f64], &[f64])) -> Result<CylinderGrid> {
    let end_condition = if ctx.cfg.ends == "clamped" {
        EndCondition::ClampedToWells {
            minus: ends.0.to_vec(),
            plus: ends.1.to_vec(),
        }
    } else {
        EndCondition::NeumannEnds
    };
    Ok(CylinderGrid::new(half_length, axial_nodes, ctx.section()?, end_condition)
        .map_err(|e| ConfigError(format!("cylinder grid: {e}")))?)
}

fn initial_kind(ctx: &Context, grid: &CylinderGrid, a: Option<f64>, from: &[f64], to: &[f64]) -> Result<InitialKind> {
    let het = |perturbation: f64, seed: u64| -> Result<HeteroclinicResult> {
        let opts = HeteroclinicOptions {
            perturbation,
            seed,
            ..heteroclinic_opts(&ctx.cfg)
        };
        Ok(minimize_heteroclinic(&ctx.spec, from, to, grid.half_length.max(5.0), ctx.cfg.segments, &opts)?)
    };
    let divergence_free_ok =
        ctx.n() == 2 && grid.section.kind == (SectionKind::Torus { dims: 1 });
    let kind = match ctx.cfg.init.as_str() {
        "auto" if a.is_some() && divergence_free_ok => "divergence_free",
        "auto" => "perturbed",
        other => other,
    };
    let extension = |r: HeteroclinicResult| Box::new(InitialKind::HeteroclinicExtension(r.curve));
    Ok(match kind {
        "constant" => InitialKind::ConstantWell(from.to_vec()),
        "heteroclinic" => *extension(het(ctx.cfg.perturbation, ctx.cfg.seed)?),
        "perturbed" => InitialKind::Perturbed {
            base: extension(het(ctx.cfg.perturbation, ctx.cfg.seed)?),
            seed: ctx.cfg.seed,
            amplitude: ctx.cfg.amplitude,
        },
        "divergence_free" => InitialKind::DivergenceFreeHarmonic {
            base: extension(het(ctx.cfg.perturbation, ctx.cfg.seed)?),
            amplitude: ctx.cfg.amplitude,
        },
        _ => InitialKind::TwoConnectionInterp {
            gamma1: het(ctx.cfg.perturbation, ctx.cfg.seed)?.curve,
            gamma2: het(0.3, ctx.cfg.seed.wrapping_add(1))?.curve,
        },
    })
}

fn relax_on(ctx: &Context, grid: &CylinderGrid, a: Option<f64>, wells: &[Vec<f64>], from: &[f64], to: &[f64]) -> Result<CylinderRun> {
    let kind = initial_kind(ctx, grid, a, from, to)?;
    let u0 = make_initial(&kind, grid, ctx.n())?;
    let opts = RelaxOptions {
        dt: ctx.cfg.dt,
        max_steps: ctx.cfg.max_steps,
        stall: ctx.cfg.stall,
        residual_tol: ctx.cfg.residual_tol,
        fix_first_mean: a,
        ..Default::default()
    };
    let (field, mut report) = relax(&u0, &ctx.spec, &opts)?;
    report.seed = ctx.cfg.seed;
    report.slices = slice_diagnostics(&field, &ctx.spec, wells, a)?;
    let trace = trace_convergence_verdict(
        &report.slices,
        wells,
        &TraceOptions {
            trace_tol: ctx.cfg.trace_tol,
            a,
            ..Default::default()
        },
    );
    Ok(CylinderRun { field, report, trace })
}

/// Tensor table over the box of `points`, about `spacing` apart; flat axes
/// get a second layer just above so that lookups land exactly on nodes.
fn v_table(ctx: &Context, section: &SectionGrid, points: &[Vec<f64>], spacing: f64) -> Result<VTable> {
    let n = ctx.n();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in points {
        for i in 0..n {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let mut counts = vec![0; n];
    for i in 0..n {
        if hi[i] - lo[i] < 1e-9 {
            hi[i] = lo[i] + spacing;
            counts[i] = 2;
        } else {
            let cells = ((hi[i] - lo[i]) / spacing).ceil() as usize;
            let pad = 0.5 * (cells as f64 * spacing - (hi[i] - lo[i]));
            lo[i] -= pad;
            hi[i] += pad;
            counts[i] = cells + 1;
        }
    }
    let nodes = VTable::points(&lo, &hi, &counts)?;
    let opts = avg_opts(&ctx.cfg);
    let values = ctx.pool.install(|| {
        nodes
            .par_iter()
            .map(|z| cylwell_core::cross_section::averaged_potential(&ctx.spec, z, section, &opts).map(|r| r.value))
            .collect::<cylwell_core::Result<Vec<f64>>>()
    })?;
    Ok(VTable::from_values(&lo, &hi, &counts, values)?)
}

fn slice_means(u: &CylinderField) -> Vec<Vec<f64>> {
    (0..u.grid().axial_nodes).map(|k| u.slice_mean(k)).collect()
}

fn run_cylinder(ctx: &Context, a: Option<f64>) -> Result<Outputs> {
    let mut out = Outputs::default();
    let wells = ctx.wells.clone();
    let (from, to) = ctx.endpoints(a)?;
    let grid = cylinder_grid(ctx, ctx.cfg.half_length, ctx.cfg.axial_nodes, (&from, &to))?;
    let h1 = grid.h1();

    let main_run = || relax_on(ctx, &grid, a, &wells, &from, &to);
    let rerun = || -> Result<Option<CylinderRun>> {
        if !ctx.cfg.end_rerun {
            return Ok(None);
        }
        Ok(Some(relax_on(ctx, &grid.rescaled(1.5)?, a, &wells, &from, &to)?))
    };
    let (main, rerun) = ctx.pool.install(|| rayon::join(main_run, rerun));
    let (main, rerun) = (main?, rerun?);
    let u = &main.field;
    let report = &main.report;

    let e0 = report.energy_history[0];
    let worst_rise = report
        .energy_history
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    out.verdict(
        "energy_monotone",
        worst_rise <= 1e-10 * (1.0 + e0.abs()),
        worst_rise,
        1e-10 * (1.0 + e0.abs()),
        "largest energy increase over accepted steps",
    );
    out.verdict(
        "relax_converged",
        report.converged,
        report.residual,
        ctx.cfg.residual_tol,
        format!("{} steps, final dt {}", report.steps, report.final_dt),
    );

    let e = cylinder_energy(u, &ctx.spec)?;
    let s = slice_integral(u, &ctx.spec)?;
    let rel = (e - s).abs() / e.abs().max(f64::MIN_POSITIVE);
    out.verdict("slice_decomposition", rel <= 1e-9, rel, 1e-9, "relative gap");

    let holder = holder_check(u, ctx.cfg.holder_pairs, ctx.cfg.seed);
    out.verdict("holder", holder <= 1.0 + 5.0 * h1, holder, 1.0 + 5.0 * h1, "worst sampled ratio");

    out.verdict(
        "trace",
        main.trace.pass,
        main.trace.outer_dist_minus.max(main.trace.outer_dist_plus),
        ctx.cfg.trace_tol,
        if main.trace.failures.is_empty() {
            format!("u- = {:?}, u+ = {:?}", main.trace.u_minus, main.trace.u_plus)
        } else {
            main.trace.failures.join("; ")
        },
    );
    if let Some(dev) = main.trace.max_first_average_dev {
        out.verdict("first_average", dev <= 1e-6, dev, 1e-6, format!("max |avg u1 - {}|", a.unwrap_or_default()));
    }

    if let Some(r) = &rerun {
        let shift = (r.trace.outer_dist_minus - main.trace.outer_dist_minus)
            .abs()
            .max((r.trace.outer_dist_plus - main.trace.outer_dist_plus).abs());
        let same = r.trace.u_minus == main.trace.u_minus && r.trace.u_plus == main.trace.u_plus;
        out.verdict(
            "end_sensitivity",
            same && r.trace.pass && shift <= END_SHIFT_TOL,
            shift,
            END_SHIFT_TOL,
            format!("rerun at L = {}", 1.5 * ctx.cfg.half_length),
        );
    }

    // Jensen on the relaxed field, then on seeded perturbed fields on a
    // coarse grid.
    let means = slice_means(u);
    let table = v_table(ctx, &grid.section, &means, 0.01)?;
    let relaxed_margin = jensen_check(u, &ctx.spec, &table, (-grid.half_length, grid.half_length))?;
    let mut worst = relaxed_margin;
    if ctx.cfg.jensen_fields > 0 {
        let coarse_section = match grid.section.kind {
            SectionKind::IntervalNeumann => SectionGrid::interval(17)?,
            SectionKind::Torus { dims: 1 } => SectionGrid::torus(16)?,
            SectionKind::Torus { .. } => SectionGrid::torus2(8)?,
        };
        let coarse = CylinderGrid::new(grid.half_length, 201, coarse_section, EndCondition::NeumannEnds)?;
        let base = InitialKind::HeteroclinicExtension(
            minimize_heteroclinic(&ctx.spec, &from, &to, grid.half_length.max(5.0), 400, &heteroclinic_opts(&ctx.cfg))?.curve,
        );
        let fields: Vec<CylinderField> = (0..ctx.cfg.jensen_fields as u64)
            .map(|i| {
                make_initial(
                    &InitialKind::Perturbed {
                        base: Box::new(base.clone()),
                        seed: ctx.cfg.seed.wrapping_mul(1000).wrapping_add(i),
                        amplitude: 0.3,
                    },
                    &coarse,
                    ctx.n(),
                )
            })
            .collect::<cylwell_core::Result<_>>()?;
        let all_means: Vec<Vec<f64>> = fields.iter().flat_map(slice_means).collect();
        let coarse_table = v_table(ctx, &coarse.section, &all_means, 0.05)?;
        for f in &fields {
            worst = worst.min(jensen_check(f, &ctx.spec, &coarse_table, (-coarse.half_length, coarse.half_length))?);
        }
    }
    out.verdict(
        "jensen",
        worst >= -JENSEN_TOL,
        worst,
        -JENSEN_TOL,
        format!("relaxed field margin {relaxed_margin:.3e}; {} random fields", ctx.cfg.jensen_fields),
    );

    // Chain of geodesic distances between quartile averages.
    let q = quartiles(grid.axial_nodes - 1);
    let mut chain = 0.0;
    for w in q.windows(2) {
        chain += geod_upper(&ctx.spec, &means[w[0]], &means[w[1]], &Default::default())?.value;
    }
    let slack = 4.0 * GEOD_SLACK;
    out.verdict(
        "total_variation",
        chain <= e + slack,
        chain - e,
        slack,
        "sum of geodesics between quartile averages minus energy",
    );

    out.file("cylinder_field.csv", io::field_csv(u));
    out.json(
        "cylinder_field.json",
        &json!({
            "grid": u.grid(),
            "dim": u.dim(),
            "potential": ctx.spec.name(),
            "end_condition": u.grid().end_condition,
            "seed": ctx.cfg.seed,
            "a": a,
        }),
    )?;
    out.file("cylinder_slices.csv", io::slices_csv(&report.slices));
    let history: Vec<Vec<f64>> = report
        .energy_history
        .iter()
        .enumerate()
        .map(|(i, e)| vec![i as f64, *e])
        .collect();
    out.file("cylinder_energy.csv", io::table_csv(&["step", "energy"], &history));
    let mut full = report.clone();
    full.verdicts = out.verdicts.clone();
    full.config = serde_json::to_value(&ctx.cfg)?;
    out.json("cylinder_report.json", &json!({ "run": full, "trace": main.trace }))?;
    Ok(out)
}
