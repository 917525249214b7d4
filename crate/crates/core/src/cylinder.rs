//! Fields on truncated cylinders `(-L, L) x omega`, their energy
//! `E(u) = int |grad u|^2 + W(u)`, semi-implicit gradient-flow relaxation and
//! the per-slice diagnostics used to check trace convergence.
//!
//! Axial differences live on cells, the slice energy on nodes; with the
//! nodal kinetic density taken as the mean of the adjacent cells the energy
//! equals the trapezoid integral of `kinetic + |omega| e` exactly.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cross_section::{
    averaged_potential, l2_distance_to_point, slice_energy_parts, weighted_mean, AvgPotOptions, Edge,
    SectionGrid, SectionKind,
};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::optim::solve_tridiagonal;
use crate::potential::PotentialSpec;
use crate::util::{self, max_abs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndCondition {
    NeumannEnds,
    ClampedToWells { minus: Vec<f64>, plus: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderGrid {
    pub half_length: f64,
    pub axial_nodes: usize,
    pub section: SectionGrid,
    pub end_condition: EndCondition,
}

pub const MIN_AXIAL_NODES: usize = 16;

impl CylinderGrid {
    pub fn new(half_length: f64, axial_nodes: usize, section: SectionGrid, end_condition: EndCondition) -> Result<Self> {
        if !(half_length > 0.0) || !half_length.is_finite() {
            return Err(Error::InvalidArgument(format!("L = {half_length} must be positive")));
        }
        if axial_nodes < MIN_AXIAL_NODES {
            return Err(Error::InvalidArgument(format!(
                "M1 = {axial_nodes} < {MIN_AXIAL_NODES}"
            )));
        }
        Ok(CylinderGrid {
            half_length,
            axial_nodes,
            section,
            end_condition,
        })
    }

    pub fn h1(&self) -> f64 {
        2.0 * self.half_length / (self.axial_nodes - 1) as f64
    }

    pub fn x1(&self, k: usize) -> f64 {
        if k + 1 == self.axial_nodes {
            self.half_length
        } else {
            -self.half_length + k as f64 * self.h1()
        }
    }

    /// Trapezoid weights along the axis.
    pub fn axial_weights(&self) -> Vec<f64> {
        let h = self.h1();
        (0..self.axial_nodes)
            .map(|k| if k == 0 || k + 1 == self.axial_nodes { 0.5 * h } else { h })
            .collect()
    }

    /// Same spacing, ends moved to `+-scale L`.
    pub fn rescaled(&self, scale: f64) -> Result<Self> {
        let cells = ((self.axial_nodes - 1) as f64 * scale).round() as usize;
        CylinderGrid::new(
            self.half_length * scale,
            cells + 1,
            self.section,
            self.end_condition.clone(),
        )
    }
}

/// Values `u(x1_k, x'_j)` stored as `[k][j][component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderField {
    grid: CylinderGrid,
    dim: usize,
    values: Vec<f64>,
}

impl CylinderField {
    pub fn new(grid: CylinderGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = grid.axial_nodes * grid.section.node_count() * dim;
        if dim == 0 || values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite cylinder value".into()));
        }
        if let EndCondition::ClampedToWells { minus, plus } = &grid.end_condition {
            if minus.len() != dim || plus.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: minus.len().min(plus.len()),
                });
            }
        }
        Ok(CylinderField { grid, dim, values })
    }

    pub fn from_fn(grid: CylinderGrid, dim: usize, mut f: impl FnMut(f64, &[f64]) -> Vec<f64>) -> Result<Self> {
        let s = grid.section.node_count();
        let mut values = Vec::with_capacity(grid.axial_nodes * s * dim);
        for k in 0..grid.axial_nodes {
            let x1 = grid.x1(k);
            for j in 0..s {
                let v = f(x1, &grid.section.coords(j));
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: v.len(),
                    });
                }
                values.extend(v);
            }
        }
        Self::new(grid, dim, values)
    }

    pub fn grid(&self) -> &CylinderGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn slice_len(&self) -> usize {
        self.grid.section.node_count() * self.dim
    }

    /// The trace `u(x1_k, .)` as node-major values.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.values[k * n..(k + 1) * n]
    }

    /// x'-average of slice `k`.
    pub fn slice_mean(&self, k: usize) -> Vec<f64> {
        weighted_mean(self.slice(k), &self.grid.section.weights(), self.dim)
    }
}

fn check_dims(u: &CylinderField, spec: &PotentialSpec) -> Result<()> {
    if u.dim != spec.dimension() {
        return Err(Error::DimensionMismatch {
            expected: spec.dimension(),
            got: u.dim,
        });
    }
    Ok(())
}

/// `avg_omega |u_{k+1} - u_k|^2 / h1^2` for every axial cell.
fn cell_kinetic(u: &CylinderField, weights: &[f64]) -> Vec<f64> {
    let h = u.grid.h1();
    let n = u.dim;
    (0..u.grid.axial_nodes - 1)
        .map(|k| {
            let (a, b) = (u.slice(k), u.slice(k + 1));
            weights
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    m * (0..n)
                        .map(|i| (b[j * n + i] - a[j * n + i]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / (h * h)
        })
        .collect()
}

/// Nodal `||d_1 u(x1_k, .)||^2`: one-sided at the ends, the mean of the two
/// adjacent cells inside.
fn nodal_kinetic(cells: &[f64]) -> Vec<f64> {
    let m = cells.len() + 1;
    (0..m)
        .map(|k| {
            if k == 0 {
                cells[0]
            } else if k + 1 == m {
                cells[m - 2]
            } else {
                0.5 * (cells[k - 1] + cells[k])
            }
        })
        .collect()
}

fn slice_energies(u: &CylinderField, spec: &PotentialSpec, edges: &[Edge], weights: &[f64]) -> Vec<f64> {
    (0..u.grid.axial_nodes)
        .map(|k| {
            let (g, p) = slice_energy_parts(spec, edges, weights, u.slice(k));
            g + p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderEnergy {
    /// Axial kinetic part `int ||d_1 u||^2`.
    pub axial: f64,
    /// `int |omega| e(u(x1, .)) dx1`.
    pub slices: f64,
    pub total: f64,
}

/// Energy split into axial kinetic and slice parts, summed over cells.
pub fn cylinder_energy_parts(u: &CylinderField, spec: &PotentialSpec) -> Result<CylinderEnergy> {
    check_dims(u, spec)?;
    let weights = u.grid.section.weights();
    let edges = u.grid.section.edges();
    let h = u.grid.h1();
    let axial: f64 = cell_kinetic(u, &weights).iter().map(|c| h * c).sum();
    let slices: f64 = slice_energies(u, spec, &edges, &weights)
        .iter()
        .zip(u.grid.axial_weights())
        .map(|(e, mu)| mu * e)
        .sum();
    if !slices.is_finite() {
        return Err(Error::OutsideMask(spec.name().to_string()));
    }
    #[cfg(debug_assertions)]
    {
        let both = slice_integral(u, spec)?;
        debug_assert!((both - axial - slices).abs() <= 1e-9 * (1.0 + both.abs()));
    }
    Ok(CylinderEnergy {
        axial,
        slices,
        total: axial + slices,
    })
}

pub fn cylinder_energy(u: &CylinderField, spec: &PotentialSpec) -> Result<f64> {
    Ok(cylinder_energy_parts(u, spec)?.total)
}

/// `int (||d_1 u||^2 + |omega| e) dx1` by the trapezoid rule on nodal
/// densities. Equals `cylinder_energy` up to rounding.
pub fn slice_integral(u: &CylinderField, spec: &PotentialSpec) -> Result<f64> {
    check_dims(u, spec)?;
    let weights = u.grid.section.weights();
    let edges = u.grid.section.edges();
    let kin = nodal_kinetic(&cell_kinetic(u, &weights));
    let e = slice_energies(u, spec, &edges, &weights);
    Ok(u
        .grid
        .axial_weights()
        .iter()
        .enumerate()
        .map(|(k, mu)| mu * (kin[k] + e[k]))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxOptions {
    pub dt: f64,
    pub max_steps: usize,
    /// Stop once an accepted step lowers the energy by less than this and
    /// the residual is within `residual_tol`.
    pub stall: f64,
    /// Stop once the stationarity residual is below this.
    pub residual_target: f64,
    /// Residual bound required to report convergence.
    pub residual_tol: f64,
    /// Residual tolerance of each linear solve.
    pub linear_tol: f64,
    /// Keep the slice mean of the first component equal to this value.
    pub fix_first_mean: Option<f64>,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions {
            dt: 0.1,
            max_steps: 20_000,
            stall: 1e-12,
            residual_target: 1e-8,
            residual_tol: 1e-5,
            linear_tol: 1e-10,
            fix_first_mean: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub energy_history: Vec<f64>,
    pub final_energy: f64,
    pub steps: usize,
    pub rejected_steps: usize,
    pub final_dt: f64,
    pub residual: f64,
    pub converged: bool,
    pub slices: Vec<SliceDiagnostics>,
    pub verdicts: BTreeMap<String, Verdict>,
    pub config: serde_json::Value,
    pub seed: u64,
}

/// Linear part of the semi-implicit step, diagonalized across the section.
struct Stepper {
    basis: crate::cross_section::TransverseBasis,
    weights: Vec<f64>,
    edges: Vec<Edge>,
    m1: usize,
    s: usize,
    n: usize,
    h1: f64,
    clamped: bool,
}

impl Stepper {
    fn new(grid: &CylinderGrid, n: usize) -> Self {
        Stepper {
            basis: grid.section.transverse_basis(),
            weights: grid.section.weights(),
            edges: grid.section.edges(),
            m1: grid.axial_nodes,
            s: grid.section.node_count(),
            n,
            h1: grid.h1(),
            clamped: matches!(grid.end_condition, EndCondition::ClampedToWells { .. }),
        }
    }

    fn at(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.s + j) * self.n + i
    }

    /// `L u` with `L = -Delta_h` (axial ghost-row Neumann or frozen ends,
    /// transverse weighted edge form). Rows of clamped ends are zero.
    fn apply_laplacian(&self, u: &[f64], out: &mut [f64]) {
        let (m1, s, n) = (self.m1, self.s, self.n);
        let h2 = self.h1 * self.h1;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m1 {
            if self.clamped && (k == 0 || k + 1 == m1) {
                continue;
            }
            for j in 0..s {
                for i in 0..n {
                    let c = u[self.at(k, j, i)];
                    let lap = if k == 0 {
                        2.0 * (c - u[self.at(1, j, i)]) / h2
                    } else if k + 1 == m1 {
                        2.0 * (c - u[self.at(k - 1, j, i)]) / h2
                    } else {
                        (2.0 * c - u[self.at(k - 1, j, i)] - u[self.at(k + 1, j, i)]) / h2
                    };
                    out[self.at(k, j, i)] = lap;
                }
            }
            for e in &self.edges {
                for i in 0..n {
                    let d = e.weight * (u[self.at(k, e.a, i)] - u[self.at(k, e.b, i)]);
                    out[self.at(k, e.a, i)] += d / self.weights[e.a];
                    out[self.at(k, e.b, i)] -= d / self.weights[e.b];
                }
            }
        }
    }

    /// Solves `(I + 2 dt L) x = rhs`; clamped end rows are identities.
    fn solve(&self, dt: f64, rhs: &[f64], x: &mut [f64]) {
        let (m1, s, n) = (self.m1, self.s, self.n);
        let lam = self.basis.eigenvalues();
        let mut modal = vec![0.0; m1 * s * n];
        let mut buf = vec![0.0; s];
        let mut out = vec![0.0; s];
        for k in 0..m1 {
            for i in 0..n {
                for j in 0..s {
                    buf[j] = self.weights[j] * rhs[self.at(k, j, i)];
                }
                self.basis.transpose_apply(&buf, &mut out);
                for q in 0..s {
                    modal[self.at(k, q, i)] = out[q];
                }
            }
        }
        let c = 2.0 * dt / (self.h1 * self.h1);
        let mut sub = vec![0.0; m1];
        let mut diag = vec![0.0; m1];
        let mut sup = vec![0.0; m1];
        let mut col = vec![0.0; m1];
        let mut work = Vec::with_capacity(m1);
        for q in 0..s {
            let base = 1.0 + 2.0 * dt * lam[q];
            for k in 0..m1 {
                if self.clamped && (k == 0 || k + 1 == m1) {
                    sub[k] = 0.0;
                    diag[k] = 1.0;
                    sup[k] = 0.0;
                } else if k == 0 {
                    diag[k] = base + 2.0 * c;
                    sup[k] = -2.0 * c;
                } else if k + 1 == m1 {
                    sub[k] = -2.0 * c;
                    diag[k] = base + 2.0 * c;
                } else {
                    sub[k] = -c;
                    diag[k] = base + 2.0 * c;
                    sup[k] = -c;
                }
            }
            for i in 0..n {
                for k in 0..m1 {
                    col[k] = modal[self.at(k, q, i)];
                }
                solve_tridiagonal(&sub, &diag, &sup, &mut col, &mut work);
                for k in 0..m1 {
                    modal[self.at(k, q, i)] = col[k];
                }
            }
        }
        for k in 0..m1 {
            for i in 0..n {
                for q in 0..s {
                    buf[q] = modal[self.at(k, q, i)];
                }
                self.basis.apply(&buf, &mut out);
                for j in 0..s {
                    x[self.at(k, j, i)] = out[j];
                }
            }
        }
    }

    /// Replaces the slice mean of component 0 by `a` on every slice.
    fn fix_mean(&self, u: &mut [f64], a: f64) {
        for k in 0..self.m1 {
            let mean: f64 = (0..self.s).map(|j| self.weights[j] * u[self.at(k, j, 0)]).sum();
            for j in 0..self.s {
                u[self.at(k, j, 0)] += a - mean;
            }
        }
    }

    /// Max over free axial nodes of `|Delta_h u - grad W(u) / 2|`, with the
    /// constant-mode part of component 0 removed when its mean is fixed.
    fn residual(&self, spec: &PotentialSpec, u: &[f64], fixed: bool) -> f64 {
        let mut lap = vec![0.0; u.len()];
        self.apply_laplacian(u, &mut lap);
        let mut g = vec![0.0; self.n];
        let mut r = vec![0.0; self.s * self.n];
        let mut worst = 0.0_f64;
        for k in 1..self.m1 - 1 {
            for j in 0..self.s {
                spec.gradient_into(&u[self.at(k, j, 0)..self.at(k, j, 0) + self.n], &mut g);
                for i in 0..self.n {
                    r[j * self.n + i] = -lap[self.at(k, j, i)] - 0.5 * g[i];
                }
            }
            if fixed {
                let mean: f64 = (0..self.s).map(|j| self.weights[j] * r[j * self.n]).sum();
                for j in 0..self.s {
                    r[j * self.n] -= mean;
                }
            }
            worst = worst.max(max_abs(&r));
        }
        worst
    }

    /// One semi-implicit step with iterative refinement of the linear solve.
    fn step(&self, spec: &PotentialSpec, u: &[f64], dt: f64, linear_tol: f64, fix: Option<f64>) -> Vec<f64> {
        let n = self.n;
        let mut rhs = u.to_vec();
        let mut g = vec![0.0; n];
        for k in 0..self.m1 {
            if self.clamped && (k == 0 || k + 1 == self.m1) {
                continue;
            }
            for j in 0..self.s {
                let p = self.at(k, j, 0);
                spec.gradient_into(&u[p..p + n], &mut g);
                for i in 0..n {
                    rhs[p + i] -= dt * g[i];
                }
            }
        }
        let mut x = vec![0.0; u.len()];
        self.solve(dt, &rhs, &mut x);
        let mut lx = vec![0.0; u.len()];
        let mut r = vec![0.0; u.len()];
        let mut dx = vec![0.0; u.len()];
        for _ in 0..4 {
            self.apply_laplacian(&x, &mut lx);
            for p in 0..x.len() {
                r[p] = rhs[p] - x[p] - 2.0 * dt * lx[p];
            }
            if max_abs(&r) <= linear_tol {
                break;
            }
            self.solve(dt, &r, &mut dx);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        if let Some(a) = fix {
            self.fix_mean(&mut x, a);
        }
        x
    }
}

/// Gradient flow `u_t = 2 Delta_h u - grad W(u)` by semi-implicit steps,
/// halving `dt` whenever the energy would increase.
pub fn relax(u0: &CylinderField, spec: &PotentialSpec, opts: &RelaxOptions) -> Result<(CylinderField, RunReport)> {
    spec.ensure_finite_valued()?;
    check_dims(u0, spec)?;
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {} must be positive", opts.dt)));
    }
    let grid = u0.grid.clone();
    let n = u0.dim;
    if let EndCondition::ClampedToWells { minus, plus } = &grid.end_condition {
        for (k, w) in [(0, minus), (grid.axial_nodes - 1, plus)] {
            let s = u0.slice(k);
            if (0..grid.section.node_count()).any(|j| util::dist(&s[j * n..(j + 1) * n], w) > 1e-8) {
                return Err(Error::InvalidArgument(format!(
                    "end slice {k} does not match the declared well {w:?}"
                )));
            }
        }
    }
    if opts.fix_first_mean.is_some() && grid.end_condition != EndCondition::NeumannEnds {
        let a = opts.fix_first_mean.unwrap_or_default();
        if let EndCondition::ClampedToWells { minus, plus } = &grid.end_condition {
            if (minus[0] - a).abs() > 1e-8 || (plus[0] - a).abs() > 1e-8 {
                return Err(Error::InvalidArgument("clamped wells violate the fixed first mean".into()));
            }
        }
    }

    let stepper = Stepper::new(&grid, n);
    let mut u = u0.values.clone();
    if let Some(a) = opts.fix_first_mean {
        stepper.fix_mean(&mut u, a);
    }
    let energy_of = |v: &[f64]| -> Result<f64> {
        cylinder_energy(&CylinderField::new(grid.clone(), n, v.to_vec())?, spec)
    };
    let e0 = energy_of(&u)?;
    let mut energy = e0;
    let mut history = vec![e0];
    let mut dt = opts.dt;
    let mut steps = 0;
    let mut rejected = 0;
    let mut streak = 0;
    let fixed = opts.fix_first_mean.is_some();
    let mut residual = stepper.residual(spec, &u, fixed);
    let accept_slack = 1e-12 * (1.0 + e0.abs());

    while steps < opts.max_steps && residual > opts.residual_target {
        let candidate = stepper.step(spec, &u, dt, opts.linear_tol, opts.fix_first_mean);
        let e_new = match CylinderField::new(grid.clone(), n, candidate.clone()) {
            Ok(f) => cylinder_energy(&f, spec)?,
            Err(_) => f64::NAN,
        };
        if e_new.is_nan() && dt == opts.dt && steps == 0 {
            return Err(Error::Divergence(format!("energy NaN at step {steps}, dt = {dt}")));
        }
        if !(e_new <= energy + accept_slack) {
            rejected += 1;
            streak = 0;
            dt *= 0.5;
            if dt < 1e-12 {
                return Err(Error::StepUnderflow(dt));
            }
            continue;
        }
        steps += 1;
        streak += 1;
        if streak >= 20 && dt < opts.dt {
            dt = (2.0 * dt).min(opts.dt);
            streak = 0;
        }
        let decrease = energy - e_new;
        u = candidate;
        energy = e_new;
        history.push(e_new);
        residual = stepper.residual(spec, &u, fixed);
        if decrease < opts.stall && residual <= opts.residual_tol {
            break;
        }
    }

    let field = CylinderField::new(grid, n, u)?;
    let report = RunReport {
        final_energy: energy,
        energy_history: history,
        steps,
        rejected_steps: rejected,
        final_dt: dt,
        residual,
        converged: residual <= opts.residual_tol,
        slices: Vec::new(),
        verdicts: BTreeMap::new(),
        config: serde_json::to_value(opts)?,
        seed: 0,
    };
    Ok((field, report))
}

/// Stationarity residual `max |Delta_h u - grad W(u) / 2|` over free axial nodes.
pub fn stationarity_residual(u: &CylinderField, spec: &PotentialSpec, fix_first_mean: bool) -> Result<f64> {
    check_dims(u, spec)?;
    Ok(Stepper::new(&u.grid, u.dim).residual(spec, &u.values, fix_first_mean))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceDiagnostics {
    pub x1: f64,
    /// `d_L2(u(x1, .), w)` per well.
    pub dist_to_well: Vec<f64>,
    /// `max_x' |u(x1, x') - w|` per well.
    pub sup_dist_to_well: Vec<f64>,
    pub average: Vec<f64>,
    pub slice_e: f64,
    pub kinetic: f64,
    pub div_residual: Option<f64>,
    pub average_first_component: Option<f64>,
}

/// Per-slice record along the axis. With `a` given on a torus section with
/// `d = N`, also the first-component average and the divergence residual
/// (centered differences, one-sided at the axial ends).
pub fn slice_diagnostics(
    u: &CylinderField,
    spec: &PotentialSpec,
    wells: &[Vec<f64>],
    a: Option<f64>,
) -> Result<Vec<SliceDiagnostics>> {
    check_dims(u, spec)?;
    if wells.is_empty() {
        return Err(Error::InvalidArgument("no wells given".into()));
    }
    let grid = &u.grid;
    let n = u.dim;
    let s = grid.section.node_count();
    let weights = grid.section.weights();
    let edges = grid.section.edges();
    let kin = nodal_kinetic(&cell_kinetic(u, &weights));
    let e = slice_energies(u, spec, &edges, &weights);
    let with_div = a.is_some() && grid.section.is_torus() && grid.section.dims() + 1 == n;
    let p = grid.section.points_per_axis;
    let hs = grid.section.spacing();
    let h1 = grid.h1();
    let m1 = grid.axial_nodes;
    let mut out = Vec::with_capacity(m1);
    for k in 0..m1 {
        let sl = u.slice(k);
        let dist_to_well = wells.iter().map(|w| l2_distance_to_point(sl, &weights, w)).collect();
        let sup_dist_to_well = wells
            .iter()
            .map(|w| (0..s).map(|j| util::dist(&sl[j * n..(j + 1) * n], w)).fold(0.0, f64::max))
            .collect();
        let average = weighted_mean(sl, &weights, n);
        let div_residual = if with_div {
            let (lo, hi, span) = if k == 0 {
                (0, 1, h1)
            } else if k + 1 == m1 {
                (k - 1, k, h1)
            } else {
                (k - 1, k + 1, 2.0 * h1)
            };
            let mut worst = 0.0_f64;
            for j in 0..s {
                let mut div = (u.slice(hi)[j * n] - u.slice(lo)[j * n]) / span;
                for axis in 0..grid.section.dims() {
                    let (fwd, bwd) = torus_neighbors(j, p, axis, grid.section.dims());
                    div += (sl[fwd * n + axis + 1] - sl[bwd * n + axis + 1]) / (2.0 * hs);
                }
                worst = worst.max(div.abs());
            }
            Some(worst)
        } else {
            None
        };
        out.push(SliceDiagnostics {
            x1: grid.x1(k),
            dist_to_well,
            sup_dist_to_well,
            average_first_component: a.map(|_| average[0]),
            average,
            slice_e: e[k],
            kinetic: kin[k],
            div_residual,
        });
    }
    Ok(out)
}

fn torus_neighbors(j: usize, p: usize, axis: usize, dims: usize) -> (usize, usize) {
    if dims == 1 {
        return ((j + 1) % p, (j + p - 1) % p);
    }
    let (r, c) = (j / p, j % p);
    if axis == 0 {
        (((r + 1) % p) * p + c, ((r + p - 1) % p) * p + c)
    } else {
        (r * p + (c + 1) % p, r * p + (c + p - 1) % p)
    }
}

/// `max_x1 avg_omega |u - ubar|^2`.
pub fn max_transverse_variance(u: &CylinderField) -> f64 {
    let weights = u.grid.section.weights();
    (0..u.grid.axial_nodes)
        .map(|k| {
            let mean = u.slice_mean(k);
            l2_distance_to_point(u.slice(k), &weights, &mean).powi(2)
        })
        .fold(0.0, f64::max)
}

/// Tabulated averaged potential on a tensor grid, multilinearly interpolated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VTable {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Nodes per axis.
    pub counts: Vec<usize>,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
}

impl VTable {
    pub fn build(
        spec: &PotentialSpec,
        section: &SectionGrid,
        lo: &[f64],
        hi: &[f64],
        counts: &[usize],
        opts: &AvgPotOptions,
    ) -> Result<Self> {
        let n = spec.dimension();
        if lo.len() != n || hi.len() != n || counts.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lo.len(),
            });
        }
        let values = Self::points(lo, hi, counts)?
            .iter()
            .map(|z| averaged_potential(spec, z, section, opts).map(|r| r.value))
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(lo, hi, counts, values)
    }

    /// Table nodes in storage order.
    pub fn points(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Vec<Vec<f64>>> {
        if lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c < 2) || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument("degenerate V table".into()));
        }
        let total: usize = counts.iter().product();
        Ok((0..total).map(|id| Self::node(lo, hi, counts, id)).collect())
    }

    pub fn from_values(lo: &[f64], hi: &[f64], counts: &[usize], values: Vec<f64>) -> Result<Self> {
        let total = Self::points(lo, hi, counts)?.len();
        if values.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: values.len(),
            });
        }
        Ok(VTable {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            counts: counts.to_vec(),
            values,
        })
    }

    fn node(lo: &[f64], hi: &[f64], counts: &[usize], mut id: usize) -> Vec<f64> {
        let mut z = vec![0.0; lo.len()];
        for i in (0..lo.len()).rev() {
            let k = id % counts[i];
            id /= counts[i];
            z[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / (counts[i] - 1) as f64;
        }
        z
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        let n = self.lo.len();
        if z.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: z.len() });
        }
        let mut cell = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for i in 0..n {
            if !(z[i] >= self.lo[i] - 1e-12 && z[i] <= self.hi[i] + 1e-12) {
                return Err(Error::OutsideTable(z.to_vec()));
            }
            let t = (z[i] - self.lo[i]) / (self.hi[i] - self.lo[i]) * (self.counts[i] - 1) as f64;
            let c = (t.floor().max(0.0) as usize).min(self.counts[i] - 2);
            cell[i] = c;
            frac[i] = (t - c as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut id = 0;
            for i in 0..n {
                let bit = (corner >> i) & 1;
                weight *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
                id = id * self.counts[i] + cell[i] + bit;
            }
            if weight != 0.0 {
                acc += weight * self.values[id];
            }
        }
        Ok(acc)
    }
}

/// `E(u, I x omega) / |omega| - int_I (|d ubar / dx1|^2 + V(ubar))` on the
/// nodes inside `interval`.
pub fn jensen_check(u: &CylinderField, spec: &PotentialSpec, table: &VTable, interval: (f64, f64)) -> Result<f64> {
    check_dims(u, spec)?;
    let grid = &u.grid;
    let h = grid.h1();
    let k0 = (((interval.0 + grid.half_length) / h) - 1e-9).ceil().max(0.0) as usize;
    let k1 = ((((interval.1 + grid.half_length) / h) + 1e-9).floor() as usize).min(grid.axial_nodes - 1);
    if k1 <= k0 {
        return Err(Error::InvalidArgument(format!("interval {interval:?} holds fewer than two nodes")));
    }
    let weights = grid.section.weights();
    let edges = grid.section.edges();
    let means: Vec<Vec<f64>> = (k0..=k1).map(|k| u.slice_mean(k)).collect();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let cells = cell_kinetic(u, &weights);
    for k in k0..k1 {
        lhs += h * cells[k];
        let (a, b) = (&means[k - k0], &means[k + 1 - k0]);
        rhs += a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>() / h;
    }
    for k in k0..=k1 {
        let mu = if k == k0 || k == k1 { 0.5 * h } else { h };
        let (g, p) = slice_energy_parts(spec, &edges, &weights, u.slice(k));
        lhs += mu * (g + p);
        rhs += mu * table.eval(&means[k - k0])?;
    }
    Ok(lhs - rhs)
}

/// Largest `d_L2(u(t), u(s))^2 / (|t - s| ||d_1 u||^2_{L2})` over sampled
/// slice pairs; `0/0` counts as `0`.
pub fn holder_check(u: &CylinderField, n_pairs: usize, seed: u64) -> f64 {
    let grid = &u.grid;
    let weights = grid.section.weights();
    let h = grid.h1();
    let total_kinetic: f64 = cell_kinetic(u, &weights).iter().map(|c| h * c).sum();
    let mut rng = util::rng(seed);
    let m1 = grid.axial_nodes;
    let mut worst = 0.0_f64;
    for _ in 0..n_pairs {
        let k = rng.random_range(0..m1);
        let mut l = rng.random_range(0..m1 - 1);
        if l >= k {
            l += 1;
        }
        let d2: f64 = weights
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let n = u.dim;
                m * (0..n)
                    .map(|i| (u.slice(k)[j * n + i] - u.slice(l)[j * n + i]).powi(2))
                    .sum::<f64>()
            })
            .sum();
        let denom = (grid.x1(k) - grid.x1(l)).abs() * total_kinetic;
        let ratio = if d2 == 0.0 { 0.0 } else { d2 / denom };
        worst = worst.max(ratio);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceOptions {
    pub trace_tol: f64,
    /// Fraction of slices at each end examined.
    pub outer_fraction: f64,
    /// Constrained flavor: required value of the first-component average.
    pub a: Option<f64>,
    pub a_tol: f64,
    /// Bound on the divergence residual, for fields declared divergence-free.
    pub div_tol: Option<f64>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            trace_tol: 1e-2,
            outer_fraction: 0.1,
            a: None,
            a_tol: 1e-6,
            div_tol: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceVerdict {
    pub pass: bool,
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    /// Largest L2 distance to `u-` / `u+` on the outer slices.
    pub outer_dist_minus: f64,
    pub outer_dist_plus: f64,
    /// Largest sup-norm distance on the outer slices.
    pub outer_sup_minus: f64,
    pub outer_sup_plus: f64,
    /// Largest `|average - u+-|` on the outer slices.
    pub outer_average_dev: f64,
    pub max_first_average_dev: Option<f64>,
    pub max_div_residual: Option<f64>,
    pub failures: Vec<String>,
}

pub fn trace_convergence_verdict(diags: &[SliceDiagnostics], wells: &[Vec<f64>], opts: &TraceOptions) -> TraceVerdict {
    let mut failures = Vec::new();
    let m = diags.len();
    let argmin = |d: &SliceDiagnostics| -> usize {
        (0..d.dist_to_well.len())
            .min_by(|&a, &b| d.dist_to_well[a].total_cmp(&d.dist_to_well[b]))
            .unwrap_or(0)
    };
    if m == 0 || wells.is_empty() {
        return TraceVerdict {
            pass: false,
            u_minus: Vec::new(),
            u_plus: Vec::new(),
            outer_dist_minus: f64::INFINITY,
            outer_dist_plus: f64::INFINITY,
            outer_sup_minus: f64::INFINITY,
            outer_sup_plus: f64::INFINITY,
            outer_average_dev: f64::INFINITY,
            max_first_average_dev: None,
            max_div_residual: None,
            failures: vec!["no slices or no wells".into()],
        };
    }
    let im = argmin(&diags[0]);
    let ip = argmin(&diags[m - 1]);
    let outer = ((opts.outer_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut stats = [(0.0_f64, 0.0_f64); 2];
    let mut avg_dev = 0.0_f64;
    for (side, (range, w)) in [(0..outer, im), (m - outer..m, ip)].into_iter().enumerate() {
        for d in &diags[range] {
            stats[side].0 = stats[side].0.max(d.dist_to_well[w]);
            stats[side].1 = stats[side].1.max(d.sup_dist_to_well[w]);
            avg_dev = avg_dev.max(util::dist(&d.average, &wells[w]));
        }
    }
    if stats[0].0 > opts.trace_tol {
        failures.push(format!("left trace {:.3e} from {:?}", stats[0].0, wells[im]));
    }
    if stats[1].0 > opts.trace_tol {
        failures.push(format!("right trace {:.3e} from {:?}", stats[1].0, wells[ip]));
    }
    if avg_dev > opts.trace_tol {
        failures.push(format!("outer averages deviate by {avg_dev:.3e}"));
    }
    let mut max_first = None;
    if let Some(a) = opts.a {
        let dev = diags
            .iter()
            .map(|d| (d.average[0] - a).abs())
            .fold(0.0, f64::max);
        if dev > opts.a_tol {
            failures.push(format!("first-component average deviates from {a} by {dev:.3e}"));
        }
        for (w, name) in [(im, "u-"), (ip, "u+")] {
            if (wells[w][0] - a).abs() > opts.a_tol {
                failures.push(format!("{name} = {:?} is not in the a-slice", wells[w]));
            }
        }
        max_first = Some(dev);
    }
    let max_div = diags.iter().filter_map(|d| d.div_residual).reduce(f64::max);
    if let (Some(tol), Some(dv)) = (opts.div_tol, max_div) {
        if dv > tol {
            failures.push(format!("divergence residual {dv:.3e} > {tol:.3e}"));
        }
    }
    TraceVerdict {
        pass: failures.is_empty(),
        u_minus: wells[im].clone(),
        u_plus: wells[ip].clone(),
        outer_dist_minus: stats[0].0,
        outer_dist_plus: stats[1].0,
        outer_sup_minus: stats[0].1,
        outer_sup_plus: stats[1].1,
        outer_average_dev: avg_dev,
        max_first_average_dev: max_first,
        max_div_residual: max_div,
        failures,
    }
}

#[derive(Clone, Debug)]
pub enum InitialKind {
    ConstantWell(Vec<f64>),
    /// `u(x1, x') = curve(x1)`, linearly interpolated and held constant
    /// beyond the curve's interval.
    HeteroclinicExtension(Curve),
    /// Base field plus a seeded smooth perturbation built from low
    /// transverse harmonics and Gaussian axial bumps.
    Perturbed {
        base: Box<InitialKind>,
        seed: u64,
        amplitude: f64,
    },
    /// `d = N = 2` on the torus: base plus the field of the stream function
    /// `amplitude * phi(x1) sin(2 pi x2)`, `phi(x1) = exp(-x1^2 / 4)`,
    /// differentiated so that the centered discrete divergence vanishes.
    DivergenceFreeHarmonic { base: Box<InitialKind>, amplitude: f64 },
    /// Blend `(1 - s(x')) gamma_1(x1) + s(x') gamma_2(x1)` with
    /// `s = (1 - cos 2 pi x'_1) / 2`.
    TwoConnectionInterp { gamma1: Curve, gamma2: Curve },
}

pub fn make_initial(kind: &InitialKind, grid: &CylinderGrid, dim: usize) -> Result<CylinderField> {
    let mut u = match kind {
        InitialKind::ConstantWell(w) => {
            if w.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
            }
            CylinderField::from_fn(grid.clone(), dim, |_, _| w.clone())?
        }
        InitialKind::HeteroclinicExtension(c) => {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.dim() });
            }
            CylinderField::from_fn(grid.clone(), dim, |x1, _| c.at(x1))?
        }
        InitialKind::Perturbed { base, seed, amplitude } => {
            let mut u = make_initial(base, grid, dim)?;
            let pert = smooth_perturbation(grid, dim, *seed);
            u.values.iter_mut().zip(&pert).for_each(|(a, b)| *a += amplitude * b);
            u
        }
        InitialKind::DivergenceFreeHarmonic { base, amplitude } => {
            if dim != 2 || grid.section.kind != (SectionKind::Torus { dims: 1 }) {
                return Err(Error::InvalidArgument(
                    "divergence-free construction needs N = 2 on a one-dimensional torus".into(),
                ));
            }
            let mut u = make_initial(base, grid, dim)?;
            let h1 = grid.h1();
            let h2 = grid.section.spacing();
            let tau = 2.0 * std::f64::consts::PI;
            let phi = |x: f64| (-x * x / 4.0).exp();
            let s = grid.section.node_count();
            for k in 0..grid.axial_nodes {
                let x1 = grid.x1(k);
                let dphi = (phi(x1 + h1) - phi(x1 - h1)) / (2.0 * h1);
                for j in 0..s {
                    let x2 = grid.section.coords(j)[0];
                    let p = (k * s + j) * 2;
                    u.values[p] += amplitude * phi(x1) * (tau * x2).cos() * (tau * h2).sin() / h2;
                    u.values[p + 1] -= amplitude * dphi * (tau * x2).sin();
                }
            }
            u
        }
        InitialKind::TwoConnectionInterp { gamma1, gamma2 } => {
            if gamma1.dim() != dim || gamma2.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: gamma1.dim() });
            }
            CylinderField::from_fn(grid.clone(), dim, |x1, xp| {
                let s = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * xp[0]).cos());
                gamma1
                    .at(x1)
                    .iter()
                    .zip(gamma2.at(x1))
                    .map(|(a, b)| (1.0 - s) * a + s * b)
                    .collect()
            })?
        }
    };
    if let EndCondition::ClampedToWells { minus, plus } = &grid.end_condition {
        let s = grid.section.node_count();
        let last = grid.axial_nodes - 1;
        for j in 0..s {
            for i in 0..dim {
                u.values[j * dim + i] = minus[i];
                u.values[(last * s + j) * dim + i] = plus[i];
            }
        }
    }
    CylinderField::new(u.grid, dim, u.values)
}

/// Max-normalized smooth random field.
fn smooth_perturbation(grid: &CylinderGrid, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = util::rng(seed);
    let l = grid.half_length;
    let terms: Vec<(usize, f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0..dim),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5 * l..0.5 * l),
                rng.random_range(1.0..3.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    let harmonics: Vec<usize> = (0..6).map(|_| rng.random_range(1..4usize)).collect();
    let periodic = grid.section.is_torus();
    let s = grid.section.node_count();
    let mut v = vec![0.0; grid.axial_nodes * s * dim];
    for k in 0..grid.axial_nodes {
        let x1 = grid.x1(k);
        for j in 0..s {
            let xp = grid.section.coords(j);
            for (t, &(comp, coeff, center, width, phase)) in terms.iter().enumerate() {
                let m = harmonics[t] as f64;
                let transverse: f64 = xp
                    .iter()
                    .map(|x| {
                        if periodic {
                            (2.0 * std::f64::consts::PI * (m * x + phase)).cos()
                        } else {
                            (std::f64::consts::PI * m * x).cos()
                        }
                    })
                    .product();
                let axial = (-((x1 - center) / width).powi(2)).exp();
                v[(k * s + j) * dim + comp] += coeff * axial * transverse;
            }
        }
    }
    let peak = max_abs(&v);
    if peak > 0.0 {
        v.iter_mut().for_each(|x| *x /= peak);
    }
    v
}
