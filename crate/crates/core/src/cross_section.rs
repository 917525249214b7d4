//! Fields on a cross-section `omega` with `|omega| = 1`, the slice energy
//! `e(v) = avg_omega |grad' v|^2 + W(v)`, the averaged potential `V` and the
//! constrained infima `k_eps`.
//!
//! Gradient energy is cell-based: each grid edge contributes the squared
//! difference quotient weighted by the measure of its cell. The potential
//! uses trapezoid weights on the interval and uniform weights on the torus.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, DescentOptions, Geometry};
use crate::potential::PotentialSpec;
use crate::util::{self, max_abs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    /// `omega = (0, 1)` with natural (Neumann) ends.
    IntervalNeumann,
    /// `omega = T^1` or `T^2`, unit period.
    Torus { dims: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionGrid {
    pub kind: SectionKind,
    pub points_per_axis: usize,
}

/// `weight * |v[a] - v[b]|^2` is one edge's share of `avg |grad' v|^2`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

pub const MIN_SECTION_POINTS: usize = 8;

impl SectionGrid {
    pub fn new(kind: SectionKind, points_per_axis: usize) -> Result<Self> {
        if points_per_axis < MIN_SECTION_POINTS {
            return Err(Error::InvalidArgument(format!(
                "section needs at least {MIN_SECTION_POINTS} points per axis, got {points_per_axis}"
            )));
        }
        if let SectionKind::Torus { dims } = kind {
            if !(1..=2).contains(&dims) {
                return Err(Error::InvalidArgument(format!("torus dimension {dims} not in {{1, 2}}")));
            }
        }
        Ok(SectionGrid { kind, points_per_axis })
    }

    pub fn interval(p: usize) -> Result<Self> {
        Self::new(SectionKind::IntervalNeumann, p)
    }

    pub fn torus(p: usize) -> Result<Self> {
        Self::new(SectionKind::Torus { dims: 1 }, p)
    }

    pub fn torus2(p: usize) -> Result<Self> {
        Self::new(SectionKind::Torus { dims: 2 }, p)
    }

    /// Dimension `d - 1` of the section.
    pub fn dims(&self) -> usize {
        match self.kind {
            SectionKind::IntervalNeumann => 1,
            SectionKind::Torus { dims } => dims,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, SectionKind::Torus { .. })
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.pow(self.dims() as u32)
    }

    pub fn spacing(&self) -> f64 {
        match self.kind {
            SectionKind::IntervalNeumann => 1.0 / (self.points_per_axis - 1) as f64,
            SectionKind::Torus { .. } => 1.0 / self.points_per_axis as f64,
        }
    }

    fn axis_weights(&self) -> Vec<f64> {
        let p = self.points_per_axis;
        let h = self.spacing();
        match self.kind {
            SectionKind::IntervalNeumann => (0..p)
                .map(|j| if j == 0 || j == p - 1 { 0.5 * h } else { h })
                .collect(),
            SectionKind::Torus { .. } => vec![h; p],
        }
    }

    /// Quadrature weights; they sum to `|omega| = 1`.
    pub fn weights(&self) -> Vec<f64> {
        let w1 = self.axis_weights();
        match self.dims() {
            1 => w1,
            _ => w1.iter().flat_map(|a| w1.iter().map(move |b| a * b)).collect(),
        }
    }

    /// Coordinates of node `j` (row-major, last axis fastest).
    pub fn coords(&self, j: usize) -> Vec<f64> {
        let p = self.points_per_axis;
        let h = self.spacing();
        match self.dims() {
            1 => vec![j as f64 * h],
            _ => vec![(j / p) as f64 * h, (j % p) as f64 * h],
        }
    }

    pub(crate) fn edges(&self) -> Vec<Edge> {
        let p = self.points_per_axis;
        let h = self.spacing();
        match self.kind {
            SectionKind::IntervalNeumann => (0..p - 1)
                .map(|j| Edge {
                    a: j,
                    b: j + 1,
                    weight: 1.0 / h,
                })
                .collect(),
            SectionKind::Torus { dims: 1 } => (0..p)
                .map(|j| Edge {
                    a: j,
                    b: (j + 1) % p,
                    weight: 1.0 / h,
                })
                .collect(),
            SectionKind::Torus { .. } => {
                let mut edges = Vec::with_capacity(2 * p * p);
                for i in 0..p {
                    for j in 0..p {
                        let a = i * p + j;
                        edges.push(Edge {
                            a,
                            b: ((i + 1) % p) * p + j,
                            weight: 1.0,
                        });
                        edges.push(Edge {
                            a,
                            b: i * p + (j + 1) % p,
                            weight: 1.0,
                        });
                    }
                }
                edges
            }
        }
    }

    /// Generalized eigenbasis of the gradient form with respect to the
    /// quadrature weights.
    pub fn transverse_basis(&self) -> TransverseBasis {
        let p = self.points_per_axis;
        let m = self.axis_weights();
        let mut k = DMatrix::<f64>::zeros(p, p);
        let axis = match self.kind {
            SectionKind::IntervalNeumann => SectionGrid {
                kind: self.kind,
                points_per_axis: p,
            },
            SectionKind::Torus { .. } => SectionGrid {
                kind: SectionKind::Torus { dims: 1 },
                points_per_axis: p,
            },
        };
        // One-axis edge weights already include the axis cell measure.
        for e in axis.edges() {
            k[(e.a, e.a)] += e.weight;
            k[(e.b, e.b)] += e.weight;
            k[(e.a, e.b)] -= e.weight;
            k[(e.b, e.a)] -= e.weight;
        }
        let inv_sqrt: Vec<f64> = m.iter().map(|w| 1.0 / w.sqrt()).collect();
        let a = DMatrix::from_fn(p, p, |i, j| inv_sqrt[i] * k[(i, j)] * inv_sqrt[j]);
        let eig = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let phi = DMatrix::from_fn(p, p, |r, c| inv_sqrt[r] * eig.eigenvectors[(r, order[c])]);
        let eigenvalues = match self.dims() {
            1 => lambda.clone(),
            _ => lambda
                .iter()
                .flat_map(|a| lambda.iter().map(move |b| a + b))
                .collect(),
        };
        TransverseBasis {
            dims: self.dims(),
            p,
            phi,
            eigenvalues,
        }
    }
}

/// `Phi` with `Phi^T M Phi = I` and `Phi^T K Phi = diag(lambda)`, stored per
/// axis; the two-dimensional torus uses the tensor product.
#[derive(Clone, Debug)]
pub struct TransverseBasis {
    dims: usize,
    p: usize,
    phi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl TransverseBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `c = Phi^T r` for a nodal vector `r`.
    pub fn transpose_apply(&self, r: &[f64], out: &mut [f64]) {
        match self.dims {
            1 => {
                let v = self.phi.tr_mul(&DVector::from_column_slice(r));
                out.copy_from_slice(v.as_slice());
            }
            _ => {
                let rm = DMatrix::from_row_slice(self.p, self.p, r);
                let c = self.phi.transpose() * rm * &self.phi;
                copy_row_major(&c, out);
            }
        }
    }

    /// `x = Phi c` for modal coefficients `c`.
    pub fn apply(&self, c: &[f64], out: &mut [f64]) {
        match self.dims {
            1 => {
                let v = &self.phi * DVector::from_column_slice(c);
                out.copy_from_slice(v.as_slice());
            }
            _ => {
                let cm = DMatrix::from_row_slice(self.p, self.p, c);
                let x = &self.phi * cm * self.phi.transpose();
                copy_row_major(&x, out);
            }
        }
    }

    /// Solves `(alpha K + beta M) x = r`.
    pub fn solve_shifted(&self, alpha: f64, beta: f64, r: &[f64], out: &mut [f64]) {
        let mut c = vec![0.0; r.len()];
        self.transpose_apply(r, &mut c);
        for (ci, l) in c.iter_mut().zip(&self.eigenvalues) {
            *ci /= alpha * l + beta;
        }
        self.apply(&c, out);
    }
}

fn copy_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            out[i * cols + j] = m[(i, j)];
        }
    }
}

/// Nodal values `v: omega -> R^N`, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionField {
    grid: SectionGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SectionField {
    pub fn new(grid: SectionGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != grid.node_count() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count() * dim.max(1),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite section value".into()));
        }
        Ok(SectionField { grid, dim, values })
    }

    pub fn constant(grid: SectionGrid, z: &[f64]) -> Self {
        let values = (0..grid.node_count()).flat_map(|_| z.iter().copied()).collect();
        SectionField {
            grid,
            dim: z.len(),
            values,
        }
    }

    pub fn from_fn(grid: SectionGrid, dim: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.node_count() * dim);
        for j in 0..grid.node_count() {
            let v = f(&grid.coords(j));
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(grid, dim, values)
    }

    pub fn grid(&self) -> &SectionGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `avg_omega v`.
    pub fn mean(&self) -> Vec<f64> {
        weighted_mean(&self.values, &self.grid.weights(), self.dim)
    }

    /// `(avg_omega |v - w|^2)^{1/2}`.
    pub fn l2_distance_to(&self, w: &[f64]) -> f64 {
        l2_distance_to_point(&self.values, &self.grid.weights(), w)
    }
}

pub(crate) fn weighted_mean(values: &[f64], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for (j, w) in weights.iter().enumerate() {
        for i in 0..dim {
            m[i] += w * values[j * dim + i];
        }
    }
    m
}

pub(crate) fn l2_distance_to_point(values: &[f64], weights: &[f64], w: &[f64]) -> f64 {
    let n = w.len();
    weights
        .iter()
        .enumerate()
        .map(|(j, m)| {
            m * values[j * n..(j + 1) * n]
                .iter()
                .zip(w)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Gradient and potential parts of `e(v)` for raw node-major values.
pub(crate) fn slice_energy_parts(
    spec: &PotentialSpec,
    edges: &[Edge],
    weights: &[f64],
    values: &[f64],
) -> (f64, f64) {
    let n = spec.dimension();
    let mut grad = 0.0;
    for e in edges {
        let (a, b) = (&values[e.a * n..(e.a + 1) * n], &values[e.b * n..(e.b + 1) * n]);
        grad += e.weight * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    let pot = weights
        .iter()
        .enumerate()
        .map(|(j, m)| m * spec.value(&values[j * n..(j + 1) * n]))
        .sum();
    (grad, pot)
}

/// `e(v)` and its gradient with respect to nodal values.
fn slice_energy_with_gradient(
    spec: &PotentialSpec,
    edges: &[Edge],
    weights: &[f64],
    values: &[f64],
    g: &mut [f64],
) -> f64 {
    let n = spec.dimension();
    let mut f = 0.0;
    let mut gw = vec![0.0; n];
    for (j, m) in weights.iter().enumerate() {
        let v = &values[j * n..(j + 1) * n];
        f += m * spec.value(v);
        spec.gradient_into(v, &mut gw);
        for i in 0..n {
            g[j * n + i] = m * gw[i];
        }
    }
    for e in edges {
        for i in 0..n {
            let d = values[e.a * n + i] - values[e.b * n + i];
            f += e.weight * d * d;
            g[e.a * n + i] += 2.0 * e.weight * d;
            g[e.b * n + i] -= 2.0 * e.weight * d;
        }
    }
    f
}

fn check_dims(v: &SectionField, spec: &PotentialSpec) -> Result<()> {
    if v.dim != spec.dimension() {
        return Err(Error::DimensionMismatch {
            expected: spec.dimension(),
            got: v.dim,
        });
    }
    Ok(())
}

/// `e(v) = avg_omega (|grad' v|^2 + W(v))`.
pub fn section_energy(v: &SectionField, spec: &PotentialSpec) -> Result<f64> {
    check_dims(v, spec)?;
    let (g, p) = slice_energy_parts(spec, &v.grid.edges(), &v.grid.weights(), &v.values);
    if !p.is_finite() {
        return Err(Error::OutsideMask(spec.name().to_string()));
    }
    Ok(g + p)
}

/// Tolerance on `avg v_1 = a` for membership in the constrained class.
pub const MEAN_A_TOL: f64 = 1e-8;

/// `e(v)` if `avg v_1 = a`, otherwise `+inf`.
pub fn section_energy_a(v: &SectionField, spec: &PotentialSpec, a: f64) -> Result<f64> {
    if !v.grid.is_torus() || v.grid.dims() + 1 != spec.dimension() {
        return Err(Error::InvalidArgument(
            "constrained slice energy needs a torus section with d = N".into(),
        ));
    }
    check_dims(v, spec)?;
    if (v.mean()[0] - a).abs() > MEAN_A_TOL {
        return Ok(f64::INFINITY);
    }
    section_energy(v, spec)
}

/// Which components carry a fixed mean.
#[derive(Clone, Debug)]
enum MeanConstraint {
    None,
    Components(Vec<usize>),
}

/// Preconditioner `(2K + M)^{-1}` per component, composed with the
/// `M`-orthogonal projection that keeps the constrained means fixed.
struct SectionGeometry {
    basis: TransverseBasis,
    weights: Vec<f64>,
    dim: usize,
    constraint: MeanConstraint,
    buf_in: Vec<f64>,
    buf_out: Vec<f64>,
}

impl SectionGeometry {
    fn new(grid: &SectionGrid, dim: usize, constraint: MeanConstraint) -> Self {
        let s = grid.node_count();
        SectionGeometry {
            basis: grid.transverse_basis(),
            weights: grid.weights(),
            dim,
            constraint,
            buf_in: vec![0.0; s],
            buf_out: vec![0.0; s],
        }
    }

    fn constrained(&self, i: usize) -> bool {
        match &self.constraint {
            MeanConstraint::None => false,
            MeanConstraint::Components(c) => c.contains(&i),
        }
    }
}

impl Geometry for SectionGeometry {
    fn direction(&mut self, _x: &[f64], g: &[f64], dir: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let fixed = self.constrained(i);
            let total: f64 = if fixed { (0..self.weights.len()).map(|j| g[j * n + i]).sum() } else { 0.0 };
            for (j, m) in self.weights.iter().enumerate() {
                self.buf_in[j] = g[j * n + i] - m * total;
            }
            self.basis.solve_shifted(2.0, 1.0, &self.buf_in, &mut self.buf_out);
            let shift: f64 = if fixed { self.weights.iter().zip(&self.buf_out).map(|(m, d)| m * d).sum() } else { 0.0 };
            for j in 0..self.weights.len() {
                dir[j * n + i] = self.buf_out[j] - shift;
            }
        }
    }

    fn stationarity(&self, _g: &[f64], dir: &[f64]) -> f64 {
        max_abs(dir)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AvgPotOptions {
    pub n_restarts: usize,
    pub seed: u64,
    /// Amplitude of the zero-mean random perturbation used by restarts.
    pub amplitude: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AvgPotOptions {
    fn default() -> Self {
        AvgPotOptions {
            n_restarts: 3,
            seed: 0,
            amplitude: 0.5,
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AveragedPotentialResult {
    pub z: Vec<f64>,
    /// Best `e(v)` found among fields with mean `z`: an upper bound on `V(z)`.
    pub value: f64,
    pub minimizer: SectionField,
    /// `W(z)`, the energy of the constant competitor.
    pub constant_candidate_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

/// Zero-mean nodal noise of the given amplitude.
fn zero_mean_noise(rng: &mut impl Rng, weights: &[f64], dim: usize, amplitude: f64, only: Option<&[usize]>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..weights.len() * dim)
        .map(|_| amplitude * rng.random_range(-1.0..1.0))
        .collect();
    let mean = weighted_mean(&v, weights, dim);
    for j in 0..weights.len() {
        for i in 0..dim {
            if only.is_none_or(|c| c.contains(&i)) {
                v[j * dim + i] -= mean[i];
            }
        }
    }
    v
}

pub fn averaged_potential(
    spec: &PotentialSpec,
    z: &[f64],
    grid: &SectionGrid,
    opts: &AvgPotOptions,
) -> Result<AveragedPotentialResult> {
    spec.ensure_finite_valued()?;
    let n = spec.dimension();
    if z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: z.len(),
        });
    }
    let edges = grid.edges();
    let weights = grid.weights();
    let constant = SectionField::constant(*grid, z);
    let w_z = spec.value(z);
    let mut rng = util::rng(opts.seed);
    let all: Vec<usize> = (0..n).collect();
    let mut geometry = SectionGeometry::new(grid, n, MeanConstraint::Components(all));
    let descent = DescentOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        initial_step: 1.0,
        ..Default::default()
    };

    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut iterations = 0;
    for restart in 0..=opts.n_restarts {
        let mut x0 = constant.values.clone();
        if restart > 0 {
            let noise = zero_mean_noise(&mut rng, &weights, n, opts.amplitude, None);
            x0.iter_mut().zip(&noise).for_each(|(a, b)| *a += b);
        }
        let out = optim::minimize(
            x0,
            |x, g| slice_energy_with_gradient(spec, &edges, &weights, x, g),
            &mut geometry,
            &descent,
        );
        iterations += out.iterations;
        if best.as_ref().is_none_or(|(v, _, _)| out.value < *v) {
            best = Some((out.value, out.x, out.converged || out.stalled));
        }
    }
    let (_, mut values, converged) = best.expect("at least one start");
    // Remove rounding drift of the mean.
    let drift: Vec<f64> = weighted_mean(&values, &weights, n)
        .iter()
        .zip(z)
        .map(|(m, t)| m - t)
        .collect();
    for j in 0..weights.len() {
        for i in 0..n {
            values[j * n + i] -= drift[i];
        }
    }
    let minimizer = SectionField::new(*grid, n, values)?;
    let value = section_energy(&minimizer, spec)?.min(w_z);
    let minimizer = if value == w_z { constant } else { minimizer };
    Ok(AveragedPotentialResult {
        z: z.to_vec(),
        value,
        minimizer,
        constant_candidate_value: w_z,
        iterations,
        converged,
        seed: opts.seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VSample {
    pub z: Vec<f64>,
    pub v: f64,
    pub w: f64,
    pub v_le_w: bool,
    pub zero_set_consistent: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VPropsReport {
    pub samples: Vec<VSample>,
    /// `V <= W + 1e-9` at every sample.
    pub v_le_w: bool,
    /// `V <= 1e-6` iff `W <= 1e-6` at every sample and well.
    pub zero_set_equal: bool,
    pub r_check: f64,
    /// Sampled `min V` on the sphere of radius `r_check`, a proxy for
    /// `liminf_{|z| -> inf} V`.
    pub v_infinity_proxy: f64,
    pub v_infinity_positive: bool,
    /// Lower semicontinuity of `V` has no finite-sample check.
    pub lower_semicontinuity: &'static str,
}

pub const ZERO_SET_THRESHOLD: f64 = 1e-6;

pub fn verify_v_props(
    spec: &PotentialSpec,
    wells: &[Vec<f64>],
    sample_points: &[Vec<f64>],
    grid: &SectionGrid,
    r_check: f64,
    sphere_points: usize,
    opts: &AvgPotOptions,
) -> Result<VPropsReport> {
    let mut samples = Vec::new();
    for z in wells.iter().chain(sample_points) {
        let r = averaged_potential(spec, z, grid, opts)?;
        let zero_v = r.value <= ZERO_SET_THRESHOLD;
        let zero_w = r.constant_candidate_value <= ZERO_SET_THRESHOLD;
        samples.push(VSample {
            z: z.clone(),
            v: r.value,
            w: r.constant_candidate_value,
            v_le_w: r.value <= r.constant_candidate_value + 1e-9,
            zero_set_consistent: zero_v == zero_w,
        });
    }
    let n = spec.dimension();
    let mut v_inf = f64::INFINITY;
    for d in util::sphere_directions(n, sphere_points.max(1), opts.seed) {
        let z: Vec<f64> = d.iter().map(|x| r_check * x).collect();
        v_inf = v_inf.min(averaged_potential(spec, &z, grid, opts)?.value);
    }
    Ok(VPropsReport {
        v_le_w: samples.iter().all(|s| s.v_le_w),
        zero_set_equal: samples.iter().all(|s| s.zero_set_consistent),
        samples,
        r_check,
        v_infinity_proxy: v_inf,
        v_infinity_positive: v_inf > ZERO_SET_THRESHOLD,
        lower_semicontinuity: "not checked",
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KEpsFlavor {
    Plain,
    MeanConstrainedA,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KEpsOptions {
    pub penalty_rounds: usize,
    pub mu0: f64,
    pub mu_factor: f64,
    /// Random restarts per well on top of the radial ones.
    pub n_perturb: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KEpsOptions {
    fn default() -> Self {
        KEpsOptions {
            penalty_rounds: 6,
            mu0: 10.0,
            mu_factor: 10.0,
            n_perturb: 2,
            seed: 0,
            tol: 1e-9,
            max_iter: 5_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KEpsResult {
    pub epsilon: f64,
    /// Smallest feasible energy found: an upper bound on `k_eps`.
    pub value: f64,
    pub witness: SectionField,
    /// `d_L2(witness, Sigma)`.
    pub constrained_distance: f64,
    pub flavor: KEpsFlavor,
    pub a: Option<f64>,
    pub seed: u64,
}

pub const FEASIBILITY_SLACK: f64 = 1e-6;

/// `min_w (avg |v - w|^2)^{1/2}` and the index of the nearest well.
fn distance_to_wells(values: &[f64], weights: &[f64], wells: &[Vec<f64>]) -> (f64, usize) {
    wells
        .iter()
        .enumerate()
        .map(|(k, w)| (l2_distance_to_point(values, weights, w), k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("wells nonempty")
}

struct KEpsProblem<'a> {
    spec: &'a PotentialSpec,
    grid: SectionGrid,
    wells: Vec<Vec<f64>>,
    edges: Vec<Edge>,
    weights: Vec<f64>,
    constraint: MeanConstraint,
    opts: &'a KEpsOptions,
}

impl KEpsProblem<'_> {
    fn penalized(&self, eps: f64, mu: f64, x: &[f64], g: &mut [f64]) -> f64 {
        let n = self.spec.dimension();
        let mut f = slice_energy_with_gradient(self.spec, &self.edges, &self.weights, x, g);
        let (d, k) = distance_to_wells(x, &self.weights, &self.wells);
        if d < eps {
            f += mu * (eps - d) * (eps - d);
            if d > 0.0 {
                let w = &self.wells[k];
                let c = -2.0 * mu * (eps - d) / d;
                for (j, m) in self.weights.iter().enumerate() {
                    for i in 0..n {
                        g[j * n + i] += c * m * (x[j * n + i] - w[i]);
                    }
                }
            }
        }
        f
    }

    /// Runs the penalty ladder from `x0`, then scales radially about the
    /// nearest well until the constraint holds. Returns `(energy, values)`
    /// for feasible outcomes.
    fn solve_from(&self, eps: f64, x0: Vec<f64>) -> Option<(f64, Vec<f64>)> {
        let n = self.spec.dimension();
        let mut geometry = SectionGeometry::new(&self.grid, n, self.constraint.clone());
        let descent = DescentOptions {
            tol: self.opts.tol,
            max_iter: self.opts.max_iter,
            initial_step: 1.0,
            ..Default::default()
        };
        let mut x = x0;
        let mut mu = self.opts.mu0;
        for _ in 0..self.opts.penalty_rounds {
            let out = optim::minimize(x, |y, g| self.penalized(eps, mu, y, g), &mut geometry, &descent);
            x = out.x;
            mu *= self.opts.mu_factor;
        }
        let (d, k) = distance_to_wells(&x, &self.weights, &self.wells);
        if d < eps && d > 0.0 {
            let w = &self.wells[k];
            let s = eps / d * (1.0 + 1e-12);
            for j in 0..self.weights.len() {
                for i in 0..n {
                    x[j * n + i] = w[i] + s * (x[j * n + i] - w[i]);
                }
            }
        }
        let (d, _) = distance_to_wells(&x, &self.weights, &self.wells);
        if d < eps - FEASIBILITY_SLACK {
            return None;
        }
        let (gr, p) = slice_energy_parts(self.spec, &self.edges, &self.weights, &x);
        Some((gr + p, x))
    }
}

/// Upper bound on `k_eps = inf { e(v) : d_L2(v, Sigma) >= eps }`, or on
/// `k^a_eps` where additionally `avg v_1 = a` and `Sigma` is the set of
/// wells with first coordinate `a`.
pub fn k_epsilon(
    spec: &PotentialSpec,
    grid: &SectionGrid,
    eps: f64,
    wells: &[Vec<f64>],
    flavor: KEpsFlavor,
    a: Option<f64>,
    opts: &KEpsOptions,
) -> Result<KEpsResult> {
    Ok(k_epsilon_ladder(spec, grid, &[eps], wells, flavor, a, opts)?.remove(0))
}

/// `k_epsilon` for several radii, solved from the largest down; each
/// witness seeds the next smaller radius, so the values are nonincreasing
/// as `eps` shrinks. Results follow the order of `eps_list`.
pub fn k_epsilon_ladder(
    spec: &PotentialSpec,
    grid: &SectionGrid,
    eps_list: &[f64],
    wells: &[Vec<f64>],
    flavor: KEpsFlavor,
    a: Option<f64>,
    opts: &KEpsOptions,
) -> Result<Vec<KEpsResult>> {
    spec.ensure_finite_valued()?;
    let n = spec.dimension();
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("eps values must be positive".into()));
    }
    if wells.is_empty() {
        return Err(Error::InvalidArgument("no wells given".into()));
    }
    let (constraint, sigma) = match flavor {
        KEpsFlavor::Plain => (MeanConstraint::None, wells.to_vec()),
        KEpsFlavor::MeanConstrainedA => {
            let a = a.ok_or_else(|| Error::InvalidArgument("mean-constrained flavor needs a".into()))?;
            if !grid.is_torus() || grid.dims() + 1 != n {
                return Err(Error::InvalidArgument(
                    "mean-constrained flavor needs a torus section with d = N".into(),
                ));
            }
            let sigma: Vec<Vec<f64>> = wells.iter().filter(|w| (w[0] - a).abs() <= 1e-6).cloned().collect();
            if sigma.is_empty() {
                return Err(Error::InvalidArgument(format!("no well with first coordinate {a}")));
            }
            (MeanConstraint::Components(vec![0]), sigma)
        }
    };
    let problem = KEpsProblem {
        spec,
        grid: *grid,
        wells: sigma.clone(),
        edges: grid.edges(),
        weights: grid.weights(),
        constraint,
        opts,
    };

    let mut order: Vec<usize> = (0..eps_list.len()).collect();
    order.sort_by(|&i, &j| eps_list[j].total_cmp(&eps_list[i]));
    let mut rng = util::rng(opts.seed);
    let mut results: Vec<Option<KEpsResult>> = vec![None; eps_list.len()];
    let mut carried: Option<(f64, Vec<f64>)> = None;
    let s = grid.node_count();
    for &idx in &order {
        let eps = eps_list[idx];
        let mut starts: Vec<Vec<f64>> = Vec::new();
        let directions = util::sphere_directions(n, 2 * n.max(2), opts.seed);
        for w in &sigma {
            for d in &directions {
                if flavor == KEpsFlavor::MeanConstrainedA && d[0].abs() > 1e-12 {
                    // Radial constant shifts must keep avg v_1 = a.
                    continue;
                }
                let z: Vec<f64> = w.iter().zip(d).map(|(a, b)| a + 1.05 * eps * b).collect();
                starts.push(SectionField::constant(*grid, &z).values);
            }
            for _ in 0..opts.n_perturb {
                let only = match flavor {
                    KEpsFlavor::Plain => None,
                    KEpsFlavor::MeanConstrainedA => Some(&[0usize][..]),
                };
                let noise = zero_mean_noise(&mut rng, &problem.weights, n, 2.0 * eps, only);
                let mut v: Vec<f64> = (0..s).flat_map(|_| w.iter().copied()).collect();
                v.iter_mut().zip(&noise).for_each(|(a, b)| *a += b);
                starts.push(v);
            }
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for x0 in starts {
            if let Some((f, x)) = problem.solve_from(eps, x0) {
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
        if let Some((f, x)) = &carried {
            if let Some((f2, x2)) = problem.solve_from(eps, x.clone()) {
                if best.as_ref().is_none_or(|(bf, _)| f2 < *bf) {
                    best = Some((f2, x2));
                }
            }
            // The larger-radius witness stays admissible.
            if best.as_ref().is_none_or(|(bf, _)| *f < *bf) {
                best = Some((*f, x.clone()));
            }
        }
        let (value, values) = best.ok_or(Error::Infeasible { eps, best: 0.0 })?;
        let (d, _) = distance_to_wells(&values, &problem.weights, &sigma);
        carried = Some((value, values.clone()));
        results[idx] = Some(KEpsResult {
            epsilon: eps,
            value,
            witness: SectionField::new(*grid, n, values)?,
            constrained_distance: d,
            flavor,
            a,
            seed: opts.seed,
        });
    }
    Ok(results.into_iter().map(|r| r.expect("every eps solved")).collect())
}
