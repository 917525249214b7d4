//! Sampled curves `sigma: [t_min, t_max] -> R^N`, the one-dimensional energy
//! `E_W = int |sigma'|^2 + W(sigma)`, the weighted length `int 2 sqrt(W) |sigma'|`
//! and heteroclinic minimization between two wells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, DescentOptions, Geometry};
use crate::potential::PotentialSpec;
use crate::util::{self, dist, norm};

/// A path sampled at `M + 1` uniform nodes `t_k = t_min + k (t_max - t_min) / M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    t_min: f64,
    t_max: f64,
    dim: usize,
    /// Row-major `(M + 1) x N` node values.
    samples: Vec<f64>,
}

impl Curve {
    pub fn new(t_min: f64, t_max: f64, dim: usize, samples: Vec<f64>) -> Result<Self> {
        if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidCurve(format!("bad interval [{t_min}, {t_max}]")));
        }
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(Error::InvalidCurve(format!(
                "{} samples do not fill rows of width {dim}",
                samples.len()
            )));
        }
        let nodes = samples.len() / dim;
        if nodes < 3 {
            return Err(Error::InvalidCurve(format!("need M >= 2, got {} nodes", nodes)));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCurve("non-finite sample".into()));
        }
        Ok(Curve {
            t_min,
            t_max,
            dim,
            samples,
        })
    }

    /// Samples `f` at the uniform nodes.
    pub fn from_fn(
        t_min: f64,
        t_max: f64,
        segments: usize,
        dim: usize,
        mut f: impl FnMut(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity((segments + 1) * dim);
        for t in util::linspace(t_min, t_max, segments + 1) {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            samples.extend(v);
        }
        Self::new(t_min, t_max, dim, samples)
    }

    /// Straight segment from `a` to `b` at constant speed.
    pub fn segment(a: &[f64], b: &[f64], t_min: f64, t_max: f64, segments: usize) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        Self::from_fn(t_min, t_max, segments, a.len(), |t| {
            let s = (t - t_min) / (t_max - t_min);
            a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
        })
    }

    pub fn constant(p: &[f64], t_min: f64, t_max: f64, segments: usize) -> Result<Self> {
        Self::from_fn(t_min, t_max, segments, p.len(), |_| p.to_vec())
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of segments `M`.
    pub fn segments(&self) -> usize {
        self.samples.len() / self.dim - 1
    }

    pub fn spacing(&self) -> f64 {
        (self.t_max - self.t_min) / self.segments() as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.segments() {
            self.t_max
        } else {
            self.t_min + k as f64 * self.spacing()
        }
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.samples[k * self.dim..(k + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.node(0)
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.segments())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    /// Total length of the polyline through the nodes.
    pub fn chord_length(&self) -> f64 {
        self.nodes()
            .zip(self.nodes().skip(1))
            .map(|(a, b)| dist(a, b))
            .sum()
    }

    /// The sub-curve on nodes `k0..=k1` (at least two segments).
    pub fn slice(&self, k0: usize, k1: usize) -> Result<Self> {
        if !(k0 + 2 <= k1 && k1 <= self.segments()) {
            return Err(Error::InvalidArgument(format!("bad node range {k0}..={k1}")));
        }
        Self::new(
            self.t(k0),
            self.t(k1),
            self.dim,
            self.samples[k0 * self.dim..(k1 + 1) * self.dim].to_vec(),
        )
    }

    /// Linear interpolation of the polyline at parameter `t`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let m = self.segments();
        let s = ((t - self.t_min) / self.spacing()).clamp(0.0, m as f64);
        let k = (s.floor() as usize).min(m - 1);
        let f = s - k as f64;
        let (a, b) = (self.node(k), self.node(k + 1));
        a.iter().zip(b).map(|(x, y)| x + f * (y - x)).collect()
    }
}

/// Discrete energy and length of a curve.
///
/// The kinetic term sums squared segment differences, the potential term is
/// the trapezoid rule on nodal values, and each segment's weighted length
/// uses the same two nodal values (`2 sqrt((W_k + W_{k+1}) / 2) |dsigma_k|`),
/// so `total >= geodesic_length` holds segment by segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveEnergyBreakdown {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub geodesic_length: f64,
    pub equipartition_defect: f64,
}

fn nodal_potential(curve: &Curve, spec: &PotentialSpec) -> Result<Vec<f64>> {
    if curve.dim != spec.dimension() {
        return Err(Error::DimensionMismatch {
            expected: spec.dimension(),
            got: curve.dim,
        });
    }
    let w: Vec<f64> = curve.nodes().map(|p| spec.value(p)).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutsideMask(spec.name().to_string()));
    }
    Ok(w)
}

pub fn curve_energy(curve: &Curve, spec: &PotentialSpec) -> Result<CurveEnergyBreakdown> {
    let w = nodal_potential(curve, spec)?;
    let h = curve.spacing();
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    let mut geodesic = 0.0;
    for k in 0..curve.segments() {
        let d2: f64 = curve
            .node(k)
            .iter()
            .zip(curve.node(k + 1))
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        let wbar = 0.5 * (w[k] + w[k + 1]);
        kinetic += d2 / h;
        potential += h * wbar;
        geodesic += 2.0 * wbar.sqrt() * d2.sqrt();
    }
    let total = kinetic + potential;
    Ok(CurveEnergyBreakdown {
        kinetic,
        potential,
        total,
        geodesic_length: geodesic,
        equipartition_defect: (kinetic - potential).abs(),
    })
}

/// Weighted length `sum_k 2 sqrt(Wbar_k) |dsigma_k|` alone.
pub fn geodesic_length(curve: &Curve, spec: &PotentialSpec) -> Result<f64> {
    Ok(curve_energy(curve, spec)?.geodesic_length)
}

/// `|kinetic - potential|`; zero for exact one-dimensional minimizers.
pub fn equipartition_defect(curve: &Curve, spec: &PotentialSpec) -> Result<f64> {
    Ok(curve_energy(curve, spec)?.equipartition_defect)
}

/// Max-norm over interior nodes of `2 (sigma_{k-1} - 2 sigma_k + sigma_{k+1}) / h^2 - grad W(sigma_k)`.
///
/// The discrete energy gradient at node `k` equals `-h` times this residual,
/// so a gradient tolerance `tol` bounds the residual by `tol / h`.
pub fn euler_lagrange_residual(curve: &Curve, spec: &PotentialSpec) -> Result<f64> {
    nodal_potential(curve, spec)?;
    let h = curve.spacing();
    let n = curve.dim;
    let mut g = vec![0.0; n];
    let mut worst = 0.0_f64;
    for k in 1..curve.segments() {
        spec.gradient_into(curve.node(k), &mut g);
        let (a, b, c) = (curve.node(k - 1), curve.node(k), curve.node(k + 1));
        for i in 0..n {
            let r = 2.0 * (a[i] - 2.0 * b[i] + c[i]) / (h * h) - g[i];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Cumulative chord lengths along the polyline.
fn cumulative(curve: &Curve) -> Vec<f64> {
    let mut s = Vec::with_capacity(curve.segments() + 1);
    s.push(0.0);
    let mut acc = 0.0;
    for k in 0..curve.segments() {
        acc += dist(curve.node(k), curve.node(k + 1));
        s.push(acc);
    }
    s
}

/// Walks the polyline from its start placing `steps` points, each at
/// Euclidean distance `c` from the previous one. Returns the placed points
/// (possibly fewer, if the polyline ran out) and the final position.
struct ChordWalk {
    points: Vec<Vec<f64>>,
    complete: bool,
}

fn chord_walk(curve: &Curve, c: f64, steps: usize) -> ChordWalk {
    let m = curve.segments();
    let n = curve.dim;
    let mut points = Vec::with_capacity(steps);
    let mut p = curve.first().to_vec();
    let mut seg = 0usize;
    let mut tau0 = 0.0;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    'outer: while points.len() < steps {
        while seg < m {
            let (a, b) = (curve.node(seg), curve.node(seg + 1));
            // |a + tau (b - a) - p|^2 = c^2 for the largest root tau in [tau0, 1]
            for i in 0..n {
                d[i] = b[i] - a[i];
                e[i] = a[i] - p[i];
            }
            let qa = util::dot(&d, &d);
            let qb = 2.0 * util::dot(&d, &e);
            let qc = util::dot(&e, &e) - c * c;
            if qa > 0.0 {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let tau = (-qb + disc.sqrt()) / (2.0 * qa);
                    if tau >= tau0 && tau <= 1.0 {
                        for i in 0..n {
                            p[i] = a[i] + tau * d[i];
                        }
                        points.push(p.clone());
                        tau0 = tau;
                        continue 'outer;
                    }
                }
            }
            seg += 1;
            tau0 = 0.0;
        }
        return ChordWalk {
            points,
            complete: false,
        };
    }
    ChordWalk {
        points,
        complete: true,
    }
}

/// Resamples the polyline with `m_out` segments of equal chord length.
///
/// All output nodes lie on the input polyline, endpoints are kept exactly,
/// and the returned curve is parametrized on `[0, L]` with `L` the input
/// chord length.
pub fn arclength_reparametrize(curve: &Curve, m_out: usize) -> Result<Curve> {
    if m_out < 2 {
        return Err(Error::InvalidArgument(format!("m_out = {m_out} < 2")));
    }
    let total = curve.chord_length();
    if !(total > 1e-300) {
        return Err(Error::ZeroLengthCurve);
    }
    let end = curve.last().to_vec();

    // Chord-length targets along the polyline give the starting guess; the
    // chord walk then equalizes the node spacing exactly.
    let s = cumulative(curve);
    let mut guess = Vec::with_capacity((m_out + 1) * curve.dim);
    let mut seg = 0;
    for j in 0..=m_out {
        let target = total * j as f64 / m_out as f64;
        if j == m_out {
            guess.extend_from_slice(&end);
            break;
        }
        while seg + 1 < curve.segments() && s[seg + 1] < target {
            seg += 1;
        }
        let len = s[seg + 1] - s[seg];
        let f = if len > 0.0 { ((target - s[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (curve.node(seg), curve.node(seg + 1));
        guess.extend(a.iter().zip(b).map(|(x, y)| x + f * (y - x)));
    }

    // f(c) = |last placed - end| - c changes sign on (0, total / m_out].
    let residual = |c: f64| -> (f64, Option<Vec<Vec<f64>>>) {
        let walk = chord_walk(curve, c, m_out - 1);
        if !walk.complete {
            return (-1.0 - (m_out - 1 - walk.points.len()) as f64, None);
        }
        let last = walk.points.last().map_or(curve.first(), |p| p.as_slice());
        (dist(last, &end) - c, Some(walk.points))
    };
    let mut hi = total / m_out as f64;
    let mut lo = 0.0;
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let keep = |f: f64, pts: Option<Vec<Vec<f64>>>, best: &mut Option<(f64, Vec<Vec<f64>>)>| {
        if let Some(p) = pts {
            if best.as_ref().is_none_or(|(bf, _)| f.abs() < bf.abs()) {
                *best = Some((f, p));
            }
        }
    };
    let (fhi, pts) = residual(hi);
    keep(fhi, pts, &mut best);
    for _ in 0..400 {
        if best.as_ref().is_some_and(|(f, _)| f.abs() <= 1e-13 * hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (fm, pts) = residual(mid);
        keep(fm, pts, &mut best);
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = best.map(|(_, p)| p);

    let samples = match best {
        Some(points) => {
            let mut out = Vec::with_capacity((m_out + 1) * curve.dim);
            out.extend_from_slice(curve.first());
            for p in points {
                out.extend(p);
            }
            out.extend_from_slice(&end);
            out
        }
        None => guess,
    };
    Curve::new(0.0, total, curve.dim, samples)
}

/// Inverse of `2/h (-D2) + h I` per component, `D2` the Dirichlet second
/// difference on interior nodes: the kinetic Hessian plus a unit mass shift.
struct KineticPreconditioner {
    nodes: usize,
    dim: usize,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
}

impl KineticPreconditioner {
    fn new(nodes: usize, dim: usize, h: f64) -> Self {
        KineticPreconditioner {
            nodes,
            dim,
            sub: vec![-2.0 / h; nodes],
            diag: vec![4.0 / h + h; nodes],
            sup: vec![-2.0 / h; nodes],
            rhs: vec![0.0; nodes],
            work: Vec::with_capacity(nodes),
        }
    }
}

impl Geometry for KineticPreconditioner {
    fn direction(&mut self, _x: &[f64], g: &[f64], dir: &mut [f64]) {
        for i in 0..self.dim {
            for k in 0..self.nodes {
                self.rhs[k] = g[k * self.dim + i];
            }
            optim::solve_tridiagonal(&self.sub, &self.diag, &self.sup, &mut self.rhs, &mut self.work);
            for k in 0..self.nodes {
                dir[k * self.dim + i] = self.rhs[k];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeteroclinicOptions {
    /// Stop once the max nodal gradient of the discrete energy is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Amplitude of the sinusoidal transverse perturbation of the initial segment.
    pub perturbation: f64,
    pub seed: u64,
    /// Descent method label, echoed in reports.
    pub method: String,
}

impl Default for HeteroclinicOptions {
    fn default() -> Self {
        HeteroclinicOptions {
            tol: 1e-8,
            max_iter: 200_000,
            perturbation: 0.0,
            seed: 0,
            method: "preconditioned barzilai-borwein, monotone backtracking".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeteroclinicResult {
    pub curve: Curve,
    pub breakdown: CurveEnergyBreakdown,
    pub converged: bool,
    pub iterations: usize,
    pub grad_max: f64,
    /// Energy of every accepted iterate.
    pub energy_history: Vec<f64>,
}

/// Tolerance on `W` at the endpoints of a heteroclinic.
const ENDPOINT_WELL_TOL: f64 = 1e-8;

/// Minimizes the discrete energy over curves on `[-T, T]` clamped to
/// `well_a` and `well_b`, starting from the straight segment.
///
/// Returns the best iterate even when `max_iter` is hit; `converged` then
/// reads false.
pub fn minimize_heteroclinic(
    spec: &PotentialSpec,
    well_a: &[f64],
    well_b: &[f64],
    t_half: f64,
    segments: usize,
    opts: &HeteroclinicOptions,
) -> Result<HeteroclinicResult> {
    spec.ensure_finite_valued()?;
    let n = spec.dimension();
    for w in [well_a, well_b] {
        let v = spec.eval(w)?;
        if v > ENDPOINT_WELL_TOL {
            return Err(Error::NotAWell {
                point: w.to_vec(),
                value: v,
            });
        }
    }
    if t_half < 5.0 {
        return Err(Error::InvalidArgument(format!("T = {t_half} < 5")));
    }
    if segments < 100 {
        return Err(Error::InvalidArgument(format!("M = {segments} < 100")));
    }
    if dist(well_a, well_b) == 0.0 {
        let curve = Curve::constant(well_a, -t_half, t_half, segments)?;
        let breakdown = curve_energy(&curve, spec)?;
        return Ok(HeteroclinicResult {
            curve,
            breakdown,
            converged: true,
            iterations: 0,
            grad_max: 0.0,
            energy_history: vec![breakdown.total],
        });
    }

    let mut init = Curve::segment(well_a, well_b, -t_half, t_half, segments)?;
    if opts.perturbation != 0.0 && n > 1 {
        let mut rng = util::rng(opts.seed);
        let axis: Vec<f64> = well_a.iter().zip(well_b).map(|(a, b)| b - a).collect();
        let axis_len = norm(&axis);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let along = util::dot(&v, &axis) / (axis_len * axis_len);
        v.iter_mut().zip(&axis).for_each(|(x, a)| *x -= along * a);
        let vn = norm(&v);
        if vn > 1e-12 {
            for k in 1..segments {
                let s = opts.perturbation * (std::f64::consts::PI * k as f64 / segments as f64).sin();
                for i in 0..n {
                    init.samples[k * n + i] += s * v[i] / vn;
                }
            }
        }
    }

    let h = init.spacing();
    let interior = (segments - 1) * n;
    let x0 = init.samples[n..n + interior].to_vec();
    let (a, b) = (well_a.to_vec(), well_b.to_vec());
    let end_potential = 0.5 * h * (spec.value(&a) + spec.value(&b));
    let mut gw = vec![0.0; n];
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        let node = |k: usize| -> &[f64] {
            if k == 0 {
                &a
            } else if k == segments {
                &b
            } else {
                &x[(k - 1) * n..k * n]
            }
        };
        let mut f = end_potential;
        for k in 0..segments {
            let (p, q) = (node(k), node(k + 1));
            for i in 0..n {
                let d = q[i] - p[i];
                f += d * d / h;
            }
        }
        for k in 1..segments {
            let p = node(k);
            f += h * spec.value(p);
            spec.gradient_into(p, &mut gw);
            let (l, r) = (node(k - 1), node(k + 1));
            for i in 0..n {
                g[(k - 1) * n + i] = 2.0 * (2.0 * p[i] - l[i] - r[i]) / h + h * gw[i];
            }
        }
        f
    };
    let descent = DescentOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        initial_step: 1.0,
        record_history: true,
        ..Default::default()
    };
    let mut geometry = KineticPreconditioner::new(segments - 1, n, h);
    let out = optim::minimize(x0, objective, &mut geometry, &descent);

    let mut samples = Vec::with_capacity((segments + 1) * n);
    samples.extend_from_slice(well_a);
    samples.extend_from_slice(&out.x);
    samples.extend_from_slice(well_b);
    let curve = Curve::new(-t_half, t_half, n, samples)?;
    let breakdown = curve_energy(&curve, spec)?;
    Ok(HeteroclinicResult {
        curve,
        breakdown,
        converged: out.converged,
        iterations: out.iterations,
        grad_max: out.grad_max,
        energy_history: out.history,
    })
}
