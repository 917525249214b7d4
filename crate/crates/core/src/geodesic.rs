//! The degenerate length `geod_W(x, y) = inf int 2 sqrt(W(sigma)) |sigma'|`.
//!
//! Two independent routes: relaxation of a sampled curve (an upper bound up
//! to quadrature) and a shortest path on a lattice graph with midpoint edge
//! weights. Both are reported; neither is certified.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::curve::{self, arclength_reparametrize, curve_energy, Curve};
use crate::error::{Error, Result};
use crate::optim::{self, DescentOptions, Geometry};
use crate::potential::{AxisBox, PotentialSpec};
use crate::util::{dist, dot, max_abs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeodesicMethod {
    CurveRelaxation,
    GridOracle,
}

#[derive(Clone, Debug, Serialize)]
pub struct GeodesicResult {
    pub value: f64,
    pub method: GeodesicMethod,
    #[serde(rename = "box")]
    pub search_box: Option<AxisBox>,
    pub resolution: usize,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    /// Relaxed curve whose discrete weighted length is `value`.
    #[serde(skip)]
    pub witness: Option<Curve>,
    /// Lattice path realizing `value` (grid oracle only).
    #[serde(skip)]
    pub path: Option<Vec<Vec<f64>>>,
    /// Distance from each endpoint to the lattice node it was snapped to.
    pub snap_distance: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Lattice over an axis-aligned box with all `3^N - 1` neighbor offsets.
///
/// Edge weights `2 sqrt(W((p + q) / 2)) |p - q|` are evaluated on demand.
#[derive(Clone, Debug)]
pub struct GridGraph {
    spec: PotentialSpec,
    search_box: AxisBox,
    cells: usize,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    offsets: Vec<Vec<isize>>,
}

pub const MAX_GRID_CELLS_2D: usize = 2000;
pub const MAX_GRID_CELLS_3D: usize = 200;

impl GridGraph {
    pub fn new(spec: &PotentialSpec, search_box: &AxisBox, cells: usize) -> Result<Self> {
        spec.ensure_finite_valued()?;
        let n = spec.dimension();
        if search_box.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: search_box.dim(),
            });
        }
        let cap = match n {
            1 => usize::MAX / 4,
            2 => MAX_GRID_CELLS_2D,
            3 => MAX_GRID_CELLS_3D,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "grid oracle supports N <= 3, got N = {n}"
                )))
            }
        };
        if cells < 2 || cells > cap {
            return Err(Error::InvalidArgument(format!(
                "grid resolution {cells} outside [2, {cap}] for N = {n}"
            )));
        }
        let spacing = (0..n)
            .map(|i| (search_box.hi[i] - search_box.lo[i]) / cells as f64)
            .collect();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (cells + 1);
        }
        let mut offsets = Vec::new();
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let off: Vec<isize> = (0..n)
                .map(|_| {
                    let d = (c % 3) as isize - 1;
                    c /= 3;
                    d
                })
                .collect();
            if off.iter().any(|&d| d != 0) {
                offsets.push(off);
            }
        }
        Ok(GridGraph {
            spec: spec.clone(),
            search_box: search_box.clone(),
            cells,
            spacing,
            strides,
            offsets,
        })
    }

    pub fn search_box(&self) -> &AxisBox {
        &self.search_box
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn node_count(&self) -> usize {
        (self.cells + 1).pow(self.spacing.len() as u32)
    }

    fn index_of(&self, ijk: &[usize]) -> usize {
        ijk.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    fn multi_index(&self, mut id: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let i = id / s;
                id %= s;
                i
            })
            .collect()
    }

    fn coord(&self, i: usize, k: usize) -> f64 {
        if k == self.cells {
            self.search_box.hi[i]
        } else {
            self.search_box.lo[i] + self.spacing[i] * k as f64
        }
    }

    pub fn position(&self, id: usize) -> Vec<f64> {
        self.multi_index(id)
            .iter()
            .enumerate()
            .map(|(i, &k)| self.coord(i, k))
            .collect()
    }

    /// Nearest lattice node to `z`.
    pub fn snap(&self, z: &[f64]) -> Result<usize> {
        if !self.search_box.contains(z) {
            return Err(Error::OutsideBox(z.to_vec()));
        }
        let ijk: Vec<usize> = z
            .iter()
            .enumerate()
            .map(|(i, x)| {
                (((x - self.search_box.lo[i]) / self.spacing[i]).round() as usize).min(self.cells)
            })
            .collect();
        Ok(self.index_of(&ijk))
    }

    fn edge_weight(&self, p: &[f64], q: &[f64], mid: &mut [f64]) -> f64 {
        for i in 0..p.len() {
            mid[i] = 0.5 * (p[i] + q[i]);
        }
        2.0 * self.spec.value(mid).max(0.0).sqrt() * dist(p, q)
    }

    /// Label-setting shortest paths from `source`; stops early once `target`
    /// is settled. Returns distances and predecessors.
    fn dijkstra(&self, source: usize, target: Option<usize>) -> (Vec<f64>, Vec<usize>) {
        let total = self.node_count();
        let n = self.spacing.len();
        let mut dist_to = vec![f64::INFINITY; total];
        let mut prev = vec![usize::MAX; total];
        let mut done = vec![false; total];
        let mut heap = BinaryHeap::new();
        dist_to[source] = 0.0;
        heap.push(Entry(0.0, source));
        let mut mid = vec![0.0; n];
        let mut nb = vec![0usize; n];
        while let Some(Entry(d, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if Some(u) == target {
                break;
            }
            let ijk = self.multi_index(u);
            let p = self.position(u);
            'offsets: for off in &self.offsets {
                for i in 0..n {
                    let k = ijk[i] as isize + off[i];
                    if k < 0 || k > self.cells as isize {
                        continue 'offsets;
                    }
                    nb[i] = k as usize;
                }
                let v = self.index_of(&nb);
                if done[v] {
                    continue;
                }
                let q: Vec<f64> = (0..n).map(|i| self.coord(i, nb[i])).collect();
                let nd = d + self.edge_weight(&p, &q, &mut mid);
                if nd < dist_to[v] {
                    dist_to[v] = nd;
                    prev[v] = u;
                    heap.push(Entry(nd, v));
                }
            }
        }
        (dist_to, prev)
    }

    /// Shortest-path distances from `source` to every node.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        self.dijkstra(source, None).0
    }

    /// Cost and node sequence of a shortest path between two nodes.
    pub fn shortest_path(&self, a: usize, b: usize) -> (f64, Vec<usize>) {
        if a == b {
            return (0.0, vec![a]);
        }
        // Search from the smaller index so that (a, b) and (b, a) settle
        // nodes in the same order and return bitwise-equal costs.
        let (s, t) = if a < b { (a, b) } else { (b, a) };
        let (d, prev) = self.dijkstra(s, Some(t));
        let mut path = vec![t];
        let mut cur = t;
        while cur != s {
            cur = prev[cur];
            path.push(cur);
        }
        // `path` runs t -> s; orient it a -> b.
        if s == a {
            path.reverse();
        }
        (d[t], path)
    }

    /// Oracle query between arbitrary points of the box.
    pub fn query(&self, x: &[f64], y: &[f64]) -> Result<GeodesicResult> {
        let (a, b) = (self.snap(x)?, self.snap(y)?);
        let (value, ids) = self.shortest_path(a, b);
        let path: Vec<Vec<f64>> = ids.iter().map(|&id| self.position(id)).collect();
        let snap_distance = dist(x, &path[0]).max(dist(y, &path[path.len() - 1]));
        Ok(GeodesicResult {
            value,
            method: GeodesicMethod::GridOracle,
            search_box: Some(self.search_box.clone()),
            resolution: self.cells,
            from: x.to_vec(),
            to: y.to_vec(),
            witness: None,
            path: Some(path),
            snap_distance,
            converged: true,
            iterations: 0,
        })
    }
}

/// Min-heap entry ordered by distance, then node id.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounding box of `points` padded by `pad_frac` of the extent on each side
/// (at least `0.5`).
pub fn oracle_box(points: &[Vec<f64>], pad_frac: f64) -> Result<AxisBox> {
    AxisBox::bounding(points, pad_frac, 0.5)
}

/// Default lattice resolution (cells per axis) by dimension.
pub fn default_resolution(n: usize) -> usize {
    match n {
        1 => 4000,
        2 => 400,
        _ => 64,
    }
}

pub fn geod_grid_oracle(
    spec: &PotentialSpec,
    x: &[f64],
    y: &[f64],
    search_box: &AxisBox,
    resolution: usize,
) -> Result<GeodesicResult> {
    let n = spec.dimension();
    for p in [x, y] {
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.len(),
            });
        }
    }
    GridGraph::new(spec, search_box, resolution)?.query(x, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodUpperOptions {
    /// Segments of the relaxed curve.
    pub segments: usize,
    pub reparam_every: usize,
    pub max_iter: usize,
    /// Stop once the max normal gradient component drops below this.
    pub tol: f64,
    /// Also start from the grid-oracle path at this resolution.
    pub grid_resolution: Option<usize>,
    /// Padding fraction of the grid box around the endpoints.
    pub grid_pad: f64,
    /// Grid box to use instead of the padded endpoint box.
    pub grid_box: Option<AxisBox>,
}

impl Default for GeodUpperOptions {
    fn default() -> Self {
        GeodUpperOptions {
            segments: 800,
            reparam_every: 50,
            max_iter: 20_000,
            tol: 1e-10,
            grid_resolution: None,
            grid_pad: 0.5,
            grid_box: None,
        }
    }
}

/// Frozen tridiagonal preconditioner (edge weights `2 sqrt(Wbar) / |dsigma|`)
/// composed with the projection onto node normals.
struct NormalGeometry {
    nodes: usize,
    dim: usize,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
    ends: (Vec<f64>, Vec<f64>),
}

impl NormalGeometry {
    fn new(spec: &PotentialSpec, curve: &Curve) -> Self {
        let m = curve.segments();
        let w: Vec<f64> = curve.nodes().map(|p| spec.value(p).max(0.0)).collect();
        let mut a: Vec<f64> = (0..m)
            .map(|k| {
                let l = dist(curve.node(k), curve.node(k + 1));
                if l > 0.0 {
                    2.0 * (0.5 * (w[k] + w[k + 1])).sqrt() / l
                } else {
                    0.0
                }
            })
            .collect();
        let mean = a.iter().sum::<f64>() / m as f64;
        let floor = 1e-3 * mean.max(1e-300);
        a.iter_mut().for_each(|v| *v = v.max(floor));
        let nodes = m - 1;
        let shift = 1e-8 * mean.max(1e-300);
        let diag = (0..nodes).map(|j| a[j] + a[j + 1] + shift).collect();
        let sub = (0..nodes).map(|j| -a[j]).collect();
        let sup = (0..nodes).map(|j| -a[j + 1]).collect();
        NormalGeometry {
            nodes,
            dim: curve.dim(),
            sub,
            diag,
            sup,
            rhs: vec![0.0; nodes],
            work: Vec::new(),
            ends: (curve.first().to_vec(), curve.last().to_vec()),
        }
    }

    /// Removes the tangential part of every node vector in place.
    fn project(&self, x: &[f64], v: &mut [f64]) {
        let n = self.dim;
        let mut t = vec![0.0; n];
        for j in 0..self.nodes {
            let prev = if j == 0 { &self.ends.0[..] } else { &x[(j - 1) * n..j * n] };
            let next = if j + 1 == self.nodes {
                &self.ends.1[..]
            } else {
                &x[(j + 1) * n..(j + 2) * n]
            };
            for i in 0..n {
                t[i] = next[i] - prev[i];
            }
            let tt = dot(&t, &t);
            if tt > 0.0 {
                let c = dot(&t, &v[j * n..(j + 1) * n]) / tt;
                for i in 0..n {
                    v[j * n + i] -= c * t[i];
                }
            }
        }
    }
}

impl Geometry for NormalGeometry {
    fn direction(&mut self, x: &[f64], g: &[f64], dir: &mut [f64]) {
        dir.copy_from_slice(g);
        self.project(x, dir);
        for i in 0..self.dim {
            for k in 0..self.nodes {
                self.rhs[k] = dir[k * self.dim + i];
            }
            optim::solve_tridiagonal(&self.sub, &self.diag, &self.sup, &mut self.rhs, &mut self.work);
            for k in 0..self.nodes {
                dir[k * self.dim + i] = self.rhs[k];
            }
        }
        self.project(x, dir);
    }

    fn stationarity(&self, _g: &[f64], dir: &[f64]) -> f64 {
        max_abs(dir)
    }
}

/// Discrete weighted length of the polyline `(x_start, interior, x_end)` and
/// its gradient with respect to the interior nodes.
fn length_and_gradient(spec: &PotentialSpec, start: &[f64], end: &[f64], x: &[f64], g: &mut [f64]) -> f64 {
    let n = start.len();
    let m = x.len() / n + 1;
    let node = |k: usize| -> &[f64] {
        if k == 0 {
            start
        } else if k == m {
            end
        } else {
            &x[(k - 1) * n..k * n]
        }
    };
    let w: Vec<f64> = (0..=m).map(|k| spec.value(node(k)).max(0.0)).collect();
    let mut grads = vec![0.0; (m + 1) * n];
    for k in 1..m {
        spec.gradient_into(node(k), &mut grads[k * n..(k + 1) * n]);
    }
    g.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    let mut d = vec![0.0; n];
    for k in 0..m {
        let (p, q) = (node(k), node(k + 1));
        for i in 0..n {
            d[i] = q[i] - p[i];
        }
        let l = dot(&d, &d).sqrt();
        let s = (0.5 * (w[k] + w[k + 1])).sqrt();
        total += 2.0 * s * l;
        for (j, sign) in [(k, -1.0), (k + 1, 1.0)] {
            if j == 0 || j == m {
                continue;
            }
            let gj = &mut g[(j - 1) * n..j * n];
            for i in 0..n {
                let mut v = 0.0;
                if s > 0.0 {
                    v += l * grads[j * n + i] / (2.0 * s);
                }
                if l > 0.0 {
                    v += sign * 2.0 * s * d[i] / l;
                }
                gj[i] += v;
            }
        }
    }
    total
}

struct Relaxed {
    curve: Curve,
    value: f64,
    converged: bool,
    iterations: usize,
}

fn relax_length(spec: &PotentialSpec, init: &Curve, opts: &GeodUpperOptions) -> Result<Relaxed> {
    let n = spec.dimension();
    let m = opts.segments;
    let start = init.first().to_vec();
    let end = init.last().to_vec();
    let mut curve = arclength_reparametrize(init, m)?;
    let mut value = curve::geodesic_length(&curve, spec)?;
    let mut iterations = 0;
    let mut converged = n == 1;
    while !converged && iterations < opts.max_iter {
        let mut geometry = NormalGeometry::new(spec, &curve);
        let x0 = curve.samples()[n..m * n].to_vec();
        let out = optim::minimize(
            x0,
            |x, g| length_and_gradient(spec, &start, &end, x, g),
            &mut geometry,
            &DescentOptions {
                tol: opts.tol,
                max_iter: opts.reparam_every,
                initial_step: 1.0,
                ..Default::default()
            },
        );
        iterations += out.iterations.max(1);
        let mut samples = Vec::with_capacity((m + 1) * n);
        samples.extend_from_slice(&start);
        samples.extend_from_slice(&out.x);
        samples.extend_from_slice(&end);
        let moved = Curve::new(curve.t_min(), curve.t_max(), n, samples)?;
        curve = arclength_reparametrize(&moved, m)?;
        let new_value = curve::geodesic_length(&curve, spec)?;
        let stalled = out.iterations == 0 || (value - new_value).abs() <= 1e-14 * value.max(1.0);
        converged = out.converged || stalled;
        value = new_value;
    }
    Ok(Relaxed {
        curve,
        value,
        converged,
        iterations,
    })
}

/// Relaxes the weighted length of curves from `x` to `y`.
///
/// Starts from the straight segment and, when `opts.grid_resolution` is set,
/// also from the grid-oracle path; the shorter relaxed curve is returned.
pub fn geod_upper(spec: &PotentialSpec, x: &[f64], y: &[f64], opts: &GeodUpperOptions) -> Result<GeodesicResult> {
    spec.ensure_finite_valued()?;
    let n = spec.dimension();
    for p in [x, y] {
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite endpoint".into()));
        }
    }
    if opts.segments < 2 || opts.reparam_every == 0 {
        return Err(Error::InvalidArgument("need segments >= 2 and reparam_every >= 1".into()));
    }
    if dist(x, y) == 0.0 {
        let witness = Curve::constant(x, 0.0, 1.0, opts.segments)?;
        return Ok(GeodesicResult {
            value: 0.0,
            method: GeodesicMethod::CurveRelaxation,
            search_box: None,
            resolution: opts.segments,
            from: x.to_vec(),
            to: y.to_vec(),
            witness: Some(witness),
            path: None,
            snap_distance: 0.0,
            converged: true,
            iterations: 0,
        });
    }

    let mut starts = vec![Curve::segment(x, y, 0.0, 1.0, opts.segments)?];
    let mut search_box = None;
    if let (Some(res), true) = (opts.grid_resolution, n > 1) {
        let b = match &opts.grid_box {
            Some(b) => b.clone(),
            None => oracle_box(&[x.to_vec(), y.to_vec()], opts.grid_pad)?,
        };
        let grid = geod_grid_oracle(spec, x, y, &b, res)?;
        let mut path = grid.path.unwrap_or_default();
        if path.len() >= 2 {
            path[0] = x.to_vec();
            let last = path.len() - 1;
            path[last] = y.to_vec();
            path.dedup_by(|a, b| dist(a, b) == 0.0);
        }
        if path.len() >= 3 {
            let samples: Vec<f64> = path.into_iter().flatten().collect();
            starts.push(Curve::new(0.0, 1.0, n, samples)?);
        }
        search_box = Some(b);
    }

    let mut best: Option<Relaxed> = None;
    for init in &starts {
        let r = relax_length(spec, init, opts)?;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    Ok(GeodesicResult {
        value: best.value,
        method: GeodesicMethod::CurveRelaxation,
        search_box,
        resolution: opts.segments,
        from: x.to_vec(),
        to: y.to_vec(),
        witness: Some(best.curve),
        path: None,
        snap_distance: 0.0,
        converged: best.converged,
        iterations: best.iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyBound {
    /// Sampled `min W` off the balls `B(p, delta / 2)`.
    pub c_delta: f64,
    /// `delta sqrt(c_delta) / 4`.
    pub bound: f64,
}

/// Lower bound on `geod_W(x, y)` for `|x - y| >= delta`.
pub fn nondegeneracy_bound(
    spec: &PotentialSpec,
    wells: &[Vec<f64>],
    delta: f64,
    search_box: &AxisBox,
    resolution: usize,
) -> Result<NondegeneracyBound> {
    spec.ensure_finite_valued()?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be positive")));
    }
    let mut separation = f64::INFINITY;
    for (i, p) in wells.iter().enumerate() {
        for q in &wells[i + 1..] {
            separation = separation.min(dist(p, q));
        }
    }
    if separation <= delta {
        return Err(Error::DeltaTooLarge { delta, separation });
    }
    let mut c = f64::INFINITY;
    for z in search_box.lattice(resolution) {
        if wells.iter().all(|w| dist(&z, w) >= 0.5 * delta) {
            c = c.min(spec.value(&z));
        }
    }
    if !c.is_finite() {
        return Err(Error::InvalidArgument("no lattice node outside the well balls".into()));
    }
    Ok(NondegeneracyBound {
        c_delta: c,
        bound: delta * c.max(0.0).sqrt() / 4.0,
    })
}

/// Endpoint tolerance between a curve and its reference geodesic.
const ENDPOINT_TOL: f64 = 1e-9;

/// `E_W(curve) - reference.value`.
pub fn verify_energy_geodesic_bound(curve: &Curve, spec: &PotentialSpec, reference: &GeodesicResult) -> Result<f64> {
    if dist(curve.first(), &reference.from) > ENDPOINT_TOL || dist(curve.last(), &reference.to) > ENDPOINT_TOL {
        return Err(Error::InvalidArgument(format!(
            "curve endpoints {:?} -> {:?} differ from reference {:?} -> {:?}",
            curve.first(),
            curve.last(),
            reference.from,
            reference.to
        )));
    }
    Ok(curve_energy(curve, spec)?.total - reference.value)
}

/// Sum of distances between consecutive partition nodes. Each piece takes the
/// grid-oracle value, or in dimension two and up the smaller of that and the
/// curve relaxation started from the grid path.
pub fn total_variation_geod(
    curve: &Curve,
    spec: &PotentialSpec,
    partition: &[usize],
    search_box: &AxisBox,
    resolution: usize,
) -> Result<f64> {
    if partition.is_empty() || partition.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("partition must be strictly increasing and nonempty".into()));
    }
    if *partition.last().unwrap() > curve.segments() {
        return Err(Error::InvalidArgument(format!(
            "partition index {} beyond {} segments",
            partition.last().unwrap(),
            curve.segments()
        )));
    }
    for &k in partition {
        if !search_box.contains(curve.node(k)) {
            return Err(Error::OutsideBox(curve.node(k).to_vec()));
        }
    }
    let graph = GridGraph::new(spec, search_box, resolution)?;
    let relax_opts = GeodUpperOptions {
        grid_resolution: Some(resolution),
        grid_box: Some(search_box.clone()),
        ..Default::default()
    };
    let mut sum = 0.0;
    for w in partition.windows(2) {
        let (x, y) = (curve.node(w[0]), curve.node(w[1]));
        let mut piece = graph.query(x, y)?.value;
        if spec.dimension() > 1 {
            piece = piece.min(geod_upper(spec, x, y, &relax_opts)?.value);
        }
        sum += piece;
    }
    Ok(sum)
}
