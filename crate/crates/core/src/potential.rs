//! Polynomial multi-well potentials `W: R^N -> R_+`.
//!
//! A potential is a finite sum of monomials plus a constant offset. The
//! optional box mask marks the region where `W` is finite; outside it the
//! value is reported as `+inf`. Solvers refuse masked potentials.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{self, dist, norm, sphere_directions};

/// Tolerance on the negative side accepted by the construction scan.
const NONNEG_SLACK: f64 = 1e-10;

/// One term `coeff * prod_i z_i^{exponents[i]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: f64, exponents: Vec<u32>) -> Self {
        Monomial { coeff, exponents }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(z)
            .fold(self.coeff, |acc, (&e, &x)| acc * x.powi(e as i32))
    }
}

/// Closed axis-aligned box `[lo_1, hi_1] x ... x [lo_N, hi_N]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box lo={lo:?} hi={hi:?}"
            )));
        }
        Ok(AxisBox { lo, hi })
    }

    /// The cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Self {
        AxisBox {
            lo: vec![-r; n],
            hi: vec![r; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn clamp(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (a, b))| x.clamp(*a, *b))
            .collect()
    }

    /// Bounding box of `points`, each side padded by `frac` times the
    /// extent along that axis (at least `min_pad`).
    pub fn bounding(points: &[Vec<f64>], frac: f64, min_pad: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("no points to bound".into()))?;
        let n = first.len();
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.len(),
                });
            }
            for i in 0..n {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..n {
            let pad = ((hi[i] - lo[i]) * frac).max(min_pad);
            lo[i] -= pad;
            hi[i] += pad;
        }
        Ok(AxisBox { lo, hi })
    }

    /// Lattice nodes with `cells` intervals per axis, in row-major order
    /// (last axis fastest).
    pub(crate) fn lattice(&self, cells: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| util::linspace(self.lo[i], self.hi[i], cells + 1))
            .collect();
        let total = (cells + 1).pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            out.push((0..n).map(|i| axes[i][idx[i]]).collect());
            for i in (0..n).rev() {
                idx[i] += 1;
                if idx[i] <= cells {
                    break;
                }
                idx[i] = 0;
            }
        }
        out
    }
}

/// Serialized form; validated into [`PotentialSpec`] on load.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    dimension: usize,
    #[serde(default)]
    offset: f64,
    terms: Vec<Monomial>,
    #[serde(default)]
    box_mask: Option<AxisBox>,
}

impl TryFrom<RawSpec> for PotentialSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        PotentialSpec::new(raw.name, raw.dimension, raw.terms, raw.offset, raw.box_mask)
    }
}

/// An analytic multi-well potential. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct PotentialSpec {
    name: String,
    dimension: usize,
    offset: f64,
    terms: Vec<Monomial>,
    #[serde(skip_serializing_if = "Option::is_none")]
    box_mask: Option<AxisBox>,
}

impl PotentialSpec {
    /// Builds and validates a spec. The potential is sampled on the
    /// default check box (`[-3, 3]^N`, clipped to the mask) and rejected if
    /// any sample is negative.
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        terms: Vec<Monomial>,
        offset: f64,
        box_mask: Option<AxisBox>,
    ) -> Result<Self> {
        let spec = Self::new_unchecked(name, dimension, terms, offset, box_mask)?;
        spec.validate_nonnegative(&spec.default_check_box())?;
        Ok(spec)
    }

    /// Structural checks only; skips the non-negativity scan.
    pub fn new_unchecked(
        name: impl Into<String>,
        dimension: usize,
        terms: Vec<Monomial>,
        offset: f64,
        box_mask: Option<AxisBox>,
    ) -> Result<Self> {
        let name = name.into();
        if dimension == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        for t in &terms {
            if t.exponents.len() != dimension {
                return Err(Error::InvalidSpec(format!(
                    "term {t:?} has {} exponents, dimension is {dimension}",
                    t.exponents.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidSpec(format!("non-finite coefficient in {t:?}")));
            }
        }
        if !offset.is_finite() {
            return Err(Error::InvalidSpec("non-finite offset".into()));
        }
        if let Some(b) = &box_mask {
            if b.dim() != dimension {
                return Err(Error::InvalidSpec(format!(
                    "box mask has dimension {}, spec has {dimension}",
                    b.dim()
                )));
            }
            AxisBox::new(b.lo.clone(), b.hi.clone())?;
        }
        Ok(PotentialSpec {
            name,
            dimension,
            offset,
            terms,
            box_mask,
        })
    }

    /// `W(u) = (1 - u^2)^2 / 2`, wells at `u = -1, 1`.
    pub fn ginzburg_landau() -> Self {
        Self::new_unchecked(
            "gl1d",
            1,
            vec![Monomial::new(-1.0, vec![2]), Monomial::new(0.5, vec![4])],
            0.5,
            None,
        )
        .expect("static spec")
    }

    /// `W = (u1^2-1)^2/2 + (u2^2-1)^2/2 + lambda u1^2 u2^2 - 1/2`. Non-negative
    /// with exactly the four wells `(0, +-1), (+-1, 0)` when `lambda >= 1`.
    pub fn four_well(lambda: f64) -> Result<Self> {
        Self::new(
            format!("fourwell:{lambda}"),
            2,
            vec![
                Monomial::new(0.5, vec![4, 0]),
                Monomial::new(-1.0, vec![2, 0]),
                Monomial::new(0.5, vec![0, 4]),
                Monomial::new(-1.0, vec![0, 2]),
                Monomial::new(lambda, vec![2, 2]),
            ],
            0.5,
            None,
        )
    }

    /// `W(z) = |z|^2`.
    pub fn quadratic(n: usize) -> Result<Self> {
        let terms = (0..n)
            .map(|i| {
                let mut e = vec![0; n];
                e[i] = 2;
                Monomial::new(1.0, e)
            })
            .collect();
        Self::new(format!("quadratic:{n}"), n, terms, 0.0, None)
    }

    /// Resolves the built-in names `gl1d`, `fourwell:<lambda>` and
    /// `quadratic:<n>`.
    pub fn from_name(name: &str) -> Result<Self> {
        if name == "gl1d" {
            return Ok(Self::ginzburg_landau());
        }
        if let Some(rest) = name.strip_prefix("fourwell:") {
            let lambda: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad four-well parameter `{rest}`")))?;
            return Self::four_well(lambda);
        }
        if let Some(rest) = name.strip_prefix("quadratic:") {
            let n: usize = rest
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad dimension `{rest}`")))?;
            return Self::quadratic(n);
        }
        Err(Error::InvalidSpec(format!("unknown built-in potential `{name}`")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn box_mask(&self) -> Option<&AxisBox> {
        self.box_mask.as_ref()
    }

    pub fn is_finite_valued(&self) -> bool {
        self.box_mask.is_none()
    }

    /// Errors unless the potential is finite everywhere.
    pub fn ensure_finite_valued(&self) -> Result<()> {
        if self.box_mask.is_some() {
            Err(Error::MaskedPotential(self.name.clone()))
        } else {
            Ok(())
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dimension {
            Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: z.len(),
            })
        } else {
            Ok(())
        }
    }

    /// `W(z)`, or `+inf` outside the box mask.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        Ok(self.value(z))
    }

    /// Unchecked evaluation for hot loops; `z.len()` must equal the dimension.
    #[inline]
    pub fn value(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dimension);
        if let Some(b) = &self.box_mask {
            if !b.contains(z) {
                return f64::INFINITY;
            }
        }
        self.polynomial(z)
    }

    #[inline]
    fn polynomial(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(z)).sum::<f64>() + self.offset
    }

    /// Exact gradient of the monomial sum.
    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        if let Some(b) = &self.box_mask {
            if !b.contains(z) {
                return Err(Error::OutsideMask(self.name.clone()));
            }
        }
        let mut g = vec![0.0; self.dimension];
        self.gradient_into(z, &mut g);
        Ok(g)
    }

    /// Unchecked gradient for hot loops; ignores the mask.
    #[inline]
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for t in &self.terms {
            for (i, &ei) in t.exponents.iter().enumerate() {
                if ei == 0 {
                    continue;
                }
                let mut d = t.coeff * ei as f64 * z[i].powi(ei as i32 - 1);
                for (j, &ej) in t.exponents.iter().enumerate() {
                    if j != i && ej != 0 {
                        d *= z[j].powi(ej as i32);
                    }
                }
                out[i] += d;
            }
        }
    }

    /// Box used by the construction scan and as the default search box.
    pub fn default_check_box(&self) -> AxisBox {
        let cube = AxisBox::cube(self.dimension, 3.0);
        match &self.box_mask {
            Some(m) => AxisBox {
                lo: cube.lo.iter().zip(&m.lo).map(|(a, b)| a.max(*b)).collect(),
                hi: cube.hi.iter().zip(&m.hi).map(|(a, b)| a.min(*b)).collect(),
            },
            None => cube,
        }
    }

    fn validate_nonnegative(&self, check: &AxisBox) -> Result<()> {
        let points: Vec<Vec<f64>> = match self.dimension {
            1 => check.lattice(1024),
            2 => check.lattice(128),
            3 => check.lattice(32),
            n => {
                use rand::Rng;
                let mut rng = util::rng(0x5eed);
                (0..20_000)
                    .map(|_| {
                        (0..n)
                            .map(|i| rng.random_range(check.lo[i]..=check.hi[i]))
                            .collect()
                    })
                    .collect()
            }
        };
        for p in points {
            let v = self.polynomial(&p);
            if v < -NONNEG_SLACK || v.is_nan() {
                return Err(Error::NegativePotential {
                    name: self.name.clone(),
                    point: p,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Merges monomials with identical exponents and drops zero terms.
    fn simplified(mut self) -> Self {
        let mut merged: Vec<Monomial> = Vec::new();
        for t in self.terms.drain(..) {
            match merged.iter_mut().find(|m| m.exponents == t.exponents) {
                Some(m) => m.coeff += t.coeff,
                None => merged.push(t),
            }
        }
        for m in merged.iter_mut() {
            if m.exponents.iter().all(|&e| e == 0) {
                self.offset += m.coeff;
                m.coeff = 0.0;
            }
        }
        merged.retain(|m| m.coeff != 0.0);
        self.terms = merged;
        self
    }

    /// `W(a, z')` as a potential on `R^{N-1}`.
    pub fn restrict_first(&self, a: f64) -> Result<Self> {
        if self.dimension < 2 {
            return Err(Error::InvalidArgument(
                "restricting the first coordinate needs dimension >= 2".into(),
            ));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| Monomial::new(t.coeff * a.powi(t.exponents[0] as i32), t.exponents[1..].to_vec()))
            .collect();
        let box_mask = self.box_mask.as_ref().map(|b| AxisBox {
            lo: b.lo[1..].to_vec(),
            hi: b.hi[1..].to_vec(),
        });
        Ok(Self::new_unchecked(
            format!("{}|z1={a}", self.name),
            self.dimension - 1,
            terms,
            self.offset,
            box_mask,
        )?
        .simplified())
    }
}

/// `W_a(z) = W(z) + 4 pi^2 (z_1 - a)^2`, expanded into monomials.
pub fn shift_potential_a(spec: &PotentialSpec, a: f64) -> PotentialSpec {
    let n = spec.dimension;
    let c = 4.0 * PI * PI;
    let mut e2 = vec![0; n];
    e2[0] = 2;
    let mut e1 = vec![0; n];
    e1[0] = 1;
    let mut terms = spec.terms.clone();
    terms.push(Monomial::new(c, e2));
    terms.push(Monomial::new(-2.0 * c * a, e1));
    PotentialSpec {
        name: format!("{}_a", spec.name),
        dimension: n,
        offset: spec.offset + c * a * a,
        terms,
        box_mask: spec.box_mask.clone(),
    }
    .simplified()
}

/// A zero of `W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Well {
    pub location: Vec<f64>,
    /// `W` at the refined location.
    pub residual: f64,
    /// Largest sampled radius `r <= r_max` such that `W > 0` on every
    /// sampled sphere of radius in `(0, r]` around the well.
    pub basin_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSearchOptions {
    pub well_tolerance: f64,
    pub merge_radius: f64,
    pub max_wells: usize,
    pub max_iter: usize,
    pub step: f64,
    pub min_step: f64,
    pub r_max: f64,
}

impl Default for WellSearchOptions {
    fn default() -> Self {
        WellSearchOptions {
            well_tolerance: 1e-10,
            merge_radius: 1e-4,
            max_wells: 64,
            max_iter: 100_000,
            step: 0.1,
            min_step: 1e-12,
            r_max: 1.0,
        }
    }
}

/// Fixed-step gradient descent; the step is halved whenever it would
/// increase `W`. Stops once a step moves less than `min_step`.
fn descend(spec: &PotentialSpec, start: &[f64], opts: &WellSearchOptions) -> Vec<f64> {
    let n = spec.dimension;
    let mut x = start.to_vec();
    let mut fx = spec.polynomial(&x);
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut step = opts.step;
    for _ in 0..opts.max_iter {
        spec.gradient_into(&x, &mut g);
        let gn = norm(&g);
        if gn == 0.0 {
            break;
        }
        loop {
            for i in 0..n {
                trial[i] = x[i] - step * g[i];
            }
            let ft = spec.polynomial(&trial);
            if ft <= fx {
                fx = ft;
                break;
            }
            step *= 0.5;
            if step * gn < opts.min_step {
                return x;
            }
        }
        let moved = step * gn;
        std::mem::swap(&mut x, &mut trial);
        if moved < opts.min_step {
            break;
        }
    }
    x
}

fn basin_radius(spec: &PotentialSpec, w: &[f64], r_max: f64) -> f64 {
    let dirs = sphere_directions(spec.dimension, 256, 17);
    let mut best = 0.0;
    let mut z = vec![0.0; spec.dimension];
    for k in 1..=64 {
        let r = r_max * k as f64 / 64.0;
        let positive = dirs.iter().all(|d| {
            for i in 0..z.len() {
                z[i] = w[i] + r * d[i];
            }
            spec.value(&z) > 0.0
        });
        if !positive {
            break;
        }
        best = r;
    }
    best
}

/// Locates the wells of `spec` inside `search_box`.
///
/// Discrete local minima of a lattice scan with `grid_resolution` cells per
/// axis seed a descent; refined points with `W <= well_tolerance` are merged
/// within `2 * merge_radius` and returned in lexicographic order.
pub fn find_wells(
    spec: &PotentialSpec,
    search_box: &AxisBox,
    grid_resolution: usize,
    opts: &WellSearchOptions,
) -> Result<Vec<Well>> {
    let n = spec.dimension;
    if search_box.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: search_box.dim(),
        });
    }
    if grid_resolution < 8 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution {grid_resolution} < 8"
        )));
    }
    let nodes_per_axis = grid_resolution + 1;
    let total = (nodes_per_axis as f64).powi(n as i32);
    if total > 2e7 {
        return Err(Error::InvalidArgument(format!(
            "lattice of {total:e} nodes is too large"
        )));
    }
    let nodes = search_box.lattice(grid_resolution);
    let values: Vec<f64> = nodes.iter().map(|p| spec.value(p)).collect();

    let strides: Vec<usize> = (0..n).map(|i| nodes_per_axis.pow((n - 1 - i) as u32)).collect();
    let mut candidates = Vec::new();
    for (k, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let is_min = (0..n).all(|i| {
            let coord = (k / strides[i]) % nodes_per_axis;
            let lower = coord == 0 || values[k - strides[i]] >= v;
            let upper = coord == grid_resolution || values[k + strides[i]] >= v;
            lower && upper
        });
        if is_min {
            candidates.push(k);
        }
    }

    let mut refined: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in candidates {
        let x = descend(spec, &nodes[k], opts);
        let r = spec.value(&x);
        if r <= opts.well_tolerance {
            refined.push((x, r));
        }
    }
    refined.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut merged: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, r) in refined {
        if merged.iter().all(|(m, _)| dist(m, &x) > 2.0 * opts.merge_radius) {
            merged.push((x, r));
        }
    }
    if merged.len() > opts.max_wells {
        return Err(Error::TooManyWells {
            found: merged.len(),
            max: opts.max_wells,
        });
    }
    merged.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let locations: Vec<Vec<f64>> = merged.iter().map(|(x, _)| x.clone()).collect();
    Ok(merged
        .into_iter()
        .map(|(x, r)| {
            let sep = locations
                .iter()
                .filter(|y| dist(y, &x) > 0.0)
                .map(|y| dist(y, &x))
                .fold(f64::INFINITY, f64::min);
            let r_max = opts.r_max.min(0.5 * sep);
            Well {
                basin_radius: basin_radius(spec, &x, r_max),
                location: x,
                residual: r,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ASliceReport {
    pub a: f64,
    pub well_count: usize,
    pub wells: Vec<Vec<f64>>,
    /// Minimum of `W` sampled on `{|z_1 - a| <= delta_a, |z'| = R_check}`.
    pub liminf_sample: f64,
    pub h2a_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1_well_count: usize,
    pub wells: Vec<Well>,
    pub r_check: f64,
    pub h2_infimum_at_radius: f64,
    pub h2_holds: bool,
    pub a_slice_report: Option<ASliceReport>,
    pub check_box: AxisBox,
    pub sample_resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOptions {
    pub grid_resolution: usize,
    pub h2_threshold: f64,
    pub delta_a: f64,
    pub seed: u64,
    pub wells: WellSearchOptions,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            grid_resolution: 64,
            h2_threshold: 1e-6,
            delta_a: 0.1,
            seed: 0,
            wells: WellSearchOptions::default(),
        }
    }
}

fn sphere_count(n: usize) -> usize {
    if n <= 3 {
        4096
    } else {
        100_000
    }
}

/// Samples the well-count and coercivity hypotheses, and their slice
/// versions at `z_1 = a` when `a` is given.
///
/// For masked potentials the sphere samples are projected onto the mask,
/// so the coercivity proxy is evaluated on the mask boundary.
pub fn check_hypotheses(
    spec: &PotentialSpec,
    check_box: &AxisBox,
    r_check: f64,
    a: Option<f64>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    let n = spec.dimension;
    let wells = find_wells(spec, check_box, opts.grid_resolution, &opts.wells)?;
    let circumradius = wells
        .iter()
        .map(|w| norm(&w.location))
        .fold(0.0_f64, f64::max);
    if !(r_check > circumradius) {
        return Err(Error::InvalidArgument(format!(
            "R_check = {r_check} does not enclose the wells (radius {circumradius})"
        )));
    }

    let count = sphere_count(n);
    let dirs = sphere_directions(n, count, opts.seed);
    let project = |z: Vec<f64>| match spec.box_mask() {
        Some(b) => b.clamp(&z),
        None => z,
    };
    let h2_inf = dirs
        .iter()
        .map(|d| {
            let z = project(d.iter().map(|x| r_check * x).collect());
            spec.value(&z)
        })
        .fold(f64::INFINITY, f64::min);

    let a_slice_report = match a {
        None => None,
        Some(a) => {
            let restricted = spec.restrict_first(a)?;
            let sub_box = AxisBox {
                lo: check_box.lo[1..].to_vec(),
                hi: check_box.hi[1..].to_vec(),
            };
            let slice_wells =
                find_wells(&restricted, &sub_box, opts.grid_resolution, &opts.wells)?;
            let sub_dirs = sphere_directions(n - 1, sphere_count(n - 1), opts.seed ^ 0xa);
            let mut liminf = f64::INFINITY;
            for z1 in util::linspace(a - opts.delta_a, a + opts.delta_a, 11) {
                for d in &sub_dirs {
                    let mut z = Vec::with_capacity(n);
                    z.push(z1);
                    z.extend(d.iter().map(|x| r_check * x));
                    liminf = liminf.min(spec.value(&project(z)));
                }
            }
            Some(ASliceReport {
                a,
                well_count: slice_wells.len(),
                wells: slice_wells
                    .into_iter()
                    .map(|w| {
                        let mut z = vec![a];
                        z.extend(w.location);
                        z
                    })
                    .collect(),
                liminf_sample: liminf,
                h2a_holds: liminf > opts.h2_threshold,
            })
        }
    };

    Ok(HypothesisReport {
        h1_well_count: wells.len(),
        wells,
        r_check,
        h2_infimum_at_radius: h2_inf,
        h2_holds: h2_inf > opts.h2_threshold,
        a_slice_report,
        check_box: check_box.clone(),
        sample_resolution: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn four() -> PotentialSpec {
        PotentialSpec::four_well(2.0).unwrap()
    }

    #[test]
    fn gl_values() {
        let gl = PotentialSpec::ginzburg_landau();
        assert_eq!(gl.eval(&[0.0]).unwrap(), 0.5);
        assert_eq!(gl.eval(&[1.0]).unwrap(), 0.0);
        assert_eq!(gl.grad(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(gl.grad(&[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn four_well_zero_at_wells() {
        let w = four();
        for z in [[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]] {
            assert_eq!(w.eval(&z).unwrap(), 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let gl = PotentialSpec::ginzburg_landau();
        assert!(matches!(
            gl.eval(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(gl.grad(&[]).is_err());
    }

    #[test]
    fn negative_spec_rejected() {
        // lambda < 1 makes the four-well potential dip below zero
        assert!(matches!(
            PotentialSpec::four_well(0.5),
            Err(Error::NegativePotential { .. })
        ));
    }

    #[test]
    fn mask_gives_infinity_and_blocks_gradient() {
        let spec = PotentialSpec::new(
            "masked",
            1,
            vec![Monomial::new(1.0, vec![4]), Monomial::new(-2.0, vec![2])],
            1.0,
            Some(AxisBox::cube(1, 1.5)),
        )
        .unwrap();
        assert_eq!(spec.eval(&[2.0]).unwrap(), f64::INFINITY);
        assert!(matches!(spec.grad(&[2.0]), Err(Error::OutsideMask(_))));
        assert!(spec.ensure_finite_valued().is_err());
    }

    #[test]
    fn gl_wells() {
        let gl = PotentialSpec::ginzburg_landau();
        let wells = find_wells(&gl, &AxisBox::cube(1, 2.0), 64, &Default::default()).unwrap();
        assert_eq!(wells.len(), 2);
        assert_abs_diff_eq!(wells[0].location[0], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(wells[1].location[0], 1.0, epsilon = 1e-8);
        assert!(wells.iter().all(|w| w.basin_radius > 0.9));
    }

    #[test]
    fn four_wells_found_sorted() {
        let wells = find_wells(&four(), &AxisBox::cube(2, 2.0), 64, &Default::default()).unwrap();
        let expected = [[-1.0, 0.0], [0.0, -1.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(wells.len(), 4);
        for (w, e) in wells.iter().zip(expected) {
            assert!(dist(&w.location, &e) < 1e-6, "{:?} vs {e:?}", w.location);
        }
    }

    #[test]
    fn quadratic_single_well() {
        let q = PotentialSpec::quadratic(2).unwrap();
        let wells = find_wells(&q, &AxisBox::cube(2, 2.0), 16, &Default::default()).unwrap();
        assert_eq!(wells.len(), 1);
        assert!(norm(&wells[0].location) < 1e-8);
    }

    #[test]
    fn too_many_wells_reported() {
        let gl = PotentialSpec::ginzburg_landau();
        let opts = WellSearchOptions {
            max_wells: 1,
            ..Default::default()
        };
        assert!(matches!(
            find_wells(&gl, &AxisBox::cube(1, 2.0), 64, &opts),
            Err(Error::TooManyWells { found: 2, max: 1 })
        ));
    }

    #[test]
    fn well_search_stable_under_refinement() {
        for spec in [PotentialSpec::ginzburg_landau(), four()] {
            let b = AxisBox::cube(spec.dimension(), 2.0);
            let coarse = find_wells(&spec, &b, 64, &Default::default()).unwrap();
            let fine = find_wells(&spec, &b, 128, &Default::default()).unwrap();
            assert_eq!(coarse.len(), fine.len());
            for (c, f) in coarse.iter().zip(&fine) {
                assert!(dist(&c.location, &f.location) < 1e-8);
                assert!(c.residual <= 1e-10);
                assert!(norm(&spec.grad(&c.location).unwrap()) <= 1e-6);
            }
        }
    }

    #[test]
    fn hypotheses_gl() {
        let gl = PotentialSpec::ginzburg_landau();
        let r = check_hypotheses(&gl, &AxisBox::cube(1, 2.0), 3.0, None, &Default::default())
            .unwrap();
        assert_eq!(r.h1_well_count, 2);
        assert_eq!(r.h2_infimum_at_radius, 32.0);
        assert!(r.h2_holds);
    }

    #[test]
    fn hypotheses_four_well_with_slice() {
        let r = check_hypotheses(
            &four(),
            &AxisBox::cube(2, 2.0),
            3.0,
            Some(0.0),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(r.h1_well_count, 4);
        assert!(r.h2_holds);
        assert_eq!(r.sample_resolution, 4096);
        let s = r.a_slice_report.unwrap();
        assert_eq!(s.well_count, 2);
        assert!(s.h2a_holds);
        assert!(dist(&s.wells[0], &[0.0, -1.0]) < 1e-6);
        assert!(dist(&s.wells[1], &[0.0, 1.0]) < 1e-6);
    }

    #[test]
    fn hypotheses_on_mask_boundary() {
        // (1 - z^2)^2 restricted to [-1.5, 1.5]
        let spec = PotentialSpec::new(
            "masked",
            1,
            vec![Monomial::new(1.0, vec![4]), Monomial::new(-2.0, vec![2])],
            1.0,
            Some(AxisBox::cube(1, 1.5)),
        )
        .unwrap();
        let r = check_hypotheses(&spec, &AxisBox::cube(1, 1.5), 3.0, None, &Default::default())
            .unwrap();
        assert_abs_diff_eq!(r.h2_infimum_at_radius, 1.5625, epsilon = 1e-12);
        assert!(r.h2_holds);
    }

    #[test]
    fn r_check_must_enclose_wells() {
        let gl = PotentialSpec::ginzburg_landau();
        assert!(check_hypotheses(&gl, &AxisBox::cube(1, 2.0), 0.5, None, &Default::default())
            .is_err());
    }

    #[test]
    fn shifted_gl() {
        let gl = PotentialSpec::ginzburg_landau();
        let s = shift_potential_a(&gl, 0.0);
        assert_eq!(s.name(), "gl1d_a");
        assert_abs_diff_eq!(s.eval(&[1.0]).unwrap(), 4.0 * PI * PI, epsilon = 1e-12);
        let f = shift_potential_a(&four(), 0.0);
        assert_abs_diff_eq!(f.eval(&[0.0, 1.0]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn json_roundtrip_and_unknown_keys() {
        let spec = four();
        let back = PotentialSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"name":"x","dimension":1,"terms":[],"bogus":1}"#;
        assert!(PotentialSpec::from_json(bad).is_err());
        let masked = r#"{"name":"m","dimension":1,"offset":1.0,
            "terms":[{"coeff":1.0,"exponents":[4]},{"coeff":-2.0,"exponents":[2]}],
            "box_mask":{"lo":[-1.5],"hi":[1.5]}}"#;
        let m = PotentialSpec::from_json(masked).unwrap();
        assert!(!m.is_finite_valued());
    }

    #[test]
    fn named_specs() {
        assert_eq!(PotentialSpec::from_name("gl1d").unwrap().dimension(), 1);
        assert_eq!(PotentialSpec::from_name("fourwell:2").unwrap().dimension(), 2);
        assert!(PotentialSpec::from_name("nope").is_err());
        assert!(PotentialSpec::from_name("fourwell:x").is_err());
    }
}
