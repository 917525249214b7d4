//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use cylwell_core::cross_section::{
    averaged_potential, k_epsilon_ladder, section_energy, AvgPotOptions, KEpsFlavor, SectionField,
    FEASIBILITY_SLACK,
};
use cylwell_core::curve::{minimize_heteroclinic, Curve, HeteroclinicOptions};
use cylwell_core::cylinder::{
    cylinder_energy, holder_check, jensen_check, make_initial, relax, slice_diagnostics, slice_integral,
    trace_convergence_verdict, InitialKind, RelaxOptions, TraceOptions, VTable,
};
use cylwell_core::geodesic::{
    geod_grid_oracle, geod_upper, nondegeneracy_bound, oracle_box, total_variation_geod,
    verify_energy_geodesic_bound, GeodUpperOptions, GridGraph,
};
use cylwell_core::{CylinderField, CylinderGrid, EndCondition, PotentialSpec, SectionGrid};

const GL_ENERGY: f64 = 1.885_618_083_164_126_7;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn gl() -> PotentialSpec {
    PotentialSpec::ginzburg_landau()
}

fn fourwell() -> PotentialSpec {
    PotentialSpec::four_well(2.0).unwrap()
}

fn fourwell_wells() -> Vec<Vec<f64>> {
    vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0], vec![1.0, 0.0]]
}

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Composite Simpson rule.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn tanh_curve(l: f64, m: usize) -> Curve {
    Curve::from_fn(-l, l, m, 1, |t| vec![(t / 2f64.sqrt()).tanh()]).unwrap()
}

fn c01_heteroclinic_anchor() -> Check {
    // Independent oracles: the geodesic integral of 2 sqrt(W) over [-1, 1]
    // and the first-order ODE satisfied by the closed-form profile.
    let quad = simpson(|u| 2.0 * (0.5f64).sqrt() * (1.0 - u * u), -1.0, 1.0, 2000);
    let mut ode = 0.0_f64;
    for i in 0..=200 {
        let t = -5.0 + 0.05 * i as f64;
        let f = |t: f64| (t / 2f64.sqrt()).tanh();
        let d = (f(t + 1e-5) - f(t - 1e-5)) / 2e-5;
        ode = ode.max((d - (1.0 - f(t).powi(2)) / 2f64.sqrt()).abs());
    }
    if (quad - GL_ENERGY).abs() > 1e-12 || ode > 1e-8 {
        return Err(format!("oracle mismatch: quad {quad}, ode {ode:.2e}"));
    }

    let start = Instant::now();
    let r = minimize_heteroclinic(&gl(), &[-1.0], &[1.0], 10.0, 2000, &Default::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let e_err = (r.breakdown.total - quad).abs();
    // center at the interpolated zero crossing
    let c = &r.curve;
    let mut t0 = 0.0;
    for k in 0..c.segments() {
        let (a, b) = (c.node(k)[0], c.node(k + 1)[0]);
        if a <= 0.0 && b > 0.0 {
            t0 = c.t(k) + (c.t(k + 1) - c.t(k)) * (-a) / (b - a);
        }
    }
    let sup = (0..=c.segments())
        .map(|k| (c.node(k)[0] - ((c.t(k) - t0) / 2f64.sqrt()).tanh()).abs())
        .fold(0.0, f64::max);
    ensure(
        r.converged && e_err <= 1e-3 && sup <= 1e-3 && secs < 5.0,
        format!("|E - 4 sqrt2/3| = {e_err:.2e}, profile sup = {sup:.2e}, {secs:.2}s"),
    )
}

fn c02_geodesic_sandwich() -> Check {
    let start = Instant::now();
    let g = gl();
    let b1 = oracle_box(&[vec![-1.0], vec![1.0]], 0.5).map_err(|e| e.to_string())?;
    let grid = geod_grid_oracle(&g, &[-1.0], &[1.0], &b1, 4000).map_err(|e| e.to_string())?;
    let upper = geod_upper(&g, &[-1.0], &[1.0], &Default::default()).map_err(|e| e.to_string())?;
    let fw = fourwell();
    let b2 = oracle_box(&fourwell_wells(), 0.5).map_err(|e| e.to_string())?;
    let grid4 = geod_grid_oracle(&fw, &[-1.0, 0.0], &[1.0, 0.0], &b2, 400).map_err(|e| e.to_string())?;
    let upper4 = geod_upper(
        &fw,
        &[-1.0, 0.0],
        &[1.0, 0.0],
        &GeodUpperOptions {
            grid_resolution: Some(400),
            grid_box: Some(b2),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (e1, e2) = ((grid.value - GL_ENERGY).abs(), (upper.value - GL_ENERGY).abs());
    let e4 = (upper4.value - grid4.value).abs();
    ensure(
        e1 <= 5e-3 && e2 <= 5e-3 && e4 <= 2e-2 && secs < 30.0,
        format!(
            "GL grid err {e1:.2e}, upper err {e2:.2e}; four-well upper {:.4} grid {:.4} gap {e4:.2e}; {secs:.2}s",
            upper4.value, grid4.value
        ),
    )
}

/// Curve on `[-T, T]` from `a` to `b` with a random monotone reparametrization
/// and random sine bumps vanishing at the ends.
fn random_curve(rng: &mut ChaCha8Rng, a: &[f64], b: &[f64]) -> Curve {
    let n = a.len();
    let t_half = rng.random_range(2.0..10.0);
    let warp = rng.random_range(-0.9..0.9);
    let modes: Vec<(usize, usize, f64)> = (0..3)
        .map(|_| (rng.random_range(0..n), rng.random_range(1..5), rng.random_range(-0.5..0.5)))
        .collect();
    Curve::from_fn(-t_half, t_half, 800, n, |t| {
        let tau = (t + t_half) / (2.0 * t_half);
        let s = tau - warp * (2.0 * std::f64::consts::PI * tau).sin() / (2.0 * std::f64::consts::PI);
        let mut p: Vec<f64> = (0..n).map(|i| a[i] + (b[i] - a[i]) * s).collect();
        for &(i, k, amp) in &modes {
            p[i] += amp * (std::f64::consts::PI * k as f64 * tau).sin();
        }
        if tau <= 0.0 {
            a.to_vec()
        } else if tau >= 1.0 {
            b.to_vec()
        } else {
            p
        }
    })
    .unwrap()
}

fn c03_energy_geodesic() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = [
        (gl(), vec![-1.0], vec![1.0]),
        (fourwell(), vec![-1.0, 0.0], vec![1.0, 0.0]),
    ];
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for (spec, a, b) in &cases {
        let opts = GeodUpperOptions {
            grid_resolution: (spec.dimension() > 1).then_some(400),
            grid_box: (spec.dimension() > 1).then(|| oracle_box(&fourwell_wells(), 0.5).unwrap()),
            ..Default::default()
        };
        let reference = geod_upper(spec, a, b, &opts).map_err(|e| e.to_string())?;
        let mut curves: Vec<Curve> = (0..25).map(|_| random_curve(&mut rng, a, b)).collect();
        for perturbation in [0.0, 0.2] {
            let h = minimize_heteroclinic(
                spec,
                a,
                b,
                10.0,
                2000,
                &HeteroclinicOptions {
                    perturbation,
                    seed: 1,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            curves.push(h.curve);
        }
        for c in &curves {
            worst = worst.min(verify_energy_geodesic_bound(c, spec, &reference).map_err(|e| e.to_string())?);
            count += 1;
        }
    }
    ensure(worst >= -5e-3, format!("{count} curves, worst margin {worst:.3e}"))
}

fn c04_total_variation() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    let runs = [
        (gl(), vec![-1.0], vec![1.0], 0.0, 4000),
        (fourwell(), vec![-1.0, 0.0], vec![1.0, 0.0], 0.0, 400),
        (fourwell(), vec![-1.0, 0.0], vec![1.0, 0.0], 0.2, 400),
    ];
    for (spec, a, b, perturbation, res) in &runs {
        let h = minimize_heteroclinic(
            spec,
            a,
            b,
            10.0,
            2000,
            &HeteroclinicOptions {
                perturbation: *perturbation,
                seed: 1,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let m = h.curve.segments();
        let part: Vec<usize> = (0..=4).map(|i| i * m / 4).collect();
        let mut pts: Vec<Vec<f64>> = h.curve.nodes().map(<[f64]>::to_vec).collect();
        if spec.dimension() > 1 {
            pts.extend(fourwell_wells());
        }
        let bx = oracle_box(&pts, 0.5).map_err(|e| e.to_string())?;
        let tv = total_variation_geod(&h.curve, spec, &part, &bx, *res).map_err(|e| e.to_string())?;
        let e = h.breakdown.total;
        ok &= h.converged && tv <= e + 4.0 * 5e-3;
        lines.push(format!("{}: sum {tv:.4} vs E {e:.4}", spec.name()));
    }
    ensure(ok, lines.join("; "))
}

fn c05_pseudo_distance() -> Check {
    let fw = fourwell();
    let bx = oracle_box(&fourwell_wells(), 0.5).map_err(|e| e.to_string())?;
    let graph = GridGraph::new(&fw, &bx, 100).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let point = |rng: &mut ChaCha8Rng| vec![rng.random_range(-1.9..1.9), rng.random_range(-1.9..1.9)];

    let mut sym = true;
    let mut ident = true;
    let mut worst_tri = f64::NEG_INFINITY;
    for _ in 0..100 {
        let (x, y, z) = (point(&mut rng), point(&mut rng), point(&mut rng));
        let dxy = graph.query(&x, &y).map_err(|e| e.to_string())?.value;
        let dyx = graph.query(&y, &x).map_err(|e| e.to_string())?.value;
        let dyz = graph.query(&y, &z).map_err(|e| e.to_string())?.value;
        let dxz = graph.query(&x, &z).map_err(|e| e.to_string())?.value;
        sym &= dxy.to_bits() == dyx.to_bits();
        ident &= graph.query(&x, &x).map_err(|e| e.to_string())?.value == 0.0;
        worst_tri = worst_tri.max(dxz - dxy - dyz);
    }
    let snap_slack = 1e-12;

    let delta = 0.5;
    let fine = GridGraph::new(&fw, &bx, 200).map_err(|e| e.to_string())?;
    let bound = nondegeneracy_bound(&fw, &fourwell_wells(), delta, &bx, 200).map_err(|e| e.to_string())?;
    let mut worst_nd = f64::INFINITY;
    let mut pairs = 0;
    while pairs < 50 {
        let (x, y) = (point(&mut rng), point(&mut rng));
        if cylwell_core_dist(&x, &y) < delta {
            continue;
        }
        pairs += 1;
        worst_nd = worst_nd.min(fine.query(&x, &y).map_err(|e| e.to_string())?.value);
    }
    ensure(
        sym && ident && worst_tri <= snap_slack && worst_nd >= bound.bound - 1e-6,
        format!(
            "symmetry {sym}, identity {ident}, worst triangle excess {worst_tri:.2e}, min geod {worst_nd:.4} vs bound {:.4}",
            bound.bound
        ),
    )
}

fn cylwell_core_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn gl_random_fields(count: u64, grid: &CylinderGrid, amplitude: f64) -> Vec<CylinderField> {
    let base = InitialKind::HeteroclinicExtension(tanh_curve(grid.half_length, 2000));
    (0..count)
        .map(|seed| {
            make_initial(
                &InitialKind::Perturbed {
                    base: Box::new(base.clone()),
                    seed,
                    amplitude,
                },
                grid,
                1,
            )
            .unwrap()
        })
        .collect()
}

fn c06_averaged_potential() -> Check {
    let start = Instant::now();
    let g = gl();
    let section = SectionGrid::interval(65).unwrap();
    let opts = AvgPotOptions::default();
    let mut excess = f64::NEG_INFINITY;
    for i in 0..21 {
        let z = -2.0 + 0.2 * i as f64;
        let v = averaged_potential(&g, &[z], &section, &opts).map_err(|e| e.to_string())?.value;
        excess = excess.max(v - g.value(&[z]));
    }
    let at_wells = [-1.0, 1.0]
        .iter()
        .map(|&w| averaged_potential(&g, &[w], &section, &opts).map(|r| r.value))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?
        .into_iter()
        .fold(0.0, f64::max);
    let at_zero = averaged_potential(&g, &[0.0], &section, &opts).map_err(|e| e.to_string())?.value;

    let coarse = SectionGrid::interval(17).unwrap();
    let grid = CylinderGrid::new(10.0, 201, coarse, EndCondition::NeumannEnds).unwrap();
    let table = VTable::build(&g, &coarse, &[-2.0], &[2.0], &[401], &opts).map_err(|e| e.to_string())?;
    let mut fields = gl_random_fields(100, &grid, 0.3);
    fields.push(make_initial(&InitialKind::HeteroclinicExtension(tanh_curve(10.0, 2000)), &grid, 1).unwrap());
    let mut worst = f64::INFINITY;
    for u in fields {
        worst = worst.min(jensen_check(&u, &g, &table, (-10.0, 10.0)).map_err(|e| e.to_string())?);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        excess <= 1e-9 && at_wells <= 1e-6 && at_zero > 1e-3 && worst >= -5e-3 && secs < 60.0,
        format!(
            "max V - W {excess:.2e}, V at wells {at_wells:.2e}, V(0) {at_zero:.4}, worst Jensen margin {worst:.3e}, {secs:.2}s"
        ),
    )
}

/// Fields shared by the slice-decomposition and Hoelder criteria.
fn test_fields() -> Vec<(String, PotentialSpec, CylinderField)> {
    let mut out = Vec::new();
    let interval = SectionGrid::interval(17).unwrap();
    let grid = CylinderGrid::new(10.0, 201, interval, EndCondition::NeumannEnds).unwrap();
    out.push((
        "constant".into(),
        gl(),
        make_initial(&InitialKind::ConstantWell(vec![1.0]), &grid, 1).unwrap(),
    ));
    out.push((
        "tanh".into(),
        gl(),
        make_initial(&InitialKind::HeteroclinicExtension(tanh_curve(10.0, 2000)), &grid, 1).unwrap(),
    ));
    let ramp = CylinderField::from_fn(grid.clone(), 1, |x1, _| vec![x1]).unwrap();
    out.push(("ramp".into(), gl(), ramp));
    for (i, u) in gl_random_fields(20, &grid, 0.5).into_iter().enumerate() {
        out.push((format!("random{i}"), gl(), u));
    }
    let torus = CylinderGrid::new(8.0, 201, SectionGrid::torus(16).unwrap(), EndCondition::NeumannEnds).unwrap();
    let het = Curve::from_fn(-8.0, 8.0, 800, 2, |t| vec![0.0, (t / 2f64.sqrt()).tanh()]).unwrap();
    out.push((
        "divergence_free".into(),
        fourwell(),
        make_initial(
            &InitialKind::DivergenceFreeHarmonic {
                base: Box::new(InitialKind::HeteroclinicExtension(het)),
                amplitude: 0.05,
            },
            &torus,
            2,
        )
        .unwrap(),
    ));
    let (relaxed, _) = relax(&out[3].2, &gl(), &RelaxOptions::default()).unwrap();
    out.push(("relaxed".into(), gl(), relaxed));
    out
}

fn c07_slice_decomposition(fields: &[(String, PotentialSpec, CylinderField)]) -> Check {
    let mut worst = 0.0_f64;
    let mut name = String::new();
    for (n, spec, u) in fields {
        let e = cylinder_energy(u, spec).map_err(|e| e.to_string())?;
        let s = slice_integral(u, spec).map_err(|e| e.to_string())?;
        let rel = if e == 0.0 { s.abs() } else { (e - s).abs() / e.abs() };
        if rel >= worst {
            worst = rel;
            name = n.clone();
        }
    }
    ensure(
        worst <= 1e-9,
        format!("{} fields, worst relative gap {worst:.2e} ({name})", fields.len()),
    )
}

fn c08_holder(fields: &[(String, PotentialSpec, CylinderField)]) -> Check {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut detail = String::new();
    for (i, (n, _, u)) in fields.iter().enumerate() {
        let ratio = holder_check(u, 200, i as u64);
        let excess = ratio - (1.0 + 5.0 * u.grid().h1());
        if excess > worst_excess {
            worst_excess = excess;
            detail = format!("{n}: ratio {ratio:.4}");
        }
    }
    ensure(
        worst_excess <= 0.0,
        format!("{} fields, closest to the bound {detail}", fields.len()),
    )
}

fn scalar_run(l: f64, m1: usize) -> Result<(CylinderField, cylwell_core::RunReport), String> {
    let grid = CylinderGrid::new(l, m1, SectionGrid::interval(65).unwrap(), EndCondition::NeumannEnds).unwrap();
    let u0 = make_initial(
        &InitialKind::Perturbed {
            base: Box::new(InitialKind::HeteroclinicExtension(tanh_curve(l, 4000))),
            seed: 1,
            amplitude: 0.2,
        },
        &grid,
        1,
    )
    .map_err(|e| e.to_string())?;
    relax(&u0, &gl(), &RelaxOptions::default()).map_err(|e| e.to_string())
}

fn c09_scalar_run() -> Check {
    let start = Instant::now();
    let wells = vec![vec![-1.0], vec![1.0]];
    let (u, r) = scalar_run(10.0, 801)?;
    let d = slice_diagnostics(&u, &gl(), &wells, None).map_err(|e| e.to_string())?;
    let v = trace_convergence_verdict(&d, &wells, &TraceOptions::default());
    let (u15, r15) = scalar_run(15.0, 1201)?;
    let d15 = slice_diagnostics(&u15, &gl(), &wells, None).map_err(|e| e.to_string())?;
    let v15 = trace_convergence_verdict(&d15, &wells, &TraceOptions::default());
    let shift = (v.outer_dist_minus - v15.outer_dist_minus)
        .abs()
        .max((v.outer_dist_plus - v15.outer_dist_plus).abs());
    let secs = start.elapsed().as_secs_f64();
    ensure(
        r.converged
            && r.residual <= 1e-5
            && v.pass
            && v.u_minus == [-1.0]
            && v.u_plus == [1.0]
            && r15.converged
            && shift <= 2e-3
            && secs < 60.0,
        format!(
            "residual {:.2e} in {} steps, u- {:?} u+ {:?}, outer dist {:.2e}, end shift {shift:.2e}, {secs:.2}s",
            r.residual,
            r.steps,
            v.u_minus,
            v.u_plus,
            v.outer_dist_minus.max(v.outer_dist_plus)
        ),
    )
}

fn c10_constrained_run() -> Check {
    let fw = fourwell();
    let wells = fourwell_wells();
    let a = 0.0;
    // Both ends must lie in the slice z1 = a for the average to stay constant.
    let het = minimize_heteroclinic(&fw, &[0.0, -1.0], &[0.0, 1.0], 12.0, 1200, &Default::default())
        .map_err(|e| e.to_string())?;
    let grid = CylinderGrid::new(12.0, 801, SectionGrid::torus(64).unwrap(), EndCondition::NeumannEnds).unwrap();
    let u0 = make_initial(
        &InitialKind::DivergenceFreeHarmonic {
            base: Box::new(InitialKind::HeteroclinicExtension(het.curve)),
            amplitude: 0.05,
        },
        &grid,
        2,
    )
    .map_err(|e| e.to_string())?;
    let d0 = slice_diagnostics(&u0, &fw, &wells, Some(a)).map_err(|e| e.to_string())?;
    let init_dev = d0.iter().map(|d| (d.average[0] - a).abs()).fold(0.0, f64::max);
    let (u, r) = relax(
        &u0,
        &fw,
        &RelaxOptions {
            fix_first_mean: Some(a),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let d = slice_diagnostics(&u, &fw, &wells, Some(a)).map_err(|e| e.to_string())?;
    let v = trace_convergence_verdict(
        &d,
        &wells,
        &TraceOptions {
            a: Some(a),
            ..Default::default()
        },
    );
    let eps = [0.4, 0.2, 0.1, 0.05];
    let ladder = k_epsilon_ladder(
        &fw,
        &SectionGrid::torus(64).unwrap(),
        &eps,
        &wells,
        KEpsFlavor::MeanConstrainedA,
        Some(a),
        &Default::default(),
    )
    .map_err(|e| e.to_string())?;
    let min_k = ladder.iter().map(|k| k.value).fold(f64::INFINITY, f64::min);
    let active = ladder
        .iter()
        .all(|k| (k.constrained_distance - k.epsilon).abs() <= 1e-3 * k.epsilon + FEASIBILITY_SLACK);
    ensure(
        init_dev <= 1e-10
            && v.max_first_average_dev.unwrap_or(f64::INFINITY) <= 1e-6
            && v.pass
            && r.converged
            && min_k > 1e-6
            && active,
        format!(
            "initial avg dev {init_dev:.1e}, relaxed avg dev {:.1e}, u- {:?} u+ {:?}, residual {:.1e}, min k^a {min_k:.3e}, constraint active {active}",
            v.max_first_average_dev.unwrap_or(f64::NAN),
            v.u_minus,
            v.u_plus,
            r.residual
        ),
    )
}

fn c11_monotonicity() -> Check {
    let g = gl();
    let section = SectionGrid::interval(65).unwrap();
    let eps = [0.5, 0.4, 0.2, 0.1, 0.05, 0.01];
    let ladder = k_epsilon_ladder(&g, &section, &eps, &[vec![-1.0], vec![1.0]], KEpsFlavor::Plain, None, &Default::default())
        .map_err(|e| e.to_string())?;
    let k_ok = ladder.windows(2).all(|w| w[1].value <= w[0].value);

    let fw = fourwell();
    let bx = oracle_box(&fourwell_wells(), 0.5).map_err(|e| e.to_string())?;
    let mut vals4 = Vec::new();
    for res in [50, 100, 200, 400] {
        vals4.push(geod_grid_oracle(&fw, &[-1.0, 0.0], &[1.0, 0.0], &bx, res).map_err(|e| e.to_string())?.value);
    }
    let b1 = oracle_box(&[vec![-1.0], vec![1.0]], 0.5).map_err(|e| e.to_string())?;
    let mut vals1 = Vec::new();
    for res in [500, 1000, 2000, 4000] {
        vals1.push(geod_grid_oracle(&g, &[-1.0], &[1.0], &b1, res).map_err(|e| e.to_string())?.value);
    }
    let geo_ok = vals4.windows(2).all(|w| w[1] <= w[0]) && vals1.windows(2).all(|w| w[1] <= w[0]);

    // cos field: exact e = pi^2 / 8 + 0.38671875 for v = cos(pi x) / 2
    let exact = std::f64::consts::PI.powi(2) / 8.0 + 0.386_718_75;
    let mut errs = Vec::new();
    for p in [17, 33, 65, 129] {
        let v = SectionField::from_fn(SectionGrid::interval(p).unwrap(), 1, |x| {
            vec![0.5 * (std::f64::consts::PI * x[0]).cos()]
        })
        .map_err(|e| e.to_string())?;
        errs.push((section_energy(&v, &g).map_err(|e| e.to_string())? - exact).abs());
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let ratio_ok = ratios.iter().all(|r| (3.5..=4.5).contains(r));
    ensure(
        k_ok && geo_ok && ratio_ok,
        format!(
            "k ladder monotone {k_ok}, grid refinement monotone {geo_ok}, O(h^2) ratios {:?}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn run_verify_all(dir: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_cylwell"))
        .args(["verify-all", "--potential", "gl1d", "--seed", "7", "--jobs", "2", "--out"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "verify-all exited with {:?}: {}",
            status.status.code(),
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    Ok(())
}

fn manifest_files(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let files = v["files"].as_array().ok_or("manifest without files")?;
    Ok(files
        .iter()
        .map(|f| (f["path"].as_str().unwrap_or("").to_string(), f["sha256"].as_str().unwrap_or("").to_string()))
        .collect())
}

fn c12_reproducibility() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_verify_all(&a)?;
    run_verify_all(&b)?;
    let (ma, mb) = (manifest_files(&a)?, manifest_files(&b)?);
    let mut csv = 0;
    for (name, digest) in &ma {
        let bytes_a = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let bytes_b = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        if hex_digest(&bytes_a) != *digest || hex_digest(&bytes_b) != mb[name] {
            return Err(format!("{name}: digest does not match content"));
        }
        if name.ends_with(".csv") {
            csv += 1;
            if bytes_a != bytes_b {
                return Err(format!("{name} differs between runs"));
            }
        }
    }
    ensure(
        ma.keys().eq(mb.keys()) && csv > 0,
        format!("{csv} CSV files byte-identical, {} manifest digests match", ma.len()),
    )
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn main() {
    let fields = test_fields();
    let criteria: Vec<Criterion> = vec![
        ("heteroclinic anchor", Box::new(c01_heteroclinic_anchor)),
        ("geodesic sandwich", Box::new(c02_geodesic_sandwich)),
        ("energy >= geodesic", Box::new(c03_energy_geodesic)),
        ("total-variation bound", Box::new(c04_total_variation)),
        ("pseudo-distance axioms", Box::new(c05_pseudo_distance)),
        ("averaged potential", Box::new(c06_averaged_potential)),
        ("slice decomposition", Box::new(|| c07_slice_decomposition(&fields))),
        ("hoelder estimate", Box::new(|| c08_holder(&fields))),
        ("scalar cylinder run", Box::new(c09_scalar_run)),
        ("constrained-average cylinder run", Box::new(c10_constrained_run)),
        ("monotonicity and refinement", Box::new(c11_monotonicity)),
        ("reproducibility", Box::new(c12_reproducibility)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("criterion {:02} {name}: PASS ({msg}) [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:02} {name}: FAIL ({msg}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
