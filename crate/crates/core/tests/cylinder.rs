use proptest::prelude::*;

use cylwell_core::cross_section::AvgPotOptions;
use cylwell_core::cylinder::{
    cylinder_energy, holder_check, jensen_check, make_initial, max_transverse_variance, relax, slice_diagnostics,
    slice_integral, trace_convergence_verdict, InitialKind, RelaxOptions, TraceOptions, VTable,
};
use cylwell_core::{Curve, CylinderField, CylinderGrid, EndCondition, PotentialSpec, SectionGrid};

const GL_ENERGY: f64 = 1.885_618_083_164_126_7;

fn tanh_field(l: f64, m1: usize, section: SectionGrid) -> CylinderField {
    let grid = CylinderGrid::new(l, m1, section, EndCondition::NeumannEnds).unwrap();
    CylinderField::from_fn(grid, 1, |x1, _| vec![(x1 / 2f64.sqrt()).tanh()]).unwrap()
}

fn gl_wells() -> Vec<Vec<f64>> {
    vec![vec![-1.0], vec![1.0]]
}

#[test]
fn constant_well_field_has_zero_energy_and_is_fixed() {
    let gl = PotentialSpec::ginzburg_landau();
    let grid = CylinderGrid::new(5.0, 101, SectionGrid::interval(9).unwrap(), EndCondition::NeumannEnds).unwrap();
    let u = make_initial(&InitialKind::ConstantWell(vec![1.0]), &grid, 1).unwrap();
    assert_eq!(cylinder_energy(&u, &gl).unwrap(), 0.0);
    let (v, report) = relax(&u, &gl, &RelaxOptions::default()).unwrap();
    assert_eq!(v.values(), u.values());
    assert_eq!(report.final_energy, 0.0);

    let d = slice_diagnostics(&u, &gl, &gl_wells(), None).unwrap();
    assert!(d.iter().all(|s| s.dist_to_well[1] == 0.0 && s.average == [1.0] && s.slice_e == 0.0));
    let v = trace_convergence_verdict(&d, &gl_wells(), &TraceOptions::default());
    assert!(v.pass);
    assert_eq!(v.u_minus, v.u_plus);
    assert_eq!(holder_check(&u, 50, 0), 0.0);
}

#[test]
fn tanh_extension_energy_matches_profile() {
    let gl = PotentialSpec::ginzburg_landau();
    for section in [SectionGrid::interval(9).unwrap(), SectionGrid::torus(8).unwrap()] {
        let u = tanh_field(10.0, 2001, section);
        assert!((cylinder_energy(&u, &gl).unwrap() - GL_ENERGY).abs() <= 2e-3);
    }
}

#[test]
fn transverse_cosine_matches_refined_grid() {
    let gl = PotentialSpec::ginzburg_landau();
    let alpha = 0.1;
    let energy = |p: usize| {
        let grid = CylinderGrid::new(2.0, 41, SectionGrid::interval(p).unwrap(), EndCondition::NeumannEnds).unwrap();
        let u = CylinderField::from_fn(grid, 1, |_, xp| vec![1.0 + alpha * (std::f64::consts::PI * xp[0]).cos()]).unwrap();
        cylinder_energy(&u, &gl).unwrap()
    };
    let (coarse, fine) = (energy(65), energy(513));
    assert!(coarse > 0.0);
    assert!((coarse - fine).abs() <= 1e-3 * fine, "{coarse} vs {fine}");
}

#[test]
fn tanh_extension_is_nearly_stationary() {
    let gl = PotentialSpec::ginzburg_landau();
    let u = tanh_field(10.0, 801, SectionGrid::interval(9).unwrap());
    let e0 = cylinder_energy(&u, &gl).unwrap();
    let (_, report) = relax(&u, &gl, &RelaxOptions::default()).unwrap();
    assert!((report.final_energy - e0).abs() <= 1e-4);
    assert!(report.energy_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn perturbed_tanh_relaxes_to_transverse_constant_profile() {
    let gl = PotentialSpec::ginzburg_landau();
    let grid = CylinderGrid::new(10.0, 401, SectionGrid::interval(65).unwrap(), EndCondition::NeumannEnds).unwrap();
    let tanh = Curve::from_fn(-10.0, 10.0, 2000, 1, |t| vec![(t / 2f64.sqrt()).tanh()]).unwrap();
    let kind = InitialKind::Perturbed {
        base: Box::new(InitialKind::HeteroclinicExtension(tanh)),
        seed: 7,
        amplitude: 0.2,
    };
    let u0 = make_initial(&kind, &grid, 1).unwrap();
    assert_eq!(u0.values(), make_initial(&kind, &grid, 1).unwrap().values());
    let (u, report) = relax(&u0, &gl, &RelaxOptions::default()).unwrap();
    assert!(report.converged);
    assert!(max_transverse_variance(&u) <= 1e-4);
    let d = slice_diagnostics(&u, &gl, &gl_wells(), None).unwrap();
    let v = trace_convergence_verdict(&d, &gl_wells(), &TraceOptions::default());
    assert!(v.pass, "{:?}", v.failures);
}

#[test]
fn tanh_slice_diagnostics_center_and_tails() {
    let gl = PotentialSpec::ginzburg_landau();
    let u = tanh_field(10.0, 801, SectionGrid::interval(9).unwrap());
    let d = slice_diagnostics(&u, &gl, &gl_wells(), None).unwrap();
    let mid = &d[400];
    assert_eq!(mid.x1, 0.0);
    assert!(mid.average[0].abs() <= 1e-15);
    assert!((mid.dist_to_well[0] - 1.0).abs() <= 1e-12 && (mid.dist_to_well[1] - 1.0).abs() <= 1e-12);
    assert!(d[0].dist_to_well[0] <= 1e-5 && d[800].dist_to_well[1] <= 1e-5);
    let v = trace_convergence_verdict(&d, &gl_wells(), &TraceOptions::default());
    assert!(v.pass && v.u_minus == [-1.0] && v.u_plus == [1.0]);
}

#[test]
fn ramp_holder_ratio_is_gap_over_length() {
    let grid = CylinderGrid::new(5.0, 101, SectionGrid::interval(9).unwrap(), EndCondition::NeumannEnds).unwrap();
    let u = CylinderField::from_fn(grid, 1, |x1, _| vec![x1]).unwrap();
    let r = holder_check(&u, 100, 3);
    assert!(r > 0.0 && r <= 1.0);
}

#[test]
fn tanh_jensen_margin_is_bracketed() {
    let gl = PotentialSpec::ginzburg_landau();
    let section = SectionGrid::interval(17).unwrap();
    let u = tanh_field(10.0, 401, section);
    let table = VTable::build(&gl, &section, &[-1.1], &[1.1], &[221], &AvgPotOptions::default()).unwrap();
    let margin = jensen_check(&u, &gl, &table, (-10.0, 10.0)).unwrap();
    let grid = u.grid();
    let w = grid.axial_weights();
    let gap: f64 = (0..grid.axial_nodes)
        .map(|k| {
            let z = (grid.x1(k) / 2f64.sqrt()).tanh();
            w[k] * (gl.value(&[z]) - table.eval(&[z]).unwrap())
        })
        .sum();
    assert!(margin >= -5e-3 && margin <= gap + 5e-3, "{margin} vs {gap}");
}

#[test]
fn clamped_four_well_straight_connection_keeps_declared_wells() {
    let fw = PotentialSpec::four_well(2.0).unwrap();
    let (minus, plus) = (vec![-1.0, 0.0], vec![1.0, 0.0]);
    let grid = CylinderGrid::new(
        10.0,
        401,
        SectionGrid::torus(8).unwrap(),
        EndCondition::ClampedToWells {
            minus: minus.clone(),
            plus: plus.clone(),
        },
    )
    .unwrap();
    let het = Curve::from_fn(-10.0, 10.0, 2000, 2, |t| vec![(t / 2f64.sqrt()).tanh(), 0.0]).unwrap();
    let u0 = make_initial(&InitialKind::HeteroclinicExtension(het), &grid, 2).unwrap();
    let (u, report) = relax(&u0, &fw, &RelaxOptions::default()).unwrap();
    assert!(report.converged);
    let wells = vec![minus.clone(), vec![0.0, -1.0], vec![0.0, 1.0], plus.clone()];
    let d = slice_diagnostics(&u, &fw, &wells, None).unwrap();
    let v = trace_convergence_verdict(&d, &wells, &TraceOptions::default());
    assert!(v.pass, "{:?}", v.failures);
    assert_eq!((v.u_minus, v.u_plus), (minus, plus));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn slice_decomposition_and_holder_hold_for_perturbed_fields(seed in 0u64..10_000, amplitude in 0.0f64..1.5) {
        let gl = PotentialSpec::ginzburg_landau();
        let grid = CylinderGrid::new(6.0, 121, SectionGrid::interval(9).unwrap(), EndCondition::NeumannEnds).unwrap();
        let u = make_initial(
            &InitialKind::Perturbed { base: Box::new(InitialKind::ConstantWell(vec![-1.0])), seed, amplitude },
            &grid,
            1,
        )
        .unwrap();
        let (e, s) = (cylinder_energy(&u, &gl).unwrap(), slice_integral(&u, &gl).unwrap());
        prop_assert!((e - s).abs() <= 1e-9 * e.abs().max(1e-300));
        prop_assert!(holder_check(&u, 100, seed) <= 1.0 + 5.0 * grid.h1());
    }
}
