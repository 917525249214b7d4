use proptest::prelude::*;

use cylwell_core::geodesic::{geod_grid_oracle, oracle_box, GridGraph};
use cylwell_core::{AxisBox, PotentialSpec};

fn graph() -> GridGraph {
    let spec = PotentialSpec::four_well(2.0).unwrap();
    GridGraph::new(&spec, &AxisBox::cube(2, 2.0), 60).unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.9f64..1.9, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn grid_distance_is_a_pseudo_metric(x in point(), y in point(), z in point()) {
        let g = graph();
        let d = |a: &[f64], b: &[f64]| g.query(a, b).unwrap().value;
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
    }
}

#[test]
fn refinement_does_not_increase_node_to_node_values() {
    let spec = PotentialSpec::four_well(2.0).unwrap();
    let wells = vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let b = oracle_box(&wells, 0.5).unwrap();
    let vals: Vec<f64> = [25, 50, 100, 200]
        .iter()
        .map(|&r| geod_grid_oracle(&spec, &[-1.0, 0.0], &[1.0, 0.0], &b, r).unwrap().value)
        .collect();
    assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{vals:?}");
}

#[test]
fn point_outside_box_is_rejected() {
    assert!(graph().query(&[5.0, 0.0], &[0.0, 0.0]).is_err());
}
