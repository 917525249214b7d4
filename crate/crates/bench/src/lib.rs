//! Benchmark fixtures shared by the criterion targets.

use cylwell_core::{CylinderGrid, EndCondition, SectionGrid};

/// GL cylinder of half-length `l` with an interval section.
pub fn gl_grid(l: f64, axial_nodes: usize, section_points: usize) -> CylinderGrid {
    CylinderGrid::new(
        l,
        axial_nodes,
        SectionGrid::interval(section_points).expect("section"),
        EndCondition::NeumannEnds,
    )
    .expect("grid")
}
