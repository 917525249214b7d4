//! Numerical toolkit for phase-transition energies `int |grad u|^2 + W(u)`
//! on cylinders: multi-well potentials, one-dimensional heteroclinics, the
//! degenerate geodesic distance `geod_W`, cross-section problems and
//! gradient-flow relaxation on truncated cylinders.

pub mod error;
pub mod potential;
mod util;
pub mod curve;
pub mod optim;
pub mod geodesic;
pub mod cross_section;
pub mod cylinder;
pub mod io;

pub use cross_section::{SectionField, SectionGrid, SectionKind};
pub use curve::Curve;
pub use cylinder::{CylinderField, CylinderGrid, EndCondition, RunReport, SliceDiagnostics};
pub use error::{Error, Result};
pub use geodesic::{GeodesicMethod, GeodesicResult};
pub use potential::{AxisBox, PotentialSpec, Well};
