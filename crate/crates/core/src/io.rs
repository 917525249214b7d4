//! Plain-text serialization. Every float is written as `{:.16e}` so that
//! reruns are byte-identical and values round-trip.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cross_section::SectionField;
use crate::curve::Curve;
use crate::cylinder::{CylinderField, SliceDiagnostics};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = f64>) {
    let row: Vec<String> = cells.into_iter().map(fmt_f64).collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn value_headers(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("u{i}")).collect()
}

/// `t,u1,..,uN`, one row per node.
pub fn curve_csv(curve: &Curve) -> String {
    let mut out = String::from("t,");
    out.push_str(&value_headers(curve.dim()).join(","));
    out.push('\n');
    for k in 0..=curve.segments() {
        push_row(&mut out, std::iter::once(curve.t(k)).chain(curve.node(k).iter().copied()));
    }
    out
}

/// Section coordinates followed by the value columns.
pub fn section_csv(v: &SectionField) -> String {
    let grid = v.grid();
    let mut head: Vec<String> = (2..=grid.dims() + 1).map(|i| format!("x{i}")).collect();
    head.extend(value_headers(v.dim()));
    let mut out = head.join(",");
    out.push('\n');
    for j in 0..grid.node_count() {
        push_row(&mut out, grid.coords(j).into_iter().chain(v.node(j).iter().copied()));
    }
    out
}

/// `x1`, section coordinates, value columns.
pub fn field_csv(u: &CylinderField) -> String {
    let grid = u.grid();
    let n = u.dim();
    let mut head = vec!["x1".to_string()];
    head.extend((2..=grid.section.dims() + 1).map(|i| format!("x{i}")));
    head.extend(value_headers(n));
    let mut out = head.join(",");
    out.push('\n');
    for k in 0..grid.axial_nodes {
        let sl = u.slice(k);
        for j in 0..grid.section.node_count() {
            push_row(
                &mut out,
                std::iter::once(grid.x1(k))
                    .chain(grid.section.coords(j))
                    .chain(sl[j * n..(j + 1) * n].iter().copied()),
            );
        }
    }
    out
}

/// One row per slice; optional columns are left empty when absent.
pub fn slices_csv(diags: &[SliceDiagnostics]) -> String {
    let (wells, n) = diags
        .first()
        .map(|d| (d.dist_to_well.len(), d.average.len()))
        .unwrap_or((0, 0));
    let mut head = vec!["x1".to_string()];
    head.extend((0..wells).map(|w| format!("dist_well{w}")));
    head.extend((0..wells).map(|w| format!("sup_dist_well{w}")));
    head.extend((1..=n).map(|i| format!("avg{i}")));
    head.extend(["slice_e", "kinetic", "div_residual", "average_first_component"].map(String::from));
    let mut out = head.join(",");
    out.push('\n');
    for d in diags {
        let mut row: Vec<String> = std::iter::once(d.x1)
            .chain(d.dist_to_well.iter().copied())
            .chain(d.sup_dist_to_well.iter().copied())
            .chain(d.average.iter().copied())
            .chain([d.slice_e, d.kinetic])
            .map(fmt_f64)
            .collect();
        row.push(d.div_residual.map(fmt_f64).unwrap_or_default());
        row.push(d.average_first_component.map(fmt_f64).unwrap_or_default());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Generic two-column-or-more table with a header.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        push_row(&mut out, r.iter().copied());
    }
    out
}

pub fn json_pretty<T: Serialize>(value: &T) -> crate::error::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
