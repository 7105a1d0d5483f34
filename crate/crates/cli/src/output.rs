//! Solution artifacts: a legacy structured-points field file and a
//! delimited nodal dump.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use exmc::field::ScalarField;
use exmc::geometry::{ExteriorGrid, NodeTag};

use crate::config::Config;

/// Legacy structured-points text format: dimensions, origin, spacing,
/// then nodal scalars in x-fastest order. Only meaningful for dim = 3;
/// higher dimensions get the delimited dump only.
fn write_structured_points(
    path: &Path,
    grid: &Arc<ExteriorGrid>,
    u: &ScalarField,
) -> Result<(), String> {
    let m = grid.nodes_per_axis();
    let mut text = String::with_capacity(grid.node_count() * 12 + 256);
    text.push_str("# vtk DataFile Version 3.0\n");
    text.push_str("spacelike exterior graph\n");
    text.push_str("ASCII\n");
    text.push_str("DATASET STRUCTURED_POINTS\n");
    let _ = writeln!(text, "DIMENSIONS {m} {m} {m}");
    let o = grid.origin();
    let _ = writeln!(text, "ORIGIN {o} {o} {o}");
    let h = grid.spacing();
    let _ = writeln!(text, "SPACING {h} {h} {h}");
    let _ = writeln!(text, "POINT_DATA {}", grid.node_count());
    text.push_str("SCALARS u double 1\nLOOKUP_TABLE default\n");
    for &v in u.values() {
        let _ = writeln!(text, "{v:.17e}");
    }
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn tag_code(tag: NodeTag) -> u8 {
    match tag {
        NodeTag::Obstacle => 0,
        NodeTag::Boundary => 1,
        NodeTag::Interior => 2,
        NodeTag::Farfield => 3,
    }
}

/// Tab-separated dump: coordinates, value, node tag code
/// (0 obstacle, 1 boundary, 2 interior, 3 far-field).
fn write_dump(path: &Path, grid: &Arc<ExteriorGrid>, u: &ScalarField) -> Result<(), String> {
    let n = grid.dim();
    let mut text = String::with_capacity(grid.node_count() * 24 + 64);
    text.push('#');
    for i in 1..=n {
        let _ = write!(text, " x{i}");
    }
    text.push_str(" u tag\n");
    for node in 0..grid.node_count() {
        let x = grid.node_point(node);
        for xi in &x {
            let _ = write!(text, "{xi:.6}\t");
        }
        let _ = writeln!(text, "{:.17e}\t{}", u.values()[node], tag_code(grid.tag(node)));
    }
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn write_field_artifacts(
    cfg: &Config,
    out_dir: &Path,
    grid: &Arc<ExteriorGrid>,
    u: &ScalarField,
) -> Result<(), String> {
    if let Some(name) = &cfg.output.field {
        if grid.dim() == 3 {
            write_structured_points(&out_dir.join(name), grid, u)?;
        }
    }
    if let Some(name) = &cfg.output.dump {
        write_dump(&out_dir.join(name), grid, u)?;
    }
    Ok(())
}
