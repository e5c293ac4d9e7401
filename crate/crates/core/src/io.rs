//! CSV and legacy VTK files for fields and solutions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, StructuredGrid};
use crate::solver::PressureSolution;

/// `i,j,value` rows in row-major cell order.
pub fn field_to_csv(field: &ScalarField) -> String {
    let g = &field.grid;
    let mut s = String::from("i,j,value\n");
    for j in 0..g.ny {
        for i in 0..g.nx {
            let _ = writeln!(s, "{i},{j},{:e}", field.get(i, j));
        }
    }
    s
}

/// Parses `i,j,value` rows onto `grid`; every cell must appear exactly once.
pub fn field_from_csv(grid: StructuredGrid, text: &str) -> Result<ScalarField> {
    let mut values = vec![f64::NAN; grid.num_cells()];
    let mut seen = vec![false; grid.num_cells()];
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') || raw.starts_with("i,") {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::Parse { line, message: "expected i,j,value".into() });
        }
        let bad = |m: String| Error::Parse { line, message: m };
        let i: usize = cols[0].parse().map_err(|e| bad(format!("i: {e}")))?;
        let j: usize = cols[1].parse().map_err(|e| bad(format!("j: {e}")))?;
        let v: f64 = cols[2].parse().map_err(|e| bad(format!("value: {e}")))?;
        if i >= grid.nx || j >= grid.ny {
            return Err(bad(format!("cell ({i}, {j}) outside a {}x{} grid", grid.nx, grid.ny)));
        }
        let c = grid.cell_index(i, j);
        if seen[c] {
            return Err(bad(format!("cell ({i}, {j}) listed twice")));
        }
        seen[c] = true;
        values[c] = v;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Parse { line: 0, message: format!("cell {c} missing") });
    }
    ScalarField::new(grid, values)
}

/// `node,x1,x2,p` rows.
pub fn solution_to_csv(solution: &PressureSolution) -> String {
    let g = &solution.grid;
    let mut s = String::from("node,x1,x2,p\n");
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let n = g.node_index(i, j);
            let [x, y] = g.node_position(i, j);
            let _ = writeln!(s, "{n},{x:e},{y:e},{:e}", solution.pressure[n]);
        }
    }
    s
}

/// Per-cell gradient, velocity and mobility.
pub fn cell_data_to_csv(solution: &PressureSolution) -> String {
    let g = &solution.grid;
    let mut s = String::from("i,j,dpdx1,dpdx2,u1,u2,mobility\n");
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.cell_index(i, j);
            let (d, u) = (solution.gradient[c], solution.velocity[c]);
            let _ = writeln!(s, "{i},{j},{:e},{:e},{:e},{:e},{:e}", d[0], d[1], u[0], u[1], solution.mobility[c]);
        }
    }
    s
}

fn vtk_header(title: &str, dims: [usize; 2], grid: &StructuredGrid) -> String {
    format!(
        "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\nDIMENSIONS {} {} 1\nORIGIN {:e} {:e} 0\nSPACING {:e} {:e} 1\n",
        dims[0],
        dims[1],
        grid.x0,
        grid.y0,
        grid.hx(),
        grid.hy()
    )
}

fn vtk_scalars(s: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in values {
        let _ = writeln!(s, "{v:e}");
    }
}

/// Cell fields as legacy structured points.
pub fn fields_to_vtk(title: &str, fields: &[(&str, &ScalarField)]) -> Result<String> {
    let Some((_, first)) = fields.first() else {
        return Err(Error::Invalid("no fields to write".into()));
    };
    let g = first.grid;
    if fields.iter().any(|(_, f)| !f.grid.same_shape(&g)) {
        return Err(Error::Invalid("fields live on different grids".into()));
    }
    let mut s = vtk_header(title, [g.nx + 1, g.ny + 1], &g);
    let _ = writeln!(s, "CELL_DATA {}", g.num_cells());
    for (name, f) in fields {
        vtk_scalars(&mut s, name, &f.values);
    }
    Ok(s)
}

/// Nodal pressure plus cell velocities as legacy structured points.
pub fn solution_to_vtk(title: &str, solution: &PressureSolution) -> String {
    let g = solution.grid;
    let mut s = vtk_header(title, [g.nx + 1, g.ny + 1], &g);
    let _ = writeln!(s, "POINT_DATA {}", g.num_nodes());
    vtk_scalars(&mut s, "pressure", &solution.pressure);
    let _ = writeln!(s, "CELL_DATA {}", g.num_cells());
    let _ = writeln!(s, "VECTORS velocity double");
    for u in &solution.velocity {
        let _ = writeln!(s, "{:e} {:e} 0", u[0], u[1]);
    }
    vtk_scalars(&mut s, "mobility", &solution.mobility);
    s
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let g = StructuredGrid::new(2, 2, 1.0, 1.0).unwrap();
        let f = ScalarField::new(g, vec![1.0, 2.0, 3.0, 4.5]).unwrap();
        let s = field_to_csv(&f);
        assert!(s.starts_with("i,j,value\n0,0,1e0\n1,0,2e0\n0,1,3e0\n"));
        assert_eq!(field_from_csv(g, &s).unwrap(), f);
    }

    #[test]
    fn csv_rejects_gaps_and_duplicates() {
        let g = StructuredGrid::new(2, 1, 1.0, 1.0).unwrap();
        assert!(field_from_csv(g, "i,j,value\n0,0,1\n").is_err());
        assert!(field_from_csv(g, "i,j,value\n0,0,1\n0,0,2\n").is_err());
        assert!(field_from_csv(g, "i,j,value\n0,0,1\n5,0,2\n").is_err());
        assert!(field_from_csv(g, "i,j,value\n0,0,x\n1,0,2\n").is_err());
    }

    #[test]
    fn vtk_shape() {
        let g = StructuredGrid::new(3, 2, 3.0, 1.0).unwrap();
        let f = ScalarField::constant(g, 2.0);
        let s = fields_to_vtk("k", &[("k", &f)]).unwrap();
        assert!(s.contains("DIMENSIONS 4 3 1"));
        assert!(s.contains("CELL_DATA 6"));
        assert_eq!(s.lines().filter(|l| *l == "2e0").count(), 6);
    }

    proptest! {
        #[test]
        fn csv_round_trip(values in proptest::collection::vec(1e-6..1e6f64, 12)) {
            let g = StructuredGrid::new(4, 3, 2.0, 1.0).unwrap();
            let f = ScalarField::new(g, values).unwrap();
            prop_assert_eq!(field_from_csv(g, &field_to_csv(&f)).unwrap(), f);
        }
    }
}
