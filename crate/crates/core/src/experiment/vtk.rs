//! Legacy ASCII VTK output of nodal fields and CSV slices.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::kkt::KktSolution;
use crate::mesh::{SpatialMesh, TimeGrid};
use crate::{Error, Result};

/// Write one unstructured-grid file with a single point scalar array.
pub fn write_vtk<W: Write>(mesh: &SpatialMesh, name: &str, values: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{name}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.num_nodes())?;
    for p in mesh.nodes() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
    }
    let tets = mesh.tets();
    writeln!(out, "CELLS {} {}", tets.len(), 5 * tets.len())?;
    for t in tets {
        writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(out, "CELL_TYPES {}", tets.len())?;
    for _ in tets {
        writeln!(out, "10")?;
    }
    writeln!(out, "POINT_DATA {}", values.len())?;
    writeln!(out, "SCALARS {name} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(out, "{v:.9e}")?;
    }
    Ok(())
}

/// Read back the first point scalar array of a file written by [`write_vtk`].
pub fn read_vtk_scalars<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut lines = input.lines().enumerate();
    let mut expected = None;
    for (idx, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(rest) = line.strip_prefix("POINT_DATA") {
            expected = Some(rest.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: idx + 1,
                message: "bad POINT_DATA count".into(),
            })?);
        }
        if line.starts_with("LOOKUP_TABLE") && expected.is_some() {
            break;
        }
    }
    let expected = expected.ok_or(Error::Parse {
        line: 0,
        message: "no POINT_DATA section".into(),
    })?;
    let mut values = Vec::with_capacity(expected);
    for (idx, line) in lines {
        if values.len() == expected {
            break;
        }
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        for tok in line.split_whitespace() {
            values.push(tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("bad value `{tok}`"),
            })?);
        }
    }
    if values.len() != expected {
        return Err(Error::Parse {
            line: 0,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// One file per field (`C`, `G`, `f`) and snapshot level, named
/// `{field}_{level:04}.vtk`. Returns the paths written.
pub fn export_vtk(solution: &KktSolution, mesh: &SpatialMesh, snapshots: &[usize], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let levels = solution.c.len();
    if let Some(&bad) = snapshots.iter().find(|&&n| n >= levels) {
        return Err(Error::InvalidArgument(format!(
            "snapshot {bad} exceeds the last level {}",
            levels - 1
        )));
    }
    let mut written = Vec::new();
    for (name, series) in [("C", &solution.c), ("G", &solution.g), ("f", &solution.f)] {
        for &n in snapshots {
            let path = dir.join(format!("{name}_{n:04}.vtk"));
            let mut w = create(&path)?;
            write_vtk(mesh, name, &series[n], &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Values of a nodal series on the grid plane `x_axis ≈ coordinate`, for every
/// time level: columns `n,t,x,y,z,value`.
pub fn write_slice_csv<W: Write>(
    series: &[Vec<f64>],
    mesh: &SpatialMesh,
    grid: &TimeGrid,
    axis: usize,
    coordinate: f64,
    mut out: W,
) -> Result<()> {
    if axis > 2 {
        return Err(Error::InvalidArgument(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    let mut point = [0.0; 3];
    point[axis] = coordinate;
    let plane = mesh.node_ijk(mesh.nearest_node(point)?)[axis];
    let io = |e| Error::io("<slice>", e);
    writeln!(out, "n,t,x,y,z,value").map_err(io)?;
    for (n, level) in series.iter().enumerate() {
        for (j, x) in mesh.nodes().iter().enumerate() {
            if mesh.node_ijk(j)[axis] == plane {
                writeln!(out, "{n},{},{},{},{},{:.9e}", grid.time(n), x[0], x[1], x[2], level[j]).map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn save_slice_csv(
    series: &[Vec<f64>],
    mesh: &SpatialMesh,
    grid: &TimeGrid,
    axis: usize,
    coordinate: f64,
    path: &Path,
) -> Result<()> {
    let mut w = create(path)?;
    write_slice_csv(series, mesh, grid, axis, coordinate, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}
