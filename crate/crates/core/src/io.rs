//! CSV output: one row per grid node or record, coordinates first.
//!
//! Numbers use Rust's shortest round-trip formatting, so identical inputs give
//! byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::eigensolver::{ErgodicSolution, ExhaustionEntry};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measure::{DensityField, GridMeasure};
use crate::sde::ErgodicAverageReport;

/// Atoms lighter than this are left out of measure dumps.
pub const MEASURE_WEIGHT_FLOOR: f64 = 1e-14;

fn coord_header(dim: usize) -> &'static str {
    if dim == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn write_coords(out: &mut impl Write, grid: &Grid, node: usize) -> std::io::Result<()> {
    let x = grid.coords(node);
    if grid.dim() == 1 {
        write!(out, "{}", x[0])
    } else {
        write!(out, "{},{}", x[0], x[1])
    }
}

/// Named per-node columns after the coordinates.
pub fn write_node_columns(out: &mut impl Write, grid: &Grid, columns: &[(&str, &[f64])]) -> Result<()> {
    if let Some((name, _)) = columns.iter().find(|(_, v)| v.len() != grid.node_count()) {
        return Err(Error::InvalidArgument(format!("column {name} does not match the grid")));
    }
    write!(out, "{}", coord_header(grid.dim()))?;
    for (name, _) in columns {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for node in 0..grid.node_count() {
        write_coords(out, grid, node)?;
        for (_, values) in columns {
            write!(out, ",{}", values[node])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `u`, the control components and an interior flag.
pub fn write_solution(out: &mut impl Write, solution: &ErgodicSolution) -> Result<()> {
    let grid = &solution.grid;
    let interior: Vec<f64> = (0..grid.node_count()).map(|n| f64::from(u8::from(grid.is_interior(n)))).collect();
    let xi0: Vec<f64> = solution.xi_u.values.iter().map(|v| v[0]).collect();
    let xi1: Vec<f64> = solution.xi_u.values.iter().map(|v| v[1]).collect();
    let mut columns: Vec<(&str, &[f64])> = vec![("u", &solution.u.values), ("xi_x", &xi0)];
    if grid.dim() == 2 {
        columns.push(("xi_y", &xi1));
    }
    columns.push(("interior", &interior));
    write_node_columns(out, grid, &columns)
}

pub fn write_density(out: &mut impl Write, density: &DensityField) -> Result<()> {
    write_node_columns(out, &density.grid, &[("rho", &density.rho)])
}

pub fn write_measure(out: &mut impl Write, measure: &GridMeasure) -> Result<()> {
    let grid = &measure.grid;
    let control = if grid.dim() == 1 { "xi" } else { "xi_x,xi_y" };
    writeln!(out, "{},{control},weight", coord_header(grid.dim()))?;
    for atom in measure.atoms.iter().filter(|a| a.weight > MEASURE_WEIGHT_FLOOR) {
        write_coords(out, grid, atom.node)?;
        if grid.dim() == 1 {
            writeln!(out, ",{},{}", atom.xi[0], atom.weight)?;
        } else {
            writeln!(out, ",{},{},{}", atom.xi[0], atom.xi[1], atom.weight)?;
        }
    }
    Ok(())
}

/// One row per path; `control` labels the rows when several runs share a file.
pub fn write_paths(out: &mut impl Write, runs: &[(&str, &ErgodicAverageReport)]) -> Result<()> {
    writeln!(out, "control,path,average,late_average,admissibility_integral,divergent")?;
    for (name, report) in runs {
        for p in &report.paths {
            writeln!(
                out,
                "{name},{},{},{},{},{}",
                p.path, p.average, p.late_average, p.admissibility_integral, p.divergent
            )?;
        }
    }
    Ok(())
}

pub fn write_exhaustion(out: &mut impl Write, entries: &[ExhaustionEntry]) -> Result<()> {
    writeln!(out, "radius,lambda,iterations,converged,difference,error")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for e in entries {
        let error = e.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{error}",
            e.radius,
            opt(e.lambda),
            e.iterations,
            e.converged,
            opt(e.difference)
        )?;
    }
    Ok(())
}

/// Creates `path` and hands a buffered writer to `write`.
pub fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write(&mut out)?;
    out.flush()?;
    Ok(())
}
