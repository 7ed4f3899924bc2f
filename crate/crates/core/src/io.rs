//! File formats: headed CSV matrices, edge lists, time grids and JSON documents.
//!
//! Floats are written with `{:.16e}` (17 significant digits), which round-trips
//! every `f64` and keeps output byte-stable.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{SimInstance, SimSpec};
use crate::edge::Edge;
use crate::error::{RcaError, Result};
use crate::eval::Curve;
use crate::kernels::{Group, TimeGrid};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| RcaError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| RcaError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| RcaError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| RcaError::parse(path, e))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| RcaError::parse(path, e))
}

pub fn matrix_to_csv(m: &DMatrix<f64>, header: &[String]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Column names `c0, c1, …` for a matrix with `k` columns.
pub fn default_header(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("c{j}")).collect()
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &matrix_to_csv(m, &default_header(m.ncols())))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| RcaError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a headed CSV of numbers into a row-major matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv_reader(path)?;
    let ncols = rdr.headers().map_err(|e| RcaError::parse(path, e))?.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| RcaError::parse(path, e))?;
        if record.len() != ncols {
            return Err(RcaError::parse(
                path,
                format!(
                    "row {} has {} fields, header has {ncols}",
                    r + 1,
                    record.len()
                ),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                RcaError::parse(
                    path,
                    format!("row {} column {}: '{field}' is not a number", r + 1, c + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(RcaError::parse(
                    path,
                    format!("row {} column {}: non-finite value", r + 1, c + 1),
                ));
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

pub fn write_edges_csv(path: &Path, edges: &BTreeSet<Edge>) -> Result<()> {
    let mut s = String::from("i,j\n");
    for e in edges {
        s.push_str(&format!("{},{}\n", e.0, e.1));
    }
    write_text(path, &s)
}

pub fn read_edges_csv(path: &Path) -> Result<BTreeSet<Edge>> {
    let mut rdr = csv_reader(path)?;
    let mut out = BTreeSet::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| RcaError::parse(path, e))?;
        let field = |k: usize| -> Result<usize> {
            record.get(k).and_then(|f| f.parse().ok()).ok_or_else(|| {
                RcaError::parse(path, format!("row {}: expected two node indices", r + 1))
            })
        };
        let (i, j) = (field(0)?, field(1)?);
        if i == j {
            return Err(RcaError::parse(
                path,
                format!("row {}: self-loop {i}", r + 1),
            ));
        }
        out.insert(Edge::new(i, j));
    }
    Ok(out)
}

pub fn write_grid_csv(path: &Path, grid: &TimeGrid) -> Result<()> {
    let mut s = String::from("time,group\n");
    for (t, g) in grid.times().iter().zip(grid.groups()) {
        s.push_str(&format!("{},{g}\n", fmt_f64(*t)));
    }
    write_text(path, &s)
}

pub fn read_grid_csv(path: &Path) -> Result<TimeGrid> {
    let mut rdr = csv_reader(path)?;
    let (mut times, mut groups) = (Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| RcaError::parse(path, e))?;
        if record.len() != 2 {
            return Err(RcaError::parse(
                path,
                format!("row {}: expected time,group", r + 1),
            ));
        }
        times.push(record[0].parse::<f64>().map_err(|_| {
            RcaError::parse(path, format!("row {}: bad time '{}'", r + 1, &record[0]))
        })?);
        groups.push(
            record[1]
                .parse::<Group>()
                .map_err(|e| RcaError::parse(path, format!("row {}: {e}", r + 1)))?,
        );
    }
    TimeGrid::new(times, groups).map_err(|e| RcaError::parse(path, e))
}

pub fn curve_to_csv(curve: &Curve, x: &str, y: &str) -> String {
    let mut s = format!("{x},{y}\n");
    for &(a, b) in &curve.points {
        s.push_str(&format!("{},{}\n", fmt_f64(a), fmt_f64(b)));
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimMeta {
    pub spec: SimSpec,
    pub noise_var: f64,
    pub edges: usize,
}

/// Writes `Y.csv`, `precision.csv`, `edges.csv`, `loadings.csv` and `meta.json` into `dir`.
pub fn write_sim_instance(dir: &Path, inst: &SimInstance) -> Result<()> {
    let header: Vec<String> = (0..inst.spec.p).map(|j| format!("x{j}")).collect();
    write_text(&dir.join("Y.csv"), &matrix_to_csv(&inst.data, &header))?;
    write_text(
        &dir.join("precision.csv"),
        &matrix_to_csv(inst.truth_precision.entries().as_matrix(), &header),
    )?;
    write_matrix_csv(&dir.join("loadings.csv"), &inst.truth_loadings)?;
    write_edges_csv(&dir.join("edges.csv"), inst.truth_precision.support())?;
    write_json(
        &dir.join("meta.json"),
        &SimMeta {
            spec: inst.spec.clone(),
            noise_var: inst.noise_var,
            edges: inst.truth_precision.support().len(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m =
            DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 12345.678, f64::MAX, -0.0]);
        let path = dir.path().join("m.csv");
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(back.shape(), (2, 3));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits() & !(1 << 63), b.to_bits() & !(1 << 63));
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_text(&path, "a,b\n1,2\n3,x\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&path),
            Err(RcaError::Parse { .. })
        ));
        write_text(&path, "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&path),
            Err(RcaError::Parse { .. })
        ));
        assert!(matches!(
            read_matrix_csv(&dir.path().join("missing.csv")),
            Err(RcaError::Io { .. })
        ));
    }

    #[test]
    fn edges_and_grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let edges = BTreeSet::from([Edge(0, 3), Edge(1, 2)]);
        let path = dir.path().join("edges.csv");
        write_edges_csv(&path, &edges).unwrap();
        assert_eq!(read_edges_csv(&path).unwrap(), edges);

        let grid = TimeGrid::reference();
        let path = dir.path().join("grid.csv");
        write_grid_csv(&path, &grid).unwrap();
        assert_eq!(read_grid_csv(&path).unwrap(), grid);
    }
}
