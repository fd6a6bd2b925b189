//! Observation matrices and parameter vectors.

use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{AifError, Result};

/// An `m × N` matrix of observations; column `n` is data point `x_n`.
///
/// Storage is column-major, so the flat slice is already the vectorization
/// used for attacks: entry `(i, n)` lives at `n·m + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    inner: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(AifError::Dimension(format!(
                "data matrix must be at least 1x1, got {}x{}",
                inner.nrows(),
                inner.ncols()
            )));
        }
        if let Some(pos) = inner.iter().position(|v| !v.is_finite()) {
            let (m, _) = inner.shape();
            return Err(AifError::Input(format!(
                "non-finite entry at row {}, point {}",
                pos % m,
                pos / m
            )));
        }
        Ok(Self { inner })
    }

    /// Builds from the flat vectorization (point-major).
    pub fn from_flat(m: usize, n: usize, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != m * n {
            return Err(AifError::Dimension(format!(
                "expected {} entries for a {m}x{n} matrix, got {}",
                m * n,
                flat.len()
            )));
        }
        Self::new(DMatrix::from_vec(m, n, flat))
    }

    /// A single row of scalar observations (`m = 1`).
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.len(), values.to_vec())
    }

    /// Builds from per-point rows, the layout used by CSV files.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(AifError::Dimension("no data points".into()));
        }
        let m = points[0].len();
        let mut flat = Vec::with_capacity(m * n);
        for (k, p) in points.iter().enumerate() {
            if p.len() != m {
                return Err(AifError::Dimension(format!(
                    "point {k} has {} coordinates, expected {m}",
                    p.len()
                )));
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(m, n, flat)
    }

    pub fn m(&self) -> usize {
        self.inner.nrows()
    }

    pub fn n(&self) -> usize {
        self.inner.ncols()
    }

    pub fn point(&self, n: usize) -> &[f64] {
        let m = self.m();
        &self.inner.as_slice()[n * m..(n + 1) * m]
    }

    pub fn as_flat(&self) -> &[f64] {
        self.inner.as_slice()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.inner[(i, n)]
    }

    /// `X + scale · ΔX` with `ΔX` given in flat (point-major) order.
    pub fn perturbed(&self, delta_flat: &[f64], scale: f64) -> Result<Self> {
        if delta_flat.len() != self.as_flat().len() {
            return Err(AifError::Dimension(format!(
                "perturbation has {} entries, data has {}",
                delta_flat.len(),
                self.as_flat().len()
            )));
        }
        let flat = self
            .as_flat()
            .iter()
            .zip(delta_flat)
            .map(|(x, d)| x + scale * d)
            .collect();
        Self::from_flat(self.m(), self.n(), flat)
    }

    /// Rows as points, for CSV output.
    pub fn to_points(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|n| self.point(n).to_vec()).collect()
    }
}

/// A parameter vector `θ ∈ R^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(AifError::Input(format!("non-finite parameter vector {theta:?}")));
        }
        Ok(Self(theta))
    }

    pub fn zeros(q: usize) -> Self {
        Self(vec![0.0; q])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Reads a numeric CSV with one data point per row.
///
/// With `header = true` the first non-empty line is skipped. Blank lines and
/// lines starting with `#` are ignored.
pub fn read_csv_points<R: BufRead>(reader: R, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut skipped_header = !header;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AifError::Input(format!("read failed: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    AifError::Input(format!(
                        "line {}: cannot parse {:?} as a number",
                        lineno + 1,
                        cell.trim()
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(AifError::Dimension(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(AifError::Input("CSV contains no data rows".into()));
    }
    Ok(rows)
}

pub fn load_csv(path: &Path, header: bool) -> Result<DataMatrix> {
    let file =
        std::fs::File::open(path).map_err(|e| AifError::Input(format!("cannot open {}: {e}", path.display())))?;
    let rows = read_csv_points(std::io::BufReader::new(file), header)?;
    DataMatrix::from_points(&rows)
}
