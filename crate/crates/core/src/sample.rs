use std::ops::Range;

use crate::error::{domain_err, Result};

/// An `n x d` matrix of finite observations stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    /// Wraps row-major `data`; requires `n >= 2`, `d >= 2` and finite entries.
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n < 2 || d < 2 {
            return Err(domain_err!("a sample needs n >= 2 and d >= 2 (got n = {n}, d = {d})"));
        }
        if data.len() != n * d {
            return Err(domain_err!(
                "expected {} values for a {n} x {d} sample, got {}",
                n * d,
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(domain_err!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            ));
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(domain_err!("row {i} has {} columns, expected {d}", row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(domain_err!("row index {i} out of range for n = {}", self.n));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, indices.len(), self.d)
    }

    /// The sub-matrix made of a contiguous range of columns.
    pub fn select_columns(&self, cols: Range<usize>) -> Result<Self> {
        if cols.end > self.d || cols.start >= cols.end {
            return Err(domain_err!(
                "column range {cols:?} is invalid for d = {}",
                self.d
            ));
        }
        let data = self.rows().flat_map(|r| r[cols.clone()].iter().copied()).collect();
        Self::new(data, self.n, cols.len())
    }

    /// Applies `f(column, value)` entrywise.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| f(k % self.d, x))
            .collect();
        Self::new(data, self.n, self.d)
    }
}
