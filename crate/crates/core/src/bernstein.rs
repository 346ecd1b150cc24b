//! Bernstein polynomial basis, binomial survival tables and the midpoint
//! evaluation grid shared by the estimators and resampling schemes.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

/// Degree of a Bernstein smoother (always at least one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct BernsteinOrder(usize);

impl BernsteinOrder {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(domain_err!("Bernstein order must be at least 1"));
        }
        Ok(Self(m))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for BernsteinOrder {
    type Error = Error;

    fn try_from(m: usize) -> Result<Self> {
        Self::new(m)
    }
}

impl From<BernsteinOrder> for usize {
    fn from(m: BernsteinOrder) -> usize {
        m.0
    }
}

impl std::fmt::Display for BernsteinOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

fn check_unit(u: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) {
        return Err(domain_err!("argument {u} is outside [0, 1]"));
    }
    Ok(())
}

/// Fills `out` with the binomial pmf `P_{k,m}(u)`, `k = 0..=m`.
///
/// `m = 0` is allowed here (the derivative of an order-1 smoother needs it).
/// The recurrence starts at the mode with an unnormalized value of one and
/// walks outwards with the ratio `P_{k+1}/P_k = (m-k)/(k+1) * u/(1-u)`, so
/// tails underflow gracefully instead of the starting value `(1-u)^m`.
pub(crate) fn weights_into(m: usize, u: f64, out: &mut Vec<f64>) {
    out.clear();
    out.resize(m + 1, 0.0);
    if u <= 0.0 {
        out[0] = 1.0;
        return;
    }
    if u >= 1.0 {
        out[m] = 1.0;
        return;
    }
    let mode = (((m + 1) as f64 * u).floor() as usize).min(m);
    let odds = u / (1.0 - u);
    out[mode] = 1.0;
    for k in mode..m {
        out[k + 1] = out[k] * ((m - k) as f64 / (k + 1) as f64) * odds;
    }
    for k in (1..=mode).rev() {
        out[k - 1] = out[k] * (k as f64 / (m - k + 1) as f64) / odds;
    }
    let total: f64 = out.iter().sum();
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// Fills `out` with `S[k] = P(B >= k)` for `B ~ Binomial(m, u)`, `k = 0..=m+1`.
pub(crate) fn survival_into(m: usize, u: f64, scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
    weights_into(m, u, scratch);
    out.clear();
    out.resize(m + 2, 0.0);
    let mut acc = 0.0;
    for k in (0..=m).rev() {
        acc += scratch[k];
        out[k] = acc.min(1.0);
    }
    out[0] = 1.0;
}

/// Bernstein basis weights `[P_{0,m}(u), ..., P_{m,m}(u)]`.
pub fn bernstein_weights(m: BernsteinOrder, u: f64) -> Result<Vec<f64>> {
    check_unit(u)?;
    let mut out = Vec::with_capacity(m.get() + 1);
    weights_into(m.get(), u, &mut out);
    Ok(out)
}

/// Upper tail `P(B >= k)` of `B ~ Binomial(m, u)` for `k` in `0..=m+1`.
pub fn binomial_survival(m: BernsteinOrder, u: f64, k: usize) -> Result<f64> {
    check_unit(u)?;
    let m = m.get();
    if k > m + 1 {
        return Err(domain_err!("survival index {k} is outside 0..={}", m + 1));
    }
    let mut scratch = Vec::new();
    let mut table = Vec::new();
    survival_into(m, u, &mut scratch, &mut table);
    Ok(table[k])
}

/// Survival table of one order evaluated at a list of arguments.
///
/// Row `j` holds `P(B >= k)`, `k = 0..=m+1`, for `B ~ Binomial(m, values[j])`.
#[derive(Debug, Clone)]
pub struct SurvivalTable {
    m: usize,
    rows: Vec<f64>,
}

impl SurvivalTable {
    pub fn new(m: BernsteinOrder, values: &[f64]) -> Result<Self> {
        for &u in values {
            check_unit(u)?;
        }
        let m = m.get();
        let width = m + 2;
        let mut rows = Vec::with_capacity(width * values.len());
        let mut scratch = Vec::new();
        let mut row = Vec::new();
        for &u in values {
            survival_into(m, u, &mut scratch, &mut row);
            rows.extend_from_slice(&row);
        }
        Ok(Self { m, rows })
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        let width = self.m + 2;
        &self.rows[j * width..(j + 1) * width]
    }
}

/// Midpoint grid on `(0,1)^d` with `g` cells per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    dim: usize,
    points_per_axis: usize,
    axis_values: Vec<f64>,
    points: Vec<f64>,
    cell_volume: f64,
}

impl EvaluationGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Number of grid points, `g^d`.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Cell midpoints `(j - 0.5)/g`, `j = 1..=g`, shared by every axis.
    pub fn axis_values(&self) -> &[f64] {
        &self.axis_values
    }

    /// Cell boundaries `j/g`, `j = 0..=g`.
    pub fn lattice_values(&self) -> Vec<f64> {
        let g = self.points_per_axis as f64;
        (0..=self.points_per_axis).map(|j| j as f64 / g).collect()
    }

    #[inline]
    pub fn point(&self, p: usize) -> &[f64] {
        &self.points[p * self.dim..(p + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Per-axis cell index of point `p`; the last axis varies fastest.
    pub fn axis_indices(&self, p: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = p;
        for slot in idx.iter_mut().rev() {
            *slot = rest % self.points_per_axis;
            rest /= self.points_per_axis;
        }
        idx
    }
}

/// Number of points of a product grid with `per_axis` values on each of
/// `dim` axes, guarding against overflow of the coordinate buffer.
pub(crate) fn product_size(dim: usize, per_axis: usize) -> Result<usize> {
    let count = u32::try_from(dim)
        .ok()
        .and_then(|d| per_axis.checked_pow(d))
        .filter(|c| {
            c.checked_mul(dim)
                .and_then(|x| x.checked_mul(std::mem::size_of::<f64>()))
                .is_some_and(|bytes| bytes <= isize::MAX as usize)
        });
    count.ok_or_else(|| {
        Error::Capacity(format!(
            "a grid with d = {dim} and g = {per_axis} has too many points to address"
        ))
    })
}

/// Builds the `g^d` cell-midpoint grid in lexicographic order.
pub fn make_grid(d: usize, g: usize) -> Result<EvaluationGrid> {
    if d == 0 || g == 0 {
        return Err(domain_err!("grid needs d >= 1 and g >= 1 (got d = {d}, g = {g})"));
    }
    let count = product_size(d, g)?;
    let axis_values: Vec<f64> = (1..=g).map(|j| (j as f64 - 0.5) / g as f64).collect();
    let mut points = Vec::with_capacity(count * d);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        points.extend(idx.iter().map(|&j| axis_values[j]));
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < g {
                break;
            }
            *slot = 0;
        }
    }
    Ok(EvaluationGrid {
        dim: d,
        points_per_axis: g,
        axis_values,
        points,
        cell_volume: 1.0 / count as f64,
    })
}
