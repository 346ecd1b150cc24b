//! Pseudo-observations, the empirical copula and the empirical Bernstein
//! copula.
//!
//! Both estimators are averages over observations of a product of per-axis
//! factors:
//!
//! * empirical: `1(U_il <= u_l)`;
//! * Bernstein of order `m`: `P(Binomial(m, u_l) >= ceil(m U_il))`.
//!
//! The second form is the closed form of the `(m+1)^d`-term Bernstein sum for
//! a single observation, because the indicator `1(U_il <= k/m)` switches on
//! exactly at `k = ceil(m U_il)`. Every grid computation below builds one
//! factor table per axis (axis values x observations) and multiplies rows.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::bernstein::{
    product_size, survival_into, weights_into, BernsteinOrder, EvaluationGrid, SurvivalTable,
};
use crate::error::{domain_err, Error, Result};
use crate::sample::Sample;

/// Normalized ranks of a sample, stored as integer ranks `1..=n` per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoSample {
    // column-major: ranks[l * n + i]
    ranks: Vec<u32>,
    n: usize,
    d: usize,
}

impl PseudoSample {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Integer rank `#{j : X_jl <= X_il}`.
    #[inline]
    pub fn rank(&self, i: usize, l: usize) -> u32 {
        self.ranks[l * self.n + i]
    }

    #[inline]
    pub fn column_ranks(&self, l: usize) -> &[u32] {
        &self.ranks[l * self.n..(l + 1) * self.n]
    }

    /// The pseudo-observation `rank / n`.
    #[inline]
    pub fn value(&self, i: usize, l: usize) -> f64 {
        self.rank(i, l) as f64 / self.n as f64
    }

    /// Row `i` as a point of `(0, 1]^d`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.d).map(|l| self.value(i, l)).collect()
    }

    /// Number of pairs of equal entries summed over columns.
    pub fn tie_count(&self) -> usize {
        (0..self.d)
            .map(|l| {
                let mut ranks = self.column_ranks(l).to_vec();
                ranks.sort_unstable();
                ranks.windows(2).filter(|w| w[0] == w[1]).count()
            })
            .sum()
    }
}

/// Normalized ranks `(1/n) #{j : X_jl <= X_il}`; tied values share their
/// maximal rank.
pub fn pseudo_observations(sample: &Sample) -> PseudoSample {
    let (n, d) = (sample.n(), sample.dim());
    let mut ranks = Vec::with_capacity(n * d);
    let mut sorted = Vec::with_capacity(n);
    for l in 0..d {
        sorted.clear();
        sorted.extend(sample.rows().map(|r| r[l]));
        sorted.sort_unstable_by(f64::total_cmp);
        for row in sample.rows() {
            let x = row[l];
            ranks.push(sorted.partition_point(|&v| v <= x) as u32);
        }
    }
    PseudoSample { ranks, n, d }
}

fn check_point(u: &[f64], d: usize) -> Result<()> {
    if u.len() != d {
        return Err(domain_err!("point has dimension {}, expected {d}", u.len()));
    }
    if let Some(x) = u.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(domain_err!("coordinate {x} is outside [0, 1]"));
    }
    Ok(())
}

/// Empirical copula `C_n(u) = (1/n) sum_i prod_l 1(U_il <= u_l)`.
pub fn empirical_copula_eval(pseudo: &PseudoSample, u: &[f64]) -> Result<f64> {
    check_point(u, pseudo.d)?;
    let count = (0..pseudo.n)
        .filter(|&i| (0..pseudo.d).all(|l| pseudo.value(i, l) <= u[l]))
        .count();
    Ok(count as f64 / pseudo.n as f64)
}

/// Which estimator an evaluator computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// The unsmoothed empirical copula.
    Empirical,
    /// The empirical Bernstein copula of the given order.
    Bernstein(BernsteinOrder),
}

/// Estimator family without an order; the order is resolved per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Bernstein,
    Empirical,
}

impl EstimatorMode {
    pub fn smoothing(self, order: BernsteinOrder) -> Smoothing {
        match self {
            EstimatorMode::Bernstein => Smoothing::Bernstein(order),
            EstimatorMode::Empirical => Smoothing::Empirical,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::Bernstein => "bernstein",
            EstimatorMode::Empirical => "empirical",
        }
    }
}

impl std::fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A surface on `[0,1]^d` that can be sampled on product grids.
///
/// The statistics only need point values, so test doubles (independence,
/// constant offsets) can stand in for real estimators.
pub trait CopulaSurface {
    fn dim(&self) -> usize;

    /// Value at `u`; callers guarantee `u.len() == dim()`.
    fn value(&self, u: &[f64]) -> f64;

    /// Values on the product of `axis_values` over every axis, in
    /// lexicographic order with the last axis varying fastest.
    fn product_values(&self, axis_values: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let count = product_size(d, axis_values.len())?;
        let mut out = Vec::with_capacity(count);
        let mut idx = vec![0usize; d];
        let mut u = vec![0.0; d];
        for _ in 0..count {
            for (x, &j) in u.iter_mut().zip(&idx) {
                *x = axis_values[j];
            }
            out.push(self.value(&u));
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < axis_values.len() {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(out)
    }
}

/// Per-axis factor tables and their row products on a product grid.
#[derive(Debug, Clone)]
pub struct GridProjection {
    /// One `g x n` table per axis.
    pub factors: Vec<Array2<f64>>,
    /// `g^d x n`; row `p` is the product of the factor rows of point `p`.
    pub weights: Array2<f64>,
}

/// Row-wise products of per-axis tables, lexicographic in the axis indices.
pub(crate) fn product_rows(tables: &[&Array2<f64>]) -> Array2<f64> {
    let mut acc = tables[0].clone();
    let n = acc.ncols();
    for table in &tables[1..] {
        let g = table.nrows();
        let mut next = Array2::<f64>::zeros((acc.nrows() * g, n));
        for (p, a) in acc.rows().into_iter().enumerate() {
            for (j, b) in table.rows().into_iter().enumerate() {
                Zip::from(next.row_mut(p * g + j))
                    .and(&a)
                    .and(&b)
                    .for_each(|o, &x, &y| *o = x * y);
            }
        }
        acc = next;
    }
    acc
}

/// Average of each row: the surface value at each product-grid point.
pub(crate) fn row_means(weights: &Array2<f64>) -> Vec<f64> {
    let n = weights.ncols() as f64;
    weights.rows().into_iter().map(|r| r.sum() / n).collect()
}

/// An empirical or empirical Bernstein copula of one sample.
#[derive(Debug, Clone)]
pub struct CopulaEvaluator {
    pseudo: PseudoSample,
    smoothing: Smoothing,
    // column-major ceil(m * U_il), in 1..=m; empty in empirical mode
    ceil_indices: Vec<u32>,
}

impl CopulaEvaluator {
    pub fn new(pseudo: PseudoSample, smoothing: Smoothing) -> Self {
        let ceil_indices = match smoothing {
            Smoothing::Empirical => Vec::new(),
            Smoothing::Bernstein(m) => {
                let (m, n) = (m.get() as u64, pseudo.n as u64);
                pseudo
                    .ranks
                    .iter()
                    .map(|&r| ((m * r as u64 + n - 1) / n) as u32)
                    .collect()
            }
        };
        Self { pseudo, smoothing, ceil_indices }
    }

    /// Ranks `sample` and wraps the result.
    pub fn from_sample(sample: &Sample, smoothing: Smoothing) -> Self {
        Self::new(pseudo_observations(sample), smoothing)
    }

    pub fn n(&self) -> usize {
        self.pseudo.n
    }

    pub fn pseudo(&self) -> &PseudoSample {
        &self.pseudo
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    /// `ceil(m U_il)` for a Bernstein evaluator.
    pub fn ceil_index(&self, i: usize, l: usize) -> Option<u32> {
        match self.smoothing {
            Smoothing::Empirical => None,
            Smoothing::Bernstein(_) => Some(self.ceil_indices[l * self.pseudo.n + i]),
        }
    }

    /// Step used by the centered finite difference of the empirical copula.
    pub fn difference_step(&self) -> f64 {
        1.0 / (self.pseudo.n as f64).sqrt()
    }

    /// Per-observation factors of axis `l` at each of `values`
    /// (`values.len() x n`).
    pub fn factor_table(&self, l: usize, values: &[f64]) -> Result<Array2<f64>> {
        let n = self.pseudo.n;
        let mut table = Array2::<f64>::zeros((values.len(), n));
        match self.smoothing {
            Smoothing::Empirical => {
                let ranks = self.pseudo.column_ranks(l);
                for (mut row, &u) in table.rows_mut().into_iter().zip(values) {
                    if !(0.0..=1.0).contains(&u) {
                        return Err(domain_err!("coordinate {u} is outside [0, 1]"));
                    }
                    for (f, &r) in row.iter_mut().zip(ranks) {
                        *f = if r as f64 / n as f64 <= u { 1.0 } else { 0.0 };
                    }
                }
            }
            Smoothing::Bernstein(m) => {
                let surv = SurvivalTable::new(m, values)?;
                let ceil = &self.ceil_indices[l * n..(l + 1) * n];
                for (j, mut row) in table.rows_mut().into_iter().enumerate() {
                    let s = surv.row(j);
                    for (f, &k) in row.iter_mut().zip(ceil) {
                        *f = s[k as usize];
                    }
                }
            }
        }
        Ok(table)
    }

    /// Per-observation factors of the derivative along axis `l`.
    ///
    /// Bernstein: `m P_{k-1, m-1}(u)` with `k = ceil(m U_il)`, the exact
    /// derivative of the survival factor. Empirical: the centered difference
    /// of the indicator with step `1/sqrt(n)`, both ends clamped to `[0,1]`
    /// and divided by the clamped span.
    pub fn derivative_table(&self, l: usize, values: &[f64]) -> Result<Array2<f64>> {
        let n = self.pseudo.n;
        let mut table = Array2::<f64>::zeros((values.len(), n));
        match self.smoothing {
            Smoothing::Empirical => {
                let h = self.difference_step();
                let ranks = self.pseudo.column_ranks(l);
                for (mut row, &u) in table.rows_mut().into_iter().zip(values) {
                    if !(0.0..=1.0).contains(&u) {
                        return Err(domain_err!("coordinate {u} is outside [0, 1]"));
                    }
                    let (lo, hi) = ((u - h).max(0.0), (u + h).min(1.0));
                    let span = hi - lo;
                    for (f, &r) in row.iter_mut().zip(ranks) {
                        let v = r as f64 / n as f64;
                        *f = if lo < v && v <= hi { 1.0 / span } else { 0.0 };
                    }
                }
            }
            Smoothing::Bernstein(m) => {
                let m = m.get();
                let ceil = &self.ceil_indices[l * n..(l + 1) * n];
                let mut w = Vec::with_capacity(m);
                for (mut row, &u) in table.rows_mut().into_iter().zip(values) {
                    if !(0.0..=1.0).contains(&u) {
                        return Err(domain_err!("coordinate {u} is outside [0, 1]"));
                    }
                    weights_into(m - 1, u, &mut w);
                    for (f, &k) in row.iter_mut().zip(ceil) {
                        *f = m as f64 * w[k as usize - 1];
                    }
                }
            }
        }
        Ok(table)
    }

    /// Factor tables of every axis at the grid's axis values, plus their
    /// products at every grid point.
    pub fn project(&self, grid: &EvaluationGrid) -> Result<GridProjection> {
        self.check_dim(grid.dim())?;
        let factors = (0..self.pseudo.d)
            .map(|l| self.factor_table(l, grid.axis_values()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Array2<f64>> = factors.iter().collect();
        let weights = product_rows(&refs);
        Ok(GridProjection { factors, weights })
    }

    /// Surface values at every grid point.
    pub fn surface(&self, grid: &EvaluationGrid) -> Result<Vec<f64>> {
        self.product_values(grid.axis_values())
    }

    /// Partial derivatives at every grid point; entry `l` holds axis `l`.
    pub fn grid_partials(&self, grid: &EvaluationGrid, proj: &GridProjection) -> Result<Vec<Vec<f64>>> {
        self.check_dim(grid.dim())?;
        (0..self.pseudo.d)
            .map(|l| {
                let deriv = self.derivative_table(l, grid.axis_values())?;
                let refs: Vec<&Array2<f64>> = proj
                    .factors
                    .iter()
                    .enumerate()
                    .map(|(k, t)| if k == l { &deriv } else { t })
                    .collect();
                Ok(row_means(&product_rows(&refs)))
            })
            .collect()
    }

    /// Value at `u`.
    pub fn evaluate(&self, u: &[f64]) -> Result<f64> {
        check_point(u, self.pseudo.d)?;
        Ok(self.value(u))
    }

    /// Partial derivative along `axis` (0-based) at `u`.
    pub fn partial_derivative(&self, u: &[f64], axis: usize) -> Result<f64> {
        check_point(u, self.pseudo.d)?;
        if axis >= self.pseudo.d {
            return Err(domain_err!("axis {axis} is out of range for d = {}", self.pseudo.d));
        }
        let refs = self.point_tables(u, Some(axis))?;
        let refs: Vec<&Array2<f64>> = refs.iter().collect();
        Ok(row_means(&product_rows(&refs))[0])
    }

    fn point_tables(&self, u: &[f64], derivative_axis: Option<usize>) -> Result<Vec<Array2<f64>>> {
        (0..self.pseudo.d)
            .map(|l| {
                if derivative_axis == Some(l) {
                    self.derivative_table(l, &u[l..=l])
                } else {
                    self.factor_table(l, &u[l..=l])
                }
            })
            .collect()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.pseudo.d {
            return Err(domain_err!(
                "evaluator has dimension {}, grid has dimension {d}",
                self.pseudo.d
            ));
        }
        Ok(())
    }
}

impl CopulaSurface for CopulaEvaluator {
    fn dim(&self) -> usize {
        self.pseudo.d
    }

    fn value(&self, u: &[f64]) -> f64 {
        let n = self.pseudo.n;
        let mut acc = vec![1.0; n];
        match self.smoothing {
            Smoothing::Empirical => {
                for (l, &x) in u.iter().enumerate() {
                    for (a, &r) in acc.iter_mut().zip(self.pseudo.column_ranks(l)) {
                        if r as f64 / n as f64 > x {
                            *a = 0.0;
                        }
                    }
                }
            }
            Smoothing::Bernstein(m) => {
                let (mut scratch, mut surv) = (Vec::new(), Vec::new());
                for (l, &x) in u.iter().enumerate() {
                    survival_into(m.get(), x, &mut scratch, &mut surv);
                    let ceil = &self.ceil_indices[l * n..(l + 1) * n];
                    for (a, &k) in acc.iter_mut().zip(ceil) {
                        *a *= surv[k as usize];
                    }
                }
            }
        }
        acc.iter().sum::<f64>() / n as f64
    }

    fn product_values(&self, axis_values: &[f64]) -> Result<Vec<f64>> {
        product_size(self.pseudo.d, axis_values.len())?;
        let tables = (0..self.pseudo.d)
            .map(|l| self.factor_table(l, axis_values))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Array2<f64>> = tables.iter().collect();
        Ok(row_means(&product_rows(&refs)))
    }
}

fn require_bernstein(ev: &CopulaEvaluator) -> Result<BernsteinOrder> {
    match ev.smoothing {
        Smoothing::Bernstein(m) => Ok(m),
        Smoothing::Empirical => Err(domain_err!("operation requires a Bernstein evaluator")),
    }
}

/// Empirical Bernstein copula at `u` through the per-observation survival form.
pub fn bernstein_copula_eval(ev: &CopulaEvaluator, u: &[f64]) -> Result<f64> {
    require_bernstein(ev)?;
    ev.evaluate(u)
}

/// Largest number of terms the literal nested sum will attempt.
pub const NAIVE_TERM_LIMIT: usize = 10_000_000;

/// The literal nested sum `sum_k C_n(k/m) prod_l P_{k_l,m}(u_l)`.
///
/// Exponential in `d`; kept as a correctness reference for small instances.
pub fn bernstein_copula_eval_naive(ev: &CopulaEvaluator, u: &[f64]) -> Result<f64> {
    let m = require_bernstein(ev)?.get();
    let d = ev.pseudo.d;
    check_point(u, d)?;
    let terms = product_size(d, m + 1)
        .ok()
        .filter(|&t| t <= NAIVE_TERM_LIMIT)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "(m+1)^d = {}^{d} terms exceed the limit of {NAIVE_TERM_LIMIT}",
                m + 1
            ))
        })?;
    let weights: Vec<Vec<f64>> = u
        .iter()
        .map(|&x| {
            let mut w = Vec::new();
            weights_into(m, x, &mut w);
            w
        })
        .collect();
    let mut k = vec![0usize; d];
    let mut lattice = vec![0.0; d];
    let mut total = 0.0;
    for _ in 0..terms {
        let basis: f64 = k.iter().enumerate().map(|(l, &kl)| weights[l][kl]).product();
        if basis != 0.0 {
            for (x, &kl) in lattice.iter_mut().zip(&k) {
                *x = kl as f64 / m as f64;
            }
            total += empirical_copula_eval(&ev.pseudo, &lattice)? * basis;
        }
        for slot in k.iter_mut().rev() {
            *slot += 1;
            if *slot <= m {
                break;
            }
            *slot = 0;
        }
    }
    Ok(total)
}

/// Partial derivative of the empirical Bernstein copula along `axis`
/// (0-based).
pub fn bernstein_partial_derivative(ev: &CopulaEvaluator, u: &[f64], axis: usize) -> Result<f64> {
    require_bernstein(ev)?;
    ev.partial_derivative(u, axis)
}

/// Signed measure of each grid cell `prod_l ((j_l - 1)/g, j_l/g]`, by
/// inclusion-exclusion over the cell corners. Cells follow the grid order.
pub fn stieltjes_cell_masses<S: CopulaSurface + ?Sized>(
    surface: &S,
    grid: &EvaluationGrid,
) -> Result<Vec<f64>> {
    let d = grid.dim();
    if surface.dim() != d {
        return Err(domain_err!(
            "surface has dimension {}, grid has dimension {d}",
            surface.dim()
        ));
    }
    let g = grid.points_per_axis();
    let mut values = surface.product_values(&grid.lattice_values())?;
    // Difference along one axis at a time; after axis l the extent along l
    // shrinks from g+1 to g.
    let mut extent = vec![g + 1; d];
    for l in 0..d {
        let inner: usize = extent[l + 1..].iter().product();
        let outer: usize = extent[..l].iter().product();
        let mut next = Vec::with_capacity(outer * g * inner);
        for o in 0..outer {
            let base = o * (g + 1) * inner;
            for j in 0..g {
                for r in 0..inner {
                    let hi = values[base + (j + 1) * inner + r];
                    let lo = values[base + j * inner + r];
                    next.push(hi - lo);
                }
            }
        }
        values = next;
        extent[l] = g;
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernstein::make_grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn order(m: usize) -> BernsteinOrder {
        BernsteinOrder::new(m).unwrap()
    }

    fn random_sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Sample {
        let data = (0..n * d).map(|_| rng.gen::<f64>()).collect();
        Sample::new(data, n, d).unwrap()
    }

    fn bernstein(sample: &Sample, m: usize) -> CopulaEvaluator {
        CopulaEvaluator::from_sample(sample, Smoothing::Bernstein(order(m)))
    }

    struct Independence(usize);

    impl CopulaSurface for Independence {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, u: &[f64]) -> f64 {
            u.iter().product()
        }
    }

    #[test]
    fn pseudo_observation_examples() {
        let s = Sample::from_rows(&[[3.1, 5.0], [1.2, 5.0], [2.5, 7.0]]).unwrap();
        let p = pseudo_observations(&s);
        assert_eq!(p.row(0), vec![1.0, 2.0 / 3.0]);
        assert_eq!(p.row(1), vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(p.row(2), vec![2.0 / 3.0, 1.0]);
        assert_eq!(p.tie_count(), 1);
        assert!(Sample::from_rows(&[[9.0, 9.0]]).is_err());
    }

    #[test]
    fn empirical_copula_examples() {
        // ranks giving pseudo rows (0.5, 1.0) and (1.0, 0.5)
        let s = Sample::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = pseudo_observations(&s);
        assert_eq!(empirical_copula_eval(&p, &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(empirical_copula_eval(&p, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(empirical_copula_eval(&p, &[0.5, 1.0]).unwrap(), 0.5);
        assert!(empirical_copula_eval(&p, &[0.5]).is_err());

        let ev = CopulaEvaluator::new(p.clone(), Smoothing::Empirical);
        assert_eq!(ev.evaluate(&[0.5, 1.0]).unwrap(), 0.5);
    }

    /// Pseudo-sample with every row equal to (1, ..., 1).
    fn all_ones(d: usize) -> PseudoSample {
        PseudoSample { ranks: vec![1; d], n: 1, d }
    }

    #[test]
    fn single_top_row_is_independence_at_order_one() {
        let ev = CopulaEvaluator::new(all_ones(3), Smoothing::Bernstein(order(1)));
        let u = [0.3, 0.6, 0.9];
        assert_abs_diff_eq!(bernstein_copula_eval(&ev, &u).unwrap(), 0.3 * 0.6 * 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(bernstein_copula_eval_naive(&ev, &u).unwrap(), 0.3 * 0.6 * 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(
            bernstein_partial_derivative(&ev, &u, 0).unwrap(),
            0.6 * 0.9,
            epsilon = 1e-15
        );
        let ev2 = CopulaEvaluator::new(all_ones(2), Smoothing::Bernstein(order(1)));
        assert_abs_diff_eq!(bernstein_copula_eval_naive(&ev2, &[0.5, 0.5]).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn fast_matches_naive_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_sample(&mut rng, 6, 2);
        let ev = bernstein(&s, 4);
        let u = [0.37, 0.81];
        let fast = bernstein_copula_eval(&ev, &u).unwrap();
        let naive = bernstein_copula_eval_naive(&ev, &u).unwrap();
        assert_abs_diff_eq!(fast, naive, epsilon = 1e-12);
        assert_eq!(bernstein_copula_eval(&ev, &[0.0, 0.81]).unwrap(), 0.0);
        assert_eq!(bernstein_copula_eval(&ev, &[1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(bernstein_copula_eval_naive(&ev, &[1.0, 1.0]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn naive_rejects_huge_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_sample(&mut rng, 4, 8);
        let ev = bernstein(&s, 20);
        assert!(matches!(
            bernstein_copula_eval_naive(&ev, &[0.5; 8]),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_sample(&mut rng, 8, 2);
        let ev = bernstein(&s, 5);
        let u = [0.4, 0.6];
        let h = 1e-5;
        for axis in 0..2 {
            let (mut up, mut dn) = (u, u);
            up[axis] += h;
            dn[axis] -= h;
            let fd = (ev.evaluate(&up).unwrap() - ev.evaluate(&dn).unwrap()) / (2.0 * h);
            let exact = bernstein_partial_derivative(&ev, &u, axis).unwrap();
            assert_abs_diff_eq!(exact, fd, epsilon = 1e-6);
        }
        assert!(bernstein_partial_derivative(&ev, &u, 2).is_err());
    }

    #[test]
    fn derivative_on_top_edge_is_margin_derivative() {
        // With u_2 = 1 the surface is the smoothed first margin
        // u -> (1/n) sum_i P(Binomial(m, u) >= k_i1), whose derivative is
        // (m/n) sum_i P_{k_i1 - 1, m - 1}(u).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_sample(&mut rng, 8, 2);
        let m = 5;
        let ev = bernstein(&s, m);
        let u1 = 0.43;
        let w = crate::bernstein::bernstein_weights(order(m - 1), u1).unwrap();
        let direct: f64 = (0..8)
            .map(|i| m as f64 * w[ev.ceil_index(i, 0).unwrap() as usize - 1])
            .sum::<f64>()
            / 8.0;
        let got = bernstein_partial_derivative(&ev, &[u1, 1.0], 0).unwrap();
        assert_abs_diff_eq!(got, direct, epsilon = 1e-12);
    }

    #[test]
    fn cell_masses_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sample(&mut rng, 10, 2);
        let ev = bernstein(&s, 4);
        let one = stieltjes_cell_masses(&ev, &make_grid(2, 1).unwrap()).unwrap();
        assert_eq!(one.len(), 1);
        assert_abs_diff_eq!(one[0], 1.0, epsilon = 1e-15);

        let indep = stieltjes_cell_masses(&Independence(2), &make_grid(2, 2).unwrap()).unwrap();
        for m in indep {
            assert_abs_diff_eq!(m, 0.25, epsilon = 1e-15);
        }

        let masses = stieltjes_cell_masses(&ev, &make_grid(2, 5).unwrap()).unwrap();
        assert_eq!(masses.len(), 25);
        assert_abs_diff_eq!(masses.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn cell_masses_match_corner_formula_in_three_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_sample(&mut rng, 9, 3);
        let ev = bernstein(&s, 3);
        let grid = make_grid(3, 3).unwrap();
        let masses = stieltjes_cell_masses(&ev, &grid).unwrap();
        for (p, &mass) in masses.iter().enumerate() {
            let idx = grid.axis_indices(p);
            let mut expect = 0.0;
            for corner in 0..8usize {
                let u: Vec<f64> = (0..3)
                    .map(|l| (idx[l] + ((corner >> l) & 1)) as f64 / 3.0)
                    .collect();
                let sign = if (3 - corner.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
                expect += sign * ev.evaluate(&u).unwrap();
            }
            assert_abs_diff_eq!(mass, expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn grid_surface_and_partials_match_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_sample(&mut rng, 12, 3);
        let grid = make_grid(3, 4).unwrap();
        for smoothing in [Smoothing::Empirical, Smoothing::Bernstein(order(4))] {
            let ev = CopulaEvaluator::from_sample(&s, smoothing);
            let proj = ev.project(&grid).unwrap();
            let surface = row_means(&proj.weights);
            let partials = ev.grid_partials(&grid, &proj).unwrap();
            for (p, u) in grid.points().enumerate() {
                assert_abs_diff_eq!(surface[p], ev.evaluate(u).unwrap(), epsilon = 1e-14);
                for l in 0..3 {
                    assert_abs_diff_eq!(
                        partials[l][p],
                        ev.partial_derivative(u, l).unwrap(),
                        epsilon = 1e-13
                    );
                }
            }
        }
    }

    #[test]
    fn empirical_difference_quotient_is_clamped() {
        let s = Sample::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]).unwrap();
        let ev = CopulaEvaluator::from_sample(&s, Smoothing::Empirical);
        // h = 0.5; at u1 = 0.1 the span is [0, 0.6]
        let got = ev.partial_derivative(&[0.1, 1.0], 0).unwrap();
        let expect = (ev.evaluate(&[0.6, 1.0]).unwrap() - ev.evaluate(&[0.0, 1.0]).unwrap()) / 0.6;
        assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
    }

    #[test]
    fn uniform_consistency_improves_with_sample_size() {
        let grid = make_grid(2, 20).unwrap();
        let truth: Vec<f64> = grid.points().map(|u| u[0] * u[1]).collect();
        let sup_error = |n: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, 2);
            let ev = bernstein(&s, n / 5);
            ev.surface(&grid)
                .unwrap()
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let small: f64 = (0..20).map(|r| sup_error(200, 100 + r)).sum::<f64>() / 20.0;
        let large: f64 = (0..20).map(|r| sup_error(2000, 200 + r)).sum::<f64>() / 20.0;
        assert!(large <= 0.5 * small, "n=200: {small}, n=2000: {large}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fast_path_equals_nested_sum(
            seed in any::<u64>(),
            n in 2usize..=10,
            d in 2usize..=3,
            m in 1usize..=6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, d);
            let ev = bernstein(&s, m);
            for _ in 0..20 {
                let u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
                let fast = bernstein_copula_eval(&ev, &u).unwrap();
                let naive = bernstein_copula_eval_naive(&ev, &u).unwrap();
                prop_assert!((fast - naive).abs() <= 1e-12, "fast {} naive {}", fast, naive);
            }
        }

        #[test]
        fn boundary_values_are_exact(seed in any::<u64>(), n in 2usize..=15, m in 1usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, 3);
            for smoothing in [Smoothing::Empirical, Smoothing::Bernstein(order(m))] {
                let ev = CopulaEvaluator::from_sample(&s, smoothing);
                prop_assert_eq!(ev.evaluate(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
                let mut u: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                u[rng.gen_range(0..3)] = 0.0;
                prop_assert_eq!(ev.evaluate(&u).unwrap(), 0.0);
            }
        }

        #[test]
        fn bernstein_surface_is_monotone(seed in any::<u64>(), n in 2usize..=20, m in 1usize..=15, axis in 0usize..2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, 2);
            let ev = bernstein(&s, m);
            let mut u = [rng.gen::<f64>(), rng.gen::<f64>()];
            let mut prev = f64::NEG_INFINITY;
            for step in 0..50 {
                u[axis] = step as f64 / 49.0;
                let v = ev.evaluate(&u).unwrap();
                prop_assert!(v >= prev - 1e-15);
                prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
                prev = v;
            }
        }

        #[test]
        fn empirical_copula_is_lipschitz_up_to_rank_slack(seed in any::<u64>(), n in 2usize..=30, d in 2usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, d);
            let p = pseudo_observations(&s);
            let u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let gap = (empirical_copula_eval(&p, &u).unwrap() - empirical_copula_eval(&p, &v).unwrap()).abs();
            let bound: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>() + d as f64 / n as f64;
            prop_assert!(gap <= bound + 1e-15);
        }

        #[test]
        fn derivative_is_bounded(seed in any::<u64>(), n in 2usize..=20, m in 1usize..=15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, 2);
            let ev = bernstein(&s, m);
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            let w = if m > 1 {
                crate::bernstein::bernstein_weights(order(m - 1), u[0]).unwrap()
            } else {
                vec![1.0]
            };
            let cap = m as f64 * w.iter().copied().fold(0.0, f64::max);
            let dv = bernstein_partial_derivative(&ev, &u, 0).unwrap();
            prop_assert!(dv >= 0.0 && dv <= cap + 1e-12);
        }

        #[test]
        fn masses_sum_to_one(seed in any::<u64>(), n in 2usize..=20, d in 2usize..=3, g in 1usize..=8, m in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, d);
            let grid = make_grid(d, g).unwrap();
            for smoothing in [Smoothing::Empirical, Smoothing::Bernstein(order(m))] {
                let ev = CopulaEvaluator::from_sample(&s, smoothing);
                let total: f64 = stieltjes_cell_masses(&ev, &grid).unwrap().iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-10);
            }
        }

        #[test]
        fn untied_columns_are_rank_permutations(seed in any::<u64>(), n in 2usize..=40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n, 2);
            let p = pseudo_observations(&s);
            for l in 0..2 {
                let mut r = p.column_ranks(l).to_vec();
                r.sort_unstable();
                prop_assert_eq!(r, (1..=n as u32).collect::<Vec<_>>());
            }
        }
    }
}
