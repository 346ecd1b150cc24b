//! Multiplier bootstrap for the two-sample copula process.
//!
//! Replicate `h` reweights each observation by a centered Exp(1) multiplier:
//!
//! ```text
//! G_h(u)   = n^{-1/2} sum_i (xi_i - mean xi) prod_l f_il(u_l)
//! C_h(u)   = G_h(u) - sum_l G_h(u^(l)) dC(u)/du_l
//! F_h(u)   = sqrt(1 - lambda) C_h(u) - sqrt(lambda) D_h(u)
//! ```
//!
//! where `u^(l)` keeps coordinate `l` and sets the others to one, and `f_il`
//! are the estimator's per-observation factors. The replicate statistics are
//! `integral F_h^2 du`, `integral F_h^2 dC_{n1}` and `sup |F_h|`.
//!
//! [`g_hat_process`] and [`replicate_process_c`] evaluate one replicate point
//! by point. [`replicate_triples`] computes a batch of replicates at once as
//! matrix products against the grid projection and is what the tests run.

use log::warn;
use ndarray::{s, Array2};
use rand_distr::{Distribution, Exp1};

use crate::bernstein::EvaluationGrid;
use crate::copula::{row_means, stieltjes_cell_masses, CopulaEvaluator, GridProjection, Smoothing};
use crate::error::{domain_err, Result};
use crate::rng::RngStream;
use crate::sample::Sample;
use crate::statistics::{integrate_process, observed_from_surfaces, SampleSizes, StatisticTriple};

/// Centered multipliers of one replicate: one vector per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierBlock {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

fn centered(mut xs: Vec<f64>) -> Vec<f64> {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    for x in xs.iter_mut() {
        *x -= mean;
    }
    xs
}

/// For each `h`, `n1 + n2` Exp(1) draws from substream `h`; the first `n1`
/// and the last `n2` are centered by their own means.
pub fn draw_centered_multipliers(
    n1: usize,
    n2: usize,
    replicates: usize,
    stream: &RngStream,
) -> Result<Vec<MultiplierBlock>> {
    if n1 < 2 || n2 < 2 {
        return Err(domain_err!("multipliers need sizes >= 2 (got {n1}, {n2})"));
    }
    Ok((0..replicates)
        .map(|h| {
            let mut rng = stream.substream(h as u64).rng();
            let mut draws: Vec<f64> = (0..n1 + n2).map(|_| Exp1.sample(&mut rng)).collect();
            let second = draws.split_off(n1);
            MultiplierBlock { first: centered(draws), second: centered(second) }
        })
        .collect())
}

/// Multipliers for paired rows: one centered vector shared by both halves.
pub fn draw_paired_multipliers(n: usize, replicates: usize, stream: &RngStream) -> Result<Vec<MultiplierBlock>> {
    if n < 2 {
        return Err(domain_err!("multipliers need n >= 2 (got {n})"));
    }
    Ok((0..replicates)
        .map(|h| {
            let mut rng = stream.substream(h as u64).rng();
            let xi = centered((0..n).map(|_| Exp1.sample(&mut rng)).collect());
            MultiplierBlock { first: xi.clone(), second: xi }
        })
        .collect())
}

/// Right-tail p-value `(1/H) #{h : replicate_h >= observed}`.
pub fn p_value(observed: f64, replicates: &[f64]) -> f64 {
    if replicates.is_empty() {
        return f64::NAN;
    }
    replicates.iter().filter(|&&r| r >= observed).count() as f64 / replicates.len() as f64
}

/// `G_h` at each of `points`, evaluated observation by observation.
pub fn g_hat_process(ev: &CopulaEvaluator, xi_centered: &[f64], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = ev.n();
    if xi_centered.len() != n {
        return Err(domain_err!("{} multipliers for {n} observations", xi_centered.len()));
    }
    let d = ev.pseudo().dim();
    let norm = (n as f64).sqrt();
    points
        .iter()
        .map(|u| {
            if u.len() != d {
                return Err(domain_err!("point has dimension {}, expected {d}", u.len()));
            }
            let tables = (0..d)
                .map(|l| ev.factor_table(l, &u[l..=l]))
                .collect::<Result<Vec<_>>>()?;
            let total: f64 = (0..n)
                .map(|i| xi_centered[i] * tables.iter().map(|t| t[[0, i]]).product::<f64>())
                .sum();
            Ok(total / norm)
        })
        .collect()
}

/// One replicate `C_h` on the grid, evaluated point by point.
pub fn replicate_process_c(ev: &CopulaEvaluator, xi_centered: &[f64], grid: &EvaluationGrid) -> Result<Vec<f64>> {
    let d = grid.dim();
    let points: Vec<Vec<f64>> = grid.points().map(|p| p.to_vec()).collect();
    let g = g_hat_process(ev, xi_centered, &points)?;
    let mut out = Vec::with_capacity(points.len());
    for (u, g_u) in points.iter().zip(g) {
        let mut value = g_u;
        for l in 0..d {
            let mut margin = vec![1.0; d];
            margin[l] = u[l];
            let g_margin = g_hat_process(ev, xi_centered, &[margin])?[0];
            value -= g_margin * ev.partial_derivative(u, l)?;
        }
        out.push(value);
    }
    Ok(out)
}

/// Replicate statistics of `F = sqrt(1 - lambda) C_h - sqrt(lambda) D_h`,
/// with the `S` integral taken against the cell masses of `ev_c`.
pub fn replicate_statistics(
    rep_c: &[f64],
    rep_d: &[f64],
    sizes: SampleSizes,
    ev_c: &CopulaEvaluator,
    grid: &EvaluationGrid,
) -> Result<StatisticTriple> {
    if rep_c.len() != grid.len() || rep_d.len() != grid.len() {
        return Err(domain_err!(
            "processes of length {} and {} do not match a grid of {} points",
            rep_c.len(),
            rep_d.len(),
            grid.len()
        ));
    }
    let masses = stieltjes_cell_masses(ev_c, grid)?;
    let lambda = sizes.lambda();
    Ok(combine_and_integrate(rep_c, rep_d, lambda, &masses, grid.cell_volume()))
}

pub(crate) fn combine_and_integrate(
    rep_c: &[f64],
    rep_d: &[f64],
    lambda: f64,
    masses: &[f64],
    cell_volume: f64,
) -> StatisticTriple {
    let (wc, wd) = ((1.0 - lambda).sqrt(), lambda.sqrt());
    let f: Vec<f64> = rep_c.iter().zip(rep_d).map(|(c, d)| wc * c - wd * d).collect();
    integrate_process(&f, masses, cell_volume)
}

/// Grid quantities of one sample needed by every replicate.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub evaluator: CopulaEvaluator,
    pub projection: GridProjection,
    /// Surface values at the grid points.
    pub surface: Vec<f64>,
    /// Partial derivatives at the grid points, one vector per axis.
    pub partials: Vec<Vec<f64>>,
}

impl PreparedSample {
    pub fn new(evaluator: CopulaEvaluator, grid: &EvaluationGrid) -> Result<Self> {
        let projection = evaluator.project(grid)?;
        let surface = row_means(&projection.weights);
        let partials = evaluator.grid_partials(grid, &projection)?;
        Ok(Self { evaluator, projection, surface, partials })
    }

    /// `C_h` on the grid for a batch of multiplier vectors (`batch x n`).
    fn replicate_processes(&self, xi: &Array2<f64>, axis_index: &[Vec<usize>]) -> Array2<f64> {
        let norm = (self.evaluator.n() as f64).sqrt();
        let mut processes = xi.dot(&self.projection.weights.t());
        processes.mapv_inplace(|v| v / norm);
        for (l, factors) in self.projection.factors.iter().enumerate() {
            let mut margins = xi.dot(&factors.t());
            margins.mapv_inplace(|v| v / norm);
            let partial = &self.partials[l];
            let index = &axis_index[l];
            for (mut row, margin) in processes.rows_mut().into_iter().zip(margins.rows()) {
                for (p, v) in row.iter_mut().enumerate() {
                    *v -= margin[index[p]] * partial[p];
                }
            }
        }
        processes
    }
}

/// Per-axis cell index of every grid point, `[axis][point]`.
pub(crate) fn axis_index_table(grid: &EvaluationGrid) -> Vec<Vec<usize>> {
    let mut table = vec![Vec::with_capacity(grid.len()); grid.dim()];
    for p in 0..grid.len() {
        for (l, j) in grid.axis_indices(p).into_iter().enumerate() {
            table[l].push(j);
        }
    }
    table
}

const BATCH: usize = 32;

/// Replicate statistics for every multiplier block, batched through matrix
/// products. `masses` are the cell masses of the first sample's estimator.
pub fn replicate_triples(
    first: &PreparedSample,
    second: &PreparedSample,
    blocks: &[MultiplierBlock],
    sizes: SampleSizes,
    masses: &[f64],
    grid: &EvaluationGrid,
) -> Result<Vec<StatisticTriple>> {
    let (n1, n2) = (first.evaluator.n(), second.evaluator.n());
    if let Some(b) = blocks.iter().find(|b| b.first.len() != n1 || b.second.len() != n2) {
        return Err(domain_err!(
            "multiplier block of sizes ({}, {}) for samples of sizes ({n1}, {n2})",
            b.first.len(),
            b.second.len()
        ));
    }
    let axis_index = axis_index_table(grid);
    let lambda = sizes.lambda();
    let mut out = Vec::with_capacity(blocks.len());
    for chunk in blocks.chunks(BATCH) {
        let xi_c = Array2::from_shape_fn((chunk.len(), n1), |(b, i)| chunk[b].first[i]);
        let xi_d = Array2::from_shape_fn((chunk.len(), n2), |(b, i)| chunk[b].second[i]);
        let proc_c = first.replicate_processes(&xi_c, &axis_index);
        let proc_d = second.replicate_processes(&xi_d, &axis_index);
        for b in 0..chunk.len() {
            let rc = proc_c.slice(s![b, ..]);
            let rd = proc_d.slice(s![b, ..]);
            out.push(combine_and_integrate(
                rc.as_slice().expect("row-major process rows"),
                rd.as_slice().expect("row-major process rows"),
                lambda,
                masses,
                grid.cell_volume(),
            ));
        }
    }
    Ok(out)
}

/// Observed statistics and their replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplingOutcome {
    pub observed: StatisticTriple,
    pub replicates: Vec<StatisticTriple>,
}

impl ResamplingOutcome {
    pub fn p_values(&self) -> StatisticTriple {
        let col = |f: fn(&StatisticTriple) -> f64| -> Vec<f64> { self.replicates.iter().map(f).collect() };
        StatisticTriple {
            r: p_value(self.observed.r, &col(|t| t.r)),
            s: p_value(self.observed.s, &col(|t| t.s)),
            t: p_value(self.observed.t, &col(|t| t.t)),
        }
    }
}

pub(crate) fn warn_if_order_too_large(smoothing: Smoothing, n: usize) {
    if let Smoothing::Bernstein(m) = smoothing {
        if m.get() >= n {
            warn!("Bernstein order {m} >= sample size {n}: the multiplier bootstrap is not justified for m >= n");
        }
    }
}

/// Observed statistics and multiplier replicates from two prepared samples.
pub fn multiplier_outcome(
    first: &PreparedSample,
    second: &PreparedSample,
    blocks: &[MultiplierBlock],
    grid: &EvaluationGrid,
) -> Result<ResamplingOutcome> {
    let sizes = SampleSizes::new(first.evaluator.n(), second.evaluator.n())?;
    warn_if_order_too_large(first.evaluator.smoothing(), sizes.n1);
    warn_if_order_too_large(second.evaluator.smoothing(), sizes.n2);
    let masses = stieltjes_cell_masses(&first.evaluator, grid)?;
    let observed = observed_from_surfaces(&first.surface, &second.surface, &masses, sizes, grid.cell_volume());
    let replicates = replicate_triples(first, second, blocks, sizes, &masses, grid)?;
    Ok(ResamplingOutcome { observed, replicates })
}

/// Full multiplier test of two independent samples.
pub fn multiplier_test(
    x: &Sample,
    y: &Sample,
    smoothing: (Smoothing, Smoothing),
    replicates: usize,
    grid: &EvaluationGrid,
    stream: &RngStream,
) -> Result<ResamplingOutcome> {
    if x.dim() != y.dim() || x.dim() != grid.dim() {
        return Err(domain_err!(
            "dimensions differ: X has {}, Y has {}, grid has {}",
            x.dim(),
            y.dim(),
            grid.dim()
        ));
    }
    let first = PreparedSample::new(CopulaEvaluator::from_sample(x, smoothing.0), grid)?;
    let second = PreparedSample::new(CopulaEvaluator::from_sample(y, smoothing.1), grid)?;
    let blocks = draw_centered_multipliers(x.n(), y.n(), replicates, stream)?;
    multiplier_outcome(&first, &second, &blocks, grid)
}
