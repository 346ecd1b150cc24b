//! Subsampling replicates without replacement.
//!
//! Replicate `h` draws `b1` rows of X and `b2` rows of Y, re-ranks them, and
//! forms the corrected processes
//!
//! ```text
//! C_h(u) = sqrt(b1 / (1 - b1/n1)) (C_{b1}(u) - C_{n1}(u))
//! ```
//!
//! combined with weight `lambda_b = b1 / (b1 + b2)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bernstein::{BernsteinOrder, EvaluationGrid};
use crate::copula::{stieltjes_cell_masses, CopulaEvaluator, EstimatorMode, Smoothing};
use crate::error::{domain_err, Result};
use crate::multiplier::{combine_and_integrate, ResamplingOutcome};
use crate::rng::RngStream;
use crate::sample::Sample;
use crate::statistics::{observed_from_surfaces, SampleSizes, StatisticTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub b1: usize,
    pub b2: usize,
    pub m_sub1: BernsteinOrder,
    pub m_sub2: BernsteinOrder,
    pub replicates: usize,
}

impl SubsampleConfig {
    /// `b_r = floor(0.28 n_r)` with `m_sub_r = b_r`.
    pub fn auto(n1: usize, n2: usize, replicates: usize) -> Result<Self> {
        let b1 = default_subsample_size(n1);
        let b2 = default_subsample_size(n2);
        let cfg = Self {
            b1,
            b2,
            m_sub1: BernsteinOrder::new(b1.max(1))?,
            m_sub2: BernsteinOrder::new(b2.max(1))?,
            replicates,
        };
        cfg.check(n1, n2)?;
        Ok(cfg)
    }

    pub fn check(&self, n1: usize, n2: usize) -> Result<()> {
        for (b, n) in [(self.b1, n1), (self.b2, n2)] {
            if b < 2 || b >= n {
                return Err(domain_err!("subsample size {b} must satisfy 2 <= b < n = {n}"));
            }
        }
        if self.replicates == 0 {
            return Err(domain_err!("at least one subsample replicate is required"));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.b1 as f64 / (self.b1 + self.b2) as f64
    }
}

/// `floor(0.28 n)`, in integer arithmetic.
pub fn default_subsample_size(n: usize) -> usize {
    n * 28 / 100
}

/// `sqrt(b / (1 - b/n))`.
pub fn correction_factor(n: usize, b: usize) -> f64 {
    (b as f64 * n as f64 / (n - b) as f64).sqrt()
}

/// `b` distinct indices from `0..n`, uniformly without replacement, sorted.
pub fn draw_subsample_indices(n: usize, b: usize, stream: &RngStream) -> Result<Vec<usize>> {
    if b < 2 || b >= n {
        return Err(domain_err!("subsample size {b} must satisfy 2 <= b < n = {n}"));
    }
    let mut rng = stream.rng();
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..b {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(b);
    pool.sort_unstable();
    Ok(pool)
}

/// Corrected subsample process on the grid, given the full-sample surface
/// there. `sub_rows` are re-ranked on their own.
pub fn subsample_replicate_process(
    full_surface: &[f64],
    sub_rows: &Sample,
    smoothing: Smoothing,
    n: usize,
    grid: &EvaluationGrid,
) -> Result<Vec<f64>> {
    let b = sub_rows.n();
    if b >= n {
        return Err(domain_err!("subsample of {b} rows from a sample of {n}"));
    }
    if full_surface.len() != grid.len() {
        return Err(domain_err!(
            "full surface has {} values for a grid of {} points",
            full_surface.len(),
            grid.len()
        ));
    }
    let sub = CopulaEvaluator::from_sample(sub_rows, smoothing).surface(grid)?;
    let k = correction_factor(n, b);
    Ok(sub.iter().zip(full_surface).map(|(s, f)| k * (s - f)).collect())
}

/// How the two index sets of a replicate relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexCoupling {
    /// Independent draws for X and Y.
    Independent,
    /// One index set for both (paired rows; requires `b1 == b2`, `n1 == n2`).
    Shared,
}

/// Full-sample quantities reused by every replicate.
pub struct SubsampleInputs<'a> {
    pub x: &'a Sample,
    pub y: &'a Sample,
    pub surface_x: &'a [f64],
    pub surface_y: &'a [f64],
    /// Cell masses of the first full-sample estimator.
    pub masses: &'a [f64],
}

/// Replicate statistics for `h = 0..H`, each from substream `h`.
pub fn subsample_replicates(
    inputs: &SubsampleInputs<'_>,
    cfg: &SubsampleConfig,
    mode: EstimatorMode,
    coupling: IndexCoupling,
    grid: &EvaluationGrid,
    stream: &RngStream,
) -> Result<Vec<StatisticTriple>> {
    let (n1, n2) = (inputs.x.n(), inputs.y.n());
    cfg.check(n1, n2)?;
    if coupling == IndexCoupling::Shared && (n1 != n2 || cfg.b1 != cfg.b2) {
        return Err(domain_err!("shared subsampling needs equal sizes (n = {n1}, {n2}; b = {}, {})", cfg.b1, cfg.b2));
    }
    let sm1 = mode.smoothing(cfg.m_sub1);
    let sm2 = mode.smoothing(cfg.m_sub2);
    let lambda = cfg.lambda();
    (0..cfg.replicates)
        .map(|h| {
            let rep = stream.substream(h as u64);
            let ix = draw_subsample_indices(n1, cfg.b1, &rep.substream(0))?;
            let iy = match coupling {
                IndexCoupling::Independent => draw_subsample_indices(n2, cfg.b2, &rep.substream(1))?,
                IndexCoupling::Shared => ix.clone(),
            };
            let pc = subsample_replicate_process(inputs.surface_x, &inputs.x.select_rows(&ix)?, sm1, n1, grid)?;
            let pd = subsample_replicate_process(inputs.surface_y, &inputs.y.select_rows(&iy)?, sm2, n2, grid)?;
            Ok(combine_and_integrate(&pc, &pd, lambda, inputs.masses, grid.cell_volume()))
        })
        .collect()
}

/// Full subsampling test of two independent samples.
pub fn subsample_test(
    x: &Sample,
    y: &Sample,
    cfg: &SubsampleConfig,
    mode: EstimatorMode,
    orders: (BernsteinOrder, BernsteinOrder),
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
    let ev_x = CopulaEvaluator::from_sample(x, mode.smoothing(orders.0));
    let ev_y = CopulaEvaluator::from_sample(y, mode.smoothing(orders.1));
    let surface_x = ev_x.surface(grid)?;
    let surface_y = ev_y.surface(grid)?;
    let masses = stieltjes_cell_masses(&ev_x, grid)?;
    let sizes = SampleSizes::new(x.n(), y.n())?;
    let observed = observed_from_surfaces(&surface_x, &surface_y, &masses, sizes, grid.cell_volume());
    let inputs = SubsampleInputs { x, y, surface_x: &surface_x, surface_y: &surface_y, masses: &masses };
    let replicates = subsample_replicates(&inputs, cfg, mode, IndexCoupling::Independent, grid, stream)?;
    Ok(ResamplingOutcome { observed, replicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bernstein::{bernstein_weights, make_grid};
    use crate::samplers::{clayton_theta_from_tau, sample_clayton};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn random_sample(seed: u64, n: usize, d: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sample::new((0..n * d).map(|_| rng.gen()).collect(), n, d).unwrap()
    }

    fn order(m: usize) -> BernsteinOrder {
        BernsteinOrder::new(m).unwrap()
    }

    #[test]
    fn indices_are_distinct_sorted_and_deterministic() {
        let s = RngStream::new(8);
        let ix = draw_subsample_indices(5, 4, &s).unwrap();
        assert_eq!(ix.len(), 4);
        assert!(ix.windows(2).all(|w| w[0] < w[1]));
        assert!(ix.iter().all(|&i| i < 5));
        let a = draw_subsample_indices(10, 3, &s).unwrap();
        assert_eq!(a, draw_subsample_indices(10, 3, &s).unwrap());
        assert!(draw_subsample_indices(5, 5, &s).is_err());
        assert!(draw_subsample_indices(5, 1, &s).is_err());
    }

    #[test]
    fn pairs_are_uniform() {
        let root = RngStream::new(1);
        let draws = 100_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for k in 0..draws {
            *counts.entry(draw_subsample_indices(5, 2, &root.substream(k)).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        for (pair, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() <= 0.01, "{pair:?}: {freq}");
        }
    }

    #[test]
    fn correction_factor_at_half() {
        for n in [10, 50, 64] {
            assert_abs_diff_eq!(correction_factor(n, n / 2), (n as f64).sqrt(), epsilon = 1e-12);
        }
        assert_eq!(default_subsample_size(50), 14);
        assert_eq!(default_subsample_size(100), 28);
        assert_eq!(default_subsample_size(25), 7);
    }

    #[test]
    fn auto_config() {
        let cfg = SubsampleConfig::auto(100, 50, 200).unwrap();
        assert_eq!((cfg.b1, cfg.b2, cfg.m_sub1.get(), cfg.m_sub2.get()), (28, 14, 28, 14));
        assert_abs_diff_eq!(cfg.lambda(), 28.0 / 42.0, epsilon = 1e-15);
        assert!(SubsampleConfig::auto(5, 50, 10).is_err());
    }

    /// Bernstein value of `rows` at `u` by explicit ranking and the nested sum.
    fn slow_bernstein(rows: &[Vec<f64>], m: usize, u: &[f64]) -> f64 {
        let b = rows.len();
        let rank = |i: usize, l: usize| rows.iter().filter(|r| r[l] <= rows[i][l]).count();
        let w: Vec<Vec<f64>> = u.iter().map(|&x| bernstein_weights(order(m), x).unwrap()).collect();
        let mut total = 0.0;
        for k0 in 0..=m {
            for k1 in 0..=m {
                let c = (0..b).filter(|&i| rank(i, 0) * m <= k0 * b && rank(i, 1) * m <= k1 * b).count();
                total += c as f64 / b as f64 * w[0][k0] * w[1][k1];
            }
        }
        total
    }

    #[test]
    fn replicate_process_matches_slow_recomputation() {
        let x = random_sample(3, 12, 2);
        let grid = make_grid(2, 4).unwrap();
        let full = CopulaEvaluator::from_sample(&x, Smoothing::Bernstein(order(3)));
        let surface = full.surface(&grid).unwrap();
        let idx = draw_subsample_indices(12, 7, &RngStream::new(5)).unwrap();
        let sub = x.select_rows(&idx).unwrap();
        let got = subsample_replicate_process(&surface, &sub, Smoothing::Bernstein(order(5)), 12, &grid).unwrap();
        let rows: Vec<Vec<f64>> = sub.rows().map(|r| r.to_vec()).collect();
        let all: Vec<Vec<f64>> = x.rows().map(|r| r.to_vec()).collect();
        for (p, u) in grid.points().enumerate() {
            let expect = correction_factor(12, 7) * (slow_bernstein(&rows, 5, u) - slow_bernstein(&all, 3, u));
            assert_abs_diff_eq!(got[p], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn dropping_one_row_moves_the_process_by_a_bounded_amount() {
        // With one row dropped, at most 1 + 2d pseudo-rows change membership
        // in any lower orthant, so |C_{n-1} - C_n| <= (2 + 2d)/(n - 1) for
        // the empirical copula; Bernstein smoothing of the same order averages
        // lattice values and keeps the bound.
        let (n, d) = (20, 2);
        let x = random_sample(9, n, d);
        let grid = make_grid(d, 15).unwrap();
        let bound = correction_factor(n, n - 1) * (2 + 2 * d) as f64 / (n - 1) as f64;
        for smoothing in [Smoothing::Empirical, Smoothing::Bernstein(order(4))] {
            let surface = CopulaEvaluator::from_sample(&x, smoothing).surface(&grid).unwrap();
            for drop in 0..n {
                let keep: Vec<usize> = (0..n).filter(|&i| i != drop).collect();
                let sub = x.select_rows(&keep).unwrap();
                let p = subsample_replicate_process(&surface, &sub, smoothing, n, &grid).unwrap();
                let sup = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(sup <= bound + 1e-12, "{sup} > {bound}");
            }
        }
    }

    #[test]
    fn identical_samples_give_unit_p_values() {
        let x = random_sample(4, 40, 2);
        let grid = make_grid(2, 10).unwrap();
        let cfg = SubsampleConfig::auto(40, 40, 30).unwrap();
        for mode in [EstimatorMode::Bernstein, EstimatorMode::Empirical] {
            let out = subsample_test(&x, &x, &cfg, mode, (order(8), order(8)), &grid, &RngStream::new(2)).unwrap();
            assert_eq!(out.observed, StatisticTriple::default());
            assert_eq!(out.p_values(), StatisticTriple { r: 1.0, s: 1.0, t: 1.0 });
        }
    }

    #[test]
    fn shared_coupling_needs_equal_sizes() {
        let x = random_sample(4, 40, 2);
        let y = random_sample(5, 30, 2);
        let grid = make_grid(2, 5).unwrap();
        let sx = vec![0.0; grid.len()];
        let inputs = SubsampleInputs { x: &x, y: &y, surface_x: &sx, surface_y: &sx, masses: &sx };
        let cfg = SubsampleConfig::auto(40, 30, 3).unwrap();
        let r = subsample_replicates(&inputs, &cfg, EstimatorMode::Bernstein, IndexCoupling::Shared, &grid, &RngStream::new(0));
        assert!(r.is_err());
    }

    #[test]
    fn null_p_values_are_not_anti_conservative() {
        // With b = 14 and m_sub = b the replicates are wider than the null
        // distribution at n = 50, so p-values lean towards one. The property
        // that matters for level control is one-sided: the empirical CDF of
        // the p-values never sits far above the uniform CDF.
        let theta = clayton_theta_from_tau(0.3).unwrap();
        let grid = make_grid(2, 20).unwrap();
        let cfg = SubsampleConfig::auto(50, 50, 200).unwrap();
        let mut p: Vec<f64> = (0..200u64)
            .map(|r| {
                let root = RngStream::new(900 + r);
                let x = sample_clayton(50, 2, theta, &root.substream(1)).unwrap();
                let y = sample_clayton(50, 2, theta, &root.substream(2)).unwrap();
                subsample_test(&x, &y, &cfg, EstimatorMode::Bernstein, (order(10), order(10)), &grid, &root.substream(4))
                    .unwrap()
                    .p_values()
                    .s
            })
            .collect();
        p.sort_unstable_by(f64::total_cmp);
        let n = p.len() as f64;
        let excess = p
            .iter()
            .enumerate()
            .map(|(i, &x)| (i + 1) as f64 / n - x)
            .fold(0.0, f64::max);
        assert!(excess <= 0.15, "one-sided distance {excess}");
        let level = p.iter().filter(|&&x| x <= 0.05).count() as f64 / n;
        assert!(level <= 0.08, "level {level}");
    }
}
