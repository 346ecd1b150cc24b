//! Cramér–von Mises (`R`, `S`) and Kolmogorov–Smirnov (`T`) distances between
//! two copula surfaces, approximated on the midpoint grid.

use serde::{Deserialize, Serialize};

use crate::bernstein::EvaluationGrid;
use crate::copula::{stieltjes_cell_masses, CopulaSurface};
use crate::error::{domain_err, Result};

/// Sizes of the two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub n1: usize,
    pub n2: usize,
}

impl SampleSizes {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(domain_err!("sample sizes must be positive (got {n1}, {n2})"));
        }
        Ok(Self { n1, n2 })
    }

    /// `n1 / (n1 + n2)`.
    pub fn lambda(&self) -> f64 {
        self.n1 as f64 / (self.n1 + self.n2) as f64
    }

    /// `n2 lambda`, computed as `n1 n2 / (n1 + n2)` so that it is symmetric
    /// in the two samples.
    pub fn scale(&self) -> f64 {
        (self.n1 as f64 * self.n2 as f64) / (self.n1 + self.n2) as f64
    }

    pub fn swapped(&self) -> Self {
        Self { n1: self.n2, n2: self.n1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    R,
    S,
    T,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::R, Statistic::S, Statistic::T];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::R => "R",
            Statistic::S => "S",
            Statistic::T => "T",
        }
    }
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One value of each statistic.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatisticTriple {
    pub r: f64,
    pub s: f64,
    pub t: f64,
}

impl StatisticTriple {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::R => self.r,
            Statistic::S => self.s,
            Statistic::T => self.t,
        }
    }
}

/// `(cell_volume * sum f^2, sum mass * f^2, max |f|)` for process values `f`
/// at the grid points.
pub(crate) fn integrate_process(values: &[f64], masses: &[f64], cell_volume: f64) -> StatisticTriple {
    let (mut sq, mut weighted, mut sup) = (0.0, 0.0, 0.0f64);
    for (&f, &mass) in values.iter().zip(masses) {
        let f2 = f * f;
        sq += f2;
        weighted += mass * f2;
        sup = sup.max(f.abs());
    }
    StatisticTriple { r: cell_volume * sq, s: weighted, t: sup }
}

/// Observed statistics from surface values on the grid and the first
/// surface's cell masses.
pub(crate) fn observed_from_surfaces(
    c: &[f64],
    d: &[f64],
    masses: &[f64],
    sizes: SampleSizes,
    cell_volume: f64,
) -> StatisticTriple {
    let gap: Vec<f64> = c.iter().zip(d).map(|(a, b)| a - b).collect();
    let raw = integrate_process(&gap, masses, cell_volume);
    let scale = sizes.scale();
    StatisticTriple { r: scale * raw.r, s: scale * raw.s, t: scale.sqrt() * raw.t }
}

fn surfaces<C, D>(c: &C, d: &D, grid: &EvaluationGrid) -> Result<(Vec<f64>, Vec<f64>)>
where
    C: CopulaSurface + ?Sized,
    D: CopulaSurface + ?Sized,
{
    if c.dim() != grid.dim() || d.dim() != grid.dim() {
        return Err(domain_err!(
            "surfaces of dimension {} and {} do not match grid dimension {}",
            c.dim(),
            d.dim(),
            grid.dim()
        ));
    }
    Ok((c.product_values(grid.axis_values())?, d.product_values(grid.axis_values())?))
}

/// `n2 lambda * integral (C - D)^2 du` by the midpoint rule.
pub fn compute_r<C, D>(c: &C, d: &D, sizes: SampleSizes, grid: &EvaluationGrid) -> Result<f64>
where
    C: CopulaSurface + ?Sized,
    D: CopulaSurface + ?Sized,
{
    let (cv, dv) = surfaces(c, d, grid)?;
    let sq: f64 = cv.iter().zip(&dv).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sizes.scale() * (grid.cell_volume() * sq))
}

/// `n2 lambda * integral (C - D)^2 dC`, integrating against the cell masses
/// of the first surface with the integrand taken at cell midpoints.
pub fn compute_s<C, D>(c: &C, d: &D, sizes: SampleSizes, grid: &EvaluationGrid) -> Result<f64>
where
    C: CopulaSurface + ?Sized,
    D: CopulaSurface + ?Sized,
{
    let (cv, dv) = surfaces(c, d, grid)?;
    let masses = stieltjes_cell_masses(c, grid)?;
    let weighted: f64 = cv
        .iter()
        .zip(&dv)
        .zip(&masses)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum();
    Ok(sizes.scale() * weighted)
}

/// `sqrt(n2 lambda) * max |C - D|` over the grid points.
pub fn compute_t<C, D>(c: &C, d: &D, sizes: SampleSizes, grid: &EvaluationGrid) -> Result<f64>
where
    C: CopulaSurface + ?Sized,
    D: CopulaSurface + ?Sized,
{
    let (cv, dv) = surfaces(c, d, grid)?;
    let sup = cv.iter().zip(&dv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(sizes.scale().sqrt() * sup)
}

/// All three statistics with one evaluation of each surface.
pub fn observed_statistics<C, D>(
    c: &C,
    d: &D,
    sizes: SampleSizes,
    grid: &EvaluationGrid,
) -> Result<StatisticTriple>
where
    C: CopulaSurface + ?Sized,
    D: CopulaSurface + ?Sized,
{
    let (cv, dv) = surfaces(c, d, grid)?;
    let masses = stieltjes_cell_masses(c, grid)?;
    Ok(observed_from_surfaces(&cv, &dv, &masses, sizes, grid.cell_volume()))
}
