//! Clayton and Gaussian copula samplers and Kendall's tau conversions.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::rng::RngStream;
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Clayton,
    Gaussian,
    Independence,
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::Independence => "independence",
        })
    }
}

/// A parametric copula: Clayton with parameter `theta >= 0`, Gaussian with
/// common pairwise correlation `rho`, or independence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub family: CopulaFamily,
    pub dim: usize,
    pub parameter: f64,
}

impl CopulaModel {
    pub fn new(family: CopulaFamily, dim: usize, parameter: f64) -> Result<Self> {
        if dim < 2 {
            return Err(domain_err!("copula dimension must be at least 2, got {dim}"));
        }
        match family {
            CopulaFamily::Clayton if !(parameter >= 0.0 && parameter.is_finite()) => {
                return Err(domain_err!("Clayton parameter must be >= 0, got {parameter}"));
            }
            CopulaFamily::Gaussian => {
                equicorrelation_cholesky(dim, parameter)?;
            }
            _ => {}
        }
        Ok(Self { family, dim, parameter })
    }

    pub fn sample(&self, n: usize, stream: &RngStream) -> Result<Sample> {
        match self.family {
            CopulaFamily::Clayton => sample_clayton(n, self.dim, self.parameter, stream),
            CopulaFamily::Gaussian => sample_gaussian(n, self.dim, self.parameter, stream),
            CopulaFamily::Independence => sample_clayton(n, self.dim, 0.0, stream),
        }
    }
}

/// `n` rows from the `d`-dimensional Clayton copula (Marshall-Olkin
/// frailty construction); `theta = 0` gives independent uniforms.
pub fn sample_clayton(n: usize, d: usize, theta: f64, stream: &RngStream) -> Result<Sample> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(domain_err!("Clayton parameter must be >= 0, got {theta}"));
    }
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(n * d);
    if theta == 0.0 {
        data.extend((0..n * d).map(|_| rng.gen::<f64>()));
        return Sample::new(data, n, d);
    }
    let frailty = Gamma::new(1.0 / theta, 1.0)
        .map_err(|e| domain_err!("cannot build Gamma(1/{theta}, 1): {e}"))?;
    for _ in 0..n {
        let v: f64 = frailty.sample(&mut rng);
        for _ in 0..d {
            let e: f64 = Exp1.sample(&mut rng);
            data.push((-(e / v).ln_1p() / theta).exp());
        }
    }
    Sample::new(data, n, d)
}

/// Lower Cholesky factor (row-major `d x d`) of the equicorrelation matrix.
fn equicorrelation_cholesky(d: usize, rho: f64) -> Result<Vec<f64>> {
    let not_pd = || {
        domain_err!("equicorrelation matrix with rho = {rho} and d = {d} is not positive definite")
    };
    if !rho.is_finite() {
        return Err(not_pd());
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let a = if i == j { 1.0 } else { rho };
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let diag = a - s;
                if diag <= 0.0 {
                    return Err(not_pd());
                }
                l[i * d + i] = diag.sqrt();
            } else {
                l[i * d + j] = (a - s) / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// `n` rows `Z = L W` with `L L' ` the equicorrelation matrix. The normal CDF
/// is not applied: every downstream statistic depends on ranks only.
pub fn sample_gaussian(n: usize, d: usize, rho: f64, stream: &RngStream) -> Result<Sample> {
    let l = equicorrelation_cholesky(d, rho)?;
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(n * d);
    let mut w = vec![0.0; d];
    for _ in 0..n {
        for x in w.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        for i in 0..d {
            data.push((0..=i).map(|k| l[i * d + k] * w[k]).sum());
        }
    }
    Sample::new(data, n, d)
}

/// Clayton parameter with Kendall's tau `tau`: `2 tau / (1 - tau)`.
pub fn clayton_theta_from_tau(tau: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(domain_err!("Clayton needs Kendall's tau in [0, 1), got {tau}"));
    }
    Ok(2.0 * tau / (1.0 - tau))
}

/// Gaussian correlation with Kendall's tau `tau`: `sin(pi tau / 2)`.
pub fn gaussian_rho_from_tau(tau: f64) -> Result<f64> {
    if !(tau.abs() < 1.0) {
        return Err(domain_err!("Kendall's tau must lie in (-1, 1), got {tau}"));
    }
    Ok((std::f64::consts::FRAC_PI_2 * tau).sin())
}

fn tied_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev = None;
    for x in sorted {
        if prev == Some(x) {
            run += 1;
        } else {
            total += run * (run.saturating_sub(1)) / 2;
            run = 1;
        }
        prev = Some(x);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Sorts `v` and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// `(concordant - discordant) / (n (n - 1) / 2)`, tied pairs counting as
/// neither. `O(n log n)` by counting inversions.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(domain_err!("columns differ in length: {n} vs {}", y.len()));
    }
    if n < 2 {
        return Err(domain_err!("Kendall's tau needs at least 2 pairs, got {n}"));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let x_ties = tied_pairs(pairs.iter().map(|p| p.0));
    let mut joint = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let y_ties = tied_pairs(ys.iter().copied());
    let total = (n as u64) * (n as u64 - 1) / 2;
    let score = total as i128 - x_ties as i128 - y_ties as i128 + joint as i128 - 2 * swaps as i128;
    Ok(score as f64 / total as f64)
}

/// Kendall's tau between columns `a` and `b` of a sample.
pub fn sample_kendall_tau(sample: &Sample, a: usize, b: usize) -> Result<f64> {
    if a >= sample.dim() || b >= sample.dim() {
        return Err(domain_err!("column index out of range for d = {}", sample.dim()));
    }
    kendall_tau(&sample.column(a), &sample.column(b))
}
