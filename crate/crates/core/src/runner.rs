//! Complete two-sample and paired-sample tests.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bernstein::{make_grid, BernsteinOrder};
use crate::copula::{stieltjes_cell_masses, CopulaEvaluator, EstimatorMode};
use crate::error::{config_err, domain_err, Result};
use crate::multiplier::{
    draw_centered_multipliers, draw_paired_multipliers, p_value, replicate_triples, warn_if_order_too_large,
    PreparedSample,
};
use crate::rng::{purpose, RngStream};
use crate::sample::Sample;
use crate::statistics::{observed_from_surfaces, SampleSizes, Statistic, StatisticTriple};
use crate::subsample::{
    default_subsample_size, subsample_replicates, IndexCoupling, SubsampleConfig, SubsampleInputs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Bernstein,
    Empirical,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> &'static [EstimatorMode] {
        match self {
            ModeSelection::Bernstein => &[EstimatorMode::Bernstein],
            ModeSelection::Empirical => &[EstimatorMode::Empirical],
            ModeSelection::Both => &[EstimatorMode::Bernstein, EstimatorMode::Empirical],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Multiplier,
    Subsample,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Multiplier => "multiplier",
            Method::Subsample => "subsample",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bernstein orders of the full samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderRule {
    /// `m_r = floor(n_r / 5)`.
    Auto,
    Explicit { m1: usize, m2: usize },
}

/// Subsample sizes and their Bernstein orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsampleRule {
    /// `b_r = floor(0.28 n_r)`, `m_sub_r = b_r`.
    Auto,
    Explicit { b1: usize, b2: usize, m_sub1: usize, m_sub2: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub mode: ModeSelection,
    pub orders: OrderRule,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub grid_points: usize,
    pub subsample: SubsampleRule,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            mode: ModeSelection::Both,
            orders: OrderRule::Auto,
            methods: vec![Method::Multiplier, Method::Subsample],
            replicates: 200,
            grid_points: 20,
            subsample: SubsampleRule::Auto,
            seed: 0,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(config_err!("the replicate count H must be at least 1"));
        }
        if self.grid_points < 2 {
            return Err(config_err!("the grid needs at least 2 points per axis (got {})", self.grid_points));
        }
        if self.methods.is_empty() {
            return Err(config_err!("no resampling method selected"));
        }
        if let OrderRule::Explicit { m1, m2 } = self.orders {
            if m1 == 0 || m2 == 0 {
                return Err(config_err!("explicit Bernstein orders must be >= 1 (got {m1}, {m2})"));
            }
        }
        Ok(())
    }

    fn uses(&self, method: Method) -> bool {
        self.methods.contains(&method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedOrders {
    pub m1: usize,
    pub m2: usize,
    pub b1: Option<usize>,
    pub b2: Option<usize>,
    pub m_sub1: Option<usize>,
    pub m_sub2: Option<usize>,
}

impl ResolvedOrders {
    fn orders(&self) -> (BernsteinOrder, BernsteinOrder) {
        let m = |v: usize| BernsteinOrder::new(v).expect("resolved orders are >= 1");
        (m(self.m1), m(self.m2))
    }

    fn subsample_config(&self, replicates: usize) -> Option<SubsampleConfig> {
        let m = |v: usize| BernsteinOrder::new(v).expect("resolved orders are >= 1");
        Some(SubsampleConfig {
            b1: self.b1?,
            b2: self.b2?,
            m_sub1: m(self.m_sub1?),
            m_sub2: m(self.m_sub2?),
            replicates,
        })
    }
}

/// Orders and subsample sizes for samples of sizes `n1`, `n2`. Subsample
/// fields are resolved only when the subsampling method is selected.
pub fn resolve_orders(n1: usize, n2: usize, cfg: &TestConfig) -> Result<ResolvedOrders> {
    cfg.validate()?;
    let (m1, m2) = match cfg.orders {
        OrderRule::Auto => {
            let (m1, m2) = (n1 / 5, n2 / 5);
            if m1 == 0 || m2 == 0 {
                return Err(config_err!(
                    "automatic orders floor(n/5) = ({m1}, {m2}) for sizes ({n1}, {n2}); give explicit orders"
                ));
            }
            (m1, m2)
        }
        OrderRule::Explicit { m1, m2 } => (m1, m2),
    };
    let mut out = ResolvedOrders { m1, m2, b1: None, b2: None, m_sub1: None, m_sub2: None };
    if cfg.uses(Method::Subsample) {
        let (b1, b2, s1, s2) = match cfg.subsample {
            SubsampleRule::Auto => {
                let (b1, b2) = (default_subsample_size(n1), default_subsample_size(n2));
                (b1, b2, b1, b2)
            }
            SubsampleRule::Explicit { b1, b2, m_sub1, m_sub2 } => (b1, b2, m_sub1, m_sub2),
        };
        for (b, n) in [(b1, n1), (b2, n2)] {
            if b < 2 || b >= n {
                return Err(config_err!("subsample size {b} for n = {n} must satisfy 2 <= b < n"));
            }
        }
        if s1 == 0 || s2 == 0 {
            return Err(config_err!("subsample Bernstein orders must be >= 1 (got {s1}, {s2})"));
        }
        out.b1 = Some(b1);
        out.b2 = Some(b2);
        out.m_sub1 = Some(s1);
        out.m_sub2 = Some(s2);
    }
    Ok(out)
}

/// Order statistics of one replicate set (type-7 quantiles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub count: usize,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

impl ReplicateSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            count: v.len(),
            min: q(0.0),
            q05: q(0.05),
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            max: q(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub statistic: Statistic,
    pub mode: EstimatorMode,
    pub method: Method,
    pub observed: f64,
    pub p_value: f64,
    #[serde(rename = "H")]
    pub h: usize,
    pub m1: usize,
    pub m2: usize,
    pub b1: Option<usize>,
    pub b2: Option<usize>,
    pub seed: u64,
    pub replicates: ReplicateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub sizes: SampleSizes,
    pub dim: usize,
    pub paired: bool,
    pub seed: u64,
    pub orders: ResolvedOrders,
    pub config: TestConfig,
    pub entries: Vec<ReportEntry>,
    /// Not serialized, so that reports of equal inputs are byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TestReport {
    pub fn entry(&self, mode: EstimatorMode, method: Method, statistic: Statistic) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.mode == mode && e.method == method && e.statistic == statistic)
    }

    pub fn p_value(&self, mode: EstimatorMode, method: Method, statistic: Statistic) -> Option<f64> {
        self.entry(mode, method, statistic).map(|e| e.p_value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// One `key=value` per line; entry keys are `<mode>.<method>.<statistic>.<field>`.
    pub fn to_key_value(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let o = &self.orders;
        let _ = writeln!(s, "n1={}\nn2={}\ndim={}\npaired={}\nseed={}", self.sizes.n1, self.sizes.n2, self.dim, self.paired, self.seed);
        let _ = writeln!(s, "m1={}\nm2={}\nb1={}\nb2={}", o.m1, o.m2, opt(o.b1), opt(o.b2));
        let _ = writeln!(s, "m_sub1={}\nm_sub2={}", opt(o.m_sub1), opt(o.m_sub2));
        let _ = writeln!(s, "H={}\ngrid_points={}", self.config.replicates, self.config.grid_points);
        for e in &self.entries {
            let k = format!("{}.{}.{}", e.mode, e.method, e.statistic);
            let _ = writeln!(s, "{k}.observed={}\n{k}.p_value={}", e.observed, e.p_value);
            let r = &e.replicates;
            let _ = writeln!(
                s,
                "{k}.replicates.count={}\n{k}.replicates.min={}\n{k}.replicates.median={}\n{k}.replicates.q95={}\n{k}.replicates.max={}",
                r.count, r.min, r.q50, r.q95, r.max
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pairing {
    Independent,
    Paired,
}

/// Two-sample test with all randomness drawn from `cfg.seed`.
pub fn two_sample_test(x: &Sample, y: &Sample, cfg: &TestConfig) -> Result<TestReport> {
    two_sample_test_with_stream(x, y, cfg, &RngStream::new(cfg.seed))
}

/// Two-sample test drawing from `stream` (studies pass per-repetition streams).
pub fn two_sample_test_with_stream(x: &Sample, y: &Sample, cfg: &TestConfig, stream: &RngStream) -> Result<TestReport> {
    run_test(x, y, cfg, stream, Pairing::Independent)
}

/// Splits `z` into its first and last `d` columns and tests them with paired
/// resampling: one multiplier per row, one subsample index set for both halves.
pub fn paired_sample_test(z: &Sample, d: usize, cfg: &TestConfig) -> Result<TestReport> {
    paired_sample_test_with_stream(z, d, cfg, &RngStream::new(cfg.seed))
}

pub fn paired_sample_test_with_stream(z: &Sample, d: usize, cfg: &TestConfig, stream: &RngStream) -> Result<TestReport> {
    let (x, y) = split_paired(z, d)?;
    run_test(&x, &y, cfg, stream, Pairing::Paired)
}

/// Halves of a paired sample.
pub fn split_paired(z: &Sample, d: usize) -> Result<(Sample, Sample)> {
    if z.dim() % 2 != 0 {
        return Err(domain_err!("a paired sample needs an even number of columns (got {})", z.dim()));
    }
    if z.dim() != 2 * d {
        return Err(domain_err!("a paired sample of dimension {d} needs {} columns (got {})", 2 * d, z.dim()));
    }
    Ok((z.select_columns(0..d)?, z.select_columns(d..2 * d)?))
}

fn run_test(x: &Sample, y: &Sample, cfg: &TestConfig, stream: &RngStream, pairing: Pairing) -> Result<TestReport> {
    let start = Instant::now();
    if x.dim() != y.dim() {
        return Err(domain_err!("X has dimension {} but Y has dimension {}", x.dim(), y.dim()));
    }
    let (n1, n2) = (x.n(), y.n());
    let orders = resolve_orders(n1, n2, cfg)?;
    let sizes = SampleSizes::new(n1, n2)?;
    let grid = make_grid(x.dim(), cfg.grid_points)?;
    let (m1, m2) = orders.orders();

    let blocks = if cfg.uses(Method::Multiplier) {
        let s = stream.substream(purpose::MULTIPLIER);
        Some(match pairing {
            Pairing::Independent => draw_centered_multipliers(n1, n2, cfg.replicates, &s)?,
            Pairing::Paired => draw_paired_multipliers(n1, cfg.replicates, &s)?,
        })
    } else {
        None
    };
    let sub_cfg = orders.subsample_config(cfg.replicates);
    let sub_stream = stream.substream(purpose::SUBSAMPLE);
    let coupling = match pairing {
        Pairing::Independent => IndexCoupling::Independent,
        Pairing::Paired => IndexCoupling::Shared,
    };

    let mut entries = Vec::new();
    for &mode in cfg.mode.modes() {
        let ev_x = CopulaEvaluator::from_sample(x, mode.smoothing(m1));
        let ev_y = CopulaEvaluator::from_sample(y, mode.smoothing(m2));
        let masses = stieltjes_cell_masses(&ev_x, &grid)?;
        let mut run = ModeRun { mode, orders, seed: stream.seed(), h: cfg.replicates, entries: &mut entries };
        if let Some(blocks) = &blocks {
            warn_if_order_too_large(ev_x.smoothing(), n1);
            warn_if_order_too_large(ev_y.smoothing(), n2);
            let px = PreparedSample::new(ev_x, &grid)?;
            let py = PreparedSample::new(ev_y, &grid)?;
            let observed = observed_from_surfaces(&px.surface, &py.surface, &masses, sizes, grid.cell_volume());
            let reps = replicate_triples(&px, &py, blocks, sizes, &masses, &grid)?;
            run.push(Method::Multiplier, observed, &reps);
            if let Some(sub_cfg) = &sub_cfg {
                let inputs = SubsampleInputs { x, y, surface_x: &px.surface, surface_y: &py.surface, masses: &masses };
                let reps = subsample_replicates(&inputs, sub_cfg, mode, coupling, &grid, &sub_stream)?;
                run.push(Method::Subsample, observed, &reps);
            }
        } else if let Some(sub_cfg) = &sub_cfg {
            let (sx, sy) = (ev_x.surface(&grid)?, ev_y.surface(&grid)?);
            let observed = observed_from_surfaces(&sx, &sy, &masses, sizes, grid.cell_volume());
            let inputs = SubsampleInputs { x, y, surface_x: &sx, surface_y: &sy, masses: &masses };
            let reps = subsample_replicates(&inputs, sub_cfg, mode, coupling, &grid, &sub_stream)?;
            run.push(Method::Subsample, observed, &reps);
        }
    }
    entries.sort_by_key(|e| (e.mode != EstimatorMode::Bernstein, e.method, e.statistic as u8));

    Ok(TestReport {
        sizes,
        dim: x.dim(),
        paired: pairing == Pairing::Paired,
        seed: stream.seed(),
        orders,
        config: cfg.clone(),
        entries,
        wall_time: start.elapsed(),
    })
}

struct ModeRun<'a> {
    mode: EstimatorMode,
    orders: ResolvedOrders,
    seed: u64,
    h: usize,
    entries: &'a mut Vec<ReportEntry>,
}

impl ModeRun<'_> {
    fn push(&mut self, method: Method, observed: StatisticTriple, reps: &[StatisticTriple]) {
        for stat in Statistic::ALL {
            let values: Vec<f64> = reps.iter().map(|t| t.get(stat)).collect();
            let obs = observed.get(stat);
            self.entries.push(ReportEntry {
                statistic: stat,
                mode: self.mode,
                method,
                observed: obs,
                p_value: p_value(obs, &values),
                h: self.h,
                m1: self.orders.m1,
                m2: self.orders.m2,
                b1: self.orders.b1,
                b2: self.orders.b2,
                seed: self.seed,
                replicates: ReplicateSummary::from_values(&values),
            });
        }
    }
}
