//! Non-stationary reward environments.
//!
//! Synthetic environments draw reward functions `f = sum_i alpha_i k(., x_i)`
//! from the RKHS of the grid kernel and switch between them abruptly or
//! interpolate them linearly. The price environment replays a table of
//! daily closing prices. Mean rewards are tabulated for every round up
//! front, so per-round lookups and best-arm queries are O(1).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{ArmKernel, DomainGrid, KernelSpec};

/// A function in the span of the arm kernel, stored by its coefficient on
/// every arm (zero for arms that are not centers).
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    coefficients: DVector<f64>,
    values: DVector<f64>,
    rkhs_norm: f64,
}

fn quadratic_norm(kernel: &ArmKernel, c: &DVector<f64>) -> f64 {
    (c.dot(&(kernel.gram() * c))).max(0.0).sqrt()
}

impl RkhsFunction {
    /// `f = sum_i alphas[i] k(., centers[i])`; repeated centers add up.
    pub fn new(kernel: &ArmKernel, centers: &[usize], alphas: &[f64]) -> Result<Self> {
        if centers.len() != alphas.len() {
            return Err(Error::input("centers and coefficients differ in length"));
        }
        let mut c = DVector::zeros(kernel.num_arms());
        for (&x, &a) in centers.iter().zip(alphas) {
            kernel.check_arm(x)?;
            if !a.is_finite() {
                return Err(Error::input("coefficients must be finite"));
            }
            c[x] += a;
        }
        Ok(Self::from_coefficients(kernel, c))
    }

    pub fn from_coefficients(kernel: &ArmKernel, coefficients: DVector<f64>) -> Self {
        let values = kernel.gram() * &coefficients;
        let rkhs_norm = quadratic_norm(kernel, &coefficients);
        Self {
            coefficients,
            values,
            rkhs_norm,
        }
    }

    pub fn value(&self, arm: usize) -> f64 {
        self.values[arm]
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// `sqrt(alpha' K alpha)`.
    pub fn rkhs_norm(&self) -> f64 {
        self.rkhs_norm
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &RkhsFunction, b: f64, kernel: &ArmKernel) -> Self {
        Self::from_coefficients(kernel, &self.coefficients * a + &other.coefficients * b)
    }

    /// `||self - other||_H`.
    pub fn distance(&self, other: &RkhsFunction, kernel: &ArmKernel) -> f64 {
        quadratic_norm(kernel, &(&self.coefficients - &other.coefficients))
    }
}

/// `m` coefficients uniform on `[-1, 1]` on `m` distinct grid points.
pub fn sample_rkhs_function(m: usize, kernel: &ArmKernel, seed: u64) -> Result<RkhsFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = draw_centers(m, kernel.num_arms(), &mut rng)?;
    let alphas: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
    RkhsFunction::new(kernel, &centers, &alphas)
}

/// `count` functions sharing one set of `m` centers, so that differences
/// and interpolations stay on the same support.
pub fn sample_rkhs_family(
    count: usize,
    m: usize,
    kernel: &ArmKernel,
    seed: u64,
) -> Result<Vec<RkhsFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = draw_centers(m, kernel.num_arms(), &mut rng)?;
    (0..count)
        .map(|_| {
            let alphas: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            RkhsFunction::new(kernel, &centers, &alphas)
        })
        .collect()
}

fn draw_centers(m: usize, num_arms: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if m == 0 || m > num_arms {
        return Err(Error::input(format!(
            "need 1 <= M <= {num_arms} distinct centers, got {m}"
        )));
    }
    let mut centers = sample(rng, num_arms, m).into_vec();
    centers.sort_unstable();
    Ok(centers)
}

/// How the mean reward evolves over rounds `1..=T`.
#[derive(Debug, Clone)]
pub enum ChangeSchedule {
    /// `f_t = phases[j]` where `j` counts breakpoints `<= t`.
    Abrupt {
        breakpoints: Vec<usize>,
        phases: Vec<RkhsFunction>,
    },
    /// `f_4 -> f_5` over the first half, `f_5 -> f_6` over the second.
    Slow { anchors: [RkhsFunction; 3] },
    /// Stationary-in-form table of mean rewards, one row per round.
    Table { rewards: DMatrix<f64> },
}

impl ChangeSchedule {
    pub fn abrupt(breakpoints: Vec<usize>, phases: Vec<RkhsFunction>) -> Result<Self> {
        if phases.len() != breakpoints.len() + 1 {
            return Err(Error::input(format!(
                "{} breakpoints need {} phases, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                phases.len()
            )));
        }
        if breakpoints.first() == Some(&0) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("breakpoints must be positive and strictly increasing"));
        }
        Ok(ChangeSchedule::Abrupt { breakpoints, phases })
    }

    /// Index of the active phase of an abrupt schedule.
    pub fn phase_at(breakpoints: &[usize], t: usize) -> usize {
        breakpoints.partition_point(|&b| b <= t)
    }

    /// Interpolation weights `(w4, w5, w6)` of the slow schedule at round `t`.
    pub fn slow_weights(t: usize, horizon: usize) -> [f64; 3] {
        let (t, big_t) = (t as f64, horizon as f64);
        if 2.0 * t <= big_t {
            let s = 2.0 * t / big_t;
            [1.0 - s, s, 0.0]
        } else {
            let s = (2.0 * t - big_t) / big_t;
            [0.0, 1.0 - s, s]
        }
    }

    /// Mean-reward function at round `t`, when the schedule is RKHS-valued.
    pub fn function_at(&self, t: usize, horizon: usize, kernel: &ArmKernel) -> Option<RkhsFunction> {
        match self {
            ChangeSchedule::Abrupt { breakpoints, phases } => {
                Some(phases[Self::phase_at(breakpoints, t)].clone())
            }
            ChangeSchedule::Slow { anchors } => {
                let w = Self::slow_weights(t, horizon);
                let c = anchors[0].coefficients() * w[0]
                    + anchors[1].coefficients() * w[1]
                    + anchors[2].coefficients() * w[2];
                Some(RkhsFunction::from_coefficients(kernel, c))
            }
            ChangeSchedule::Table { .. } => None,
        }
    }

    /// Largest `||f_t||_H` over the schedule (by convexity, over its
    /// phases or anchors).
    pub fn max_rkhs_norm(&self) -> Option<f64> {
        let fs: &[RkhsFunction] = match self {
            ChangeSchedule::Abrupt { phases, .. } => phases,
            ChangeSchedule::Slow { anchors } => anchors,
            ChangeSchedule::Table { .. } => return None,
        };
        Some(fs.iter().map(|f| f.rkhs_norm()).fold(0.0, f64::max))
    }
}

/// Declared and realized total variation `sum_t ||f_{t+1} - f_t||_H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetLedger {
    pub declared: f64,
    pub realized: f64,
}

/// A finite-armed, time-varying reward environment.
#[derive(Debug, Clone)]
pub struct Environment {
    name: String,
    kernel: ArmKernel,
    schedule: ChangeSchedule,
    horizon: usize,
    /// Mean reward, one row per round.
    means: DMatrix<f64>,
    best: Vec<(usize, f64)>,
    budget: Option<BudgetLedger>,
}

impl Environment {
    /// Tabulates the schedule over rounds `1..=horizon`. A declared budget
    /// below the realized one is rejected; without a declaration the
    /// realized value is used.
    pub fn new(
        name: impl Into<String>,
        kernel: ArmKernel,
        schedule: ChangeSchedule,
        horizon: usize,
        declared_budget: Option<f64>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::input("horizon must be at least 1"));
        }
        let n = kernel.num_arms();
        let means = match &schedule {
            ChangeSchedule::Table { rewards } => {
                if rewards.nrows() != horizon || rewards.ncols() != n {
                    return Err(Error::input(format!(
                        "reward table is {}x{}, expected {horizon}x{n}",
                        rewards.nrows(),
                        rewards.ncols()
                    )));
                }
                rewards.clone()
            }
            _ => {
                let mut m = DMatrix::zeros(horizon, n);
                for t in 1..=horizon {
                    let f = schedule.function_at(t, horizon, &kernel).expect("rkhs schedule");
                    m.row_mut(t - 1).copy_from_slice(f.values());
                }
                m
            }
        };
        let best = (0..horizon)
            .map(|r| {
                let row = means.row(r);
                let mut arg = 0;
                for x in 1..n {
                    if row[x] > row[arg] {
                        arg = x;
                    }
                }
                (arg, row[arg])
            })
            .collect();
        let realized = realized_budget(&schedule, horizon, &kernel);
        let budget = match (realized, declared_budget) {
            (Some(r), Some(d)) if r > d => {
                return Err(Error::config(format!(
                    "realized variation {r} exceeds the declared budget {d}"
                )))
            }
            (Some(r), Some(d)) => Some(BudgetLedger { declared: d, realized: r }),
            (Some(r), None) => Some(BudgetLedger { declared: r, realized: r }),
            (None, _) => None,
        };
        Ok(Self {
            name: name.into(),
            kernel,
            schedule,
            horizon,
            means,
            best,
            budget,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel(&self) -> &ArmKernel {
        &self.kernel
    }

    pub fn schedule(&self) -> &ChangeSchedule {
        &self.schedule
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_arms(&self) -> usize {
        self.kernel.num_arms()
    }

    pub fn budget(&self) -> Option<BudgetLedger> {
        self.budget
    }

    fn check_round(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::input(format!(
                "round {t} outside 1..={}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn reward_at(&self, t: usize, arm: usize) -> Result<f64> {
        self.check_round(t)?;
        self.kernel.check_arm(arm)?;
        Ok(self.means[(t - 1, arm)])
    }

    /// Mean rewards of every arm at round `t`.
    pub fn rewards_at(&self, t: usize) -> Result<Vec<f64>> {
        self.check_round(t)?;
        Ok(self.means.row(t - 1).iter().cloned().collect())
    }

    /// Exact best arm (lowest index on ties) and its mean at round `t`.
    pub fn best_at(&self, t: usize) -> Result<(usize, f64)> {
        self.check_round(t)?;
        Ok(self.best[t - 1])
    }

    /// Largest RKHS norm of any `f_t`, if the rewards are RKHS functions.
    pub fn max_rkhs_norm(&self) -> Option<f64> {
        self.schedule.max_rkhs_norm()
    }
}

/// `sum_{t=1}^{T-1} ||f_{t+1} - f_t||_H`, summed round by round; `None`
/// for tabulated rewards, which carry no RKHS representation.
pub fn realized_budget(schedule: &ChangeSchedule, horizon: usize, kernel: &ArmKernel) -> Option<f64> {
    match schedule {
        ChangeSchedule::Table { .. } => None,
        ChangeSchedule::Abrupt { breakpoints, phases } => Some(
            breakpoints
                .iter()
                .enumerate()
                .filter(|(_, &b)| b <= horizon)
                .map(|(j, _)| phases[j + 1].distance(&phases[j], kernel))
                .sum(),
        ),
        ChangeSchedule::Slow { .. } => {
            let mut prev = schedule.function_at(1, horizon, kernel)?;
            let mut total = 0.0;
            for t in 2..=horizon {
                let next = schedule.function_at(t, horizon, kernel)?;
                total += next.distance(&prev, kernel);
                prev = next;
            }
            Some(total)
        }
    }
}

/// Gaussian noise `N(0, R^2)` indexed by `(seed, t, arm)`: every caller
/// asking for the same triple gets the same draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    r: f64,
    seed: u64,
}

/// Words reserved per arm within a round's stream.
const WORDS_PER_ARM: u128 = 1 << 16;

impl NoiseModel {
    pub fn new(r: f64, seed: u64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::input(format!("noise scale must be nonnegative, got {r}")));
        }
        Ok(Self { r, seed })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw(&self, t: usize, arm: usize) -> f64 {
        if self.r == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng.set_word_pos(arm as u128 * WORDS_PER_ARM);
        let z: f64 = StandardNormal.sample(&mut rng);
        self.r * z
    }
}

/// Hands out noisy rewards, at most once per round.
#[derive(Debug, Clone)]
pub struct Observer<'a> {
    env: &'a Environment,
    noise: NoiseModel,
    last: usize,
}

impl<'a> Observer<'a> {
    pub fn new(env: &'a Environment, noise: NoiseModel) -> Self {
        Self { env, noise, last: 0 }
    }

    /// `y_t = f_t(x_t) + eps_t`.
    pub fn observe(&mut self, t: usize, arm: usize) -> Result<f64> {
        if t <= self.last {
            return Err(Error::protocol(format!(
                "round {t} already observed (last was {})",
                self.last
            )));
        }
        let mean = self.env.reward_at(t, arm)?;
        self.last = t;
        Ok(mean + self.noise.draw(t, arm))
    }
}

/// Parameters of the synthetic RKHS environments.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub grid_size: usize,
    pub lengthscale: f64,
    /// Kernel centers per function.
    pub centers: usize,
    pub horizon: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            grid_size: 100,
            lengthscale: 0.2,
            centers: 100,
            horizon: 500,
        }
    }
}

impl SyntheticSpec {
    pub fn kernel(&self) -> Result<ArmKernel> {
        let grid = DomainGrid::uniform_1d(self.grid_size)?;
        KernelSpec::squared_exponential(self.lengthscale)?.arm_kernel(&grid)
    }
}

/// Phases switch at each breakpoint; all phases share their centers.
pub fn abrupt_environment(
    spec: &SyntheticSpec,
    breakpoints: Vec<usize>,
    declared_budget: Option<f64>,
    seed: u64,
) -> Result<Environment> {
    let kernel = spec.kernel()?;
    let phases = sample_rkhs_family(breakpoints.len() + 1, spec.centers, &kernel, seed)?;
    let schedule = ChangeSchedule::abrupt(breakpoints, phases)?;
    Environment::new("abrupt", kernel, schedule, spec.horizon, declared_budget)
}

pub fn slow_environment(
    spec: &SyntheticSpec,
    declared_budget: Option<f64>,
    seed: u64,
) -> Result<Environment> {
    let kernel = spec.kernel()?;
    let [a, b, c]: [RkhsFunction; 3] = sample_rkhs_family(3, spec.centers, &kernel, seed)?
        .try_into()
        .expect("three anchors");
    let schedule = ChangeSchedule::Slow { anchors: [a, b, c] };
    Environment::new("slow", kernel, schedule, spec.horizon, declared_budget)
}

/// Stock identifiers and a `days x stocks` price matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub ids: Vec<String>,
    pub prices: DMatrix<f64>,
}

/// Reads a comma-separated price file: a header row of stock identifiers,
/// then one row of prices per day.
pub fn read_price_csv(path: &Path) -> Result<PriceTable> {
    let ingest = |row: usize, column: usize, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => ingest(1, 0, format!("{other:?}")),
        })?;
    let ids: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(1, 0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if ids.is_empty() || ids.iter().all(|s| s.is_empty()) {
        return Err(ingest(1, 1, "missing header of stock identifiers".into()));
    }
    let mut data = Vec::new();
    let mut days = 0;
    for (i, record) in reader.records().enumerate() {
        // file row number, header = row 1
        let row = i + 2;
        let record = record.map_err(|e| ingest(row, 0, e.to_string()))?;
        if record.len() != ids.len() {
            return Err(ingest(
                row,
                record.len().min(ids.len()) + 1,
                format!("expected {} fields, found {}", ids.len(), record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(ingest(row, j + 1, "missing value".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(row, j + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(ingest(row, j + 1, format!("not a finite number: {cell:?}")));
            }
            data.push(v);
        }
        days += 1;
    }
    if days == 0 {
        return Err(ingest(2, 1, "no price rows".into()));
    }
    Ok(PriceTable {
        prices: DMatrix::from_row_slice(days, ids.len(), &data),
        ids,
    })
}

pub fn write_price_csv(path: &Path, table: &PriceTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::input(format!("{other:?}")),
    })?;
    let io_err = |e: csv::Error| Error::input(format!("writing {}: {e}", path.display()));
    w.write_record(&table.ids).map_err(io_err)?;
    for r in 0..table.prices.nrows() {
        w.write_record(table.prices.row(r).iter().map(|v| format!("{v:.6}")))
            .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Geometric random walks standing in for a real price history.
pub fn synthetic_prices(days: usize, stocks: usize, seed: u64) -> PriceTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prices = DMatrix::zeros(days, stocks);
    for j in 0..stocks {
        let mut p = rng.random_range(20.0..200.0);
        let vol = rng.random_range(0.01..0.03);
        for d in 0..days {
            let z: f64 = StandardNormal.sample(&mut rng);
            p *= (vol * z).exp();
            prices[(d, j)] = p;
        }
    }
    PriceTable {
        ids: (0..stocks).map(|j| format!("S{:02}", j + 1)).collect(),
        prices,
    }
}

/// Prices min-max normalized over the whole matrix; a constant matrix maps
/// to zeros.
pub fn normalize_prices(prices: &DMatrix<f64>) -> DMatrix<f64> {
    let lo = prices.min();
    let hi = prices.max();
    if hi > lo {
        prices.map(|v| (v - lo) / (hi - lo))
    } else {
        DMatrix::zeros(prices.nrows(), prices.ncols())
    }
}

/// Sample covariance between stocks over all days (mean-centered,
/// divided by `days - 1`).
pub fn price_covariance(prices: &DMatrix<f64>) -> DMatrix<f64> {
    let days = prices.nrows();
    let mut centered = prices.clone();
    for j in 0..prices.ncols() {
        let mean = prices.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    centered.transpose() * &centered / (days.saturating_sub(1).max(1) as f64)
}

/// Arms are stocks, the reward at day `t` is the normalized closing price,
/// and the kernel is the normalized empirical covariance.
pub fn price_environment(table: &PriceTable) -> Result<Environment> {
    let rewards = normalize_prices(&table.prices);
    let spec = KernelSpec::empirical_covariance(price_covariance(&rewards))?;
    let n = table.prices.ncols();
    let grid = DomainGrid::uniform_1d(n)?;
    let kernel = spec.arm_kernel(&grid)?;
    let horizon = rewards.nrows();
    Environment::new("stock", kernel, ChangeSchedule::Table { rewards }, horizon, None)
}

pub fn load_price_environment(path: &Path) -> Result<Environment> {
    price_environment(&read_price_csv(path)?)
}
