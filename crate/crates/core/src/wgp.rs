//! Weighted Gaussian process regression.
//!
//! Observations carry weights `w_s = eta^-s` and the regularizer grows as
//! `lambda_t = lambda * w_t`. Dividing every weight by `w_t` leaves the
//! posterior unchanged, so all fits here work with the relative weights
//! `u_s = eta^(t - s)` in `(0, 1]` and the constant regularizer `lambda`:
//!
//! ```text
//! mean(x) = kbar(x)' (Kbar + lambda I)^-1 ybar
//! var(x)  = k(x,x) - kbar(x)' (Kbar + lambda I)^-1 kbar(x)
//! Kbar[i][j] = sqrt(u_i u_j) k(x_i, x_j),  kbar(x)[s] = sqrt(u_s) k(x_s, x),  ybar[s] = sqrt(u_s) y_s
//! ```
//!
//! Rounds whose relative weight falls below the truncation threshold are
//! dropped before factorization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{ArmKernel, DomainGrid};
use crate::linalg::cholesky_with_jitter;
use crate::qff::QffMap;

/// Clamps larger than this are counted as numerical warnings.
pub const CLAMP_WARN_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    eta: f64,
    lambda: f64,
    truncation_eps: f64,
}

impl WeightScheme {
    pub const DEFAULT_TRUNCATION: f64 = 1e-8;

    pub fn new(eta: f64, lambda: f64, truncation_eps: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::input(format!("eta must lie in (0, 1], got {eta}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be positive, got {lambda}")));
        }
        if !(0.0..1.0).contains(&truncation_eps) {
            return Err(Error::input(format!(
                "truncation threshold must lie in [0, 1), got {truncation_eps}"
            )));
        }
        Ok(Self {
            eta,
            lambda,
            truncation_eps,
        })
    }

    /// Exponential weights with the default truncation threshold.
    pub fn exponential(eta: f64, lambda: f64) -> Result<Self> {
        Self::new(eta, lambda, Self::DEFAULT_TRUNCATION)
    }

    /// Unit weights: the ordinary (stationary) GP posterior.
    pub fn uniform(lambda: f64) -> Result<Self> {
        Self::new(1.0, lambda, 0.0)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn truncation_eps(&self) -> f64 {
        self.truncation_eps
    }

    /// `w_s / w_t = eta^(t - s)` for an observation `age = t - s` rounds old.
    pub fn relative_weight(&self, age: usize) -> f64 {
        if self.eta == 1.0 {
            1.0
        } else {
            self.eta.powf(age as f64)
        }
    }

    pub fn keeps(&self, age: usize) -> bool {
        self.relative_weight(age) >= self.truncation_eps
    }

    /// Number of most recent rounds that survive truncation, if finite.
    pub fn effective_window(&self) -> Option<usize> {
        if self.eta == 1.0 || self.truncation_eps == 0.0 {
            return None;
        }
        Some(((1.0 / self.truncation_eps).ln() / (1.0 / self.eta).ln()).ceil() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub arm: usize,
    pub y: f64,
    pub t: usize,
}

/// Chronological observations over a finite set of arms.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditHistory {
    num_arms: usize,
    rounds: Vec<Observation>,
}

impl BanditHistory {
    pub fn new(num_arms: usize) -> Self {
        Self {
            num_arms,
            rounds: Vec::new(),
        }
    }

    pub fn from_observations(
        num_arms: usize,
        observations: impl IntoIterator<Item = Observation>,
    ) -> Result<Self> {
        let mut h = Self::new(num_arms);
        for o in observations {
            h.push(o.arm, o.y, o.t)?;
        }
        Ok(h)
    }

    /// History whose observations sit at rounds `1, 2, ...`.
    pub fn consecutive(num_arms: usize, arms: &[usize], ys: &[f64]) -> Result<Self> {
        if arms.len() != ys.len() {
            return Err(Error::input("arms and rewards differ in length"));
        }
        Self::from_observations(
            num_arms,
            arms.iter().zip(ys).enumerate().map(|(i, (&arm, &y))| Observation {
                arm,
                y,
                t: i + 1,
            }),
        )
    }

    pub fn push(&mut self, arm: usize, y: f64, t: usize) -> Result<()> {
        if arm >= self.num_arms {
            return Err(Error::input(format!(
                "arm {arm} out of range for {} arms",
                self.num_arms
            )));
        }
        if !y.is_finite() {
            return Err(Error::input(format!("reward at round {t} is not finite")));
        }
        let min_t = self.last_round().map_or(1, |last| last + 1);
        if t < min_t {
            return Err(Error::protocol(format!(
                "round {t} does not follow round {}",
                min_t - 1
            )));
        }
        self.rounds.push(Observation { arm, y, t });
        Ok(())
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.rounds
    }

    pub fn last_round(&self) -> Option<usize> {
        self.rounds.last().map(|o| o.t)
    }

    /// Observations at rounds `>= first_round`.
    pub fn since(&self, first_round: usize) -> BanditHistory {
        let start = self.rounds.partition_point(|o| o.t < first_round);
        BanditHistory {
            num_arms: self.num_arms,
            rounds: self.rounds[start..].to_vec(),
        }
    }

    pub fn clear(&mut self) {
        self.rounds.clear();
    }

    /// `(observation, relative weight)` for every round surviving truncation.
    pub fn weighted(&self, scheme: &WeightScheme) -> Vec<(Observation, f64)> {
        let Some(last) = self.last_round() else {
            return Vec::new();
        };
        self.rounds
            .iter()
            .filter(|o| scheme.keeps(last - o.t))
            .map(|o| (*o, scheme.relative_weight(last - o.t)))
            .collect()
    }
}

/// Posterior mean and variance evaluated on every arm of the domain.
#[derive(Debug, Clone)]
pub struct WeightedPosterior {
    t: usize,
    retained: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    clamp_warnings: usize,
    factor: Option<DMatrix<f64>>,
}

impl WeightedPosterior {
    /// Posterior with no data.
    pub fn prior(prior_var: Vec<f64>) -> Self {
        Self {
            t: 0,
            retained: 0,
            mean: vec![0.0; prior_var.len()],
            var: prior_var,
            clamp_warnings: 0,
            factor: None,
        }
    }

    /// Posterior built from already-evaluated values (e.g. for tests of
    /// the action rule).
    pub fn from_values(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::input("mean and variance lengths differ"));
        }
        if var.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::input("variances must be finite and nonnegative"));
        }
        Ok(Self {
            t: 0,
            retained: 0,
            mean,
            var,
            clamp_warnings: 0,
            factor: None,
        })
    }

    /// Index of the last round included.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of observations that survived truncation.
    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn num_arms(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_at(&self, arm: usize) -> f64 {
        self.mean[arm]
    }

    pub fn var_at(&self, arm: usize) -> f64 {
        self.var[arm]
    }

    pub fn sd_at(&self, arm: usize) -> f64 {
        self.var[arm].sqrt()
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.var
    }

    /// Variance clamps whose magnitude exceeded [`CLAMP_WARN_THRESHOLD`].
    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    /// Lower-triangular factor of the regularized weighted kernel matrix.
    pub fn factor(&self) -> Option<&DMatrix<f64>> {
        self.factor.as_ref()
    }
}

/// Design of a dual solve: one row per (possibly aggregated) observation.
struct DualDesign {
    arms: Vec<usize>,
    sqrt_weights: Vec<f64>,
    /// Targets already multiplied by their square-root weight.
    targets: Vec<f64>,
    regularizer: f64,
}

/// Clamp result and raw value of a variance.
fn clamp_variance(raw: f64, prior: f64) -> (f64, bool) {
    let clamped = raw.clamp(0.0, prior.max(0.0));
    (clamped, (clamped - raw).abs() > CLAMP_WARN_THRESHOLD)
}

/// Dual (observation-space) solve, evaluated on all arms. `cross(s, x)`
/// returns the kernel between design row `s` and arm `x`; `within(s, r)`
/// the kernel between two design rows.
fn solve_dual(
    design: &DualDesign,
    t: usize,
    prior_var: &[f64],
    within: impl Fn(usize, usize) -> f64,
    cross: impl Fn(usize, usize) -> f64,
) -> Result<WeightedPosterior> {
    let n = design.arms.len();
    let num_arms = prior_var.len();
    if n == 0 {
        let mut post = WeightedPosterior::prior(prior_var.to_vec());
        post.t = t;
        return Ok(post);
    }
    let sw = &design.sqrt_weights;
    let mut gram = DMatrix::from_fn(n, n, |i, j| sw[i] * sw[j] * within(i, j));
    for i in 0..n {
        gram[(i, i)] += design.regularizer;
    }
    let factor = cholesky_with_jitter(&gram)?;
    let l = factor.l();
    let alpha = factor.chol.solve(&DVector::from_column_slice(&design.targets));

    // columns: weighted kernel vectors of every arm
    let kx = DMatrix::from_fn(n, num_arms, |s, x| sw[s] * cross(s, x));
    let v = l
        .solve_lower_triangular(&kx)
        .ok_or_else(|| Error::input("singular triangular factor"))?;

    let mut mean = Vec::with_capacity(num_arms);
    let mut var = Vec::with_capacity(num_arms);
    let mut warnings = 0;
    for (x, &prior) in prior_var.iter().enumerate().take(num_arms) {
        mean.push(kx.column(x).dot(&alpha));
        let (v_clamped, warn) = clamp_variance(prior - v.column(x).norm_squared(), prior);
        warnings += warn as usize;
        var.push(v_clamped);
    }
    Ok(WeightedPosterior {
        t,
        retained: n,
        mean,
        var,
        clamp_warnings: warnings,
        factor: Some(l),
    })
}

fn prior_diag(kernel: &ArmKernel) -> Vec<f64> {
    (0..kernel.num_arms()).map(|i| kernel.k(i, i)).collect()
}

fn check_history(history: &BanditHistory, num_arms: usize) -> Result<()> {
    if history.num_arms() != num_arms {
        return Err(Error::input(format!(
            "history covers {} arms but the kernel has {num_arms}",
            history.num_arms()
        )));
    }
    Ok(())
}

/// Weighted posterior in the normalized `t x t` form, one row per retained
/// observation.
pub fn fit_weighted_posterior(
    history: &BanditHistory,
    scheme: &WeightScheme,
    kernel: &ArmKernel,
) -> Result<WeightedPosterior> {
    check_history(history, kernel.num_arms())?;
    let rows = history.weighted(scheme);
    let design = DualDesign {
        arms: rows.iter().map(|(o, _)| o.arm).collect(),
        sqrt_weights: rows.iter().map(|(_, u)| u.sqrt()).collect(),
        targets: rows.iter().map(|(o, u)| u.sqrt() * o.y).collect(),
        regularizer: scheme.lambda(),
    };
    let arms = &design.arms;
    solve_dual(
        &design,
        history.last_round().unwrap_or(0),
        &prior_diag(kernel),
        |i, j| kernel.k(arms[i], arms[j]),
        |s, x| kernel.k(arms[s], x),
    )
}

/// Same posterior as [`fit_weighted_posterior`], computed from per-arm
/// sufficient statistics.
///
/// Repeated pulls of one arm contribute `U_a = sum u_s` and
/// `S_a = sum u_s y_s`; the weighted least-squares objective only depends on
/// these, so the system is at most `num_arms x num_arms`.
pub fn fit_aggregated_posterior(
    history: &BanditHistory,
    scheme: &WeightScheme,
    kernel: &ArmKernel,
) -> Result<WeightedPosterior> {
    check_history(history, kernel.num_arms())?;
    let mut stats: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (o, u) in history.weighted(scheme) {
        let e = stats.entry(o.arm).or_insert((0.0, 0.0));
        e.0 += u;
        e.1 += u * o.y;
    }
    let design = DualDesign {
        arms: stats.keys().cloned().collect(),
        sqrt_weights: stats.values().map(|(w, _)| w.sqrt()).collect(),
        targets: stats.values().map(|(w, s)| s / w.sqrt()).collect(),
        regularizer: scheme.lambda(),
    };
    let arms = &design.arms;
    solve_dual(
        &design,
        history.last_round().unwrap_or(0),
        &prior_diag(kernel),
        |i, j| kernel.k(arms[i], arms[j]),
        |s, x| kernel.k(arms[s], x),
    )
}

/// Largest round for which nominal weights are evaluated directly.
pub const NOMINAL_MAX_ROUND: usize = 50;

/// Posterior with nominal weights `c * eta^-s` and `lambda_t = lambda * c * eta^-t`,
/// i.e. without normalization. Only valid for short histories.
pub fn fit_nominal_posterior(
    history: &BanditHistory,
    scheme: &WeightScheme,
    kernel: &ArmKernel,
    scale: f64,
) -> Result<WeightedPosterior> {
    check_history(history, kernel.num_arms())?;
    if !(1e-3..=1e3).contains(&scale) {
        return Err(Error::input(format!("weight scale {scale} outside [1e-3, 1e3]")));
    }
    let last = history.last_round().unwrap_or(0);
    if last > NOMINAL_MAX_ROUND {
        return Err(Error::input(format!(
            "nominal weights need t <= {NOMINAL_MAX_ROUND}, got {last}"
        )));
    }
    let nominal = |t: usize| scale * scheme.eta().powf(-(t as f64));
    let rows = history.weighted(scheme);
    let design = DualDesign {
        arms: rows.iter().map(|(o, _)| o.arm).collect(),
        sqrt_weights: rows.iter().map(|(o, _)| nominal(o.t).sqrt()).collect(),
        targets: rows.iter().map(|(o, _)| nominal(o.t).sqrt() * o.y).collect(),
        regularizer: scheme.lambda() * nominal(last),
    };
    let arms = &design.arms;
    solve_dual(
        &design,
        last,
        &prior_diag(kernel),
        |i, j| kernel.k(arms[i], arms[j]),
        |s, x| kernel.k(arms[s], x),
    )
}

/// True iff rescaling every nominal weight by `scale` (regularizer included)
/// reproduces the normalized posterior to `1e-8` on every arm.
pub fn posterior_scale_invariance_check(
    history: &BanditHistory,
    scheme: &WeightScheme,
    kernel: &ArmKernel,
    scale: f64,
) -> Result<bool> {
    let reference = fit_weighted_posterior(history, scheme, kernel)?;
    let scaled = fit_nominal_posterior(history, scheme, kernel, scale)?;
    Ok((0..kernel.num_arms()).all(|x| {
        (reference.mean_at(x) - scaled.mean_at(x)).abs() <= 1e-8
            && (reference.var_at(x) - scaled.var_at(x)).abs() <= 1e-8
    }))
}

/// QFF feature vectors of every arm of a domain.
#[derive(Debug, Clone)]
pub struct QffArmFeatures {
    map: QffMap,
    /// One row per arm.
    features: DMatrix<f64>,
}

impl QffArmFeatures {
    pub fn new(map: QffMap, grid: &DomainGrid) -> Result<Self> {
        let features = map.feature_matrix(grid.points())?;
        Ok(Self { map, features })
    }

    pub fn map(&self) -> &QffMap {
        &self.map
    }

    pub fn num_arms(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn approx_kernel(&self, i: usize, j: usize) -> f64 {
        self.features.row(i).dot(&self.features.row(j))
    }
}

/// Which linear system the QFF posterior solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QffForm {
    /// `2m x 2m` feature-space system.
    Primal,
    /// `t x t` observation-space system.
    Dual,
    /// Primal when `2m` is smaller than the number of retained rounds.
    Auto,
}

/// Weighted posterior under the approximate kernel `phi(x) . phi(x')`.
pub fn fit_qff_posterior(
    history: &BanditHistory,
    scheme: &WeightScheme,
    features: &QffArmFeatures,
    form: QffForm,
) -> Result<WeightedPosterior> {
    check_history(history, features.num_arms())?;
    let rows = history.weighted(scheme);
    let dim = features.map.num_features();
    let use_primal = match form {
        QffForm::Primal => true,
        QffForm::Dual => false,
        QffForm::Auto => dim < rows.len(),
    };
    let phi = &features.features;
    let prior: Vec<f64> = (0..phi.nrows()).map(|x| phi.row(x).norm_squared()).collect();
    let t = history.last_round().unwrap_or(0);

    if !use_primal {
        let design = DualDesign {
            arms: rows.iter().map(|(o, _)| o.arm).collect(),
            sqrt_weights: rows.iter().map(|(_, u)| u.sqrt()).collect(),
            targets: rows.iter().map(|(o, u)| u.sqrt() * o.y).collect(),
            regularizer: scheme.lambda(),
        };
        let arms = &design.arms;
        return solve_dual(
            &design,
            t,
            &prior,
            |i, j| features.approx_kernel(arms[i], arms[j]),
            |s, x| features.approx_kernel(arms[s], x),
        );
    }

    // V = sum u_s phi_s phi_s' + lambda I, b = sum u_s y_s phi_s
    let mut gram = DMatrix::<f64>::identity(dim, dim) * scheme.lambda();
    let mut rhs = DVector::<f64>::zeros(dim);
    for (o, u) in &rows {
        let f = phi.row(o.arm).transpose();
        gram.ger(*u, &f, &f, 1.0);
        rhs.axpy(u * o.y, &f, 1.0);
    }
    let factor = cholesky_with_jitter(&gram)?;
    let theta = factor.chol.solve(&rhs);
    let l = factor.l();
    let v = l
        .solve_lower_triangular(&phi.transpose())
        .ok_or_else(|| Error::input("singular triangular factor"))?;
    let mut mean = Vec::with_capacity(phi.nrows());
    let mut var = Vec::with_capacity(phi.nrows());
    let mut warnings = 0;
    for (x, &cap) in prior.iter().enumerate().take(phi.nrows()) {
        mean.push(phi.row(x).dot(&theta.transpose()));
        let raw = scheme.lambda() * v.column(x).norm_squared();
        let (vc, warn) = clamp_variance(raw, cap);
        warnings += warn as usize;
        var.push(vc);
    }
    Ok(WeightedPosterior {
        t,
        retained: rows.len(),
        mean,
        var,
        clamp_warnings: warnings,
        factor: Some(l),
    })
}
