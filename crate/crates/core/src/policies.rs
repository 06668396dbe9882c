//! GP-UCB policies for non-stationary rewards: weighted (WGP-UCB), plain
//! (IGP-UCB), restarting and sliding-window variants, and the order-wise
//! parameter tuning rules.

use crate::error::{Error, Result};
use crate::kernels::ArmKernel;
use crate::mig::{
    history_double_weighted_mig, mig_universal_bound, EigendecayParams, Weighting,
};
use crate::wgp::{fit_aggregated_posterior, BanditHistory, WeightScheme, WeightedPosterior};

/// Confidence-width inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpParams {
    /// RKHS norm bound.
    pub b: f64,
    /// Sub-Gaussian noise scale.
    pub r: f64,
    pub lambda: f64,
    pub delta: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        Self {
            b: 1.0,
            r: 0.1,
            lambda: 1.0,
            delta: 0.1,
        }
    }
}

impl GpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::input(format!("B must be nonnegative, got {}", self.b)));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::input(format!("R must be nonnegative, got {}", self.r)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::input(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// `B + R / sqrt(lambda) * sqrt(2 ln(1/delta) + 2 gamma)`.
pub fn beta_t(gp: &GpParams, gamma: f64) -> Result<f64> {
    gp.validate()?;
    if !(gamma >= 0.0) {
        return Err(Error::input(format!("information gain must be nonnegative, got {gamma}")));
    }
    Ok(gp.b + gp.r / gp.lambda.sqrt() * (2.0 * (1.0 / gp.delta).ln() + 2.0 * gamma).sqrt())
}

/// Index maximizing `mean + beta * sd`, lowest index on ties.
pub fn select_action(posterior: &WeightedPosterior, beta: f64) -> Result<usize> {
    let n = posterior.num_arms();
    if n == 0 {
        return Err(Error::input("cannot select from an empty domain"));
    }
    let ucb = |x: usize| posterior.mean_at(x) + beta * posterior.sd_at(x);
    let mut best = 0;
    let mut best_val = ucb(0);
    for x in 1..n {
        let v = ucb(x);
        if v > best_val {
            best = x;
            best_val = v;
        }
    }
    Ok(best)
}

/// Source of the information gain inside the confidence width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// Log-determinant of the retained history.
    EmpiricalMig,
    /// Analytic bound from eigendecay constants: the weight-dependent bound
    /// for discounted policies, the universal bound at the retained length
    /// otherwise.
    AnalyticBound(EigendecayParams),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Wgpucb { eta: f64 },
    Igpucb,
    Restart { period: usize },
    SlidingWindow { window: usize },
}

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Wgpucb { .. } => "WGP-UCB",
            PolicyKind::Igpucb => "IGP-UCB",
            PolicyKind::Restart { .. } => "R-GP-UCB",
            PolicyKind::SlidingWindow { .. } => "SW-GP-UCB",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub name: String,
    pub kind: PolicyKind,
    pub gp: GpParams,
    pub beta_mode: BetaMode,
    pub truncation_eps: f64,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind, gp: GpParams) -> Self {
        Self {
            name: kind.label().to_string(),
            kind,
            gp,
            beta_mode: BetaMode::EmpiricalMig,
            truncation_eps: WeightScheme::DEFAULT_TRUNCATION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gp.validate()?;
        match self.kind {
            PolicyKind::Wgpucb { eta } if !(eta > 0.0 && eta <= 1.0) => {
                Err(Error::config(format!("eta must lie in (0, 1], got {eta}")))
            }
            PolicyKind::Restart { period: 0 } => Err(Error::config("restart period H must be >= 1")),
            PolicyKind::SlidingWindow { window: 0 } => {
                Err(Error::config("sliding window SW must be >= 1"))
            }
            _ => match self.beta_mode {
                BetaMode::Fixed(b) if !(b >= 0.0 && b.is_finite()) => {
                    Err(Error::config(format!("fixed beta must be nonnegative, got {b}")))
                }
                BetaMode::AnalyticBound(p) => p.validate(),
                _ => WeightScheme::new(0.5, self.gp.lambda, self.truncation_eps).map(|_| ()),
            },
        }
    }

    fn scheme(&self) -> Result<WeightScheme> {
        match self.kind {
            PolicyKind::Wgpucb { eta } => WeightScheme::new(eta, self.gp.lambda, self.truncation_eps),
            _ => WeightScheme::uniform(self.gp.lambda),
        }
    }
}

/// What a policy did at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub arm: usize,
    pub beta: f64,
    /// Posterior mean and standard deviation at the chosen arm.
    pub mean: f64,
    pub sigma: f64,
    /// Variance clamps above the warning threshold in this round's fit.
    pub clamps: usize,
}

/// A sequential decision maker fed one reward per round.
pub trait BanditPolicy {
    fn name(&self) -> &str;

    /// Acts at `round`. `feedback` is the reward of the previous round's
    /// action and must be present exactly when `round > 1`.
    fn step(&mut self, feedback: Option<f64>, round: usize) -> Result<Decision>;
}

/// Running state of one GP-UCB policy within one episode.
#[derive(Debug, Clone)]
pub struct PolicyState<'k> {
    config: PolicyConfig,
    scheme: WeightScheme,
    kernel: &'k ArmKernel,
    history: BanditHistory,
    /// Round and arm of the action awaiting feedback.
    pending: Option<(usize, usize)>,
    next_round: usize,
}

impl<'k> PolicyState<'k> {
    pub fn new(config: PolicyConfig, kernel: &'k ArmKernel) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            scheme: config.scheme()?,
            history: BanditHistory::new(kernel.num_arms()),
            config,
            kernel,
            pending: None,
            next_round: 1,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    /// Observations the next fit will use.
    pub fn history(&self) -> &BanditHistory {
        &self.history
    }

    /// Drops whatever the policy no longer uses before acting at `round`.
    fn retain_for(&mut self, round: usize) {
        match self.config.kind {
            PolicyKind::Restart { period } if (round - 1).is_multiple_of(period) => self.history.clear(),
            PolicyKind::SlidingWindow { window } if round > window => {
                self.history = self.history.since(round - window);
            }
            _ => {}
        }
    }

    fn information_gain(&self) -> Result<f64> {
        match self.config.beta_mode {
            BetaMode::Fixed(_) => Ok(0.0),
            BetaMode::EmpiricalMig => {
                history_double_weighted_mig(&self.history, &self.scheme, self.kernel)
            }
            BetaMode::AnalyticBound(params) => {
                let kdot = self.kernel.spec().kdot();
                let lambda = self.config.gp.lambda;
                match self.config.kind {
                    PolicyKind::Wgpucb { eta } if eta < 1.0 => Ok(params
                        .best_weight_bound(eta, kdot, lambda, Weighting::Double, MAX_PROJECTION)?
                        .1),
                    _ => best_universal_bound(&params, self.history.len(), kdot, lambda),
                }
            }
        }
    }

    /// Posterior the next action is based on.
    pub fn posterior(&self) -> Result<WeightedPosterior> {
        fit_aggregated_posterior(&self.history, &self.scheme, self.kernel)
    }
}

/// Largest projection dimension searched when minimizing analytic bounds.
pub const MAX_PROJECTION: usize = 200;

/// Universal bound minimized over the projection dimension.
pub fn best_universal_bound(params: &EigendecayParams, t: usize, kdot: f64, lambda: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for n in 1..=MAX_PROJECTION {
        best = best.min(mig_universal_bound(n, t, kdot, lambda, params.tail_bound(n)?)?);
    }
    Ok(best)
}

impl BanditPolicy for PolicyState<'_> {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn step(&mut self, feedback: Option<f64>, round: usize) -> Result<Decision> {
        if round != self.next_round {
            return Err(Error::protocol(format!(
                "expected round {}, got {round}",
                self.next_round
            )));
        }
        match (self.pending, feedback) {
            (Some((t, arm)), Some(y)) => self.history.push(arm, y, t)?,
            (None, None) => {}
            (Some((t, _)), None) => {
                return Err(Error::protocol(format!("missing feedback for round {t}")))
            }
            (None, Some(_)) => {
                return Err(Error::protocol("feedback supplied before any action"))
            }
        }
        self.retain_for(round);

        let posterior = self.posterior()?;
        let beta = match self.config.beta_mode {
            BetaMode::Fixed(b) => b,
            _ => beta_t(&self.config.gp, self.information_gain()?)?,
        };
        let arm = select_action(&posterior, beta)?;
        self.pending = Some((round, arm));
        self.next_round += 1;
        Ok(Decision {
            arm,
            beta,
            mean: posterior.mean_at(arm),
            sigma: posterior.sd_at(arm),
            clamps: posterior.clamp_warnings(),
        })
    }
}

/// Discount factor, weighted-history length `c` and QFF nodes `mbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningOutput {
    pub eta: f64,
    pub c: usize,
    pub mbar: usize,
}

pub const ETA_RANGE: (f64, f64) = (0.5, 1.0 - 1e-4);
pub const MBAR_RANGE: (usize, usize) = (2, 12);

/// `eta = 1 - gamma^(-1/4) B_T^(1/2) T^(-1/2)` (or without `B_T` when it is
/// unknown), `c = ceil(ln T / (1 - eta))`, `mbar = ceil(log_{4/e}(T^3 gamma^(3/2)))`,
/// with `eta` and `mbar` clamped to [`ETA_RANGE`] and [`MBAR_RANGE`].
pub fn tune_parameters(horizon: usize, gamma_dot: f64, budget: Option<f64>) -> Result<TuningOutput> {
    if horizon == 0 {
        return Err(Error::input("horizon must be at least 1"));
    }
    if !(gamma_dot > 0.0 && gamma_dot.is_finite()) {
        return Err(Error::input(format!("information gain must be positive, got {gamma_dot}")));
    }
    if let Some(b) = budget {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::input(format!("budget must be positive, got {b}")));
        }
    }
    let t = horizon as f64;
    let step = gamma_dot.powf(-0.25) * budget.map_or(1.0, f64::sqrt) / t.sqrt();
    let eta = (1.0 - step).clamp(ETA_RANGE.0, ETA_RANGE.1);
    let c = ((t.ln() / (1.0 - eta)).ceil() as usize).max(1);
    let raw_mbar = (3.0 * t.ln() + 1.5 * gamma_dot.ln()) / (4.0 / std::f64::consts::E).ln();
    let mbar = (raw_mbar.ceil().max(0.0) as usize).clamp(MBAR_RANGE.0, MBAR_RANGE.1);
    Ok(TuningOutput { eta, c, mbar })
}

/// Order-wise restart period and window `ceil((T / B_T)^(2/3))`.
pub fn baseline_period(horizon: usize, budget: f64) -> Result<usize> {
    if horizon == 0 || !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::input("baseline period needs T >= 1 and B_T > 0"));
    }
    Ok(((horizon as f64 / budget).powf(2.0 / 3.0).ceil() as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{DomainGrid, KernelSpec};

    fn kernel(n: usize) -> ArmKernel {
        let grid = DomainGrid::uniform_1d(n).unwrap();
        KernelSpec::squared_exponential(0.2).unwrap().arm_kernel(&grid).unwrap()
    }

    #[test]
    fn beta_examples() {
        let noiseless = GpParams { b: 2.5, r: 0.0, lambda: 1.0, delta: 0.3 };
        assert_eq!(beta_t(&noiseless, 7.0).unwrap(), 2.5);
        let gp = GpParams { b: 0.0, r: 1.0, lambda: 1.0, delta: (-1f64).exp() };
        assert!((beta_t(&gp, 0.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let gp = GpParams { b: 1.0, r: 1.0, lambda: 1.0, delta: 0.1 };
        let v = beta_t(&gp, 0.5).unwrap();
        assert!((v - (1.0 + (2.0 * 10f64.ln() + 1.0).sqrt())).abs() < 1e-12);
        assert!((v - 3.36752).abs() < 1e-5);
        assert!(beta_t(&GpParams { delta: 1.0, ..gp }, 0.0).is_err());
    }

    #[test]
    fn action_rule() {
        let post = WeightedPosterior::from_values(vec![0.1, 0.5, 0.3], vec![1.0, 0.0, 0.25]).unwrap();
        assert_eq!(select_action(&post, 1.0).unwrap(), 0);
        assert_eq!(select_action(&post, 0.0).unwrap(), 1);
        let flat = WeightedPosterior::prior(vec![1.0; 4]);
        assert_eq!(select_action(&flat, 3.0).unwrap(), 0);
        let empty = WeightedPosterior::prior(vec![]);
        assert!(select_action(&empty, 1.0).is_err());
    }

    #[test]
    fn step_protocol() {
        let k = kernel(10);
        let mut p = PolicyState::new(PolicyConfig::new(PolicyKind::Igpucb, GpParams::default()), &k).unwrap();
        assert!(matches!(p.step(None, 2), Err(Error::Protocol(_))));
        assert!(matches!(p.step(Some(1.0), 1), Err(Error::Protocol(_))));
        let d = p.step(None, 1).unwrap();
        assert_eq!(d.arm, 0);
        assert!(matches!(p.step(None, 2), Err(Error::Protocol(_))));
        p.step(Some(0.3), 2).unwrap();
        assert_eq!(p.history().len(), 1);
    }

    fn drive(p: &mut PolicyState, rounds: usize) {
        let mut fb = None;
        for t in 1..=rounds {
            let d = p.step(fb, t).unwrap();
            fb = Some((d.arm as f64 * 0.37).sin());
        }
        // deliver the last reward so the history reflects round `rounds`
        p.history.push(p.pending.unwrap().1, fb.unwrap(), rounds).unwrap();
    }

    #[test]
    fn restart_keeps_only_current_block() {
        let k = kernel(10);
        let cfg = PolicyConfig::new(PolicyKind::Restart { period: 5 }, GpParams::default());
        let mut p = PolicyState::new(cfg, &k).unwrap();
        drive(&mut p, 6);
        let rounds: Vec<usize> = p.history().observations().iter().map(|o| o.t).collect();
        assert_eq!(rounds, vec![6]);
    }

    #[test]
    fn window_keeps_recent_rounds() {
        let k = kernel(10);
        let cfg = PolicyConfig::new(PolicyKind::SlidingWindow { window: 3 }, GpParams::default());
        let mut p = PolicyState::new(cfg, &k).unwrap();
        drive(&mut p, 10);
        p.retain_for(11);
        let rounds: Vec<usize> = p.history().observations().iter().map(|o| o.t).collect();
        assert_eq!(rounds, vec![8, 9, 10]);
    }

    #[test]
    fn invalid_configs() {
        let k = kernel(5);
        let gp = GpParams::default();
        for kind in [
            PolicyKind::Wgpucb { eta: 0.0 },
            PolicyKind::Wgpucb { eta: 1.5 },
            PolicyKind::Restart { period: 0 },
            PolicyKind::SlidingWindow { window: 0 },
        ] {
            assert!(PolicyState::new(PolicyConfig::new(kind, gp), &k).is_err());
        }
    }

    #[test]
    fn tuning_examples() {
        let known = tune_parameters(100, 1.0, Some(1.0)).unwrap();
        assert!((known.eta - 0.9).abs() < 1e-12);
        assert_eq!(known.c, 47);
        assert_eq!(known.mbar, 12);
        let unknown = tune_parameters(100, 1.0, None).unwrap();
        assert!((unknown.eta - 0.9).abs() < 1e-12);
        assert_eq!(tune_parameters(4, 1.0, Some(100.0)).unwrap().eta, 0.5);
        assert_eq!(tune_parameters(1, 1.0, None).unwrap().mbar, 2);
        assert_eq!(baseline_period(500, 10.0).unwrap(), 14);
    }
}
