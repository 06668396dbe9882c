//! Experiment orchestration: configuration, seeded episodes, regret tables
//! and the small-instance invariant suite behind `wgpb check`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{
    abrupt_environment, price_environment, read_price_csv, slow_environment, synthetic_prices,
    Environment, NoiseModel, Observer, PriceTable, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::mig::{mig_universal_bound, EigendecayKind, EigendecayParams};
use crate::policies::{
    baseline_period, best_universal_bound, tune_parameters, BanditPolicy, BetaMode, GpParams,
    PolicyConfig, PolicyKind, PolicyState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub environment: EnvironmentSection,
    pub gp: GpSection,
    pub tuning: TuningSection,
    #[serde(rename = "policy")]
    pub policies: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub replicates: usize,
    /// Replicate `r` uses seed `seed + r` for both the environment draw and
    /// the noise stream.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            replicates: 20,
            seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Abrupt,
    Slow,
    Stock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSection {
    pub kind: EnvKind,
    /// Rounds; for the stock environment, at most this many days are used.
    pub horizon: usize,
    pub grid_size: usize,
    pub lengthscale: f64,
    pub centers: usize,
    pub breakpoints: Vec<usize>,
    pub noise: f64,
    /// Declared variation budget; defaults to the realized one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    /// Price file for the stock environment; synthetic prices otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_file: Option<PathBuf>,
    pub synthetic_days: usize,
    pub synthetic_stocks: usize,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        Self {
            kind: EnvKind::Abrupt,
            horizon: 500,
            grid_size: 100,
            lengthscale: 0.2,
            centers: 100,
            breakpoints: vec![100, 200],
            noise: 0.1,
            budget: None,
            price_file: None,
            synthetic_days: 823,
            synthetic_stocks: 29,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaModeName {
    Empirical,
    Analytic,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayName {
    Exponential,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigendecaySection {
    pub kind: DecayName,
    pub c_e1: f64,
    pub c_e2: f64,
    pub beta_e: f64,
    pub c_p: f64,
    pub beta_p: f64,
    pub psi: f64,
}

impl Default for EigendecaySection {
    fn default() -> Self {
        let EigendecayKind::Exponential { c_e1, c_e2, beta_e } = EigendecayParams::SE_GRID.kind
        else {
            unreachable!()
        };
        Self {
            kind: DecayName::Exponential,
            c_e1,
            c_e2,
            beta_e,
            c_p: 1.0,
            beta_p: 2.0,
            psi: EigendecayParams::SE_GRID.psi,
        }
    }
}

impl EigendecaySection {
    pub fn params(&self) -> EigendecayParams {
        let kind = match self.kind {
            DecayName::Exponential => EigendecayKind::Exponential {
                c_e1: self.c_e1,
                c_e2: self.c_e2,
                beta_e: self.beta_e,
            },
            DecayName::Polynomial => EigendecayKind::Polynomial {
                c_p: self.c_p,
                beta_p: self.beta_p,
            },
        };
        EigendecayParams { kind, psi: self.psi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub lambda: f64,
    pub delta: f64,
    /// RKHS norm bound; defaults to the largest norm of the sampled
    /// functions (1 for the stock environment).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub beta_mode: BetaModeName,
    /// Width used when `beta_mode = "fixed"`.
    pub beta: f64,
    pub truncation: f64,
    pub eigendecay: EigendecaySection,
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            delta: 0.1,
            b: None,
            beta_mode: BetaModeName::Empirical,
            beta: 2.0,
            truncation: 1e-8,
            eigendecay: EigendecaySection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    /// `auto` derives eta, H and SW from the horizon and budget.
    pub mode: TuningMode,
    /// Whether auto tuning may use the environment's declared budget.
    pub budget_known: bool,
    pub eta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            mode: TuningMode::Auto,
            budget_known: true,
            eta: 0.95,
            period: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Wgpucb,
    Igpucb,
    Restart,
    SlidingWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub kind: PolicyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl PolicyEntry {
    pub fn new(kind: PolicyName) -> Self {
        Self {
            kind,
            name: None,
            eta: None,
            period: None,
            window: None,
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            match self.kind {
                PolicyName::Wgpucb => "WGP-UCB",
                PolicyName::Igpucb => "IGP-UCB",
                PolicyName::Restart => "R-GP-UCB",
                PolicyName::SlidingWindow => "SW-GP-UCB",
            }
            .to_string()
        })
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            environment: EnvironmentSection::default(),
            gp: GpSection::default(),
            tuning: TuningSection::default(),
            policies: vec![
                PolicyEntry::new(PolicyName::Igpucb),
                PolicyEntry::new(PolicyName::Restart),
                PolicyEntry::new(PolicyName::SlidingWindow),
                PolicyEntry::new(PolicyName::Wgpucb),
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let env = &self.environment;
        if env.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.experiment.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("at least one [[policy]] is required"));
        }
        if !(env.noise >= 0.0 && env.noise.is_finite()) {
            return Err(Error::config("noise must be nonnegative"));
        }
        let mut names: Vec<String> = self.policies.iter().map(|p| file_stem(&p.display_name())).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("policy names must be distinct"));
        }
        if self.tuning.mode == TuningMode::Manual && !(self.tuning.eta > 0.0 && self.tuning.eta <= 1.0) {
            return Err(Error::config("tuning.eta must lie in (0, 1]"));
        }
        self.gp.eigendecay.params().validate()?;
        // catch everything else a policy would reject, with a dummy B
        let gp = GpParams {
            b: self.gp.b.unwrap_or(1.0),
            r: env.noise,
            lambda: self.gp.lambda,
            delta: self.gp.delta,
        };
        gp.validate().map_err(|e| Error::config(e.to_string()))?;
        for p in &self.policies {
            let cfg = resolve_policy(p, self, gp, &Tuned { eta: 0.5, period: 1, window: 1 });
            cfg.validate()?;
        }
        Ok(())
    }

    /// Environment of one replicate.
    pub fn build_environment(&self, seed: u64) -> Result<Environment> {
        let env = &self.environment;
        let spec = SyntheticSpec {
            grid_size: env.grid_size,
            lengthscale: env.lengthscale,
            centers: env.centers,
            horizon: env.horizon,
        };
        match env.kind {
            EnvKind::Abrupt => abrupt_environment(&spec, env.breakpoints.clone(), env.budget, seed),
            EnvKind::Slow => slow_environment(&spec, env.budget, seed),
            EnvKind::Stock => {
                let table = match &env.price_file {
                    Some(path) => read_price_csv(path)?,
                    None => synthetic_prices(env.synthetic_days, env.synthetic_stocks, self.experiment.seed),
                };
                let days = table.prices.nrows().min(env.horizon);
                price_environment(&PriceTable {
                    prices: table.prices.rows(0, days).into_owned(),
                    ids: table.ids,
                })
            }
        }
    }

    /// Policies of one replicate, with auto-tuned parameters resolved
    /// against that replicate's environment.
    pub fn resolve_policies(&self, env: &Environment) -> Result<Vec<PolicyConfig>> {
        let gp = GpParams {
            b: match self.gp.b {
                Some(b) => b,
                None => env.max_rkhs_norm().unwrap_or(1.0),
            },
            r: self.environment.noise,
            lambda: self.gp.lambda,
            delta: self.gp.delta,
        };
        let tuned = self.tune(env)?;
        Ok(self.policies.iter().map(|p| resolve_policy(p, self, gp, &tuned)).collect())
    }

    fn tune(&self, env: &Environment) -> Result<Tuned> {
        let horizon = env.horizon();
        let budget = env
            .budget()
            .map(|b| b.declared)
            .filter(|b| self.tuning.budget_known && *b > 0.0);
        let period = baseline_period(horizon, budget.unwrap_or(1.0))?;
        let eta = match self.tuning.mode {
            TuningMode::Manual => self.tuning.eta,
            TuningMode::Auto => {
                let gamma = information_gain_estimate(env, &self.gp)?;
                tune_parameters(horizon, gamma, budget)?.eta
            }
        };
        Ok(Tuned {
            eta,
            period: self.tuning.period.unwrap_or(period),
            window: self.tuning.window.unwrap_or(period),
        })
    }
}

struct Tuned {
    eta: f64,
    period: usize,
    window: usize,
}

fn resolve_policy(entry: &PolicyEntry, config: &ExperimentConfig, gp: GpParams, tuned: &Tuned) -> PolicyConfig {
    let kind = match entry.kind {
        PolicyName::Wgpucb => PolicyKind::Wgpucb {
            eta: entry.eta.unwrap_or(tuned.eta),
        },
        PolicyName::Igpucb => PolicyKind::Igpucb,
        PolicyName::Restart => PolicyKind::Restart {
            period: entry.period.unwrap_or(tuned.period),
        },
        PolicyName::SlidingWindow => PolicyKind::SlidingWindow {
            window: entry.window.unwrap_or(tuned.window),
        },
    };
    PolicyConfig {
        name: entry.display_name(),
        kind,
        gp,
        beta_mode: match config.gp.beta_mode {
            BetaModeName::Empirical => BetaMode::EmpiricalMig,
            BetaModeName::Analytic => BetaMode::AnalyticBound(config.gp.eigendecay.params()),
            BetaModeName::Fixed => BetaMode::Fixed(config.gp.beta),
        },
        truncation_eps: config.gp.truncation,
    }
}

/// Horizon-`T` information gain used by auto tuning: the smaller of the
/// eigendecay-based universal bound and the exact finite-rank bound
/// `(n/2) log(1 + kdot T / (lambda n))` for `n` arms.
pub fn information_gain_estimate(env: &Environment, gp: &GpSection) -> Result<f64> {
    let kdot = env.kernel().spec().kdot();
    let t = env.horizon();
    let finite = mig_universal_bound(env.num_arms(), t, kdot, gp.lambda, 0.0)?;
    let decay = if env.kernel().spec().lengthscale().is_some() {
        best_universal_bound(&gp.eigendecay.params(), t, kdot, gp.lambda)?
    } else {
        f64::INFINITY
    };
    Ok(finite.min(decay).max(f64::MIN_POSITIVE))
}

/// One round of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub seed: u64,
    pub policy: String,
    pub t: usize,
    pub arm: usize,
    /// Observed (noisy) reward.
    pub reward: f64,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub beta: f64,
    pub sigma: f64,
    pub clamps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub rows: Vec<EpisodeRow>,
}

impl EpisodeRecord {
    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn clamp_warnings(&self) -> usize {
        self.rows.iter().map(|r| r.clamps).sum()
    }
}

/// Plays `policy` for the whole horizon. Errors carry the round they
/// occurred in.
pub fn run_episode(env: &Environment, policy: &mut dyn BanditPolicy, noise: NoiseModel) -> Result<EpisodeRecord> {
    let mut observer = Observer::new(env, noise);
    let mut rows = Vec::with_capacity(env.horizon());
    let mut feedback = None;
    let mut cum = 0.0;
    for t in 1..=env.horizon() {
        let at = |e: Error| Error::AtRound {
            round: t,
            source: Box::new(e),
        };
        let d = policy.step(feedback, t).map_err(at)?;
        let y = observer.observe(t, d.arm).map_err(at)?;
        let (_, best) = env.best_at(t)?;
        let instant = (best - env.reward_at(t, d.arm)?).max(0.0);
        cum += instant;
        rows.push(EpisodeRow {
            seed: noise.seed(),
            policy: policy.name().to_string(),
            t,
            arm: d.arm,
            reward: y,
            instant_regret: instant,
            cum_regret: cum,
            beta: d.beta,
            sigma: d.sigma,
            clamps: d.clamps,
        });
        feedback = Some(y);
    }
    Ok(EpisodeRecord { rows })
}

pub fn run_policy_episode(env: &Environment, config: &PolicyConfig, noise: NoiseModel) -> Result<EpisodeRecord> {
    let mut policy = PolicyState::new(config.clone(), env.kernel())?;
    run_episode(env, &mut policy, noise)
}

/// Mean cumulative regret and its standard error at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub policy: String,
    pub mean_cum_regret: f64,
    /// Sample standard deviation over replicates divided by `sqrt(n)`;
    /// zero for a single replicate.
    pub std_err: f64,
}

/// Per-round aggregate over replicates, for records of one policy that
/// share a horizon.
pub fn aggregate(policy: &str, records: &[&EpisodeRecord]) -> Vec<AggregateRow> {
    let horizon = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let n = records.len() as f64;
    (0..horizon)
        .map(|i| {
            let vals: Vec<f64> = records.iter().map(|r| r.rows[i].cum_regret).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let std_err = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                t: i + 1,
                policy: policy.to_string(),
                mean_cum_regret: mean,
                std_err,
            }
        })
        .collect()
}

/// Float with 9 significant digits, in the shortest form that reads back
/// to that rounded value.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("valid float");
    format!("{rounded}")
}

pub const EPISODE_HEADER: &str = "seed,policy,t,arm,reward,instant_regret,cum_regret,beta,sigma,clamps";
pub const AGGREGATE_HEADER: &str = "t,policy,mean_cum_regret,std_err";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn episode_csv(records: &[&EpisodeRecord]) -> String {
    let mut out = String::from(EPISODE_HEADER);
    out.push('\n');
    for rec in records {
        for r in &rec.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                csv_field(&r.policy),
                r.t,
                r.arm,
                fmt_float(r.reward),
                fmt_float(r.instant_regret),
                fmt_float(r.cum_regret),
                fmt_float(r.beta),
                fmt_float(r.sigma),
                r.clamps
            );
        }
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.t,
            csv_field(&r.policy),
            fmt_float(r.mean_cum_regret),
            fmt_float(r.std_err)
        );
    }
    out
}

/// File stem for a policy name: lowercase alphanumerics, `_` elsewhere.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub name: String,
    pub file: PathBuf,
    pub mean_final_regret: f64,
    pub clamp_warnings: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub policies: Vec<PolicySummary>,
    pub aggregate_file: PathBuf,
    /// `records[r][p]`: replicate `r`, policy `p` in config order.
    pub records: Vec<Vec<EpisodeRecord>>,
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every policy on every replicate and writes one table per policy
/// plus `aggregate.csv` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dir = &config.experiment.output_dir;
    prepare_output_dir(dir)?;

    let seeds: Vec<u64> = (0..config.experiment.replicates as u64)
        .map(|r| config.experiment.seed + r)
        .collect();
    let records: Vec<Vec<EpisodeRecord>> = seeds
        .par_iter()
        .map(|&seed| {
            let env = config.build_environment(seed)?;
            let noise = NoiseModel::new(config.environment.noise, seed)?;
            config
                .resolve_policies(&env)?
                .into_iter()
                .map(|p| {
                    let mut policy = PolicyState::new(p, env.kernel())?;
                    run_episode(&env, &mut policy, noise)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    let mut agg_rows = Vec::new();
    for (p, entry) in config.policies.iter().enumerate() {
        let name = entry.display_name();
        let per_policy: Vec<&EpisodeRecord> = records.iter().map(|r| &r[p]).collect();
        let file = dir.join(format!("{}.csv", file_stem(&name)));
        write_file(&file, &episode_csv(&per_policy))?;
        let rows = aggregate(&name, &per_policy);
        summaries.push(PolicySummary {
            mean_final_regret: rows.last().map_or(0.0, |r| r.mean_cum_regret),
            clamp_warnings: per_policy.iter().map(|r| r.clamp_warnings()).sum(),
            name,
            file,
        });
        agg_rows.extend(rows);
    }
    let aggregate_file = dir.join("aggregate.csv");
    write_file(&aggregate_file, &aggregate_csv(&agg_rows))?;
    Ok(ExperimentOutput {
        policies: summaries,
        aggregate_file,
        records,
    })
}

/// Paired one-sided sign test of "a < b" over replicates; ties dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test_less(a: &[f64], b: &[f64]) -> SignTest {
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let ties = a.len().min(b.len()) - wins - losses;
    let n = wins + losses;
    // binomial tail with log-space coefficients
    let ln_choose = |k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
    };
    let p_value = (wins..=n)
        .map(|k| (ln_choose(k) - n as f64 * 2f64.ln()).exp())
        .sum::<f64>()
        .min(1.0);
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Small-instance versions of the library's structural invariants.
pub fn invariant_suite() -> Vec<CheckOutcome> {
    let checks: Vec<(&'static str, checks::CheckFn)> = vec![
        ("posterior scale invariance", checks::scale_invariance),
        ("aggregated posterior equals row form", checks::aggregated_posterior),
        ("unit weights reduce to the plain GP", checks::unit_weight_reduction),
        ("posterior variance within prior range", checks::variance_range),
        ("QFF uniform error within bound", checks::qff_uniform_error),
        ("QFF primal and dual forms agree", checks::qff_forms),
        ("weighted gain below weight-dependent bound", checks::mig_certification),
        ("realized budget within declaration", checks::budget),
        ("regret nonnegative and cumulative", checks::regret_monotone),
        ("episodes are deterministic", checks::determinism),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

mod checks {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kernels::{ArmKernel, DomainGrid, KernelSpec};
    use crate::mig::{empirical_double_weighted_mig, empirical_qff_mig, DetForm, Weighting};
    use crate::qff::build_qff;
    use crate::wgp::{
        fit_aggregated_posterior, fit_qff_posterior, fit_weighted_posterior,
        posterior_scale_invariance_check, BanditHistory, QffArmFeatures, QffForm, WeightScheme,
    };

    pub type Check = Result<(bool, String)>;
    pub type CheckFn = fn() -> Check;

    fn kernel(n: usize, l: f64) -> Result<(DomainGrid, ArmKernel)> {
        let grid = DomainGrid::uniform_1d(n)?;
        let k = KernelSpec::squared_exponential(l)?.arm_kernel(&grid)?;
        Ok((grid, k))
    }

    fn history(num_arms: usize, len: usize, seed: u64) -> Result<BanditHistory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arms: Vec<usize> = (0..len).map(|_| rng.random_range(0..num_arms)).collect();
        let ys: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        BanditHistory::consecutive(num_arms, &arms, &ys)
    }

    pub fn scale_invariance() -> Check {
        let (_, k) = kernel(20, 0.2)?;
        let scheme = WeightScheme::exponential(0.9, 1.0)?;
        let mut ok = true;
        for seed in 0..5 {
            let h = history(20, 30, seed)?;
            for c in [1e-3, 1.0, 37.5, 1e3] {
                ok &= posterior_scale_invariance_check(&h, &scheme, &k, c)?;
            }
        }
        Ok((ok, "5 histories x 4 scales".into()))
    }

    pub fn aggregated_posterior() -> Check {
        let (_, k) = kernel(20, 0.2)?;
        let scheme = WeightScheme::exponential(0.95, 1.0)?;
        let mut worst = 0.0f64;
        for seed in 0..5 {
            let h = history(20, 80, seed)?;
            let a = fit_weighted_posterior(&h, &scheme, &k)?;
            let b = fit_aggregated_posterior(&h, &scheme, &k)?;
            for x in 0..20 {
                worst = worst
                    .max((a.mean_at(x) - b.mean_at(x)).abs())
                    .max((a.var_at(x) - b.var_at(x)).abs());
            }
        }
        Ok((worst <= 1e-9, format!("max deviation {worst:.2e}")))
    }

    pub fn unit_weight_reduction() -> Check {
        let (_, k) = kernel(15, 0.2)?;
        let h = history(15, 10, 3)?;
        let post = fit_weighted_posterior(&h, &WeightScheme::exponential(1.0, 1.0)?, &k)?;
        let arms: Vec<usize> = h.observations().iter().map(|o| o.arm).collect();
        let y = DVector::from_iterator(arms.len(), h.observations().iter().map(|o| o.y));
        let gram = k.block(&arms, &arms) + DMatrix::identity(arms.len(), arms.len());
        let inv = gram.try_inverse().ok_or_else(|| Error::input("singular"))?;
        let mut worst = 0.0f64;
        for x in 0..15 {
            let kx = k.block(&arms, &[x]).column(0).into_owned();
            let mean = kx.dot(&(&inv * &y));
            let var = k.k(x, x) - kx.dot(&(&inv * &kx));
            worst = worst.max((mean - post.mean_at(x)).abs()).max((var - post.var_at(x)).abs());
        }
        Ok((worst <= 1e-10, format!("max deviation {worst:.2e}")))
    }

    pub fn variance_range() -> Check {
        let (_, k) = kernel(30, 0.2)?;
        let mut ok = true;
        for seed in 0..5 {
            let h = history(30, 120, seed)?;
            let post = fit_weighted_posterior(&h, &WeightScheme::exponential(0.9, 1.0)?, &k)?;
            ok &= post.clamp_warnings() == 0;
            ok &= (0..30).all(|x| post.var_at(x) >= 0.0 && post.var_at(x) <= k.k(x, x));
        }
        Ok((ok, "5 histories of 120 rounds".into()))
    }

    pub fn qff_uniform_error() -> Check {
        let grid = DomainGrid::uniform_1d(41)?;
        let map = build_qff(6, 1, 0.5)?;
        let spec = KernelSpec::squared_exponential(0.5)?;
        let mut worst = 0.0f64;
        for x in grid.points() {
            for y in grid.points() {
                worst = worst.max((spec.eval_points(x, y)? - map.approx_kernel(x, y)?).abs());
            }
        }
        Ok((worst <= map.eps_m(), format!("sup error {worst:.2e} vs bound {:.2e}", map.eps_m())))
    }

    pub fn qff_forms() -> Check {
        let grid = DomainGrid::uniform_1d(30)?;
        let feats = QffArmFeatures::new(build_qff(4, 1, 0.3)?, &grid)?;
        let scheme = WeightScheme::exponential(0.9, 1.0)?;
        let h = history(30, 20, 11)?;
        let p = fit_qff_posterior(&h, &scheme, &feats, QffForm::Primal)?;
        let d = fit_qff_posterior(&h, &scheme, &feats, QffForm::Dual)?;
        let mut worst = (0..30)
            .map(|x| (p.mean_at(x) - d.mean_at(x)).abs().max((p.var_at(x) - d.var_at(x)).abs()))
            .fold(0.0, f64::max);
        let arms: Vec<usize> = h.observations().iter().map(|o| o.arm).collect();
        let gp = empirical_qff_mig(&arms, &scheme, &feats, DetForm::Primal)?;
        let gd = empirical_qff_mig(&arms, &scheme, &feats, DetForm::Dual)?;
        worst = worst.max((gp - gd).abs() / gd.abs().max(1e-300));
        Ok((worst <= 1e-8, format!("max deviation {worst:.2e}")))
    }

    pub fn mig_certification() -> Check {
        let (_, k) = kernel(100, 0.2)?;
        let params = EigendecayParams::SE_GRID;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut margin = f64::INFINITY;
        for eta in [0.9, 0.99] {
            let bound = params.best_weight_bound(eta, 1.0, 1.0, Weighting::Double, 200)?.1;
            let arms: Vec<usize> = (0..150).map(|_| rng.random_range(0..100)).collect();
            let gamma = empirical_double_weighted_mig(&arms, &WeightScheme::new(eta, 1.0, 0.0)?, &k)?;
            margin = margin.min(bound - gamma);
        }
        Ok((margin >= 0.0, format!("smallest margin {margin:.3}")))
    }

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.environment.horizon = 40;
        c.environment.grid_size = 20;
        c.environment.centers = 20;
        c.environment.breakpoints = vec![15, 30];
        c
    }

    pub fn budget() -> Check {
        let c = small_config();
        let mut ok = true;
        for seed in 0..3 {
            let b = c.build_environment(seed)?.budget().expect("synthetic budget");
            ok &= b.realized <= b.declared;
        }
        Ok((ok, "3 abrupt environments".into()))
    }

    pub fn regret_monotone() -> Check {
        let c = small_config();
        let env = c.build_environment(1)?;
        let mut ok = true;
        for p in c.resolve_policies(&env)? {
            let rec = run_policy_episode(&env, &p, NoiseModel::new(0.1, 1)?)?;
            let mut prev = 0.0;
            for r in &rec.rows {
                ok &= r.instant_regret >= 0.0 && r.cum_regret >= prev;
                prev = r.cum_regret;
            }
        }
        Ok((ok, "4 policies x 40 rounds".into()))
    }

    pub fn determinism() -> Check {
        let c = small_config();
        let env = c.build_environment(2)?;
        let p = &c.resolve_policies(&env)?[3];
        let a = run_policy_episode(&env, p, NoiseModel::new(0.1, 2)?)?;
        let b = run_policy_episode(&c.build_environment(2)?, p, NoiseModel::new(0.1, 2)?)?;
        Ok((a == b, "repeated WGP-UCB episode".into()))
    }
}
