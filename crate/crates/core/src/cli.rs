//! `wgpb` command-line front end.
//!
//! Exit codes: 0 on success, 1 on input, configuration and usage errors,
//! 2 on numerical failures (including failed invariant checks).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::harness::{invariant_suite, run_experiment, ExperimentConfig};
use crate::mig::{
    mig_eigendecay_bound, mig_universal_bound, mig_weight_bound, EigendecayKind, EigendecayParams,
    Weighting,
};
use crate::policies::tune_parameters;

#[derive(Debug, Parser)]
#[command(name = "wgpb", version, about = "Weighted GP-UCB bandit experiments and bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        config: Option<PathBuf>,
        /// Print the default configuration and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Evaluate an information-gain bound.
    Bound(BoundArgs),
    /// Print the tuned discount factor, history length and QFF size.
    Tune {
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long = "gammadot")]
        gamma_dot: f64,
        /// Variation budget, if known.
        #[arg(long = "BT")]
        budget: Option<f64>,
    },
    /// Run the invariant suite on small instances.
    Check,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundKind {
    Universal,
    Weight,
    Eigendecay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecayKind {
    Exponential,
    Polynomial,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long, value_enum)]
    kind: BoundKind,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    kdot: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, conflicts_with = "eta2")]
    eta: Option<f64>,
    /// Squared discount factor, an alternative to --eta.
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long = "deltaN", default_value_t = 0.0)]
    delta_n: f64,
    /// Single-weighted (QFF) denominators.
    #[arg(long)]
    single: bool,
    #[arg(long, value_enum, default_value = "exponential")]
    decay: DecayKind,
    #[arg(long, default_value_t = 1.0)]
    cp: f64,
    #[arg(long, default_value_t = 2.0)]
    betap: f64,
    #[arg(long, default_value_t = 1.0)]
    ce1: f64,
    #[arg(long, default_value_t = 1.0)]
    ce2: f64,
    #[arg(long, default_value_t = 1.0)]
    betae: f64,
    #[arg(long, default_value_t = 1.0)]
    psi: f64,
}

impl BoundArgs {
    fn eta(&self) -> Result<f64> {
        match (self.eta, self.eta2) {
            (Some(e), None) => Ok(e),
            (None, Some(e2)) if e2 >= 0.0 => Ok(e2.sqrt()),
            (None, Some(e2)) => Err(Error::input(format!("eta2 must be nonnegative, got {e2}"))),
            _ => Err(Error::input("this bound needs --eta or --eta2")),
        }
    }

    fn evaluate(&self) -> Result<f64> {
        let weighting = if self.single { Weighting::Single } else { Weighting::Double };
        let need_n = || self.n.ok_or_else(|| Error::input("this bound needs --N"));
        match self.kind {
            BoundKind::Universal => {
                let t = self.horizon.ok_or_else(|| Error::input("the universal bound needs --T"))?;
                mig_universal_bound(need_n()?, t, self.kdot, self.lambda, self.delta_n)
            }
            BoundKind::Weight => {
                mig_weight_bound(need_n()?, self.eta()?, self.kdot, self.lambda, self.delta_n, weighting)
            }
            BoundKind::Eigendecay => {
                let kind = match self.decay {
                    DecayKind::Exponential => EigendecayKind::Exponential {
                        c_e1: self.ce1,
                        c_e2: self.ce2,
                        beta_e: self.betae,
                    },
                    DecayKind::Polynomial => EigendecayKind::Polynomial {
                        c_p: self.cp,
                        beta_p: self.betap,
                    },
                };
                let params = EigendecayParams { kind, psi: self.psi };
                mig_eigendecay_bound(&params, self.eta()?, self.kdot, self.lambda, weighting)
            }
        }
    }
}

/// Number with six significant digits and no trailing zeros.
fn six_digits(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = (5 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Parses `args` (program name first) and executes the command, writing to
/// the given streams. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match command {
        Command::Run {
            config,
            print_defaults,
        } => {
            if print_defaults {
                write!(out, "{}", ExperimentConfig::default().to_toml()).map_err(io)?;
                return Ok(0);
            }
            let path = config.ok_or_else(|| Error::input("run needs a config file"))?;
            let config = ExperimentConfig::load(&path)?;
            let output = run_experiment(&config)?;
            writeln!(out, "policy,mean_final_regret,clamp_warnings,file").map_err(io)?;
            for p in &output.policies {
                writeln!(
                    out,
                    "{},{},{},{}",
                    p.name,
                    six_digits(p.mean_final_regret),
                    p.clamp_warnings,
                    p.file.display()
                )
                .map_err(io)?;
            }
            writeln!(out, "aggregate,{}", output.aggregate_file.display()).map_err(io)?;
            Ok(0)
        }
        Command::Bound(args) => {
            writeln!(out, "{}", six_digits(args.evaluate()?)).map_err(io)?;
            Ok(0)
        }
        Command::Tune {
            horizon,
            gamma_dot,
            budget,
        } => {
            let t = tune_parameters(horizon, gamma_dot, budget)?;
            writeln!(out, "eta = {}", six_digits(t.eta)).map_err(io)?;
            writeln!(out, "c = {}", t.c).map_err(io)?;
            writeln!(out, "mbar = {}", t.mbar).map_err(io)?;
            Ok(0)
        }
        Command::Check => {
            let mut failed = 0;
            for c in invariant_suite() {
                let status = if c.passed { "ok  " } else { "FAIL" };
                failed += !c.passed as usize;
                writeln!(out, "{status} {} ({})", c.name, c.detail).map_err(io)?;
            }
            Ok(if failed == 0 { 0 } else { 2 })
        }
    }
}
