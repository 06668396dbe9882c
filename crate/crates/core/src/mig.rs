//! Weighted information gains: empirical log-determinants on observed
//! points and the analytic upper bounds they are certified against.
//!
//! With relative weights `u_s = eta^(t - s)` the double-weighted gain is
//! `0.5 * log det(I + D K D / lambda)` with `D = diag(u_s)`, and the
//! single-weighted QFF gain is `0.5 * log det(I + Phi' U Phi / lambda)`
//! with `U = diag(u_s)`. Both equal their nominal-weight definitions
//! because the determinant only sees weights relative to the regularizer.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::ArmKernel;
use crate::linalg::log_det_identity_plus;
use crate::wgp::{BanditHistory, QffArmFeatures, WeightScheme};

/// Relative weights of a trajectory `arms[0]` (round 1) .. `arms[t-1]`
/// (round t), paired with the arm, after truncation.
fn relative_rows(arms: &[usize], scheme: &WeightScheme) -> Vec<(usize, f64)> {
    let t = arms.len();
    arms.iter()
        .enumerate()
        .filter(|(i, _)| scheme.keeps(t - 1 - i))
        .map(|(i, &a)| (a, scheme.relative_weight(t - 1 - i)))
        .collect()
}

fn check_arms(arms: &[usize], num_arms: usize) -> Result<()> {
    match arms.iter().find(|&&a| a >= num_arms) {
        Some(a) => Err(Error::input(format!("arm {a} out of range for {num_arms} arms"))),
        None => Ok(()),
    }
}

/// `0.5 * log det(I + D K D / lambda)` over the trajectory, one row per round.
pub fn empirical_double_weighted_mig(
    arms: &[usize],
    scheme: &WeightScheme,
    kernel: &ArmKernel,
) -> Result<f64> {
    check_arms(arms, kernel.num_arms())?;
    let rows = relative_rows(arms, scheme);
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i].1 * rows[j].1 * kernel.k(rows[i].0, rows[j].0));
    Ok(0.5 * log_det_identity_plus(&m, 1.0 / scheme.lambda())?)
}

/// Same value as [`empirical_double_weighted_mig`], from per-arm sums of
/// squared weights: `D K D` restricted to repeated arms has the same nonzero
/// spectrum as `S K_A S` with `S = diag(sqrt(sum u_s^2))`.
pub fn aggregated_double_weighted_mig(
    arms: &[usize],
    scheme: &WeightScheme,
    kernel: &ArmKernel,
) -> Result<f64> {
    check_arms(arms, kernel.num_arms())?;
    let mut sq: BTreeMap<usize, f64> = BTreeMap::new();
    for (a, u) in relative_rows(arms, scheme) {
        *sq.entry(a).or_insert(0.0) += u * u;
    }
    let idx: Vec<usize> = sq.keys().cloned().collect();
    let s: Vec<f64> = sq.values().map(|v| v.sqrt()).collect();
    let n = idx.len();
    let m = DMatrix::from_fn(n, n, |i, j| s[i] * s[j] * kernel.k(idx[i], idx[j]));
    Ok(0.5 * log_det_identity_plus(&m, 1.0 / scheme.lambda())?)
}

/// Double-weighted gain of the rounds retained in a history.
pub fn history_double_weighted_mig(
    history: &BanditHistory,
    scheme: &WeightScheme,
    kernel: &ArmKernel,
) -> Result<f64> {
    let Some(last) = history.last_round() else {
        return Ok(0.0);
    };
    let mut sq: BTreeMap<usize, f64> = BTreeMap::new();
    for o in history.observations() {
        if scheme.keeps(last - o.t) {
            let u = scheme.relative_weight(last - o.t);
            *sq.entry(o.arm).or_insert(0.0) += u * u;
        }
    }
    let idx: Vec<usize> = sq.keys().cloned().collect();
    let s: Vec<f64> = sq.values().map(|v| v.sqrt()).collect();
    let n = idx.len();
    let m = DMatrix::from_fn(n, n, |i, j| s[i] * s[j] * kernel.k(idx[i], idx[j]));
    Ok(0.5 * log_det_identity_plus(&m, 1.0 / scheme.lambda())?)
}

/// Determinant form used for the QFF gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetForm {
    /// `2m x 2m` feature-space determinant.
    Primal,
    /// `t x t` observation-space determinant.
    Dual,
}

/// `0.5 * log det(I + Phi' U Phi / lambda)` over the trajectory.
pub fn empirical_qff_mig(
    arms: &[usize],
    scheme: &WeightScheme,
    features: &QffArmFeatures,
    form: DetForm,
) -> Result<f64> {
    check_arms(arms, features.num_arms())?;
    let rows = relative_rows(arms, scheme);
    let phi = features.features();
    let m = match form {
        DetForm::Dual => {
            let n = rows.len();
            DMatrix::from_fn(n, n, |i, j| {
                (rows[i].1 * rows[j].1).sqrt() * features.approx_kernel(rows[i].0, rows[j].0)
            })
        }
        DetForm::Primal => {
            let dim = phi.ncols();
            let mut g = DMatrix::<f64>::zeros(dim, dim);
            for &(a, u) in &rows {
                let f = phi.row(a).transpose();
                g.ger(u, &f, &f, 1.0);
            }
            g
        }
    };
    Ok(0.5 * log_det_identity_plus(&m, 1.0 / scheme.lambda())?)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be positive, got {v}")))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta == 1.0 {
        return Err(Error::input(
            "the weight-dependent bound is undefined at eta = 1; use the universal bound",
        ));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::input(format!("eta must lie in (0, 1), got {eta}")));
    }
    Ok(())
}

/// Horizon-dependent bound `(N/2) log(1 + kdot T / (lambda N)) + T delta_N / (2 lambda)`.
pub fn mig_universal_bound(n: usize, t: usize, kdot: f64, lambda: f64, delta_n: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::input("projection dimension N must be positive"));
    }
    check_positive("kdot", kdot)?;
    check_positive("lambda", lambda)?;
    if !(delta_n >= 0.0) {
        return Err(Error::input(format!("delta_N must be nonnegative, got {delta_n}")));
    }
    let (n, t) = (n as f64, t as f64);
    Ok(0.5 * n * (kdot * t / (lambda * n)).ln_1p() + t * delta_n / (2.0 * lambda))
}

/// Whether the gain weights each observation once (QFF gain) or twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Double,
    Single,
}

impl Weighting {
    /// `1 - eta^2` for double weights, `1 - eta` for single.
    pub fn gap(self, eta: f64) -> f64 {
        match self {
            Weighting::Double => 1.0 - eta * eta,
            Weighting::Single => 1.0 - eta,
        }
    }
}

/// Horizon-free bound `(N/2) log(1 + kdot / (lambda N g)) + delta_N / (2 lambda g)`
/// with `g = 1 - eta^2` (double) or `1 - eta` (single).
pub fn mig_weight_bound(
    n: usize,
    eta: f64,
    kdot: f64,
    lambda: f64,
    delta_n: f64,
    weighting: Weighting,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::input("projection dimension N must be positive"));
    }
    check_eta(eta)?;
    check_positive("kdot", kdot)?;
    check_positive("lambda", lambda)?;
    if !(delta_n >= 0.0) {
        return Err(Error::input(format!("delta_N must be nonnegative, got {delta_n}")));
    }
    let g = weighting.gap(eta);
    let n = n as f64;
    Ok(0.5 * n * (kdot / (lambda * n * g)).ln_1p() + delta_n / (2.0 * lambda * g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigendecayKind {
    /// `c_m <= C_p m^-beta_p`, `beta_p > 1`.
    Polynomial { c_p: f64, beta_p: f64 },
    /// `c_m <= C_e1 exp(-C_e2 m^beta_e)`; only `beta_e = 1` has a closed form.
    Exponential { c_e1: f64, c_e2: f64, beta_e: f64 },
}

/// Mercer eigendecay of a kernel together with the eigenfunction bound `psi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigendecayParams {
    pub kind: EigendecayKind,
    pub psi: f64,
}

impl EigendecayParams {
    /// Constants for the SE kernel (lengthscale 0.2) on the 100-point unit
    /// grid; [`grid_spectrum`] checks that they majorize that spectrum.
    pub const SE_GRID: EigendecayParams = EigendecayParams {
        kind: EigendecayKind::Exponential {
            c_e1: 1.2,
            c_e2: 0.5,
            beta_e: 1.0,
        },
        psi: 1.2,
    };

    pub fn validate(&self) -> Result<()> {
        check_positive("psi", self.psi)?;
        match self.kind {
            EigendecayKind::Polynomial { c_p, beta_p } => {
                check_positive("C_p", c_p)?;
                if !(beta_p > 1.0 && beta_p.is_finite()) {
                    return Err(Error::input(format!("beta_p must exceed 1, got {beta_p}")));
                }
            }
            EigendecayKind::Exponential { c_e1, c_e2, beta_e } => {
                check_positive("C_e1", c_e1)?;
                check_positive("C_e2", c_e2)?;
                check_positive("beta_e", beta_e)?;
            }
        }
        Ok(())
    }

    /// Majorant of `c_m * psi^2` at index `m >= 1`.
    pub fn eigenvalue_bound(&self, m: usize) -> f64 {
        let m = m as f64;
        let psi2 = self.psi * self.psi;
        match self.kind {
            EigendecayKind::Polynomial { c_p, beta_p } => c_p * m.powf(-beta_p) * psi2,
            EigendecayKind::Exponential { c_e1, c_e2, beta_e } => {
                c_e1 * (-c_e2 * m.powf(beta_e)).exp() * psi2
            }
        }
    }

    /// Upper bound on the tail mass `delta_N = sum_{m > N} c_m psi^2`.
    pub fn tail_bound(&self, n: usize) -> Result<f64> {
        self.validate()?;
        let psi2 = self.psi * self.psi;
        let nf = n as f64;
        match self.kind {
            EigendecayKind::Polynomial { c_p, beta_p } => {
                Ok(c_p * nf.powf(1.0 - beta_p) * psi2 / (beta_p - 1.0))
            }
            EigendecayKind::Exponential { c_e1, c_e2, beta_e } => {
                if beta_e != 1.0 {
                    return Err(Error::Unsupported(format!(
                        "exponential eigendecay with beta_e = {beta_e} (only beta_e = 1)"
                    )));
                }
                Ok(c_e1 * psi2 / c_e2 * (-c_e2 * nf).exp())
            }
        }
    }

    /// Smallest weight-dependent bound over projection dimensions `1..=max_n`,
    /// with `delta_N` from [`Self::tail_bound`]. Returns `(N, bound)`.
    pub fn best_weight_bound(
        &self,
        eta: f64,
        kdot: f64,
        lambda: f64,
        weighting: Weighting,
        max_n: usize,
    ) -> Result<(usize, f64)> {
        let mut best = (0, f64::INFINITY);
        for n in 1..=max_n.max(1) {
            let b = mig_weight_bound(n, eta, kdot, lambda, self.tail_bound(n)?, weighting)?;
            if b < best.1 {
                best = (n, b);
            }
        }
        Ok(best)
    }
}

/// Closed-form eigendecay bound on the weighted gain.
pub fn mig_eigendecay_bound(
    params: &EigendecayParams,
    eta: f64,
    kdot: f64,
    lambda: f64,
    weighting: Weighting,
) -> Result<f64> {
    params.validate()?;
    check_eta(eta)?;
    check_positive("kdot", kdot)?;
    check_positive("lambda", lambda)?;
    let g = weighting.gap(eta);
    let log_term = (kdot / (lambda * g)).ln_1p();
    let psi2 = params.psi * params.psi;
    match params.kind {
        EigendecayKind::Polynomial { c_p, beta_p } => {
            let lead = (c_p * psi2 / (lambda * g)).powf(1.0 / beta_p) * log_term.powf(-1.0 / beta_p);
            Ok((lead + 1.0) * log_term)
        }
        EigendecayKind::Exponential { c_e1, c_e2, beta_e } => {
            if beta_e != 1.0 {
                return Err(Error::Unsupported(format!(
                    "exponential eigendecay with beta_e = {beta_e} (only beta_e = 1)"
                )));
            }
            let c_beta = (c_e1 * psi2 / (lambda * c_e2)).ln();
            Ok(((1.0 / c_e2) * ((1.0 / g).ln() + c_beta) + 1.0) * log_term)
        }
    }
}

/// One Mercer pair of a kernel on a finite grid under the uniform measure:
/// eigenvalue `c_m` of `K / n` and `sup_x phi_m(x)^2 = n * max_i v_m[i]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MercerTerm {
    pub eigenvalue: f64,
    pub sup_phi_sq: f64,
}

/// Discrete Mercer spectrum of the arm kernel, eigenvalues descending.
pub fn grid_spectrum(kernel: &ArmKernel) -> Vec<MercerTerm> {
    let n = kernel.num_arms();
    let eig = SymmetricEigen::new(kernel.gram() / n as f64);
    let mut terms: Vec<MercerTerm> = (0..n)
        .map(|m| MercerTerm {
            eigenvalue: eig.eigenvalues[m].max(0.0),
            sup_phi_sq: n as f64 * eig.eigenvectors.column(m).amax().powi(2),
        })
        .collect();
    terms.sort_by(|a, b| b.eigenvalue.total_cmp(&a.eigenvalue));
    terms
}

/// Eigenvalues below this are indistinguishable from roundoff of the
/// eigensolver and are not checked against the majorant.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

/// True iff `c_m * sup phi_m^2 <= params.eigenvalue_bound(m)` for every
/// resolvable term, indices starting at 1.
pub fn majorizes(params: &EigendecayParams, spectrum: &[MercerTerm]) -> bool {
    spectrum.iter().enumerate().all(|(i, term)| {
        term.eigenvalue < SPECTRUM_FLOOR
            || term.eigenvalue * term.sup_phi_sq <= params.eigenvalue_bound(i + 1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{DomainGrid, KernelSpec};
    use crate::qff::build_qff;

    fn se_grid(n: usize, l: f64) -> (DomainGrid, ArmKernel) {
        let grid = DomainGrid::uniform_1d(n).unwrap();
        let k = KernelSpec::squared_exponential(l).unwrap().arm_kernel(&grid).unwrap();
        (grid, k)
    }

    #[test]
    fn empirical_gain_examples() {
        let (_, k) = se_grid(5, 0.2);
        let s = WeightScheme::uniform(1.0).unwrap();
        assert_eq!(empirical_double_weighted_mig(&[], &s, &k).unwrap(), 0.0);
        let one = empirical_double_weighted_mig(&[2], &s, &k).unwrap();
        assert!((one - 0.5 * 2f64.ln()).abs() < 1e-14);
        let two = empirical_double_weighted_mig(&[2, 2], &s, &k).unwrap();
        assert!((two - 0.5 * 3f64.ln()).abs() < 1e-14);
        assert!(empirical_double_weighted_mig(&[5], &s, &k).is_err());
    }

    #[test]
    fn aggregated_gain_matches_rows() {
        let (_, k) = se_grid(30, 0.2);
        let arms: Vec<usize> = (0..150).map(|i| (i * 7 + i / 3) % 30).collect();
        for &eta in &[0.9, 0.99, 1.0] {
            let s = WeightScheme::exponential(eta, 1.0).unwrap();
            let a = empirical_double_weighted_mig(&arms, &s, &k).unwrap();
            let b = aggregated_double_weighted_mig(&arms, &s, &k).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} vs {b}");
            let h = BanditHistory::consecutive(30, &arms, &vec![0.0; arms.len()]).unwrap();
            let c = history_double_weighted_mig(&h, &s, &k).unwrap();
            assert!((a - c).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn qff_gain_forms_agree() {
        let grid = DomainGrid::uniform_1d(40).unwrap();
        let feats = QffArmFeatures::new(build_qff(4, 1, 0.3).unwrap(), &grid).unwrap();
        let s = WeightScheme::exponential(0.9, 1.0).unwrap();
        let arms: Vec<usize> = (0..20).map(|i| (i * 13) % 40).collect();
        let p = empirical_qff_mig(&arms, &s, &feats, DetForm::Primal).unwrap();
        let d = empirical_qff_mig(&arms, &s, &feats, DetForm::Dual).unwrap();
        assert!((p - d).abs() <= 1e-8 * d.abs());
        assert_eq!(empirical_qff_mig(&[], &s, &feats, DetForm::Primal).unwrap(), 0.0);

        let single = QffArmFeatures::new(build_qff(1, 1, 0.3).unwrap(), &grid).unwrap();
        let s1 = WeightScheme::uniform(1.0).unwrap();
        let g = empirical_qff_mig(&[7], &s1, &single, DetForm::Dual).unwrap();
        assert!((g - 0.5 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn universal_bound_examples() {
        assert_eq!(mig_universal_bound(3, 0, 1.0, 1.0, 0.5).unwrap(), 0.0);
        assert!((mig_universal_bound(1, 1, 1.0, 1.0, 0.0).unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
        let v = mig_universal_bound(2, 4, 1.0, 1.0, 0.1).unwrap();
        assert!((v - (3f64.ln() + 0.2)).abs() < 1e-14);
        assert!(mig_universal_bound(0, 4, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn weight_bound_examples() {
        let eta = 0.5f64.sqrt();
        let v = mig_weight_bound(1, eta, 1.0, 1.0, 0.0, Weighting::Double).unwrap();
        assert!((v - 0.5 * 3f64.ln()).abs() < 1e-12);
        let w = mig_weight_bound(1, eta, 1.0, 1.0, 0.2, Weighting::Double).unwrap();
        assert!((w - (0.5 * 3f64.ln() + 0.2)).abs() < 1e-12);
        assert!(mig_weight_bound(1, 1.0, 1.0, 1.0, 0.0, Weighting::Double).is_err());
        let single = mig_weight_bound(1, 0.5, 1.0, 1.0, 0.0, Weighting::Single).unwrap();
        assert!((single - 0.5 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn eigendecay_examples() {
        let eta = 0.5f64.sqrt();
        let poly = EigendecayParams {
            kind: EigendecayKind::Polynomial { c_p: 1.0, beta_p: 2.0 },
            psi: 1.0,
        };
        let l3 = 3f64.ln();
        let v = mig_eigendecay_bound(&poly, eta, 1.0, 1.0, Weighting::Double).unwrap();
        assert!((v - (2f64.sqrt() * l3.sqrt() + l3)).abs() < 1e-12);
        assert!((v - 2.5809).abs() < 1e-4);

        let expo = EigendecayParams {
            kind: EigendecayKind::Exponential { c_e1: 1.0, c_e2: 1.0, beta_e: 1.0 },
            psi: 1.0,
        };
        let e = mig_eigendecay_bound(&expo, eta, 1.0, 1.0, Weighting::Double).unwrap();
        assert!((e - (2f64.ln() + 1.0) * l3).abs() < 1e-12);

        let hi = mig_eigendecay_bound(&expo, 0.9, 1.0, 1.0, Weighting::Double).unwrap();
        let lo = mig_eigendecay_bound(&expo, 0.5, 1.0, 1.0, Weighting::Double).unwrap();
        assert!(hi >= lo);

        let bad = EigendecayParams {
            kind: EigendecayKind::Exponential { c_e1: 1.0, c_e2: 1.0, beta_e: 2.0 },
            psi: 1.0,
        };
        assert!(matches!(
            mig_eigendecay_bound(&bad, 0.9, 1.0, 1.0, Weighting::Double),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn tail_bounds() {
        let expo = EigendecayParams {
            kind: EigendecayKind::Exponential { c_e1: 2.0, c_e2: 0.5, beta_e: 1.0 },
            psi: 1.0,
        };
        assert!((expo.tail_bound(4).unwrap() - 4.0 * (-2f64).exp()).abs() < 1e-15);
        let poly = EigendecayParams {
            kind: EigendecayKind::Polynomial { c_p: 1.0, beta_p: 3.0 },
            psi: 2.0,
        };
        assert!((poly.tail_bound(2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn se_constants_majorize_grid_spectrum() {
        let (_, k) = se_grid(100, 0.2);
        let spectrum = grid_spectrum(&k);
        assert!(majorizes(&EigendecayParams::SE_GRID, &spectrum));
        // psi = 1 is not enough: the leading eigenfunctions peak above 1
        let tight = EigendecayParams {
            psi: 1.0,
            ..EigendecayParams::SE_GRID
        };
        assert!(!majorizes(&tight, &spectrum));
        let total: f64 = spectrum.iter().map(|t| t.eigenvalue).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}
