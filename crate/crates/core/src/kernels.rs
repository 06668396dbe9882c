//! Kernel functions, Gram matrices and the discrete decision domain.
//!
//! Two kernel families are supported: the squared-exponential kernel on
//! points of `[0,1]^d`, and an empirical covariance table indexed by arm.
//! Everything downstream works on arm indices of a [`DomainGrid`] through a
//! precomputed [`ArmKernel`], so adding a family only touches this module.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance for symmetry / PSD checks on kernel matrices.
pub const PSD_TOL: f64 = 1e-8;

/// Finite, ordered set of distinct points in `[0,1]^d`. Arms are identified
/// by their index in this list.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGrid {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl DomainGrid {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("domain dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::input("domain must contain at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::input(format!(
                    "point {i} has dimension {} but the domain has dimension {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::input(format!("point {i} lies outside [0,1]^{dim}")));
            }
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::input(format!("points {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { dim, points })
    }

    /// `n` evenly spaced points covering `[0,1]`, endpoints included.
    pub fn uniform_1d(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("grid size must be positive"));
        }
        let points = if n == 1 {
            vec![vec![0.0]]
        } else {
            (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
        };
        Self::new(1, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    SquaredExponential { lengthscale: f64 },
    /// Covariance table indexed by arm, already normalized to a unit
    /// maximum diagonal.
    EmpiricalCovariance { table: Arc<DMatrix<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    kdot: f64,
    variance_cap: f64,
}

impl KernelSpec {
    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::input(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(Self {
            family: KernelFamily::SquaredExponential { lengthscale },
            kdot: 1.0,
            variance_cap: 1.0,
        })
    }

    /// Builds the arm-indexed covariance kernel. The table is symmetrized,
    /// jittered by `1e-10 * max(1, trace/n)` and scaled so that its largest
    /// diagonal entry is one.
    pub fn empirical_covariance(table: DMatrix<f64>) -> Result<Self> {
        let n = table.nrows();
        if n == 0 || n != table.ncols() {
            return Err(Error::input("covariance table must be square and nonempty"));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("covariance table contains non-finite entries"));
        }
        let scale = table.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if !linalg::is_symmetric(&table, 1e-8 * scale) {
            return Err(Error::input("covariance table is not symmetric"));
        }
        let mut table = (&table + table.transpose()) * 0.5;
        let jitter = linalg::standalone_jitter(&table);
        for i in 0..n {
            table[(i, i)] += jitter;
        }
        let max_diag = table.diagonal().max();
        table /= max_diag;
        if !linalg::is_psd(&table, PSD_TOL) {
            return Err(Error::input("covariance table is not positive semidefinite"));
        }
        let kdot = table.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        Ok(Self {
            family: KernelFamily::EmpiricalCovariance {
                table: Arc::new(table),
            },
            kdot,
            variance_cap: 1.0,
        })
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    /// Upper bound on `|k(x, x')|`.
    pub fn kdot(&self) -> f64 {
        self.kdot
    }

    /// Assumed bound on `k(x, x)`.
    pub fn variance_cap(&self) -> f64 {
        self.variance_cap
    }

    pub fn lengthscale(&self) -> Option<f64> {
        match self.family {
            KernelFamily::SquaredExponential { lengthscale } => Some(lengthscale),
            KernelFamily::EmpiricalCovariance { .. } => None,
        }
    }

    /// Kernel between two points. Only defined for point-based families.
    pub fn eval_points(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        match &self.family {
            KernelFamily::SquaredExponential { lengthscale } => se_kernel(x, x2, *lengthscale),
            KernelFamily::EmpiricalCovariance { .. } => Err(Error::Unsupported(
                "the empirical covariance kernel is indexed by arm, not by point".into(),
            )),
        }
    }

    /// Kernel between two arms of `grid`.
    pub fn eval_arms(&self, grid: &DomainGrid, i: usize, j: usize) -> Result<f64> {
        match &self.family {
            KernelFamily::SquaredExponential { lengthscale } => {
                se_kernel(grid.point(i), grid.point(j), *lengthscale)
            }
            KernelFamily::EmpiricalCovariance { table } => {
                if table.nrows() != grid.size() {
                    return Err(Error::input(format!(
                        "covariance table has {} arms but the domain has {}",
                        table.nrows(),
                        grid.size()
                    )));
                }
                Ok(table[(i, j)])
            }
        }
    }

    /// Precomputes the Gram matrix over every arm of `grid`.
    pub fn arm_kernel(&self, grid: &DomainGrid) -> Result<ArmKernel> {
        let n = grid.size();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_arms(grid, i, j)?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        Ok(ArmKernel {
            spec: self.clone(),
            gram,
        })
    }
}

/// Squared-exponential kernel `exp(-|x - x2|^2 / (2 l^2))`.
pub fn se_kernel(x: &[f64], x2: &[f64], lengthscale: f64) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            x2.len()
        )));
    }
    if !(lengthscale > 0.0) {
        return Err(Error::input("lengthscale must be positive"));
    }
    let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * lengthscale * lengthscale)).exp())
}

/// `K[i][j] = k(points[i], points[j])`.
pub fn kernel_matrix(points: &[Vec<f64>], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::input("kernel matrix needs at least one point"));
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval_points(&points[i], &points[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `[k(points[0], x), ..., k(points[n-1], x)]`.
pub fn kernel_vector(points: &[Vec<f64>], x: &[f64], spec: &KernelSpec) -> Result<DVector<f64>> {
    let values = points
        .iter()
        .map(|p| spec.eval_points(p, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

/// Gram matrix over all arms of a domain, the form every posterior and
/// information-gain routine consumes.
#[derive(Debug, Clone)]
pub struct ArmKernel {
    spec: KernelSpec,
    gram: DMatrix<f64>,
}

impl ArmKernel {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn num_arms(&self) -> usize {
        self.gram.nrows()
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[(i, j)]
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Sub-matrix `K[rows][cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.gram[(rows[a], cols[b])])
    }

    pub fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.num_arms() {
            return Err(Error::input(format!(
                "arm index {arm} out of range for {} arms",
                self.num_arms()
            )));
        }
        Ok(())
    }
}
