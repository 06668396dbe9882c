//! Quadrature Fourier features for the squared-exponential kernel.
//!
//! The feature map uses Gauss–Hermite nodes on a tensor grid:
//!
//! ```text
//! phi(x)_i     = sqrt(v(rho_i)) cos(sqrt(2)/l * rho_i . x)   i = 1..m
//! phi(x)_{m+i} = sqrt(v(rho_i)) sin(sqrt(2)/l * rho_i . x)
//! v(rho)       = prod_j 2^(mbar-1) mbar! / (mbar^2 H_{mbar-1}(rho_j)^2)
//! ```
//!
//! so that `phi(x) . phi(x')` is the quadrature rule for
//! `exp(-|x - x'|^2 / 2l^2)` and `phi(x) . phi(x) = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const MAX_NODES_PER_DIM: usize = 64;
pub const MAX_FEATURES: usize = 100_000;

/// Physicists' Hermite polynomial `H_n(x)` via the three-term recurrence.
pub fn hermite(n: usize, x: f64) -> f64 {
    hermite_pair(n, x).0
}

/// `(H_n(x), H_{n-1}(x))`, with `H_{-1} = 0`.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Roots of `H_mbar`, ascending and symmetric about zero.
///
/// Eigenvalues of the Jacobi matrix (zero diagonal, off-diagonal
/// `sqrt(k/2)`), each polished by one Newton step.
pub fn hermite_roots(mbar: usize) -> Result<Vec<f64>> {
    if mbar == 0 || mbar > MAX_NODES_PER_DIM {
        return Err(Error::input(format!(
            "nodes per dimension must be in 1..={MAX_NODES_PER_DIM}, got {mbar}"
        )));
    }
    let jacobi = DMatrix::from_fn(mbar, mbar, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().cloned().collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for r in roots.iter_mut() {
        let (h, h_prev) = hermite_pair(mbar, *r);
        let derivative = 2.0 * mbar as f64 * h_prev;
        if derivative != 0.0 {
            *r -= h / derivative;
        }
    }
    // enforce exact symmetry
    for i in 0..mbar / 2 {
        let mag = 0.5 * (roots[mbar - 1 - i] - roots[i]);
        roots[i] = -mag;
        roots[mbar - 1 - i] = mag;
    }
    if mbar % 2 == 1 {
        roots[mbar / 2] = 0.0;
    }
    Ok(roots)
}

/// Normalized quadrature weight of one Hermite root, computed in log space.
fn node_weight_1d(mbar: usize, root: f64) -> f64 {
    let log_factorial: f64 = (2..=mbar).map(|k| (k as f64).ln()).sum();
    let h = hermite(mbar - 1, root);
    let log_v = (mbar as f64 - 1.0) * std::f64::consts::LN_2 + log_factorial
        - 2.0 * (mbar as f64).ln()
        - 2.0 * h.abs().ln();
    log_v.exp()
}

/// Closed-form uniform error bound of the map on `[0,1]^d`:
/// `d 2^(d-1) / (sqrt(2) mbar^mbar) * (e / (4 l^2))^mbar`.
pub fn qff_error_bound(mbar: usize, dim: usize, lengthscale: f64) -> f64 {
    let m = mbar as f64;
    let d = dim as f64;
    let log_bound = d.ln() + (d - 1.0) * std::f64::consts::LN_2
        - 0.5 * std::f64::consts::LN_2
        - m * m.ln()
        + m * (1.0 - (4.0 * lengthscale * lengthscale).ln());
    log_bound.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QffMap {
    mbar: usize,
    dim: usize,
    /// `m` nodes, each of length `dim`.
    nodes: Vec<Vec<f64>>,
    node_weights: Vec<f64>,
    lengthscale: f64,
    eps_m: f64,
}

/// Builds the tensor-product map with `mbar` nodes per dimension.
pub fn build_qff(mbar: usize, dim: usize, lengthscale: f64) -> Result<QffMap> {
    if dim == 0 {
        return Err(Error::input("dimension must be positive"));
    }
    if !(lengthscale > 0.0 && lengthscale.is_finite()) {
        return Err(Error::input("lengthscale must be positive"));
    }
    let roots = hermite_roots(mbar)?;
    let count = (mbar as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    if count > MAX_FEATURES as u128 {
        return Err(Error::config(format!(
            "{mbar}^{dim} quadrature nodes exceed the limit of {MAX_FEATURES}"
        )));
    }
    let m = count as usize;
    let weights_1d: Vec<f64> = roots.iter().map(|&r| node_weight_1d(mbar, r)).collect();

    let mut nodes = Vec::with_capacity(m);
    let mut node_weights = Vec::with_capacity(m);
    for flat in 0..m {
        let mut rem = flat;
        let mut node = Vec::with_capacity(dim);
        let mut w = 1.0;
        for _ in 0..dim {
            let k = rem % mbar;
            rem /= mbar;
            node.push(roots[k]);
            w *= weights_1d[k];
        }
        node.reverse();
        nodes.push(node);
        node_weights.push(w);
    }
    Ok(QffMap {
        mbar,
        dim,
        nodes,
        node_weights,
        lengthscale,
        eps_m: qff_error_bound(mbar, dim, lengthscale),
    })
}

impl QffMap {
    pub fn mbar(&self) -> usize {
        self.mbar
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of quadrature nodes `m = mbar^d`.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Feature vector length `2m`.
    pub fn num_features(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn eps_m(&self) -> f64 {
        self.eps_m
    }

    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::input(format!(
                "point has dimension {} but the map expects {}",
                x.len(),
                self.dim
            )));
        }
        let m = self.nodes.len();
        let scale = std::f64::consts::SQRT_2 / self.lengthscale;
        let mut out = DVector::zeros(2 * m);
        for (i, (node, w)) in self.nodes.iter().zip(&self.node_weights).enumerate() {
            let arg = scale * node.iter().zip(x).map(|(r, xi)| r * xi).sum::<f64>();
            let amp = w.sqrt();
            out[i] = amp * arg.cos();
            out[m + i] = amp * arg.sin();
        }
        Ok(out)
    }

    /// Rows are feature vectors of `points`.
    pub fn feature_matrix(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.num_features());
        for (r, p) in points.iter().enumerate() {
            let f = self.features(p)?;
            out.row_mut(r).copy_from(&f.transpose());
        }
        Ok(out)
    }

    /// Approximate kernel `phi(x) . phi(x2)`.
    pub fn approx_kernel(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        Ok(self.features(x)?.dot(&self.features(x2)?))
    }
}
