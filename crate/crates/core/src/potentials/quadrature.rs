//! Gauss–Hermite quadrature for expectation values over Gaussian densities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{GwpdError, Result};
use crate::linalg;

/// Nodes and weights for ∫ f(z) N(z; 0, 1) dz.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(GwpdError::InvalidArgument("quadrature order must be at least 1".into()));
        }
        // Golub–Welsch on the physicists' Jacobi matrix, then Newton polish.
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut roots: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        roots.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut x in roots {
            let mut deriv = 0.0;
            for _ in 0..10 {
                let (p, dp) = orthonormal_hermite(n, x);
                deriv = dp;
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, dp) = orthonormal_hermite(n, x);
            if dp.is_finite() {
                deriv = dp;
            }
            // Physicists' weight 2/h'², rescaled to the unit normal density.
            nodes.push(x * 2f64.sqrt());
            weights.push(2.0 / (deriv * deriv) / PI.sqrt());
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Orthonormal Hermite function value p_n(x) (weight e^{-x²}) and its derivative √(2n)·p_{n−1}.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for j in 1..=n {
        let jf = j as f64;
        let next = x * (2.0 / jf).sqrt() * cur - ((jf - 1.0) / jf).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, (2.0 * n as f64).sqrt() * prev)
}

/// Tensor-product quadrature for E[f(c + x)], x ~ N(0, Σ).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationEngine {
    rule: GaussHermite,
    /// Polynomial potentials use exact Gaussian moments unless this is off.
    closed_form_polynomials: bool,
}

pub const DEFAULT_QUADRATURE_ORDER: usize = 16;

impl Default for ExpectationEngine {
    fn default() -> Self {
        Self::new(DEFAULT_QUADRATURE_ORDER).expect("default order is valid")
    }
}

impl ExpectationEngine {
    pub fn new(order: usize) -> Result<Self> {
        Ok(Self { rule: GaussHermite::new(order)?, closed_form_polynomials: true })
    }

    /// Forces quadrature even where closed forms exist.
    pub fn quadrature_only(mut self) -> Self {
        self.closed_form_polynomials = false;
        self
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    pub fn uses_closed_forms(&self) -> bool {
        self.closed_form_polynomials
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exact_degree(&self) -> u32 {
        2 * self.rule.order() as u32 - 1
    }

    /// Physical nodes c + Σ^{1/2}z and their weights.
    pub fn nodes(&self, center: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Vec<(DVector<f64>, f64)>> {
        let d = center.len();
        if sigma.shape() != (d, d) {
            return Err(GwpdError::InvalidArgument("covariance shape mismatch".into()));
        }
        linalg::require_positive_definite(sigma, "covariance")?;
        let eig = linalg::sym_eigen(sigma);
        let transform = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let n = self.rule.order();
        let total = n.pow(d as u32);
        let mut out = Vec::with_capacity(total);
        let mut z = DVector::zeros(d);
        for flat in 0..total {
            let mut rest = flat;
            let mut w = 1.0;
            for k in 0..d {
                let i = rest % n;
                rest /= n;
                z[k] = self.rule.nodes()[i];
                w *= self.rule.weights()[i];
            }
            out.push((center + &transform * &z, w));
        }
        Ok(out)
    }

    pub fn expect_scalar(
        &self,
        center: &DVector<f64>,
        sigma: &DMatrix<f64>,
        f: impl Fn(&DVector<f64>) -> f64,
    ) -> Result<f64> {
        Ok(self.nodes(center, sigma)?.iter().map(|(x, w)| w * f(x)).sum())
    }

    pub fn expect_matrix(
        &self,
        center: &DVector<f64>,
        sigma: &DMatrix<f64>,
        rows: usize,
        cols: usize,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(rows, cols);
        for (x, w) in self.nodes(center, sigma)? {
            acc += f(&x) * w;
        }
        Ok(acc)
    }
}
