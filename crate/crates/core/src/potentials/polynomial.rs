//! Multivariate polynomial potentials and their exact Gaussian moments.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{GwpdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub powers: Vec<u32>,
}

/// Σ c · Π q_i^{e_i}.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        if dim == 0 {
            return Err(GwpdError::InvalidSetup("polynomial dimension must be positive".into()));
        }
        for t in &terms {
            if t.powers.len() != dim {
                return Err(GwpdError::InvalidSetup(format!(
                    "monomial has {} powers, expected {dim}",
                    t.powers.len()
                )));
            }
            if !t.coefficient.is_finite() {
                return Err(GwpdError::InvalidSetup("non-finite polynomial coefficient".into()));
            }
        }
        Ok(Self { dim, terms }.simplified())
    }

    /// Builds from (coefficient, powers) pairs.
    pub fn from_terms(dim: usize, terms: &[(f64, &[u32])]) -> Result<Self> {
        Self::new(
            dim,
            terms
                .iter()
                .map(|(c, p)| Monomial { coefficient: *c, powers: p.to_vec() })
                .collect(),
        )
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.powers.iter().sum()).max().unwrap_or(0)
    }

    fn simplified(self) -> Self {
        let mut merged: Vec<Monomial> = Vec::new();
        for t in self.terms {
            if t.coefficient == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|m| m.powers == t.powers) {
                Some(m) => m.coefficient += t.coefficient,
                None => merged.push(t),
            }
        }
        merged.retain(|m| m.coefficient != 0.0);
        Self { dim: self.dim, terms: merged }
    }

    pub fn evaluate(&self, q: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coefficient
                    * t.powers.iter().zip(q.iter()).map(|(&e, &x)| x.powi(e as i32)).product::<f64>()
            })
            .sum()
    }

    /// ∂/∂q_i.
    pub fn derivative(&self, i: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[i] > 0)
            .map(|t| {
                let mut powers = t.powers.clone();
                let e = powers[i];
                powers[i] -= 1;
                Monomial { coefficient: t.coefficient * e as f64, powers }
            })
            .collect();
        Self { dim: self.dim, terms }.simplified()
    }

    /// Partial derivative along a sequence of coordinates.
    pub fn partial(&self, idx: &[usize]) -> Self {
        idx.iter().fold(self.clone(), |p, &i| p.derivative(i))
    }

    /// The polynomial x ↦ P(center + x), expanded binomially.
    pub fn shifted(&self, center: &DVector<f64>) -> Self {
        let mut terms = Vec::new();
        for t in &self.terms {
            let mut partial = vec![Monomial { coefficient: t.coefficient, powers: vec![0; self.dim] }];
            for (i, &e) in t.powers.iter().enumerate() {
                let mut next = Vec::with_capacity(partial.len() * (e as usize + 1));
                for m in &partial {
                    for k in 0..=e {
                        let c = binomial(e, k) * center[i].powi((e - k) as i32);
                        if c == 0.0 {
                            continue;
                        }
                        let mut powers = m.powers.clone();
                        powers[i] = k;
                        next.push(Monomial { coefficient: m.coefficient * c, powers });
                    }
                }
                partial = next;
            }
            terms.extend(partial);
        }
        Self { dim: self.dim, terms }.simplified()
    }

    /// ∫ P(center + x) N(x; 0, Σ) dx via Isserlis moments.
    pub fn gaussian_expectation(&self, center: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        let shifted = self.shifted(center);
        let mut moments = GaussianMoments::new(sigma);
        shifted
            .terms
            .iter()
            .map(|t| t.coefficient * moments.moment(&t.powers))
            .sum()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Raw moments E[Π x_i^{α_i}] of a centered Gaussian with covariance Σ.
pub struct GaussianMoments<'a> {
    sigma: &'a DMatrix<f64>,
    cache: HashMap<Vec<u32>, f64>,
}

impl<'a> GaussianMoments<'a> {
    pub fn new(sigma: &'a DMatrix<f64>) -> Self {
        Self { sigma, cache: HashMap::new() }
    }

    /// E[x_k x^β] = Σ_j Σ_kj β_j E[x^{β−e_j}] with α = β + e_k.
    pub fn moment(&mut self, alpha: &[u32]) -> f64 {
        let total: u32 = alpha.iter().sum();
        if total == 0 {
            return 1.0;
        }
        if total % 2 == 1 {
            return 0.0;
        }
        if let Some(v) = self.cache.get(alpha) {
            return *v;
        }
        let k = alpha.iter().position(|&a| a > 0).expect("nonzero total");
        let mut beta = alpha.to_vec();
        beta[k] -= 1;
        let mut acc = 0.0;
        for j in 0..beta.len() {
            if beta[j] == 0 || self.sigma[(k, j)] == 0.0 {
                continue;
            }
            let mut reduced = beta.clone();
            reduced[j] -= 1;
            acc += self.sigma[(k, j)] * beta[j] as f64 * self.moment(&reduced);
        }
        self.cache.insert(alpha.to_vec(), acc);
        acc
    }
}
