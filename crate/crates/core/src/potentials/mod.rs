//! Model potentials with derivative tensors up to fourth order, plus Gaussian
//! expectation values of V, V′ and V″.

mod polynomial;
mod quadrature;
mod spline;
mod tensor;

pub use polynomial::{GaussianMoments, Monomial, Polynomial};
pub use quadrature::{ExpectationEngine, GaussHermite, DEFAULT_QUADRATURE_ORDER};
pub use spline::CubicSpline;
pub use tensor::SymTensor;

use nalgebra::{DMatrix, DVector};

use crate::error::{GwpdError, Result};
use crate::linalg;
use crate::state::GaussianHeller;
use crate::setup::PhysicalSetup;

/// Default central-difference steps for third and fourth derivatives.
pub const FD_STEP_THIRD: f64 = 1e-3;
pub const FD_STEP_FOURTH: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// V = v0 + (q − c)ᵀK(q − c)/2.
    Harmonic { hessian: DMatrix<f64>, center: DVector<f64>, offset: f64 },
    /// V = Σ_i D_i (1 − exp(−a_i (q_i − q_e,i)))².
    Morse { depth: DVector<f64>, stiffness: DVector<f64>, equilibrium: DVector<f64> },
    /// V = Σ_i h ((q_i/w)² − 1)², barrier h at the origin and minima at ±w.
    QuarticDoubleWell { barrier: f64, half_width: f64, expanded: Polynomial },
    Polynomial(Polynomial),
    /// Tabulated 1-D potential through a natural cubic spline.
    UserTable(CubicSpline),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    dim: usize,
    kind: PotentialKind,
}

/// ⟨V⟩, ⟨V′⟩, ⟨V″⟩ over a Gaussian density.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectations {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Set when quadrature was used on a polynomial above its exact degree.
    pub underresolved: bool,
}

impl PotentialModel {
    pub fn harmonic(hessian: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let dim = center.len();
        if dim == 0 || hessian.shape() != (dim, dim) {
            return Err(GwpdError::InvalidSetup("harmonic potential shape mismatch".into()));
        }
        if linalg::max_abs(&(&hessian - hessian.transpose())) > 1e-12 * linalg::max_abs(&hessian) {
            return Err(GwpdError::InvalidSetup("harmonic Hessian is not symmetric".into()));
        }
        if !linalg::is_positive_definite(&hessian) {
            return Err(GwpdError::InvalidSetup("harmonic Hessian is not positive definite".into()));
        }
        let hessian = linalg::symmetrize(&hessian);
        Ok(Self { dim, kind: PotentialKind::Harmonic { hessian, center, offset: 0.0 } })
    }

    /// V = mω²q²/2 in one dimension.
    pub fn harmonic_1d(mass: f64, omega: f64) -> Result<Self> {
        Self::harmonic(DMatrix::from_element(1, 1, mass * omega * omega), DVector::zeros(1))
    }

    pub fn morse(depth: DVector<f64>, stiffness: DVector<f64>, equilibrium: DVector<f64>) -> Result<Self> {
        let dim = depth.len();
        if dim == 0 || stiffness.len() != dim || equilibrium.len() != dim {
            return Err(GwpdError::InvalidSetup("Morse parameter lengths differ".into()));
        }
        if depth.iter().any(|d| !(*d > 0.0)) || stiffness.iter().any(|a| !(*a > 0.0)) {
            return Err(GwpdError::InvalidSetup("Morse requires D_e > 0 and a > 0".into()));
        }
        if equilibrium.iter().any(|q| !q.is_finite()) {
            return Err(GwpdError::InvalidSetup("Morse equilibrium must be finite".into()));
        }
        Ok(Self { dim, kind: PotentialKind::Morse { depth, stiffness, equilibrium } })
    }

    pub fn morse_1d(depth: f64, stiffness: f64, equilibrium: f64) -> Result<Self> {
        Self::morse(
            DVector::from_element(1, depth),
            DVector::from_element(1, stiffness),
            DVector::from_element(1, equilibrium),
        )
    }

    pub fn quartic_double_well(dim: usize, barrier: f64, half_width: f64) -> Result<Self> {
        if dim == 0 || !(barrier > 0.0) || !(half_width > 0.0) {
            return Err(GwpdError::InvalidSetup("double well needs barrier > 0 and half_width > 0".into()));
        }
        let mut terms = vec![Monomial { coefficient: barrier * dim as f64, powers: vec![0; dim] }];
        for i in 0..dim {
            let mut p4 = vec![0; dim];
            p4[i] = 4;
            let mut p2 = vec![0; dim];
            p2[i] = 2;
            terms.push(Monomial { coefficient: barrier / half_width.powi(4), powers: p4 });
            terms.push(Monomial { coefficient: -2.0 * barrier / half_width.powi(2), powers: p2 });
        }
        let expanded = Polynomial::new(dim, terms)?;
        Ok(Self { dim, kind: PotentialKind::QuarticDoubleWell { barrier, half_width, expanded } })
    }

    pub fn polynomial(poly: Polynomial) -> Self {
        Self { dim: poly.dim(), kind: PotentialKind::Polynomial(poly) }
    }

    pub fn user_table(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        Ok(Self { dim: 1, kind: PotentialKind::UserTable(CubicSpline::new(x, v)?) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            PotentialKind::Harmonic { .. } => "harmonic",
            PotentialKind::Morse { .. } => "morse",
            PotentialKind::QuarticDoubleWell { .. } => "quartic_double_well",
            PotentialKind::Polynomial(_) => "polynomial",
            PotentialKind::UserTable(_) => "user_table",
        }
    }

    /// Highest derivative order available in closed form.
    pub fn analytic_order(&self) -> usize {
        match self.kind {
            PotentialKind::UserTable(_) => 2,
            _ => 4,
        }
    }

    /// Exact polynomial representation, if the model has one.
    pub fn as_polynomial(&self) -> Option<Polynomial> {
        match &self.kind {
            PotentialKind::Polynomial(p) => Some(p.clone()),
            PotentialKind::QuarticDoubleWell { expanded, .. } => Some(expanded.clone()),
            PotentialKind::Harmonic { hessian, center, offset } => {
                let d = self.dim;
                let mut terms = vec![Monomial {
                    coefficient: *offset + 0.5 * center.dot(&(hessian * center)),
                    powers: vec![0; d],
                }];
                let lin = -(hessian * center);
                for i in 0..d {
                    let mut p = vec![0; d];
                    p[i] = 1;
                    terms.push(Monomial { coefficient: lin[i], powers: p });
                    for j in 0..d {
                        let mut p = vec![0; d];
                        p[i] += 1;
                        p[j] += 1;
                        terms.push(Monomial { coefficient: 0.5 * hessian[(i, j)], powers: p });
                    }
                }
                Polynomial::new(d, terms).ok()
            }
            _ => None,
        }
    }

    fn check_point(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dim {
            return Err(GwpdError::InvalidArgument(format!(
                "point has dimension {}, potential has {}",
                q.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn value(&self, q: &DVector<f64>) -> f64 {
        match &self.kind {
            PotentialKind::Harmonic { hessian, center, offset } => {
                let x = q - center;
                offset + 0.5 * x.dot(&(hessian * &x))
            }
            PotentialKind::Morse { .. } => self.morse_derivative(q, 0).iter().sum(),
            PotentialKind::QuarticDoubleWell { expanded, .. } => expanded.evaluate(q),
            PotentialKind::Polynomial(p) => p.evaluate(q),
            PotentialKind::UserTable(s) => s.evaluate(q[0]).0,
        }
    }

    pub fn gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            PotentialKind::Harmonic { hessian, center, .. } => hessian * (q - center),
            PotentialKind::Morse { .. } => self.morse_derivative(q, 1),
            PotentialKind::QuarticDoubleWell { expanded: p, .. } | PotentialKind::Polynomial(p) => {
                DVector::from_fn(self.dim, |i, _| p.derivative(i).evaluate(q))
            }
            PotentialKind::UserTable(s) => DVector::from_element(1, s.evaluate(q[0]).1),
        }
    }

    pub fn hessian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            PotentialKind::Harmonic { hessian, .. } => hessian.clone(),
            PotentialKind::Morse { .. } => DMatrix::from_diagonal(&self.morse_derivative(q, 2)),
            PotentialKind::QuarticDoubleWell { expanded: p, .. } | PotentialKind::Polynomial(p) => {
                let m = DMatrix::from_fn(self.dim, self.dim, |i, j| p.partial(&[i, j]).evaluate(q));
                linalg::symmetrize(&m)
            }
            PotentialKind::UserTable(s) => DMatrix::from_element(1, 1, s.evaluate(q[0]).2),
        }
    }

    /// V‴(q): analytic where available, otherwise Richardson-extrapolated central differences.
    pub fn third(&self, q: &DVector<f64>) -> SymTensor {
        self.analytic_tensor(q, 3)
            .unwrap_or_else(|| richardson_tensor(self, q, 3, FD_STEP_THIRD))
    }

    /// V⁽⁴⁾(q), same fallback rule as [`Self::third`].
    pub fn fourth(&self, q: &DVector<f64>) -> SymTensor {
        self.analytic_tensor(q, 4)
            .unwrap_or_else(|| richardson_tensor(self, q, 4, FD_STEP_FOURTH))
    }

    fn analytic_tensor(&self, q: &DVector<f64>, order: usize) -> Option<SymTensor> {
        let d = self.dim;
        match &self.kind {
            PotentialKind::Harmonic { .. } => Some(SymTensor::zeros(d, order)),
            PotentialKind::Morse { .. } => {
                let diag = self.morse_derivative(q, order as u32);
                let mut t = SymTensor::zeros(d, order);
                for i in 0..d {
                    t.set(&vec![i; order], diag[i]);
                }
                Some(t)
            }
            PotentialKind::QuarticDoubleWell { expanded: p, .. } | PotentialKind::Polynomial(p) => {
                let mut t = SymTensor::zeros(d, order);
                for idx in t.indices() {
                    let v = p.partial(&idx).evaluate(q);
                    t.set(&idx, v);
                }
                Some(t)
            }
            PotentialKind::UserTable(_) => None,
        }
    }

    /// Per-coordinate n-th derivative of the separable Morse sum:
    /// with u = e^{−ay}, f⁽ⁿ⁾ = D[−2(−a)ⁿu + (−2a)ⁿu²] for n ≥ 1.
    fn morse_derivative(&self, q: &DVector<f64>, n: u32) -> DVector<f64> {
        let PotentialKind::Morse { depth, stiffness, equilibrium } = &self.kind else {
            unreachable!("called on a Morse model only");
        };
        DVector::from_fn(self.dim, |i, _| {
            let (d, a) = (depth[i], stiffness[i]);
            let u = (-a * (q[i] - equilibrium[i])).exp();
            if n == 0 {
                d * (1.0 - u) * (1.0 - u)
            } else {
                let k = n as i32;
                d * (-2.0 * (-a).powi(k) * u + (-2.0 * a).powi(k) * u * u)
            }
        })
    }

    /// Derivative tensor of rank `order` at q.
    pub fn evaluate(&self, q: &DVector<f64>, order: usize) -> Result<SymTensor> {
        self.check_point(q)?;
        match order {
            0 => Ok(SymTensor::scalar(self.value(q))),
            1 => Ok(SymTensor::from_vector(&self.gradient(q))),
            2 => Ok(SymTensor::from_matrix(&self.hessian(q))),
            3 => Ok(self.third(q)),
            4 => Ok(self.fourth(q)),
            _ => Err(GwpdError::UnsupportedOrder { kind: self.kind_name().into(), order }),
        }
    }

    /// ⟨V⟩, ⟨V′⟩, ⟨V″⟩ under the position density of `state`.
    pub fn gaussian_expectation(
        &self,
        state: &GaussianHeller,
        setup: &PhysicalSetup,
        engine: &ExpectationEngine,
    ) -> Result<Expectations> {
        let sigma = state.position_covariance(setup)?;
        self.expectations_at(state.q(), &sigma, engine)
    }

    /// Expectations over N(center, Σ).
    pub fn expectations_at(
        &self,
        center: &DVector<f64>,
        sigma: &DMatrix<f64>,
        engine: &ExpectationEngine,
    ) -> Result<Expectations> {
        self.check_point(center)?;
        let d = self.dim;
        let poly = self.as_polynomial();
        if let (Some(p), true) = (&poly, engine.uses_closed_forms()) {
            linalg::require_positive_definite(sigma, "covariance")?;
            let gradient = DVector::from_fn(d, |i, _| p.derivative(i).gaussian_expectation(center, sigma));
            let hessian =
                DMatrix::from_fn(d, d, |i, j| p.partial(&[i, j]).gaussian_expectation(center, sigma));
            return Ok(Expectations {
                value: p.gaussian_expectation(center, sigma),
                gradient,
                hessian: linalg::symmetrize(&hessian),
                underresolved: false,
            });
        }
        let nodes = engine.nodes(center, sigma)?;
        let mut value = 0.0;
        let mut gradient = DVector::zeros(d);
        let mut hessian = DMatrix::zeros(d, d);
        for (x, w) in &nodes {
            value += w * self.value(x);
            gradient += self.gradient(x) * *w;
            hessian += self.hessian(x) * *w;
        }
        let underresolved = poly.map_or(false, |p| p.degree() > engine.exact_degree());
        Ok(Expectations { value, gradient, hessian: linalg::symmetrize(&hessian), underresolved })
    }
}

/// Central differences of the highest analytic derivative, symmetrized.
/// Order 3 differentiates V″ once; order 4 differentiates V‴ once if it is
/// analytic, otherwise V″ twice.
pub fn finite_difference_tensor(
    model: &PotentialModel,
    q: &DVector<f64>,
    order: usize,
    step: f64,
) -> Result<SymTensor> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(GwpdError::InvalidArgument("finite-difference step must be positive".into()));
    }
    if !(order == 3 || order == 4) {
        return Err(GwpdError::UnsupportedOrder { kind: "finite difference".into(), order });
    }
    model.check_point(q)?;
    Ok(central_tensor(model, q, order, step))
}

fn central_tensor(model: &PotentialModel, q: &DVector<f64>, order: usize, h: f64) -> SymTensor {
    let d = model.dim();
    let shift = |k: usize, s: f64| {
        let mut x = q.clone();
        x[k] += s;
        x
    };
    let mut t = SymTensor::zeros(d, order);
    if order == 3 || model.analytic_order() >= 3 {
        // One derivative of the rank-(order−1) tensor.
        let lower = |x: &DVector<f64>| -> SymTensor {
            if order == 3 {
                SymTensor::from_matrix(&model.hessian(x))
            } else {
                model.analytic_tensor(x, 3).expect("analytic third derivative")
            }
        };
        for k in 0..d {
            let plus = lower(&shift(k, h));
            let minus = lower(&shift(k, -h));
            for idx in plus.indices() {
                let mut full = idx.clone();
                full.push(k);
                t.set(&full, (plus.get(&idx) - minus.get(&idx)) / (2.0 * h));
            }
        }
    } else {
        for k in 0..d {
            for l in 0..d {
                let mut pp = shift(k, h);
                pp[l] += h;
                let mut pm = shift(k, h);
                pm[l] -= h;
                let mut mp = shift(k, -h);
                mp[l] += h;
                let mut mm = shift(k, -h);
                mm[l] -= h;
                let m = (model.hessian(&pp) - model.hessian(&pm) - model.hessian(&mp) + model.hessian(&mm))
                    / (4.0 * h * h);
                for i in 0..d {
                    for j in 0..d {
                        t.set(&[i, j, k, l], m[(i, j)]);
                    }
                }
            }
        }
    }
    t.symmetrized()
}

/// (4·T(h/2) − T(h))/3, cancelling the O(h²) term of the central difference.
fn richardson_tensor(model: &PotentialModel, q: &DVector<f64>, order: usize, h: f64) -> SymTensor {
    let coarse = central_tensor(model, q, order, h);
    let fine = central_tensor(model, q, order, 0.5 * h);
    (&(fine * 4.0) + &(coarse * -1.0)) * (1.0 / 3.0)
}
