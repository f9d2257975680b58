//! Gaussian wavepacket states in Heller's (q, p, A, γ) and Hagedorn's
//! (q, p, Q, P, S) parametrizations, plus conversions between them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{GwpdError, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::setup::PhysicalSetup;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Tolerance on the Hagedorn relations QᵀP − PᵀQ = 0 and Q†P − P†Q = 2i·Id.
pub const HAGEDORN_RELATION_TOLERANCE: f64 = 1e-10;

/// Gaussian in Heller's parametrization,
/// ψ(q) = exp[(i/ħ)(xᵀAx/2 + pᵀx + γ)] with x = q − q_t.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeller {
    q: DVector<f64>,
    p: DVector<f64>,
    a: CMatrix,
    gamma: Complex64,
}

impl GaussianHeller {
    pub fn new(q: DVector<f64>, p: DVector<f64>, a: CMatrix, gamma: Complex64) -> Result<Self> {
        let dim = q.len();
        if dim == 0 || p.len() != dim || a.shape() != (dim, dim) {
            return Err(GwpdError::InvalidState("inconsistent dimensions".into()));
        }
        let scale = linalg::max_abs_complex(&a);
        if linalg::max_abs_complex(&(&a - a.transpose())) > 1e-12 * scale.max(1.0) {
            return Err(GwpdError::InvalidState("width matrix A is not symmetric".into()));
        }
        let state = Self { q, p, a: linalg::symmetrize_complex(&a), gamma };
        state.check_invariants()?;
        Ok(state)
    }

    pub fn from_parts(
        q: DVector<f64>,
        p: DVector<f64>,
        re_a: &DMatrix<f64>,
        im_a: &DMatrix<f64>,
        gamma: Complex64,
    ) -> Result<Self> {
        Self::new(q, p, linalg::complexify(re_a, im_a), gamma)
    }

    /// One-dimensional convenience constructor.
    pub fn new_1d(q: f64, p: f64, a: Complex64, gamma: Complex64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, q),
            DVector::from_element(1, p),
            DMatrix::from_element(1, 1, a),
            gamma,
        )
    }

    /// Internal constructor for updates that preserve symmetry analytically.
    pub(crate) fn from_raw(q: DVector<f64>, p: DVector<f64>, a: CMatrix, gamma: Complex64) -> Self {
        Self { q, p, a: linalg::symmetrize_complex(&a), gamma }
    }

    /// A symmetric with finite entries and positive-definite imaginary part.
    pub fn check_invariants(&self) -> Result<()> {
        if self.q.iter().chain(self.p.iter()).any(|x| !x.is_finite())
            || self.a.iter().any(|z| !z.is_finite())
            || !self.gamma.is_finite()
        {
            return Err(GwpdError::InvalidState("non-finite parameter".into()));
        }
        linalg::require_positive_definite(&self.im_a(), "Im A")
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn gamma(&self) -> Complex64 {
        self.gamma
    }

    /// 𝒜 = Re A.
    pub fn re_a(&self) -> DMatrix<f64> {
        linalg::real_part(&self.a)
    }

    /// ℬ = Im A.
    pub fn im_a(&self) -> DMatrix<f64> {
        linalg::imag_part(&self.a)
    }

    pub fn with_gamma(&self, gamma: Complex64) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn with_momentum(&self, p: DVector<f64>) -> Self {
        Self { p, ..self.clone() }
    }

    /// Σ = Cov(q̂) = (ħ/2)(Im A)⁻¹.
    pub fn position_covariance(&self, setup: &PhysicalSetup) -> Result<DMatrix<f64>> {
        let inv = linalg::inverse(&self.im_a(), "Im A")?;
        Ok(linalg::symmetrize(&(inv * (0.5 * setup.hbar()))))
    }

    /// Sets Im γ so that exp(−Im γ/ħ) = det(Im A/(πħ))^{1/4}, leaving Re γ untouched.
    pub fn normalized(&self, setup: &PhysicalSetup) -> Result<Self> {
        linalg::require_positive_definite(&self.im_a(), "Im A")?;
        let hbar = setup.hbar();
        let eig = linalg::sym_eigen(&self.im_a());
        let ln_det: f64 = eig.eigenvalues.iter().map(|b| (b / (PI * hbar)).ln()).sum();
        let im_gamma = -0.25 * hbar * ln_det;
        Ok(self.with_gamma(Complex64::new(self.gamma.re, im_gamma)))
    }

    /// ξ = A·x + p.
    pub fn xi(&self, point: &DVector<f64>) -> CVector {
        let x = linalg::to_complex_vec(&(point - &self.q));
        &self.a * x + linalg::to_complex_vec(&self.p)
    }

    pub fn wavefunction(&self, point: &DVector<f64>, setup: &PhysicalSetup) -> Complex64 {
        let x = point - &self.q;
        let xc = linalg::to_complex_vec(&x);
        let quad = (xc.transpose() * &self.a * &xc)[(0, 0)];
        let phase = 0.5 * quad + Complex64::new(self.p.dot(&x), 0.0) + self.gamma;
        (I / setup.hbar() * phase).exp()
    }

    /// ∇ψ = (i/ħ)·ξ·ψ.
    pub fn wavefunction_gradient(&self, point: &DVector<f64>, setup: &PhysicalSetup) -> CVector {
        let psi = self.wavefunction(point, setup);
        self.xi(point) * (I / setup.hbar() * psi)
    }

    /// Probability density of the normalized Gaussian at displacement x from its center.
    pub fn density(&self, x: &DVector<f64>, setup: &PhysicalSetup) -> Result<f64> {
        let sigma = self.position_covariance(setup)?;
        let sigma_inv = linalg::inverse(&sigma, "position covariance")?;
        let det = (&sigma * (2.0 * PI)).determinant();
        if !(det > 0.0) {
            return Err(GwpdError::InvalidState("singular position covariance".into()));
        }
        Ok(det.powf(-0.5) * (-0.5 * x.dot(&(&sigma_inv * x))).exp())
    }

    /// Coordinates (q, p, Re A upper triangle, Im A upper triangle).
    pub fn coordinates(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(TangentVector::coordinate_count(d));
        out.extend(self.q.iter());
        out.extend(self.p.iter());
        let re = self.re_a();
        let im = self.im_a();
        out.extend(upper_triangle(&re));
        out.extend(upper_triangle(&im));
        DVector::from_vec(out)
    }

    pub fn from_coordinates(coords: &DVector<f64>, gamma: Complex64) -> Result<Self> {
        let t = TangentVector::from_coordinates(coords)?;
        Self::from_parts(t.dq, t.dp, &t.d_re_a, &t.d_im_a, gamma)
    }
}

fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn from_upper_triangle(d: usize, values: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = values[k];
            m[(j, i)] = values[k];
            k += 1;
        }
    }
    m
}

/// Tangent vector on the reduced manifold with coordinates (q, p, Re A, Im A).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub dq: DVector<f64>,
    pub dp: DVector<f64>,
    pub d_re_a: DMatrix<f64>,
    pub d_im_a: DMatrix<f64>,
}

impl TangentVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dq: DVector::zeros(dim),
            dp: DVector::zeros(dim),
            d_re_a: DMatrix::zeros(dim, dim),
            d_im_a: DMatrix::zeros(dim, dim),
        }
    }

    /// Number of independent real coordinates: 2D + D(D+1).
    pub fn coordinate_count(dim: usize) -> usize {
        2 * dim + dim * (dim + 1)
    }

    /// Recovers D from the coordinate count.
    pub fn dim_from_count(n: usize) -> Option<usize> {
        (1..=16).find(|d| Self::coordinate_count(*d) == n)
    }

    pub fn from_coordinates(coords: &DVector<f64>) -> Result<Self> {
        let d = Self::dim_from_count(coords.len())
            .ok_or_else(|| GwpdError::InvalidArgument("bad coordinate vector length".into()))?;
        let s = coords.as_slice();
        let tri = d * (d + 1) / 2;
        Ok(Self {
            dq: DVector::from_column_slice(&s[..d]),
            dp: DVector::from_column_slice(&s[d..2 * d]),
            d_re_a: from_upper_triangle(d, &s[2 * d..2 * d + tri]),
            d_im_a: from_upper_triangle(d, &s[2 * d + tri..]),
        })
    }

    pub fn to_coordinates(&self) -> DVector<f64> {
        let mut out: Vec<f64> = self.dq.iter().chain(self.dp.iter()).copied().collect();
        out.extend(upper_triangle(&self.d_re_a));
        out.extend(upper_triangle(&self.d_im_a));
        DVector::from_vec(out)
    }

    /// k-th coordinate basis vector (symmetric matrix entries move in pairs).
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut c = DVector::zeros(Self::coordinate_count(dim));
        c[k] = 1.0;
        Self::from_coordinates(&c).expect("count matches dimension")
    }
}

/// Gaussian in Hagedorn's parametrization,
/// ψ(q) = (πħ)^{-D/4}(det Q)^{-1/2} exp[(i/ħ)(xᵀPQ⁻¹x/2 + pᵀx + S)].
///
/// `winding` counts how many times det Q has wound around the origin since the
/// state was created, so that (det Q)^{-1/2} follows the trajectory continuously.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHagedorn {
    q: DVector<f64>,
    p: DVector<f64>,
    big_q: CMatrix,
    big_p: CMatrix,
    s: f64,
    winding: i64,
}

impl GaussianHagedorn {
    pub fn new(q: DVector<f64>, p: DVector<f64>, big_q: CMatrix, big_p: CMatrix, s: f64) -> Result<Self> {
        let dim = q.len();
        if dim == 0 || p.len() != dim || big_q.shape() != (dim, dim) || big_p.shape() != (dim, dim) {
            return Err(GwpdError::InvalidState("inconsistent dimensions".into()));
        }
        let state = Self { q, p, big_q, big_p, s, winding: 0 };
        state.check_invariants()?;
        Ok(state)
    }

    pub fn with_winding(mut self, winding: i64) -> Self {
        self.winding = winding;
        self
    }

    pub(crate) fn from_raw(
        q: DVector<f64>,
        p: DVector<f64>,
        big_q: CMatrix,
        big_p: CMatrix,
        s: f64,
        winding: i64,
    ) -> Self {
        Self { q, p, big_q, big_p, s, winding }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.q.iter().chain(self.p.iter()).any(|x| !x.is_finite())
            || self.big_q.iter().chain(self.big_p.iter()).any(|z| !z.is_finite())
            || !self.s.is_finite()
        {
            return Err(GwpdError::InvalidState("non-finite parameter".into()));
        }
        let defect = self.relation_defect();
        if defect > HAGEDORN_RELATION_TOLERANCE {
            return Err(GwpdError::InvalidState(format!(
                "Hagedorn relations violated by {defect:.3e}"
            )));
        }
        linalg::inverse_complex(&self.big_q, "Q")?;
        Ok(())
    }

    /// max(‖QᵀP − PᵀQ‖, ‖Q†P − P†Q − 2i·Id‖) in the max-entry norm.
    pub fn relation_defect(&self) -> f64 {
        let q = &self.big_q;
        let p = &self.big_p;
        let first = q.transpose() * p - p.transpose() * q;
        let id = CMatrix::identity(self.dim(), self.dim()) * Complex64::new(0.0, 2.0);
        let second = q.adjoint() * p - p.adjoint() * q - id;
        linalg::max_abs_complex(&first).max(linalg::max_abs_complex(&second))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn big_q(&self) -> &CMatrix {
        &self.big_q
    }

    pub fn big_p(&self) -> &CMatrix {
        &self.big_p
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn winding(&self) -> i64 {
        self.winding
    }

    /// A = P·Q⁻¹.
    pub fn width(&self) -> Result<CMatrix> {
        let q_inv = linalg::inverse_complex(&self.big_q, "Q")?;
        Ok(linalg::symmetrize_complex(&(&self.big_p * q_inv)))
    }

    /// Im A = (Q·Q†)⁻¹.
    pub fn im_width(&self) -> Result<DMatrix<f64>> {
        let qq = linalg::real_part(&(&self.big_q * self.big_q.adjoint()));
        Ok(linalg::symmetrize(&linalg::inverse(&qq, "Q·Q†")?))
    }

    /// Cov(q̂) = (ħ/2)·Q·Q†.
    pub fn position_covariance(&self, setup: &PhysicalSetup) -> DMatrix<f64> {
        let qq = linalg::real_part(&(&self.big_q * self.big_q.adjoint()));
        linalg::symmetrize(&(qq * (0.5 * setup.hbar())))
    }

    /// Cov(p̂) = (ħ/2)·P·P†.
    pub fn momentum_covariance(&self, setup: &PhysicalSetup) -> DMatrix<f64> {
        let pp = linalg::real_part(&(&self.big_p * self.big_p.adjoint()));
        linalg::symmetrize(&(pp * (0.5 * setup.hbar())))
    }

    /// arg det Q continued along the trajectory.
    pub fn arg_det_q(&self) -> f64 {
        self.big_q.determinant().arg() + 2.0 * PI * self.winding as f64
    }

    pub fn wavefunction(&self, point: &DVector<f64>, setup: &PhysicalSetup) -> Result<Complex64> {
        let hbar = setup.hbar();
        let d = self.dim() as f64;
        let a = self.width()?;
        let x = point - &self.q;
        let xc = linalg::to_complex_vec(&x);
        let quad = (xc.transpose() * &a * &xc)[(0, 0)];
        let phase = 0.5 * quad + Complex64::new(self.p.dot(&x) + self.s, 0.0);
        let det = self.big_q.determinant();
        let prefactor = (PI * hbar).powf(-d / 4.0)
            * det.norm().powf(-0.5)
            * Complex64::from_polar(1.0, -0.5 * self.arg_det_q());
        Ok(prefactor * (I / hbar * phase).exp())
    }

    /// Heller form with γ = S + (iħ/2)·ln det Q + (iħD/4)·ln(πħ), the logarithm
    /// taken on the branch selected by the winding counter.
    pub fn to_heller(&self, setup: &PhysicalSetup) -> Result<GaussianHeller> {
        let hbar = setup.hbar();
        let d = self.dim() as f64;
        let a = self.width()?;
        let det = self.big_q.determinant();
        let re_gamma = self.s - 0.5 * hbar * self.arg_det_q();
        let im_gamma = 0.5 * hbar * det.norm().ln() + 0.25 * hbar * d * (PI * hbar).ln();
        GaussianHeller::new(self.q.clone(), self.p.clone(), a, Complex64::new(re_gamma, im_gamma))
    }

    /// Factorizes A = P·Q⁻¹ with Q = (Im A)^{-1/2} (real, positive definite, so
    /// arg det Q = 0) and P = A·Q. Requires a normalized state because the
    /// Hagedorn form carries no free norm parameter.
    pub fn from_heller(state: &GaussianHeller, setup: &PhysicalSetup) -> Result<Self> {
        let im_a = state.im_a();
        linalg::require_positive_definite(&im_a, "Im A")?;
        let norm = crate::diagnostics::norm(state, setup)?;
        if (norm - 1.0).abs() > 1e-8 {
            return Err(GwpdError::InvalidState(format!(
                "Hagedorn form requires a normalized state (norm = {norm})"
            )));
        }
        let big_q = linalg::to_complex(&linalg::sym_inv_sqrt(&im_a));
        let big_p = state.a() * &big_q;
        Ok(Self {
            q: state.q().clone(),
            p: state.p().clone(),
            big_q,
            big_p,
            s: state.gamma().re,
            winding: 0,
        })
    }
}

/// See [`GaussianHagedorn::from_heller`].
pub fn heller_to_hagedorn(state: &GaussianHeller, setup: &PhysicalSetup) -> Result<GaussianHagedorn> {
    GaussianHagedorn::from_heller(state, setup)
}

/// See [`GaussianHagedorn::to_heller`].
pub fn hagedorn_to_heller(state: &GaussianHagedorn, setup: &PhysicalSetup) -> Result<GaussianHeller> {
    state.to_heller(setup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn normalization_of_unit_width_gaussian() {
        let setup = PhysicalSetup::unit(1);
        let g = GaussianHeller::new_1d(0.0, 0.0, c(0.0, 1.0), c(0.0, 0.0)).unwrap();
        let n = g.normalized(&setup).unwrap();
        assert!((n.gamma().im - 0.25 * PI.ln()).abs() < 1e-15);
        assert!((n.gamma().im - 0.28618).abs() < 1e-5);
        assert_eq!(n.gamma().re, 0.0);
        assert_eq!(n.normalized(&setup).unwrap(), n);
    }

    #[test]
    fn normalization_rejects_bad_width() {
        let setup = PhysicalSetup::unit(1);
        let bad = GaussianHeller::from_raw(v1(0.0), v1(0.0), DMatrix::from_element(1, 1, c(0.0, -1.0)), c(0.0, 0.0));
        assert!(bad.normalized(&setup).is_err());
        assert!(GaussianHeller::new_1d(0.0, 0.0, c(1.0, 0.0), c(0.0, 0.0)).is_err());
    }

    #[test]
    fn wavefunction_hand_values() {
        let setup = PhysicalSetup::unit(1);
        let g = GaussianHeller::new_1d(0.0, 0.0, c(0.0, 1.0), c(0.0, 0.0)).unwrap();
        assert_eq!(g.wavefunction(&v1(0.0), &setup), c(1.0, 0.0));
        assert!((g.wavefunction(&v1(1.0), &setup) - c((-0.5f64).exp(), 0.0)).norm() < 1e-15);
        let moving = GaussianHeller::new_1d(0.0, 2.0, c(0.0, 1.0), c(0.0, 0.0)).unwrap();
        let expected = (-0.5f64).exp() * Complex64::from_polar(1.0, 2.0);
        assert!((moving.wavefunction(&v1(1.0), &setup) - expected).norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let setup = PhysicalSetup::unit(1);
        let g = GaussianHeller::new_1d(0.3, -0.7, c(0.4, 0.9), c(0.1, 0.2)).unwrap();
        let x = 0.8;
        let h = 1e-6;
        let fd = (g.wavefunction(&v1(x + h), &setup) - g.wavefunction(&v1(x - h), &setup)) / (2.0 * h);
        let an = g.wavefunction_gradient(&v1(x), &setup)[0];
        assert!((fd - an).norm() < 1e-8);
    }

    #[test]
    fn density_hand_value_and_symmetry() {
        let setup = PhysicalSetup::unit(1);
        let g = GaussianHeller::new_1d(0.0, 0.0, c(0.0, 1.0), c(0.0, 0.0)).unwrap();
        let rho0 = g.density(&v1(0.0), &setup).unwrap();
        assert!((rho0 - PI.powf(-0.5)).abs() < 1e-15);
        assert!((rho0 - 0.56419).abs() < 1e-5);
        for x in [0.3, 1.1, 2.5] {
            assert_eq!(g.density(&v1(x), &setup).unwrap(), g.density(&v1(-x), &setup).unwrap());
        }
    }

    #[test]
    fn hagedorn_factorization_of_unit_width() {
        let setup = PhysicalSetup::unit(1);
        let g = GaussianHeller::new_1d(0.0, 0.0, c(0.0, 1.0), c(0.0, 0.0)).unwrap().normalized(&setup).unwrap();
        let h = heller_to_hagedorn(&g, &setup).unwrap();
        assert!((h.big_q()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((h.big_p()[(0, 0)] - c(0.0, 1.0)).norm() < 1e-15);
        let comm = h.big_q().adjoint() * h.big_p() - h.big_p().adjoint() * h.big_q();
        assert!((comm[(0, 0)] - c(0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn hagedorn_width_from_q_and_p() {
        let q = DMatrix::from_element(1, 1, c(1.0, 0.5));
        let p = DMatrix::from_element(1, 1, c(0.0, 1.0));
        let h = GaussianHagedorn::new(v1(0.0), v1(0.0), q, p, 0.0).unwrap();
        assert!((h.width().unwrap()[(0, 0)] - c(0.4, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn hagedorn_to_heller_unit_width() {
        let setup = PhysicalSetup::unit(1);
        let h = GaussianHagedorn::new(
            v1(0.0),
            v1(0.0),
            DMatrix::from_element(1, 1, c(1.0, 0.0)),
            DMatrix::from_element(1, 1, c(0.0, 1.0)),
            0.0,
        )
        .unwrap();
        let g = hagedorn_to_heller(&h, &setup).unwrap();
        assert!((g.a()[(0, 0)] - c(0.0, 1.0)).norm() < 1e-15);
        let psi0 = g.wavefunction(&v1(0.0), &setup);
        assert!((psi0 - c(PI.powf(-0.25), 0.0)).norm() < 1e-15);
        assert!((h.wavefunction(&v1(0.0), &setup).unwrap() - psi0).norm() < 1e-15);
    }

    #[test]
    fn symplecticity_violation_is_rejected() {
        let q = DMatrix::from_element(1, 1, c(1.0, 0.0));
        let p = DMatrix::from_element(1, 1, c(0.0, 2.0));
        assert!(GaussianHagedorn::new(v1(0.0), v1(0.0), q, p, 0.0).is_err());
    }

    #[test]
    fn unnormalized_state_has_no_hagedorn_form() {
        let setup = PhysicalSetup::unit(1);
        let g = GaussianHeller::new_1d(0.0, 0.0, c(0.0, 1.0), c(0.0, 0.0)).unwrap();
        assert!(heller_to_hagedorn(&g, &setup).is_err());
    }

    #[test]
    fn coordinates_round_trip() {
        let re = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, -0.3]);
        let im = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]);
        let g = GaussianHeller::from_parts(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
            &re,
            &im,
            c(0.0, 0.0),
        )
        .unwrap();
        let coords = g.coordinates();
        assert_eq!(coords.len(), 10);
        assert_eq!(GaussianHeller::from_coordinates(&coords, c(0.0, 0.0)).unwrap(), g);
    }
}
