//! Observables and geometric checks: norm, energies and their rates,
//! covariances, the reduced symplectic form, and Gaussian overlaps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{GwpdError, Result};
use crate::linalg::{self, CMatrix};
use crate::methods::{EffectiveCoefficients, Method};
use crate::potentials::{ExpectationEngine, PotentialModel};
use crate::setup::PhysicalSetup;
use crate::state::{GaussianHeller, TangentVector};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub effective_energy: f64,
    pub cov_q: DMatrix<f64>,
    pub cov_p: DMatrix<f64>,
    pub cov_qp: CMatrix,
    pub cov_qp_real: DMatrix<f64>,
    pub symplectic_defect: Option<f64>,
    pub energy_rate_predicted: Option<f64>,
}

/// ‖ψ‖ = [det(Im A/(πħ))^{-1/2} exp(−2 Im γ/ħ)]^{1/2}.
pub fn norm(state: &GaussianHeller, setup: &PhysicalSetup) -> Result<f64> {
    let hbar = setup.hbar();
    let im_a = state.im_a();
    linalg::require_positive_definite(&im_a, "Im A")?;
    let ln_det: f64 = linalg::sym_eigen(&im_a).eigenvalues.iter().map(|b| (b / (PI * hbar)).ln()).sum();
    Ok((-0.25 * ln_det - state.gamma().im / hbar).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    /// Σ = (ħ/2)(Im A)⁻¹.
    pub cov_q: DMatrix<f64>,
    /// (ħ/2)·A·(Im A)⁻¹·A*.
    pub cov_p: DMatrix<f64>,
    /// Σ·A.
    pub cov_qp: CMatrix,
    /// (ħ/2)(Im A)⁻¹·Re A.
    pub cov_qp_real: DMatrix<f64>,
}

pub fn covariances(state: &GaussianHeller, setup: &PhysicalSetup) -> Result<Covariances> {
    let sigma = state.position_covariance(setup)?;
    let a = state.a();
    let b_inv = linalg::to_complex(&linalg::inverse(&state.im_a(), "Im A")?);
    let cov_p_c = a * b_inv * a.conjugate() * Complex64::new(0.5 * setup.hbar(), 0.0);
    let cov_p = linalg::symmetrize(&linalg::real_part(&cov_p_c));
    let cov_qp = linalg::to_complex(&sigma) * a;
    let cov_qp_real = linalg::real_part(&cov_qp);
    Ok(Covariances { cov_q: sigma, cov_p, cov_qp, cov_qp_real })
}

/// ⟨T̂⟩ = T(p) + Tr(m⁻¹·Cov(p̂))/2.
pub fn kinetic_expectation(state: &GaussianHeller, setup: &PhysicalSetup) -> Result<f64> {
    let cov = covariances(state, setup)?;
    Ok(setup.kinetic_energy(state.p()) + 0.5 * linalg::trace_product(setup.inv_mass(), &cov.cov_p))
}

/// E = ⟨T̂⟩ + ⟨V⟩.
pub fn energy(
    state: &GaussianHeller,
    model: &PotentialModel,
    engine: &ExpectationEngine,
    setup: &PhysicalSetup,
) -> Result<f64> {
    let v = model.gaussian_expectation(state, setup, engine)?.value;
    Ok(kinetic_expectation(state, setup)? + v)
}

/// E_eff = ⟨T̂⟩ + V₀ + Tr(V₂·Σ)/2.
pub fn effective_energy(state: &GaussianHeller, coeffs: &EffectiveCoefficients, setup: &PhysicalSetup) -> Result<f64> {
    let sigma = state.position_covariance(setup)?;
    Ok(kinetic_expectation(state, setup)? + coeffs.v0 + 0.5 * linalg::trace_product(&coeffs.v2, &sigma))
}

/// dE/dt = pᵀm⁻¹(⟨V′⟩ − V₁) + Tr[m⁻¹(⟨V″⟩ − V₂)·Cov_R].
pub fn energy_rate(
    state: &GaussianHeller,
    coeffs: &EffectiveCoefficients,
    model: &PotentialModel,
    engine: &ExpectationEngine,
    setup: &PhysicalSetup,
) -> Result<f64> {
    let e = model.gaussian_expectation(state, setup, engine)?;
    let cov = covariances(state, setup)?;
    let inv_m = setup.inv_mass();
    let center = state.p().dot(&(inv_m * (&e.gradient - &coeffs.v1)));
    let width = linalg::trace_product(&(inv_m * (&e.hessian - &coeffs.v2)), &cov.cov_qp_real);
    Ok(center + width)
}

/// dE_eff/dt = V̇₀ − V₁ᵀq̇ + Tr(V̇₂·Σ)/2 from given coefficient rates.
pub fn effective_energy_rate(
    v0_rate: f64,
    v1: &DVector<f64>,
    q_rate: &DVector<f64>,
    v2_rate: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    v0_rate - v1.dot(q_rate) + 0.5 * linalg::trace_product(v2_rate, sigma)
}

/// dE_eff/dt with V̇₀, V̇₂ from central differences of the coefficients along
/// the exact equations of motion q̇ = m⁻¹p, d(Im A)/dt = −Im(A m⁻¹ A).
pub fn effective_energy_rate_fd(state: &GaussianHeller, method: &Method, h: f64) -> Result<f64> {
    let setup = method.setup();
    let q_rate = setup.inv_mass() * state.p();
    let im_a_rate = if method.frozen() {
        DMatrix::zeros(state.dim(), state.dim())
    } else {
        let coeffs = method.coefficients(state)?;
        let a = state.a();
        let a_rate = -(a * linalg::to_complex(setup.inv_mass()) * a) - linalg::to_complex(&coeffs.v2);
        linalg::symmetrize(&linalg::imag_part(&a_rate))
    };
    let shifted = |s: f64| -> Result<EffectiveCoefficients> {
        let moved = GaussianHeller::from_parts(
            state.q() + &q_rate * s,
            state.p().clone(),
            &state.re_a(),
            &(state.im_a() + &im_a_rate * s),
            state.gamma(),
        )?;
        method.coefficients(&moved)
    };
    let plus = shifted(h)?;
    let minus = shifted(-h)?;
    let here = method.coefficients(state)?;
    let v0_rate = (plus.v0 - minus.v0) / (2.0 * h);
    let v2_rate = (&plus.v2 - &minus.v2) / (2.0 * h);
    let sigma = state.position_covariance(setup)?;
    Ok(effective_energy_rate(v0_rate, &here.v1, &q_rate, &v2_rate, &sigma))
}

/// Reduced symplectic form
/// ω(d₁, d₂) = d₁q·d₂p − d₂q·d₁p − (ħ/4)Tr[B⁻¹d₁B B⁻¹d₂𝒜 − B⁻¹d₂B B⁻¹d₁𝒜]
/// with 𝒜 = Re A and B = Im A.
pub fn symplectic_form(state: &GaussianHeller, d1: &TangentVector, d2: &TangentVector, setup: &PhysicalSetup) -> Result<f64> {
    let b_inv = linalg::inverse(&state.im_a(), "Im A")?;
    let canonical = d1.dq.dot(&d2.dp) - d2.dq.dot(&d1.dp);
    let first = linalg::trace_product(&(&b_inv * &d1.d_im_a * &b_inv), &d2.d_re_a);
    let second = linalg::trace_product(&(&b_inv * &d2.d_im_a * &b_inv), &d1.d_re_a);
    Ok(canonical - 0.25 * setup.hbar() * (first - second))
}

/// Default coordinate step for flow Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// max_{i<j} |ω_{Φ(x)}(JΦ eᵢ, JΦ eⱼ) − ω_x(eᵢ, eⱼ)| with the Jacobian of the
/// flow built by central differences on (q, p, Re A, Im A).
pub fn symplectic_defect<F>(flow: F, state: &GaussianHeller, setup: &PhysicalSetup, h: f64) -> Result<f64>
where
    F: Fn(&GaussianHeller) -> Result<GaussianHeller>,
{
    if !(h > 0.0) {
        return Err(GwpdError::InvalidArgument("Jacobian step must be positive".into()));
    }
    let x0 = state.coordinates();
    let n = x0.len();
    let d = state.dim();
    let image = flow(state)?;
    let mut columns = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = x0.clone();
        plus[k] += h;
        let mut minus = x0.clone();
        minus[k] -= h;
        let fp = flow(&GaussianHeller::from_coordinates(&plus, state.gamma())?)?.coordinates();
        let fm = flow(&GaussianHeller::from_coordinates(&minus, state.gamma())?)?.coordinates();
        columns.push(TangentVector::from_coordinates(&((fp - fm) / (2.0 * h)))?);
    }
    let mut defect = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let before = symplectic_form(state, &TangentVector::basis(d, i), &TangentVector::basis(d, j), setup)?;
            let after = symplectic_form(&image, &columns[i], &columns[j], setup)?;
            defect = defect.max((after - before).abs());
        }
    }
    Ok(defect)
}

/// ⟨a|b⟩ = ∫ ψ_a* ψ_b in closed form.
pub fn gaussian_overlap(a: &GaussianHeller, b: &GaussianHeller, setup: &PhysicalSetup) -> Result<Complex64> {
    if a.dim() != b.dim() {
        return Err(GwpdError::InvalidArgument("overlap of states with different dimensions".into()));
    }
    let hbar = setup.hbar();
    let d = a.dim();
    let aa = a.a().conjugate();
    let ab = b.a();
    let qa = linalg::to_complex_vec(a.q());
    let qb = linalg::to_complex_vec(b.q());
    let pa = linalg::to_complex_vec(a.p());
    let pb = linalg::to_complex_vec(b.p());
    // Exponent (i/ħ)[yᵀMy/2 + cᵀy + e].
    let m = ab - &aa;
    let real_part = linalg::imag_part(&m);
    if !linalg::is_positive_definite(&real_part) {
        return Err(GwpdError::InvalidState("overlap integrand is not normalizable".into()));
    }
    let c = -(ab * &qb) + &pb + &aa * &qa - &pa;
    let e = 0.5 * qb.dot(&(ab * &qb)) - pb.dot(&qb) + b.gamma() - 0.5 * qa.dot(&(&aa * &qa)) + pa.dot(&qa)
        - a.gamma().conj();
    // ∫exp(−yᵀKy/2 + jᵀy) = (2π)^{D/2} det(K)^{-1/2} exp(jᵀK⁻¹j/2).
    let k = &m * (-I / hbar);
    let j = &c * (I / hbar);
    let k_inv = linalg::inverse_complex(&k, "overlap matrix")?;
    let r = linalg::real_part(&k);
    let r_inv_sqrt = linalg::sym_inv_sqrt(&r);
    let mu = linalg::sym_eigen(&(&r_inv_sqrt * linalg::imag_part(&k) * &r_inv_sqrt)).eigenvalues;
    let ln_det_r: f64 = linalg::sym_eigen(&r).eigenvalues.iter().map(|x| x.ln()).sum();
    let mut ln_det_k = Complex64::new(ln_det_r, 0.0);
    for m in mu.iter() {
        ln_det_k += Complex64::new(1.0, *m).ln();
    }
    let quad = 0.5 * j.dot(&(&k_inv * &j));
    let ln_value = 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * ln_det_k + quad + I / hbar * e;
    Ok(ln_value.exp())
}

/// Norm, energies, covariances and predicted dE/dt of a state under a method.
pub fn record(state: &GaussianHeller, method: &Method, t: f64) -> Result<DiagnosticsRecord> {
    let setup = method.setup();
    let coeffs = method.coefficients(state)?;
    let cov = covariances(state, setup)?;
    let e = method.model().gaussian_expectation(state, setup, method.engine())?;
    let kinetic = setup.kinetic_energy(state.p()) + 0.5 * linalg::trace_product(setup.inv_mass(), &cov.cov_p);
    let inv_m = setup.inv_mass();
    let rate = state.p().dot(&(inv_m * (&e.gradient - &coeffs.v1)))
        + linalg::trace_product(&(inv_m * (&e.hessian - &coeffs.v2)), &cov.cov_qp_real);
    Ok(DiagnosticsRecord {
        t,
        norm: norm(state, setup)?,
        energy: kinetic + e.value,
        effective_energy: kinetic + coeffs.v0 + 0.5 * linalg::trace_product(&coeffs.v2, &cov.cov_q),
        cov_q: cov.cov_q,
        cov_p: cov.cov_p,
        cov_qp: cov.cov_qp,
        cov_qp_real: cov.cov_qp_real,
        symplectic_defect: None,
        energy_rate_predicted: Some(rate),
    })
}
