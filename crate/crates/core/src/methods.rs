//! Effective-potential coefficients (V₀, V₁, V₂) for the thawed (TGWD) and
//! frozen (FGWD) method variants. Every variant reads the state only through
//! its center q and Im A.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{GwpdError, Result};
use crate::linalg;
use crate::potentials::{ExpectationEngine, PotentialModel, SymTensor};
use crate::setup::PhysicalSetup;
use crate::state::GaussianHeller;

/// V_eff(x) = V₀ + V₁ᵀx + xᵀV₂x/2 with x = q − q_t.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCoefficients {
    pub v0: f64,
    pub v1: DVector<f64>,
    pub v2: DMatrix<f64>,
}

impl EffectiveCoefficients {
    pub fn new(v0: f64, v1: DVector<f64>, v2: DMatrix<f64>) -> Result<Self> {
        let d = v1.len();
        if v2.shape() != (d, d) {
            return Err(GwpdError::InvalidArgument("coefficient shapes differ".into()));
        }
        if !v0.is_finite() || v1.iter().chain(v2.iter()).any(|x| !x.is_finite()) {
            return Err(GwpdError::InvalidState("non-finite effective coefficients".into()));
        }
        Ok(Self { v0, v1, v2: linalg::symmetrize(&v2) })
    }

    pub fn dim(&self) -> usize {
        self.v1.len()
    }

    pub fn value_at(&self, x: &DVector<f64>) -> f64 {
        self.v0 + self.v1.dot(x) + 0.5 * x.dot(&(&self.v2 * x))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.v0 - other.v0)
            .abs()
            .max((&self.v1 - &other.v1).amax())
            .max(linalg::max_abs(&(&self.v2 - &other.v2)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodId {
    TgwdVariational,
    TgwdLocalHarmonic,
    TgwdSingleHessian,
    TgwdGlobalHarmonic,
    TgwdLocalCubicVar,
    TgwdSingleQuarticVar,
    FgwdVariational,
    FgwdClassicalVar,
    FgwdLocalHarmonic,
    FgwdGlobalHarmonic,
}

impl MethodId {
    pub const ALL: [MethodId; 10] = [
        MethodId::TgwdVariational,
        MethodId::TgwdLocalHarmonic,
        MethodId::TgwdSingleHessian,
        MethodId::TgwdGlobalHarmonic,
        MethodId::TgwdLocalCubicVar,
        MethodId::TgwdSingleQuarticVar,
        MethodId::FgwdVariational,
        MethodId::FgwdClassicalVar,
        MethodId::FgwdLocalHarmonic,
        MethodId::FgwdGlobalHarmonic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::TgwdVariational => "tgwd_variational",
            MethodId::TgwdLocalHarmonic => "tgwd_local_harmonic",
            MethodId::TgwdSingleHessian => "tgwd_single_hessian",
            MethodId::TgwdGlobalHarmonic => "tgwd_global_harmonic",
            MethodId::TgwdLocalCubicVar => "tgwd_local_cubic_var",
            MethodId::TgwdSingleQuarticVar => "tgwd_single_quartic_var",
            MethodId::FgwdVariational => "fgwd_variational",
            MethodId::FgwdClassicalVar => "fgwd_classical_var",
            MethodId::FgwdLocalHarmonic => "fgwd_local_harmonic",
            MethodId::FgwdGlobalHarmonic => "fgwd_global_harmonic",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MethodId::TgwdVariational => "thawed, variational (conserves E and E_eff, symplectic)",
            MethodId::TgwdLocalHarmonic => "thawed, local harmonic (conserves neither energy, not symplectic)",
            MethodId::TgwdSingleHessian => "thawed, local harmonic with one reference Hessian (conserves E_eff)",
            MethodId::TgwdGlobalHarmonic => "thawed, global harmonic about q_ref (conserves E_eff)",
            MethodId::TgwdLocalCubicVar => "thawed, variational on the local cubic expansion (conserves E_eff)",
            MethodId::TgwdSingleQuarticVar => {
                "thawed, variational on local cubic plus reference fourth derivative (conserves E_eff)"
            }
            MethodId::FgwdVariational => "frozen, variational (conserves E)",
            MethodId::FgwdClassicalVar => "frozen, variational width with classical center (conserves neither)",
            MethodId::FgwdLocalHarmonic => "frozen, local harmonic = single Hessian (conserves E_eff)",
            MethodId::FgwdGlobalHarmonic => "frozen, global harmonic about q_ref (conserves E_eff)",
        }
    }

    pub fn is_frozen(self) -> bool {
        matches!(
            self,
            MethodId::FgwdVariational
                | MethodId::FgwdClassicalVar
                | MethodId::FgwdLocalHarmonic
                | MethodId::FgwdGlobalHarmonic
        )
    }

    /// Whether the variant uses a reference geometry.
    pub fn uses_reference(self) -> bool {
        matches!(
            self,
            MethodId::TgwdSingleHessian
                | MethodId::TgwdGlobalHarmonic
                | MethodId::TgwdSingleQuarticVar
                | MethodId::FgwdGlobalHarmonic
        )
    }

    /// Whether the variant needs Gaussian expectation values.
    pub fn uses_expectations(self) -> bool {
        matches!(self, MethodId::TgwdVariational | MethodId::FgwdVariational | MethodId::FgwdClassicalVar)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = GwpdError;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| GwpdError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub id: MethodId,
    /// Reference geometry; defaults to the initial center.
    pub q_ref: Option<DVector<f64>>,
}

impl MethodSpec {
    pub fn new(id: MethodId) -> Self {
        Self { id, q_ref: None }
    }

    pub fn with_reference(id: MethodId, q_ref: DVector<f64>) -> Self {
        Self { id, q_ref: Some(q_ref) }
    }

    pub fn frozen(&self) -> bool {
        self.id.is_frozen()
    }
}

/// Σ = (ħ/2)(Im A)⁻¹.
fn sigma(state: &GaussianHeller, setup: &PhysicalSetup) -> Result<DMatrix<f64>> {
    state.position_covariance(setup)
}

pub fn variational_tgwd(
    state: &GaussianHeller,
    model: &PotentialModel,
    engine: &ExpectationEngine,
    setup: &PhysicalSetup,
) -> Result<EffectiveCoefficients> {
    let s = sigma(state, setup)?;
    let e = model.expectations_at(state.q(), &s, engine)?;
    let v0 = e.value - 0.5 * linalg::trace_product(&e.hessian, &s);
    EffectiveCoefficients::new(v0, e.gradient, e.hessian)
}

pub fn local_harmonic_tgwd(state: &GaussianHeller, model: &PotentialModel) -> Result<EffectiveCoefficients> {
    let q = state.q();
    EffectiveCoefficients::new(model.value(q), model.gradient(q), model.hessian(q))
}

pub fn single_hessian_tgwd(
    state: &GaussianHeller,
    model: &PotentialModel,
    reference_hessian: &DMatrix<f64>,
) -> Result<EffectiveCoefficients> {
    let q = state.q();
    EffectiveCoefficients::new(model.value(q), model.gradient(q), reference_hessian.clone())
}

/// Second-order Taylor expansion of V about a fixed geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceExpansion {
    pub q_ref: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl ReferenceExpansion {
    pub fn new(model: &PotentialModel, q_ref: DVector<f64>) -> Result<Self> {
        if q_ref.len() != model.dim() {
            return Err(GwpdError::InvalidArgument("reference geometry has wrong dimension".into()));
        }
        Ok(Self {
            value: model.value(&q_ref),
            gradient: model.gradient(&q_ref),
            hessian: model.hessian(&q_ref),
            q_ref,
        })
    }

    /// (V_appr(q), V_appr′(q)) using the supplied Hessian.
    fn taylor(&self, q: &DVector<f64>, hessian: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let dx = q - &self.q_ref;
        let slope = hessian * &dx;
        let value = self.value + self.gradient.dot(&dx) + 0.5 * dx.dot(&slope);
        (value, &self.gradient + slope)
    }
}

pub fn global_harmonic_tgwd(state: &GaussianHeller, reference: &ReferenceExpansion) -> Result<EffectiveCoefficients> {
    let (v0, v1) = reference.taylor(state.q(), &reference.hessian);
    EffectiveCoefficients::new(v0, v1, reference.hessian.clone())
}

/// V₁,i = V′_i + V‴_ijk Σ_jk/2 at q_t.
fn cubic_corrected_gradient(model: &PotentialModel, q: &DVector<f64>, s: &DMatrix<f64>) -> DVector<f64> {
    model.gradient(q) + model.third(q).contract_pair(s) * 0.5
}

pub fn local_cubic_variational_tgwd(
    state: &GaussianHeller,
    model: &PotentialModel,
    setup: &PhysicalSetup,
) -> Result<EffectiveCoefficients> {
    let q = state.q();
    let s = sigma(state, setup)?;
    EffectiveCoefficients::new(model.value(q), cubic_corrected_gradient(model, q, &s), model.hessian(q))
}

pub fn single_quartic_variational_tgwd(
    state: &GaussianHeller,
    model: &PotentialModel,
    setup: &PhysicalSetup,
    reference_fourth: &SymTensor,
) -> Result<EffectiveCoefficients> {
    let q = state.q();
    let s = sigma(state, setup)?;
    let quartic_on_sigma = reference_fourth.contract_pair_matrix(&s);
    let v2 = model.hessian(q) + &quartic_on_sigma * 0.5;
    let v0 = model.value(q) - linalg::trace_product(&quartic_on_sigma, &s) / 8.0;
    EffectiveCoefficients::new(v0, cubic_corrected_gradient(model, q, &s), v2)
}

/// Frozen Gaussians require Re A = 0.
pub fn require_frozen_width(state: &GaussianHeller) -> Result<()> {
    let re = linalg::max_abs(&state.re_a());
    let scale = linalg::max_abs(&state.im_a()).max(1.0);
    if re > 1e-12 * scale {
        return Err(GwpdError::Constraint(format!(
            "frozen Gaussian methods require a purely imaginary width (max |Re A| = {re:.3e})"
        )));
    }
    Ok(())
}

/// ℬ·m⁻¹·ℬ, the only Hessian compatible with a constant frozen width.
pub fn frozen_hessian(state: &GaussianHeller, setup: &PhysicalSetup) -> DMatrix<f64> {
    let b = state.im_a();
    linalg::symmetrize(&(&b * setup.inv_mass() * &b))
}

pub fn fgwd_coefficients(
    id: MethodId,
    state: &GaussianHeller,
    model: &PotentialModel,
    engine: &ExpectationEngine,
    setup: &PhysicalSetup,
    reference: Option<&ReferenceExpansion>,
) -> Result<EffectiveCoefficients> {
    require_frozen_width(state)?;
    let v2 = frozen_hessian(state, setup);
    let q = state.q();
    let width_energy = || 0.25 * setup.hbar() * linalg::trace_product(setup.inv_mass(), &state.im_a());
    let (v0, v1) = match id {
        MethodId::FgwdVariational => {
            let e = model.gaussian_expectation(state, setup, engine)?;
            (e.value - width_energy(), e.gradient)
        }
        MethodId::FgwdClassicalVar => {
            let e = model.gaussian_expectation(state, setup, engine)?;
            (e.value - width_energy(), model.gradient(q))
        }
        MethodId::FgwdLocalHarmonic => (model.value(q), model.gradient(q)),
        MethodId::FgwdGlobalHarmonic => {
            let r = reference.ok_or_else(|| GwpdError::InvalidArgument("missing reference expansion".into()))?;
            r.taylor(q, &v2)
        }
        other => return Err(GwpdError::InvalidArgument(format!("{other} is not a frozen method"))),
    };
    EffectiveCoefficients::new(v0, v1, v2)
}

/// A method bound to a potential, with reference-geometry data computed once.
#[derive(Debug, Clone)]
pub struct Method {
    spec: MethodSpec,
    model: PotentialModel,
    setup: PhysicalSetup,
    engine: ExpectationEngine,
    reference: Option<ReferenceExpansion>,
    reference_fourth: Option<SymTensor>,
}

impl Method {
    /// `q0` supplies the reference geometry when the spec leaves it unset.
    pub fn new(
        spec: MethodSpec,
        model: PotentialModel,
        setup: PhysicalSetup,
        engine: ExpectationEngine,
        q0: &DVector<f64>,
    ) -> Result<Self> {
        if model.dim() != setup.dim() || q0.len() != setup.dim() {
            return Err(GwpdError::InvalidSetup("potential, setup and state dimensions differ".into()));
        }
        let q_ref = spec.q_ref.clone().unwrap_or_else(|| q0.clone());
        let (reference, reference_fourth) = if spec.id.uses_reference() {
            let fourth = (spec.id == MethodId::TgwdSingleQuarticVar).then(|| model.fourth(&q_ref));
            (Some(ReferenceExpansion::new(&model, q_ref)?), fourth)
        } else {
            (None, None)
        };
        Ok(Self { spec, model, setup, engine, reference, reference_fourth })
    }

    pub fn id(&self) -> MethodId {
        self.spec.id
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn frozen(&self) -> bool {
        self.spec.frozen()
    }

    pub fn model(&self) -> &PotentialModel {
        &self.model
    }

    pub fn setup(&self) -> &PhysicalSetup {
        &self.setup
    }

    pub fn engine(&self) -> &ExpectationEngine {
        &self.engine
    }

    pub fn reference(&self) -> Option<&ReferenceExpansion> {
        self.reference.as_ref()
    }

    pub fn coefficients(&self, state: &GaussianHeller) -> Result<EffectiveCoefficients> {
        let (model, setup) = (&self.model, &self.setup);
        let reference = || self.reference.as_ref().expect("reference built for this method");
        match self.spec.id {
            MethodId::TgwdVariational => variational_tgwd(state, model, &self.engine, setup),
            MethodId::TgwdLocalHarmonic => local_harmonic_tgwd(state, model),
            MethodId::TgwdSingleHessian => single_hessian_tgwd(state, model, &reference().hessian),
            MethodId::TgwdGlobalHarmonic => global_harmonic_tgwd(state, reference()),
            MethodId::TgwdLocalCubicVar => local_cubic_variational_tgwd(state, model, setup),
            MethodId::TgwdSingleQuarticVar => single_quartic_variational_tgwd(
                state,
                model,
                setup,
                self.reference_fourth.as_ref().expect("fourth derivative built for this method"),
            ),
            id => fgwd_coefficients(id, state, model, &self.engine, setup, self.reference.as_ref()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Polynomial;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn state_1d(q: f64, a: Complex64) -> GaussianHeller {
        GaussianHeller::new_1d(q, 0.0, a, c(0.0, 0.0)).unwrap()
    }

    fn quartic() -> PotentialModel {
        PotentialModel::polynomial(Polynomial::from_terms(1, &[(0.25, &[4])]).unwrap())
    }

    fn coeffs(id: MethodId, model: &PotentialModel, state: &GaussianHeller, q_ref: f64) -> EffectiveCoefficients {
        let setup = PhysicalSetup::unit(1);
        let method = Method::new(
            MethodSpec::with_reference(id, v1(q_ref)),
            model.clone(),
            setup,
            ExpectationEngine::default(),
            state.q(),
        )
        .unwrap();
        method.coefficients(state).unwrap()
    }

    fn assert_coeffs(got: &EffectiveCoefficients, expected: (f64, f64, f64)) {
        let want = EffectiveCoefficients::new(expected.0, v1(expected.1), DMatrix::from_element(1, 1, expected.2)).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12, "got {got:?}, want {expected:?}");
    }

    #[test]
    fn ids_round_trip_and_unknown_rejected() {
        for id in MethodId::ALL {
            assert_eq!(id.name().parse::<MethodId>().unwrap(), id);
            assert_eq!(id.is_frozen(), id.name().starts_with("fgwd"));
        }
        assert!(matches!("tgwd_magic".parse::<MethodId>(), Err(GwpdError::UnknownMethod(_))));
    }

    #[test]
    fn every_thawed_variant_is_exact_on_harmonic() {
        let model = PotentialModel::harmonic_1d(1.0, 1.0).unwrap();
        let state = state_1d(1.0, c(0.0, 1.0));
        for id in MethodId::ALL.iter().filter(|m| !m.is_frozen()) {
            assert_coeffs(&coeffs(*id, &model, &state, 1.0), (0.5, 1.0, 1.0));
        }
        assert_coeffs(&coeffs(MethodId::TgwdGlobalHarmonic, &model, &state, -0.4), (0.5, 1.0, 1.0));
    }

    #[test]
    fn quartic_values_per_variant() {
        let m = quartic();
        let s = state_1d(1.0, c(0.0, 1.0));
        assert_coeffs(&coeffs(MethodId::TgwdVariational, &m, &s, 1.0), (0.0625, 2.5, 4.5));
        assert_coeffs(&coeffs(MethodId::TgwdLocalHarmonic, &m, &s, 1.0), (0.25, 1.0, 3.0));
        assert_coeffs(&coeffs(MethodId::TgwdSingleHessian, &m, &s, 0.0), (0.25, 1.0, 0.0));
        assert_coeffs(&coeffs(MethodId::TgwdGlobalHarmonic, &m, &s, 1.0), (0.25, 1.0, 3.0));
        assert_coeffs(&coeffs(MethodId::TgwdGlobalHarmonic, &m, &s, 0.0), (0.0, 0.0, 0.0));
        assert_coeffs(&coeffs(MethodId::TgwdLocalCubicVar, &m, &s, 1.0), (0.25, 2.5, 3.0));
        for q_ref in [-1.0, 0.0, 2.0] {
            assert_coeffs(&coeffs(MethodId::TgwdSingleQuarticVar, &m, &s, q_ref), (0.0625, 2.5, 4.5));
        }
    }

    #[test]
    fn morse_local_variants_at_minimum() {
        let m = PotentialModel::morse_1d(0.1, 1.0, 0.0).unwrap();
        let s = state_1d(0.0, c(0.0, 1.0));
        assert_coeffs(&coeffs(MethodId::TgwdLocalHarmonic, &m, &s, 0.0), (0.0, 0.0, 0.2));
        // V‴(0) = −6·D_e·a³ = −0.6 and Σ = 1/2.
        assert_coeffs(&coeffs(MethodId::TgwdLocalCubicVar, &m, &s, 0.0), (0.0, -0.15, 0.2));
    }

    #[test]
    fn variational_reproduces_potential_expectation() {
        let setup = PhysicalSetup::unit(1);
        let engine = ExpectationEngine::default();
        let m = PotentialModel::morse_1d(0.1, 1.0, 0.0).unwrap();
        let s = state_1d(0.4, c(0.3, 1.7));
        let k = variational_tgwd(&s, &m, &engine, &setup).unwrap();
        let sig = s.position_covariance(&setup).unwrap();
        let e = m.expectations_at(s.q(), &sig, &engine).unwrap();
        let eff = k.v0 + 0.5 * linalg::trace_product(&k.v2, &sig);
        assert!((eff - e.value).abs() < 1e-12);
    }

    #[test]
    fn frozen_variants() {
        let model = PotentialModel::harmonic_1d(1.0, 1.0).unwrap();
        let s = state_1d(1.0, c(0.0, 1.0));
        assert_coeffs(&coeffs(MethodId::FgwdVariational, &model, &s, 1.0), (0.5, 1.0, 1.0));
        assert_coeffs(&coeffs(MethodId::FgwdLocalHarmonic, &model, &s, 1.0), (0.5, 1.0, 1.0));
        assert_coeffs(&coeffs(MethodId::FgwdClassicalVar, &model, &s, 1.0), (0.5, 1.0, 1.0));
        assert_coeffs(&coeffs(MethodId::FgwdGlobalHarmonic, &model, &s, 0.0), (0.5, 1.0, 1.0));
        let wide = state_1d(1.0, c(0.0, 2.0));
        for id in MethodId::ALL.iter().filter(|m| m.is_frozen()) {
            let k = coeffs(*id, &quartic(), &wide, 0.0);
            assert_eq!(k.v2[(0, 0)], 4.0);
        }
    }

    #[test]
    fn frozen_rejects_real_width() {
        let model = PotentialModel::harmonic_1d(1.0, 1.0).unwrap();
        let s = state_1d(0.0, c(0.1, 1.0));
        let method = Method::new(
            MethodSpec::new(MethodId::FgwdLocalHarmonic),
            model,
            PhysicalSetup::unit(1),
            ExpectationEngine::default(),
            s.q(),
        )
        .unwrap();
        assert!(matches!(method.coefficients(&s), Err(GwpdError::Constraint(_))));
    }

    #[test]
    fn single_hessian_at_initial_geometry_matches_local_harmonic() {
        let m = PotentialModel::morse_1d(0.1, 1.0, 0.0).unwrap();
        let s = state_1d(0.3, c(0.1, 1.0));
        let a = coeffs(MethodId::TgwdSingleHessian, &m, &s, 0.3);
        let b = coeffs(MethodId::TgwdLocalHarmonic, &m, &s, 0.3);
        assert_eq!(a, b);
    }
}
