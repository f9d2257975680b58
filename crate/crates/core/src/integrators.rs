//! Exact kinetic and potential sub-flows, split-step schemes and their
//! symmetric compositions, and the propagation driver.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{GwpdError, Result};
use crate::linalg::{self, CMatrix};
use crate::methods::{EffectiveCoefficients, Method};
use crate::setup::PhysicalSetup;
use crate::state::{GaussianHagedorn, GaussianHeller};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// (ħ/2)·Tr(m⁻¹ℬ), the zero-point phase rate of a frozen Gaussian.
fn frozen_phase_rate(im_a: &DMatrix<f64>, setup: &PhysicalSetup) -> f64 {
    0.5 * setup.hbar() * linalg::trace_product(setup.inv_mass(), im_a)
}

/// Continuous ln det(Id + t·m⁻¹·A), evaluated on the similar matrix
/// Id + t·m^{-1/2}·A·m^{-1/2} whose imaginary part is definite for t ≠ 0.
fn ln_det_kinetic(a: &CMatrix, t: f64, setup: &PhysicalSetup) -> Result<Complex64> {
    if t == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let s = setup.inv_mass_sqrt();
    let re = s * linalg::real_part(a) * s * t + DMatrix::identity(a.nrows(), a.nrows());
    let im = s * linalg::imag_part(a) * s * t;
    linalg::ln_det_definite_imag(&linalg::symmetrize(&re), &linalg::symmetrize(&im))
}

/// Free-particle flow for time t (either sign). Frozen mode keeps A and adds
/// the real zero-point phase −(ħ/2)Tr(m⁻¹ℬ)·t.
pub fn kinetic_step_heller(
    state: &GaussianHeller,
    t: f64,
    setup: &PhysicalSetup,
    frozen: bool,
) -> Result<GaussianHeller> {
    let inv_m = setup.inv_mass();
    let q = state.q() + inv_m * state.p() * t;
    let kinetic = setup.kinetic_energy(state.p()) * t;
    if frozen {
        let gamma = state.gamma() + kinetic - frozen_phase_rate(&state.im_a(), setup) * t;
        return Ok(GaussianHeller::from_raw(q, state.p().clone(), state.a().clone(), gamma));
    }
    let d = state.dim();
    let a = state.a();
    let update = CMatrix::identity(d, d) + linalg::to_complex(inv_m) * a * Complex64::new(t, 0.0);
    let ln_det = ln_det_kinetic(a, t, setup)?;
    let principal = update.determinant().ln();
    if (ln_det.im - principal.im).abs() > 1e-9 {
        return Err(GwpdError::BranchCrossing { dt: t });
    }
    let new_a = a * linalg::inverse_complex(&update, "Id + t·m⁻¹·A")?;
    let gamma = state.gamma() + kinetic + I * (0.5 * setup.hbar()) * ln_det;
    Ok(GaussianHeller::from_raw(q, state.p().clone(), new_a, gamma))
}

/// Flow of the effective quadratic potential for time t: p −= t·V₁, A −= t·V₂
/// (skipped in frozen mode), γ −= t·V₀.
pub fn potential_step_heller(
    state: &GaussianHeller,
    t: f64,
    coeffs: &EffectiveCoefficients,
    frozen: bool,
) -> Result<GaussianHeller> {
    if coeffs.dim() != state.dim() {
        return Err(GwpdError::InvalidArgument("coefficient dimension mismatch".into()));
    }
    let p = state.p() - &coeffs.v1 * t;
    let a = if frozen {
        state.a().clone()
    } else {
        state.a() - linalg::to_complex(&(&coeffs.v2 * t))
    };
    let gamma = state.gamma() - coeffs.v0 * t;
    Ok(GaussianHeller::from_raw(state.q().clone(), p, a, gamma))
}

/// Q += t·m⁻¹·P, q += t·m⁻¹·p, S += t·T(p). The winding of det Q is advanced by
/// the continuous phase of det(Id + t·m⁻¹·A), which equals det Q′/det Q.
pub fn kinetic_step_hagedorn(
    state: &GaussianHagedorn,
    t: f64,
    setup: &PhysicalSetup,
    frozen: bool,
) -> Result<GaussianHagedorn> {
    let inv_m = setup.inv_mass();
    let q = state.q() + inv_m * state.p() * t;
    let kinetic = setup.kinetic_energy(state.p()) * t;
    if frozen {
        let s = state.s() + kinetic - frozen_phase_rate(&state.im_width()?, setup) * t;
        return Ok(GaussianHagedorn::from_raw(
            q,
            state.p().clone(),
            state.big_q().clone(),
            state.big_p().clone(),
            s,
            state.winding(),
        ));
    }
    let big_q = state.big_q() + linalg::to_complex(inv_m) * state.big_p() * Complex64::new(t, 0.0);
    let continued_arg = state.arg_det_q() + ln_det_kinetic(&state.width()?, t, setup)?.im;
    let principal_arg = big_q.determinant().arg();
    let winding = ((continued_arg - principal_arg) / std::f64::consts::TAU).round() as i64;
    Ok(GaussianHagedorn::from_raw(
        q,
        state.p().clone(),
        big_q,
        state.big_p().clone(),
        state.s() + kinetic,
        winding,
    ))
}

/// P −= t·V₂·Q (skipped in frozen mode), p −= t·V₁, S −= t·V₀.
pub fn potential_step_hagedorn(
    state: &GaussianHagedorn,
    t: f64,
    coeffs: &EffectiveCoefficients,
    frozen: bool,
) -> Result<GaussianHagedorn> {
    if coeffs.dim() != state.dim() {
        return Err(GwpdError::InvalidArgument("coefficient dimension mismatch".into()));
    }
    let big_p = if frozen {
        state.big_p().clone()
    } else {
        state.big_p() - linalg::to_complex(&(&coeffs.v2 * t)) * state.big_q()
    };
    Ok(GaussianHagedorn::from_raw(
        state.q().clone(),
        state.p() - &coeffs.v1 * t,
        state.big_q().clone(),
        big_p,
        state.s() - coeffs.v0 * t,
        state.winding(),
    ))
}

/// Common interface of the two parametrizations used by the driver.
pub trait Wavepacket: Clone + Sized {
    fn kinetic(&self, t: f64, setup: &PhysicalSetup, frozen: bool) -> Result<Self>;
    fn potential(&self, t: f64, coeffs: &EffectiveCoefficients, frozen: bool) -> Result<Self>;
    /// Heller view with the same q, p and A; the phase is only meaningful for
    /// [`Wavepacket::to_heller`].
    fn width_view(&self) -> Result<GaussianHeller>;
    fn to_heller(&self, setup: &PhysicalSetup) -> Result<GaussianHeller>;
    fn check(&self) -> Result<()>;
    /// Restores unit norm where the parametrization has a free norm.
    fn renormalized(&self, setup: &PhysicalSetup) -> Result<Self>;
    /// Largest absolute difference over all parameters.
    fn max_param_diff(&self, other: &Self) -> f64;
}

impl Wavepacket for GaussianHeller {
    fn kinetic(&self, t: f64, setup: &PhysicalSetup, frozen: bool) -> Result<Self> {
        kinetic_step_heller(self, t, setup, frozen)
    }

    fn potential(&self, t: f64, coeffs: &EffectiveCoefficients, frozen: bool) -> Result<Self> {
        potential_step_heller(self, t, coeffs, frozen)
    }

    fn width_view(&self) -> Result<GaussianHeller> {
        Ok(self.clone())
    }

    fn to_heller(&self, _setup: &PhysicalSetup) -> Result<GaussianHeller> {
        Ok(self.clone())
    }

    fn check(&self) -> Result<()> {
        self.check_invariants()
    }

    fn renormalized(&self, setup: &PhysicalSetup) -> Result<Self> {
        self.normalized(setup)
    }

    fn max_param_diff(&self, other: &Self) -> f64 {
        (self.q() - other.q())
            .amax()
            .max((self.p() - other.p()).amax())
            .max(linalg::max_abs_complex(&(self.a() - other.a())))
            .max((self.gamma() - other.gamma()).norm())
    }
}

impl Wavepacket for GaussianHagedorn {
    fn kinetic(&self, t: f64, setup: &PhysicalSetup, frozen: bool) -> Result<Self> {
        kinetic_step_hagedorn(self, t, setup, frozen)
    }

    fn potential(&self, t: f64, coeffs: &EffectiveCoefficients, frozen: bool) -> Result<Self> {
        potential_step_hagedorn(self, t, coeffs, frozen)
    }

    fn width_view(&self) -> Result<GaussianHeller> {
        Ok(GaussianHeller::from_raw(self.q().clone(), self.p().clone(), self.width()?, Complex64::new(0.0, 0.0)))
    }

    fn to_heller(&self, setup: &PhysicalSetup) -> Result<GaussianHeller> {
        GaussianHagedorn::to_heller(self, setup)
    }

    fn check(&self) -> Result<()> {
        self.check_invariants()
    }

    /// The Hagedorn prefactor is normalized by construction.
    fn renormalized(&self, _setup: &PhysicalSetup) -> Result<Self> {
        Ok(self.clone())
    }

    fn max_param_diff(&self, other: &Self) -> f64 {
        (self.q() - other.q())
            .amax()
            .max((self.p() - other.p()).amax())
            .max(linalg::max_abs_complex(&(self.big_q() - other.big_q())))
            .max(linalg::max_abs_complex(&(self.big_p() - other.big_p())))
            .max((self.s() - other.s()).abs())
            .max(if self.winding() == other.winding() { 0.0 } else { f64::INFINITY })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseScheme {
    TV,
    VT,
    TVT,
    VTV,
}

impl BaseScheme {
    pub fn is_symmetric(self) -> bool {
        matches!(self, BaseScheme::TVT | BaseScheme::VTV)
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseScheme::TV => "TV",
            BaseScheme::VT => "VT",
            BaseScheme::TVT => "TVT",
            BaseScheme::VTV => "VTV",
        }
    }

    /// Sub-flows of one base step of unit length, in application order.
    fn stages(self) -> Vec<SubFlow> {
        use SubFlow::{Kinetic, Potential};
        match self {
            BaseScheme::TV => vec![Kinetic(1.0), Potential(1.0)],
            BaseScheme::VT => vec![Potential(1.0), Kinetic(1.0)],
            BaseScheme::TVT => vec![Kinetic(0.5), Potential(1.0), Kinetic(0.5)],
            BaseScheme::VTV => vec![Potential(0.5), Kinetic(1.0), Potential(0.5)],
        }
    }
}

impl fmt::Display for BaseScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseScheme {
    type Err = GwpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TV" => Ok(BaseScheme::TV),
            "VT" => Ok(BaseScheme::VT),
            "TVT" => Ok(BaseScheme::TVT),
            "VTV" => Ok(BaseScheme::VTV),
            _ => Err(GwpdError::InvalidArgument(format!("unknown base scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Composition {
    TripleJump,
    SuzukiFractal,
    /// Nine-stage sixth-order scheme of Kahan and Li.
    KahanLi,
}

impl Composition {
    pub fn name(self) -> &'static str {
        match self {
            Composition::TripleJump => "triple_jump",
            Composition::SuzukiFractal => "suzuki_fractal",
            Composition::KahanLi => "kahan_li",
        }
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Composition {
    type Err = GwpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triple_jump" => Ok(Composition::TripleJump),
            "suzuki_fractal" | "suzuki" => Ok(Composition::SuzukiFractal),
            "kahan_li" | "kahan_li_optional" => Ok(Composition::KahanLi),
            _ => Err(GwpdError::InvalidArgument(format!("unknown composition `{s}`"))),
        }
    }
}

/// Kahan–Li s9odr6a weights, first half plus center; the scheme is palindromic.
const KAHAN_LI_ORDER6: [f64; 5] = [
    0.392_161_444_007_314_139_28,
    0.332_599_136_789_359_438_60,
    -0.706_246_172_557_639_359_81,
    0.082_213_596_293_550_800_23,
    0.798_543_990_934_829_963_40,
];

/// Weights of the symmetric base method inside one composed step.
///
/// Triple jump raises order 2k to 2k+2 with (γ₁, γ₂, γ₁),
/// γ₁ = 1/(2 − 2^{1/(2k+1)}), γ₂ = 1 − 2γ₁.
/// Suzuki's fractal uses (γ₁, γ₁, 1 − 4γ₁, γ₁, γ₁), γ₁ = 1/(4 − 4^{1/(2k+1)}).
pub fn composition_weights(composition: Composition, order: u32) -> Result<Vec<f64>> {
    if order < 2 || order % 2 == 1 {
        return Err(GwpdError::InvalidArgument(format!("composition order must be even ≥ 2, got {order}")));
    }
    if order == 2 {
        return Ok(vec![1.0]);
    }
    match composition {
        Composition::KahanLi => {
            if order != 6 {
                return Err(GwpdError::InvalidArgument("Kahan–Li coefficients exist for order 6 only".into()));
            }
            let mut w = KAHAN_LI_ORDER6.to_vec();
            w.extend(KAHAN_LI_ORDER6[..4].iter().rev());
            Ok(w)
        }
        Composition::TripleJump | Composition::SuzukiFractal => {
            let inner = composition_weights(composition, order - 2)?;
            let exponent = 1.0 / (order - 1) as f64;
            let outer = if composition == Composition::TripleJump {
                let g1 = 1.0 / (2.0 - 2f64.powf(exponent));
                vec![g1, 1.0 - 2.0 * g1, g1]
            } else {
                let g1 = 1.0 / (4.0 - 4f64.powf(exponent));
                vec![g1, g1, 1.0 - 4.0 * g1, g1, g1]
            };
            Ok(outer.iter().flat_map(|g| inner.iter().map(move |w| g * w)).collect())
        }
    }
}

/// One exact sub-flow with its duration as a fraction of the time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubFlow {
    Kinetic(f64),
    Potential(f64),
}

impl SubFlow {
    fn fraction(self) -> f64 {
        match self {
            SubFlow::Kinetic(f) | SubFlow::Potential(f) => f,
        }
    }

    fn same_kind(self, other: SubFlow) -> bool {
        matches!(
            (self, other),
            (SubFlow::Kinetic(_), SubFlow::Kinetic(_)) | (SubFlow::Potential(_), SubFlow::Potential(_))
        )
    }

    fn with_fraction(self, f: f64) -> SubFlow {
        match self {
            SubFlow::Kinetic(_) => SubFlow::Kinetic(f),
            SubFlow::Potential(_) => SubFlow::Potential(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSpec {
    pub base: BaseScheme,
    pub order: u32,
    pub composition: Composition,
    pub dt: f64,
    pub steps: usize,
}

impl SchemeSpec {
    pub fn new(base: BaseScheme, order: u32, composition: Composition, dt: f64, steps: usize) -> Result<Self> {
        let spec = Self { base, order, composition, dt, steps };
        spec.validate()?;
        Ok(spec)
    }

    /// TVT at order 2.
    pub fn verlet(dt: f64, steps: usize) -> Result<Self> {
        Self::new(BaseScheme::TVT, 2, Composition::TripleJump, dt, steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(GwpdError::InvalidArgument(format!("time step must be positive, got {}", self.dt)));
        }
        if self.base.is_symmetric() {
            if self.order < 2 || self.order % 2 == 1 {
                return Err(GwpdError::InvalidArgument(format!(
                    "{} supports even orders ≥ 2, got {}",
                    self.base, self.order
                )));
            }
            composition_weights(self.composition, self.order)?;
        } else if self.order != 1 {
            return Err(GwpdError::InvalidArgument(format!(
                "{} is first order; compositions need a symmetric base",
                self.base
            )));
        }
        Ok(())
    }

    /// Human-readable label, e.g. `TVT-4-triple_jump`.
    pub fn label(&self) -> String {
        if self.order <= 2 {
            self.base.name().to_string()
        } else {
            format!("{}-{}-{}", self.base, self.order, self.composition)
        }
    }

    /// Sub-flows of one step with adjacent same-kind flows merged.
    pub fn stages(&self) -> Result<Vec<SubFlow>> {
        self.validate()?;
        let weights = if self.base.is_symmetric() {
            composition_weights(self.composition, self.order)?
        } else {
            vec![1.0]
        };
        let mut out: Vec<SubFlow> = Vec::new();
        for w in weights {
            for stage in self.base.stages() {
                let stage = stage.with_fraction(stage.fraction() * w);
                match out.last_mut() {
                    Some(last) if last.same_kind(stage) => *last = last.with_fraction(last.fraction() + stage.fraction()),
                    _ => out.push(stage),
                }
            }
        }
        Ok(out)
    }
}

/// States, times and diagnostics recorded along a run.
#[derive(Debug, Clone)]
pub struct Trajectory<W> {
    pub times: Vec<f64>,
    pub states: Vec<W>,
    pub diagnostics: Vec<DiagnosticsRecord>,
}

impl<W> Trajectory<W> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &W {
        self.states.last().expect("trajectory holds the initial state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagateOptions {
    pub save_every: usize,
    pub diagnostics: bool,
    /// Re-normalize γ after every step; off by default since both sub-flows conserve the norm.
    pub renormalize: bool,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self { save_every: 1, diagnostics: true, renormalize: false }
    }
}

/// A scheme bound to a method.
#[derive(Debug, Clone)]
pub struct Propagator {
    scheme: SchemeSpec,
    stages: Vec<SubFlow>,
    method: Method,
}

impl Propagator {
    pub fn new(scheme: SchemeSpec, method: Method) -> Result<Self> {
        let stages = scheme.stages()?;
        Ok(Self { scheme, stages, method })
    }

    pub fn scheme(&self) -> &SchemeSpec {
        &self.scheme
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn setup(&self) -> &PhysicalSetup {
        self.method.setup()
    }

    pub fn stages(&self) -> &[SubFlow] {
        &self.stages
    }

    fn apply<W: Wavepacket>(&self, state: &W, flow: SubFlow, dt: f64) -> Result<W> {
        let frozen = self.method.frozen();
        match flow {
            SubFlow::Kinetic(f) => state.kinetic(f * dt, self.setup(), frozen),
            SubFlow::Potential(f) => {
                let coeffs = self.method.coefficients(&state.width_view()?)?;
                state.potential(f * dt, &coeffs, frozen)
            }
        }
    }

    /// One step of length dt (negative dt runs the same stage order backward in time).
    pub fn step<W: Wavepacket>(&self, state: &W, dt: f64) -> Result<W> {
        let mut s = state.clone();
        for &flow in &self.stages {
            s = self.apply(&s, flow, dt)?;
        }
        Ok(s)
    }

    /// Exact inverse of [`Self::step`]: the stages in reverse order with −dt.
    pub fn adjoint_step<W: Wavepacket>(&self, state: &W, dt: f64) -> Result<W> {
        let mut s = state.clone();
        for &flow in self.stages.iter().rev() {
            s = self.apply(&s, flow, -dt)?;
        }
        Ok(s)
    }

    /// Runs `steps` steps of the scheme's dt.
    pub fn propagate<W: Wavepacket>(&self, initial: &W, steps: usize, options: PropagateOptions) -> Result<Trajectory<W>> {
        self.propagate_with(initial, steps, self.scheme.dt, options)
    }

    pub fn propagate_with<W: Wavepacket>(
        &self,
        initial: &W,
        steps: usize,
        dt: f64,
        options: PropagateOptions,
    ) -> Result<Trajectory<W>> {
        initial.check()?;
        let save_every = options.save_every.max(1);
        let setup = self.setup();
        let mut traj = Trajectory { times: vec![0.0], states: vec![initial.clone()], diagnostics: Vec::new() };
        if options.diagnostics {
            traj.diagnostics.push(self.record(initial, 0.0)?);
        }
        let mut state = initial.clone();
        for n in 1..=steps {
            let at_step = |e: GwpdError| match e {
                GwpdError::Numerical { .. } => e,
                other => GwpdError::Numerical { step: n, message: other.to_string() },
            };
            state = self.step(&state, dt).map_err(at_step)?;
            if options.renormalize {
                state = state.renormalized(setup).map_err(at_step)?;
            }
            state.check().map_err(at_step)?;
            if n % save_every == 0 || n == steps {
                let t = n as f64 * dt;
                if options.diagnostics {
                    traj.diagnostics.push(self.record(&state, t).map_err(at_step)?);
                }
                traj.times.push(t);
                traj.states.push(state.clone());
            }
        }
        Ok(traj)
    }

    /// Diagnostics of a state under this propagator's method.
    pub fn record<W: Wavepacket>(&self, state: &W, t: f64) -> Result<DiagnosticsRecord> {
        let heller = state.to_heller(self.setup())?;
        diagnostics::record(&heller, &self.method, t)
    }

    /// Forward `steps` steps, then the same number of adjoint steps; returns
    /// the largest parameter deviation from the initial state.
    pub fn reverse_roundtrip<W: Wavepacket>(&self, initial: &W, steps: usize) -> Result<f64> {
        let dt = self.scheme.dt;
        let mut state = initial.clone();
        for _ in 0..steps {
            state = self.step(&state, dt)?;
        }
        for _ in 0..steps {
            state = self.adjoint_step(&state, dt)?;
        }
        Ok(state.max_param_diff(initial))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::{MethodId, MethodSpec};
    use crate::potentials::{ExpectationEngine, Polynomial, PotentialModel};
    use crate::reference::harmonic_exact_heller;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn heller_1d(q: f64, p: f64, a: Complex64, gamma: Complex64) -> GaussianHeller {
        GaussianHeller::new_1d(q, p, a, gamma).unwrap()
    }

    fn coeffs_1d(v0: f64, v1: f64, v2: f64) -> EffectiveCoefficients {
        EffectiveCoefficients::new(v0, DVector::from_element(1, v1), DMatrix::from_element(1, 1, v2)).unwrap()
    }

    fn propagator(id: MethodId, model: PotentialModel, scheme: SchemeSpec, q0: &DVector<f64>) -> Propagator {
        let setup = PhysicalSetup::unit(model.dim());
        let method = Method::new(MethodSpec::new(id), model, setup, ExpectationEngine::default(), q0).unwrap();
        Propagator::new(scheme, method).unwrap()
    }

    #[test]
    fn kinetic_step_hand_values() {
        let setup = PhysicalSetup::unit(1);
        let s = kinetic_step_heller(&heller_1d(0.0, 2.0, c(0.0, 1.0), c(0.0, 0.0)), 0.5, &setup, false).unwrap();
        // ln(1 + 0.5i) = ln|1 + 0.5i| + i·atan(0.5)
        let ln = c(0.5 * 1.25f64.ln(), 0.5f64.atan());
        let gamma = c(1.0, 0.0) + c(0.0, 0.5) * ln;
        assert!((s.q()[0] - 1.0).abs() < 1e-15 && s.p()[0] == 2.0);
        assert!((s.a()[(0, 0)] - c(0.4, 0.8)).norm() < 1e-15);
        assert!((s.gamma() - gamma).norm() < 1e-15);
        assert!((s.gamma() - c(0.768176, 0.055786)).norm() < 1e-6);
    }

    #[test]
    fn kinetic_step_zero_and_inverse() {
        let setup = PhysicalSetup::unit(1);
        let s0 = heller_1d(0.3, -1.1, c(0.2, 0.7), c(0.1, 0.4));
        assert_eq!(kinetic_step_heller(&s0, 0.0, &setup, false).unwrap(), s0);
        let s1 = kinetic_step_heller(&s0, 0.37, &setup, false).unwrap();
        let back = kinetic_step_heller(&s1, -0.37, &setup, false).unwrap();
        assert!(back.max_param_diff(&s0) < 1e-14);
        // Explicit inverse: A₀ = (A_t⁻¹ − t m⁻¹)⁻¹, γ₀ = γ_t − tT(p) + (iħ/2) ln det(Id − t m⁻¹ A_t).
        let t = 0.37;
        let at = s1.a()[(0, 0)];
        let a0 = 1.0 / (1.0 / at - t);
        let g0 = s1.gamma() - t * 0.5 * s1.p()[0].powi(2) + c(0.0, 0.5) * (c(1.0, 0.0) - t * at).ln();
        assert!((a0 - s0.a()[(0, 0)]).norm() < 1e-14);
        assert!((g0 - s0.gamma()).norm() < 1e-14);
        assert!((s1.q()[0] - t * s1.p()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn frozen_kinetic_step() {
        let setup = PhysicalSetup::isotropic(1, 0.5, 2.0).unwrap();
        let s0 = heller_1d(0.0, 1.0, c(0.0, 3.0), c(0.0, 0.2));
        let s1 = kinetic_step_heller(&s0, 0.1, &setup, true).unwrap();
        assert_eq!(s1.a(), s0.a());
        // T(p) = 1/4, (ħ/2)Tr(m⁻¹ℬ) = 0.25·1.5
        let expected = c(0.1 * (0.25 - 0.375), 0.2);
        assert!((s1.gamma() - expected).norm() < 1e-15);
        assert!((s1.q()[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn potential_step_hand_values() {
        let s0 = heller_1d(1.0, 0.0, c(0.0, 1.0), c(0.0, 0.0));
        let k = coeffs_1d(0.5, 1.0, 1.0);
        let s1 = potential_step_heller(&s0, 0.1, &k, false).unwrap();
        assert_eq!(s1.q()[0], 1.0);
        assert!((s1.p()[0] + 0.1).abs() < 1e-15);
        assert!((s1.a()[(0, 0)] - c(-0.1, 1.0)).norm() < 1e-15);
        assert!((s1.gamma() - c(-0.05, 0.0)).norm() < 1e-15);
        assert_eq!(s1.im_a(), s0.im_a());
        assert_eq!(potential_step_heller(&s0, 0.0, &k, false).unwrap(), s0);
        let back = potential_step_heller(&s1, -0.1, &k, false).unwrap();
        assert!(back.max_param_diff(&s0) < 1e-15);
        let frozen = potential_step_heller(&s0, 0.1, &k, true).unwrap();
        assert_eq!(frozen.a(), s0.a());
    }

    fn hagedorn_unit() -> GaussianHagedorn {
        GaussianHagedorn::new(
            DVector::zeros(1),
            DVector::from_element(1, 0.7),
            DMatrix::from_element(1, 1, c(1.0, 0.0)),
            DMatrix::from_element(1, 1, c(0.0, 1.0)),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn hagedorn_kinetic_step_matches_heller() {
        let setup = PhysicalSetup::unit(1);
        let h0 = hagedorn_unit();
        let h1 = kinetic_step_hagedorn(&h0, 0.5, &setup, false).unwrap();
        assert!((h1.big_q()[(0, 0)] - c(1.0, 0.5)).norm() < 1e-15);
        assert_eq!(h1.big_p()[(0, 0)], c(0.0, 1.0));
        assert!(h1.relation_defect() < 1e-14);
        let via_heller = kinetic_step_heller(&h0.to_heller(&setup).unwrap(), 0.5, &setup, false).unwrap();
        let direct = h1.to_heller(&setup).unwrap();
        assert!((direct.a()[(0, 0)] - c(0.4, 0.8)).norm() < 1e-15);
        for x in [-1.0, 0.0, 0.4, 1.3] {
            let pt = DVector::from_element(1, x);
            let a = direct.wavefunction(&pt, &setup);
            let b = via_heller.wavefunction(&pt, &setup);
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn hagedorn_potential_step() {
        let h0 = hagedorn_unit();
        let h1 = potential_step_hagedorn(&h0, 0.1, &coeffs_1d(0.3, 0.2, 1.0), false).unwrap();
        assert!((h1.big_p()[(0, 0)] - c(-0.1, 1.0)).norm() < 1e-15);
        assert!(h1.relation_defect() < 1e-12);
        let h2 = potential_step_hagedorn(&h0, 0.1, &coeffs_1d(0.3, 0.2, 0.0), false).unwrap();
        assert_eq!(h2.big_p(), h0.big_p());
        assert_eq!(h2.big_q(), h0.big_q());
        assert!((h2.p()[0] - 0.68).abs() < 1e-15 && (h2.s() + 0.03).abs() < 1e-15);
    }

    #[test]
    fn branch_crossing_detected_in_two_dimensions() {
        let setup = PhysicalSetup::unit(2);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![c(-5.0, 1.0), c(-5.0, 1.0)]));
        let s = GaussianHeller::new(DVector::zeros(2), DVector::zeros(2), a, c(0.0, 0.0)).unwrap();
        assert!(kinetic_step_heller(&s, 0.01, &setup, false).is_ok());
        assert!(matches!(kinetic_step_heller(&s, 1.0, &setup, false), Err(GwpdError::BranchCrossing { .. })));
    }

    #[test]
    fn composition_weights_are_consistent() {
        for (comp, order, count) in [
            (Composition::TripleJump, 4, 3),
            (Composition::TripleJump, 6, 9),
            (Composition::TripleJump, 8, 27),
            (Composition::SuzukiFractal, 4, 5),
            (Composition::SuzukiFractal, 6, 25),
            (Composition::KahanLi, 6, 9),
        ] {
            let w = composition_weights(comp, order).unwrap();
            assert_eq!(w.len(), count);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14, "{comp} {order}");
            let rev: Vec<f64> = w.iter().rev().copied().collect();
            assert_eq!(w, rev);
        }
        let w = composition_weights(Composition::TripleJump, 4).unwrap();
        let g1 = 1.0 / (2.0 - 2f64.cbrt());
        assert!((w[0] - g1).abs() < 1e-15 && (w[0] - 1.351207191959658).abs() < 1e-14);
        assert!(composition_weights(Composition::KahanLi, 4).is_err());
    }

    #[test]
    fn stages_merge_adjacent_flows() {
        let tj4 = SchemeSpec::new(BaseScheme::TVT, 4, Composition::TripleJump, 0.1, 1).unwrap();
        let stages = tj4.stages().unwrap();
        assert_eq!(stages.len(), 7);
        let kin: f64 = stages.iter().filter(|s| matches!(s, SubFlow::Kinetic(_))).map(|s| s.fraction()).sum();
        assert!((kin - 1.0).abs() < 1e-14);
        assert_eq!(SchemeSpec::verlet(0.1, 1).unwrap().stages().unwrap().len(), 3);
    }

    #[test]
    fn scheme_validation() {
        assert!(SchemeSpec::new(BaseScheme::TV, 2, Composition::TripleJump, 0.1, 1).is_err());
        assert!(SchemeSpec::new(BaseScheme::TVT, 1, Composition::TripleJump, 0.1, 1).is_err());
        assert!(SchemeSpec::new(BaseScheme::TVT, 3, Composition::TripleJump, 0.1, 1).is_err());
        assert!(SchemeSpec::new(BaseScheme::TVT, 2, Composition::TripleJump, 0.0, 1).is_err());
        assert!(SchemeSpec::new(BaseScheme::VT, 1, Composition::TripleJump, 0.1, 1).is_ok());
        assert_eq!("tvt".parse::<BaseScheme>().unwrap(), BaseScheme::TVT);
    }

    #[test]
    fn free_particle_every_scheme_is_exact() {
        let setup = PhysicalSetup::unit(1);
        let model = PotentialModel::polynomial(Polynomial::zero(1));
        let s0 = heller_1d(0.2, 0.9, c(0.3, 1.2), c(0.0, 0.1));
        let exact = kinetic_step_heller(&s0, 0.1, &setup, false).unwrap();
        for (base, order) in [(BaseScheme::TV, 1), (BaseScheme::VT, 1), (BaseScheme::TVT, 2), (BaseScheme::VTV, 4), (BaseScheme::TVT, 8)] {
            let scheme = SchemeSpec::new(base, order, Composition::TripleJump, 0.1, 1).unwrap();
            let p = propagator(MethodId::TgwdVariational, model.clone(), scheme, s0.q());
            assert!(p.step(&s0, 0.1).unwrap().max_param_diff(&exact) < 1e-14, "{base} {order}");
        }
    }

    #[test]
    fn harmonic_period_recurrence() {
        let setup = PhysicalSetup::unit(1);
        let model = PotentialModel::harmonic_1d(1.0, 1.0).unwrap();
        let s0 = heller_1d(1.0, 0.5, c(0.2, 0.8), c(0.0, 0.0)).normalized(&setup).unwrap();
        let scheme = SchemeSpec::new(BaseScheme::TVT, 4, Composition::TripleJump, 2.0 * PI / 1000.0, 1000).unwrap();
        let p = propagator(MethodId::TgwdLocalHarmonic, model, scheme, s0.q());
        let traj = p.propagate(&s0, 1000, PropagateOptions { diagnostics: false, ..Default::default() }).unwrap();
        let end = traj.last();
        assert!((end.q() - s0.q()).amax() < 1e-8 && (end.p() - s0.p()).amax() < 1e-8);
    }

    fn harmonic_error(base: BaseScheme, order: u32, comp: Composition, dt: f64, t_end: f64) -> f64 {
        let setup = PhysicalSetup::unit(1);
        let model = PotentialModel::harmonic_1d(1.0, 1.0).unwrap();
        let s0 = heller_1d(1.0, 0.5, c(0.2, 0.8), c(0.0, 0.0)).normalized(&setup).unwrap();
        let steps = (t_end / dt).round() as usize;
        let scheme = SchemeSpec::new(base, order, comp, dt, steps).unwrap();
        let p = propagator(MethodId::TgwdLocalHarmonic, model, scheme, s0.q());
        let mut s = s0.clone();
        for _ in 0..steps {
            s = p.step(&s, dt).unwrap();
        }
        let exact = harmonic_exact_heller(&s0, &DMatrix::identity(1, 1), &DVector::zeros(1), &setup, t_end).unwrap();
        s.max_param_diff(&exact)
    }

    #[test]
    fn composed_orders_on_harmonic() {
        for (base, order, comp) in [
            (BaseScheme::TV, 1, Composition::TripleJump),
            (BaseScheme::TVT, 2, Composition::TripleJump),
            (BaseScheme::VTV, 4, Composition::TripleJump),
            (BaseScheme::TVT, 4, Composition::SuzukiFractal),
            (BaseScheme::TVT, 6, Composition::TripleJump),
            (BaseScheme::TVT, 6, Composition::KahanLi),
        ] {
            let (dt, t_end) = if order >= 6 { (0.2, 4.0) } else { (0.05, 2.0) };
            let coarse = harmonic_error(base, order, comp, dt, t_end);
            let fine = harmonic_error(base, order, comp, dt / 2.0, t_end);
            let slope = (coarse / fine).log2();
            assert!((slope - order as f64).abs() < 0.2, "{base} {order} {comp}: slope {slope}");
        }
    }

    #[test]
    fn zero_steps_and_roundtrips() {
        let setup = PhysicalSetup::unit(1);
        let model = PotentialModel::morse_1d(0.1, 1.0, 0.0).unwrap();
        let s0 = heller_1d(0.3, 0.0, c(0.05, 0.5), c(0.0, 0.0)).normalized(&setup).unwrap();
        let scheme = SchemeSpec::new(BaseScheme::TV, 1, Composition::TripleJump, 0.05, 0).unwrap();
        let p = propagator(MethodId::TgwdLocalHarmonic, model.clone(), scheme, s0.q());
        assert_eq!(p.propagate(&s0, 0, PropagateOptions::default()).unwrap().len(), 1);
        assert_eq!(p.reverse_roundtrip(&s0, 0).unwrap(), 0.0);
        assert!(p.reverse_roundtrip(&s0, 500).unwrap() < 1e-10);
        // Running the same TV stage order backward is not the inverse.
        let mut s = s0.clone();
        for _ in 0..500 {
            s = p.step(&s, 0.05).unwrap();
        }
        for _ in 0..500 {
            s = p.step(&s, -0.05).unwrap();
        }
        assert!(s.max_param_diff(&s0) > 1e-6);
    }

    #[test]
    fn hagedorn_tracks_heller_through_windings() {
        let setup = PhysicalSetup::unit(1);
        let model = PotentialModel::harmonic_1d(1.0, 1.0).unwrap();
        let s0 = heller_1d(0.5, 0.2, c(0.3, 0.4), c(0.0, 0.0)).normalized(&setup).unwrap();
        let h0 = GaussianHagedorn::from_heller(&s0, &setup).unwrap();
        let scheme = SchemeSpec::verlet(0.05, 400).unwrap();
        let p = propagator(MethodId::TgwdVariational, model, scheme, s0.q());
        let opts = PropagateOptions { diagnostics: false, ..Default::default() };
        let a = p.propagate(&s0, 400, opts).unwrap();
        let b = p.propagate(&h0, 400, opts).unwrap();
        assert!(b.last().winding() != 0);
        let ha = a.last();
        let hb = b.last().to_heller(&setup).unwrap();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            let pt = DVector::from_element(1, x);
            assert!((ha.wavefunction(&pt, &setup) - hb.wavefunction(&pt, &setup)).norm() < 1e-10);
        }
    }

    #[test]
    fn frozen_width_stays_bit_constant() {
        let setup = PhysicalSetup::unit(1);
        let model = PotentialModel::morse_1d(0.1, 1.0, 0.0).unwrap();
        let s0 = heller_1d(0.3, 0.1, c(0.0, 0.45), c(0.0, 0.0)).normalized(&setup).unwrap();
        let p = propagator(MethodId::FgwdVariational, model, SchemeSpec::verlet(0.05, 100).unwrap(), s0.q());
        let traj = p.propagate(&s0, 100, PropagateOptions::default()).unwrap();
        assert!(traj.states.iter().all(|s| s.a() == s0.a()));
    }

    #[test]
    fn invalid_mid_run_state_reports_step() {
        let setup = PhysicalSetup::unit(1);
        // An inverted harmonic potential with a huge step drives the width through zero.
        let model = PotentialModel::polynomial(Polynomial::from_terms(1, &[(-50.0, &[2])]).unwrap());
        let s0 = heller_1d(0.0, 0.0, c(0.0, 1.0), c(0.0, 0.0)).normalized(&setup).unwrap();
        let p = propagator(MethodId::TgwdLocalHarmonic, model, SchemeSpec::verlet(1.0, 50).unwrap(), s0.q());
        match p.propagate(&s0, 50, PropagateOptions::default()) {
            Err(GwpdError::Numerical { step, .. }) => assert!(step >= 1),
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }
}
