//! Grid-based split-operator propagation of the linear Schrödinger equation
//! in one or two dimensions, used as an exact quantum reference.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{GwpdError, Result};
use crate::potentials::PotentialModel;
use crate::setup::PhysicalSetup;
use crate::linalg::{self, CMatrix};
use crate::state::{GaussianHagedorn, GaussianHeller};

/// Edge density above which the periodic grid is considered too small.
pub const BOUNDARY_DENSITY_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub points: Vec<usize>,
    pub dt: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn new(bounds: Vec<(f64, f64)>, points: Vec<usize>, dt: f64, steps: usize) -> Result<Self> {
        let spec = Self { bounds, points, dt, steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.bounds.len();
        if !(d == 1 || d == 2) || self.points.len() != d {
            return Err(GwpdError::InvalidArgument("grid must be 1-D or 2-D with matching bounds".into()));
        }
        for (&(lo, hi), &n) in self.bounds.iter().zip(&self.points) {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(GwpdError::InvalidArgument(format!("bad grid bounds [{lo}, {hi}]")));
            }
            if n < 64 || !n.is_power_of_two() {
                return Err(GwpdError::InvalidArgument(format!(
                    "grid points must be a power of two ≥ 64, got {n}"
                )));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(GwpdError::InvalidArgument("grid time step must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.bounds[k].1 - self.bounds[k].0) / self.points[k] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of the flat (row-major) grid index.
    pub fn point(&self, flat: usize) -> DVector<f64> {
        let d = self.dim();
        let mut idx = vec![0; d];
        let mut rest = flat;
        for k in (0..d).rev() {
            idx[k] = rest % self.points[k];
            rest /= self.points[k];
        }
        DVector::from_fn(d, |k, _| self.bounds[k].0 + idx[k] as f64 * self.spacing(k))
    }

    /// Whether the flat index lies on the first or last row/column in any direction.
    fn on_edge(&self, flat: usize) -> bool {
        let mut rest = flat;
        for k in (0..self.dim()).rev() {
            let i = rest % self.points[k];
            rest /= self.points[k];
            if i == 0 || i + 1 == self.points[k] {
                return true;
            }
        }
        false
    }

    /// Bounds center ± 8·√(largest Σ eigenvalue seen along the run).
    pub fn around(center: &DVector<f64>, sigma_max: f64, points: usize, dt: f64, steps: usize) -> Result<Self> {
        let half = 8.0 * sigma_max.sqrt();
        let bounds = center.iter().map(|c| (c - half, c + half)).collect();
        Self::new(bounds, vec![points; center.len()], dt, steps)
    }
}

/// Complex field on a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<Complex64>,
}

impl GridField {
    pub fn norm_squared(&self, spec: &GridSpec) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * spec.cell_volume()
    }

    /// ⟨self|other⟩ by the rectangle rule (spectrally accurate on a periodic grid).
    pub fn inner(&self, other: &GridField, spec: &GridSpec) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum::<Complex64>() * spec.cell_volume()
    }

    pub fn max_edge_density(&self, spec: &GridSpec) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| spec.on_edge(*i))
            .fold(0.0_f64, |acc, (_, z)| acc.max(z.norm_sqr()))
    }
}

pub fn sample_gaussian_on_grid(state: &GaussianHeller, spec: &GridSpec, setup: &PhysicalSetup) -> Result<GridField> {
    spec.validate()?;
    if state.dim() != spec.dim() {
        return Err(GwpdError::InvalidArgument("state and grid dimensions differ".into()));
    }
    Ok(GridField { values: (0..spec.len()).map(|i| state.wavefunction(&spec.point(i), setup)).collect() })
}

/// Second-order split-operator propagator e^{−iVΔt/2ħ} e^{−iTΔt/ħ} e^{−iVΔt/2ħ}.
pub struct GridPropagator {
    spec: GridSpec,
    potential_half: Vec<Complex64>,
    kinetic: Vec<Complex64>,
    potential: Vec<f64>,
    kinetic_energy: Vec<f64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl GridPropagator {
    pub fn new(model: &PotentialModel, spec: GridSpec, setup: &PhysicalSetup) -> Result<Self> {
        spec.validate()?;
        if model.dim() != spec.dim() || setup.dim() != spec.dim() {
            return Err(GwpdError::InvalidArgument("grid, potential and setup dimensions differ".into()));
        }
        let hbar = setup.hbar();
        let potential: Vec<f64> = (0..spec.len()).map(|i| model.value(&spec.point(i))).collect();
        let potential_half = potential
            .iter()
            .map(|v| Complex64::from_polar(1.0, -0.5 * v * spec.dt / hbar))
            .collect();
        let d = spec.dim();
        let kinetic_energy: Vec<f64> = (0..spec.len())
            .map(|flat| {
                let mut rest = flat;
                let mut k = DVector::zeros(d);
                for axis in (0..d).rev() {
                    let n = spec.points[axis];
                    let j = rest % n;
                    rest /= n;
                    let signed = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                    k[axis] = 2.0 * std::f64::consts::PI * signed / (spec.bounds[axis].1 - spec.bounds[axis].0);
                }
                0.5 * hbar * hbar * k.dot(&(setup.inv_mass() * &k))
            })
            .collect();
        let kinetic = kinetic_energy.iter().map(|t| Complex64::from_polar(1.0, -t * spec.dt / hbar)).collect();
        let mut planner = FftPlanner::new();
        let forward = spec.points.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = spec.points.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Ok(Self { spec, potential_half, kinetic, potential, kinetic_energy, forward, inverse })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        match self.spec.dim() {
            1 => plans[0].process(data),
            _ => {
                let (n0, n1) = (self.spec.points[0], self.spec.points[1]);
                for row in data.chunks_mut(n1) {
                    plans[1].process(row);
                }
                let mut column = vec![Complex64::new(0.0, 0.0); n0];
                for j in 0..n1 {
                    for i in 0..n0 {
                        column[i] = data[i * n1 + j];
                    }
                    plans[0].process(&mut column);
                    for i in 0..n0 {
                        data[i * n1 + j] = column[i];
                    }
                }
            }
        }
    }

    pub fn step(&self, field: &mut GridField) {
        let scale = 1.0 / self.spec.len() as f64;
        for (z, v) in field.values.iter_mut().zip(&self.potential_half) {
            *z *= v;
        }
        self.transform(&mut field.values, &self.forward);
        for (z, k) in field.values.iter_mut().zip(&self.kinetic) {
            *z *= k * scale;
        }
        self.transform(&mut field.values, &self.inverse);
        for (z, v) in field.values.iter_mut().zip(&self.potential_half) {
            *z *= v;
        }
    }

    /// ⟨T̂⟩ + ⟨V̂⟩ of a normalized field.
    pub fn energy(&self, field: &GridField) -> f64 {
        let n = self.spec.len() as f64;
        let mut spectrum = field.values.clone();
        self.transform(&mut spectrum, &self.forward);
        let kinetic: f64 =
            spectrum.iter().zip(&self.kinetic_energy).map(|(z, t)| z.norm_sqr() * t).sum::<f64>() / n;
        let potential: f64 = field.values.iter().zip(&self.potential).map(|(z, v)| z.norm_sqr() * v).sum();
        let norm: f64 = field.values.iter().map(|z| z.norm_sqr()).sum();
        (kinetic + potential) / norm
    }

    /// Runs `spec.steps` steps, keeping every `save_every`-th frame (and the
    /// first and last). Aborts when density reaches the grid edge.
    pub fn propagate(&self, psi0: &GridField, save_every: usize) -> Result<Vec<(f64, GridField)>> {
        let save_every = save_every.max(1);
        let mut frames = vec![(0.0, psi0.clone())];
        let mut field = psi0.clone();
        for n in 1..=self.spec.steps {
            self.step(&mut field);
            let edge = field.max_edge_density(&self.spec);
            if edge > BOUNDARY_DENSITY_LIMIT {
                return Err(GwpdError::BoundaryLeak { step: n, density: edge });
            }
            if n % save_every == 0 || n == self.spec.steps {
                frames.push((n as f64 * self.spec.dt, field.clone()));
            }
        }
        Ok(frames)
    }
}

/// Convenience wrapper over [`GridPropagator`].
pub fn grid_propagate(
    psi0: &GridField,
    model: &PotentialModel,
    spec: &GridSpec,
    setup: &PhysicalSetup,
    save_every: usize,
) -> Result<Vec<(f64, GridField)>> {
    GridPropagator::new(model, spec.clone(), setup)?.propagate(psi0, save_every)
}

/// |⟨ψ_grid|ψ_gauss⟩|² for matched frames.
pub fn fidelity(
    gaussians: &[GaussianHeller],
    frames: &[GridField],
    spec: &GridSpec,
    setup: &PhysicalSetup,
) -> Result<Vec<f64>> {
    if gaussians.len() != frames.len() {
        return Err(GwpdError::InvalidArgument("trajectory lengths differ".into()));
    }
    gaussians
        .iter()
        .zip(frames)
        .map(|(g, f)| Ok(f.inner(&sample_gaussian_on_grid(g, spec, setup)?, spec).norm_sqr()))
        .collect()
}

/// Text header (dimensions, bounds, dt, frame count) followed by little-endian
/// (re, im) f64 pairs, one frame after another.
pub fn write_frames<W: Write>(out: &mut W, spec: &GridSpec, frames: &[(f64, GridField)]) -> std::io::Result<()> {
    writeln!(out, "# gwpd grid frames")?;
    writeln!(out, "dims {}", spec.points.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "))?;
    for (k, (lo, hi)) in spec.bounds.iter().enumerate() {
        writeln!(out, "bounds{k} {lo:e} {hi:e}")?;
    }
    writeln!(out, "dt {:e}", spec.dt)?;
    writeln!(out, "times {}", frames.iter().map(|(t, _)| format!("{t:e}")).collect::<Vec<_>>().join(" "))?;
    writeln!(out, "frames {}", frames.len())?;
    writeln!(out, "end")?;
    for (_, f) in frames {
        for z in &f.values {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Exact Hagedorn-form solution for V(q) = (q − c)ᵀK(q − c)/2 after time t.
///
/// (x, p) and (Q, P) follow the same linear flow exp(t[[0, m⁻¹], [−K, 0]]),
/// S gains the classical action (pᵀx)/2 evaluated between the endpoints, and
/// the winding of det Q is tracked on a dense time grid.
pub fn harmonic_exact_hagedorn(
    initial: &GaussianHagedorn,
    hessian: &DMatrix<f64>,
    center: &DVector<f64>,
    setup: &PhysicalSetup,
    t: f64,
) -> Result<GaussianHagedorn> {
    let d = initial.dim();
    if hessian.shape() != (d, d) || center.len() != d || setup.dim() != d {
        return Err(GwpdError::InvalidArgument("harmonic oracle dimension mismatch".into()));
    }
    let mut generator = DMatrix::zeros(2 * d, 2 * d);
    generator.view_mut((0, d), (d, d)).copy_from(setup.inv_mass());
    generator.view_mut((d, 0), (d, d)).copy_from(&(-hessian));
    let flow = |tau: f64| (&generator * tau).exp();
    let apply = |phi: &DMatrix<f64>, upper: &CMatrix, lower: &CMatrix| -> (CMatrix, CMatrix) {
        let stacked = DMatrix::from_fn(2 * d, upper.ncols(), |i, j| if i < d { upper[(i, j)] } else { lower[(i - d, j)] });
        let out = linalg::to_complex(phi) * stacked;
        (out.rows(0, d).into_owned(), out.rows(d, d).into_owned())
    };
    let x0 = linalg::to_complex_vec(&(initial.q() - center));
    let p0 = linalg::to_complex_vec(initial.p());
    let phi = flow(t);
    let (x, p) = apply(&phi, &CMatrix::from_column_slice(d, 1, x0.as_slice()), &CMatrix::from_column_slice(d, 1, p0.as_slice()));
    let x = DVector::from_fn(d, |i, _| x[(i, 0)].re);
    let p = DVector::from_fn(d, |i, _| p[(i, 0)].re);
    let (big_q, big_p) = apply(&phi, initial.big_q(), initial.big_p());
    let omega_max = linalg::sym_eigen(&(setup.inv_mass_sqrt() * hessian * setup.inv_mass_sqrt()))
        .eigenvalues
        .amax()
        .sqrt();
    let samples = ((t.abs() * omega_max * 64.0).ceil() as usize).max(64);
    let mut arg = initial.arg_det_q();
    let mut last = initial.big_q().determinant().arg();
    for k in 1..=samples {
        let (qk, _) = apply(&flow(t * k as f64 / samples as f64), initial.big_q(), initial.big_p());
        let a = qk.determinant().arg();
        let mut jump = a - last;
        jump -= std::f64::consts::TAU * (jump / std::f64::consts::TAU).round();
        arg += jump;
        last = a;
    }
    let principal = big_q.determinant().arg();
    let winding = ((arg - principal) / std::f64::consts::TAU).round() as i64;
    let x_start = initial.q() - center;
    let s = initial.s() + 0.5 * (p.dot(&x) - initial.p().dot(&x_start));
    let q = x + center;
    GaussianHagedorn::new(q, p, big_q, big_p, s).map(|h| h.with_winding(winding))
}

/// Heller-form wrapper of [`harmonic_exact_hagedorn`]; the state must be normalized.
pub fn harmonic_exact_heller(
    initial: &GaussianHeller,
    hessian: &DMatrix<f64>,
    center: &DVector<f64>,
    setup: &PhysicalSetup,
    t: f64,
) -> Result<GaussianHeller> {
    let h = GaussianHagedorn::from_heller(initial, setup)?;
    let shift = initial.gamma().re - h.to_heller(setup)?.gamma().re;
    let evolved = harmonic_exact_hagedorn(&h, hessian, center, setup, t)?.to_heller(setup)?;
    Ok(evolved.with_gamma(evolved.gamma() + shift))
}
