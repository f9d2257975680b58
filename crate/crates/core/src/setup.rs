use nalgebra::{DMatrix, DVector};

use crate::error::{GwpdError, Result};
use crate::linalg;

/// Dimension, reduced Planck constant, and mass matrix of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalSetup {
    dim: usize,
    hbar: f64,
    mass: DMatrix<f64>,
    inv_mass: DMatrix<f64>,
    inv_mass_sqrt: DMatrix<f64>,
}

impl PhysicalSetup {
    pub fn new(hbar: f64, mass: DMatrix<f64>) -> Result<Self> {
        let dim = mass.nrows();
        if dim == 0 || mass.ncols() != dim {
            return Err(GwpdError::InvalidSetup("mass matrix must be square and non-empty".into()));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(GwpdError::InvalidSetup(format!("hbar must be positive, got {hbar}")));
        }
        let scale = linalg::max_abs(&mass);
        if linalg::max_abs(&(&mass - mass.transpose())) > 1e-12 * scale {
            return Err(GwpdError::InvalidSetup("mass matrix is not symmetric".into()));
        }
        let mass = linalg::symmetrize(&mass);
        if !linalg::is_positive_definite(&mass) {
            return Err(GwpdError::InvalidSetup("mass matrix is not positive definite".into()));
        }
        let inv_mass = linalg::symmetrize(&linalg::inverse(&mass, "mass matrix")?);
        let inv_mass_sqrt = linalg::sym_sqrt(&inv_mass);
        Ok(Self { dim, hbar, mass, inv_mass, inv_mass_sqrt })
    }

    /// ħ = 1 and identity mass.
    pub fn unit(dim: usize) -> Self {
        Self::new(1.0, DMatrix::identity(dim, dim)).expect("identity mass is valid")
    }

    /// Scalar mass times identity.
    pub fn isotropic(dim: usize, hbar: f64, mass: f64) -> Result<Self> {
        Self::new(hbar, DMatrix::from_diagonal_element(dim, dim, mass))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn inv_mass(&self) -> &DMatrix<f64> {
        &self.inv_mass
    }

    /// m^{-1/2}, the symmetric square root of the inverse mass.
    pub fn inv_mass_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_mass_sqrt
    }

    /// Classical kinetic energy pᵀ·m⁻¹·p/2.
    pub fn kinetic_energy(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(&self.inv_mass * p))
    }
}
