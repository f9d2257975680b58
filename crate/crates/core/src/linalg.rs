//! Small dense linear-algebra helpers shared by the state, method, and
//! diagnostic modules. Dimensions are tiny (D ≤ 3 in practice), so everything
//! works on dynamically sized nalgebra matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{GwpdError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Smallest admissible eigenvalue (relative to the largest) for positive definiteness.
pub const PD_TOLERANCE: f64 = 1e-12;

pub fn complexify(re: &DMatrix<f64>, im: &DMatrix<f64>) -> CMatrix {
    assert_eq!(re.shape(), im.shape());
    DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
        Complex64::new(re[(i, j)], im[(i, j)])
    })
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn to_complex_vec(v: &DVector<f64>) -> CVector {
    v.map(|x| Complex64::new(x, 0.0))
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn imag_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.im)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_complex(m: &CMatrix) -> CMatrix {
    (m + m.transpose()) * Complex64::new(0.5, 0.0)
}

/// Largest absolute entry; used as the norm in tolerance checks.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_complex(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Symmetric eigen-decomposition; the input is symmetrized first.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let eig = sym_eigen(m);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let min = eig.eigenvalues.min();
    min > PD_TOLERANCE * max.max(1.0) && min > 0.0
}

pub fn require_positive_definite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if is_positive_definite(m) {
        Ok(())
    } else {
        Err(GwpdError::InvalidState(format!("{what} is not positive definite")))
    }
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let u = &eig.eigenvectors;
    symmetrize(&(u * d * u.transpose()))
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_function(m, f64::sqrt)
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_function(m, |x| 1.0 / x.sqrt())
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|x| x.is_finite()))
        .ok_or_else(|| GwpdError::Singular(what.to_string()))
}

pub fn inverse_complex(m: &CMatrix, what: &str) -> Result<CMatrix> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|z| z.is_finite()))
        .ok_or_else(|| GwpdError::Singular(what.to_string()))
}

/// Continuous logarithm of det(X + iY) for real symmetric X and a definite
/// real symmetric Y (either sign).
///
/// With Y = ±L², det(X + iY) = det(±Y) · Π(ν_k ± i), where ν_k are the
/// eigenvalues of L⁻¹XL⁻¹. Each factor ν_k ± i stays strictly inside one
/// half plane, so the sum of principal logarithms is the branch obtained by
/// continuation along any path on which Y stays definite.
pub fn ln_det_definite_imag(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Complex64> {
    let sign = if is_positive_definite(y) {
        1.0
    } else if is_positive_definite(&(-y)) {
        -1.0
    } else {
        return Err(GwpdError::InvalidArgument(
            "imaginary part is not definite".into(),
        ));
    };
    let y_abs = y * sign;
    let eig_y = sym_eigen(&y_abs);
    let ln_det_y: f64 = eig_y.eigenvalues.iter().map(|v| v.ln()).sum();
    let l_inv = sym_inv_sqrt(&y_abs);
    let reduced = &l_inv * x * &l_inv;
    let nus = sym_eigen(&reduced).eigenvalues;
    let mut total = Complex64::new(ln_det_y, 0.0);
    for nu in nus.iter() {
        total += Complex64::new(*nu, sign).ln();
    }
    Ok(total)
}

pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}
