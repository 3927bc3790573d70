//! Dense helpers: spectra of nonsymmetric matrices and the algebraic Riccati
//! equation.

use alloc::format;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Largest real part of the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm.
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Stabilising solution of `AᵀX + XA - X B R⁻¹ Bᵀ X + Q = 0` via the
/// matrix sign function of the Hamiltonian.
pub fn care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("Riccati input weight is singular".into()))?;
    let g = b * r_inv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu.try_inverse().ok_or_else(|| {
            Error::NumericalFailure("Hamiltonian has eigenvalues on the imaginary axis".into())
        })?;
        let c = libm::pow(det.abs(), 1.0 / (2 * n) as f64);
        let c = if c.is_finite() && c > 0.0 { c } else { 1.0 };
        let next = (&z / c + inv * c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(
            "matrix sign iteration did not converge".into(),
        ));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n))
        .copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(z.view((n, n), (n, n)) + &id));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(z.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-z.view((n, 0), (n, n))));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::NumericalFailure(format!("Riccati extraction failed: {e}")))?;
    let x = symmetrize(&x);
    let residual = a.transpose() * &x + &x * a - &x * &g * &x + q;
    let scale = 1.0 + x.norm() * (1.0 + a.norm()) + q.norm();
    if residual.norm() > 1e-8 * scale {
        return Err(Error::NumericalFailure(format!(
            "Riccati residual {:e} too large",
            residual.norm()
        )));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_care_closed_form() {
        // 2 a x - x² b² / r + q = 0
        let (a, b, q, r) = (0.3, 0.7, 2.0, 0.5);
        let x = care(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, b),
            &DMatrix::from_element(1, 1, q),
            &DMatrix::from_element(1, 1, r),
        )
        .unwrap()[(0, 0)];
        let s = b * b / r;
        let exact = (a + libm::sqrt(a * a + s * q)) / s;
        assert!((x - exact).abs() < 1e-12);
    }

    #[test]
    fn care_solution_is_stabilising() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.5, 1.0, -1.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.3, 1.0]);
        let x = care(&a, &b, &DMatrix::identity(3, 3), &DMatrix::identity(2, 2)).unwrap();
        let k = -(b.transpose() * &x);
        assert!(spectral_abscissa(&(a + b * k)) < 0.0);
        assert!(min_eigenvalue(&x) > 0.0);
    }

    #[test]
    fn abscissa_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 3.0, -3.0, -0.5]);
        assert!((spectral_abscissa(&a) + 0.5).abs() < 1e-12);
    }
}
