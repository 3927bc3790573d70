//! Eigenpairs of `A f = -(p f')' + q f` on (0, 1) with Robin conditions
//! `cos(t1) f(0) - sin(t1) f'(0) = 0`, `cos(t2) f(1) + sin(t2) f'(1) = 0`.
//!
//! The operator is discretised by a vertex-centred finite-volume scheme,
//! which is the symmetric second-order difference stencil with ghost points
//! at Robin ends. Eigenvalues from the working grid and from every other
//! node of it are combined by Richardson extrapolation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::quadrature::{self, Quadrature, UniformGrid};
use crate::tridiag::SymTridiagonal;
use crate::{Error, Result};

const ANGLE_TOL: f64 = 1e-12;
/// Relative slack of the eigenvalue bound check (discretisation accuracy).
const BOUND_SLACK: f64 = 1e-6;

/// Samples of `p`, `q` and `p'` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    grid: UniformGrid,
    p: Vec<f64>,
    q: Vec<f64>,
    dp: Vec<f64>,
}

impl CoefficientField {
    pub fn constant(grid_size: usize, p: f64, q: f64) -> Result<Self> {
        let grid = UniformGrid::new(grid_size)?;
        Self::from_samples(
            vec![p; grid.len()],
            vec![q; grid.len()],
            Some(vec![0.0; grid.len()]),
        )
    }

    pub fn from_fn(
        grid_size: usize,
        p: impl Fn(f64) -> f64,
        q: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let grid = UniformGrid::new(grid_size)?;
        Self::from_samples(grid.sample(p), grid.sample(q), None)
    }

    /// Builds a field from samples; `p'` is finite-differenced when absent.
    pub fn from_samples(p: Vec<f64>, q: Vec<f64>, dp: Option<Vec<f64>>) -> Result<Self> {
        let grid = UniformGrid::new(p.len())?;
        if q.len() != p.len() || dp.as_ref().is_some_and(|d| d.len() != p.len()) {
            return Err(Error::Dimension(format!(
                "coefficient samples differ in length (p: {}, q: {})",
                p.len(),
                q.len()
            )));
        }
        if let Some((i, v)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidCoefficients(format!(
                "p must be positive, p[{i}] = {v}"
            )));
        }
        if let Some((i, v)) = q
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidCoefficients(format!(
                "q must be nonnegative, q[{i}] = {v}"
            )));
        }
        let dp = dp.unwrap_or_else(|| quadrature::derivative(&p, grid.spacing()));
        Ok(Self { grid, p, q, dp })
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn dp(&self) -> &[f64] {
        &self.dp
    }

    /// `p_*`, the infimum of `p`.
    pub fn p_min(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `p^*`, the supremum of `p`.
    pub fn p_max(&self) -> f64 {
        self.p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn q_min(&self) -> f64 {
        self.q.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `q^*`, the supremum of `q`.
    pub fn q_max(&self) -> f64 {
        self.q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linear interpolation onto another uniform grid.
    pub fn resampled(&self, grid_size: usize) -> Result<Self> {
        if grid_size == self.grid.len() {
            return Ok(self.clone());
        }
        let target = UniformGrid::new(grid_size)?;
        let interp = |v: &[f64]| target.sample(|x| interpolate(v, x));
        Self::from_samples(interp(&self.p), interp(&self.q), Some(interp(&self.dp)))
    }

    fn every_other(&self) -> Option<Self> {
        let grid = self.grid.coarsened()?;
        let pick = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<_>>();
        Some(Self {
            grid,
            p: pick(&self.p),
            q: pick(&self.q),
            dp: pick(&self.dp),
        })
    }
}

fn interpolate(v: &[f64], x: f64) -> f64 {
    let n = v.len();
    let s = x.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (s as usize).min(n - 2);
    let t = s - i as f64;
    v[i] * (1.0 - t) + v[i + 1] * t
}

/// Boundary row type selected by a Robin angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    /// Robin with `f' = cot(theta) f` (outward sign folded in by the caller).
    Robin(f64),
}

impl BoundaryKind {
    pub fn from_angle(theta: f64) -> Result<Self> {
        if !(-ANGLE_TOL..=FRAC_PI_2 + ANGLE_TOL).contains(&theta) {
            return Err(Error::InvalidInput(format!(
                "boundary angle {theta} outside [0, pi/2]"
            )));
        }
        Ok(if theta.abs() <= ANGLE_TOL {
            Self::Dirichlet
        } else if (theta - FRAC_PI_2).abs() <= ANGLE_TOL {
            Self::Neumann
        } else {
            Self::Robin(libm::cos(theta) / libm::sin(theta))
        })
    }

    fn cot(self) -> f64 {
        match self {
            Self::Robin(c) => c,
            _ => 0.0,
        }
    }
}

/// Stored content of a [`SpectralBasis`].
#[derive(Debug, Clone)]
pub struct BasisParts {
    pub theta1: f64,
    pub theta2: f64,
    pub coefficients: CoefficientField,
    pub eigenvalues: Vec<f64>,
    pub raw_eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub max_residual: f64,
}

/// Eigenvalues, L²-normalised eigenfunctions and their traces at `x = 0`.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    theta1: f64,
    theta2: f64,
    coeffs: CoefficientField,
    quadrature: Quadrature,
    eigenvalues: Vec<f64>,
    raw_eigenvalues: Vec<f64>,
    extrapolated: bool,
    eigenfunctions: Vec<Vec<f64>>,
    phi_at_0: Vec<f64>,
    dphi_at_0: Vec<f64>,
    max_residual: f64,
}

impl SpectralBasis {
    pub fn theta1(&self) -> f64 {
        self.theta1
    }

    pub fn theta2(&self) -> f64 {
        self.theta2
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coeffs
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }

    pub fn grid(&self) -> UniformGrid {
        self.coeffs.grid()
    }

    pub fn n_max(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues `λ_1 < λ_2 < ...`; entry `n - 1` belongs to mode `n`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalues of the working grid before extrapolation.
    pub fn raw_eigenvalues(&self) -> &[f64] {
        &self.raw_eigenvalues
    }

    pub fn is_extrapolated(&self) -> bool {
        self.extrapolated
    }

    pub fn eigenfunction(&self, index: usize) -> &[f64] {
        &self.eigenfunctions[index]
    }

    pub fn eigenfunctions(&self) -> &[Vec<f64>] {
        &self.eigenfunctions
    }

    pub fn phi_at_0(&self) -> &[f64] {
        &self.phi_at_0
    }

    pub fn dphi_at_0(&self) -> &[f64] {
        &self.dphi_at_0
    }

    /// Largest relative residual of the discrete eigenpairs.
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// `⟨f, φ_n⟩` for the first `count` modes.
    pub fn project(&self, f: &[f64], count: usize) -> Result<Vec<f64>> {
        self.quadrature.check_len(f)?;
        if count > self.n_max() {
            return Err(Error::OutOfRange(format!(
                "{count} modes requested, {} computed",
                self.n_max()
            )));
        }
        Ok(self.eigenfunctions[..count]
            .iter()
            .map(|phi| self.quadrature.inner(f, phi))
            .collect())
    }

    /// Grid function `Σ a_n φ_n`.
    pub fn synthesize(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid().len()];
        for (a, phi) in coefficients.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += a * p;
            }
        }
        out
    }

    /// Reassembles a basis from stored eigenpairs, e.g. one read back from
    /// disk. Traces at `x = 0` are recomputed from the eigenfunctions.
    pub fn from_parts(parts: BasisParts) -> Result<Self> {
        let BasisParts {
            theta1,
            theta2,
            coefficients,
            eigenvalues,
            raw_eigenvalues,
            eigenfunctions,
            max_residual,
        } = parts;
        let grid = coefficients.grid();
        let n = eigenvalues.len();
        if n == 0 || raw_eigenvalues.len() != n || eigenfunctions.len() != n {
            return Err(Error::Dimension(format!(
                "{n} eigenvalues, {} raw eigenvalues, {} eigenfunctions",
                raw_eigenvalues.len(),
                eigenfunctions.len()
            )));
        }
        if eigenfunctions.iter().any(|f| f.len() != grid.len()) {
            return Err(Error::Dimension(
                "eigenfunction length differs from the grid".into(),
            ));
        }
        let left = BoundaryKind::from_angle(theta1)?;
        BoundaryKind::from_angle(theta2)?;
        let h = grid.spacing();
        let phi_at_0 = eigenfunctions.iter().map(|f| f[0]).collect();
        let dphi_at_0 = eigenfunctions
            .iter()
            .map(|f| match left {
                BoundaryKind::Dirichlet => quadrature::left_derivative(f, h),
                kind => kind.cot() * f[0],
            })
            .collect();
        let extrapolated = eigenvalues != raw_eigenvalues;
        Ok(Self {
            theta1,
            theta2,
            quadrature: Quadrature::simpson(grid),
            coeffs: coefficients,
            eigenvalues,
            raw_eigenvalues,
            extrapolated,
            eigenfunctions,
            phi_at_0,
            dphi_at_0,
            max_residual,
        })
    }

    /// Copy with one eigenvalue replaced, for exercising validation paths.
    pub fn with_eigenvalue(&self, index: usize, value: f64) -> Self {
        let mut b = self.clone();
        b.eigenvalues[index] = value;
        b
    }
}

/// Computes the `n_max` lowest eigenpairs on a grid of `grid_size` points.
///
/// Coefficients sampled on a different grid are linearly interpolated.
pub fn solve_eigenproblem(
    coeffs: &CoefficientField,
    theta1: f64,
    theta2: f64,
    n_max: usize,
    grid_size: usize,
) -> Result<SpectralBasis> {
    if n_max == 0 {
        return Err(Error::InvalidInput("n_max must be at least 1".into()));
    }
    if grid_size < 40 * n_max {
        return Err(Error::InvalidInput(format!(
            "grid_size {grid_size} is below 40 * n_max = {}",
            40 * n_max
        )));
    }
    let left = BoundaryKind::from_angle(theta1)?;
    let right = BoundaryKind::from_angle(theta2)?;
    let coeffs = coeffs.resampled(grid_size)?;
    let grid = coeffs.grid();
    let h = grid.spacing();

    let (matrix, weights, offset) = assemble(&coeffs, left, right);
    let raw = matrix.lowest_eigenvalues(n_max)?;
    let eigenvalues = match coeffs.every_other() {
        Some(coarse) => {
            let (cm, _, _) = assemble(&coarse, left, right);
            let craw = cm.lowest_eigenvalues(n_max)?;
            raw.iter()
                .zip(&craw)
                .map(|(f, c)| (4.0 * f - c) / 3.0)
                .collect()
        }
        None => raw.clone(),
    };
    if let Some(i) = (1..n_max).find(|&i| eigenvalues[i] <= eigenvalues[i - 1]) {
        return Err(Error::NumericalFailure(format!(
            "eigenvalues {i} and {} are not strictly increasing",
            i + 1
        )));
    }

    let quadrature = Quadrature::simpson(grid);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n_max);
    let mut eigenfunctions = Vec::with_capacity(n_max);
    let mut phi_at_0 = Vec::with_capacity(n_max);
    let mut dphi_at_0 = Vec::with_capacity(n_max);
    let mut max_residual: f64 = 0.0;
    for &lambda in &raw {
        let (v, residual) = matrix.eigenvector(lambda, &vectors)?;
        max_residual = max_residual.max(residual);
        let mut f = vec![0.0; grid.len()];
        for (k, (vk, wk)) in v.iter().zip(&weights).enumerate() {
            f[k + offset] = vk / libm::sqrt(*wk);
        }
        vectors.push(v);
        let norm = libm::sqrt(quadrature.norm_sq(&f));
        let slope = match left {
            BoundaryKind::Dirichlet => quadrature::left_derivative(&f, h),
            kind => kind.cot() * f[0],
        };
        let sign_ref = match left {
            BoundaryKind::Dirichlet => slope,
            _ => f[0],
        };
        let scale = if sign_ref < 0.0 {
            -1.0 / norm
        } else {
            1.0 / norm
        };
        for x in &mut f {
            *x *= scale;
        }
        phi_at_0.push(f[0]);
        dphi_at_0.push(slope * scale);
        eigenfunctions.push(f);
    }

    Ok(SpectralBasis {
        theta1,
        theta2,
        extrapolated: eigenvalues != raw,
        coeffs,
        quadrature,
        eigenvalues,
        raw_eigenvalues: raw,
        eigenfunctions,
        phi_at_0,
        dphi_at_0,
        max_residual,
    })
}

/// Symmetrised finite-volume matrix `W^{-1/2} K W^{-1/2}`, the cell widths
/// `W` of the unknowns, and the grid index of the first unknown.
fn assemble(
    coeffs: &CoefficientField,
    left: BoundaryKind,
    right: BoundaryKind,
) -> (SymTridiagonal, Vec<f64>, usize) {
    let n = coeffs.grid().len();
    let h = coeffs.grid().spacing();
    let p = coeffs.p();
    let q = coeffs.q();
    let pm = |i: usize| 0.5 * (p[i] + p[i + 1]);
    let first = usize::from(left == BoundaryKind::Dirichlet);
    let last = if right == BoundaryKind::Dirichlet {
        n - 2
    } else {
        n - 1
    };
    let mut diag = Vec::with_capacity(last - first + 1);
    let mut width = Vec::with_capacity(last - first + 1);
    for i in first..=last {
        let (k, w) = if i == 0 {
            (pm(0) / h + p[0] * left.cot() + 0.5 * h * q[0], 0.5 * h)
        } else if i == n - 1 {
            (
                pm(n - 2) / h + p[n - 1] * right.cot() + 0.5 * h * q[n - 1],
                0.5 * h,
            )
        } else {
            ((pm(i - 1) + pm(i)) / h + h * q[i], h)
        };
        diag.push(k / w);
        width.push(w);
    }
    let off = (first..last)
        .enumerate()
        .map(|(k, i)| -pm(i) / h / libm::sqrt(width[k] * width[k + 1]))
        .collect();
    (SymTridiagonal::new(diag, off), width, first)
}

/// True iff every eigenvalue lies in `[π²(n-1)² p_*, π² n² p^* + q^*]`.
pub fn check_eigenvalue_bounds(basis: &SpectralBasis, p_star: f64, p_sup: f64, q_sup: f64) -> bool {
    basis.eigenvalues().iter().enumerate().all(|(i, &l)| {
        let (lo, hi) = eigenvalue_bounds(i + 1, p_star, p_sup, q_sup);
        l >= lo - BOUND_SLACK * (1.0 + lo) && l <= hi + BOUND_SLACK * (1.0 + hi)
    })
}

/// The interval `[π²(n-1)² p_*, π² n² p^* + q^*]` for mode `n`.
pub fn eigenvalue_bounds(n: usize, p_star: f64, p_sup: f64, q_sup: f64) -> (f64, f64) {
    let k = (n - 1) as f64;
    let n = n as f64;
    (PI * PI * k * k * p_star, PI * PI * n * n * p_sup + q_sup)
}

/// Values `z(0), z'(0), z(1), z'(1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryTraces {
    pub z0: f64,
    pub dz0: f64,
    pub z1: f64,
    pub dz1: f64,
}

impl BoundaryTraces {
    pub fn from_samples(z: &[f64], dz: &[f64]) -> Self {
        Self {
            z0: z[0],
            dz0: dz[0],
            z1: z[z.len() - 1],
            dz1: dz[dz.len() - 1],
        }
    }
}

/// `⟨A z, z⟩ = p(0) z(0) z'(0) - p(1) z(1) z'(1) + ∫ p z'² + q z²`.
pub fn quadratic_form_a(
    z: &[f64],
    dz: &[f64],
    coeffs: &CoefficientField,
    traces: BoundaryTraces,
) -> Result<f64> {
    let n = coeffs.grid().len();
    if z.len() != n || dz.len() != n {
        return Err(Error::Dimension(format!(
            "z has {} and z' has {} samples, coefficients have {n}",
            z.len(),
            dz.len()
        )));
    }
    let quad = Quadrature::simpson(coeffs.grid());
    let integrand: Vec<f64> = (0..n)
        .map(|i| coeffs.p()[i] * dz[i] * dz[i] + coeffs.q()[i] * z[i] * z[i])
        .collect();
    let p = coeffs.p();
    Ok(
        p[0] * traces.z0 * traces.dz0 - p[n - 1] * traces.z1 * traces.dz1
            + quad.integrate(&integrand),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dirichlet(n_max: usize, grid: usize) -> SpectralBasis {
        let c = CoefficientField::constant(grid, 1.0, 1.0).unwrap();
        solve_eigenproblem(&c, 0.0, 0.0, n_max, grid).unwrap()
    }

    #[test]
    fn basis_round_trips_through_parts() {
        let c =
            CoefficientField::from_fn(801, |x| 1.0 + 0.5 * x, |x| 1.0 + libm::sin(PI * x)).unwrap();
        let b = solve_eigenproblem(&c, 0.4, 0.0, 8, 801).unwrap();
        let r = SpectralBasis::from_parts(BasisParts {
            theta1: b.theta1(),
            theta2: b.theta2(),
            coefficients: b.coefficients().clone(),
            eigenvalues: b.eigenvalues().to_vec(),
            raw_eigenvalues: b.raw_eigenvalues().to_vec(),
            eigenfunctions: b.eigenfunctions().to_vec(),
            max_residual: b.max_residual(),
        })
        .unwrap();
        assert_eq!(r.phi_at_0(), b.phi_at_0());
        for (a, e) in r.dphi_at_0().iter().zip(b.dphi_at_0()) {
            assert_relative_eq!(*a, *e, max_relative = 1e-14);
        }
        assert_eq!(r.is_extrapolated(), b.is_extrapolated());
    }

    #[test]
    fn dirichlet_closed_form() {
        let b = dirichlet(10, 2001);
        for n in 1..=10 {
            let exact = (n as f64 * PI).powi(2) + 1.0;
            assert_relative_eq!(b.eigenvalues()[n - 1], exact, max_relative = 1e-6);
        }
        let g = b.grid();
        let phi1 = b.eigenfunction(0);
        for i in (0..g.len()).step_by(97) {
            let exact = core::f64::consts::SQRT_2 * libm::sin(PI * g.node(i));
            assert!((phi1[i] - exact).abs() < 1e-5);
        }
        assert_relative_eq!(
            b.dphi_at_0()[0],
            core::f64::consts::SQRT_2 * PI,
            max_relative = 1e-5
        );
    }

    #[test]
    fn neumann_kernel_is_constant() {
        let c = CoefficientField::constant(401, 1.0, 0.0).unwrap();
        let b = solve_eigenproblem(&c, FRAC_PI_2, FRAC_PI_2, 5, 401).unwrap();
        assert!(b.eigenvalues()[0].abs() < 1e-8);
        assert!(b.eigenfunction(0).iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(check_eigenvalue_bounds(&b, 1.0, 1.0, 0.0));
        assert_relative_eq!(b.eigenvalues()[1], PI * PI, max_relative = 1e-6);
    }

    #[test]
    fn raw_scheme_is_second_order() {
        let coarse = dirichlet(5, 1001);
        let fine = dirichlet(5, 2001);
        for n in 1..=5 {
            let exact = (n as f64 * PI).powi(2) + 1.0;
            let ec = (coarse.raw_eigenvalues()[n - 1] - exact).abs();
            let ef = (fine.raw_eigenvalues()[n - 1] - exact).abs();
            assert!((ec / ef - 4.0).abs() < 0.05, "n={n} ratio {}", ec / ef);
        }
    }

    #[test]
    fn robin_eigenvalues_match_transcendental_equation() {
        // Left Robin angle pi/4 (f' = f), right Dirichlet, p = 1, q = 0:
        // f = sin(k x) + k cos(k x) with tan(k) = -k.
        let c = CoefficientField::constant(2401, 1.0, 0.0).unwrap();
        let b = solve_eigenproblem(&c, PI / 4.0, 0.0, 3, 2401).unwrap();
        for n in 0..3 {
            let mut lo = (n as f64 + 0.5) * PI + 1e-9;
            let mut hi = (n as f64 + 1.0) * PI;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if libm::tan(mid) + mid > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let k = 0.5 * (lo + hi);
            assert_relative_eq!(b.eigenvalues()[n], k * k, max_relative = 1e-7);
            assert_relative_eq!(b.dphi_at_0()[n], b.phi_at_0()[n], max_relative = 1e-12);
        }
    }

    #[test]
    fn orthonormal_under_simpson() {
        let c = CoefficientField::from_fn(2401, |x| 1.0 + 0.5 * x, |x| 1.0 + libm::sin(PI * x))
            .unwrap();
        let b = solve_eigenproblem(&c, 0.3, 1.1, 60, 2401).unwrap();
        let q = b.quadrature();
        for i in 0..60 {
            for j in 0..=i {
                let d = q.inner(b.eigenfunction(i), b.eigenfunction(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-6, "({i},{j}) = {d}");
            }
        }
        assert!(b.max_residual() < 1e-9);
    }

    #[test]
    fn bounds_detect_perturbation() {
        let b = dirichlet(10, 2001);
        assert!(check_eigenvalue_bounds(&b, 1.0, 1.0, 1.0));
        let low = eigenvalue_bounds(4, 1.0, 1.0, 1.0).0;
        assert!(!check_eigenvalue_bounds(
            &b.with_eigenvalue(3, 0.9 * low),
            1.0,
            1.0,
            1.0
        ));
    }

    #[test]
    fn grid_guard_and_invalid_p() {
        let c = CoefficientField::constant(101, 1.0, 1.0).unwrap();
        assert!(matches!(
            solve_eigenproblem(&c, 0.0, 0.0, 10, 101),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            CoefficientField::from_samples(vec![1.0, 1.0, 0.0, 1.0, 1.0], vec![0.0; 5], None),
            Err(Error::InvalidCoefficients(_))
        ));
    }

    #[test]
    fn quadratic_form_of_first_mode_is_lambda1() {
        let b = dirichlet(5, 2001);
        let phi = b.eigenfunction(0);
        let dphi = quadrature::derivative(phi, b.grid().spacing());
        let v = quadratic_form_a(
            phi,
            &dphi,
            b.coefficients(),
            BoundaryTraces::from_samples(phi, &dphi),
        )
        .unwrap();
        assert_relative_eq!(v, PI * PI + 1.0, max_relative = 1e-5);
        let zero = vec![0.0; 2001];
        let t = BoundaryTraces::from_samples(&zero, &zero);
        assert_eq!(
            quadratic_form_a(&zero, &zero, b.coefficients(), t).unwrap(),
            0.0
        );
        assert!(matches!(
            quadratic_form_a(&zero[..10], &zero[..10], b.coefficients(), t),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn quadratic_form_matches_modal_sum() {
        let g = UniformGrid::new(2001).unwrap();
        let z = g.sample(|x| 8.5 * x * (1.0 - x));
        let dz = g.sample(|x| 8.5 * (1.0 - 2.0 * x));
        let c = CoefficientField::constant(2001, 1.0, 1.0).unwrap();
        let direct = quadratic_form_a(&z, &dz, &c, BoundaryTraces::from_samples(&z, &dz)).unwrap();
        // Modal oracle from the closed-form sine coefficients.
        let modal: f64 = (1..=200)
            .map(|n| {
                let nf = n as f64;
                let a = 8.5 * core::f64::consts::SQRT_2 * 2.0 * (1.0 - libm::cos(nf * PI))
                    / (nf * PI).powi(3);
                ((nf * PI).powi(2) + 1.0) * a * a
            })
            .sum();
        assert_relative_eq!(direct, modal, max_relative = 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn bounds_hold_for_smooth_coefficients(a in 0.0f64..1.0, b in 0.0f64..2.0, t1 in 0.0f64..FRAC_PI_2, t2 in 0.0f64..FRAC_PI_2) {
            let c = CoefficientField::from_fn(801, |x| 1.0 + a * x, |x| b * (1.0 + libm::sin(PI * x))).unwrap();
            let basis = solve_eigenproblem(&c, t1, t2, 20, 801).unwrap();
            prop_assert!(check_eigenvalue_bounds(&basis, c.p_min(), c.p_max(), c.q_max()));
            for n in 0..20 {
                let s = libm::sqrt(basis.eigenvalues()[n].max(1.0));
                prop_assert!(basis.phi_at_0()[n].abs() < 3.0);
                prop_assert!(basis.dphi_at_0()[n].abs() / s < 3.0);
            }
        }
    }
}
