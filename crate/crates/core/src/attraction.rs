//! Ellipsoidal estimates of the region of attraction and their inscribed
//! balls.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::controller::ControllerRealization;
use crate::linalg::min_eigenvalue;
use crate::lmi::{CertificateSolution, TheoremTag};
use crate::quadrature::{derivative, left_derivative, right_derivative};
use crate::spectral::MeasurementMode;
use crate::sturm_liouville::{quadratic_form_a, BoundaryTraces, SpectralBasis};
use crate::{Error, Result};

/// Tolerance on the boundary conditions for the `A^{1/2}` functionals.
pub const DOMAIN_TOLERANCE: f64 = 1e-6;
/// Relative margin standing in for the strict inequality of E3/E4.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllipsoidKind {
    E1,
    E2,
    E3,
    E4,
}

impl EllipsoidKind {
    pub fn for_theorem(tag: TheoremTag) -> Self {
        match tag {
            TheoremTag::Thm1 => Self::E1,
            TheoremTag::Thm2 => Self::E2,
            TheoremTag::Thm3 => Self::E3,
            TheoremTag::Thm4 => Self::E4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::E1 => "E1",
            Self::E2 => "E2",
            Self::E3 => "E3",
            Self::E4 => "E4",
        }
    }

    /// Tail measured in `A^{1/2}` rather than `L²`.
    pub fn uses_energy_tail(self) -> bool {
        self != Self::E1
    }

    pub fn is_strict(self) -> bool {
        matches!(self, Self::E3 | Self::E4)
    }

    fn mode(self) -> MeasurementMode {
        match self {
            Self::E1 | Self::E2 => MeasurementMode::Bounded,
            Self::E3 => MeasurementMode::DirichletLeft,
            Self::E4 => MeasurementMode::NeumannLeft,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractionEllipsoid {
    pub kind: EllipsoidKind,
    pub n0: usize,
    /// `[[P22, P24], [P42, P44]]`.
    pub block: DMatrix<f64>,
    pub gamma: f64,
    pub mu: f64,
    /// Weights on the `N` projection coordinates.
    pub scaling: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub value: f64,
    pub threshold: f64,
    pub inside: bool,
}

impl AttractionEllipsoid {
    pub fn new(
        kind: EllipsoidKind,
        sol: &CertificateSolution,
        realization: &ControllerRealization,
    ) -> Result<Self> {
        if kind.mode() != realization.mode {
            return Err(Error::KindMismatch(format!(
                "{} needs {} sensing, realization has {}",
                kind.name(),
                kind.mode().name(),
                realization.mode.name()
            )));
        }
        if sol.n != realization.n || sol.n0 != realization.n0 {
            return Err(Error::Dimension(
                "certificate and realization orders differ".into(),
            ));
        }
        let mut scaling = alloc::vec![1.0; realization.n0];
        scaling.extend_from_slice(&realization.error_scaling);
        Ok(Self {
            kind,
            n0: sol.n0,
            block: sol.error_block(),
            gamma: sol.gamma,
            mu: sol.mu,
            scaling,
        })
    }

    /// The ellipsoid matching the certificate's theorem.
    pub fn from_certificate(
        sol: &CertificateSolution,
        realization: &ControllerRealization,
    ) -> Result<Self> {
        Self::new(EllipsoidKind::for_theorem(sol.tag), sol, realization)
    }

    pub fn n(&self) -> usize {
        self.block.nrows()
    }

    pub fn threshold(&self) -> f64 {
        1.0 / self.mu
    }

    /// Scaled coordinates `π_N z` and the tail `‖R_N z‖²` or
    /// `‖R_N A^{1/2} z‖²`.
    pub fn coordinates(
        &self,
        z: &[f64],
        dz: Option<&[f64]>,
        basis: &SpectralBasis,
    ) -> Result<(DVector<f64>, f64)> {
        let n = self.n();
        let c = basis.project(z, n)?;
        let tail = if self.kind.uses_energy_tail() {
            energy_tail(z, dz, basis, &c)?
        } else {
            let total = basis.quadrature().norm_sq(z);
            (total - c.iter().map(|v| v * v).sum::<f64>()).max(0.0)
        };
        let xi = DVector::from_fn(n, |i, _| c[i] * self.scaling[i]);
        Ok((xi, tail))
    }

    pub fn membership(
        &self,
        z: &[f64],
        dz: Option<&[f64]>,
        basis: &SpectralBasis,
    ) -> Result<Membership> {
        let (xi, tail) = self.coordinates(z, dz, basis)?;
        let value = xi.dot(&(&self.block * &xi)) + self.gamma * tail;
        let threshold = self.threshold();
        let inside = if self.kind.is_strict() {
            value < threshold * (1.0 - STRICT_MARGIN)
        } else {
            value <= threshold
        };
        Ok(Membership {
            value,
            threshold,
            inside,
        })
    }
}

/// Verifies the boundary conditions of `z` and returns
/// `⟨A z, z⟩ - Σ_{n≤N} λ_n ⟨z, φ_n⟩²`.
fn energy_tail(z: &[f64], dz: Option<&[f64]>, basis: &SpectralBasis, c: &[f64]) -> Result<f64> {
    let grid = basis.grid();
    let h = grid.spacing();
    if z.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "z has {} samples, grid {}",
            z.len(),
            grid.len()
        )));
    }
    let owned;
    let dz = match dz {
        Some(d) => {
            if d.len() != z.len() {
                return Err(Error::Dimension("z and z' lengths differ".into()));
            }
            d
        }
        None => {
            owned = derivative(z, h);
            &owned[..]
        }
    };
    let traces = BoundaryTraces {
        z0: z[0],
        dz0: left_derivative(z, h),
        z1: z[z.len() - 1],
        dz1: right_derivative(z, h),
    };
    check_domain(traces, basis.theta1(), basis.theta2(), z, dz)?;
    let form = quadratic_form_a(z, dz, basis.coefficients(), traces)?;
    let head: f64 = c
        .iter()
        .zip(basis.eigenvalues())
        .map(|(v, l)| l * v * v)
        .sum();
    Ok((form - head).max(0.0))
}

fn check_domain(t: BoundaryTraces, theta1: f64, theta2: f64, z: &[f64], dz: &[f64]) -> Result<()> {
    let scale = z.iter().chain(dz).fold(1.0f64, |m, v| m.max(v.abs()));
    let left = libm::cos(theta1) * t.z0 - libm::sin(theta1) * t.dz0;
    let right = libm::cos(theta2) * t.z1 + libm::sin(theta2) * t.dz1;
    if left.abs() > DOMAIN_TOLERANCE * scale || right.abs() > DOMAIN_TOLERANCE * scale {
        return Err(Error::NotInDomain(format!(
            "boundary residuals {left:.3e} (x = 0) and {right:.3e} (x = 1) exceed {DOMAIN_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// `𝒫 ⪯ (r/μ) R` with `𝒫 = blkdiag([[P22, P24], [P42, P44]], γ)`.
pub fn inscribed_ball_check(
    sol: &CertificateSolution,
    r_matrix: &DMatrix<f64>,
    r: f64,
) -> Result<bool> {
    let shaping = sol.shaping_matrix();
    if r_matrix.shape() != shaping.shape() {
        return Err(Error::Dimension(format!(
            "R is {}x{}, expected {}x{}",
            r_matrix.nrows(),
            r_matrix.ncols(),
            shaping.nrows(),
            shaping.ncols()
        )));
    }
    let gap = r_matrix * (r / sol.mu) - shaping;
    let scale = r_matrix.amax() * r / sol.mu;
    Ok(min_eigenvalue(&gap) >= -1e-12 * scale)
}

/// `ξᵀ R ξ` with `ξ = (scaled π_N z, ‖tail‖)`; inside the ball when `≤ 1/r`.
pub fn ball_form(
    z: &[f64],
    dz: Option<&[f64]>,
    ellipsoid: &AttractionEllipsoid,
    r_matrix: &DMatrix<f64>,
    basis: &SpectralBasis,
) -> Result<f64> {
    let (xi, tail) = ellipsoid.coordinates(z, dz, basis)?;
    let n = xi.len();
    if r_matrix.nrows() != n + 1 {
        return Err(Error::Dimension(format!("R must be {0}x{0}", n + 1)));
    }
    let mut full = DVector::zeros(n + 1);
    full.rows_mut(0, n).copy_from(&xi);
    full[n] = libm::sqrt(tail);
    Ok(full.dot(&(r_matrix * &full)))
}

/// `X(0)` for initial profile `z0` and observer state `observer_ic`
/// (`None` for zero).
pub fn initial_state_embedding(
    z0: &[f64],
    observer_ic: Option<&[f64]>,
    basis: &SpectralBasis,
    realization: &ControllerRealization,
) -> Result<DVector<f64>> {
    let n = realization.n;
    let n0 = realization.n0;
    let c = basis.project(z0, n)?;
    let zero;
    let hat = match observer_ic {
        Some(v) if v.len() != n => {
            return Err(Error::Dimension(format!(
                "observer state has {} entries, expected {n}",
                v.len()
            )))
        }
        Some(v) => v,
        None => {
            zero = alloc::vec![0.0; n];
            &zero[..]
        }
    };
    let mut x = DVector::zeros(2 * n);
    for i in 0..n0 {
        x[i] = hat[i];
        x[n0 + i] = c[i] - hat[i];
    }
    for j in 0..n - n0 {
        x[2 * n0 + j] = hat[n0 + j];
        x[n + n0 + j] = realization.error_scaling[j] * (c[n0 + j] - hat[n0 + j]);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{assemble_closed_loop, Gains};
    use crate::lmi::{minimize_r, solve_feasibility, CertificateProblem, ProblemOptions};
    use crate::sdp::SolverOptions;
    use crate::spectral::fixtures::*;
    use crate::spectral::{project_modes, ModalData, PlantSpec};
    use alloc::vec;

    struct Setup {
        basis: SpectralBasis,
        realization: ControllerRealization,
        sol: CertificateSolution,
    }

    fn setup(tag: TheoremTag) -> Setup {
        let plant: PlantSpec = example_plant(None, 0.0);
        let basis = example_basis(&plant, 12);
        let md: ModalData = project_modes(&basis, &plant).unwrap();
        let gains = Gains {
            k: DMatrix::from_column_slice(2, 1, &[2.59, 3.41]),
            l: DVector::from_element(1, 15.13),
        };
        let realization = assemble_closed_loop(&md, &gains, 1, 4, 11.0, 1.0).unwrap();
        let pr = CertificateProblem::new(
            tag,
            realization.clone(),
            &md,
            &[1.0, 2.0],
            &ProblemOptions::default(),
        )
        .unwrap();
        let sol = solve_feasibility(&pr, &SolverOptions::default())
            .unwrap()
            .solution()
            .unwrap();
        Setup {
            basis,
            realization,
            sol,
        }
    }

    fn z0(basis: &SpectralBasis) -> Vec<f64> {
        basis.grid().sample(|x| 8.5 * x * (1.0 - x))
    }

    #[test]
    fn origin_and_homogeneity() {
        let s = setup(TheoremTag::Thm1);
        let e = AttractionEllipsoid::from_certificate(&s.sol, &s.realization).unwrap();
        let zero = vec![0.0; s.basis.grid().len()];
        let m = e.membership(&zero, None, &s.basis).unwrap();
        assert_eq!(m.value, 0.0);
        assert!(m.inside);
        let z = z0(&s.basis);
        let v1 = e.membership(&z, None, &s.basis).unwrap().value;
        let z3: Vec<f64> = z.iter().map(|v| 3.0 * v).collect();
        let v3 = e.membership(&z3, None, &s.basis).unwrap().value;
        assert!((v3 - 9.0 * v1).abs() < 1e-9 * v3);
    }

    #[test]
    fn membership_matches_lyapunov_at_zero_observer_state() {
        let s = setup(TheoremTag::Thm1);
        let e = AttractionEllipsoid::from_certificate(&s.sol, &s.realization).unwrap();
        let z = z0(&s.basis);
        let x = initial_state_embedding(&z, None, &s.basis, &s.realization).unwrap();
        let n = s.realization.n;
        let tail = s.basis.quadrature().norm_sq(&z)
            - s.basis
                .project(&z, n)
                .unwrap()
                .iter()
                .map(|v| v * v)
                .sum::<f64>();
        let v = x.dot(&(&s.sol.p * &x)) + s.sol.gamma * tail;
        let m = e.membership(&z, None, &s.basis).unwrap();
        assert!((m.value - v).abs() < 1e-10 * v);
    }

    #[test]
    fn embedding_examples() {
        let s = setup(TheoremTag::Thm1);
        let phi1 = s.basis.eigenfunction(0).to_vec();
        let x = initial_state_embedding(&phi1, None, &s.basis, &s.realization).unwrap();
        assert!((x[1] - 1.0).abs() < 1e-10);
        assert!(x
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1)
            .all(|(_, v)| v.abs() < 1e-10));

        let z = z0(&s.basis);
        let hat = s.basis.project(&z, 4).unwrap();
        let x = initial_state_embedding(&z, Some(&hat), &s.basis, &s.realization).unwrap();
        assert!(x[1].abs() < 1e-15 && x.rows(5, 3).amax() < 1e-15);
        assert!((x[0] - hat[0]).abs() < 1e-15);
        assert!(initial_state_embedding(&z, Some(&hat[..3]), &s.basis, &s.realization).is_err());
    }

    #[test]
    fn kind_mismatch_for_trace_ellipsoids() {
        let s = setup(TheoremTag::Thm1);
        assert!(matches!(
            AttractionEllipsoid::new(EllipsoidKind::E3, &s.sol, &s.realization),
            Err(Error::KindMismatch(_))
        ));
    }

    #[test]
    fn energy_tail_requires_domain() {
        let s = setup(TheoremTag::Thm2);
        let e = AttractionEllipsoid::from_certificate(&s.sol, &s.realization).unwrap();
        let off = s.basis.grid().sample(|x| 1.0 + x);
        assert!(matches!(
            e.membership(&off, None, &s.basis),
            Err(Error::NotInDomain(_))
        ));
        let z = z0(&s.basis);
        let exact_dz = s.basis.grid().sample(|x| 8.5 * (1.0 - 2.0 * x));
        let a = e.membership(&z, None, &s.basis).unwrap().value;
        let b = e.membership(&z, Some(&exact_dz), &s.basis).unwrap().value;
        assert!((a - b).abs() < 1e-6 * b);
    }

    #[test]
    fn inscribed_ball_implies_membership() {
        let s = setup(TheoremTag::Thm1);
        let pr_md = {
            let plant = example_plant(None, 0.0);
            project_modes(&s.basis, &plant).unwrap()
        };
        let pr = CertificateProblem::new(
            TheoremTag::Thm1,
            s.realization.clone(),
            &pr_md,
            &[1.0, 2.0],
            &ProblemOptions::default(),
        )
        .unwrap();
        let mut rm = DMatrix::identity(5, 5);
        rm[(4, 4)] = 0.005;
        let shaped = minimize_r(&pr, &s.sol, &rm, 2, &SolverOptions::default()).unwrap();
        let sol = shaped.solution;
        let r = shaped.r;
        assert!(inscribed_ball_check(&sol, &rm, r * (1.0 + 1e-9)).unwrap());
        assert!(!inscribed_ball_check(&sol, &rm, r / 2.0).unwrap());
        assert!(inscribed_ball_check(&sol, &rm, 1e12).unwrap());

        let e = AttractionEllipsoid::from_certificate(&sol, &s.realization).unwrap();
        let grid = s.basis.grid();
        let mut state: u64 = 0x9e3779b97f4a7c15;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut tested = 0;
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..4).map(|_| next()).collect();
            let w = 4.0 + 20.0 * next().abs();
            let amp = next();
            let z: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let x = grid.node(i);
                    let smooth: f64 = a
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * libm::sin((k + 1) as f64 * core::f64::consts::PI * x))
                        .sum();
                    smooth + amp * libm::sin(w * x) * x * (1.0 - x)
                })
                .collect();
            let f = ball_form(&z, None, &e, &rm, &s.basis).unwrap();
            let k = 1.0 / libm::sqrt(r * f);
            let zs: Vec<f64> = z
                .iter()
                .map(|v| v * k * (0.2 + 0.8 * next().abs()))
                .collect();
            assert!(e.membership(&zs, None, &s.basis).unwrap().inside);
            tested += 1;
        }
        assert_eq!(tested, 10_000);
    }
}
