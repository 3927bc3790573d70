//! Plant description, modal projections, residual norms and tail constants.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;

use crate::quadrature::{self, Quadrature, UniformGrid};
use crate::sturm_liouville::{CoefficientField, SpectralBasis};
use crate::{Error, Result};

/// Default exponent for the Neumann-trace tail constant.
pub const DEFAULT_EPSILON: f64 = 0.125;

/// A grid function together with its squared L² norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    values: Vec<f64>,
    norm_sq: f64,
}

impl Profile {
    /// Arbitrary samples; the norm is taken with Simpson's rule.
    pub fn sampled(values: Vec<f64>) -> Result<Self> {
        let q = Quadrature::simpson(UniformGrid::new(values.len())?);
        let norm_sq = q.norm_sq(&values);
        Ok(Self { values, norm_sq })
    }

    /// `amplitude(x)` on `[lo, hi]`, zero elsewhere. A jump that falls on a
    /// node is sampled with half its value; the norm is integrated
    /// independently of the grid.
    pub fn indicator(
        grid: UniformGrid,
        lo: f64,
        hi: f64,
        amplitude: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidInput(format!(
                "indicator interval [{lo}, {hi}] is not a subinterval of [0, 1]"
            )));
        }
        let tol = 1e-9 * grid.spacing();
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                let on_edge =
                    ((x - lo).abs() <= tol && lo > 0.0) || ((x - hi).abs() <= tol && hi < 1.0);
                if on_edge {
                    0.5 * amplitude(x)
                } else if x > lo - tol && x < hi + tol {
                    amplitude(x)
                } else {
                    0.0
                }
            })
            .collect();
        let norm_sq = quadrature::gauss_legendre(|x| amplitude(x) * amplitude(x), lo, hi, 64);
        Ok(Self { values, norm_sq })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }
}

/// What the controller measures.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensor {
    /// `y = ⟨c, z⟩` with a bounded shape function `c`.
    Distributed(Profile),
    /// `y = z(t, 0)`.
    DirichletLeft,
    /// `y = ∂_x z(t, 0)`.
    NeumannLeft,
}

impl Sensor {
    pub fn mode(&self) -> MeasurementMode {
        match self {
            Self::Distributed(_) => MeasurementMode::Bounded,
            Self::DirichletLeft => MeasurementMode::DirichletLeft,
            Self::NeumannLeft => MeasurementMode::NeumannLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementMode {
    Bounded,
    DirichletLeft,
    NeumannLeft,
}

impl MeasurementMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bounded => "bounded",
            Self::DirichletLeft => "dirichlet-left",
            Self::NeumannLeft => "neumann-left",
        }
    }

    /// Weight applied to the `n`-th error coordinate beyond `N0`.
    pub fn scaling(self, lambda: f64) -> f64 {
        match self {
            Self::Bounded => 1.0,
            Self::DirichletLeft => libm::sqrt(lambda),
            Self::NeumannLeft => lambda,
        }
    }
}

/// Reaction-diffusion plant `z_t = (p z_x)_x - q̃ z + Σ b_k sat(u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub diffusion: Vec<f64>,
    /// Original reaction samples `q̃` (may be negative).
    pub reaction: Vec<f64>,
    pub theta1: f64,
    pub theta2: f64,
    pub q_c: f64,
    pub actuators: Vec<Profile>,
    pub sensor: Sensor,
    pub levels: Vec<f64>,
}

impl PlantSpec {
    /// Shift making `q = q̃ + q_c` nonnegative with the given margin.
    pub fn default_qc(reaction: &[f64], margin: f64) -> f64 {
        -reaction.iter().copied().fold(f64::INFINITY, f64::min) + margin
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.diffusion.len();
        if self.reaction.len() != n
            || self.actuators.iter().any(|b| b.values().len() != n)
            || matches!(&self.sensor, Sensor::Distributed(c) if c.values().len() != n)
        {
            return Err(Error::Dimension(
                "plant grid functions have inconsistent lengths".into(),
            ));
        }
        if self.actuators.is_empty() {
            return Err(Error::InvalidInput(
                "at least one actuator is required".into(),
            ));
        }
        if self.levels.len() != self.actuators.len() {
            return Err(Error::Dimension(format!(
                "{} saturation levels for {} actuators",
                self.levels.len(),
                self.actuators.len()
            )));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "saturation level {l} is not positive"
            )));
        }
        let min_q = self.shifted_reaction_min();
        if min_q < 0.0 {
            return Err(Error::InvalidCoefficients(format!(
                "q = q̃ + q_c has minimum {min_q} < 0; increase q_c"
            )));
        }
        match self.sensor {
            Sensor::DirichletLeft if self.theta1.abs() <= 1e-12 => Err(Error::InvalidSensor(
                "dirichlet-left sensing needs theta1 in (0, pi/2]".into(),
            )),
            Sensor::NeumannLeft if (self.theta1 - FRAC_PI_2).abs() <= 1e-12 => Err(
                Error::InvalidSensor("neumann-left sensing needs theta1 in [0, pi/2)".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn shifted_reaction_min(&self) -> f64 {
        self.reaction
            .iter()
            .map(|r| r + self.q_c)
            .fold(f64::INFINITY, f64::min)
    }

    /// Coefficients `(p, q̃ + q_c)` of the shifted operator.
    pub fn operator_coefficients(&self) -> Result<CoefficientField> {
        let q = self.reaction.iter().map(|r| r + self.q_c).collect();
        CoefficientField::from_samples(self.diffusion.clone(), q, None)
    }

    pub fn input_count(&self) -> usize {
        self.actuators.len()
    }
}

/// Upper bound on an infinite tail sum: computed part plus remainder bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    pub partial: f64,
    pub remainder: f64,
}

impl TailBound {
    pub fn total(&self) -> f64 {
        self.partial + self.remainder
    }
}

/// Projection data of a plant on a basis. Index `N` of the per-`N` vectors
/// runs over `0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalData {
    pub eigenvalues: Vec<f64>,
    /// `b_{n,k}`, row `n - 1`, column `k`.
    pub b_coeffs: DMatrix<f64>,
    pub c_coeffs: Vec<f64>,
    pub b_norm_sq: Vec<f64>,
    pub c_norm_sq: Option<f64>,
    /// `‖R_N b_k‖²` indexed `[N][k]`.
    pub residual_b_sq: Vec<Vec<f64>>,
    /// `‖R_N c‖²` in the bounded case.
    pub residual_c_sq: Option<Vec<f64>>,
    /// `M_1` per `N` in the Dirichlet-trace case.
    pub tail_m1: Option<Vec<f64>>,
    /// `(ε, M_2(ε) per N)` in the Neumann-trace case.
    pub tail_m2: Vec<(f64, Vec<f64>)>,
    pub mode: MeasurementMode,
}

impl ModalData {
    pub fn n_max(&self) -> usize {
        self.c_coeffs.len()
    }

    pub fn input_count(&self) -> usize {
        self.b_coeffs.ncols()
    }

    /// `Σ_k ‖R_N b_k‖²`.
    pub fn residual_b_total(&self, n: usize) -> f64 {
        self.residual_b_sq[n].iter().sum()
    }

    pub fn tail_m2_at(&self, epsilon: f64) -> Option<&[f64]> {
        self.tail_m2
            .iter()
            .find(|(e, _)| (e - epsilon).abs() <= 1e-15)
            .map(|(_, v)| v.as_slice())
    }
}

/// Projects actuators and sensor with the default tail exponent.
pub fn project_modes(basis: &SpectralBasis, plant: &PlantSpec) -> Result<ModalData> {
    project_modes_with(basis, plant, &[DEFAULT_EPSILON])
}

/// Projects actuators and sensor; `M_2` is tabulated for each `epsilons` entry.
pub fn project_modes_with(
    basis: &SpectralBasis,
    plant: &PlantSpec,
    epsilons: &[f64],
) -> Result<ModalData> {
    plant.validate()?;
    if plant.diffusion.len() != basis.grid().len() {
        return Err(Error::Dimension(format!(
            "plant sampled on {} points, basis on {}",
            plant.diffusion.len(),
            basis.grid().len()
        )));
    }
    let n_max = basis.n_max();
    let m = plant.input_count();
    let mut b = DMatrix::zeros(n_max, m);
    for (k, act) in plant.actuators.iter().enumerate() {
        for (n, v) in basis.project(act.values(), n_max)?.into_iter().enumerate() {
            b[(n, k)] = v;
        }
    }
    let b_norm_sq: Vec<f64> = plant.actuators.iter().map(Profile::norm_sq).collect();
    let residual_b_sq = (0..=n_max)
        .map(|cut| {
            (0..m)
                .map(|k| {
                    let head: f64 = (0..cut).map(|n| b[(n, k)] * b[(n, k)]).sum();
                    (b_norm_sq[k] - head).max(0.0)
                })
                .collect()
        })
        .collect();

    let p_star = basis.coefficients().p_min();
    let mode = plant.sensor.mode();
    let (c, c_norm_sq, residual_c_sq, tail_m1, tail_m2) = match &plant.sensor {
        Sensor::Distributed(profile) => {
            let c = basis.project(profile.values(), n_max)?;
            let norm = profile.norm_sq();
            let res = (0..=n_max)
                .map(|cut| (norm - c[..cut].iter().map(|v| v * v).sum::<f64>()).max(0.0))
                .collect();
            (c, Some(norm), Some(res), None, Vec::new())
        }
        Sensor::DirichletLeft => {
            let m1 = (0..=n_max)
                .map(|cut| tail_constant_m1(basis, cut, p_star).map(|t| t.total()))
                .collect::<Result<Vec<_>>>()?;
            (basis.phi_at_0().to_vec(), None, None, Some(m1), Vec::new())
        }
        Sensor::NeumannLeft => {
            let mut tables = Vec::new();
            for &eps in epsilons {
                let m2 = (0..=n_max)
                    .map(|cut| tail_constant_m2(basis, cut, eps, p_star).map(|t| t.total()))
                    .collect::<Result<Vec<_>>>()?;
                tables.push((eps, m2));
            }
            (basis.dphi_at_0().to_vec(), None, None, None, tables)
        }
    };
    Ok(ModalData {
        eigenvalues: basis.eigenvalues().to_vec(),
        b_coeffs: b,
        c_coeffs: c,
        b_norm_sq,
        c_norm_sq,
        residual_b_sq,
        residual_c_sq,
        tail_m1,
        tail_m2,
        mode,
    })
}

/// `max(0, ‖f‖² - Σ_{n≤N} ⟨f, φ_n⟩²)` with Simpson inner products.
pub fn residual_norm_sq(f: &[f64], basis: &SpectralBasis, n: usize) -> Result<f64> {
    if n > basis.n_max() {
        return Err(Error::OutOfRange(format!(
            "N = {n} exceeds the {} computed modes",
            basis.n_max()
        )));
    }
    let coeffs = basis.project(f, n)?;
    let norm = basis.quadrature().norm_sq(f);
    Ok((norm - coeffs.iter().map(|c| c * c).sum::<f64>()).max(0.0))
}

/// `Σ_{k ≥ K} 1/k²` bounded from above.
fn inverse_square_tail(k: usize) -> f64 {
    let k = k as f64;
    1.0 / k + 0.5 / (k * k) + 1.0 / (6.0 * k * k * k)
}

/// Certified upper bound of `M_1 = Σ_{n>N} φ_n(0)² / λ_n`.
pub fn tail_constant_m1(basis: &SpectralBasis, n: usize, p_star: f64) -> Result<TailBound> {
    if basis.theta1().abs() <= 1e-12 {
        return Err(Error::InvalidSensor(
            "Dirichlet condition at x = 0 makes every trace φ_n(0) vanish".into(),
        ));
    }
    check_tail_inputs(basis, n, p_star)?;
    let lam = basis.eigenvalues();
    let phi0 = basis.phi_at_0();
    let partial = (n..basis.n_max()).map(|i| phi0[i] * phi0[i] / lam[i]).sum();
    let sup = phi0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let remainder = sup * sup / (PI * PI * p_star) * inverse_square_tail(basis.n_max());
    Ok(TailBound { partial, remainder })
}

/// Certified upper bound of `M_2(ε) = Σ_{n>N} φ_n'(0)² / λ_n^{3/2+ε}`.
///
/// Beyond the computed modes `φ_n'(0)² ≤ C λ_n` is assumed with `C` twice
/// the largest observed ratio.
pub fn tail_constant_m2(
    basis: &SpectralBasis,
    n: usize,
    epsilon: f64,
    p_star: f64,
) -> Result<TailBound> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::OutOfRange(format!(
            "epsilon = {epsilon} outside (0, 1/2]"
        )));
    }
    if (basis.theta1() - FRAC_PI_2).abs() <= 1e-12 {
        return Err(Error::InvalidSensor(
            "Neumann condition at x = 0 makes every trace φ_n'(0) vanish".into(),
        ));
    }
    check_tail_inputs(basis, n, p_star)?;
    let lam = basis.eigenvalues();
    let dphi = basis.dphi_at_0();
    let partial = (n..basis.n_max())
        .map(|i| dphi[i] * dphi[i] / libm::pow(lam[i], 1.5 + epsilon))
        .sum();
    let c = 2.0
        * lam
            .iter()
            .zip(dphi)
            .filter(|(l, _)| **l > 1e-12)
            .map(|(l, d)| d * d / l)
            .fold(0.0f64, f64::max);
    let s = 1.0 + 2.0 * epsilon;
    let k = basis.n_max() as f64;
    let remainder = c
        * libm::pow(PI * PI * p_star, -0.5 * s)
        * (libm::pow(k, -s) + libm::pow(k, 1.0 - s) / (s - 1.0));
    Ok(TailBound { partial, remainder })
}

fn check_tail_inputs(basis: &SpectralBasis, n: usize, p_star: f64) -> Result<()> {
    if n > basis.n_max() {
        return Err(Error::OutOfRange(format!(
            "N = {n} exceeds the {} computed modes",
            basis.n_max()
        )));
    }
    if !(p_star > 0.0) {
        return Err(Error::InvalidInput(format!(
            "p_* = {p_star} must be positive"
        )));
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::sturm_liouville::solve_eigenproblem;
    use approx::assert_relative_eq;
    use core::f64::consts::SQRT_2;
    use proptest::prelude::*;

    #[test]
    fn actuator_projection_matches_oracle() {
        let plant = example_plant(None, 0.0);
        let basis = example_basis(&plant, 10);
        let md = project_modes(&basis, &plant).unwrap();
        for n in 1..=4 {
            let nf = n as f64;
            let oracle = -quadrature::gauss_legendre(
                |x| libm::cos(x) * SQRT_2 * libm::sin(nf * PI * x),
                0.1,
                0.3,
                32,
            );
            assert_relative_eq!(md.b_coeffs[(n - 1, 0)], oracle, max_relative = 1e-7);
            let oracle_c =
                quadrature::gauss_legendre(|x| SQRT_2 * libm::sin(nf * PI * x), 0.45, 0.55, 32);
            assert!((md.c_coeffs[n - 1] - oracle_c).abs() < 1e-9);
        }
        assert_relative_eq!(md.b_coeffs[(0, 0)], -0.159535, epsilon = 1e-6);
        assert_relative_eq!(md.c_coeffs[0], 0.140841, epsilon = 1e-6);
    }

    #[test]
    fn residual_identities() {
        let plant = example_plant(None, 0.0);
        let basis = example_basis(&plant, 60);
        let md = project_modes(&basis, &plant).unwrap();
        for k in 0..2 {
            for cut in 0..=60 {
                let head: f64 = (0..cut).map(|n| md.b_coeffs[(n, k)].powi(2)).sum();
                assert!((md.residual_b_sq[cut][k] + head - md.b_norm_sq[k]).abs() < 1e-8);
                if cut > 0 {
                    assert!(md.residual_b_sq[cut][k] <= md.residual_b_sq[cut - 1][k]);
                }
            }
            assert!(md.residual_b_sq[60][k] > -1e-8);
        }
        assert!(md.residual_c_sq.as_ref().unwrap()[60] >= 0.0);
    }

    #[test]
    fn zero_sensor_and_trace_sensors() {
        let grid = UniformGrid::new(GRID).unwrap();
        let zero = Sensor::Distributed(Profile::sampled(vec![0.0; GRID]).unwrap());
        let plant = example_plant(Some(zero), 0.0);
        let basis = example_basis(&plant, 5);
        assert!(project_modes(&basis, &plant)
            .unwrap()
            .c_coeffs
            .iter()
            .all(|c| *c == 0.0));

        let plant = example_plant(Some(Sensor::DirichletLeft), PI / 4.0);
        let basis = example_basis(&plant, 60);
        let md = project_modes(&basis, &plant).unwrap();
        assert_eq!(md.c_coeffs, basis.phi_at_0());
        assert!(md.tail_m1.is_some());
        let _ = grid;

        let bad = example_plant(Some(Sensor::DirichletLeft), 0.0);
        assert!(matches!(bad.validate(), Err(Error::InvalidSensor(_))));
        let bad = example_plant(Some(Sensor::NeumannLeft), FRAC_PI_2);
        assert!(matches!(bad.validate(), Err(Error::InvalidSensor(_))));
    }

    #[test]
    fn residual_norm_examples() {
        let plant = example_plant(None, 0.0);
        let basis = example_basis(&plant, 8);
        let phi2 = basis.eigenfunction(1).to_vec();
        assert!((residual_norm_sq(&phi2, &basis, 1).unwrap() - 1.0).abs() < 1e-6);
        assert!(residual_norm_sq(&phi2, &basis, 4).unwrap() < 1e-6);
        assert!(matches!(
            residual_norm_sq(&phi2, &basis, 9),
            Err(Error::OutOfRange(_))
        ));

        let z = basis.grid().sample(|x| 8.5 * x * (1.0 - x));
        let oracle: f64 = (5..=400)
            .map(|n| {
                let nf = n as f64;
                let a = 8.5 * SQRT_2 * 2.0 * (1.0 - libm::cos(nf * PI)) / (nf * PI).powi(3);
                a * a
            })
            .sum();
        assert!((residual_norm_sq(&z, &basis, 4).unwrap() - oracle).abs() < 1e-6);
    }

    fn constant_basis(theta1: f64, n_max: usize) -> SpectralBasis {
        let c = CoefficientField::constant(GRID, 1.0, 1.0).unwrap();
        solve_eigenproblem(&c, theta1, 0.0, n_max, GRID).unwrap()
    }

    #[test]
    fn m1_bounds_brute_force() {
        // Left Neumann, right Neumann: phi_n = sqrt(2) cos((n-1) pi x).
        let c = CoefficientField::constant(GRID, 1.0, 1.0).unwrap();
        let basis = solve_eigenproblem(&c, FRAC_PI_2, FRAC_PI_2, 60, GRID).unwrap();
        let t = tail_constant_m1(&basis, 4, 1.0).unwrap();
        let brute: f64 = (5..=2000)
            .map(|n| 2.0 / (((n - 1) as f64 * PI).powi(2) + 1.0))
            .sum();
        assert!(t.total() >= brute - 1e-9);
        assert!(t.total() - brute <= t.remainder + 1e-9);
        let empty = tail_constant_m1(&basis, 60, 1.0).unwrap();
        assert_eq!(empty.partial, 0.0);
        assert_eq!(empty.total(), empty.remainder);
        let coarser = solve_eigenproblem(&c, FRAC_PI_2, FRAC_PI_2, 30, GRID).unwrap();
        assert!(tail_constant_m1(&coarser, 4, 1.0).unwrap().total() >= t.total() - 1e-9);
        assert!(matches!(
            tail_constant_m1(&constant_basis(0.0, 10), 4, 1.0),
            Err(Error::InvalidSensor(_))
        ));
    }

    #[test]
    fn m2_bounds_brute_force() {
        let basis = constant_basis(0.0, 60);
        let t = tail_constant_m2(&basis, 4, 0.125, 1.0).unwrap();
        let brute: f64 = (5..=2000)
            .map(|n| {
                let nf = n as f64;
                2.0 * (nf * PI).powi(2) / libm::pow((nf * PI).powi(2) + 1.0, 1.625)
            })
            .sum();
        assert!(t.total() >= brute);
        assert!(t.total() - brute <= t.remainder + 1e-9);
        let half = tail_constant_m2(&basis, 4, 0.5, 1.0).unwrap();
        assert!(half.total() < t.total());
        assert!(matches!(
            tail_constant_m2(&basis, 4, 0.7, 1.0),
            Err(Error::OutOfRange(_))
        ));
        let mut last = f64::INFINITY;
        for n_max in [15, 30, 60] {
            let r = tail_constant_m2(&constant_basis(0.0, n_max), 4, 0.125, 1.0)
                .unwrap()
                .remainder;
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn default_qc_shift() {
        assert_eq!(PlantSpec::default_qc(&[-10.0, -3.0], 1.0), 11.0);
        assert_eq!(PlantSpec::default_qc(&[-10.0, -3.0], 0.0), 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn parseval_never_exceeded(a in -2.0f64..2.0, b in -2.0f64..2.0, k in 1.0f64..6.0) {
            let c = CoefficientField::constant(1201, 1.0, 1.0).unwrap();
            let basis = solve_eigenproblem(&c, 0.7, 0.2, 30, 1201).unwrap();
            let f = basis.grid().sample(|x| a * libm::sin(k * x) + b * x * x);
            let coeffs = basis.project(&f, 30).unwrap();
            let head: f64 = coeffs.iter().map(|c| c * c).sum();
            prop_assert!(basis.quadrature().norm_sq(&f) - head >= -1e-8);
        }
    }
}
