//! Observer-based controller on the first `N` modes and the truncated
//! closed-loop matrices in the coordinates
//! `X = col(Ẑ^{N0}, E^{N0}, Ẑ^{N-N0}, E^{N-N0})`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{care, norm2, spectral_abscissa};
use crate::spectral::{MeasurementMode, ModalData};
use crate::{Error, Result};

/// Margin by which synthesized gains must beat `-δ`.
pub const ABSCISSA_MARGIN: f64 = 1e-9;

/// Componentwise saturation `sat_ℓ` and deadzone `φ_ℓ = sat_ℓ - id`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationMap {
    levels: Vec<f64>,
}

impl SaturationMap {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidInput(
                "saturation levels must be positive".into(),
            ));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn saturate(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.levels)
            .map(|(x, l)| x.clamp(-l, *l))
            .collect()
    }

    pub fn deadzone(&self, v: &[f64]) -> Vec<f64> {
        self.saturate(v).iter().zip(v).map(|(s, x)| s - x).collect()
    }
}

/// Smallest `N0 ≥ 1` with `-λ_n + q_c < -δ` for every `n > N0`.
pub fn determine_n0(eigenvalues: &[f64], q_c: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "delta = {delta} must be positive"
        )));
    }
    let last = *eigenvalues
        .last()
        .ok_or_else(|| Error::NeedsMoreModes("no eigenvalues computed".into()))?;
    if -last + q_c >= -delta {
        return Err(Error::NeedsMoreModes(format!(
            "largest computed eigenvalue {last} does not exceed q_c + delta = {}",
            q_c + delta
        )));
    }
    let slow = eigenvalues
        .iter()
        .rposition(|l| -l + q_c >= -delta)
        .map_or(0, |i| i + 1);
    Ok(slow.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    /// `m × N0` state-feedback gain.
    pub k: DMatrix<f64>,
    /// Observer gain of length `N0`.
    pub l: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainStrategy {
    /// Scalar case `N0 = 1`: minimum-norm gains placing both poles.
    PolePlacement {
        controller_pole: f64,
        observer_pole: f64,
    },
    /// Riccati design on `(A0 + δI, B0)` and its dual with weights `I`, `ρI`.
    Riccati {
        rho: f64,
    },
    UserSupplied(Gains),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub controller_abscissa: f64,
    pub observer_abscissa: f64,
    /// Both abscissas are below `-δ - ABSCISSA_MARGIN`.
    pub meets_delta: bool,
    pub rho: Option<f64>,
}

impl GainReport {
    fn new(a0: &DMatrix<f64>, b0: &DMatrix<f64>, c0: &DMatrix<f64>, g: &Gains, delta: f64) -> Self {
        let controller_abscissa = spectral_abscissa(&(a0 + b0 * &g.k));
        let observer_abscissa = spectral_abscissa(&(a0 - &g.l * c0));
        Self {
            controller_abscissa,
            observer_abscissa,
            meets_delta: controller_abscissa.max(observer_abscissa) < -delta - ABSCISSA_MARGIN,
            rho: None,
        }
    }
}

/// Computes (or validates) `K`, `L` so that `A0 + B0 K` and `A0 - L C0` have
/// spectral abscissa below `-δ`.
///
/// User-supplied gains are only required to be Hurwitz; whether they meet the
/// `-δ` margin is reported in [`GainReport::meets_delta`].
pub fn synthesize_gains(
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    c0: &DMatrix<f64>,
    delta: f64,
    strategy: &GainStrategy,
) -> Result<(Gains, GainReport)> {
    let n0 = a0.nrows();
    let m = b0.ncols();
    if a0.ncols() != n0 || b0.nrows() != n0 || c0.nrows() != 1 || c0.ncols() != n0 {
        return Err(Error::Dimension(format!(
            "A0 {}x{}, B0 {}x{}, C0 {}x{}",
            a0.nrows(),
            a0.ncols(),
            b0.nrows(),
            b0.ncols(),
            c0.nrows(),
            c0.ncols()
        )));
    }
    let scale_b = b0.amax().max(f64::MIN_POSITIVE);
    for n in 0..n0 {
        if b0
            .row(n)
            .iter()
            .all(|v| v.abs() <= 1e-12 * scale_b.max(1.0))
        {
            return Err(Error::HypothesisViolation {
                mode: n + 1,
                reason: "every actuator is orthogonal to this mode (uncontrollable)".into(),
            });
        }
        if c0[(0, n)].abs() <= 1e-12 {
            return Err(Error::HypothesisViolation {
                mode: n + 1,
                reason: "the sensor does not see this mode (unobservable)".into(),
            });
        }
    }
    match strategy {
        GainStrategy::UserSupplied(g) => {
            if g.k.nrows() != m || g.k.ncols() != n0 || g.l.len() != n0 {
                return Err(Error::Dimension(format!(
                    "expected K {m}x{n0} and L of length {n0}, got K {}x{} and L {}",
                    g.k.nrows(),
                    g.k.ncols(),
                    g.l.len()
                )));
            }
            let report = GainReport::new(a0, b0, c0, g, delta);
            if report.controller_abscissa >= 0.0 || report.observer_abscissa >= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "supplied gains are not stabilising (abscissas {:.6}, {:.6})",
                    report.controller_abscissa, report.observer_abscissa
                )));
            }
            Ok((g.clone(), report))
        }
        GainStrategy::PolePlacement {
            controller_pole,
            observer_pole,
        } => {
            if n0 != 1 {
                return Err(Error::InvalidInput(format!(
                    "pole placement is implemented for N0 = 1, got N0 = {n0}"
                )));
            }
            let a = a0[(0, 0)];
            let bb: f64 = b0.iter().map(|v| v * v).sum();
            let k = b0.transpose() * ((controller_pole - a) / bb);
            let l = DVector::from_element(1, (a - observer_pole) / c0[(0, 0)]);
            let g = Gains { k, l };
            let report = GainReport::new(a0, b0, c0, &g, delta);
            require_margin(&report, delta)?;
            Ok((g, report))
        }
        GainStrategy::Riccati { rho } => {
            let mut rho = *rho;
            for _ in 0..40 {
                let g = riccati_gains(a0, b0, c0, delta, rho)?;
                let mut report = GainReport::new(a0, b0, c0, &g, delta);
                report.rho = Some(rho);
                if report.meets_delta {
                    return Ok((g, report));
                }
                rho *= 0.5;
            }
            Err(Error::NumericalFailure(
                "Riccati weights could not achieve the decay margin".into(),
            ))
        }
    }
}

fn require_margin(report: &GainReport, delta: f64) -> Result<()> {
    if report.meets_delta {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "gains give abscissas {:.6} and {:.6}, not below -delta = {}",
            report.controller_abscissa, report.observer_abscissa, -delta
        )))
    }
}

fn riccati_gains(
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    c0: &DMatrix<f64>,
    delta: f64,
    rho: f64,
) -> Result<Gains> {
    let n0 = a0.nrows();
    let shifted = a0 + DMatrix::identity(n0, n0) * delta;
    let q = DMatrix::identity(n0, n0);
    let x = care(
        &shifted,
        b0,
        &q,
        &(DMatrix::identity(b0.ncols(), b0.ncols()) * rho),
    )?;
    let k = -(b0.transpose() * x) / rho;
    let y = care(
        &shifted.transpose(),
        &c0.transpose(),
        &q,
        &DMatrix::identity(1, 1).scale(rho),
    )?;
    let l = (y * c0.transpose()).column(0) / rho;
    Ok(Gains { k, l })
}

/// Truncated closed loop `Ẋ = F X + 𝓛 ζ + 𝓛_φ φ_ℓ(K̃ X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    pub n0: usize,
    pub n: usize,
    pub delta: f64,
    pub q_c: f64,
    pub mode: MeasurementMode,
    pub gains: Gains,
    /// `λ_1, …, λ_{N+1}`.
    pub eigenvalues: Vec<f64>,
    /// Weights applied to the error coordinates `N0 < n ≤ N`.
    pub error_scaling: Vec<f64>,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub lcal: DVector<f64>,
    pub lphi: DMatrix<f64>,
    pub emat: DMatrix<f64>,
    pub ktilde: DMatrix<f64>,
}

impl ControllerRealization {
    pub fn input_count(&self) -> usize {
        self.b0.ncols()
    }

    /// `λ_{N+1}`.
    pub fn lambda_next(&self) -> f64 {
        self.eigenvalues[self.n]
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn summary(&self) -> RealizationSummary {
        RealizationSummary {
            n0: self.n0,
            n: self.n,
            closed_loop_abscissa: spectral_abscissa(&self.f),
            controller_abscissa: spectral_abscissa(&(&self.a0 + &self.b0 * &self.gains.k)),
            observer_abscissa: spectral_abscissa(&(&self.a0 - &self.gains.l * &self.c0)),
            b1_norm: norm2(&self.b1),
            c1_norm: norm2(&self.c1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationSummary {
    pub n0: usize,
    pub n: usize,
    pub closed_loop_abscissa: f64,
    pub controller_abscissa: f64,
    pub observer_abscissa: f64,
    pub b1_norm: f64,
    pub c1_norm: f64,
}

/// The blocks `A0, B0, C0` of the first `n0` modes (unscaled).
pub fn leading_blocks(
    modal: &ModalData,
    n0: usize,
    q_c: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if n0 == 0 || n0 > modal.n_max() {
        return Err(Error::NeedsMoreModes(format!(
            "N0 = {n0} with {} computed modes",
            modal.n_max()
        )));
    }
    let a0 = DMatrix::from_fn(n0, n0, |i, j| {
        if i == j {
            -modal.eigenvalues[i] + q_c
        } else {
            0.0
        }
    });
    let b0 = modal.b_coeffs.rows(0, n0).into_owned();
    let c0 = DMatrix::from_fn(1, n0, |_, j| modal.c_coeffs[j]);
    Ok((a0, b0, c0))
}

/// Builds `F`, `𝓛`, `𝓛_φ`, `E`, `K̃` for orders `N0 < N`.
///
/// In the trace-sensing modes the error coordinates beyond `N0` are
/// rescaled by `√λ_n` (Dirichlet trace) or `λ_n` (Neumann trace) and `C1`
/// is divided accordingly.
pub fn assemble_closed_loop(
    modal: &ModalData,
    gains: &Gains,
    n0: usize,
    n: usize,
    q_c: f64,
    delta: f64,
) -> Result<ControllerRealization> {
    if n0 == 0 || n < n0 + 1 {
        return Err(Error::InvalidInput(format!(
            "need N >= N0 + 1, got N0 = {n0}, N = {n}"
        )));
    }
    if n + 1 > modal.n_max() {
        return Err(Error::NeedsMoreModes(format!(
            "N = {n} needs {} modes, {} computed",
            n + 1,
            modal.n_max()
        )));
    }
    let m = modal.input_count();
    if gains.k.nrows() != m || gains.k.ncols() != n0 || gains.l.len() != n0 {
        return Err(Error::Dimension(format!(
            "gains K {}x{}, L {} do not match m = {m}, N0 = {n0}",
            gains.k.nrows(),
            gains.k.ncols(),
            gains.l.len()
        )));
    }
    let lam = &modal.eigenvalues;
    if let Some(i) = (n0..=n).find(|&i| -lam[i] + q_c >= -delta) {
        return Err(Error::InvalidInput(format!(
            "mode {} has -λ + q_c = {} not below -delta; N0 is too small",
            i + 1,
            -lam[i] + q_c
        )));
    }
    let mode = modal.mode;
    let n1 = n - n0;
    let (a0, b0, c0) = leading_blocks(modal, n0, q_c)?;
    let a1 = DMatrix::from_fn(n1, n1, |i, j| if i == j { -lam[n0 + i] + q_c } else { 0.0 });
    let b1 = modal.b_coeffs.rows(n0, n1).into_owned();
    let error_scaling: Vec<f64> = (n0..n).map(|i| mode.scaling(lam[i])).collect();
    let c1 = DMatrix::from_fn(1, n1, |_, j| modal.c_coeffs[n0 + j] / error_scaling[j]);

    let k = &gains.k;
    let l = DMatrix::from_column_slice(n0, 1, gains.l.as_slice());
    let dim = 2 * n;
    let mut f = DMatrix::zeros(dim, dim);
    let (z0, e0, z1, e1) = (0, n0, 2 * n0, n0 + n);
    f.view_mut((z0, z0), (n0, n0)).copy_from(&(&a0 + &b0 * k));
    f.view_mut((z0, e0), (n0, n0)).copy_from(&(&l * &c0));
    f.view_mut((z0, e1), (n0, n1)).copy_from(&(&l * &c1));
    f.view_mut((e0, e0), (n0, n0)).copy_from(&(&a0 - &l * &c0));
    f.view_mut((e0, e1), (n0, n1)).copy_from(&(-(&l * &c1)));
    f.view_mut((z1, z0), (n1, n0)).copy_from(&(&b1 * k));
    f.view_mut((z1, z1), (n1, n1)).copy_from(&a1);
    f.view_mut((e1, e1), (n1, n1)).copy_from(&a1);

    let mut lcal = DVector::zeros(dim);
    lcal.rows_mut(z0, n0).copy_from(&gains.l);
    lcal.rows_mut(e0, n0).copy_from(&(-&gains.l));
    let mut lphi = DMatrix::zeros(dim, m);
    lphi.view_mut((z0, 0), (n0, m)).copy_from(&b0);
    lphi.view_mut((z1, 0), (n1, m)).copy_from(&b1);
    let emat = DMatrix::from_fn(n0, dim, |i, j| if i == j { 1.0 } else { 0.0 });
    let ktilde = k * &emat;

    Ok(ControllerRealization {
        n0,
        n,
        delta,
        q_c,
        mode,
        gains: gains.clone(),
        eigenvalues: lam[..=n].to_vec(),
        error_scaling,
        a0,
        a1,
        b0,
        b1,
        c0,
        c1,
        f,
        lcal,
        lphi,
        emat,
        ktilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fixtures::*;
    use crate::spectral::{project_modes, Sensor};
    use alloc::vec;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn reference_gains() -> Gains {
        Gains {
            k: DMatrix::from_column_slice(2, 1, &[2.59, 3.41]),
            l: DVector::from_element(1, 15.13),
        }
    }

    fn example_modal(n_max: usize) -> ModalData {
        let plant = example_plant(None, 0.0);
        project_modes(&example_basis(&plant, n_max), &plant).unwrap()
    }

    #[test]
    fn saturation_examples() {
        let s = SaturationMap::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(s.saturate(&[0.5, -1.5]), vec![0.5, -1.5]);
        assert_eq!(s.deadzone(&[0.5, -1.5]), vec![0.0, 0.0]);
        assert_eq!(s.saturate(&[3.0, -5.0]), vec![1.0, -2.0]);
        assert_eq!(s.deadzone(&[3.0, -5.0]), vec![-2.0, 3.0]);
    }

    #[test]
    fn n0_examples() {
        let lam: Vec<f64> = (1..=10).map(|n| (n as f64 * PI).powi(2) + 1.0).collect();
        assert_eq!(determine_n0(&lam, 11.0, 1.0).unwrap(), 1);
        assert_eq!(determine_n0(&lam, -5.0, 1.0).unwrap(), 1);
        assert_eq!(determine_n0(&lam, 50.0, 1.0).unwrap(), 2);
        assert!(matches!(
            determine_n0(&lam[..2], 50.0, 1.0),
            Err(Error::NeedsMoreModes(_))
        ));
    }

    #[test]
    fn reference_gains_validate() {
        let md = example_modal(10);
        let (a0, b0, c0) = leading_blocks(&md, 1, 11.0).unwrap();
        let (g, report) = synthesize_gains(
            &a0,
            &b0,
            &c0,
            1.0,
            &GainStrategy::UserSupplied(reference_gains()),
        )
        .unwrap();
        assert_eq!(g, reference_gains());
        assert!(report.controller_abscissa < -0.999 && report.observer_abscissa < -1.99);
    }

    #[test]
    fn pole_placement_recovers_reference_gains() {
        let md = example_modal(10);
        let (a0, b0, c0) = leading_blocks(&md, 1, 11.0).unwrap();
        let strategy = GainStrategy::PolePlacement {
            controller_pole: -1.0 - 1e-6,
            observer_pole: -2.0,
        };
        let (g, _) = synthesize_gains(&a0, &b0, &c0, 1.0, &strategy).unwrap();
        assert!((g.k[(0, 0)] - 2.59).abs() < 5e-3 && (g.k[(1, 0)] - 3.41).abs() < 5e-3);
        assert!((g.l[0] - 15.13).abs() < 5e-3);
    }

    #[test]
    fn riccati_scalar_case() {
        let a0 = DMatrix::from_element(1, 1, 0.13);
        let b0 = DMatrix::from_row_slice(1, 2, &[0.16, -0.21]);
        let c0 = DMatrix::from_element(1, 1, 0.14);
        let (g, r) =
            synthesize_gains(&a0, &b0, &c0, 1.0, &GainStrategy::Riccati { rho: 1.0 }).unwrap();
        assert!(spectral_abscissa(&(&a0 + &b0 * &g.k)) < -1.0);
        assert!(spectral_abscissa(&(&a0 - &g.l * &c0)) < -1.0);
        assert!(r.meets_delta);
    }

    #[test]
    fn hypothesis_violations_name_the_mode() {
        let a0 = DMatrix::from_element(1, 1, 0.13);
        let c0 = DMatrix::from_element(1, 1, 0.14);
        let err = synthesize_gains(
            &a0,
            &DMatrix::zeros(1, 2),
            &c0,
            1.0,
            &GainStrategy::Riccati { rho: 1.0 },
        );
        assert!(matches!(
            err,
            Err(Error::HypothesisViolation { mode: 1, .. })
        ));
        let b0 = DMatrix::from_row_slice(1, 2, &[0.16, -0.21]);
        let err = synthesize_gains(
            &a0,
            &b0,
            &DMatrix::zeros(1, 1),
            1.0,
            &GainStrategy::Riccati { rho: 1.0 },
        );
        assert!(matches!(
            err,
            Err(Error::HypothesisViolation { mode: 1, .. })
        ));
    }

    #[test]
    fn closed_loop_blocks() {
        let md = example_modal(10);
        let r = assemble_closed_loop(&md, &reference_gains(), 1, 4, 11.0, 1.0).unwrap();
        assert_eq!(r.f.shape(), (8, 8));
        for i in 0..3 {
            let exact = -(((i + 2) as f64) * PI).powi(2) - 1.0 + 11.0;
            assert!((r.a1[(i, i)] - exact).abs() < 1e-6);
        }
        assert!((r.lambda_next() - (25.0 * PI * PI + 1.0)).abs() < 1e-5);
        assert!(matches!(
            assemble_closed_loop(&md, &reference_gains(), 1, 1, 11.0, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            assemble_closed_loop(&md, &reference_gains(), 1, 10, 11.0, 1.0),
            Err(Error::NeedsMoreModes(_))
        ));
    }

    #[test]
    fn zero_gains_decouple() {
        let md = example_modal(10);
        let zero = Gains {
            k: DMatrix::zeros(2, 1),
            l: DVector::zeros(1),
        };
        let r = assemble_closed_loop(&md, &zero, 1, 4, 11.0, 1.0).unwrap();
        let mut diag: Vec<f64> = (0..8).map(|i| r.f[(i, i)]).collect();
        let mut ev: Vec<f64> = r.f.complex_eigenvalues().iter().map(|z| z.re).collect();
        diag.sort_by(f64::total_cmp);
        ev.sort_by(f64::total_cmp);
        for (a, b) in diag.iter().zip(&ev) {
            assert!((a - b).abs() < 1e-9);
        }
        let off: f64 = (0..8)
            .flat_map(|i| (0..8).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| r.f[(i, j)].abs())
            .sum();
        assert_eq!(off, 0.0);
    }

    #[test]
    fn trace_modes_rescale_c1() {
        let plant = example_plant(Some(Sensor::DirichletLeft), PI / 4.0);
        let md = project_modes(&example_basis(&plant, 10), &plant).unwrap();
        let (a0, b0, c0) = leading_blocks(&md, 1, 11.0).unwrap();
        let (g, _) =
            synthesize_gains(&a0, &b0, &c0, 1.0, &GainStrategy::Riccati { rho: 1.0 }).unwrap();
        let r = assemble_closed_loop(&md, &g, 1, 4, 11.0, 1.0).unwrap();
        let want: f64 = (1..4)
            .map(|i| md.c_coeffs[i].powi(2) / md.eigenvalues[i])
            .sum::<f64>();
        assert!((r.c1.norm() - libm::sqrt(want)).abs() < 1e-12);
        assert_eq!(r.mode, MeasurementMode::DirichletLeft);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn sector_condition(
            l1 in 0.1f64..5.0, l2 in 0.1f64..5.0,
            w1 in -10.0f64..10.0, w2 in -10.0f64..10.0,
            s1 in -1.0f64..1.0, s2 in -1.0f64..1.0,
            t1 in 0.01f64..10.0, t2 in 0.01f64..10.0,
        ) {
            let sat = SaturationMap::new(vec![l1, l2]).unwrap();
            let v = [w1 + s1 * l1, w2 + s2 * l2];
            let phi = sat.deadzone(&v);
            let form = t1 * phi[0] * (phi[0] + w1) + t2 * phi[1] * (phi[1] + w2);
            prop_assert!(form <= 0.0);
        }
    }
}
