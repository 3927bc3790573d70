use std::f64::consts::PI;

use proptest::prelude::*;
use rdsat_core::attraction::AttractionEllipsoid;
use rdsat_core::controller::{
    assemble_closed_loop, determine_n0, leading_blocks, synthesize_gains, GainStrategy,
};
use rdsat_core::lmi::{
    evaluate, solve_feasibility, CertificateProblem, ProblemOptions, TheoremTag,
};
use rdsat_core::quadrature::UniformGrid;
use rdsat_core::sdp::SolverOptions;
use rdsat_core::sim::{simulate, SimulationConfig};
use rdsat_core::spectral::{project_modes, PlantSpec, Profile, Sensor};
use rdsat_core::sturm_liouville::{solve_eigenproblem, CoefficientField};

const GRID: usize = 1201;

fn unstable_plant() -> PlantSpec {
    let grid = UniformGrid::new(GRID).unwrap();
    PlantSpec {
        diffusion: vec![1.0; GRID],
        reaction: vec![-12.0; GRID],
        theta1: 0.0,
        theta2: 0.0,
        q_c: 13.0,
        actuators: vec![Profile::indicator(grid, 0.2, 0.4, |_| 1.0).unwrap()],
        sensor: Sensor::Distributed(Profile::indicator(grid, 0.4, 0.6, |_| 1.0).unwrap()),
        levels: vec![1.5],
    }
}

#[test]
fn unstable_plant_is_certified_and_stabilised() {
    let plant = unstable_plant();
    let basis =
        solve_eigenproblem(&plant.operator_coefficients().unwrap(), 0.0, 0.0, 30, GRID).unwrap();
    assert!(
        basis.eigenvalues()[0] < plant.q_c,
        "open loop should be unstable"
    );
    let modal = project_modes(&basis, &plant).unwrap();

    let delta = 1.0;
    let n0 = determine_n0(basis.eigenvalues(), plant.q_c, delta).unwrap();
    assert_eq!(n0, 1);
    let (a0, b0, c0) = leading_blocks(&modal, n0, plant.q_c).unwrap();
    let strategy = GainStrategy::PolePlacement {
        controller_pole: -2.0,
        observer_pole: -3.0,
    };
    let (gains, report) = synthesize_gains(&a0, &b0, &c0, delta, &strategy).unwrap();
    assert!(report.meets_delta);

    let realization = assemble_closed_loop(&modal, &gains, n0, 4, plant.q_c, delta).unwrap();
    let problem = CertificateProblem::new(
        TheoremTag::Thm1,
        realization.clone(),
        &modal,
        &plant.levels,
        &ProblemOptions::default(),
    )
    .unwrap();
    let sol = solve_feasibility(&problem, &SolverOptions::default())
        .unwrap()
        .solution()
        .expect("certificate at N = 4");
    assert!(evaluate(&problem, &sol).passes(1e-7));

    let ellipsoid = AttractionEllipsoid::from_certificate(&sol, &realization).unwrap();
    let grid = basis.grid();
    // Scale a bump onto the boundary of the ellipsoid, then start just inside.
    let bump = grid.sample(|x| (PI * x).sin());
    let m = ellipsoid.membership(&bump, None, &basis).unwrap();
    let scale = 0.9 * (m.threshold / m.value).sqrt();
    let z0: Vec<f64> = bump.iter().map(|v| v * scale).collect();
    assert!(ellipsoid.membership(&z0, None, &basis).unwrap().inside);

    let config = SimulationConfig {
        n_sim: 25,
        t_final: 6.0,
        ..SimulationConfig::new(z0)
    };
    let trace = simulate(
        &modal,
        &basis,
        &plant.levels,
        &realization,
        Some(&sol),
        &config,
    )
    .unwrap();
    let ratio = trace.l2_norm.last().unwrap() / trace.l2_norm[0];
    assert!(
        ratio < 1e-2,
        "state decayed only to {ratio:.3e} of its initial norm"
    );
    let v = trace.lyapunov.as_ref().unwrap();
    assert!(v.last().unwrap() < &v[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn robin_spectra_respect_the_lower_bound(
        theta1 in 0.0..1.5f64,
        theta2 in 0.0..1.5f64,
        amp in 0.0..0.8f64,
    ) {
        let coeffs = CoefficientField::from_fn(801, |x| 1.0 + amp * x, |_| 1.0).unwrap();
        let basis = solve_eigenproblem(&coeffs, theta1, theta2, 12, 801).unwrap();
        let l = basis.eigenvalues();
        for (i, w) in l.windows(2).enumerate() {
            prop_assert!(w[1] > w[0], "not increasing at n = {}", i + 1);
        }
        for (i, &lambda) in l.iter().enumerate() {
            let k = i as f64;
            prop_assert!(lambda >= PI * PI * k * k * coeffs.p_min(), "lambda_{} = {}", i + 1, lambda);
        }
    }
}
