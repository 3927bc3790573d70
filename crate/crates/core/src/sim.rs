//! Modal simulation of the saturated closed loop with classical RK4.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::controller::{ControllerRealization, SaturationMap};
use crate::lmi::{CertificateSolution, TheoremTag};
use crate::quadrature::derivative;
use crate::spectral::ModalData;
use crate::sturm_liouville::SpectralBasis;
use crate::{Error, Result};

/// Right end of the RK4 stability interval on the negative real axis.
pub const RK4_STABILITY_LIMIT: f64 = 2.785;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_sim: usize,
    /// `None` selects `0.5 / λ_{n_sim}`.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub z0: Vec<f64>,
    /// `ẑ_n(0)` for `n ≤ N`; zero when absent.
    pub observer_ic: Option<Vec<f64>>,
    pub record_stride: usize,
}

impl SimulationConfig {
    pub fn new(z0: Vec<f64>) -> Self {
        Self {
            n_sim: 50,
            dt: None,
            t_final: 10.0,
            z0,
            observer_ic: None,
            record_stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub modal_states: Vec<Vec<f64>>,
    pub observer_states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub saturated_inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    /// `V(t)` when a certificate was supplied.
    pub lyapunov: Option<Vec<f64>>,
    pub l2_norm: Vec<f64>,
    pub h1_norm: Vec<f64>,
    /// `‖z - Σ_{n≤N} ẑ_n φ_n‖_{L²}`.
    pub error_l2_norm: Vec<f64>,
    pub dt: f64,
    /// Certified decay rate carried by the certificate, if any.
    pub kappa: Option<f64>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `z(t_k, ·)` on the basis grid.
    pub fn state_field(&self, basis: &SpectralBasis, k: usize) -> Vec<f64> {
        basis.synthesize(&self.modal_states[k])
    }

    /// `z(t_k, ·) - Σ_{n≤N} ẑ_n(t_k) φ_n` on the basis grid.
    pub fn error_field(&self, basis: &SpectralBasis, k: usize) -> Vec<f64> {
        let mut coeffs = self.modal_states[k].clone();
        for (c, h) in coeffs.iter_mut().zip(&self.observer_states[k]) {
            *c -= h;
        }
        basis.synthesize(&coeffs)
    }
}

struct Model<'a> {
    rates: Vec<f64>,
    b: &'a DMatrix<f64>,
    c: Vec<f64>,
    k: &'a DMatrix<f64>,
    l: Vec<f64>,
    sat: SaturationMap,
    n: usize,
    n0: usize,
}

impl Model<'_> {
    fn control(&self, hat: &[f64]) -> Vec<f64> {
        (0..self.k.nrows())
            .map(|r| (0..self.n0).map(|j| self.k[(r, j)] * hat[j]).sum())
            .collect()
    }

    fn output(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.c).map(|(a, b)| a * b).sum()
    }

    /// State layout `[z_1..z_{n_sim}, ẑ_1..ẑ_N]`.
    fn rhs(&self, s: &[f64], out: &mut [f64]) {
        let ns = self.rates.len();
        let (z, hat) = s.split_at(ns);
        let u = self.sat.saturate(&self.control(hat));
        let innovation = hat.iter().zip(&self.c).map(|(a, b)| a * b).sum::<f64>() - self.output(z);
        for i in 0..ns {
            let mut v = self.rates[i] * z[i];
            for (kk, uk) in u.iter().enumerate() {
                v += self.b[(i, kk)] * uk;
            }
            out[i] = v;
        }
        for i in 0..self.n {
            let mut v = self.rates[i] * hat[i];
            for (kk, uk) in u.iter().enumerate() {
                v += self.b[(i, kk)] * uk;
            }
            if i < self.n0 {
                v -= self.l[i] * innovation;
            }
            out[ns + i] = v;
        }
    }
}

fn h1_gram(basis: &SpectralBasis, n_sim: usize) -> DMatrix<f64> {
    let h = basis.grid().spacing();
    let quad = basis.quadrature();
    let d: Vec<Vec<f64>> = (0..n_sim)
        .map(|i| derivative(basis.eigenfunction(i), h))
        .collect();
    let mut g = DMatrix::zeros(n_sim, n_sim);
    for i in 0..n_sim {
        for j in i..n_sim {
            let v = quad.inner(&d[i], &d[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `X` in the certificate coordinates from plant and observer states.
pub fn closed_loop_coordinates(
    z: &[f64],
    hat: &[f64],
    realization: &ControllerRealization,
) -> DVector<f64> {
    let n = realization.n;
    let n0 = realization.n0;
    let mut x = DVector::zeros(2 * n);
    for i in 0..n0 {
        x[i] = hat[i];
        x[n0 + i] = z[i] - hat[i];
    }
    for j in 0..n - n0 {
        x[2 * n0 + j] = hat[n0 + j];
        x[n + n0 + j] = realization.error_scaling[j] * (z[n0 + j] - hat[n0 + j]);
    }
    x
}

/// `V = XᵀPX + γ Σ_{N<n≤n_sim} w_n z_n²` with `w_n = 1` (thm1) or `λ_n`.
pub fn lyapunov_value(
    z: &[f64],
    hat: &[f64],
    realization: &ControllerRealization,
    eigenvalues: &[f64],
    sol: &CertificateSolution,
) -> f64 {
    let x = closed_loop_coordinates(z, hat, realization);
    let energy = sol.tag != TheoremTag::Thm1;
    let tail: f64 = (realization.n..z.len())
        .map(|i| if energy { eigenvalues[i] } else { 1.0 } * z[i] * z[i])
        .sum();
    x.dot(&(&sol.p * &x)) + sol.gamma * tail
}

/// Integrates plant modes `n ≤ n_sim` and the observer of order `N` with
/// saturated inputs fed to both.
pub fn simulate(
    modal: &ModalData,
    basis: &SpectralBasis,
    levels: &[f64],
    realization: &ControllerRealization,
    certificate: Option<&CertificateSolution>,
    config: &SimulationConfig,
) -> Result<SimulationTrace> {
    let ns = config.n_sim;
    let n = realization.n;
    let n0 = realization.n0;
    if ns < n + 1 {
        return Err(Error::Config(format!(
            "n_sim = {ns} must exceed the observer order N = {n}"
        )));
    }
    if ns > modal.n_max() || ns > basis.n_max() {
        return Err(Error::NeedsMoreModes(format!(
            "n_sim = {ns} but only {} modes are available",
            modal.n_max().min(basis.n_max())
        )));
    }
    if config.record_stride == 0 || !(config.t_final > 0.0) {
        return Err(Error::Config(
            "record_stride and t_final must be positive".into(),
        ));
    }
    let q_c = realization.q_c;
    let rates: Vec<f64> = modal.eigenvalues[..ns].iter().map(|l| -l + q_c).collect();
    let stiff = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let suggested = 0.5 / modal.eigenvalues[ns - 1].abs().max(1.0);
    let dt = config.dt.unwrap_or(suggested);
    if !(dt > 0.0) || dt * stiff > RK4_STABILITY_LIMIT {
        return Err(Error::Config(format!(
            "dt = {dt:e} violates the RK4 stiffness bound for λ = {stiff:.4e}; use dt <= {suggested:e}"
        )));
    }
    let b = modal.b_coeffs.rows(0, ns).into_owned();
    let model = Model {
        rates,
        b: &b,
        c: modal.c_coeffs[..ns].to_vec(),
        k: &realization.gains.k,
        l: realization.gains.l.iter().copied().collect(),
        sat: SaturationMap::new(levels.to_vec())?,
        n,
        n0,
    };
    if levels.len() != realization.gains.k.nrows() {
        return Err(Error::Dimension(
            "saturation levels and inputs differ".into(),
        ));
    }

    let mut state = vec![0.0; ns + n];
    state[..ns].copy_from_slice(&basis.project(&config.z0, ns)?);
    if let Some(ic) = &config.observer_ic {
        if ic.len() != n {
            return Err(Error::Dimension(format!(
                "observer_ic has {} entries, expected {n}",
                ic.len()
            )));
        }
        state[ns..].copy_from_slice(ic);
    }

    let gram = h1_gram(basis, ns);
    let steps = libm::ceil(config.t_final / dt - 1e-9) as usize;
    let dt = config.t_final / steps as f64;
    let mut trace = SimulationTrace {
        dt,
        lyapunov: certificate.map(|_| Vec::new()),
        kappa: certificate.map(|c| c.kappa),
        ..Default::default()
    };
    let record = |trace: &mut SimulationTrace, t: f64, s: &[f64]| {
        let (z, hat) = s.split_at(ns);
        let u = model.control(hat);
        let us = model.sat.saturate(&u);
        let zv = DVector::from_column_slice(z);
        let l2 = z.iter().map(|v| v * v).sum::<f64>();
        let err = (0..ns)
            .map(|i| {
                let e = if i < n { z[i] - hat[i] } else { z[i] };
                e * e
            })
            .sum::<f64>();
        trace.times.push(t);
        trace.modal_states.push(z.to_vec());
        trace.observer_states.push(hat.to_vec());
        trace.outputs.push(model.output(z));
        trace.inputs.push(u);
        trace.saturated_inputs.push(us);
        trace.l2_norm.push(libm::sqrt(l2));
        trace.h1_norm.push(libm::sqrt(l2 + zv.dot(&(&gram * &zv))));
        trace.error_l2_norm.push(libm::sqrt(err));
        if let (Some(v), Some(sol)) = (trace.lyapunov.as_mut(), certificate) {
            v.push(lyapunov_value(z, hat, realization, &modal.eigenvalues, sol));
        }
    };
    record(&mut trace, 0.0, &state);

    let dim = state.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    );
    for step in 1..=steps {
        model.rhs(&state, &mut k1);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * dt * k1[i];
        }
        model.rhs(&tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * dt * k2[i];
        }
        model.rhs(&tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = state[i] + dt * k3[i];
        }
        model.rhs(&tmp, &mut k4);
        for i in 0..dim {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % config.record_stride == 0 || step == steps {
            record(&mut trace, step as f64 * dt, &state);
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// `max_t V(t) e^{2κt} / V(0)`.
    pub max_ratio: f64,
    pub kappa: f64,
    /// `-d/dt ln ‖z‖_{L²}` fitted over the second half of the trace.
    pub fitted_rate: f64,
    /// Largest `V(t)` relative to `1/μ`.
    pub max_level: f64,
}

pub fn check_decay(trace: &SimulationTrace, sol: &CertificateSolution) -> Result<DecayReport> {
    let v = trace
        .lyapunov
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("trace was recorded without a certificate".into()))?;
    let v0 = v[0];
    if !(v0 > 0.0) {
        return Err(Error::Degenerate(
            "V(0) = 0: the trajectory is identically zero".into(),
        ));
    }
    let kappa = sol.kappa;
    let max_ratio = v
        .iter()
        .zip(&trace.times)
        .map(|(vi, t)| vi * libm::exp(2.0 * kappa * t) / v0)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_level = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x)) * sol.mu;
    Ok(DecayReport {
        max_ratio,
        kappa,
        fitted_rate: fitted_rate(&trace.times, &trace.l2_norm),
        max_level,
    })
}

/// Least-squares slope of `-ln y` against `t` over the second half.
pub fn fitted_rate(times: &[f64], y: &[f64]) -> f64 {
    let start = times.len() / 2;
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&y[start..])
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, libm::log(*v)))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, v)| (a + t, b + v));
    let (mt, my) = (st / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (t, v)| {
        (a + (t - mt) * (v - my), b + (t - mt) * (t - mt))
    });
    -num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{assemble_closed_loop, Gains};
    use crate::spectral::fixtures::*;
    use crate::spectral::project_modes;

    fn setup(gains: Gains, n_max: usize) -> (ModalData, SpectralBasis, ControllerRealization) {
        let plant = example_plant(None, 0.0);
        let basis = example_basis(&plant, n_max);
        let md = project_modes(&basis, &plant).unwrap();
        let real = assemble_closed_loop(&md, &gains, 1, 4, 11.0, 1.0).unwrap();
        (md, basis, real)
    }

    fn reference_gains() -> Gains {
        Gains {
            k: DMatrix::from_column_slice(2, 1, &[2.59, 3.41]),
            l: DVector::from_element(1, 15.13),
        }
    }

    #[test]
    fn open_loop_modes_decouple() {
        let zero = Gains {
            k: DMatrix::zeros(2, 1),
            l: DVector::zeros(1),
        };
        let (md, basis, real) = setup(zero, 12);
        let z0: Vec<f64> = basis.eigenfunction(2).iter().map(|v| 0.3 * v).collect();
        let mut cfg = SimulationConfig::new(z0);
        cfg.n_sim = 10;
        cfg.t_final = 0.05;
        cfg.record_stride = 10;
        let tr = simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg).unwrap();
        let last = tr.len() - 1;
        let rate = -md.eigenvalues[2] + 11.0;
        let exact = tr.modal_states[0][2] * libm::exp(rate * tr.times[last]);
        assert!((tr.modal_states[0][2] - 0.3).abs() < 1e-6);
        assert!((tr.modal_states[last][2] - exact).abs() < 1e-7 * exact.abs());
        assert!(tr.modal_states[last][0].abs() < 1e-9);
    }

    #[test]
    fn fourth_order_convergence() {
        let (md, basis, real) = setup(reference_gains(), 12);
        let z0 = basis.grid().sample(|x| x * (1.0 - x));
        let run = |dt: f64| {
            let mut cfg = SimulationConfig::new(z0.clone());
            cfg.n_sim = 5;
            cfg.t_final = 0.2;
            cfg.dt = Some(dt);
            cfg.record_stride = usize::MAX;
            let tr = simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg).unwrap();
            tr.modal_states.last().unwrap().clone()
        };
        let dt = 4e-3;
        let reference = run(dt / 4.0);
        let err = |s: Vec<f64>| {
            s.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(run(dt));
        let e2 = err(run(dt / 2.0));
        let ratio = e1 / e2;
        assert!(ratio > 10.0 && ratio < 24.0, "ratio {ratio} {e1:e} {e2:e}");
    }

    #[test]
    fn saturation_is_applied_exactly() {
        let (md, basis, real) = setup(reference_gains(), 12);
        let z0 = basis.grid().sample(|x| 8.5 * x * (1.0 - x));
        let mut cfg = SimulationConfig::new(z0);
        cfg.n_sim = 12;
        cfg.t_final = 2.0;
        let tr = simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg).unwrap();
        let sat = SaturationMap::new(vec![1.0, 2.0]).unwrap();
        let mut saturated = false;
        for (u, us) in tr.inputs.iter().zip(&tr.saturated_inputs) {
            assert_eq!(&sat.saturate(u), us);
            saturated |= u[0].abs() > 1.0;
        }
        assert!(saturated);
        let y0: f64 = tr.modal_states[0]
            .iter()
            .zip(&md.c_coeffs)
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(tr.outputs[0], y0);
    }

    #[test]
    fn stiffness_guard_and_degenerate_trace() {
        let (md, basis, real) = setup(reference_gains(), 12);
        let zero = vec![0.0; basis.grid().len()];
        let mut cfg = SimulationConfig::new(zero);
        cfg.n_sim = 12;
        cfg.dt = Some(1e-2);
        assert!(matches!(
            simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg),
            Err(Error::Config(_))
        ));
        cfg.dt = None;
        cfg.t_final = 0.01;
        let tr = simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg).unwrap();
        assert!(tr.l2_norm.iter().all(|v| *v == 0.0));
        cfg.n_sim = 4;
        assert!(matches!(
            simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fitted_rate_of_exponential() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * libm::exp(-0.7 * t)).collect();
        assert!((fitted_rate(&t, &y) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn h1_norm_of_single_mode() {
        let zero = Gains {
            k: DMatrix::zeros(2, 1),
            l: DVector::zeros(1),
        };
        let (md, basis, real) = setup(zero, 12);
        let z0 = basis.eigenfunction(1).to_vec();
        let mut cfg = SimulationConfig::new(z0);
        cfg.n_sim = 10;
        cfg.t_final = 1e-3;
        let tr = simulate(&md, &basis, &[1.0, 2.0], &real, None, &cfg).unwrap();
        // p = 1, q = 1: ‖φ'‖² = λ - 1.
        let expected = libm::sqrt(md.eigenvalues[1]);
        assert!((tr.h1_norm[0] - expected).abs() < 1e-4 * expected);
    }
}
