//! Matrix-inequality certificates for the saturated closed loop and the
//! shaping of the attraction estimate.
//!
//! With `α` and `T0` fixed, the substitution `C̃ = τC`, `μ̃ = τ²μ`,
//! `T = τT0` turns every constraint into an LMI in
//! `(P, β, γ, τ, C̃, μ̃)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::controller::ControllerRealization;
use crate::linalg::{max_eigenvalue, min_eigenvalue};
use crate::sdp::{
    self, read_full, read_scalar, read_symmetric, AffineLmiSystem, SdpOutcome, Sense,
    SolverOptions, VarHandle, VariableLayout,
};
use crate::spectral::{MeasurementMode, ModalData, DEFAULT_EPSILON};
use crate::{Error, Result};

/// Tolerance of the final re-verification.
pub const VERIFY_TOLERANCE: f64 = 1e-7;
/// Margin imposed on the strict inequalities inside the solver.
pub const STRICT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TheoremTag {
    /// L² decay, bounded sensing.
    Thm1,
    /// H¹ decay, bounded sensing.
    Thm2,
    /// Dirichlet trace sensing `y = z(t, 0)`.
    Thm3,
    /// Neumann trace sensing `y = z_x(t, 0)`.
    Thm4,
}

impl TheoremTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::Thm1 => "thm1",
            Self::Thm2 => "thm2",
            Self::Thm3 => "thm3",
            Self::Thm4 => "thm4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "thm1" => Some(Self::Thm1),
            "thm2" => Some(Self::Thm2),
            "thm3" => Some(Self::Thm3),
            "thm4" => Some(Self::Thm4),
            _ => None,
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Self::Thm1 => 1.0,
            _ => 2.0,
        }
    }

    pub fn accepts(self, mode: MeasurementMode) -> bool {
        matches!(
            (self, mode),
            (Self::Thm1 | Self::Thm2, MeasurementMode::Bounded)
                | (Self::Thm3, MeasurementMode::DirichletLeft)
                | (Self::Thm4, MeasurementMode::NeumannLeft)
        )
    }

    /// Tail terms are weighted by `λ_n` (H¹-type functional).
    pub fn uses_h1_tail(self) -> bool {
        self != Self::Thm1
    }
}

/// Options fixing the non-convex parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemOptions {
    pub kappa: f64,
    pub alpha: Option<f64>,
    pub t0: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            alpha: None,
            t0: None,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateProblem {
    pub tag: TheoremTag,
    pub realization: ControllerRealization,
    pub kappa: f64,
    pub alpha: f64,
    /// Diagonal of `T0`.
    pub t0: Vec<f64>,
    pub epsilon: Option<f64>,
    pub levels: Vec<f64>,
    /// `Σ_k ‖R_N b_k‖²`.
    pub residual_b_total: f64,
    pub residual_c_sq: Option<f64>,
    pub tail_m1: Option<f64>,
    pub tail_m2: Option<f64>,
}

impl CertificateProblem {
    pub fn new(
        tag: TheoremTag,
        realization: ControllerRealization,
        modal: &ModalData,
        levels: &[f64],
        options: &ProblemOptions,
    ) -> Result<Self> {
        let m = realization.input_count();
        let n = realization.n;
        if !tag.accepts(realization.mode) {
            return Err(Error::InvalidInput(format!(
                "{} does not apply to {} sensing",
                tag.name(),
                realization.mode.name()
            )));
        }
        let alpha = options.alpha.unwrap_or(tag.default_alpha());
        let alpha_ok = match tag {
            TheoremTag::Thm1 => alpha > 0.0,
            _ => alpha > 1.0,
        };
        if !alpha_ok {
            return Err(Error::InvalidInput(format!(
                "alpha = {alpha} violates the lower bound of {}",
                tag.name()
            )));
        }
        if !(options.kappa >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "kappa = {} must be >= 0",
                options.kappa
            )));
        }
        let t0 = options.t0.clone().unwrap_or_else(|| vec![1.0; m]);
        if t0.len() != m || t0.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput(
                "T0 must be a positive diagonal of length m".into(),
            ));
        }
        if levels.len() != m {
            return Err(Error::Dimension(format!(
                "{} levels for {m} inputs",
                levels.len()
            )));
        }
        if tag.uses_h1_tail() && !(modal.eigenvalues[0] > 0.0) {
            return Err(Error::InvalidInput(
                "H¹-type certificates need q > 0 (first eigenvalue must be positive)".into(),
            ));
        }
        let epsilon = match tag {
            TheoremTag::Thm4 => {
                let eps = options.epsilon.ok_or_else(|| {
                    Error::MissingParameter("epsilon is required for thm4".into())
                })?;
                if !(eps > 0.0 && eps <= 0.5) {
                    return Err(Error::OutOfRange(format!(
                        "epsilon = {eps} outside (0, 1/2]"
                    )));
                }
                Some(eps)
            }
            _ => None,
        };
        let residual_c_sq = modal.residual_c_sq.as_ref().map(|r| r[n]);
        let tail_m1 = modal.tail_m1.as_ref().map(|r| r[n]);
        let tail_m2 = match epsilon {
            Some(eps) => Some(
                modal.tail_m2_at(eps).ok_or_else(|| {
                    Error::MissingParameter(format!("no M2 table for epsilon = {eps}"))
                })?[n],
            ),
            None => None,
        };
        match tag {
            TheoremTag::Thm1 | TheoremTag::Thm2 if residual_c_sq.is_none() => {
                return Err(Error::MissingParameter("sensor residual norms".into()))
            }
            TheoremTag::Thm3 if tail_m1.is_none() => {
                return Err(Error::MissingParameter("tail constant M1".into()))
            }
            _ => {}
        }
        let problem = Self {
            tag,
            realization,
            kappa: options.kappa,
            alpha,
            t0,
            epsilon,
            levels: levels.to_vec(),
            residual_b_total: modal.residual_b_total(n),
            residual_c_sq,
            tail_m1,
            tail_m2,
        };
        if problem.lambda_next() <= problem.q_c() + problem.kappa {
            return Err(Error::InvalidInput(format!(
                "lambda_(N+1) = {} must exceed q_c + kappa",
                problem.lambda_next()
            )));
        }
        Ok(problem)
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self {
            kappa,
            ..self.clone()
        }
    }

    pub fn lambda_next(&self) -> f64 {
        self.realization.lambda_next()
    }

    pub fn q_c(&self) -> f64 {
        self.realization.q_c
    }

    pub fn n(&self) -> usize {
        self.realization.n
    }

    pub fn n0(&self) -> usize {
        self.realization.n0
    }

    pub fn m(&self) -> usize {
        self.realization.input_count()
    }

    fn t0_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.t0))
    }

    fn levels_sq(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), self.m(), |i, j| {
            if i == j {
                self.levels[i] * self.levels[i]
            } else {
                0.0
            }
        })
    }
}

fn mirror(upper: &mut DMatrix<f64>) {
    let n = upper.nrows();
    for i in 0..n {
        for j in 0..i {
            upper[(i, j)] = upper[(j, i)];
        }
    }
}

/// `Θ1(κ)` of size `2N + 1 + m`.
pub fn build_theta1(
    problem: &CertificateProblem,
    p: &DMatrix<f64>,
    beta: f64,
    gamma: f64,
    tau: f64,
    ctilde: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r = &problem.realization;
    let d = r.dim();
    let m = problem.m();
    let t0 = problem.t0_matrix();
    let weight = problem.alpha * gamma * problem.residual_b_total;
    let t11 = r.f.transpose() * p
        + p * &r.f
        + p * (2.0 * problem.kappa)
        + r.ktilde.transpose() * &r.ktilde * weight;
    let t12 = p * &r.lcal;
    let t13 = -(r.emat.transpose() * ctilde.transpose() * &t0) + p * &r.lphi;
    let t33 = DMatrix::identity(m, m) * weight - &t0 * (2.0 * tau);
    let mut out = DMatrix::zeros(d + 1 + m, d + 1 + m);
    out.view_mut((0, 0), (d, d)).copy_from(&t11);
    out.view_mut((0, d), (d, 1)).copy_from(&t12);
    out.view_mut((0, d + 1), (d, m)).copy_from(&t13);
    out[(d, d)] = -beta;
    out.view_mut((d + 1, d + 1), (m, m)).copy_from(&t33);
    mirror(&mut out);
    out
}

/// `Θ̃2 = [[P, Eᵀ(τK - C̃)ᵀ], [(τK - C̃)E, μ̃ diag(ℓ)²]]`.
pub fn build_theta2(
    problem: &CertificateProblem,
    p: &DMatrix<f64>,
    tau: f64,
    ctilde: &DMatrix<f64>,
    mu_tilde: f64,
) -> DMatrix<f64> {
    let coupling = (&problem.realization.gains.k * tau - ctilde) * &problem.realization.emat;
    theta2_blocks(p, &coupling, problem.levels_sq() * mu_tilde)
}

/// `Θ2 = [[P, Eᵀ(K - C)ᵀ], [(K - C)E, μ diag(ℓ)²]]` in the original variables.
pub fn build_theta2_original(
    problem: &CertificateProblem,
    p: &DMatrix<f64>,
    c: &DMatrix<f64>,
    mu: f64,
) -> DMatrix<f64> {
    let coupling = (&problem.realization.gains.k - c) * &problem.realization.emat;
    theta2_blocks(p, &coupling, problem.levels_sq() * mu)
}

fn theta2_blocks(p: &DMatrix<f64>, coupling: &DMatrix<f64>, corner: DMatrix<f64>) -> DMatrix<f64> {
    let d = p.nrows();
    let m = corner.nrows();
    let mut out = DMatrix::zeros(d + m, d + m);
    out.view_mut((0, 0), (d, d)).copy_from(p);
    out.view_mut((0, d), (d, m))
        .copy_from(&coupling.transpose());
    out.view_mut((d, d), (m, m)).copy_from(&corner);
    mirror(&mut out);
    out
}

/// Scalar tail condition `Θ3(κ)`.
pub fn build_theta3(problem: &CertificateProblem, gamma: f64, beta: f64) -> f64 {
    let lam = problem.lambda_next();
    let qc = problem.q_c();
    let k = problem.kappa;
    let a = problem.alpha;
    match problem.tag {
        TheoremTag::Thm1 => {
            2.0 * gamma * (-lam + qc + k + 1.0 / a) + beta * problem.residual_c_sq.unwrap_or(0.0)
        }
        TheoremTag::Thm2 => {
            2.0 * gamma * (-(1.0 - 1.0 / a) * lam + qc + k)
                + beta * problem.residual_c_sq.unwrap_or(0.0) / lam
        }
        TheoremTag::Thm3 => {
            2.0 * gamma * (-(1.0 - 1.0 / a) * lam + qc + k) + beta * problem.tail_m1.unwrap_or(0.0)
        }
        TheoremTag::Thm4 => {
            let eps = problem.epsilon.unwrap_or(DEFAULT_EPSILON);
            2.0 * gamma * (-(1.0 - 1.0 / a) * lam + qc + k)
                + beta * problem.tail_m2.unwrap_or(0.0) * libm::pow(lam, 0.5 + eps)
        }
    }
}

/// `Θ4 = 2γ(1 - 1/α) - β M2(ε) / λ_{N+1}^{1/2-ε}` (Neumann trace only).
pub fn build_theta4(problem: &CertificateProblem, gamma: f64, beta: f64) -> Result<f64> {
    let eps = problem
        .epsilon
        .ok_or_else(|| Error::MissingParameter("Θ4 needs epsilon".into()))?;
    if problem.tag != TheoremTag::Thm4 {
        return Err(Error::InvalidInput("Θ4 only exists for thm4".into()));
    }
    Ok(2.0 * gamma * (1.0 - 1.0 / problem.alpha)
        - beta * problem.tail_m2.unwrap_or(0.0) / libm::pow(problem.lambda_next(), 0.5 - eps))
}

/// Worst-case value of each constraint at a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// Largest eigenvalue of `Θ1(κ)` (must be ≤ 0).
    pub theta1_max: f64,
    /// Smallest eigenvalue of `Θ2` in the recovered `(C, μ)` (must be ≥ 0).
    pub theta2_min: f64,
    /// `Θ3(κ)` (must be ≤ 0).
    pub theta3: f64,
    /// `Θ4` for thm4 (must be ≥ 0).
    pub theta4: Option<f64>,
    pub p_min: f64,
}

impl Residuals {
    pub fn passes(&self, tol: f64) -> bool {
        self.theta1_max <= tol
            && self.theta2_min >= -tol
            && self.theta3 <= tol
            && self.theta4.is_none_or(|t| t >= -tol)
            && self.p_min > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateSolution {
    pub tag: TheoremTag,
    pub n0: usize,
    pub n: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub epsilon: Option<f64>,
    pub t0: Vec<f64>,
    pub p: DMatrix<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub tau: f64,
    /// `C` (`m × N0`).
    pub cmat: DMatrix<f64>,
    pub residuals: Residuals,
}

impl CertificateSolution {
    pub fn t_diag(&self) -> Vec<f64> {
        self.t0.iter().map(|t| t * self.tau).collect()
    }

    pub fn ctilde(&self) -> DMatrix<f64> {
        &self.cmat * self.tau
    }

    pub fn mu_tilde(&self) -> f64 {
        self.mu * self.tau * self.tau
    }

    /// `[[P22, P24], [P42, P44]]`, the error-coordinate block.
    pub fn error_block(&self) -> DMatrix<f64> {
        let n0 = self.n0;
        let n = self.n;
        let idx: Vec<usize> = (n0..2 * n0).chain(n + n0..2 * n).collect();
        DMatrix::from_fn(n, n, |i, j| self.p[(idx[i], idx[j])])
    }

    /// `blkdiag([[P22, P24], [P42, P44]], γ)`.
    pub fn shaping_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n + 1, self.n + 1);
        m.view_mut((0, 0), (self.n, self.n))
            .copy_from(&self.error_block());
        m[(self.n, self.n)] = self.gamma;
        m
    }
}

/// Evaluates every constraint of `problem` at `sol` (with `sol.kappa` ignored
/// in favour of `problem.kappa`).
pub fn evaluate(problem: &CertificateProblem, sol: &CertificateSolution) -> Residuals {
    let ct = sol.ctilde();
    let th1 = build_theta1(problem, &sol.p, sol.beta, sol.gamma, sol.tau, &ct);
    let th2 = build_theta2_original(problem, &sol.p, &sol.cmat, sol.mu);
    Residuals {
        theta1_max: max_eigenvalue(&th1),
        theta2_min: min_eigenvalue(&th2),
        theta3: build_theta3(problem, sol.gamma, sol.beta),
        theta4: build_theta4(problem, sol.gamma, sol.beta).ok(),
        p_min: min_eigenvalue(&sol.p),
    }
}

/// Infeasibility evidence: the phase-I slack (not a proof).
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleReport {
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FeasibilityOutcome {
    Feasible(CertificateSolution),
    Infeasible(InfeasibleReport),
}

impl FeasibilityOutcome {
    pub fn solution(self) -> Option<CertificateSolution> {
        match self {
            Self::Feasible(s) => Some(s),
            Self::Infeasible(_) => None,
        }
    }
}

/// Which decision variable is frozen.
#[derive(Debug, Clone, PartialEq)]
enum Frozen {
    Nothing,
    Tau(f64),
    C(DMatrix<f64>),
}

struct Handles {
    p: VarHandle,
    beta: VarHandle,
    gamma: VarHandle,
    tau: Option<VarHandle>,
    ctilde: Option<VarHandle>,
    mu_tilde: Option<VarHandle>,
    r: Option<VarHandle>,
}

struct Decision {
    p: DMatrix<f64>,
    beta: f64,
    gamma: f64,
    tau: f64,
    ctilde: DMatrix<f64>,
    mu_tilde: f64,
}

impl Handles {
    fn read(&self, x: &[f64], frozen: &Frozen, mu: Option<f64>) -> Decision {
        let tau = match frozen {
            Frozen::Tau(t) => *t,
            _ => read_scalar(x, self.tau.expect("tau is a variable")),
        };
        let ctilde = match frozen {
            Frozen::C(c) => c * tau,
            _ => read_full(x, self.ctilde.expect("C̃ is a variable")),
        };
        let mu_tilde = match (self.mu_tilde, mu) {
            (Some(h), _) => read_scalar(x, h),
            (None, Some(mu)) => mu * tau * tau,
            (None, None) => unreachable!("mu must be fixed when not a variable"),
        };
        Decision {
            p: read_symmetric(x, self.p),
            beta: read_scalar(x, self.beta),
            gamma: read_scalar(x, self.gamma),
            tau,
            ctilde,
            mu_tilde,
        }
    }
}

/// Assembles the LMI system. With `shaping = Some((R, μ))` the variable `r`
/// and the inclusion `𝒫 ⪯ (r/μ) R` are added and `r` is minimised.
fn assemble(
    problem: &CertificateProblem,
    frozen: &Frozen,
    shaping: Option<(&DMatrix<f64>, f64)>,
) -> Result<(AffineLmiSystem, Handles)> {
    let d = problem.realization.dim();
    let (m, n0, n) = (problem.m(), problem.n0(), problem.n());
    let mut layout = VariableLayout::new();
    let p = layout.symmetric("P", d);
    let beta = layout.scalar("beta");
    let gamma = layout.scalar("gamma");
    let tau = (!matches!(frozen, Frozen::Tau(_))).then(|| layout.scalar("tau"));
    let ctilde = (!matches!(frozen, Frozen::C(_))).then(|| layout.full("Ctilde", m, n0));
    let mu_tilde = shaping.is_none().then(|| layout.scalar("mu_tilde"));
    let r = shaping.map(|_| layout.scalar("r"));
    let h = Handles {
        p,
        beta,
        gamma,
        tau,
        ctilde,
        mu_tilde,
        r,
    };
    let mu = shaping.map(|(_, mu)| mu);
    let mut sys = AffineLmiSystem::new(layout);
    let eps = STRICT_MARGIN;
    let dim1 = d + 1 + m;
    sys.add("Theta1", Sense::NegativeSemidefinite, |x| {
        let v = h.read(x, frozen, mu);
        build_theta1(problem, &v.p, v.beta, v.gamma, v.tau, &v.ctilde)
            + DMatrix::identity(dim1, dim1) * eps
    })?;
    match (frozen, mu) {
        (Frozen::C(c), Some(mu)) => {
            sys.add("Theta2", Sense::PositiveSemidefinite, |x| {
                build_theta2_original(problem, &read_symmetric(x, p), c, mu)
            })?;
        }
        _ => {
            sys.add("Theta2", Sense::PositiveSemidefinite, |x| {
                let v = h.read(x, frozen, mu);
                build_theta2(problem, &v.p, v.tau, &v.ctilde, v.mu_tilde)
            })?;
        }
    }
    sys.add_scalar("Theta3", Sense::NegativeSemidefinite, |x| {
        build_theta3(problem, read_scalar(x, gamma), read_scalar(x, beta)) + eps
    })?;
    if problem.tag == TheoremTag::Thm4 {
        sys.add_scalar("Theta4", Sense::PositiveSemidefinite, |x| {
            build_theta4(problem, read_scalar(x, gamma), read_scalar(x, beta)).unwrap_or(0.0)
        })?;
    }
    sys.add("P", Sense::PositiveSemidefinite, |x| {
        read_symmetric(x, p) - DMatrix::identity(d, d) * eps
    })?;
    sys.add_scalar("beta", Sense::PositiveSemidefinite, |x| {
        read_scalar(x, beta) - eps
    })?;
    sys.add_scalar("gamma", Sense::PositiveSemidefinite, |x| {
        read_scalar(x, gamma) - eps
    })?;
    if let Some(t) = tau {
        sys.add_scalar("tau", Sense::PositiveSemidefinite, |x| {
            read_scalar(x, t) - eps
        })?;
    }
    if let Some(mt) = mu_tilde {
        sys.add_scalar("mu_tilde", Sense::PositiveSemidefinite, |x| {
            read_scalar(x, mt) - eps
        })?;
    }
    if let (Some((rmat, mu)), Some(rh)) = (shaping, r) {
        if rmat.nrows() != n + 1 || rmat.ncols() != n + 1 {
            return Err(Error::Dimension(format!(
                "R must be {}x{}, got {}x{}",
                n + 1,
                n + 1,
                rmat.nrows(),
                rmat.ncols()
            )));
        }
        let idx: Vec<usize> = (n0..2 * n0).chain(n + n0..2 * n).collect();
        sys.add("inclusion", Sense::PositiveSemidefinite, |x| {
            let pm = read_symmetric(x, p);
            let mut shaping = DMatrix::zeros(n + 1, n + 1);
            for i in 0..n {
                for j in 0..n {
                    shaping[(i, j)] = pm[(idx[i], idx[j])];
                }
            }
            shaping[(n, n)] = read_scalar(x, gamma);
            rmat * (read_scalar(x, rh) / mu) - shaping
        })?;
        sys.minimize(|x| read_scalar(x, rh));
    }
    Ok((sys, h))
}

fn solution_from(
    problem: &CertificateProblem,
    v: Decision,
    mu: f64,
) -> Result<CertificateSolution> {
    let mut sol = CertificateSolution {
        tag: problem.tag,
        n0: problem.n0(),
        n: problem.n(),
        alpha: problem.alpha,
        kappa: problem.kappa,
        epsilon: problem.epsilon,
        t0: problem.t0.clone(),
        cmat: &v.ctilde / v.tau,
        p: v.p,
        beta: v.beta,
        gamma: v.gamma,
        mu,
        tau: v.tau,
        residuals: Residuals {
            theta1_max: 0.0,
            theta2_min: 0.0,
            theta3: 0.0,
            theta4: None,
            p_min: 0.0,
        },
    };
    sol.residuals = evaluate(problem, &sol);
    if !sol.residuals.passes(VERIFY_TOLERANCE) {
        return Err(Error::NumericalFailure(format!(
            "returned point fails re-verification: {:?}",
            sol.residuals
        )));
    }
    Ok(sol)
}

/// Solves the strict system at `problem.kappa` over `(P, β, γ, μ̃, τ, C̃)`.
///
/// The returned certificate is normalised so that `λ_max(P) = 1`.
pub fn solve_feasibility(
    problem: &CertificateProblem,
    options: &SolverOptions,
) -> Result<FeasibilityOutcome> {
    let (sys, h) = assemble(problem, &Frozen::Nothing, None)?;
    match sdp::solve(&sys, options)? {
        SdpOutcome::Infeasible { slack } => {
            Ok(FeasibilityOutcome::Infeasible(InfeasibleReport { slack }))
        }
        SdpOutcome::Feasible(s) => {
            let mut v = h.read(&s.x, &Frozen::Nothing, None);
            let scale = 1.0 / max_eigenvalue(&v.p);
            v.p *= scale;
            v.beta *= scale;
            v.gamma *= scale;
            v.tau *= scale;
            v.ctilde *= scale;
            v.mu_tilde *= scale;
            let mu = v.mu_tilde / (v.tau * v.tau);
            solution_from(problem, v, mu).map(FeasibilityOutcome::Feasible)
        }
    }
}

/// Largest `κ ∈ [0, κ_max]` for which the fixed decision variables of `sol`
/// still satisfy `Θ1(κ) ⪯ 0` and `Θ3(κ) ≤ 0`.
pub fn certified_kappa(
    problem: &CertificateProblem,
    sol: &CertificateSolution,
    kappa_max: f64,
) -> f64 {
    let ok = |k: f64| {
        let pr = problem.with_kappa(k);
        let th1 = build_theta1(&pr, &sol.p, sol.beta, sol.gamma, sol.tau, &sol.ctilde());
        max_eigenvalue(&th1) <= 0.0 && build_theta3(&pr, sol.gamma, sol.beta) <= 0.0
    };
    if !ok(0.0) {
        return 0.0;
    }
    if ok(kappa_max) {
        return kappa_max;
    }
    let (mut lo, mut hi) = (0.0, kappa_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Strict `κ = 0` solve followed by bisection of `κ` on `[0, δ]` with
/// re-solves. The returned certificate carries the largest feasible `κ`.
pub fn maximize_kappa(
    problem: &CertificateProblem,
    options: &SolverOptions,
    bisection_steps: usize,
) -> Result<FeasibilityOutcome> {
    let base = problem.with_kappa(0.0);
    let mut best = match solve_feasibility(&base, options)? {
        FeasibilityOutcome::Feasible(s) => s,
        infeasible => return Ok(infeasible),
    };
    let delta = problem.realization.delta;
    let mut lo = 0.0;
    let mut hi = delta;
    if let FeasibilityOutcome::Feasible(s) = solve_feasibility(&problem.with_kappa(delta), options)?
    {
        return Ok(FeasibilityOutcome::Feasible(s));
    }
    for _ in 0..bisection_steps {
        let mid = 0.5 * (lo + hi);
        match solve_feasibility(&problem.with_kappa(mid), options)? {
            FeasibilityOutcome::Feasible(s) => {
                lo = mid;
                best = s;
            }
            FeasibilityOutcome::Infeasible(_) => hi = mid,
        }
    }
    Ok(FeasibilityOutcome::Feasible(best))
}

/// Outcome of an `N` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNReport {
    pub found: Option<(usize, CertificateSolution)>,
    /// `(N, phase-I slack)` of every infeasible order tried.
    pub rejected: Vec<(usize, f64)>,
}

/// Smallest `N` in `range` whose strict `κ = 0` system is feasible.
pub fn find_min_n(
    template: impl Fn(usize) -> Result<CertificateProblem>,
    range: core::ops::RangeInclusive<usize>,
    options: &SolverOptions,
) -> Result<MinNReport> {
    let mut rejected = Vec::new();
    for n in range {
        let problem = template(n)?.with_kappa(0.0);
        match solve_feasibility(&problem, options)? {
            FeasibilityOutcome::Feasible(s) => {
                return Ok(MinNReport {
                    found: Some((n, s)),
                    rejected,
                })
            }
            FeasibilityOutcome::Infeasible(r) => rejected.push((n, r.slack)),
        }
    }
    Ok(MinNReport {
        found: None,
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedVariable {
    T,
    C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingStep {
    pub iteration: usize,
    pub fixed: FixedVariable,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingResult {
    pub r: f64,
    pub history: Vec<ShapingStep>,
    pub solution: CertificateSolution,
}

/// Relative `r` improvement over one full T/C cycle below which the
/// alternation stops.
pub const SHAPING_TOLERANCE: f64 = 1e-3;

/// Alternating minimisation of `r` subject to `𝒫 ⪯ (r/μ) R`, with `α`, `μ`
/// frozen at the base certificate. Odd steps freeze `τ`, even steps freeze
/// `C`; each step is warm-started from the previous certificate.
pub fn minimize_r(
    problem: &CertificateProblem,
    base: &CertificateSolution,
    r_matrix: &DMatrix<f64>,
    max_iters: usize,
    options: &SolverOptions,
) -> Result<ShapingResult> {
    let n = problem.n();
    if r_matrix.nrows() != n + 1 || r_matrix.ncols() != n + 1 {
        return Err(Error::Dimension(format!("R must be {}x{}", n + 1, n + 1)));
    }
    if r_matrix.clone().cholesky().is_none() {
        return Err(Error::InvalidInput("R must be positive definite".into()));
    }
    if !base.residuals.passes(VERIFY_TOLERANCE) {
        return Err(Error::Infeasible("base certificate does not verify".into()));
    }
    let mu = base.mu;
    let mut history: Vec<ShapingStep> = Vec::new();
    let mut current = base.clone();
    for step in 0..max_iters {
        let fixed = if step % 2 == 0 {
            FixedVariable::T
        } else {
            FixedVariable::C
        };
        let frozen = match fixed {
            FixedVariable::T => Frozen::Tau(current.tau),
            FixedVariable::C => Frozen::C(current.cmat.clone()),
        };
        let (sys, h) = assemble(problem, &frozen, Some((r_matrix, mu)))?;
        let mut opts = options.clone();
        opts.initial_point = Some(warm_point(&sys, &h, &current, &frozen, r_matrix));
        let s = match sdp::solve(&sys, &opts)? {
            SdpOutcome::Feasible(s) => s,
            SdpOutcome::Infeasible { slack } => {
                return Err(Error::NumericalFailure(format!(
                    "shaping step {} lost feasibility (slack {slack:e})",
                    step + 1
                )))
            }
        };
        let v = h.read(&s.x, &frozen, Some(mu));
        let sol = solution_from(problem, v, mu)?;
        let r = required_r(&sol, r_matrix)
            .ok_or_else(|| Error::NumericalFailure("shaping matrix factorisation failed".into()))?;
        let prev = history.last().map(|s| s.r);
        let r = match prev {
            Some(p) if r > p => p,
            _ => {
                current = sol;
                r
            }
        };
        history.push(ShapingStep {
            iteration: step + 1,
            fixed,
            r,
        });
        let k = history.len();
        if k >= 3 && history[k - 3].r - r <= SHAPING_TOLERANCE * history[k - 3].r {
            break;
        }
    }
    let r = history
        .last()
        .map(|s| s.r)
        .ok_or_else(|| Error::InvalidInput("max_iters must be positive".into()))?;
    Ok(ShapingResult {
        r,
        history,
        solution: current,
    })
}

/// Decision vector of `sol` in the layout of `sys`, with `r` inflated so the
/// inclusion holds strictly.
fn warm_point(
    sys: &AffineLmiSystem,
    h: &Handles,
    sol: &CertificateSolution,
    frozen: &Frozen,
    r_matrix: &DMatrix<f64>,
) -> Vec<f64> {
    let mut x = vec![0.0; sys.n_vars()];
    sdp::write_symmetric(&mut x, h.p, &sol.p);
    sdp::write_scalar(&mut x, h.beta, sol.beta);
    sdp::write_scalar(&mut x, h.gamma, sol.gamma);
    let tau = match frozen {
        Frozen::Tau(t) => *t,
        _ => sol.tau,
    };
    if let Some(t) = h.tau {
        sdp::write_scalar(&mut x, t, tau);
    }
    if let Some(c) = h.ctilde {
        sdp::write_full(&mut x, c, &(&sol.cmat * tau));
    }
    if let Some(r) = h.r {
        let needed = required_r(sol, r_matrix);
        sdp::write_scalar(&mut x, r, needed.map_or(1.0, |v| 1.01 * v + 1e-9));
    }
    x
}

/// Smallest `r` with `𝒫 ⪯ (r/μ) R` for a fixed certificate.
pub fn required_r(sol: &CertificateSolution, r_matrix: &DMatrix<f64>) -> Option<f64> {
    let chol = r_matrix.clone().cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let s = &linv * sol.shaping_matrix() * linv.transpose();
    Some(sol.mu * max_eigenvalue(&s))
}

/// Explanation string for an infeasible sweep.
pub fn describe_sweep(report: &MinNReport) -> String {
    let mut s = String::new();
    for (n, slack) in &report.rejected {
        s.push_str(&format!("N = {n}: phase-I slack {slack:.3e}\n"));
    }
    s
}
