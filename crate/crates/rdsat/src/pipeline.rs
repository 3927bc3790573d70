//! Pipeline stages. Each stage reads the config plus upstream artifacts from
//! the output directory and writes its own artifacts and manifest table.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rdsat_core::attraction::{inscribed_ball_check, AttractionEllipsoid, Membership};
use rdsat_core::controller::{
    assemble_closed_loop, determine_n0, leading_blocks, synthesize_gains, ControllerRealization,
    GainStrategy, Gains,
};
use rdsat_core::lmi::{
    certified_kappa, describe_sweep, find_min_n, maximize_kappa, minimize_r, required_r,
    solve_feasibility, CertificateProblem, CertificateSolution, FeasibilityOutcome, ProblemOptions,
    TheoremTag, VERIFY_TOLERANCE,
};
use rdsat_core::sdp::SolverOptions;
use rdsat_core::sim::{check_decay, simulate, SimulationConfig, SimulationTrace};
use rdsat_core::spectral::{project_modes_with, ModalData};
use rdsat_core::sturm_liouville::{check_eigenvalue_bounds, solve_eigenproblem, SpectralBasis};
use toml::{Table, Value};

use crate::artifacts::{self as art, ArtifactError, Manifest};
use crate::config::{ConfigError, KappaSetting, LoadedConfig, OrderSetting, Scenario};
use crate::expr::Expr;
use crate::plot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Eig,
    Project,
    Synth,
    Certify,
    Doa,
    Simulate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Eig,
        Stage::Project,
        Stage::Synth,
        Stage::Certify,
        Stage::Doa,
        Stage::Simulate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Eig => "eig",
            Stage::Project => "project",
            Stage::Synth => "synth",
            Stage::Certify => "certify",
            Stage::Doa => "doa",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Dependency,
    Infeasible,
    Numerical,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Validation | Self::Dependency | Self::Io => 2,
            Self::Infeasible => 3,
            Self::Numerical => 4,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Validation => "validation error",
            Self::Dependency => "stage dependency error",
            Self::Infeasible => "infeasible",
            Self::Numerical => "numerical failure",
            Self::Io => "i/o error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub stage: Option<Stage>,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    fn new(stage: Stage, kind: FailureKind, message: impl Into<String>) -> Self {
        Self {
            stage: Some(stage),
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "[{s}] {}: {}", self.kind.label(), self.message),
            None => write!(f, "{}: {}", self.kind.label(), self.message),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self {
            stage: None,
            kind: FailureKind::Validation,
            message: e.to_string(),
        }
    }
}

type Res<T> = Result<T, PipelineError>;

fn core_err(stage: Stage) -> impl Fn(rdsat_core::Error) -> PipelineError {
    move |e| {
        use rdsat_core::Error as E;
        let kind = match e {
            E::Infeasible(_) => FailureKind::Infeasible,
            E::NumericalFailure(_) | E::Degenerate(_) => FailureKind::Numerical,
            _ => FailureKind::Validation,
        };
        PipelineError::new(stage, kind, e.to_string())
    }
}

/// Stage that writes the artifact at `path`.
fn producer(path: &Path) -> &'static str {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    match name {
        art::BASIS | art::EIGENFUNCTIONS | art::MANIFEST => "eig",
        art::MODES | art::TAILS => "project",
        art::GAINS => "synth",
        n if n.starts_with("doa_") || n.ends_with("_doa.txt") => "doa",
        n if n.starts_with("certificate_") => "certify",
        _ => "the upstream stage",
    }
}

fn art_err(stage: Stage) -> impl Fn(ArtifactError) -> PipelineError {
    move |e| match e {
        ArtifactError::Missing(p) => PipelineError::new(
            stage,
            FailureKind::Dependency,
            format!(
                "missing artifact {}; run `{}` first",
                p.display(),
                producer(&p)
            ),
        ),
        ArtifactError::Malformed { .. } => {
            PipelineError::new(stage, FailureKind::Dependency, e.to_string())
        }
        ArtifactError::Io { .. } => PipelineError::new(stage, FailureKind::Io, e.to_string()),
    }
}

/// `x` with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        format!("{:.*}", (5 - e).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn float(x: f64) -> Value {
    Value::Float(x)
}

fn int(x: usize) -> Value {
    Value::Integer(x as i64)
}

/// Earliest recorded time after which `y` never increases.
pub fn monotone_from(times: &[f64], y: &[f64]) -> f64 {
    let mut k = y.len().saturating_sub(1);
    while k > 0 && y[k] <= y[k - 1] {
        k -= 1;
    }
    times.get(k).copied().unwrap_or(0.0)
}

pub struct Pipeline {
    pub config: LoadedConfig,
    pub out: PathBuf,
    pub verbose: bool,
    pub solver: SolverOptions,
}

impl Pipeline {
    pub fn new(config: LoadedConfig, out: Option<PathBuf>, verbose: bool) -> Self {
        let out = out.unwrap_or_else(|| config.scenario.out_dir.clone());
        Self {
            config,
            out,
            verbose,
            solver: SolverOptions::default(),
        }
    }

    fn scenario(&self) -> &Scenario {
        &self.config.scenario
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, stage: Stage) -> Res<Manifest> {
        Manifest::load(&self.out).map_err(art_err(stage))
    }

    fn save_stage(&self, stage: Stage, table: Table) -> Res<()> {
        let mut m = self.manifest(stage)?;
        m.set_stage(stage.name(), table);
        m.save(&self.out).map_err(art_err(stage))
    }

    fn stale(&self, stage: Stage, what: &str, upstream: &str) -> PipelineError {
        PipelineError::new(
            stage,
            FailureKind::Dependency,
            format!("{what} does not match the config; rerun `{upstream}`"),
        )
    }

    pub fn run_stage(&self, stage: Stage) -> Res<String> {
        let start = Instant::now();
        self.log(format!("[{stage}] start"));
        if stage != Stage::Report {
            art::ensure_dir(&self.out).map_err(art_err(stage))?;
        }
        let out = match stage {
            Stage::Eig => self.eig(),
            Stage::Project => self.project(),
            Stage::Synth => self.synth(),
            Stage::Certify => self.certify(),
            Stage::Doa => self.doa(),
            Stage::Simulate => self.simulate(),
            Stage::Report => self.report(),
        }?;
        self.log(format!(
            "[{stage}] done in {:.2} s",
            start.elapsed().as_secs_f64()
        ));
        Ok(out)
    }

    /// Every stage the config enables, in order.
    pub fn run_all(&self) -> Res<String> {
        let mut text = String::new();
        for stage in Stage::ALL {
            let enabled = match stage {
                Stage::Doa => self.scenario().doa.is_some(),
                Stage::Simulate => self.scenario().simulation.is_some(),
                _ => true,
            };
            if enabled {
                text = self.run_stage(stage)?;
            }
        }
        Ok(text)
    }

    fn load_basis(&self, stage: Stage) -> Res<SpectralBasis> {
        let m = self.manifest(stage)?;
        let get = |k: &str| {
            m.number("eig", k).ok_or_else(|| {
                PipelineError::new(
                    stage,
                    FailureKind::Dependency,
                    "no eigen-solve recorded; run `eig` first",
                )
            })
        };
        let (theta1, theta2, max_residual) = (get("theta1")?, get("theta2")?, get("max_residual")?);
        let s = self.scenario();
        if theta1 != s.plant.theta1 || theta2 != s.plant.theta2 {
            return Err(self.stale(stage, "stored basis", "eig"));
        }
        let basis =
            art::read_basis(&self.out, theta1, theta2, max_residual).map_err(art_err(stage))?;
        if basis.grid().len() != s.grid_size || basis.n_max() != s.n_modes {
            return Err(self.stale(stage, "stored basis", "eig"));
        }
        Ok(basis)
    }

    fn load_modal(&self, stage: Stage) -> Res<ModalData> {
        let modal = art::read_modal(&self.out).map_err(art_err(stage))?;
        let s = self.scenario();
        if modal.mode != s.mode()
            || modal.n_max() != s.n_modes
            || modal.input_count() != s.plant.actuators.len()
        {
            return Err(self.stale(stage, "stored modal data", "project"));
        }
        Ok(modal)
    }

    fn load_gains(&self, stage: Stage, modal: &ModalData) -> Res<Gains> {
        let g = art::read_gains(&self.path(art::GAINS)).map_err(art_err(stage))?;
        if g.k.nrows() != modal.input_count() {
            return Err(self.stale(stage, "stored gains", "synth"));
        }
        Ok(g)
    }

    fn realization(
        &self,
        stage: Stage,
        modal: &ModalData,
        gains: &Gains,
        n: usize,
    ) -> Res<ControllerRealization> {
        let s = self.scenario();
        assemble_closed_loop(modal, gains, gains.l.len(), n, s.plant.q_c, s.delta)
            .map_err(core_err(stage))
    }

    fn problem_options(&self, tag: TheoremTag) -> ProblemOptions {
        let s = self.scenario();
        ProblemOptions {
            kappa: 0.0,
            alpha: s.alpha(tag),
            t0: s.t0.clone(),
            epsilon: (tag == TheoremTag::Thm4).then_some(s.epsilon),
        }
    }

    /// The problem a stored certificate solves.
    fn problem_for(
        &self,
        stage: Stage,
        sol: &CertificateSolution,
        modal: &ModalData,
        gains: &Gains,
    ) -> Res<CertificateProblem> {
        if sol.n0 != gains.l.len() {
            return Err(self.stale(stage, "certificate order N0", "certify"));
        }
        let r = self.realization(stage, modal, gains, sol.n)?;
        let opts = ProblemOptions {
            kappa: sol.kappa,
            alpha: Some(sol.alpha),
            t0: Some(sol.t0.clone()),
            epsilon: sol.epsilon,
        };
        CertificateProblem::new(sol.tag, r, modal, &self.scenario().plant.levels, &opts)
            .map_err(core_err(stage))
    }

    /// The shaped certificate when present, else the plain one.
    fn best_certificate(&self, stage: Stage, tag: TheoremTag) -> Res<(CertificateSolution, bool)> {
        let shaped = self.path(&art::shaped_certificate_file(tag));
        if shaped.exists() {
            return Ok((
                art::read_certificate(&shaped).map_err(art_err(stage))?,
                true,
            ));
        }
        let plain = art::read_certificate(&self.path(&art::certificate_file(tag)))
            .map_err(art_err(stage))?;
        Ok((plain, false))
    }

    fn eig(&self) -> Res<String> {
        let st = Stage::Eig;
        let s = self.scenario();
        let coeffs = s.plant.operator_coefficients().map_err(core_err(st))?;
        let basis = solve_eigenproblem(
            &coeffs,
            s.plant.theta1,
            s.plant.theta2,
            s.n_modes,
            s.grid_size,
        )
        .map_err(core_err(st))?;
        art::write_basis(&self.out, &basis).map_err(art_err(st))?;
        let bounds_ok =
            check_eigenvalue_bounds(&basis, coeffs.p_min(), coeffs.p_max(), coeffs.q_max());
        let l = basis.eigenvalues();
        let mut t = Table::new();
        t.insert("theta1".into(), float(s.plant.theta1));
        t.insert("theta2".into(), float(s.plant.theta2));
        t.insert("grid_size".into(), int(s.grid_size));
        t.insert("n_modes".into(), int(s.n_modes));
        t.insert("max_residual".into(), float(basis.max_residual()));
        t.insert(
            "extrapolated".into(),
            Value::Boolean(basis.is_extrapolated()),
        );
        t.insert("bounds_ok".into(), Value::Boolean(bounds_ok));
        t.insert("lambda_1".into(), float(l[0]));
        t.insert("lambda_max".into(), float(l[l.len() - 1]));
        t.insert("q_c".into(), float(s.plant.q_c));
        self.save_stage(st, t)?;

        let mut out = format!("eigenbasis: {} modes on {} nodes\n", s.n_modes, s.grid_size);
        for (i, v) in l.iter().take(6).enumerate() {
            let _ = writeln!(out, "  lambda_{} = {}", i + 1, sig6(*v));
        }
        let _ = writeln!(out, "  lambda_{} = {}", l.len(), sig6(l[l.len() - 1]));
        let _ = writeln!(
            out,
            "  spectral bounds: {}",
            if bounds_ok { "ok" } else { "VIOLATED" }
        );
        Ok(out)
    }

    fn project(&self) -> Res<String> {
        let st = Stage::Project;
        let s = self.scenario();
        let basis = self.load_basis(st)?;
        let modal = project_modes_with(&basis, &s.plant, &[s.epsilon]).map_err(core_err(st))?;
        art::write_modal(&self.out, &modal).map_err(art_err(st))?;
        let mut t = Table::new();
        t.insert("mode".into(), Value::String(modal.mode.name().into()));
        t.insert("n_max".into(), int(modal.n_max()));
        t.insert("inputs".into(), int(modal.input_count()));
        t.insert(
            "b_norm_sq".into(),
            Value::Array(modal.b_norm_sq.iter().map(|v| float(*v)).collect()),
        );
        if let Some(c) = modal.c_norm_sq {
            t.insert("c_norm_sq".into(), float(c));
        }
        self.save_stage(st, t)?;

        let mut out = format!(
            "projection: {} sensing, {} inputs\n",
            modal.mode.name(),
            modal.input_count()
        );
        let _ = writeln!(
            out,
            "  {:>3} {:>12} {:>12} {:>12}",
            "n", "lambda", "b_n1", "c_n"
        );
        for n in 0..modal.n_max().min(6) {
            let _ = writeln!(
                out,
                "  {:>3} {:>12} {:>12} {:>12}",
                n + 1,
                sig6(modal.eigenvalues[n]),
                sig6(modal.b_coeffs[(n, 0)]),
                sig6(modal.c_coeffs[n])
            );
        }
        Ok(out)
    }

    fn synth(&self) -> Res<String> {
        let st = Stage::Synth;
        let s = self.scenario();
        let modal = self.load_modal(st)?;
        let n0 = determine_n0(&modal.eigenvalues, s.plant.q_c, s.delta).map_err(core_err(st))?;
        let strategy = s
            .gain_strategy(n0, modal.input_count())
            .map_err(|m| PipelineError::from(self.config.error_at("controller.strategy", m)))?;
        let (a0, b0, c0) = leading_blocks(&modal, n0, s.plant.q_c).map_err(core_err(st))?;
        let (gains, report) =
            synthesize_gains(&a0, &b0, &c0, s.delta, &strategy).map_err(core_err(st))?;
        art::write_gains(&self.path(art::GAINS), &gains).map_err(art_err(st))?;
        let n = match s.order {
            OrderSetting::Fixed(n) => n,
            OrderSetting::Sweep(lo, _) => lo.unwrap_or(n0 + 1),
        };
        let summary = self.realization(st, &modal, &gains, n)?.summary();

        let strategy_name = match strategy {
            GainStrategy::UserSupplied(_) => "user",
            GainStrategy::PolePlacement { .. } => "pole-placement",
            GainStrategy::Riccati { .. } => "riccati",
        };
        let mut t = Table::new();
        t.insert("n0".into(), int(n0));
        t.insert("strategy".into(), Value::String(strategy_name.into()));
        t.insert(
            "controller_abscissa".into(),
            float(report.controller_abscissa),
        );
        t.insert("observer_abscissa".into(), float(report.observer_abscissa));
        t.insert("meets_delta".into(), Value::Boolean(report.meets_delta));
        if let Some(rho) = report.rho {
            t.insert("rho".into(), float(rho));
        }
        t.insert("n".into(), int(n));
        t.insert(
            "closed_loop_abscissa".into(),
            float(summary.closed_loop_abscissa),
        );
        t.insert("b1_norm".into(), float(summary.b1_norm));
        t.insert("c1_norm".into(), float(summary.c1_norm));
        self.save_stage(st, t)?;

        let fmt_row = |v: &[f64]| v.iter().map(|x| sig6(*x)).collect::<Vec<_>>().join(", ");
        let mut out = format!("gains ({strategy_name}): N0 = {n0}\n");
        for i in 0..gains.k.nrows() {
            let row: Vec<f64> = gains.k.row(i).iter().copied().collect();
            let _ = writeln!(out, "  K[{}] = [{}]", i + 1, fmt_row(&row));
        }
        let _ = writeln!(out, "  L = [{}]", fmt_row(gains.l.as_slice()));
        let _ = writeln!(
            out,
            "  abscissa A0+B0K = {}, A0-LC0 = {} (delta = {}, {})",
            sig6(report.controller_abscissa),
            sig6(report.observer_abscissa),
            sig6(s.delta),
            if report.meets_delta { "met" } else { "not met" }
        );
        let _ = writeln!(
            out,
            "  realization N = {n}: dim {}, abscissa(F) = {}, |B1| = {}, |C1| = {}",
            2 * n,
            sig6(summary.closed_loop_abscissa),
            sig6(summary.b1_norm),
            sig6(summary.c1_norm)
        );
        Ok(out)
    }

    fn certify(&self) -> Res<String> {
        let st = Stage::Certify;
        let s = self.scenario();
        let modal = self.load_modal(st)?;
        let gains = self.load_gains(st, &modal)?;
        let n0 = gains.l.len();
        let mut stage_table = Table::new();
        let mut out = String::from("certificates\n");
        let _ = writeln!(
            out,
            "  {:<5} {:>3} {:>12} {:>12} {:>13} {:>13} {:>12} {:>12} {:>12}",
            "thm",
            "N",
            "kappa",
            "kappa_cert",
            "max eig Th1",
            "min eig Th2",
            "Theta3",
            "Theta4",
            "mu"
        );
        for &tag in &s.theorems {
            let opts = self.problem_options(tag);
            let template = |n: usize| -> rdsat_core::Result<CertificateProblem> {
                let r = assemble_closed_loop(&modal, &gains, n0, n, s.plant.q_c, s.delta)?;
                CertificateProblem::new(tag, r, &modal, &s.plant.levels, &opts)
            };
            let infeasible = |msg: String| {
                PipelineError::new(
                    st,
                    FailureKind::Infeasible,
                    format!("{}: {msg}", tag.name()),
                )
            };
            let mut rejected = Vec::new();
            let (problem, found) = match s.order {
                OrderSetting::Fixed(n) => (template(n).map_err(core_err(st))?, None),
                OrderSetting::Sweep(lo, hi) => {
                    let lo = lo.unwrap_or(n0 + 1);
                    let hi = hi.unwrap_or(s.n_modes - 2);
                    self.log(format!(
                        "[{st}] {}: sweeping N over [{lo}, {hi}]",
                        tag.name()
                    ));
                    let report =
                        find_min_n(template, lo..=hi, &self.solver).map_err(core_err(st))?;
                    rejected = report.rejected.clone();
                    match report.found {
                        Some((n, sol)) => (template(n).map_err(core_err(st))?, Some(sol)),
                        None => return Err(infeasible(describe_sweep(&report))),
                    }
                }
            };
            let outcome = match (s.kappa, found) {
                (KappaSetting::Fixed(0.0), Some(sol)) => {
                    FeasibilityOutcome::Feasible(sol)
                }
                (KappaSetting::Fixed(k), _) => {
                    solve_feasibility(&problem.with_kappa(k), &self.solver).map_err(core_err(st))?
                }
                (KappaSetting::Maximize, _) => {
                    maximize_kappa(&problem, &self.solver, s.bisection_steps)
                        .map_err(core_err(st))?
                }
            };
            let sol = match outcome {
                FeasibilityOutcome::Feasible(sol) => sol,
                FeasibilityOutcome::Infeasible(r) => {
                    return Err(infeasible(format!(
                        "no certificate at N = {} (phase-I slack {:.3e})",
                        problem.n(),
                        r.slack
                    )))
                }
            };
            if !sol.residuals.passes(VERIFY_TOLERANCE) {
                return Err(PipelineError::new(
                    st,
                    FailureKind::Numerical,
                    format!(
                        "{} certificate fails re-verification: {:?}",
                        tag.name(),
                        sol.residuals
                    ),
                ));
            }
            let kappa_cert = certified_kappa(&problem, &sol, s.delta);
            art::write_certificate(&self.path(&art::certificate_file(tag)), &sol)
                .map_err(art_err(st))?;

            let r = &sol.residuals;
            let mut t = Table::new();
            t.insert("n".into(), int(sol.n));
            t.insert("n0".into(), int(sol.n0));
            t.insert("kappa".into(), float(sol.kappa));
            t.insert("certified_kappa".into(), float(kappa_cert));
            t.insert("alpha".into(), float(sol.alpha));
            if let Some(e) = sol.epsilon {
                t.insert("epsilon".into(), float(e));
            }
            t.insert("beta".into(), float(sol.beta));
            t.insert("gamma".into(), float(sol.gamma));
            t.insert("mu".into(), float(sol.mu));
            t.insert("tau".into(), float(sol.tau));
            t.insert("theta1_max".into(), float(r.theta1_max));
            t.insert("theta2_min".into(), float(r.theta2_min));
            t.insert("theta3".into(), float(r.theta3));
            if let Some(v) = r.theta4 {
                t.insert("theta4".into(), float(v));
            }
            t.insert("p_min".into(), float(r.p_min));
            if !rejected.is_empty() {
                t.insert(
                    "rejected_n".into(),
                    Value::Array(rejected.iter().map(|(n, _)| int(*n)).collect()),
                );
            }
            stage_table.insert(tag.name().into(), Value::Table(t));
            let _ = writeln!(
                out,
                "  {:<5} {:>3} {:>12} {:>12} {:>13} {:>13} {:>12} {:>12} {:>12}",
                tag.name(),
                sol.n,
                sig6(sol.kappa),
                sig6(kappa_cert),
                sig6(r.theta1_max),
                sig6(r.theta2_min),
                sig6(r.theta3),
                r.theta4.map_or("-".into(), sig6),
                sig6(sol.mu)
            );
        }
        self.save_stage(st, stage_table)?;
        Ok(out)
    }

    fn r_matrix(&self, n: usize) -> Res<DMatrix<f64>> {
        let key = if self
            .scenario()
            .doa
            .as_ref()
            .is_some_and(|d| d.r_diag.is_some())
        {
            "doa.r_diag"
        } else {
            "doa.r_matrix"
        };
        match self.scenario().r_matrix(n) {
            Some(Ok(r)) => Ok(r),
            Some(Err(m)) => Err(self.config.error_at(key, m).into()),
            None => Err(self
                .config
                .error_at("doa", "the config has no [doa] section")
                .into()),
        }
    }

    fn z0(&self, expr: &Expr, basis: &SpectralBasis) -> Vec<f64> {
        basis.grid().sample(|x| expr.eval(x))
    }

    fn doa(&self) -> Res<String> {
        let st = Stage::Doa;
        let s = self.scenario();
        let doa = s.doa.as_ref().ok_or_else(|| {
            PipelineError::from(
                self.config
                    .error_at("doa", "the config has no [doa] section"),
            )
        })?;
        let modal = self.load_modal(st)?;
        let gains = self.load_gains(st, &modal)?;
        let basis = match &s.simulation {
            Some(_) => Some(self.load_basis(st)?),
            None => None,
        };
        let mut stage_table = Table::new();
        let mut out = String::from("domain-of-attraction shaping\n");
        for &tag in &s.theorems {
            let base = art::read_certificate(&self.path(&art::certificate_file(tag)))
                .map_err(art_err(st))?;
            let problem = self.problem_for(st, &base, &modal, &gains)?;
            let r_mat = self.r_matrix(base.n)?;
            let r_base = required_r(&base, &r_mat).ok_or_else(|| {
                PipelineError::new(st, FailureKind::Numerical, "R is not positive definite")
            })?;
            let result = minimize_r(&problem, &base, &r_mat, doa.max_iters, &self.solver)
                .map_err(core_err(st))?;
            art::write_doa_log(&self.path(&art::doa_log_file(tag)), &result.history)
                .map_err(art_err(st))?;
            art::write_certificate(
                &self.path(&art::shaped_certificate_file(tag)),
                &result.solution,
            )
            .map_err(art_err(st))?;
            let ball =
                inscribed_ball_check(&result.solution, &r_mat, result.r).map_err(core_err(st))?;

            let r_initial = result.history[0].r;
            let mut t = Table::new();
            t.insert("r_base".into(), float(r_base));
            t.insert("r_initial".into(), float(r_initial));
            t.insert("r_final".into(), float(result.r));
            t.insert("steps".into(), int(result.history.len()));
            t.insert("ball_check".into(), Value::Boolean(ball));
            t.insert("mu".into(), float(result.solution.mu));
            let _ = writeln!(
                out,
                "  {}: r {} -> {} in {} steps (unshaped certificate {}, ball check {})",
                tag.name(),
                sig6(r_initial),
                sig6(result.r),
                result.history.len(),
                sig6(r_base),
                if ball { "ok" } else { "FAILED" }
            );
            if let (Some(sim), Some(basis)) = (&s.simulation, &basis) {
                let realization = self.realization(st, &modal, &gains, result.solution.n)?;
                let ell = AttractionEllipsoid::from_certificate(&result.solution, &realization)
                    .map_err(core_err(st))?;
                let m = ell
                    .membership(&self.z0(&sim.z0, basis), None, basis)
                    .map_err(core_err(st))?;
                t.insert("z0_value".into(), float(m.value));
                t.insert("z0_threshold".into(), float(m.threshold));
                t.insert("z0_inside".into(), Value::Boolean(m.inside));
                let _ = writeln!(
                    out,
                    "    z0 = {}: value {} vs 1/mu = {} -> {} {}",
                    sim.z0.text(),
                    sig6(m.value),
                    sig6(m.threshold),
                    if m.inside { "inside" } else { "outside" },
                    ell.kind.name()
                );
            }
            stage_table.insert(tag.name().into(), Value::Table(t));
        }
        self.save_stage(st, stage_table)?;
        Ok(out)
    }

    fn simulate(&self) -> Res<String> {
        let st = Stage::Simulate;
        let s = self.scenario();
        let sim = s.simulation.as_ref().ok_or_else(|| {
            PipelineError::from(
                self.config
                    .error_at("simulation", "the config has no [simulation] section"),
            )
        })?;
        let basis = self.load_basis(st)?;
        let modal = self.load_modal(st)?;
        let gains = self.load_gains(st, &modal)?;
        let certificate = match sim.certificate {
            Some(tag) => {
                let (sol, shaped) = self.best_certificate(st, tag)?;
                let problem = self.problem_for(st, &sol, &modal, &gains)?;
                let kappa = certified_kappa(&problem, &sol, s.delta);
                Some((CertificateSolution { kappa, ..sol }, shaped))
            }
            None => None,
        };
        let n = match (&certificate, s.order) {
            (Some((c, _)), _) => c.n,
            (None, OrderSetting::Fixed(n)) => n,
            (None, OrderSetting::Sweep(..)) => {
                return Err(self
                    .config
                    .error_at(
                        "simulation",
                        "without a certificate the simulation needs controller.n",
                    )
                    .into())
            }
        };
        let realization = self.realization(st, &modal, &gains, n)?;
        let z0 = self.z0(&sim.z0, &basis);
        let config = SimulationConfig {
            n_sim: sim.n_sim,
            dt: sim.dt,
            t_final: sim.t_final,
            z0,
            observer_ic: sim.observer_ic.clone(),
            record_stride: sim.record_stride,
        };
        let cert = certificate.as_ref().map(|(c, _)| c);
        let trace = simulate(&modal, &basis, &s.plant.levels, &realization, cert, &config)
            .map_err(core_err(st))?;
        art::write_trace(&self.path(art::TRACE), &trace).map_err(art_err(st))?;
        let plot_err = |e: String| PipelineError::new(st, FailureKind::Io, format!("plot: {e}"));
        plot::state_heatmap(&self.path("state.svg"), &trace, &basis).map_err(plot_err)?;
        plot::error_heatmap(&self.path("error.svg"), &trace, &basis).map_err(plot_err)?;
        plot::inputs(&self.path("inputs.svg"), &trace, &s.plant.levels).map_err(plot_err)?;

        let metrics = TraceMetrics::new(&trace, &s.plant.levels);
        let mut t = metrics.table();
        t.insert("n".into(), int(n));
        t.insert("n_sim".into(), int(sim.n_sim));
        t.insert("dt".into(), float(trace.dt));
        t.insert("samples".into(), int(trace.len()));
        let mut out = format!(
            "simulation: N = {n}, n_sim = {}, dt = {}, T = {}\n",
            sim.n_sim,
            sig6(trace.dt),
            sig6(sim.t_final)
        );
        out.push_str(&metrics.describe());
        if let Some((c, shaped)) = &certificate {
            let d = check_decay(&trace, c).map_err(core_err(st))?;
            t.insert("certificate".into(), Value::String(c.tag.name().into()));
            t.insert("shaped_certificate".into(), Value::Boolean(*shaped));
            t.insert("certified_kappa".into(), float(d.kappa));
            t.insert("max_decay_ratio".into(), float(d.max_ratio));
            t.insert("max_level".into(), float(d.max_level));
            t.insert("fitted_rate".into(), float(d.fitted_rate));
            let _ = writeln!(
                out,
                "  {} certificate: kappa = {}, max V(t)e^(2 kappa t)/V(0) = {}, max V mu = {}, fitted rate {}",
                c.tag.name(),
                sig6(d.kappa),
                sig6(d.max_ratio),
                sig6(d.max_level),
                sig6(d.fitted_rate)
            );
        }
        self.save_stage(st, t)?;
        Ok(out)
    }

    fn report(&self) -> Res<String> {
        let st = Stage::Report;
        let m = self.manifest(st)?;
        if m.stage("eig").is_none() {
            return Err(PipelineError::new(
                st,
                FailureKind::Dependency,
                "nothing to report; run `eig` first",
            ));
        }
        let text = render_report(&m, &self.scenario().theorems);
        art::write_text(&self.path(art::SUMMARY), &text).map_err(art_err(st))?;
        Ok(text)
    }

    /// Membership of candidate initial profiles in every available ellipsoid.
    pub fn member(&self, candidates: &[(String, Expr)]) -> Res<String> {
        let st = Stage::Doa;
        let s = self.scenario();
        let basis = self.load_basis(st)?;
        let modal = self.load_modal(st)?;
        let gains = self.load_gains(st, &modal)?;
        let mut out = format!(
            "{:<16} {:<5} {:<4} {:>12} {:>12}  verdict\n",
            "candidate", "thm", "set", "value", "1/mu"
        );
        for &tag in &s.theorems {
            let (sol, _) = self.best_certificate(st, tag)?;
            let realization = self.realization(st, &modal, &gains, sol.n)?;
            let ell =
                AttractionEllipsoid::from_certificate(&sol, &realization).map_err(core_err(st))?;
            for (name, expr) in candidates {
                let z = self.z0(expr, &basis);
                let line = match ell.membership(&z, None, &basis) {
                    Ok(Membership {
                        value,
                        threshold,
                        inside,
                    }) => format!(
                        "{:>12} {:>12}  {}",
                        sig6(value),
                        sig6(threshold),
                        if inside { "inside" } else { "outside" }
                    ),
                    Err(e) => format!("{:>12} {:>12}  rejected ({e})", "-", sig6(ell.threshold())),
                };
                let _ = writeln!(
                    out,
                    "{name:<16} {:<5} {:<4} {line}",
                    tag.name(),
                    ell.kind.name()
                );
            }
        }
        Ok(out)
    }
}

/// Scalar summaries of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMetrics {
    pub z0_l2: f64,
    pub final_l2: f64,
    pub final_error_l2: f64,
    pub input_peaks: Vec<f64>,
    pub saturated: Vec<bool>,
    pub l2_monotone_from: f64,
    pub error_monotone_from: f64,
}

impl TraceMetrics {
    pub fn new(trace: &SimulationTrace, levels: &[f64]) -> Self {
        let input_peaks: Vec<f64> = (0..levels.len())
            .map(|k| trace.inputs.iter().fold(0.0f64, |m, u| m.max(u[k].abs())))
            .collect();
        let saturated = input_peaks
            .iter()
            .zip(levels)
            .map(|(p, l)| p >= l)
            .collect();
        Self {
            z0_l2: trace.l2_norm[0],
            final_l2: *trace.l2_norm.last().unwrap_or(&0.0),
            final_error_l2: *trace.error_l2_norm.last().unwrap_or(&0.0),
            input_peaks,
            saturated,
            l2_monotone_from: monotone_from(&trace.times, &trace.l2_norm),
            error_monotone_from: monotone_from(&trace.times, &trace.error_l2_norm),
        }
    }

    fn table(&self) -> Table {
        let mut t = Table::new();
        t.insert("z0_l2".into(), float(self.z0_l2));
        t.insert("final_l2".into(), float(self.final_l2));
        t.insert("final_ratio".into(), float(self.final_l2 / self.z0_l2));
        t.insert("final_error_l2".into(), float(self.final_error_l2));
        t.insert(
            "input_peaks".into(),
            Value::Array(self.input_peaks.iter().map(|v| float(*v)).collect()),
        );
        t.insert(
            "saturated".into(),
            Value::Array(self.saturated.iter().map(|b| Value::Boolean(*b)).collect()),
        );
        t.insert("l2_monotone_from".into(), float(self.l2_monotone_from));
        t.insert(
            "error_monotone_from".into(),
            float(self.error_monotone_from),
        );
        t
    }

    fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "  |z(0)| = {}, |z(T)| = {} (ratio {}), |error(T)| = {}",
            sig6(self.z0_l2),
            sig6(self.final_l2),
            sig6(self.final_l2 / self.z0_l2),
            sig6(self.final_error_l2)
        );
        for (k, (p, s)) in self.input_peaks.iter().zip(&self.saturated).enumerate() {
            let _ = writeln!(
                out,
                "  max |u_{}| = {}{}",
                k + 1,
                sig6(*p),
                if *s { " (saturates)" } else { "" }
            );
        }
        let _ = writeln!(
            out,
            "  norms non-increasing from t = {} (state), t = {} (error)",
            sig6(self.l2_monotone_from),
            sig6(self.error_monotone_from)
        );
        out
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Float(f) => sig6(*f),
        Value::Integer(i) => i.to_string(),
        Value::Boolean(b) => b.to_string(),
        Value::String(s) => s.clone(),
        Value::Array(a) => format!(
            "[{}]",
            a.iter().map(value_text).collect::<Vec<_>>().join(", ")
        ),
        other => other.to_string(),
    }
}

fn render_table(out: &mut String, indent: &str, t: &Table) {
    for (k, v) in t {
        if let Value::Table(inner) = v {
            let _ = writeln!(out, "{indent}{k}:");
            render_table(out, &format!("{indent}  "), inner);
        } else {
            let _ = writeln!(out, "{indent}{k} = {}", value_text(v));
        }
    }
}

/// Human-readable summary of every stage recorded in the manifest.
pub fn render_report(m: &Manifest, theorems: &[TheoremTag]) -> String {
    let mut out = String::from("summary\n");
    let n0 = m.number("synth", "n0");
    let mut headline = Vec::new();
    if let Some(n0) = n0 {
        headline.push(format!("N0 = {n0}"));
    }
    for tag in theorems {
        let name = tag.name();
        let Some(c) = m
            .stage("certify")
            .and_then(|c| c.get(name))
            .and_then(Value::as_table)
        else {
            continue;
        };
        let num = |t: &Table, k: &str| t.get(k).and_then(Value::as_float);
        let mut part = format!(
            "{name}: N = {}",
            c.get("n").map(value_text).unwrap_or_default()
        );
        if let Some(k) = num(c, "certified_kappa") {
            part.push_str(&format!(", kappa = {}", sig6(k)));
        }
        if let Some(d) = m
            .stage("doa")
            .and_then(|d| d.get(name))
            .and_then(Value::as_table)
        {
            if let (Some(a), Some(b)) = (num(d, "r_initial"), num(d, "r_final")) {
                part.push_str(&format!(", r {} -> {}", sig6(a), sig6(b)));
            }
            if let Some(inside) = d.get("z0_inside").and_then(Value::as_bool) {
                part.push_str(if inside {
                    ", z0 inside"
                } else {
                    ", z0 outside"
                });
            }
        }
        headline.push(part);
    }
    for h in headline {
        let _ = writeln!(out, "  {h}");
    }
    for stage in Stage::ALL {
        match m.stage(stage.name()) {
            Some(t) => {
                let _ = writeln!(out, "[{stage}]");
                render_table(&mut out, "  ", t);
            }
            None if stage != Stage::Report => {
                let _ = writeln!(out, "[{stage}] not run");
            }
            None => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(10.869604401089358), "10.8696");
        assert_eq!(sig6(0.41770123), "0.417701");
        assert_eq!(sig6(-471.48), "-471.480");
        assert_eq!(sig6(3.05e-7), "3.05000e-7");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn monotone_tail_start() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(monotone_from(&t, &[1.0, 2.0, 1.5, 1.0, 0.5]), 1.0);
        assert_eq!(monotone_from(&t, &[3.0, 2.0, 2.0, 1.0, 0.5]), 0.0);
        assert_eq!(monotone_from(&t, &[1.0, 0.5, 0.1, 0.2, 0.1]), 3.0);
    }

    #[test]
    fn exit_codes_follow_kind() {
        let e = core_err(Stage::Certify)(rdsat_core::Error::Infeasible("x".into()));
        assert_eq!(e.exit_code(), 3);
        let e = core_err(Stage::Simulate)(rdsat_core::Error::NumericalFailure("x".into()));
        assert_eq!(e.exit_code(), 4);
        let e = core_err(Stage::Simulate)(rdsat_core::Error::Config("dt".into()));
        assert_eq!(e.exit_code(), 2);
        let e = art_err(Stage::Certify)(ArtifactError::Missing(PathBuf::from("out/modes.csv")));
        assert_eq!(e.kind, FailureKind::Dependency);
        assert!(e.to_string().contains("run `project` first"));
    }

    #[test]
    fn producers_of_certificate_files() {
        assert_eq!(producer(Path::new("certificate_thm1.txt")), "certify");
        assert_eq!(producer(Path::new("certificate_thm1_doa.txt")), "doa");
        assert_eq!(producer(Path::new("gains.csv")), "synth");
    }
}
