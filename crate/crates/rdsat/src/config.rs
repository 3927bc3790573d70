//! Run configuration: TOML schema, validation and compilation to core types.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rdsat_core::controller::{GainStrategy, Gains};
use rdsat_core::lmi::TheoremTag;
use rdsat_core::quadrature::UniformGrid;
use rdsat_core::spectral::{MeasurementMode, PlantSpec, Profile, Sensor};
use serde::Deserialize;

use crate::expr::{Expr, NumberOrExpr};

pub const DEFAULT_GRID_SIZE: usize = 2401;
pub const DEFAULT_MODES: usize = 60;
pub const DEFAULT_EPSILON: f64 = 0.125;

/// A validation failure pointing at a config line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: ", self.file, l)?,
            None => write!(f, "{}: ", self.file)?,
        }
        if !self.key.is_empty() {
            write!(f, "{}: ", self.key)?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub certificate: CertificateSection,
    pub doa: Option<DoaSection>,
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default)]
    pub diffusion: NumberOrExpr,
    pub reaction: NumberOrExpr,
    #[serde(default = "zero")]
    pub theta1: NumberOrExpr,
    #[serde(default = "zero")]
    pub theta2: NumberOrExpr,
    #[serde(default = "auto")]
    pub q_c: NumberOrExpr,
    pub levels: Vec<f64>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    pub actuators: Vec<ProfileSection>,
    pub sensor: SensorSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub support: [f64; 2],
    #[serde(default)]
    pub amplitude: NumberOrExpr,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub kind: String,
    pub support: Option<[f64; 2]>,
    pub amplitude: Option<NumberOrExpr>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "riccati")]
    pub strategy: String,
    /// Rows per input, columns per slow mode.
    pub k: Option<Vec<Vec<f64>>>,
    pub l: Option<Vec<f64>>,
    /// Controller and observer pole.
    pub poles: Option<[f64; 2]>,
    pub rho: Option<f64>,
    pub n: Option<usize>,
    pub n_range: Option<[usize; 2]>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            delta: 1.0,
            strategy: riccati(),
            k: None,
            l: None,
            poles: None,
            rho: None,
            n: None,
            n_range: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AlphaSetting {
    Uniform(f64),
    PerTheorem(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    #[serde(default)]
    pub theorems: Vec<String>,
    pub alpha: Option<AlphaSetting>,
    pub t0: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    /// A number, or `"maximize"`.
    pub kappa: Option<NumberOrExpr>,
    pub bisection_steps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaSection {
    pub r_diag: Option<Vec<f64>>,
    pub r_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_doa_iters")]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    pub dt: Option<f64>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    pub z0: NumberOrExpr,
    pub observer_ic: Option<Vec<f64>>,
    pub certificate: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn zero() -> NumberOrExpr {
    NumberOrExpr::Number(0.0)
}
fn auto() -> NumberOrExpr {
    NumberOrExpr::Text("auto".into())
}
fn one() -> f64 {
    1.0
}
fn riccati() -> String {
    "riccati".into()
}
fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}
fn default_modes() -> usize {
    DEFAULT_MODES
}
fn default_doa_iters() -> usize {
    40
}
fn default_n_sim() -> usize {
    50
}
fn default_t_final() -> f64 {
    10.0
}
fn default_stride() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainSetting {
    User { k: Vec<Vec<f64>>, l: Vec<f64> },
    PolePlacement { controller: f64, observer: f64 },
    Riccati { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderSetting {
    Fixed(usize),
    /// Inclusive; `None` bounds are filled from `N0` and the mode count.
    Sweep(Option<usize>, Option<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaSetting {
    Fixed(f64),
    Maximize,
}

#[derive(Debug, Clone)]
pub struct DoaSetting {
    pub r_diag: Option<Vec<f64>>,
    pub r_matrix: Option<Vec<Vec<f64>>>,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub struct SimSetting {
    pub n_sim: usize,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub record_stride: usize,
    pub z0: Expr,
    pub observer_ic: Option<Vec<f64>>,
    pub certificate: Option<TheoremTag>,
}

/// Validated settings, ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantSpec,
    pub grid_size: usize,
    pub n_modes: usize,
    pub delta: f64,
    pub gains: GainSetting,
    pub order: OrderSetting,
    pub theorems: Vec<TheoremTag>,
    alpha: BTreeMap<&'static str, f64>,
    pub t0: Option<Vec<f64>>,
    pub epsilon: f64,
    pub kappa: KappaSetting,
    pub bisection_steps: usize,
    pub doa: Option<DoaSetting>,
    pub simulation: Option<SimSetting>,
    pub out_dir: PathBuf,
}

impl Scenario {
    pub fn alpha(&self, tag: TheoremTag) -> Option<f64> {
        self.alpha.get(tag.name()).copied()
    }

    pub fn mode(&self) -> MeasurementMode {
        self.plant.sensor.mode()
    }

    /// `R` for a certificate of order `n`.
    pub fn r_matrix(&self, n: usize) -> Option<Result<DMatrix<f64>, String>> {
        let doa = self.doa.as_ref()?;
        let dim = n + 1;
        Some(if let Some(d) = &doa.r_diag {
            if d.len() != dim {
                Err(format!(
                    "r_diag has {} entries, the order N = {n} needs {dim}",
                    d.len()
                ))
            } else {
                Ok(DMatrix::from_diagonal(&DVector::from_vec(d.clone())))
            }
        } else if let Some(rows) = &doa.r_matrix {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                Err(format!("r_matrix must be {dim}x{dim} for N = {n}"))
            } else {
                let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                if (&m - m.transpose()).amax() > 0.0 {
                    Err("r_matrix must be symmetric".into())
                } else {
                    Ok(m)
                }
            }
        } else {
            Err("doa needs r_diag or r_matrix".into())
        })
    }

    /// Gain strategy for `n0` slow modes and `m` inputs.
    pub fn gain_strategy(&self, n0: usize, m: usize) -> Result<GainStrategy, String> {
        match &self.gains {
            GainSetting::User { k, l } => {
                if k.len() != m || k.iter().any(|r| r.len() != n0) {
                    return Err(format!("k must have {m} rows of length N0 = {n0}"));
                }
                if l.len() != n0 {
                    return Err(format!("l must have N0 = {n0} entries"));
                }
                Ok(GainStrategy::UserSupplied(Gains {
                    k: DMatrix::from_fn(m, n0, |i, j| k[i][j]),
                    l: DVector::from_vec(l.clone()),
                }))
            }
            GainSetting::PolePlacement {
                controller,
                observer,
            } => {
                if n0 != 1 {
                    return Err(format!("pole placement needs N0 = 1, found N0 = {n0}"));
                }
                Ok(GainStrategy::PolePlacement {
                    controller_pole: *controller,
                    observer_pole: *observer,
                })
            }
            GainSetting::Riccati { rho } => Ok(GainStrategy::Riccati { rho: *rho }),
        }
    }
}

/// A parsed config with its source, for line lookups.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub raw: RunConfig,
    pub scenario: Scenario,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.display().to_string(),
            line: None,
            key: String::new(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let file = path.display().to_string();
        let raw: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            file: file.clone(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            key: String::new(),
            message: e.message().trim().to_string(),
        })?;
        let scenario = compile(&raw).map_err(|(key, message)| ConfigError {
            file: file.clone(),
            line: locate(text, &key),
            key,
            message,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            text: text.to_string(),
            raw,
            scenario,
        })
    }

    /// Error at `key` (dotted path, `[i]` for array-of-table entries).
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.path.display().to_string(),
            line: locate(&self.text, key),
            key: key.to_string(),
            message: message.into(),
        }
    }
}

type Invalid = (String, String);

fn bad<T>(key: &str, message: impl Into<String>) -> Result<T, Invalid> {
    Err((key.to_string(), message.into()))
}

fn constant(v: &NumberOrExpr, key: &str) -> Result<f64, Invalid> {
    let x = v.constant().map_err(|m| (key.to_string(), m))?;
    if !x.is_finite() {
        return bad(key, "value is not finite");
    }
    Ok(x)
}

fn expression(v: &NumberOrExpr, key: &str) -> Result<Expr, Invalid> {
    v.compile().map_err(|m| (key.to_string(), m))
}

fn check_support(s: [f64; 2], key: &str) -> Result<(), Invalid> {
    if !(0.0 <= s[0] && s[0] < s[1] && s[1] <= 1.0) {
        return bad(
            key,
            format!("[{}, {}] is not a subinterval of [0, 1]", s[0], s[1]),
        );
    }
    Ok(())
}

fn sample(expr: &Expr, grid: UniformGrid, key: &str) -> Result<Vec<f64>, Invalid> {
    let v = grid.sample(|x| expr.eval(x));
    if v.iter().any(|x| !x.is_finite()) {
        return bad(key, format!("`{}` is not finite on [0, 1]", expr.text()));
    }
    Ok(v)
}

fn indicator(grid: UniformGrid, s: [f64; 2], amp: &Expr, key: &str) -> Result<Profile, Invalid> {
    Profile::indicator(grid, s[0], s[1], |x| amp.eval(x))
        .map_err(|e| (key.to_string(), e.to_string()))
}

fn compile(raw: &RunConfig) -> Result<Scenario, Invalid> {
    let p = &raw.plant;
    if p.n_modes < 2 {
        return bad("plant.n_modes", "at least 2 modes are needed");
    }
    if p.grid_size < 40 * p.n_modes {
        return bad(
            "plant.grid_size",
            format!("{} is below 40 * n_modes = {}", p.grid_size, 40 * p.n_modes),
        );
    }
    let grid = UniformGrid::new(p.grid_size)
        .map_err(|e| ("plant.grid_size".to_string(), e.to_string()))?;
    let theta1 = constant(&p.theta1, "plant.theta1")?;
    let theta2 = constant(&p.theta2, "plant.theta2")?;
    for (t, key) in [(theta1, "plant.theta1"), (theta2, "plant.theta2")] {
        if !(0.0..=FRAC_PI_2 + 1e-15).contains(&t) {
            return bad(key, format!("angle {t} outside [0, pi/2]"));
        }
    }
    let diffusion = sample(
        &expression(&p.diffusion, "plant.diffusion")?,
        grid,
        "plant.diffusion",
    )?;
    if diffusion.iter().any(|v| *v <= 0.0) {
        return bad("plant.diffusion", "diffusion must be positive on [0, 1]");
    }
    let reaction = sample(
        &expression(&p.reaction, "plant.reaction")?,
        grid,
        "plant.reaction",
    )?;
    let q_c = match &p.q_c {
        NumberOrExpr::Text(t) if t.trim() == "auto" => PlantSpec::default_qc(&reaction, 1.0),
        v => constant(v, "plant.q_c")?,
    };
    if p.actuators.is_empty() {
        return bad("plant.actuators", "at least one actuator is required");
    }
    if p.levels.len() != p.actuators.len() {
        return bad(
            "plant.levels",
            format!(
                "{} levels for {} actuators",
                p.levels.len(),
                p.actuators.len()
            ),
        );
    }
    if p.levels.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return bad("plant.levels", "saturation levels must be positive");
    }
    let mut actuators = Vec::with_capacity(p.actuators.len());
    for (i, a) in p.actuators.iter().enumerate() {
        let key = format!("plant.actuators[{i}]");
        check_support(a.support, &format!("{key}.support"))?;
        let amp = expression(&a.amplitude, &format!("{key}.amplitude"))?;
        actuators.push(indicator(grid, a.support, &amp, &key)?);
    }
    let sensor = match p.sensor.kind.as_str() {
        "bounded" => {
            let support = p.sensor.support.ok_or_else(|| {
                (
                    "plant.sensor.support".to_string(),
                    "bounded sensor needs a support".to_string(),
                )
            })?;
            check_support(support, "plant.sensor.support")?;
            let amp = match &p.sensor.amplitude {
                Some(a) => expression(a, "plant.sensor.amplitude")?,
                None => expression(&NumberOrExpr::Number(1.0), "plant.sensor.amplitude")?,
            };
            Sensor::Distributed(indicator(grid, support, &amp, "plant.sensor")?)
        }
        "dirichlet-left" => {
            if theta1 <= 0.0 {
                return bad(
                    "plant.theta1",
                    "dirichlet-left sensing needs theta1 in (0, pi/2]; z(t, 0) vanishes for theta1 = 0",
                );
            }
            Sensor::DirichletLeft
        }
        "neumann-left" => {
            if theta1 >= FRAC_PI_2 {
                return bad(
                    "plant.theta1",
                    "neumann-left sensing needs theta1 in [0, pi/2); z_x(t, 0) vanishes for theta1 = pi/2",
                );
            }
            Sensor::NeumannLeft
        }
        other => {
            return bad(
                "plant.sensor.kind",
                format!("unknown sensor `{other}` (bounded, dirichlet-left, neumann-left)"),
            )
        }
    };
    if !matches!(sensor, Sensor::Distributed(_))
        && (p.sensor.support.is_some() || p.sensor.amplitude.is_some())
    {
        return bad("plant.sensor", "trace sensors take no support or amplitude");
    }
    let plant = PlantSpec {
        diffusion,
        reaction,
        theta1,
        theta2,
        q_c,
        actuators,
        sensor,
        levels: p.levels.clone(),
    };
    let mode = plant.sensor.mode();
    plant
        .validate()
        .map_err(|e| ("plant".to_string(), e.to_string()))?;

    let c = &raw.controller;
    if !(c.delta > 0.0 && c.delta.is_finite()) {
        return bad("controller.delta", "delta must be positive");
    }
    let gains = match c.strategy.as_str() {
        "user" => match (&c.k, &c.l) {
            (Some(k), Some(l)) => {
                if k.iter().flatten().chain(l).any(|v| !v.is_finite()) {
                    return bad("controller.k", "gains must be finite");
                }
                GainSetting::User {
                    k: k.clone(),
                    l: l.clone(),
                }
            }
            _ => return bad("controller.strategy", "strategy `user` needs both k and l"),
        },
        "pole-placement" => {
            let [a, b] = c.poles.ok_or_else(|| {
                (
                    "controller.poles".to_string(),
                    "pole placement needs poles = [controller, observer]".to_string(),
                )
            })?;
            if a >= -c.delta || b >= -c.delta {
                return bad(
                    "controller.poles",
                    format!("poles must lie left of -delta = {}", -c.delta),
                );
            }
            GainSetting::PolePlacement {
                controller: a,
                observer: b,
            }
        }
        "riccati" => {
            let rho = c.rho.unwrap_or(1.0);
            if !(rho > 0.0) {
                return bad("controller.rho", "rho must be positive");
            }
            GainSetting::Riccati { rho }
        }
        other => {
            return bad(
                "controller.strategy",
                format!("unknown strategy `{other}` (user, pole-placement, riccati)"),
            )
        }
    };
    let order = match (c.n, c.n_range) {
        (Some(_), Some(_)) => {
            return bad("controller.n_range", "give either n or n_range, not both")
        }
        (Some(n), None) => {
            if n + 1 >= p.n_modes {
                return bad(
                    "controller.n",
                    format!("N = {n} needs more than {} modes", p.n_modes),
                );
            }
            OrderSetting::Fixed(n)
        }
        (None, Some([lo, hi])) => {
            if lo < 2 || lo > hi || hi + 1 >= p.n_modes {
                return bad(
                    "controller.n_range",
                    format!("[{lo}, {hi}] must satisfy 2 <= lo <= hi < n_modes - 1"),
                );
            }
            OrderSetting::Sweep(Some(lo), Some(hi))
        }
        (None, None) => OrderSetting::Sweep(None, Some(12.min(p.n_modes - 2))),
    };

    let cs = &raw.certificate;
    let mut theorems = Vec::new();
    for name in &cs.theorems {
        let tag = TheoremTag::parse(name).ok_or_else(|| {
            (
                "certificate.theorems".to_string(),
                format!("unknown theorem `{name}`"),
            )
        })?;
        if !tag.accepts(mode) {
            return bad(
                "certificate.theorems",
                format!("{name} does not apply to {} sensing", mode.name()),
            );
        }
        if !theorems.contains(&tag) {
            theorems.push(tag);
        }
    }
    if theorems.is_empty() {
        theorems = match mode {
            MeasurementMode::Bounded => vec![TheoremTag::Thm1, TheoremTag::Thm2],
            MeasurementMode::DirichletLeft => vec![TheoremTag::Thm3],
            MeasurementMode::NeumannLeft => vec![TheoremTag::Thm4],
        };
    }
    let mut alpha = BTreeMap::new();
    for tag in &theorems {
        let value = match &cs.alpha {
            None => None,
            Some(AlphaSetting::Uniform(a)) => Some(*a),
            Some(AlphaSetting::PerTheorem(m)) => m.get(tag.name()).copied(),
        };
        let a = value.unwrap_or(tag.default_alpha());
        let ok = match tag {
            TheoremTag::Thm1 => a > 0.0,
            _ => a > 1.0,
        };
        if !ok || !a.is_finite() {
            let bound = if *tag == TheoremTag::Thm1 {
                "alpha > 0"
            } else {
                "alpha > 1"
            };
            let key = match &cs.alpha {
                Some(AlphaSetting::PerTheorem(_)) => format!("certificate.alpha.{}", tag.name()),
                _ => "certificate.alpha".into(),
            };
            return bad(&key, format!("{} requires {bound}, got {a}", tag.name()));
        }
        alpha.insert(tag.name(), a);
    }
    if let Some(AlphaSetting::PerTheorem(m)) = &cs.alpha {
        if let Some(extra) = m.keys().find(|k| TheoremTag::parse(k).is_none()) {
            return bad("certificate.alpha", format!("unknown theorem `{extra}`"));
        }
    }
    if let Some(t0) = &cs.t0 {
        if t0.len() != p.actuators.len() || t0.iter().any(|t| !(*t > 0.0)) {
            return bad(
                "certificate.t0",
                format!("t0 must hold {} positive entries", p.actuators.len()),
            );
        }
    }
    let epsilon = cs.epsilon.unwrap_or(DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return bad(
            "certificate.epsilon",
            format!("epsilon = {epsilon} outside (0, 1/2]"),
        );
    }
    let kappa = match &cs.kappa {
        None => KappaSetting::Maximize,
        Some(NumberOrExpr::Text(t)) if t.trim() == "maximize" => KappaSetting::Maximize,
        Some(v) => {
            let k = constant(v, "certificate.kappa")?;
            if !(k >= 0.0) {
                return bad("certificate.kappa", "kappa must be >= 0 or \"maximize\"");
            }
            KappaSetting::Fixed(k)
        }
    };

    let doa = match &raw.doa {
        None => None,
        Some(d) => {
            match (&d.r_diag, &d.r_matrix) {
                (Some(_), Some(_)) => return bad("doa.r_matrix", "give either r_diag or r_matrix"),
                (None, None) => return bad("doa", "doa needs r_diag or r_matrix"),
                (Some(r), None) if r.iter().any(|v| !(*v > 0.0)) => {
                    return bad("doa.r_diag", "entries must be positive")
                }
                _ => {}
            }
            if d.max_iters == 0 {
                return bad("doa.max_iters", "max_iters must be positive");
            }
            Some(DoaSetting {
                r_diag: d.r_diag.clone(),
                r_matrix: d.r_matrix.clone(),
                max_iters: d.max_iters,
            })
        }
    };

    let simulation = match &raw.simulation {
        None => None,
        Some(s) => {
            if s.n_sim < 2 || s.n_sim > p.n_modes {
                return bad(
                    "simulation.n_sim",
                    format!("n_sim must lie in [2, n_modes = {}]", p.n_modes),
                );
            }
            if !(s.t_final > 0.0) {
                return bad("simulation.t_final", "t_final must be positive");
            }
            if let Some(dt) = s.dt {
                if !(dt > 0.0) {
                    return bad("simulation.dt", "dt must be positive");
                }
            }
            if s.record_stride == 0 {
                return bad("simulation.record_stride", "record_stride must be positive");
            }
            let certificate = match &s.certificate {
                None => None,
                Some(name) => {
                    let tag = TheoremTag::parse(name).ok_or_else(|| {
                        (
                            "simulation.certificate".to_string(),
                            format!("unknown theorem `{name}`"),
                        )
                    })?;
                    if !theorems.contains(&tag) {
                        return bad(
                            "simulation.certificate",
                            format!("{name} is not among the certified theorems"),
                        );
                    }
                    Some(tag)
                }
            };
            Some(SimSetting {
                n_sim: s.n_sim,
                t_final: s.t_final,
                dt: s.dt,
                record_stride: s.record_stride,
                z0: expression(&s.z0, "simulation.z0")?,
                observer_ic: s.observer_ic.clone(),
                certificate,
            })
        }
    };

    Ok(Scenario {
        plant,
        grid_size: p.grid_size,
        n_modes: p.n_modes,
        delta: c.delta,
        gains,
        order,
        theorems,
        alpha,
        t0: cs.t0.clone(),
        epsilon,
        kappa,
        bisection_steps: cs.bisection_steps.unwrap_or(12),
        doa,
        simulation,
        out_dir: raw
            .output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// One key path segment; `index` selects an array-of-tables entry.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    name: String,
    index: Option<usize>,
}

fn segments(path: &str) -> Vec<Segment> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .map(|s| match s.split_once('[') {
            Some((name, rest)) => Segment {
                name: name.to_string(),
                index: rest.trim_end_matches(']').parse().ok(),
            },
            None => Segment {
                name: s.to_string(),
                index: None,
            },
        })
        .collect()
}

/// Line (1-based) of a dotted key in TOML source; falls back to the
/// enclosing table header.
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let segs = segments(path);
    if segs.is_empty() {
        return None;
    }
    // Table header in effect for every line, with array indices resolved.
    let mut headers: Vec<Vec<Segment>> = Vec::new();
    let mut current: Vec<Segment> = Vec::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut header_lines: Vec<(usize, Vec<Segment>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t
            .strip_prefix("[[")
            .and_then(|r| r.split_once("]]"))
            .map(|(n, _)| n.trim())
        {
            let c = counts.entry(name.to_string()).or_insert(0);
            let mut s = segments(name);
            if let Some(last) = s.last_mut() {
                last.index = Some(*c);
            }
            *c += 1;
            current = s;
            header_lines.push((i + 1, current.clone()));
        } else if let Some(name) = t
            .strip_prefix('[')
            .and_then(|r| r.split_once(']'))
            .map(|(n, _)| n.trim())
        {
            current = segments(name);
            header_lines.push((i + 1, current.clone()));
        }
        headers.push(current.clone());
    }
    let lines: Vec<&str> = text.lines().collect();
    for split in (0..segs.len()).rev() {
        let (table, rest) = segs.split_at(split);
        let key = &rest[0].name;
        for (i, line) in lines.iter().enumerate() {
            if headers[i] != table {
                continue;
            }
            let t = line.trim_start();
            if let Some(after) = t.strip_prefix(key.as_str()) {
                if after.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    for len in (1..=segs.len()).rev() {
        if let Some((l, _)) = header_lines.iter().find(|(_, h)| h[..] == segs[..len]) {
            return Some(*l);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[plant]
diffusion = 1.0
reaction = -10.0
theta1 = 0.0
levels = [1.0, 2.0]
grid_size = 401
n_modes = 10

[[plant.actuators]]
support = [0.1, 0.3]
amplitude = "-cos(x)"

[[plant.actuators]]
support = [0.7, 0.9]
amplitude = "-(0.5 + x)"

[plant.sensor]
kind = "bounded"
support = [0.45, 0.55]

[controller]
strategy = "user"
k = [[2.59], [3.41]]
l = [15.13]
n = 4
"#;

    fn parse(text: &str) -> Result<LoadedConfig, ConfigError> {
        LoadedConfig::parse(Path::new("test.toml"), text)
    }

    #[test]
    fn base_config_compiles() {
        let c = parse(BASE).unwrap();
        let s = &c.scenario;
        assert_eq!(s.plant.q_c, 11.0);
        assert_eq!(s.theorems, vec![TheoremTag::Thm1, TheoremTag::Thm2]);
        assert_eq!(s.alpha(TheoremTag::Thm1), Some(1.0));
        assert_eq!(s.alpha(TheoremTag::Thm2), Some(2.0));
        assert_eq!(s.order, OrderSetting::Fixed(4));
        assert_eq!(s.kappa, KappaSetting::Maximize);
        assert_eq!(s.plant.actuators.len(), 2);
        let strategy = s.gain_strategy(1, 2).unwrap();
        assert!(matches!(strategy, GainStrategy::UserSupplied(_)));
        assert!(s.gain_strategy(2, 2).is_err());
    }

    #[test]
    fn trace_sensor_needs_admissible_angle() {
        let text = BASE.replace(
            "kind = \"bounded\"\nsupport = [0.45, 0.55]",
            "kind = \"dirichlet-left\"",
        );
        let err = parse(&text).unwrap_err();
        assert_eq!(err.key, "plant.theta1");
        assert_eq!(err.line, Some(5));
        let ok = text.replace("theta1 = 0.0", "theta1 = \"PI/4\"");
        let c = parse(&(ok + "\n[certificate]\ntheorems = [\"thm3\"]\n")).unwrap();
        assert!((c.scenario.plant.theta1 - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn epsilon_outside_range_is_rejected() {
        let text = BASE.replace(
            "kind = \"bounded\"\nsupport = [0.45, 0.55]",
            "kind = \"neumann-left\"",
        ) + "\n[certificate]\ntheorems = [\"thm4\"]\nepsilon = 0.7\n";
        let err = parse(&text).unwrap_err();
        assert_eq!(err.key, "certificate.epsilon");
        assert_eq!(
            err.line,
            Some(text.lines().position(|l| l.starts_with("epsilon")).unwrap() + 1)
        );
        assert!(err.to_string().contains("(0, 1/2]"));
    }

    #[test]
    fn theorem_must_match_sensor() {
        let text = BASE.to_string() + "\n[certificate]\ntheorems = [\"thm3\"]\n";
        let err = parse(&text).unwrap_err();
        assert_eq!(err.key, "certificate.theorems");
        assert!(err.line.is_some());
    }

    #[test]
    fn parse_errors_carry_lines() {
        let text = BASE.replace("n = 4", "n = 4\nbogus = 1");
        let err = parse(&text).unwrap_err();
        let expected = text.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
        assert_eq!(err.line, Some(expected));
    }

    #[test]
    fn array_table_entries_are_located() {
        let text = BASE.replace("support = [0.7, 0.9]", "support = [0.9, 0.7]");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.key, "plant.actuators[1].support");
        let expected = text.lines().position(|l| l.contains("[0.9, 0.7]")).unwrap() + 1;
        assert_eq!(err.line, Some(expected));
    }

    #[test]
    fn r_matrix_dimension_follows_order() {
        let text = BASE.to_string() + "\n[doa]\nr_diag = [1, 1, 1, 1, 0.005]\n";
        let c = parse(&text).unwrap();
        assert!(c.scenario.r_matrix(4).unwrap().is_ok());
        assert!(c.scenario.r_matrix(5).unwrap().is_err());
    }
}
