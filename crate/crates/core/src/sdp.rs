//! Small dense solver for affine matrix inequalities.
//!
//! Constraints are given as closures of the vectorised decision variables;
//! their affine coefficients are extracted once. Pairs of opposite
//! inequalities are turned into equalities and eliminated through a
//! null-space basis. The remaining system is solved by a primal log-det
//! barrier method: phase I minimises a common slack `s` in
//! `G_j(x) + s I ⪰ 0`, phase II (when an objective is present) follows the
//! central path from the phase-I point.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{asymmetry, min_eigenvalue, spectral_abscissa};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Scalar,
    /// Symmetric `n × n`, stored as its packed upper triangle.
    Symmetric(usize),
    /// Unstructured `rows × cols`, row-major.
    Full(usize, usize),
}

impl VariableKind {
    fn len(self) -> usize {
        match self {
            Self::Scalar => 1,
            Self::Symmetric(n) => n * (n + 1) / 2,
            Self::Full(r, c) => r * c,
        }
    }
}

/// Location of a variable inside the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarHandle {
    offset: usize,
    kind: VariableKind,
}

impl VarHandle {
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn kind(&self) -> VariableKind {
        self.kind
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableLayout {
    names: Vec<(String, VarHandle)>,
    len: usize,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn add(&mut self, name: &str, kind: VariableKind) -> VarHandle {
        let h = VarHandle {
            offset: self.len,
            kind,
        };
        self.len += kind.len();
        self.names.push((name.into(), h));
        h
    }

    pub fn scalar(&mut self, name: &str) -> VarHandle {
        self.add(name, VariableKind::Scalar)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarHandle {
        self.add(name, VariableKind::Symmetric(n))
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> VarHandle {
        self.add(name, VariableKind::Full(rows, cols))
    }

    pub fn variables(&self) -> &[(String, VarHandle)] {
        &self.names
    }
}

pub fn read_scalar(x: &[f64], h: VarHandle) -> f64 {
    x[h.offset]
}

pub fn read_symmetric(x: &[f64], h: VarHandle) -> DMatrix<f64> {
    let VariableKind::Symmetric(n) = h.kind else {
        panic!("variable is not symmetric");
    };
    let mut m = DMatrix::zeros(n, n);
    let mut k = h.offset;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = x[k];
            m[(j, i)] = x[k];
            k += 1;
        }
    }
    m
}

pub fn read_full(x: &[f64], h: VarHandle) -> DMatrix<f64> {
    let VariableKind::Full(r, c) = h.kind else {
        panic!("variable is not a full matrix");
    };
    DMatrix::from_row_slice(r, c, &x[h.offset..h.offset + r * c])
}

/// Writes a value into the decision vector.
pub fn write_scalar(x: &mut [f64], h: VarHandle, v: f64) {
    x[h.offset] = v;
}

pub fn write_symmetric(x: &mut [f64], h: VarHandle, m: &DMatrix<f64>) {
    let VariableKind::Symmetric(n) = h.kind else {
        panic!("variable is not symmetric");
    };
    let mut k = h.offset;
    for i in 0..n {
        for j in i..n {
            x[k] = 0.5 * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
}

pub fn write_full(x: &mut [f64], h: VarHandle, m: &DMatrix<f64>) {
    let VariableKind::Full(r, c) = h.kind else {
        panic!("variable is not a full matrix");
    };
    for i in 0..r {
        for j in 0..c {
            x[h.offset + i * c + j] = m[(i, j)];
        }
    }
}

/// `G(x) = G_0 + Σ x_i G_i`, with zero coefficients omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineMap {
    /// Extracts the affine coefficients of `f` and checks affinity and
    /// symmetry.
    pub fn from_fn(n_vars: usize, f: impl Fn(&[f64]) -> DMatrix<f64>) -> Result<Self> {
        let mut x = vec![0.0; n_vars];
        let constant = f(&x);
        if constant.nrows() != constant.ncols() {
            return Err(Error::Dimension("constraint map is not square".into()));
        }
        let mut terms = Vec::new();
        for i in 0..n_vars {
            x[i] = 1.0;
            let g = f(&x) - &constant;
            x[i] = 0.0;
            if g.amax() > 0.0 {
                terms.push((i, g));
            }
        }
        let map = Self { constant, terms };
        let mut seed: u64 = 0x2545_F491_4F6C_DD1D;
        let probe: Vec<f64> = (0..n_vars)
            .map(|_| {
                seed ^= seed << 13;
                seed ^= seed >> 7;
                seed ^= seed << 17;
                (seed % 2001) as f64 / 1000.0 - 1.0
            })
            .collect();
        let direct = f(&probe);
        let affine = map.eval(&probe);
        let scale = 1.0 + direct.amax();
        if (&direct - &affine).amax() > 1e-9 * scale {
            return Err(Error::InvalidInput("constraint map is not affine".into()));
        }
        if asymmetry(&direct) > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "constraint map is not symmetric (asymmetry {:e})",
                asymmetry(&direct)
            )));
        }
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, g) in &self.terms {
            m += g * x[*i];
        }
        m
    }

    fn negated(&self) -> Self {
        Self {
            constant: -&self.constant,
            terms: self.terms.iter().map(|(i, g)| (*i, -g)).collect(),
        }
    }

    fn is_negation_of(&self, other: &Self) -> bool {
        if self.dim() != other.dim() || self.terms.len() != other.terms.len() {
            return false;
        }
        let scale = 1.0 + self.constant.amax().max(other.constant.amax());
        let close = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a + b).amax() <= 1e-12 * scale;
        close(&self.constant, &other.constant)
            && self
                .terms
                .iter()
                .zip(&other.terms)
                .all(|((i, a), (j, b))| i == j && close(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `G(x) ⪯ 0` (for 1×1 maps: `≤ 0`).
    NegativeSemidefinite,
    /// `G(x) ⪰ 0` (for 1×1 maps: `≥ 0`).
    PositiveSemidefinite,
    /// `G(x) = 0`.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub sense: Sense,
    pub map: AffineMap,
}

impl Constraint {
    /// The map in `⪰ 0` orientation.
    fn oriented(&self) -> AffineMap {
        match self.sense {
            Sense::NegativeSemidefinite => self.map.negated(),
            _ => self.map.clone(),
        }
    }
}

/// Affine matrix inequalities over a vector of decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmiSystem {
    pub layout: VariableLayout,
    pub constraints: Vec<Constraint>,
    /// Linear objective to minimise.
    pub objective: Option<Vec<f64>>,
}

impl AffineLmiSystem {
    pub fn new(layout: VariableLayout) -> Self {
        Self {
            layout,
            constraints: Vec::new(),
            objective: None,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.layout.len()
    }

    pub fn add(
        &mut self,
        name: &str,
        sense: Sense,
        f: impl Fn(&[f64]) -> DMatrix<f64>,
    ) -> Result<()> {
        let map = AffineMap::from_fn(self.n_vars(), f)
            .map_err(|e| Error::InvalidInput(format!("constraint '{name}': {e}")))?;
        self.constraints.push(Constraint {
            name: name.into(),
            sense,
            map,
        });
        Ok(())
    }

    /// Scalar constraint `f(x) ≤ 0` or `≥ 0`.
    pub fn add_scalar(
        &mut self,
        name: &str,
        sense: Sense,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<()> {
        self.add(name, sense, |x| DMatrix::from_element(1, 1, f(x)))
    }

    /// Minimise the linear functional `f`.
    pub fn minimize(&mut self, f: impl Fn(&[f64]) -> f64) {
        let n = self.n_vars();
        let mut x = vec![0.0; n];
        let c = (0..n)
            .map(|i| {
                x[i] = 1.0;
                let v = f(&x);
                x[i] = 0.0;
                v
            })
            .collect();
        self.objective = Some(c);
    }

    /// Human-readable dimensions and sparsity.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variables: {}", self.n_vars());
        for (name, h) in self.layout.variables() {
            let _ = writeln!(s, "  {name}: {:?} at {}", h.kind(), h.offset());
        }
        let _ = writeln!(s, "constraints: {}", self.constraints.len());
        for c in &self.constraints {
            let _ = writeln!(
                s,
                "  {}: {:?}, size {}, {} nonzero coefficient matrices",
                c.name,
                c.sense,
                c.map.dim(),
                c.map.terms.len()
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Feasibility needs phase-I slack below `-tolerance`.
    pub tolerance: f64,
    /// Relative accuracy of the optimal objective.
    pub objective_tolerance: f64,
    /// Newton-step budget over both phases.
    pub max_iters: usize,
    /// Box `|x_i| ≤ bound` keeping homogeneous problems bounded.
    pub bound: f64,
    /// Phase I stops once every constraint holds with this margin.
    pub interior_margin: f64,
    pub initial_point: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            objective_tolerance: 1e-8,
            max_iters: 3000,
            bound: 1e6,
            interior_margin: 1e-6,
            initial_point: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: Option<f64>,
    /// Minimum eigenvalue of each constraint in `⪰ 0` orientation (for
    /// equalities: minus the largest absolute entry).
    pub residuals: Vec<f64>,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpOutcome {
    Feasible(SdpSolution),
    /// Phase I could not push the common slack below `-tolerance`.
    Infeasible {
        slack: f64,
    },
}

impl SdpOutcome {
    pub fn feasible(self) -> Option<SdpSolution> {
        match self {
            Self::Feasible(s) => Some(s),
            Self::Infeasible { .. } => None,
        }
    }
}

/// Solves the system, verifying returned points with a dense symmetric
/// eigenvalue routine.
pub fn solve(system: &AffineLmiSystem, options: &SolverOptions) -> Result<SdpOutcome> {
    let n = system.n_vars();
    let mut equalities: Vec<AffineMap> = Vec::new();
    let mut inequalities: Vec<AffineMap> = Vec::new();
    let oriented: Vec<(Sense, AffineMap)> = system
        .constraints
        .iter()
        .map(|c| (c.sense, c.oriented()))
        .collect();
    let mut paired = vec![false; oriented.len()];
    for i in 0..oriented.len() {
        if oriented[i].0 == Sense::Zero {
            equalities.push(oriented[i].1.clone());
            paired[i] = true;
            continue;
        }
        if paired[i] {
            continue;
        }
        if let Some(j) = (i + 1..oriented.len()).find(|&j| {
            !paired[j]
                && oriented[j].0 != Sense::Zero
                && oriented[i].1.is_negation_of(&oriented[j].1)
        }) {
            paired[i] = true;
            paired[j] = true;
            equalities.push(oriented[i].1.clone());
            continue;
        }
        inequalities.push(oriented[i].1.clone());
    }

    let affine = match eliminate_equalities(&equalities, n)? {
        Ok(a) => a,
        Err(slack) => return Ok(SdpOutcome::Infeasible { slack }),
    };
    let ny = affine.z.ncols();
    let blocks: Vec<Block> = inequalities.iter().map(|m| affine.reduce(m)).collect();
    let mut linear: Vec<(DVector<f64>, f64)> = Vec::with_capacity(2 * n);
    for i in 0..n {
        let row = affine.z.row(i).transpose();
        linear.push((-&row, options.bound - affine.xp[i]));
        linear.push((row, options.bound + affine.xp[i]));
    }
    let objective = system.objective.as_ref().map(|c| {
        let c = DVector::from_column_slice(c);
        (affine.z.transpose() * &c, c.dot(&affine.xp))
    });

    let finish = |y: &DVector<f64>, steps: usize| -> SdpOutcome {
        let x: Vec<f64> = (&affine.xp + &affine.z * y).iter().copied().collect();
        let residuals = verify(system, &x);
        let objective = system
            .objective
            .as_ref()
            .map(|c| c.iter().zip(&x).map(|(a, b)| a * b).sum());
        SdpOutcome::Feasible(SdpSolution {
            x,
            objective,
            residuals,
            newton_steps: steps,
        })
    };

    if ny == 0 {
        let y = DVector::zeros(0);
        let worst = blocks
            .iter()
            .map(|b| min_eigenvalue(&b.eval(&y)))
            .fold(f64::INFINITY, f64::min);
        return Ok(if worst > options.tolerance || blocks.is_empty() {
            finish(&y, 0)
        } else {
            SdpOutcome::Infeasible { slack: -worst }
        });
    }

    let y0 = match &options.initial_point {
        Some(x0) if x0.len() == n => {
            let d = DVector::from_column_slice(x0) - &affine.xp;
            let y = affine.z.transpose() * d;
            let x = &affine.xp + &affine.z * &y;
            let limit = 0.5 * options.bound;
            if x.amax() < limit {
                y
            } else {
                DVector::zeros(ny)
            }
        }
        _ => DVector::zeros(ny),
    };

    let mut trace = Trace::default();
    let phase1 = phase_one(&blocks, &linear, y0, options, &mut trace)?;
    let (y, slack) = phase1;
    if slack >= -options.tolerance {
        return Ok(SdpOutcome::Infeasible { slack });
    }
    let Some((c, _)) = objective else {
        return Ok(finish(&y, trace.steps));
    };
    let y = barrier(
        &Problem {
            blocks: &blocks,
            linear: &linear,
            objective: &c,
        },
        y,
        Stop::Objective(options.objective_tolerance),
        options,
        &mut trace,
    )?
    .0;
    Ok(finish(&y, trace.steps))
}

/// Minimum eigenvalue of every constraint in `⪰ 0` orientation.
fn verify(system: &AffineLmiSystem, x: &[f64]) -> Vec<f64> {
    system
        .constraints
        .iter()
        .map(|c| {
            let g = c.oriented().eval(x);
            match c.sense {
                Sense::Zero => -g.amax(),
                _ => min_eigenvalue(&g),
            }
        })
        .collect()
}

/// Dense reduced constraint `G(y) = G_0 + Σ y_k G_k`.
struct Block {
    g0: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.g0.clone();
        for (k, g) in &self.terms {
            m += g * y[*k];
        }
        m
    }
}

/// `x = xp + Z y`.
struct AffineSubspace {
    xp: DVector<f64>,
    z: DMatrix<f64>,
    identity: bool,
}

impl AffineSubspace {
    fn reduce(&self, map: &AffineMap) -> Block {
        if self.identity {
            return Block {
                g0: map.constant.clone(),
                terms: map.terms.clone(),
            };
        }
        let mut g0 = map.constant.clone();
        for (i, g) in &map.terms {
            g0 += g * self.xp[*i];
        }
        let mut terms = Vec::new();
        for k in 0..self.z.ncols() {
            let mut g = DMatrix::zeros(map.dim(), map.dim());
            for (i, gi) in &map.terms {
                let w = self.z[(*i, k)];
                if w != 0.0 {
                    g += gi * w;
                }
            }
            if g.amax() > 0.0 {
                terms.push((k, g));
            }
        }
        Block { g0, terms }
    }
}

/// Returns the affine parametrisation of the equality set, or the residual
/// when the equalities are inconsistent.
fn eliminate_equalities(
    equalities: &[AffineMap],
    n: usize,
) -> Result<core::result::Result<AffineSubspace, f64>> {
    if equalities.is_empty() {
        return Ok(Ok(AffineSubspace {
            xp: DVector::zeros(n),
            z: DMatrix::identity(n, n),
            identity: true,
        }));
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for eq in equalities {
        let d = eq.dim();
        for r in 0..d {
            for c in r..d {
                let mut a = vec![0.0; n];
                for (i, g) in &eq.terms {
                    a[*i] = g[(r, c)];
                }
                rows.push((a, -eq.constant[(r, c)]));
            }
        }
    }
    let m = rows.len().max(n);
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (r, (row, rhs)) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
        b[r] = *rhs;
    }
    let svd = a.clone().svd(true, true);
    let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) else {
        return Err(Error::NumericalFailure(
            "SVD of the equality system failed".into(),
        ));
    };
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thresh = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let mut xp = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        let vk = v_t.row(k).transpose();
        if *s > thresh {
            xp += vk * (u.column(k).dot(&b) / s);
        } else {
            null_cols.push(vk);
        }
    }
    let residual = (&a * &xp - &b).amax();
    if residual > 1e-9 * (1.0 + b.amax()) {
        return Ok(Err(residual));
    }
    let z = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Ok(Ok(AffineSubspace {
        xp,
        z,
        identity: false,
    }))
}

#[derive(Default)]
struct Trace {
    steps: usize,
    log: Vec<(f64, f64, f64)>,
}

impl Trace {
    fn record(&mut self, t: f64, value: f64, decrement: f64) {
        self.steps += 1;
        if self.log.len() == 12 {
            self.log.remove(0);
        }
        self.log.push((t, value, decrement));
    }

    fn diagnostics(&self, phase: &str) -> String {
        let mut s = format!(
            "{phase}: Newton budget exhausted after {} steps; last iterates (t, value, decrement):",
            self.steps
        );
        for (t, v, d) in &self.log {
            let _ = write!(s, " ({t:.3e}, {v:.6e}, {d:.3e})");
        }
        s
    }
}

struct Problem<'a> {
    blocks: &'a [Block],
    linear: &'a [(DVector<f64>, f64)],
    objective: &'a DVector<f64>,
}

enum Stop {
    /// Stop when the objective drops below `-margin` or is certified
    /// nonnegative.
    Slack {
        margin: f64,
        tolerance: f64,
    },
    Objective(f64),
}

fn phase_one(
    blocks: &[Block],
    linear: &[(DVector<f64>, f64)],
    y0: DVector<f64>,
    options: &SolverOptions,
    trace: &mut Trace,
) -> Result<(DVector<f64>, f64)> {
    let ny = y0.len();
    let s_index = ny;
    let aug: Vec<Block> = blocks
        .iter()
        .map(|b| {
            let mut terms = b.terms.clone();
            terms.push((s_index, DMatrix::identity(b.g0.nrows(), b.g0.nrows())));
            Block {
                g0: b.g0.clone(),
                terms,
            }
        })
        .collect();
    let lin: Vec<(DVector<f64>, f64)> = linear
        .iter()
        .map(|(a, c)| (a.clone().insert_row(ny, 0.0), *c))
        .collect();
    let worst = blocks
        .iter()
        .map(|b| min_eigenvalue(&b.eval(&y0)))
        .fold(f64::INFINITY, f64::min);
    let s0 = (-worst).max(0.0) + 1.0;
    let w0 = y0.insert_row(ny, s0);
    let mut c = DVector::zeros(ny + 1);
    c[s_index] = 1.0;
    let (w, _) = barrier(
        &Problem {
            blocks: &aug,
            linear: &lin,
            objective: &c,
        },
        w0,
        Stop::Slack {
            margin: options.interior_margin,
            tolerance: options.tolerance,
        },
        options,
        trace,
    )?;
    let y = w.rows(0, ny).into_owned();
    let slack = -blocks
        .iter()
        .map(|b| min_eigenvalue(&b.eval(&y)))
        .fold(f64::INFINITY, f64::min);
    Ok((y, slack))
}

/// Barrier value and the Cholesky factors, or `None` outside the domain.
fn barrier_value(
    p: &Problem,
    w: &DVector<f64>,
    t: f64,
) -> Option<(f64, Vec<DMatrix<f64>>, Vec<f64>)> {
    let mut value = t * p.objective.dot(w);
    let mut factors = Vec::with_capacity(p.blocks.len());
    for b in p.blocks {
        let chol = b.eval(w).cholesky()?;
        let l = chol.unpack();
        value -= 2.0 * l.diagonal().iter().map(|d| libm::log(*d)).sum::<f64>();
        factors.push(l);
    }
    let mut slacks = Vec::with_capacity(p.linear.len());
    for (a, c) in p.linear {
        let s = a.dot(w) + c;
        if !(s > 0.0) {
            return None;
        }
        value -= libm::log(s);
        slacks.push(s);
    }
    Some((value, factors, slacks))
}

fn barrier(
    p: &Problem,
    mut w: DVector<f64>,
    stop: Stop,
    options: &SolverOptions,
    trace: &mut Trace,
) -> Result<(DVector<f64>, f64)> {
    let nw = w.len();
    let m: f64 = p.blocks.iter().map(|b| b.g0.nrows() as f64).sum::<f64>() + p.linear.len() as f64;
    let mut t = 1.0;
    let mu = 8.0;
    let phase = match stop {
        Stop::Slack { .. } => "phase I",
        Stop::Objective(_) => "phase II",
    };
    let value_of = |w: &DVector<f64>| p.objective.dot(w);
    if barrier_value(p, &w, t).is_none() {
        return Err(Error::NumericalFailure(format!(
            "{phase}: start point is not interior"
        )));
    }
    loop {
        // Centering by damped Newton.
        for _ in 0..200 {
            if trace.steps >= options.max_iters {
                return Err(Error::NumericalFailure(trace.diagnostics(phase)));
            }
            let (f0, factors, slacks) = barrier_value(p, &w, t).ok_or_else(|| {
                Error::NumericalFailure(format!("{phase}: iterate left the domain"))
            })?;
            let (grad, hess) = derivatives(p, &factors, &slacks, t, nw);
            let dir = newton_direction(&hess, &grad)?;
            let decrement = -grad.dot(&dir);
            trace.record(t, value_of(&w), decrement);
            if let Stop::Slack { margin, .. } = stop {
                if value_of(&w) < -margin {
                    return Ok((w.clone(), value_of(&w)));
                }
            }
            if decrement < 1e-10 {
                break;
            }
            let mut step = 1.0 / (1.0 + libm::sqrt(decrement.max(0.0)));
            if decrement < 0.25 {
                step = 1.0;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &w + &dir * step;
                if let Some((f1, _, _)) = barrier_value(p, &trial, t) {
                    if f1 <= f0 - 0.25 * step * decrement {
                        w = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let value = value_of(&w);
        let gap = m / t;
        match stop {
            Stop::Slack { margin, tolerance } => {
                if value < -margin || value - gap > tolerance || gap < 0.1 * tolerance {
                    return Ok((w, value));
                }
            }
            Stop::Objective(tol) => {
                if gap <= tol * value.abs().max(1e-2) {
                    return Ok((w, value));
                }
            }
        }
        t *= mu;
    }
}

fn derivatives(
    p: &Problem,
    factors: &[DMatrix<f64>],
    slacks: &[f64],
    t: f64,
    nw: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut grad = p.objective * t;
    let mut hess = DMatrix::zeros(nw, nw);
    for (b, l) in p.blocks.iter().zip(factors) {
        // M_k = L⁻¹ G_k L⁻ᵀ
        let ms: Vec<(usize, DMatrix<f64>)> = b
            .terms
            .iter()
            .map(|(k, g)| {
                let left = l.solve_lower_triangular(g).expect("nonsingular factor");
                let m = l
                    .solve_lower_triangular(&left.transpose())
                    .expect("nonsingular factor");
                (*k, m)
            })
            .collect();
        for (a, (i, mi)) in ms.iter().enumerate() {
            grad[*i] -= mi.trace();
            for (j, mj) in ms.iter().take(a + 1) {
                let v = mi.dot(mj);
                hess[(*i, *j)] += v;
                if *i != *j {
                    hess[(*j, *i)] += v;
                }
            }
        }
    }
    for ((a, _), s) in p.linear.iter().zip(slacks) {
        grad -= a / *s;
        hess += (a * a.transpose()) / (s * s);
    }
    (grad, hess)
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = hess.clone().cholesky() {
        return Ok(-ch.solve(grad));
    }
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut reg = 1e-14 * scale;
    for _ in 0..12 {
        let shifted = hess + DMatrix::identity(hess.nrows(), hess.nrows()) * reg;
        if let Some(ch) = shifted.cholesky() {
            return Ok(-ch.solve(grad));
        }
        reg *= 100.0;
    }
    Err(Error::NumericalFailure(
        "Newton system is not positive definite".into(),
    ))
}

/// Solves `Fᵀ P + P F = -I` through the vectorised (Kronecker) linear system.
pub fn lyapunov_solve(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if f.ncols() != n {
        return Err(Error::Dimension("Lyapunov matrix is not square".into()));
    }
    let abscissa = spectral_abscissa(f);
    if !(abscissa < 0.0) {
        return Err(Error::InvalidInput(format!(
            "matrix is not Hurwitz (spectral abscissa {abscissa:e})"
        )));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let ft = f.transpose();
    // vec(FᵀP + PF) = (I ⊗ Fᵀ + Fᵀ ⊗ I) vec(P) for column-major vec.
    let kron = id.kronecker(&ft) + ft.kronecker(&id);
    let rhs = -DVector::from_column_slice(id.as_slice());
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("Lyapunov system is singular".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let residual = (&ft * &p + &p * f + &id).amax();
    if residual > 1e-10 * p.amax().max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "Lyapunov residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn minimise_scalar_with_matrix_constraint() {
        let mut layout = VariableLayout::new();
        let x = layout.scalar("x");
        let mut sys = AffineLmiSystem::new(layout);
        sys.add("xI - I", Sense::PositiveSemidefinite, |v| {
            DMatrix::identity(2, 2) * (read_scalar(v, x) - 1.0)
        })
        .unwrap();
        sys.minimize(|v| read_scalar(v, x));
        let sol = solve(&sys, &SolverOptions::default())
            .unwrap()
            .feasible()
            .unwrap();
        assert_relative_eq!(sol.x[0], 1.0, max_relative = 1e-6);
    }

    #[test]
    fn contradiction_is_infeasible() {
        let mut layout = VariableLayout::new();
        let x = layout.scalar("x");
        let mut sys = AffineLmiSystem::new(layout);
        sys.add_scalar("x <= -1", Sense::NegativeSemidefinite, |v| {
            read_scalar(v, x) + 1.0
        })
        .unwrap();
        sys.add("xI >= I", Sense::PositiveSemidefinite, |v| {
            DMatrix::identity(2, 2) * (read_scalar(v, x) - 1.0)
        })
        .unwrap();
        match solve(&sys, &SolverOptions::default()).unwrap() {
            SdpOutcome::Infeasible { slack } => assert!(slack > 0.5),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    fn lyapunov_as_inequalities(f: &DMatrix<f64>, eps: f64) -> (AffineLmiSystem, VarHandle) {
        let n = f.nrows();
        let mut layout = VariableLayout::new();
        let p = layout.symmetric("P", n);
        let mut sys = AffineLmiSystem::new(layout);
        let lyap = move |v: &[f64], f: &DMatrix<f64>| {
            let pm = read_symmetric(v, p);
            f.transpose() * &pm + &pm * f + DMatrix::identity(n, n)
        };
        let f1 = f.clone();
        sys.add("upper", Sense::NegativeSemidefinite, move |v| lyap(v, &f1))
            .unwrap();
        let f2 = f.clone();
        sys.add("lower", Sense::NegativeSemidefinite, move |v| -lyap(v, &f2))
            .unwrap();
        sys.add("P >= eps I", Sense::PositiveSemidefinite, move |v| {
            read_symmetric(v, p) - DMatrix::identity(n, n) * eps
        })
        .unwrap();
        (sys, p)
    }

    #[test]
    fn lyapunov_equality_pair() {
        let f = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let (sys, p) = lyapunov_as_inequalities(&f, 1e-3);
        let sol = solve(&sys, &SolverOptions::default())
            .unwrap()
            .feasible()
            .unwrap();
        let direct = lyapunov_solve(&f).unwrap();
        assert!((read_symmetric(&sol.x, p) - direct).amax() < 1e-6);
    }

    #[test]
    fn lyapunov_direct_examples() {
        let p = lyapunov_solve(&(-DMatrix::<f64>::identity(3, 3))).unwrap();
        assert!((p - DMatrix::<f64>::identity(3, 3) * 0.5).amax() < 1e-14);
        let f = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let p = lyapunov_solve(&f).unwrap();
        let r = f.transpose() * &p + &p * &f + DMatrix::identity(2, 2);
        assert!(r.amax() <= 1e-10 * p.amax());
        assert!(matches!(
            lyapunov_solve(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rejects_non_affine_maps() {
        let mut layout = VariableLayout::new();
        let x = layout.scalar("x");
        let mut sys = AffineLmiSystem::new(layout);
        assert!(sys
            .add_scalar("square", Sense::PositiveSemidefinite, |v| read_scalar(v, x)
                .powi(2))
            .is_err());
    }

    #[test]
    fn packed_round_trip() {
        let mut layout = VariableLayout::new();
        let p = layout.symmetric("P", 3);
        let c = layout.full("C", 2, 3);
        let mut x = vec![0.0; layout.len()];
        let pm = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64 + 0.5);
        let cm = DMatrix::from_fn(2, 3, |i, j| (3 * i + j) as f64);
        write_symmetric(&mut x, p, &pm);
        write_full(&mut x, c, &cm);
        assert_eq!(read_symmetric(&x, p), pm);
        assert_eq!(read_full(&x, c), cm);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn scaling_a_constraint_keeps_the_verdict(a in -2.0f64..2.0, s in 0.1f64..10.0) {
            let f = DMatrix::from_row_slice(2, 2, &[a, 1.0, -1.0, -0.5]);
            let verdict = |scale: f64| {
                let mut layout = VariableLayout::new();
                let p = layout.symmetric("P", 2);
                let mut sys = AffineLmiSystem::new(layout);
                let f1 = f.clone();
                sys.add("lyap", Sense::NegativeSemidefinite, move |v| {
                    let pm = read_symmetric(v, p);
                    (f1.transpose() * &pm + &pm * &f1 + DMatrix::identity(2, 2)) * scale
                }).unwrap();
                sys.add("P", Sense::PositiveSemidefinite, move |v| read_symmetric(v, p) - DMatrix::identity(2, 2)).unwrap();
                matches!(solve(&sys, &SolverOptions::default()).unwrap(), SdpOutcome::Feasible(_))
            };
            let hurwitz = spectral_abscissa(&f) < 0.0;
            prop_assume!(spectral_abscissa(&f).abs() > 0.05);
            prop_assert_eq!(verdict(1.0), hurwitz);
            prop_assert_eq!(verdict(s), hurwitz);
        }
    }
}
