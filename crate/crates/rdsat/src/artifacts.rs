//! On-disk artifacts: CSV tables, certificate files and the stage manifest.
//!
//! Floats are written with 17 significant digits so every file round-trips
//! exactly and re-runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rdsat_core::controller::Gains;
use rdsat_core::lmi::{CertificateSolution, Residuals, ShapingStep, TheoremTag};
use rdsat_core::sim::SimulationTrace;
use rdsat_core::spectral::{MeasurementMode, ModalData};
use rdsat_core::sturm_liouville::{BasisParts, CoefficientField, SpectralBasis};

pub const BASIS: &str = "basis.csv";
pub const EIGENFUNCTIONS: &str = "eigenfunctions.csv";
pub const MODES: &str = "modes.csv";
pub const TAILS: &str = "tails.csv";
pub const GAINS: &str = "gains.csv";
pub const TRACE: &str = "trace.csv";
pub const MANIFEST: &str = "manifest.toml";
pub const SUMMARY: &str = "summary.txt";

pub fn certificate_file(tag: TheoremTag) -> String {
    format!("certificate_{}.txt", tag.name())
}

pub fn shaped_certificate_file(tag: TheoremTag) -> String {
    format!("certificate_{}_doa.txt", tag.name())
}

pub fn doa_log_file(tag: TheoremTag) -> String {
    format!("doa_{}.csv", tag.name())
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T> = std::result::Result<T, ArtifactError>;

fn malformed(path: &Path, message: impl Into<String>) -> ArtifactError {
    ArtifactError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            ArtifactError::Missing(path.to_path_buf())
        } else {
            ArtifactError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ArtifactError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path)(source),
        other => malformed(path, format!("{other:?}")),
    }
}

/// `x` with 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| malformed(path, format!("`{s}` is not a number")))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt(*v)))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| io_err(path)(e))
}

/// Numeric CSV: header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        rows.push(
            rec.iter()
                .map(|s| parse_f64(path, s))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| malformed(path, format!("no column `{name}`")))
}

fn columns_with_prefix(header: &[String], prefix: &str) -> Vec<usize> {
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(prefix))
        .map(|(i, _)| i)
        .collect()
}

pub fn write_basis(dir: &Path, basis: &SpectralBasis) -> Result<()> {
    let header = ["n", "lambda", "lambda_raw"].map(String::from).to_vec();
    let rows: Vec<Vec<f64>> = basis
        .eigenvalues()
        .iter()
        .zip(basis.raw_eigenvalues())
        .enumerate()
        .map(|(i, (l, r))| vec![(i + 1) as f64, *l, *r])
        .collect();
    write_table(&dir.join(BASIS), &header, &rows)?;

    let c = basis.coefficients();
    let mut header: Vec<String> = ["x", "p", "q", "dp"].map(String::from).to_vec();
    header.extend((1..=basis.n_max()).map(|n| format!("phi_{n}")));
    let grid = basis.grid();
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| {
            let mut row = vec![grid.node(i), c.p()[i], c.q()[i], c.dp()[i]];
            row.extend(basis.eigenfunctions().iter().map(|f| f[i]));
            row
        })
        .collect();
    write_table(&dir.join(EIGENFUNCTIONS), &header, &rows)
}

pub fn read_basis(
    dir: &Path,
    theta1: f64,
    theta2: f64,
    max_residual: f64,
) -> Result<SpectralBasis> {
    let path = dir.join(BASIS);
    let (h, rows) = read_table(&path)?;
    let (il, ir) = (
        column(&path, &h, "lambda")?,
        column(&path, &h, "lambda_raw")?,
    );
    let eigenvalues: Vec<f64> = rows.iter().map(|r| r[il]).collect();
    let raw_eigenvalues: Vec<f64> = rows.iter().map(|r| r[ir]).collect();

    let path = dir.join(EIGENFUNCTIONS);
    let (h, rows) = read_table(&path)?;
    let get = |name: &str| -> Result<Vec<f64>> {
        let i = column(&path, &h, name)?;
        Ok(rows.iter().map(|r| r[i]).collect())
    };
    let coefficients = CoefficientField::from_samples(get("p")?, get("q")?, Some(get("dp")?))
        .map_err(|e| malformed(&path, e.to_string()))?;
    let eigenfunctions = (1..=eigenvalues.len())
        .map(|n| get(&format!("phi_{n}")))
        .collect::<Result<Vec<_>>>()?;
    SpectralBasis::from_parts(BasisParts {
        theta1,
        theta2,
        coefficients,
        eigenvalues,
        raw_eigenvalues,
        eigenfunctions,
        max_residual,
    })
    .map_err(|e| malformed(&path, e.to_string()))
}

pub fn write_modal(dir: &Path, modal: &ModalData) -> Result<()> {
    let m = modal.input_count();
    let mut header: Vec<String> = vec!["n".into(), "lambda".into()];
    header.extend((1..=m).map(|k| format!("b_{k}")));
    header.push("c".into());
    let rows: Vec<Vec<f64>> = (0..modal.n_max())
        .map(|i| {
            let mut row = vec![(i + 1) as f64, modal.eigenvalues[i]];
            row.extend(modal.b_coeffs.row(i).iter());
            row.push(modal.c_coeffs[i]);
            row
        })
        .collect();
    write_table(&dir.join(MODES), &header, &rows)?;

    let mut header: Vec<String> = vec!["N".into()];
    header.extend((1..=m).map(|k| format!("residual_b_{k}")));
    if modal.residual_c_sq.is_some() {
        header.push("residual_c".into());
    }
    if modal.tail_m1.is_some() {
        header.push("m1".into());
    }
    for (eps, _) in &modal.tail_m2 {
        header.push(format!("m2(eps={})", fmt(*eps)));
    }
    let rows: Vec<Vec<f64>> = (0..=modal.n_max())
        .map(|n| {
            let mut row = vec![n as f64];
            row.extend(&modal.residual_b_sq[n]);
            if let Some(r) = &modal.residual_c_sq {
                row.push(r[n]);
            }
            if let Some(r) = &modal.tail_m1 {
                row.push(r[n]);
            }
            for (_, t) in &modal.tail_m2 {
                row.push(t[n]);
            }
            row
        })
        .collect();
    write_table(&dir.join(TAILS), &header, &rows)
}

/// Inverse of [`write_modal`]; the sensing mode follows from the tail columns.
pub fn read_modal(dir: &Path) -> Result<ModalData> {
    let path = dir.join(MODES);
    let (h, rows) = read_table(&path)?;
    let il = column(&path, &h, "lambda")?;
    let ic = column(&path, &h, "c")?;
    let ib = columns_with_prefix(&h, "b_");
    if ib.is_empty() {
        return Err(malformed(&path, "no actuator columns"));
    }
    let n_max = rows.len();
    let eigenvalues = rows.iter().map(|r| r[il]).collect();
    let c_coeffs = rows.iter().map(|r| r[ic]).collect();
    let b_coeffs = DMatrix::from_fn(n_max, ib.len(), |i, k| rows[i][ib[k]]);

    let path = dir.join(TAILS);
    let (h, rows) = read_table(&path)?;
    if rows.len() != n_max + 1 {
        return Err(malformed(
            &path,
            format!("{} rows, expected {}", rows.len(), n_max + 1),
        ));
    }
    let irb = columns_with_prefix(&h, "residual_b_");
    if irb.len() != ib.len() {
        return Err(malformed(&path, "actuator count differs from modes.csv"));
    }
    let residual_b_sq: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| irb.iter().map(|&i| r[i]).collect())
        .collect();
    let col = |name: &str| {
        h.iter()
            .position(|x| x == name)
            .map(|i| rows.iter().map(|r| r[i]).collect::<Vec<f64>>())
    };
    let residual_c_sq = col("residual_c");
    let tail_m1 = col("m1");
    let mut tail_m2 = Vec::new();
    for (i, name) in h.iter().enumerate() {
        if let Some(eps) = name
            .strip_prefix("m2(eps=")
            .and_then(|s| s.strip_suffix(')'))
        {
            tail_m2.push((parse_f64(&path, eps)?, rows.iter().map(|r| r[i]).collect()));
        }
    }
    let mode = match (&residual_c_sq, &tail_m1, tail_m2.is_empty()) {
        (Some(_), None, true) => MeasurementMode::Bounded,
        (None, Some(_), true) => MeasurementMode::DirichletLeft,
        (None, None, false) => MeasurementMode::NeumannLeft,
        _ => {
            return Err(malformed(
                &path,
                "cannot infer the sensing mode from the tail columns",
            ))
        }
    };
    Ok(ModalData {
        eigenvalues,
        b_coeffs,
        c_coeffs,
        b_norm_sq: residual_b_sq[0].clone(),
        c_norm_sq: residual_c_sq.as_ref().map(|r| r[0]),
        residual_b_sq,
        residual_c_sq,
        tail_m1,
        tail_m2,
        mode,
    })
}

/// Long format `name,row,col,value` (`k` is `m × N0`, `l` is `N0 × 1`).
pub fn write_gains(path: &Path, gains: &Gains) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["name", "row", "col", "value"])
        .map_err(csv_err(path))?;
    for i in 0..gains.k.nrows() {
        for j in 0..gains.k.ncols() {
            w.write_record([
                "k".to_string(),
                i.to_string(),
                j.to_string(),
                fmt(gains.k[(i, j)]),
            ])
            .map_err(csv_err(path))?;
        }
    }
    for i in 0..gains.l.len() {
        w.write_record([
            "l".to_string(),
            i.to_string(),
            "0".to_string(),
            fmt(gains.l[i]),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| io_err(path)(e))
}

pub fn read_gains(path: &Path) -> Result<Gains> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut k = Vec::new();
    let mut l = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 4 {
            return Err(malformed(path, "expected name,row,col,value"));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| malformed(path, format!("bad index `{s}`")))
        };
        let entry = (idx(&rec[1])?, idx(&rec[2])?, parse_f64(path, &rec[3])?);
        match &rec[0] {
            "k" => k.push(entry),
            "l" => l.push(entry),
            other => return Err(malformed(path, format!("unknown gain `{other}`"))),
        }
    }
    let rows = k.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let cols = k.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let n0 = l.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    if rows == 0 || cols != n0 || k.len() != rows * cols || l.len() != n0 {
        return Err(malformed(path, "incomplete gain matrices"));
    }
    let mut km = DMatrix::zeros(rows, cols);
    for (i, j, v) in k {
        km[(i, j)] = v;
    }
    let mut lv = DVector::zeros(n0);
    for (i, _, v) in l {
        lv[i] = v;
    }
    Ok(Gains { k: km, l: lv })
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "[{name}]");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt(m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), fmt)
}

/// Header of `key = value` lines, then `[P]` and `[C]` row-major sections.
pub fn format_certificate(sol: &CertificateSolution) -> String {
    let mut s = String::new();
    let t0: Vec<String> = sol.t0.iter().map(|v| fmt(*v)).collect();
    let r = &sol.residuals;
    let header = [
        ("theorem_tag", sol.tag.name().to_string()),
        ("n0", sol.n0.to_string()),
        ("n", sol.n.to_string()),
        ("kappa", fmt(sol.kappa)),
        ("alpha", fmt(sol.alpha)),
        ("epsilon", opt(sol.epsilon)),
        ("beta", fmt(sol.beta)),
        ("gamma", fmt(sol.gamma)),
        ("mu", fmt(sol.mu)),
        ("tau", fmt(sol.tau)),
        ("t0", t0.join(",")),
        ("theta1_max", fmt(r.theta1_max)),
        ("theta2_min", fmt(r.theta2_min)),
        ("theta3", fmt(r.theta3)),
        ("theta4", opt(r.theta4)),
        ("p_min", fmt(r.p_min)),
    ];
    for (k, v) in header {
        let _ = writeln!(s, "{k} = {v}");
    }
    write_matrix(&mut s, "P", &sol.p);
    write_matrix(&mut s, "C", &sol.cmat);
    s
}

pub fn parse_certificate(path: &Path, text: &str) -> Result<CertificateSolution> {
    let mut fields = std::collections::BTreeMap::new();
    let mut sections: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push((name.to_string(), Vec::new()));
        } else if let Some((_, rows)) = sections.last_mut() {
            rows.push(
                line.split(',')
                    .map(|v| parse_f64(path, v))
                    .collect::<Result<_>>()?,
            );
        } else {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed(path, format!("expected `key = value`, got `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let field = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| malformed(path, format!("missing `{k}`")))
    };
    let num = |k: &str| field(k).and_then(|v| parse_f64(path, v));
    let opt_num = |k: &str| -> Result<Option<f64>> {
        match field(k)?.as_str() {
            "none" => Ok(None),
            v => parse_f64(path, v).map(Some),
        }
    };
    let count = |k: &str| {
        field(k)?
            .parse::<usize>()
            .map_err(|_| malformed(path, format!("`{k}` must be a count")))
    };
    let tag = TheoremTag::parse(field("theorem_tag")?)
        .ok_or_else(|| malformed(path, "unknown theorem_tag"))?;
    let matrix = |name: &str| -> Result<DMatrix<f64>> {
        let rows = &sections
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| malformed(path, format!("missing [{name}] section")))?
            .1;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
            return Err(malformed(
                path,
                format!("[{name}] is not a rectangular matrix"),
            ));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    };
    let n0 = count("n0")?;
    let n = count("n")?;
    let p = matrix("P")?;
    let cmat = matrix("C")?;
    if p.nrows() != 2 * n || p.ncols() != 2 * n || cmat.ncols() != n0 {
        return Err(malformed(path, "matrix sizes do not match n0 and n"));
    }
    let t0 = field("t0")?
        .split(',')
        .map(|v| parse_f64(path, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(CertificateSolution {
        tag,
        n0,
        n,
        alpha: num("alpha")?,
        kappa: num("kappa")?,
        epsilon: opt_num("epsilon")?,
        t0,
        p,
        beta: num("beta")?,
        gamma: num("gamma")?,
        mu: num("mu")?,
        tau: num("tau")?,
        cmat,
        residuals: Residuals {
            theta1_max: num("theta1_max")?,
            theta2_min: num("theta2_min")?,
            theta3: num("theta3")?,
            theta4: opt_num("theta4")?,
            p_min: num("p_min")?,
        },
    })
}

pub fn write_certificate(path: &Path, sol: &CertificateSolution) -> Result<()> {
    write_text(path, &format_certificate(sol))
}

pub fn read_certificate(path: &Path) -> Result<CertificateSolution> {
    parse_certificate(path, &read_text(path)?)
}

/// `iteration,fixed,r`, one row per shaping step.
pub fn write_doa_log(path: &Path, history: &[ShapingStep]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["iteration", "fixed", "r"])
        .map_err(csv_err(path))?;
    for s in history {
        let fixed = match s.fixed {
            rdsat_core::lmi::FixedVariable::T => "T",
            rdsat_core::lmi::FixedVariable::C => "C",
        };
        w.write_record([s.iteration.to_string(), fixed.to_string(), fmt(s.r)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| io_err(path)(e))
}

/// The `r` column of a shaping log.
pub fn read_doa_log(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        out.push(parse_f64(
            path,
            rec.get(2).ok_or_else(|| malformed(path, "missing r"))?,
        )?);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, trace: &SimulationTrace) -> Result<()> {
    let ns = trace.modal_states.first().map_or(0, Vec::len);
    let n = trace.observer_states.first().map_or(0, Vec::len);
    let m = trace.inputs.first().map_or(0, Vec::len);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=ns).map(|i| format!("z_{i}")));
    header.extend((1..=n).map(|i| format!("zhat_{i}")));
    header.extend((1..=m).map(|k| format!("u_{k}")));
    header.extend((1..=m).map(|k| format!("u_sat_{k}")));
    header.push("y".into());
    if trace.lyapunov.is_some() {
        header.push("V".into());
    }
    header.extend(["l2_norm", "h1_norm", "error_l2_norm"].map(String::from));
    let rows: Vec<Vec<f64>> = (0..trace.len())
        .map(|k| {
            let mut row = vec![trace.times[k]];
            row.extend(&trace.modal_states[k]);
            row.extend(&trace.observer_states[k]);
            row.extend(&trace.inputs[k]);
            row.extend(&trace.saturated_inputs[k]);
            row.push(trace.outputs[k]);
            if let Some(v) = &trace.lyapunov {
                row.push(v[k]);
            }
            row.extend([trace.l2_norm[k], trace.h1_norm[k], trace.error_l2_norm[k]]);
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Per-stage key/value summaries, one TOML table per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub table: toml::Table,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let table = text
                    .parse::<toml::Table>()
                    .map_err(|e| malformed(&path, e.to_string()))?;
                Ok(Self { table })
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = toml::to_string(&self.table).map_err(|e| malformed(&path, e.to_string()))?;
        write_text(&path, &text)
    }

    pub fn stage(&self, name: &str) -> Option<&toml::Table> {
        self.table.get(name).and_then(toml::Value::as_table)
    }

    pub fn set_stage(&mut self, name: &str, table: toml::Table) {
        self.table
            .insert(name.to_string(), toml::Value::Table(table));
    }

    /// Drops the tables of `names` (outputs of stages that must be redone).
    pub fn clear(&mut self, names: &[&str]) {
        for n in names {
            self.table.remove(*n);
        }
    }

    pub fn number(&self, stage: &str, key: &str) -> Option<f64> {
        match self.stage(stage)?.get(key)? {
            toml::Value::Float(f) => Some(*f),
            toml::Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rdsat_core::lmi::FixedVariable;

    fn scratch(name: &str) -> PathBuf {
        let dir =
            std::env::temp_dir().join(format!("rdsat-artifacts-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_certificate() -> CertificateSolution {
        CertificateSolution {
            tag: TheoremTag::Thm4,
            n0: 1,
            n: 2,
            alpha: 2.0,
            kappa: 0.1234567890123456,
            epsilon: Some(0.125),
            t0: vec![1.0, 0.5],
            p: DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64)),
            beta: 1e-3,
            gamma: std::f64::consts::PI,
            mu: 7.0 / 3.0,
            tau: 0.1,
            cmat: DMatrix::from_row_slice(2, 1, &[-0.3, 1.0 / 7.0]),
            residuals: Residuals {
                theta1_max: -1e-6,
                theta2_min: 2e-9,
                theta3: -4.0,
                theta4: Some(0.5),
                p_min: 1e-4,
            },
        }
    }

    #[test]
    fn certificate_round_trips_exactly() {
        let sol = sample_certificate();
        let text = format_certificate(&sol);
        assert!(text.starts_with("theorem_tag = thm4\n"));
        let back = parse_certificate(Path::new("c.txt"), &text).unwrap();
        assert_eq!(back, sol);
        let mut plain = sol.clone();
        plain.epsilon = None;
        plain.residuals.theta4 = None;
        let back = parse_certificate(Path::new("c.txt"), &format_certificate(&plain)).unwrap();
        assert_eq!(back, plain);
    }

    #[test]
    fn truncated_certificate_is_malformed() {
        let text = format_certificate(&sample_certificate());
        let cut: String = text
            .lines()
            .filter(|l| !l.starts_with("mu"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = parse_certificate(Path::new("c.txt"), &cut).unwrap_err();
        assert!(err.to_string().contains("missing `mu`"));
    }

    #[test]
    fn gains_round_trip() {
        let dir = scratch("gains");
        let g = Gains {
            k: DMatrix::from_row_slice(2, 1, &[2.59, 3.41]),
            l: DVector::from_vec(vec![15.13]),
        };
        let path = dir.join(GAINS);
        write_gains(&path, &g).unwrap();
        assert_eq!(read_gains(&path).unwrap(), g);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("k,1,0,3.4100000000000001e0"));
    }

    #[test]
    fn doa_log_round_trips() {
        let dir = scratch("doa");
        let path = dir.join("doa_thm1.csv");
        let hist = [
            ShapingStep {
                iteration: 1,
                fixed: FixedVariable::T,
                r: 2.0,
            },
            ShapingStep {
                iteration: 2,
                fixed: FixedVariable::C,
                r: 1.5,
            },
        ];
        write_doa_log(&path, &hist).unwrap();
        assert_eq!(read_doa_log(&path).unwrap(), vec![2.0, 1.5]);
    }

    #[test]
    fn missing_files_are_reported_as_missing() {
        let dir = scratch("missing");
        assert!(matches!(read_modal(&dir), Err(ArtifactError::Missing(_))));
        assert!(matches!(
            read_certificate(&dir.join("nope.txt")),
            Err(ArtifactError::Missing(_))
        ));
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt(-2.0), "-2.0000000000000000e0");
        for x in [std::f64::consts::E, 1e-300, -123456.789, 0.0] {
            assert_eq!(fmt(x).parse::<f64>().unwrap(), x);
        }
    }
}
