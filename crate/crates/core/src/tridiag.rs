//! Symmetric tridiagonal eigenpairs: Sturm-sequence bisection plus inverse
//! iteration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        debug_assert_eq!(off.len() + 1, diag.len());
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    pub fn norm(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
    }

    /// Number of eigenvalues strictly below `x`.
    fn count_below(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.len() {
            q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `count` smallest eigenvalues in increasing order.
    pub fn lowest_eigenvalues(&self, count: usize) -> Result<Vec<f64>> {
        if count > self.len() {
            return Err(Error::OutOfRange(format!(
                "requested {count} eigenvalues of a {}x{} matrix",
                self.len(),
                self.len()
            )));
        }
        let (glo, ghi) = self.gershgorin();
        let norm = self.norm();
        let pivmin = f64::MIN_POSITIVE.max(f64::EPSILON * f64::EPSILON * norm * norm);
        let abs_tol = 4.0 * f64::EPSILON * norm;
        let mut out = Vec::with_capacity(count);
        let mut lo_start = glo - abs_tol;
        for k in 0..count {
            let mut lo = lo_start;
            let mut hi = ghi + abs_tol;
            let mut iters = 0;
            while hi - lo > abs_tol.max(2.0 * f64::EPSILON * lo.abs().max(hi.abs())) {
                iters += 1;
                if iters > 400 {
                    return Err(Error::NumericalFailure(format!(
                        "bisection for eigenvalue {k} stalled in [{lo:e}, {hi:e}]"
                    )));
                }
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.count_below(mid, pivmin) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let lambda = 0.5 * (lo + hi);
            out.push(lambda);
            lo_start = lo;
        }
        Ok(out)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            out[i] = s;
        }
        out
    }

    /// Unit eigenvector for the eigenvalue estimate `lambda`, orthogonalised
    /// against `previous`. Returns the vector and its relative residual.
    pub fn eigenvector(&self, lambda: f64, previous: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let n = self.len();
        let norm = self.norm();
        let lu = ShiftedLu::factor(self, lambda, f64::EPSILON * norm);
        let mut seed: u64 = 0x9E37_79B9_7F4A_7C15 ^ (previous.len() as u64);
        let mut x: Vec<f64> = (0..n)
            .map(|_| {
                seed = seed
                    .wrapping_mul(6_364_136_223_846_793_005)
                    .wrapping_add(1_442_695_040_888_963_407);
                ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        normalize(&mut x);
        let mut residual = f64::INFINITY;
        for _ in 0..6 {
            x = lu.solve(&x);
            for p in previous {
                let d: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
                for (xi, pi) in x.iter_mut().zip(p) {
                    *xi -= d * pi;
                }
            }
            normalize(&mut x);
            let tx = self.apply(&x);
            residual = libm::sqrt(
                tx.iter()
                    .zip(&x)
                    .map(|(a, b)| (a - lambda * b) * (a - lambda * b))
                    .sum::<f64>(),
            ) / norm;
            if residual < 1e-12 {
                return Ok((x, residual));
            }
        }
        if residual < 1e-9 {
            Ok((x, residual))
        } else {
            Err(Error::NumericalFailure(format!(
                "inverse iteration at lambda = {lambda:e} stopped with relative residual {residual:e}"
            )))
        }
    }
}

fn normalize(x: &mut [f64]) {
    let s = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
    if s > 0.0 {
        for v in x {
            *v /= s;
        }
    }
}

/// LU factorisation of `T - sigma I` with partial pivoting.
struct ShiftedLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn factor(t: &SymTridiagonal, sigma: f64, tiny: f64) -> Self {
        let n = t.len();
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n];
        let mut swapped = vec![false; n];
        let guard = |v: f64| if v.abs() < tiny { tiny } else { v };
        let mut cur_d = t.diag[0] - sigma;
        let mut cur_c = if n > 1 { t.off[0] } else { 0.0 };
        for i in 0..n.saturating_sub(1) {
            let sub = t.off[i];
            let next_d = t.diag[i + 1] - sigma;
            let next_c = if i + 2 < n { t.off[i + 1] } else { 0.0 };
            if cur_d.abs() >= sub.abs() {
                let d = guard(cur_d);
                let m = sub / d;
                u0[i] = d;
                u1[i] = cur_c;
                u2[i] = 0.0;
                mult[i] = m;
                cur_d = next_d - m * cur_c;
                cur_c = next_c;
            } else {
                let m = cur_d / sub;
                u0[i] = sub;
                u1[i] = next_d;
                u2[i] = next_c;
                mult[i] = m;
                swapped[i] = true;
                cur_d = cur_c - m * next_d;
                cur_c = -m * next_c;
            }
        }
        u0[n - 1] = guard(cur_d);
        Self {
            u0,
            u1,
            u2,
            mult,
            swapped,
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                y.swap(i, i + 1);
            }
            y[i + 1] -= self.mult[i] * y[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.u1[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= self.u2[i] * x[i + 2];
            }
            x[i] = s / self.u0[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn discrete_laplacian_spectrum() {
        let n = 50;
        let t = laplacian(n);
        let ev = t.lowest_eigenvalues(n).unwrap();
        for (k, &l) in ev.iter().enumerate() {
            let exact =
                2.0 - 2.0 * libm::cos((k + 1) as f64 * core::f64::consts::PI / (n + 1) as f64);
            assert!((l - exact).abs() < 1e-13, "k={k} {l} vs {exact}");
        }
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let t = SymTridiagonal::new(
            (0..40).map(|i| 1.0 + i as f64 * 0.3).collect(),
            (0..39).map(|i| 0.5 + 0.01 * i as f64).collect(),
        );
        let ev = t.lowest_eigenvalues(10).unwrap();
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        for &l in &ev {
            let (v, res) = t.eigenvector(l, &vecs).unwrap();
            assert!(res < 1e-10);
            vecs.push(v);
        }
        for i in 0..vecs.len() {
            for j in 0..vecs.len() {
                let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lu_solves_shifted_system() {
        let t = laplacian(7);
        let lu = ShiftedLu::factor(&t, 0.37, 1e-300);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.0).collect();
        let x = lu.solve(&b);
        let tx = t.apply(&x);
        for i in 0..7 {
            assert!((tx[i] - 0.37 * x[i] - b[i]).abs() < 1e-12);
        }
    }
}
