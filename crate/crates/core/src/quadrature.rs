//! Uniform grids on [0, 1] and the quadrature rules used for inner products.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Uniformly spaced nodes `x_i = i h`, `h = 1 / (len - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformGrid {
    len: usize,
}

impl UniformGrid {
    pub fn new(len: usize) -> Result<Self> {
        if len < 5 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 5 points, got {len}"
            )));
        }
        Ok(Self { len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.len - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.len {
            1.0
        } else {
            i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.node(i)).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.len).map(|i| f(self.node(i))).collect()
    }

    /// Grid made of every other node, when the interval count is even.
    pub fn coarsened(&self) -> Option<Self> {
        let intervals = self.len - 1;
        (intervals.is_multiple_of(2) && intervals / 2 >= 4).then(|| Self {
            len: intervals / 2 + 1,
        })
    }
}

/// Composite Simpson weights; an odd interval count closes with the 3/8 rule.
pub fn simpson_weights(grid: UniformGrid) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing();
    let intervals = n - 1;
    let mut w = vec![0.0; n];
    let simpson_end = if intervals.is_multiple_of(2) {
        intervals
    } else {
        intervals - 3
    };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if simpson_end < intervals {
        let s = simpson_end;
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    w
}

/// Weighted inner products of grid functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    grid: UniformGrid,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn simpson(grid: UniformGrid) -> Self {
        Self {
            grid,
            weights: simpson_weights(grid),
        }
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.grid.len() {
            return Err(Error::Dimension(format!(
                "grid function has {} samples, grid has {}",
                f.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.inner(f, f)
    }
}

/// Second-order finite-difference derivative of grid samples.
pub fn derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        return d;
    }
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    d
}

/// Fourth-order one-sided derivative at the left end.
pub fn left_derivative(f: &[f64], h: f64) -> f64 {
    (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h)
}

/// Fourth-order one-sided derivative at the right end.
pub fn right_derivative(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5])
        / (12.0 * h)
}

const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss-Legendre rule on `[a, b]` with `panels` panels.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            total += w * half * (f(mid - half * x) + f(mid + half * x));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_is_exact_for_cubics() {
        for len in [11, 12, 13, 14] {
            let q = Quadrature::simpson(UniformGrid::new(len).unwrap());
            let f = q.grid().sample(|x| 4.0 * x * x * x - x + 2.0);
            assert_relative_eq!(q.integrate(&f), 2.5, epsilon = 1e-13);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let q = Quadrature::simpson(UniformGrid::new(2401).unwrap());
        assert_relative_eq!(q.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_smooth_functions() {
        let v = gauss_legendre(libm::cos, 0.1, 0.3, 4);
        assert_relative_eq!(v, libm::sin(0.3) - libm::sin(0.1), epsilon = 1e-15);
    }

    #[test]
    fn one_sided_derivatives_are_fourth_order() {
        let g = UniformGrid::new(101).unwrap();
        let f = g.sample(libm::exp);
        assert!((left_derivative(&f, g.spacing()) - 1.0).abs() < 1e-8);
        assert!((right_derivative(&f, g.spacing()) - core::f64::consts::E).abs() < 1e-7);
    }

    #[test]
    fn coarsening_requires_even_intervals() {
        assert_eq!(
            UniformGrid::new(2001).unwrap().coarsened().unwrap().len(),
            1001
        );
        assert!(UniformGrid::new(2000).unwrap().coarsened().is_none());
    }
}
