use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretization of `(s, t, τ, α)`: uniform `t_i = iΔ` on `[0, T]`
/// shared by birth times, sorted `s` and `α` grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub n_t: usize,
    pub s_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
}

impl GridSpec {
    /// 512 steps, `s = 0, 0.05, …, 1`, 64 ages on `[0, horizon]`.
    pub fn with_defaults(horizon: f64) -> Self {
        GridSpec {
            horizon,
            n_t: 512,
            s_grid: uniform(0.0, 1.0, 21),
            alpha_grid: uniform(0.0, horizon, 64),
        }
    }

    pub fn new(horizon: f64, n_t: usize, s_grid: Vec<f64>) -> Self {
        GridSpec { horizon, n_t, s_grid, alpha_grid: vec![0.0] }
    }

    pub fn with_alpha_grid(mut self, alpha_grid: Vec<f64>) -> Self {
        self.alpha_grid = alpha_grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::IncompatibleGrid(m.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if self.n_t == 0 {
            return bad("n_t must be at least 1");
        }
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.s_grid) || self.s_grid.first() != Some(&0.0) || self.s_grid.last() != Some(&1.0) {
            return bad("s grid must be increasing from 0 to 1");
        }
        if !sorted(&self.alpha_grid) || self.alpha_grid.first() != Some(&0.0) {
            return bad("alpha grid must be increasing from 0");
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_t {
            self.horizon
        } else {
            i as f64 * self.delta()
        }
    }

    pub fn s_index(&self, s: f64) -> Option<usize> {
        self.s_grid.iter().position(|&x| x == s)
    }

    /// Same grid with `n_t` halved; fails unless `n_t` is even.
    pub fn coarsened(&self) -> Result<GridSpec> {
        if self.n_t % 2 != 0 || self.n_t < 2 {
            return Err(Error::IncompatibleGrid("n_t must be even to coarsen".into()));
        }
        let mut g = self.clone();
        g.n_t /= 2;
        Ok(g)
    }
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Index and weight for linear interpolation on a sorted grid, flat
/// beyond both ends.
pub fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if last == 0 || x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[last] {
        return (last, 0.0);
    }
    let j = grid.partition_point(|&g| g <= x) - 1;
    (j, (x - grid[j]) / (grid[j + 1] - grid[j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let g = GridSpec::with_defaults(1.0);
        g.validate().unwrap();
        assert_eq!(g.s_grid.len(), 21);
        assert_eq!(g.alpha_grid.len(), 64);
        assert_eq!(g.t(g.n_t), 1.0);
        assert!(GridSpec::new(1.0, 4, vec![0.0, 0.5]).validate().is_err());
        assert!(GridSpec::new(0.0, 4, vec![0.0, 1.0]).validate().is_err());
    }

    #[test]
    fn locate_flat_extrapolation() {
        let g = [0.0, 1.0, 3.0];
        assert_eq!(locate(&g, -1.0), (0, 0.0));
        assert_eq!(locate(&g, 0.5), (0, 0.5));
        assert_eq!(locate(&g, 2.0), (1, 0.5));
        assert_eq!(locate(&g, 5.0), (2, 0.0));
        assert_eq!(locate(&[0.0], 5.0), (0, 0.0));
    }
}
