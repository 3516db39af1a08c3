//! Backward marching for the Volterra-type equations
//!
//! `V_{τ,α}(t) = source + ∫_{[0,t−τ)} Φ(V_{τ+ℓ,a(α,ℓ)}(t), V_{τ+ℓ,0}(t)) g_{τ,α}(ℓ) dℓ`
//!
//! on the grid `t_i = iΔ`, `τ_j = jΔ`, with the composite trapezoid rule
//! on `ℓ_k = kΔ`. The right endpoint `τ + ℓ = t` takes the right-limit
//! value of `V` at its own birth time; the `k = 0` node refers to the
//! unknown itself and is resolved by fixed-point iteration. Birth times
//! are processed from `T` downwards so every other node is known.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, PgfValue};
use crate::solver::grid::{locate, GridSpec};
use crate::tree::AgeMode;

pub(crate) struct Setup<'a> {
    pub kernel: &'a Kernel,
    pub mode: AgeMode,
    pub grid: &'a GridSpec,
    pub n: usize,
    pub delta: f64,
    pub alphas: Vec<f64>,
    /// `(index, weight)` of `α_m + ℓ_k` on the age grid.
    shift: Vec<Vec<(usize, f64)>>,
    width: usize,
}

/// Kernel quantities along one birth cell `(τ_j, α_m)`.
pub(crate) struct Row {
    pub g: Vec<f64>,
    pub surv: Vec<f64>,
    pmf: Vec<f64>,
    width: usize,
}

impl Row {
    fn pmf(&self, k: usize) -> &[f64] {
        &self.pmf[k * self.width..(k + 1) * self.width]
    }

    pub fn h(&self, k: usize, r: f64, s: f64) -> f64 {
        let p = self.pmf(k);
        let mut poly = 0.0;
        for q in p[1..].iter().rev() {
            poly = poly * s + q;
        }
        p[0] + r * poly
    }

    pub fn h_full(&self, k: usize, r: f64, s: f64) -> PgfValue {
        crate::kernel::asym_pgf_of(self.pmf(k), r, s)
    }
}

/// Number of cells `(i, j)` with `0 ≤ j ≤ i ≤ n`.
pub(crate) fn tri_len(n: usize) -> usize {
    (n + 1) * (n + 2) / 2
}

#[inline]
pub(crate) fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl<'a> Setup<'a> {
    pub fn new(kernel: &'a Kernel, mode: AgeMode, grid: &'a GridSpec) -> Result<Self> {
        grid.validate()?;
        if !kernel.has_density() {
            return Err(Error::DensityMissing);
        }
        let alphas = if kernel.is_age_dependent() { grid.alpha_grid.clone() } else { vec![0.0] };
        let n = grid.n_t;
        let shift = alphas
            .iter()
            .map(|&a| (0..=n).map(|k| locate(&alphas, a + grid.t(k))).collect())
            .collect();
        Ok(Setup {
            kernel,
            mode,
            grid,
            n,
            delta: grid.delta(),
            alphas,
            shift,
            width: kernel.max_offspring().max(1) + 1,
        })
    }

    pub fn n_alpha(&self) -> usize {
        self.alphas.len()
    }

    /// Age cell of the rank-1 child born after `ℓ_k`.
    #[inline]
    pub fn r_index(&self, m: usize, k: usize) -> (usize, f64) {
        match self.mode {
            AgeMode::Asymmetric => self.shift[m][k],
            AgeMode::Symmetric => (0, 0.0),
        }
    }

    pub fn row(&self, j: usize, m: usize) -> Result<Row> {
        let tau = self.grid.t(j);
        let alpha = self.alphas[m];
        let len = self.n - j + 1;
        let mut g = Vec::with_capacity(len);
        let mut surv = Vec::with_capacity(len);
        let mut pmf = vec![0.0; len * self.width];
        for k in 0..len {
            let l = self.grid.t(j + k) - tau;
            let d = self.kernel.density(tau, alpha, l).ok_or(Error::DensityMissing)?;
            if !d.is_finite() {
                return Err(Error::InvalidKernel(format!("length density is unbounded at tau={tau}, l={l}")));
            }
            // survival as the trapezoid complement of g, so that mass is
            // conserved exactly by the march
            let s = match g.last() {
                None => 1.0,
                Some(&prev) => surv[k - 1] - 0.5 * self.delta * (prev + d),
            };
            g.push(d);
            surv.push(s);
            self.kernel.offspring_pmf_into(tau, alpha, l, &mut pmf[k * self.width..(k + 1) * self.width]);
        }
        Ok(Row { g, surv, pmf, width: self.width })
    }
}

/// Excursions outside `[0, 1]` up to this size are rounding, clamped
/// without being counted.
pub const CLAMP_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ClampStats {
    pub count: usize,
    pub max_violation: f64,
    pub cells: usize,
}

impl ClampStats {
    pub fn merge(&mut self, o: ClampStats) {
        self.count += o.count;
        self.max_violation = self.max_violation.max(o.max_violation);
        self.cells += o.cells;
    }
}

/// How the integrand combines the rank-1 value `r` and the others `s`.
pub(crate) trait Combine: Sync {
    fn apply(&self, k: usize, r: f64, s: f64) -> f64;
}

pub(crate) struct PgfCombine<'r>(pub &'r Row);

impl Combine for PgfCombine<'_> {
    #[inline]
    fn apply(&self, k: usize, r: f64, s: f64) -> f64 {
        self.0.h(k, r, s)
    }
}

/// Linearization `a_r[k]·r + a_s[k]·s`.
pub(crate) struct LinearCombine {
    pub a_r: Vec<f64>,
    pub a_s: Vec<f64>,
}

impl Combine for LinearCombine {
    #[inline]
    fn apply(&self, k: usize, r: f64, s: f64) -> f64 {
        self.a_r[k] * r + self.a_s[k] * s
    }
}

pub(crate) struct Step<'s, C, S, E> {
    pub setup: &'s Setup<'s>,
    pub j: usize,
    pub m: usize,
    pub row: &'s Row,
    pub combine: &'s C,
    /// `source(s_idx, i)`.
    pub source: S,
    /// Right-limit value at `τ' = t_i` for age cell `(index, weight)`.
    pub endpoint: E,
    pub only_last: bool,
    pub clamp: bool,
}

impl<C, S, E> Step<'_, C, S, E>
where
    C: Combine,
    S: Fn(usize, usize) -> f64 + Sync,
    E: Fn(usize, usize, (usize, f64)) -> f64 + Sync,
{
    /// Fills cells `(i, j, m)` for every `i > j` in every `s` slice.
    pub fn run(&self, data: &mut [Vec<f64>]) -> ClampStats {
        let setup = self.setup;
        let n = setup.n;
        let tl = tri_len(n);
        let (j, m) = (self.j, self.m);
        let dt = setup.delta;
        let g = &self.row.g;
        data.par_iter_mut()
            .enumerate()
            .map(|(si, v)| {
                let mut stats = ClampStats::default();
                let i_lo = if self.only_last { n.max(j + 1) } else { j + 1 };
                for i in i_lo..=n {
                    let base = tri(i, 0);
                    let len = i - j;
                    let get = |mm: usize, jj: usize| v[mm * tl + base + jj];
                    let mut sum = (self.source)(si, i);
                    let r_end = (self.endpoint)(si, i, setup.r_index(m, len));
                    let s_end = (self.endpoint)(si, i, (0, 0.0));
                    sum += 0.5 * dt * g[len] * self.combine.apply(len, r_end, s_end);
                    for k in 1..len {
                        let (lo, w) = setup.r_index(m, k);
                        let r = if w == 0.0 { get(lo, j + k) } else { (1.0 - w) * get(lo, j + k) + w * get(lo + 1, j + k) };
                        sum += dt * g[k] * self.combine.apply(k, r, get(0, j + k));
                    }
                    let c0 = 0.5 * dt * g[0];
                    let (lo0, _) = setup.r_index(m, 0);
                    let r_known = if lo0 == m { None } else { Some(get(lo0, j)) };
                    let s_known = if m == 0 { None } else { Some(get(0, j)) };
                    let mut x = sum;
                    for _ in 0..200 {
                        let next = sum + c0 * self.combine.apply(0, r_known.unwrap_or(x), s_known.unwrap_or(x));
                        let done = (next - x).abs() <= 1e-16;
                        x = next;
                        if done {
                            break;
                        }
                    }
                    stats.cells += 1;
                    if self.clamp && !(0.0..=1.0).contains(&x) {
                        let violation = if x < 0.0 { -x } else { x - 1.0 };
                        if violation > CLAMP_TOL {
                            stats.count += 1;
                        }
                        stats.max_violation = stats.max_violation.max(violation);
                        x = x.clamp(0.0, 1.0);
                    }
                    v[m * tl + base + j] = x;
                }
                stats
            })
            .reduce(ClampStats::default, |mut a, b| {
                a.merge(b);
                a
            })
    }
}
