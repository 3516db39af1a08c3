//! Laws of genealogical branches: the survival function `Ḡ^T` and density
//! `g^T` of the root length `L^T`, and the offspring law `ν^T` given
//! `L^T = ℓ`, from solver tables or from simulated genealogies.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genealogy::Genealogy;
use crate::kernel::Kernel;
use crate::solver::{
    conditional_gf, fit_pgf, solve_ds_reduced, solve_extinction, solve_gf_reduced, GridSpec, SolutionTable, TableKind, EPS_COND,
};
use crate::tree::AgeMode;

/// Fit residual above which a `ν^T` inversion is rejected.
const MAX_FIT_RESIDUAL: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Solver,
    MonteCarlo,
}

/// `ν^T_{τ,ℓ}(n)` on a set of probe birth times, each with its own
/// length grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuTable {
    pub provenance: Provenance,
    pub tau: Vec<f64>,
    pub ell: Vec<Vec<f64>>,
    /// `nu[p][k][n]`.
    pub nu: Vec<Vec<Vec<f64>>>,
    /// Observations per cell (Monte Carlo only).
    pub counts: Option<Vec<Vec<u64>>>,
    /// Largest fit residual and largest `|tail mass|` (solver only).
    pub max_residual: f64,
    pub max_tail_mass: f64,
    /// Generating-function values `h[p][k][q]` at `s[q]` and the fit
    /// degree (solver only).
    pub s: Vec<f64>,
    pub h: Vec<Vec<Vec<f64>>>,
    pub degree: usize,
}

impl NuTable {
    fn from_values(tau: Vec<f64>, ell: Vec<Vec<f64>>, s: Vec<f64>, h: Vec<Vec<Vec<f64>>>, degree: usize) -> Result<Self> {
        let mut t = NuTable {
            provenance: Provenance::Solver,
            tau,
            ell,
            nu: Vec::with_capacity(h.len()),
            counts: None,
            max_residual: 0.0,
            max_tail_mass: 0.0,
            s,
            h,
            degree,
        };
        for probe in &t.h {
            let mut rows = Vec::with_capacity(probe.len());
            for v in probe {
                let fit = fit_pgf(&t.s, v, degree, true);
                t.max_residual = t.max_residual.max(fit.residual);
                t.max_tail_mass = t.max_tail_mass.max(fit.tail_mass.abs());
                rows.push(fit.coeffs);
            }
            t.nu.push(rows);
        }
        if !t.max_residual.is_finite() || t.max_residual > MAX_FIT_RESIDUAL {
            return Err(Error::IllConditionedInversion { residual: t.max_residual });
        }
        Ok(t)
    }

    /// Removes the leading `O(Δ²)` error of `fine` using `coarse`, solved
    /// at the same probes on a grid with twice the step, and refits `ν^T`
    /// on the coarse length grid.
    pub fn richardson(fine: &NuTable, coarse: &NuTable) -> Result<NuTable> {
        let solver = |t: &NuTable| t.provenance == Provenance::Solver && !t.h.is_empty();
        if !solver(fine) || !solver(coarse) || fine.s != coarse.s || fine.tau.len() != coarse.tau.len() {
            return Err(Error::IncompatibleGrid("extrapolation needs solver tables on matching probes".into()));
        }
        let mut h = Vec::with_capacity(coarse.h.len());
        for p in 0..coarse.tau.len() {
            if (fine.tau[p] - coarse.tau[p]).abs() > 1e-12 {
                return Err(Error::IncompatibleGrid(format!("probe {p} differs between tables")));
            }
            let mut rows = Vec::with_capacity(coarse.h[p].len());
            for (k, hc) in coarse.h[p].iter().enumerate() {
                let hf = fine.h[p].get(2 * k).ok_or_else(|| Error::IncompatibleGrid("fine grid is not a refinement".into()))?;
                if (fine.ell[p][2 * k] - coarse.ell[p][k]).abs() > 1e-12 {
                    return Err(Error::IncompatibleGrid("fine grid is not a refinement".into()));
                }
                rows.push(hf.iter().zip(hc).map(|(f, c)| (4.0 * f - c) / 3.0).collect());
            }
            h.push(rows);
        }
        NuTable::from_values(coarse.tau.clone(), coarse.ell.clone(), coarse.s.clone(), h, coarse.degree)
    }

    pub fn max_offspring(&self) -> usize {
        self.nu.iter().flatten().map(|v| v.len()).max().unwrap_or(1) - 1
    }

    fn at_probe(&self, p: usize, ell: f64, n: usize) -> f64 {
        let grid = &self.ell[p];
        let rows = &self.nu[p];
        let get = |k: usize| rows[k].get(n).copied().unwrap_or(0.0);
        if grid.len() == 1 || ell <= grid[0] {
            return get(0);
        }
        let last = grid.len() - 1;
        if ell >= grid[last] {
            return get(last);
        }
        let k = grid.partition_point(|&x| x <= ell) - 1;
        let w = (ell - grid[k]) / (grid[k + 1] - grid[k]);
        (1.0 - w) * get(k) + w * get(k + 1)
    }

    /// Linear interpolation in `τ` between probes and in `ℓ` along each
    /// probe, flat beyond the probed ranges.
    pub fn nu(&self, tau: f64, ell: f64, n: usize) -> f64 {
        let last = self.tau.len() - 1;
        if tau <= self.tau[0] {
            return self.at_probe(0, ell, n);
        }
        if tau >= self.tau[last] {
            return self.at_probe(last, ell, n);
        }
        let p = self.tau.partition_point(|&x| x <= tau) - 1;
        let w = (tau - self.tau[p]) / (self.tau[p + 1] - self.tau[p]);
        (1.0 - w) * self.at_probe(p, ell, n) + w * self.at_probe(p + 1, ell, n)
    }
}

/// `Ḡ^T`, `g^T` and (once solved) `ν^T` for one kernel and horizon.
#[derive(Clone, Debug)]
pub struct GenealogyLawTables {
    ds: SolutionTable,
    p0: SolutionTable,
    pub nu: Option<NuTable>,
}

impl GenealogyLawTables {
    /// `ds` is `∂_s F^T(0;·)` and `p0` the extinction table on the same grid.
    pub fn new(ds: SolutionTable, p0: SolutionTable) -> Result<Self> {
        if ds.kind() != TableKind::DsReduced || p0.kind() != TableKind::Extinction {
            return Err(Error::IncompatibleGrid("law tables need a ds_reduced and an extinction table".into()));
        }
        if ds.meta.grid != p0.meta.grid || ds.meta.kernel_id != p0.meta.kernel_id || ds.meta.mode != p0.meta.mode {
            return Err(Error::IncompatibleGrid("tables come from different grids, kernels or modes".into()));
        }
        Ok(GenealogyLawTables { ds, p0, nu: None })
    }

    /// Solves every table for `kernel` in symmetric mode on `grid` and on
    /// the grid with twice the step, and stores `ν^T` extrapolated from
    /// both at `n_probes` equally spaced birth times starting at 0.
    /// `grid.n_t` must be a multiple of `2·n_probes`.
    pub fn solve(kernel: &Kernel, grid: &GridSpec, n_probes: usize) -> Result<Self> {
        let n = grid.n_t;
        if n_probes == 0 || n % (2 * n_probes) != 0 {
            return Err(Error::IncompatibleGrid(format!("n_t={n} is not a multiple of 2x{n_probes} probes")));
        }
        let coarse = grid.coarsened()?;
        let one = |g: &GridSpec, stride: usize| -> Result<(GenealogyLawTables, NuTable)> {
            let p0 = solve_extinction(kernel, AgeMode::Symmetric, g)?;
            let ft = solve_gf_reduced(kernel, AgeMode::Symmetric, g, &p0)?;
            let et = conditional_gf(&ft, &p0)?;
            let ds = solve_ds_reduced(kernel, AgeMode::Symmetric, g, &p0)?;
            let law = GenealogyLawTables::new(ds, p0)?;
            let probes: Vec<usize> = (0..n_probes).map(|p| p * stride).collect();
            let nu = solve_ht(kernel, &et, &law, &probes)?;
            Ok((law, nu))
        };
        let (mut law, fine) = one(grid, n / n_probes)?;
        let (_, rough) = one(&coarse, n / 2 / n_probes)?;
        law.nu = Some(NuTable::richardson(&fine, &rough)?);
        Ok(law)
    }

    pub fn horizon(&self) -> f64 {
        self.ds.grid().horizon
    }

    pub fn kernel_id(&self) -> &str {
        &self.ds.meta.kernel_id
    }

    /// True when genealogical ages play no role (symmetric mode or an
    /// age-independent kernel).
    pub fn is_symmetric(&self) -> bool {
        self.ds.meta.mode == AgeMode::Symmetric || self.ds.n_alpha() == 1
    }

    pub fn p0(&self) -> &SolutionTable {
        &self.p0
    }

    pub fn ds(&self) -> &SolutionTable {
        &self.ds
    }

    fn survival_prob(&self, tau: f64, alpha: f64) -> Result<f64> {
        let p = self.p0.p0_at(tau, alpha)?;
        if 1.0 - p <= EPS_COND {
            return Err(Error::ConditioningDegenerate { tau, alpha, p0: p });
        }
        Ok(1.0 - p)
    }

    fn raw_survival(&self, tau: f64, alpha: f64, u: f64, q: f64) -> Result<f64> {
        let t = (tau + u).min(self.horizon());
        Ok(self.ds.eval(0, t, tau, alpha)? / q)
    }

    /// `Ḡ^T_{τ,α}(u) = Q(L^T ≥ u)` for `u ∈ (0, T − τ]`.
    pub fn survival(&self, tau: f64, alpha: f64, u: f64) -> Result<f64> {
        let t_end = self.horizon();
        if !(0.0..t_end).contains(&tau) || !(u > 0.0 && u <= t_end - tau) {
            return Err(Error::OutOfDomain(format!("u={u} outside (0, {}]", t_end - tau)));
        }
        let q = self.survival_prob(tau, alpha)?;
        Ok(self.raw_survival(tau, alpha, u, q)?.clamp(0.0, 1.0))
    }

    /// `g^T_{τ,α}(u)` for `u ∈ (0, T − τ)` by second-order differences of
    /// `Ḡ^T` with the grid step.
    pub fn density(&self, tau: f64, alpha: f64, u: f64) -> Result<f64> {
        let t_end = self.horizon();
        let span = t_end - tau;
        if !(0.0..t_end).contains(&tau) || !(u > 0.0 && u < span) {
            return Err(Error::OutOfDomain(format!("u={u} outside (0, {span})")));
        }
        let q = self.survival_prob(tau, alpha)?;
        let h = self.ds.grid().delta().min(span / 4.0);
        let f = |x: f64| self.raw_survival(tau, alpha, x, q);
        let d = if u - h > 0.0 && u + h <= span {
            (f(u + h)? - f(u - h)?) / (2.0 * h)
        } else if u - h <= 0.0 {
            let base = u.max(1e-3 * h);
            (-3.0 * f(base)? + 4.0 * f(base + h)? - f(base + 2.0 * h)?) / (2.0 * h)
        } else {
            (3.0 * f(u)? - 4.0 * f(u - h)? + f(u - 2.0 * h)?) / (2.0 * h)
        };
        Ok((-d).max(0.0))
    }

    pub fn nu(&self, tau: f64, ell: f64, n: usize) -> Result<f64> {
        let table = self.nu.as_ref().ok_or_else(|| Error::TableOutOfRange("offspring law not solved".into()))?;
        Ok(table.nu(tau, ell, n))
    }
}

/// Pseudo-inverse of the Vandermonde matrix on `s` with `degree + 1`
/// columns, mapping values to polynomial coefficients.
fn projector(s: &[f64], degree: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(s.len(), degree + 1, |r, c| s[r].powi(c as i32));
    a.pseudo_inverse(1e-13).expect("pseudo-inverse of a Vandermonde matrix")
}

fn poly_derivative(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (n, &cn) in c.iter().enumerate().skip(1).rev() {
        acc = acc * x + n as f64 * cn;
    }
    acc
}

/// Solves for the generating function `h^T_{τ,ℓ}` of `N^T` given
/// `L^T = ℓ` at the birth-time probes `probes` (grid indices) and
/// inverts it to `ν^T` by nonnegative least squares with degree
/// `max(n_max, 8)`.
///
/// For each probe the equation
///
/// `h^T_{τ,ℓ}(s) = s + (∂_t E_τ(s;τ+ℓ) − ∫_0^ℓ h^T_{τ,u}'(E_{τ+u}(s;τ+ℓ)) ∂_t E_{τ+u}(s;τ+ℓ) g^T_τ(u) du) / g^T_τ(ℓ)`
///
/// is marched in `ℓ` on the grid with the trapezoid rule; the term at
/// `u = ℓ` uses the unknown itself and is resolved by iteration. Time
/// derivatives of `E` are second-order differences on the grid.
pub fn solve_ht(
    kernel: &Kernel,
    et: &SolutionTable,
    law: &GenealogyLawTables,
    probes: &[usize],
) -> Result<NuTable> {
    if et.kind() != TableKind::ConditionalGf {
        return Err(Error::IncompatibleGrid("solve_ht needs a conditional_gf table".into()));
    }
    if et.meta.grid != law.ds.meta.grid || et.meta.kernel_id != law.kernel_id() || et.meta.kernel_id != kernel.id() {
        return Err(Error::IncompatibleGrid("conditional and law tables do not match".into()));
    }
    if !kernel.has_density() {
        return Err(Error::DensityMissing);
    }
    if !law.is_symmetric() || kernel.is_age_dependent() && et.meta.mode != AgeMode::Symmetric {
        return Err(Error::ModeMismatch);
    }
    let n = et.n();
    let dt = et.grid().delta();
    let s = et.s_values().to_vec();
    let ns = s.len();
    let march_degree = kernel.max_offspring().max(8).min(ns - 1);
    let fit_degree = kernel.max_offspring().max(8);
    let proj = projector(&s, march_degree);

    let results: Vec<(f64, Vec<f64>, Vec<Vec<f64>>)> = probes
        .par_iter()
        .map(|&j| {
            if j + 2 > n {
                return Err(Error::TableOutOfRange(format!("probe index {j} too close to the horizon")));
            }
            let tau = et.grid().t(j);
            let big_k = n - j;
            let q = 1.0 - law.p0.p0(j, 0);
            if q <= EPS_COND {
                return Err(Error::ConditioningDegenerate { tau, alpha: 0.0, p0: 1.0 - q });
            }
            // g^T_τ(ℓ_k) for k < K from the D column of birth time τ_j
            let dcol: Vec<f64> = (0..=big_k).map(|k| law.ds.open_value(0, j + k, j, 0) / q).collect();
            let g_t: Vec<f64> = (0..big_k)
                .map(|k| {
                    let d = if k == 0 {
                        (-3.0 * dcol[0] + 4.0 * dcol[1] - dcol[2]) / (2.0 * dt)
                    } else {
                        (dcol[k + 1] - dcol[k - 1]) / (2.0 * dt)
                    };
                    (-d).max(0.0)
                })
                .collect();
            // ∂_t E_{τ_b}(s_q; t_i) for b ≤ i < n
            let de = |q_idx: usize, i: usize, b: usize| -> f64 {
                let e = |ii: usize| et.open_value(q_idx, ii, b, 0);
                if i == b {
                    if i + 2 <= n {
                        (-3.0 * e(i) + 4.0 * e(i + 1) - e(i + 2)) / (2.0 * dt)
                    } else {
                        (e(i + 1) - e(i)) / dt
                    }
                } else {
                    (e(i + 1) - e(i - 1)) / (2.0 * dt)
                }
            };
            let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(big_k);
            let mut values: Vec<Vec<f64>> = Vec::with_capacity(big_k);
            for k in 0..big_k {
                let ell = k as f64 * dt;
                if g_t[k] <= 1e-12 {
                    return Err(Error::DensityVanishing { tau, length: ell });
                }
                let i = j + k;
                // known part of the integral (nodes k' < k)
                let known: Vec<f64> = (0..ns)
                    .map(|qi| {
                        (0..k)
                            .map(|kp| {
                                let w = if kp == 0 { 0.5 * dt } else { dt };
                                let b = j + kp;
                                let x = et.open_value(qi, i, b, 0);
                                w * poly_derivative(&coeffs[kp], x) * de(qi, i, b) * g_t[kp]
                            })
                            .sum()
                    })
                    .collect();
                let diag: Vec<f64> = (0..ns).map(|qi| de(qi, i, i)).collect();
                let lead: Vec<f64> = (0..ns).map(|qi| de(qi, i, j)).collect();
                let mut c = coeffs.last().cloned().unwrap_or_else(|| vec![0.0; march_degree + 1]);
                let mut v = vec![0.0; ns];
                for _ in 0..50 {
                    for qi in 0..ns {
                        let end = if k == 0 { 0.0 } else { 0.5 * dt * poly_derivative(&c, s[qi]) * diag[qi] * g_t[k] };
                        v[qi] = s[qi] + (lead[qi] - known[qi] - end) / g_t[k];
                    }
                    let next: Vec<f64> = (&proj * nalgebra::DVector::from_column_slice(&v)).iter().copied().collect();
                    let change = next.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    c = next;
                    if k == 0 || change <= 1e-14 {
                        break;
                    }
                }
                coeffs.push(c);
                values.push(v);
            }
            let ell: Vec<f64> = (0..big_k).map(|k| k as f64 * dt).collect();
            Ok((tau, ell, values))
        })
        .collect::<Result<_>>()?;
    let (mut taus, mut ells, mut hs) = (Vec::new(), Vec::new(), Vec::new());
    for (tau, ell, h) in results {
        taus.push(tau);
        ells.push(ell);
        hs.push(h);
    }
    NuTable::from_values(taus, ells, s, hs, fit_degree)
}

/// Frequencies of `N^T = n` among internal genealogical nodes binned by
/// birth time (`tau_edges`) and length (`ell_edges`); cells are reported
/// at bin midpoints. Offspring counts above `n_max` are pooled at `n_max`.
pub fn nu_monte_carlo(genealogies: &[Genealogy], tau_edges: &[f64], ell_edges: &[f64], n_max: usize) -> NuTable {
    let nt = tau_edges.len() - 1;
    let nl = ell_edges.len() - 1;
    let mut hist = vec![vec![vec![0u64; n_max + 1]; nl]; nt];
    let bin = |edges: &[f64], x: f64| -> Option<usize> {
        if x < edges[0] || x >= edges[edges.len() - 1] {
            None
        } else {
            Some(edges.partition_point(|&e| e <= x) - 1)
        }
    };
    for g in genealogies {
        for (tau, ell, n) in g.internal_nodes() {
            if let (Some(a), Some(b)) = (bin(tau_edges, tau), bin(ell_edges, ell)) {
                hist[a][b][n.min(n_max)] += 1;
            }
        }
    }
    let mid = |e: &[f64]| -> Vec<f64> { e.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect() };
    let counts: Vec<Vec<u64>> = hist.iter().map(|row| row.iter().map(|c| c.iter().sum()).collect()).collect();
    let nu = hist
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    let tot: u64 = c.iter().sum();
                    c.iter().map(|&x| if tot == 0 { 0.0 } else { x as f64 / tot as f64 }).collect()
                })
                .collect()
        })
        .collect();
    NuTable {
        provenance: Provenance::MonteCarlo,
        tau: mid(tau_edges),
        ell: vec![mid(ell_edges); nt],
        nu,
        counts: Some(counts),
        max_residual: 0.0,
        max_tail_mass: 0.0,
        s: Vec::new(),
        h: Vec::new(),
        degree: n_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::Genealogy;
    use crate::simulator::{sample_batch, SimSpec};
    use crate::solver::{conditional_gf, solve_ds_reduced, solve_extinction, solve_gf_reduced, uniform, GridSpec};

    fn law_for(k: &Kernel, t: f64, n: usize) -> (GenealogyLawTables, SolutionTable) {
        let grid = GridSpec::new(t, n, uniform(0.0, 1.0, 21));
        let p0 = solve_extinction(k, AgeMode::Symmetric, &grid).unwrap();
        let ft = solve_gf_reduced(k, AgeMode::Symmetric, &grid, &p0).unwrap();
        let et = conditional_gf(&ft, &p0).unwrap();
        let ds = solve_ds_reduced(k, AgeMode::Symmetric, &grid, &p0).unwrap();
        (GenealogyLawTables::new(ds, p0).unwrap(), et)
    }

    #[test]
    fn yule_root_length_is_exponential() {
        // without extinction L^T is the first split time, Exp(β) censored at T
        let k = Kernel::yule(1.5).unwrap();
        let (law, _) = law_for(&k, 1.0, 256);
        for u in [0.1, 0.4, 0.8, 1.0] {
            let g = law.survival(0.0, 0.0, u).unwrap();
            assert!((g - (-1.5 * u).exp()).abs() < 1e-3, "{u} {g}");
        }
        for u in [0.2, 0.5, 0.9] {
            let d = law.density(0.0, 0.0, u).unwrap();
            assert!((d - 1.5 * (-1.5 * u).exp()).abs() < 5e-3, "{u} {d}");
        }
        assert!(law.survival(0.0, 0.0, 0.0).is_err());
        assert!(law.density(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn survival_starts_at_one_and_decreases() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let (law, _) = law_for(&k, 1.0, 128);
        let mut prev = 1.0 + 1e-9;
        for i in 1..=64 {
            let g = law.survival(0.0, 0.0, i as f64 / 64.0).unwrap();
            assert!(g <= prev + 1e-9);
            prev = g;
        }
        assert!((law.survival(0.0, 0.0, 1e-6).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn birth_death_offspring_law_is_binary() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let (law, et) = law_for(&k, 1.0, 128);
        let nu = solve_ht(&k, &et, &law, &[0, 32, 64, 96]).unwrap();
        for p in &nu.nu {
            for row in p {
                assert!(row[2] >= 0.99, "{row:?}");
                assert!(row[1] <= 1e-3, "{row:?}");
            }
        }
    }

    #[test]
    fn monte_carlo_offspring_law_is_binary_for_birth_death() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let spec = SimSpec::new(0.0, 0.0, 1.0, AgeMode::Symmetric);
        let gs: Vec<Genealogy> = sample_batch(&k, &spec, 4, 2000)
            .unwrap()
            .iter()
            .filter_map(|t| Genealogy::from_tree(t, 1.0).ok())
            .collect();
        let nu = nu_monte_carlo(&gs, &[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0], 4);
        let counts = nu.counts.as_ref().unwrap();
        assert!(counts[0][0] > 0);
        for (a, row) in nu.nu.iter().enumerate() {
            for (b, cell) in row.iter().enumerate() {
                if counts[a][b] > 0 {
                    assert_eq!(cell[2], 1.0);
                }
            }
        }
    }
}
