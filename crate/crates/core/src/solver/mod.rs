//! Grid solvers for extinction probabilities and the simple, reduced and
//! conditional generating functions, the `s`-derivative of the reduced
//! generating function at 0, and the closed-form birth-death oracle.

mod grid;
mod inversion;
mod kendall;
mod march;
mod table;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grid::{locate, uniform, GridSpec};
pub use inversion::{fit_pgf, PgfFit};
pub use kendall::{kendall_closed_form, kendall_coefficients};
pub use march::CLAMP_TOL;
pub use table::{SolutionTable, TableKind, TableMeta};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::tree::AgeMode;
use march::{tri, tri_len, ClampStats, LinearCombine, PgfCombine, Setup, Step};

/// Smallest admissible survival probability `1 − p^0` for conditioning.
pub const EPS_COND: f64 = 1e-10;

fn meta(kind: TableKind, setup: &Setup, s_values: Vec<f64>, stats: ClampStats) -> TableMeta {
    let mut grid = setup.grid.clone();
    grid.alpha_grid = setup.alphas.clone();
    TableMeta {
        kind,
        mode: setup.mode,
        grid,
        kernel_id: setup.kernel.id().to_string(),
        s_values,
        clamp_count: stats.count,
        max_violation: stats.max_violation,
        cells: stats.cells,
        diagnostics: BTreeMap::new(),
    }
}

fn check_p0(setup: &Setup, p0: &SolutionTable) -> Result<()> {
    let g = &p0.meta.grid;
    if p0.kind() != TableKind::Extinction
        || p0.meta.kernel_id != setup.kernel.id()
        || p0.meta.mode != setup.mode
        || g.n_t != setup.n
        || g.horizon != setup.grid.horizon
        || g.alpha_grid != setup.alphas
    {
        return Err(Error::IncompatibleGrid("extinction table does not match kernel, mode or grid".into()));
    }
    Ok(())
}

fn empty_slices(setup: &Setup, n_s: usize, kind: TableKind) -> Vec<Vec<f64>> {
    let tl = tri_len(setup.n);
    let mut v = vec![0.0; tl * setup.n_alpha()];
    for m in 0..setup.n_alpha() {
        for j in 0..=setup.n {
            v[m * tl + tri(j, j)] = kind.boundary();
        }
    }
    vec![v; n_s]
}

fn simple_slices(setup: &Setup, s_values: &[f64], only_last: bool) -> Result<(Vec<Vec<f64>>, ClampStats)> {
    let mut data = empty_slices(setup, s_values.len(), TableKind::SimpleGf);
    let mut stats = ClampStats::default();
    for j in (0..setup.n).rev() {
        for m in 0..setup.n_alpha() {
            let row = setup.row(j, m)?;
            let step = Step {
                setup,
                j,
                m,
                row: &row,
                combine: &PgfCombine(&row),
                source: |si: usize, i: usize| s_values[si] * row.surv[i - j],
                endpoint: |si: usize, _i: usize, _a: (usize, f64)| s_values[si],
                only_last,
                clamp: true,
            };
            stats.merge(step.run(&mut data));
        }
    }
    Ok((data, stats))
}

/// `p^0_{τ,α}(T)` with `T` the grid horizon.
pub fn solve_extinction(kernel: &Kernel, mode: AgeMode, grid: &GridSpec) -> Result<SolutionTable> {
    let setup = Setup::new(kernel, mode, grid)?;
    let (data, stats) = simple_slices(&setup, &[0.0], true)?;
    let n = setup.n;
    let tl = tri_len(n);
    let mut p0 = vec![0.0; (n + 1) * setup.n_alpha()];
    for m in 0..setup.n_alpha() {
        for j in 0..=n {
            p0[m * (n + 1) + j] = data[0][m * tl + tri(n, j)];
        }
    }
    Ok(SolutionTable { meta: meta(TableKind::Extinction, &setup, vec![0.0], stats), data: vec![p0], right_limit: vec![] })
}

/// `F_{τ,α}(s;t)` for `s` in the grid and `0 ≤ τ ≤ t ≤ T`.
pub fn solve_gf_simple(kernel: &Kernel, mode: AgeMode, grid: &GridSpec) -> Result<SolutionTable> {
    let setup = Setup::new(kernel, mode, grid)?;
    let (data, stats) = simple_slices(&setup, &grid.s_grid, false)?;
    let n = setup.n;
    let right_limit = grid.s_grid.iter().map(|&s| vec![s; (n + 1) * setup.n_alpha()]).collect();
    Ok(SolutionTable { meta: meta(TableKind::SimpleGf, &setup, grid.s_grid.clone(), stats), data, right_limit })
}

/// Tail `∫_{[t_i−τ_j, T−τ_j)} h̃(p^0, p^0) g dℓ` for every `i ≥ j`, indexed
/// by `i − j`.
fn extinct_tail(setup: &Setup, p0: &SolutionTable, row: &march::Row, j: usize, m: usize) -> Vec<f64> {
    let n = setup.n;
    let f: Vec<f64> = (0..=n - j)
        .map(|k| {
            let r = p0.p0_left_interp(j + k, setup.r_index(m, k));
            let s = p0.p0_left_interp(j + k, (0, 0.0));
            row.g[k] * row.h(k, r, s)
        })
        .collect();
    let mut tail = vec![0.0; n - j + 1];
    for k in (0..n - j).rev() {
        tail[k] = tail[k + 1] + 0.5 * setup.delta * (f[k] + f[k + 1]);
    }
    tail
}

fn reduced_slices(setup: &Setup, p0: &SolutionTable, s_values: &[f64], clamp: bool) -> Result<(Vec<Vec<f64>>, ClampStats)> {
    let mut data = empty_slices(setup, s_values.len(), TableKind::ReducedGf);
    let mut stats = ClampStats::default();
    for j in (0..setup.n).rev() {
        for m in 0..setup.n_alpha() {
            let row = setup.row(j, m)?;
            let tail = extinct_tail(setup, p0, &row, j, m);
            let step = Step {
                setup,
                j,
                m,
                row: &row,
                combine: &PgfCombine(&row),
                source: |si: usize, i: usize| {
                    let s = s_values[si];
                    s * row.surv[i - j] + (1.0 - s) * tail[i - j]
                },
                endpoint: |si: usize, i: usize, a: (usize, f64)| {
                    let s = s_values[si];
                    s + (1.0 - s) * p0.p0_left_interp(i, a)
                },
                only_last: false,
                clamp,
            };
            stats.merge(step.run(&mut data));
        }
    }
    Ok((data, stats))
}

/// `F^T_{τ,α}(s;t)` for `0 ≤ τ ≤ t ≤ T`.
pub fn solve_gf_reduced(kernel: &Kernel, mode: AgeMode, grid: &GridSpec, p0: &SolutionTable) -> Result<SolutionTable> {
    let setup = Setup::new(kernel, mode, grid)?;
    check_p0(&setup, p0)?;
    let (data, stats) = reduced_slices(&setup, p0, &grid.s_grid, true)?;
    let n = setup.n;
    let right_limit = grid
        .s_grid
        .iter()
        .map(|&s| {
            let mut v = vec![0.0; (n + 1) * setup.n_alpha()];
            for m in 0..setup.n_alpha() {
                for j in 0..=n {
                    v[m * (n + 1) + j] = s + (1.0 - s) * p0.p0_left(j, m);
                }
            }
            v
        })
        .collect();
    Ok(SolutionTable { meta: meta(TableKind::ReducedGf, &setup, grid.s_grid.clone(), stats), data, right_limit })
}

/// `E^T = (F^T − p^0(T)) / (1 − p^0(T))`.
pub fn conditional_gf(ft: &SolutionTable, p0: &SolutionTable) -> Result<SolutionTable> {
    if ft.kind() != TableKind::ReducedGf || p0.kind() != TableKind::Extinction {
        return Err(Error::IncompatibleGrid("conditional_gf needs a reduced and an extinction table".into()));
    }
    if ft.meta.grid != p0.meta.grid || ft.meta.kernel_id != p0.meta.kernel_id {
        return Err(Error::IncompatibleGrid("tables come from different grids or kernels".into()));
    }
    let n = ft.n();
    let tl = tri_len(n);
    let na = ft.n_alpha();
    for m in 0..na {
        for j in 0..n {
            let p = p0.p0(j, m);
            if 1.0 - p <= EPS_COND {
                return Err(Error::ConditioningDegenerate { tau: ft.grid().t(j), alpha: ft.alphas()[m], p0: p });
            }
        }
    }
    let data = ft
        .data
        .iter()
        .map(|v| {
            let mut out = v.clone();
            for m in 0..na {
                for i in 1..=n {
                    for j in 0..i {
                        let p = p0.p0(j, m);
                        let c = m * tl + tri(i, j);
                        out[c] = ((v[c] - p) / (1.0 - p)).clamp(0.0, 1.0);
                    }
                }
            }
            out
        })
        .collect();
    let right_limit = ft.meta.s_values.iter().map(|&s| vec![s; (n + 1) * na]).collect();
    let mut meta = ft.meta.clone();
    meta.kind = TableKind::ConditionalGf;
    Ok(SolutionTable { meta, data, right_limit })
}

/// `D_{τ,α}(t) = ∂_s F^T_{τ,α}(0;t)`, the probability that exactly one
/// branch alive at `t` has progeny extant at `T`.
pub fn solve_ds_reduced(kernel: &Kernel, mode: AgeMode, grid: &GridSpec, p0: &SolutionTable) -> Result<SolutionTable> {
    let setup = Setup::new(kernel, mode, grid)?;
    check_p0(&setup, p0)?;
    let n = setup.n;
    let mut data = empty_slices(&setup, 1, TableKind::DsReduced);
    let mut stats = ClampStats::default();
    for j in (0..n).rev() {
        for m in 0..setup.n_alpha() {
            let row = setup.row(j, m)?;
            let tail = extinct_tail(&setup, p0, &row, j, m);
            let mut lin = LinearCombine { a_r: vec![0.0; n - j + 1], a_s: vec![0.0; n - j + 1] };
            for k in 0..=n - j {
                let r = p0.p0_left_interp(j + k, setup.r_index(m, k));
                let s = p0.p0_left_interp(j + k, (0, 0.0));
                let h = row.h_full(k, r, s);
                lin.a_r[k] = h.d_r;
                lin.a_s[k] = h.d_s;
            }
            let step = Step {
                setup: &setup,
                j,
                m,
                row: &row,
                combine: &lin,
                source: |_si: usize, i: usize| row.surv[i - j] - tail[i - j],
                endpoint: |_si: usize, i: usize, a: (usize, f64)| 1.0 - p0.p0_left_interp(i, a),
                only_last: false,
                clamp: true,
            };
            stats.merge(step.run(&mut data));
        }
    }
    let mut rl = vec![0.0; (n + 1) * setup.n_alpha()];
    for m in 0..setup.n_alpha() {
        for j in 0..=n {
            rl[m * (n + 1) + j] = 1.0 - p0.p0_left(j, m);
        }
    }
    Ok(SolutionTable { meta: meta(TableKind::DsReduced, &setup, vec![0.0], stats), data, right_limit: vec![rl] })
}

/// Largest deviation between `ds` and the Richardson-extrapolated
/// centered difference of `F^T` in `s` at 0 (steps `h` and `2h`). The
/// result is also stored in the table diagnostics as `fd_max_diff`.
pub fn ds_fd_check(kernel: &Kernel, ds: &mut SolutionTable, p0: &SolutionTable, h: f64) -> Result<f64> {
    let grid = ds.meta.grid.clone();
    let setup = Setup::new(kernel, ds.meta.mode, &grid)?;
    check_p0(&setup, p0)?;
    let s_values = [-2.0 * h, -h, h, 2.0 * h];
    let (f, _) = reduced_slices(&setup, p0, &s_values, false)?;
    let n = setup.n;
    let tl = tri_len(n);
    let mut worst: f64 = 0.0;
    for m in 0..setup.n_alpha() {
        for i in 1..=n {
            for j in 0..i {
                let c = m * tl + tri(i, j);
                let d1 = (f[2][c] - f[1][c]) / (2.0 * h);
                let d2 = (f[3][c] - f[0][c]) / (4.0 * h);
                let fd = (4.0 * d1 - d2) / 3.0;
                worst = worst.max((fd - ds.value(0, i, j, m)).abs());
            }
        }
    }
    ds.meta.diagnostics.insert("fd_max_diff".into(), worst);
    Ok(worst)
}

/// Successive differences of `F_{0,0}(s; t)` on the coarse-grid points
/// when `n_t` is halved twice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_t: Vec<usize>,
    /// `max |F_{n/2} − F_n|`, `max |F_{n/4} − F_{n/2}|`.
    pub differences: Vec<f64>,
    /// Ratio of the coarse difference to the fine one.
    pub ratio: f64,
    /// Richardson estimate of the error of the finest solution.
    pub error_estimate: f64,
}

pub fn grid_halving(kernel: &Kernel, mode: AgeMode, grid: &GridSpec) -> Result<ConvergenceReport> {
    let g1 = grid.clone();
    let g2 = g1.coarsened()?;
    let g4 = g2.coarsened()?;
    let f1 = solve_gf_simple(kernel, mode, &g1)?;
    let f2 = solve_gf_simple(kernel, mode, &g2)?;
    let f4 = solve_gf_simple(kernel, mode, &g4)?;
    let n4 = g4.n_t;
    let mut d12: f64 = 0.0;
    let mut d24: f64 = 0.0;
    for si in 0..g1.s_grid.len() {
        for i in 1..=n4 {
            let a = f1.value(si, 4 * i, 0, 0);
            let b = f2.value(si, 2 * i, 0, 0);
            let c = f4.value(si, i, 0, 0);
            d12 = d12.max((a - b).abs());
            d24 = d24.max((b - c).abs());
        }
    }
    let ratio = if d12 > 0.0 { d24 / d12 } else { f64::INFINITY };
    let order = if ratio.is_finite() && ratio > 1.0 { ratio.log2() } else { 1.0 };
    let error_estimate = d12 / (2f64.powf(order) - 1.0).max(1e-12);
    Ok(ConvergenceReport { n_t: vec![g1.n_t, g2.n_t, g4.n_t], differences: vec![d12, d24], ratio, error_estimate })
}

/// Fails with `GridTooCoarse` if the Richardson estimate exceeds `tol`.
pub fn check_grid(kernel: &Kernel, mode: AgeMode, grid: &GridSpec, tol: f64) -> Result<ConvergenceReport> {
    let r = grid_halving(kernel, mode, grid)?;
    if r.error_estimate > tol {
        return Err(Error::GridTooCoarse { estimate: r.error_estimate, tolerance: tol });
    }
    Ok(r)
}

/// All tables for one kernel and grid.
#[derive(Clone, Debug)]
pub struct SolvedTables {
    pub p0: SolutionTable,
    pub simple: SolutionTable,
    pub reduced: SolutionTable,
    pub conditional: Option<SolutionTable>,
    pub ds: SolutionTable,
}

pub fn solve_all(kernel: &Kernel, mode: AgeMode, grid: &GridSpec) -> Result<SolvedTables> {
    let p0 = solve_extinction(kernel, mode, grid)?;
    let simple = solve_gf_simple(kernel, mode, grid)?;
    let reduced = solve_gf_reduced(kernel, mode, grid, &p0)?;
    let conditional = match conditional_gf(&reduced, &p0) {
        Ok(t) => Some(t),
        Err(Error::ConditioningDegenerate { .. }) => None,
        Err(e) => return Err(e),
    };
    let ds = solve_ds_reduced(kernel, mode, grid, &p0)?;
    Ok(SolvedTables { p0, simple, reduced, conditional, ds })
}

/// Grid as recorded in table metadata: age-independent kernels keep a
/// single age cell.
fn effective_grid(kernel: &Kernel, grid: &GridSpec) -> GridSpec {
    let mut g = grid.clone();
    if !kernel.is_age_dependent() {
        g.alpha_grid = vec![0.0];
    }
    g
}

fn cache_key_for(kernel: &Kernel, mode: AgeMode, grid: &GridSpec, kind: TableKind) -> String {
    let s_values = match kind {
        TableKind::Extinction | TableKind::DsReduced => vec![0.0],
        _ => grid.s_grid.clone(),
    };
    SolutionTable::cache_key(kind, mode, kernel.id(), &effective_grid(kernel, grid), &s_values)
}

/// Extinction table from the cache in `dir`, solving and storing it on a
/// miss. The flag is true on a cache hit.
pub fn extinction_cached(kernel: &Kernel, mode: AgeMode, grid: &GridSpec, dir: &Path) -> Result<(SolutionTable, bool)> {
    if let Some(t) = SolutionTable::load_cached(dir, &cache_key_for(kernel, mode, grid, TableKind::Extinction)) {
        return Ok((t, true));
    }
    let t = solve_extinction(kernel, mode, grid)?;
    t.store_cached(dir)?;
    Ok((t, false))
}

/// [`solve_all`] through the cache in `dir`, keyed by content hash of
/// kind, mode, kernel and grid; tables from other kernels or grids are
/// never matched. The flag is true when every table was cached.
pub fn solve_all_cached(kernel: &Kernel, mode: AgeMode, grid: &GridSpec, dir: &Path) -> Result<(SolvedTables, bool)> {
    let load = |kind| SolutionTable::load_cached(dir, &cache_key_for(kernel, mode, grid, kind));
    if let (Some(p0), Some(simple), Some(reduced), Some(ds)) = (
        load(TableKind::Extinction),
        load(TableKind::SimpleGf),
        load(TableKind::ReducedGf),
        load(TableKind::DsReduced),
    ) {
        let conditional = load(TableKind::ConditionalGf);
        return Ok((SolvedTables { p0, simple, reduced, conditional, ds }, true));
    }
    let all = solve_all(kernel, mode, grid)?;
    for t in [&all.p0, &all.simple, &all.reduced, &all.ds].into_iter().chain(all.conditional.as_ref()) {
        t.store_cached(dir)?;
    }
    Ok((all, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{LengthLaw, RateArgument, RateFunction};

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(1.0, n, uniform(0.0, 1.0, 5))
    }

    #[test]
    fn yule_never_goes_extinct() {
        let k = Kernel::yule(1.0).unwrap();
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &grid(64)).unwrap();
        for j in 0..64 {
            assert_eq!(p0.p0(j, 0), 0.0);
        }
        assert_eq!(p0.p0(64, 0), 1.0);
    }

    #[test]
    fn critical_extinction_matches_closed_form() {
        let k = Kernel::birth_death_constant(1.0, 1.0).unwrap();
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &grid(256)).unwrap();
        assert!((p0.p0(0, 0) - 0.5).abs() < 2e-3, "{}", p0.p0(0, 0));
        // p0 at τ is the closed form at T − τ
        let t = 0.5;
        assert!((p0.p0_at(0.5, 0.0).unwrap() - t / (1.0 + t)).abs() < 2e-3);
    }

    #[test]
    fn pure_death_extinction() {
        let k = Kernel::birth_death_constant(0.0, 1.0).unwrap();
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &grid(256)).unwrap();
        for j in [0, 64, 128, 200] {
            let exact = 1.0 - (-(1.0 - j as f64 / 256.0)).exp();
            assert!((p0.p0(j, 0) - exact).abs() < 1e-4);
        }
    }

    #[test]
    fn simple_gf_yule_value_and_normalization() {
        let k = Kernel::yule(1.0).unwrap();
        let g = GridSpec::new(2f64.ln(), 256, vec![0.0, 0.5, 1.0]);
        let f = solve_gf_simple(&k, AgeMode::Symmetric, &g).unwrap();
        assert!((f.value(1, 256, 0, 0) - 1.0 / 3.0).abs() < 1e-4, "{}", f.value(1, 256, 0, 0));
        for i in 0..=256 {
            for j in 0..=i {
                assert!((f.value(2, i, j, 0) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simple_gf_depends_on_elapsed_time_only() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let f = solve_gf_simple(&k, AgeMode::Symmetric, &grid(64)).unwrap();
        let mut worst: f64 = 0.0;
        for si in 0..5 {
            for d in 0..=64 {
                let v0 = f.value(si, d, 0, 0);
                for j in 0..=64 - d {
                    worst = worst.max((f.value(si, j + d, j, 0) - v0).abs());
                }
            }
        }
        assert!(worst <= 5e-3, "{worst}");
    }

    #[test]
    fn reduced_right_limit_and_consistency() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(128);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ft = solve_gf_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        let f = solve_gf_simple(&k, AgeMode::Symmetric, &g).unwrap();
        for si in 0..5 {
            let s = g.s_grid[si];
            assert!((ft.value(si, 128, 0, 0) - f.value(si, 128, 0, 0)).abs() <= 5e-3);
            // right limit at birth and the first grid cell after it
            let rl = s + (1.0 - s) * p0.p0(10, 0);
            assert_eq!(ft.open_value(si, 10, 10, 0), rl);
            assert!((ft.value(si, 11, 10, 0) - rl).abs() < 5e-3);
            assert_eq!(ft.value(si, 10, 10, 0), 1.0);
        }
        // F^T(0; t) is p0(T) for all t in (τ, T]
        for i in 1..=128 {
            assert!((ft.value(0, i, 0, 0) - p0.p0(0, 0)).abs() <= 5e-3);
        }
        for i in 0..=128 {
            for j in 0..=i {
                assert!((ft.value(4, i, j, 0) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_gf_properties() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(64);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ft = solve_gf_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        let et = conditional_gf(&ft, &p0).unwrap();
        for i in 1..=64 {
            for j in 0..i {
                assert!(et.value(0, i, j, 0) < 5e-3);
                assert!((et.value(4, i, j, 0) - 1.0).abs() < 1e-12);
            }
        }
        let y = Kernel::yule(1.0).unwrap();
        let p0 = solve_extinction(&y, AgeMode::Symmetric, &g).unwrap();
        let ft = solve_gf_reduced(&y, AgeMode::Symmetric, &g, &p0).unwrap();
        let et = conditional_gf(&ft, &p0).unwrap();
        assert_eq!(et.data, ft.data);
    }

    #[test]
    fn conditioning_on_certain_extinction_fails() {
        let k = Kernel::table(LengthLaw::Exponential { rate: 50.0 }, vec![1.0]).unwrap();
        let g = GridSpec::new(2.0, 16, uniform(0.0, 1.0, 3));
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ft = solve_gf_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        assert!(matches!(conditional_gf(&ft, &p0), Err(Error::ConditioningDegenerate { .. })));
    }

    #[test]
    fn ds_yule_is_probability_of_one() {
        let k = Kernel::yule(1.0).unwrap();
        let g = grid(256);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ds = solve_ds_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        for i in [32, 128, 256] {
            let t = g.t(i);
            assert!((ds.value(0, i, 0, 0) - (-t).exp()).abs() < 1e-4);
        }
    }

    #[test]
    fn ds_childless_kernel_is_survival_to_horizon() {
        let k = Kernel::table(LengthLaw::Exponential { rate: 1.0 }, vec![1.0]).unwrap();
        let g = grid(128);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ds = solve_ds_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        for i in [1, 64, 128] {
            // exactly one lineage counted iff the root is still alive at T
            assert!((ds.value(0, i, 0, 0) - (-1.0f64).exp()).abs() < 1e-5);
        }
    }

    #[test]
    fn ds_agrees_with_finite_differences() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(128);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let mut ds = solve_ds_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        let d = ds_fd_check(&k, &mut ds, &p0, 1e-3).unwrap();
        assert!(d <= 1e-3, "{d}");
        assert_eq!(ds.meta.diagnostics["fd_max_diff"], d);
    }

    #[test]
    fn simple_gf_matches_kendall() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(256);
        let f = solve_gf_simple(&k, AgeMode::Symmetric, &g).unwrap();
        for (si, &s) in g.s_grid.iter().enumerate() {
            for i in [64, 128, 256] {
                let exact = kendall_closed_form(|_| 1.0, |_| 0.5, s, g.t(i));
                assert!((f.value(si, i, 0, 0) - exact).abs() < 5e-4);
            }
        }
    }

    #[test]
    fn asymmetric_age_dependent_matches_simulation_free_limits() {
        // age-dependent rates with a constant-in-age profile reduce to the
        // homogeneous solution
        let flat = RateFunction::piecewise_linear(vec![(0.0, 1.0), (1.0, 1.0)], RateArgument::Age);
        let k = Kernel::birth_death(flat, RateFunction::constant(0.5)).unwrap();
        assert!(!k.is_age_dependent());
        let ramp = RateFunction::piecewise_linear(vec![(0.0, 0.5), (1.0, 1.5)], RateArgument::Age);
        let k2 = Kernel::birth_death(ramp, RateFunction::constant(0.5)).unwrap();
        assert!(k2.is_age_dependent());
        let g = GridSpec::new(1.0, 32, uniform(0.0, 1.0, 3)).with_alpha_grid(uniform(0.0, 2.0, 9));
        let p_sym = solve_extinction(&k2, AgeMode::Symmetric, &g).unwrap();
        let p_asym = solve_extinction(&k2, AgeMode::Asymmetric, &g).unwrap();
        assert_eq!(p_sym.n_alpha(), 9);
        // older mothers reproduce faster, so extinction is less likely
        assert!(p_asym.p0(0, 8) < p_asym.p0(0, 0));
        // symmetric children are born young, which lowers their birth rate
        assert!(p_sym.p0(0, 0) > p_asym.p0(0, 0));
        let f = solve_gf_simple(&k2, AgeMode::Asymmetric, &g).unwrap();
        assert!((f.value(0, 32, 0, 0) - p_asym.p0(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn solver_rejects_atomic_lengths() {
        let k = Kernel::table(LengthLaw::Deterministic { value: 0.4 }, vec![0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(solve_extinction(&k, AgeMode::Symmetric, &grid(8)), Err(Error::DensityMissing)));
    }

    #[test]
    fn cache_hits_only_for_the_same_kernel_and_grid() {
        let dir = tempfile::tempdir().unwrap();
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(16);
        let (a, hit) = solve_all_cached(&k, AgeMode::Symmetric, &g, dir.path()).unwrap();
        assert!(!hit);
        let (b, hit) = solve_all_cached(&k, AgeMode::Symmetric, &g, dir.path()).unwrap();
        assert!(hit);
        assert_eq!(a.simple.data, b.simple.data);
        assert!(extinction_cached(&k, AgeMode::Symmetric, &g, dir.path()).unwrap().1);
        let other = Kernel::birth_death_constant(1.0, 0.4).unwrap();
        assert!(!solve_all_cached(&other, AgeMode::Symmetric, &g, dir.path()).unwrap().1);
        assert!(!solve_all_cached(&k, AgeMode::Symmetric, &grid(32), dir.path()).unwrap().1);
    }

    #[test]
    fn binary_cache_roundtrip() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(16);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ft = solve_gf_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ft.store_cached(dir.path()).unwrap();
        let back = SolutionTable::load_cached(dir.path(), &ft.key()).unwrap();
        assert_eq!(back, ft);
        assert!(SolutionTable::load_cached(dir.path(), "deadbeef").is_none());
        let mut csv = Vec::new();
        p0.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 17);
        assert!(text.starts_with("s,t,tau,alpha,value\n0,1,0,0,"));
    }

    #[test]
    fn interpolation_is_exact_on_nodes() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let g = grid(32);
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &g).unwrap();
        let ft = solve_gf_reduced(&k, AgeMode::Symmetric, &g, &p0).unwrap();
        for (i, j) in [(5, 2), (32, 0), (32, 31), (7, 7)] {
            let v = ft.eval(2, g.t(i), g.t(j), 0.0).unwrap();
            assert!((v - ft.value(2, i, j, 0)).abs() < 1e-12);
        }
        assert!(ft.eval(2, 0.2, 0.5, 0.0).is_err());
        assert_eq!(p0.p0_at(1.0, 0.0).unwrap(), 1.0);
        assert!(p0.p0_at(1.0 - 1e-9, 0.0).unwrap() < 1e-6);
    }
}
