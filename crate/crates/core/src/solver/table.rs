use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::grid::{locate, GridSpec};
use crate::solver::march::{tri, tri_len};
use crate::tree::AgeMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// `p^0_{τ,α}(T)`.
    Extinction,
    /// `F_{τ,α}(s;t)`.
    SimpleGf,
    /// `F^T_{τ,α}(s;t)`.
    ReducedGf,
    /// `E^T_{τ,α}(s;t)`.
    ConditionalGf,
    /// `∂_s F^T_{τ,α}(0;t)`.
    DsReduced,
}

impl TableKind {
    pub fn name(self) -> &'static str {
        match self {
            TableKind::Extinction => "extinction",
            TableKind::SimpleGf => "simple_gf",
            TableKind::ReducedGf => "reduced_gf",
            TableKind::ConditionalGf => "conditional_gf",
            TableKind::DsReduced => "ds_reduced",
        }
    }

    /// Value at `t = τ`.
    pub fn boundary(self) -> f64 {
        match self {
            TableKind::DsReduced => 0.0,
            _ => 1.0,
        }
    }
}

/// Gridded solution. Cells are indexed by `s` slice, age `m`, time `i`
/// and birth time `j ≤ i`; extinction tables have no time axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub kind: TableKind,
    pub mode: AgeMode,
    /// Grid with the age axis actually used (collapsed to `[0]` for
    /// age-independent kernels).
    pub grid: GridSpec,
    pub kernel_id: String,
    pub s_values: Vec<f64>,
    pub clamp_count: usize,
    pub max_violation: f64,
    pub cells: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionTable {
    pub meta: TableMeta,
    pub(crate) data: Vec<Vec<f64>>,
    pub(crate) right_limit: Vec<Vec<f64>>,
}

const MAGIC: &[u8; 8] = b"SVTBL001";

impl SolutionTable {
    pub fn kind(&self) -> TableKind {
        self.meta.kind
    }

    pub fn grid(&self) -> &GridSpec {
        &self.meta.grid
    }

    pub fn n(&self) -> usize {
        self.meta.grid.n_t
    }

    pub fn alphas(&self) -> &[f64] {
        &self.meta.grid.alpha_grid
    }

    pub fn n_alpha(&self) -> usize {
        self.meta.grid.alpha_grid.len()
    }

    pub fn s_values(&self) -> &[f64] {
        &self.meta.s_values
    }

    pub fn s_index(&self, s: f64) -> Option<usize> {
        self.meta.s_values.iter().position(|&x| x == s)
    }

    /// Fraction of cells that left `[0, 1]` by more than `CLAMP_TOL`.
    pub fn clamp_fraction(&self) -> f64 {
        if self.meta.cells == 0 {
            0.0
        } else {
            self.meta.clamp_count as f64 / self.meta.cells as f64
        }
    }

    fn has_time(&self) -> bool {
        self.meta.kind != TableKind::Extinction
    }

    /// Grid value, with the boundary convention at `t = τ`.
    pub fn value(&self, s: usize, i: usize, j: usize, m: usize) -> f64 {
        debug_assert!(self.has_time() && j <= i);
        self.data[s][m * tri_len(self.n()) + tri(i, j)]
    }

    /// Grid value with the right limit `t ↓ τ` on the diagonal.
    pub fn open_value(&self, s: usize, i: usize, j: usize, m: usize) -> f64 {
        if i == j {
            self.right_limit[s][m * (self.n() + 1) + j]
        } else {
            self.value(s, i, j, m)
        }
    }

    pub fn right_limit(&self, s: usize, j: usize, m: usize) -> f64 {
        self.right_limit[s][m * (self.n() + 1) + j]
    }

    /// `p^0_{τ_j,α_m}(T)`; the cell `τ = T` holds 1 (a branch born at `T`
    /// is not extant).
    pub fn p0(&self, j: usize, m: usize) -> f64 {
        debug_assert_eq!(self.meta.kind, TableKind::Extinction);
        self.data[0][m * (self.n() + 1) + j]
    }

    /// `p^0` with the left limit 0 at `τ = T`.
    pub fn p0_left(&self, j: usize, m: usize) -> f64 {
        if j == self.n() {
            0.0
        } else {
            self.p0(j, m)
        }
    }

    pub(crate) fn p0_left_interp(&self, j: usize, (lo, w): (usize, f64)) -> f64 {
        if j == self.n() {
            0.0
        } else if w == 0.0 {
            self.p0(j, lo)
        } else {
            (1.0 - w) * self.p0(j, lo) + w * self.p0(j, lo + 1)
        }
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        let t_end = self.meta.grid.horizon;
        if !(0.0..=t_end).contains(&tau) {
            return Err(Error::OutOfDomain(format!("tau={tau} outside [0, {t_end}]")));
        }
        Ok(())
    }

    /// Interpolated `p^0_{τ,α}(T)` for `τ < T` (linear in `τ` towards the
    /// left limit at `T`, linear in `α` with flat extrapolation); 1 at `τ = T`.
    pub fn p0_at(&self, tau: f64, alpha: f64) -> Result<f64> {
        if self.meta.kind != TableKind::Extinction {
            return Err(Error::IncompatibleGrid("not an extinction table".into()));
        }
        self.check_tau(tau)?;
        let n = self.n();
        if tau == self.meta.grid.horizon {
            return Ok(1.0);
        }
        let a = locate(self.alphas(), alpha);
        let x = tau / self.meta.grid.delta();
        let j0 = (x.floor() as usize).min(n - 1);
        let w = (x - j0 as f64).clamp(0.0, 1.0);
        Ok((1.0 - w) * self.p0_left_interp(j0, a) + w * self.p0_left_interp(j0 + 1, a))
    }

    /// Interpolated value at `(t, τ, α)` on slice `s`: linear in `τ` and in
    /// `u = t − τ` (using right limits on the diagonal), linear in `α`.
    pub fn eval(&self, s: usize, t: f64, tau: f64, alpha: f64) -> Result<f64> {
        if !self.has_time() {
            return self.p0_at(tau, alpha);
        }
        self.check_tau(tau)?;
        let t_end = self.meta.grid.horizon;
        if t < tau || t > t_end {
            return Err(Error::OutOfDomain(format!("t={t} outside [{tau}, {t_end}]")));
        }
        if t == tau {
            return Ok(self.meta.kind.boundary());
        }
        let n = self.n();
        let dt = self.meta.grid.delta();
        let u = t - tau;
        let (m0, wm) = locate(self.alphas(), alpha);
        let at_j = |j: usize, m: usize| -> f64 {
            let x = ((self.meta.grid.t(j) + u) / dt).min(n as f64);
            let i0 = (x.floor() as usize).max(j).min(n);
            let wi = (x - i0 as f64).clamp(0.0, 1.0);
            if i0 == n || wi == 0.0 {
                self.open_value(s, i0, j, m)
            } else {
                (1.0 - wi) * self.open_value(s, i0, j, m) + wi * self.open_value(s, i0 + 1, j, m)
            }
        };
        let at_alpha = |j: usize| -> f64 {
            if wm == 0.0 {
                at_j(j, m0)
            } else {
                (1.0 - wm) * at_j(j, m0) + wm * at_j(j, m0 + 1)
            }
        };
        let x = tau / dt;
        let j0 = (x.floor() as usize).min(n);
        let wj = x - j0 as f64;
        if j0 == n || wj <= 0.0 {
            return Ok(at_alpha(j0));
        }
        Ok((1.0 - wj) * at_alpha(j0) + wj * at_alpha(j0 + 1))
    }

    /// Content hash of kind, age mode, kernel and grid; used as cache key.
    pub fn cache_key(kind: TableKind, mode: AgeMode, kernel_id: &str, grid: &GridSpec, s_values: &[f64]) -> String {
        let payload = serde_json::json!({
            "kind": kind,
            "mode": mode,
            "kernel": kernel_id,
            "grid": grid,
            "s": s_values,
        });
        hex::encode(Sha256::digest(payload.to_string().as_bytes()))
    }

    pub fn key(&self) -> String {
        Self::cache_key(self.meta.kind, self.meta.mode, &self.meta.kernel_id, &self.meta.grid, &self.meta.s_values)
    }

    /// Writes `s,t,tau,alpha,value` rows; the diagonal carries the
    /// boundary value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,t,tau,alpha,value")?;
        let n = self.n();
        let g = &self.meta.grid;
        for (si, &s) in self.meta.s_values.iter().enumerate() {
            for (m, &a) in self.alphas().iter().enumerate() {
                if self.has_time() {
                    for i in 0..=n {
                        for j in 0..=i {
                            writeln!(w, "{},{},{},{},{}", s, g.t(i), g.t(j), a, self.value(si, i, j, m))?;
                        }
                    }
                } else {
                    for j in 0..=n {
                        writeln!(w, "{},{},{},{},{}", s, g.horizon, g.t(j), a, self.p0(j, m))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        let header = serde_json::to_vec(&self.meta)?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        for block in [&self.data, &self.right_limit] {
            f.write_all(&(block.len() as u64).to_le_bytes())?;
            for v in block {
                f.write_all(&(v.len() as u64).to_le_bytes())?;
                for x in v {
                    f.write_all(&x.to_le_bytes())?;
                }
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse(format!("{} is not a table cache", path.display())));
        }
        let read_u64 = |f: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            f.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let hlen = read_u64(&mut f)? as usize;
        let mut header = vec![0u8; hlen];
        f.read_exact(&mut header)?;
        let meta: TableMeta = serde_json::from_slice(&header)?;
        let mut blocks = Vec::with_capacity(2);
        for _ in 0..2 {
            let nv = read_u64(&mut f)? as usize;
            let mut block = Vec::with_capacity(nv);
            for _ in 0..nv {
                let len = read_u64(&mut f)? as usize;
                let mut bytes = vec![0u8; len * 8];
                f.read_exact(&mut bytes)?;
                block.push(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
            }
            blocks.push(block);
        }
        let right_limit = blocks.pop().expect("two blocks");
        let data = blocks.pop().expect("two blocks");
        Ok(SolutionTable { meta, data, right_limit })
    }

    /// Loads `dir/<key>.bin` if present and matching; stale or missing
    /// caches yield `None`.
    pub fn load_cached(dir: &Path, key: &str) -> Option<Self> {
        let path = dir.join(format!("{key}.bin"));
        let t = Self::load_binary(&path).ok()?;
        (t.key() == key).then_some(t)
    }

    pub fn store_cached(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.bin", self.key()));
        self.save_binary(&path)?;
        Ok(path)
    }
}
