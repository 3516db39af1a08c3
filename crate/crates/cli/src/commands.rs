use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use sevastyanov::genealogy::{pruned_genealogy_batch, simulate_genealogy_batch};
use sevastyanov::newick::to_newick;
use sevastyanov::simulator::{process_path, sample_batch, Characteristic};
use sevastyanov::solver::{ds_fd_check, extinction_cached, grid_halving, solve_all_cached, uniform, SolutionTable};
use sevastyanov::stats::{mean, variance};
use sevastyanov::validation::run_suite;
use sevastyanov::{BranchingTree, Genealogy};

use crate::config::{Method, RunConfig, DEFAULT_SEED};
use crate::{CliError, Common, ENV_OUT, ENV_THREADS};

/// Points of the process-path grid on `[τ, T]`.
pub const PATH_POINTS: usize = 200;
/// Step of the finite-difference check of `∂_s F^T`.
const FD_STEP: f64 = 1e-3;
const TABLE_MAGIC: &[u8] = b"SVTBL001";

/// Resolved run settings. Precedence is flag, then environment, then
/// config, then default.
pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self, CliError> {
        let cfg = RunConfig::load(&common.config)?;
        let env_threads = match std::env::var(ENV_THREADS) {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| CliError::Config(format!("{ENV_THREADS}={v:?} is not a count")))?),
            Err(_) => None,
        };
        if let Some(n) = common.threads.or(env_threads) {
            if n == 0 {
                return Err(CliError::Config("thread count must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
        }
        let out = common
            .out
            .clone()
            .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out)?;
        let seed = common.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
        Ok(Context { cfg, seed, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn cache(&self) -> PathBuf {
        self.path("cache")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<(), CliError> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    replicates: usize,
    seed: u64,
    mean_z_t: f64,
    var_z_t: f64,
    extinction_fraction: f64,
}

/// Trees as JSON lines, mean process paths on a 200-point grid and
/// moments of `Z(T)`.
pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let (kernel, spec) = ctx.cfg.model()?;
    let n = ctx.cfg.replicates;
    let trees = sample_batch(&kernel, &spec, ctx.seed, n)?;
    write_lines(&ctx.path("trees.jsonl"), trees.iter().map(|t| t.to_json_string()))?;

    let grid = uniform(spec.tau, spec.horizon, PATH_POINTS);
    let zero = || (vec![0i64; PATH_POINTS], vec![0i64; PATH_POINTS], Vec::new());
    let per_tree = trees
        .par_iter()
        .map(|t| -> sevastyanov::Result<_> {
            let z = process_path(t, Characteristic::Simple)?;
            let zt = process_path(t, Characteristic::Reduced(spec.horizon))?;
            Ok((grid.iter().map(|&x| z.eval(x)).collect::<Vec<_>>(), grid.iter().map(|&x| zt.eval(x)).collect::<Vec<_>>()))
        })
        .collect::<sevastyanov::Result<Vec<_>>>()?;
    let (sum_z, sum_zt, finals) = per_tree.into_iter().fold(zero(), |(mut a, mut b, mut f), (z, zt)| {
        a.iter_mut().zip(&z).for_each(|(s, v)| *s += v);
        b.iter_mut().zip(&zt).for_each(|(s, v)| *s += v);
        f.push(z[PATH_POINTS - 1] as f64);
        (a, b, f)
    });
    let nf = n as f64;
    write_lines(
        &ctx.path("paths.csv"),
        std::iter::once("t,mean_Z,mean_Z_T".to_string())
            .chain((0..PATH_POINTS).map(|i| format!("{},{},{}", grid[i], sum_z[i] as f64 / nf, sum_zt[i] as f64 / nf))),
    )?;
    let summary = SimulateSummary {
        replicates: n,
        seed: ctx.seed,
        mean_z_t: mean(&finals),
        var_z_t: if n > 1 { variance(&finals) } else { 0.0 },
        extinction_fraction: finals.iter().filter(|&&z| z == 0.0).count() as f64 / nf,
    };
    write_json(&ctx.path("summary.json"), &summary)
}

#[derive(Serialize)]
struct SolveReport {
    cache_hit: bool,
    tables: BTreeMap<&'static str, TableDiagnostics>,
    grid_halving: Result<sevastyanov::solver::ConvergenceReport, String>,
    ds_fd_max_diff: f64,
}

#[derive(Serialize)]
struct TableDiagnostics {
    clamp_fraction: f64,
    max_violation: f64,
}

/// All tables as CSV, binary cache under `cache/` and convergence
/// diagnostics.
pub fn solve(ctx: &Context) -> Result<(), CliError> {
    let (kernel, spec) = ctx.cfg.model()?;
    let grid = ctx.cfg.grid_spec(spec.horizon)?;
    let (mut all, cache_hit) = solve_all_cached(&kernel, spec.mode, &grid, &ctx.cache())?;
    let ds_fd_max_diff = ds_fd_check(&kernel, &mut all.ds, &all.p0, FD_STEP)?;
    let mut tables = BTreeMap::new();
    for t in [&all.p0, &all.simple, &all.reduced, &all.ds].into_iter().chain(all.conditional.as_ref()) {
        let name = t.kind().name();
        let mut w = create(&ctx.path(&format!("{name}.csv")))?;
        t.write_csv(&mut w)?;
        w.flush()?;
        tables.insert(name, TableDiagnostics { clamp_fraction: t.clamp_fraction(), max_violation: t.meta.max_violation });
    }
    let grid_halving = grid_halving(&kernel, spec.mode, &grid).map_err(|e| e.to_string());
    write_json(&ctx.path("convergence.json"), &SolveReport { cache_hit, tables, grid_halving, ds_fd_max_diff })
}

#[derive(Serialize)]
struct GenealogySummary {
    method: Method,
    count: usize,
    seed: u64,
    mean_leaf_count: f64,
    leaf_count_histogram: BTreeMap<usize, usize>,
    root_length_edges: Vec<f64>,
    root_length_counts: Vec<usize>,
}

/// Genealogies as JSON lines and Newick with leaf-count and root-length
/// histograms.
pub fn genealogy(ctx: &Context, method: Option<Method>) -> Result<(), CliError> {
    let (kernel, spec) = ctx.cfg.model()?;
    let method = method.unwrap_or(ctx.cfg.genealogy.method);
    let n = ctx.cfg.replicates;
    let gs = match method {
        Method::Direct => {
            let grid = ctx.cfg.grid_spec(spec.horizon)?;
            let (p0, _) = extinction_cached(&kernel, spec.mode, &grid, &ctx.cache())?;
            simulate_genealogy_batch(&kernel, &spec, &p0, ctx.seed, n)?
        }
        Method::Prune => pruned_genealogy_batch(&kernel, &spec, ctx.seed, n)?,
    };
    write_lines(&ctx.path("genealogies.jsonl"), gs.iter().map(|g| g.to_json_string()))?;
    write_lines(&ctx.path("genealogies.nwk"), gs.iter().map(|g| g.to_newick(None)))?;

    let bins = ctx.cfg.genealogy.length_bins.max(1);
    let span = spec.horizon - spec.tau;
    let mut counts = vec![0usize; bins];
    let mut leaves = BTreeMap::new();
    for g in &gs {
        *leaves.entry(g.leaf_count()).or_insert(0) += 1;
        let b = ((g.root_length() / span * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let leaf_counts: Vec<f64> = gs.iter().map(|g| g.leaf_count() as f64).collect();
    let summary = GenealogySummary {
        method,
        count: gs.len(),
        seed: ctx.seed,
        mean_leaf_count: mean(&leaf_counts),
        leaf_count_histogram: leaves,
        root_length_edges: uniform(0.0, span, bins + 1),
        root_length_counts: counts,
    };
    write_json(&ctx.path("summary.json"), &summary)
}

/// Runs the suite, writes `report.json`, prints the summary and fails
/// with the validation exit code if any check fails.
pub fn validate(ctx: &Context) -> Result<(), CliError> {
    let mut suite = ctx.cfg.validate.clone();
    suite.seed = ctx.seed;
    let report = run_suite(&suite)?;
    write_json(&ctx.path("report.json"), &report)?;
    print!("{}", report.summary());
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Validation(report.checks.iter().filter(|c| !c.passed).count(), report.checks.len()))
    }
}

/// Newick for one tree or genealogy JSON document.
fn newick_of(doc: &serde_json::Value) -> Result<String, CliError> {
    let parse = |e: sevastyanov::Error| CliError::Parse(e.to_string());
    let text = doc.to_string();
    if doc.get("root").and_then(|r| r.get("alpha_T")).is_some() {
        Ok(Genealogy::from_json_str(&text).map_err(parse)?.to_newick(None))
    } else {
        Ok(to_newick(&BranchingTree::from_json_str(&text).map_err(parse)?, None))
    }
}

/// Converts `input` into the output directory: a binary table becomes
/// `<stem>.csv`; tree or genealogy JSON (one document or JSON lines)
/// becomes `<stem>.nwk`.
pub fn export(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let bytes = fs::read(input)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("export");
    if bytes.starts_with(TABLE_MAGIC) {
        let table = SolutionTable::load_binary(input).map_err(|e| CliError::Parse(e.to_string()))?;
        let mut w = create(&ctx.path(&format!("{stem}.csv")))?;
        table.write_csv(&mut w)?;
        w.flush()?;
        return Ok(());
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::Parse(format!("{} is not UTF-8", input.display())))?;
    let docs: Vec<serde_json::Value> = match serde_json::from_str(&text) {
        Ok(doc) => vec![doc],
        Err(_) => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Parse(format!("{} line {}: {e}", input.display(), i + 1))))
            .collect::<Result<_, _>>()?,
    };
    if docs.is_empty() {
        return Err(CliError::Parse(format!("{} holds no JSON documents", input.display())));
    }
    let lines = docs.iter().map(newick_of).collect::<Result<Vec<_>, _>>()?;
    write_lines(&ctx.path(&format!("{stem}.nwk")), lines)
}
