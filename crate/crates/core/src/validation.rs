//! Oracle- and property-based validation suite, shared by the `validate`
//! command and the acceptance tests. Each check compares solver output
//! with closed forms, simulation with solver output, or verifies exact
//! structural identities on simulated trees.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genealogy::{pruned_genealogy_batch, simulate_genealogy_batch, topology_probability, Genealogy, GenealogyLawTables};
use crate::kernel::{Kernel, LengthLaw, RateArgument, RateFunction};
use crate::label::{Label, StoppingLine};
use crate::rng::{replicate_seed, stream};
use crate::simulator::{extant_progeny, process_path, random_times, sample_tree, Characteristic, ProcessPath, SimSpec};
use crate::solver::{
    kendall_closed_form, kendall_coefficients, solve_extinction, solve_gf_reduced, solve_gf_simple, uniform, GridSpec,
};
use crate::stats::{binomial_se, chi2_homogeneity, ks_two_sample, pooled_histogram};
use crate::tree::{AgeMode, BranchingTree, NeveuTree};

pub const KENDALL_ORACLE: &str = "kendall_oracle";
pub const EXTINCTION: &str = "extinction";
pub const REDUCED_SIMPLE: &str = "reduced_simple_consistency";
pub const MC_VS_SOLVER: &str = "mc_vs_solver";
pub const DIRECT_VS_PRUNED: &str = "direct_vs_pruned";
pub const BRANCH_LENGTH_LAW: &str = "branch_length_law";
pub const STRUCTURAL: &str = "structural_suite";
pub const DENSITY_TOPOLOGY: &str = "density_topology";
pub const NU_SANITY: &str = "nu_sanity";

/// Every check, in report order.
pub const CHECKS: [&str; 9] = [
    KENDALL_ORACLE,
    EXTINCTION,
    REDUCED_SIMPLE,
    MC_VS_SOLVER,
    DIRECT_VS_PRUNED,
    BRANCH_LENGTH_LAW,
    STRUCTURAL,
    DENSITY_TOPOLOGY,
    NU_SANITY,
];

/// Default tolerances. A bare check name keys its primary bound; dotted
/// keys are secondary bounds of the same check.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        (KENDALL_ORACLE, 5e-3),
        ("kendall_oracle.seconds", 30.0),
        (EXTINCTION, 2e-3),
        (REDUCED_SIMPLE, 5e-3),
        // standard errors
        (MC_VS_SOLVER, 3.0),
        ("mc_vs_solver.seconds", 60.0),
        // significance level
        (DIRECT_VS_PRUNED, 0.01),
        (BRANCH_LENGTH_LAW, 0.01),
        // failures allowed
        (STRUCTURAL, 0.0),
        // standard errors
        (DENSITY_TOPOLOGY, 3.0),
        ("density_topology.sum", 0.02),
        // upper bound on ν^T(1)
        (NU_SANITY, 1e-6),
        ("nu_sanity.nu2", 0.99),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Checks to run, in this order.
    pub checks: Vec<String>,
    /// Multiplier on every replicate count.
    pub scale: f64,
    pub seed: u64,
    /// Overrides of [`default_tolerances`].
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { checks: CHECKS.iter().map(|c| c.to_string()).collect(), scale: 1.0, seed: 1, tolerances: BTreeMap::new() }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        if let Some(c) = self.checks.iter().find(|c| !CHECKS.contains(&c.as_str())) {
            return Err(Error::Config(format!("unknown check {c:?}")));
        }
        let known = default_tolerances();
        for (k, v) in &self.tolerances {
            if !known.contains_key(k) {
                return Err(Error::Config(format!("unknown tolerance {k:?}")));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("tolerance {k:?} must be finite")));
            }
        }
        Ok(())
    }

    fn tol(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| default_tolerances()[key])
    }

    fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.scale).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Primary statistic, compared with `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub details: BTreeMap<String, f64>,
    /// Error that aborted the check, if any.
    pub message: Option<String>,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("{verdict} {} value={:.6e} tolerance={:e} ({:.2}s)", self.name, self.value, self.tolerance, self.seconds);
        if let Some(m) = &self.message {
            write!(s, " error: {m}").expect("writing to a String");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            writeln!(s, "{}", c.line()).expect("writing to a String");
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        writeln!(s, "{} of {} checks passed", self.checks.len() - failed, self.checks.len()).expect("writing to a String");
        s
    }
}

/// Runs the checks named in `cfg`.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let suite = Suite::new(cfg.clone())?;
    let checks: Vec<CheckResult> = cfg.checks.iter().map(|c| suite.run(c)).collect::<Result<_>>()?;
    Ok(SuiteReport { passed: checks.iter().all(|c| c.passed), checks })
}

/// The birth-death kernel, horizon and grid shared by the genealogy-law
/// checks.
const LAW_HORIZON: f64 = 1.0;
const LAW_STEPS: usize = 512;
const LAW_PROBES: usize = 8;
const TOPOLOGY_TOL: f64 = 1e-6;

/// Check runner caching the solved genealogy law and the pruned sample
/// shared by several checks.
pub struct Suite {
    cfg: SuiteConfig,
    law: OnceLock<std::result::Result<GenealogyLawTables, String>>,
    pruned: OnceLock<std::result::Result<Vec<Genealogy>, String>>,
}

impl Suite {
    pub fn new(cfg: SuiteConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Suite { cfg, law: OnceLock::new(), pruned: OnceLock::new() })
    }

    /// Runs one check; failures and errors inside the check are report
    /// entries, only an unknown name is an error.
    pub fn run(&self, name: &str) -> Result<CheckResult> {
        let start = Instant::now();
        let out = match name {
            KENDALL_ORACLE => self.kendall_oracle(),
            EXTINCTION => self.extinction(),
            REDUCED_SIMPLE => self.reduced_simple(),
            MC_VS_SOLVER => self.mc_vs_solver(),
            DIRECT_VS_PRUNED => self.direct_vs_pruned(),
            BRANCH_LENGTH_LAW => self.branch_length_law(),
            STRUCTURAL => self.structural(),
            DENSITY_TOPOLOGY => self.density_topology(),
            NU_SANITY => self.nu_sanity(),
            other => return Err(Error::Config(format!("unknown check {other:?}"))),
        };
        let seconds = start.elapsed().as_secs_f64();
        Ok(match out {
            Ok(mut r) => {
                r.seconds = seconds;
                r
            }
            Err(e) => CheckResult {
                name: name.to_string(),
                passed: false,
                value: f64::NAN,
                tolerance: self.cfg.tol(name),
                seconds,
                details: BTreeMap::new(),
                message: Some(e.to_string()),
            },
        })
    }

    fn result(&self, name: &str, passed: bool, value: f64, details: Vec<(&str, f64)>) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed,
            value,
            tolerance: self.cfg.tol(name),
            seconds: 0.0,
            details: details.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            message: None,
        }
    }

    fn seed(&self, salt: u64) -> u64 {
        replicate_seed(self.cfg.seed, salt)
    }

    fn law(&self) -> Result<&GenealogyLawTables> {
        self.law
            .get_or_init(|| {
                let k = Kernel::birth_death_constant(1.0, 0.5).map_err(|e| e.to_string())?;
                let grid = GridSpec::new(LAW_HORIZON, LAW_STEPS, uniform(0.0, 1.0, 21));
                GenealogyLawTables::solve(&k, &grid, LAW_PROBES).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| Error::Config(format!("genealogy law tables: {e}")))
    }

    fn pruned(&self) -> Result<&[Genealogy]> {
        self.pruned
            .get_or_init(|| {
                let k = Kernel::birth_death_constant(1.0, 0.5).map_err(|e| e.to_string())?;
                let spec = SimSpec::new(0.0, 0.0, LAW_HORIZON, AgeMode::Symmetric);
                pruned_genealogy_batch(&k, &spec, self.seed(6), self.cfg.scaled(100_000)).map_err(|e| e.to_string())
            })
            .as_ref()
            .map(Vec::as_slice)
            .map_err(|e| Error::Config(format!("pruned sample: {e}")))
    }

    fn kendall_oracle(&self) -> Result<CheckResult> {
        let k = Kernel::birth_death_constant(1.0, 0.5)?;
        let s_values = [0.0, 0.25, 0.5, 0.75, 1.0];
        let grid = GridSpec::new(1.0, 512, s_values.to_vec());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?;
        let start = Instant::now();
        let f = pool.install(|| solve_gf_simple(&k, AgeMode::Symmetric, &grid))?;
        let seconds = start.elapsed().as_secs_f64();
        let mut worst: f64 = 0.0;
        for (si, &s) in s_values.iter().enumerate() {
            for t in [0.25, 0.5, 1.0] {
                let i = (t * grid.n_t as f64).round() as usize;
                let exact = kendall_closed_form(|_| 1.0, |_| 0.5, s, t);
                worst = worst.max((f.value(si, i, 0, 0) - exact).abs());
            }
        }
        let limit = self.cfg.tol("kendall_oracle.seconds");
        let passed = worst <= self.cfg.tol(KENDALL_ORACLE) && seconds < limit;
        Ok(self.result(KENDALL_ORACLE, passed, worst, vec![("solve_seconds", seconds)]))
    }

    fn extinction(&self) -> Result<CheckResult> {
        let grid = GridSpec::new(1.0, 512, uniform(0.0, 1.0, 3));
        let critical = solve_extinction(&Kernel::birth_death_constant(1.0, 1.0)?, AgeMode::Symmetric, &grid)?;
        let (target, _) = kendall_coefficients(|_| 1.0, |_| 1.0, 1.0);
        let err = (critical.p0(0, 0) - target).abs();
        let yule = solve_extinction(&Kernel::yule(1.0)?, AgeMode::Symmetric, &grid)?;
        let yule_max = (0..=grid.n_t).map(|j| yule.p0_left(j, 0)).fold(0.0, f64::max);
        let passed = err <= self.cfg.tol(EXTINCTION) && yule_max == 0.0;
        Ok(self.result(EXTINCTION, passed, err, vec![("p0_critical", critical.p0(0, 0)), ("yule_max_p0", yule_max)]))
    }

    fn reduced_simple(&self) -> Result<CheckResult> {
        let k = Kernel::birth_death_constant(1.0, 0.5)?;
        let grid = GridSpec::new(1.0, 512, uniform(0.0, 1.0, 21));
        let simple = solve_gf_simple(&k, AgeMode::Symmetric, &grid)?;
        let p0 = solve_extinction(&k, AgeMode::Symmetric, &grid)?;
        let reduced = solve_gf_reduced(&k, AgeMode::Symmetric, &grid, &p0)?;
        let n = grid.n_t;
        let worst = (0..grid.s_grid.len())
            .map(|si| (reduced.value(si, n, 0, 0) - simple.value(si, n, 0, 0)).abs())
            .fold(0.0, f64::max);
        Ok(self.result(REDUCED_SIMPLE, worst <= self.cfg.tol(REDUCED_SIMPLE), worst, vec![]))
    }

    fn mc_vs_solver(&self) -> Result<CheckResult> {
        let start = Instant::now();
        let n = self.cfg.scaled(100_000);
        let counts = |k: &Kernel, seed: u64| -> Result<Vec<i64>> {
            let spec = SimSpec::new(0.0, 0.0, 1.0, AgeMode::Symmetric);
            (0..n as u64)
                .into_par_iter()
                .map(|r| Ok(process_path(&sample_tree(k, &spec, replicate_seed(seed, r))?, Characteristic::Simple)?.eval(1.0)))
                .collect()
        };
        let z_score = |emp: f64, p: f64| {
            let se = binomial_se(p, n);
            if se > 0.0 {
                (emp - p).abs() / se
            } else if emp == p {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let yule = counts(&Kernel::yule(1.0)?, self.seed(4))?;
        let (a, b) = kendall_coefficients(|_| 1.0, |_| 0.0, 1.0);
        let mut worst: f64 = 0.0;
        let mut details = Vec::new();
        for k in 0..=5i64 {
            let p = if k == 0 { a } else { (1.0 - a) * (1.0 - b) * b.powi(k as i32 - 1) };
            let emp = yule.iter().filter(|&&z| z == k).count() as f64 / n as f64;
            worst = worst.max(z_score(emp, p));
        }
        details.push(("yule_max_z", worst));
        let critical = counts(&Kernel::birth_death_constant(1.0, 1.0)?, self.seed(40))?;
        let (target, _) = kendall_coefficients(|_| 1.0, |_| 1.0, 1.0);
        let extinct = critical.iter().filter(|&&z| z == 0).count() as f64 / n as f64;
        let z_ext = z_score(extinct, target);
        details.push(("extinct_fraction", extinct));
        details.push(("extinction_z", z_ext));
        worst = worst.max(z_ext);
        let seconds = start.elapsed().as_secs_f64();
        let passed = worst <= self.cfg.tol(MC_VS_SOLVER) && seconds < self.cfg.tol("mc_vs_solver.seconds");
        Ok(self.result(MC_VS_SOLVER, passed, worst, details))
    }

    fn direct_vs_pruned(&self) -> Result<CheckResult> {
        let k = Kernel::birth_death_constant(1.0, 0.3)?;
        let horizon = 2.0;
        let spec = SimSpec::new(0.0, 0.0, horizon, AgeMode::Asymmetric);
        let grid = GridSpec::new(horizon, 512, uniform(0.0, 1.0, 3));
        let p0 = solve_extinction(&k, AgeMode::Asymmetric, &grid)?;
        let n = self.cfg.scaled(5000);
        let direct = simulate_genealogy_batch(&k, &spec, &p0, self.seed(5), n)?;
        let pruned = pruned_genealogy_batch(&k, &spec, self.seed(50), n)?;
        let lengths = |gs: &[Genealogy]| gs.iter().map(Genealogy::root_length).collect::<Vec<_>>();
        let leaves = |gs: &[Genealogy]| pooled_histogram(&gs.iter().map(Genealogy::leaf_count).collect::<Vec<_>>(), 10);
        let ks = ks_two_sample(&lengths(&direct), &lengths(&pruned));
        let chi = chi2_homogeneity(&leaves(&direct), &leaves(&pruned));
        let binary = |gs: &[Genealogy]| gs.iter().all(|g| g.tree().nodes().iter().all(|x| matches!(x.offspring(), 0 | 2)));
        let all_binary = binary(&direct) && binary(&pruned);
        let p_min = ks.p_value.min(chi.p_value);
        let passed = p_min >= self.cfg.tol(DIRECT_VS_PRUNED) && all_binary;
        Ok(self.result(
            DIRECT_VS_PRUNED,
            passed,
            p_min,
            vec![
                ("ks_p", ks.p_value),
                ("chi2_p", chi.p_value),
                ("all_binary", f64::from(u8::from(all_binary))),
            ],
        ))
    }

    fn branch_length_law(&self) -> Result<CheckResult> {
        let law = self.law()?;
        let mut xs: Vec<f64> = self.pruned()?.iter().map(Genealogy::root_length).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let span = law.horizon();
        let mut worst: f64 = 0.0;
        let mut i = 0;
        while i < xs.len() {
            let x = xs[i];
            let upper = i + xs[i..].partition_point(|&y| y <= x);
            let solver = law.survival(0.0, 0.0, x.min(span))?;
            // empirical Q(L ≥ x) and, below the atom at T − τ, Q(L > x)
            // bracket the jump at x
            let ge = (xs.len() - i) as f64 / n;
            worst = worst.max((solver - ge).abs());
            if x < span {
                let gt = (xs.len() - upper) as f64 / n;
                worst = worst.max((solver - gt).abs());
            }
            i = upper;
        }
        Ok(self.result(BRANCH_LENGTH_LAW, worst <= self.cfg.tol(BRANCH_LENGTH_LAW), worst, vec![("samples", n)]))
    }

    fn density_topology(&self) -> Result<CheckResult> {
        let law = self.law()?;
        let gs = self.pruned()?;
        let n = gs.len();
        let freq = |pred: &dyn Fn(&Genealogy) -> bool| gs.iter().filter(|g| pred(g)).count() as f64 / n as f64;
        let leaf = NeveuTree::leaf();
        let cherry = NeveuTree::node(vec![NeveuTree::leaf(), NeveuTree::leaf()]);
        let p_leaf = law.survival(0.0, 0.0, law.horizon())?;
        let p_cherry = topology_probability(&cherry, 0.0, law, TOPOLOGY_TOL)?;
        let f_leaf = freq(&|g| g.leaf_count() == 1);
        let f_cherry = freq(&|g| NeveuTree::of_tree(g.tree()) == cherry);
        let z_leaf = (f_leaf - p_leaf).abs() / binomial_se(p_leaf, n);
        let z_cherry = (f_cherry - p_cherry).abs() / binomial_se(p_cherry, n);
        let mut mass = 0.0;
        for leaves in 1..=3 {
            for shape in NeveuTree::all_with_leaves(leaves) {
                mass += if shape == leaf { p_leaf } else { topology_probability(&shape, 0.0, law, TOPOLOGY_TOL)? };
            }
        }
        let residual = freq(&|g| g.leaf_count() >= 4);
        let total = mass + residual;
        let z = z_leaf.max(z_cherry);
        let passed = z <= self.cfg.tol(DENSITY_TOPOLOGY) && (total - 1.0).abs() <= self.cfg.tol("density_topology.sum");
        Ok(self.result(
            DENSITY_TOPOLOGY,
            passed,
            z,
            vec![
                ("single_leaf_solver", p_leaf),
                ("single_leaf_mc", f_leaf),
                ("cherry_solver", p_cherry),
                ("cherry_mc", f_cherry),
                ("mass_up_to_3_leaves", mass),
                ("mc_residual", residual),
                ("total", total),
            ],
        ))
    }

    fn nu_sanity(&self) -> Result<CheckResult> {
        let law = self.law()?;
        let table = law.nu.as_ref().ok_or_else(|| Error::TableOutOfRange("offspring law not solved".into()))?;
        let cells = || table.nu.iter().flatten();
        let nu1 = cells().map(|v| v.get(1).copied().unwrap_or(0.0)).fold(0.0, f64::max);
        let nu2 = cells().map(|v| v.get(2).copied().unwrap_or(0.0)).fold(f64::INFINITY, f64::min);
        let passed = nu1 <= self.cfg.tol(NU_SANITY) && nu2 >= self.cfg.tol("nu_sanity.nu2");
        Ok(self.result(NU_SANITY, passed, nu1, vec![("min_nu2", nu2), ("max_residual", table.max_residual)]))
    }

    fn structural(&self) -> Result<CheckResult> {
        let kernels = structural_kernels()?;
        let per_kernel = self.cfg.scaled(1000).div_ceil(kernels.len());
        let mut failures: BTreeMap<String, f64> = BTreeMap::new();
        let mut trees = 0usize;
        for (ki, (_, k, spec)) in kernels.iter().enumerate() {
            let seed = self.seed(700 + ki as u64);
            let found: Vec<Vec<&'static str>> = (0..per_kernel as u64)
                .into_par_iter()
                .map(|r| {
                    let t = sample_tree(k, spec, replicate_seed(seed, r))?;
                    structural_failures(&t, &mut stream(replicate_seed(seed ^ 0x5eed, r)))
                })
                .collect::<Result<_>>()?;
            trees += found.len();
            for f in found.into_iter().flatten() {
                *failures.entry(f.to_string()).or_insert(0.0) += 1.0;
            }
        }
        let total = failures.values().fold(0.0, |a, b| a + b);
        let mut details: Vec<(&str, f64)> = failures.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        details.push(("trees", trees as f64));
        Ok(self.result(STRUCTURAL, total <= self.cfg.tol(STRUCTURAL), total, details))
    }
}

/// Kernels and start points of the structural suite.
pub fn structural_kernels() -> Result<Vec<(&'static str, Kernel, SimSpec)>> {
    Ok(vec![
        ("yule", Kernel::yule(1.0)?, SimSpec::new(0.0, 0.0, 2.0, AgeMode::Symmetric)),
        ("birth_death", Kernel::birth_death_constant(1.0, 0.5)?, SimSpec::new(0.0, 0.0, 2.0, AgeMode::Asymmetric)),
        (
            "gamma_table",
            Kernel::table(LengthLaw::Gamma { shape: 2.0, scale: 0.5 }, vec![0.3, 0.2, 0.3, 0.2])?,
            SimSpec::new(0.3, 0.2, 2.3, AgeMode::Symmetric),
        ),
        (
            "age_dependent",
            Kernel::birth_death(RateFunction::exp_decay(1.5, 0.5, RateArgument::Age), RateFunction::constant(0.4))?,
            SimSpec::new(0.3, 0.2, 2.3, AgeMode::Asymmetric),
        ),
    ])
}

/// Names of the structural identities violated by `t`, a tree expanded
/// to its horizon. Paths are compared at 50 random times.
pub fn structural_failures<R: Rng + ?Sized>(t: &BranchingTree, rng: &mut R) -> Result<Vec<&'static str>> {
    let mut f = Vec::new();
    let h = t.horizon.ok_or_else(|| Error::Config("structural checks need a horizon".into()))?;
    let tau0 = t.tau;
    let z = process_path(t, Characteristic::Simple)?;
    let zt = process_path(t, Characteristic::Reduced(h))?;
    let times = random_times(rng, tau0 - 0.5, h + 0.5, 50);

    let flag = |cond: bool, name: &'static str, f: &mut Vec<&'static str>| {
        if cond && !f.contains(&name) {
            f.push(name);
        }
    };
    for &x in &times {
        flag(x <= h && zt.eval(x) > z.eval(x), "reduced_exceeds_simple", &mut f);
        flag(x > h && zt.eval(x) != 0, "reduced_after_horizon", &mut f);
        flag(x <= tau0 && (z.eval(x) != 0 || zt.eval(x) != 0), "alive_before_birth", &mut f);
    }
    let mut inside: Vec<f64> = times.iter().copied().filter(|&x| x >= tau0 && x <= h).collect();
    inside.push(h);
    inside.sort_by(f64::total_cmp);
    flag(inside.windows(2).any(|w| zt.eval(w[0]) > zt.eval(w[1])), "reduced_not_monotone", &mut f);
    flag(z.eval(h) != zt.eval(h), "horizon_counts_differ", &mut f);

    // first generation: root characteristic plus the children's processes
    let root_len = t.root_length().ok_or_else(|| Error::Config("root branch is not expanded".into()))?;
    let root_extant = extant_progeny(t, &t.birth_times(), h)[0];
    let kids: Vec<BranchingTree> = t.children(0).map(|c| t.subtree(&t.node(c).label)).collect::<Result<_>>()?;
    let kid_simple: Vec<ProcessPath> = kids.iter().map(|k| process_path(k, Characteristic::Simple)).collect::<Result<_>>()?;
    let kid_reduced: Vec<Option<ProcessPath>> = kids
        .iter()
        .map(|k| if k.tau < h { process_path(k, Characteristic::Reduced(h)).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    for &x in &times {
        let own = tau0 < x && x <= tau0 + root_len;
        if x <= h {
            let rhs = i64::from(own) + kid_simple.iter().map(|p| p.eval(x)).sum::<i64>();
            flag(rhs != z.eval(x), "first_generation_simple", &mut f);
        }
        let own_t = root_extant && tau0 < x && x <= (tau0 + root_len).min(h);
        let rhs = i64::from(own_t) + kid_reduced.iter().flatten().map(|p| p.eval(x)).sum::<i64>();
        flag(rhs != zt.eval(x), "first_generation_reduced", &mut f);
    }

    // decomposition round trip along a random stopping line
    let mut chosen: Vec<Label> = Vec::new();
    for node in t.nodes().iter().skip(1) {
        if rng.random_bool(0.3) && chosen.iter().all(|c| !c.comparable(&node.label)) {
            chosen.push(node.label.clone());
        }
    }
    let parts: BTreeMap<Label, BranchingTree> =
        chosen.iter().map(|x| Ok((x.clone(), t.subtree(x)?))).collect::<Result<_>>()?;
    let line = StoppingLine::new(chosen)?;
    let rebuilt = t.prune(&line).recompose(&parts);
    flag(!matches!(&rebuilt, Ok(r) if r == t), "decomposition_round_trip", &mut f);

    // subtree composition
    let x = t.node(rng.random_range(0..t.len())).label.clone();
    let sx = t.subtree(&x)?;
    let y = sx.node(rng.random_range(0..sx.len())).label.clone();
    flag(sx.subtree(&y)? != t.subtree(&x.concat(&y))?, "subtree_composition", &mut f);

    match crate::genealogy::Genealogy::from_tree(t, h) {
        Ok(g) => {
            flag(!g.is_ultrametric(1e-9), "genealogy_not_ultrametric", &mut f);
            flag(g.has_unary(), "genealogy_unary", &mut f);
            flag(g.leaf_count() as i64 != zt.eval(h), "genealogy_leaf_count", &mut f);
            let zg = g.process();
            flag(times.iter().any(|&x| zg.eval(x) != zt.eval(x)), "genealogy_path_identity", &mut f);
        }
        Err(Error::EmptyExtant) => {
            flag(times.iter().any(|&x| zt.eval(x) != 0), "extinct_reduced_nonzero", &mut f);
        }
        Err(e) => return Err(e),
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_check_list_passes() {
        let cfg = SuiteConfig { checks: vec![], ..SuiteConfig::default() };
        let r = run_suite(&cfg).unwrap();
        assert!(r.passed && r.checks.is_empty());
    }

    #[test]
    fn unknown_names_are_config_errors() {
        let cfg = SuiteConfig { checks: vec!["nope".into()], ..SuiteConfig::default() };
        assert!(matches!(run_suite(&cfg), Err(Error::Config(_))));
        let mut cfg = SuiteConfig::default();
        cfg.tolerances.insert("nope".into(), 1.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn tightened_kendall_tolerance_fails() {
        let mut cfg = SuiteConfig { checks: vec![KENDALL_ORACLE.into()], ..SuiteConfig::default() };
        cfg.tolerances.insert(KENDALL_ORACLE.into(), 1e-9);
        let r = run_suite(&cfg).unwrap();
        assert!(!r.passed);
        assert!(r.checks[0].value > 1e-9 && r.checks[0].message.is_none());
    }

    #[test]
    fn structural_identities_hold_on_a_small_sample() {
        let mut rng = stream(11);
        for (_, k, spec) in structural_kernels().unwrap() {
            for seed in 0..40 {
                let t = sample_tree(&k, &spec, seed).unwrap();
                assert_eq!(structural_failures(&t, &mut rng).unwrap(), Vec::<&str>::new());
            }
        }
    }
}
