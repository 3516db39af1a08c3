//! Forward sampling of branching trees and the processes read off them:
//! the simple and reduced Sevast'yanov processes, the extant set with its
//! least common ancestor, and the individual (CMJ) decomposition of
//! asymmetric trees.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::label::Label;
use crate::rng::{branch_stream, replicate_seed};
use crate::tree::{AgeMode, BranchingTree, Node};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub max_branches: usize,
    pub max_generation: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { max_branches: 1_000_000, max_generation: 10_000 }
    }
}

/// Where and how a tree starts, and how far it is expanded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimSpec {
    pub tau: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub mode: AgeMode,
    pub caps: Caps,
}

impl SimSpec {
    pub fn new(tau: f64, alpha: f64, horizon: f64, mode: AgeMode) -> Self {
        SimSpec { tau, alpha, horizon, mode, caps: Caps::default() }
    }
}

/// Samples one tree. Branch `x` draws its length and then its offspring
/// count from a stream keyed by `(seed, x)`. Children born at or after
/// the horizon are kept as stubs without draws.
pub fn sample_tree(kernel: &Kernel, spec: &SimSpec, seed: u64) -> Result<BranchingTree> {
    let t_end = spec.horizon;
    let mut nodes: Vec<Node> = Vec::new();
    // (label, parent, tau, alpha)
    let mut stack: Vec<(Label, Option<usize>, f64, f64)> = vec![(Label::root(), None, spec.tau, spec.alpha)];
    while let Some((label, parent, tau, alpha)) = stack.pop() {
        if nodes.len() >= spec.caps.max_branches {
            return Err(Error::CapExceeded(format!("more than {} branches", spec.caps.max_branches)));
        }
        if label.generation() > spec.caps.max_generation {
            return Err(Error::CapExceeded(format!("generation above {}", spec.caps.max_generation)));
        }
        let idx = nodes.len();
        if let Some(p) = parent {
            nodes[p].children[label.rank() as usize - 1] = Some(idx);
        }
        let is_root = parent.is_none();
        if !is_root && tau >= t_end {
            nodes.push(Node { label, length: None, children: Vec::new(), parent });
            continue;
        }
        let mut rng = branch_stream(seed, &label);
        let len = kernel.sample_length(tau, alpha, &mut rng)?;
        if is_root && tau >= t_end {
            nodes.push(Node { label, length: Some(len), children: Vec::new(), parent });
            continue;
        }
        let n = kernel.sample_offspring(tau, alpha, len, &mut rng);
        let child_tau = tau + len;
        for k in (1..=n as u32).rev() {
            let child_alpha = match spec.mode {
                AgeMode::Asymmetric if k == 1 => alpha + len,
                _ => 0.0,
            };
            stack.push((label.child(k), Some(idx), child_tau, child_alpha));
        }
        nodes.push(Node { label, length: Some(len), children: vec![None; n], parent });
    }
    Ok(BranchingTree::from_arena(spec.tau, spec.alpha, spec.mode, Some(t_end), nodes))
}

/// Samples `replicates` independent trees in parallel; the output does
/// not depend on the thread count.
pub fn sample_batch(kernel: &Kernel, spec: &SimSpec, seed: u64, replicates: usize) -> Result<Vec<BranchingTree>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| sample_tree(kernel, spec, replicate_seed(seed, r)))
        .collect()
}

/// Which branches a process counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Characteristic {
    /// Every branch while alive.
    Simple,
    /// Branches with progeny extant at the horizon, up to the horizon.
    Reduced(f64),
}

/// Left-continuous step path: `values[i]` holds on `(times[i], times[i+1]]`
/// and the path is 0 up to and including `times[0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessPath {
    pub times: Vec<f64>,
    pub values: Vec<i64>,
    /// Path is exact up to this time.
    pub valid_until: f64,
}

impl ProcessPath {
    /// Builds the path of the sum of indicators of `(a, b]` intervals.
    pub fn from_intervals(intervals: &[(f64, f64)], valid_until: f64) -> Self {
        let mut events: Vec<(f64, i64)> = Vec::with_capacity(2 * intervals.len());
        for &(a, b) in intervals {
            if b > a {
                events.push((a, 1));
                events.push((b, -1));
            }
        }
        events.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<i64> = Vec::new();
        let mut z = 0;
        for (t, d) in events {
            z += d;
            if times.last() == Some(&t) {
                *values.last_mut().expect("paired with times") = z;
            } else {
                times.push(t);
                values.push(z);
            }
        }
        ProcessPath { times, values, valid_until }
    }

    pub fn eval(&self, t: f64) -> i64 {
        let i = self.times.partition_point(|&x| x < t);
        if i == 0 {
            0
        } else {
            self.values[i - 1]
        }
    }
}

/// True per node iff its subtree holds a branch extant at `t_obs`
/// (`τ_y < t_obs ≤ τ_y + L_y`).
pub fn extant_progeny(tree: &BranchingTree, tau: &[f64], t_obs: f64) -> Vec<bool> {
    let mut has = vec![false; tree.len()];
    for i in tree.preorder().into_iter().rev() {
        let n = tree.node(i);
        let own = match n.length {
            Some(l) => tau[i] < t_obs && t_obs <= tau[i] + l,
            None => false,
        };
        has[i] = own || tree.children(i).any(|c| has[c]);
    }
    has
}

fn check_expanded(tree: &BranchingTree, t: f64) -> Result<()> {
    match tree.horizon {
        Some(h) if h < t || tree.tau >= h => Err(Error::TruncatedTree(t)),
        _ => Ok(()),
    }
}

/// Path of the process counting branches under `c`.
pub fn process_path(tree: &BranchingTree, c: Characteristic) -> Result<ProcessPath> {
    let tau = tree.birth_times();
    match c {
        Characteristic::Simple => {
            let intervals: Vec<(f64, f64)> = tree
                .nodes()
                .iter()
                .enumerate()
                .filter_map(|(i, n)| n.length.map(|l| (tau[i], tau[i] + l)))
                .collect();
            let valid = match tree.horizon {
                Some(h) if tree.tau < h => h,
                Some(_) => tree.tau,
                None => f64::INFINITY,
            };
            Ok(ProcessPath::from_intervals(&intervals, valid))
        }
        Characteristic::Reduced(t_obs) => {
            check_expanded(tree, t_obs)?;
            let has = extant_progeny(tree, &tau, t_obs);
            let intervals: Vec<(f64, f64)> = tree
                .nodes()
                .iter()
                .enumerate()
                .filter(|(i, _)| has[*i])
                .map(|(i, n)| (tau[i], (tau[i] + n.length.expect("extant progeny implies expanded")).min(t_obs)))
                .collect();
            Ok(ProcessPath::from_intervals(&intervals, f64::INFINITY))
        }
    }
}

/// Extant set at `T`, its least common ancestor `λ^T`, the children of
/// `λ^T` with extant progeny, `N^T` and `L^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtantSummary {
    pub extant: Vec<Label>,
    pub lca: Label,
    pub lca_children_with_progeny: Vec<Label>,
    pub n_genealogy: usize,
    pub root_gen_length: f64,
}

/// `None` when nothing is extant at `t_obs`.
pub fn extant_summary(tree: &BranchingTree, t_obs: f64) -> Result<Option<ExtantSummary>> {
    check_expanded(tree, t_obs)?;
    let tau = tree.birth_times();
    let has = extant_progeny(tree, &tau, t_obs);
    if !has[0] {
        return Ok(None);
    }
    let extant: Vec<Label> = tree
        .preorder()
        .into_iter()
        .filter(|&i| {
            let n = tree.node(i);
            n.length.is_some_and(|l| tau[i] < t_obs && t_obs <= tau[i] + l)
        })
        .map(|i| tree.node(i).label.clone())
        .collect();
    // descend while exactly one child carries extant progeny
    let mut i = 0;
    loop {
        let node = tree.node(i);
        let own = node.length.is_some_and(|l| tau[i] < t_obs && t_obs <= tau[i] + l);
        if own {
            break;
        }
        let surviving: Vec<usize> = tree.children(i).filter(|&c| has[c]).collect();
        if surviving.len() == 1 {
            i = surviving[0];
        } else {
            break;
        }
    }
    let lca_node = tree.node(i);
    let lca_extant = lca_node.length.is_some_and(|l| tau[i] < t_obs && t_obs <= tau[i] + l);
    let lca_children: Vec<Label> = if lca_extant {
        Vec::new()
    } else {
        tree.children(i).filter(|&c| has[c]).map(|c| tree.node(c).label.clone()).collect()
    };
    let root_gen_length = if lca_extant {
        t_obs - tree.tau
    } else {
        tau[i] + lca_node.length.expect("internal") - tree.tau
    };
    Ok(Some(ExtantSummary {
        extant,
        lca: lca_node.label.clone(),
        n_genealogy: lca_children.len(),
        lca_children_with_progeny: lca_children,
        root_gen_length,
    }))
}

/// A maximal run `x, x1, x11, …` of an asymmetric tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub initiator: Label,
    pub birth: f64,
    /// Death time accumulated along the run exactly as branch birth times are.
    pub death: f64,
    pub lifespan: f64,
    /// Birth times of non-rank-1 children along the run, relative to `birth`.
    pub birth_offsets: Vec<f64>,
}

impl Individual {
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth < t && t <= self.death
    }
}

/// Decomposes an asymmetric tree into individuals. Unexpanded stubs add
/// no lifetime and initiate no individual.
pub fn individuals(tree: &BranchingTree) -> Result<Vec<Individual>> {
    if tree.mode != AgeMode::Asymmetric {
        return Err(Error::AsymmetricRequired);
    }
    let tau = tree.birth_times();
    let mut out = Vec::new();
    for i in tree.preorder() {
        let node = tree.node(i);
        if node.is_stub() || (node.parent.is_some() && node.label.rank() == 1) {
            continue;
        }
        let birth = tau[i];
        let mut death = birth;
        let mut offsets = Vec::new();
        let mut cur = Some(i);
        while let Some(j) = cur {
            let n = tree.node(j);
            let Some(l) = n.length else { break };
            death = tau[j] + l;
            for (k, c) in n.children.iter().enumerate() {
                if k > 0 {
                    if let Some(c) = c {
                        offsets.push(tau[*c] - birth);
                    }
                }
            }
            cur = n.children.first().copied().flatten();
        }
        out.push(Individual { initiator: node.label.clone(), birth, death, lifespan: death - birth, birth_offsets: offsets });
    }
    Ok(out)
}

/// Uniform draw in `[a, b)`, used by property checks that probe paths at
/// random times.
pub fn random_times<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| a + (b - a) * rng.random::<f64>()).collect()
}
