//! Genealogies of the branches extant at a horizon `T`: construction by
//! pruning a simulated tree, direct simulation, the laws of genealogical
//! branch lengths and offspring numbers, densities and topology
//! probabilities.

mod density;
mod direct;
mod law;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use density::{log_density, topology_probability, MAX_SHAPE_INTERNAL};
pub use direct::{simulate_genealogy, simulate_genealogy_batch, RESTART_CAP};
pub use law::{nu_monte_carlo, solve_ht, GenealogyLawTables, NuTable, Provenance};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::label::Label;
use crate::newick;
use crate::rng::replicate_seed;
use crate::simulator::{extant_progeny, process_path, sample_tree, Characteristic, ProcessPath, SimSpec};
use crate::tree::{AgeMode, BranchingTree, Node};

/// Trees sampled per requested genealogy before conditioning on survival
/// is declared degenerate.
const PRUNE_ATTEMPT_FACTOR: usize = 1000;

/// `count` genealogies of surviving trees: trees are sampled with
/// replicate seeds `0, 1, …` and extinct ones are discarded, so the
/// output depends only on `seed`.
pub fn pruned_genealogy_batch(kernel: &Kernel, spec: &SimSpec, seed: u64, count: usize) -> Result<Vec<Genealogy>> {
    let limit = (count.max(1) * PRUNE_ATTEMPT_FACTOR) as u64;
    let mut out = Vec::with_capacity(count);
    let mut next = 0u64;
    while out.len() < count {
        if next >= limit {
            return Err(Error::ConditioningDegenerate { tau: spec.tau, alpha: spec.alpha, p0: 1.0 - out.len() as f64 / next as f64 });
        }
        let batch = (2 * (count - out.len())).max(1000) as u64;
        let got: Vec<Option<Genealogy>> = (next..next + batch)
            .into_par_iter()
            .map(|r| {
                let t = sample_tree(kernel, spec, replicate_seed(seed, r))?;
                match Genealogy::from_tree(&t, spec.horizon) {
                    Ok(g) => Ok(Some(g)),
                    Err(Error::EmptyExtant) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        out.extend(got.into_iter().flatten());
        next += batch;
    }
    out.truncate(count);
    Ok(out)
}

/// A `T`-ultrametric branching tree of least common ancestors, with the
/// genealogical birth age of every node.
#[derive(Clone, Debug, PartialEq)]
pub struct Genealogy {
    tree: BranchingTree,
    alpha_t: Vec<f64>,
    horizon: f64,
}

/// JSON node: the tree node schema plus `alpha_T`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GenealogyNodeJson {
    pub length: f64,
    #[serde(rename = "alpha_T")]
    pub alpha_t: f64,
    #[serde(default)]
    pub children: Vec<GenealogyNodeJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GenealogyJson {
    pub tau: f64,
    pub alpha: f64,
    pub mode: AgeMode,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub root: GenealogyNodeJson,
}

/// Arena builder shared by the constructors; nodes must be pushed in preorder.
#[derive(Default)]
pub(crate) struct Builder {
    nodes: Vec<Node>,
    alpha_t: Vec<f64>,
}

impl Builder {
    /// Adds a node under `parent` (as its next child) and returns its index.
    pub fn push(&mut self, parent: Option<usize>, length: f64, alpha_t: f64, n_children: usize) -> usize {
        let idx = self.nodes.len();
        let label = match parent {
            None => Label::root(),
            Some(p) => {
                let slot = self.nodes[p].children.iter().position(Option::is_none).expect("free child slot");
                self.nodes[p].children[slot] = Some(idx);
                self.nodes[p].label.child(slot as u32 + 1)
            }
        };
        self.nodes.push(Node { label, length: Some(length), children: vec![None; n_children], parent });
        self.alpha_t.push(alpha_t);
        idx
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn finish(self, tau: f64, alpha: f64, mode: AgeMode, horizon: f64) -> Genealogy {
        let tree = BranchingTree::from_arena(tau, alpha, mode, None, self.nodes);
        Genealogy { tree, alpha_t: self.alpha_t, horizon }
    }
}

impl Genealogy {
    /// Genealogy of the branches of `tree` extant at `t_obs`: branches
    /// without extant progeny are removed, extant branches are censored
    /// at `t_obs`, chains with a single contributing child are collapsed
    /// into their first branch, and the contributing children are
    /// relabelled by rank.
    pub fn from_tree(tree: &BranchingTree, t_obs: f64) -> Result<Genealogy> {
        if matches!(tree.horizon, Some(h) if h < t_obs || tree.tau >= h) {
            return Err(Error::TruncatedTree(t_obs));
        }
        let tau = tree.birth_times();
        let alpha = tree.birth_ages();
        let has = extant_progeny(tree, &tau, t_obs);
        if !has[0] {
            return Err(Error::EmptyExtant);
        }
        let mut b = Builder::default();
        // (first branch of the chain, genealogical parent)
        let mut stack = vec![(0usize, None::<usize>)];
        while let Some((start, parent)) = stack.pop() {
            let mut cur = start;
            let (length, kids) = loop {
                let node = tree.node(cur);
                let l = node.length.expect("branches with extant progeny are expanded");
                if tau[cur] < t_obs && t_obs <= tau[cur] + l {
                    break (t_obs - tau[start], Vec::new());
                }
                let kids: Vec<usize> = tree.children(cur).filter(|&c| has[c]).collect();
                if kids.len() == 1 {
                    cur = kids[0];
                } else {
                    break (tau[cur] + l - tau[start], kids);
                }
            };
            let idx = b.push(parent, length, alpha[start], kids.len());
            for &c in kids.iter().rev() {
                stack.push((c, Some(idx)));
            }
        }
        Ok(b.finish(tree.tau, tree.alpha, tree.mode, t_obs))
    }

    pub fn tree(&self) -> &BranchingTree {
        &self.tree
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tau(&self) -> f64 {
        self.tree.tau
    }

    pub fn mode(&self) -> AgeMode {
        self.tree.mode
    }

    /// Genealogical birth ages `α^T_x`, by arena index.
    pub fn alpha_t(&self) -> &[f64] {
        &self.alpha_t
    }

    /// Root branch length `L^T`.
    pub fn root_length(&self) -> f64 {
        self.tree.root_length().expect("genealogy branches have lengths")
    }

    /// Root offspring count `N^T`.
    pub fn root_offspring(&self) -> usize {
        self.tree.node(0).offspring()
    }

    pub fn leaf_count(&self) -> usize {
        self.tree.leaves().len()
    }

    pub fn internal_count(&self) -> usize {
        self.tree.len() - self.leaf_count()
    }

    /// Lengths and offspring counts of internal nodes with their birth times.
    pub fn internal_nodes(&self) -> Vec<(f64, f64, usize)> {
        let tau = self.tree.birth_times();
        (0..self.tree.len())
            .filter(|&i| self.tree.node(i).offspring() > 0)
            .map(|i| (tau[i], self.tree.node(i).length.expect("length"), self.tree.node(i).offspring()))
            .collect()
    }

    /// Largest relative deviation of a root-to-leaf length from `T − τ`.
    pub fn ultrametric_error(&self) -> f64 {
        let target = self.horizon - self.tree.tau;
        let mut depth = vec![0.0; self.tree.len()];
        let mut worst: f64 = 0.0;
        for i in self.tree.preorder() {
            let node = self.tree.node(i);
            let above = node.parent.map_or(0.0, |p| depth[p]);
            depth[i] = above + node.length.expect("length");
            if node.offspring() == 0 {
                worst = worst.max((depth[i] - target).abs() / target.abs().max(f64::MIN_POSITIVE));
            }
        }
        worst
    }

    pub fn is_ultrametric(&self, rel_tol: f64) -> bool {
        self.ultrametric_error() <= rel_tol
    }

    /// True if some node has exactly one child.
    pub fn has_unary(&self) -> bool {
        self.tree.nodes().iter().any(|n| n.offspring() == 1)
    }

    /// Simple Sevast'yanov process of the genealogy.
    pub fn process(&self) -> ProcessPath {
        process_path(&self.tree, Characteristic::Simple).expect("simple process of an expanded tree")
    }

    pub fn to_json(&self) -> GenealogyJson {
        GenealogyJson {
            tau: self.tree.tau,
            alpha: self.tree.alpha,
            mode: self.tree.mode,
            horizon: self.horizon,
            root: self.json_node(0),
        }
    }

    fn json_node(&self, i: usize) -> GenealogyNodeJson {
        GenealogyNodeJson {
            length: self.tree.node(i).length.expect("length"),
            alpha_t: self.alpha_t[i],
            children: self.tree.children(i).map(|c| self.json_node(c)).collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("genealogy serialization cannot fail")
    }

    pub fn from_json(j: &GenealogyJson) -> Genealogy {
        let mut b = Builder::default();
        let mut stack = vec![(&j.root, None::<usize>)];
        while let Some((n, parent)) = stack.pop() {
            let idx = b.push(parent, n.length, n.alpha_t, n.children.len());
            for c in n.children.iter().rev() {
                stack.push((c, Some(idx)));
            }
        }
        b.finish(j.tau, j.alpha, j.mode, j.horizon)
    }

    pub fn from_json_str(s: &str) -> Result<Genealogy> {
        let j: GenealogyJson = serde_json::from_str(s)?;
        Ok(Self::from_json(&j))
    }

    /// Newick string with leaves named `x1, x2, …` or by `names`.
    pub fn to_newick(&self, names: Option<&BTreeMap<Label, String>>) -> String {
        newick::to_newick(&self.tree, names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::simulator::random_times;
    use crate::tree::NodeJson;

    fn node(length: f64, children: Vec<NodeJson>) -> NodeJson {
        NodeJson { length: Some(length), children: children.into_iter().map(Some).collect() }
    }

    #[test]
    fn single_surviving_branch() {
        let t = BranchingTree::single(0.5, 0.0, AgeMode::Symmetric, 3.0);
        let g = Genealogy::from_tree(&t, 2.0).unwrap();
        assert_eq!(g.tree().len(), 1);
        assert_eq!(g.root_length(), 1.5);
        assert_eq!(g.root_offspring(), 0);
    }

    #[test]
    fn two_surviving_children() {
        let root = node(1.0, vec![node(1.5, vec![]), node(2.0, vec![])]);
        let t = BranchingTree::from_nested(0.0, 0.0, AgeMode::Symmetric, &root);
        let g = Genealogy::from_tree(&t, 2.0).unwrap();
        assert_eq!(g.to_newick(None), "(x1:1,x2:1):1;");
    }

    #[test]
    fn chains_collapse_and_extinct_lines_vanish() {
        // root -> "1" (only survivor; "2" dies early) -> split with both extant
        let split = node(0.5, vec![node(1.0, vec![]), node(1.0, vec![])]);
        let root = node(1.0, vec![split, node(0.2, vec![])]);
        let t = BranchingTree::from_nested(0.0, 0.0, AgeMode::Symmetric, &root);
        let g = Genealogy::from_tree(&t, 2.0).unwrap();
        assert_eq!(g.root_length(), 1.5);
        assert_eq!(g.leaf_count(), 2);
        assert!(g.is_ultrametric(1e-12));
    }

    #[test]
    fn asymmetric_ages_follow_the_original_rank() {
        // root splits at 1 into "1", "2", "3"; "1" dies, "2" and "3" extant
        let root = node(1.0, vec![node(0.1, vec![]), node(5.0, vec![]), node(5.0, vec![])]);
        let t = BranchingTree::from_nested(0.0, 0.7, AgeMode::Asymmetric, &root);
        let g = Genealogy::from_tree(&t, 2.0).unwrap();
        assert_eq!(g.alpha_t(), &[0.7, 0.0, 0.0]);
        // now the rank-1 child survives and inherits α + L
        let root = node(1.0, vec![node(5.0, vec![]), node(0.1, vec![]), node(5.0, vec![])]);
        let t = BranchingTree::from_nested(0.0, 0.7, AgeMode::Asymmetric, &root);
        let g = Genealogy::from_tree(&t, 2.0).unwrap();
        assert_eq!(g.alpha_t(), &[0.7, 1.7, 0.0]);
    }

    #[test]
    fn extinct_tree_is_an_error() {
        let t = BranchingTree::single(0.0, 0.0, AgeMode::Symmetric, 1.0);
        assert!(matches!(Genealogy::from_tree(&t, 2.0), Err(Error::EmptyExtant)));
    }

    #[test]
    fn json_round_trip() {
        let split = node(0.5, vec![node(1.0, vec![]), node(1.0, vec![])]);
        let root = node(1.0, vec![split, node(3.0, vec![])]);
        let t = BranchingTree::from_nested(0.0, 0.0, AgeMode::Asymmetric, &root);
        let g = Genealogy::from_tree(&t, 2.0).unwrap();
        let s = g.to_json_string();
        assert!(s.contains("\"T\":2.0") && s.contains("alpha_T"));
        assert_eq!(Genealogy::from_json_str(&s).unwrap(), g);
    }

    #[test]
    fn simulated_genealogies_satisfy_the_identities() {
        let k = Kernel::birth_death_constant(1.0, 0.5).unwrap();
        let spec = SimSpec::new(0.0, 0.0, 2.0, AgeMode::Asymmetric);
        let mut rng = stream(3);
        let mut seen = 0;
        for seed in 0..300 {
            let t = sample_tree(&k, &spec, seed).unwrap();
            let Ok(g) = Genealogy::from_tree(&t, 2.0) else { continue };
            seen += 1;
            assert!(g.is_ultrametric(1e-9));
            assert!(!g.has_unary());
            let zt = process_path(&t, Characteristic::Reduced(2.0)).unwrap();
            assert_eq!(g.leaf_count() as i64, zt.eval(2.0));
            let zg = g.process();
            for x in random_times(&mut rng, -0.5, 2.5, 50) {
                assert_eq!(zg.eval(x), zt.eval(x));
            }
            for (i, n) in g.tree().nodes().iter().enumerate() {
                if n.parent.is_some() && n.label.rank() > 1 {
                    assert_eq!(g.alpha_t()[i], 0.0);
                }
            }
        }
        assert!(seen > 50);
    }
}
