//! Branching trees: Neveu trees marked with birth time, birth age and
//! branch lengths, together with subtree translation, pruning and the
//! fundamental decomposition.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Label, StoppingLine};

/// Child birth-age convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgeMode {
    /// Every subtree is born with age 0.
    #[default]
    Symmetric,
    /// Rank-1 children inherit the mother's age at their birth.
    Asymmetric,
}

/// One branch of an arena-backed tree.
///
/// `length == None` marks an unexpanded stub (born at or after the
/// simulation horizon). `children[k]` is `None` for a rank that was pruned.
#[derive(Clone, Debug)]
pub struct Node {
    pub label: Label,
    pub length: Option<f64>,
    pub children: Vec<Option<usize>>,
    pub parent: Option<usize>,
}

impl Node {
    /// Offspring count `N_x`, including pruned ranks.
    pub fn offspring(&self) -> usize {
        self.children.len()
    }

    pub fn is_stub(&self) -> bool {
        self.length.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct BranchingTree {
    pub tau: f64,
    pub alpha: f64,
    pub mode: AgeMode,
    /// Expansion horizon for simulated trees; `None` when fully expanded.
    pub horizon: Option<f64>,
    nodes: Vec<Node>,
}

/// JSON node: `{"length": r, "children": [node | null ...]}`; `null`
/// length marks a stub, `null` children mark pruned ranks.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeJson {
    pub length: Option<f64>,
    #[serde(default)]
    pub children: Vec<Option<NodeJson>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TreeJson {
    pub tau: f64,
    pub alpha: f64,
    pub mode: AgeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub root: NodeJson,
}

/// Loose label-map view of a tree, used for validation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeRecord {
    pub length: Option<f64>,
    pub children: u32,
}

pub type LabelledNodes = BTreeMap<Label, NodeRecord>;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    MissingRoot,
    /// Neveu condition (b).
    MissingMother(Label),
    /// Neveu condition (c): `parent` declares `rank` but the child is absent.
    ChildGap { parent: Label, rank: u32 },
    /// Neveu condition (c): a child beyond the declared offspring count.
    UnexpectedChild(Label),
    NonPositiveLength(Label),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks Neveu conditions (a)-(c) and positivity of lengths.
pub fn validate_labelled(nodes: &LabelledNodes) -> ValidationReport {
    let mut violations = Vec::new();
    if !nodes.contains_key(&Label::root()) {
        violations.push(Violation::MissingRoot);
    }
    for (label, rec) in nodes {
        if !label.is_root() {
            let mother = label.mother();
            match nodes.get(&mother) {
                None => violations.push(Violation::MissingMother(label.clone())),
                Some(m) if label.rank() > m.children => {
                    violations.push(Violation::UnexpectedChild(label.clone()))
                }
                Some(_) => {}
            }
        }
        for k in 1..=rec.children {
            if !nodes.contains_key(&label.child(k)) {
                violations.push(Violation::ChildGap { parent: label.clone(), rank: k });
            }
        }
        if let Some(l) = rec.length {
            if !(l > 0.0 && l.is_finite()) {
                violations.push(Violation::NonPositiveLength(label.clone()));
            }
        }
    }
    ValidationReport { violations }
}

pub fn validate_tree(t: &BranchingTree) -> ValidationReport {
    validate_labelled(&t.to_labelled())
}

impl BranchingTree {
    pub fn single(tau: f64, alpha: f64, mode: AgeMode, length: f64) -> Self {
        BranchingTree {
            tau,
            alpha,
            mode,
            horizon: None,
            nodes: vec![Node { label: Label::root(), length: Some(length), children: vec![], parent: None }],
        }
    }

    /// Wraps an arena already laid out in preorder with consistent
    /// parent/child links.
    pub(crate) fn from_arena(tau: f64, alpha: f64, mode: AgeMode, horizon: Option<f64>, nodes: Vec<Node>) -> Self {
        BranchingTree { tau, alpha, mode, horizon, nodes }
    }

    /// Builds from a nested description (children listed by rank).
    pub fn from_nested(tau: f64, alpha: f64, mode: AgeMode, root: &NodeJson) -> Self {
        let mut nodes: Vec<Node> = Vec::new();
        // (node, parent index, label) in preorder
        let mut stack: Vec<(&NodeJson, Option<usize>, Label)> = vec![(root, None, Label::root())];
        while let Some((nj, parent, label)) = stack.pop() {
            let idx = nodes.len();
            nodes.push(Node { label: label.clone(), length: nj.length, children: vec![None; nj.children.len()], parent });
            if let Some(p) = parent {
                let r = label.rank() as usize - 1;
                nodes[p].children[r] = Some(idx);
            }
            for (k, c) in nj.children.iter().enumerate().rev() {
                if let Some(c) = c {
                    stack.push((c, Some(idx), label.child(k as u32 + 1)));
                }
            }
        }
        BranchingTree { tau, alpha, mode, horizon: None, nodes }
    }

    pub fn from_json(j: &TreeJson) -> Self {
        let mut t = Self::from_nested(j.tau, j.alpha, j.mode, &j.root);
        t.horizon = j.horizon;
        t
    }

    pub fn to_json(&self) -> TreeJson {
        TreeJson { tau: self.tau, alpha: self.alpha, mode: self.mode, horizon: self.horizon, root: self.nested(0) }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("tree serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: TreeJson = serde_json::from_str(s)?;
        Ok(Self::from_json(&j))
    }

    /// Nested description of the subtree at node `i`.
    pub fn nested(&self, i: usize) -> NodeJson {
        let n = &self.nodes[i];
        NodeJson {
            length: n.length,
            children: n.children.iter().map(|c| c.map(|c| self.nested(c))).collect(),
        }
    }

    /// Builds from a label map; fails with the validation report unless
    /// the map is a valid Neveu tree.
    pub fn try_from_labelled(
        tau: f64,
        alpha: f64,
        mode: AgeMode,
        nodes: &LabelledNodes,
    ) -> std::result::Result<Self, ValidationReport> {
        let report = validate_labelled(nodes);
        if !report.is_valid() {
            return Err(report);
        }
        let mut arena: Vec<Node> = Vec::with_capacity(nodes.len());
        let mut index: BTreeMap<&Label, usize> = BTreeMap::new();
        // BTreeMap iteration order is preorder, so mothers come first.
        for (label, rec) in nodes {
            let idx = arena.len();
            let parent = if label.is_root() { None } else { Some(index[&label.mother()]) };
            arena.push(Node {
                label: label.clone(),
                length: rec.length,
                children: vec![None; rec.children as usize],
                parent,
            });
            if let Some(p) = parent {
                arena[p].children[label.rank() as usize - 1] = Some(idx);
            }
            index.insert(label, idx);
        }
        Ok(BranchingTree { tau, alpha, mode, horizon: None, nodes: arena })
    }

    pub fn to_labelled(&self) -> LabelledNodes {
        self.nodes
            .iter()
            .map(|n| (n.label.clone(), NodeRecord { length: n.length, children: n.children.len() as u32 }))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn root_length(&self) -> Option<f64> {
        self.nodes[0].length
    }

    /// True if some branch was left unexpanded at the horizon.
    pub fn is_truncated(&self) -> bool {
        self.horizon.is_some_and(|h| self.tau >= h) || self.nodes.iter().any(Node::is_stub)
    }

    /// Present children of node `i`, by rank.
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes[i].children.iter().filter_map(|c| *c)
    }

    pub fn find(&self, x: &Label) -> Option<usize> {
        let mut i = 0;
        for &k in x.path() {
            i = (*self.nodes[i].children.get(k as usize - 1)?)?;
        }
        Some(i)
    }

    /// Birth times `τ_x` indexed by arena position. Stubs get a birth time too.
    pub fn birth_times(&self) -> Vec<f64> {
        let mut tau = vec![0.0; self.nodes.len()];
        for i in self.preorder() {
            tau[i] = match self.nodes[i].parent {
                None => self.tau,
                Some(p) => tau[p] + self.nodes[p].length.expect("stub with children"),
            };
        }
        tau
    }

    /// Birth ages `α_x` under the tree's age mode.
    pub fn birth_ages(&self) -> Vec<f64> {
        let mut alpha = vec![0.0; self.nodes.len()];
        for i in self.preorder() {
            alpha[i] = match self.nodes[i].parent {
                None => self.alpha,
                Some(p) => match self.mode {
                    AgeMode::Symmetric => 0.0,
                    AgeMode::Asymmetric if self.nodes[i].label.rank() == 1 => {
                        alpha[p] + self.nodes[p].length.expect("stub with children")
                    }
                    AgeMode::Asymmetric => 0.0,
                },
            };
        }
        alpha
    }

    /// Arena indices in depth-first preorder.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            out.push(i);
            for c in self.nodes[i].children.iter().rev().flatten() {
                stack.push(*c);
            }
        }
        out
    }

    /// Subtree rooted at `x`, relabelled by stripping the prefix.
    pub fn subtree(&self, x: &Label) -> Result<BranchingTree> {
        let idx = self.find(x).ok_or_else(|| Error::LabelNotInTree(x.clone()))?;
        if idx == 0 {
            return Ok(self.clone());
        }
        let tau = self.birth_times()[idx];
        let alpha = self.birth_ages()[idx];
        let mut t = Self::from_nested(tau, alpha, self.mode, &self.nested(idx));
        t.horizon = self.horizon;
        Ok(t)
    }

    /// Removes every branch with an ancestor-or-self in `line`; the
    /// removed ranks are kept as holes. The root is never removed.
    pub fn prune(&self, line: &StoppingLine) -> BranchingTree {
        let mut out = self.clone();
        let removed: Vec<usize> = self
            .preorder()
            .into_iter()
            .filter(|&i| i != 0 && line.contains(&self.nodes[i].label))
            .collect();
        for i in removed {
            let p = self.nodes[i].parent.expect("non-root");
            let r = self.nodes[i].label.rank() as usize - 1;
            out.nodes[p].children[r] = None;
        }
        out.compact();
        out
    }

    /// Grafts `parts` into the holes of a pruned tree at their keys.
    pub fn recompose(&self, parts: &BTreeMap<Label, BranchingTree>) -> Result<BranchingTree> {
        let keys: Vec<Label> = parts.keys().cloned().collect();
        StoppingLine::new(keys)?;
        let tau = self.birth_times();
        let alpha = self.birth_ages();
        let mut out = self.clone();
        for (x, part) in parts {
            if x.is_root() {
                return Err(Error::OverlappingKeys(x.clone()));
            }
            let m = self.find(&x.mother()).ok_or_else(|| Error::LabelNotInTree(x.mother()))?;
            let r = x.rank() as usize - 1;
            match self.nodes[m].children.get(r) {
                None => return Err(Error::LabelNotInTree(x.clone())),
                Some(Some(_)) => return Err(Error::OverlappingKeys(x.clone())),
                Some(None) => {}
            }
            if part.mode != self.mode {
                return Err(Error::ModeMismatch);
            }
            let lm = self.nodes[m].length.expect("stub with children");
            let expected_tau = tau[m] + lm;
            if part.tau.to_bits() != expected_tau.to_bits() {
                return Err(Error::IncompatibleBirthTime { label: x.clone(), expected: expected_tau, got: part.tau });
            }
            let expected_alpha = match self.mode {
                AgeMode::Asymmetric if x.rank() == 1 => alpha[m] + lm,
                _ => 0.0,
            };
            if part.alpha.to_bits() != expected_alpha.to_bits() {
                return Err(Error::IncompatibleAge { label: x.clone(), expected: expected_alpha, got: part.alpha });
            }
            let offset = out.nodes.len();
            for (j, n) in part.nodes.iter().enumerate() {
                out.nodes.push(Node {
                    label: x.concat(&n.label),
                    length: n.length,
                    children: n.children.iter().map(|c| c.map(|c| c + offset)).collect(),
                    parent: if j == 0 { Some(m) } else { n.parent.map(|p| p + offset) },
                });
            }
            out.nodes[m].children[r] = Some(offset);
        }
        out.compact();
        Ok(out)
    }

    /// Drops unreachable nodes and renumbers the arena in preorder.
    fn compact(&mut self) {
        let order = self.preorder();
        let mut new_index = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                Node {
                    label: n.label.clone(),
                    length: n.length,
                    children: n.children.iter().map(|c| c.map(|c| new_index[c])).collect(),
                    parent: n.parent.map(|p| new_index[p]),
                }
            })
            .collect();
        self.nodes = nodes;
    }

    /// Label set of the tree.
    pub fn labels(&self) -> HashSet<Label> {
        self.nodes.iter().map(|n| n.label.clone()).collect()
    }

    /// Depth-first leaf indices (nodes without present children).
    pub fn leaves(&self) -> Vec<usize> {
        self.preorder().into_iter().filter(|&i| self.children(i).next().is_none()).collect()
    }
}

impl PartialEq for BranchingTree {
    /// Node-for-node equality: labels, exact lengths, offspring counts and holes.
    fn eq(&self, other: &Self) -> bool {
        fn canon(t: &BranchingTree) -> BTreeMap<Label, (Option<u64>, Vec<bool>)> {
            t.nodes
                .iter()
                .map(|n| (n.label.clone(), (n.length.map(f64::to_bits), n.children.iter().map(Option::is_some).collect())))
                .collect()
        }
        self.tau.to_bits() == other.tau.to_bits()
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.mode == other.mode
            && self.horizon.map(f64::to_bits) == other.horizon.map(f64::to_bits)
            && canon(self) == canon(other)
    }
}

/// Unmarked ordered tree shape (a finite Neveu tree).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeveuTree {
    pub children: Vec<NeveuTree>,
}

impl NeveuTree {
    pub fn leaf() -> Self {
        NeveuTree { children: vec![] }
    }

    pub fn node(children: Vec<NeveuTree>) -> Self {
        NeveuTree { children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(NeveuTree::leaf_count).sum()
        }
    }

    pub fn internal_count(&self) -> usize {
        if self.is_leaf() {
            0
        } else {
            1 + self.children.iter().map(NeveuTree::internal_count).sum::<usize>()
        }
    }

    /// Shape of a tree, ignoring holes and stubs' marks.
    pub fn of_tree(t: &BranchingTree) -> Self {
        fn go(t: &BranchingTree, i: usize) -> NeveuTree {
            NeveuTree { children: t.children(i).map(|c| go(t, c)).collect() }
        }
        go(t, 0)
    }

    /// Every ordered shape with `n` leaves and no unary nodes.
    pub fn all_with_leaves(n: usize) -> Vec<NeveuTree> {
        if n == 0 {
            return vec![];
        }
        if n == 1 {
            return vec![NeveuTree::leaf()];
        }
        let mut out = Vec::new();
        // ordered compositions of n into k >= 2 positive parts
        fn compositions(n: usize, min_parts: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if n == 0 {
                if acc.len() >= min_parts {
                    out.push(acc.clone());
                }
                return;
            }
            for first in 1..=n {
                acc.push(first);
                compositions(n - first, min_parts, acc, out);
                acc.pop();
            }
        }
        let mut comps = Vec::new();
        compositions(n, 2, &mut Vec::new(), &mut comps);
        for comp in comps {
            let mut partial: Vec<Vec<NeveuTree>> = vec![vec![]];
            for &part in &comp {
                let options = NeveuTree::all_with_leaves(part);
                partial = partial
                    .into_iter()
                    .flat_map(|p| {
                        options.iter().map(move |o| {
                            let mut q = p.clone();
                            q.push(o.clone());
                            q
                        })
                    })
                    .collect();
            }
            out.extend(partial.into_iter().map(NeveuTree::node));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Label {
        s.parse().unwrap()
    }

    fn leaf(len: f64) -> Option<NodeJson> {
        Some(NodeJson { length: Some(len), children: vec![] })
    }

    fn inner(len: f64, children: Vec<Option<NodeJson>>) -> Option<NodeJson> {
        Some(NodeJson { length: Some(len), children })
    }

    /// Shape of the running example: root with children 1, 2, 3;
    /// 1 has children 11, 12, 13 (13 has 131); 12 has 121 (121 has 1211).
    pub(crate) fn figure_tree(mode: AgeMode) -> BranchingTree {
        let root = inner(
            1.0,
            vec![
                inner(
                    0.5,
                    vec![
                        leaf(2.0),
                        inner(0.7, vec![inner(0.3, vec![leaf(1.1)])]),
                        inner(0.4, vec![leaf(0.9)]),
                    ],
                ),
                leaf(1.5),
                leaf(0.25),
            ],
        )
        .unwrap();
        BranchingTree::from_nested(0.0, 0.0, mode, &root)
    }

    #[test]
    fn validate_examples() {
        let single = BranchingTree::single(0.0, 0.0, AgeMode::Symmetric, 1.0);
        assert!(validate_tree(&single).is_valid());

        let mut map = LabelledNodes::new();
        map.insert(Label::root(), NodeRecord { length: Some(1.0), children: 2 });
        map.insert(l("2"), NodeRecord { length: Some(1.0), children: 0 });
        let rep = validate_labelled(&map);
        assert!(rep.violations.contains(&Violation::ChildGap { parent: Label::root(), rank: 1 }));

        let zero = BranchingTree::single(0.0, 0.0, AgeMode::Symmetric, 0.0);
        assert_eq!(validate_tree(&zero).violations, vec![Violation::NonPositiveLength(Label::root())]);

        let mut orphan = LabelledNodes::new();
        orphan.insert(Label::root(), NodeRecord { length: Some(1.0), children: 0 });
        orphan.insert(l("11"), NodeRecord { length: Some(1.0), children: 0 });
        let rep = validate_labelled(&orphan);
        assert!(rep.violations.contains(&Violation::MissingMother(l("11"))));
    }

    #[test]
    fn labelled_roundtrip() {
        let t = figure_tree(AgeMode::Asymmetric);
        let back = BranchingTree::try_from_labelled(t.tau, t.alpha, t.mode, &t.to_labelled()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn subtree_examples() {
        let t = figure_tree(AgeMode::Asymmetric);
        assert_eq!(t.subtree(&Label::root()).unwrap(), t);
        let s1 = t.subtree(&l("1")).unwrap();
        assert_eq!(s1.alpha, 1.0);
        assert_eq!(s1.tau, 1.0);
        let s2 = t.subtree(&l("2")).unwrap();
        assert_eq!(s2.alpha, 0.0);
        let s12 = t.subtree(&l("12")).unwrap();
        assert_eq!(s12.alpha, 0.0);
        let s121 = t.subtree(&l("121")).unwrap();
        // rank-1 child of 12 inherits 12's age + length
        assert_eq!(s121.alpha, 0.7);
        assert!(matches!(t.subtree(&l("4")), Err(Error::LabelNotInTree(_))));
    }

    #[test]
    fn prune_examples() {
        let t = figure_tree(AgeMode::Asymmetric);
        assert_eq!(t.prune(&StoppingLine::empty()), t);
        let single = BranchingTree::single(0.0, 0.0, AgeMode::Symmetric, 1.0);
        assert_eq!(single.prune(&StoppingLine::new([l("1")]).unwrap()), single);

        let line = StoppingLine::new([l("2"), l("12"), l("131")]).unwrap();
        let k = t.prune(&line);
        let labels = k.labels();
        let expected: HashSet<Label> = ["0", "1", "11", "13", "3"].iter().map(|s| l(s)).collect();
        assert_eq!(labels, expected);
        // holes keep their ranks
        assert_eq!(k.node(k.find(&l("1")).unwrap()).offspring(), 3);
        assert!(!validate_tree(&k).is_valid());
    }

    #[test]
    fn recompose_roundtrip_and_errors() {
        let t = figure_tree(AgeMode::Asymmetric);
        let line = StoppingLine::new([l("2"), l("12"), l("131")]).unwrap();
        let k = t.prune(&line);
        let parts: BTreeMap<Label, BranchingTree> =
            line.iter().map(|x| (x.clone(), t.subtree(x).unwrap())).collect();
        assert_eq!(k.recompose(&parts).unwrap(), t);
        assert_eq!(t.recompose(&BTreeMap::new()).unwrap(), t);

        let mut bad = parts.clone();
        let mut p = bad[&l("2")].clone();
        p.tau += 0.1;
        bad.insert(l("2"), p);
        assert!(matches!(k.recompose(&bad), Err(Error::IncompatibleBirthTime { .. })));

        let mut bad_age = parts.clone();
        let mut p = bad_age[&l("2")].clone();
        p.alpha = 0.5;
        bad_age.insert(l("2"), p);
        assert!(matches!(k.recompose(&bad_age), Err(Error::IncompatibleAge { .. })));

        // grafting onto an occupied rank
        let mut clash = BTreeMap::new();
        clash.insert(l("3"), t.subtree(&l("3")).unwrap());
        assert!(matches!(k.recompose(&clash), Err(Error::OverlappingKeys(_))));
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut t = figure_tree(AgeMode::Asymmetric);
        t.tau = 0.1 + 0.2;
        let s = t.to_json_string();
        assert_eq!(BranchingTree::from_json_str(&s).unwrap(), t);
        assert!(s.contains("\"mode\":\"asymmetric\""));
    }

    #[test]
    fn shapes_enumeration() {
        assert_eq!(NeveuTree::all_with_leaves(1).len(), 1);
        assert_eq!(NeveuTree::all_with_leaves(2).len(), 1);
        // trifurcation, ((..),.), (.,(..))
        assert_eq!(NeveuTree::all_with_leaves(3).len(), 3);
        for s in NeveuTree::all_with_leaves(4) {
            assert_eq!(s.leaf_count(), 4);
        }
    }
}
