//! Ulam-Harris labels and stopping lines.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ancestry label: the empty path is the root, `x1..xn` is the `xn`-th
/// child of `x1..x(n-1)`.
///
/// The derived ordering is lexicographic with numeric entries, which is
/// the depth-first preorder of a tree visited by increasing rank.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Label(Vec<u32>);

impl Label {
    pub fn root() -> Self {
        Label(Vec::new())
    }

    pub fn new(path: Vec<u32>) -> Result<Self> {
        if path.contains(&0) {
            return Err(Error::InvalidLabel(format!("{path:?} contains a zero entry")));
        }
        Ok(Label(path))
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Mother label; the root is its own mother by convention.
    pub fn mother(&self) -> Label {
        match self.0.split_last() {
            Some((_, rest)) => Label(rest.to_vec()),
            None => Label::root(),
        }
    }

    /// Birth order among siblings, 0 for the root.
    pub fn rank(&self) -> u32 {
        self.0.last().copied().unwrap_or(0)
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    /// `(mother, rank, generation)`.
    pub fn decompose(&self) -> (Label, u32, usize) {
        (self.mother(), self.rank(), self.generation())
    }

    pub fn child(&self, k: u32) -> Label {
        assert!(k >= 1, "child ranks start at 1");
        let mut p = self.0.clone();
        p.push(k);
        Label(p)
    }

    pub fn concat(&self, other: &Label) -> Label {
        let mut p = self.0.clone();
        p.extend_from_slice(&other.0);
        Label(p)
    }

    /// Ancestor-or-self relation `self ⪯ other`.
    pub fn is_ancestor_of(&self, other: &Label) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn comparable(&self, other: &Label) -> bool {
        self.is_ancestor_of(other) || other.is_ancestor_of(self)
    }

    /// `y` such that `prefix · y == self`.
    pub fn strip_prefix(&self, prefix: &Label) -> Option<Label> {
        self.0.strip_prefix(prefix.0.as_slice()).map(|p| Label(p.to_vec()))
    }
}

impl TryFrom<Vec<u32>> for Label {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Label::new(v)
    }
}

impl From<Label> for Vec<u32> {
    fn from(l: Label) -> Self {
        l.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        if self.0.iter().all(|&k| k < 10) {
            for k in &self.0 {
                write!(f, "{k}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
            write!(f, "{}", parts.join("."))
        }
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Label({self})")
    }
}

/// Parses `"0"` or `""` as the root, `"121"` digit-wise, and `"1.12.3"`
/// dot-separated for ranks above 9.
impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "0" {
            return Ok(Label::root());
        }
        let path: Vec<u32> = if s.contains('.') {
            s.split('.')
                .map(|p| p.parse::<u32>().map_err(|e| Error::InvalidLabel(format!("{s}: {e}"))))
                .collect::<Result<_>>()?
        } else {
            s.chars()
                .map(|c| c.to_digit(10).ok_or_else(|| Error::InvalidLabel(s.to_string())))
                .collect::<Result<_>>()?
        };
        Label::new(path)
    }
}

/// A set of pairwise incomparable labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StoppingLine(BTreeSet<Label>);

impl StoppingLine {
    pub fn new(members: impl IntoIterator<Item = Label>) -> Result<Self> {
        let set: BTreeSet<Label> = members.into_iter().collect();
        // lexicographic order places any ancestor directly before some descendant
        let v: Vec<&Label> = set.iter().collect();
        for w in v.windows(2) {
            if w[0].is_ancestor_of(w[1]) {
                return Err(Error::OverlappingKeys(w[1].clone()));
            }
        }
        Ok(StoppingLine(set))
    }

    pub fn empty() -> Self {
        StoppingLine(BTreeSet::new())
    }

    pub fn contains(&self, x: &Label) -> bool {
        self.0.contains(x)
    }

    /// True if some member is an ancestor-or-self of `x`.
    pub fn covers(&self, x: &Label) -> bool {
        (0..=x.generation()).any(|g| self.0.contains(&Label(x.0[..g].to_vec())))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self ⪯ other`: every member of `other` has an ancestor-or-self in `self`.
    pub fn precedes(&self, other: &StoppingLine) -> bool {
        other.iter().all(|y| self.covers(y))
    }
}

/// Relative rank `|{y ∈ I : y ≤ x}|` of `x` within an ordered set of labels.
pub fn relative_rank(members: &[Label], x: &Label) -> Result<usize> {
    if !members.contains(x) {
        return Err(Error::NotInLine(x.clone()));
    }
    Ok(members.iter().filter(|y| *y <= x).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Label {
        s.parse().unwrap()
    }

    #[test]
    fn decompose_examples() {
        assert_eq!(l("121").decompose(), (l("12"), 1, 3));
        assert_eq!(Label::root().decompose(), (Label::root(), 0, 0));
        assert_eq!(l("7").decompose(), (Label::root(), 7, 1));
    }

    #[test]
    fn display_roundtrip() {
        for s in ["0", "1", "121", "1.12.3"] {
            assert_eq!(l(s).to_string(), s);
        }
        assert_eq!(l("").to_string(), "0");
        assert!("1a".parse::<Label>().is_err());
        assert!(Label::new(vec![1, 0]).is_err());
    }

    #[test]
    fn relative_rank_examples() {
        let i = [l("12"), l("15"), l("17")];
        assert_eq!(relative_rank(&i, &l("15")).unwrap(), 2);
        assert_eq!(relative_rank(&[l("3")], &l("3")).unwrap(), 1);
        assert_eq!(relative_rank(&[l("131"), l("133")], &l("133")).unwrap(), 2);
        assert!(matches!(relative_rank(&i, &l("13")), Err(Error::NotInLine(_))));
    }

    #[test]
    fn stopping_line_rejects_comparable_members() {
        assert!(StoppingLine::new([l("1"), l("12")]).is_err());
        let line = StoppingLine::new([l("2"), l("12"), l("131")]).unwrap();
        assert!(line.covers(&l("1311")));
        assert!(!line.covers(&l("13")));
        let coarse = StoppingLine::new([l("1"), l("2")]).unwrap();
        assert!(coarse.precedes(&line));
        assert!(!line.precedes(&coarse));
    }

    #[test]
    fn ancestry() {
        assert!(Label::root().is_ancestor_of(&l("12")));
        assert!(l("12").is_ancestor_of(&l("12")));
        assert!(!l("12").is_ancestor_of(&l("1")));
        assert_eq!(l("1213").strip_prefix(&l("12")), Some(l("13")));
        assert_eq!(l("12").concat(&l("31")), l("1231"));
    }
}
