//! Newick export of branching trees and a small parser for reading it back.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::tree::BranchingTree;

/// Writes `t` as Newick with branch lengths. Leaves are named `x1, x2, …`
/// in preorder unless `names` supplies a name for their label.
pub fn to_newick(t: &BranchingTree, names: Option<&BTreeMap<Label, String>>) -> String {
    let mut out = String::new();
    let mut leaf_index = 0usize;
    write_node(t, 0, names, &mut leaf_index, &mut out);
    out.push(';');
    out
}

fn write_node(t: &BranchingTree, i: usize, names: Option<&BTreeMap<Label, String>>, leaf_index: &mut usize, out: &mut String) {
    let node = t.node(i);
    let kids: Vec<usize> = t.children(i).collect();
    if kids.is_empty() {
        *leaf_index += 1;
        match names.and_then(|m| m.get(&node.label)) {
            Some(name) => out.push_str(name),
            None => write!(out, "x{leaf_index}").expect("writing to a String"),
        }
    } else {
        out.push('(');
        for (k, &c) in kids.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write_node(t, c, names, leaf_index, out);
        }
        out.push(')');
    }
    if let Some(l) = node.length {
        write!(out, ":{l}").expect("writing to a String");
    }
}

/// Parsed Newick node.
#[derive(Clone, Debug, PartialEq)]
pub struct NewickNode {
    pub name: Option<String>,
    pub length: Option<f64>,
    pub children: Vec<NewickNode>,
}

impl NewickNode {
    pub fn leaf_count(&self) -> usize {
        if self.children.is_empty() {
            1
        } else {
            self.children.iter().map(NewickNode::leaf_count).sum()
        }
    }

    /// Longest root-to-leaf sum of lengths, counting missing lengths as 0.
    pub fn height(&self) -> f64 {
        self.length.unwrap_or(0.0) + self.children.iter().map(NewickNode::height).fold(0.0, f64::max)
    }
}

/// Parses one Newick tree terminated by `;`.
pub fn parse_newick(s: &str) -> Result<NewickNode> {
    let mut p = Parser { b: s.trim().as_bytes(), pos: 0 };
    let node = p.node()?;
    p.skip_ws();
    if p.peek() != Some(b';') {
        return Err(p.err("expected ';'"));
    }
    p.pos += 1;
    p.skip_ws();
    if p.pos != p.b.len() {
        return Err(p.err("trailing input"));
    }
    Ok(node)
}

struct Parser<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.b.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("newick: {msg} at byte {}", self.pos))
    }

    fn node(&mut self) -> Result<NewickNode> {
        self.skip_ws();
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.node()?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
        }
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| !b"(),:;".contains(&c) && !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let name = (self.pos > start).then(|| String::from_utf8_lossy(&self.b[start..self.pos]).into_owned());
        self.skip_ws();
        let mut length = None;
        if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit() || b"+-.eE".contains(&c)) {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.b[start..self.pos]).expect("ascii");
            length = Some(text.parse::<f64>().map_err(|_| self.err("bad branch length"))?);
        }
        if children.is_empty() && name.is_none() && length.is_none() {
            return Err(self.err("empty node"));
        }
        Ok(NewickNode { name, length, children })
    }
}
