//! Bitmask sets over hidden-node indices.
//!
//! A [`NodeSet`] is one side of a bipartition of the hidden layer. The search
//! works on the relay side; its complement within the layer is the side that
//! gets conditioned on. The same type doubles as a knockout mask.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest hidden layer a [`NodeSet`] can describe.
pub const MAX_NODES: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeSet(u32);

impl NodeSet {
    pub const EMPTY: NodeSet = NodeSet(0);

    /// All nodes `0..n`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_NODES, "at most {MAX_NODES} nodes are supported");
        if n == MAX_NODES {
            NodeSet(u32::MAX)
        } else {
            NodeSet((1u32 << n) - 1)
        }
    }

    pub fn from_bits(bits: u32) -> Self {
        NodeSet(bits)
    }

    pub fn from_nodes<I: IntoIterator<Item = usize>>(nodes: I) -> Self {
        let mut set = NodeSet::EMPTY;
        for n in nodes {
            set.insert(n);
        }
        set
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, node: usize) -> bool {
        node < MAX_NODES && self.0 & (1 << node) != 0
    }

    pub fn insert(&mut self, node: usize) {
        assert!(node < MAX_NODES, "node index {node} out of range");
        self.0 |= 1 << node;
    }

    pub fn remove(&mut self, node: usize) {
        if node < MAX_NODES {
            self.0 &= !(1 << node);
        }
    }

    pub fn with(mut self, node: usize) -> Self {
        self.insert(node);
        self
    }

    pub fn without(mut self, node: usize) -> Self {
        self.remove(node);
        self
    }

    pub fn union(self, other: NodeSet) -> Self {
        NodeSet(self.0 | other.0)
    }

    pub fn intersection(self, other: NodeSet) -> Self {
        NodeSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: NodeSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Complement within a layer of `n` nodes.
    pub fn complement(self, n: usize) -> Self {
        NodeSet(!self.0 & NodeSet::full(n).0)
    }

    /// Nodes in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let n = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(n)
            }
        })
    }

    /// Fails if any member is outside a layer of `n` nodes.
    pub fn check_within(self, n: usize) -> Result<()> {
        if self.is_subset(NodeSet::full(n)) {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "node set {self} references nodes outside a layer of {n}"
            )))
        }
    }
}

impl fmt::Display for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, n) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeSet{self}")
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeSet::from_nodes(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_complement() {
        let full = NodeSet::full(5);
        assert_eq!(full.len(), 5);
        let s = NodeSet::from_nodes([1, 3]);
        assert_eq!(s.complement(5), NodeSet::from_nodes([0, 2, 4]));
        assert_eq!(s.complement(5).union(s), full);
        assert_eq!(NodeSet::full(32).len(), 32);
    }

    #[test]
    fn iterates_ascending() {
        let s = NodeSet::from_nodes([7, 0, 3]);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 3, 7]);
        assert_eq!(s.to_string(), "{0,3,7}");
    }

    #[test]
    fn check_within_rejects_out_of_range() {
        assert!(NodeSet::from_nodes([4]).check_within(4).is_err());
        assert!(NodeSet::from_nodes([3]).check_within(4).is_ok());
    }
}
