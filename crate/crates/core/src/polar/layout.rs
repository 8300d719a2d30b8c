use super::construct::ReliabilityOrder;
use crate::error::{Error, Result};

/// One kernel application site on the Plotkin tree.
///
/// Level 1 holds the leaf kernels (acting on single positions); the root
/// sits at level `depth`. A node at level `d` covers `ell * child_len`
/// consecutive positions starting at `start`; its `j`-th child covers
/// `start + j * child_len .. start + (j + 1) * child_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: usize,
    pub level: usize,
    pub index: usize,
    pub ell: usize,
    pub child_len: usize,
    pub start: usize,
}

#[allow(clippy::len_without_is_empty)]
impl NodeSpec {
    pub fn len(&self) -> usize {
        self.ell * self.child_len
    }

    pub fn child_range(&self, j: usize) -> std::ops::Range<usize> {
        let s = self.start + j * self.child_len;
        s..s + self.child_len
    }

    pub fn is_leaf(&self) -> bool {
        self.level == 1
    }
}

/// Static shape of an `(n, k)` code built from `ell x ell` kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeLayout {
    n: usize,
    k: usize,
    ell: usize,
    levels: Vec<usize>,
    frozen: Vec<bool>,
    info: Vec<usize>,
    info_prefix: Vec<usize>,
    nodes: Vec<NodeSpec>,
    level_offsets: Vec<usize>,
}

impl CodeLayout {
    /// Builds a layout from an explicit information set.
    pub fn new(n: usize, ell: usize, info: &[usize]) -> Result<Self> {
        if ell < 2 || !ell.is_power_of_two() {
            return Err(Error::Unsupported(format!(
                "kernel size {ell} (must be a power of two >= 2)"
            )));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Unsupported(format!(
                "block length {n} (must be a power of two >= 2)"
            )));
        }
        let mut levels = Vec::new();
        let mut rest = n;
        while rest.is_multiple_of(ell) {
            levels.push(ell);
            rest /= ell;
        }
        if rest > 1 {
            // root kernel of size n / ell^m
            levels.push(rest);
        }

        let mut frozen = vec![true; n];
        for &i in info {
            if i >= n {
                return Err(Error::Input(format!("information index {i} >= n = {n}")));
            }
            if !frozen[i] {
                return Err(Error::Input(format!("duplicate information index {i}")));
            }
            frozen[i] = false;
        }
        let k = info.len();
        if k == 0 {
            return Err(Error::Input("message length k must be positive".into()));
        }
        let info: Vec<usize> = (0..n).filter(|&i| !frozen[i]).collect();
        let mut info_prefix = vec![0; n + 1];
        for i in 0..n {
            info_prefix[i + 1] = info_prefix[i] + usize::from(!frozen[i]);
        }

        let mut nodes = Vec::new();
        let mut level_offsets = Vec::new();
        let mut child_len = 1;
        for (d, &l) in levels.iter().enumerate() {
            level_offsets.push(nodes.len());
            let len = l * child_len;
            for b in 0..n / len {
                nodes.push(NodeSpec {
                    id: nodes.len(),
                    level: d + 1,
                    index: b,
                    ell: l,
                    child_len,
                    start: b * len,
                });
            }
            child_len = len;
        }
        Ok(Self {
            n,
            k,
            ell,
            levels,
            frozen,
            info,
            info_prefix,
            nodes,
            level_offsets,
        })
    }

    /// Freezes the first `n - k` entries of a reliability order.
    pub fn from_order(n: usize, k: usize, ell: usize, order: &ReliabilityOrder) -> Result<Self> {
        if order.len() != n {
            return Err(Error::Input(format!(
                "reliability order has length {}, expected {n}",
                order.len()
            )));
        }
        if k == 0 || k > n {
            return Err(Error::Input(format!("need 0 < k <= n, got k = {k}, n = {n}")));
        }
        Self::new(n, ell, &order.info_set(k))
    }

    /// Bhattacharyya construction at the default design point.
    pub fn polar(n: usize, k: usize, ell: usize) -> Result<Self> {
        let order = super::construct::construct_reliability(n, ell, super::construct::DEFAULT_DESIGN_ERASURE)?;
        Self::from_order(n, k, ell, &order)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Kernel size per level, leaves first.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn root_size(&self) -> usize {
        *self.levels.last().unwrap()
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    /// Sorted information positions.
    pub fn info_set(&self) -> &[usize] {
        &self.info
    }

    pub fn frozen_set(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.frozen[i]).collect()
    }

    pub fn info_count(&self, range: std::ops::Range<usize>) -> usize {
        self.info_prefix[range.end] - self.info_prefix[range.start]
    }

    /// Index of position `pos` within the information set, if any.
    pub fn info_index(&self, pos: usize) -> Option<usize> {
        (!self.frozen[pos]).then(|| self.info_prefix[pos])
    }

    /// All nodes, leaf level first; a node's `id` is its index here.
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn level_nodes(&self, level: usize) -> &[NodeSpec] {
        let lo = self.level_offsets[level - 1];
        let hi = self.level_offsets.get(level).copied().unwrap_or(self.nodes.len());
        &self.nodes[lo..hi]
    }

    pub fn node(&self, level: usize, index: usize) -> &NodeSpec {
        &self.nodes[self.level_offsets[level - 1] + index]
    }

    pub fn root(&self) -> &NodeSpec {
        self.nodes.last().unwrap()
    }

    /// Child `j` of an internal node.
    pub fn child(&self, node: &NodeSpec, j: usize) -> &NodeSpec {
        debug_assert!(node.level > 1);
        self.node(node.level - 1, node.index * node.ell + j)
    }

    /// Number of children of `node` whose block holds at least one
    /// information position.
    pub fn nonfrozen_inputs(&self, node: &NodeSpec) -> usize {
        (0..node.ell)
            .filter(|&j| self.info_count(node.child_range(j)) > 0)
            .count()
    }

    pub fn child_has_info(&self, node: &NodeSpec, j: usize) -> bool {
        self.info_count(node.child_range(j)) > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_shape_16_4() {
        let l = CodeLayout::new(16, 4, &[7, 9, 10, 11, 12, 13, 14, 15]).unwrap();
        assert_eq!(l.levels(), &[4, 4]);
        assert_eq!(l.nodes().len(), 5);
        assert_eq!(l.level_nodes(1).len(), 4);
        let root = l.root();
        assert_eq!((root.level, root.child_len, root.len()), (2, 4, 16));
        let counts: Vec<usize> = l.level_nodes(1).iter().map(|n| l.nonfrozen_inputs(n)).collect();
        assert_eq!(counts, vec![0, 1, 3, 4]);
        assert_eq!(l.nonfrozen_inputs(root), 3);
        assert_eq!(l.child(root, 2).start, 8);
        assert_eq!(l.info_index(9), Some(1));
        assert_eq!(l.info_index(8), None);
    }

    #[test]
    fn mixed_root_kernel() {
        // 32 = 2 * 4^2: two levels of size 4, root of size 2
        let l = CodeLayout::new(32, 4, &[31]).unwrap();
        assert_eq!(l.levels(), &[4, 4, 2]);
        // node count per level: n / s_d
        let per_level: Vec<usize> = (1..=3).map(|d| l.level_nodes(d).len()).collect();
        assert_eq!(per_level, vec![8, 2, 1]);
        assert_eq!(l.root().len(), 32);
    }

    #[test]
    fn invalid_layouts() {
        assert!(CodeLayout::new(12, 4, &[0]).is_err());
        assert!(CodeLayout::new(16, 3, &[0]).is_err());
        assert!(CodeLayout::new(16, 4, &[]).is_err());
        assert!(CodeLayout::new(16, 4, &[16]).is_err());
        assert!(CodeLayout::new(16, 4, &[3, 3]).is_err());
    }

    #[test]
    fn frozen_and_info_partition() {
        let l = CodeLayout::new(8, 2, &[3, 5, 6, 7]).unwrap();
        let mut all = l.frozen_set();
        all.extend_from_slice(l.info_set());
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        assert_eq!(l.k(), 4);
    }
}
