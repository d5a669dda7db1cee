//! Point sets and complete binary partition trees built by recursive bisection.

use std::io::Read;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points in 1, 2 or 3 dimensions, stored flat (point-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Precondition(format!("point dimension {dim} not in 1..=3")));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::Precondition(format!(
                "{} coordinates do not form a nonempty set of {dim}-d points",
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Precondition(format!(
                "non-finite coordinate in point {}",
                bad / dim
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Result<Self> {
        Self::new(D, points.iter().flatten().copied().collect())
    }

    /// `n` equispaced points on `[0, 1)`.
    pub fn equispaced_line(n: usize) -> Result<Self> {
        Self::new(1, (0..n).map(|i| i as f64 / n as f64).collect())
    }

    /// Reads one point per line, coordinates separated by commas or
    /// whitespace. Blank lines and lines starting with `#` are skipped.
    pub fn read_text<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut dim = None;
        let mut coords = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|e| {
                        Error::Precondition(format!("line {}: `{t}`: {e}", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Precondition(format!(
                        "line {}: expected {d} coordinates, found {}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            coords.extend(row);
        }
        Self::new(dim.unwrap_or(0), coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Points reordered so that entry `i` of the result is `self.point(order[i])`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let coords = order.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        Self {
            dim: self.dim,
            coords,
        }
    }
}

/// Node `(level, pos)` of a partition tree; the root is `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub level: usize,
    pub pos: usize,
}

impl NodeRef {
    pub const ROOT: NodeRef = NodeRef { level: 0, pos: 0 };

    pub fn new(level: usize, pos: usize) -> Self {
        Self { level, pos }
    }
}

/// Complete binary tree over a permuted index set.
///
/// `order[i]` is the original index of the point at tree position `i`;
/// `position` is its inverse. Every node owns a contiguous range of tree
/// positions, and the two children of a node split its range in two.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionTree {
    levels: usize,
    order: Vec<usize>,
    position: Vec<usize>,
    /// `bounds[l]` has `2^l + 1` entries; node `(l, j)` covers `bounds[l][j]..bounds[l][j+1]`.
    bounds: Vec<Vec<usize>>,
}

/// Largest `L` such that `n >= n0 * 2^L`, so leaves hold between `n0` and
/// about `2 n0` points.
pub fn default_levels(n: usize, n0: usize) -> usize {
    let n0 = n0.max(1);
    let mut levels = 0;
    while n >= n0 << (levels + 1) {
        levels += 1;
    }
    levels
}

impl PartitionTree {
    /// Bisects `points` recursively into `levels` levels.
    ///
    /// Each node is sorted (stably) along the longest side of its bounding
    /// box and split with the left child taking `floor(size / 2)` points.
    pub fn build(points: &PointSet, levels: usize) -> Result<Self> {
        let n = points.len();
        if levels >= usize::BITS as usize || (1usize << levels) > n {
            return Err(Error::Structure(format!(
                "cannot split {n} points into 2^{levels} nonempty leaves"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut bounds = vec![vec![0, n]];
        for l in 0..levels {
            let prev = &bounds[l];
            let mut next = Vec::with_capacity(2 * prev.len() - 1);
            next.push(0);
            for j in 0..prev.len() - 1 {
                let (lo, hi) = (prev[j], prev[j + 1]);
                let slice = &mut order[lo..hi];
                let axis = longest_axis(points, slice);
                slice.sort_by(|&a, &b| points.point(a)[axis].total_cmp(&points.point(b)[axis]));
                next.push(lo + (hi - lo) / 2);
                next.push(hi);
            }
            bounds.push(next);
        }
        Ok(Self::from_parts(levels, order, bounds))
    }

    /// Tree with identity ordering and balanced ranges, for index sets that
    /// carry no geometry.
    pub fn balanced(n: usize, levels: usize) -> Result<Self> {
        if levels >= usize::BITS as usize || (1usize << levels) > n {
            return Err(Error::Structure(format!(
                "cannot split {n} indices into 2^{levels} nonempty leaves"
            )));
        }
        let mut bounds = vec![vec![0, n]];
        for l in 0..levels {
            let prev = &bounds[l];
            let mut next = vec![0];
            for j in 0..prev.len() - 1 {
                next.push(prev[j] + (prev[j + 1] - prev[j]) / 2);
                next.push(prev[j + 1]);
            }
            bounds.push(next);
        }
        Ok(Self::from_parts(levels, (0..n).collect(), bounds))
    }

    fn from_parts(levels: usize, order: Vec<usize>, bounds: Vec<Vec<usize>>) -> Self {
        let mut position = vec![0; order.len()];
        for (i, &o) in order.iter().enumerate() {
            position[o] = i;
        }
        Self {
            levels,
            order,
            position,
            bounds,
        }
    }

    /// Rebuilds a tree from a stored ordering and leaf boundaries, checking
    /// every structural invariant.
    pub fn from_order_and_leaves(order: Vec<usize>, leaf_bounds: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let leaves = leaf_bounds.len().saturating_sub(1);
        if leaves == 0 || !leaves.is_power_of_two() {
            return Err(Error::Structure(format!(
                "{} leaf boundaries do not describe a complete tree",
                leaf_bounds.len()
            )));
        }
        if leaf_bounds[0] != 0 || leaf_bounds[leaves] != n {
            return Err(Error::Structure("leaf ranges do not cover the index set".into()));
        }
        if leaf_bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Structure("empty or decreasing leaf range".into()));
        }
        let mut seen = vec![false; n];
        for &o in &order {
            if o >= n || std::mem::replace(&mut seen[o], true) {
                return Err(Error::Structure("tree ordering is not a permutation".into()));
            }
        }
        let levels = leaves.trailing_zeros() as usize;
        let mut bounds = vec![leaf_bounds];
        for _ in 0..levels {
            let child = bounds.last().expect("nonempty");
            let parent: Vec<usize> = child.iter().step_by(2).copied().collect();
            bounds.push(parent);
        }
        bounds.reverse();
        Ok(Self::from_parts(levels, order, bounds))
    }

    /// Number of levels `L`; leaves live at level `L`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of indexed points.
    pub fn size(&self) -> usize {
        self.order.len()
    }

    /// Tree position → original index.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Original index → tree position.
    pub fn position(&self) -> &[usize] {
        &self.position
    }

    pub fn leaf_bounds(&self) -> &[usize] {
        &self.bounds[self.levels]
    }

    fn check(&self, node: NodeRef) -> Result<()> {
        if node.level > self.levels || node.pos >= 1usize << node.level {
            return Err(Error::Structure(format!(
                "node ({}, {}) outside a tree with {} levels",
                node.level, node.pos, self.levels
            )));
        }
        Ok(())
    }

    /// Tree-ordered index range of a node. Panics on an invalid node.
    pub fn range(&self, level: usize, pos: usize) -> Range<usize> {
        let b = &self.bounds[level];
        b[pos]..b[pos + 1]
    }

    pub fn node_range(&self, node: NodeRef) -> Result<Range<usize>> {
        self.check(node)?;
        Ok(self.range(node.level, node.pos))
    }

    /// Original indices owned by a node, in tree order.
    pub fn indices(&self, level: usize, pos: usize) -> &[usize] {
        &self.order[self.range(level, pos)]
    }

    pub fn children(&self, node: NodeRef) -> Result<(NodeRef, NodeRef)> {
        self.check(node)?;
        if node.level == self.levels {
            return Err(Error::Structure(format!(
                "leaf ({}, {}) has no children",
                node.level, node.pos
            )));
        }
        Ok((
            NodeRef::new(node.level + 1, 2 * node.pos),
            NodeRef::new(node.level + 1, 2 * node.pos + 1),
        ))
    }

    pub fn parent(&self, node: NodeRef) -> Result<NodeRef> {
        self.check(node)?;
        if node.level == 0 {
            return Err(Error::Structure("the root has no parent".into()));
        }
        Ok(NodeRef::new(node.level - 1, node.pos / 2))
    }
}

fn longest_axis(points: &PointSet, idx: &[usize]) -> usize {
    let d = points.dim();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for (k, &c) in points.point(i).iter().enumerate() {
            lo[k] = lo[k].min(c);
            hi[k] = hi[k].max(c);
        }
    }
    (0..d)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equispaced_line_splits_to_singletons() {
        let pts = PointSet::equispaced_line(8).unwrap();
        let t = PartitionTree::build(&pts, 3).unwrap();
        assert_eq!(t.order(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        for j in 0..8 {
            assert_eq!(t.range(3, j), j..j + 1);
        }
        let t1 = PartitionTree::build(&pts, 1).unwrap();
        assert_eq!((t1.range(1, 0), t1.range(1, 1)), (0..4, 4..8));
    }

    #[test]
    fn reversed_line_is_sorted() {
        let pts = PointSet::new(1, (0..8).rev().map(|i| i as f64).collect()).unwrap();
        let t = PartitionTree::build(&pts, 3).unwrap();
        assert_eq!(t.order(), &[7, 6, 5, 4, 3, 2, 1, 0]);
        assert_eq!(t.position()[7], 0);
    }

    #[test]
    fn circle_leaves_are_equal() {
        let pts: Vec<[f64; 2]> = (0..64)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / 64.0;
                [t.cos(), t.sin()]
            })
            .collect();
        let t = PartitionTree::build(&PointSet::from_points(&pts).unwrap(), 4).unwrap();
        for j in 0..16 {
            assert_eq!(t.range(4, j).len(), 4);
        }
    }

    #[test]
    fn family_relations() {
        let t = PartitionTree::balanced(64, 5).unwrap();
        assert_eq!(
            t.children(NodeRef::new(1, 1)).unwrap(),
            (NodeRef::new(2, 2), NodeRef::new(2, 3))
        );
        assert_eq!(t.parent(NodeRef::new(2, 3)).unwrap(), NodeRef::new(1, 1));
        for l in 0..5 {
            for j in 0..1 << l {
                let x = NodeRef::new(l, j);
                let (a, b) = t.children(x).unwrap();
                assert_eq!(t.parent(a).unwrap(), x);
                assert_eq!(t.parent(b).unwrap(), x);
            }
        }
        assert!(t.children(NodeRef::new(5, 0)).is_err());
        assert!(t.parent(NodeRef::ROOT).is_err());
        assert!(t.node_range(NodeRef::new(6, 0)).is_err());
        assert!(t.node_range(NodeRef::new(2, 4)).is_err());
    }

    #[test]
    fn too_many_levels_rejected() {
        let pts = PointSet::equispaced_line(7).unwrap();
        assert!(matches!(PartitionTree::build(&pts, 3), Err(Error::Structure(_))));
    }

    #[test]
    fn default_level_count() {
        assert_eq!(default_levels(1000, 39), 4);
        assert_eq!(default_levels(64, 8), 3);
        assert_eq!(default_levels(10, 39), 0);
    }

    #[test]
    fn reads_text_points() {
        let text = "# x y\n0.0, 1.0\n2 3\n\n4.5,\t-1\n";
        let p = PointSet::read_text(text.as_bytes()).unwrap();
        assert_eq!((p.len(), p.dim()), (3, 2));
        assert_eq!(p.point(2), &[4.5, -1.0]);
        assert!(PointSet::read_text("1 2\n3\n".as_bytes()).is_err());
        assert!(PointSet::read_text("1 x\n".as_bytes()).is_err());
    }

    #[test]
    fn stored_layout_round_trip() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| {
            let x = i as f64;
            [x.sin(), (2.0 * x).cos(), 0.1 * x]
        }).collect();
        let t = PartitionTree::build(&PointSet::from_points(&pts).unwrap(), 3).unwrap();
        let back =
            PartitionTree::from_order_and_leaves(t.order().to_vec(), t.leaf_bounds().to_vec())
                .unwrap();
        assert_eq!(back, t);
        assert!(PartitionTree::from_order_and_leaves(vec![0, 0], vec![0, 1, 2]).is_err());
        assert!(PartitionTree::from_order_and_leaves(vec![0, 1, 2], vec![0, 1, 2, 3]).is_err());
    }

    fn cloud() -> impl Strategy<Value = (PointSet, usize)> {
        (1usize..=3, 1usize..200).prop_flat_map(|(dim, n)| {
            let max_levels = (usize::BITS - 1 - n.leading_zeros()) as usize;
            (
                proptest::collection::vec(-5.0f64..5.0, n * dim)
                    .prop_map(move |c| PointSet::new(dim, c).unwrap()),
                0..=max_levels,
            )
        })
    }

    proptest! {
        #[test]
        fn levels_tile_and_leaves_balance((pts, levels) in cloud()) {
            let t = PartitionTree::build(&pts, levels).unwrap();
            let n = pts.len();
            for l in 0..=levels {
                let mut next = 0;
                for j in 0..1usize << l {
                    let r = t.range(l, j);
                    prop_assert_eq!(r.start, next);
                    prop_assert!(!r.is_empty());
                    next = r.end;
                }
                prop_assert_eq!(next, n);
            }
            let sizes: Vec<usize> = (0..1usize << levels).map(|j| t.range(levels, j).len()).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            if n % (1 << levels) == 0 {
                prop_assert_eq!(lo, hi);
            }
        }

        #[test]
        fn rebuilding_permuted_points_is_identity((pts, levels) in cloud()) {
            let t = PartitionTree::build(&pts, levels).unwrap();
            let again = PartitionTree::build(&pts.permuted(t.order()), levels).unwrap();
            let identity: Vec<usize> = (0..pts.len()).collect();
            prop_assert_eq!(again.order(), &identity[..]);
        }
    }
}
