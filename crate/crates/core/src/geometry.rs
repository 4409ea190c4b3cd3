//! Cluster trees over scattered 2-D locations and the block cluster tree
//! that decides which covariance blocks are stored in low-rank form.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Default admissibility parameter.
pub const DEFAULT_ETA: f64 = 2.0;
/// Default maximal number of indices in a leaf cluster.
pub const DEFAULT_LEAF_SIZE: usize = 32;

/// A point in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location(pub [f64; 2]);

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location([x, y])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn dist(&self, other: &Location) -> f64 {
        let dx = self.0[0] - other.0[0];
        let dy = self.0[1] - other.0[1];
        dx.hypot(dy)
    }
}

/// Checks that a location set is nonempty and finite.
pub fn validate_locations(locations: &[Location]) -> Result<()> {
    if locations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(index) = locations.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidLocation { index });
    }
    Ok(())
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn of(points: &[Location]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                min[a] = min[a].min(p.0[a]);
                max[a] = max[a].max(p.0[a]);
            }
        }
        BoundingBox { min, max }
    }

    pub fn contains(&self, p: &Location) -> bool {
        (0..2).all(|a| self.min[a] <= p.0[a] && p.0[a] <= self.max[a])
    }

    /// Length of the box diagonal.
    pub fn diam(&self) -> f64 {
        let dx = self.max[0] - self.min[0];
        let dy = self.max[1] - self.min[1];
        dx.hypot(dy)
    }

    /// Euclidean gap between two boxes (0 if they touch or overlap).
    pub fn dist(&self, other: &BoundingBox) -> f64 {
        let mut d2 = 0.0;
        for a in 0..2 {
            let gap = (other.min[a] - self.max[a]).max(self.min[a] - other.max[a]).max(0.0);
            d2 += gap * gap;
        }
        d2.sqrt()
    }

    fn longest_axis(&self) -> usize {
        if self.max[1] - self.min[1] > self.max[0] - self.min[0] {
            1
        } else {
            0
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cluster {
    /// Half-open range into the tree ordering.
    pub start: usize,
    pub end: usize,
    pub bbox: BoundingBox,
    pub children: Option<[usize; 2]>,
    pub level: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary geometric partition of a location set.
///
/// Tree order is the order in which the leaves enumerate the points;
/// `perm[k]` is the original index of the point at tree position `k`.
#[derive(Clone, Debug)]
pub struct ClusterTree {
    nodes: Vec<Cluster>,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    points: Vec<Location>,
    leaf_size: usize,
}

/// Builds a cluster tree by longest-axis median splits.
pub fn build_cluster_tree(locations: &[Location], leaf_size: usize) -> Result<ClusterTree> {
    validate_locations(locations)?;
    if leaf_size == 0 {
        return Err(Error::InvalidInput("leaf_size must be positive".into()));
    }
    let n = locations.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut nodes = Vec::new();
    split(locations, &mut perm, 0, n, 0, leaf_size, &mut nodes);

    let mut inv_perm = vec![0; n];
    for (pos, &orig) in perm.iter().enumerate() {
        inv_perm[orig] = pos;
    }
    let points = perm.iter().map(|&i| locations[i]).collect();
    Ok(ClusterTree { nodes, perm, inv_perm, points, leaf_size })
}

fn split(
    locations: &[Location],
    perm: &mut [usize],
    start: usize,
    end: usize,
    level: usize,
    leaf_size: usize,
    nodes: &mut Vec<Cluster>,
) -> usize {
    let id = nodes.len();
    let bbox = BoundingBox::of(&perm[start..end].iter().map(|&i| locations[i]).collect::<Vec<_>>());
    nodes.push(Cluster { start, end, bbox, children: None, level });
    if end - start <= leaf_size {
        return id;
    }
    let axis = bbox.longest_axis();
    perm[start..end].sort_by(|&a, &b| {
        locations[a].0[axis].total_cmp(&locations[b].0[axis]).then(a.cmp(&b))
    });
    let mid = start + (end - start) / 2;
    let left = split(locations, perm, start, mid, level + 1, leaf_size, nodes);
    let right = split(locations, perm, mid, end, level + 1, leaf_size, nodes);
    nodes[id].children = Some([left, right]);
    id
}

impl ClusterTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &Cluster {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Cluster] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// `perm()[k]` is the original index stored at tree position `k`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `inverse_perm()[i]` is the tree position of original index `i`.
    pub fn inverse_perm(&self) -> &[usize] {
        &self.inv_perm
    }

    /// Points in tree order.
    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Cluster> {
        self.nodes.iter().filter(|c| c.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// Reorders a vector given in original order into tree order.
    pub fn to_tree_order(&self, values: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| values[i]).collect()
    }

    /// Reorders a vector given in tree order back into original order.
    pub fn to_original_order(&self, values: &[f64]) -> Vec<f64> {
        self.inv_perm.iter().map(|&k| values[k]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Far-field block, stored in low-rank form.
    Admissible,
    /// Pair of leaf clusters, stored densely.
    Dense,
    /// Subdivided; children stored row-major over the row and column parts.
    Split { row_parts: usize, col_parts: usize },
}

#[derive(Clone, Debug)]
pub struct BlockNode {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
    pub children: Vec<usize>,
}

/// Hierarchical block partition of `rows × cols`.
#[derive(Clone, Debug)]
pub struct BlockClusterTree {
    rows: Arc<ClusterTree>,
    cols: Arc<ClusterTree>,
    nodes: Vec<BlockNode>,
    eta: f64,
}

/// `min(diam_t, diam_s) <= eta * dist(t, s)` with a strictly positive gap.
pub fn is_admissible(t: &BoundingBox, s: &BoundingBox, eta: f64) -> bool {
    let dist = t.dist(s);
    dist > 0.0 && t.diam().min(s.diam()) <= eta * dist
}

pub fn build_block_tree(
    rows: Arc<ClusterTree>,
    cols: Arc<ClusterTree>,
    eta: f64,
) -> Result<BlockClusterTree> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let mut nodes = Vec::new();
    descend(&rows, &cols, rows.root(), cols.root(), eta, &mut nodes);
    Ok(BlockClusterTree { rows, cols, nodes, eta })
}

fn descend(
    rows: &ClusterTree,
    cols: &ClusterTree,
    t: usize,
    s: usize,
    eta: f64,
    nodes: &mut Vec<BlockNode>,
) -> usize {
    let id = nodes.len();
    let (ct, cs) = (rows.node(t), cols.node(s));
    let kind = if is_admissible(&ct.bbox, &cs.bbox, eta) {
        BlockKind::Admissible
    } else if ct.is_leaf() && cs.is_leaf() {
        BlockKind::Dense
    } else {
        let rp = if ct.is_leaf() { 1 } else { 2 };
        let cp = if cs.is_leaf() { 1 } else { 2 };
        BlockKind::Split { row_parts: rp, col_parts: cp }
    };
    nodes.push(BlockNode { row: t, col: s, kind, children: Vec::new() });
    if matches!(kind, BlockKind::Split { .. }) {
        let row_ids = ct.children.map(|c| c.to_vec()).unwrap_or_else(|| vec![t]);
        let col_ids = cs.children.map(|c| c.to_vec()).unwrap_or_else(|| vec![s]);
        let mut children = Vec::with_capacity(row_ids.len() * col_ids.len());
        for &r in &row_ids {
            for &c in &col_ids {
                children.push(descend(rows, cols, r, c, eta, nodes));
            }
        }
        nodes[id].children = children;
    }
    id
}

impl BlockClusterTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &BlockNode {
        &self.nodes[id]
    }

    pub fn rows(&self) -> &Arc<ClusterTree> {
        &self.rows
    }

    pub fn cols(&self) -> &Arc<ClusterTree> {
        &self.cols
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// True when rows and columns share one cluster tree.
    pub fn is_symmetric(&self) -> bool {
        Arc::ptr_eq(&self.rows, &self.cols)
    }

    /// Whether block `id` pairs a cluster with itself in a symmetric tree.
    pub fn is_diagonal(&self, id: usize) -> bool {
        self.is_symmetric() && self.nodes[id].row == self.nodes[id].col
    }

    /// Leaf blocks with their kind.
    pub fn leaves(&self) -> impl Iterator<Item = &BlockNode> {
        self.nodes.iter().filter(|b| !matches!(b.kind, BlockKind::Split { .. }))
    }

    pub fn count_leaves(&self) -> (usize, usize) {
        self.leaves().fold((0, 0), |(a, d), b| match b.kind {
            BlockKind::Admissible => (a + 1, d),
            _ => (a, d + 1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, seed: u64) -> Vec<Location> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Location::new(rng.random(), rng.random())).collect()
    }

    fn check_tree(tree: &ClusterTree) {
        let n = tree.len();
        for c in tree.nodes() {
            for p in &tree.points()[c.start..c.end] {
                assert!(c.bbox.contains(p));
            }
            match c.children {
                None => assert!(c.len() <= tree.leaf_size()),
                Some([l, r]) => {
                    assert!(c.len() > tree.leaf_size());
                    let (l, r) = (tree.node(l), tree.node(r));
                    assert_eq!(l.start, c.start);
                    assert_eq!(l.end, r.start);
                    assert_eq!(r.end, c.end);
                }
            }
        }
        let mut seen = vec![false; n];
        for &i in tree.perm() {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }

    #[test]
    fn single_point_is_one_leaf() {
        let tree = build_cluster_tree(&[Location::new(0.3, 0.4)], 32).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        let root = tree.node(tree.root());
        assert_eq!((root.start, root.end), (0, 1));
        assert!(root.is_leaf());
    }

    #[test]
    fn grid_tree_partitions_all_points() {
        let pts: Vec<_> = (0..64).map(|i| Location::new((i % 8) as f64 / 7.0, (i / 8) as f64 / 7.0)).collect();
        let tree = build_cluster_tree(&pts, 16).unwrap();
        check_tree(&tree);
        assert!(tree.depth() >= 2);
        let covered: usize = tree.leaves().map(|c| c.len()).sum();
        assert_eq!(covered, 64);
        let mut counts = vec![0; 64];
        for leaf in tree.leaves() {
            for k in leaf.start..leaf.end {
                counts[k] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn leaf_count_bounds() {
        let tree = build_cluster_tree(&uniform(1000, 3), 32).unwrap();
        check_tree(&tree);
        let leaves = tree.leaves().count();
        assert!((32..=64).contains(&leaves), "{leaves}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(build_cluster_tree(&[], 4), Err(Error::EmptyDataset)));
        let bad = [Location::new(0.0, 0.0), Location::new(f64::NAN, 0.0)];
        assert!(matches!(build_cluster_tree(&bad, 4), Err(Error::InvalidLocation { index: 1 })));
    }

    #[test]
    fn permutation_round_trip() {
        let tree = build_cluster_tree(&uniform(300, 9), 8).unwrap();
        let v: Vec<f64> = (0..300).map(|i| i as f64 * 0.5 - 3.0).collect();
        assert_eq!(tree.to_original_order(&tree.to_tree_order(&v)), v);
    }

    #[test]
    fn identical_single_leaf_trees_give_one_dense_block() {
        let tree = Arc::new(build_cluster_tree(&uniform(10, 1), 32).unwrap());
        let bt = build_block_tree(tree.clone(), tree, 2.0).unwrap();
        let leaves: Vec<_> = bt.leaves().collect();
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].kind, BlockKind::Dense);
    }

    #[test]
    fn separated_clusters_are_admissible_at_root() {
        let a: Vec<_> = (0..40).map(|i| Location::new(0.01 * (i % 5) as f64, 0.01 * (i / 5) as f64)).collect();
        let b: Vec<_> = a.iter().map(|p| Location::new(p.x() + 10.0, p.y())).collect();
        let ta = Arc::new(build_cluster_tree(&a, 8).unwrap());
        let tb = Arc::new(build_cluster_tree(&b, 8).unwrap());
        let bt = build_block_tree(ta, tb, 2.0).unwrap();
        assert_eq!(bt.node(bt.root()).kind, BlockKind::Admissible);
    }

    #[test]
    fn block_leaves_tile_the_product_once() {
        let tree = Arc::new(build_cluster_tree(&uniform(256, 5), 16).unwrap());
        let bt = build_block_tree(tree.clone(), tree.clone(), 2.0).unwrap();
        let mut counter = vec![0u8; 256 * 256];
        for leaf in bt.leaves() {
            let (t, s) = (tree.node(leaf.row), tree.node(leaf.col));
            match leaf.kind {
                BlockKind::Admissible => {
                    let d = t.bbox.dist(&s.bbox);
                    assert!(t.bbox.diam().min(s.bbox.diam()) <= 2.0 * d);
                    assert_ne!(leaf.row, leaf.col);
                }
                BlockKind::Dense => assert!(t.is_leaf() && s.is_leaf()),
                BlockKind::Split { .. } => unreachable!(),
            }
            for i in t.start..t.end {
                for j in s.start..s.end {
                    counter[i * 256 + j] += 1;
                }
            }
        }
        assert!(counter.iter().all(|&c| c == 1));
        assert!(bt.count_leaves().0 > 0);
    }
}
