//! k-nearest-neighbor regression over a k-d tree with exact search.
//!
//! Neighbors are ordered by `(squared distance, original index)` and their
//! values are summed in that order, so results are bit-identical to a
//! brute-force scan that sorts by the same key.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{validate_locations, BoundingBox, Location};

/// Points per leaf bucket.
pub const BUCKET: usize = 16;
/// Default candidate set for `select_k`.
pub const DEFAULT_KS: std::ops::RangeInclusive<usize> = 1..=20;
/// Default number of Monte-Carlo splits for `select_k`.
pub const DEFAULT_SPLITS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbor {
    d2: f64,
    index: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &Location, b: &Location) -> f64 {
    let dx = a.0[0] - b.0[0];
    let dy = a.0[1] - b.0[1];
    dx * dx + dy * dy
}

fn box_dist2(b: &BoundingBox, q: &Location) -> f64 {
    let mut s = 0.0;
    for d in 0..2 {
        let v = q.0[d];
        let g = if v < b.min[d] {
            b.min[d] - v
        } else if v > b.max[d] {
            v - b.max[d]
        } else {
            0.0
        };
        s += g * g;
    }
    s
}

#[derive(Clone, Debug)]
struct KdNode {
    start: usize,
    end: usize,
    bbox: BoundingBox,
    children: Option<[usize; 2]>,
}

/// Balanced k-d tree over training locations with aligned values.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Location>,
    values: Vec<f64>,
    index: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn build(locations: &[Location], values: &[f64]) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if values.len() != locations.len() {
            return Err(Error::DimensionMismatch { expected: locations.len(), got: values.len() });
        }
        validate_locations(locations)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at row {i}")));
        }
        let mut order: Vec<usize> = (0..locations.len()).collect();
        let mut nodes = Vec::new();
        build_node(locations, &mut order, 0, &mut nodes);
        Ok(KdTree {
            points: order.iter().map(|&i| locations[i]).collect(),
            values: order.iter().map(|&i| values[i]).collect(),
            index: order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest training points as `(original index, distance)`,
    /// nearest first.
    pub fn nearest(&self, query: &Location, k: usize) -> Result<Vec<(usize, f64)>> {
        self.check_k(k)?;
        Ok(self.search(query, k).into_iter().map(|(nb, _)| (nb.index, nb.d2.sqrt())).collect())
    }

    /// Mean of the `k` nearest training values.
    pub fn predict_one(&self, query: &Location, k: usize) -> Result<f64> {
        self.check_k(k)?;
        let nb = self.search(query, k);
        Ok(nb.iter().map(|&(_, v)| v).sum::<f64>() / k as f64)
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidParams(format!("k = {k} must lie in [1, {}]", self.len())));
        }
        Ok(())
    }

    /// Sorted neighbors with their values.
    fn search(&self, q: &Location, k: usize) -> Vec<(Neighbor, f64)> {
        let mut heap: BinaryHeap<(Neighbor, u64)> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if heap.len() == k && box_dist2(&node.bbox, q) > heap.peek().unwrap().0.d2 {
                continue;
            }
            match node.children {
                None => {
                    for p in node.start..node.end {
                        let nb = Neighbor { d2: dist2(&self.points[p], q), index: self.index[p] };
                        if heap.len() < k {
                            heap.push((nb, p as u64));
                        } else if nb < heap.peek().unwrap().0 {
                            heap.pop();
                            heap.push((nb, p as u64));
                        }
                    }
                }
                Some([a, b]) => {
                    let (da, db) = (box_dist2(&self.nodes[a].bbox, q), box_dist2(&self.nodes[b].bbox, q));
                    if da <= db {
                        stack.push(b);
                        stack.push(a);
                    } else {
                        stack.push(a);
                        stack.push(b);
                    }
                }
            }
        }
        let mut out: Vec<(Neighbor, f64)> =
            heap.into_iter().map(|(nb, p)| (nb, self.values[p as usize])).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

fn build_node(locs: &[Location], order: &mut [usize], start: usize, nodes: &mut Vec<KdNode>) -> usize {
    let pts: Vec<Location> = order.iter().map(|&i| locs[i]).collect();
    let bbox = BoundingBox::of(&pts);
    let id = nodes.len();
    nodes.push(KdNode { start, end: start + order.len(), bbox, children: None });
    if order.len() <= BUCKET {
        return id;
    }
    let axis = if bbox.max[0] - bbox.min[0] >= bbox.max[1] - bbox.min[1] { 0 } else { 1 };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| locs[a].0[axis].total_cmp(&locs[b].0[axis]).then(a.cmp(&b)));
    let (left, right) = order.split_at_mut(mid);
    let a = build_node(locs, left, start, nodes);
    let b = build_node(locs, right, start + mid, nodes);
    nodes[id].children = Some([a, b]);
    id
}

/// kNN predictions at `queries`.
pub fn knn_predict(train: &[Location], values: &[f64], queries: &[Location], k: usize) -> Result<Vec<f64>> {
    let tree = KdTree::build(train, values)?;
    tree.check_k(k)?;
    validate_locations(queries)?;
    Ok(queries.par_iter().map(|q| tree.predict_one(q, k).unwrap()).collect())
}

/// Result of `select_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSelection {
    pub k: usize,
    /// `(k, mean validation RMSE)` in ascending `k`.
    pub cv_rmse: Vec<(usize, f64)>,
    /// Mean validation RMSE of the training-fold mean.
    pub mean_rmse: f64,
    pub splits: usize,
}

impl KSelection {
    pub fn rmse_of(&self, k: usize) -> Option<f64> {
        self.cv_rmse.iter().find(|e| e.0 == k).map(|e| e.1)
    }
}

/// Chooses `k` by repeated random 1:9 validation:training splits.
pub fn select_k(
    train: &[Location],
    values: &[f64],
    candidates: &[usize],
    splits: usize,
    seed: u64,
) -> Result<KSelection> {
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if values.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: values.len() });
    }
    let mut ks: Vec<usize> = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::InvalidParams("candidate k values must be positive".into()));
    }
    if splits == 0 {
        return Err(Error::InvalidParams("at least one split is required".into()));
    }
    let n_val = ((n as f64) / 10.0).round() as usize;
    let kmax = *ks.last().unwrap();
    if n_val == 0 || n - n_val < kmax {
        return Err(Error::InvalidInput(format!(
            "{n} points give a {n_val}:{} split, too small for k = {kmax}",
            n - n_val
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0; ks.len()];
    let mut mean_sum = 0.0;
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..splits {
        perm.shuffle(&mut rng);
        let (val, fit) = perm.split_at(n_val);
        let fit_locs: Vec<Location> = fit.iter().map(|&i| train[i]).collect();
        let fit_vals: Vec<f64> = fit.iter().map(|&i| values[i]).collect();
        let tree = KdTree::build(&fit_locs, &fit_vals)?;
        let sq: Vec<Vec<f64>> = val
            .par_iter()
            .map(|&i| {
                let nb = tree.search(&train[i], kmax);
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(ks.len());
                let mut next = 0;
                for (j, (_, v)) in nb.iter().enumerate() {
                    acc += v;
                    if ks[next] == j + 1 {
                        let e = acc / (j + 1) as f64 - values[i];
                        out.push(e * e);
                        next += 1;
                        if next == ks.len() {
                            break;
                        }
                    }
                }
                out
            })
            .collect();
        for (c, s) in sums.iter_mut().enumerate() {
            *s += (sq.iter().map(|r| r[c]).sum::<f64>() / n_val as f64).sqrt();
        }
        let mean = fit_vals.iter().sum::<f64>() / fit_vals.len() as f64;
        let ms = val.iter().map(|&i| (mean - values[i]).powi(2)).sum::<f64>() / n_val as f64;
        mean_sum += ms.sqrt();
    }
    let cv_rmse: Vec<(usize, f64)> = ks.iter().zip(&sums).map(|(&k, &s)| (k, s / splits as f64)).collect();
    let mut best = cv_rmse[0];
    for &e in &cv_rmse[1..] {
        if e.1 < best.1 {
            best = e;
        }
    }
    Ok(KSelection { k: best.0, cv_rmse, mean_rmse: mean_sum / splits as f64, splits })
}

/// Brute-force kNN prediction: full sort of all distances.
pub fn brute_force_predict(train: &[Location], values: &[f64], queries: &[Location], k: usize) -> Vec<f64> {
    queries
        .iter()
        .map(|q| {
            let mut all: Vec<Neighbor> =
                train.iter().enumerate().map(|(i, p)| Neighbor { d2: dist2(p, q), index: i }).collect();
            all.sort();
            all[..k].iter().map(|nb| values[nb.index]).sum::<f64>() / k as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{uniform_locations, VariateStream};
    use proptest::prelude::*;

    fn data(n: usize, seed: u64) -> (Vec<Location>, Vec<f64>) {
        let mut s = VariateStream::new(seed);
        let l = uniform_locations(n, &mut s);
        let v = (0..n).map(|_| s.normal()).collect();
        (l, v)
    }

    #[test]
    fn exact_self_match() {
        let (l, v) = data(300, 1);
        let t = KdTree::build(&l, &v).unwrap();
        for (i, p) in l.iter().enumerate() {
            assert_eq!(t.nearest(p, 1).unwrap()[0], (i, 0.0));
            assert_eq!(t.predict_one(p, 1).unwrap(), v[i]);
        }
    }

    #[test]
    fn equidistant_mean() {
        let l = [Location::new(1.0, 0.0), Location::new(0.0, 1.0), Location::new(-1.0, 0.0), Location::new(0.0, -1.0)];
        let p = knn_predict(&l, &[1.0, 2.0, 3.0, 4.0], &[Location::new(0.0, 0.0)], 4).unwrap();
        assert_eq!(p, vec![2.5]);
    }

    #[test]
    fn ties_prefer_smaller_index() {
        let l = [Location::new(1.0, 0.0), Location::new(0.0, 1.0), Location::new(-1.0, 0.0)];
        let t = KdTree::build(&l, &[5.0, 6.0, 7.0]).unwrap();
        let nb = t.nearest(&Location::new(0.0, 0.0), 2).unwrap();
        assert_eq!(nb.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn duplicates_and_collinear() {
        let l: Vec<Location> = (0..100).map(|i| Location::new((i % 7) as f64, 0.0)).collect();
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let q: Vec<Location> = (0..20).map(|i| Location::new(i as f64 * 0.37, 0.1)).collect();
        for k in [1, 5, 17, 100] {
            assert_eq!(knn_predict(&l, &v, &q, k).unwrap(), brute_force_predict(&l, &v, &q, k));
        }
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..5 {
            let (l, v) = data(2000, seed);
            let q = uniform_locations(200, &mut VariateStream::new(seed + 100));
            for k in [1, 3, 20] {
                assert_eq!(knn_predict(&l, &v, &q, k).unwrap(), brute_force_predict(&l, &v, &q, k));
            }
        }
    }

    #[test]
    fn k_equal_n_is_global_mean() {
        let (l, v) = data(50, 2);
        let q = uniform_locations(5, &mut VariateStream::new(3));
        let mean = v.iter().sum::<f64>() / 50.0;
        for p in knn_predict(&l, &v, &q, 50).unwrap() {
            assert!((p - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let (l, v) = data(10, 0);
        assert!(knn_predict(&l, &v, &l, 11).is_err());
        assert!(knn_predict(&l, &v, &l, 0).is_err());
        assert!(matches!(knn_predict(&[], &[], &l, 1), Err(Error::EmptyDataset)));
        assert!(select_k(&l, &v, &[1, 10], 5, 0).is_err());
        assert!(select_k(&l[..4], &v[..4], &[1], 5, 0).is_err());
    }

    #[test]
    fn constant_field_picks_one() {
        let (l, _) = data(200, 4);
        let s = select_k(&l, &vec![1.0; 200], &(1..=20).collect::<Vec<_>>(), 10, 0).unwrap();
        assert_eq!(s.k, 1);
        assert!(s.cv_rmse.iter().all(|e| e.1 == 0.0));
    }

    #[test]
    fn smooth_field_ordering() {
        let mut st = VariateStream::new(8);
        let l = uniform_locations(1000, &mut st);
        let v: Vec<f64> = l.iter().map(|p| (3.0 * p.x()).sin() + (2.0 * p.y()).cos() + 0.05 * st.normal()).collect();
        let s = select_k(&l, &v, &(1..=20).collect::<Vec<_>>(), 20, 1).unwrap();
        assert!((1..=20).contains(&s.k));
        let best = s.rmse_of(s.k).unwrap();
        assert!(best <= s.rmse_of(20).unwrap() && s.rmse_of(20).unwrap() <= s.mean_rmse);
        assert!(best < 0.9 * s.mean_rmse);
        assert_eq!(s, select_k(&l, &v, &(1..=20).collect::<Vec<_>>(), 20, 1).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shuffled_training_rows(seed in 0u64..1000, k in 1usize..10) {
            let (l, v) = data(120, seed);
            let q = uniform_locations(15, &mut VariateStream::new(seed + 1));
            let p = knn_predict(&l, &v, &q, k).unwrap();
            let mut idx: Vec<usize> = (0..120).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let ls: Vec<Location> = idx.iter().map(|&i| l[i]).collect();
            let vs: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            let r = knn_predict(&ls, &vs, &q, k).unwrap();
            for (a, b) in p.iter().zip(&r) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
