//! Hierarchical 2^n-tree partitions.
//!
//! Layer 0 holds the points as singletons in their original order. Layer `K`
//! (the last one) is a single root cell. Every cell at layer `k >= 1` is the
//! disjoint union of its children at layer `k - 1`. Cells in each layer are
//! stored so that the leaves of any cell form a contiguous range of
//! [`HierarchicalPartition::leaf_order`].

use std::fmt::Write as _;

use crate::costs::{dist2, geodesic, CostSpec, Metric};
use crate::model::DiscreteMeasure;
use crate::{Error, Result};

const MAX_DEPTH: usize = 48;

#[derive(Clone, Debug)]
pub struct TreeOptions {
    /// Stop splitting once every cell holds at most this many points.
    pub leaf_bucket: usize,
    /// Force exactly this many coarse layers (root included).
    pub depth: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { leaf_bucket: 1, depth: None }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    reps: Vec<f64>,
    rad: Vec<f64>,
    parent: Vec<u32>,
    /// For k >= 2: children range in layer k-1. For k == 1: range in `leaf_order`.
    child_ptr: Vec<u32>,
    leaf_ptr: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct HierarchicalPartition {
    dim: usize,
    metric: Metric,
    layers: Vec<Layer>,
    leaf_order: Vec<u32>,
    leaf_pos: Vec<u32>,
}

/// Read-only view of one cell.
#[derive(Clone, Copy, Debug)]
pub struct Cell<'a> {
    pub layer: usize,
    pub index: usize,
    pub rep: &'a [f64],
    pub rad: f64,
    pub leaves: &'a [u32],
}

struct Cube {
    center: Vec<f64>,
    half: f64,
}

impl HierarchicalPartition {
    /// Builds the tree over `points` (flat, `dim` coordinates each).
    pub fn build(points: &[f64], dim: usize, metric: Metric, opts: &TreeOptions) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Invalid("tree needs a nonempty point list".into()));
        }
        if points.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite point".into()));
        }
        let n = points.len() / dim;
        if metric == Metric::Sphere {
            if dim != 3 {
                return Err(Error::DimensionMismatch { expected: 3, got: dim });
            }
            for i in 0..n {
                let p = &points[i * 3..i * 3 + 3];
                if (p.iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs() > 1e-9 {
                    return Err(Error::Invalid(format!("sphere point {i} is not unit-norm")));
                }
            }
        }
        if opts.depth == Some(0) {
            return Err(Error::Invalid("depth must be at least 1".into()));
        }
        let bucket = opts.leaf_bucket.max(1);
        let pt = |i: u32| &points[i as usize * dim..(i as usize + 1) * dim];

        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for i in 0..n {
            for a in 0..dim {
                lo[a] = lo[a].min(points[i * dim + a]);
                hi[a] = hi[a].max(points[i * dim + a]);
            }
        }
        let side = (0..dim).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let half = 0.5 * side * (1.0 + 2e-9);
        let root_center: Vec<f64> = (0..dim).map(|a| 0.5 * (lo[a] + hi[a])).collect();

        // Coarse layers from the root downwards.
        let mut perm: Vec<u32> = (0..n as u32).collect();
        let mut cubes = vec![Cube { center: root_center, half }];
        let mut ranges: Vec<(usize, usize)> = vec![(0, n)];
        let mut down: Vec<(Vec<Cube>, Vec<(usize, usize)>, Vec<u32>)> = Vec::new();
        let n_child = 1usize << dim.min(20);
        let mut buf = Vec::with_capacity(n);
        loop {
            let done = match opts.depth {
                Some(k) => down.len() + 1 == k,
                None => {
                    ranges.iter().all(|r| r.1 - r.0 <= bucket)
                        || down.len() + 1 >= MAX_DEPTH
                        || cubes[0].half == 0.0
                }
            };
            if done {
                break;
            }
            let mut next_cubes = Vec::new();
            let mut next_ranges = Vec::new();
            let mut parents = Vec::new();
            for (c, (cube, &(s, e))) in cubes.iter().zip(&ranges).enumerate() {
                let code = |i: u32| {
                    pt(i).iter().zip(&cube.center).enumerate().fold(0usize, |acc, (a, (v, m))| {
                        if v > m {
                            acc | (1 << a)
                        } else {
                            acc
                        }
                    })
                };
                let mut counts = vec![0usize; n_child + 1];
                for &i in &perm[s..e] {
                    counts[code(i) + 1] += 1;
                }
                for b in 0..n_child {
                    counts[b + 1] += counts[b];
                }
                buf.clear();
                buf.resize(e - s, 0u32);
                let mut fill = counts.clone();
                for &i in &perm[s..e] {
                    let b = code(i);
                    buf[fill[b]] = i;
                    fill[b] += 1;
                }
                perm[s..e].copy_from_slice(&buf);
                let h = cube.half * 0.5;
                for b in 0..n_child {
                    if counts[b + 1] == counts[b] {
                        continue;
                    }
                    let center = cube
                        .center
                        .iter()
                        .enumerate()
                        .map(|(a, m)| if b >> a & 1 == 1 { m + h } else { m - h })
                        .collect();
                    next_cubes.push(Cube { center, half: h });
                    next_ranges.push((s + counts[b], s + counts[b + 1]));
                    parents.push(c as u32);
                }
            }
            // A layer of singletons repeats layer 0.
            if opts.depth.is_none() && next_ranges.iter().all(|r| r.1 - r.0 == 1) {
                break;
            }
            down.push((std::mem::replace(&mut cubes, next_cubes), std::mem::replace(&mut ranges, next_ranges), parents));
        }
        down.push((cubes, ranges, Vec::new()));
        // `down[0]` is the root, `down.last()` is layer 1.
        let k_top = down.len();
        let leaf_order = perm;
        let mut leaf_pos = vec![0u32; n];
        for (p, &i) in leaf_order.iter().enumerate() {
            leaf_pos[i as usize] = p as u32;
        }

        let mut layers: Vec<Layer> = Vec::with_capacity(k_top + 1);
        layers.push(Layer {
            reps: points.to_vec(),
            rad: vec![0.0; n],
            parent: vec![0; n],
            child_ptr: Vec::new(),
            leaf_ptr: Vec::new(),
        });
        for k in 1..=k_top {
            let (cubes, ranges, _) = &down[k_top - k];
            let mut reps = Vec::with_capacity(cubes.len() * dim);
            let mut rad = Vec::with_capacity(cubes.len());
            for (cube, &(s, _)) in cubes.iter().zip(ranges) {
                match metric {
                    Metric::Euclidean => {
                        reps.extend_from_slice(&cube.center);
                        rad.push(cube.half * (dim as f64).sqrt());
                    }
                    Metric::Sphere => {
                        let nrm = cube.center.iter().map(|c| c * c).sum::<f64>().sqrt();
                        if nrm > 1e-12 {
                            reps.extend(cube.center.iter().map(|c| c / nrm));
                        } else {
                            reps.extend_from_slice(pt(leaf_order[s]));
                        }
                        rad.push(0.0);
                    }
                }
            }
            let mut leaf_ptr: Vec<u32> = ranges.iter().map(|r| r.0 as u32).collect();
            leaf_ptr.push(n as u32);
            layers.push(Layer {
                reps,
                rad,
                parent: vec![0; cubes.len()],
                child_ptr: Vec::new(),
                leaf_ptr,
            });
        }
        // Parent / child links.
        for k in 1..=k_top {
            if k == 1 {
                layers[1].child_ptr = layers[1].leaf_ptr.clone();
                for c in 0..layers[1].rad.len() {
                    let (s, e) = (layers[1].leaf_ptr[c], layers[1].leaf_ptr[c + 1]);
                    for &i in &leaf_order[s as usize..e as usize] {
                        layers[0].parent[i as usize] = c as u32;
                    }
                }
            } else {
                // Layer k-1 is stored in `down[k_top - k + 1]`; its parents point into layer k.
                let parents = &down[k_top - k].2;
                let mut ptr = vec![0u32; layers[k].rad.len() + 1];
                for &p in parents {
                    ptr[p as usize + 1] += 1;
                }
                for c in 0..layers[k].rad.len() {
                    ptr[c + 1] += ptr[c];
                }
                layers[k - 1].parent = parents.clone();
                layers[k].child_ptr = ptr;
            }
        }
        let mut tree = HierarchicalPartition { dim, metric, layers, leaf_order, leaf_pos };
        if metric == Metric::Sphere {
            tree.sphere_radii();
        }
        Ok(tree)
    }

    /// Builds the tree over the points of a measure.
    pub fn for_measure(m: &DiscreteMeasure, metric: Metric, opts: &TreeOptions) -> Result<Self> {
        Self::build(&m.points, m.dim, metric, opts)
    }

    /// Sphere radii: max geodesic distance to every descendant representative.
    fn sphere_radii(&mut self) {
        let dim = self.dim;
        for k in 1..self.layers.len() {
            for c in 0..self.layers[k].rad.len() {
                let rep = self.layers[k].reps[c * dim..(c + 1) * dim].to_vec();
                let mut r: f64 = 0.0;
                let mut range = (c, c + 1);
                for j in (0..k).rev() {
                    range = if j == 0 {
                        (self.layers[1].leaf_ptr[range.0] as usize, self.layers[1].leaf_ptr[range.1] as usize)
                    } else {
                        (self.layers[j + 1].child_ptr[range.0] as usize, self.layers[j + 1].child_ptr[range.1] as usize)
                    };
                    for q in range.0..range.1 {
                        let idx = if j == 0 { self.leaf_order[q] as usize } else { q };
                        r = r.max(geodesic(&rep, &self.layers[j].reps[idx * dim..(idx + 1) * dim]));
                    }
                }
                self.layers[k].rad[c] = r;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Index of the root layer.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer_len(&self, k: usize) -> usize {
        self.layers[k].rad.len()
    }

    /// Flat representative coordinates of layer `k`.
    pub fn layer_points(&self, k: usize) -> &[f64] {
        &self.layers[k].reps
    }

    #[inline]
    pub fn rep(&self, k: usize, c: usize) -> &[f64] {
        &self.layers[k].reps[c * self.dim..(c + 1) * self.dim]
    }

    #[inline]
    pub fn rad(&self, k: usize, c: usize) -> f64 {
        self.layers[k].rad[c]
    }

    /// Parent index in layer `k + 1`.
    pub fn parent(&self, k: usize, c: usize) -> usize {
        self.layers[k].parent[c] as usize
    }

    /// Children of cell `c` at layer `k >= 1`, as indices into layer `k - 1`.
    #[inline]
    pub fn children(&self, k: usize, c: usize) -> Children<'_> {
        let l = &self.layers[k];
        let (s, e) = (l.child_ptr[c] as usize, l.child_ptr[c + 1] as usize);
        if k == 1 {
            Children::Leaves(self.leaf_order[s..e].iter())
        } else {
            Children::Range(s..e)
        }
    }

    /// Leaf permutation: leaves of every cell are contiguous in it.
    pub fn leaf_order(&self) -> &[u32] {
        &self.leaf_order
    }

    /// Original point indices covered by cell `c` of layer `k`.
    pub fn leaves(&self, k: usize, c: usize) -> &[u32] {
        if k == 0 {
            let p = self.leaf_pos[c] as usize;
            &self.leaf_order[p..p + 1]
        } else {
            let l = &self.layers[k];
            &self.leaf_order[l.leaf_ptr[c] as usize..l.leaf_ptr[c + 1] as usize]
        }
    }

    pub fn cell(&self, k: usize, c: usize) -> Cell<'_> {
        Cell { layer: k, index: c, rep: self.rep(k, c), rad: self.rad(k, c), leaves: self.leaves(k, c) }
    }

    /// Ancestor at layer `k` of leaf `i`.
    pub fn ancestor(&self, i: usize, k: usize) -> usize {
        let mut c = i;
        for j in 0..k {
            c = self.layers[j].parent[c] as usize;
        }
        c
    }

    /// Distance used for covering radii: Euclidean or geodesic.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.metric {
            Metric::Euclidean => dist2(a, b).sqrt(),
            Metric::Sphere => geodesic(a, b),
        }
    }

    /// Text dump: one line per cell with id, layer, rep, rad and leaf count.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for k in (0..self.layers.len()).rev() {
            for c in 0..self.layer_len(k) {
                let rep: Vec<String> = self.rep(k, c).iter().map(|v| format!("{v}")).collect();
                let _ = writeln!(
                    s,
                    "cell {c} layer {k} rep [{}] rad {} leaves {}",
                    rep.join(" "),
                    self.rad(k, c),
                    self.leaves(k, c).len()
                );
            }
        }
        s
    }
}

pub enum Children<'a> {
    Range(std::ops::Range<usize>),
    Leaves(std::slice::Iter<'a, u32>),
}

impl Iterator for Children<'_> {
    type Item = usize;
    #[inline]
    fn next(&mut self) -> Option<usize> {
        match self {
            Children::Range(r) => r.next(),
            Children::Leaves(it) => it.next().map(|&i| i as usize),
        }
    }
}

/// Builds trees for two point clouds with a common depth.
pub fn build_pair(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    metric: Metric,
    opts: &TreeOptions,
) -> Result<(HierarchicalPartition, HierarchicalPartition)> {
    let tx = HierarchicalPartition::for_measure(mu, metric, opts)?;
    let ty = HierarchicalPartition::for_measure(nu, metric, opts)?;
    if tx.depth() == ty.depth() {
        return Ok((tx, ty));
    }
    let forced = TreeOptions { depth: Some(tx.depth().max(ty.depth())), ..opts.clone() };
    Ok((
        HierarchicalPartition::for_measure(mu, metric, &forced)?,
        HierarchicalPartition::for_measure(nu, metric, &forced)?,
    ))
}

/// Per-layer masses of a measure over a partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiScaleMeasure {
    pub layers: Vec<Vec<i64>>,
}

pub fn coarsen_measure(masses: &[i64], tree: &HierarchicalPartition) -> Result<MultiScaleMeasure> {
    if masses.len() != tree.layer_len(0) {
        return Err(Error::Invalid(format!(
            "{} masses for a tree over {} points",
            masses.len(),
            tree.layer_len(0)
        )));
    }
    let mut layers = vec![masses.to_vec()];
    for k in 1..=tree.depth() {
        let below = &layers[k - 1];
        let m: Vec<i64> = (0..tree.layer_len(k)).map(|c| tree.children(k, c).map(|ch| below[ch]).sum()).collect();
        layers.push(m);
    }
    Ok(MultiScaleMeasure { layers })
}

/// Cost between two cells, evaluated at their representatives.
pub fn hierarchical_cost(spec: &CostSpec, cx: &Cell, cy: &Cell) -> f64 {
    let pair = (cx.layer == 0 && cy.layer == 0).then_some((cx.index, cy.index));
    spec.eval(cx.rep, cy.rep, pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn check_structure(t: &HierarchicalPartition, n: usize) {
        assert_eq!(t.layer_len(t.depth()), 1);
        assert_eq!(t.layer_len(0), n);
        for k in 1..=t.depth() {
            let mut seen = vec![0usize; t.layer_len(k - 1)];
            for c in 0..t.layer_len(k) {
                let mut leaves: Vec<u32> = Vec::new();
                for ch in t.children(k, c) {
                    seen[ch] += 1;
                    assert_eq!(t.parent(k - 1, ch), c);
                    leaves.extend_from_slice(t.leaves(k - 1, ch));
                }
                leaves.sort_unstable();
                let mut own = t.leaves(k, c).to_vec();
                own.sort_unstable();
                assert_eq!(leaves, own);
            }
            assert!(seen.iter().all(|&s| s == 1));
        }
        for i in 0..n {
            assert_eq!(t.rad(0, i), 0.0);
        }
    }

    fn check_covering(t: &HierarchicalPartition) {
        for k in 1..=t.depth() {
            for c in 0..t.layer_len(k) {
                for &i in t.leaves(k, c) {
                    let d = t.distance(t.rep(k, c), t.rep(0, i as usize));
                    assert!(d <= t.rad(k, c) * (1.0 + 1e-12) + 1e-12, "layer {k} cell {c}");
                }
            }
        }
    }

    #[test]
    fn single_point() {
        let t = HierarchicalPartition::build(&[2.0, 3.0], 2, Metric::Euclidean, &TreeOptions::default()).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.rep(1, 0), &[2.0, 3.0]);
        assert_eq!(t.rad(1, 0), 0.0);
        check_structure(&t, 1);
    }

    #[test]
    fn unit_square_corners() {
        let pts = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let t = HierarchicalPartition::build(&pts, 2, Metric::Euclidean, &TreeOptions::default()).unwrap();
        assert_eq!(t.depth(), 1);
        assert!((t.rad(1, 0) - 0.5f64.sqrt()).abs() < 1e-8);
        check_structure(&t, 4);
        // Forcing a second coarse layer gives four singleton cells.
        let t = HierarchicalPartition::build(&pts, 2, Metric::Euclidean, &TreeOptions { depth: Some(2), ..Default::default() }).unwrap();
        assert_eq!(t.layer_len(1), 4);
        assert!((t.rad(2, 0) - 0.5f64.sqrt()).abs() < 1e-8);
        check_structure(&t, 4);
        check_covering(&t);
    }

    #[test]
    fn random_points_are_covered() {
        let mut rng = SplitMix64::seed_from_u64(11);
        let pts: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let t = HierarchicalPartition::build(&pts, 2, Metric::Euclidean, &TreeOptions::default()).unwrap();
        check_structure(&t, 1000);
        check_covering(&t);
        assert!((0..t.layer_len(1)).any(|c| t.leaves(1, c).len() > 1));
    }

    #[test]
    fn sphere_points_are_covered() {
        let mut rng = SplitMix64::seed_from_u64(5);
        let mut pts = Vec::new();
        for _ in 0..500 {
            let v: [f64; 3] = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            pts.extend(v.iter().map(|c| c / n));
        }
        let t = HierarchicalPartition::build(&pts, 3, Metric::Sphere, &TreeOptions::default()).unwrap();
        check_structure(&t, 500);
        check_covering(&t);
        // Radii also cover every descendant representative.
        for k in 2..=t.depth() {
            for c in 0..t.layer_len(k) {
                for ch in t.children(k, c) {
                    assert!(geodesic(t.rep(k, c), t.rep(k - 1, ch)) <= t.rad(k, c) + 1e-12);
                }
            }
        }
        assert!(HierarchicalPartition::build(&[1.0, 1.0, 0.0], 3, Metric::Sphere, &TreeOptions::default()).is_err());
    }

    #[test]
    fn forced_depth_and_ties() {
        let pts = [0.0, 1.0, 2.0, 3.0];
        let t = HierarchicalPartition::build(&pts, 1, Metric::Euclidean, &TreeOptions { depth: Some(5), leaf_bucket: 1 }).unwrap();
        assert_eq!(t.depth(), 5);
        check_structure(&t, 4);
        let d = HierarchicalPartition::build(&[1.0, 1.0, 1.0], 1, Metric::Euclidean, &TreeOptions::default()).unwrap();
        check_structure(&d, 3);
    }

    #[test]
    fn coarsen_examples() {
        let pts: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let t = HierarchicalPartition::build(&pts, 1, Metric::Euclidean, &TreeOptions::default()).unwrap();
        let ms = coarsen_measure(&[1; 8], &t).unwrap();
        assert_eq!(ms.layers[t.depth()], vec![8]);
        let mut one = vec![0; 8];
        one[5] = 8;
        let ms = coarsen_measure(&one, &t).unwrap();
        for k in 1..=t.depth() {
            let a = t.ancestor(5, k);
            for (c, &m) in ms.layers[k].iter().enumerate() {
                assert_eq!(m, if c == a { 8 } else { 0 });
            }
        }
        assert!(coarsen_measure(&[1; 7], &t).is_err());
    }

    #[test]
    fn hierarchical_cost_examples() {
        let pts = [0.0, 0.0, 3.0, 4.0];
        let t = HierarchicalPartition::build(&pts, 2, Metric::Euclidean, &TreeOptions::default()).unwrap();
        let c = hierarchical_cost(&CostSpec::SqEuclidean, &t.cell(0, 0), &t.cell(0, 1));
        assert_eq!(c, 25.0);
    }
}
