//! Shielding neighbourhoods.
//!
//! For each row `xa` the neighbourhood holds the support row of the coupling,
//! the targets `t(xs)` of the candidates `xs` in `S(xa)`, and the *miss set*:
//! every `y` that no candidate `(xs, t(xs))` shields from `xa`. The miss set
//! comes from a branch-and-bound descent of the y-tree ([`search_tree`]) or,
//! on Cartesian grids with squared Euclidean cost, from a closed-form
//! rectangle ([`grid_miss`]).
//!
//! Leaf tests are exact integer comparisons on quantized costs. Cell pruning
//! uses `psi_hat` with a margin that covers quantization and float round-off,
//! so every pruned leaf also passes the exact test.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::costs::{dist2, CostSpec};
use crate::hierarchy::HierarchicalPartition;
use crate::model::{extract_map, grid_coords, grid_index, DiscreteMeasure, Neighbourhood, NeighbourhoodBuilder, ProblemInstance, SparseCoupling};
use crate::{Error, Result};

/// How the candidate set `S(xa)` is chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CandidateScheme {
    /// Axis neighbours `xa ± e_i` on a full Cartesian grid.
    GridAxes { shape: Vec<usize> },
    /// The `k` nearest other points (Euclidean, which orders geodesic distance too).
    KNearest(usize),
}

impl CandidateScheme {
    /// Axis neighbours on declared grids, `2n + 2` nearest points otherwise.
    pub fn default_for(m: &DiscreteMeasure) -> Self {
        match &m.grid_shape {
            Some(shape) => CandidateScheme::GridAxes { shape: shape.clone() },
            None => CandidateScheme::KNearest(2 * m.dim + 2),
        }
    }

    /// Candidate sets for the points of a cloud. `tree` (a partition of the
    /// same points at layer `scale`) accelerates the nearest-neighbour search.
    pub fn build(&self, points: &[f64], dim: usize, tree: Option<(&HierarchicalPartition, usize)>) -> Result<CandidateSets> {
        let n = points.len() / dim;
        match self {
            CandidateScheme::GridAxes { shape } => {
                if shape.len() != dim || shape.iter().product::<usize>() != n {
                    return Err(Error::Invalid("grid shape does not match the point cloud".into()));
                }
                let mut sets = CandidateSets::with_capacity(n);
                let mut c = vec![0usize; dim];
                for x in 0..n {
                    grid_coords(shape, x, &mut c);
                    for a in 0..dim {
                        if c[a] > 0 {
                            c[a] -= 1;
                            sets.idx.push(grid_index(shape, &c) as u32);
                            c[a] += 1;
                        }
                        if c[a] + 1 < shape[a] {
                            c[a] += 1;
                            sets.idx.push(grid_index(shape, &c) as u32);
                            c[a] -= 1;
                        }
                    }
                    sets.ptr.push(sets.idx.len());
                }
                Ok(sets)
            }
            CandidateScheme::KNearest(k) => Ok(match tree {
                Some((t, scale)) => knn_tree(t, scale, *k),
                None => knn_brute(points, dim, *k),
            }),
        }
    }
}

/// Row-compressed candidate lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSets {
    ptr: Vec<usize>,
    idx: Vec<u32>,
}

impl CandidateSets {
    fn with_capacity(n: usize) -> Self {
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        CandidateSets { ptr, idx: Vec::new() }
    }

    #[inline]
    pub fn get(&self, x: usize) -> &[u32] {
        &self.idx[self.ptr[x]..self.ptr[x + 1]]
    }

    pub fn len(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Near(f64, u32);

impl Eq for Near {}

impl Ord for Near {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

impl PartialOrd for Near {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn knn_brute(points: &[f64], dim: usize, k: usize) -> CandidateSets {
    let n = points.len() / dim;
    let mut sets = CandidateSets::with_capacity(n);
    let mut all: Vec<Near> = Vec::with_capacity(n);
    for x in 0..n {
        let p = &points[x * dim..(x + 1) * dim];
        all.clear();
        all.extend((0..n).filter(|&y| y != x).map(|y| Near(dist2(p, &points[y * dim..(y + 1) * dim]), y as u32)));
        let kk = k.min(all.len());
        if kk > 0 && kk < all.len() {
            all.select_nth_unstable(kk - 1);
        }
        all.truncate(kk);
        all.sort_unstable();
        sets.idx.extend(all.iter().map(|c| c.1));
        sets.ptr.push(sets.idx.len());
    }
    sets
}

/// Best-first k-nearest search over the tree, treating layer `scale` as leaves.
fn knn_tree(t: &HierarchicalPartition, scale: usize, k: usize) -> CandidateSets {
    let n = t.layer_len(scale);
    let mut sets = CandidateSets::with_capacity(n);
    let top = t.depth();
    let mut heap: BinaryHeap<std::cmp::Reverse<(Near, usize)>> = BinaryHeap::new();
    let mut best: BinaryHeap<Near> = BinaryHeap::new();
    for x in 0..n {
        let q = t.rep(scale, x);
        heap.clear();
        best.clear();
        heap.push(std::cmp::Reverse((Near(0.0, 0), top)));
        while let Some(std::cmp::Reverse((Near(lb, c), layer))) = heap.pop() {
            if best.len() == k && lb > best.peek().unwrap().0 {
                break;
            }
            if layer == scale {
                if c as usize == x {
                    continue;
                }
                let cand = Near(dist2(q, t.rep(scale, c as usize)), c);
                if best.len() < k {
                    best.push(cand);
                } else if cand < *best.peek().unwrap() {
                    best.pop();
                    best.push(cand);
                }
                continue;
            }
            for ch in t.children(layer, c as usize) {
                let l = layer - 1;
                let key = if l == scale {
                    dist2(q, t.rep(l, ch))
                } else {
                    let d = (dist2(q, t.rep(l, ch)).sqrt() - t.rad(l, ch)).max(0.0);
                    // Slightly loosened so float error never hides a tie.
                    (d * d) * (1.0 - 1e-12)
                };
                heap.push(std::cmp::Reverse((Near(key, ch as u32), l)));
            }
        }
        let mut v = best.drain().collect::<Vec<_>>();
        v.sort_unstable();
        sets.idx.extend(v.iter().map(|c| c.1));
        sets.ptr.push(sets.idx.len());
    }
    sets
}

/// Counters of one neighbourhood construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ShieldStats {
    /// Evaluations of `psi_hat`, leaf tests included.
    pub psi_hat_calls: u64,
    /// Sum over rows of the miss-set sizes.
    pub missed_total: u64,
    /// Largest miss set of a single row.
    pub max_missed: u64,
    pub neighbourhood_size: u64,
}

impl ShieldStats {
    pub fn add(&mut self, o: &ShieldStats) {
        self.psi_hat_calls += o.psi_hat_calls;
        self.missed_total += o.missed_total;
        self.max_missed = self.max_missed.max(o.max_missed);
        self.neighbourhood_size += o.neighbourhood_size;
    }
}

/// Miss-set method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShieldMethod {
    Tree,
    Grid,
}

/// Everything needed to shield couplings of one (possibly coarse) problem.
///
/// `problem` is the problem at the current scale; its y-points are the cells
/// of `tree_y` at layer `scale`.
pub struct ShieldContext<'a> {
    pub problem: &'a ProblemInstance,
    pub tree_y: &'a HierarchicalPartition,
    pub scale: usize,
    pub candidates: &'a CandidateSets,
    pub method: ShieldMethod,
}

impl<'a> ShieldContext<'a> {
    pub fn new(
        problem: &'a ProblemInstance,
        tree_y: &'a HierarchicalPartition,
        scale: usize,
        candidates: &'a CandidateSets,
        method: ShieldMethod,
    ) -> Result<Self> {
        if tree_y.layer_len(scale) != problem.n_y() || candidates.len() != problem.n_x() {
            return Err(Error::Invalid("shield context sizes do not match the problem".into()));
        }
        if method == ShieldMethod::Grid {
            let ok = scale == 0
                && matches!(problem.cost, CostSpec::SqEuclidean | CostSpec::Noisy(_))
                && problem.mu.grid_shape.is_some()
                && problem.nu.grid_shape.is_some();
            if !ok {
                return Err(Error::Invalid("grid shielding needs two declared grids and squared Euclidean cost".into()));
            }
        }
        Ok(ShieldContext { problem, tree_y, scale, candidates, method })
    }
}

/// Shielding neighbourhood of `pi`.
pub fn shield(ctx: &ShieldContext, pi: &SparseCoupling) -> Result<(Neighbourhood, ShieldStats)> {
    let t = extract_map(pi)?;
    let p = ctx.problem;
    let mut stats = ShieldStats::default();
    let mut builder = NeighbourhoodBuilder::new(p.n_x(), p.n_y());
    let mut row: Vec<u32> = Vec::new();
    let mut cands: Vec<(u32, u32)> = Vec::new();
    for xa in 0..p.n_x() {
        cands.clear();
        cands.extend(ctx.candidates.get(xa).iter().map(|&xs| (xs, t[xs as usize])));
        let miss = match ctx.method {
            ShieldMethod::Tree => search_tree(ctx, xa, &cands, &mut stats),
            ShieldMethod::Grid => {
                let sx = p.mu.grid_shape.as_deref().unwrap();
                let sy = p.nu.grid_shape.as_deref().unwrap();
                grid_miss(xa, &t, sx, sy, |xs| 0.5 * p.cost.slack(p.mu.point(xa), p.mu.point(xs)))?
            }
        };
        stats.missed_total += miss.len() as u64;
        stats.max_missed = stats.max_missed.max(miss.len() as u64);
        row.clear();
        row.extend_from_slice(pi.row(xa).0);
        row.extend(cands.iter().map(|c| c.1));
        row.extend_from_slice(&miss);
        row.sort_unstable();
        row.dedup();
        builder.push_row(&row)?;
    }
    let n = builder.finish();
    stats.neighbourhood_size = n.len() as u64;
    Ok((n, stats))
}

/// Miss set of `xa`: the y-indices that no candidate `(xs, ys)` shields,
/// found by descending the y-tree from its root. Sorted ascending.
pub fn search_tree(ctx: &ShieldContext, xa: usize, cands: &[(u32, u32)], stats: &mut ShieldStats) -> Vec<u32> {
    let p = ctx.problem;
    let tree = ctx.tree_y;
    let spec = &p.cost;
    let xa_pt = p.mu.point(xa);
    let inv_scale = 2.5 / p.cost_scale as f64;
    struct Cand<'b> {
        xs: usize,
        xs_pt: &'b [f64],
        threshold: f64,
        q_fixed: i128,
    }
    let cs: Vec<Cand> = cands
        .iter()
        .map(|&(xs, ys)| {
            let (xs, ys) = (xs as usize, ys as usize);
            let xs_pt = p.mu.point(xs);
            let psi_ys = spec.geo_psi(xa_pt, xs_pt, p.nu.point(ys));
            let slack = spec.slack(xa_pt, xs_pt);
            let base = psi_ys + slack;
            Cand {
                xs,
                xs_pt,
                threshold: base + inv_scale + 1e-9 * (1.0 + base.abs()),
                q_fixed: p.cost_units(xs, ys) as i128 - p.cost_units(xa, ys) as i128,
            }
        })
        .collect();
    let mut miss = Vec::new();
    let mut first = 0usize;
    let mut stack = vec![(tree.depth(), 0usize)];
    while let Some((layer, c)) = stack.pop() {
        if layer == ctx.scale {
            let qa = p.cost_units(xa, c) as i128;
            let mut shielded = false;
            for k in 0..cs.len() {
                let cand = &cs[(first + k) % cs.len()];
                stats.psi_hat_calls += 1;
                if qa - p.cost_units(cand.xs, c) as i128 + cand.q_fixed > 0 {
                    shielded = true;
                    first = (first + k) % cs.len();
                    break;
                }
            }
            if !shielded {
                miss.push(c as u32);
            }
            continue;
        }
        let rep = tree.rep(layer, c);
        let rad = tree.rad(layer, c);
        let mut pruned = false;
        for k in 0..cs.len() {
            let cand = &cs[(first + k) % cs.len()];
            stats.psi_hat_calls += 1;
            let b = spec.psi_hat(xa_pt, cand.xs_pt, rep, rad, false);
            if b - 1e-9 * b.abs() > cand.threshold {
                pruned = true;
                first = (first + k) % cs.len();
                break;
            }
        }
        if !pruned {
            stack.extend(tree.children(layer, c).map(|ch| (layer - 1, ch)));
        }
    }
    miss.sort_unstable();
    miss
}

/// Miss set on Cartesian grids: the axis-aligned box bounded on each side by
/// the target of the axis neighbour on that side, widened by the rounded-up
/// noise margin. Sides without a neighbour are unbounded. Sorted ascending.
pub fn grid_miss(
    xa: usize,
    t: &[u32],
    shape_x: &[usize],
    shape_y: &[usize],
    margin: impl Fn(usize) -> f64,
) -> Result<Vec<u32>> {
    let dim = shape_x.len();
    if shape_y.len() != dim || t.len() != shape_x.iter().product::<usize>() || xa >= t.len() {
        return Err(Error::Invalid("grid shapes do not match".into()));
    }
    let mut a = vec![0usize; dim];
    grid_coords(shape_x, xa, &mut a);
    let mut lo: Vec<i64> = vec![0; dim];
    let mut hi: Vec<i64> = shape_y.iter().map(|&s| s as i64 - 1).collect();
    let mut yc = vec![0usize; dim];
    for i in 0..dim {
        if a[i] + 1 < shape_x[i] {
            a[i] += 1;
            let xs = grid_index(shape_x, &a);
            a[i] -= 1;
            grid_coords(shape_y, t[xs] as usize, &mut yc);
            hi[i] = hi[i].min(yc[i] as i64 + margin(xs).ceil() as i64);
        }
        if a[i] > 0 {
            a[i] -= 1;
            let xs = grid_index(shape_x, &a);
            a[i] += 1;
            grid_coords(shape_y, t[xs] as usize, &mut yc);
            lo[i] = lo[i].max(yc[i] as i64 - margin(xs).ceil() as i64);
        }
    }
    if (0..dim).any(|i| lo[i] > hi[i]) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = lo.iter().map(|&v| v as usize).collect();
    loop {
        out.push(grid_index(shape_y, &cur) as u32);
        let mut i = dim;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if (cur[i] as i64) < hi[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = lo[i] as usize;
        }
    }
}
