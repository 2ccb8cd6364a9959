//! Primal network simplex for sparse transportation problems.
//!
//! Nodes are the x-sources `0..n_x`, the y-sinks `n_x..n_x+n_y` and an
//! artificial root. The spanning-tree basis is kept in parent/thread form
//! (parent, predecessor arc, preorder thread with reverse links, subtree
//! sizes and last successors), pivots use a block search over reduced costs
//! and the leaving arc is chosen so the tree stays strongly feasible.
//!
//! Duals are returned as `alpha(x) = -pi(x)` and `beta(y) = pi(y)`, so that
//! `alpha(x) + beta(y) <= c(x, y)` on every arc and equality holds on every
//! arc carrying flow.

use std::collections::HashMap;
use std::time::Instant;

use crate::model::{DualPotentials, Neighbourhood, ProblemInstance, SparseCoupling};
use crate::{Error, Result};

/// A transport problem restricted to an arc set.
#[derive(Clone, Debug)]
pub struct SparseTransportLP {
    pub supplies: Vec<i64>,
    pub demands: Vec<i64>,
    pub arcs: Neighbourhood,
    /// Costs aligned with the pair order of `arcs`.
    pub costs: Vec<i64>,
    /// Arcs appended outside `arcs` (basis repair).
    pub extra: Vec<(u32, u32, i64)>,
}

impl SparseTransportLP {
    pub fn new(supplies: Vec<i64>, demands: Vec<i64>, arcs: Neighbourhood, costs: Vec<i64>) -> Result<Self> {
        if arcs.n_x != supplies.len() || arcs.n_y != demands.len() || costs.len() != arcs.len() {
            return Err(Error::Invalid("transport LP size mismatch".into()));
        }
        let s: i128 = supplies.iter().map(|&v| v as i128).sum();
        let d: i128 = demands.iter().map(|&v| v as i128).sum();
        if s != d || supplies.iter().chain(&demands).any(|&v| v < 0) {
            return Err(Error::Invalid("unbalanced or negative supplies".into()));
        }
        Ok(SparseTransportLP { supplies, demands, arcs, costs, extra: Vec::new() })
    }

    /// The problem restricted to `n`, with quantized costs.
    pub fn from_problem(problem: &ProblemInstance, n: Neighbourhood) -> Result<Self> {
        let costs = n.iter().map(|(x, y)| problem.cost_units(x, y)).collect();
        Self::new(problem.mu.masses.clone(), problem.nu.masses.clone(), n, costs)
    }

    pub fn n_x(&self) -> usize {
        self.supplies.len()
    }

    pub fn n_y(&self) -> usize {
        self.demands.len()
    }

    pub fn arc_count(&self) -> usize {
        self.costs.len() + self.extra.len()
    }

    fn has_arc(&self, x: usize, y: usize) -> bool {
        self.arcs.contains(x, y) || self.extra.iter().any(|e| (e.0 as usize, e.1 as usize) == (x, y))
    }

    /// Appends the real basic arcs of `basis` missing from the arc set, with
    /// costs from `cost`. Returns how many were added.
    pub fn repair_for(&mut self, basis: &Basis, mut cost: impl FnMut(usize, usize) -> i64) -> usize {
        let mut added = 0;
        for link in &basis.links {
            if let BasisArc::Real { x, y } = link.arc {
                let (x, y) = (x as usize, y as usize);
                if x < self.n_x() && y < self.n_y() && !self.has_arc(x, y) {
                    self.extra.push((x as u32, y as u32, cost(x, y)));
                    added += 1;
                }
            }
        }
        added
    }
}

/// Arc of a basis, identified independently of any arc numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisArc {
    Real { x: u32, y: u32 },
    Artificial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisLink {
    /// Parent node (`n_x + n_y` is the root).
    pub parent: u32,
    pub arc: BasisArc,
}

/// A spanning-tree basis: one link to the parent per non-root node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    pub n_x: usize,
    pub n_y: usize,
    pub links: Vec<BasisLink>,
}

impl Basis {
    pub fn real_arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().filter_map(|l| match l.arc {
            BasisArc::Real { x, y } => Some((x as usize, y as usize)),
            BasisArc::Artificial => None,
        })
    }
}

/// Entering-arc scan configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PivotRule {
    /// Arcs per block; `None` picks about `sqrt(m)`.
    pub block_size: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub enum WarmStart<'a> {
    None,
    Basis(&'a Basis),
    Duals(&'a DualPotentials),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverStats {
    pub pivots: u64,
    pub degenerate_pivots: u64,
    /// Whether the requested warm start was actually used.
    pub warm_used: bool,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct LocalSolution {
    pub coupling: SparseCoupling,
    pub duals: DualPotentials,
    pub basis: Basis,
    pub stats: SolverStats,
}

impl LocalSolution {
    /// Objective of the coupling under the LP's arc costs.
    pub fn objective(&self, lp: &SparseTransportLP) -> i128 {
        let mut extra: HashMap<(usize, usize), i64> = HashMap::new();
        for &(x, y, c) in &lp.extra {
            extra.insert((x as usize, y as usize), c);
        }
        self.coupling
            .iter()
            .map(|(x, y, m)| {
                let c = lp.arcs.position(x, y).map(|p| lp.costs[p]).unwrap_or_else(|| extra[&(x, y)]);
                c as i128 * m as i128
            })
            .sum()
    }
}

/// Solves the restricted transport problem exactly.
pub fn solve_local(lp: &SparseTransportLP, warm: WarmStart, rule: PivotRule) -> Result<LocalSolution> {
    let t0 = Instant::now();
    let (mut sol, shift) = match warm {
        WarmStart::Duals(d) => match shifted_costs(lp, d) {
            Some((costs, alpha0, beta0)) => {
                let mut s = Simplex::new(lp, Some(costs), rule)?;
                s.init_cold();
                s.run();
                s.stats.warm_used = true;
                (s, Some((alpha0, beta0)))
            }
            None => {
                let mut s = Simplex::new(lp, None, rule)?;
                s.init_cold();
                s.run();
                (s, None)
            }
        },
        WarmStart::Basis(b) => {
            let mut s = Simplex::new(lp, None, rule)?;
            if s.init_from_basis(lp, b) {
                s.stats.warm_used = true;
            } else {
                s.init_cold();
            }
            s.run();
            (s, None)
        }
        WarmStart::None => {
            let mut s = Simplex::new(lp, None, rule)?;
            s.init_cold();
            s.run();
            (s, None)
        }
    };
    if sol.flow[sol.arc_num..].iter().any(|&f| f > 0) {
        return Err(Error::Infeasible);
    }
    let n_x = lp.n_x();
    let mut duals = DualPotentials {
        alpha: (0..n_x).map(|x| -sol.pi[x]).collect(),
        beta: (0..lp.n_y()).map(|y| sol.pi[n_x + y]).collect(),
    };
    if let Some((a0, b0)) = shift {
        for (a, s) in duals.alpha.iter_mut().zip(a0) {
            *a += s;
        }
        for (b, s) in duals.beta.iter_mut().zip(b0) {
            *b += s;
        }
    }
    let coupling = sol.coupling(lp)?;
    let basis = sol.basis(n_x, lp.n_y());
    sol.stats.elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
    Ok(LocalSolution { coupling, duals, basis, stats: sol.stats })
}

/// Reduced costs for a dual start: `alpha` is lowered by the worst violation
/// of each row so that `c - alpha - beta >= 0` on every arc.
fn shifted_costs(lp: &SparseTransportLP, d: &DualPotentials) -> Option<(Vec<i64>, Vec<i64>, Vec<i64>)> {
    if d.alpha.len() != lp.n_x() || d.beta.len() != lp.n_y() {
        return None;
    }
    let mut alpha = d.alpha.clone();
    let beta = d.beta.clone();
    let arc = |x: usize, y: usize, c: i64| c as i128 - alpha[x] as i128 - beta[y] as i128;
    let mut viol = vec![0i128; lp.n_x()];
    for ((x, y), &c) in lp.arcs.iter().zip(&lp.costs) {
        viol[x] = viol[x].min(arc(x, y, c));
    }
    for &(x, y, c) in &lp.extra {
        viol[x as usize] = viol[x as usize].min(arc(x as usize, y as usize, c));
    }
    for (a, v) in alpha.iter_mut().zip(&viol) {
        *a = i64::try_from(*a as i128 + *v).ok()?;
    }
    let mut costs = Vec::with_capacity(lp.arc_count());
    for ((x, y), &c) in lp.arcs.iter().zip(&lp.costs) {
        costs.push(i64::try_from(c as i128 - alpha[x] as i128 - beta[y] as i128).ok()?);
    }
    for &(x, y, c) in &lp.extra {
        costs.push(i64::try_from(c as i128 - alpha[x as usize] as i128 - beta[y as usize] as i128).ok()?);
    }
    Some((costs, alpha, beta))
}

const UP: i8 = 1;
const DOWN: i8 = -1;
const TREE: i8 = 0;
const LOWER: i8 = 1;
const NONE: usize = usize::MAX;

struct Simplex {
    node_num: usize,
    arc_num: usize,
    source: Vec<u32>,
    target: Vec<u32>,
    cost: Vec<i64>,
    flow: Vec<i64>,
    state: Vec<i8>,
    supply: Vec<i64>,
    art_cost: i64,

    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<i64>,
    dirty_revs: Vec<usize>,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,

    block_size: usize,
    next_arc: usize,
    bland: bool,
    stats: SolverStats,
}

impl Simplex {
    fn new(lp: &SparseTransportLP, costs: Option<Vec<i64>>, rule: PivotRule) -> Result<Self> {
        let n_x = lp.n_x();
        let node_num = n_x + lp.n_y();
        let arc_num = lp.arc_count();
        let all = arc_num + node_num;
        let mut source = Vec::with_capacity(all);
        let mut target = Vec::with_capacity(all);
        for (x, y) in lp.arcs.iter() {
            source.push(x as u32);
            target.push((n_x + y) as u32);
        }
        for &(x, y, _) in &lp.extra {
            source.push(x);
            target.push(n_x as u32 + y);
        }
        let mut cost = costs.unwrap_or_else(|| lp.costs.iter().copied().chain(lp.extra.iter().map(|e| e.2)).collect());
        let max_abs = cost.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0) as i128;
        let art = (max_abs + 1) * (node_num as i128 + 1);
        if art > (i64::MAX / 8) as i128 {
            return Err(Error::Overflow("arc costs too large for the 64-bit network simplex; lower cost_scale".into()));
        }
        let art_cost = art as i64;
        source.resize(all, 0);
        target.resize(all, 0);
        cost.resize(all, 0);
        let mut supply: Vec<i64> = lp.supplies.clone();
        supply.extend(lp.demands.iter().map(|d| -d));
        supply.push(0);
        let block_size = rule.block_size.unwrap_or_else(|| ((arc_num as f64).sqrt().ceil() as usize).max(10)).clamp(1, arc_num.max(1));
        Ok(Simplex {
            node_num,
            arc_num,
            source,
            target,
            cost,
            flow: vec![0; all],
            state: vec![LOWER; all],
            supply,
            art_cost,
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![UP; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![0; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pi: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0,
            block_size,
            next_arc: 0,
            bland: false,
            stats: SolverStats::default(),
        })
    }

    /// Orients the artificial arc of node `u` by the sign of its supply.
    fn set_artificial(&mut self, u: usize) {
        let e = self.arc_num + u;
        let root = self.node_num;
        if self.supply[u] >= 0 {
            self.source[e] = u as u32;
            self.target[e] = root as u32;
            self.cost[e] = 0;
        } else {
            self.source[e] = root as u32;
            self.target[e] = u as u32;
            self.cost[e] = self.art_cost;
        }
    }

    fn init_cold(&mut self) {
        let root = self.node_num;
        for e in 0..self.arc_num {
            self.flow[e] = 0;
            self.state[e] = LOWER;
        }
        for u in 0..self.node_num {
            let e = self.arc_num + u;
            self.set_artificial(u);
            self.parent[u] = root;
            self.pred[u] = e;
            self.thread[u] = u + 1;
            self.rev_thread[u + 1] = u;
            self.succ_num[u] = 1;
            self.last_succ[u] = u;
            self.state[e] = TREE;
            if self.supply[u] >= 0 {
                self.pred_dir[u] = UP;
                self.pi[u] = 0;
                self.flow[e] = self.supply[u];
            } else {
                self.pred_dir[u] = DOWN;
                self.pi[u] = self.art_cost;
                self.flow[e] = -self.supply[u];
            }
        }
        self.parent[root] = NONE;
        self.pred[root] = NONE;
        self.thread[root] = 0;
        self.rev_thread[0] = root;
        self.succ_num[root] = self.node_num + 1;
        self.last_succ[root] = root - 1;
        self.pi[root] = 0;
    }

    /// Installs a stored basis. Returns false (leaving state to be reset by
    /// `init_cold`) if the basis does not fit this arc set.
    fn init_from_basis(&mut self, lp: &SparseTransportLP, b: &Basis) -> bool {
        let n_x = lp.n_x();
        let root = self.node_num;
        if b.n_x != n_x || b.n_y != lp.n_y() || b.links.len() != self.node_num {
            return false;
        }
        let mut extra_pos: HashMap<(u32, u32), usize> = HashMap::new();
        for (k, &(x, y, _)) in lp.extra.iter().enumerate() {
            extra_pos.insert((x, y), lp.arcs.len() + k);
        }
        for e in 0..self.arc_num {
            self.flow[e] = 0;
            self.state[e] = LOWER;
        }
        for u in 0..self.node_num {
            self.set_artificial(u);
            self.flow[self.arc_num + u] = 0;
            self.state[self.arc_num + u] = LOWER;
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.node_num + 1];
        for (u, link) in b.links.iter().enumerate() {
            let p = link.parent as usize;
            let e = match link.arc {
                BasisArc::Artificial => {
                    if p != root {
                        return false;
                    }
                    self.arc_num + u
                }
                BasisArc::Real { x, y } => {
                    let (xn, yn) = (x as usize, n_x + y as usize);
                    if !((u, p) == (xn, yn) || (u, p) == (yn, xn)) {
                        return false;
                    }
                    match lp.arcs.position(x as usize, y as usize).or_else(|| extra_pos.get(&(x, y)).copied()) {
                        Some(e) => e,
                        None => return false,
                    }
                }
            };
            self.parent[u] = p;
            self.pred[u] = e;
            self.pred_dir[u] = if self.source[e] as usize == u { UP } else { DOWN };
            self.state[e] = TREE;
            children[p].push(u);
        }
        self.parent[root] = NONE;
        self.pred[root] = NONE;
        // Preorder thread by iterative DFS.
        let mut order = Vec::with_capacity(self.node_num + 1);
        let mut stack = vec![root];
        let mut seen = vec![false; self.node_num + 1];
        while let Some(u) = stack.pop() {
            if seen[u] {
                return false;
            }
            seen[u] = true;
            order.push(u);
            for &c in children[u].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != self.node_num + 1 {
            return false;
        }
        for w in 0..order.len() {
            let (u, v) = (order[w], order[(w + 1) % order.len()]);
            self.thread[u] = v;
            self.rev_thread[v] = u;
        }
        for &u in order.iter().rev() {
            self.succ_num[u] = 1 + children[u].iter().map(|&c| self.succ_num[c]).sum::<usize>();
            self.last_succ[u] = children[u].last().map_or(u, |&c| self.last_succ[c]);
        }
        // Flows bottom-up.
        let mut net = self.supply.clone();
        for &u in order.iter().skip(1).rev() {
            let e = self.pred[u];
            let f = if self.pred_dir[u] == UP { net[u] } else { -net[u] };
            if f < 0 {
                return false;
            }
            self.flow[e] = f;
            let p = self.parent[u];
            net[p] += net[u];
        }
        // Potentials top-down.
        self.pi[root] = 0;
        for &u in order.iter().skip(1) {
            let e = self.pred[u];
            let p = self.parent[u];
            self.pi[u] = if self.pred_dir[u] == UP { self.pi[p] - self.cost[e] } else { self.pi[p] + self.cost[e] };
        }
        true
    }

    #[inline]
    fn reduced(&self, e: usize) -> i64 {
        self.cost[e] + self.pi[self.source[e] as usize] - self.pi[self.target[e] as usize]
    }

    fn find_entering_arc(&mut self) -> bool {
        let m = self.arc_num;
        if m == 0 {
            return false;
        }
        if self.bland {
            for e in 0..m {
                if self.state[e] == LOWER && self.reduced(e) < 0 {
                    self.in_arc = e;
                    return true;
                }
            }
            return false;
        }
        let mut min = 0i64;
        let mut cnt = self.block_size;
        let start = self.next_arc;
        let mut e = start;
        loop {
            if self.state[e] == LOWER {
                let c = self.reduced(e);
                if c < min {
                    min = c;
                    self.in_arc = e;
                }
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if min < 0 {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
            if e == start {
                break;
            }
        }
        if min < 0 {
            self.next_arc = e;
            return true;
        }
        false
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc] as usize;
        let mut v = self.target[self.in_arc] as usize;
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Chooses the leaving arc; ties resolved to keep the tree strongly feasible.
    fn find_leaving_arc(&mut self) -> bool {
        let first = self.source[self.in_arc] as usize;
        let second = self.target[self.in_arc] as usize;
        self.delta = i64::MAX;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc] as usize;
            while u != self.join {
                self.flow[self.pred[u]] -= self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
            u = self.target[self.in_arc] as usize;
            while u != self.join {
                self.flow[self.pred[u]] += self.pred_dir[u] as i64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = TREE;
        self.state[self.pred[self.u_out]] = LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] as usize { UP } else { DOWN };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);
                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;
                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;
                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;
            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] as usize { UP } else { DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[self.join] == v_in { self.join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if self.join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != self.join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != self.join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - self.pred_dir[self.u_in] as i64 * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) {
        let stall_limit = 10 * self.arc_num.max(1) as u64;
        let mut stalled = 0u64;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                // Unbounded direction; impossible for transport problems.
                break;
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            self.stats.pivots += 1;
            if self.delta == 0 {
                self.stats.degenerate_pivots += 1;
                stalled += 1;
                if stalled > stall_limit {
                    self.bland = true;
                }
            } else {
                stalled = 0;
            }
        }
    }

    fn coupling(&self, lp: &SparseTransportLP) -> Result<SparseCoupling> {
        let n_x = lp.n_x() as u32;
        let entries = (0..self.arc_num)
            .filter(|&e| self.flow[e] > 0)
            .map(|e| (self.source[e] as usize, (self.target[e] - n_x) as usize, self.flow[e]))
            .collect();
        SparseCoupling::from_triplets(lp.n_x(), lp.n_y(), entries)
    }

    fn basis(&self, n_x: usize, n_y: usize) -> Basis {
        let links = (0..self.node_num)
            .map(|u| {
                let e = self.pred[u];
                let arc = if e >= self.arc_num {
                    BasisArc::Artificial
                } else {
                    BasisArc::Real { x: self.source[e], y: self.target[e] - n_x as u32 }
                };
                BasisLink { parent: self.parent[u] as u32, arc }
            })
            .collect();
        Basis { n_x, n_y, links }
    }
}
