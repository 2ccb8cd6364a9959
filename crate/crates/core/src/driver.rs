//! Outer loops: the sparse fixed-point iteration on one scale and the
//! coarse-to-fine multiscale solve.

use std::borrow::Cow;
use std::time::Instant;

use serde::Serialize;

use crate::costs::Metric;
use crate::hierarchy::{build_pair, coarsen_measure, HierarchicalPartition, MultiScaleMeasure, TreeOptions};
use crate::model::{DiscreteMeasure, DualPotentials, Neighbourhood, NeighbourhoodBuilder, ProblemInstance, SparseCoupling};
use crate::netsolver::{solve_local, PivotRule, SparseTransportLP, WarmStart};
use crate::shield::{shield, CandidateScheme, CandidateSets, ShieldContext, ShieldMethod};
use crate::verify;
use crate::{Error, Result};

/// Warm start between iterations of one level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmPolicy {
    #[default]
    Basis,
    Duals,
    None,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Miss-set method at the finest layer. Coarse layers always use the tree.
    pub method: ShieldMethod,
    /// Candidate scheme at the finest layer; `None` picks the default for the measure.
    /// Coarse layers use `k` nearest cells (`k` from this scheme if it is `KNearest`).
    pub candidates: Option<CandidateScheme>,
    pub warm: WarmPolicy,
    pub pivot: PivotRule,
    pub max_iter: usize,
    /// Scan all pairs for dual feasibility at the end.
    pub certify: bool,
    /// Record every coupling and neighbourhood of the run.
    pub keep_history: bool,
    pub tree: TreeOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: ShieldMethod::Tree,
            candidates: None,
            warm: WarmPolicy::Basis,
            pivot: PivotRule::default(),
            max_iter: 1000,
            certify: false,
            keep_history: false,
            tree: TreeOptions::default(),
        }
    }
}

/// Statistics of one level.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LevelReport {
    pub k: usize,
    pub iters: usize,
    pub objectives: Vec<i128>,
    #[serde(rename = "N_sizes")]
    pub n_sizes: Vec<usize>,
    pub psi_hat_calls: u64,
    pub pivots: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_solve_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_shield_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub n_x: usize,
    pub n_y: usize,
    pub dim: usize,
    pub cost: crate::costs::CostSpec,
    pub mass_scale: i64,
    pub cost_scale: i64,
    pub fingerprint: String,
}

impl ProblemSummary {
    pub fn of(p: &ProblemInstance) -> Self {
        ProblemSummary {
            n_x: p.n_x(),
            n_y: p.n_y(),
            dim: p.mu.dim,
            cost: p.cost.clone(),
            mass_scale: p.mu.mass_scale,
            cost_scale: p.cost_scale,
            fingerprint: format!("{:016x}", p.fingerprint()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub problem: ProblemSummary,
    /// Coarsest level first.
    pub levels: Vec<LevelReport>,
    pub final_objective: i128,
    pub certified: bool,
}

impl SolveReport {
    /// Drops wall-clock fields so that reports of equal runs compare equal.
    pub fn strip_timings(&mut self) {
        for l in &mut self.levels {
            l.t_solve_ms = None;
            l.t_shield_ms = None;
        }
    }

    pub fn finest(&self) -> Option<&LevelReport> {
        self.levels.last()
    }

    pub fn total_pivots(&self) -> u64 {
        self.levels.iter().map(|l| l.pivots).sum()
    }

    /// Largest neighbourhood solved at the finest level.
    pub fn max_n_finest(&self) -> usize {
        self.finest().and_then(|l| l.n_sizes.iter().copied().max()).unwrap_or(0)
    }
}

/// One iterate: the coupling and the neighbourhood shielding it.
#[derive(Clone, Debug)]
pub struct HistoryEntry {
    pub layer: usize,
    pub coupling: SparseCoupling,
    pub neighbourhood: Neighbourhood,
}

pub struct SparseOutcome {
    pub coupling: SparseCoupling,
    pub duals: DualPotentials,
    /// Shielding neighbourhood of `coupling`.
    pub neighbourhood: Neighbourhood,
    pub level: LevelReport,
}

/// Fixed-point iteration on one scale: solve on `N`, shield the result,
/// repeat until the objective stops changing.
///
/// The returned duals are feasible for every pair, not only for `N`.
pub fn solve_sparse(
    ctx: &ShieldContext,
    n1: Neighbourhood,
    opts: &SolveOptions,
    mut history: Option<&mut Vec<HistoryEntry>>,
) -> Result<SparseOutcome> {
    let p = ctx.problem;
    let mut level = LevelReport { k: ctx.scale, ..Default::default() };
    let (mut t_solve, mut t_shield) = (0.0, 0.0);
    let trivial = p.n_x() == 1 || p.n_y() == 1;
    let mut n = n1;
    let mut prev: Option<crate::netsolver::LocalSolution> = None;
    loop {
        if level.iters >= opts.max_iter {
            return Err(Error::Watchdog(opts.max_iter));
        }
        level.n_sizes.push(n.len());
        let t0 = Instant::now();
        let mut lp = SparseTransportLP::from_problem(p, n)?;
        let sol = match (&prev, opts.warm) {
            (Some(pr), WarmPolicy::Basis) => {
                lp.repair_for(&pr.basis, |x, y| p.cost_units(x, y));
                solve_local(&lp, WarmStart::Basis(&pr.basis), opts.pivot)?
            }
            (Some(pr), WarmPolicy::Duals) => solve_local(&lp, WarmStart::Duals(&pr.duals), opts.pivot)?,
            _ => solve_local(&lp, WarmStart::None, opts.pivot)?,
        };
        t_solve += t0.elapsed().as_secs_f64() * 1e3;
        let obj = sol.objective(&lp);
        level.objectives.push(obj);
        level.iters += 1;
        level.pivots += sol.stats.pivots;

        let t1 = Instant::now();
        let (next, st) = shield(ctx, &sol.coupling)?;
        t_shield += t1.elapsed().as_secs_f64() * 1e3;
        level.psi_hat_calls += st.psi_hat_calls;
        if let Some(h) = history.as_deref_mut() {
            h.push(HistoryEntry { layer: ctx.scale, coupling: sol.coupling.clone(), neighbourhood: next.clone() });
        }
        let m = level.objectives.len();
        let done = trivial || (m >= 2 && level.objectives[m - 1] == level.objectives[m - 2]);
        n = next;
        if done {
            level.t_solve_ms = Some(t_solve);
            level.t_shield_ms = Some(t_shield);
            return Ok(SparseOutcome { coupling: sol.coupling, duals: sol.duals, neighbourhood: n, level });
        }
        prev = Some(sol);
    }
}

/// Trees and per-layer masses of a problem.
pub struct MultiScaleSetup<'a> {
    pub problem: &'a ProblemInstance,
    pub tree_x: HierarchicalPartition,
    pub tree_y: HierarchicalPartition,
    pub mass_x: MultiScaleMeasure,
    pub mass_y: MultiScaleMeasure,
}

impl<'a> MultiScaleSetup<'a> {
    pub fn new(problem: &'a ProblemInstance, opts: &TreeOptions) -> Result<Self> {
        let (tx, ty) = build_pair(&problem.mu, &problem.nu, problem.cost.metric(), opts)?;
        Self::from_trees(problem, tx, ty)
    }

    pub fn from_trees(problem: &'a ProblemInstance, tree_x: HierarchicalPartition, tree_y: HierarchicalPartition) -> Result<Self> {
        if tree_x.depth() != tree_y.depth() {
            return Err(Error::Invalid(format!("tree depths differ ({} vs {})", tree_x.depth(), tree_y.depth())));
        }
        if tree_x.layer_len(0) != problem.n_x() || tree_y.layer_len(0) != problem.n_y() {
            return Err(Error::Invalid("trees do not match the problem".into()));
        }
        let mass_x = coarsen_measure(&problem.mu.masses, &tree_x)?;
        let mass_y = coarsen_measure(&problem.nu.masses, &tree_y)?;
        Ok(MultiScaleSetup { problem, tree_x, tree_y, mass_x, mass_y })
    }

    /// Index of the root layer.
    pub fn depth(&self) -> usize {
        self.tree_x.depth()
    }

    /// The problem between the cells of layer `k`, located at their
    /// representatives, without the pairwise noise term for `k > 0`.
    pub fn problem_at(&self, k: usize) -> Result<Cow<'a, ProblemInstance>> {
        if k == 0 {
            return Ok(Cow::Borrowed(self.problem));
        }
        let p = self.problem;
        let mk = |t: &HierarchicalPartition, m: &MultiScaleMeasure| {
            DiscreteMeasure::new(p.mu.dim, t.layer_points(k).to_vec(), m.layers[k].clone(), p.mu.mass_scale)
        };
        let mu = mk(&self.tree_x, &self.mass_x)?;
        let nu = mk(&self.tree_y, &self.mass_y)?;
        Ok(Cow::Owned(ProblemInstance::new(mu, nu, p.cost.without_noise(), p.cost_scale)?))
    }

    /// `N1` at layer `k - 1`: children products over the support of `pi` at layer `k`.
    pub fn refine(&self, k: usize, pi: &SparseCoupling) -> Result<Neighbourhood> {
        let (tx, ty) = (&self.tree_x, &self.tree_y);
        let mut b = NeighbourhoodBuilder::new(tx.layer_len(k - 1), ty.layer_len(k - 1));
        let mut row = Vec::new();
        for x in 0..tx.layer_len(k - 1) {
            row.clear();
            for &py in pi.row(tx.parent(k - 1, x)).0 {
                row.extend(ty.children(k, py as usize).map(|c| c as u32));
            }
            row.sort_unstable();
            row.dedup();
            b.push_row(&row)?;
        }
        Ok(b.finish())
    }

    /// Candidate sets at layer `k`.
    pub fn candidates_at(&self, k: usize, scheme: Option<&CandidateScheme>) -> Result<CandidateSets> {
        let mu = &self.problem.mu;
        let fallback = CandidateScheme::KNearest(2 * mu.dim + 2);
        let s = match (k, scheme) {
            (0, Some(s)) => s.clone(),
            (0, None) => CandidateScheme::default_for(mu),
            (_, Some(CandidateScheme::KNearest(n))) => CandidateScheme::KNearest(*n),
            _ => fallback,
        };
        s.build(self.tree_x.layer_points(k), mu.dim, Some((&self.tree_x, k)))
    }
}

pub struct MultiScaleOutcome {
    pub coupling: SparseCoupling,
    pub duals: DualPotentials,
    /// Shielding neighbourhood of the final coupling.
    pub neighbourhood: Neighbourhood,
    pub report: SolveReport,
    pub history: Vec<HistoryEntry>,
}

/// Coarse-to-fine solve: dense at the root layer, then one sparse
/// iteration per finer layer seeded by the refined support.
pub fn solve_multiscale(problem: &ProblemInstance, opts: &SolveOptions) -> Result<MultiScaleOutcome> {
    let setup = MultiScaleSetup::new(problem, &opts.tree)?;
    solve_multiscale_with(&setup, opts)
}

pub fn solve_multiscale_with(setup: &MultiScaleSetup, opts: &SolveOptions) -> Result<MultiScaleOutcome> {
    let problem = setup.problem;
    if opts.method == ShieldMethod::Grid && problem.cost.metric() == Metric::Sphere {
        return Err(Error::Invalid("grid shielding needs a Euclidean cost".into()));
    }
    let top = setup.depth();
    let mut history = Vec::new();
    let mut levels = Vec::new();

    let pk = setup.problem_at(top)?;
    let t0 = Instant::now();
    let lp = SparseTransportLP::from_problem(&pk, Neighbourhood::full(pk.n_x(), pk.n_y()))?;
    let sol = solve_local(&lp, WarmStart::None, opts.pivot)?;
    levels.push(LevelReport {
        k: top,
        iters: 1,
        objectives: vec![sol.objective(&lp)],
        n_sizes: vec![lp.arc_count()],
        psi_hat_calls: 0,
        pivots: sol.stats.pivots,
        t_solve_ms: Some(t0.elapsed().as_secs_f64() * 1e3),
        t_shield_ms: Some(0.0),
    });
    let mut pi = sol.coupling;
    let mut duals = sol.duals;
    let mut last_n = lp.arcs;
    for k in (0..top).rev() {
        let pk = setup.problem_at(k)?;
        let n1 = setup.refine(k + 1, &pi)?;
        let cands = setup.candidates_at(k, opts.candidates.as_ref())?;
        let method = if k == 0 { opts.method } else { ShieldMethod::Tree };
        let ctx = ShieldContext::new(&pk, &setup.tree_y, k, &cands, method)?;
        let out = solve_sparse(&ctx, n1, opts, opts.keep_history.then_some(&mut history))?;
        levels.push(out.level);
        pi = out.coupling;
        duals = out.duals;
        last_n = out.neighbourhood;
    }
    let final_objective = problem.objective(&pi);
    let certified = opts.certify && verify::check_full_duals(problem, &duals).is_ok() && verify::check_local_duals(problem, &Neighbourhood::support_of(&pi), &pi, &duals).is_ok();
    let report = SolveReport { problem: ProblemSummary::of(problem), levels, final_objective, certified };
    Ok(MultiScaleOutcome { coupling: pi, duals, neighbourhood: last_n, report, history })
}
