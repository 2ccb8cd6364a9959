//! Checks and reference solves.
//!
//! All comparisons are exact integer arithmetic on quantized costs.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::costs::{dist2, geodesic, Metric};
use crate::driver::SolveOptions;
use crate::hierarchy::HierarchicalPartition;
use crate::model::{extract_map, DualPotentials, Neighbourhood, ProblemInstance, SparseCoupling};
use crate::netsolver::{solve_local, PivotRule, SparseTransportLP, WarmStart};
use crate::shield::{shield, CandidateScheme, CandidateSets, ShieldContext};
use crate::{Error, Result};

pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// A violated condition, located at a pair when there is one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub x: Option<usize>,
    pub y: Option<usize>,
    pub reason: String,
}

impl Witness {
    fn at(x: usize, y: usize, reason: impl Into<String>) -> Self {
        Witness { x: Some(x), y: Some(y), reason: reason.into() }
    }
}

impl std::fmt::Display for Witness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.x, self.y) {
            (Some(x), Some(y)) => write!(f, "{} at ({x}, {y})", self.reason),
            _ => f.write_str(&self.reason),
        }
    }
}

pub type Check = std::result::Result<(), Witness>;

/// Solves over the full product with the network simplex.
pub fn dense_solve(problem: &ProblemInstance, cap: usize) -> Result<(SparseCoupling, DualPotentials)> {
    let arcs = problem.n_x().saturating_mul(problem.n_y());
    if arcs > cap {
        return Err(Error::DenseCap { arcs, cap });
    }
    let lp = SparseTransportLP::from_problem(problem, Neighbourhood::full(problem.n_x(), problem.n_y()))?;
    let sol = solve_local(&lp, WarmStart::None, PivotRule::default())?;
    Ok((sol.coupling, sol.duals))
}

#[inline]
fn reduced(problem: &ProblemInstance, d: &DualPotentials, x: usize, y: usize) -> i128 {
    problem.cost_units(x, y) as i128 - d.alpha[x] as i128 - d.beta[y] as i128
}

fn check_sizes(problem: &ProblemInstance, d: &DualPotentials) -> Check {
    if d.alpha.len() != problem.n_x() || d.beta.len() != problem.n_y() {
        return Err(Witness { x: None, y: None, reason: "dual vector lengths do not match the problem".into() });
    }
    Ok(())
}

/// Dual feasibility on `n` and complementary slackness on the support of `pi`.
pub fn check_local_duals(problem: &ProblemInstance, n: &Neighbourhood, pi: &SparseCoupling, duals: &DualPotentials) -> Check {
    check_sizes(problem, duals)?;
    for (x, y) in n.iter() {
        if reduced(problem, duals, x, y) < 0 {
            return Err(Witness::at(x, y, "dual constraint violated"));
        }
    }
    for (x, y, _) in pi.iter() {
        if !n.contains(x, y) {
            return Err(Witness::at(x, y, "support outside neighbourhood"));
        }
        if reduced(problem, duals, x, y) != 0 {
            return Err(Witness::at(x, y, "complementary slackness violated"));
        }
    }
    Ok(())
}

/// Dual feasibility on every pair.
pub fn check_full_duals(problem: &ProblemInstance, duals: &DualPotentials) -> Check {
    check_sizes(problem, duals)?;
    for x in 0..problem.n_x() {
        for y in 0..problem.n_y() {
            if reduced(problem, duals, x, y) < 0 {
                return Err(Witness::at(x, y, "dual constraint violated"));
            }
        }
    }
    Ok(())
}

/// Quantized costs as a dense row-major matrix.
fn cost_matrix(problem: &ProblemInstance) -> Result<Vec<i64>> {
    let arcs = problem.n_x().saturating_mul(problem.n_y());
    if arcs > DEFAULT_DENSE_CAP {
        return Err(Error::DenseCap { arcs, cap: DEFAULT_DENSE_CAP });
    }
    let mut q = Vec::with_capacity(arcs);
    for x in 0..problem.n_x() {
        q.extend((0..problem.n_y()).map(|y| problem.cost_units(x, y)));
    }
    Ok(q)
}

/// Exhaustive check that `n` is a shielding neighbourhood of `pi`: every pair
/// outside `n` is shielded by some support pair `(xs, ys)` with `(xa, ys)` in `n`.
pub fn check_shielding(problem: &ProblemInstance, pi: &SparseCoupling, n: &Neighbourhood) -> Result<Check> {
    let q = cost_matrix(problem)?;
    let ny = problem.n_y();
    if !n.contains_support(pi) {
        return Ok(Err(Witness { x: None, y: None, reason: "support outside neighbourhood".into() }));
    }
    let cols = pi.columns();
    let mut cands: Vec<(usize, i128)> = Vec::new();
    let mut in_row = vec![false; ny];
    for xa in 0..problem.n_x() {
        cands.clear();
        for &ys in n.row(xa) {
            in_row[ys as usize] = true;
            for &xs in &cols[ys as usize] {
                let xs = xs as usize;
                cands.push((xs, q[xs * ny + ys as usize] as i128 - q[xa * ny + ys as usize] as i128));
            }
        }
        let mut first = 0;
        for yb in 0..ny {
            if in_row[yb] {
                continue;
            }
            let qa = q[xa * ny + yb] as i128;
            let hit = (0..cands.len()).map(|k| (first + k) % cands.len()).find(|&i| {
                let (xs, fixed) = cands[i];
                qa - q[xs * ny + yb] as i128 + fixed > 0
            });
            match hit {
                Some(i) => first = i,
                None => return Ok(Err(Witness::at(xa, yb, "pair not shielded"))),
            }
        }
        for &ys in n.row(xa) {
            in_row[ys as usize] = false;
        }
    }
    Ok(Ok(()))
}

/// Support pairs `(x_2, y_2), …, (x_n, y_n)` forming a short-cut for `(x_1, y_B)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShortCut {
    pub xa: usize,
    pub yb: usize,
    pub path: Vec<(usize, usize)>,
}

impl ShortCut {
    /// Left and right side of the short-cut inequality, in cost units:
    /// `c(x_1, y_B)` and `c(x_1, y_2) + Σ [c(x_i, y_{i+1}) - c(x_i, y_i)]`
    /// with `y_{n+1} = y_B`.
    pub fn sides(&self, problem: &ProblemInstance) -> (i128, i128) {
        let q = |x: usize, y: usize| problem.cost_units(x, y) as i128;
        let lhs = q(self.xa, self.yb);
        let mut rhs = 0i128;
        let mut prev_x = self.xa;
        for &(x, y) in &self.path {
            rhs += q(prev_x, y);
            rhs -= q(x, y);
            prev_x = x;
        }
        rhs += q(prev_x, self.yb);
        (lhs, rhs)
    }

    /// Links `(x_i, y_{i+1})` including the last one to `y_B`.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.path.len() + 1);
        let mut prev_x = self.xa;
        for &(x, y) in &self.path {
            out.push((prev_x, y));
            prev_x = x;
        }
        out.push((prev_x, self.yb));
        out
    }
}

fn point_distance(problem: &ProblemInstance, a: usize, b: usize) -> f64 {
    let (pa, pb) = (problem.mu.point(a), problem.mu.point(b));
    match problem.cost.metric() {
        Metric::Euclidean => dist2(pa, pb).sqrt(),
        Metric::Sphere => geodesic(pa, pb),
    }
}

/// Walks from `xa` towards `y_B` along support pairs that shield the current
/// point from `y_B`, until a link into `y_B` lies in `n`. The result is checked
/// against the short-cut inequality before it is returned.
pub fn build_shortcut(problem: &ProblemInstance, pi: &SparseCoupling, n: &Neighbourhood, xa: usize, yb: usize) -> Result<ShortCut> {
    if n.contains(xa, yb) {
        return Err(Error::PairInsideN);
    }
    let cols = pi.columns();
    let q = |x: usize, y: usize| problem.cost_units(x, y) as i128;
    let mut visited = std::collections::HashSet::new();
    let mut path = Vec::new();
    let mut cur = xa;
    while !n.contains(cur, yb) {
        let mut best: Option<(f64, usize, usize)> = None;
        for &ys in n.row(cur) {
            let ys = ys as usize;
            for &xs in &cols[ys] {
                let xs = xs as usize;
                if q(cur, yb) - q(xs, yb) > q(cur, ys) - q(xs, ys) {
                    let d = point_distance(problem, cur, xs);
                    let better = match best {
                        None => true,
                        Some((bd, bx, by)) => d < bd || (d == bd && (xs, ys) < (bx, by)),
                    };
                    if better {
                        best = Some((d, xs, ys));
                    }
                }
            }
        }
        let (_, xs, ys) = best.ok_or_else(|| Error::Shortcut(format!("no support pair shields x={cur} from y={yb}")))?;
        if !visited.insert((xs, ys)) {
            return Err(Error::Shortcut(format!("cycle at support pair ({xs}, {ys})")));
        }
        path.push((xs, ys));
        cur = xs;
    }
    let sc = ShortCut { xa, yb, path };
    if sc.links().iter().any(|&(x, y)| !n.contains(x, y)) || sc.path.iter().any(|&(x, y)| pi.mass(x, y) == 0) {
        return Err(Error::Shortcut("path leaves the neighbourhood".into()));
    }
    let (lhs, rhs) = sc.sides(problem);
    if lhs < rhs {
        return Err(Error::Shortcut(format!("short-cut inequality fails: {lhs} < {rhs}")));
    }
    Ok(sc)
}

/// Empirical regularity constants of a coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegularityDiagnostics {
    /// Largest observed `|t(x1) - t(x2)| / |x1 - x2|`.
    pub measured_l: f64,
    /// Largest distance from a point to one of its candidates.
    pub measured_d: f64,
    /// Smallest angular coverage cosine of a candidate set, floored at 0.
    pub measured_q: f64,
}

const MAX_PAIRS: usize = 100_000;

pub fn measure_regularity(problem: &ProblemInstance, pi: &SparseCoupling, cands: &CandidateSets) -> Result<RegularityDiagnostics> {
    let t = extract_map(pi)?;
    let n = problem.n_x();
    let dy = |a: usize, b: usize| {
        let (pa, pb) = (problem.nu.point(a), problem.nu.point(b));
        match problem.cost.metric() {
            Metric::Euclidean => dist2(pa, pb).sqrt(),
            Metric::Sphere => geodesic(pa, pb),
        }
    };
    let ratio = |a: usize, b: usize| {
        let d = point_distance(problem, a, b);
        if d > 0.0 {
            dy(t[a] as usize, t[b] as usize) / d
        } else {
            0.0
        }
    };
    let mut l: f64 = 0.0;
    if n * (n - 1) / 2 <= MAX_PAIRS {
        for a in 0..n {
            for b in a + 1..n {
                l = l.max(ratio(a, b));
            }
        }
    } else {
        let mut rng = SplitMix64::seed_from_u64(0x5eed);
        for _ in 0..MAX_PAIRS {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            l = l.max(ratio(a, b));
        }
    }
    let mut d: f64 = 0.0;
    let mut q = f64::INFINITY;
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for x in 0..n {
        dirs.clear();
        let px = problem.mu.point(x);
        for &s in cands.get(x) {
            let s = s as usize;
            d = d.max(point_distance(problem, x, s));
            let mut v: Vec<f64> = problem.mu.point(s).iter().zip(px).map(|(a, b)| a - b).collect();
            if problem.cost.metric() == Metric::Sphere {
                let r = crate::costs::dot(&v, px);
                v.iter_mut().zip(px).for_each(|(c, p)| *c -= r * p);
            }
            let nv = crate::costs::dot(&v, &v).sqrt();
            if nv > 0.0 {
                dirs.push(v.iter().map(|c| c / nv).collect());
            }
        }
        let cov = if problem.cost.metric() == Metric::Sphere { sphere_coverage(px, &dirs) } else { coverage(problem.mu.dim, &dirs) };
        q = q.min(cov.max(0.0));
    }
    if !q.is_finite() {
        q = 0.0;
    }
    Ok(RegularityDiagnostics { measured_l: l, measured_d: d, measured_q: q })
}

/// `min_v max_s <v, u_s>` over unit vectors `v`, for unit directions `u_s`.
fn coverage(dim: usize, dirs: &[Vec<f64>]) -> f64 {
    if dirs.is_empty() {
        return -1.0;
    }
    match dim {
        1 => {
            let pos = dirs.iter().any(|u| u[0] > 0.0);
            let neg = dirs.iter().any(|u| u[0] < 0.0);
            if pos && neg {
                1.0
            } else {
                -1.0
            }
        }
        2 => {
            let ang: Vec<f64> = dirs.iter().map(|u| u[1].atan2(u[0])).collect();
            coverage_angles(ang)
        }
        _ => coverage_3d(dirs),
    }
}

fn coverage_angles(mut ang: Vec<f64>) -> f64 {
    ang.sort_by(f64::total_cmp);
    let mut gap: f64 = ang[0] + std::f64::consts::TAU - ang[ang.len() - 1];
    for w in ang.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    (gap / 2.0).cos()
}

fn sphere_coverage(p: &[f64], dirs: &[Vec<f64>]) -> f64 {
    if dirs.is_empty() {
        return -1.0;
    }
    // Orthonormal frame of the tangent plane.
    let a = if p[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let r = crate::costs::dot(&a, p);
    let mut e1: Vec<f64> = a.iter().zip(p).map(|(ai, pi)| ai - r * pi).collect();
    let n1 = crate::costs::dot(&e1, &e1).sqrt();
    e1.iter_mut().for_each(|c| *c /= n1);
    let e2 = [p[1] * e1[2] - p[2] * e1[1], p[2] * e1[0] - p[0] * e1[2], p[0] * e1[1] - p[1] * e1[0]];
    coverage_angles(dirs.iter().map(|u| crate::costs::dot(u, &e2).atan2(crate::costs::dot(u, &e1))).collect())
}

fn coverage_3d(dirs: &[Vec<f64>]) -> f64 {
    let cross = |a: &[f64], b: &[f64]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let f = |v: &[f64]| dirs.iter().map(|u| crate::costs::dot(u, v)).fold(f64::NEG_INFINITY, f64::max);
    let mut best = f64::INFINITY;
    let mut try_v = |v: [f64; 3]| {
        let n = crate::costs::dot(&v, &v).sqrt();
        if n > 1e-12 {
            for s in [1.0, -1.0] {
                let u = [s * v[0] / n, s * v[1] / n, s * v[2] / n];
                best = best.min(f(&u));
            }
        }
    };
    for u in dirs {
        try_v([u[0], u[1], u[2]]);
    }
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            try_v(cross(&dirs[i], &dirs[j]));
            for k in j + 1..dirs.len() {
                let a: Vec<f64> = dirs[j].iter().zip(&dirs[i]).map(|(p, q)| p - q).collect();
                let b: Vec<f64> = dirs[k].iter().zip(&dirs[i]).map(|(p, q)| p - q).collect();
                try_v(cross(&a, &b));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum CertificateKind {
    LocalOptimal { n_size: usize },
    GloballyOptimal,
    ShieldingValid,
    ShortCutFound { path: Vec<(usize, usize)> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    #[serde(flatten)]
    pub kind: CertificateKind,
    pub problem: String,
    pub objective: i128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

/// Re-certifies a coupling: marginals, then a local solve on its shielding
/// neighbourhood (checked exhaustively when small enough), then local and
/// global dual checks.
///
/// The outer error covers malformed input (including violated marginals);
/// the inner one reports a coupling that is not optimal.
pub fn certify_coupling(problem: &ProblemInstance, pi: &SparseCoupling, opts: &SolveOptions) -> Result<std::result::Result<Certificate, Witness>> {
    if pi.n_x != problem.n_x() || pi.n_y != problem.n_y() {
        return Err(Error::Invalid("coupling size does not match the problem".into()));
    }
    pi.check_marginals(&problem.mu.masses, &problem.nu.masses)?;
    let metric = problem.cost.metric();
    let tree_y = HierarchicalPartition::for_measure(&problem.nu, metric, &opts.tree)?;
    let scheme = opts.candidates.clone().unwrap_or_else(|| CandidateScheme::default_for(&problem.mu));
    let cands = match scheme {
        CandidateScheme::KNearest(_) => {
            let tree_x = HierarchicalPartition::for_measure(&problem.mu, metric, &opts.tree)?;
            scheme.build(&problem.mu.points, problem.mu.dim, Some((&tree_x, 0)))?
        }
        _ => scheme.build(&problem.mu.points, problem.mu.dim, None)?,
    };
    let ctx = ShieldContext::new(problem, &tree_y, 0, &cands, opts.method)?;
    let (n, _) = shield(&ctx, pi)?;
    if problem.n_x().saturating_mul(problem.n_y()) <= DEFAULT_DENSE_CAP {
        if let Err(w) = check_shielding(problem, pi, &n)? {
            return Ok(Err(w));
        }
    }
    let n_size = n.len();
    let lp = SparseTransportLP::from_problem(problem, n)?;
    let sol = solve_local(&lp, WarmStart::None, opts.pivot)?;
    let objective = problem.objective(pi);
    let local = sol.objective(&lp);
    if local < objective {
        return Ok(Err(Witness { x: None, y: None, reason: format!("objective {objective} improvable to {local}") }));
    }
    if let Err(w) = check_local_duals(problem, &lp.arcs, pi, &sol.duals) {
        return Ok(Err(w));
    }
    let fingerprint = format!("{:016x}", problem.fingerprint());
    let kind = match check_full_duals(problem, &sol.duals) {
        Ok(()) => CertificateKind::GloballyOptimal,
        Err(w) => {
            return Ok(Ok(Certificate { kind: CertificateKind::LocalOptimal { n_size }, problem: fingerprint, objective, witness: Some(w) }));
        }
    };
    Ok(Ok(Certificate { kind, problem: fingerprint, objective, witness: None }))
}
