//! `otshield`: generate measures, solve, verify and benchmark.
//!
//! Exit codes: 0 ok, 1 internal failure, 2 usage, 3 I/O or bad input file,
//! 4 infeasible, 5 verification failure.

mod bench;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use otshield::costs::CostSpec;
use otshield::driver::{solve_multiscale, LevelReport, ProblemSummary, SolveOptions, SolveReport, WarmPolicy};
use otshield::gen::{gen_grid_measure, gen_sphere_measure, Mask};
use otshield::hierarchy::TreeOptions;
use otshield::io;
use otshield::model::{DiscreteMeasure, Neighbourhood, ProblemInstance, SparseCoupling, DEFAULT_COST_SCALE, DEFAULT_MASS_SCALE};
use otshield::netsolver::{solve_local, PivotRule, SparseTransportLP, WarmStart};
use otshield::shield::{CandidateScheme, ShieldMethod};
use otshield::verify::{certify_coupling, check_full_duals, CertificateKind, Witness, DEFAULT_DENSE_CAP};
use otshield::Error;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }

    fn input(path: &Path, e: Error) -> Self {
        match e {
            Error::Invalid(m) if m == "mass scales differ" => CliError { code: 4, msg: "infeasible: total masses of mu and nu differ".into() },
            e => CliError { code: 3, msg: format!("{}: {e}", path.display()) },
        }
    }

    fn verification(msg: impl Into<String>) -> Self {
        CliError { code: 5, msg: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Parse(_) => 3,
            Error::Infeasible => 4,
            Error::Watchdog(_) | Error::Shortcut(_) => 1,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "otshield", version, about = "Exact optimal transport via shielding neighbourhoods")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded test measure.
    Gen(GenArgs),
    /// Solve a transport problem and write the coupling and a JSON report.
    Solve(SolveArgs),
    /// Re-certify a coupling file against a problem.
    Verify(VerifyArgs),
    /// Run a benchmark sweep and write per-run metrics as CSV.
    Bench(bench::BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GenKind {
    Grid,
    Sphere,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "grid")]
    kind: GenKind,
    /// Grid shape, e.g. 32x32.
    #[arg(long)]
    size: Option<String>,
    /// Number of sphere points.
    #[arg(long, default_value_t = 512)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian bumps (grids) or pseudo-Gaussians (sphere).
    #[arg(long, default_value_t = 3)]
    gaussians: usize,
    /// halfplane or disc.
    #[arg(long)]
    mask: Option<Mask>,
    #[arg(long, default_value_t = DEFAULT_MASS_SCALE)]
    mass_scale: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CostFamily {
    Sqeucl,
    Peucl,
    Sphere,
}

#[derive(Args, Clone)]
pub struct CostArgs {
    #[arg(long, value_enum, default_value = "sqeucl")]
    pub cost: CostFamily,
    /// Exponent for peucl.
    #[arg(long)]
    pub p: Option<f64>,
    /// Noise amplitude (sqeucl only).
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Lipschitz field amplitude (sqeucl only).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long, default_value_t = DEFAULT_COST_SCALE)]
    pub cost_scale: i64,
}

impl CostArgs {
    pub fn spec(&self) -> CliResult<CostSpec> {
        let noisy = self.eta != 0.0 || self.lambda != 0.0;
        if noisy && self.cost != CostFamily::Sqeucl {
            return Err(CliError::usage("--eta/--lambda need --cost sqeucl"));
        }
        if self.p.is_some() && self.cost != CostFamily::Peucl {
            return Err(CliError::usage("--p needs --cost peucl"));
        }
        Ok(match self.cost {
            CostFamily::Sqeucl if noisy => CostSpec::noisy(self.eta, self.lambda, self.noise_seed),
            CostFamily::Sqeucl => CostSpec::SqEuclidean,
            CostFamily::Peucl => CostSpec::PEuclidean { p: self.p.ok_or_else(|| CliError::usage("--cost peucl needs --p"))? },
            CostFamily::Sphere => CostSpec::SphereSqGeodesic,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShieldKind {
    Grid,
    Tree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WarmKind {
    Basis,
    Dual,
    None,
}

impl From<WarmKind> for WarmPolicy {
    fn from(w: WarmKind) -> Self {
        match w {
            WarmKind::Basis => WarmPolicy::Basis,
            WarmKind::Dual => WarmPolicy::Duals,
            WarmKind::None => WarmPolicy::None,
        }
    }
}

#[derive(Args, Clone)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "tree")]
    pub shield: ShieldKind,
    /// axes or knn:<k>. Defaults to axes on grids, knn otherwise.
    #[arg(long)]
    pub candidates: Option<String>,
    /// Number of coarse layers, root included.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, value_enum, default_value = "basis")]
    pub warm: WarmKind,
}

impl SolverArgs {
    pub fn options(&self, mu: &DiscreteMeasure) -> CliResult<SolveOptions> {
        let candidates = match self.candidates.as_deref() {
            None => None,
            Some(s) => Some(parse_candidates(s, mu)?),
        };
        Ok(SolveOptions {
            method: match self.shield {
                ShieldKind::Grid => ShieldMethod::Grid,
                ShieldKind::Tree => ShieldMethod::Tree,
            },
            candidates,
            warm: self.warm.into(),
            tree: TreeOptions { depth: self.depth, ..TreeOptions::default() },
            ..SolveOptions::default()
        })
    }
}

fn parse_candidates(s: &str, mu: &DiscreteMeasure) -> CliResult<CandidateScheme> {
    if s == "axes" {
        let shape = mu.grid_shape.clone().ok_or_else(|| CliError::usage("--candidates axes needs grid measures"))?;
        return Ok(CandidateScheme::GridAxes { shape });
    }
    match s.strip_prefix("knn:").map(str::parse::<usize>) {
        Some(Ok(k)) if k >= 1 => Ok(CandidateScheme::KNearest(k)),
        _ => Err(CliError::usage(format!("bad --candidates '{s}', expected axes or knn:<k>"))),
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Solve over all pairs instead of the multiscale scheme.
    #[arg(long)]
    dense: bool,
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
    /// Scan all pairs for dual feasibility at the end.
    #[arg(long)]
    certify: bool,
    /// Include wall-clock fields in the report.
    #[arg(long)]
    timings: bool,
    /// Output coupling (.cpl).
    #[arg(long)]
    out: PathBuf,
    /// Report path; defaults to the coupling path with a .json extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    #[arg(long)]
    coupling: PathBuf,
    #[command(flatten)]
    cost: CostArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the certificate here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_shape(s: &str) -> CliResult<Vec<usize>> {
    s.split('x')
        .map(|t| t.trim().parse::<usize>().map_err(|_| CliError::usage(format!("bad size '{s}', expected e.g. 32x32"))))
        .collect()
}

pub fn load_problem(mu: &Path, nu: &Path, cost: &CostArgs) -> CliResult<ProblemInstance> {
    let spec = cost.spec()?;
    let a = io::read_measure(mu).map_err(|e| CliError::input(mu, e))?;
    let b = io::read_measure(nu).map_err(|e| CliError::input(nu, e))?;
    ProblemInstance::new(a, b, spec, cost.cost_scale).map_err(|e| match e {
        Error::Invalid(_) | Error::DimensionMismatch { .. } | Error::Overflow(_) => CliError::input(mu, e),
        e => e.into(),
    })
}

fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let m = match a.kind {
        GenKind::Grid => {
            let size = a.size.as_deref().ok_or_else(|| CliError::usage("--kind grid needs --size"))?;
            gen_grid_measure(&parse_shape(size)?, a.seed, a.gaussians, a.mask, a.mass_scale)
        }
        GenKind::Sphere => gen_sphere_measure(a.count, a.seed, a.gaussians, a.mass_scale),
    }
    .map_err(|e| CliError::usage(e.to_string()))?;
    io::write_measure(&a.out, &m)?;
    Ok(())
}

/// Dense reference solve with the same report shape as the multiscale one.
pub fn solve_dense(problem: &ProblemInstance, cap: usize, certify: bool) -> CliResult<(SparseCoupling, SolveReport)> {
    let arcs = problem.n_x().saturating_mul(problem.n_y());
    if arcs > cap {
        return Err(Error::DenseCap { arcs, cap }.into());
    }
    let t0 = Instant::now();
    let lp = SparseTransportLP::from_problem(problem, Neighbourhood::full(problem.n_x(), problem.n_y()))?;
    let sol = solve_local(&lp, WarmStart::None, PivotRule::default())?;
    let obj = sol.objective(&lp);
    let level = LevelReport {
        k: 0,
        iters: 1,
        objectives: vec![obj],
        n_sizes: vec![arcs],
        psi_hat_calls: 0,
        pivots: sol.stats.pivots,
        t_solve_ms: Some(t0.elapsed().as_secs_f64() * 1e3),
        t_shield_ms: Some(0.0),
    };
    let certified = certify && check_full_duals(problem, &sol.duals).is_ok();
    let report = SolveReport { problem: ProblemSummary::of(problem), levels: vec![level], final_objective: obj, certified };
    Ok((sol.coupling, report))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_solve(a: &SolveArgs) -> CliResult<()> {
    let problem = load_problem(&a.mu, &a.nu, &a.cost)?;
    let (pi, mut report) = if a.dense {
        solve_dense(&problem, a.dense_cap, a.certify)?
    } else {
        let opts = SolveOptions { certify: a.certify, ..a.solver.options(&problem.mu)? };
        let out = solve_multiscale(&problem, &opts)?;
        (out.coupling, out.report)
    };
    if !a.timings {
        report.strip_timings();
    }
    io::write_coupling(&a.out, &pi, problem.mu.mass_scale)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("json"));
    io::write_text(&report_path, &to_json(&report))?;
    if a.certify {
        let cert = if report.certified { "GloballyOptimal" } else { "LocalOptimal" };
        println!("objective {} certificate {cert}", report.final_objective);
    } else {
        println!("objective {}", report.final_objective);
    }
    Ok(())
}

#[derive(Serialize)]
struct Failure<'a> {
    kind: &'static str,
    witness: &'a Witness,
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let problem = load_problem(&a.mu, &a.nu, &a.cost)?;
    let (pi, scale) = io::read_coupling(&a.coupling).map_err(|e| CliError::input(&a.coupling, e))?;
    if scale != problem.mu.mass_scale {
        return Err(CliError::verification(format!("marginals violated: coupling mass_scale {scale} != {}", problem.mu.mass_scale)));
    }
    if pi.n_x != problem.n_x() || pi.n_y != problem.n_y() {
        return Err(CliError::verification("marginals violated: coupling size does not match the problem"));
    }
    pi.check_marginals(&problem.mu.masses, &problem.nu.masses)
        .map_err(|e| CliError::verification(e.to_string().replace("invalid input: ", "")))?;
    let opts = a.solver.options(&problem.mu)?;
    let text = match certify_coupling(&problem, &pi, &opts)? {
        Ok(cert) => {
            let text = to_json(&cert);
            if !matches!(cert.kind, CertificateKind::GloballyOptimal) {
                emit(&text, a.out.as_deref())?;
                return Err(CliError::verification("coupling is not globally optimal"));
            }
            text
        }
        Err(w) => {
            emit(&to_json(&Failure { kind: "Failed", witness: &w }), a.out.as_deref())?;
            return Err(CliError::verification(format!("verification failed: {w}")));
        }
    };
    emit(&text, a.out.as_deref())
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    print!("{text}");
    if let Some(p) = out {
        io::write_text(p, text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match &cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => bench::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("32x16").unwrap(), vec![32, 16]);
        assert_eq!(parse_shape("4x4x4").unwrap(), vec![4, 4, 4]);
        assert_eq!(parse_shape("4x").unwrap_err().code, 2);
    }

    #[test]
    fn candidate_schemes_parse() {
        let g = DiscreteMeasure::grid(&[2, 2], vec![1; 4], 4).unwrap();
        assert_eq!(parse_candidates("axes", &g).unwrap(), CandidateScheme::GridAxes { shape: vec![2, 2] });
        assert_eq!(parse_candidates("knn:7", &g).unwrap(), CandidateScheme::KNearest(7));
        assert!(parse_candidates("knn:0", &g).is_err());
        assert!(parse_candidates("nearest", &g).is_err());
        let c = DiscreteMeasure::new(1, vec![0.0], vec![1], 1).unwrap();
        assert!(parse_candidates("axes", &c).is_err());
    }

    #[test]
    fn cost_flags_are_checked() {
        let mut c = CostArgs { cost: CostFamily::Sqeucl, p: None, eta: 0.0, lambda: 0.0, noise_seed: 0, cost_scale: 1 };
        assert_eq!(c.spec().unwrap(), CostSpec::SqEuclidean);
        c.eta = 5.0;
        assert!(matches!(c.spec().unwrap(), CostSpec::Noisy(_)));
        c.cost = CostFamily::Peucl;
        assert_eq!(c.spec().unwrap_err().code, 2);
        c.eta = 0.0;
        assert_eq!(c.spec().unwrap_err().code, 2);
        c.p = Some(1.5);
        assert_eq!(c.spec().unwrap(), CostSpec::PEuclidean { p: 1.5 });
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Infeasible).code, 4);
        assert_eq!(CliError::from(Error::Parse("x".into())).code, 3);
        assert_eq!(CliError::from(Error::Invalid("x".into())).code, 2);
    }
}
