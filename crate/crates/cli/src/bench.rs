//! Benchmark sweeps. One CSV row per (size, cost, seed, repetition, mode, warm).

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use otshield::costs::{CostSpec, NoiseSource};
use otshield::driver::{solve_multiscale, SolveOptions, SolveReport, WarmPolicy};
use otshield::gen::{grid_pair, sphere_pair};
use otshield::model::{ProblemInstance, DEFAULT_MASS_SCALE};
use otshield::shield::ShieldMethod;
use otshield::verify::DEFAULT_DENSE_CAP;

use crate::{parse_shape, solve_dense, CliError, CliResult, CostArgs, WarmKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Sparsity and run time over grid sizes.
    PaperFig4,
    /// Noisy costs over the (eta, lambda) grid.
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Dense,
    SparseGrid,
    SparseTree,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Grid shapes (32x32) or sphere point counts (512), comma separated.
    #[arg(long, value_delimiter = ',')]
    size: Vec<String>,
    #[command(flatten)]
    cost: CostArgs,
    /// Number of seeds, starting at --seed.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    modes: Vec<Mode>,
    /// Warm-start policies for sparse modes, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    warm: Vec<WarmKind>,
    #[arg(long, default_value_t = DEFAULT_MASS_SCALE)]
    mass_scale: i64,
    /// Dense runs above this many arcs are skipped.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Size {
    Grid(Vec<usize>),
    Cloud(usize),
}

impl Size {
    fn parse(s: &str) -> CliResult<Size> {
        if s.contains('x') {
            Ok(Size::Grid(parse_shape(s)?))
        } else {
            s.parse().map(Size::Cloud).map_err(|_| CliError::usage(format!("bad size '{s}'")))
        }
    }

    fn label(&self) -> String {
        match self {
            Size::Grid(s) => s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"),
            Size::Cloud(n) => n.to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub sizes: Vec<Size>,
    pub costs: Vec<CostSpec>,
    pub seeds: Vec<u64>,
    pub repetitions: usize,
    pub modes: Vec<Mode>,
    pub warms: Vec<WarmPolicy>,
    pub cost_scale: i64,
    pub mass_scale: i64,
    pub dense_cap: usize,
    pub out: PathBuf,
}

impl BenchmarkConfig {
    pub fn from_args(a: &BenchArgs) -> CliResult<Self> {
        let (sizes, costs, seeds, modes, warms): (Vec<&str>, Vec<CostSpec>, u64, Vec<Mode>, Vec<WarmPolicy>) = match a.preset {
            Some(Preset::PaperFig4) => (
                vec!["32x32", "64x64", "96x96"],
                vec![CostSpec::SqEuclidean],
                3,
                vec![Mode::Dense, Mode::SparseGrid, Mode::SparseTree],
                vec![WarmPolicy::Basis, WarmPolicy::None],
            ),
            Some(Preset::Noise) => {
                let levels = [0.0, 5.0, 10.0, 15.0];
                let costs = levels
                    .iter()
                    .flat_map(|&eta| levels.iter().map(move |&lambda| (eta, lambda)))
                    .map(|(eta, lambda)| {
                        if eta == 0.0 && lambda == 0.0 {
                            CostSpec::SqEuclidean
                        } else {
                            CostSpec::noisy(eta, lambda, a.cost.noise_seed)
                        }
                    })
                    .collect();
                (vec!["32x32"], costs, 3, vec![Mode::SparseGrid, Mode::SparseTree], vec![WarmPolicy::Basis])
            }
            None => (vec![], vec![a.cost.spec()?], 1, vec![Mode::SparseTree], vec![WarmPolicy::Basis]),
        };
        let sizes = if a.size.is_empty() { sizes.into_iter().map(String::from).collect() } else { a.size.clone() };
        let cfg = BenchmarkConfig {
            sizes: sizes.iter().map(|s| Size::parse(s)).collect::<CliResult<_>>()?,
            costs,
            seeds: (a.seed..a.seed + a.seeds.unwrap_or(seeds)).collect(),
            repetitions: a.repetitions.unwrap_or(1),
            modes: if a.modes.is_empty() { modes } else { a.modes.clone() },
            warms: if a.warm.is_empty() { warms } else { a.warm.iter().map(|&w| w.into()).collect() },
            cost_scale: a.cost.cost_scale,
            mass_scale: a.mass_scale,
            dense_cap: a.dense_cap,
            out: a.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.sizes.is_empty() {
            return Err(CliError::usage("benchmark needs at least one size"));
        }
        if self.repetitions == 0 {
            return Err(CliError::usage("--repetitions must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::usage("--seeds must be at least 1"));
        }
        for s in &self.sizes {
            for c in &self.costs {
                let sphere = matches!(c, CostSpec::SphereSqGeodesic);
                if sphere != matches!(s, Size::Cloud(_)) {
                    return Err(CliError::usage(format!("size {} does not fit cost {c:?}", s.label())));
                }
            }
        }
        Ok(())
    }

    fn problem(&self, size: &Size, cost: &CostSpec, seed: u64) -> CliResult<ProblemInstance> {
        let (mu, nu) = match size {
            Size::Grid(shape) => grid_pair(shape, seed, self.mass_scale),
            Size::Cloud(n) => sphere_pair(*n, *n, seed, self.mass_scale),
        }
        .map_err(|e| CliError::usage(e.to_string()))?;
        Ok(ProblemInstance::new(mu, nu, cost.clone(), self.cost_scale)?)
    }
}

/// One benchmark run. Columns shared with the report use its field names.
#[derive(Debug, Serialize)]
struct Row {
    size: String,
    n_x: usize,
    n_y: usize,
    cost: &'static str,
    p: Option<f64>,
    eta: f64,
    lambda: f64,
    seed: u64,
    rep: usize,
    mode: Mode,
    warm: Option<WarmPolicy>,
    levels: usize,
    iters: usize,
    #[serde(rename = "N_max")]
    n_max: usize,
    psi_hat_calls: u64,
    pivots: u64,
    t_solve_ms: f64,
    t_shield_ms: f64,
    t_total_ms: f64,
    final_objective: i128,
    certified: bool,
}

fn family(c: &CostSpec) -> (&'static str, Option<f64>, f64, f64) {
    match c {
        CostSpec::SqEuclidean => ("sqeucl", None, 0.0, 0.0),
        CostSpec::PEuclidean { p } => ("peucl", Some(*p), 0.0, 0.0),
        CostSpec::SphereSqGeodesic => ("sphere", None, 0.0, 0.0),
        CostSpec::Noisy(n) => {
            debug_assert!(matches!(n.noise, NoiseSource::Hash { .. }));
            ("noisy-sqeucl", None, n.eta, n.lambda)
        }
    }
}

fn run_one(problem: &ProblemInstance, mode: Mode, warm: WarmPolicy, cap: usize) -> CliResult<Option<(SolveReport, f64)>> {
    let t0 = Instant::now();
    let report = match mode {
        Mode::Dense => {
            let arcs = problem.n_x() * problem.n_y();
            if arcs > cap {
                return Ok(None);
            }
            solve_dense(problem, cap, false)?.1
        }
        Mode::SparseGrid | Mode::SparseTree => {
            let method = if mode == Mode::SparseGrid { ShieldMethod::Grid } else { ShieldMethod::Tree };
            let opts = SolveOptions { method, warm, ..SolveOptions::default() };
            solve_multiscale(problem, &opts)?.report
        }
    };
    Ok(Some((report, t0.elapsed().as_secs_f64() * 1e3)))
}

pub fn run(a: &BenchArgs) -> CliResult<()> {
    let cfg = BenchmarkConfig::from_args(a)?;
    let mut w = csv::Writer::from_path(&cfg.out).map_err(|e| CliError { code: 3, msg: format!("{}: {e}", cfg.out.display()) })?;
    let csv_err = |e: csv::Error| CliError { code: 3, msg: format!("{}: {e}", cfg.out.display()) };
    for size in &cfg.sizes {
        for cost in &cfg.costs {
            for &seed in &cfg.seeds {
                let problem = cfg.problem(size, cost, seed)?;
                for rep in 0..cfg.repetitions {
                    for &mode in &cfg.modes {
                        if mode == Mode::SparseGrid && matches!(size, Size::Cloud(_)) {
                            continue;
                        }
                        let warms: Vec<Option<WarmPolicy>> =
                            if mode == Mode::Dense { vec![None] } else { cfg.warms.iter().copied().map(Some).collect() };
                        for warm in warms {
                            let Some((r, total)) = run_one(&problem, mode, warm.unwrap_or_default(), cfg.dense_cap)? else {
                                eprintln!("skipping dense run at size {}: above --dense-cap", size.label());
                                continue;
                            };
                            let (cost, p, eta, lambda) = family(cost);
                            let fin = r.finest().expect("at least one level");
                            w.serialize(Row {
                                size: size.label(),
                                n_x: problem.n_x(),
                                n_y: problem.n_y(),
                                cost,
                                p,
                                eta,
                                lambda,
                                seed,
                                rep,
                                mode,
                                warm,
                                levels: r.levels.len(),
                                iters: fin.iters,
                                n_max: r.max_n_finest(),
                                psi_hat_calls: fin.psi_hat_calls,
                                pivots: r.total_pivots(),
                                t_solve_ms: r.levels.iter().filter_map(|l| l.t_solve_ms).sum(),
                                t_shield_ms: r.levels.iter().filter_map(|l| l.t_shield_ms).sum(),
                                t_total_ms: total,
                                final_objective: r.final_objective,
                                certified: r.certified,
                            })
                            .map_err(csv_err)?;
                            w.flush().map_err(|e| CliError { code: 3, msg: e.to_string() })?;
                        }
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| CliError { code: 3, msg: e.to_string() })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(Size::parse("8x16").unwrap(), Size::Grid(vec![8, 16]));
        assert_eq!(Size::parse("512").unwrap(), Size::Cloud(512));
        assert_eq!(Size::parse("8x16").unwrap().label(), "8x16");
        assert!(Size::parse("big").is_err());
    }

    fn config() -> BenchmarkConfig {
        BenchmarkConfig {
            sizes: vec![Size::Grid(vec![4, 4])],
            costs: vec![CostSpec::SqEuclidean],
            seeds: vec![0],
            repetitions: 1,
            modes: vec![Mode::Dense],
            warms: vec![WarmPolicy::Basis],
            cost_scale: 1_000_000,
            mass_scale: 1_000_000,
            dense_cap: 1000,
            out: PathBuf::from("unused.csv"),
        }
    }

    #[test]
    fn config_invariants() {
        assert!(config().validate().is_ok());
        assert!(BenchmarkConfig { sizes: vec![], ..config() }.validate().is_err());
        assert!(BenchmarkConfig { repetitions: 0, ..config() }.validate().is_err());
        assert!(BenchmarkConfig { costs: vec![CostSpec::SphereSqGeodesic], ..config() }.validate().is_err());
    }

    #[test]
    fn dense_runs_respect_the_cap() {
        let cfg = config();
        let p = cfg.problem(&cfg.sizes[0], &cfg.costs[0], 0).unwrap();
        assert!(run_one(&p, Mode::Dense, WarmPolicy::Basis, 100).unwrap().is_none());
        let (r, _) = run_one(&p, Mode::Dense, WarmPolicy::Basis, 1000).unwrap().unwrap();
        let (s, _) = run_one(&p, Mode::SparseGrid, WarmPolicy::Basis, 1000).unwrap().unwrap();
        assert_eq!(r.final_objective, s.final_objective);
    }
}
