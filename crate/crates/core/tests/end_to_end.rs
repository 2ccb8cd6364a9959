use otshield::costs::CostSpec;
use otshield::driver::{solve_multiscale, MultiScaleSetup, SolveOptions};
use otshield::gen::{gen_grid_measure, gen_sphere_measure, Mask};
use otshield::model::{extract_map, ProblemInstance};
use otshield::shield::{grid_miss, search_tree, ShieldContext, ShieldMethod, ShieldStats};
use otshield::verify::{build_shortcut, check_full_duals, check_shielding, dense_solve};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

const SCALE: i64 = 1_000_000_000;

fn grid_problem(s: usize, seed: u64, cost: CostSpec) -> ProblemInstance {
    let mu = gen_grid_measure(&[s, s], seed, 3, None, SCALE).unwrap();
    let nu = gen_grid_measure(&[s, s], seed + 7919, 3, Some(if seed % 2 == 0 { Mask::Disc } else { Mask::HalfPlane }), SCALE).unwrap();
    ProblemInstance::new(mu, nu, cost, SCALE).unwrap()
}

fn check_against_dense(p: &ProblemInstance, opts: &SolveOptions) {
    let out = solve_multiscale(p, opts).unwrap();
    let (dense, _) = dense_solve(p, 1 << 24).unwrap();
    assert_eq!(out.report.final_objective, p.objective(&dense));
    assert!(check_full_duals(p, &out.duals).is_ok());
    out.coupling.check_marginals(&p.mu.masses, &p.nu.masses).unwrap();
}

#[test]
fn sqeucl_grids_match_dense() {
    for seed in 0..10 {
        for method in [ShieldMethod::Tree, ShieldMethod::Grid] {
            check_against_dense(&grid_problem(16, seed, CostSpec::SqEuclidean), &SolveOptions { method, ..Default::default() });
        }
    }
}

#[test]
fn peucl_grids_match_dense() {
    for (i, p) in [1.5, 2.0, 3.0].into_iter().enumerate() {
        for seed in 0..4 {
            check_against_dense(&grid_problem(12, 100 + seed + 10 * i as u64, CostSpec::PEuclidean { p }), &SolveOptions::default());
        }
    }
}

#[test]
fn noisy_grids_match_dense() {
    for (eta, lambda) in [(0.0, 5.0), (5.0, 0.0), (15.0, 15.0)] {
        for seed in 0..3 {
            let cost = CostSpec::noisy(eta, lambda, seed);
            for method in [ShieldMethod::Tree, ShieldMethod::Grid] {
                check_against_dense(&grid_problem(12, 200 + seed, cost.clone()), &SolveOptions { method, ..Default::default() });
            }
        }
    }
}

#[test]
fn sphere_clouds_match_dense() {
    for seed in 0..4 {
        let mu = gen_sphere_measure(150, seed, 3, SCALE).unwrap();
        let nu = gen_sphere_measure(180, seed + 50, 4, SCALE).unwrap();
        let p = ProblemInstance::new(mu, nu, CostSpec::SphereSqGeodesic, SCALE).unwrap();
        check_against_dense(&p, &SolveOptions::default());
    }
}

#[test]
fn every_emitted_neighbourhood_is_shielding() {
    let families = [CostSpec::SqEuclidean, CostSpec::PEuclidean { p: 1.5 }, CostSpec::noisy(5.0, 5.0, 3)];
    for cost in families {
        for seed in 0..3 {
            let p = grid_problem(10, 300 + seed, cost.clone());
            let out = solve_multiscale(&p, &SolveOptions { keep_history: true, ..Default::default() }).unwrap();
            let setup = MultiScaleSetup::new(&p, &Default::default()).unwrap();
            assert!(!out.history.is_empty());
            for h in &out.history {
                let pk = setup.problem_at(h.layer).unwrap();
                check_shielding(&pk, &h.coupling, &h.neighbourhood).unwrap().unwrap();
            }
        }
    }
}

#[test]
fn shortcuts_exist_and_imply_constraints() {
    let mut rng = SplitMix64::seed_from_u64(1);
    for seed in 0..4 {
        let p = grid_problem(10, 400 + seed, CostSpec::SqEuclidean);
        let out = solve_multiscale(&p, &SolveOptions::default()).unwrap();
        let n = &out.neighbourhood;
        let mut done = 0;
        while done < 50 {
            let (xa, yb) = (rng.random_range(0..p.n_x()), rng.random_range(0..p.n_y()));
            if n.contains(xa, yb) {
                continue;
            }
            let sc = build_shortcut(&p, &out.coupling, n, xa, yb).unwrap();
            let (lhs, rhs) = sc.sides(&p);
            assert!(lhs >= rhs);
            let d = &out.duals;
            assert!(d.alpha[xa] as i128 + d.beta[yb] as i128 <= lhs);
            done += 1;
        }
    }
}

#[test]
fn grid_and_tree_miss_sets_agree() {
    for seed in 0..5 {
        let p = grid_problem(12, 500 + seed, CostSpec::SqEuclidean);
        let out = solve_multiscale(&p, &SolveOptions::default()).unwrap();
        let setup = MultiScaleSetup::new(&p, &Default::default()).unwrap();
        let cands = setup.candidates_at(0, None).unwrap();
        let ctx = ShieldContext::new(&p, &setup.tree_y, 0, &cands, ShieldMethod::Tree).unwrap();
        let t = extract_map(&out.coupling).unwrap();
        let shape = p.mu.grid_shape.as_deref().unwrap();
        for xa in 0..p.n_x() {
            let c: Vec<(u32, u32)> = cands.get(xa).iter().map(|&xs| (xs, t[xs as usize])).collect();
            let tree = search_tree(&ctx, xa, &c, &mut ShieldStats::default());
            let grid = grid_miss(xa, &t, shape, shape, |_| 0.0).unwrap();
            assert_eq!(tree, grid, "x={xa}");
        }
    }
}
