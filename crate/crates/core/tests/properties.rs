use otshield::costs::CostSpec;
use otshield::gen::{gen_cloud, largest_remainder};
use otshield::model::{DiscreteMeasure, Neighbourhood, ProblemInstance, SparseCoupling};
use otshield::netsolver::{solve_local, PivotRule, SparseTransportLP, WarmStart};
use otshield::{io, verify};
use proptest::prelude::*;

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn arc(a: &[f64], b: &[f64]) -> f64 {
    let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    c.clamp(-1.0, 1.0).acos()
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-3).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn v2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 2)
}

fn v3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sqeucl_bound_is_sound(xa in v2(), xs in v2(), rep in v2(), rad in 0.0..5.0f64, dir in v2(), t in 0.0..=1.0f64) {
        let n = d2(&dir, &[0.0, 0.0]).sqrt();
        prop_assume!(n > 1e-6);
        let y: Vec<f64> = rep.iter().zip(&dir).map(|(r, d)| r + d / n * rad * t).collect();
        let bound = CostSpec::SqEuclidean.psi_hat(&xa, &xs, &rep, rad, false);
        let psi = d2(&xa, &y) - d2(&xs, &y);
        prop_assert!(bound <= psi + 1e-9 * (1.0 + psi.abs()), "{bound} > {psi}");
    }

    #[test]
    fn peucl_bound_is_sound(p in 1.1..4.0f64, xa in v2(), xs in v2(), rep in v2(), rad in 0.0..5.0f64, dir in v2(), t in 0.0..=1.0f64) {
        let n = d2(&dir, &[0.0, 0.0]).sqrt();
        prop_assume!(n > 1e-6);
        let y: Vec<f64> = rep.iter().zip(&dir).map(|(r, d)| r + d / n * rad * t).collect();
        let bound = CostSpec::PEuclidean { p }.psi_hat(&xa, &xs, &rep, rad, false);
        let psi = d2(&xa, &y).sqrt().powf(p) - d2(&xs, &y).sqrt().powf(p);
        prop_assert!(bound <= psi + 1e-9 * (1.0 + psi.abs()), "{bound} > {psi}");
    }

    #[test]
    fn sphere_bound_is_sound(a in v3(), s in v3(), r in v3(), tan in v3(), rad in 0.0..3.2f64, t in 0.0..=1.0f64) {
        let (Some(xa), Some(xs), Some(rep)) = (unit(a), unit(s), unit(r)) else { return Ok(()) };
        // Tangent direction at rep.
        let dot = tan[0] * rep[0] + tan[1] * rep[1] + tan[2] * rep[2];
        let Some(u) = unit([tan[0] - dot * rep[0], tan[1] - dot * rep[1], tan[2] - dot * rep[2]]) else { return Ok(()) };
        let ang = rad * t;
        let y: Vec<f64> = (0..3).map(|i| ang.cos() * rep[i] + ang.sin() * u[i]).collect();
        let bound = CostSpec::SphereSqGeodesic.psi_hat(&xa, &xs, &rep, rad, false);
        let psi = arc(&xa, &y).powi(2) - arc(&xs, &y).powi(2);
        prop_assert!(bound <= psi + 1e-9 * (1.0 + psi.abs()), "{bound} > {psi}");
    }

    #[test]
    fn sqeucl_shielding_is_a_halfspace(xa in v2(), xs in v2(), ys in v2(), yb in v2()) {
        let lhs = CostSpec::SqEuclidean.shields(&xa, &xs, &ys, &yb, 0.0);
        let ip: f64 = (0..2).map(|i| (xs[i] - xa[i]) * (yb[i] - ys[i])).sum();
        prop_assume!(ip.abs() > 1e-6);
        prop_assert_eq!(lhs, ip > 0.0);
    }

    #[test]
    fn canonical_is_idempotent_and_order_free(mut entries in prop::collection::vec((0usize..6, 0usize..7, 0i64..5), 0..40), costs in prop::collection::vec(0i64..100, 42)) {
        let a = SparseCoupling::from_triplets(6, 7, entries.clone()).unwrap();
        prop_assert_eq!(a.canonical().canonical(), a.canonical());
        entries.reverse();
        let b = SparseCoupling::from_triplets(6, 7, entries).unwrap();
        prop_assert_eq!(&a, &b);
        let obj = |pi: &SparseCoupling| pi.iter().map(|(x, y, m)| costs[x * 7 + y] as i128 * m as i128).sum::<i128>();
        prop_assert_eq!(obj(&a), obj(&b));
        // Restricting to any superset of the support leaves the value unchanged.
        let n = Neighbourhood::support_of(&a);
        prop_assert!(n.contains_support(&a));
    }

    #[test]
    fn largest_remainder_is_exact(w in prop::collection::vec(0.0..10.0f64, 1..50), total in 0i64..1_000_000_000) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let m = largest_remainder(&w, total).unwrap();
        prop_assert_eq!(m.iter().sum::<i64>(), total);
        let s: f64 = w.iter().sum();
        for (wi, mi) in w.iter().zip(&m) {
            prop_assert!((*mi as f64 - wi / s * total as f64).abs() <= 1.0 + 1e-9 * total as f64);
        }
    }

    #[test]
    fn measure_files_round_trip(n in 1usize..30, dim in 1usize..4, seed in any::<u64>()) {
        let m = gen_cloud(n, dim, 7.3, seed, 1_000_000).unwrap();
        prop_assert_eq!(io::parse_pts(&io::format_pts(&m)).unwrap(), m);
        let s = [n.min(5) + 1, 3];
        let g = DiscreteMeasure::grid(&s, vec![1; s[0] * 3], (s[0] * 3) as i64).unwrap();
        prop_assert_eq!(io::parse_dgrid(&io::format_dgrid(&g).unwrap()).unwrap(), g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_solutions_carry_dual_certificates(seed in any::<u64>(), nx in 1usize..12, ny in 1usize..12, density in 0.2..1.0f64) {
        let mu = gen_cloud(nx, 2, 5.0, seed, 1000).unwrap();
        let nu = gen_cloud(ny, 2, 5.0, seed ^ 1, 1000).unwrap();
        let p = ProblemInstance::new(mu, nu, CostSpec::SqEuclidean, 1_000_000).unwrap();
        // Random arc set around a feasible north-west corner support.
        let nw = north_west(&p.mu.masses, &p.nu.masses);
        let mut rows: Vec<Vec<u32>> = (0..nx).map(|x| nw.row(x).0.to_vec()).collect();
        let mut h = seed;
        for (x, row) in rows.iter_mut().enumerate() {
            for y in 0..ny {
                h = h.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if ((h >> 11) as f64 / (1u64 << 53) as f64) < density || nw.mass(x, y) > 0 {
                    row.push(y as u32);
                }
            }
            row.sort_unstable();
            row.dedup();
        }
        let n = Neighbourhood::from_rows(ny, rows).unwrap();
        let lp = SparseTransportLP::from_problem(&p, n.clone()).unwrap();
        let sol = solve_local(&lp, WarmStart::None, PivotRule::default()).unwrap();
        prop_assert!(verify::check_local_duals(&p, &n, &sol.coupling, &sol.duals).is_ok());
        prop_assert!(sol.objective(&lp) <= p.objective(&nw));
        sol.coupling.check_marginals(&p.mu.masses, &p.nu.masses).unwrap();
    }
}

/// North-west corner rule: a feasible coupling for any balanced marginals.
fn north_west(mu: &[i64], nu: &[i64]) -> SparseCoupling {
    let (mut a, mut b) = (mu.to_vec(), nu.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut e = Vec::new();
    while i < a.len() && j < b.len() {
        let m = a[i].min(b[j]);
        if m > 0 {
            e.push((i, j, m));
        }
        a[i] -= m;
        b[j] -= m;
        if a[i] == 0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    SparseCoupling::from_triplets(mu.len(), nu.len(), e).unwrap()
}
