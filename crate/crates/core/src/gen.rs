//! Seeded test measures.
//!
//! All generators draw from `SplitMix64` (golden-ratio increment
//! `0x9E3779B97F4A7C15`, finalizer multipliers `0xBF58476D1CE4E5B9` and
//! `0x94D049BB133111EB`), so output depends only on the seed.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::costs::geodesic;
use crate::model::{grid_coords, DiscreteMeasure};
use crate::{Error, Result};

/// Binary mask applied to the bump density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mask {
    HalfPlane,
    Disc,
}

impl std::str::FromStr for Mask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "halfplane" | "half-plane" => Ok(Mask::HalfPlane),
            "disc" => Ok(Mask::Disc),
            _ => Err(Error::Parse(format!("unknown mask '{s}'"))),
        }
    }
}

/// Integer masses summing to `total`, proportional to `weights`.
/// Remainders go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(weights: &[f64], total: i64) -> Result<Vec<i64>> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !(sum > 0.0) || !sum.is_finite() || weights.iter().any(|w| *w < 0.0) || total < 0 {
        return Err(Error::Invalid("weights must be nonnegative with a positive finite sum".into()));
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut frac = Vec::with_capacity(weights.len());
    let mut used = 0i64;
    for (i, w) in weights.iter().enumerate() {
        let share = w / sum * total as f64;
        let f = share.floor();
        out.push(f as i64);
        used += f as i64;
        frac.push((share - f, i));
    }
    let mut left = total - used;
    if left < 0 {
        // Float overshoot: take units back from the smallest fractions.
        frac.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in frac.iter().cycle() {
            if left == 0 {
                break;
            }
            if out[i] > 0 {
                out[i] -= 1;
                left += 1;
            }
        }
        return Ok(out);
    }
    frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in frac.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    Ok(out)
}

/// One unit per atom plus a largest-remainder share of the rest.
fn with_floor(density: &[f64], mass_scale: i64) -> Result<Vec<i64>> {
    let n = density.len() as i64;
    if mass_scale < n {
        return Err(Error::Invalid(format!("mass_scale {mass_scale} is below the atom count {n}")));
    }
    let uniform;
    let w = if density.iter().sum::<f64>() > 0.0 {
        density
    } else {
        uniform = vec![1.0; density.len()];
        &uniform
    };
    let mut m = largest_remainder(w, mass_scale - n)?;
    m.iter_mut().for_each(|v| *v += 1);
    Ok(m)
}

fn rotation(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    if dim == 2 {
        let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        return vec![t.cos(), -t.sin(), t.sin(), t.cos()];
    }
    // Uniform unit quaternion.
    let mut q: [f64; 4] = [0.0; 4];
    loop {
        for v in &mut q {
            *v = rng.sample(StandardNormal);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    vec![
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Sum of anisotropic Gaussian bumps on a 2D or 3D grid, optionally masked,
/// with a floor of one mass unit per cell.
pub fn gen_grid_measure(shape: &[usize], seed: u64, gaussians: usize, mask: Option<Mask>, mass_scale: i64) -> Result<DiscreteMeasure> {
    let dim = shape.len();
    if !(2..=3).contains(&dim) {
        return Err(Error::Invalid(format!("grid measures need 2 or 3 axes, got {dim}")));
    }
    if shape.iter().any(|&s| s < 2) {
        return Err(Error::Invalid("grid side below 2".into()));
    }
    let n: usize = shape.iter().product();
    let mut rng = SplitMix64::seed_from_u64(seed);
    struct Bump {
        center: Vec<f64>,
        prec: Vec<f64>,
        amp: f64,
    }
    let bumps: Vec<Bump> = (0..gaussians)
        .map(|_| {
            let center: Vec<f64> = shape.iter().map(|&s| rng.random::<f64>() * (s - 1) as f64).collect();
            let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(1.8..=100.0)).collect();
            let r = rotation(&mut rng, dim);
            // prec = R diag(1/eig) R^T
            let mut prec = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    prec[i * dim + j] = (0..dim).map(|k| r[i * dim + k] * r[j * dim + k] / eig[k]).sum();
                }
            }
            let amp = rng.random_range(0.5..=1.5);
            Bump { center, prec, amp }
        })
        .collect();
    let mut keep = vec![true; n];
    let mut c = vec![0usize; dim];
    if let Some(m) = mask {
        let anchor: Vec<f64> = shape.iter().map(|&s| rng.random::<f64>() * (s - 1) as f64).collect();
        match m {
            Mask::HalfPlane => {
                let normal: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                for (i, k) in keep.iter_mut().enumerate() {
                    grid_coords(shape, i, &mut c);
                    *k = c.iter().zip(&anchor).zip(&normal).map(|((&ci, a), nv)| (ci as f64 - a) * nv).sum::<f64>() >= 0.0;
                }
            }
            Mask::Disc => {
                let min_side = *shape.iter().min().unwrap() as f64;
                let rad = rng.random_range(0.25..=0.5) * min_side;
                for (i, k) in keep.iter_mut().enumerate() {
                    grid_coords(shape, i, &mut c);
                    *k = c.iter().zip(&anchor).map(|(&ci, a)| (ci as f64 - a).powi(2)).sum::<f64>() <= rad * rad;
                }
            }
        }
    }
    let mut density = vec![0.0; n];
    let mut d = vec![0.0; dim];
    for (i, f) in density.iter_mut().enumerate() {
        if !keep[i] {
            continue;
        }
        grid_coords(shape, i, &mut c);
        if bumps.is_empty() {
            *f = 1.0;
            continue;
        }
        for b in &bumps {
            for a in 0..dim {
                d[a] = c[a] as f64 - b.center[a];
            }
            let mut q = 0.0;
            for a in 0..dim {
                for e in 0..dim {
                    q += d[a] * b.prec[a * dim + e] * d[e];
                }
            }
            *f += b.amp * (-0.5 * q).exp();
        }
    }
    DiscreteMeasure::grid(shape, with_floor(&density, mass_scale)?, mass_scale)
}

fn random_unit(rng: &mut SplitMix64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Uniform random points on the unit sphere with a density of radial bumps
/// `A exp(-d(x0, x)^2 / (2 sigma))`, floored at one mass unit per point.
pub fn gen_sphere_measure(count: usize, seed: u64, bumps: usize, mass_scale: i64) -> Result<DiscreteMeasure> {
    if count == 0 {
        return Err(Error::Invalid("sphere measure needs at least one point".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count * 3);
    for _ in 0..count {
        points.extend_from_slice(&random_unit(&mut rng));
    }
    let centers: Vec<([f64; 3], f64, f64)> = (0..bumps)
        .map(|_| {
            let c = random_unit(&mut rng);
            let sigma = rng.random_range(0.02..=0.3);
            let amp = rng.random_range(0.5..=1.5);
            (c, sigma, amp)
        })
        .collect();
    let density: Vec<f64> = (0..count)
        .map(|i| {
            let p = &points[i * 3..i * 3 + 3];
            if centers.is_empty() {
                return 1.0;
            }
            centers
                .iter()
                .map(|(c, s, a)| {
                    let d = geodesic(c, p);
                    a * (-d * d / (2.0 * s)).exp()
                })
                .sum()
        })
        .collect();
    DiscreteMeasure::new(3, points, with_floor(&density, mass_scale)?, mass_scale)
}

/// Uniform random points in `[0, extent)^dim` with masses from a uniform
/// random density and the usual floor.
pub fn gen_cloud(count: usize, dim: usize, extent: f64, seed: u64, mass_scale: i64) -> Result<DiscreteMeasure> {
    if count == 0 || dim == 0 {
        return Err(Error::Invalid("cloud needs points and a dimension".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let points: Vec<f64> = (0..count * dim).map(|_| rng.random::<f64>() * extent).collect();
    let density: Vec<f64> = (0..count).map(|_| rng.random::<f64>()).collect();
    DiscreteMeasure::new(dim, points, with_floor(&density, mass_scale)?, mass_scale)
}

/// The benchmark pair for one seed: an unmasked `mu` and a masked `nu`,
/// alternating disc and half-plane masks with the seed's parity.
pub fn grid_pair(shape: &[usize], seed: u64, mass_scale: i64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mask = if seed % 2 == 0 { Mask::Disc } else { Mask::HalfPlane };
    let mu = gen_grid_measure(shape, seed, 3, None, mass_scale)?;
    let nu = gen_grid_measure(shape, seed + 7919, 3, Some(mask), mass_scale)?;
    Ok((mu, nu))
}

/// Two independent sphere measures of the given sizes.
pub fn sphere_pair(n_x: usize, n_y: usize, seed: u64, mass_scale: i64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    Ok((gen_sphere_measure(n_x, seed, 3, mass_scale)?, gen_sphere_measure(n_y, seed + 7919, 4, mass_scale)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10).unwrap(), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 4).unwrap(), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[1.0, 0.0], 7).unwrap(), vec![7, 0]);
        assert!(largest_remainder(&[0.0, 0.0], 7).is_err());
    }

    #[test]
    fn uniform_without_gaussians() {
        let m = gen_grid_measure(&[4, 4], 1, 0, None, 1000).unwrap();
        assert_eq!(m.masses.iter().sum::<i64>(), 1000);
        // 16 floor units, 984 = 16 * 61 + 8 spread over the first 8 cells.
        assert_eq!(&m.masses[..8], &[63; 8]);
        assert_eq!(&m.masses[8..], &[62; 8]);
    }

    #[test]
    fn deterministic_and_exact() {
        for mask in [None, Some(Mask::HalfPlane), Some(Mask::Disc)] {
            let a = gen_grid_measure(&[12, 9], 42, 4, mask, 1_000_000_000).unwrap();
            let b = gen_grid_measure(&[12, 9], 42, 4, mask, 1_000_000_000).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.masses.iter().sum::<i64>(), 1_000_000_000);
            assert!(a.masses.iter().all(|&m| m >= 1));
        }
        let c = gen_grid_measure(&[5, 5, 5], 7, 2, Some(Mask::Disc), 1_000_000).unwrap();
        assert_eq!(c.masses.iter().sum::<i64>(), 1_000_000);
        let s = gen_sphere_measure(300, 3, 4, 1_000_000_000).unwrap();
        assert_eq!(s, gen_sphere_measure(300, 3, 4, 1_000_000_000).unwrap());
        assert_eq!(s.masses.iter().sum::<i64>(), 1_000_000_000);
        for i in 0..s.len() {
            let n: f64 = s.point(i).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(gen_grid_measure(&[1, 5], 0, 1, None, 100).is_err());
        assert!(gen_grid_measure(&[5], 0, 1, None, 100).is_err());
        assert!(gen_grid_measure(&[5, 5], 0, 1, None, 10).is_err());
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = SplitMix64::seed_from_u64(9);
        for dim in [2, 3] {
            let r = rotation(&mut rng, dim);
            for i in 0..dim {
                for j in 0..dim {
                    let d: f64 = (0..dim).map(|k| r[i * dim + k] * r[j * dim + k]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }
}
