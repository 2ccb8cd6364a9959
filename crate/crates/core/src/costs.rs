//! Cost families, the difference function `psi` and its cell-wise lower bounds.
//!
//! For a pair of source points `x1, x2` the difference function is
//! `psi(y) = c(x1, y) - c(x2, y)`. The bound `psi_hat(xa, xs, cell)` is a lower
//! bound on `psi_{(xa, xs)}(y)` over every point `y` covered by the cell, which
//! lets the tree search discard whole cells at once.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Sphere,
}

/// Per-pair noise values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSource {
    /// Seeded hash of the index pair; needs no storage.
    Hash { seed: u64 },
    /// Dense row-major table with `n_y` columns.
    Table { n_y: usize, values: Arc<Vec<f64>> },
}

/// The smooth perturbation `c_L` of a noisy cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LipschitzField {
    None,
    /// [`lipschitz_field`] with the given wave length.
    Sine { k_mag: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisySpec {
    pub eta: f64,
    pub lambda: f64,
    pub noise: NoiseSource,
    pub field: LipschitzField,
}

/// A cost family.
///
/// `Noisy` is `|x-y|^2 + eta * noise(x, y) + lambda * c_L(x, y)`; only the
/// squared Euclidean base is supported.
#[derive(Clone, Debug, PartialEq)]
pub enum CostSpec {
    SqEuclidean,
    PEuclidean { p: f64 },
    SphereSqGeodesic,
    Noisy(NoisySpec),
}

impl CostSpec {
    pub fn noisy(eta: f64, lambda: f64, seed: u64) -> Self {
        CostSpec::Noisy(NoisySpec {
            eta,
            lambda,
            noise: NoiseSource::Hash { seed },
            field: LipschitzField::Sine { k_mag: 20.0 },
        })
    }

    pub fn metric(&self) -> Metric {
        match self {
            CostSpec::SphereSqGeodesic => Metric::Sphere,
            _ => Metric::Euclidean,
        }
    }

    pub fn validate(&self, dim: usize, n_y: usize) -> Result<()> {
        match self {
            CostSpec::SqEuclidean => Ok(()),
            CostSpec::PEuclidean { p } if p.is_finite() && *p > 1.0 => Ok(()),
            CostSpec::PEuclidean { p } => Err(Error::Invalid(format!("p-Euclidean cost needs p > 1, got {p}"))),
            CostSpec::SphereSqGeodesic if dim == 3 => Ok(()),
            CostSpec::SphereSqGeodesic => Err(Error::DimensionMismatch { expected: 3, got: dim }),
            CostSpec::Noisy(n) => {
                if !(n.eta.is_finite() && n.eta >= 0.0 && n.lambda.is_finite() && n.lambda >= 0.0) {
                    return Err(Error::Invalid("noise weights must be finite and nonnegative".into()));
                }
                if let LipschitzField::Sine { k_mag } = n.field {
                    if n.lambda > 0.0 && dim != 2 {
                        return Err(Error::DimensionMismatch { expected: 2, got: dim });
                    }
                    if !(k_mag.is_finite() && k_mag > 0.0) {
                        return Err(Error::Invalid("k_mag must be positive".into()));
                    }
                }
                if let NoiseSource::Table { n_y: cols, values } = &n.noise {
                    if *cols != n_y || values.len() % n_y.max(1) != 0 {
                        return Err(Error::Invalid("noise table shape mismatch".into()));
                    }
                    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::Invalid("noise table values must lie in [0,1]".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Cost of `(x, y)`. The noise term needs the index pair and is dropped
    /// when `pair` is `None` (coarse representatives).
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64], pair: Option<(usize, usize)>) -> f64 {
        match self {
            CostSpec::SqEuclidean => dist2(x, y),
            CostSpec::PEuclidean { p } => dist2(x, y).sqrt().powf(*p),
            CostSpec::SphereSqGeodesic => {
                let d = geodesic(x, y);
                d * d
            }
            CostSpec::Noisy(n) => {
                let mut c = dist2(x, y);
                if n.eta != 0.0 {
                    if let Some((i, j)) = pair {
                        c += n.eta * n.noise_value(i, j);
                    }
                }
                if n.lambda != 0.0 {
                    if let LipschitzField::Sine { k_mag } = n.field {
                        c += n.lambda * lipschitz_field(x, y, k_mag);
                    }
                }
                c
            }
        }
    }

    /// Cost without noise term.
    #[inline]
    pub fn cost(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval(x, y, None)
    }

    /// Geometric part of the cost (the base family for `Noisy`).
    #[inline]
    pub fn geo_cost(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            CostSpec::Noisy(_) => dist2(x, y),
            _ => self.cost(x, y),
        }
    }

    /// `psi_{(x1,x2)}(y) = c(x1,y) - c(x2,y)` without noise term.
    pub fn psi(&self, x1: &[f64], x2: &[f64], y: &[f64]) -> f64 {
        self.cost(x1, y) - self.cost(x2, y)
    }

    /// `psi` on the geometric part of the cost.
    #[inline]
    pub fn geo_psi(&self, x1: &[f64], x2: &[f64], y: &[f64]) -> f64 {
        self.geo_cost(x1, y) - self.geo_cost(x2, y)
    }

    /// Shielding slack `2 eta + 2 lambda |xa - xs|`; zero for clean costs.
    pub fn slack(&self, xa: &[f64], xs: &[f64]) -> f64 {
        match self {
            CostSpec::Noisy(n) => {
                let lam = if matches!(n.field, LipschitzField::None) { 0.0 } else { n.lambda };
                2.0 * n.eta + 2.0 * lam * dist2(xa, xs).sqrt()
            }
            _ => 0.0,
        }
    }

    /// The same family with the noise term switched off.
    pub fn without_noise(&self) -> CostSpec {
        match self {
            CostSpec::Noisy(n) => CostSpec::Noisy(NoisySpec {
                eta: 0.0,
                noise: NoiseSource::Hash { seed: 0 },
                ..n.clone()
            }),
            other => other.clone(),
        }
    }

    /// Upper bound on `|c|` for points inside the given per-axis extent.
    pub fn max_cost_bound(&self, extent: &[(f64, f64)]) -> f64 {
        let d2: f64 = extent.iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum();
        match self {
            CostSpec::SqEuclidean => d2,
            CostSpec::PEuclidean { p } => d2.sqrt().powf(*p),
            CostSpec::SphereSqGeodesic => PI * PI,
            CostSpec::Noisy(n) => {
                let field = match n.field {
                    LipschitzField::Sine { k_mag } => k_mag / (2.0 * PI),
                    LipschitzField::None => 0.0,
                };
                d2 + n.eta + n.lambda * field
            }
        }
    }

    /// Shielding test: `c(xa,yb) - c(xs,yb) - c(xa,ys) + c(xs,ys) > slack`,
    /// on the geometric part of the cost.
    pub fn shields(&self, xa: &[f64], xs: &[f64], ys: &[f64], yb: &[f64], slack: f64) -> bool {
        self.geo_psi(xa, xs, yb) - self.geo_psi(xa, xs, ys) > slack
    }

    /// Lower bound on `geo_psi(xa, xs, y)` over all `y` within `rad` of `rep`.
    ///
    /// For a layer-0 cell (`leaf`) this is `psi` itself.
    pub fn psi_hat(&self, xa: &[f64], xs: &[f64], rep: &[f64], rad: f64, leaf: bool) -> f64 {
        if leaf {
            return self.geo_psi(xa, xs, rep);
        }
        match self {
            CostSpec::SqEuclidean | CostSpec::Noisy(_) => {
                self.geo_psi(xa, xs, rep) - 2.0 * dist2(xa, xs).sqrt() * rad
            }
            CostSpec::PEuclidean { p } => peucl_psi_hat(*p, xa, xs, rep, rad),
            CostSpec::SphereSqGeodesic => sphere_psi_hat(xa, xs, rep, rad),
        }
    }
}

impl NoisySpec {
    #[inline]
    pub fn noise_value(&self, i: usize, j: usize) -> f64 {
        match &self.noise {
            NoiseSource::Hash { seed } => noise_hash(*seed, i, j),
            NoiseSource::Table { n_y, values } => values[i * n_y + j],
        }
    }
}

#[derive(Serialize)]
struct CostSpecJson {
    family: &'static str,
    p: Option<f64>,
    eta: f64,
    lambda: f64,
    noise_seed: Option<u64>,
}

impl Serialize for CostSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let j = match self {
            CostSpec::SqEuclidean => CostSpecJson { family: "sqeucl", p: None, eta: 0.0, lambda: 0.0, noise_seed: None },
            CostSpec::PEuclidean { p } => CostSpecJson { family: "peucl", p: Some(*p), eta: 0.0, lambda: 0.0, noise_seed: None },
            CostSpec::SphereSqGeodesic => CostSpecJson { family: "sphere", p: None, eta: 0.0, lambda: 0.0, noise_seed: None },
            CostSpec::Noisy(n) => CostSpecJson {
                family: "noisy-sqeucl",
                p: None,
                eta: n.eta,
                lambda: n.lambda,
                noise_seed: match n.noise {
                    NoiseSource::Hash { seed } => Some(seed),
                    NoiseSource::Table { .. } => None,
                },
            },
        };
        j.serialize(s)
    }
}

/// Sine field `(k/2pi) sin((2pi/k) <k(y), x>)` with `k(y) = (cos phi, sin phi)`,
/// `phi = y_1 + y_2`. It is 1-Lipschitz in `x`.
pub fn lipschitz_field(x: &[f64], y: &[f64], k_mag: f64) -> f64 {
    let phi = y[0] + y[1];
    let kx = phi.cos() * x[0] + phi.sin() * x[1];
    k_mag / (2.0 * PI) * (2.0 * PI / k_mag * kx).sin()
}

/// Deterministic noise in `[0, 1)` from a splitmix64 mix of seed and indices.
#[inline]
pub fn noise_hash(seed: u64, i: usize, j: usize) -> f64 {
    let mut z = seed
        ^ (i as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Great-circle distance between unit vectors in R^3.
#[inline]
pub fn geodesic(a: &[f64], b: &[f64]) -> f64 {
    norm(&cross(a, b)).atan2(dot(a, b))
}

/// Angle between two nonzero vectors, accurate near 0 and pi.
fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let mut d = 0.0;
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        d += (u - v) * (u - v);
        s += (u + v) * (u + v);
    }
    2.0 * d.sqrt().atan2(s.sqrt())
}

fn peucl_psi_hat(p: f64, xa: &[f64], xs: &[f64], rep: &[f64], rad: f64) -> f64 {
    let a: Vec<f64> = xa.iter().zip(xs).map(|(u, v)| u - v).collect();
    let na = norm(&a);
    if na == 0.0 {
        return 0.0;
    }
    let b: Vec<f64> = xs.iter().zip(rep).map(|(u, v)| u - v).collect();
    let nb = norm(&b);
    let theta = if rad < nb {
        rad.atan2(((nb - rad) * (nb + rad)).sqrt())
    } else {
        PI
    };
    let base = if nb > 0.0 { angle(&a, &b) } else { 0.0 };
    let phi = (base + theta).min(PI);
    let cphi = phi.cos();
    let r = if cphi >= 0.0 { (nb - rad).max(0.0) } else { nb + rad };
    p * r.powf(p - 1.0) * na * cphi
}

fn sphere_psi_hat(xa: &[f64], xs: &[f64], rep: &[f64], rad: f64) -> f64 {
    let c = cross(xa, xs);
    let nc = norm(&c);
    if nc < 1e-12 {
        return if xa == xs { 0.0 } else { f64::NEG_INFINITY };
    }
    // Frame with xa as pole and xs on the zero meridian.
    let e3 = xa;
    let proj = dot(xs, xa);
    let e1v: Vec<f64> = xs.iter().zip(xa).map(|(s, a)| s - proj * a).collect();
    let n1 = norm(&e1v);
    let e1: Vec<f64> = e1v.iter().map(|v| v / n1).collect();
    let e2 = cross(e3, &e1);
    let theta_s = nc.atan2(proj);
    let (rx, ry, rz) = (dot(rep, &e1), dot(rep, &e2), dot(rep, e3));
    let sin_b = (rx * rx + ry * ry).sqrt();
    let theta_b = sin_b.atan2(rz);
    let phi_b = ry.atan2(rx);
    let dphi = if rad > PI / 2.0 || rad >= theta_b.min(PI - theta_b) {
        PI
    } else {
        // sin(dphi) = sin(rad) / sin(theta_b)
        let (sr, sb) = (rad.sin(), theta_b.sin());
        sr.atan2(((sb - sr) * (sb + sr)).max(0.0).sqrt())
    };
    let phi_max = (phi_b.abs() + dphi).min(PI);
    let theta_min = (theta_b - rad).max(0.0);
    // Distance from xs to the corner point (theta_min, phi_max).
    let corner = [theta_min.sin() * phi_max.cos(), theta_min.sin() * phi_max.sin(), theta_min.cos()];
    let s = [theta_s.sin(), 0.0, theta_s.cos()];
    let d_corner = geodesic(&s, &corner);
    let dd_min = theta_min - d_corner;
    let ds_rep = geodesic(xs, rep);
    let d_star = if dd_min > 0.0 { (ds_rep - rad).max(0.0) } else { (ds_rep + rad).min(PI) };
    2.0 * d_star * dd_min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        assert_eq!(CostSpec::SqEuclidean.cost(&[0.0, 0.0], &[3.0, 4.0]), 25.0);
        assert_eq!(CostSpec::PEuclidean { p: 3.0 }.cost(&[0.0, 0.0], &[2.0, 0.0]), 8.0);
        let c = CostSpec::SphereSqGeodesic.cost(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]);
        assert!((c - (PI / 2.0).powi(2)).abs() < 1e-12);
        assert!((c - 2.4674).abs() < 1e-4);
    }

    #[test]
    fn psi_examples() {
        let s = CostSpec::SqEuclidean;
        assert_eq!(s.psi(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0]), 5.0);
        assert_eq!(s.psi(&[1.0, 2.0], &[1.0, 2.0], &[7.0, -3.0]), 0.0);
        let (a, b, y) = ([0.3, 1.1], [-2.0, 0.5], [4.0, 4.0]);
        assert_eq!(s.psi(&a, &b, &y), -s.psi(&b, &a, &y));
    }

    #[test]
    fn shields_examples() {
        let s = CostSpec::SqEuclidean;
        let (xa, xs) = ([0.0, 0.0], [1.0, 0.0]);
        assert!(s.shields(&xa, &xs, &xs, &[2.0, 0.0], 0.0));
        assert!(!s.shields(&xa, &xs, &xs, &[0.0, 0.0], 0.0));
        // Four axis neighbours around the origin shielding (2,2).
        let yb = [2.0, 2.0];
        assert!(s.shields(&xa, &[1.0, 0.0], &[1.0, 0.0], &yb, 0.0));
        assert!(s.shields(&xa, &[0.0, 1.0], &[0.0, 1.0], &yb, 0.0));
        assert!(!s.shields(&xa, &[-1.0, 0.0], &[-1.0, 0.0], &yb, 0.0));
        assert!(!s.shields(&xa, &[0.0, -1.0], &[0.0, -1.0], &yb, 0.0));
    }

    #[test]
    fn psi_hat_examples() {
        let s = CostSpec::SqEuclidean;
        assert_eq!(s.psi_hat(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0], 1.0, false), 3.0);
        let p2 = CostSpec::PEuclidean { p: 2.0 };
        let b = p2.psi_hat(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], 0.0, false);
        assert!((b - 2.0).abs() < 1e-12);
        assert!(b <= p2.psi(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]));
        let x = [0.0, 0.6, 0.8];
        assert_eq!(CostSpec::SphereSqGeodesic.psi_hat(&x, &x, &[1.0, 0.0, 0.0], 0.3, false), 0.0);
        assert_eq!(s.psi_hat(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 1.0], 0.0, true), s.psi(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 1.0]));
    }

    #[test]
    fn sphere_psi_hat_antipodal_is_sentinel() {
        let b = CostSpec::SphereSqGeodesic.psi_hat(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0], &[1.0, 0.0, 0.0], 0.1, false);
        assert_eq!(b, f64::NEG_INFINITY);
    }

    #[test]
    fn lipschitz_field_examples() {
        assert_eq!(lipschitz_field(&[0.0, 0.0], &[0.3, 0.2], 20.0), 0.0);
        let bound = 20.0 / (2.0 * PI);
        for i in 0..1000 {
            let t = i as f64 * 0.37;
            let v = lipschitz_field(&[t, 2.0 * t - 5.0], &[t.sin(), t.cos() * 3.0], 20.0);
            assert!(v.abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn noise_hash_range_and_determinism() {
        for i in 0..100 {
            for j in 0..100 {
                let v = noise_hash(7, i, j);
                assert!((0.0..1.0).contains(&v));
                assert_eq!(v, noise_hash(7, i, j));
            }
        }
        assert_ne!(noise_hash(7, 1, 2), noise_hash(7, 2, 1));
    }

    #[test]
    fn noise_dropped_without_pair() {
        let c = CostSpec::noisy(5.0, 0.0, 3);
        let (x, y) = ([1.0, 2.0], [2.0, 2.0]);
        assert_eq!(c.eval(&x, &y, None), 1.0);
        assert!(c.eval(&x, &y, Some((0, 1))) >= 1.0);
        assert_eq!(c.slack(&x, &y), 10.0);
    }
}
