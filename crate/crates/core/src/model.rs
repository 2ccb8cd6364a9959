//! Measures, couplings, neighbourhoods, dual potentials and problem instances.
//!
//! Masses and costs are held as integers. A real cost `c` becomes
//! `round(c * cost_scale)` (ties away from zero) and all objectives are exact
//! `i128` sums of cost units times mass units.

use crate::costs::{CostSpec, Metric};
use crate::{Error, Result};

pub const DEFAULT_MASS_SCALE: i64 = 1_000_000_000;
pub const DEFAULT_COST_SCALE: i64 = 1_000_000_000;

/// Largest admissible magnitude of a quantized cost.
pub const MAX_COST_UNITS: f64 = (1u64 << 61) as f64;

/// `round(c_raw * cost_scale)`, ties away from zero.
pub fn quantize_cost(c_raw: f64, cost_scale: i64) -> Result<i64> {
    if !c_raw.is_finite() {
        return Err(Error::InfiniteCost);
    }
    if cost_scale < 1 {
        return Err(Error::Invalid(format!("cost_scale must be >= 1, got {cost_scale}")));
    }
    let v = (c_raw * cost_scale as f64).round();
    if v.abs() > MAX_COST_UNITS {
        return Err(Error::Overflow(format!("cost {c_raw} at scale {cost_scale}")));
    }
    Ok(v as i64)
}

/// A point cloud with integer masses summing to `mass_scale`.
///
/// Points are stored row-major in a flat vector of length `len * dim`.
/// Measures read from grid files also record their grid shape; point
/// coordinates are then the integer grid positions in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub dim: usize,
    pub points: Vec<f64>,
    pub masses: Vec<i64>,
    pub mass_scale: i64,
    pub grid_shape: Option<Vec<usize>>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<f64>, masses: Vec<i64>, mass_scale: i64) -> Result<Self> {
        let m = DiscreteMeasure { dim, points, masses, mass_scale, grid_shape: None };
        m.validate()?;
        Ok(m)
    }

    /// Measure on the full Cartesian grid `0..s_1 × … × 0..s_n`, masses row-major.
    pub fn grid(shape: &[usize], masses: Vec<i64>, mass_scale: i64) -> Result<Self> {
        let points = grid_points(shape);
        let m = DiscreteMeasure {
            dim: shape.len(),
            points,
            masses,
            mass_scale,
            grid_shape: Some(shape.to_vec()),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if self.mass_scale < 1 {
            return Err(Error::Invalid("mass_scale must be positive".into()));
        }
        if self.points.len() != self.masses.len() * self.dim {
            return Err(Error::Invalid(format!(
                "{} coordinates for {} masses in dimension {}",
                self.points.len(),
                self.masses.len(),
                self.dim
            )));
        }
        if self.masses.is_empty() {
            return Err(Error::Invalid("empty measure".into()));
        }
        if self.points.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite coordinate".into()));
        }
        if self.masses.iter().any(|&m| m < 0) {
            return Err(Error::Invalid("negative mass".into()));
        }
        let total: i128 = self.masses.iter().map(|&m| m as i128).sum();
        if total != self.mass_scale as i128 {
            return Err(Error::Invalid(format!(
                "masses sum to {total}, expected mass_scale {}",
                self.mass_scale
            )));
        }
        if let Some(shape) = &self.grid_shape {
            if shape.len() != self.dim || shape.iter().product::<usize>() != self.masses.len() {
                return Err(Error::Invalid("grid shape does not match measure".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_full_support(&self) -> bool {
        self.masses.iter().all(|&m| m >= 1)
    }
}

/// Row-major integer coordinates of a Cartesian grid.
pub fn grid_points(shape: &[usize]) -> Vec<f64> {
    let n = shape.iter().product::<usize>();
    let dim = shape.len();
    let mut pts = Vec::with_capacity(n * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..n {
        pts.extend(idx.iter().map(|&v| v as f64));
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    pts
}

/// Multi-index of a row-major flat grid index.
pub fn grid_coords(shape: &[usize], mut flat: usize, out: &mut [usize]) {
    for a in (0..shape.len()).rev() {
        out[a] = flat % shape[a];
        flat /= shape[a];
    }
}

/// Row-major flat index of a multi-index.
pub fn grid_index(shape: &[usize], coords: &[usize]) -> usize {
    coords.iter().zip(shape).fold(0, |acc, (&c, &s)| acc * s + c)
}

/// Sparse transport plan in canonical row-compressed form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseCoupling {
    pub n_x: usize,
    pub n_y: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    masses: Vec<i64>,
}

impl SparseCoupling {
    /// Builds the canonical coupling: entries sorted, duplicates summed, zeros dropped.
    pub fn from_triplets(n_x: usize, n_y: usize, mut entries: Vec<(usize, usize, i64)>) -> Result<Self> {
        if let Some(&(x, y, _)) = entries.iter().find(|&&(x, y, _)| x >= n_x || y >= n_y) {
            return Err(Error::Invalid(format!("entry ({x},{y}) outside {n_x}x{n_y}")));
        }
        if entries.iter().any(|e| e.2 < 0) {
            return Err(Error::Invalid("negative coupling mass".into()));
        }
        entries.sort_unstable_by_key(|&(x, y, _)| (x, y));
        let mut merged: Vec<(usize, usize, i64)> = Vec::with_capacity(entries.len());
        for (x, y, m) in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (x, y) => last.2 += m,
                _ => merged.push((x, y, m)),
            }
        }
        merged.retain(|e| e.2 != 0);
        let mut row_ptr = vec![0usize; n_x + 1];
        for &(x, _, _) in &merged {
            row_ptr[x + 1] += 1;
        }
        for x in 0..n_x {
            row_ptr[x + 1] += row_ptr[x];
        }
        let cols = merged.iter().map(|e| e.1 as u32).collect();
        let masses = merged.iter().map(|e| e.2).collect();
        Ok(SparseCoupling { n_x, n_y, row_ptr, cols, masses })
    }

    pub fn canonical(&self) -> Self {
        Self::from_triplets(self.n_x, self.n_y, self.iter().collect()).expect("valid coupling")
    }

    #[inline]
    pub fn row(&self, x: usize) -> (&[u32], &[i64]) {
        let r = self.row_ptr[x]..self.row_ptr[x + 1];
        (&self.cols[r.clone()], &self.masses[r])
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, i64)> + '_ {
        (0..self.n_x).flat_map(move |x| {
            let (ys, ms) = self.row(x);
            ys.iter().zip(ms).map(move |(&y, &m)| (x, y as usize, m))
        })
    }

    pub fn mass(&self, x: usize, y: usize) -> i64 {
        let (ys, ms) = self.row(x);
        ys.binary_search(&(y as u32)).map(|k| ms[k]).unwrap_or(0)
    }

    pub fn row_sums(&self) -> Vec<i64> {
        (0..self.n_x).map(|x| self.row(x).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<i64> {
        let mut s = vec![0i64; self.n_y];
        for (_, y, m) in self.iter() {
            s[y] += m;
        }
        s
    }

    /// Checks both marginal constraints against `mu` and `nu` masses.
    pub fn check_marginals(&self, mu: &[i64], nu: &[i64]) -> Result<()> {
        if mu.len() != self.n_x || nu.len() != self.n_y {
            return Err(Error::Invalid("marginals violated: size mismatch".into()));
        }
        if let Some(x) = self.row_sums().iter().zip(mu).position(|(a, b)| a != b) {
            return Err(Error::Invalid(format!("marginals violated at x={x}")));
        }
        if let Some(y) = self.col_sums().iter().zip(nu).position(|(a, b)| a != b) {
            return Err(Error::Invalid(format!("marginals violated at y={y}")));
        }
        Ok(())
    }

    /// For each y, the x-indices with positive mass in column y (ascending).
    pub fn columns(&self) -> Vec<Vec<u32>> {
        let mut cols = vec![Vec::new(); self.n_y];
        for (x, y, _) in self.iter() {
            cols[y].push(x as u32);
        }
        cols
    }
}

/// Row-compressed set of admissible (x, y) pairs, rows sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbourhood {
    pub n_x: usize,
    pub n_y: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl Neighbourhood {
    pub fn from_rows(n_y: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let mut b = NeighbourhoodBuilder::new(rows.len(), n_y);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            b.push_row(&r)?;
        }
        Ok(b.finish())
    }

    pub fn full(n_x: usize, n_y: usize) -> Self {
        let mut cols = Vec::with_capacity(n_x * n_y);
        for _ in 0..n_x {
            cols.extend(0..n_y as u32);
        }
        Neighbourhood { n_x, n_y, row_ptr: (0..=n_x).map(|x| x * n_y).collect(), cols }
    }

    pub fn support_of(pi: &SparseCoupling) -> Self {
        Neighbourhood {
            n_x: pi.n_x,
            n_y: pi.n_y,
            row_ptr: pi.row_ptr.clone(),
            cols: pi.cols.clone(),
        }
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[u32] {
        &self.cols[self.row_ptr[x]..self.row_ptr[x + 1]]
    }

    #[inline]
    pub fn row_start(&self, x: usize) -> usize {
        self.row_ptr[x]
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.row(x).binary_search(&(y as u32)).is_ok()
    }

    /// Position of (x, y) in the flat pair list.
    #[inline]
    pub fn position(&self, x: usize, y: usize) -> Option<usize> {
        self.row(x).binary_search(&(y as u32)).ok().map(|k| self.row_ptr[x] + k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_x).flat_map(move |x| self.row(x).iter().map(move |&y| (x, y as usize)))
    }

    pub fn max_row_len(&self) -> usize {
        (0..self.n_x).map(|x| self.row(x).len()).max().unwrap_or(0)
    }

    pub fn contains_support(&self, pi: &SparseCoupling) -> bool {
        pi.iter().all(|(x, y, _)| self.contains(x, y))
    }
}

/// Incremental row-by-row construction of a [`Neighbourhood`].
pub struct NeighbourhoodBuilder {
    n_x: usize,
    n_y: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl NeighbourhoodBuilder {
    pub fn new(n_x: usize, n_y: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n_x + 1);
        row_ptr.push(0);
        NeighbourhoodBuilder { n_x, n_y, row_ptr, cols: Vec::new() }
    }

    /// Appends the next row; it must be strictly increasing and in range.
    pub fn push_row(&mut self, row: &[u32]) -> Result<()> {
        if self.row_ptr.len() > self.n_x {
            return Err(Error::Invalid("too many neighbourhood rows".into()));
        }
        if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&y| y as usize >= self.n_y) {
            return Err(Error::Invalid("neighbourhood row not sorted or out of range".into()));
        }
        self.cols.extend_from_slice(row);
        self.row_ptr.push(self.cols.len());
        Ok(())
    }

    pub fn finish(mut self) -> Neighbourhood {
        while self.row_ptr.len() <= self.n_x {
            self.row_ptr.push(self.cols.len());
        }
        Neighbourhood { n_x: self.n_x, n_y: self.n_y, row_ptr: self.row_ptr, cols: self.cols }
    }
}

/// Dual potentials in cost units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualPotentials {
    pub alpha: Vec<i64>,
    pub beta: Vec<i64>,
}

/// A transport problem between two measures under a cost family.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub cost: CostSpec,
    pub cost_scale: i64,
}

impl ProblemInstance {
    pub fn new(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec, cost_scale: i64) -> Result<Self> {
        mu.validate()?;
        nu.validate()?;
        if mu.mass_scale != nu.mass_scale {
            return Err(Error::Invalid("mass scales differ".into()));
        }
        if mu.dim != nu.dim {
            return Err(Error::DimensionMismatch { expected: mu.dim, got: nu.dim });
        }
        if !mu.has_full_support() || !nu.has_full_support() {
            return Err(Error::Invalid("zero-mass atoms must be stripped (full support required)".into()));
        }
        if cost_scale < 1 {
            return Err(Error::Invalid("cost_scale must be positive".into()));
        }
        cost.validate(mu.dim, nu.len())?;
        if cost.metric() == Metric::Sphere {
            for m in [&mu, &nu] {
                for i in 0..m.len() {
                    let n2: f64 = m.point(i).iter().map(|c| c * c).sum();
                    if (n2.sqrt() - 1.0).abs() > 1e-9 {
                        return Err(Error::Invalid(format!("sphere point {i} is not unit-norm")));
                    }
                }
            }
        }
        let bound = cost.max_cost_bound(&bounding_extent(&mu, &nu));
        if !(bound * cost_scale as f64 <= MAX_COST_UNITS) {
            return Err(Error::Overflow(format!(
                "costs up to {bound} do not fit at cost_scale {cost_scale}"
            )));
        }
        Ok(ProblemInstance { mu, nu, cost, cost_scale })
    }

    pub fn n_x(&self) -> usize {
        self.mu.len()
    }

    pub fn n_y(&self) -> usize {
        self.nu.len()
    }

    /// Real-valued cost of the pair (x, y), noise included.
    #[inline]
    pub fn cost_real(&self, x: usize, y: usize) -> f64 {
        self.cost.eval(self.mu.point(x), self.nu.point(y), Some((x, y)))
    }

    /// Quantized cost of the pair (x, y).
    #[inline]
    pub fn cost_units(&self, x: usize, y: usize) -> i64 {
        // Range was checked at construction, so this cannot fail.
        (self.cost_real(x, y) * self.cost_scale as f64).round() as i64
    }

    /// Exact objective of a coupling in mass-units × cost-units.
    pub fn objective(&self, pi: &SparseCoupling) -> i128 {
        pi.iter().map(|(x, y, m)| self.cost_units(x, y) as i128 * m as i128).sum()
    }

    /// Stable 64-bit FNV-1a fingerprint of the problem data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for m in [&self.mu, &self.nu] {
            h.write(&(m.dim as u64).to_le_bytes());
            for p in &m.points {
                h.write(&p.to_bits().to_le_bytes());
            }
            for w in &m.masses {
                h.write(&w.to_le_bytes());
            }
        }
        h.write(format!("{:?}", self.cost).as_bytes());
        h.write(&self.cost_scale.to_le_bytes());
        h.0
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

fn bounding_extent(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<(f64, f64)> {
    let mut ext = vec![(f64::INFINITY, f64::NEG_INFINITY); mu.dim];
    for m in [mu, nu] {
        for i in 0..m.len() {
            for (e, &c) in ext.iter_mut().zip(m.point(i)) {
                e.0 = e.0.min(c);
                e.1 = e.1.max(c);
            }
        }
    }
    ext
}

/// The map t with t(x) = y-index of the largest entry in row x (smallest y on ties).
pub fn extract_map(pi: &SparseCoupling) -> Result<Vec<u32>> {
    (0..pi.n_x)
        .map(|x| {
            let (ys, ms) = pi.row(x);
            let mut best: Option<(u32, i64)> = None;
            for (&y, &m) in ys.iter().zip(ms) {
                if best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((y, m));
                }
            }
            best.map(|b| b.0).ok_or(Error::EmptyRow(x))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exact rational rounding of p/q, ties away from zero.
    fn round_rational(p: i128, q: i128) -> i128 {
        let (p, s) = if p < 0 { (-p, -1) } else { (p, 1) };
        s * ((2 * p + q) / (2 * q))
    }

    #[test]
    fn quantize_matches_rational_oracle() {
        assert_eq!(quantize_cost(1.0, 1_000_000_000).unwrap(), 1_000_000_000);
        assert_eq!(quantize_cost(0.0, 1_000_000_000).unwrap(), 0);
        assert_eq!(quantize_cost(2.5e-10, 1_000_000_000).unwrap(), round_rational(25, 100) as i64);
        assert_eq!(quantize_cost(2.5e-10, 1_000_000_000).unwrap(), 0);
        // Dyadic values are exact in f64, so the oracle is exact.
        for (p, q) in [(5i128, 2i128), (-5, 2), (7, 4), (-7, 4), (3, 8), (1, 2), (-1, 2)] {
            let c = p as f64 / q as f64;
            assert_eq!(quantize_cost(c, 1).unwrap() as i128, round_rational(p, q), "{p}/{q}");
        }
    }

    #[test]
    fn quantize_rejects_non_finite() {
        assert!(matches!(quantize_cost(f64::INFINITY, 10), Err(Error::InfiniteCost)));
        assert!(matches!(quantize_cost(f64::NAN, 10), Err(Error::InfiniteCost)));
    }

    fn two_point_problem() -> ProblemInstance {
        let mu = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![1, 1], 2).unwrap();
        ProblemInstance::new(mu.clone(), mu, CostSpec::SqEuclidean, 1).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = two_point_problem();
        let id = SparseCoupling::from_triplets(2, 2, vec![(0, 0, 1), (1, 1, 1)]).unwrap();
        let anti = SparseCoupling::from_triplets(2, 2, vec![(0, 1, 1), (1, 0, 1)]).unwrap();
        assert_eq!(p.objective(&id), 0);
        assert_eq!(p.objective(&anti), 2);
    }

    #[test]
    fn extract_map_examples() {
        let pi = SparseCoupling::from_triplets(2, 8, vec![(0, 3, 5), (0, 7, 5), (1, 2, 1), (1, 4, 9)]).unwrap();
        assert_eq!(extract_map(&pi).unwrap(), vec![3, 4]);
        let id = SparseCoupling::from_triplets(3, 3, (0..3).map(|i| (i, i, 1)).collect()).unwrap();
        assert_eq!(extract_map(&id).unwrap(), vec![0, 1, 2]);
        let empty = SparseCoupling::from_triplets(2, 2, vec![(0, 0, 1)]).unwrap();
        assert!(matches!(extract_map(&empty), Err(Error::EmptyRow(1))));
    }

    #[test]
    fn triplets_merge_and_drop_zeros() {
        let pi = SparseCoupling::from_triplets(2, 3, vec![(1, 2, 0), (0, 1, 2), (0, 1, 3), (0, 0, 0), (1, 0, 4)]).unwrap();
        assert_eq!(pi.iter().collect::<Vec<_>>(), vec![(0, 1, 5), (1, 0, 4)]);
        assert_eq!(pi.canonical(), pi);
    }

    #[test]
    fn grid_index_roundtrip() {
        let shape = [3, 4, 2];
        let pts = grid_points(&shape);
        let mut c = [0usize; 3];
        for i in 0..24 {
            grid_coords(&shape, i, &mut c);
            assert_eq!(grid_index(&shape, &c), i);
            assert_eq!(&pts[i * 3..i * 3 + 3], &[c[0] as f64, c[1] as f64, c[2] as f64]);
        }
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(1, vec![0.0], vec![2], 3).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0], vec![-1], -1).is_err());
        assert!(DiscreteMeasure::new(2, vec![0.0], vec![1], 1).is_err());
        let m = DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0, 2], 2).unwrap();
        assert!(!m.has_full_support());
        assert!(ProblemInstance::new(m.clone(), m, CostSpec::SqEuclidean, 1).is_err());
    }

    #[test]
    fn neighbourhood_basics() {
        let n = Neighbourhood::from_rows(4, vec![vec![3, 1, 1], vec![], vec![0]]).unwrap();
        assert_eq!(n.row(0), &[1, 3]);
        assert!(n.contains(2, 0) && !n.contains(1, 0));
        assert_eq!(n.len(), 3);
        assert_eq!(n.position(2, 0), Some(2));
        assert_eq!(Neighbourhood::full(2, 3).len(), 6);
    }
}
