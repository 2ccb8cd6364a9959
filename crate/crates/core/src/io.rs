//! Text formats.
//!
//! - `.pts`: `PTS n count mass_scale`, then `count` lines `x_1 … x_n mass`.
//! - `.dgrid`: `DGRID n s_1 … s_n mass_scale`, then row-major integer masses.
//! - `.cpl`: `CPL nX nY mass_scale`, then lines `i j mass`.
//!
//! Floats are written in Rust's shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::model::{DiscreteMeasure, SparseCoupling};
use crate::{Error, Result};

struct Tokens<'a> {
    it: std::str::SplitAsciiWhitespace<'a>,
    what: &'static str,
}

impl<'a> Tokens<'a> {
    fn new(s: &'a str, what: &'static str) -> Self {
        Tokens { it: s.split_ascii_whitespace(), what }
    }

    fn next<T: FromStr>(&mut self, field: &str) -> Result<T> {
        let tok = self.it.next().ok_or_else(|| Error::Parse(format!("{}: missing {field}", self.what)))?;
        tok.parse().map_err(|_| Error::Parse(format!("{}: bad {field} '{tok}'", self.what)))
    }

    fn expect(&mut self, tag: &str) -> Result<()> {
        match self.it.next() {
            Some(t) if t == tag => Ok(()),
            other => Err(Error::Parse(format!("{}: expected header '{tag}', found {:?}", self.what, other.unwrap_or("")))),
        }
    }

    fn finish(mut self) -> Result<()> {
        match self.it.next() {
            None => Ok(()),
            Some(t) => Err(Error::Parse(format!("{}: trailing data '{t}'", self.what))),
        }
    }
}

pub fn parse_pts(s: &str) -> Result<DiscreteMeasure> {
    let mut t = Tokens::new(s, "pts");
    t.expect("PTS")?;
    let dim: usize = t.next("dimension")?;
    let count: usize = t.next("count")?;
    let scale: i64 = t.next("mass_scale")?;
    let mut points = Vec::with_capacity(dim * count);
    let mut masses = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..dim {
            points.push(t.next::<f64>("coordinate")?);
        }
        masses.push(t.next::<i64>("mass")?);
    }
    t.finish()?;
    DiscreteMeasure::new(dim, points, masses, scale)
}

pub fn format_pts(m: &DiscreteMeasure) -> String {
    let mut s = format!("PTS {} {} {}\n", m.dim, m.len(), m.mass_scale);
    for i in 0..m.len() {
        for c in m.point(i) {
            write!(s, "{c} ").unwrap();
        }
        writeln!(s, "{}", m.masses[i]).unwrap();
    }
    s
}

pub fn parse_dgrid(s: &str) -> Result<DiscreteMeasure> {
    let mut t = Tokens::new(s, "dgrid");
    t.expect("DGRID")?;
    let dim: usize = t.next("dimension")?;
    if dim == 0 {
        return Err(Error::Parse("dgrid: dimension must be positive".into()));
    }
    let shape: Vec<usize> = (0..dim).map(|_| t.next("grid side")).collect::<Result<_>>()?;
    let scale: i64 = t.next("mass_scale")?;
    let n = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(|| Error::Parse("dgrid: grid too large".into()))?;
    let masses = (0..n).map(|_| t.next("mass")).collect::<Result<Vec<i64>>>()?;
    t.finish()?;
    DiscreteMeasure::grid(&shape, masses, scale)
}

pub fn format_dgrid(m: &DiscreteMeasure) -> Result<String> {
    let shape = m.grid_shape.as_ref().ok_or_else(|| Error::Invalid("measure has no grid shape".into()))?;
    let mut s = format!("DGRID {}", shape.len());
    for d in shape {
        write!(s, " {d}").unwrap();
    }
    writeln!(s, " {}", m.mass_scale).unwrap();
    let last = *shape.last().unwrap();
    for (i, w) in m.masses.iter().enumerate() {
        let sep = if (i + 1) % last == 0 { '\n' } else { ' ' };
        write!(s, "{w}{sep}").unwrap();
    }
    Ok(s)
}

/// Parses a coupling. Marginals are not checked here.
pub fn parse_cpl(s: &str) -> Result<(SparseCoupling, i64)> {
    let mut t = Tokens::new(s, "cpl");
    t.expect("CPL")?;
    let nx: usize = t.next("nX")?;
    let ny: usize = t.next("nY")?;
    let scale: i64 = t.next("mass_scale")?;
    let mut entries = Vec::new();
    while let Some(tok) = t.it.next() {
        let i: usize = tok.parse().map_err(|_| Error::Parse(format!("cpl: bad index '{tok}'")))?;
        let j: usize = t.next("j")?;
        let m: i64 = t.next("mass")?;
        entries.push((i, j, m));
    }
    Ok((SparseCoupling::from_triplets(nx, ny, entries)?, scale))
}

pub fn format_cpl(pi: &SparseCoupling, mass_scale: i64) -> String {
    let mut s = format!("CPL {} {} {}\n", pi.n_x, pi.n_y, mass_scale);
    for (i, j, m) in pi.iter() {
        writeln!(s, "{i} {j} {m}").unwrap();
    }
    s
}

/// Reads a measure, choosing the format from the header.
pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    let s = fs::read_to_string(path)?;
    match s.split_ascii_whitespace().next() {
        Some("PTS") => parse_pts(&s),
        Some("DGRID") => parse_dgrid(&s),
        _ => Err(Error::Parse(format!("{}: not a .pts or .dgrid file", path.display()))),
    }
}

/// Writes a measure as `.dgrid` when it has a grid shape, `.pts` otherwise.
pub fn write_measure(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let s = match m.grid_shape {
        Some(_) => format_dgrid(m)?,
        None => format_pts(m),
    };
    write_text(path, &s)
}

pub fn read_coupling(path: &Path) -> Result<(SparseCoupling, i64)> {
    parse_cpl(&fs::read_to_string(path)?)
}

pub fn write_coupling(path: &Path, pi: &SparseCoupling, mass_scale: i64) -> Result<()> {
    write_text(path, &format_cpl(pi, mass_scale))
}

pub fn write_text(path: &Path, s: &str) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pts_round_trip() {
        let m = DiscreteMeasure::new(2, vec![0.1, -3.0, 1e-300, 2.0 / 3.0], vec![3, 4], 7).unwrap();
        let s = format_pts(&m);
        assert!(s.starts_with("PTS 2 2 7\n"));
        assert_eq!(parse_pts(&s).unwrap(), m);
    }

    #[test]
    fn dgrid_round_trip() {
        let m = DiscreteMeasure::grid(&[2, 3], vec![1, 2, 3, 4, 5, 6], 21).unwrap();
        let s = format_dgrid(&m).unwrap();
        assert_eq!(s, "DGRID 2 2 3 21\n1 2 3\n4 5 6\n");
        assert_eq!(parse_dgrid(&s).unwrap(), m);
    }

    #[test]
    fn cpl_round_trip() {
        let pi = SparseCoupling::from_triplets(2, 3, vec![(1, 2, 5), (0, 0, 1), (0, 1, 4)]).unwrap();
        let s = format_cpl(&pi, 10);
        assert_eq!(s, "CPL 2 3 10\n0 0 1\n0 1 4\n1 2 5\n");
        assert_eq!(parse_cpl(&s).unwrap(), (pi, 10));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_pts("PTS 1 2 3\n0 1\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_pts("DGRID 1 2 3"), Err(Error::Parse(_))));
        assert!(matches!(parse_dgrid("DGRID 1 2 3\n1 2 9"), Err(Error::Parse(_))));
        assert!(matches!(parse_cpl("CPL 1 1 1\n0 0"), Err(Error::Parse(_))));
        // Masses that do not sum to the scale are rejected by the model.
        assert!(parse_dgrid("DGRID 1 2 4\n1 2").is_err());
    }
}
