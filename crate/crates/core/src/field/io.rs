//! Binary field files and 1-d CSV slices.
//!
//! Binary layout: `d`, `n` as little-endian `u64`, `L` as little-endian `f64`,
//! then `n^d` pairs `(re, im)` of little-endian `f64` in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{Field, Grid};
use crate::{Error, Result};

pub fn write_field<W: Write>(f: &Field, mut w: W) -> Result<()> {
    let g = f.grid();
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    w.write_all(&(g.n() as u64).to_le_bytes())?;
    w.write_all(&g.length().to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * g.len());
    for v in f.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let d = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let l = f64::from_le_bytes(b8);
    let grid = Grid::new(d, n, l)?;
    let mut buf = vec![0u8; 16 * grid.len()];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Field::from_values(&grid, values)
}

pub fn save_field(f: &Field, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_field(f, std::io::BufWriter::new(file))
}

pub fn load_field(path: &Path) -> Result<Field> {
    let file = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(file))
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV of the line through the box center along `axis`: `x, re, im, abs`.
pub fn write_slice_csv<W: Write>(f: &Field, axis: usize, w: W) -> Result<()> {
    let g = f.grid();
    if axis >= g.dim() {
        return Err(Error::InvalidArgument(format!("axis {axis} >= dimension {}", g.dim())));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "re", "im", "abs"])?;
    let xs = g.axis_positions();
    for &xa in &xs {
        let mut p = [0.0; 3];
        p[axis] = xa;
        let v = f.values()[g.nearest_index(&p)];
        out.write_record([fmt_f64(xa), fmt_f64(v.re), fmt_f64(v.im), fmt_f64(v.norm())])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let g = Grid::new(2, 8, 3.5).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new(x[0].sin(), x[1] * 0.1));
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 64);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        let back = read_field(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn slice_csv() {
        let g = Grid::new(2, 8, 8.0).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new(x[0], x[1]));
        let mut buf = Vec::new();
        write_slice_csv(&f, 0, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("-4.0000000000000000e0,-4.0000000000000000e0,0.0"));
    }
}
