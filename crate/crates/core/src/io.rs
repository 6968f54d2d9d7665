//! CSV and binary export of paths, sensitivity fields and density grids.
//!
//! The binary layout (`FDE1`) is little-endian: the magic bytes `FDE1`, the
//! Hurst parameter as `f64`, the row width `d` as `u32` and the row count as
//! `u32`, followed by rows of `1 + d` `f64` values. Paths store `(t, y)`
//! rows; sensitivity fields use `d = 4` with rows `(r, t, i, j, value)`.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::grid::{GridPath, UniformGrid};
use crate::malliavin::DensityEstimate;
use crate::sensitivity::SensitivityField;

pub const MAGIC: &[u8; 4] = b"FDE1";

pub fn write_path_csv<W: Write>(mut w: W, path: &GridPath) -> Result<()> {
    let mut header = String::from("t");
    for c in 0..path.dim() {
        header.push_str(&format!(",y{c}"));
    }
    writeln!(w, "{header}")?;
    for (i, t) in path.grid().nodes().enumerate() {
        let mut line = format!("{t}");
        for v in path.at(i) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {lineno}: {e}")))
        })
        .collect()
}

/// Reads a path written by [`write_path_csv`]; the grid is rebuilt from the
/// first and last `t`.
pub fn read_path_csv<R: BufRead>(r: R) -> Result<GridPath> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))??;
    let dim = header.split(',').count().saturating_sub(1);
    if dim == 0 || !header.starts_with('t') {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut ts = Vec::new();
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(&line, k + 2)?;
        if row.len() != dim + 1 {
            return Err(Error::Format(format!("line {}: expected {} fields", k + 2, dim + 1)));
        }
        ts.push(row[0]);
        values.extend_from_slice(&row[1..]);
    }
    if ts.len() < 2 {
        return Err(Error::Format("a path needs at least two rows".into()));
    }
    let grid = UniformGrid::new(ts[0], ts[ts.len() - 1], ts.len() - 1)?;
    GridPath::new(grid, dim, values)
}

/// Rows `(r, t, i, j, value)` for every stored `r` and every `t >= r`.
pub fn field_rows(field: &SensitivityField) -> Vec<[f64; 5]> {
    let mut rows = Vec::new();
    for (c, &r) in field.r_nodes.iter().enumerate() {
        for t in r..field.grid.n_nodes() {
            let v = field.value(c, t);
            for i in 0..field.n {
                for j in 0..field.d {
                    rows.push([
                        field.grid.node(r),
                        field.grid.node(t),
                        i as f64,
                        j as f64,
                        v[i * field.d + j],
                    ]);
                }
            }
        }
    }
    rows
}

pub fn write_field_csv<W: Write>(mut w: W, field: &SensitivityField) -> Result<()> {
    writeln!(w, "r,t,i,j,value")?;
    for [r, t, i, j, v] in field_rows(field) {
        writeln!(w, "{r},{t},{i},{j},{v}")?;
    }
    Ok(())
}

/// Columns `y0[,y1],density` over the evaluation grid.
pub fn write_density_csv<W: Write>(mut w: W, est: &DensityEstimate) -> Result<()> {
    match est.axes.len() {
        1 => {
            writeln!(w, "y0,density")?;
            for (x, v) in est.axes[0].iter().zip(&est.values) {
                writeln!(w, "{x},{v}")?;
            }
        }
        2 => {
            writeln!(w, "y0,y1,density")?;
            let m = est.axes[1].len();
            for (k, v) in est.values.iter().enumerate() {
                writeln!(w, "{},{},{v}", est.axes[0][k / m], est.axes[1][k % m])?;
            }
        }
        _ => {
            return Err(Error::Unsupported(
                "gridded density output is limited to two dimensions".into(),
            ))
        }
    }
    Ok(())
}

/// Raw `FDE1` record set: `rows` holds `count * (1 + d)` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Fde1 {
    pub hurst: f64,
    pub d: usize,
    pub rows: Vec<f64>,
}

impl Fde1 {
    pub fn row_count(&self) -> usize {
        self.rows.len() / (1 + self.d)
    }

    pub fn from_path(hurst: f64, path: &GridPath) -> Self {
        let mut rows = Vec::with_capacity(path.len() * (1 + path.dim()));
        for (i, t) in path.grid().nodes().enumerate() {
            rows.push(t);
            rows.extend_from_slice(path.at(i));
        }
        Self {
            hurst,
            d: path.dim(),
            rows,
        }
    }

    pub fn from_field(hurst: f64, field: &SensitivityField) -> Self {
        Self {
            hurst,
            d: 4,
            rows: field_rows(field).into_iter().flatten().collect(),
        }
    }

    /// Interprets `(t, y)` rows as a path on a uniform grid.
    pub fn to_path(&self) -> Result<GridPath> {
        let n = self.row_count();
        if n < 2 {
            return Err(Error::Format("a path needs at least two rows".into()));
        }
        let w = 1 + self.d;
        let grid = UniformGrid::new(self.rows[0], self.rows[(n - 1) * w], n - 1)?;
        let values = self.rows.chunks_exact(w).flat_map(|r| r[1..].iter().copied()).collect();
        GridPath::new(grid, self.d, values)
    }
}

pub fn write_fde1<W: Write>(mut w: W, rec: &Fde1) -> Result<()> {
    let width = 1 + rec.d;
    if !rec.rows.len().is_multiple_of(width) {
        return Err(Error::DimensionMismatch {
            expected: width,
            actual: rec.rows.len() % width,
        });
    }
    let d = u32::try_from(rec.d).map_err(|_| Error::Format("row width exceeds u32".into()))?;
    let n = u32::try_from(rec.row_count()).map_err(|_| Error::Format("row count exceeds u32".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&rec.hurst.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    for v in &rec.rows {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_fde1<R: Read>(mut r: R) -> Result<Fde1> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8)?;
    let hurst = f64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut rows = Vec::with_capacity(n * (1 + d));
    for _ in 0..n * (1 + d) {
        r.read_exact(&mut b8).map_err(|_| Error::Format("truncated record".into()))?;
        rows.push(f64::from_le_bytes(b8));
    }
    Ok(Fde1 { hurst, d, rows })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: serde::Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> GridPath {
        let g = UniformGrid::new(0.0, 1.0, 8).unwrap();
        GridPath::from_fn(g, 2, |t, o| {
            o[0] = t.sin();
            o[1] = 1.0 / 3.0 + t;
        })
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = path();
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &p).unwrap();
        assert!(buf.starts_with(b"t,y0,y1\n0,0,"));
        let back = read_path_csv(&buf[..]).unwrap();
        assert_eq!(back.values(), p.values());
        assert!(back.grid().same_as(p.grid()));
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let p = path();
        let rec = Fde1::from_path(0.75, &p);
        let mut buf = Vec::new();
        write_fde1(&mut buf, &rec).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 4 + 4 + 9 * 3 * 8);
        assert_eq!(&buf[..4], b"FDE1");
        assert_eq!(f64::from_le_bytes(buf[4..12].try_into().unwrap()), 0.75);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 9);
        let back = read_fde1(&buf[..]).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.to_path().unwrap().values(), p.values());
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(read_fde1(&b"FDE2\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_fde1(&mut buf, &Fde1::from_path(0.75, &path())).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_fde1(&buf[..]).is_err());
        assert!(read_path_csv(&b"t,y0\n0,1\n0.5,x\n"[..]).is_err());
        assert!(read_path_csv(&b""[..]).is_err());
    }
}
