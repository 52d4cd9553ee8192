//! Field persistence: `x,value` CSV and a compact little-endian binary
//! snapshot.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::mesoscopic::{Field, Grid};

const MAGIC: &[u8; 8] = b"KLDPSNAP";
const VERSION: u32 = 1;

pub fn write_field_csv<W: Write>(field: &Field, w: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "x,value")?;
    for (k, v) in field.values.iter().enumerate() {
        writeln!(w, "{},{}", field.grid.x(k), v)?;
    }
    Ok(())
}

/// Reads `x,value` rows; the nodes must be uniformly spaced.
pub fn read_field_csv<R: Read>(r: R) -> Result<Field> {
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if n == 0 || line.is_empty() {
            continue;
        }
        let (x, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected `x,value`", n + 1)))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))
        };
        xs.push(parse(x)?);
        vs.push(parse(v)?);
    }
    if xs.len() < 2 {
        return Err(Error::Format("field CSV needs at least two rows".into()));
    }
    let dx = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    for (k, x) in xs.iter().enumerate() {
        if (x - (xs[0] + k as f64 * dx)).abs() > 1e-9 * dx.abs().max(1.0) {
            return Err(Error::Format(format!("row {k}: nodes are not uniformly spaced")));
        }
    }
    Field::new(Grid::new(xs[0], dx, xs.len())?, vs)
}

pub fn write_snapshot<W: Write>(field: &Field, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&field.grid.x0.to_le_bytes())?;
    w.write_all(&field.grid.dx.to_le_bytes())?;
    w.write_all(&(field.grid.n as u64).to_le_bytes())?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Field> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a field snapshot".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let mut b8 = [0u8; 8];
    let mut f64_next = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let x0 = f64_next(&mut r)?;
    let dx = f64_next(&mut r)?;
    let mut b8n = [0u8; 8];
    r.read_exact(&mut b8n)?;
    let n = u64::from_le_bytes(b8n) as usize;
    let grid = Grid::new(x0, dx, n)?;
    let values = (0..n).map(|_| f64_next(&mut r)).collect::<Result<Vec<_>>>()?;
    Field::new(grid, values)
}
