//! `.pvec` checkpoint format: a small header (magic, layer count, per-layer
//! dims as little-endian u32) followed by the flat parameter values as
//! little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LayerShape, ParamVector};
use crate::{CoreError, Result};

const MAGIC: &[u8; 4] = b"PVEC";

pub fn save_pvec(params: &ParamVector, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(params.layout().len() as u32).to_le_bytes())?;
    for shape in params.layout() {
        w.write_all(&(shape.in_dim as u32).to_le_bytes())?;
        w.write_all(&(shape.out_dim as u32).to_le_bytes())?;
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pvec(path: &Path) -> Result<ParamVector> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Argument(format!(
            "not a pvec file: {}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let n_layers = u32::from_le_bytes(u32buf) as usize;
    let mut layout = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        r.read_exact(&mut u32buf)?;
        let in_dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let out_dim = u32::from_le_bytes(u32buf) as usize;
        layout.push(LayerShape { in_dim, out_dim });
    }
    let total: usize = layout.iter().map(LayerShape::param_count).sum();
    let mut values = Vec::with_capacity(total);
    let mut f64buf = [0u8; 8];
    for _ in 0..total {
        r.read_exact(&mut f64buf)?;
        values.push(f64::from_le_bytes(f64buf));
    }
    ParamVector::new(values, layout)
}
