//! Output files: number formatting, per-layer CSVs, state dumps and hashes.
//!
//! Every writer here is deterministic: the same values always produce the
//! same bytes.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fom::LayerTrace;
use crate::Real;

/// Version tag of the CSV layouts written by this crate.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Shortest representation that reads back to the same `f64`.
pub fn fmt<T: Real>(v: T) -> String {
    let v = v.as_f64();
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Hex SHA-256 of `bytes`.
pub fn hash_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `t,u,y` for one layer. The input column of the final sample is
/// empty because no input is applied after it.
pub fn write_layer_csv<T: Real>(path: &Path, trace: &LayerTrace<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "u", "y"])?;
    for (l, (t, y)) in trace.times.iter().zip(&trace.outputs).enumerate() {
        let u = trace.inputs.get(l).map(|u| fmt(*u)).unwrap_or_default();
        w.write_record([fmt(*t), u, fmt(*y)])?;
    }
    w.flush()?;
    Ok(())
}

const DUMP_MAGIC: &[u8; 8] = b"SLMSTATE";

/// Little-endian dump: magic, `u64` dimension, `u64` record count, then per
/// record the time followed by `dimension` temperatures, all `f64`.
pub fn write_state_dump<T: Real>(path: &Path, times: &[T], states: &[DVector<T>]) -> Result<()> {
    if times.len() != states.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), found: states.len() });
    }
    let dim = states.first().map_or(0, |s| s.len());
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    w.write_all(&(states.len() as u64).to_le_bytes())?;
    for (t, x) in times.iter().zip(states) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
        }
        w.write_all(&t.as_f64().to_le_bytes())?;
        for v in x.iter() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_state_dump(path: &Path) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format("not a state dump".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let dim = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let count = u64::from_le_bytes(word) as usize;
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut word)?;
        times.push(f64::from_le_bytes(word));
        let mut x = DVector::zeros(dim);
        for v in x.iter_mut() {
            r.read_exact(&mut word)?;
            *v = f64::from_le_bytes(word);
        }
        states.push(x);
    }
    Ok((times, states))
}
