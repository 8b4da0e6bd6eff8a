//! FSIG signal files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field              |
//! |-------|--------------------|
//! | 4     | magic `FSIG`       |
//! | 4     | version (u32 = 1)  |
//! | 8     | symbol_rate (f64)  |
//! | 4     | samples_per_symbol (u32) |
//! | 8     | n_symbols (u64)    |
//! | 16·n  | interleaved re/im f64 samples |

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signals::{ComplexSignal, TimeGrid};

pub const MAGIC: &[u8; 4] = b"FSIG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 8;

pub fn encode(sig: &ComplexSignal) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * sig.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&sig.grid.symbol_rate.to_le_bytes());
    out.extend_from_slice(&(sig.grid.samples_per_symbol as u32).to_le_bytes());
    out.extend_from_slice(&(sig.grid.n_symbols as u64).to_le_bytes());
    for s in &sig.samples {
        out.extend_from_slice(&s.re.to_le_bytes());
        out.extend_from_slice(&s.im.to_le_bytes());
    }
    out
}

/// Decode one signal from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(ComplexSignal, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!("FSIG header needs {HEADER_LEN} bytes, got {}", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Corrupt("bad FSIG magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let symbol_rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let sps = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let n_symbols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let grid = TimeGrid::new(sps, symbol_rate, n_symbols).map_err(|e| Error::Corrupt(e.to_string()))?;
    let n = grid.n_samples();
    let end = n.checked_mul(16).and_then(|b| b.checked_add(HEADER_LEN)).ok_or_else(|| Error::Corrupt("sample count overflow".into()))?;
    if bytes.len() < end {
        return Err(Error::Corrupt(format!("FSIG payload truncated: need {end} bytes, got {}", bytes.len())));
    }
    let samples = bytes[HEADER_LEN..end]
        .chunks_exact(16)
        .map(|c| Complex64::new(f64::from_le_bytes(c[0..8].try_into().unwrap()), f64::from_le_bytes(c[8..16].try_into().unwrap())))
        .collect();
    let sig = ComplexSignal::new(grid, samples).map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok((sig, end))
}

pub fn decode(bytes: &[u8]) -> Result<ComplexSignal> {
    let (sig, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after FSIG payload", bytes.len() - used)));
    }
    Ok(sig)
}

pub fn write(path: &Path, sig: &ComplexSignal) -> Result<()> {
    fs::write(path, encode(sig))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<ComplexSignal> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

/// CSV export: `index,re,im` with round-trip precision.
pub fn write_csv(path: &Path, sig: &ComplexSignal) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "index,re,im")?;
    for (k, s) in sig.samples.iter().enumerate() {
        writeln!(f, "{k},{:e},{:e}", s.re, s.im)?;
    }
    f.flush()?;
    Ok(())
}
