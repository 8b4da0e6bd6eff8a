//! Overlapping frames: `guard_n` symbols on each side of `core_m` core
//! symbols. Sequence ends wrap cyclically. Stitching keeps cores only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsig;
use crate::signals::{ComplexSignal, TimeGrid};
use crate::ssfm::FiberParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramingSpec {
    pub core_m: usize,
    pub guard_n: usize,
}

impl Default for FramingSpec {
    fn default() -> Self {
        Self { core_m: 8, guard_n: 4 }
    }
}

impl FramingSpec {
    pub fn frame_symbols(&self) -> usize {
        self.core_m + 2 * self.guard_n
    }

    fn validate(&self) -> Result<()> {
        if self.core_m == 0 {
            return Err(Error::InvalidArgument("core_m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub samples: ComplexSignal,
    /// Symbol index of the first core symbol in the parent sequence.
    pub source_core_start: usize,
}

/// Dispersion-induced ISI half-width in symbols: |beta2| L 2 pi B / T_symbol,
/// with B the occupied two-sided bandwidth `symbol_rate * (1 + rolloff)`.
pub fn isi_half_width_symbols(fiber: &FiberParams, symbol_rate: f64, rolloff: f64) -> f64 {
    let bandwidth_per_ps = symbol_rate * (1.0 + rolloff) * 1e-12;
    let spread_ps = fiber.beta2_ps2_per_km.abs() * fiber.length_km * 2.0 * std::f64::consts::PI * bandwidth_per_ps;
    spread_ps / (1e12 / symbol_rate)
}

/// Warns when the guard cannot absorb the ISI of `fiber`; returns adequacy.
pub fn guard_is_adequate(spec: &FramingSpec, fiber: &FiberParams, symbol_rate: f64, rolloff: f64) -> bool {
    let need = isi_half_width_symbols(fiber, symbol_rate, rolloff);
    let ok = spec.guard_n as f64 >= need;
    if !ok {
        log::warn!("guard of {} symbols is shorter than the {:.2}-symbol ISI half-width", spec.guard_n, need);
    }
    ok
}

/// Append zero symbols so the length divides `core_m`. Returns the number padded.
pub fn pad_to_core_multiple(sig: &ComplexSignal, spec: &FramingSpec) -> Result<(ComplexSignal, usize)> {
    spec.validate()?;
    let rem = sig.grid.n_symbols % spec.core_m;
    if rem == 0 {
        return Ok((sig.clone(), 0));
    }
    let pad = spec.core_m - rem;
    let grid = sig.grid.with_symbols(sig.grid.n_symbols + pad);
    let mut samples = sig.samples.clone();
    samples.resize(grid.n_samples(), Default::default());
    Ok((ComplexSignal::new(grid, samples)?, pad))
}

pub fn split(sig: &ComplexSignal, spec: &FramingSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    let t = sig.grid.n_symbols;
    if !t.is_multiple_of(spec.core_m) {
        return Err(Error::Length(format!("{t} symbols is not a multiple of core_m = {}; pad explicitly", spec.core_m)));
    }
    let sps = sig.grid.samples_per_symbol;
    let n = sig.len();
    let frame_grid = sig.grid.with_symbols(spec.frame_symbols());
    let frame_len = frame_grid.n_samples();
    let back = spec.guard_n * sps;
    (0..t / spec.core_m)
        .map(|k| {
            let start = (k * spec.core_m * sps + n * (1 + back / n) - back) % n;
            let samples = (0..frame_len).map(|j| sig.samples[(start + j) % n]).collect();
            Ok(Frame { samples: ComplexSignal { grid: frame_grid, samples }, source_core_start: k * spec.core_m })
        })
        .collect()
}

pub fn stitch(frames: &[Frame], spec: &FramingSpec) -> Result<ComplexSignal> {
    spec.validate()?;
    let first = frames.first().ok_or_else(|| Error::Coverage("no frames to stitch".into()))?;
    let sps = first.samples.grid.samples_per_symbol;
    for (k, f) in frames.iter().enumerate() {
        let expected = k * spec.core_m;
        if f.source_core_start != expected {
            let kind = if f.source_core_start < expected { "duplicate" } else { "gap" };
            return Err(Error::Coverage(format!(
                "{kind} at frame {k}: core starts at symbol {}, expected {expected}",
                f.source_core_start
            )));
        }
        if f.samples.grid.n_symbols != spec.frame_symbols() || f.samples.grid.samples_per_symbol != sps {
            return Err(Error::Length(format!("frame {k} does not match the framing spec")));
        }
    }
    let grid = TimeGrid { n_symbols: frames.len() * spec.core_m, ..first.samples.grid };
    let lo = spec.guard_n * sps;
    let hi = lo + spec.core_m * sps;
    let samples = frames.iter().flat_map(|f| f.samples.samples[lo..hi].iter().copied()).collect();
    ComplexSignal::new(grid, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub spec: FramingSpec,
    pub source_core_start: Vec<usize>,
}

/// Frame batches: the FSIG encodings back to back, plus a JSON index.
pub fn encode_batch(frames: &[Frame], spec: &FramingSpec) -> (Vec<u8>, FrameIndex) {
    let mut bytes = Vec::new();
    for f in frames {
        bytes.extend(fsig::encode(&f.samples));
    }
    let index = FrameIndex { spec: *spec, source_core_start: frames.iter().map(|f| f.source_core_start).collect() };
    (bytes, index)
}

pub fn decode_batch(bytes: &[u8], index: &FrameIndex) -> Result<Vec<Frame>> {
    let mut pos = 0;
    let mut frames = Vec::with_capacity(index.source_core_start.len());
    for &start in &index.source_core_start {
        let (samples, used) = fsig::decode_prefix(&bytes[pos..])?;
        pos += used;
        frames.push(Frame { samples, source_core_start: start });
    }
    if pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after frame batch".into()));
    }
    Ok(frames)
}
