//! Receiver side: digital backpropagation, matched filtering, decisions and
//! the quality metrics.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkConfig;
use crate::physics::symbol_mse;
use crate::signals::{self, ComplexSignal, ModulationFormat};
use crate::ssfm::{self, StepPlan};

/// Undo the link span by span, last span first: remove the EDFA gain, then
/// propagate through the fiber with negated attenuation, dispersion and
/// nonlinearity.
pub fn dbp(sig: &ComplexSignal, cfg: &LinkConfig, plan: &StepPlan) -> Result<ComplexSignal> {
    let mut cur = sig.clone();
    for span in cfg.spans.iter().rev() {
        cur = cur.scaled(10f64.powf(-span.effective_edfa().gain_db / 20.0));
        cur = ssfm::propagate_model(&cur, &span.fiber.model().inverse(), span.fiber.length_km, plan)?.output;
    }
    Ok(cur)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    /// Matched-filter output at the symbol instants.
    pub raw: Vec<Complex64>,
    /// `raw` scaled to unit mean energy.
    pub normalized: Vec<Complex64>,
    pub decisions: Vec<usize>,
}

impl Demodulated {
    pub fn decided_points(&self, fmt: ModulationFormat) -> Vec<Complex64> {
        let c = fmt.constellation();
        self.decisions.iter().map(|&d| c[d]).collect()
    }
}

/// Matched RRC filter, one sample per symbol, unit-energy normalization and
/// nearest-point decisions.
pub fn demodulate(sig: &ComplexSignal, fmt: ModulationFormat, rolloff: f64) -> Result<Demodulated> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::InvalidArgument(format!("rolloff {rolloff} outside [0, 1]")));
    }
    let grid = sig.grid;
    let mut filtered = sig.samples.clone();
    signals::rrc_filter(&mut filtered, &grid, rolloff);
    let raw: Vec<Complex64> = filtered.iter().step_by(grid.samples_per_symbol).copied().collect();
    let energy = raw.iter().map(|s| s.norm_sqr()).sum::<f64>() / raw.len().max(1) as f64;
    let normalized: Vec<Complex64> = if energy > 0.0 {
        let k = 1.0 / energy.sqrt();
        raw.iter().map(|s| s * k).collect()
    } else {
        raw.clone()
    };
    let constellation = fmt.constellation();
    let decisions = normalized.iter().map(|&s| fmt.decide(&constellation, s)).collect();
    Ok(Demodulated { raw, normalized, decisions })
}

/// Per-symbol MSE between two sequences on fields normalized by `norm_power_w`.
pub fn mse_per_symbol(pred: &ComplexSignal, reference: &ComplexSignal, norm_power_w: f64) -> Result<Vec<f64>> {
    if pred.grid != reference.grid {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", pred.grid, reference.grid)));
    }
    Ok(symbol_mse(&pred.samples, &reference.samples, pred.grid.samples_per_symbol, norm_power_w))
}

/// RMS error vector relative to the RMS reference amplitude, in percent.
pub fn evm_percent(received: &[Complex64], reference: &[Complex64]) -> f64 {
    let err: f64 = received.iter().zip(reference).map(|(r, s)| (r - s).norm_sqr()).sum();
    let pow: f64 = reference.iter().map(|s| s.norm_sqr()).sum();
    100.0 * (err / pow).sqrt()
}

/// EVM expected from white noise alone at a given OSNR.
pub fn analytic_evm_percent(osnr_db: f64, symbol_rate: f64) -> f64 {
    let snr = 10f64.powf(osnr_db / 10.0) * signals::OSNR_REF_BANDWIDTH_HZ / symbol_rate;
    100.0 / snr.sqrt()
}

pub fn fraction_below(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v < threshold).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse_per_symbol: Vec<f64>,
    pub evm_percent: f64,
    pub n_symbols: usize,
    pub symbol_errors: usize,
    pub bit_errors: usize,
}

impl MetricsReport {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        fraction_below(&self.mse_per_symbol, threshold)
    }

    /// Error counts and EVM of demodulated symbols against the transmitted ones.
    pub fn from_symbols(
        demod: &Demodulated,
        sent: &[Complex64],
        sent_bits: &[u8],
        fmt: ModulationFormat,
        mse_per_symbol: Vec<f64>,
    ) -> Result<Self> {
        if demod.decisions.len() != sent.len() {
            return Err(Error::Length(format!("{} decisions for {} symbols", demod.decisions.len(), sent.len())));
        }
        let rx_bits = signals::indices_to_bits(&demod.decisions, fmt);
        let truth = signals::bits_to_indices(sent_bits, fmt)?;
        Ok(Self {
            mse_per_symbol,
            evm_percent: evm_percent(&demod.normalized, sent),
            n_symbols: sent.len(),
            symbol_errors: demod.decisions.iter().zip(&truth).filter(|(a, b)| a != b).count(),
            bit_errors: rx_bits.iter().zip(sent_bits).filter(|(a, b)| a != b).count(),
        })
    }
}

/// CSV of received, decided and true points, 17 significant digits.
pub fn constellation_export(path: &Path, received: &[Complex64], decided: &[Complex64], truth: &[Complex64]) -> Result<()> {
    if received.len() != decided.len() || received.len() != truth.len() {
        return Err(Error::Length("constellation columns differ in length".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "re,im,decided_re,decided_im,true_re,true_im")?;
    for ((r, d), t) in received.iter().zip(decided).zip(truth) {
        writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.re, r.im, d.re, d.im, t.re, t.im)?;
    }
    out.flush()?;
    Ok(())
}

/// MSE histogram-ready CSV: `symbol,mse`.
pub fn write_mse_csv(path: &Path, mse: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "symbol,mse")?;
    for (k, v) in mse.iter().enumerate() {
        writeln!(out, "{k},{v:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{run_link, EdfaSpec, Propagator};
    use crate::signals::TimeGrid;
    use crate::ssfm::FiberParams;
    use crate::training::{transmit, Transmitter};

    fn tx(sps: usize, osnr: f64) -> Transmitter {
        Transmitter { samples_per_symbol: sps, osnr_db: osnr, ..Transmitter::default() }
    }

    #[test]
    fn back_to_back_recovers_symbols() {
        let t = transmit(&tx(4, f64::INFINITY), 256, 0.0, 1).unwrap();
        let shaped = signals::shape_pulses(&t.symbols, &t.clean.grid, 0.1).unwrap();
        let raw = demodulate(&shaped, ModulationFormat::Qam16, 0.1).unwrap().raw;
        for (r, s) in raw.iter().zip(&t.symbols) {
            assert!((r - s).norm() < 1e-9);
        }
        let d = demodulate(&t.clean, ModulationFormat::Qam16, 0.1).unwrap();
        let m = MetricsReport::from_symbols(&d, &t.symbols, &t.bits, ModulationFormat::Qam16, vec![]).unwrap();
        assert_eq!((m.symbol_errors, m.bit_errors), (0, 0));
        let mut clusters: Vec<usize> = d.decisions.clone();
        clusters.sort_unstable();
        clusters.dedup();
        assert_eq!(clusters.len(), 16);
    }

    #[test]
    fn zero_signal_decides_minimum_energy_point() {
        let g = TimeGrid::new(2, 14e9, 8).unwrap();
        for fmt in [ModulationFormat::Ook, ModulationFormat::Qpsk, ModulationFormat::Qam16] {
            let d = demodulate(&ComplexSignal::zeros(g), fmt, 0.1).unwrap();
            let c = fmt.constellation();
            let min = c.iter().map(|p| p.norm_sqr()).fold(f64::INFINITY, f64::min);
            assert!(d.decisions.iter().all(|&k| (c[k].norm_sqr() - min).abs() < 1e-15));
        }
    }

    #[test]
    fn decisions_ignore_global_scale() {
        let t = transmit(&tx(4, 20.0), 128, 0.0, 2).unwrap();
        let a = demodulate(&t.signal, ModulationFormat::Qam16, 0.1).unwrap();
        let b = demodulate(&t.signal.scaled(3.7), ModulationFormat::Qam16, 0.1).unwrap();
        assert_eq!(a.decisions, b.decisions);
    }

    #[test]
    fn dbp_inverts_noiseless_link() {
        let t = transmit(&tx(4, f64::INFINITY), 128, 0.0, 3).unwrap();
        let plan = StepPlan::fixed(1.0);
        let cfg = crate::link::LinkConfig::uniform(4, FiberParams::default(), EdfaSpec::default().noiseless(), Propagator::Ssfm { plan });
        let out = run_link(&t.signal, &cfg, false, 0).unwrap();
        let back = dbp(out.output().unwrap(), &cfg, &plan).unwrap();
        assert!(ssfm::rms_difference(&back, &t.signal) < 1e-6);
    }

    #[test]
    fn linear_dbp_is_exact_dispersion_compensation() {
        let t = transmit(&tx(4, f64::INFINITY), 128, 3.0, 4).unwrap();
        let fiber = FiberParams { gamma_per_w_km: 0.0, ..FiberParams::default() };
        let plan = StepPlan::fixed(80.0);
        let cfg = crate::link::LinkConfig::uniform(2, fiber, EdfaSpec::default().noiseless(), Propagator::Ssfm { plan });
        let out = run_link(&t.signal, &cfg, false, 0).unwrap();
        let back = dbp(out.output().unwrap(), &cfg, &plan).unwrap();
        assert!(ssfm::rms_difference(&back, &t.signal) < 1e-9);
        let empty = crate::link::LinkConfig { spans: vec![], ..cfg };
        assert_eq!(dbp(&t.signal, &empty, &plan).unwrap(), t.signal);
    }

    #[test]
    fn mse_closed_forms() {
        let t = transmit(&tx(4, 25.0), 32, 0.0, 5).unwrap();
        assert!(mse_per_symbol(&t.signal, &t.signal, 1e-3).unwrap().iter().all(|&v| v == 0.0));
        let c = 0.01;
        let mut shifted = t.signal.clone();
        shifted.samples.iter_mut().for_each(|s| s.re += c);
        for v in mse_per_symbol(&shifted, &t.signal, 1.0).unwrap() {
            assert!((v - c * c / 2.0).abs() < 1e-15);
        }
        // permuting symbols permutes the entries
        let sps = 4;
        let mut perm = shifted.clone();
        perm.samples[..sps].copy_from_slice(&shifted.samples[sps..2 * sps]);
        perm.samples[sps..2 * sps].copy_from_slice(&shifted.samples[..sps]);
        let mut rperm = t.signal.clone();
        rperm.samples[..sps].copy_from_slice(&t.signal.samples[sps..2 * sps]);
        rperm.samples[sps..2 * sps].copy_from_slice(&t.signal.samples[..sps]);
        let a = mse_per_symbol(&shifted, &t.signal, 1.0).unwrap();
        let b = mse_per_symbol(&perm, &rperm, 1.0).unwrap();
        assert_eq!((a[0], a[1]), (b[1], b[0]));
        let other = ComplexSignal::zeros(t.signal.grid.with_symbols(16));
        assert!(matches!(mse_per_symbol(&other, &t.signal, 1.0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn fraction_below_counts_strictly() {
        let v = [1e-4, 5e-4, 4.999e-4, 1.0, 0.0];
        assert_eq!(fraction_below(&v, 5e-4), 3.0 / 5.0);
        assert_eq!(fraction_below(&[], 5e-4), 0.0);
    }

    #[test]
    fn evm_follows_osnr() {
        let target = 20.0 * analytic_evm_percent(30.0, 14e9).log10();
        let mut acc = 0.0;
        for run in 0..10 {
            let t = transmit(&tx(8, 30.0), 2048, 0.0, 100 + run).unwrap();
            let d = demodulate(&t.signal, ModulationFormat::Qam16, 0.1).unwrap();
            acc += evm_percent(&d.normalized, &t.symbols).powi(2);
        }
        let measured = 10.0 * (acc / 10.0).log10();
        assert!((measured - target).abs() < 0.5, "{measured} dB vs {target} dB");
    }

    #[test]
    fn constellation_csv_round_trip() {
        let t = transmit(&tx(2, 25.0), 64, 0.0, 6).unwrap();
        let d = demodulate(&t.signal, ModulationFormat::Qam16, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        constellation_export(&path, &d.normalized, &d.decided_points(ModulationFormat::Qam16), &t.symbols).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 65);
        for (row, s) in rows[1..].iter().zip(&d.normalized) {
            let f: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
            assert_eq!((f[0], f[1]), (s.re, s.im));
        }
    }
}
