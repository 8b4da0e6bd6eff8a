//! Complex baseband signals: grids, symbol mapping, RRC shaping, launch power
//! and OSNR noise loading.
//!
//! The whole crate uses a periodic sequence model. Pulse shaping is a circular
//! convolution carried out in the frequency domain, so a sequence of
//! `n_symbols` symbols maps onto exactly `n_symbols * samples_per_symbol`
//! samples with no filter edge effects.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// OSNR reference bandwidth: 0.1 nm at 1550 nm.
pub const OSNR_REF_BANDWIDTH_HZ: f64 = 12.5e9;

/// Uniform sampling grid for a symbol sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub samples_per_symbol: usize,
    pub symbol_rate: f64,
    pub n_symbols: usize,
}

impl TimeGrid {
    pub fn new(samples_per_symbol: usize, symbol_rate: f64, n_symbols: usize) -> Result<Self> {
        let grid = Self { samples_per_symbol, symbol_rate, n_symbols };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol < 2 {
            return Err(Error::InvalidArgument(format!("samples_per_symbol must be >= 2, got {}", self.samples_per_symbol)));
        }
        if !(self.symbol_rate.is_finite() && self.symbol_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("symbol_rate must be positive, got {}", self.symbol_rate)));
        }
        if !self.n_samples().is_multiple_of(2) || self.n_samples() == 0 {
            return Err(Error::InvalidArgument(format!("sample count {} must be even and nonzero", self.n_samples())));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_symbols * self.samples_per_symbol
    }

    /// Sample period in seconds.
    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate()
    }

    /// Sample rate in Hz; also the simulation bandwidth for white noise.
    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 * self.sample_period()
    }

    /// Same sampling, different length.
    pub fn with_symbols(&self, n_symbols: usize) -> Self {
        Self { n_symbols, ..*self }
    }

    /// Angular frequencies of the FFT bins in rad/ps, standard FFT ordering.
    pub fn angular_frequencies_rad_per_ps(&self) -> Vec<f64> {
        let n = self.n_samples();
        let df_hz = self.sample_rate() / n as f64;
        (0..n)
            .map(|k| {
                let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
                2.0 * std::f64::consts::PI * signed * df_hz * 1e-12
            })
            .collect()
    }

    /// Time axis centered on the middle sample, in picoseconds.
    pub fn centered_time_ps(&self) -> Vec<f64> {
        let n = self.n_samples();
        let dt_ps = self.sample_period() * 1e12;
        (0..n).map(|k| (k as f64 - (n / 2) as f64) * dt_ps).collect()
    }
}

/// Sampled complex field in units of sqrt(W).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub grid: TimeGrid,
    pub samples: Vec<Complex64>,
}

impl ComplexSignal {
    pub fn new(grid: TimeGrid, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.n_samples() {
            return Err(Error::Length(format!("{} samples for a grid of {}", samples.len(), grid.n_samples())));
        }
        if let Some(k) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {k}")));
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, samples: vec![Complex64::new(0.0, 0.0); grid.n_samples()] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn re(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.im).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid, samples: self.samples.iter().map(|s| s * factor).collect() }
    }

    /// Energy integral sum |s|^2 dt, in joules.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.grid.sample_period()
    }
}

pub fn mean_power(sig: &ComplexSignal) -> f64 {
    if sig.is_empty() {
        return 0.0;
    }
    sig.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / sig.len() as f64
}

pub fn peak_power(sig: &ComplexSignal) -> f64 {
    sig.samples.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max)
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    1e-3 * 10f64.powf(p_dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModulationFormat {
    #[serde(rename = "ook")]
    Ook,
    #[serde(rename = "qpsk")]
    Qpsk,
    #[serde(rename = "qam16")]
    Qam16,
}

impl ModulationFormat {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModulationFormat::Ook => 1,
            ModulationFormat::Qpsk => 2,
            ModulationFormat::Qam16 => 4,
        }
    }

    /// Unit-mean-energy constellation indexed by the MSB-first bit pattern.
    pub fn constellation(self) -> Vec<Complex64> {
        match self {
            ModulationFormat::Ook => {
                vec![Complex64::new(0.0, 0.0), Complex64::new(std::f64::consts::SQRT_2, 0.0)]
            }
            ModulationFormat::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                (0..4)
                    .map(|v| {
                        let i = if v & 0b10 == 0 { a } else { -a };
                        let q = if v & 0b01 == 0 { a } else { -a };
                        Complex64::new(i, q)
                    })
                    .collect()
            }
            ModulationFormat::Qam16 => {
                let scale = 1.0 / 10f64.sqrt();
                (0..16)
                    .map(|v| {
                        let i = gray_level(v >> 2);
                        let q = gray_level(v & 0b11);
                        Complex64::new(i * scale, q * scale)
                    })
                    .collect()
            }
        }
    }

    /// Index of the constellation point nearest to `x`.
    pub fn decide(self, constellation: &[Complex64], x: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in constellation.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// Per-axis Gray code for 16-QAM: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn gray_level(two_bits: usize) -> f64 {
    match two_bits & 0b11 {
        0b00 => -3.0,
        0b01 => -1.0,
        0b11 => 1.0,
        _ => 3.0,
    }
}

/// Pack MSB-first bit groups into symbol indices.
pub fn bits_to_indices(bits: &[u8], fmt: ModulationFormat) -> Result<Vec<usize>> {
    let k = fmt.bits_per_symbol();
    if !bits.len().is_multiple_of(k) {
        return Err(Error::Length(format!("{} bits is not a multiple of {} bits per symbol", bits.len(), k)));
    }
    Ok(bits.chunks_exact(k).map(|c| c.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b != 0))).collect())
}

pub fn indices_to_bits(indices: &[usize], fmt: ModulationFormat) -> Vec<u8> {
    let k = fmt.bits_per_symbol();
    let mut out = Vec::with_capacity(indices.len() * k);
    for &v in indices {
        for b in (0..k).rev() {
            out.push(((v >> b) & 1) as u8);
        }
    }
    out
}

pub fn map_bits(bits: &[u8], fmt: ModulationFormat) -> Result<Vec<Complex64>> {
    let table = fmt.constellation();
    Ok(bits_to_indices(bits, fmt)?.into_iter().map(|v| table[v]).collect())
}

pub fn random_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut r = rng::stream(seed, rng::tags::BITS);
    (0..n).map(|_| r.random::<bool>() as u8).collect()
}

/// Root-raised-cosine frequency response on the FFT bins of `grid`, scaled so
/// that RRC followed by its matched RRC is a unit-peak Nyquist pulse.
pub fn rrc_response(grid: &TimeGrid, rolloff: f64) -> Vec<f64> {
    let n = grid.n_samples();
    let sps = grid.samples_per_symbol as f64;
    (0..n)
        .map(|k| {
            let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
            // frequency in units of the symbol rate
            let nu = (signed / grid.n_symbols as f64).abs();
            (sps * raised_cosine_spectrum(nu, rolloff)).sqrt()
        })
        .collect()
}

fn raised_cosine_spectrum(nu: f64, rolloff: f64) -> f64 {
    let lo = (1.0 - rolloff) / 2.0;
    let hi = (1.0 + rolloff) / 2.0;
    if rolloff == 0.0 {
        return if nu < 0.5 {
            1.0
        } else if nu == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    if nu <= lo {
        1.0
    } else if nu <= hi {
        0.5 * (1.0 + (std::f64::consts::PI / rolloff * (nu - lo)).cos())
    } else {
        0.0
    }
}

fn check_rolloff(rolloff: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(Error::InvalidArgument(format!("rolloff {rolloff} outside [0, 1]")));
    }
    Ok(())
}

/// Circularly filter `samples` with the RRC response in place.
pub(crate) fn rrc_filter(samples: &mut [Complex64], grid: &TimeGrid, rolloff: f64) {
    let n = samples.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fwd.process(samples);
    let h = rrc_response(grid, rolloff);
    let inv_n = 1.0 / n as f64;
    for (s, hk) in samples.iter_mut().zip(&h) {
        *s *= hk * inv_n;
    }
    inv.process(samples);
}

/// Upsample symbols onto `grid` (impulse at the start of each slot) and apply
/// RRC shaping by circular convolution.
pub fn shape_pulses(symbols: &[Complex64], grid: &TimeGrid, rolloff: f64) -> Result<ComplexSignal> {
    check_rolloff(rolloff)?;
    grid.validate()?;
    if symbols.len() != grid.n_symbols {
        return Err(Error::Length(format!("{} symbols for a grid of {}", symbols.len(), grid.n_symbols)));
    }
    let mut samples = vec![Complex64::new(0.0, 0.0); grid.n_samples()];
    for (k, &a) in symbols.iter().enumerate() {
        samples[k * grid.samples_per_symbol] = a;
    }
    rrc_filter(&mut samples, grid, rolloff);
    ComplexSignal::new(*grid, samples)
}

pub fn set_launch_power(sig: &ComplexSignal, p_dbm: f64) -> Result<ComplexSignal> {
    let p = mean_power(sig);
    if p == 0.0 {
        return Err(Error::InvalidArgument("cannot set the power of an all-zero signal".into()));
    }
    Ok(sig.scaled((dbm_to_watts(p_dbm) / p).sqrt()))
}

/// Total in-band noise power for a given OSNR over the grid's simulation bandwidth.
pub fn osnr_noise_power(signal_power_w: f64, osnr_db: f64, grid: &TimeGrid) -> f64 {
    signal_power_w / 10f64.powf(osnr_db / 10.0) * (grid.sample_rate() / OSNR_REF_BANDWIDTH_HZ)
}

/// Add circular complex white Gaussian noise of total power `power_w` (both quadratures).
pub(crate) fn add_white_noise(samples: &mut [Complex64], power_w: f64, rng: &mut impl Rng) {
    let sigma = (power_w / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *s += Complex64::new(re * sigma, im * sigma);
    }
}

/// Load white ASE-like noise for the requested OSNR. `f64::INFINITY` disables noise.
pub fn load_osnr_noise(sig: &ComplexSignal, osnr_db: f64, seed: u64) -> Result<ComplexSignal> {
    if osnr_db == f64::INFINITY {
        return Ok(sig.clone());
    }
    if !osnr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("osnr_db must be finite, got {osnr_db}")));
    }
    let mut out = sig.clone();
    let power = osnr_noise_power(mean_power(sig), osnr_db, &sig.grid);
    let mut r = rng::stream(seed, rng::tags::OSNR);
    add_white_noise(&mut out.samples, power, &mut r);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n_symbols: usize) -> TimeGrid {
        TimeGrid::new(16, 14e9, n_symbols).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(TimeGrid::new(1, 14e9, 8).is_err());
        assert!(TimeGrid::new(3, 14e9, 3).is_err());
        let g = grid(64);
        assert_eq!(g.n_samples(), 1024);
        assert_abs_diff_eq!(g.sample_rate(), 224e9, epsilon = 1.0);
    }

    #[test]
    fn gray_mapping_examples() {
        let s = map_bits(&[0, 0, 0, 0], ModulationFormat::Qam16).unwrap();
        let r10 = 10f64.sqrt();
        assert_abs_diff_eq!(s[0].re, -3.0 / r10, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].im, -3.0 / r10, epsilon = 1e-15);
        let s = map_bits(&[0, 0], ModulationFormat::Qpsk).unwrap();
        assert_abs_diff_eq!(s[0].re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].im, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        let s = map_bits(&[1, 0], ModulationFormat::Ook).unwrap();
        assert!(s[0].re > 0.0 && s[0].im == 0.0);
        assert_eq!(s[1], Complex64::new(0.0, 0.0));
        // Gray: neighbours on an axis differ in one bit
        let s = map_bits(&[0, 1, 0, 1, 1, 1, 1, 1, 1, 0, 1, 0], ModulationFormat::Qam16).unwrap();
        assert_abs_diff_eq!(s[0].re * r10, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1].re * r10, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[2].re * r10, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn map_bits_rejects_ragged_length() {
        assert!(matches!(map_bits(&[0, 1, 1], ModulationFormat::Qam16), Err(Error::Length(_))));
    }

    #[test]
    fn constellations_have_unit_energy() {
        for fmt in [ModulationFormat::Ook, ModulationFormat::Qpsk, ModulationFormat::Qam16] {
            let c = fmt.constellation();
            assert_eq!(c.len(), 1 << fmt.bits_per_symbol());
            let e = c.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "{fmt:?}: {e}");
        }
    }

    #[test]
    fn bit_index_roundtrip() {
        let bits = random_bits(400, 3);
        let idx = bits_to_indices(&bits, ModulationFormat::Qam16).unwrap();
        assert_eq!(indices_to_bits(&idx, ModulationFormat::Qam16), bits);
    }

    #[test]
    fn impulse_response_is_centered_on_slot() {
        let g = grid(32);
        let mut syms = vec![Complex64::new(0.0, 0.0); 32];
        syms[10] = Complex64::new(1.0, 0.0);
        let sig = shape_pulses(&syms, &g, 0.1).unwrap();
        let peak = sig.samples.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
        assert_eq!(peak, 10 * 16);
        // symmetric around the slot
        for d in 1..40 {
            let a = sig.samples[160 + d];
            let b = sig.samples[160 - d];
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_symbols_give_zero_signal() {
        let g = grid(16);
        let sig = shape_pulses(&vec![Complex64::new(0.0, 0.0); 16], &g, 0.1).unwrap();
        assert!(sig.samples.iter().all(|s| s.norm() == 0.0));
        assert_eq!(mean_power(&sig), 0.0);
        assert!(set_launch_power(&sig, 0.0).is_err());
    }

    #[test]
    fn constant_train_matches_direct_convolution() {
        // Oracle: RRC taps by a direct inverse DFT, then direct circular convolution.
        let g = grid(16);
        let n = g.n_samples();
        let h = rrc_response(&g, 0.1);
        let taps: Vec<f64> = (0..n)
            .map(|m| (0..n).map(|k| h[k] * (2.0 * std::f64::consts::PI * (k * m) as f64 / n as f64).cos()).sum::<f64>() / n as f64)
            .collect();
        let c = Complex64::new(0.7, -0.2);
        let sig = shape_pulses(&vec![c; 16], &g, 0.1).unwrap();
        for slot in 0..16 {
            let mid = slot * 16 + 8;
            let expected: f64 = (0..16).map(|j| taps[(mid + n - j * 16) % n]).sum();
            assert_abs_diff_eq!(sig.samples[mid].re, c.re * expected, epsilon = 1e-12);
            assert_abs_diff_eq!(sig.samples[mid].im, c.im * expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn launch_power_is_exact_and_idempotent() {
        let g = grid(64);
        let bits = random_bits(256, 1);
        let sig = shape_pulses(&map_bits(&bits, ModulationFormat::Qam16).unwrap(), &g, 0.1).unwrap();
        let p0 = set_launch_power(&sig, 0.0).unwrap();
        assert!((mean_power(&p0) - 1e-3).abs() / 1e-3 < 1e-12);
        let p3 = set_launch_power(&sig, 3.0).unwrap();
        assert!((mean_power(&p3) - 1e-3 * 10f64.powf(0.3)).abs() / 1.995e-3 < 1e-12);
        let again = set_launch_power(&p3, 3.0).unwrap();
        for (a, b) in again.samples.iter().zip(&p3.samples) {
            assert!((a - b).norm() <= 1e-15 * b.norm().max(1e-30) + 1e-20);
        }
    }

    #[test]
    fn power_helpers() {
        let g = TimeGrid::new(2, 1e9, 1).unwrap();
        let sig = ComplexSignal::new(g, vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 3f64.sqrt())]).unwrap();
        assert_abs_diff_eq!(mean_power(&sig), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(peak_power(&sig), 3.0, epsilon = 1e-12);
        let c = ComplexSignal::new(g, vec![Complex64::new(0.0, 0.5); 2]).unwrap();
        assert_abs_diff_eq!(mean_power(&c), 0.25, epsilon = 1e-15);
        assert_eq!(peak_power(&ComplexSignal::zeros(g)), 0.0);
    }

    #[test]
    fn osnr_noise_disabled_and_deterministic() {
        let g = grid(16);
        let sig = shape_pulses(&map_bits(&random_bits(64, 2), ModulationFormat::Qam16).unwrap(), &g, 0.1).unwrap();
        assert_eq!(load_osnr_noise(&sig, f64::INFINITY, 1).unwrap(), sig);
        let a = load_osnr_noise(&sig, 30.0, 9).unwrap();
        let b = load_osnr_noise(&sig, 30.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, load_osnr_noise(&sig, 30.0, 10).unwrap());
        assert!(load_osnr_noise(&sig, f64::NAN, 1).is_err());
    }

    #[test]
    fn osnr_noise_power_monte_carlo() {
        let g = TimeGrid::new(16, 14e9, 4).unwrap();
        let sig = set_launch_power(&shape_pulses(&map_bits(&random_bits(16, 4), ModulationFormat::Qam16).unwrap(), &g, 0.1).unwrap(), 0.0)
            .unwrap();
        let target = osnr_noise_power(mean_power(&sig), 30.0, &g);
        let trials = 10_000;
        let mut acc = 0.0;
        let mut mean = Complex64::new(0.0, 0.0);
        for seed in 0..trials {
            let noisy = load_osnr_noise(&sig, 30.0, seed).unwrap();
            for (a, b) in noisy.samples.iter().zip(&sig.samples) {
                acc += (a - b).norm_sqr();
                mean += a - b;
            }
        }
        let count = (trials as usize * g.n_samples()) as f64;
        let measured = acc / count;
        assert!((measured / target - 1.0).abs() < 0.03, "{measured} vs {target}");
        // sample mean within 3 sigma of zero
        let mean = mean / count;
        assert!(mean.norm() < 3.0 * (target / count).sqrt());
    }

    proptest! {
        #[test]
        fn shaping_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let g = TimeGrid::new(4, 14e9, 32).unwrap();
            let x = map_bits(&random_bits(128, seed), ModulationFormat::Qam16).unwrap();
            let y = map_bits(&random_bits(128, seed + 1), ModulationFormat::Qam16).unwrap();
            let mix: Vec<Complex64> = x.iter().zip(&y).map(|(p, q)| p * a + q * b).collect();
            let sx = shape_pulses(&x, &g, 0.1).unwrap();
            let sy = shape_pulses(&y, &g, 0.1).unwrap();
            let sm = shape_pulses(&mix, &g, 0.1).unwrap();
            for k in 0..g.n_samples() {
                let e = sx.samples[k] * a + sy.samples[k] * b;
                prop_assert!((sm.samples[k] - e).norm() < 1e-12);
            }
        }
    }
}
