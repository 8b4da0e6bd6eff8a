//! Symmetric split-step Fourier integration of the scalar NLSE
//!
//! ```text
//! ds/dz + (alpha/2) s + i (beta2/2) d2s/dt2 - i gamma |s|^2 s = 0
//! ```
//!
//! With this sign convention anomalous dispersion is `beta2 < 0`, and a
//! linear step over `dz` multiplies FFT bin `k` by
//! `exp((-alpha/2 + i beta2/2 w_k^2) dz)`. Forward FFTs are unscaled and the
//! inverse is scaled by `1/n`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{ComplexSignal, TimeGrid};

/// Physical fiber constants. Units: dB/km, ps^2/km, 1/(W km), km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    pub alpha_db_per_km: f64,
    pub beta2_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
    pub length_km: f64,
}

impl Default for FiberParams {
    /// Standard single-mode fiber, one 80 km span.
    fn default() -> Self {
        Self { alpha_db_per_km: 0.2, beta2_ps2_per_km: -21.68, gamma_per_w_km: 1.3, length_km: 80.0 }
    }
}

pub fn db_to_neper_per_km(alpha_db_per_km: f64) -> f64 {
    alpha_db_per_km * std::f64::consts::LN_10 / 10.0
}

pub fn neper_to_db_per_km(alpha_lin: f64) -> f64 {
    alpha_lin * 10.0 / std::f64::consts::LN_10
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.alpha_db_per_km, self.beta2_ps2_per_km, self.gamma_per_w_km, self.length_km].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument("fiber parameters must be finite".into()));
        }
        if self.alpha_db_per_km < 0.0 || self.gamma_per_w_km < 0.0 {
            return Err(Error::InvalidArgument("alpha and gamma must be non-negative".into()));
        }
        if self.length_km <= 0.0 {
            return Err(Error::InvalidArgument(format!("span length {} km must be positive", self.length_km)));
        }
        Ok(())
    }

    /// Power attenuation coefficient in 1/km.
    pub fn alpha_linear(&self) -> f64 {
        db_to_neper_per_km(self.alpha_db_per_km)
    }

    /// Span loss in dB.
    pub fn span_loss_db(&self) -> f64 {
        self.alpha_db_per_km * self.length_km
    }

    pub fn with_length(&self, length_km: f64) -> Self {
        Self { length_km, ..*self }
    }

    pub fn model(&self) -> NlseModel {
        NlseModel { alpha_lin: self.alpha_linear(), beta2: self.beta2_ps2_per_km, gamma: self.gamma_per_w_km }
    }

    /// Dispersion length T0^2 / |beta2| in km.
    pub fn dispersion_length_km(&self, t0_ps: f64) -> f64 {
        t0_ps * t0_ps / self.beta2_ps2_per_km.abs()
    }
}

/// Raw NLSE coefficients with unrestricted signs; backpropagation negates them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlseModel {
    /// 1/km
    pub alpha_lin: f64,
    /// ps^2/km
    pub beta2: f64,
    /// 1/(W km)
    pub gamma: f64,
}

impl NlseModel {
    pub fn inverse(&self) -> Self {
        Self { alpha_lin: -self.alpha_lin, beta2: -self.beta2, gamma: -self.gamma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepMode {
    Fixed { dz_km: f64 },
    Adaptive { max_nonlinear_phase_rad: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPlan {
    pub mode: StepMode,
    #[serde(default)]
    pub store_every_km: Option<f64>,
}

impl Default for StepPlan {
    fn default() -> Self {
        Self { mode: StepMode::Fixed { dz_km: 0.1 }, store_every_km: None }
    }
}

impl StepPlan {
    pub fn fixed(dz_km: f64) -> Self {
        Self { mode: StepMode::Fixed { dz_km }, store_every_km: None }
    }

    pub fn adaptive(max_nonlinear_phase_rad: f64) -> Self {
        Self { mode: StepMode::Adaptive { max_nonlinear_phase_rad }, store_every_km: None }
    }

    pub fn default_adaptive() -> Self {
        Self::adaptive(0.003)
    }

    pub fn storing_every(mut self, km: f64) -> Self {
        self.store_every_km = Some(km);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            StepMode::Fixed { dz_km } if !(dz_km.is_finite() && dz_km > 0.0) => {
                return Err(Error::InvalidArgument(format!("dz_km must be positive, got {dz_km}")))
            }
            StepMode::Adaptive { max_nonlinear_phase_rad: p } if !(p > 0.0 && p <= 0.1) => {
                return Err(Error::InvalidArgument(format!("max nonlinear phase {p} outside (0, 0.1]")))
            }
            _ => {}
        }
        if let Some(s) = self.store_every_km {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidArgument(format!("store_every_km must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub z_km: f64,
    pub signal: ComplexSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub output: ComplexSignal,
    pub snapshots: Vec<Snapshot>,
    pub steps: usize,
}

/// Frequency-domain multipliers for a linear step of `dz_km`.
pub fn dispersion_operator(grid: &TimeGrid, fiber: &FiberParams, dz_km: f64) -> Result<Vec<Complex64>> {
    if !(dz_km > 0.0) {
        return Err(Error::InvalidArgument(format!("dz must be positive, got {dz_km}")));
    }
    Ok(linear_multipliers(grid, &fiber.model(), dz_km, 1.0))
}

fn linear_multipliers(grid: &TimeGrid, model: &NlseModel, dz: f64, scale: f64) -> Vec<Complex64> {
    grid.angular_frequencies_rad_per_ps()
        .into_iter()
        .map(|w| Complex64::new(-model.alpha_lin / 2.0 * dz, model.beta2 / 2.0 * w * w * dz).exp() * scale)
        .collect()
}

/// Fraction of spectral power above 80% of Nyquist.
pub fn out_of_band_fraction(sig: &ComplexSignal) -> f64 {
    let n = sig.len();
    let mut buf = sig.samples.clone();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let cut = (0.8 * (n / 2) as f64) as usize;
    let mut total = 0.0;
    let mut outside = 0.0;
    for (k, x) in buf.iter().enumerate() {
        let m = if k <= n / 2 { k } else { n - k };
        let p = x.norm_sqr();
        total += p;
        if m > cut {
            outside += p;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        outside / total
    }
}

struct Stepper {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    grid: TimeGrid,
    model: NlseModel,
}

impl Stepper {
    fn new(grid: TimeGrid, model: NlseModel) -> Self {
        let n = grid.n_samples();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self { fwd, inv, scratch: vec![Complex64::new(0.0, 0.0); scratch_len], grid, model }
    }

    /// Multipliers for a linear step of `dz`, with the inverse FFT 1/n folded in.
    fn multipliers(&self, dz: f64) -> Vec<Complex64> {
        linear_multipliers(&self.grid, &self.model, dz, 1.0 / self.grid.n_samples() as f64)
    }

    fn linear(&mut self, field: &mut [Complex64], mult: &[Complex64]) {
        self.fwd.process_with_scratch(field, &mut self.scratch);
        for (x, m) in field.iter_mut().zip(mult) {
            *x *= m;
        }
        self.inv.process_with_scratch(field, &mut self.scratch);
    }

    fn nonlinear(&self, field: &mut [Complex64], dz: f64, step: usize) -> Result<()> {
        let g = self.model.gamma * dz;
        if g == 0.0 {
            return check_finite(field, step);
        }
        for x in field.iter_mut() {
            let p = x.norm_sqr();
            if !p.is_finite() {
                return Err(Error::Divergence(format!("non-finite field at split step {step}")));
            }
            let (s, c) = (g * p).sin_cos();
            *x *= Complex64::new(c, s);
        }
        Ok(())
    }
}

fn check_finite(field: &[Complex64], step: usize) -> Result<()> {
    if field.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite field at split step {step}")))
    }
}

/// Propagate through one fiber span.
pub fn propagate(sig: &ComplexSignal, fiber: &FiberParams, plan: &StepPlan) -> Result<PropagationResult> {
    fiber.validate()?;
    propagate_model(sig, &fiber.model(), fiber.length_km, plan)
}

/// Propagate with raw coefficients over `length_km` (zero length is the identity).
pub fn propagate_model(sig: &ComplexSignal, model: &NlseModel, length_km: f64, plan: &StepPlan) -> Result<PropagationResult> {
    plan.validate()?;
    if !(length_km >= 0.0 && length_km.is_finite()) {
        return Err(Error::InvalidArgument(format!("length {length_km} km must be finite and >= 0")));
    }
    if length_km == 0.0 {
        return Ok(PropagationResult { output: sig.clone(), snapshots: Vec::new(), steps: 0 });
    }
    let oob = out_of_band_fraction(sig);
    if oob > 1e-6 {
        log::warn!("signal has {:.2e} of its power above 80% of Nyquist; grid may be too coarse", oob);
    }
    match plan.mode {
        StepMode::Fixed { dz_km } => propagate_fixed(sig, model, length_km, dz_km, plan.store_every_km),
        StepMode::Adaptive { max_nonlinear_phase_rad } => {
            propagate_adaptive(sig, model, length_km, max_nonlinear_phase_rad, plan.store_every_km)
        }
    }
}

fn propagate_fixed(
    sig: &ComplexSignal,
    model: &NlseModel,
    length_km: f64,
    dz_km: f64,
    store_every: Option<f64>,
) -> Result<PropagationResult> {
    let n_steps = ((length_km / dz_km) - 1e-9).ceil().max(1.0) as usize;
    let h = length_km / n_steps as f64;

    // Snapshot positions in step units. Recording branches off a copy, so the
    // main trajectory is identical with or without snapshots.
    let mut record: Vec<usize> = Vec::new();
    if let Some(every) = store_every {
        let mut m = 1;
        while m as f64 * every <= length_km * (1.0 + 1e-12) {
            let k = ((m as f64 * every) / h).round() as usize;
            if k > 0 && k <= n_steps && record.last() != Some(&k) {
                record.push(k);
            }
            m += 1;
        }
    }

    let mut stepper = Stepper::new(sig.grid, *model);
    let half = stepper.multipliers(h / 2.0);
    let full = stepper.multipliers(h);
    let mut field = sig.samples.clone();
    let mut snapshots = Vec::with_capacity(record.len());
    stepper.linear(&mut field, &half);
    for j in 0..n_steps {
        stepper.nonlinear(&mut field, h, j)?;
        let done = j + 1;
        if done == n_steps {
            stepper.linear(&mut field, &half);
            check_finite(&field, j)?;
        } else {
            if record.contains(&done) {
                let mut copy = field.clone();
                stepper.linear(&mut copy, &half);
                snapshots.push(Snapshot { z_km: done as f64 * h, signal: ComplexSignal { grid: sig.grid, samples: copy } });
            }
            stepper.linear(&mut field, &full);
        }
    }
    if record.last() == Some(&n_steps) {
        snapshots.push(Snapshot { z_km: length_km, signal: ComplexSignal { grid: sig.grid, samples: field.clone() } });
    }
    Ok(PropagationResult { output: ComplexSignal { grid: sig.grid, samples: field }, snapshots, steps: n_steps })
}

fn propagate_adaptive(
    sig: &ComplexSignal,
    model: &NlseModel,
    length_km: f64,
    max_phase: f64,
    store_every: Option<f64>,
) -> Result<PropagationResult> {
    let mut stepper = Stepper::new(sig.grid, *model);
    let mut field = sig.samples.clone();
    let mut snapshots = Vec::new();
    let mut z = 0.0;
    let mut next_store = store_every;
    let mut step = 0;
    // Never take a step longer than 1/100 of the span even when the field is weak.
    let max_dz = length_km / 100.0;
    while z < length_km * (1.0 - 1e-12) {
        let peak = field.iter().map(|x| x.norm_sqr()).fold(0.0, f64::max);
        let mut h = if model.gamma == 0.0 || peak == 0.0 { max_dz } else { max_phase / (model.gamma.abs() * peak) };
        h = h.min(max_dz).min(length_km - z);
        let mut store_now = false;
        if let Some(s) = next_store {
            if z + h >= s * (1.0 - 1e-12) {
                h = s - z;
                store_now = true;
            }
        }
        let half = stepper.multipliers(h / 2.0);
        stepper.linear(&mut field, &half);
        stepper.nonlinear(&mut field, h, step)?;
        stepper.linear(&mut field, &half);
        check_finite(&field, step)?;
        z += h;
        step += 1;
        if store_now {
            snapshots.push(Snapshot { z_km: z, signal: ComplexSignal { grid: sig.grid, samples: field.clone() } });
            next_store = next_store.map(|s| s + store_every.unwrap());
            if next_store.is_some_and(|s| s > length_km * (1.0 + 1e-12)) {
                next_store = None;
            }
        }
    }
    Ok(PropagationResult { output: ComplexSignal { grid: sig.grid, samples: field }, snapshots, steps: step })
}

/// Closed-form solution of the dispersion-only equation for a unit-peak
/// Gaussian input `exp(-t^2 / 2 T0^2)` centered on the grid.
pub fn analytic_gaussian_dispersion(t0_ps: f64, beta2_ps2_per_km: f64, z_km: f64, grid: &TimeGrid) -> Result<ComplexSignal> {
    if !(t0_ps > 0.0) {
        return Err(Error::InvalidArgument(format!("T0 must be positive, got {t0_ps}")));
    }
    let q = Complex64::new(t0_ps * t0_ps, -beta2_ps2_per_km * z_km);
    let pre = Complex64::new(t0_ps, 0.0) / q.sqrt();
    let samples = grid.centered_time_ps().into_iter().map(|t| pre * (Complex64::new(-t * t / 2.0, 0.0) / q).exp()).collect();
    ComplexSignal::new(*grid, samples)
}

/// `A sech(t/T0)` with `A^2 = |beta2| / (gamma T0^2)`; needs anomalous dispersion and no loss.
pub fn fundamental_soliton(grid: &TimeGrid, fiber: &FiberParams, t0_ps: f64) -> Result<ComplexSignal> {
    if !(fiber.beta2_ps2_per_km < 0.0) || fiber.alpha_db_per_km != 0.0 || !(fiber.gamma_per_w_km > 0.0) {
        return Err(Error::InvalidArgument("fundamental soliton needs beta2 < 0, gamma > 0 and alpha = 0".into()));
    }
    if !(t0_ps > 0.0) {
        return Err(Error::InvalidArgument(format!("T0 must be positive, got {t0_ps}")));
    }
    let amp = (fiber.beta2_ps2_per_km.abs() / (fiber.gamma_per_w_km * t0_ps * t0_ps)).sqrt();
    let samples = grid.centered_time_ps().into_iter().map(|t| Complex64::new(amp / (t / t0_ps).cosh(), 0.0)).collect();
    ComplexSignal::new(*grid, samples)
}

/// RMS of |a - b| over samples.
pub fn rms_difference(a: &ComplexSignal, b: &ComplexSignal) -> f64 {
    let s: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).norm_sqr()).sum();
    (s / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{self, ModulationFormat};
    use approx::assert_abs_diff_eq;

    /// 1 ps sampling, 2048 samples.
    fn pulse_grid() -> TimeGrid {
        TimeGrid::new(16, 62.5e9, 128).unwrap()
    }

    fn qam_frame(p_dbm: f64, n_symbols: usize) -> ComplexSignal {
        let g = TimeGrid::new(16, 14e9, n_symbols).unwrap();
        let syms = signals::map_bits(&signals::random_bits(4 * n_symbols, 11), ModulationFormat::Qam16).unwrap();
        signals::set_launch_power(&signals::shape_pulses(&syms, &g, 0.1).unwrap(), p_dbm).unwrap()
    }

    #[test]
    fn alpha_conversion_both_ways() {
        let f = FiberParams::default();
        assert_abs_diff_eq!(f.alpha_linear(), 0.2 * 10f64.ln() / 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(neper_to_db_per_km(f.alpha_linear()), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn fiber_validation() {
        assert!(FiberParams { length_km: 0.0, ..Default::default() }.validate().is_err());
        assert!(FiberParams { alpha_db_per_km: -0.1, ..Default::default() }.validate().is_err());
        assert!(FiberParams { gamma_per_w_km: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(StepPlan::adaptive(0.2).validate().is_err());
        assert!(StepPlan::fixed(0.0).validate().is_err());
    }

    #[test]
    fn dispersion_operator_properties() {
        let g = pulse_grid();
        let lossless = FiberParams { alpha_db_per_km: 0.0, beta2_ps2_per_km: 0.0, ..Default::default() };
        assert!(dispersion_operator(&g, &lossless, 0.5).unwrap().iter().all(|m| *m == Complex64::new(1.0, 0.0)));
        let f = FiberParams::default();
        let d = dispersion_operator(&g, &f, 0.5).unwrap();
        let dc = (-f.alpha_linear() / 2.0 * 0.5).exp();
        assert_abs_diff_eq!(d[0].re, dc, epsilon = 1e-15);
        assert_eq!(d[0].im, 0.0);
        assert!(d[0].norm() < 1.0);
        for m in &d {
            assert_abs_diff_eq!(m.norm(), dc, epsilon = 1e-14);
        }
        assert!(dispersion_operator(&g, &f, 0.0).is_err());
    }

    #[test]
    fn pure_attenuation() {
        let sig = qam_frame(0.0, 64);
        let f = FiberParams { beta2_ps2_per_km: 0.0, gamma_per_w_km: 0.0, ..Default::default() };
        let out = propagate(&sig, &f, &StepPlan::default()).unwrap().output;
        let ratio = signals::mean_power(&out) / signals::mean_power(&sig);
        assert!((ratio / 10f64.powf(-1.6) - 1.0).abs() < 1e-12, "{ratio}");
    }

    #[test]
    fn cw_phase_rotation_is_exact() {
        let g = TimeGrid::new(4, 14e9, 16).unwrap();
        let a = 0.03;
        let sig = ComplexSignal::new(g, vec![Complex64::new(a, 0.0); g.n_samples()]).unwrap();
        let f = FiberParams { alpha_db_per_km: 0.0, beta2_ps2_per_km: 0.0, gamma_per_w_km: 1.3, length_km: 80.0 };
        let out = propagate(&sig, &f, &StepPlan::default()).unwrap().output;
        let expected = Complex64::from_polar(a, 1.3 * a * a * 80.0);
        for s in &out.samples {
            assert!((s - expected).norm() < 1e-10 * a);
        }
    }

    #[test]
    fn gaussian_analytic_oracle() {
        let g = pulse_grid();
        let z0 = analytic_gaussian_dispersion(20.0, -21.68, 0.0, &g).unwrap();
        let peak = z0.samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
        assert_abs_diff_eq!(peak, 1.0, epsilon = 1e-15);
        let e0 = z0.energy();
        for z in [10.0, 40.0, 80.0] {
            let s = analytic_gaussian_dispersion(20.0, -21.68, z, &g).unwrap();
            let expected_peak = (1.0 + (21.68 * z / 400.0f64).powi(2)).powf(-0.25);
            let peak = s.samples.iter().map(|x| x.norm()).fold(0.0, f64::max);
            assert_abs_diff_eq!(peak, expected_peak, epsilon = 1e-12);
            assert!((s.energy() / e0 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_rms_width_matches_broadening_formula() {
        let g = pulse_grid();
        let t0 = 20.0;
        let f = FiberParams { alpha_db_per_km: 0.0, gamma_per_w_km: 0.0, ..Default::default() };
        let input = analytic_gaussian_dispersion(t0, f.beta2_ps2_per_km, 0.0, &g).unwrap();
        let out = propagate(&input, &f, &StepPlan::default()).unwrap().output;
        let rms = |s: &ComplexSignal| {
            let t = g.centered_time_ps();
            let e: f64 = s.samples.iter().map(|x| x.norm_sqr()).sum();
            let m2: f64 = s.samples.iter().zip(&t).map(|(x, t)| x.norm_sqr() * t * t).sum();
            (m2 / e).sqrt()
        };
        let ratio = rms(&out) / rms(&input);
        let expected = (1.0 + (f.beta2_ps2_per_km * 80.0 / (t0 * t0)).powi(2)).sqrt();
        assert!((ratio / expected - 1.0).abs() < 1e-6, "{ratio} vs {expected}");
    }

    #[test]
    fn soliton_construction() {
        let g = pulse_grid();
        let f = FiberParams { alpha_db_per_km: 0.0, ..Default::default() };
        let s = fundamental_soliton(&g, &f, 20.0).unwrap();
        assert!((signals::peak_power(&s) / (21.68 / (1.3 * 400.0)) - 1.0).abs() < 1e-12);
        assert!(fundamental_soliton(&g, &FiberParams::default(), 20.0).is_err());
        let normal = FiberParams { alpha_db_per_km: 0.0, beta2_ps2_per_km: 5.0, ..Default::default() };
        assert!(fundamental_soliton(&g, &normal, 20.0).is_err());
    }

    #[test]
    fn energy_conserved_without_loss() {
        let sig = qam_frame(3.0, 64);
        let f = FiberParams { alpha_db_per_km: 0.0, ..Default::default() };
        let out = propagate(&sig, &f, &StepPlan::default()).unwrap().output;
        assert!((out.energy() / sig.energy() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn semigroup_property() {
        let sig = qam_frame(3.0, 64);
        let f = FiberParams::default();
        let plan = StepPlan::fixed(0.5);
        let whole = propagate(&sig, &f, &plan).unwrap().output;
        let half = f.with_length(40.0);
        let mid = propagate(&sig, &half, &plan).unwrap().output;
        let two = propagate(&mid, &half, &plan).unwrap().output;
        let scale = signals::mean_power(&whole).sqrt();
        assert!(rms_difference(&whole, &two) < 1e-8 * scale.max(1.0));
        assert!(rms_difference(&whole, &two) / scale < 1e-8);
    }

    #[test]
    fn snapshots_agree_bit_exactly() {
        let sig = qam_frame(0.0, 32);
        let f = FiberParams::default();
        let plan = StepPlan::fixed(0.5).storing_every(20.0);
        let res = propagate(&sig, &f, &plan).unwrap();
        let zs: Vec<f64> = res.snapshots.iter().map(|s| s.z_km).collect();
        assert_eq!(zs, vec![20.0, 40.0, 60.0, 80.0]);
        assert_eq!(res.snapshots.last().unwrap().signal, res.output);
        let short = propagate(&sig, &f.with_length(40.0), &StepPlan::fixed(0.5)).unwrap();
        assert_eq!(res.snapshots[1].signal, short.output);
    }

    #[test]
    fn adaptive_mode_tracks_fixed_reference() {
        let sig = qam_frame(3.0, 32);
        let f = FiberParams::default();
        let reference = propagate(&sig, &f, &StepPlan::fixed(0.01)).unwrap().output;
        let res = propagate(&sig, &f, &StepPlan::default_adaptive().storing_every(40.0)).unwrap();
        let scale = signals::mean_power(&reference).sqrt();
        assert!(rms_difference(&res.output, &reference) / scale < 1e-4);
        assert_eq!(res.snapshots.len(), 2);
        assert_abs_diff_eq!(res.snapshots[0].z_km, 40.0, epsilon = 1e-9);
    }

    #[test]
    fn divergence_is_reported() {
        let g = TimeGrid::new(4, 14e9, 4).unwrap();
        let mut sig = ComplexSignal::zeros(g);
        sig.samples[3] = Complex64::new(f64::INFINITY, 0.0);
        let err = propagate(&sig, &FiberParams::default(), &StepPlan::fixed(1.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn zero_length_is_identity() {
        let sig = qam_frame(0.0, 16);
        let out = propagate_model(&sig, &FiberParams::default().model(), 0.0, &StepPlan::default()).unwrap();
        assert_eq!(out.output, sig);
    }
}
