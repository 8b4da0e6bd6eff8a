//! Physics-only optimization of the operator, plus the pooled training-set
//! generator and warm start for cascaded spans.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::framing::{self, Frame, FramingSpec};
use crate::operator::OperatorParams;
use crate::physics::{self, CollocationSet, LossReport, LossWeights, NlseCoeffs};
use crate::rng;
use crate::signals::{self, ModulationFormat, TimeGrid};

/// Step-decayed learning rate: `initial * factor^(step / interval)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    /// Steps between decays; 0 means a fifth of the run.
    pub decay_interval: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-3, decay_factor: 0.5, decay_interval: 0 }
    }
}

impl LrSchedule {
    pub fn rate(&self, step: usize, total_steps: usize) -> f64 {
        let interval = if self.decay_interval == 0 { (total_steps / 5).max(1) } else { self.decay_interval };
        self.initial * self.decay_factor.powi((step / interval) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_frames: usize,
    pub learning_rate: LrSchedule,
    pub weights: LossWeights,
    pub collocation_points: usize,
    pub seed: u64,
    /// 0 disables validation.
    pub validation_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_frames: 16,
            learning_rate: LrSchedule::default(),
            weights: LossWeights::default(),
            collocation_points: 4096,
            seed: 0,
            validation_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.learning_rate;
        if self.steps == 0 || self.batch_frames == 0 || self.collocation_points == 0 {
            return Err(Error::Config("steps, batch_frames and collocation_points must be positive".into()));
        }
        if !(lr.initial > 0.0 && lr.decay_factor > 0.0 && lr.decay_factor <= 1.0) {
            return Err(Error::Config("learning rate must be positive and non-increasing".into()));
        }
        if !(self.weights.w_pde >= 0.0 && self.weights.w_ic >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub history: Vec<LossReport>,
    /// Wall-clock seconds per step; excluded from determinism comparisons.
    pub step_seconds: Vec<f64>,
    pub params_digest: String,
    pub diverged: bool,
    pub best_step: usize,
}

impl TrainRecord {
    /// Everything except timing.
    pub fn deterministic_eq(&self, other: &Self) -> bool {
        self.history == other.history
            && self.params_digest == other.params_digest
            && self.diverged == other.diverged
            && self.best_step == other.best_step
    }

    pub fn write_loss_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "step,pde,ic,total,validation_mse")?;
        for (k, r) in self.history.iter().enumerate() {
            let v = r.validation_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(out, "{k},{:e},{:e},{:e},{v}", r.pde, r.ic, r.total)?;
        }
        Ok(())
    }
}

pub fn params_digest(params: &OperatorParams) -> String {
    let mut h = Sha256::new();
    for w in params.to_flat() {
        h.update(w.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..x.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g[k] * g[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            x[k] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Validation hook: mean per-symbol MSE of the current parameters.
pub type Validator<'a> = dyn Fn(&OperatorParams) -> Result<f64> + 'a;

/// Train `init` on `inputs` with physics losses only.
///
/// A non-finite loss stops the run; the best parameters seen so far are
/// returned and the record is flagged as diverged.
pub fn train(
    init: &OperatorParams,
    inputs: &[Frame],
    coeffs: &NlseCoeffs,
    cfg: &TrainConfig,
    validator: Option<&Validator>,
) -> Result<(OperatorParams, TrainRecord)> {
    cfg.validate()?;
    init.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no training frames".into()));
    }
    if !coeffs.is_finite() {
        return Err(Error::InvalidArgument("non-finite NLSE coefficients".into()));
    }
    let all_in = init.branch_inputs(inputs)?;
    let ic_samples: Vec<usize> = (0..init.input_dim_m).collect();
    let batch = cfg.batch_frames.min(inputs.len());

    let mut params = init.clone();
    let mut x = params.to_flat();
    let mut adam = Adam::new(x.len());
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut step_seconds = Vec::with_capacity(cfg.steps);
    let mut diverged = false;

    for step in 0..cfg.steps {
        let started = Instant::now();
        let mut r = rng::stream(rng::derive_seed(cfg.seed, rng::tags::BATCH), step as u64);
        let mut idx = sample(&mut r, inputs.len(), batch).into_vec();
        idx.sort_unstable();
        let b = all_in.select(ndarray::Axis(0), &idx);
        let colloc = CollocationSet::uniform(cfg.collocation_points, rng::derive_seed(cfg.seed, step as u64));

        let (mut report, grad) = match physics::loss_and_grad(&params, b.view(), colloc.points.view(), &ic_samples, coeffs, cfg.weights) {
            Ok(v) => v,
            Err(Error::Divergence(msg)) => {
                log::warn!("step {step}: {msg}; keeping best parameters from step {}", best.2);
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if report.total < best.0 {
            best = (report.total, params.clone(), step);
        }
        let g = grad.to_flat();
        if g.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        adam.step(&mut x, &g, cfg.learning_rate.rate(step, cfg.steps));
        params.assign_flat(&x)?;

        if let Some(v) = validator {
            if cfg.validation_every > 0 && (step + 1) % cfg.validation_every == 0 {
                report.validation_mse = Some(v(&params)?);
            }
        }
        history.push(report);
        step_seconds.push(started.elapsed().as_secs_f64());
    }

    let out = if diverged { best.1 } else { params };
    let record = TrainRecord { history, step_seconds, params_digest: params_digest(&out), diverged, best_step: best.2 };
    Ok((out, record))
}

/// Warm start for the next span: an identical copy.
pub fn transfer_init(prev: &OperatorParams) -> OperatorParams {
    prev.clone()
}

/// Transmitter settings shared by training, link and reproduction runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Transmitter {
    pub format: ModulationFormat,
    pub symbol_rate: f64,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    /// `f64::INFINITY` disables noise loading.
    pub osnr_db: f64,
}

impl Default for Transmitter {
    fn default() -> Self {
        Self { format: ModulationFormat::Qam16, symbol_rate: 14e9, samples_per_symbol: 16, rolloff: 0.1, osnr_db: 30.0 }
    }
}

/// Transmitted sequence before framing, with its symbols and bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub bits: Vec<u8>,
    pub symbols: Vec<num_complex::Complex64>,
    pub clean: signals::ComplexSignal,
    pub signal: signals::ComplexSignal,
    pub power_dbm: f64,
}

/// bits -> map -> shape -> power -> OSNR for one launch power.
pub fn transmit(tx: &Transmitter, t_symbols: usize, power_dbm: f64, seed: u64) -> Result<Transmission> {
    let grid = TimeGrid::new(tx.samples_per_symbol, tx.symbol_rate, t_symbols)?;
    let bits = signals::random_bits(t_symbols * tx.format.bits_per_symbol(), rng::derive_seed(seed, rng::tags::BITS));
    let symbols = signals::map_bits(&bits, tx.format)?;
    let shaped = signals::shape_pulses(&symbols, &grid, tx.rolloff)?;
    let clean = signals::set_launch_power(&shaped, power_dbm)?;
    let signal = signals::load_osnr_noise(&clean, tx.osnr_db, rng::derive_seed(seed, rng::tags::OSNR))?;
    Ok(Transmission { bits, symbols, clean, signal, power_dbm })
}

/// Per-power seed so every launch power gets an independent sequence.
pub fn power_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, rng::tags::POWER), index as u64)
}

/// Frames from every launch power, pooled in power order.
pub fn make_training_inputs(powers_dbm: &[f64], t_symbols: usize, tx: &Transmitter, spec: &FramingSpec, seed: u64) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for (k, &p) in powers_dbm.iter().enumerate() {
        let t = transmit(tx, t_symbols, p, power_seed(seed, k))?;
        frames.extend(framing::split(&t.signal, spec)?);
    }
    Ok(frames)
}
