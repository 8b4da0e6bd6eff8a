//! Multi-span links: fiber span, then an EDFA that restores the span loss and
//! adds lumped ASE noise.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::{self, Frame, FramingSpec};
use crate::operator::{model_file, OperatorParams};
use crate::rng;
use crate::signals::{self, ComplexSignal};
use crate::ssfm::{self, FiberParams, StepPlan};

pub const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdfaSpec {
    pub gain_db: f64,
    /// `f64::NEG_INFINITY` gives a noiseless amplifier.
    pub noise_figure_db: f64,
    pub center_frequency_hz: f64,
}

impl Default for EdfaSpec {
    fn default() -> Self {
        Self { gain_db: 16.0, noise_figure_db: 5.0, center_frequency_hz: 193.41e12 }
    }
}

impl EdfaSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_db >= 0.0 && self.gain_db.is_finite()) {
            return Err(Error::Config(format!("EDFA gain {} dB must be finite and >= 0", self.gain_db)));
        }
        if self.noise_figure_db.is_nan() || self.noise_figure_db == f64::INFINITY {
            return Err(Error::Config("EDFA noise figure must be finite or -inf".into()));
        }
        if self.noise_figure_db.is_finite() && self.noise_figure_db < 3.0 {
            log::warn!("noise figure {} dB is below the 3 dB high-gain limit", self.noise_figure_db);
        }
        if !(self.center_frequency_hz > 0.0) {
            return Err(Error::Config("EDFA center frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_figure_db = f64::NEG_INFINITY;
        self
    }

    /// Total ASE power over the simulation bandwidth, single polarization.
    pub fn ase_power_w(&self, sim_bandwidth_hz: f64) -> f64 {
        if self.noise_figure_db == f64::NEG_INFINITY {
            return 0.0;
        }
        let g = 10f64.powf(self.gain_db / 10.0);
        let n_sp = 10f64.powf(self.noise_figure_db / 10.0) / 2.0;
        n_sp * PLANCK * self.center_frequency_hz * (g - 1.0) * sim_bandwidth_hz
    }
}

/// Scale by the EDFA gain and add white circular Gaussian ASE.
pub fn edfa_amplify(sig: &ComplexSignal, spec: &EdfaSpec, sim_bandwidth_hz: f64, seed: u64) -> ComplexSignal {
    let mut out = sig.scaled(10f64.powf(spec.gain_db / 20.0));
    let p = spec.ase_power_w(sim_bandwidth_hz);
    if p > 0.0 {
        let mut r = rng::stream(seed, rng::tags::EDFA);
        signals::add_white_noise(&mut out.samples, p, &mut r);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanConfig {
    pub fiber: FiberParams,
    pub edfa: EdfaSpec,
    /// Replace `edfa.gain_db` by the span loss.
    #[serde(default = "yes")]
    pub auto_gain: bool,
}

fn yes() -> bool {
    true
}

impl SpanConfig {
    pub fn effective_edfa(&self) -> EdfaSpec {
        let mut e = self.edfa;
        if self.auto_gain {
            e.gain_db = self.fiber.span_loss_db();
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Propagator {
    Ssfm { plan: StepPlan },
    Pino { models: Vec<PathBuf>, framing: FramingSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub spans: Vec<SpanConfig>,
    pub propagator: Propagator,
}

impl LinkConfig {
    /// `n` identical spans with auto gain.
    pub fn uniform(n: usize, fiber: FiberParams, edfa: EdfaSpec, propagator: Propagator) -> Self {
        Self { spans: vec![SpanConfig { fiber, edfa, auto_gain: true }; n], propagator }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.spans {
            s.fiber.validate()?;
            s.effective_edfa().validate()?;
        }
        match &self.propagator {
            Propagator::Ssfm { plan } => plan.validate(),
            Propagator::Pino { models, .. } if models.len() < self.spans.len() => Err(Error::MissingModel(models.len())),
            Propagator::Pino { .. } => Ok(()),
        }
    }

    pub fn total_length_km(&self) -> f64 {
        self.spans.iter().map(|s| s.fiber.length_km).sum()
    }
}

/// Frame-to-frame propagation over one span, as used by the cascade.
pub trait FrameOperator {
    fn propagate_frames(&self, frames: &[Frame], z_km: f64) -> Result<Vec<Frame>>;
}

impl FrameOperator for OperatorParams {
    fn propagate_frames(&self, frames: &[Frame], z_km: f64) -> Result<Vec<Frame>> {
        self.predict_frames(frames, z_km)
    }
}

/// A "perfect surrogate": stitches the frames, runs SSFM, and re-splits.
#[derive(Debug, Clone)]
pub struct SsfmBackedOperator {
    pub fiber: FiberParams,
    pub plan: StepPlan,
    pub framing: FramingSpec,
}

impl FrameOperator for SsfmBackedOperator {
    fn propagate_frames(&self, frames: &[Frame], z_km: f64) -> Result<Vec<Frame>> {
        let sig = framing::stitch(frames, &self.framing)?;
        let out = ssfm::propagate(&sig, &self.fiber.with_length(z_km), &self.plan)?;
        framing::split(&out.output, &self.framing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutput {
    /// Signal after each span's EDFA (only the last one unless recording).
    pub per_span: Vec<ComplexSignal>,
    /// ASE seed used at each span.
    pub edfa_seeds: Vec<u64>,
}

impl LinkOutput {
    pub fn output(&self) -> Option<&ComplexSignal> {
        self.per_span.last()
    }
}

pub fn edfa_seed(seed: u64, span: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, rng::tags::EDFA), span as u64)
}

enum SpanStep<'a> {
    Ssfm(&'a StepPlan),
    Frames(&'a dyn FrameOperator, FramingSpec),
}

fn cascade<'a>(
    sig: &ComplexSignal,
    cfg: &LinkConfig,
    step_for: &dyn Fn(usize) -> SpanStep<'a>,
    record_per_span: bool,
    seed: u64,
) -> Result<LinkOutput> {
    let mut cur = sig.clone();
    let mut per_span = Vec::new();
    let mut seeds = Vec::new();
    let bw = sig.grid.sample_rate();
    for (k, span) in cfg.spans.iter().enumerate() {
        let after = match step_for(k) {
            SpanStep::Ssfm(plan) => ssfm::propagate(&cur, &span.fiber, plan)?.output,
            SpanStep::Frames(op, spec) => {
                let frames = framing::split(&cur, &spec)?;
                framing::stitch(&op.propagate_frames(&frames, span.fiber.length_km)?, &spec)?
            }
        };
        let s = edfa_seed(seed, k);
        cur = edfa_amplify(&after, &span.effective_edfa(), bw, s);
        seeds.push(s);
        if record_per_span {
            per_span.push(cur.clone());
        }
    }
    if !record_per_span {
        per_span.push(cur);
    }
    Ok(LinkOutput { per_span, edfa_seeds: seeds })
}

/// Run the link with explicit per-span operators (used for PINO and its fakes).
pub fn run_link_with(
    sig: &ComplexSignal,
    cfg: &LinkConfig,
    operators: &[&dyn FrameOperator],
    spec: &FramingSpec,
    record_per_span: bool,
    seed: u64,
) -> Result<LinkOutput> {
    if operators.len() < cfg.spans.len() {
        return Err(Error::MissingModel(operators.len()));
    }
    let spec = *spec;
    cascade(sig, cfg, &|k| SpanStep::Frames(operators[k], spec), record_per_span, seed)
}

/// Run the link with the configured propagator. PINO models are loaded
/// from disk; a missing model fails naming its span.
pub fn run_link(sig: &ComplexSignal, cfg: &LinkConfig, record_per_span: bool, seed: u64) -> Result<LinkOutput> {
    cfg.validate()?;
    match &cfg.propagator {
        Propagator::Ssfm { plan } => cascade(sig, cfg, &|_| SpanStep::Ssfm(plan), record_per_span, seed),
        Propagator::Pino { models, framing } => {
            let mut loaded = Vec::with_capacity(cfg.spans.len());
            for (k, path) in models.iter().take(cfg.spans.len()).enumerate() {
                if !path.exists() {
                    return Err(Error::MissingModel(k));
                }
                loaded.push(model_file::load(path)?);
            }
            let ops: Vec<&dyn FrameOperator> = loaded.iter().map(|p| p as &dyn FrameOperator).collect();
            run_link_with(sig, cfg, &ops, framing, record_per_span, seed)
        }
    }
}
