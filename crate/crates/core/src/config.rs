//! Experiment configuration shared by every CLI subcommand.
//!
//! Unknown keys are rejected everywhere. `--set a.b=value` overrides are
//! applied to the JSON tree before it is parsed, so they go through the same
//! validation as a config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::framing::FramingSpec;
use crate::link::{EdfaSpec, LinkConfig, Propagator};
use crate::operator::{CoordScales, OperatorSpec};
use crate::physics::NlseCoeffs;
use crate::signals::dbm_to_watts;
use crate::ssfm::{FiberParams, StepPlan};
use crate::training::{LrSchedule, TrainConfig, Transmitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub q_embed: usize,
    /// Initial slope of the trunk's time input, in units of the frame window.
    pub t_init_gain: f64,
    /// Launch power whose square root sets the amplitude scale.
    pub reference_power_dbm: f64,
    /// Factor the fiber loss envelope out of the network output.
    pub factor_attenuation: bool,
}

impl OperatorConfig {
    pub fn spec(&self, input_dim_m: usize) -> OperatorSpec {
        OperatorSpec {
            branch_hidden: self.branch_hidden.clone(),
            trunk_hidden: self.trunk_hidden.clone(),
            q_embed: self.q_embed,
            input_dim_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSettings {
    pub spans: usize,
    pub edfa: EdfaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub distances_km: Vec<f64>,
    pub n_symbols: Vec<usize>,
    pub iterations: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Training sequences.
    pub data: u64,
    /// Held-out test sequences.
    pub test: u64,
    /// Network initialization.
    pub init: u64,
    /// ASE realizations along the link.
    pub link: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub transmitter: Transmitter,
    pub powers_dbm: Vec<f64>,
    pub train_symbols: usize,
    pub test_symbols: usize,
    pub framing: FramingSpec,
    pub fiber: FiberParams,
    pub step_plan: StepPlan,
    pub link: LinkSettings,
    pub operator: OperatorConfig,
    pub training: TrainConfig,
    /// Fine-tuning steps for spans after the first (warm-started).
    pub transfer_steps: usize,
    /// Distances, as fractions of the span, at which validation is reported.
    pub validation_fractions: Vec<f64>,
    pub bench: BenchSettings,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Laptop-scale settings: 4 samples per symbol, one wide branch layer, more
    /// training symbols and a short training budget.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            transmitter: Transmitter { samples_per_symbol: 4, ..Transmitter::default() },
            powers_dbm: vec![-3.0, 0.0, 3.0],
            train_symbols: 4096,
            test_symbols: 1 << 13,
            framing: FramingSpec::default(),
            fiber: FiberParams::default(),
            step_plan: StepPlan::fixed(0.1),
            link: LinkSettings { spans: 4, edfa: EdfaSpec::default() },
            operator: OperatorConfig {
                branch_hidden: vec![128],
                trunk_hidden: vec![64, 64, 64],
                q_embed: 64,
                t_init_gain: 40.0,
                reference_power_dbm: 0.0,
                factor_attenuation: true,
            },
            training: TrainConfig {
                steps: 10_000,
                batch_frames: 16,
                learning_rate: LrSchedule { initial: 3e-3, ..LrSchedule::default() },
                collocation_points: 256,
                seed: 3,
                validation_every: 0,
                ..TrainConfig::default()
            },
            transfer_steps: 3_000,
            validation_fractions: vec![0.25, 0.5, 0.75, 1.0],
            bench: BenchSettings { distances_km: vec![80.0, 160.0, 240.0, 320.0], n_symbols: vec![1 << 13], iterations: 5, warmup: 1 },
            seeds: Seeds { data: 1, test: 99, init: 2, link: 7 },
            output_dir: PathBuf::from("runs/desk"),
        }
    }

    /// Full-scale constants; expect hours of training.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            transmitter: Transmitter::default(),
            train_symbols: 808,
            operator: OperatorConfig {
                branch_hidden: vec![64, 64],
                trunk_hidden: vec![64, 64, 64],
                q_embed: 64,
                t_init_gain: 80.0,
                reference_power_dbm: 0.0,
                factor_attenuation: true,
            },
            training: TrainConfig { seed: 3, ..TrainConfig::default() },
            transfer_steps: 10_000,
            bench: BenchSettings { n_symbols: vec![1 << 13, 1 << 17], ..desk.bench.clone() },
            output_dir: PathBuf::from("runs/paper"),
            ..desk
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transmitter.format.bits_per_symbol();
        crate::signals::TimeGrid::new(self.transmitter.samples_per_symbol, self.transmitter.symbol_rate, self.framing.core_m)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.framing.core_m == 0 {
            return Err(Error::Config("framing.core_m must be positive".into()));
        }
        for (name, t) in [("train_symbols", self.train_symbols), ("test_symbols", self.test_symbols)] {
            if t == 0 || t % self.framing.core_m != 0 {
                return Err(Error::Config(format!("{name} = {t} must be a positive multiple of core_m")));
            }
        }
        if self.powers_dbm.is_empty() || self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("powers_dbm must be a non-empty list of finite values".into()));
        }
        self.fiber.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.step_plan.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.link.edfa.validate()?;
        self.training.validate()?;
        if self.bench.iterations < 5 || self.bench.warmup < 1 {
            return Err(Error::Config("bench needs at least 5 timed iterations after 1 warm-up".into()));
        }
        if self.bench.distances_km.iter().any(|d| !(*d > 0.0)) || self.bench.n_symbols.iter().any(|&n| n % self.framing.core_m != 0) {
            return Err(Error::Config("bench distances must be positive and symbol counts multiples of core_m".into()));
        }
        if self.validation_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("validation_fractions must lie in (0, 1]".into()));
        }
        self.operator.spec(1).branch_spec().map_err(|e| Error::Config(e.to_string()))?;
        self.operator.spec(1).trunk_spec().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Frame samples seen by the branch networks.
    pub fn input_dim_m(&self) -> usize {
        self.framing.frame_symbols() * self.transmitter.samples_per_symbol
    }

    pub fn frame_duration_s(&self) -> f64 {
        self.framing.frame_symbols() as f64 / self.transmitter.symbol_rate
    }

    pub fn coord_scales(&self) -> CoordScales {
        let mut s = CoordScales {
            z_scale_km: self.fiber.length_km,
            t_scale_s: self.frame_duration_s(),
            amp_scale: dbm_to_watts(self.operator.reference_power_dbm).sqrt(),
            amp_decay: 0.0,
        };
        if self.operator.factor_attenuation {
            s.amp_decay = NlseCoeffs::from_fiber(&self.fiber, &s).c_alpha;
        }
        s
    }

    pub fn link_config(&self, propagator: Propagator) -> LinkConfig {
        LinkConfig::uniform(self.link.spans, self.fiber, self.link.edfa, propagator)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Start from `base` (or a file), then apply `key=value` overrides.
    pub fn resolve(base: Profile, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let user: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let profile = match user.get("profile") {
                    Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
                    None => base,
                };
                let mut v = Self::profile(profile).to_value();
                merge(&mut v, user, "")?;
                v
            }
            None => Self::profile(base).to_value(),
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }
}

/// Recursively overlay `user` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, uv) in u {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(bv) => merge(bv, uv, &p)?,
                    None => return Err(Error::Config(format!("unknown key `{p}`"))),
                }
            }
            Ok(())
        }
        (b, u) => {
            *b = u;
            Ok(())
        }
    }
}

/// Apply one `a.b.c=value` override. Values are parsed as JSON when
/// possible and otherwise taken as strings.
pub fn apply_override(v: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let next = match cur {
            Value::Object(map) => map.get_mut(*part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
            _ => None,
        };
        let Some(next) = next else {
            return Err(Error::Config(format!("unknown key `{}`", parts[..=i].join("."))));
        };
        cur = next;
    }
    *cur = value;
    Ok(())
}
