//! DeepONet evaluation.
//!
//! Two branch networks (I and Q) encode a frame of input samples, the trunk
//! network encodes the coordinate `(z, t)`, and each output quadrature is the
//! dot product of its branch embedding with the trunk embedding:
//!
//! ```text
//! s_I(z, t) = sum_i bI_i(u) k_i(z, t)        s_Q(z, t) = sum_i bQ_i(u) k_i(z, t)
//! ```
//!
//! Networks work on nondimensional quantities: `z' = z / z_scale`,
//! `tau = t / t_scale` and amplitudes divided by `amp_scale`. With a nonzero
//! `amp_decay` the output scale follows the known attenuation,
//! `s = amp_scale exp(-amp_decay z') u`, so the networks learn a field of
//! roughly constant size along the span. Branch inputs are interleaved
//! `(re0, im0, re1, im1, ...)`.

pub mod mlp;
pub mod model_file;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::Frame;
use crate::rng;
pub use mlp::{Jet, Mlp, MlpSpec};

/// Nondimensionalization constants fixed at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordScales {
    pub z_scale_km: f64,
    pub t_scale_s: f64,
    /// sqrt(W)
    pub amp_scale: f64,
    /// Known attenuation factored out of the output: at `z' = z / z_scale`
    /// the amplitude scale is `amp_scale * exp(-amp_decay * z')`.
    #[serde(default)]
    pub amp_decay: f64,
}

impl CoordScales {
    /// Amplitude scale at nondimensional distance `z_nd`.
    pub fn amp_at(&self, z_nd: f64) -> f64 {
        self.amp_scale * (-self.amp_decay * z_nd).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    /// Hidden widths of each branch net; input is `2 * input_dim_m`, output `q_embed`.
    pub branch_hidden: Vec<usize>,
    /// Hidden widths of the trunk; input is 2 (z, t), output `q_embed`.
    pub trunk_hidden: Vec<usize>,
    pub q_embed: usize,
    /// Complex samples per frame.
    pub input_dim_m: usize,
}

impl OperatorSpec {
    pub fn branch_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![2 * self.input_dim_m];
        w.extend(&self.branch_hidden);
        w.push(self.q_embed);
        MlpSpec::new(w)
    }

    pub fn trunk_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![2];
        w.extend(&self.trunk_hidden);
        w.push(self.q_embed);
        MlpSpec::new(w)
    }
}

/// Coordinate at which the operator is evaluated: distance in km and time
/// in seconds from the start of the frame window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub z_km: f64,
    pub t_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorParams {
    pub branch_i: Mlp,
    pub branch_q: Mlp,
    pub trunk: Mlp,
    pub q_embed: usize,
    pub input_dim_m: usize,
    pub coord_scales: CoordScales,
    /// Free-form training provenance carried in the model file.
    pub provenance: serde_json::Value,
}

/// Per-point value and derivatives of the complex field (re = I, im = Q).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldJet {
    pub s: Complex64,
    pub ds_dz: Complex64,
    pub ds_dt: Complex64,
    pub d2s_dt2: Complex64,
}

/// Nondimensional jets of both quadratures, frames x points.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBatch {
    pub i: Jet,
    pub q: Jet,
}

impl OperatorParams {
    /// Glorot-initialized operator. Unless `t_init_gain` is 1, the first
    /// trunk layer's `t` slopes are set to about `t_init_gain` so the initial
    /// trunk features vary on the sample scale rather than the frame scale.
    pub fn init(spec: &OperatorSpec, scales: CoordScales, t_init_gain: f64, seed: u64) -> Result<Self> {
        if spec.q_embed == 0 || spec.input_dim_m == 0 {
            return Err(Error::InvalidArgument("q_embed and input_dim_m must be positive".into()));
        }
        let mut r = rng::stream(seed, rng::tags::INIT);
        let branch_i = Mlp::glorot(&spec.branch_spec()?, &mut r);
        let branch_q = Mlp::glorot(&spec.branch_spec()?, &mut r);
        let mut trunk = Mlp::glorot(&spec.trunk_spec()?, &mut r);
        if t_init_gain != 1.0 {
            // time slopes in [gain/2, gain] with random sign, transitions
            // stratified over the frame window so every stretch is covered
            let first = &mut trunk.layers[0];
            let width = first.w.nrows();
            for k in 0..width {
                let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                let w = sign * t_init_gain * r.random_range(0.5..1.0);
                let center = (k as f64 + r.random_range(0.0..1.0)) / width as f64;
                first.w[[k, 1]] = w;
                first.b[k] = -w * center;
            }
        }
        let params = Self {
            branch_i,
            branch_q,
            trunk,
            q_embed: spec.q_embed,
            input_dim_m: spec.input_dim_m,
            coord_scales: scales,
            provenance: serde_json::Value::Null,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn spec(&self) -> OperatorSpec {
        let b = self.branch_i.spec().layer_widths;
        let t = self.trunk.spec().layer_widths;
        OperatorSpec {
            branch_hidden: b[1..b.len() - 1].to_vec(),
            trunk_hidden: t[1..t.len() - 1].to_vec(),
            q_embed: self.q_embed,
            input_dim_m: self.input_dim_m,
        }
    }

    /// Embedding-width and input-width contract.
    pub fn validate(&self) -> Result<()> {
        let q = self.q_embed;
        for (name, net) in [("branch_i", &self.branch_i), ("branch_q", &self.branch_q), ("trunk", &self.trunk)] {
            if net.layers.len() < 2 {
                return Err(Error::DimensionMismatch(format!("{name} needs a hidden layer")));
            }
            if net.output_width() != q {
                return Err(Error::DimensionMismatch(format!("{name} outputs {} features but q_embed = {q}", net.output_width())));
            }
            for (k, pair) in net.layers.windows(2).enumerate() {
                if pair[0].w.nrows() != pair[1].w.ncols() {
                    return Err(Error::DimensionMismatch(format!("{name} layer {k} does not chain")));
                }
            }
            if net.layers.iter().any(|l| l.b.len() != l.w.nrows()) {
                return Err(Error::DimensionMismatch(format!("{name} bias width mismatch")));
            }
        }
        if self.trunk.input_width() != 2 {
            return Err(Error::DimensionMismatch(format!("trunk input width {} != 2", self.trunk.input_width())));
        }
        for (name, net) in [("branch_i", &self.branch_i), ("branch_q", &self.branch_q)] {
            if net.input_width() != 2 * self.input_dim_m {
                return Err(Error::DimensionMismatch(format!(
                    "{name} input width {} != 2 * input_dim_m = {}",
                    net.input_width(),
                    2 * self.input_dim_m
                )));
            }
        }
        let s = self.coord_scales;
        if !(s.z_scale_km > 0.0 && s.t_scale_s > 0.0 && s.amp_scale > 0.0) {
            return Err(Error::InvalidArgument("coordinate scales must be positive".into()));
        }
        if !s.amp_decay.is_finite() {
            return Err(Error::InvalidArgument("amp_decay must be finite".into()));
        }
        Ok(())
    }

    pub fn n_weights(&self) -> usize {
        self.branch_i.n_weights() + self.branch_q.n_weights() + self.trunk.n_weights()
    }

    pub fn is_finite(&self) -> bool {
        self.branch_i.is_finite() && self.branch_q.is_finite() && self.trunk.is_finite()
    }

    /// All weights in a fixed order: branch_i, branch_q, trunk.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_weights());
        self.branch_i.write_flat(&mut v);
        self.branch_q.write_flat(&mut v);
        self.trunk.write_flat(&mut v);
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_weights() {
            return Err(Error::DimensionMismatch(format!("{} weights for a model of {}", flat.len(), self.n_weights())));
        }
        let mut pos = self.branch_i.read_flat(flat);
        pos += self.branch_q.read_flat(&flat[pos..]);
        self.trunk.read_flat(&flat[pos..]);
        Ok(())
    }

    /// Same architecture with every weight zero (used as a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            branch_i: Mlp::zeros(&self.branch_i.spec()),
            branch_q: Mlp::zeros(&self.branch_q.spec()),
            trunk: Mlp::zeros(&self.trunk.spec()),
            provenance: serde_json::Value::Null,
            ..self.clone()
        }
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.samples.len() != self.input_dim_m {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} samples, operator expects {}",
                frame.samples.len(),
                self.input_dim_m
            )));
        }
        Ok(())
    }

    /// Branch input matrix (frames x 2m), amplitudes nondimensionalized.
    pub fn branch_inputs(&self, frames: &[Frame]) -> Result<Array2<f64>> {
        let m = self.input_dim_m;
        let inv = 1.0 / self.coord_scales.amp_scale;
        let mut x = Array2::zeros((frames.len(), 2 * m));
        for (r, f) in frames.iter().enumerate() {
            self.check_frame(f)?;
            for (k, s) in f.samples.samples.iter().enumerate() {
                x[[r, 2 * k]] = s.re * inv;
                x[[r, 2 * k + 1]] = s.im * inv;
            }
        }
        Ok(x)
    }

    /// Trunk input matrix (points x 2) in nondimensional coordinates.
    pub fn trunk_inputs(&self, pts: &[EvalPoint]) -> Array2<f64> {
        let s = self.coord_scales;
        let mut x = Array2::zeros((pts.len(), 2));
        for (r, p) in pts.iter().enumerate() {
            x[[r, 0]] = p.z_km / s.z_scale_km;
            x[[r, 1]] = p.t_s / s.t_scale_s;
        }
        x
    }

    /// Nondimensional outputs (frames x points) for both quadratures.
    pub fn eval_nd(&self, branch_in: ArrayView2<f64>, trunk_in: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let bi = self.branch_i.forward(branch_in);
        let bq = self.branch_q.forward(branch_in);
        let k = self.trunk.forward(trunk_in);
        (bi.dot(&k.t()), bq.dot(&k.t()))
    }

    /// Nondimensional jets (frames x points).
    pub fn jet_nd(&self, branch_in: ArrayView2<f64>, trunk_in: ArrayView2<f64>) -> JetBatch {
        let bi = self.branch_i.forward(branch_in);
        let bq = self.branch_q.forward(branch_in);
        let (k, _) = self.trunk.jet_forward(trunk_in);
        JetBatch { i: merge(&bi, &k), q: merge(&bq, &k) }
    }

    /// Evaluate the operator on one frame at physical points. Returns (s_I, s_Q) in sqrt(W).
    pub fn forward(&self, u: &Frame, pts: &[EvalPoint]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let b = self.branch_inputs(std::slice::from_ref(u))?;
        let (si, sq) = self.eval_nd(b.view(), self.trunk_inputs(pts).view());
        let s = self.coord_scales;
        let a: Vec<f64> = pts.iter().map(|p| s.amp_at(p.z_km / s.z_scale_km)).collect();
        Ok((si.row(0).iter().zip(&a).map(|(v, a)| v * a).collect(), sq.row(0).iter().zip(&a).map(|(v, a)| v * a).collect()))
    }

    /// Values and exact derivatives in physical units (sqrt(W), per km, per s, per s^2).
    pub fn forward_jet(&self, u: &Frame, pts: &[EvalPoint]) -> Result<Vec<FieldJet>> {
        self.validate()?;
        let b = self.branch_inputs(std::slice::from_ref(u))?;
        let jet = self.jet_nd(b.view(), self.trunk_inputs(pts).view());
        let s = self.coord_scales;
        Ok((0..pts.len())
            .map(|p| {
                let a = s.amp_at(pts[p].z_km / s.z_scale_km);
                let u = Complex64::new(jet.i.v[[0, p]], jet.q.v[[0, p]]);
                let uz = Complex64::new(jet.i.dz[[0, p]], jet.q.dz[[0, p]]);
                FieldJet {
                    s: u * a,
                    ds_dz: (uz - u * s.amp_decay) * (a / s.z_scale_km),
                    ds_dt: Complex64::new(jet.i.dt[[0, p]], jet.q.dt[[0, p]]) * (a / s.t_scale_s),
                    d2s_dt2: Complex64::new(jet.i.dtt[[0, p]], jet.q.dtt[[0, p]]) * (a / (s.t_scale_s * s.t_scale_s)),
                }
            })
            .collect())
    }

    /// Predict every sample of each frame at distance `z_km`.
    pub fn predict_frames(&self, frames: &[Frame], z_km: f64) -> Result<Vec<Frame>> {
        self.validate()?;
        let Some(first) = frames.first() else { return Ok(Vec::new()) };
        let grid = first.samples.grid;
        let dt = grid.sample_period();
        let pts: Vec<EvalPoint> = (0..self.input_dim_m).map(|k| EvalPoint { z_km, t_s: k as f64 * dt }).collect();
        let trunk_in = self.trunk_inputs(&pts);
        let k = self.trunk.forward(trunk_in.view());
        let a = self.coord_scales.amp_at(z_km / self.coord_scales.z_scale_km);
        let mut out = Vec::with_capacity(frames.len());
        // bounded batches keep the branch activations small for long sequences
        for chunk in frames.chunks(256) {
            let b = self.branch_inputs(chunk)?;
            let si = self.branch_i.forward(b.view()).dot(&k.t());
            let sq = self.branch_q.forward(b.view()).dot(&k.t());
            for (r, f) in chunk.iter().enumerate() {
                let mut sig = f.samples.clone();
                for (p, s) in sig.samples.iter_mut().enumerate() {
                    *s = Complex64::new(si[[r, p]] * a, sq[[r, p]] * a);
                }
                out.push(Frame { samples: sig, source_core_start: f.source_core_start });
            }
        }
        Ok(out)
    }
}

/// Dot-product merge of branch embeddings (F x q) with a trunk jet (P x q).
pub fn merge(b: &Array2<f64>, k: &Jet) -> Jet {
    Jet { v: b.dot(&k.v.t()), dz: b.dot(&k.dz.t()), dt: b.dot(&k.dt.t()), dtt: b.dot(&k.dtt.t()) }
}

/// Frame-window evaluation times (seconds) for each sample of a frame.
pub fn frame_sample_times(frame: &Frame) -> Vec<f64> {
    let dt = frame.samples.grid.sample_period();
    (0..frame.samples.len()).map(|k| k as f64 * dt).collect()
}

#[cfg(test)]
mod tests;
