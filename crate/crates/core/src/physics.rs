//! NLSE residual and the physics-informed losses.
//!
//! Everything here is nondimensional: with `z' = z / z_scale`,
//! `tau = t / t_scale` and `u = s / amp_scale` the residual reads
//!
//! ```text
//! r = du/dz' + c_alpha u + i c_beta d2u/dtau2 - i c_gamma |u|^2 u
//! c_alpha = alpha z_scale / 2
//! c_beta  = beta2 z_scale / (2 t_scale^2)
//! c_gamma = gamma amp_scale^2 z_scale
//! ```
//!
//! When the operator carries an attenuation envelope, `s = amp_scale
//! exp(-d z') u`, the network output obeys the same equation with
//! `c_alpha - d` in place of `c_alpha` and `c_gamma exp(-2 d z')` as the
//! Kerr coefficient. Losses are computed on that form.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::{Frame, FramingSpec};
use crate::operator::{merge, CoordScales, FieldJet, Jet, OperatorParams};
use crate::rng;
use crate::ssfm::FiberParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlseCoeffs {
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_gamma: f64,
}

impl NlseCoeffs {
    pub fn from_fiber(fiber: &FiberParams, scales: &CoordScales) -> Self {
        let t_ps = scales.t_scale_s * 1e12;
        Self {
            c_alpha: fiber.alpha_linear() * scales.z_scale_km / 2.0,
            c_beta: fiber.beta2_ps2_per_km * scales.z_scale_km / (2.0 * t_ps * t_ps),
            c_gamma: fiber.gamma_per_w_km * scales.amp_scale * scales.amp_scale * scales.z_scale_km,
        }
    }

    /// Inverse of [`NlseCoeffs::from_fiber`] for a given span length.
    pub fn to_fiber(&self, scales: &CoordScales) -> FiberParams {
        let t_ps = scales.t_scale_s * 1e12;
        let alpha_lin = 2.0 * self.c_alpha / scales.z_scale_km;
        FiberParams {
            alpha_db_per_km: crate::ssfm::neper_to_db_per_km(alpha_lin),
            beta2_ps2_per_km: 2.0 * self.c_beta * t_ps * t_ps / scales.z_scale_km,
            gamma_per_w_km: self.c_gamma / (scales.amp_scale * scales.amp_scale * scales.z_scale_km),
            length_km: scales.z_scale_km,
        }
    }

    pub fn zero() -> Self {
        Self { c_alpha: 0.0, c_beta: 0.0, c_gamma: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.c_alpha.is_finite() && self.c_beta.is_finite() && self.c_gamma.is_finite()
    }
}

/// Residual of the nondimensional NLSE at one point.
pub fn nlse_residual(jet: &FieldJet, coeffs: &NlseCoeffs) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    jet.ds_dz + coeffs.c_alpha * jet.s + i * coeffs.c_beta * jet.d2s_dt2 - i * coeffs.c_gamma * jet.s.norm_sqr() * jet.s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    UniformRandom { seed: u64 },
    Grid { nz: usize, nt: usize },
}

/// Collocation points `(z', tau)` inside the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub points: Array2<f64>,
    pub sampler: Sampler,
}

impl CollocationSet {
    pub fn uniform(n: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::tags::COLLOCATION);
        let points = Array2::from_shape_simple_fn((n, 2), || r.random_range(0.0..1.0));
        Self { points, sampler: Sampler::UniformRandom { seed } }
    }

    /// Cell-centered `nz x nt` grid.
    pub fn grid(nz: usize, nt: usize) -> Self {
        let mut points = Array2::zeros((nz * nt, 2));
        for a in 0..nz {
            for b in 0..nt {
                points[[a * nt + b, 0]] = (a as f64 + 0.5) / nz as f64;
                points[[a * nt + b, 1]] = (b as f64 + 0.5) / nt as f64;
            }
        }
        Self { points, sampler: Sampler::Grid { nz, nt } }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_pde: f64,
    pub w_ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_pde: 1.0, w_ic: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pde: f64,
    pub ic: f64,
    pub total: f64,
    pub validation_mse: Option<f64>,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn new(pde: f64, ic: f64, weights: LossWeights) -> Self {
        Self { pde, ic, total: weights.w_pde * pde + weights.w_ic * ic, validation_mse: None, weights }
    }
}

/// Anything that maps nondimensional branch inputs and trunk coordinates to
/// the two output quadratures (frames x points).
pub trait FieldModel {
    fn field_nd(&self, branch_in: ArrayView2<f64>, trunk_in: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>);
}

impl FieldModel for OperatorParams {
    fn field_nd(&self, branch_in: ArrayView2<f64>, trunk_in: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        self.eval_nd(branch_in, trunk_in)
    }
}

/// Per-point coefficients of the equation the network output obeys. With the
/// attenuation envelope `exp(-d z')` factored out, `u` sees `c_alpha - d`
/// and a Kerr coefficient `c_gamma exp(-2 d z')`.
fn point_coeffs(c: &NlseCoeffs, decay: f64, z_nd: ArrayView1<f64>) -> (f64, Array1<f64>) {
    (c.c_alpha - decay, z_nd.mapv(|z| c.c_gamma * (-2.0 * decay * z).exp()))
}

/// Residual real and imaginary parts (frames x points) from merged jets.
fn residual_arrays(si: &Jet, sq: &Jet, c_beta: f64, ca: f64, cg: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut rr = si.dz.clone();
    let mut ri = sq.dz.clone();
    Zip::indexed(&mut rr).and(&mut ri).and(&si.v).and(&sq.v).for_each(|(_, p), rr, ri, &i, &q| {
        let k = cg[p] * (i * i + q * q);
        *rr += ca * i + k * q;
        *ri += ca * q - k * i;
    });
    rr.scaled_add(-c_beta, &sq.dtt);
    ri.scaled_add(c_beta, &si.dtt);
    (rr, ri)
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{what} loss is not finite")))
    }
}

/// Mean |r|^2 over frames and collocation points.
pub fn pde_loss(params: &OperatorParams, u_batch: &[Frame], colloc: &CollocationSet, coeffs: &NlseCoeffs) -> Result<f64> {
    let b = params.branch_inputs(u_batch)?;
    let jets = params.jet_nd(b.view(), colloc.points.view());
    let (ca, cg) = point_coeffs(coeffs, params.coord_scales.amp_decay, colloc.points.column(0));
    let (rr, ri) = residual_arrays(&jets.i, &jets.q, coeffs.c_beta, ca, &cg);
    let n = rr.len().max(1) as f64;
    check_finite((rr.mapv(|v| v * v).sum() + ri.mapv(|v| v * v).sum()) / n, "PDE")
}

/// IC points `(0, tau_j)` for the given frame sample indices.
pub fn ic_points(params: &OperatorParams, sample_indices: &[usize]) -> Array2<f64> {
    let m = params.input_dim_m as f64;
    let mut x = Array2::zeros((sample_indices.len(), 2));
    for (r, &j) in sample_indices.iter().enumerate() {
        x[[r, 1]] = j as f64 / m;
    }
    x
}

/// Mean over frames and samples of |G(u)(0, t_j) - u(t_j)|^2, nondimensional.
///
/// `t_scale` must equal the frame duration so that sample `j` sits at `tau = j / m`.
pub fn ic_loss<M: FieldModel>(model: &M, branch_in: ArrayView2<f64>, sample_indices: &[usize]) -> Result<f64> {
    let m = branch_in.ncols() / 2;
    let mut pts = Array2::zeros((sample_indices.len(), 2));
    for (r, &j) in sample_indices.iter().enumerate() {
        if j >= m {
            return Err(Error::InvalidArgument(format!("IC sample {j} outside a frame of {m}")));
        }
        pts[[r, 1]] = j as f64 / m as f64;
    }
    let (pi, pq) = model.field_nd(branch_in, pts.view());
    let mut acc = 0.0;
    for f in 0..branch_in.nrows() {
        for (r, &j) in sample_indices.iter().enumerate() {
            let di = pi[[f, r]] - branch_in[[f, 2 * j]];
            let dq = pq[[f, r]] - branch_in[[f, 2 * j + 1]];
            acc += di * di + dq * dq;
        }
    }
    check_finite(acc / (branch_in.nrows() * sample_indices.len()).max(1) as f64, "IC")
}

/// Frame-level convenience wrapper around [`ic_loss`].
pub fn ic_loss_frames(params: &OperatorParams, u_batch: &[Frame], sample_indices: &[usize]) -> Result<f64> {
    let b = params.branch_inputs(u_batch)?;
    ic_loss(params, b.view(), sample_indices)
}

/// Total loss and its gradient with respect to every weight.
pub fn loss_and_grad(
    params: &OperatorParams,
    branch_in: ArrayView2<f64>,
    colloc: ArrayView2<f64>,
    ic_samples: &[usize],
    coeffs: &NlseCoeffs,
    weights: LossWeights,
) -> Result<(LossReport, OperatorParams)> {
    let mut grad = params.zeros_like();
    let (bi, cache_i) = params.branch_i.forward_cached(branch_in);
    let (bq, cache_q) = params.branch_q.forward_cached(branch_in);
    let f = branch_in.nrows();

    // PDE term
    let (k, kcache) = params.trunk.jet_forward(colloc);
    let si = merge(&bi, &k);
    let sq = merge(&bq, &k);
    let (ca, cg) = point_coeffs(coeffs, params.coord_scales.amp_decay, colloc.column(0));
    let (rr, ri) = residual_arrays(&si, &sq, coeffs.c_beta, ca, &cg);
    let n_pde = rr.len().max(1) as f64;
    let pde = check_finite((rr.mapv(|v| v * v).sum() + ri.mapv(|v| v * v).sum()) / n_pde, "PDE")?;

    let scale = 2.0 * weights.w_pde / n_pde;
    let c = *coeffs;
    let mut gi_v = rr.clone();
    let mut gq_v = ri.clone();
    Zip::indexed(&mut gi_v).and(&mut gq_v).and(&si.v).and(&sq.v).for_each(|(_, pt), gi, gq, &i, &q| {
        let (r, m, g) = (*gi * scale, *gq * scale, cg[pt]);
        let p = i * i + q * q;
        *gi = ca * r + r * g * 2.0 * i * q - m * g * (p + 2.0 * i * i);
        *gq = ca * m + r * g * (p + 2.0 * q * q) - m * g * 2.0 * i * q;
    });
    let gi_z = rr.mapv(|r| r * scale);
    let gq_z = ri.mapv(|m| m * scale);
    let gi_tt = ri.mapv(|m| c.c_beta * m * scale);
    let gq_tt = rr.mapv(|r| -c.c_beta * r * scale);

    let mut g_bi = gi_v.dot(&k.v) + gi_z.dot(&k.dz) + gi_tt.dot(&k.dtt);
    let mut g_bq = gq_v.dot(&k.v) + gq_z.dot(&k.dz) + gq_tt.dot(&k.dtt);
    let g_k = Jet {
        v: gi_v.t().dot(&bi) + gq_v.t().dot(&bq),
        dz: gi_z.t().dot(&bi) + gq_z.t().dot(&bq),
        dt: Array2::zeros(k.dt.dim()),
        dtt: gi_tt.t().dot(&bi) + gq_tt.t().dot(&bq),
    };
    params.trunk.jet_backward(&kcache, g_k, &mut grad.trunk);

    // IC term
    let pts = ic_points(params, ic_samples);
    let (k0, k0cache) = params.trunk.forward_cached(pts.view());
    let pi = bi.dot(&k0.t());
    let pq = bq.dot(&k0.t());
    let n_ic = (f * ic_samples.len()).max(1) as f64;
    let mut di = pi;
    let mut dq = pq;
    for fr in 0..f {
        for (r, &j) in ic_samples.iter().enumerate() {
            di[[fr, r]] -= branch_in[[fr, 2 * j]];
            dq[[fr, r]] -= branch_in[[fr, 2 * j + 1]];
        }
    }
    let ic = check_finite((di.mapv(|v| v * v).sum() + dq.mapv(|v| v * v).sum()) / n_ic, "IC")?;
    let s_ic = 2.0 * weights.w_ic / n_ic;
    di.mapv_inplace(|v| v * s_ic);
    dq.mapv_inplace(|v| v * s_ic);
    g_bi += &di.dot(&k0);
    g_bq += &dq.dot(&k0);
    let g_k0 = di.t().dot(&bi) + dq.t().dot(&bq);
    params.trunk.backward(&k0cache, g_k0, &mut grad.trunk);

    params.branch_i.backward(&cache_i, g_bi, &mut grad.branch_i);
    params.branch_q.backward(&cache_q, g_bq, &mut grad.branch_q);

    Ok((LossReport::new(pde, ic, weights), grad))
}

/// Per-symbol MSE on power-normalized fields: mean over the symbol's samples
/// of ((d re)^2 + (d im)^2) / 2, divided by `norm_power_w`.
pub fn symbol_mse(pred: &[Complex64], reference: &[Complex64], samples_per_symbol: usize, norm_power_w: f64) -> Vec<f64> {
    pred.chunks(samples_per_symbol)
        .zip(reference.chunks(samples_per_symbol))
        .map(|(p, r)| {
            let s: f64 = p.iter().zip(r).map(|(a, b)| (a - b).norm_sqr()).sum();
            s / (2.0 * samples_per_symbol as f64 * norm_power_w)
        })
        .collect()
}

/// SSFM frames at one distance, aligned with the input frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    pub z_km: f64,
    pub frames: Vec<Frame>,
}

/// Per-symbol MSE of the operator against SSFM over core symbols only, one
/// block of entries per snapshot, frames in input order.
pub fn validation_mse(
    params: &OperatorParams,
    u_batch: &[Frame],
    reference: &[ReferenceSnapshot],
    spec: &FramingSpec,
    norm_power_w: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for snap in reference {
        if snap.frames.len() != u_batch.len() {
            return Err(Error::GridMismatch(format!(
                "{} reference frames for {} inputs at z = {} km",
                snap.frames.len(),
                u_batch.len(),
                snap.z_km
            )));
        }
        let pred = params.predict_frames(u_batch, snap.z_km)?;
        for (p, r) in pred.iter().zip(&snap.frames) {
            if p.samples.grid != r.samples.grid || p.source_core_start != r.source_core_start {
                return Err(Error::GridMismatch("prediction and reference frames differ in grid or position".into()));
            }
            let sps = r.samples.grid.samples_per_symbol;
            let lo = spec.guard_n * sps;
            let hi = lo + spec.core_m * sps;
            out.extend(symbol_mse(&p.samples.samples[lo..hi], &r.samples.samples[lo..hi], sps, norm_power_w));
        }
    }
    Ok(out)
}
