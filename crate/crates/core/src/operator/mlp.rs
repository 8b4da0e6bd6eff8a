//! Dense tanh networks with hand-written reverse mode, plus a second-order
//! forward jet in two input directions used by the trunk.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths from input to output. Hidden layers use tanh, the output is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        let spec = Self { layer_widths };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::InvalidArgument(format!("an MLP needs at least one hidden layer, got widths {:?}", self.layer_widths)));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {:?}", self.layer_widths)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_weights(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out x in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec.layer_widths.windows(2).map(|w| Dense { w: Array2::zeros((w[1], w[0])), b: Array1::zeros(w[1]) }).collect();
        Self { layers }
    }

    /// Glorot-normal weights, zero biases.
    pub fn glorot(spec: &MlpSpec, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(spec);
        for layer in &mut net.layers {
            let (out, inp) = layer.w.dim();
            let std = (2.0 / (inp + out) as f64).sqrt();
            layer.w.mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            });
        }
        net
    }

    pub fn spec(&self) -> MlpSpec {
        let mut widths = vec![self.layers[0].w.ncols()];
        widths.extend(self.layers.iter().map(|l| l.w.nrows()));
        MlpSpec { layer_widths: widths }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Weights of each layer row-major, then its biases.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Inverse of [`Mlp::write_flat`]; returns the number of values consumed.
    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[pos];
                pos += 1;
            }
        }
        pos
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&l.w.t()) + &l.b;
            if i < last {
                a.mapv_inplace(f64::tanh);
            }
            h = a;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&l.w.t()) + &l.b;
            if i < last {
                a.mapv_inplace(f64::tanh);
            }
            inputs.push(std::mem::replace(&mut h, a));
        }
        (h, MlpCache { inputs })
    }

    /// Reverse pass for [`Mlp::forward_cached`]; accumulates into `grad`.
    pub fn backward(&self, cache: &MlpCache, g_out: Array2<f64>, grad: &mut Mlp) {
        let mut g = g_out;
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grad.layers[i].w += &g.t().dot(input);
            grad.layers[i].b += &g.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let mut gi = g.dot(&self.layers[i].w);
            // input of layer i is the tanh output of layer i-1
            Zip::from(&mut gi).and(input).for_each(|g, &y| *g *= 1.0 - y * y);
            g = gi;
        }
    }

    /// Second-order jet of the network in the two input directions
    /// (column 0 = z, column 1 = t) at each row of `x` (P x 2).
    pub fn jet_forward(&self, x: ArrayView2<f64>) -> (Jet, JetCache) {
        let p = x.nrows();
        let mut dz = Array2::zeros((p, 2));
        dz.column_mut(0).fill(1.0);
        let mut dt = Array2::zeros((p, 2));
        dt.column_mut(1).fill(1.0);
        let mut cur = Jet { v: x.to_owned(), dz, dt, dtt: Array2::zeros((p, 2)) };
        let last = self.layers.len() - 1;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let wt = l.w.t();
            let a = cur.v.dot(&wt) + &l.b;
            let az = cur.dz.dot(&wt);
            let at = cur.dt.dot(&wt);
            let att = cur.dtt.dot(&wt);
            if i == last {
                layers.push(JetLayer { input: cur, act: None });
                return (Jet { v: a, dz: az, dt: at, dtt: att }, JetCache { layers });
            }
            let y = a.mapv(f64::tanh);
            let d = y.mapv(|y| 1.0 - y * y);
            let s2 = Zip::from(&y).and(&d).map_collect(|&y, &d| -2.0 * y * d);
            let s3 = Zip::from(&y).and(&d).map_collect(|&y, &d| -2.0 * d * d + 4.0 * y * y * d);
            let hz = &d * &az;
            let ht = &d * &at;
            let htt = Zip::from(&s2).and(&d).and(&at).and(&att).map_collect(|&s2, &d, &at, &att| s2 * at * at + d * att);
            let next = Jet { v: y, dz: hz, dt: ht, dtt: htt };
            layers.push(JetLayer { input: cur, act: Some(ActCache { d, s2, s3, az, at, att }) });
            cur = next;
        }
        unreachable!("MLP has at least one layer")
    }

    /// Reverse pass through [`Mlp::jet_forward`]: `g` holds the loss gradient
    /// with respect to each output channel.
    pub fn jet_backward(&self, cache: &JetCache, g: Jet, grad: &mut Mlp) {
        let mut g = g;
        for i in (0..self.layers.len()).rev() {
            let layer = &cache.layers[i];
            if let Some(act) = &layer.act {
                g = act.pull_back(g);
            }
            let inp = &layer.input;
            let gw = &mut grad.layers[i].w;
            *gw += &g.v.t().dot(&inp.v);
            *gw += &g.dz.t().dot(&inp.dz);
            *gw += &g.dt.t().dot(&inp.dt);
            *gw += &g.dtt.t().dot(&inp.dtt);
            grad.layers[i].b += &g.v.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let w = &self.layers[i].w;
            g = Jet { v: g.v.dot(w), dz: g.dz.dot(w), dt: g.dt.dot(w), dtt: g.dtt.dot(w) };
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.scaled_add(scale, &b.w);
            a.b.scaled_add(scale, &b.b);
        }
    }
}

pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

/// Value and derivatives d/dz, d/dt, d2/dt2, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub v: Array2<f64>,
    pub dz: Array2<f64>,
    pub dt: Array2<f64>,
    pub dtt: Array2<f64>,
}

impl Jet {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            v: Array2::zeros((rows, cols)),
            dz: Array2::zeros((rows, cols)),
            dt: Array2::zeros((rows, cols)),
            dtt: Array2::zeros((rows, cols)),
        }
    }
}

struct ActCache {
    /// first, second and third derivative of tanh at the pre-activation
    d: Array2<f64>,
    s2: Array2<f64>,
    s3: Array2<f64>,
    az: Array2<f64>,
    at: Array2<f64>,
    att: Array2<f64>,
}

impl ActCache {
    /// Gradients w.r.t. the activation outputs -> gradients w.r.t. the pre-activations.
    ///
    /// h = y(a), hz = y' az, ht = y' at, htt = y'' at^2 + y' att
    fn pull_back(&self, g: Jet) -> Jet {
        let Jet { v: mut ga, dz: mut gz, dt: mut gt, dtt: mut gtt } = g;
        ga *= &self.d;
        Zip::from(&mut ga).and(&gz).and(&self.az).and(&self.s2).for_each(|ga, &gz, &az, &s2| {
            *ga += gz * az * s2;
        });
        Zip::from(&mut ga).and(&gt).and(&self.at).and(&self.s2).for_each(|ga, &gt, &at, &s2| {
            *ga += gt * at * s2;
        });
        Zip::from(&mut ga).and(&gtt).and(&self.at).and(&self.att).and(&self.s2).and(&self.s3).for_each(|ga, &gtt, &at, &att, &s2, &s3| {
            *ga += gtt * (s3 * at * at + s2 * att);
        });
        Zip::from(&mut gt).and(&gtt).and(&self.d).and(&self.s2).and(&self.at).for_each(|gt, &gtt, &d, &s2, &at| {
            *gt = *gt * d + 2.0 * gtt * s2 * at;
        });
        gz *= &self.d;
        gtt *= &self.d;
        Jet { v: ga, dz: gz, dt: gt, dtt: gtt }
    }
}

struct JetLayer {
    input: Jet,
    act: Option<ActCache>,
}

pub struct JetCache {
    layers: Vec<JetLayer>,
}
