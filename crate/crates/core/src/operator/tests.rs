use super::*;
use crate::framing::Frame;
use crate::signals::{ComplexSignal, TimeGrid};
use rand::Rng;

fn scales() -> CoordScales {
    CoordScales { z_scale_km: 80.0, t_scale_s: 1e-9, amp_scale: 0.03, amp_decay: 0.0 }
}

fn frame(m: usize, seed: u64) -> Frame {
    let g = TimeGrid { samples_per_symbol: m, symbol_rate: 1e9, n_symbols: 1 };
    let mut r = rng::stream(seed, 99);
    let samples = (0..m).map(|_| Complex64::new(r.random_range(-0.04..0.04), r.random_range(-0.04..0.04))).collect();
    Frame { samples: ComplexSignal { grid: g, samples }, source_core_start: 0 }
}

fn random_params(m: usize, branch: Vec<usize>, trunk: Vec<usize>, q: usize, seed: u64) -> OperatorParams {
    let spec = OperatorSpec { branch_hidden: branch, trunk_hidden: trunk, q_embed: q, input_dim_m: m };
    let mut p = OperatorParams::init(&spec, scales(), 1.0, seed).unwrap();
    let mut r = rng::stream(seed, 77);
    for net in [&mut p.branch_i, &mut p.branch_q, &mut p.trunk] {
        for l in &mut net.layers {
            l.b.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
    }
    p
}

fn points(n: usize, seed: u64) -> Vec<EvalPoint> {
    let mut r = rng::stream(seed, 5);
    (0..n).map(|_| EvalPoint { z_km: r.random_range(0.0..80.0), t_s: r.random_range(0.0..1e-9) }).collect()
}

/// Straightforward scalar re-implementation of the merge formula.
#[allow(clippy::needless_range_loop)]
fn brute_force(p: &OperatorParams, u: &Frame, pt: &EvalPoint) -> (f64, f64) {
    fn mlp(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, l) in net.layers.iter().enumerate() {
            let mut next = vec![0.0; l.w.nrows()];
            for o in 0..l.w.nrows() {
                let mut acc = l.b[o];
                for i in 0..l.w.ncols() {
                    acc += l.w[[o, i]] * h[i];
                }
                next[o] = if li + 1 < net.layers.len() { acc.tanh() } else { acc };
            }
            h = next;
        }
        h
    }
    let a = p.coord_scales.amp_scale;
    let x: Vec<f64> = u.samples.samples.iter().flat_map(|s| [s.re / a, s.im / a]).collect();
    let bi = mlp(&p.branch_i, &x);
    let bq = mlp(&p.branch_q, &x);
    let k = mlp(&p.trunk, &[pt.z_km / p.coord_scales.z_scale_km, pt.t_s / p.coord_scales.t_scale_s]);
    let si: f64 = bi.iter().zip(&k).map(|(b, k)| b * k).sum();
    let sq: f64 = bq.iter().zip(&k).map(|(b, k)| b * k).sum();
    (si * a, sq * a)
}

#[test]
fn q1_is_a_product_of_scalars() {
    let p = random_params(3, vec![5], vec![4], 1, 1);
    let u = frame(3, 2);
    let pts = points(7, 3);
    let (si, sq) = p.forward(&u, &pts).unwrap();
    let b = p.branch_inputs(std::slice::from_ref(&u)).unwrap();
    let bi = p.branch_i.forward(b.view())[[0, 0]];
    let bq = p.branch_q.forward(b.view())[[0, 0]];
    let k = p.trunk.forward(p.trunk_inputs(&pts).view());
    for j in 0..pts.len() {
        let a = p.coord_scales.amp_scale;
        assert!((si[j] - bi * k[[j, 0]] * a).abs() < 1e-15);
        assert!((sq[j] - bq * k[[j, 0]] * a).abs() < 1e-15);
        let (ei, eq) = brute_force(&p, &u, &pts[j]);
        assert!((si[j] - ei).abs() < 1e-14 && (sq[j] - eq).abs() < 1e-14);
    }
}

#[test]
fn zero_branches_annihilate_output() {
    let mut p = random_params(4, vec![6], vec![5, 5], 3, 4);
    for net in [&mut p.branch_i, &mut p.branch_q] {
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }
    let (si, sq) = p.forward(&frame(4, 1), &points(50, 1)).unwrap();
    assert!(si.iter().chain(&sq).all(|&v| v == 0.0));
}

#[test]
fn forward_matches_brute_force() {
    // input_dim_m = 2 -> 4 real branch inputs, widths [4, 16, 8]
    let p = random_params(2, vec![16], vec![16], 8, 5);
    for s in 0..20 {
        let u = frame(2, s);
        let pts = points(10, s);
        let (si, sq) = p.forward(&u, &pts).unwrap();
        for (j, pt) in pts.iter().enumerate() {
            let (ei, eq) = brute_force(&p, &u, pt);
            assert!((si[j] - ei).abs() < 1e-12, "{} vs {}", si[j], ei);
            assert!((sq[j] - eq).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_trunk_has_zero_derivatives() {
    let mut p = random_params(3, vec![4], vec![5], 4, 6);
    for l in &mut p.trunk.layers {
        l.w.fill(0.0);
        l.b.mapv_inplace(|b| b + 0.3);
    }
    for j in p.forward_jet(&frame(3, 1), &points(20, 2)).unwrap() {
        assert_eq!(j.ds_dz, Complex64::new(0.0, 0.0));
        assert_eq!(j.ds_dt, Complex64::new(0.0, 0.0));
        assert_eq!(j.d2s_dt2, Complex64::new(0.0, 0.0));
        assert!(j.s.norm() > 0.0);
    }
}

#[test]
fn physical_jet_applies_chain_rule() {
    for decay in [0.0, 1.7] {
        chain_rule_case(decay);
    }
}

fn chain_rule_case(decay: f64) {
    let mut p = random_params(3, vec![6], vec![6, 6], 4, 7);
    p.coord_scales.amp_decay = decay;
    let u = frame(3, 3);
    let pts = points(5, 4);
    let jets = p.forward_jet(&u, &pts).unwrap();
    let h_km = 1e-4 * 80.0;
    let h_s = 1e-4 * 1e-9;
    for (j, pt) in jets.iter().zip(&pts) {
        let f = |dz: f64, dt: f64| {
            let (i, q) = p.forward(&u, &[EvalPoint { z_km: pt.z_km + dz, t_s: pt.t_s + dt }]).unwrap();
            Complex64::new(i[0], q[0])
        };
        let fz = (f(h_km, 0.0) - f(-h_km, 0.0)) / (2.0 * h_km);
        let ft = (f(0.0, h_s) - f(0.0, -h_s)) / (2.0 * h_s);
        let ftt = (f(0.0, h_s) - f(0.0, 0.0) * 2.0 + f(0.0, -h_s)) / (h_s * h_s);
        assert!((j.ds_dz - fz).norm() <= 1e-6 * fz.norm().max(1e-6));
        assert!((j.ds_dt - ft).norm() <= 1e-6 * ft.norm().max(1e3));
        assert!((j.d2s_dt2 - ftt).norm() <= 1e-3 * ftt.norm().max(1e12));
    }
}

#[test]
fn branch_output_scaling_is_linear() {
    let p = random_params(3, vec![6], vec![6], 4, 8);
    let mut scaled = p.clone();
    let c = -2.5;
    for net in [&mut scaled.branch_i, &mut scaled.branch_q] {
        let last = net.layers.last_mut().unwrap();
        last.w.mapv_inplace(|w| w * c);
        last.b.mapv_inplace(|b| b * c);
    }
    let u = frame(3, 2);
    let pts = points(10, 9);
    for (a, b) in p.forward_jet(&u, &pts).unwrap().iter().zip(scaled.forward_jet(&u, &pts).unwrap()) {
        for (x, y) in [(a.s, b.s), (a.ds_dz, b.ds_dz), (a.ds_dt, b.ds_dt), (a.d2s_dt2, b.d2s_dt2)] {
            assert!((x * c - y).norm() <= 1e-12 * y.norm().max(1e-30));
        }
    }
}

#[test]
fn width_contract_is_enforced() {
    let mut p = random_params(3, vec![6], vec![6], 4, 9);
    assert!(p.validate().is_ok());
    p.trunk = Mlp::zeros(&MlpSpec::new(vec![2, 6, 5]).unwrap());
    assert!(matches!(p.validate(), Err(Error::DimensionMismatch(_))));
    let p = random_params(3, vec![6], vec![6], 4, 9);
    assert!(matches!(p.forward(&frame(5, 1), &points(2, 1)), Err(Error::DimensionMismatch(_))));
}

#[test]
fn evaluation_is_deterministic_and_resolution_independent() {
    let p = random_params(4, vec![8, 8], vec![8, 8], 6, 10);
    let u = frame(4, 1);
    let coarse = points(100, 3);
    let mut fine = points(900, 4);
    fine.splice(450..450, coarse.iter().copied());
    let (ci, cq) = p.forward(&u, &coarse).unwrap();
    let (fi, fq) = p.forward(&u, &fine).unwrap();
    assert_eq!(&fi[450..550], &ci[..]);
    assert_eq!(&fq[450..550], &cq[..]);
    assert_eq!(p.forward(&u, &coarse).unwrap(), (ci, cq));
}

#[test]
fn model_file_roundtrip_and_corruption() {
    let mut p = random_params(4, vec![8], vec![8, 8], 6, 11);
    p.provenance = serde_json::json!({"steps": 10, "seed": 3});
    let bytes = model_file::serialize(&p);
    assert_eq!(bytes.len(), model_file::header_len(&p) + 8 * p.n_weights());
    let back = model_file::deserialize(&bytes).unwrap();
    assert_eq!(back, p);
    assert_eq!(model_file::serialize(&back), bytes);
    assert!(matches!(model_file::deserialize(&bytes[..bytes.len() - 5]), Err(Error::Corrupt(_))));
    assert!(matches!(model_file::deserialize(&bytes[..30]), Err(Error::Corrupt(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(model_file::deserialize(&bad), Err(Error::Version { found: 9, .. })));
}

#[test]
fn predict_frames_matches_forward() {
    let p = random_params(4, vec![8], vec![8], 5, 12);
    let g = TimeGrid { samples_per_symbol: 2, symbol_rate: 1e9, n_symbols: 2 };
    let u = Frame { samples: ComplexSignal { grid: g, ..frame(4, 3).samples }, source_core_start: 0 };
    let out = p.predict_frames(std::slice::from_ref(&u), 40.0).unwrap();
    let pts: Vec<EvalPoint> = frame_sample_times(&u).into_iter().map(|t| EvalPoint { z_km: 40.0, t_s: t }).collect();
    let (si, sq) = p.forward(&u, &pts).unwrap();
    for (k, s) in out[0].samples.samples.iter().enumerate() {
        assert!((s.re - si[k]).abs() < 1e-15 && (s.im - sq[k]).abs() < 1e-15);
    }
}
