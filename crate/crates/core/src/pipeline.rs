//! End-to-end orchestration: training, validation, the cascaded link,
//! DBP, metrics and the runtime bench, plus the manifests every command
//! writes next to its outputs.
//!
//! Timing never goes into `summary.json` or the manifest, so a rerun with
//! the same seeds reproduces those files byte for byte. Wall-clock numbers
//! live in `bench.*` and `timing.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::framing::{self, Frame};
use crate::fsig;
use crate::link::{self, FrameOperator, Propagator};
use crate::operator::{model_file, OperatorParams};
use crate::physics::{self, NlseCoeffs, ReferenceSnapshot};
use crate::receiver::{self, fraction_below, MetricsReport};
use crate::rng;
use crate::signals::{dbm_to_watts, ComplexSignal};
use crate::ssfm;
use crate::training::{self, power_seed, transmit, TrainConfig, TrainRecord, Transmission};

/// `git describe` of the build, or the crate version outside a checkout.
pub const VERSION: &str = env!("FIBERLAB_VERSION");

/// Written beside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    pub config: Value,
}

impl Manifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            status: "running".into(),
            failed_stage: None,
            error: None,
            artifacts: Vec::new(),
            config,
        }
    }

    pub fn succeed(&mut self) {
        self.status = "ok".into();
    }

    pub fn fail(&mut self, stage: &str, err: &Error) {
        self.status = "failed".into();
        self.failed_stage = Some(stage.to_string());
        self.error = Some(err.to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Manifest path for an output file: `out.bin` -> `out.bin.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// File-name tag for a launch power: -3 -> `m3dBm`, 0 -> `p0dBm`.
pub fn power_label(p_dbm: f64) -> String {
    let sign = if p_dbm < 0.0 { 'm' } else { 'p' };
    format!("{sign}{}dBm", p_dbm.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub fraction_below_5e_4: f64,
    pub fraction_below_5e_3: f64,
}

impl MseStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| if v.is_empty() { f64::NAN } else { v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1] };
        Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
            median: q(0.5),
            p95: q(0.95),
            max: v.last().copied().unwrap_or(f64::NAN),
            fraction_below_5e_4: fraction_below(&v, 5e-4),
            fraction_below_5e_3: fraction_below(&v, 5e-3),
        }
    }
}

/// Held-out PINO-vs-SSFM error at one distance of the first span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub z_km: f64,
    pub mse: MseStats,
}

/// PINO link vs SSFM link after one span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanStats {
    pub span: usize,
    pub distance_km: f64,
    pub mse: MseStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverStats {
    pub evm_percent: f64,
    pub symbol_errors: usize,
    pub bit_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub power_dbm: f64,
    /// Pooled over every validation distance.
    pub validation: MseStats,
    pub validation_by_distance: Vec<DistanceStats>,
    pub link: Vec<SpanStats>,
    pub pino_after_dbp: ReceiverStats,
    pub ssfm_after_dbp: ReceiverStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub span: usize,
    pub steps: usize,
    pub first_total: f64,
    pub final_pde: f64,
    pub final_ic: f64,
    pub final_total: f64,
    pub params_digest: String,
    pub diverged: bool,
}

impl TrainSummary {
    fn of(span: usize, rec: &TrainRecord) -> Self {
        let first = rec.history.first();
        let last = rec.history.last();
        Self {
            span,
            steps: rec.history.len(),
            first_total: first.map_or(f64::NAN, |r| r.total),
            final_pde: last.map_or(f64::NAN, |r| r.pde),
            final_ic: last.map_or(f64::NAN, |r| r.ic),
            final_total: last.map_or(f64::NAN, |r| r.total),
            params_digest: rec.params_digest.clone(),
            diverged: rec.diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub profile: crate::config::Profile,
    pub version: String,
    pub coeffs: NlseCoeffs,
    pub training: Vec<TrainSummary>,
    pub powers: Vec<PowerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub distance_km: f64,
    pub spans: usize,
    pub n_symbols: usize,
    pub median_s: f64,
    pub iterations: usize,
    /// Median over this method's median at the shortest distance.
    pub normalized: f64,
    /// `normalized` divided by the span count.
    pub normalized_per_span: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str, distance_km: f64, n_symbols: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.distance_km == distance_km && r.n_symbols == n_symbols)
    }

    /// SSFM median over PINO median for the same distance and length.
    pub fn speedup(&self, distance_km: f64, n_symbols: usize) -> Option<f64> {
        Some(self.row("ssfm", distance_km, n_symbols)?.median_s / self.row("pino", distance_km, n_symbols)?.median_s)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "method,distance_km,spans,n_symbols,median_s,iterations,normalized,normalized_per_span")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6e},{},{:.6},{:.6}",
                r.method, r.distance_km, r.spans, r.n_symbols, r.median_s, r.iterations, r.normalized, r.normalized_per_span
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median time of each case. After the warm-ups, iterations run round-robin
/// over the cases so that load drifts hit every case alike.
fn time_round_robin(warmup: usize, iterations: usize, cases: &mut [Box<dyn FnMut() -> Result<()> + '_>]) -> Result<Vec<f64>> {
    for f in cases.iter_mut() {
        for _ in 0..warmup {
            f()?;
        }
    }
    let mut t = vec![Vec::with_capacity(iterations); cases.len()];
    for _ in 0..iterations {
        for (f, t) in cases.iter_mut().zip(&mut t) {
            let started = Instant::now();
            f()?;
            t.push(started.elapsed().as_secs_f64());
        }
    }
    Ok(t.into_iter().map(median).collect())
}

/// Time the SSFM and PINO links at each configured distance and length.
/// Span `k` uses `models[k]`, or the last model past the end.
pub fn bench(cfg: &ExperimentConfig, models: &[OperatorParams]) -> Result<BenchReport> {
    if models.is_empty() {
        return Err(Error::MissingModel(0));
    }
    let b = &cfg.bench;
    let mut rows: Vec<BenchRow> = Vec::new();
    for &n in &b.n_symbols {
        let sig = transmit(&cfg.transmitter, n, 0.0, power_seed(cfg.seeds.test, 0))?.signal;
        let spans: Vec<usize> = b.distances_km.iter().map(|d| ((d / cfg.fiber.length_km).round() as usize).max(1)).collect();
        let ssfm_cfgs: Vec<_> = spans
            .iter()
            .map(|&k| crate::link::LinkConfig::uniform(k, cfg.fiber, cfg.link.edfa, Propagator::Ssfm { plan: cfg.step_plan }))
            .collect();
        let pino_cfgs: Vec<_> = ssfm_cfgs
            .iter()
            .map(|c| crate::link::LinkConfig { propagator: Propagator::Pino { models: Vec::new(), framing: cfg.framing }, ..c.clone() })
            .collect();
        let ops: Vec<Vec<&dyn FrameOperator>> =
            spans.iter().map(|&k| (0..k).map(|i| &models[i.min(models.len() - 1)] as &dyn FrameOperator).collect()).collect();
        let mut cases: Vec<Box<dyn FnMut() -> Result<()> + '_>> = Vec::new();
        for i in 0..spans.len() {
            let (sig, sc, pc, ops) = (&sig, &ssfm_cfgs[i], &pino_cfgs[i], &ops[i]);
            cases.push(Box::new(move || link::run_link(sig, sc, false, cfg.seeds.link).map(|_| ())));
            cases.push(Box::new(move || link::run_link_with(sig, pc, ops, &cfg.framing, false, cfg.seeds.link).map(|_| ())));
        }
        let times = time_round_robin(b.warmup, b.iterations, &mut cases)?;
        drop(cases);
        for (i, (&d, &k)) in b.distances_km.iter().zip(&spans).enumerate() {
            let (t_ssfm, t_pino) = (times[2 * i], times[2 * i + 1]);
            log::info!("bench {n} symbols, {d} km: ssfm {t_ssfm:.4e} s, pino {t_pino:.4e} s");
            for (method, t) in [("ssfm", t_ssfm), ("pino", t_pino)] {
                rows.push(BenchRow {
                    method: method.into(),
                    distance_km: d,
                    spans: k,
                    n_symbols: n,
                    median_s: t,
                    iterations: b.iterations,
                    normalized: f64::NAN,
                    normalized_per_span: f64::NAN,
                });
            }
        }
    }
    let base: Vec<(String, usize, f64, f64)> = rows
        .iter()
        .map(|r| {
            let first = rows
                .iter()
                .filter(|o| o.method == r.method && o.n_symbols == r.n_symbols)
                .min_by(|a, b| a.distance_km.total_cmp(&b.distance_km))
                .expect("row exists");
            (r.method.clone(), r.n_symbols, first.median_s, first.spans as f64)
        })
        .collect();
    for (r, (_, _, t0, s0)) in rows.iter_mut().zip(base) {
        r.normalized = r.median_s / t0;
        r.normalized_per_span = r.normalized * s0 / r.spans as f64;
    }
    Ok(BenchReport { rows })
}

/// Stitched operator prediction of a whole sequence at `z_km`.
pub fn predict_signal(params: &OperatorParams, sig: &ComplexSignal, spec: &framing::FramingSpec, z_km: f64) -> Result<ComplexSignal> {
    framing::stitch(&params.predict_frames(&framing::split(sig, spec)?, z_km)?, spec)
}

/// Span-one training from a fresh init (or `resume`).
pub fn train_first_span(
    cfg: &ExperimentConfig,
    inputs: &[Frame],
    resume: Option<&OperatorParams>,
) -> Result<(OperatorParams, TrainRecord)> {
    let init = match resume {
        Some(p) => p.clone(),
        None => OperatorParams::init(&cfg.operator.spec(cfg.input_dim_m()), cfg.coord_scales(), cfg.operator.t_init_gain, cfg.seeds.init)?,
    };
    training::train(&init, inputs, &NlseCoeffs::from_fiber(&cfg.fiber, &cfg.coord_scales()), &cfg.training, None)
}

/// Training sequences at every launch power.
pub fn training_sequences(cfg: &ExperimentConfig) -> Result<Vec<Transmission>> {
    (0..cfg.powers_dbm.len())
        .map(|k| transmit(&cfg.transmitter, cfg.train_symbols, cfg.powers_dbm[k], power_seed(cfg.seeds.data, k)))
        .collect()
}

/// Held-out sequences at every launch power.
pub fn test_sequences(cfg: &ExperimentConfig) -> Result<Vec<Transmission>> {
    (0..cfg.powers_dbm.len())
        .map(|k| transmit(&cfg.transmitter, cfg.test_symbols, cfg.powers_dbm[k], power_seed(cfg.seeds.test, k)))
        .collect()
}

/// Everything `reproduce` produced, for callers that want more than files.
#[derive(Debug, Clone)]
pub struct ReproduceOutput {
    pub summary: Summary,
    pub bench: BenchReport,
    pub models: Vec<OperatorParams>,
    pub records: Vec<TrainRecord>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    manifest: Manifest,
    timing: serde_json::Map<String, Value>,
}

impl Run<'_> {
    fn artifact(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let started = Instant::now();
        let out = f(self);
        self.timing.insert(format!("{name}_s"), Value::from(started.elapsed().as_secs_f64()));
        if let Err(e) = &out {
            self.manifest.fail(name, e);
            // best effort: the original error matters more than a failed write
            let _ = self.manifest.write(&self.dir.join("manifest.json"));
            let _ = write_json(&self.dir.join("timing.json"), &self.timing);
        }
        out
    }
}

fn write_losses(path: &Path, rec: &TrainRecord) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    rec.write_loss_csv(&mut out)?;
    Ok(())
}

fn check_diverged(span: usize, rec: &TrainRecord) -> Result<()> {
    if rec.diverged {
        return Err(Error::Divergence(format!(
            "span {span} training diverged after {} steps (best step {})",
            rec.history.len(),
            rec.best_step
        )));
    }
    Ok(())
}

/// The full experiment: train span one, validate it against SSFM at the
/// configured fractions of the span, fine-tune spans two onward on the
/// amplified predictions of the previous span, run the PINO and SSFM links
/// on held-out data, backpropagate both, demodulate, and bench.
pub fn reproduce(cfg: &ExperimentConfig) -> Result<ReproduceOutput> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut run = Run { cfg, dir, manifest: Manifest::new("reproduce", cfg.to_value()), timing: Default::default() };
    let spec = cfg.framing;
    let fiber = cfg.fiber;
    let l = fiber.length_km;
    framing::guard_is_adequate(&spec, &fiber, cfg.transmitter.symbol_rate, cfg.transmitter.rolloff);

    let (train_seqs, test_seqs) = run.stage("data", |_| Ok((training_sequences(cfg)?, test_sequences(cfg)?)))?;

    let (first, rec1) = run.stage("train", |r| {
        let inputs: Vec<Frame> = train_seqs.iter().map(|t| framing::split(&t.signal, &spec)).collect::<Result<Vec<_>>>()?.concat();
        let (p, rec) = train_first_span(r.cfg, &inputs, None)?;
        model_file::save(&r.artifact("model_span1.bin"), &p)?;
        write_losses(&r.artifact("losses_span1.csv"), &rec)?;
        check_diverged(1, &rec)?;
        Ok((p, rec))
    })?;

    let validation = run.stage("validate", |r| {
        let zs: Vec<f64> = r.cfg.validation_fractions.iter().map(|f| f * l).collect();
        let per_power: Vec<(Vec<DistanceStats>, Vec<f64>)> = test_seqs
            .par_iter()
            .map(|t| {
                let inputs = framing::split(&t.signal, &spec)?;
                let mut stats = Vec::new();
                let mut all = Vec::new();
                for &z in &zs {
                    let reference = ssfm::propagate(&t.signal, &fiber.with_length(z), &r.cfg.step_plan)?.output;
                    let snap = ReferenceSnapshot { z_km: z, frames: framing::split(&reference, &spec)? };
                    let mse = physics::validation_mse(&first, &inputs, &[snap], &spec, dbm_to_watts(t.power_dbm))?;
                    stats.push(DistanceStats { z_km: z, mse: MseStats::of(&mse) });
                    all.extend(mse);
                }
                Ok((stats, all))
            })
            .collect::<Result<_>>()?;
        for (t, (_, all)) in test_seqs.iter().zip(&per_power) {
            let path = r.artifact(&format!("validation_{}.csv", power_label(t.power_dbm)));
            let per_z = all.len() / zs.len();
            let mut rows = String::from("z_km,symbol,mse\n");
            for (k, v) in all.iter().enumerate() {
                rows.push_str(&format!("{},{},{v:.16e}\n", zs[k / per_z], k % per_z));
            }
            std::fs::write(path, rows)?;
        }
        Ok(per_power)
    })?;

    let (models, records) = run.stage("transfer", |r| {
        let mut models = vec![first.clone()];
        let mut records = vec![rec1.clone()];
        let mut seqs: Vec<ComplexSignal> = train_seqs.iter().map(|t| t.signal.clone()).collect();
        let tcfg = TrainConfig { steps: r.cfg.transfer_steps, ..r.cfg.training.clone() };
        let coeffs = NlseCoeffs::from_fiber(&fiber, &r.cfg.coord_scales());
        for span in 2..=r.cfg.link.spans {
            let prev = models.last().expect("first span trained");
            let edfa = r.cfg.link_config(Propagator::Ssfm { plan: r.cfg.step_plan }).spans[span - 2].effective_edfa();
            seqs = seqs
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let out = predict_signal(prev, s, &spec, l)?;
                    let seed = rng::derive_seed(link::edfa_seed(r.cfg.seeds.data, span - 2), k as u64);
                    Ok(link::edfa_amplify(&out, &edfa, out.grid.sample_rate(), seed))
                })
                .collect::<Result<_>>()?;
            let inputs: Vec<Frame> = seqs.iter().map(|s| framing::split(s, &spec)).collect::<Result<Vec<_>>>()?.concat();
            let tcfg = TrainConfig { seed: rng::derive_seed(tcfg.seed, span as u64), ..tcfg.clone() };
            let (p, rec) = training::train(&training::transfer_init(prev), &inputs, &coeffs, &tcfg, None)?;
            model_file::save(&r.artifact(&format!("model_span{span}.bin")), &p)?;
            write_losses(&r.artifact(&format!("losses_span{span}.csv")), &rec)?;
            check_diverged(span, &rec)?;
            models.push(p);
            records.push(rec);
        }
        Ok((models, records))
    })?;
    let steps_s: Vec<f64> = records.iter().map(|r| r.step_seconds.iter().sum()).collect();
    run.timing.insert("train_seconds_per_span".into(), Value::from(steps_s));

    let ssfm_link = cfg.link_config(Propagator::Ssfm { plan: cfg.step_plan });
    let links = run.stage("link", |r| {
        let pino_link = crate::link::LinkConfig { propagator: Propagator::Pino { models: Vec::new(), framing: spec }, ..ssfm_link.clone() };
        let outs: Vec<(Vec<ComplexSignal>, Vec<ComplexSignal>)> = test_seqs
            .par_iter()
            .map(|t| {
                let ops: Vec<&dyn FrameOperator> = models.iter().map(|m| m as &dyn FrameOperator).collect();
                let pino = link::run_link_with(&t.signal, &pino_link, &ops, &spec, true, r.cfg.seeds.link)?;
                let ssfm = link::run_link(&t.signal, &ssfm_link, true, r.cfg.seeds.link)?;
                Ok((pino.per_span, ssfm.per_span))
            })
            .collect::<Result<_>>()?;
        let mut span_stats = Vec::new();
        for (t, (pino, ssfm)) in test_seqs.iter().zip(&outs) {
            let tag = power_label(t.power_dbm);
            fsig::write(&r.artifact(&format!("link_pino_{tag}.fsig")), pino.last().expect("spans"))?;
            fsig::write(&r.artifact(&format!("link_ssfm_{tag}.fsig")), ssfm.last().expect("spans"))?;
            let mut rows = String::from("span,symbol,mse\n");
            let mut stats = Vec::new();
            for (k, (p, s)) in pino.iter().zip(ssfm).enumerate() {
                let mse = receiver::mse_per_symbol(p, s, dbm_to_watts(t.power_dbm))?;
                for (j, v) in mse.iter().enumerate() {
                    rows.push_str(&format!("{},{j},{v:.16e}\n", k + 1));
                }
                stats.push(SpanStats { span: k + 1, distance_km: (k + 1) as f64 * l, mse: MseStats::of(&mse) });
            }
            std::fs::write(r.artifact(&format!("link_mse_{tag}.csv")), rows)?;
            span_stats.push(stats);
        }
        Ok((outs, span_stats))
    })?;

    let receivers = run.stage("dbp", |r| {
        let fmt = r.cfg.transmitter.format;
        let demods: Vec<Vec<(receiver::Demodulated, ComplexSignal)>> = test_seqs
            .par_iter()
            .zip(&links.0)
            .map(|(_, (pino, ssfm))| {
                [pino.last().expect("spans"), ssfm.last().expect("spans")]
                    .into_iter()
                    .map(|s| {
                        let back = receiver::dbp(s, &ssfm_link, &r.cfg.step_plan)?;
                        Ok((receiver::demodulate(&back, fmt, r.cfg.transmitter.rolloff)?, back))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        for ((t, d), (pino, ssfm)) in test_seqs.iter().zip(&demods).zip(&links.0) {
            let tag = power_label(t.power_dbm);
            let mse = receiver::mse_per_symbol(pino.last().expect("spans"), ssfm.last().expect("spans"), dbm_to_watts(t.power_dbm))?;
            let mut pair = Vec::new();
            for ((demod, _), method) in d.iter().zip(["pino", "ssfm"]) {
                receiver::constellation_export(
                    &r.artifact(&format!("constellation_{method}_{tag}.csv")),
                    &demod.normalized,
                    &demod.decided_points(fmt),
                    &t.symbols,
                )?;
                let report = MetricsReport::from_symbols(demod, &t.symbols, &t.bits, fmt, mse.clone())?;
                write_json(&r.artifact(&format!("metrics_{method}_{tag}.json")), &report)?;
                pair.push(ReceiverStats {
                    evm_percent: report.evm_percent,
                    symbol_errors: report.symbol_errors,
                    bit_errors: report.bit_errors,
                });
            }
            out.push(pair);
        }
        Ok(out)
    })?;

    let summary = Summary {
        profile: cfg.profile,
        version: VERSION.to_string(),
        coeffs: NlseCoeffs::from_fiber(&fiber, &cfg.coord_scales()),
        training: records.iter().enumerate().map(|(k, r)| TrainSummary::of(k + 1, r)).collect(),
        powers: test_seqs
            .iter()
            .zip(validation)
            .zip(links.1)
            .zip(receivers)
            .map(|(((t, (by_z, all)), link), rx)| PowerSummary {
                power_dbm: t.power_dbm,
                validation: MseStats::of(&all),
                validation_by_distance: by_z,
                link,
                pino_after_dbp: rx[0].clone(),
                ssfm_after_dbp: rx[1].clone(),
            })
            .collect(),
    };
    let path = run.artifact("summary.json");
    write_json(&path, &summary)?;

    let bench_report = run.stage("bench", |r| {
        let report = bench(r.cfg, &models)?;
        report.write_csv(&r.artifact("bench.csv"))?;
        write_json(&r.artifact("bench.json"), &report)?;
        Ok(report)
    })?;

    run.manifest.succeed();
    let path = run.dir.join("manifest.json");
    run.manifest.write(&path)?;
    write_json(&run.dir.join("timing.json"), &run.timing)?;
    Ok(ReproduceOutput { summary, bench: bench_report, models, records })
}

/// Files whose contents depend on wall-clock time.
pub const TIMING_ARTIFACTS: [&str; 3] = ["bench.csv", "bench.json", "timing.json"];
