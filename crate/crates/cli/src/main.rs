use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fiberlab::config::{ExperimentConfig, Profile};
use fiberlab::link::{self, Propagator};
use fiberlab::operator::model_file;
use fiberlab::pipeline::{self, manifest_path, Manifest};
use fiberlab::receiver::{self, MetricsReport};
use fiberlab::signals::{self, mean_power};
use fiberlab::training::{power_seed, transmit};
use fiberlab::{fsig, ssfm, Error, Result};

#[derive(Parser)]
#[command(name = "fiberlab", version = pipeline::VERSION, about = "SSFM oracle and physics-informed operator tools for fiber links")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; keys not given keep the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set training.steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Base profile when the config file does not name one.
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PropagatorArg {
    Ssfm,
    Pino,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a transmitted sequence (FSIG).
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Noise-free copy of the same sequence.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        power_dbm: f64,
        /// Defaults to the config's test length.
        #[arg(long)]
        symbols: Option<usize>,
        /// Defaults to the config's test seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a `t_s,re,im` CSV next to the output.
        #[arg(long)]
        csv: bool,
    },
    /// Propagate one fiber span with the SSFM.
    Propagate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the configured span length.
        #[arg(long)]
        length_km: Option<f64>,
    },
    /// Train the span-one operator on the configured training set.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        losses: Option<PathBuf>,
        /// Start from an existing model instead of a fresh init.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict a sequence at a distance with a trained operator.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the configured span length.
        #[arg(long)]
        z_km: Option<f64>,
    },
    /// Run the multi-span link with EDFAs.
    Link {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PropagatorArg::Ssfm)]
        propagator: PropagatorArg,
        /// One model per span, comma separated.
        #[arg(long, value_delimiter = ',')]
        models: Vec<PathBuf>,
    },
    /// Digital backpropagation through the configured link.
    Dbp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Demodulate and score a received sequence.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        /// Noise-free transmitted sequence; its symbols are the ground truth.
        #[arg(long)]
        truth: PathBuf,
        /// Field the per-symbol MSE is measured against (default: truth).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        constellation: Option<PathBuf>,
        #[arg(long)]
        mse_csv: Option<PathBuf>,
    },
    /// Time the SSFM and PINO links against distance.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        /// CSV path; the JSON report is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, validate, link, DBP, metrics and bench in one go.
    Reproduce {
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Propagate { .. } => "propagate",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Link { .. } => "link",
            Command::Dbp { .. } => "dbp",
            Command::Metrics { .. } => "metrics",
            Command::Bench { .. } => "bench",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

fn read_signal(path: &Path) -> Result<signals::ComplexSignal> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fsig::read(path)
}

fn load_model(path: &Path) -> Result<fiberlab::operator::OperatorParams> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    model_file::load(path)
}

/// Runs one command and returns the path its manifest belongs to along with
/// the files it wrote.
fn run(cmd: &Command, cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<PathBuf>)> {
    match cmd {
        Command::Gen { out, clean, power_dbm, symbols, seed, csv } => {
            let t = transmit(
                &cfg.transmitter,
                symbols.unwrap_or(cfg.test_symbols),
                *power_dbm,
                seed.unwrap_or_else(|| power_seed(cfg.seeds.test, 0)),
            )?;
            let mut written = vec![out.clone()];
            fsig::write(out, &t.signal)?;
            if let Some(c) = clean {
                fsig::write(c, &t.clean)?;
                written.push(c.clone());
            }
            if *csv {
                let p = out.with_extension("csv");
                fsig::write_csv(&p, &t.signal)?;
                written.push(p);
            }
            Ok((out.clone(), written))
        }
        Command::Propagate { input, out, length_km } => {
            let sig = read_signal(input)?;
            let fiber = cfg.fiber.with_length(length_km.unwrap_or(cfg.fiber.length_km));
            let res = ssfm::propagate(&sig, &fiber, &cfg.step_plan)?;
            fsig::write(out, &res.output)?;
            Ok((out.clone(), vec![out.clone()]))
        }
        Command::Train { out, losses, resume } => {
            let resume = resume.as_deref().map(load_model).transpose()?;
            let seqs = pipeline::training_sequences(cfg)?;
            let mut inputs = Vec::new();
            for t in &seqs {
                inputs.extend(fiberlab::framing::split(&t.signal, &cfg.framing)?);
            }
            let (params, rec) = pipeline::train_first_span(cfg, &inputs, resume.as_ref())?;
            model_file::save(out, &params)?;
            let mut written = vec![out.clone()];
            if let Some(l) = losses {
                let mut f = std::io::BufWriter::new(std::fs::File::create(l)?);
                rec.write_loss_csv(&mut f)?;
                written.push(l.clone());
            }
            if rec.diverged {
                return Err(Error::Divergence(format!("training diverged; best parameters (step {}) saved", rec.best_step)));
            }
            Ok((out.clone(), written))
        }
        Command::Predict { model, input, out, z_km } => {
            let params = load_model(model)?;
            let sig = read_signal(input)?;
            let pred = pipeline::predict_signal(&params, &sig, &cfg.framing, z_km.unwrap_or(cfg.fiber.length_km))?;
            fsig::write(out, &pred)?;
            Ok((out.clone(), vec![out.clone()]))
        }
        Command::Link { input, out, propagator, models } => {
            let sig = read_signal(input)?;
            let prop = match propagator {
                PropagatorArg::Ssfm => Propagator::Ssfm { plan: cfg.step_plan },
                PropagatorArg::Pino => Propagator::Pino { models: models.clone(), framing: cfg.framing },
            };
            let res = link::run_link(&sig, &cfg.link_config(prop), false, cfg.seeds.link)?;
            fsig::write(out, res.output().expect("at least one span"))?;
            Ok((out.clone(), vec![out.clone()]))
        }
        Command::Dbp { input, out } => {
            let sig = read_signal(input)?;
            let back = receiver::dbp(&sig, &cfg.link_config(Propagator::Ssfm { plan: cfg.step_plan }), &cfg.step_plan)?;
            fsig::write(out, &back)?;
            Ok((out.clone(), vec![out.clone()]))
        }
        Command::Metrics { input, truth, reference, out, constellation, mse_csv } => {
            let fmt = cfg.transmitter.format;
            let rolloff = cfg.transmitter.rolloff;
            let rx = read_signal(input)?;
            let tx = read_signal(truth)?;
            let reference = match reference {
                Some(r) => read_signal(r)?,
                None => tx.clone(),
            };
            let sent = receiver::demodulate(&tx, fmt, rolloff)?;
            let sent_points = sent.decided_points(fmt);
            let sent_bits = signals::indices_to_bits(&sent.decisions, fmt);
            let demod = receiver::demodulate(&rx, fmt, rolloff)?;
            let mse = receiver::mse_per_symbol(&rx, &reference, mean_power(&reference))?;
            let mut written = vec![out.clone()];
            if let Some(p) = mse_csv {
                receiver::write_mse_csv(p, &mse)?;
                written.push(p.clone());
            }
            if let Some(p) = constellation {
                receiver::constellation_export(p, &demod.normalized, &demod.decided_points(fmt), &sent_points)?;
                written.push(p.clone());
            }
            let report = MetricsReport::from_symbols(&demod, &sent_points, &sent_bits, fmt, mse)?;
            pipeline::write_json(out, &report)?;
            println!(
                "evm {:.3} %, symbol errors {}/{}, fraction of MSE < 5e-4: {:.4}",
                report.evm_percent,
                report.symbol_errors,
                report.n_symbols,
                report.fraction_below(5e-4)
            );
            Ok((out.clone(), written))
        }
        Command::Bench { models, out } => {
            let params = models.iter().map(|m| load_model(m)).collect::<Result<Vec<_>>>()?;
            let report = pipeline::bench(cfg, &params)?;
            report.write_csv(out)?;
            let json = out.with_extension("json");
            pipeline::write_json(&json, &report)?;
            for r in &report.rows {
                println!(
                    "{:5} {:6.0} km {:7} symbols  {:.4e} s  normalized {:.3}",
                    r.method, r.distance_km, r.n_symbols, r.median_s, r.normalized
                );
            }
            Ok((out.clone(), vec![out.clone(), json]))
        }
        Command::Reproduce { .. } => {
            let res = pipeline::reproduce(cfg)?;
            for p in &res.summary.powers {
                println!(
                    "{:+} dBm: validation MSE < 5e-3 for {:.3} of symbols, < 5e-4 for {:.3}; EVM after DBP {:.2} % (pino) vs {:.2} % (ssfm)",
                    p.power_dbm,
                    p.validation.fraction_below_5e_3,
                    p.validation.fraction_below_5e_4,
                    p.pino_after_dbp.evm_percent,
                    p.ssfm_after_dbp.evm_percent
                );
            }
            let far = cfg.bench.distances_km.iter().copied().fold(f64::NAN, f64::max);
            if let Some(s) = cfg.bench.n_symbols.first().and_then(|&n| res.bench.speedup(far, n)) {
                println!("speedup at {far} km: {s:.1}x");
            }
            // reproduce writes its own manifest
            Ok((PathBuf::new(), Vec::new()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if let Some(n) = std::env::var("FIBERLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("FIBERLAB_THREADS ignored: {e}");
        }
    }

    let mut overrides = cli.common.overrides.clone();
    if let Command::Reproduce { out: Some(dir) } = &cli.command {
        overrides.push(format!("output_dir={}", serde_json::Value::from(dir.display().to_string())));
    }
    let cfg = match ExperimentConfig::resolve(cli.common.profile.into(), cli.common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };

    let mut manifest = Manifest::new(cli.command.name(), cfg.to_value());
    let result = run(&cli.command, &cfg);
    let anchor = match (&result, &cli.command) {
        (_, Command::Reproduce { .. }) => None,
        (Ok((p, _)), _) => Some(p.clone()),
        (Err(_), cmd) => output_of(cmd),
    };
    match &result {
        Ok((_, written)) => {
            manifest.artifacts = written.iter().map(|p| p.display().to_string()).collect();
            manifest.succeed();
        }
        Err(e) => manifest.fail(cli.command.name(), e),
    }
    if let Some(anchor) = anchor {
        if let Err(e) = manifest.write(&manifest_path(&anchor)) {
            log::warn!("could not write manifest: {e}");
        }
    }
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn output_of(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::Gen { out, .. }
        | Command::Propagate { out, .. }
        | Command::Train { out, .. }
        | Command::Predict { out, .. }
        | Command::Link { out, .. }
        | Command::Dbp { out, .. }
        | Command::Metrics { out, .. }
        | Command::Bench { out, .. } => Some(out.clone()),
        Command::Reproduce { .. } => None,
    }
}
