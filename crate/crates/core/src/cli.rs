//! Command-line experiment runner.
//!
//! All outputs go to the output directory with fixed names, are written
//! atomically, and depend only on the configuration and seed.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::demod::{self, Dlo, WeightVector};
use crate::emu::{
    self, bank, cycle_report, feedback::Preparation, mid_circuit_feedback, resource_report, FeedbackScenario, ShotSource,
};
use crate::error::{Error, Result};
use crate::fnn;
use crate::iqsim::{Label, RawShotGenerator};
use crate::metrics::FidelityReport;
use crate::pipeline::{self, SweepRow, SweepSettings, TrainedModel};
use crate::{io, rng};

pub mod files {
    pub const IQ: &str = "iq.csv";
    pub const RAW: &str = "raw.bin";
    pub const WEIGHTS: &str = "weights.csv";
    pub const DLO_REPORT: &str = "dlo_report.json";
    pub const MODEL: &str = "model.json";
    pub const HISTORY: &str = "history.csv";
    pub const TEST: &str = "test.csv";
    pub const TRAIN_REPORT: &str = "train_report.json";
    pub const BANK: &str = "bank.txt";
    pub const FIDELITY: &str = "fidelity.json";
    pub const EMULATION: &str = "emulation.json";
    pub const CYCLES: &str = "cycles.json";
    pub const RESOURCES: &str = "resources.json";
    pub const FEEDBACK: &str = "feedback.json";
    pub const SWEEP: &str = "sweep.csv";
    pub const SUMMARY: &str = "summary.txt";
}

#[derive(Debug, Parser)]
#[command(name = "rtdisc", version, about = "Qubit readout discrimination: simulation, training and fixed-point emulation")]
pub struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled accumulated IQ dataset.
    Simulate {
        /// Shots per state.
        #[arg(long)]
        shots: Option<usize>,
        /// Demodulate with a weight file instead of the square DLO.
        #[arg(long, value_name = "PATH")]
        weights: Option<PathBuf>,
        /// Also write the raw ADC samples.
        #[arg(long)]
        raw: bool,
    },
    /// Calibrate weighted-DLO weights and compare against the square DLO.
    OptimizeDlo {
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Train the network on the simulated dataset.
    Train {
        /// Dataset to train on; defaults to the simulate output.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Quantize the trained model into the parameter bank.
    Quantize {
        #[arg(long)]
        qubit: Option<u8>,
    },
    /// Replay the test set through the fixed-point pipeline.
    Emulate {
        #[arg(long)]
        qubit: Option<u8>,
        #[arg(long)]
        feedback_trials: Option<usize>,
    },
    /// Compare baseline and full system over readout times.
    Sweep {
        /// Readout times in microseconds, comma separated.
        #[arg(long, value_delimiter = ',')]
        readout_us: Option<Vec<f64>>,
        /// Shots per state at each readout time.
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Render every report in the output directory as one text table.
    Report,
}

/// Parses arguments, runs, prints, and maps errors to exit codes
/// (0 success, 1 domain error, 2 usage or configuration error).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Config(format!("{} not found; run `rtdisc {producer}` first", p.display())))
        }
    }
}

/// Runs one command and returns the text to print.
pub fn run(cli: &Cli) -> Result<String> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ctx = Ctx { cfg, out };
    match &cli.command {
        Command::Simulate { shots, weights, raw } => simulate(&ctx, *shots, weights.as_deref(), *raw),
        Command::OptimizeDlo { alpha } => optimize_dlo(&ctx, *alpha),
        Command::Train { data } => train(&ctx, data.as_deref()),
        Command::Quantize { qubit } => quantize(&ctx, *qubit),
        Command::Emulate { qubit, feedback_trials } => emulate(&ctx, *qubit, *feedback_trials),
        Command::Sweep { readout_us, shots } => sweep(&ctx, readout_us.clone(), *shots),
        Command::Report => report(&ctx),
    }
}

fn read_weights(path: &Path) -> Result<WeightVector> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    WeightVector::read_csv(std::io::BufReader::new(f))
}

fn simulate(ctx: &Ctx, shots: Option<usize>, weights: Option<&Path>, raw: bool) -> Result<String> {
    let n = shots.unwrap_or(ctx.cfg.shots_per_state);
    if n == 0 {
        return Err(Error::Config("--shots must be positive".into()));
    }
    let sim = &ctx.cfg.sim;
    let w = weights.map(read_weights).transpose()?;
    let data = pipeline::simulate_dataset(sim, w.as_ref(), n)?;
    io::write_iq_csv(&ctx.path(files::IQ), &data)?;
    let mut msg = format!("simulated {n} ground + {n} excited shots -> {}\n", ctx.path(files::IQ).display());
    if raw {
        let gen = RawShotGenerator::new(sim)?;
        let mut bytes = Vec::new();
        for label in Label::BOTH {
            for k in 0..n {
                let stream = (demod::SALT_EVALUATION << 40) | rng::shot_stream(k as u64, label.as_u8());
                let shot = gen.sample(label, &mut rng::stream(sim.seed, stream));
                bytes.extend(io::raw_bytes(std::slice::from_ref(&shot)));
            }
        }
        io::write_atomic(&ctx.path(files::RAW), &bytes)?;
        msg.push_str(&format!("raw samples -> {}\n", ctx.path(files::RAW).display()));
    }
    Ok(msg)
}

fn optimize_dlo(ctx: &Ctx, alpha: Option<f64>) -> Result<String> {
    let alpha = alpha.unwrap_or(ctx.cfg.ema_alpha);
    let sim = &ctx.cfg.sim;
    let gen = RawShotGenerator::new(sim)?;
    let dlo = Dlo::for_config(sim);
    let cal = demod::calibrate(&gen, &dlo, alpha, ctx.cfg.calibration_shots)?;
    let report = demod::compare_dlo(&gen, &dlo, &cal, alpha, ctx.cfg.calibration_shots, ctx.cfg.eval_shots_per_state)?;
    let mut csv = Vec::new();
    cal.weights
        .write_csv(&mut csv)
        .map_err(|e| Error::io(ctx.path(files::WEIGHTS), e))?;
    io::write_atomic(&ctx.path(files::WEIGHTS), &csv)?;
    io::write_json(&ctx.path(files::DLO_REPORT), &report)?;
    Ok(format!(
        "mahalanobis distance: square {:.4}, weighted {:.4} ({:+.2}%)\nfidelity: square {:.4}, weighted {:.4}\n",
        report.distance_square,
        report.distance_weighted,
        100.0 * (report.distance_weighted / report.distance_square - 1.0),
        report.fidelity_square,
        report.fidelity_weighted
    ))
}

#[derive(Serialize)]
struct TrainReport {
    train_shots: usize,
    test_shots: usize,
    heralded_out: usize,
    epochs_run: usize,
    final_train_loss: f64,
    fnn: FidelityReport,
    gaussian: FidelityReport,
}

fn train(ctx: &Ctx, data: Option<&Path>) -> Result<String> {
    let path = match data {
        Some(p) => p.to_path_buf(),
        None => ctx.require(files::IQ, "simulate")?,
    };
    let shots = io::load_iq_csv(&path)?;
    let (train, test) = fnn::split_dataset(&shots, &ctx.cfg.train)?;
    let model = pipeline::train_fnn(&train, &test, &ctx.cfg.architecture, &ctx.cfg.train)?;
    let fnn_fid = pipeline::float_fidelity(&model, &test)?;
    let gauss = pipeline::gaussian_baseline(&train, &test)?;

    io::write_json(&ctx.path(files::MODEL), &model)?;
    io::write_iq_csv(&ctx.path(files::TEST), &test)?;
    let mut hist = Vec::new();
    fnn::write_history_csv(&model.history, &mut hist).map_err(|e| Error::io(ctx.path(files::HISTORY), e))?;
    io::write_atomic(&ctx.path(files::HISTORY), &hist)?;
    let report = TrainReport {
        train_shots: train.len(),
        test_shots: test.len(),
        heralded_out: model.heralded_out,
        epochs_run: model.history.len(),
        final_train_loss: model.history.last().map_or(f64::NAN, |r| r.train_loss),
        fnn: fnn_fid,
        gaussian: gauss,
    };
    io::write_json(&ctx.path(files::TRAIN_REPORT), &report)?;
    Ok(format!(
        "trained {} epochs on {} shots ({} cut as outliers); test fidelity fnn {:.4}, gaussian {:.4}\n",
        report.epochs_run, report.train_shots, report.heralded_out, fnn_fid.avg, gauss.avg
    ))
}

fn load_model(ctx: &Ctx) -> Result<TrainedModel> {
    io::read_json(&ctx.require(files::MODEL, "train")?)
}

fn quantize(ctx: &Ctx, qubit: Option<u8>) -> Result<String> {
    let qubit = qubit.unwrap_or(ctx.cfg.qubit_id);
    let model = load_model(ctx)?;
    let q = emu::quantize(&model.params, &model.scaler, &ctx.cfg.lut)?.with_qubit(qubit)?;
    let path = ctx.path(files::BANK);
    let mut models = if path.exists() { bank::bank_load_all(&path)? } else { Vec::new() };
    models.retain(|m| m.qubit_id != qubit);
    models.push(q);
    models.sort_by_key(|m| m.qubit_id);
    bank::bank_store(&models, &path)?;
    Ok(format!(
        "stored qubit {qubit} in {} ({} model{} in bank)\n",
        path.display(),
        models.len(),
        if models.len() == 1 { "" } else { "s" }
    ))
}

#[derive(Serialize)]
struct FeedbackReport {
    trials: usize,
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
    counts: [[u64; 2]; 2],
}

fn emulate(ctx: &Ctx, qubit: Option<u8>, trials: Option<usize>) -> Result<String> {
    let qubit = qubit.unwrap_or(ctx.cfg.qubit_id);
    let model = bank::bank_load(&ctx.require(files::BANK, "quantize")?, qubit)?;
    let test = io::load_iq_csv(&ctx.require(files::TEST, "train")?)?;
    let float = load_model(ctx).ok();
    let em = pipeline::emulate(&model, float.as_ref(), &test)?;
    let cycles = cycle_report(&model.arch, &ctx.cfg.cycle)?;
    let resources = resource_report(&model.arch, &ctx.cfg.resource)?;

    let (ground, excited): (Vec<_>, Vec<_>) = test.iter().partition(|s| s.label == Label::Ground);
    let scenario = FeedbackScenario {
        trials: trials.unwrap_or(ctx.cfg.feedback_trials),
        seed: ctx.cfg.seed,
        preparation: Preparation::Random,
    };
    let h = mid_circuit_feedback(&model, &ShotSource::Replay { ground: &ground, excited: &excited }, &scenario)?;
    let fb = FeedbackReport {
        trials: scenario.trials,
        p00: h.prob(Label::Ground, Label::Ground),
        p01: h.prob(Label::Ground, Label::Excited),
        p10: h.prob(Label::Excited, Label::Ground),
        p11: h.prob(Label::Excited, Label::Excited),
        counts: h.counts,
    };

    io::write_json(&ctx.path(files::FIDELITY), &em.fidelity)?;
    io::write_json(&ctx.path(files::EMULATION), &em)?;
    io::write_json(&ctx.path(files::CYCLES), &cycles)?;
    io::write_json(&ctx.path(files::RESOURCES), &resources)?;
    io::write_json(&ctx.path(files::FEEDBACK), &fb)?;
    let mut msg = format!(
        "fixed-point fidelity {:.4} (p00 {:.4}, p11 {:.4}) on {} shots, {} with overflow\n",
        em.fidelity.avg, em.fidelity.p00, em.fidelity.p11, em.shots, em.overflow_shots
    );
    if let Some(a) = em.label_agreement {
        msg.push_str(&format!("float/fixed label agreement {:.5}\n", a));
    }
    msg.push_str(&format!(
        "latency {} cycles = {} ns; {} DSP, {} LUT, {} FF\nfeedback P(00)+P(11) = {:.4}\n",
        cycles.total_cycles,
        cycles.total_ns,
        resources.dsp_count,
        resources.lut_estimate,
        resources.ff_estimate,
        fb.p00 + fb.p11
    ));
    Ok(msg)
}

fn sweep(ctx: &Ctx, readout_us: Option<Vec<f64>>, shots: Option<usize>) -> Result<String> {
    let times = readout_us.unwrap_or_else(|| ctx.cfg.sweep_readout_us.clone());
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Config("readout times must be positive".into()));
    }
    let c = &ctx.cfg;
    let settings = SweepSettings {
        sim: c.sim.clone(),
        baseline_ramp_fraction: c.baseline_ramp_fraction,
        shots_per_state: shots.unwrap_or(c.shots_per_state),
        calibration_shots: c.calibration_shots,
        ema_alpha: c.ema_alpha,
        arch: c.architecture.clone(),
        train: c.train.clone(),
        lut: c.lut,
    };
    let rows = times
        .iter()
        .map(|&t| pipeline::sweep_point(&settings, t))
        .collect::<Result<Vec<SweepRow>>>()?;
    let mut csv = format!("{}\n", SweepRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&format!("{},{:.6},{:.6}\n", r.readout_time, r.baseline_avg, r.system_avg));
    }
    io::write_atomic(&ctx.path(files::SWEEP), csv.as_bytes())?;
    Ok(csv)
}

fn flatten(prefix: &str, v: &serde_json::Value, rows: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                flatten(&format!("{prefix}.{k}"), x, rows);
            }
        }
        serde_json::Value::Array(a) if a.iter().any(|x| x.is_object() || x.is_array()) => {
            for (k, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{k}]"), x, rows);
            }
        }
        serde_json::Value::Number(n) => {
            let s = match n.as_f64() {
                Some(f) if !n.is_i64() && !n.is_u64() => format!("{f:.6}"),
                _ => n.to_string(),
            };
            rows.push((prefix.to_string(), s));
        }
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn report(ctx: &Ctx) -> Result<String> {
    let mut rows = Vec::new();
    for name in [
        files::DLO_REPORT,
        files::TRAIN_REPORT,
        files::FIDELITY,
        files::EMULATION,
        files::CYCLES,
        files::RESOURCES,
        files::FEEDBACK,
    ] {
        let p = ctx.path(name);
        if p.exists() {
            let v: serde_json::Value = io::read_json(&p)?;
            flatten(name.trim_end_matches(".json"), &v, &mut rows);
        }
    }
    let sweep = ctx.path(files::SWEEP);
    if sweep.exists() {
        let mut r = csv::Reader::from_path(&sweep)?;
        let header = r.headers()?.clone();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            for (h, v) in header.iter().zip(rec.iter()) {
                rows.push((format!("sweep[{k}].{h}"), v.to_string()));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no reports found in {}", ctx.out.display())));
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut text = format!("{:<width$}  value\n{}\n", "quantity", "-".repeat(width + 8));
    for (k, v) in &rows {
        text.push_str(&format!("{k:<width$}  {v}\n"));
    }
    io::write_atomic(&ctx.path(files::SUMMARY), text.as_bytes())?;
    Ok(text)
}
