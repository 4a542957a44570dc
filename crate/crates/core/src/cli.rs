//! Command-line front end: `generate`, `calibrate`, `evaluate`, `compare`.
//!
//! Exit codes: 0 success, 1 divergence or no convergence, 2 bad input or I/O.
//! Inputs are read and checked before any output file is created.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibration::{
    calibrate_with_observer, evaluate, CalibrationConfig, CalibrationReport, Metrics, StopReason,
    TraceEntry,
};
use crate::datagen::{
    generate_dataset, perturb_params, sample_configs, split_count, NoiseSpec, PerturbationSpec,
    DEFAULT_NOISE_SIGMA_MM, RNG_ALGORITHM,
};
use crate::error::{Error, Result};
use crate::io::{
    param_order, parse_mask, read_measurement_set, read_params_file, read_robot,
    records_from_params, write_json, write_measurements, MeasurementRow, NoiseRecord,
    PerturbationRecord, ReportFile, Robot, TraceWriter, TruthFile,
};
use crate::kinematics::JointConfig;
use crate::optimizer::Variant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "robocal",
    version,
    about = "D-H calibration of 6R robots from draw-wire lengths"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic train/holdout split and its ground truth.
    Generate(GenerateArgs),
    /// Identify D-H deviations from a measurement file.
    Calibrate(CalibrateArgs),
    /// Metrics of the nominal and identified parameters on held-out data.
    Evaluate(EvaluateArgs),
    /// Run the Adam-family variants on the same data.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Robot description (JSON).
    #[arg(long)]
    pub robot: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Fraction of rows written to the training file; the first rows are used.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 0.5)]
    pub angle_bound_deg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub length_bound_mm: f64,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA_MM)]
    pub noise_sigma_mm: f64,
    /// Perturbation seed; joint samples use seed+1 and noise seed+2.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes `<prefix>_train.csv`, `<prefix>_holdout.csv`, `<prefix>_truth.json`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

/// Optimiser and loop settings shared by `calibrate` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub beta3: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol_rel: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 24 characters of 0/1 in flatten order (alpha1..6, a1..6, d1..6, theta1..6); 0 freezes.
    #[arg(long)]
    pub mask: Option<String>,
    /// Weight angle columns by 1000 mm.
    #[arg(long)]
    pub column_scaling: bool,
    /// Worker threads for per-record rows; 1 runs sequentially, 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Write `wall_time_s` as null so repeated runs give identical files.
    #[arg(long)]
    pub no_timing: bool,
}

impl TuningArgs {
    pub fn config(&self) -> Result<CalibrationConfig> {
        let mut c = CalibrationConfig::default();
        let o = &mut c.optimizer;
        for (slot, v) in [
            (&mut o.eta, self.eta),
            (&mut o.beta1, self.beta1),
            (&mut o.beta2, self.beta2),
            (&mut o.beta3, self.beta3),
            (&mut o.sigma, self.sigma),
            (&mut o.zeta, self.zeta),
            (&mut c.tol_rel, self.tol_rel),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(n) = self.max_iters {
            c.max_iters = n;
        }
        if let Some(m) = &self.mask {
            c.param_mask = parse_mask(m)?;
        }
        if self.column_scaling {
            c.column_scaling = Some(CalibrationConfig::default_column_scaling());
        }
        c.seed = self.seed;
        c.parallel = self.threads != 1;
        c.validate()?;
        Ok(c)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub robot: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    /// Optional held-out measurements, reported alongside the fit.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration `iter,rmse_mm,mean_mm,max_mm`, written as the run proceeds.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub robot: PathBuf,
    /// Calibration report, truth sidecar or robot file; omit for the nominal row only.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub holdout: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub robot: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Comma-separated subset of adam, adamw, adamod, adamodw.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "adam,adamw,adamod,adamodw"
    )]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

/// Runs one command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a, out),
        Command::Calibrate(a) => cmd_calibrate(&a, out, err),
        Command::Evaluate(a) => cmd_evaluate(&a, out).map(|_| EXIT_OK),
        Command::Compare(a) => cmd_compare(&a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Divergence { .. } => EXIT_NOT_CONVERGED,
                _ => EXIT_INPUT,
            }
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<i32> {
    let robot = read_robot(&a.robot)?;
    let n_train = split_count(a.n, a.split)?;
    let perturbation = PerturbationSpec {
        angle_bound: a.angle_bound_deg.to_radians(),
        length_bound: a.length_bound_mm,
        seed: a.seed,
    };
    let sample_seed = a.seed.wrapping_add(1);
    let noise = NoiseSpec {
        sigma: a.noise_sigma_mm,
        seed: a.seed.wrapping_add(2),
    };

    let truth = perturb_params(&robot.params, &perturbation)?;
    // the file stores degrees, so the degree values are the ground truth for q
    let q_deg: Vec<[f64; 6]> = sample_configs(&robot.joint_limits, a.n, sample_seed)?
        .iter()
        .map(JointConfig::to_degrees)
        .collect();
    let configs = q_deg
        .iter()
        .map(|d| JointConfig::from_degrees(*d))
        .collect::<Result<Vec<_>>>()?;
    let data = generate_dataset(&truth, &robot.rig, &configs, &noise)?;
    let rows: Vec<MeasurementRow> = q_deg
        .iter()
        .zip(data.records())
        .map(|(d, m)| MeasurementRow {
            q_deg: *d,
            cable_mm: m.c_measured,
        })
        .collect();

    let sidecar = TruthFile {
        rng: RNG_ALGORITHM.into(),
        robot: robot.name.clone(),
        param_order: param_order(),
        true_params: truth.flatten(),
        true_links: records_from_params(&truth),
        true_delta: truth.deviation_from(&robot.params),
        perturbation: PerturbationRecord {
            angle_bound_deg: a.angle_bound_deg,
            length_bound_mm: a.length_bound_mm,
            seed: perturbation.seed,
        },
        noise: NoiseRecord {
            sigma_mm: noise.sigma,
            seed: noise.seed,
        },
        sample_seed,
        n: a.n,
        split: a.split,
        train_rows: n_train,
        holdout_rows: a.n - n_train,
    };
    let train_path = with_suffix(&a.out_prefix, "_train.csv");
    let holdout_path = with_suffix(&a.out_prefix, "_holdout.csv");
    let truth_path = with_suffix(&a.out_prefix, "_truth.json");
    write_measurements(&train_path, &rows[..n_train])?;
    write_measurements(&holdout_path, &rows[n_train..])?;
    write_json(&truth_path, &sidecar)?;
    let _ = writeln!(
        out,
        "wrote {} train and {} holdout rows",
        n_train,
        a.n - n_train
    );
    Ok(EXIT_OK)
}

/// Runs `calibrate` on the requested pool, streaming the trace if asked.
fn run_calibration(
    robot: &Robot,
    data: &crate::calibration::MeasurementSet,
    config: &CalibrationConfig,
    tuning: &TuningArgs,
    trace: Option<&Path>,
) -> Result<std::result::Result<CalibrationReport, CalibrationReport>> {
    let mut writer = trace.map(TraceWriter::create).transpose()?;
    let mut write_error = None;
    let observer = |e: &TraceEntry| {
        if let Some(w) = writer.as_mut() {
            if let Err(err) = w.push(e) {
                write_error.get_or_insert(err);
            }
        }
    };
    let result = if config.parallel {
        tuning
            .pool()?
            .install(|| calibrate_with_observer(&robot.params, data, config, observer))
    } else {
        calibrate_with_observer(&robot.params, data, config, observer)
    };
    if let Some(e) = write_error {
        return Err(e);
    }
    match result {
        Ok(r) => Ok(Ok(r)),
        Err(Error::Divergence { report, .. }) => Ok(Err(*report)),
        Err(e) => Err(e),
    }
}

pub fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let robot = read_robot(&a.robot)?;
    let train = read_measurement_set(&a.train, &robot.rig)?;
    let holdout = a
        .holdout
        .as_ref()
        .map(|p| read_measurement_set(p, &robot.rig))
        .transpose()?;
    let config = a.tuning.config()?;

    let (mut report, diverged) =
        match run_calibration(&robot, &train, &config, &a.tuning, a.trace_csv.as_deref())? {
            Ok(r) => (r, false),
            Err(r) => (r, true),
        };
    if let Some(h) = &holdout {
        report.holdout_metrics = Some(evaluate(&report.final_params, h)?);
    }
    write_json(
        &a.out,
        &ReportFile::new(&robot, &config, &report, !a.tuning.no_timing),
    )?;

    if let Some(m) = report.final_metrics() {
        let _ = writeln!(out, "{m}");
    }
    if diverged {
        let _ = writeln!(
            err,
            "error: calibration diverged after {} iterations",
            report.iterations_run
        );
        return Ok(EXIT_NOT_CONVERGED);
    }
    if !report.converged {
        let _ = writeln!(
            err,
            "warning: no convergence within {} iterations",
            config.max_iters
        );
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationOutput {
    pub before: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub after: Option<Metrics>,
}

pub fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<EvaluationOutput> {
    let robot = read_robot(&a.robot)?;
    let params = a
        .params
        .as_ref()
        .map(|p| read_params_file(p, &robot.params))
        .transpose()?;
    let holdout = read_measurement_set(&a.holdout, &robot.rig)?;
    let result = EvaluationOutput {
        before: evaluate(&robot.params, &holdout)?,
        after: params.map(|p| evaluate(&p, &holdout)).transpose()?,
    };
    let _ = writeln!(out, "before {}", result.before);
    if let Some(m) = &result.after {
        let _ = writeln!(out, "after  {m}");
    }
    if let Some(path) = &a.out {
        write_json(path, &result)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations_run: usize,
    /// Iterations until the stopping test fired; null when it never did.
    pub iterations_to_converge: Option<usize>,
    #[serde(rename = "final")]
    pub final_metrics: Option<Metrics>,
    pub holdout: Option<Metrics>,
    pub final_delta_norm: f64,
    pub wall_time_s: Option<f64>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonFile {
    pub robot: String,
    pub variants: Vec<VariantResult>,
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let robot = read_robot(&a.robot)?;
    let train = read_measurement_set(&a.train, &robot.rig)?;
    let holdout = a
        .holdout
        .as_ref()
        .map(|p| read_measurement_set(p, &robot.rig))
        .transpose()?;
    let variants = a
        .variants
        .iter()
        .map(|s| s.parse::<Variant>())
        .collect::<Result<Vec<_>>>()?;
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no variants requested".into()));
    }
    let base = a.tuning.config()?;

    let mut results = Vec::with_capacity(variants.len());
    let mut all_ok = true;
    for v in variants {
        let config = CalibrationConfig {
            optimizer: v.configure(&base.optimizer),
            ..base.clone()
        };
        let report = match run_calibration(&robot, &train, &config, &a.tuning, None)? {
            Ok(r) => r,
            Err(r) => {
                let _ = writeln!(err, "warning: {v} diverged");
                r
            }
        };
        all_ok &= report.converged;
        let result = VariantResult {
            variant: v,
            converged: report.converged,
            stop_reason: report.stop_reason,
            iterations_run: report.iterations_run,
            iterations_to_converge: report.converged.then_some(report.iterations_run),
            final_metrics: report.final_metrics(),
            holdout: holdout
                .as_ref()
                .map(|h| evaluate(&report.final_params, h))
                .transpose()?,
            final_delta_norm: report.final_delta.norm(),
            wall_time_s: (!a.tuning.no_timing).then_some(report.wall_time.as_secs_f64()),
            trace: report.trace,
        };
        let rmse = result.final_metrics.map_or(f64::NAN, |m| m.rmse);
        let _ = writeln!(
            out,
            "{v} RMSE={rmse}mm iterations={} converged={}",
            result.iterations_run, result.converged
        );
        results.push(result);
    }
    write_json(
        &a.out,
        &ComparisonFile {
            robot: robot.name.clone(),
            variants: results,
        },
    )?;
    Ok(if all_ok { EXIT_OK } else { EXIT_NOT_CONVERGED })
}
