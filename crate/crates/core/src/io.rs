//! File formats: robot description and reports as JSON, measurements and
//! traces as CSV.
//!
//! Files carry degrees for angles and millimetres for lengths. Floats are
//! written in shortest round-trip form, so reading a file back reproduces
//! the written values exactly.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    CalibrationConfig, CalibrationReport, Measurement, MeasurementSet, Metrics, StopReason,
    TraceEntry,
};
use crate::datagen::{default_joint_limits, JointLimits};
use crate::error::{Error, Result};
use crate::kinematics::{
    param_name, DHLink, DHParams, JointConfig, MeasurementRig, ParamVector, NUM_JOINTS, NUM_PARAMS,
};
use crate::optimizer::OptimizerConfig;

pub const MEASUREMENT_HEADER: [&str; 7] = [
    "q1_deg", "q2_deg", "q3_deg", "q4_deg", "q5_deg", "q6_deg", "cable_mm",
];
pub const TRACE_HEADER: [&str; 4] = ["iter", "rmse_mm", "mean_mm", "max_mm"];

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(path, source),
            other => parse_err(path, format!("{other:?}")),
        }
    } else {
        parse_err(path, e)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub alpha_deg: f64,
    pub a_mm: f64,
    pub d_mm: f64,
    pub theta_deg: f64,
}

impl LinkRecord {
    pub fn from_link(link: &DHLink) -> Self {
        Self {
            alpha_deg: link.alpha().to_degrees(),
            a_mm: link.a(),
            d_mm: link.d(),
            theta_deg: link.theta_offset().to_degrees(),
        }
    }

    pub fn to_link(&self) -> Result<DHLink> {
        DHLink::from_degrees(self.alpha_deg, self.a_mm, self.d_mm, self.theta_deg)
    }
}

pub fn params_from_records(links: &[LinkRecord]) -> Result<DHParams> {
    if links.len() != NUM_JOINTS {
        return Err(Error::InvalidArgument(format!(
            "expected {NUM_JOINTS} links, got {}",
            links.len()
        )));
    }
    let mut out = [DHLink::zero(); NUM_JOINTS];
    for (slot, rec) in out.iter_mut().zip(links) {
        *slot = rec.to_link()?;
    }
    Ok(DHParams::new(out))
}

pub fn records_from_params(params: &DHParams) -> Vec<LinkRecord> {
    params.links().iter().map(LinkRecord::from_link).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigRecord {
    pub base_point_mm: [f64; 3],
    pub tool_offset_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    #[serde(default)]
    name: String,
    links: Vec<LinkRecord>,
    rig: RigRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint_limits_deg: Option<Vec<[f64; 2]>>,
}

/// Nominal kinematics, wire rig and sampling range of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Robot {
    pub name: String,
    pub params: DHParams,
    pub rig: MeasurementRig,
    /// Radians.
    pub joint_limits: JointLimits,
}

impl Robot {
    /// The HSR-JR680 arm with the wire anchored 1 m along the base x axis
    /// and attached 100 mm out along the flange axis.
    pub fn hsr_jr680() -> Self {
        Self {
            name: "hsr_jr680".into(),
            params: DHParams::hsr_jr680(),
            rig: MeasurementRig::new([1000.0, 0.0, 0.0], [0.0, 0.0, 100.0]).expect("finite rig"),
            joint_limits: default_joint_limits(),
        }
    }
}

pub fn read_robot(path: &Path) -> Result<Robot> {
    let file: RobotFile = read_json(path)?;
    let params = params_from_records(&file.links).map_err(|e| parse_err(path, e))?;
    let rig = MeasurementRig::new(file.rig.base_point_mm, file.rig.tool_offset_mm)
        .map_err(|e| parse_err(path, e))?;
    let joint_limits = match file.joint_limits_deg {
        None => default_joint_limits(),
        Some(v) if v.len() == NUM_JOINTS => {
            let mut out = [(0.0, 0.0); NUM_JOINTS];
            for (slot, [lo, hi]) in out.iter_mut().zip(v) {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(parse_err(path, format!("bad joint limits [{lo}, {hi}]")));
                }
                *slot = (lo.to_radians(), hi.to_radians());
            }
            out
        }
        Some(v) => {
            return Err(parse_err(
                path,
                format!("expected {NUM_JOINTS} joint limits, got {}", v.len()),
            ))
        }
    };
    Ok(Robot {
        name: file.name,
        params,
        rig,
        joint_limits,
    })
}

pub fn write_robot(path: &Path, robot: &Robot) -> Result<()> {
    let file = RobotFile {
        name: robot.name.clone(),
        links: records_from_params(&robot.params),
        rig: RigRecord {
            base_point_mm: robot.rig.base_point.into(),
            tool_offset_mm: robot.rig.tool_offset.into(),
        },
        joint_limits_deg: Some(
            robot
                .joint_limits
                .iter()
                .map(|(lo, hi)| [lo.to_degrees(), hi.to_degrees()])
                .collect(),
        ),
    };
    write_json(path, &file)
}

/// One CSV row exactly as stored: joint angles in degrees and the wire length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRow {
    pub q_deg: [f64; NUM_JOINTS],
    pub cable_mm: f64,
}

impl MeasurementRow {
    pub fn to_measurement(&self) -> Result<Measurement> {
        Ok(Measurement {
            q: JointConfig::from_degrees(self.q_deg)?,
            c_measured: self.cable_mm,
        })
    }
}

pub fn write_measurements(path: &Path, rows: &[MeasurementRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    w.write_record(MEASUREMENT_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for row in rows {
        let fields: Vec<String> = row
            .q_deg
            .iter()
            .chain(std::iter::once(&row.cable_mm))
            .map(|x| x.to_string())
            .collect();
        w.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Rows of a measurement file; a header-only file gives an empty vector.
pub fn read_measurement_rows(path: &Path) -> Result<Vec<MeasurementRow>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(MEASUREMENT_HEADER) {
        return Err(parse_err(
            path,
            format!("expected header {}", MEASUREMENT_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mut vals = [0.0; 7];
        for (slot, field) in vals.iter_mut().zip(rec.iter()) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(path, format!("row {}: bad number {field:?}", i + 1)))?;
        }
        rows.push(MeasurementRow {
            q_deg: std::array::from_fn(|j| vals[j]),
            cable_mm: vals[6],
        });
    }
    Ok(rows)
}

/// Loads a measurement file against `rig`; an empty file is a precondition error.
pub fn read_measurement_set(path: &Path, rig: &MeasurementRig) -> Result<MeasurementSet> {
    let records = read_measurement_rows(path)?
        .iter()
        .map(MeasurementRow::to_measurement)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| parse_err(path, e))?;
    if records.is_empty() {
        return Err(Error::Precondition(format!(
            "{} has no measurements",
            path.display()
        )));
    }
    MeasurementSet::new(records, *rig).map_err(|e| parse_err(path, e))
}

/// Writes `iter,rmse_mm,mean_mm,max_mm` rows, flushing after each one so an
/// interrupted run still leaves a readable file.
pub struct TraceWriter {
    writer: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        writer
            .write_record(TRACE_HEADER)
            .map_err(|e| csv_err(path, e))?;
        writer.flush().map_err(|e| io_err(path, e))?;
        Ok(Self {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn push(&mut self, e: &TraceEntry) -> Result<()> {
        let fields = [
            e.iter.to_string(),
            e.rmse_mm.to_string(),
            e.mean_mm.to_string(),
            e.max_mm.to_string(),
        ];
        self.writer
            .write_record(&fields)
            .map_err(|err| csv_err(&self.path, err))?;
        self.writer.flush().map_err(|err| io_err(&self.path, err))
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(parse_err(
            path,
            format!("expected header {}", TRACE_HEADER.join(",")),
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// `0`/`1` per coordinate in flatten order, `1` = identify.
pub fn parse_mask(s: &str) -> Result<[bool; NUM_PARAMS]> {
    let chars: Vec<char> = s.trim().chars().collect();
    if chars.len() != NUM_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "mask needs {NUM_PARAMS} characters, got {}",
            chars.len()
        )));
    }
    let mut mask = [true; NUM_PARAMS];
    for (slot, c) in mask.iter_mut().zip(chars) {
        *slot = match c {
            '1' => true,
            '0' => false,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "mask characters must be 0 or 1, got {other:?}"
                )))
            }
        };
    }
    Ok(mask)
}

pub fn format_mask(mask: &[bool; NUM_PARAMS]) -> String {
    mask.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

pub fn param_order() -> Vec<String> {
    (0..NUM_PARAMS).map(param_name).collect()
}

/// Calibration settings as recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub optimizer: OptimizerConfig,
    pub max_iters: usize,
    pub tol_rel: f64,
    pub window: usize,
    pub param_mask: String,
    pub column_scaling: Option<ParamVector>,
    pub seed: u64,
}

impl ConfigRecord {
    pub fn from_config(c: &CalibrationConfig) -> Self {
        Self {
            optimizer: c.optimizer,
            max_iters: c.max_iters,
            tol_rel: c.tol_rel,
            window: c.window,
            param_mask: format_mask(&c.param_mask),
            column_scaling: c.column_scaling,
            seed: c.seed,
        }
    }
}

/// Report JSON. Vectors follow `param_order`: radians for alpha/theta, mm for a/d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub robot: String,
    pub param_order: Vec<String>,
    pub nominal: ParamVector,
    pub final_delta: ParamVector,
    pub final_params: ParamVector,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations_run: usize,
    /// `None` when timing is suppressed for reproducible output.
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<Metrics>,
    pub config: ConfigRecord,
    pub trace: Vec<TraceEntry>,
}

impl ReportFile {
    pub fn new(
        robot: &Robot,
        config: &CalibrationConfig,
        report: &CalibrationReport,
        timing: bool,
    ) -> Self {
        Self {
            robot: robot.name.clone(),
            param_order: param_order(),
            nominal: robot.params.flatten(),
            final_delta: report.final_delta.delta_g,
            final_params: report.final_params.flatten(),
            converged: report.converged,
            stop_reason: report.stop_reason,
            iterations_run: report.iterations_run,
            wall_time_s: timing.then_some(report.wall_time.as_secs_f64()),
            holdout: report.holdout_metrics,
            config: ConfigRecord::from_config(config),
            trace: report.trace.clone(),
        }
    }

    /// Identified parameters, after checking the report was made for `nominal`.
    pub fn params_for(&self, nominal: &DHParams) -> Result<DHParams> {
        let expected = nominal.flatten();
        if let Some(k) =
            (0..NUM_PARAMS).find(|k| expected[*k].to_bits() != self.nominal[*k].to_bits())
        {
            return Err(Error::InvalidArgument(format!(
                "report was made for a different robot ({}: {} vs {})",
                param_name(k),
                self.nominal[k],
                expected[k]
            )));
        }
        nominal.apply_deviation(&self.final_delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub angle_bound_deg: f64,
    pub length_bound_mm: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub sigma_mm: f64,
    pub seed: u64,
}

/// Ground-truth sidecar written next to generated measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub rng: String,
    pub robot: String,
    pub param_order: Vec<String>,
    /// Exact true parameters in flatten order.
    pub true_params: ParamVector,
    /// The same parameters in degrees, for reading.
    pub true_links: Vec<LinkRecord>,
    pub true_delta: ParamVector,
    pub perturbation: PerturbationRecord,
    pub noise: NoiseRecord,
    pub sample_seed: u64,
    pub n: usize,
    pub split: f64,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

/// Parameters held in a report, a truth sidecar or a robot file.
pub fn read_params_file(path: &Path, nominal: &DHParams) -> Result<DHParams> {
    let value: serde_json::Value = read_json(path)?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(path, "expected a JSON object"))?;
    if obj.contains_key("final_delta") {
        let report: ReportFile = serde_json::from_value(value).map_err(|e| parse_err(path, e))?;
        report.params_for(nominal)
    } else if obj.contains_key("true_params") {
        let truth: TruthFile = serde_json::from_value(value).map_err(|e| parse_err(path, e))?;
        DHParams::unflatten(&truth.true_params).map_err(|e| parse_err(path, e))
    } else if obj.contains_key("links") {
        Ok(read_robot(path)?.params)
    } else {
        Err(parse_err(path, "not a report, truth or robot file"))
    }
}
