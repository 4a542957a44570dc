//! Identification loop: wire-length residuals, the least-squares gradient,
//! AdaModW iteration over the deviation `Δg`, and the MAX / MEAN / RMSE metrics.
//!
//! The optimised variable is the deviation from the nominal model, not the
//! absolute D-H vector, so decoupled weight decay shrinks corrections toward
//! the nominal kinematics.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::{
    cable_length_and_jacobian, IdentificationJacobian, ParamDeviation, DEFAULT_MIN_CABLE_LENGTH,
};
use crate::kinematics::{
    cable_length, DHParams, JointConfig, MeasurementRig, ParamKind, ParamVector, NUM_PARAMS,
};
use crate::optimizer::{self, OptimizerConfig, OptimizerState};

/// Characteristic arm length used to put angle columns on a mm scale.
pub const ANGLE_COLUMN_SCALE_MM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub q: JointConfig,
    /// Measured wire length in mm.
    pub c_measured: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    records: Vec<Measurement>,
    rig: MeasurementRig,
}

impl MeasurementSet {
    pub fn new(records: Vec<Measurement>, rig: MeasurementRig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Precondition("measurement set is empty".into()));
        }
        if let Some((i, m)) = records
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.c_measured.is_finite() && m.c_measured > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "record {i}: wire length must be positive and finite, got {}",
                m.c_measured
            )));
        }
        Ok(Self { records, rig })
    }

    pub fn records(&self) -> &[Measurement] {
        &self.records
    }

    pub fn rig(&self) -> &MeasurementRig {
        &self.rig
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn configs(&self) -> Vec<JointConfig> {
        self.records.iter().map(|r| r.q).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "rmse_mm")]
    pub rmse: f64,
    #[serde(rename = "mean_mm")]
    pub mean: f64,
    #[serde(rename = "max_mm")]
    pub max: f64,
}

impl std::fmt::Display for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "RMSE={}mm MEAN={}mm MAX={}mm",
            self.rmse, self.mean, self.max
        )
    }
}

/// MAX = max|r|, MEAN = mean|r|, RMSE = sqrt(mean r²).
pub fn compute_metrics(residuals: &[f64]) -> Result<Metrics> {
    if residuals.is_empty() {
        return Err(Error::Precondition(
            "metrics need at least one residual".into(),
        ));
    }
    let n = residuals.len() as f64;
    let (mut abs_sum, mut sq_sum, mut max) = (0.0, 0.0, 0.0f64);
    for r in residuals {
        let a = r.abs();
        abs_sum += a;
        sq_sum += r * r;
        max = max.max(a);
    }
    if residuals.iter().any(|r| r.is_nan()) {
        max = f64::NAN;
    }
    Ok(Metrics {
        rmse: (sq_sum / n).sqrt(),
        mean: abs_sum / n,
        max,
    })
}

/// `r_i = C_i - Ĉ_i(params)` in record order.
pub fn residuals(params: &DHParams, data: &MeasurementSet) -> Result<Vec<f64>> {
    Ok(data
        .records
        .iter()
        .map(|m| m.c_measured - cable_length(params, &m.q, &data.rig))
        .collect())
}

/// Metrics of `params` on data it was not fitted to.
pub fn evaluate(params: &DHParams, holdout: &MeasurementSet) -> Result<Metrics> {
    compute_metrics(&residuals(params, holdout)?)
}

/// Residuals and the raw gradient `-(1/n) Jᵀ r` of `L = (1/2n) Σ r²`.
///
/// Rows may be computed on several threads, but the reduction always runs
/// sequentially in record order so the result does not depend on the pool size.
fn residuals_and_gradient(
    params: &DHParams,
    data: &MeasurementSet,
    parallel: bool,
) -> Result<(Vec<f64>, ParamVector)> {
    let row = |m: &Measurement| -> Result<(f64, ParamVector)> {
        let (len, jac) =
            cable_length_and_jacobian(params, &m.q, &data.rig, DEFAULT_MIN_CABLE_LENGTH)?;
        Ok((m.c_measured - len, jac))
    };
    let rows: Vec<(f64, ParamVector)> = if parallel {
        data.records.par_iter().map(row).collect::<Result<_>>()?
    } else {
        data.records.iter().map(row).collect::<Result<_>>()?
    };

    let n = rows.len() as f64;
    let mut grad = [0.0; NUM_PARAMS];
    for (r, jac) in &rows {
        for (g, j) in grad.iter_mut().zip(jac) {
            *g += r * j;
        }
    }
    for g in &mut grad {
        *g *= -1.0 / n;
    }
    Ok((rows.into_iter().map(|(r, _)| r).collect(), grad))
}

fn scale_gradient(
    raw: &ParamVector,
    mask: &[bool; NUM_PARAMS],
    scaling: Option<&ParamVector>,
) -> ParamVector {
    std::array::from_fn(|k| {
        if !mask[k] {
            0.0
        } else {
            raw[k] / scaling.map_or(1.0, |s| s[k])
        }
    })
}

/// Gradient of the mean squared wire residual at `nominal ⊕ delta`, with
/// frozen coordinates zeroed. With `scaling = Some(w)` the result is the
/// gradient with respect to the scaled variable `y_k = w_k Δg_k`.
pub fn loss_gradient(
    delta: &ParamDeviation,
    nominal: &DHParams,
    data: &MeasurementSet,
    mask: &[bool; NUM_PARAMS],
    scaling: Option<&ParamVector>,
) -> Result<ParamVector> {
    let params = compose_masked(nominal, &delta.delta_g, mask)?;
    let (_, raw) = residuals_and_gradient(&params, data, false)?;
    Ok(scale_gradient(&raw, mask, scaling))
}

/// `nominal ⊕ delta` where frozen coordinates keep their nominal value bit for bit.
fn compose_masked(
    nominal: &DHParams,
    delta: &ParamVector,
    mask: &[bool; NUM_PARAMS],
) -> Result<DHParams> {
    let mut flat = nominal.flatten();
    for k in 0..NUM_PARAMS {
        if mask[k] {
            flat[k] += delta[k];
        }
    }
    DHParams::unflatten(&flat)
}

/// Default threshold for [`unobservable_mask`] on unit-normalised columns.
pub const DEFAULT_NULL_TOL: f64 = 1e-6;

/// Mask that freezes coordinates the wire readings cannot see at `params`.
///
/// Columns of the identification Jacobian are normalised and visited in
/// flatten order; a column whose component outside the span of the columns
/// kept so far is shorter than `tol` is frozen. Within each dependent group
/// the coordinate with the highest index is therefore the one frozen.
///
/// Directions that are null only at the exact nominal geometry become weakly
/// observable once the robot is perturbed, so evaluating at a perturbed copy
/// of the nominal keeps only the directions that stay null.
pub fn unobservable_mask(
    params: &DHParams,
    configs: &[JointConfig],
    rig: &MeasurementRig,
    tol: f64,
) -> Result<[bool; NUM_PARAMS]> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "null tolerance must be in (0, 1), got {tol}"
        )));
    }
    let j = IdentificationJacobian::from_configs(params, configs, rig)?.matrix;
    let mut mask = [true; NUM_PARAMS];
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    for (k, free) in mask.iter_mut().enumerate() {
        let col = j.column(k).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            *free = false;
            continue;
        }
        let mut v = col / norm;
        // two passes of modified Gram-Schmidt keep the residual accurate
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let rest = v.norm();
        if rest < tol {
            *free = false;
        } else {
            basis.push(v / rest);
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub optimizer: OptimizerConfig,
    pub max_iters: usize,
    /// Relative change of the training RMSE that counts as "no progress".
    pub tol_rel: f64,
    /// Number of consecutive no-progress iterations needed to stop.
    pub window: usize,
    /// Stop as soon as the ∞-norm of the masked gradient falls below this.
    pub grad_tol: f64,
    /// `true` = identify, `false` = keep nominal.
    pub param_mask: [bool; NUM_PARAMS],
    /// Per-coordinate scale `w_k`; the optimiser works on `w_k Δg_k`.
    pub column_scaling: Option<ParamVector>,
    pub seed: u64,
    /// Compute per-record rows on the rayon pool.
    pub parallel: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            max_iters: 5000,
            tol_rel: 1e-4,
            window: 10,
            grad_tol: 1e-12,
            param_mask: [true; NUM_PARAMS],
            column_scaling: None,
            seed: 0,
            parallel: false,
        }
    }
}

impl CalibrationConfig {
    /// Angle columns weighted by [`ANGLE_COLUMN_SCALE_MM`], length columns by 1.
    pub fn default_column_scaling() -> ParamVector {
        std::array::from_fn(|k| {
            if ParamKind::from_index(k).0.is_angle() {
                ANGLE_COLUMN_SCALE_MM
            } else {
                1.0
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.tol_rel > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol_rel must be > 0, got {}",
                self.tol_rel
            )));
        }
        if self.window < 1 {
            return Err(Error::InvalidArgument(
                "convergence window must be >= 1".into(),
            ));
        }
        if let Some(s) = &self.column_scaling {
            if let Some(k) = s.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "column scale {k} must be positive, got {}",
                    s[k]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub rmse_mm: f64,
    pub mean_mm: f64,
    pub max_mm: f64,
}

impl TraceEntry {
    fn new(iter: usize, m: &Metrics) -> Self {
        Self {
            iter,
            rmse_mm: m.rmse,
            mean_mm: m.mean,
            max_mm: m.max,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            rmse: self.rmse_mm,
            mean: self.mean_mm,
            max: self.max_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RelativeChange,
    SmallGradient,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Training metrics; entry `k` is evaluated at the `k`-th iterate, the last
    /// entry at `final_params`.
    pub trace: Vec<TraceEntry>,
    pub final_delta: ParamDeviation,
    pub final_params: DHParams,
    pub iterations_run: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub wall_time: Duration,
    pub holdout_metrics: Option<Metrics>,
}

impl CalibrationReport {
    pub fn final_metrics(&self) -> Option<Metrics> {
        self.trace.last().map(TraceEntry::metrics)
    }
}

pub fn calibrate(
    nominal: &DHParams,
    data: &MeasurementSet,
    config: &CalibrationConfig,
) -> Result<CalibrationReport> {
    calibrate_with_observer(nominal, data, config, |_| {})
}

/// Runs the identification loop, handing each trace entry to `observer` as
/// soon as it is computed.
pub fn calibrate_with_observer(
    nominal: &DHParams,
    data: &MeasurementSet,
    config: &CalibrationConfig,
    mut observer: impl FnMut(&TraceEntry),
) -> Result<CalibrationReport> {
    config.validate()?;
    let start = Instant::now();
    let mask = &config.param_mask;
    let scaling = config.column_scaling.as_ref();

    let mut scaled = vec![0.0; NUM_PARAMS];
    let mut delta = [0.0; NUM_PARAMS];
    let mut state = OptimizerState::new(NUM_PARAMS);
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(config.max_iters.min(100_000));
    let mut quiet_iters = 0usize;
    let mut stop_reason = StopReason::MaxIterations;
    let mut last_good = (delta, compose_masked(nominal, &delta, mask)?);

    let build = |trace: Vec<TraceEntry>,
                 delta: ParamVector,
                 params: DHParams,
                 reason: StopReason,
                 start: Instant| {
        CalibrationReport {
            iterations_run: trace.len(),
            trace,
            final_delta: ParamDeviation::new(delta),
            final_params: params,
            converged: matches!(
                reason,
                StopReason::RelativeChange | StopReason::SmallGradient
            ),
            stop_reason: reason,
            wall_time: start.elapsed(),
            holdout_metrics: None,
        }
    };

    for iter in 0..config.max_iters {
        let params = compose_masked(nominal, &delta, mask)?;
        let (res, raw_grad) = residuals_and_gradient(&params, data, config.parallel)?;
        let metrics = compute_metrics(&res)?;
        let finite = metrics.rmse.is_finite() && raw_grad.iter().all(|g| g.is_finite());
        if !finite {
            let (d, p) = last_good;
            return Err(Error::Divergence {
                iteration: iter,
                report: Box::new(build(trace, d, p, StopReason::Diverged, start)),
            });
        }
        last_good = (delta, params);

        if let Some(prev) = trace.last() {
            let change = (metrics.rmse - prev.rmse_mm).abs();
            if change <= config.tol_rel * prev.rmse_mm {
                quiet_iters += 1;
            } else {
                quiet_iters = 0;
            }
        }
        let entry = TraceEntry::new(iter, &metrics);
        observer(&entry);
        trace.push(entry);

        let grad = scale_gradient(&raw_grad, mask, scaling);
        let grad_inf = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if grad_inf < config.grad_tol {
            stop_reason = StopReason::SmallGradient;
            break;
        }
        if quiet_iters >= config.window {
            stop_reason = StopReason::RelativeChange;
            break;
        }
        if iter + 1 == config.max_iters {
            break;
        }

        let step = optimizer::step(&scaled, &state, &grad, &config.optimizer)?;
        if step.new_params.iter().any(|x| !x.is_finite()) {
            let (d, p) = last_good;
            return Err(Error::Divergence {
                iteration: iter + 1,
                report: Box::new(build(trace, d, p, StopReason::Diverged, start)),
            });
        }
        scaled = step.new_params;
        state = step.new_state;
        for k in 0..NUM_PARAMS {
            delta[k] = if mask[k] {
                scaled[k] / scaling.map_or(1.0, |s| s[k])
            } else {
                0.0
            };
        }
    }

    let (d, p) = last_good;
    Ok(build(trace, d, p, stop_reason, start))
}
