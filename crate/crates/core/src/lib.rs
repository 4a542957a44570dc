//! Kinematic calibration of six-axis serial robots from draw-wire length
//! measurements.
//!
//! The pipeline: a standard D-H model ([`kinematics`]) predicts the wire
//! length for each joint configuration, [`jacobian`] differentiates that
//! prediction with respect to all 24 D-H parameters, and [`calibration`]
//! fits the parameter deviations with the AdaModW update rule from
//! [`optimizer`]. [`datagen`] produces seeded synthetic ground truth, and
//! [`io`] / [`cli`] handle the file formats and command-line front end.

// `!(x > 0.0)` style guards are kept so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod calibration;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod io;
pub mod jacobian;
pub mod kinematics;
pub mod optimizer;

pub use calibration::{
    calibrate, compute_metrics, evaluate, loss_gradient, residuals, CalibrationConfig,
    CalibrationReport, Measurement, MeasurementSet, Metrics,
};
pub use error::{Error, Result};
pub use jacobian::{cable_jacobian, fd_jacobian, link_partials, position_jacobian, ParamDeviation};
pub use kinematics::{
    cable_length, dh_transform, forward_kinematics, tool_position, DHLink, DHParams, JointConfig,
    MeasurementRig, ParamKind, ParamVector, Transform, NUM_JOINTS, NUM_PARAMS,
};
pub use optimizer::{OptimizerConfig, OptimizerState, StepResult, Variant};
