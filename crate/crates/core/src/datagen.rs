//! Seeded synthetic ground truth: perturbed kinematics, joint samples and
//! noisy wire-length readings.
//!
//! All draws use [`ChaCha8Rng`] seeded through `SeedableRng::seed_from_u64`;
//! [`RNG_ALGORITHM`] names that choice in generated sidecar files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{Measurement, MeasurementSet};
use crate::error::{Error, Result};
use crate::kinematics::{
    cable_length, DHParams, JointConfig, MeasurementRig, ParamKind, NUM_JOINTS, NUM_PARAMS,
};

pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64";

/// Default joint range (degrees) when a robot file gives none.
pub const DEFAULT_JOINT_LIMIT_DEG: f64 = 120.0;

/// Default Gaussian noise on wire readings (mm).
pub const DEFAULT_NOISE_SIGMA_MM: f64 = 0.05;

pub type JointLimits = [(f64, f64); NUM_JOINTS];

pub fn default_joint_limits() -> JointLimits {
    let l = DEFAULT_JOINT_LIMIT_DEG.to_radians();
    [(-l, l); NUM_JOINTS]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Half-width (rad) of the uniform offset on alpha and theta.
    pub angle_bound: f64,
    /// Half-width (mm) of the uniform offset on a and d.
    pub length_bound: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation (mm) of additive Gaussian noise.
    pub sigma: f64,
    pub seed: u64,
}

/// Offsets every coordinate by an independent uniform draw in `[-bound, bound]`.
pub fn perturb_params(nominal: &DHParams, spec: &PerturbationSpec) -> Result<DHParams> {
    for (name, b) in [
        ("angle_bound", spec.angle_bound),
        ("length_bound", spec.length_bound),
    ] {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be >= 0, got {b}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut flat = nominal.flatten();
    for (k, x) in flat.iter_mut().enumerate().take(NUM_PARAMS) {
        let bound = if ParamKind::from_index(k).0.is_angle() {
            spec.angle_bound
        } else {
            spec.length_bound
        };
        // always draw so the stream does not depend on the bounds
        let u: f64 = rng.random();
        *x += (2.0 * u - 1.0) * bound;
    }
    DHParams::unflatten(&flat)
}

/// `n` joint configurations drawn uniformly and independently per joint.
pub fn sample_configs(limits: &JointLimits, n: usize, seed: u64) -> Result<Vec<JointConfig>> {
    if n == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    for (i, (lo, hi)) in limits.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Precondition(format!(
                "joint {} has an empty range [{lo}, {hi}]",
                i + 1
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            JointConfig::new(std::array::from_fn(|j| {
                let (lo, hi) = limits[j];
                let u: f64 = rng.random();
                lo + u * (hi - lo)
            }))
        })
        .collect()
}

/// Noise-free wire lengths for each configuration.
pub fn exact_lengths(params: &DHParams, rig: &MeasurementRig, configs: &[JointConfig]) -> Vec<f64> {
    configs
        .iter()
        .map(|q| cable_length(params, q, rig))
        .collect()
}

/// Simulated readings `C_i = Ĉ_i(true_params) + N(0, sigma²)`.
pub fn generate_dataset(
    true_params: &DHParams,
    rig: &MeasurementRig,
    configs: &[JointConfig],
    noise: &NoiseSpec,
) -> Result<MeasurementSet> {
    let normal = Normal::new(0.0, noise.sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma {}: {e}", noise.sigma)))?;
    if !(noise.sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {}",
            noise.sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let records = configs
        .iter()
        .zip(exact_lengths(true_params, rig, configs))
        .map(|(q, exact)| {
            if exact <= crate::jacobian::DEFAULT_MIN_CABLE_LENGTH {
                return Err(Error::DegenerateGeometry { distance: exact });
            }
            Ok(Measurement {
                q: *q,
                c_measured: exact + normal.sample(&mut rng),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(records, *rig)
}

/// Number of training rows for a split fraction; the rest is held out.
pub fn split_count(n: usize, train_fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "split must be in [0, 1], got {train_fraction}"
        )));
    }
    Ok(((n as f64) * train_fraction).round() as usize)
}
