//! AdaModW: Adam with a momental bound on the per-coordinate learning rate
//! and decoupled weight decay.
//!
//! One step, elementwise over the coordinates:
//!
//! ```text
//! m_t  = β1 m_{t-1} + (1 - β1) g
//! z_t  = β2 z_{t-1} + (1 - β2) g²
//! m̂_t  = m_t / (1 - β1^t)          ẑ_t = z_t / (1 - β2^t)
//! κ_t  = η / (√ẑ_t + σ)
//! b_t  = β3 b_{t-1} + (1 - β3) κ_t   (b_0 = 0, no bias correction)
//! κ̂_t  = min(κ_t, b_t)
//! x_t  = x_{t-1} - κ̂_t (m̂_t + ζ x_{t-1})
//! ```
//!
//! Setting `β3 = 0` switches the bound off and `ζ = 0` switches the decay
//! off, which yields Adam, AdamW and AdaMod as special cases (see [`Variant`]).
//!
//! Every function here is a pure transition: state goes in, new state comes out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Base learning rate η.
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Memory of the learning-rate bound. 0 disables the bound.
    pub beta3: f64,
    /// Denominator guard σ.
    pub sigma: f64,
    /// Decoupled weight-decay coefficient ζ.
    pub zeta: f64,
}

/// Tuned for wire-length calibration of an arm-sized robot (mm and rad).
///
/// The long second-moment memory keeps the per-coordinate rate from growing
/// as the gradient shrinks near the optimum, which otherwise leaves the
/// iterate circling at a distance set by `eta`.
impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 5e-2,
            beta1: 0.95,
            beta2: 0.9999,
            beta3: 0.999,
            sigma: 1e-8,
            zeta: 1e-4,
        }
    }
}

impl OptimizerConfig {
    /// Checks every documented range, including `sigma > 0`.
    pub fn validate(&self) -> Result<()> {
        self.check_ranges()?;
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    // `step` tolerates sigma == 0 so hand-derived examples stay exact.
    fn check_ranges(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what}, got {v}")));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be > 0", self.eta);
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1 must be in [0, 1)", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2 must be in [0, 1)", self.beta2);
        }
        if !(0.0..=1.0).contains(&self.beta3) {
            return bad("beta3 must be in [0, 1]", self.beta3);
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be >= 0", self.sigma);
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return bad("zeta must be >= 0", self.zeta);
        }
        Ok(())
    }
}

/// Members of the Adam family reachable by switching parts of AdaModW off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Adam,
    AdamW,
    AdaMod,
    AdaModW,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Adam,
        Variant::AdamW,
        Variant::AdaMod,
        Variant::AdaModW,
    ];

    /// Returns `base` with the bound and/or decay disabled as this variant requires.
    pub fn configure(self, base: &OptimizerConfig) -> OptimizerConfig {
        let mut cfg = *base;
        if matches!(self, Variant::Adam | Variant::AdamW) {
            cfg.beta3 = 0.0;
        }
        if matches!(self, Variant::Adam | Variant::AdaMod) {
            cfg.zeta = 0.0;
        }
        cfg
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Adam => "adam",
            Variant::AdamW => "adamw",
            Variant::AdaMod => "adamod",
            Variant::AdaModW => "adamodw",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown optimizer variant '{s}'")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// First moment.
    pub m: Vec<f64>,
    /// Second moment.
    pub z: Vec<f64>,
    /// Running bound on the learning rate.
    pub b: Vec<f64>,
    /// Number of completed steps.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            z: vec![0.0; dim],
            b: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub new_params: Vec<f64>,
    pub new_state: OptimizerState,
    /// Bounded per-coordinate rate `κ̂_t` used for this step.
    pub effective_lr: Vec<f64>,
}

/// Updates the moving averages of the gradient and the squared gradient.
pub fn moments_update(
    state: &OptimizerState,
    grad: &[f64],
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if grad.len() != state.dim() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries, state has {}",
            grad.len(),
            state.dim()
        )));
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gradient entry {k} is not finite"
        )));
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let m = state
        .m
        .iter()
        .zip(grad)
        .map(|(m, g)| b1 * m + (1.0 - b1) * g)
        .collect();
    let z = state
        .z
        .iter()
        .zip(grad)
        .map(|(z, g)| b2 * z + (1.0 - b2) * g * g)
        .collect();
    Ok((m, z))
}

/// Divides the moments by `1 - β^t`.
pub fn bias_correct(
    m: &[f64],
    z: &[f64],
    t: u64,
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t == 0 {
        return Err(Error::Precondition("bias correction needs t >= 1".into()));
    }
    let t = t as f64;
    let c1 = 1.0 - config.beta1.powf(t);
    let c2 = 1.0 - config.beta2.powf(t);
    Ok((
        m.iter().map(|v| v / c1).collect(),
        z.iter().map(|v| v / c2).collect(),
    ))
}

/// Adaptive rate, its moving-average bound, and the bounded rate `(κ, b, κ̂)`.
pub fn bounded_rate(
    z_hat: &[f64],
    b_prev: &[f64],
    config: &OptimizerConfig,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let b3 = config.beta3;
    let kappa: Vec<f64> = z_hat
        .iter()
        .map(|z| config.eta / (z.sqrt() + config.sigma))
        .collect();
    let b: Vec<f64> = b_prev
        .iter()
        .zip(&kappa)
        .map(|(b, k)| b3 * b + (1.0 - b3) * k)
        .collect();
    let kappa_hat = kappa.iter().zip(&b).map(|(k, b)| k.min(*b)).collect();
    (kappa, b, kappa_hat)
}

/// One full AdaModW transition.
pub fn step(
    params: &[f64],
    state: &OptimizerState,
    grad: &[f64],
    config: &OptimizerConfig,
) -> Result<StepResult> {
    config.check_ranges()?;
    if params.len() != state.dim() {
        return Err(Error::InvalidArgument(format!(
            "params have {} entries, state has {}",
            params.len(),
            state.dim()
        )));
    }
    if let Some(k) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "parameter {k} is not finite"
        )));
    }
    let t = state.t + 1;
    let (m, z) = moments_update(state, grad, config)?;
    let (m_hat, z_hat) = bias_correct(&m, &z, t, config)?;
    let (_, b, kappa_hat) = bounded_rate(&z_hat, &state.b, config);

    let new_params = params
        .iter()
        .zip(&m_hat)
        .zip(&kappa_hat)
        .map(|((x, mh), lr)| x - lr * (mh + config.zeta * x))
        .collect();

    Ok(StepResult {
        new_params,
        new_state: OptimizerState { m, z, b, t },
        effective_lr: kappa_hat,
    })
}

/// Expanded form of the bound recurrence:
/// `b_t = (1 - β3) Σ_{k=1..t} β3^{t-k} κ_k` with `b_0 = 0`.
pub fn ema_closed_form(kappas: &[f64], beta3: f64) -> Result<f64> {
    if kappas.is_empty() {
        return Err(Error::Precondition(
            "closed form needs at least one rate".into(),
        ));
    }
    let t = kappas.len();
    Ok((1.0 - beta3)
        * kappas
            .iter()
            .enumerate()
            .map(|(k, kappa)| beta3.powi((t - 1 - k) as i32) * kappa)
            .sum::<f64>())
}
