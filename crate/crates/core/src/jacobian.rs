//! Partial derivatives of the kinematic chain and of the wire-length model
//! with respect to the 24 D-H parameters, plus a central-difference oracle.
//!
//! Columns always follow the flatten order `[alpha | a | d | theta]`, and
//! units stay raw (mm per radian for angle columns, mm per mm for lengths).

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    homogeneous_point, link_matrices, DHLink, DHParams, JointConfig, MeasurementRig, ParamKind,
    ParamVector, Transform, NUM_JOINTS, NUM_PARAMS,
};

/// Below this wire length (mm) the unit direction is treated as undefined.
pub const DEFAULT_MIN_CABLE_LENGTH: f64 = 1e-6;

/// Default central-difference step, used for both radian and mm coordinates.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

pub type PositionJacobian = SMatrix<f64, 3, NUM_PARAMS>;

/// Entrywise derivatives of one link matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPartials {
    pub d_alpha: Matrix4<f64>,
    pub d_theta: Matrix4<f64>,
    pub d_a: Matrix4<f64>,
    pub d_d: Matrix4<f64>,
}

impl LinkPartials {
    pub fn get(&self, kind: ParamKind) -> &Matrix4<f64> {
        match kind {
            ParamKind::Alpha => &self.d_alpha,
            ParamKind::A => &self.d_a,
            ParamKind::D => &self.d_d,
            ParamKind::Theta => &self.d_theta,
        }
    }
}

#[rustfmt::skip]
fn partials_at(alpha: f64, a: f64, theta: f64) -> LinkPartials {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    LinkPartials {
        d_alpha: Matrix4::new(
            0.0, st * sa, st * ca, 0.0,
            0.0, -ct * sa, -ct * ca, 0.0,
            0.0, ca, -sa, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ),
        d_theta: Matrix4::new(
            -st, -ct * ca, ct * sa, -a * st,
            ct, -st * ca, st * sa, a * ct,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ),
        d_a: Matrix4::new(
            0.0, 0.0, 0.0, ct,
            0.0, 0.0, 0.0, st,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ),
        d_d: Matrix4::new(
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 0.0,
        ),
    }
}

/// Partials of the link matrix at total joint angle `theta_offset + q`.
pub fn link_partials(link: &DHLink, q: f64) -> LinkPartials {
    partials_at(link.alpha(), link.a(), link.theta_offset() + q)
}

/// Tool position and its 3×24 Jacobian in one pass over the chain.
pub(crate) fn position_and_jacobian(
    params: &DHParams,
    q: &JointConfig,
    rig: &MeasurementRig,
) -> (Vector3<f64>, PositionJacobian) {
    let links = link_matrices(params, q);

    // prefix[i] = Γ_1..Γ_i, prefix[0] = I
    let mut prefix = [Matrix4::identity(); NUM_JOINTS + 1];
    for i in 0..NUM_JOINTS {
        prefix[i + 1] = prefix[i] * links[i];
    }
    // suffix[i] = Γ_{i+1}..Γ_6 · tool, suffix[6] = tool
    let mut suffix = [Vector4::zeros(); NUM_JOINTS + 1];
    suffix[NUM_JOINTS] = homogeneous_point(&rig.tool_offset);
    for i in (0..NUM_JOINTS).rev() {
        suffix[i] = links[i] * suffix[i + 1];
    }

    let mut jac = PositionJacobian::zeros();
    let q = q.angles();
    for i in 0..NUM_JOINTS {
        let link = params.link(i);
        let partials = link_partials(link, q[i]);
        for kind in ParamKind::ALL {
            let col = prefix[i] * (partials.get(kind) * suffix[i + 1]);
            jac.fixed_view_mut::<3, 1>(0, kind.index(i))
                .copy_from(&col.xyz());
        }
    }
    // same arithmetic as `tool_position`, so residuals agree bit for bit
    let p = Transform::from_homogeneous(&prefix[NUM_JOINTS]).transform_point(&rig.tool_offset);
    (p, jac)
}

/// Derivative of the tool position with respect to every D-H parameter.
pub fn position_jacobian(
    params: &DHParams,
    q: &JointConfig,
    rig: &MeasurementRig,
) -> PositionJacobian {
    position_and_jacobian(params, q, rig).1
}

/// Wire length and its gradient row, sharing one chain evaluation.
pub(crate) fn cable_length_and_jacobian(
    params: &DHParams,
    q: &JointConfig,
    rig: &MeasurementRig,
    min_length: f64,
) -> Result<(f64, ParamVector)> {
    let (p, jac) = position_and_jacobian(params, q, rig);
    let diff = p - rig.base_point;
    let length = diff.norm();
    if !(length > min_length) {
        return Err(Error::DegenerateGeometry { distance: length });
    }
    let u = diff / length;
    let row = jac.tr_mul(&u);
    Ok((length, std::array::from_fn(|k| row[k])))
}

/// `ûᵀ · J_p`, where `û` points from the wire anchor to the tool point.
pub fn cable_jacobian(
    params: &DHParams,
    q: &JointConfig,
    rig: &MeasurementRig,
) -> Result<ParamVector> {
    cable_length_and_jacobian(params, q, rig, DEFAULT_MIN_CABLE_LENGTH).map(|(_, row)| row)
}

/// Central-difference Jacobian of `f` over the flattened parameter vector.
/// Column `k` is `(f(g + h e_k) - f(g - h e_k)) / 2h`.
pub fn fd_jacobian<F>(f: F, params: &DHParams, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DHParams) -> Result<Vec<f64>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fd step must be positive, got {step}"
        )));
    }
    let base = params.flatten();
    let rows = f(params)?.len();
    let mut out = DMatrix::zeros(rows, NUM_PARAMS);
    for k in 0..NUM_PARAMS {
        let mut plus = base;
        let mut minus = base;
        plus[k] += step;
        minus[k] -= step;
        let fp = f(&DHParams::unflatten(&plus)?)?;
        let fm = f(&DHParams::unflatten(&minus)?)?;
        if fp.len() != rows || fm.len() != rows {
            return Err(Error::InvalidArgument(
                "function output length changed".into(),
            ));
        }
        for r in 0..rows {
            out[(r, k)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Stacked wire-length Jacobian: one row per measurement, 24 columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationJacobian {
    pub matrix: DMatrix<f64>,
}

impl IdentificationJacobian {
    pub fn from_configs(
        params: &DHParams,
        configs: &[JointConfig],
        rig: &MeasurementRig,
    ) -> Result<Self> {
        let mut matrix = DMatrix::zeros(configs.len(), NUM_PARAMS);
        for (r, q) in configs.iter().enumerate() {
            let row = cable_jacobian(params, q, rig)?;
            for (k, v) in row.iter().enumerate() {
                matrix[(r, k)] = *v;
            }
        }
        Ok(Self { matrix })
    }

    /// Column block for one parameter kind (the `U_1..U_4` groups).
    pub fn block(&self, kind: ParamKind) -> DMatrix<f64> {
        self.matrix
            .columns(kind.block() * NUM_JOINTS, NUM_JOINTS)
            .into_owned()
    }

    /// Singular values and right singular vectors of the column-normalised
    /// matrix, largest value first. Near-zero values flag parameter directions
    /// the wire measurements cannot see.
    pub fn observability(&self) -> Vec<(f64, SVector<f64, NUM_PARAMS>)> {
        let mut m = self.matrix.clone();
        for mut col in m.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        let gram = SMatrix::<f64, NUM_PARAMS, NUM_PARAMS>::from_iterator(
            (m.transpose() * &m).iter().copied(),
        );
        let eig = gram.symmetric_eigen();
        let mut pairs: Vec<(f64, SVector<f64, NUM_PARAMS>)> = eig
            .eigenvalues
            .iter()
            .zip(eig.eigenvectors.column_iter())
            .map(|(l, v)| (l.max(0.0).sqrt(), v.into_owned()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        pairs
    }

    /// Directions whose normalised singular value is below `tol`.
    pub fn null_directions(&self, tol: f64) -> Vec<SVector<f64, NUM_PARAMS>> {
        self.observability()
            .into_iter()
            .filter(|(s, _)| *s < tol)
            .map(|(_, v)| v)
            .collect()
    }
}

/// Difference between two end-effector poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Rotation error `R_actual - R_nominal`.
    pub d_h: Matrix3<f64>,
    /// Position error in mm.
    pub d_o: Vector3<f64>,
}

impl PoseError {
    pub fn between(nominal: &Transform, actual: &Transform) -> Self {
        Self {
            d_h: actual.rotation - nominal.rotation,
            d_o: actual.translation - nominal.translation,
        }
    }

    /// Axis-angle vector of `R_nominalᵀ R_actual` given the two transforms.
    pub fn orientation_axis_angle(nominal: &Transform, actual: &Transform) -> Vector3<f64> {
        let rel = nominal.rotation.transpose() * actual.rotation;
        nalgebra::Rotation3::from_matrix_unchecked(rel).scaled_axis()
    }
}

/// A 24-entry deviation `Δg` in flatten order. Angle entries in radians,
/// length entries in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamDeviation {
    pub delta_g: ParamVector,
}

impl ParamDeviation {
    pub fn zero() -> Self {
        Self {
            delta_g: [0.0; NUM_PARAMS],
        }
    }

    pub fn new(delta_g: ParamVector) -> Self {
        Self { delta_g }
    }

    pub fn block(&self, kind: ParamKind) -> &[f64] {
        let start = kind.block() * NUM_JOINTS;
        &self.delta_g[start..start + NUM_JOINTS]
    }

    pub fn norm(&self) -> f64 {
        self.delta_g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn angle_norm(&self) -> f64 {
        self.kind_norm(|k| k.is_angle())
    }

    pub fn length_norm(&self) -> f64 {
        self.kind_norm(|k| !k.is_angle())
    }

    fn kind_norm(&self, select: impl Fn(ParamKind) -> bool) -> f64 {
        ParamKind::ALL
            .iter()
            .filter(|k| select(**k))
            .flat_map(|k| self.block(*k))
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}
