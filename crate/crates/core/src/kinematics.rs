//! Standard Denavit-Hartenberg model of a six-joint revolute arm.
//!
//! Internally every angle is in radians and every length in millimetres.
//! Degrees only appear at file and CLI boundaries (see [`crate::io`]).
//!
//! The flattened parameter vector has 24 entries laid out in four blocks of
//! six: `[alpha_1..alpha_6, a_1..a_6, d_1..d_6, theta_1..theta_6]`. Jacobian
//! columns, deviation vectors and masks all share this layout.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result};

pub const NUM_JOINTS: usize = 6;
pub const NUM_PARAMS: usize = 4 * NUM_JOINTS;

/// A 24-entry vector in flatten order.
pub type ParamVector = [f64; NUM_PARAMS];

/// Parameter blocks of the flattened vector, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Alpha,
    A,
    D,
    Theta,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [
        ParamKind::Alpha,
        ParamKind::A,
        ParamKind::D,
        ParamKind::Theta,
    ];

    pub fn block(self) -> usize {
        match self {
            ParamKind::Alpha => 0,
            ParamKind::A => 1,
            ParamKind::D => 2,
            ParamKind::Theta => 3,
        }
    }

    pub fn is_angle(self) -> bool {
        matches!(self, ParamKind::Alpha | ParamKind::Theta)
    }

    /// Index of this parameter for `link` (0-based) in the flattened vector.
    pub fn index(self, link: usize) -> usize {
        self.block() * NUM_JOINTS + link
    }

    /// Inverse of [`ParamKind::index`].
    pub fn from_index(index: usize) -> (ParamKind, usize) {
        (Self::ALL[index / NUM_JOINTS], index % NUM_JOINTS)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ParamKind::Alpha => "alpha",
            ParamKind::A => "a",
            ParamKind::D => "d",
            ParamKind::Theta => "theta",
        }
    }
}

/// Human-readable name of flattened coordinate `index`, e.g. `theta3`.
pub fn param_name(index: usize) -> String {
    let (kind, link) = ParamKind::from_index(index);
    format!("{}{}", kind.symbol(), link + 1)
}

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned untouched,
/// so wrapping is idempotent bit for bit.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Smallest signed difference `a - b` between two angles.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DHLink {
    alpha: f64,
    a: f64,
    d: f64,
    theta_offset: f64,
}

impl DHLink {
    pub fn new(alpha: f64, a: f64, d: f64, theta_offset: f64) -> Result<Self> {
        Ok(Self {
            alpha: wrap_angle(ensure_finite("alpha", alpha)?),
            a: ensure_finite("a", a)?,
            d: ensure_finite("d", d)?,
            theta_offset: wrap_angle(ensure_finite("theta_offset", theta_offset)?),
        })
    }

    pub fn from_degrees(alpha_deg: f64, a: f64, d: f64, theta_deg: f64) -> Result<Self> {
        Self::new(alpha_deg.to_radians(), a, d, theta_deg.to_radians())
    }

    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            a: 0.0,
            d: 0.0,
            theta_offset: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn theta_offset(&self) -> f64 {
        self.theta_offset
    }

    pub fn get(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Alpha => self.alpha,
            ParamKind::A => self.a,
            ParamKind::D => self.d,
            ParamKind::Theta => self.theta_offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DHParams {
    links: [DHLink; NUM_JOINTS],
}

impl DHParams {
    pub fn new(links: [DHLink; NUM_JOINTS]) -> Self {
        Self { links }
    }

    /// Nominal parameters of the HSR-JR680 six-axis arm.
    pub fn hsr_jr680() -> Self {
        const TABLE: [(f64, f64, f64, f64); NUM_JOINTS] = [
            (-90.0, 250.0, 653.5, 0.0),
            (0.0, 900.0, 0.0, -90.0),
            (-90.0, -205.0, 0.0, 180.0),
            (90.0, 0.0, 1030.2, 0.0),
            (-90.0, 0.0, 0.0, 90.0),
            (0.0, 0.0, 200.6, 0.0),
        ];
        let links = TABLE.map(|(alpha, a, d, theta)| {
            DHLink::from_degrees(alpha, a, d, theta).expect("table values are finite")
        });
        Self { links }
    }

    pub fn zero() -> Self {
        Self {
            links: [DHLink::zero(); NUM_JOINTS],
        }
    }

    pub fn links(&self) -> &[DHLink; NUM_JOINTS] {
        &self.links
    }

    pub fn link(&self, i: usize) -> &DHLink {
        &self.links[i]
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = [0.0; NUM_PARAMS];
        for (i, link) in self.links.iter().enumerate() {
            for kind in ParamKind::ALL {
                out[kind.index(i)] = link.get(kind);
            }
        }
        out
    }

    pub fn unflatten(flat: &ParamVector) -> Result<Self> {
        let mut links = [DHLink::zero(); NUM_JOINTS];
        for (i, link) in links.iter_mut().enumerate() {
            *link = DHLink::new(
                flat[ParamKind::Alpha.index(i)],
                flat[ParamKind::A.index(i)],
                flat[ParamKind::D.index(i)],
                flat[ParamKind::Theta.index(i)],
            )?;
        }
        Ok(Self { links })
    }

    /// `self ⊕ delta`: adds a deviation vector coordinate-wise (radians for the
    /// angle blocks, millimetres for the length blocks).
    pub fn apply_deviation(&self, delta: &ParamVector) -> Result<Self> {
        let mut flat = self.flatten();
        for (x, dx) in flat.iter_mut().zip(delta) {
            *x += dx;
        }
        Self::unflatten(&flat)
    }

    /// Coordinate-wise `self - other`, with wrapped differences on angles.
    pub fn deviation_from(&self, other: &DHParams) -> ParamVector {
        let (a, b) = (self.flatten(), other.flatten());
        std::array::from_fn(|k| {
            if ParamKind::from_index(k).0.is_angle() {
                angle_difference(a[k], b[k])
            } else {
                a[k] - b[k]
            }
        })
    }
}

/// Commanded joint angles in radians, added to each link's `theta_offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig([f64; NUM_JOINTS]);

impl JointConfig {
    pub fn new(q: [f64; NUM_JOINTS]) -> Result<Self> {
        for (i, v) in q.iter().enumerate() {
            ensure_finite(&format!("q{}", i + 1), *v)?;
        }
        Ok(Self(q))
    }

    pub fn zero() -> Self {
        Self([0.0; NUM_JOINTS])
    }

    pub fn from_degrees(q_deg: [f64; NUM_JOINTS]) -> Result<Self> {
        Self::new(q_deg.map(f64::to_radians))
    }

    pub fn angles(&self) -> &[f64; NUM_JOINTS] {
        &self.0
    }

    pub fn to_degrees(&self) -> [f64; NUM_JOINTS] {
        self.0.map(f64::to_degrees)
    }
}

/// Rigid transform: rotation followed by translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self * other`.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `max |RᵀR - I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn determinant(&self) -> f64 {
        self.rotation.determinant()
    }
}

impl std::ops::Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        self.compose(&rhs)
    }
}

/// Wire anchor in the base frame and wire attachment point in frame 6 (both mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRig {
    pub base_point: Vector3<f64>,
    pub tool_offset: Vector3<f64>,
}

impl MeasurementRig {
    pub fn new(base_point: [f64; 3], tool_offset: [f64; 3]) -> Result<Self> {
        for (name, v) in [("base_point", base_point), ("tool_offset", tool_offset)] {
            for x in v {
                ensure_finite(name, x)?;
            }
        }
        Ok(Self {
            base_point: Vector3::from(base_point),
            tool_offset: Vector3::from(tool_offset),
        })
    }
}

/// Homogeneous matrix of one link with total joint angle `theta`.
#[rustfmt::skip]
pub(crate) fn dh_matrix(alpha: f64, a: f64, d: f64, theta: f64) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Matrix4::new(
        ct, -st * ca, st * sa, a * ct,
        st, ct * ca, -ct * sa, a * st,
        0.0, sa, ca, d,
        0.0, 0.0, 0.0, 1.0,
    )
}

pub fn dh_transform(link: &DHLink, q: f64) -> Result<Transform> {
    ensure_finite("q", q)?;
    let m = dh_matrix(link.alpha, link.a, link.d, link.theta_offset + q);
    Ok(Transform::from_homogeneous(&m))
}

/// Per-link homogeneous matrices `Γ_1..Γ_6` for a configuration.
pub(crate) fn link_matrices(params: &DHParams, q: &JointConfig) -> [Matrix4<f64>; NUM_JOINTS] {
    std::array::from_fn(|i| {
        let l = &params.links[i];
        dh_matrix(l.alpha, l.a, l.d, l.theta_offset + q.0[i])
    })
}

/// `Γ = Γ_1 Γ_2 ... Γ_6`.
pub fn forward_kinematics(params: &DHParams, q: &JointConfig) -> Transform {
    let chain = link_matrices(params, q)
        .iter()
        .fold(Matrix4::identity(), |acc, m| acc * m);
    Transform::from_homogeneous(&chain)
}

pub fn tool_position(params: &DHParams, q: &JointConfig, rig: &MeasurementRig) -> Vector3<f64> {
    forward_kinematics(params, q).transform_point(&rig.tool_offset)
}

/// Straight-line wire length from the anchor to the tool attachment point.
pub fn cable_length(params: &DHParams, q: &JointConfig, rig: &MeasurementRig) -> f64 {
    (tool_position(params, q, rig) - rig.base_point).norm()
}

pub(crate) fn homogeneous_point(p: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(p.x, p.y, p.z, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn zero_link_is_identity() {
        let t = dh_transform(&DHLink::zero(), 0.0).unwrap();
        assert_eq!(t, Transform::identity());
    }

    #[test]
    fn pure_offset_link() {
        let link = DHLink::new(0.0, 0.0, 5.0, 0.0).unwrap();
        let t = dh_transform(&link, 0.0).unwrap();
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn first_link_of_table() {
        let link = DHLink::from_degrees(-90.0, 250.0, 653.5, 0.0).unwrap();
        let t = dh_transform(&link, 0.0).unwrap();
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        assert!((t.rotation - expected).amax() < 1e-15);
        assert!((t.translation - Vector3::new(250.0, 0.0, 653.5)).amax() < 1e-12);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(matches!(
            dh_transform(&DHLink::zero(), f64::NAN),
            Err(Error::InvalidArgument(_))
        ));
        assert!(DHLink::new(f64::INFINITY, 0.0, 0.0, 0.0).is_err());
        assert!(JointConfig::new([0.0, 0.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(MeasurementRig::new([0.0; 3], [0.0, f64::NEG_INFINITY, 0.0]).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_close(wrap_angle(-PI), PI, 1e-15);
        assert_close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15);
        assert_close(wrap_angle(-7.0 * PI), PI, 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn chain_of_zero_links_is_identity() {
        let t = forward_kinematics(&DHParams::zero(), &JointConfig::zero());
        assert_eq!(t, Transform::identity());
    }

    #[test]
    fn home_pose_of_table() {
        let t = forward_kinematics(&DHParams::hsr_jr680(), &JointConfig::zero());
        assert!((t.translation - Vector3::new(-780.2, 0.0, 1959.1)).amax() < 1e-9);
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((t.rotation - expected).amax() < 1e-12);
    }

    #[test]
    fn link_order_matters() {
        let params = DHParams::hsr_jr680();
        let m = link_matrices(&params, &JointConfig::zero());
        let swapped = m[0] * m[2] * m[1] * m[3] * m[4] * m[5];
        let t = forward_kinematics(&params, &JointConfig::zero());
        let ts = Transform::from_homogeneous(&swapped);
        assert!((t.translation - ts.translation).norm() > 1.0);
    }

    #[test]
    fn tool_position_cases() {
        let rig0 = MeasurementRig::new([0.0; 3], [0.0; 3]).unwrap();
        let params = DHParams::hsr_jr680();
        let q = JointConfig::from_degrees([10.0, -20.0, 30.0, 5.0, 40.0, -60.0]).unwrap();
        assert_eq!(
            tool_position(&params, &q, &rig0),
            forward_kinematics(&params, &q).translation
        );

        let rig = MeasurementRig::new([0.0; 3], [1.0, 2.0, 3.0]).unwrap();
        let p = tool_position(&DHParams::zero(), &JointConfig::zero(), &rig);
        assert_eq!(p, Vector3::new(1.0, 2.0, 3.0));

        let rig = MeasurementRig::new([0.0; 3], [0.0, 0.0, 100.0]).unwrap();
        let p = tool_position(&params, &JointConfig::zero(), &rig);
        assert!((p - Vector3::new(-780.2, 0.0, 2059.1)).amax() < 1e-9);
    }

    #[test]
    fn cable_length_cases() {
        let params = DHParams::hsr_jr680();
        let q = JointConfig::zero();
        let home = tool_position(
            &params,
            &q,
            &MeasurementRig::new([0.0; 3], [0.0; 3]).unwrap(),
        );
        let rig = MeasurementRig::new(home.into(), [0.0; 3]).unwrap();
        assert_eq!(cable_length(&params, &q, &rig), 0.0);

        let rig = MeasurementRig::new([0.0; 3], [3.0, 4.0, 0.0]).unwrap();
        assert_close(cable_length(&DHParams::zero(), &q, &rig), 5.0, 1e-15);

        let rig = MeasurementRig::new([1000.0, 0.0, 0.0], [0.0; 3]).unwrap();
        // ‖(−1780.2, 0, 1959.1)‖
        assert_close(cable_length(&params, &q, &rig), 2647.108771849015, 1e-9);
    }

    #[test]
    fn flatten_layout() {
        let flat = DHParams::hsr_jr680().flatten();
        assert_close(flat[ParamKind::Alpha.index(0)], -PI / 2.0, 1e-15);
        assert_eq!(flat[ParamKind::A.index(1)], 900.0);
        assert_eq!(flat[ParamKind::D.index(3)], 1030.2);
        assert_close(flat[ParamKind::Theta.index(4)], PI / 2.0, 1e-15);
        assert_eq!(param_name(ParamKind::Theta.index(2)), "theta3");
        for k in 0..NUM_PARAMS {
            let (kind, link) = ParamKind::from_index(k);
            assert_eq!(kind.index(link), k);
        }
    }

    fn arb_link() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
        (
            -10.0..10.0f64,
            -2000.0..2000.0f64,
            -2000.0..2000.0f64,
            -10.0..10.0f64,
            -10.0..10.0f64,
        )
    }

    fn arb_flat() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0e3..1.0e3f64, NUM_PARAMS)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn link_transform_is_rigid((alpha, a, d, th, q) in arb_link()) {
            let link = DHLink::new(alpha, a, d, th).unwrap();
            let t = dh_transform(&link, q).unwrap();
            prop_assert!(t.orthonormality_error() < 1e-9);
            prop_assert!((t.determinant() - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn flatten_round_trip_is_bit_exact(flat in arb_flat()) {
            let flat: ParamVector = flat.try_into().unwrap();
            let params = DHParams::unflatten(&flat).unwrap();
            let once = params.flatten();
            let twice = DHParams::unflatten(&once).unwrap().flatten();
            prop_assert_eq!(once.map(f64::to_bits), twice.map(f64::to_bits));
        }

        #[test]
        fn chain_fold_association(flat in arb_flat(), q in prop::array::uniform6(-3.0..3.0f64)) {
            let flat: ParamVector = flat.try_into().unwrap();
            let params = DHParams::unflatten(&flat).unwrap();
            let q = JointConfig::new(q).unwrap();
            let m = link_matrices(&params, &q);
            let left = forward_kinematics(&params, &q).to_homogeneous();
            let right = m[0] * (m[1] * (m[2] * (m[3] * (m[4] * m[5]))));
            let mixed = (m[0] * m[1]) * ((m[2] * m[3]) * (m[4] * m[5]));
            // entries are up to ~6e3 mm here, so compare relative to magnitude
            let scale = left.amax().max(1.0);
            prop_assert!((left - right).amax() <= 1e-12 * scale);
            prop_assert!((left - mixed).amax() <= 1e-12 * scale);
            let via_transforms = params
                .links()
                .iter()
                .zip(q.angles())
                .map(|(l, qi)| dh_transform(l, *qi).unwrap())
                .fold(Transform::identity(), |acc, t| acc * t);
            prop_assert!((via_transforms.to_homogeneous() - left).amax() <= 1e-12 * scale);
        }

        #[test]
        fn cable_length_invariant_under_rotation(
            q in prop::array::uniform6(-2.0..2.0f64),
            axis in prop::array::uniform3(-1.0..1.0f64),
            angle in -3.0..3.0f64,
            base in prop::array::uniform3(-1500.0..1500.0f64),
            tool in prop::array::uniform3(-200.0..200.0f64),
        ) {
            let params = DHParams::hsr_jr680();
            let q = JointConfig::new(q).unwrap();
            let rig = MeasurementRig::new(base, tool).unwrap();
            let c = cable_length(&params, &q, &rig);
            prop_assert!(c >= 0.0);

            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let p = tool_position(&params, &q, &rig);
            let rotated = (rot * p - rot * rig.base_point).norm();
            prop_assert!((rotated - c).abs() < 1e-9);
        }
    }
}
