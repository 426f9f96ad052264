//! Unit quaternions, 3-vectors and the closed-form orientation formulas used
//! by the tracking pipeline.
//!
//! Conventions:
//!
//! * Components are stored scalar-first, `(w, x, y, z)`.
//! * Products are Hamilton products. Read as rotations, `a * b` applies `b`
//!   first and then `a`, so `R(a * b) = R(a) · R(b)`.
//! * Every angle that leaves this module is in degrees.

use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted by the checked constructor.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Below this angular gap (radians) slerp degrades to normalized lerp.
pub const SLERP_LINEAR_THRESHOLD: f64 = 1e-6;

/// A rotation-representing quaternion of unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A direction in 3-space. Need not be normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vector3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// An angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleDeg(pub f64);

impl AngleDeg {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_radians(self) -> f64 {
        self.0.to_radians()
    }
}

impl fmt::Display for AngleDeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.0)
    }
}

impl Vector3 {
    pub const X: Vector3 = Vector3::new(1.0, 0.0, 0.0);
    pub const Y: Vector3 = Vector3::new(0.0, 1.0, 0.0);
    pub const Z: Vector3 = Vector3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vector3 { x, y, z }
    }

    pub fn dot(self, other: Vector3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn scale(self, s: f64) -> Vector3 {
        Vector3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Result<Vector3> {
        if !self.is_finite() {
            return Err(Error::invalid("vector has non-finite components"));
        }
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::invalid("zero vector has no direction"));
        }
        Ok(self.scale(1.0 / n))
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from components that are already unit within
    /// [`UNIT_TOLERANCE`]. The result is renormalized.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Self::normalize(w, x, y, z)?;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!(
                "quaternion norm {n} is not unit within {UNIT_TOLERANCE:e}"
            )));
        }
        Ok(q)
    }

    /// Scales an arbitrary non-zero 4-vector onto the unit sphere.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::invalid("quaternion has non-finite components"));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 {
            return Err(Error::invalid("zero quaternion cannot be normalized"));
        }
        Ok(UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle` about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3, angle: AngleDeg) -> Result<Self> {
        let n = axis.normalized()?;
        if !angle.0.is_finite() {
            return Err(Error::invalid("angle is not finite"));
        }
        let half = angle.to_radians() / 2.0;
        let s = half.sin();
        Ok(UnitQuaternion {
            w: half.cos(),
            x: s * n.x,
            y: s * n.y,
            z: s * n.z,
        })
    }

    pub fn components(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector_part(self) -> Vector3 {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.components().iter().all(|c| c.is_finite())
    }

    /// Four-component inner product.
    pub fn dot(self, other: UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// `(-w, -x, -y, -z)`: the same rotation on the other sheet of the cover.
    pub fn negated(self) -> UnitQuaternion {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Conjugate, which is the inverse for unit quaternions.
    pub fn inverse(self) -> Result<UnitQuaternion> {
        if !self.is_finite() {
            return Err(Error::invalid("quaternion has non-finite components"));
        }
        Ok(self.conjugate())
    }

    pub(crate) fn conjugate(self) -> UnitQuaternion {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`, renormalized.
    pub fn hamilton(self, rhs: UnitQuaternion) -> Result<UnitQuaternion> {
        let (a, b) = (self, rhs);
        UnitQuaternion::normalize(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotates `v` by this quaternion.
    pub fn rotate(self, v: Vector3) -> Vector3 {
        let u = self.vector_part();
        let s = self.w;
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        Vector3::new(
            v.x + 2.0 * (s * uv.x + uuv.x),
            v.y + 2.0 * (s * uv.y + uuv.y),
            v.z + 2.0 * (s * uv.z + uuv.z),
        )
    }

    /// Rotation angle of this quaternion in `[0, 180]` degrees.
    pub fn angle(self) -> AngleDeg {
        shortest_angle_deg(self, UnitQuaternion::IDENTITY)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        UnitQuaternion::IDENTITY
    }
}

/// Panicking shorthand for [`UnitQuaternion::hamilton`]; only finite operands
/// can reach it through the public constructors.
impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        self.hamilton(rhs)
            .expect("product of finite unit quaternions is finite and non-zero")
    }
}

fn cross(a: Vector3, b: Vector3) -> Vector3 {
    Vector3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

pub fn hamilton_product(a: UnitQuaternion, b: UnitQuaternion) -> Result<UnitQuaternion> {
    a.hamilton(b)
}

pub fn inverse(q: UnitQuaternion) -> Result<UnitQuaternion> {
    q.inverse()
}

/// Orientation of a sensor relative to its calibration snapshot:
/// `q' = q * q_calib⁻¹`.
pub fn relative_to_calibration(q: UnitQuaternion, q_calib: UnitQuaternion) -> Result<UnitQuaternion> {
    q.hamilton(q_calib.inverse()?)
}

/// Re-expresses an orientation from the sensor's east-north-up frame in the
/// left-handed avatar frame: `(w, x, y, z) -> (w, y, -z, -x)`.
pub fn enu_to_left_handed(q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: q.w,
        x: q.y,
        y: -q.z,
        z: -q.x,
    }
}

/// Inverse of [`enu_to_left_handed`].
pub fn left_handed_to_enu(q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: q.w,
        x: -q.z,
        y: q.x,
        z: -q.y,
    }
}

/// Shortest rotation angle between two orientations in `[0, 180]` degrees,
/// equal to `2·acos(|a·b|)`.
pub fn shortest_angle_deg(a: UnitQuaternion, b: UnitQuaternion) -> AngleDeg {
    // Same value via atan2 on the relative rotation a⁻¹b, which keeps full
    // precision near 0° where acos loses half the digits.
    let w = a.dot(b);
    let (av, bv) = (a.vector_part(), b.vector_part());
    let v = Vector3::new(
        a.w * bv.x - b.w * av.x - (av.y * bv.z - av.z * bv.y),
        a.w * bv.y - b.w * av.y - (av.z * bv.x - av.x * bv.z),
        a.w * bv.z - b.w * av.z - (av.x * bv.y - av.y * bv.x),
    );
    AngleDeg(2.0 * v.norm().atan2(w.abs()).to_degrees())
}

/// Angle between two direction vectors in `[0, 180]` degrees.
pub fn vector_angle_deg(u: Vector3, v: Vector3) -> Result<AngleDeg> {
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::invalid("vector has non-finite components"));
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("angle against a zero vector is undefined"));
    }
    // atan2 keeps precision near 0 and 180 where acos is ill-conditioned.
    let cross = Vector3::new(
        u.y * v.z - u.z * v.y,
        u.z * v.x - u.x * v.z,
        u.x * v.y - u.y * v.x,
    );
    Ok(AngleDeg(cross.norm().atan2(u.dot(v)).to_degrees()))
}

/// Constant-angular-velocity interpolation along the shorter arc.
pub fn slerp(a: UnitQuaternion, b: UnitQuaternion, t: f64) -> Result<UnitQuaternion> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("slerp parameter {t} outside [0, 1]")));
    }
    let mut b = b;
    let mut d = a.dot(b);
    if d < 0.0 {
        b = b.negated();
        d = -d;
    }
    let d = d.min(1.0);
    let theta = d.acos();
    let (ka, kb) = if theta < SLERP_LINEAR_THRESHOLD {
        (1.0 - t, t)
    } else {
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    UnitQuaternion::normalize(
        ka * a.w + kb * b.w,
        ka * a.x + kb * b.x,
        ka * a.y + kb * b.y,
        ka * a.z + kb * b.z,
    )
}

pub fn from_axis_angle(axis: Vector3, angle: AngleDeg) -> Result<UnitQuaternion> {
    UnitQuaternion::from_axis_angle(axis, angle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn z90() -> UnitQuaternion {
        UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(90.0)).unwrap()
    }

    fn assert_quat_eq(a: UnitQuaternion, b: UnitQuaternion, eps: f64) {
        for (p, q) in a.components().iter().zip(b.components()) {
            assert_abs_diff_eq!(*p, q, epsilon = eps);
        }
    }

    #[test]
    fn identity_is_neutral() {
        let q = UnitQuaternion::normalize(0.3, -0.2, 0.5, 0.7).unwrap();
        assert_quat_eq(UnitQuaternion::IDENTITY * q, q, 1e-15);
        assert_quat_eq(q * UnitQuaternion::IDENTITY, q, 1e-15);
    }

    #[test]
    fn same_axis_angles_add() {
        let q = z90() * z90();
        assert_quat_eq(q, UnitQuaternion::new(0.0, 0.0, 0.0, 1.0).unwrap(), 1e-15);
    }

    #[test]
    fn inverse_is_conjugate() {
        assert_eq!(
            UnitQuaternion::IDENTITY.inverse().unwrap(),
            UnitQuaternion::IDENTITY
        );
        assert_quat_eq(
            z90().inverse().unwrap(),
            UnitQuaternion::new(H, 0.0, 0.0, -H).unwrap(),
            1e-15,
        );
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(UnitQuaternion::normalize(f64::NAN, 0.0, 0.0, 0.0).is_err());
        let bad = UnitQuaternion {
            w: f64::INFINITY,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(bad.inverse().is_err());
        assert!(hamilton_product(bad, UnitQuaternion::IDENTITY).is_err());
        assert!(UnitQuaternion::new(2.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn calibration_instant_is_identity() {
        let q = UnitQuaternion::normalize(0.1, 0.9, -0.3, 0.2).unwrap();
        assert_quat_eq(
            relative_to_calibration(q, q).unwrap(),
            UnitQuaternion::IDENTITY,
            1e-15,
        );
        assert_quat_eq(
            relative_to_calibration(q, UnitQuaternion::IDENTITY).unwrap(),
            q,
            1e-15,
        );
    }

    #[test]
    fn enu_mapping_reads_off_the_permutation() {
        assert_eq!(
            enu_to_left_handed(UnitQuaternion::IDENTITY),
            UnitQuaternion::IDENTITY
        );
        let q = enu_to_left_handed(UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap());
        assert_eq!(q.components(), [0.0, 0.0, -0.0, -1.0]);
        let p = UnitQuaternion::normalize(0.4, 0.1, -0.7, 0.2).unwrap();
        assert_eq!(left_handed_to_enu(enu_to_left_handed(p)), p);
    }

    #[test]
    fn shortest_angle_cases() {
        let q = UnitQuaternion::normalize(0.2, 0.4, 0.1, -0.8).unwrap();
        assert_eq!(shortest_angle_deg(q, q).0, 0.0);
        assert_abs_diff_eq!(
            shortest_angle_deg(UnitQuaternion::IDENTITY, z90()).0,
            90.0,
            epsilon = 1e-12
        );
        assert_eq!(shortest_angle_deg(q, q.negated()).0, 0.0);
    }

    #[test]
    fn vector_angle_cases() {
        let a = vector_angle_deg(Vector3::X, Vector3::Y).unwrap();
        assert_abs_diff_eq!(a.0, 90.0, epsilon = 1e-12);
        let u = Vector3::new(0.3, -1.2, 4.0);
        assert_eq!(vector_angle_deg(u, u).unwrap().0, 0.0);
        let b = vector_angle_deg(Vector3::X, Vector3::new(-2.0, 0.0, 0.0)).unwrap();
        assert_eq!(b.0, 180.0);
        assert!(vector_angle_deg(Vector3::new(0.0, 0.0, 0.0), Vector3::X).is_err());
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = UnitQuaternion::normalize(0.5, 0.5, -0.5, 0.5).unwrap();
        let b = z90();
        assert_quat_eq(slerp(a, b, 0.0).unwrap(), a, 1e-15);
        let end = slerp(a, b, 1.0).unwrap();
        assert!(shortest_angle_deg(end, b).0 < 1e-6);
        let mid = slerp(UnitQuaternion::IDENTITY, z90(), 0.5).unwrap();
        let want = UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(45.0)).unwrap();
        assert_quat_eq(mid, want, 1e-12);
        assert!(slerp(a, b, 1.5).is_err());
    }

    #[test]
    fn slerp_takes_the_short_way_round() {
        let a = UnitQuaternion::IDENTITY;
        let b = z90().negated();
        let mid = slerp(a, b, 0.5).unwrap();
        assert_abs_diff_eq!(shortest_angle_deg(mid, a).0, 45.0, epsilon = 1e-9);
    }

    #[test]
    fn slerp_near_parallel_falls_back_to_lerp() {
        let a = UnitQuaternion::IDENTITY;
        let b = UnitQuaternion::from_axis_angle(Vector3::X, AngleDeg(1e-8)).unwrap();
        let m = slerp(a, b, 0.5).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-12);
        assert!(shortest_angle_deg(m, a).0 <= shortest_angle_deg(a, b).0);
    }

    #[test]
    fn axis_angle_cases() {
        assert_quat_eq(
            UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(0.0)).unwrap(),
            UnitQuaternion::IDENTITY,
            0.0,
        );
        assert_quat_eq(z90(), UnitQuaternion::new(H, 0.0, 0.0, H).unwrap(), 1e-15);
        assert!(UnitQuaternion::from_axis_angle(Vector3::new(0.0, 0.0, 0.0), AngleDeg(3.0)).is_err());
    }

    #[test]
    fn rotate_matches_axis_angle() {
        let v = z90().rotate(Vector3::X);
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-15);
    }
}
