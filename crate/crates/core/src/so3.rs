//! Rotation kernel: unit quaternions, the skew operator, the SO(3)
//! exponential/logarithm maps and the closed-form inverse right Jacobian.
//!
//! # Conventions
//!
//! - Quaternions are Hamilton, stored scalar-first `(w, x, y, z)`.
//! - `to_rotation_matrix` is the active rotation, so `R(a ⊗ b) = R(a) R(b)`.
//! - A quaternion named `q_ab` maps vectors expressed in frame `b` into frame `a`:
//!   `v_a = R(q_ab) v_b`.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

/// 3×3 proper orthonormal matrix.
pub type RotationMatrix = Matrix3<f64>;

/// Below this angle exp/log use their second-order series.
const EXP_LOG_SMALL_ANGLE: f64 = 1e-7;

/// Below this angle the inverse-right-Jacobian coefficient is taken from its
/// Taylor series. The closed form loses ~1e-8 absolute to cancellation at 1e-4.
pub const JACOBIAN_SERIES_SWITCH: f64 = 1e-2;

/// Largest angle accepted by [`inverse_right_jacobian`].
pub const JACOBIAN_MAX_ANGLE: f64 = PI - 1e-6;

/// Unit quaternion, scalar first.
#[derive(Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UnitQuaternion({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Build from raw components, normalizing. Fails on non-finite or zero-norm input.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::OutOfRange { name: "quaternion norm", value: n });
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_map(&(axis * (angle / n)))
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn inverse(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        quat_to_rotmat(self)
    }

    /// Rotate a vector: `R(q) v`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        // v + 2w (u × v) + 2 u × (u × v)
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Same rotation with `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            *self
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.canonical();
        2.0 * q.vector().norm().atan2(q.w)
    }

    /// Recover the quaternion of a rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(r: &RotationMatrix) -> Self {
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let (w, x, y, z);
        if trace > r[(0, 0)] && trace > r[(1, 1)] && trace > r[(2, 2)] {
            let s = 2.0 * (1.0 + trace).sqrt();
            w = 0.25 * s;
            x = (r[(2, 1)] - r[(1, 2)]) / s;
            y = (r[(0, 2)] - r[(2, 0)]) / s;
            z = (r[(1, 0)] - r[(0, 1)]) / s;
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            w = (r[(2, 1)] - r[(1, 2)]) / s;
            x = 0.25 * s;
            y = (r[(0, 1)] + r[(1, 0)]) / s;
            z = (r[(0, 2)] + r[(2, 0)]) / s;
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
            w = (r[(0, 2)] - r[(2, 0)]) / s;
            x = (r[(0, 1)] + r[(1, 0)]) / s;
            y = 0.25 * s;
            z = (r[(1, 2)] + r[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
            w = (r[(1, 0)] - r[(0, 1)]) / s;
            x = (r[(0, 2)] + r[(2, 0)]) / s;
            y = (r[(1, 2)] + r[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::normalized(w, x, y, z).canonical()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        quat_multiply(&self, &rhs)
    }
}

impl serde::Serialize for UnitQuaternion {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.wxyz().serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for UnitQuaternion {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(deserializer)?;
        UnitQuaternion::from_wxyz(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

/// Rotation vector (axis × angle) with angle wrapped into `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationVector(Vector3<f64>);

impl RotationVector {
    pub fn new(theta: Vector3<f64>) -> Self {
        let angle = theta.norm();
        if angle <= PI {
            return Self(theta);
        }
        let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
        Self(theta * (wrapped / angle))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::normalized(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

pub fn quat_inverse(q: &UnitQuaternion) -> UnitQuaternion {
    q.inverse()
}

pub fn quat_to_rotmat(q: &UnitQuaternion) -> RotationMatrix {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Matrix3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp_map(theta: &Vector3<f64>) -> UnitQuaternion {
    let angle2 = theta.norm_squared();
    let angle = angle2.sqrt();
    let (w, k) = if angle < EXP_LOG_SMALL_ANGLE {
        (1.0 - angle2 / 8.0, 0.5 - angle2 / 48.0)
    } else {
        let half = 0.5 * angle;
        (half.cos(), half.sin() / angle)
    };
    UnitQuaternion::normalized(w, k * theta.x, k * theta.y, k * theta.z)
}

pub fn log_map(q: &UnitQuaternion) -> Vector3<f64> {
    let mut q = q.canonical();
    let v = q.vector();
    let n = v.norm();
    if n < EXP_LOG_SMALL_ANGLE {
        // 2 atan(n / w) / n ≈ (2 / w) (1 - n² / (3 w²))
        let k = 2.0 / q.w * (1.0 - n * n / (3.0 * q.w * q.w));
        return v * k;
    }
    if q.w.abs() < 1e-15 {
        // Half-turn: q and -q are the same rotation. Pick the sign that makes
        // the largest-magnitude axis component positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            q = UnitQuaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
        }
        return q.vector() * (PI / n);
    }
    v * (2.0 * n.atan2(q.w) / n)
}

/// Scalar multiplying `skew(θ)²` in the inverse right Jacobian.
pub fn inverse_right_jacobian_coefficient(angle: f64) -> f64 {
    if angle < JACOBIAN_SERIES_SWITCH {
        let a2 = angle * angle;
        1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0 + a2 * a2 * a2 / 1_209_600.0
    } else {
        1.0 / (angle * angle) - (1.0 + angle.cos()) / (2.0 * angle * angle.sin())
    }
}

/// `J⁻¹(θ) = I + ½ skew(θ) + (1/‖θ‖² − (1 + cos‖θ‖) / (2‖θ‖ sin‖θ‖)) skew(θ)²`.
///
/// This is the inverse of the classical right Jacobian of SO(3), so
/// `Log(Exp(θ) Exp(δ)) ≈ θ + J⁻¹(θ) δ`.
pub fn inverse_right_jacobian(theta: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let angle = theta.norm();
    if !(angle < JACOBIAN_MAX_ANGLE) {
        return Err(Error::JacobianDomain { angle });
    }
    let s = skew(theta);
    Ok(Matrix3::identity() + 0.5 * s + inverse_right_jacobian_coefficient(angle) * s * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
        UnitQuaternion::from_wxyz(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .unwrap()
    }

    fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    /// Rodrigues' formula, independent of the quaternion path.
    fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).matrix()
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_quat(&mut rng);
        let p = UnitQuaternion::identity() * q;
        assert!((p.to_rotation_matrix() - q.to_rotation_matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let qz = UnitQuaternion::from_axis_angle(&Vector3::z(), PI / 2.0);
        let half = qz * qz;
        let expected = rodrigues(&Vector3::z(), PI);
        assert!((half.to_rotation_matrix() - expected).abs().max() < 1e-12);
        assert!((half.to_rotation_matrix() - qz.to_rotation_matrix() * qz.to_rotation_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn product_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            let lhs = (a * b).to_rotation_matrix();
            let rhs = a.to_rotation_matrix() * b.to_rotation_matrix();
            assert!((lhs - rhs).abs().max() < 1e-12);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_is_transpose() {
        assert_eq!(UnitQuaternion::identity().inverse(), UnitQuaternion::identity());
        let n = Vector3::new(0.3, -0.5, 0.8);
        let q = UnitQuaternion::from_axis_angle(&n, 0.7).inverse();
        let r = UnitQuaternion::from_axis_angle(&(-n), 0.7);
        assert!((q.to_rotation_matrix() - r.to_rotation_matrix()).abs().max() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let diff = q.inverse().to_rotation_matrix() - q.to_rotation_matrix().transpose();
            assert!(diff.abs().max() < 1e-12);
            assert!((q * q.inverse()).angle() < 1e-12);
        }
    }

    #[test]
    fn rotation_matrix_golden_convention() {
        assert_eq!(quat_to_rotmat(&UnitQuaternion::identity()), Matrix3::identity());
        let qz = UnitQuaternion::from_axis_angle(&Vector3::z(), PI / 2.0);
        let v = qz.to_rotation_matrix() * Vector3::x();
        assert!((v - Vector3::y()).norm() < 1e-15);
        assert!((qz.rotate(&Vector3::x()) - Vector3::y()).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let axis = random_vec(&mut rng, 1.0);
            let angle = rng.random_range(-3.0..3.0);
            let q = UnitQuaternion::from_axis_angle(&axis, angle);
            let r = q.to_rotation_matrix();
            assert!((r - rodrigues(&axis, angle)).abs().max() < 1e-12);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let v = random_vec(&mut rng, 5.0);
            assert!((q.rotate(&v) - r * v).norm() < 1e-12);
        }
    }

    #[test]
    fn double_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_quat(&mut rng);
        let neg = UnitQuaternion::from_wxyz(-q.w(), -q.x(), -q.y(), -q.z()).unwrap();
        assert!((q.to_rotation_matrix() - neg.to_rotation_matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn from_rotation_matrix_recovers_quaternion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
            assert!((back.to_rotation_matrix() - q.to_rotation_matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn skew_is_cross_product() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(skew(&Vector3::z()) * Vector3::x(), Vector3::y());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = random_vec(&mut rng, 10.0);
            let b = random_vec(&mut rng, 10.0);
            let cross = Vector3::new(
                a.y * b.z - a.z * b.y,
                a.z * b.x - a.x * b.z,
                a.x * b.y - a.y * b.x,
            );
            assert_eq!(skew(&a) * b, cross);
            assert_eq!(skew(&a) + skew(&a).transpose(), Matrix3::zeros());
        }
    }

    #[test]
    fn exp_map_definition() {
        assert_eq!(exp_map(&Vector3::zeros()), UnitQuaternion::identity());
        let q = exp_map(&Vector3::new(0.0, 0.0, PI / 2.0));
        let s = (PI / 4.0).sin();
        assert!((q.w() - (PI / 4.0).cos()).abs() < 1e-15);
        assert!(q.x().abs() < 1e-15 && q.y().abs() < 1e-15);
        assert!((q.z() - s).abs() < 1e-15);
        // series branch agrees with the trig branch just across the switch
        let tiny = Vector3::new(3e-8, -4e-8, 1e-8);
        let t = exp_map(&tiny);
        let half = 0.5 * tiny.norm();
        assert!((t.w() - half.cos()).abs() < 1e-16);
        assert!((t.vector() - tiny * (half.sin() / tiny.norm())).norm() < 1e-22);
    }

    #[test]
    fn log_map_definition() {
        assert_eq!(log_map(&UnitQuaternion::identity()), Vector3::zeros());
        let q = UnitQuaternion::from_axis_angle(&Vector3::y(), PI / 2.0);
        assert!((log_map(&q) - Vector3::new(0.0, PI / 2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn log_map_half_turn_tie_break() {
        let q = UnitQuaternion::from_wxyz(0.0, 0.2, -0.9, 0.1).unwrap();
        let neg = UnitQuaternion::from_wxyz(0.0, -0.2, 0.9, -0.1).unwrap();
        let a = log_map(&q);
        let b = log_map(&neg);
        assert_eq!(a, b);
        assert!((a.norm() - PI).abs() < 1e-12);
        assert!(a.y > 0.0);
        assert!((exp_map(&a).to_rotation_matrix() - q.to_rotation_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let dir = random_vec(&mut rng, 1.0).normalize();
            let angle = rng.random_range(0.0..PI - 1e-3);
            let theta = dir * angle;
            assert!((log_map(&exp_map(&theta)) - theta).norm() < 1e-10);

            let q = random_quat(&mut rng);
            let back = exp_map(&log_map(&q));
            let same = (back.wxyz().iter().zip(q.wxyz()).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            let flipped = (back.wxyz().iter().zip(q.wxyz()).map(|(a, b)| (a + b).abs()))
                .fold(0.0, f64::max);
            assert!(same.min(flipped) < 1e-12);
        }
        for scale in [1e-9, 1e-8, 5e-8, 2e-7] {
            let theta = Vector3::new(scale, -0.5 * scale, 0.25 * scale);
            assert!((log_map(&exp_map(&theta)) - theta).norm() < 1e-20);
        }
    }

    #[test]
    fn rotation_vector_wraps() {
        let v = RotationVector::new(Vector3::new(0.0, 0.0, 1.5 * PI));
        assert!((v.as_vector() - Vector3::new(0.0, 0.0, -0.5 * PI)).norm() < 1e-12);
        let u = RotationVector::new(Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(u.into_inner(), Vector3::new(0.1, 0.2, 0.3));
        let w = RotationVector::new(Vector3::new(5.0 * PI, 0.0, 0.0));
        assert!(w.angle() <= PI + 1e-12);
    }

    /// Classical right Jacobian by its power series Σ (-skew θ)^k / (k+1)!.
    fn right_jacobian_series(theta: &Vector3<f64>) -> Matrix3<f64> {
        let s = -skew(theta);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..40 {
            term = term * s / (k as f64 + 1.0);
            sum += term;
        }
        sum
    }

    #[test]
    fn inverse_right_jacobian_zero_is_identity() {
        assert_eq!(inverse_right_jacobian(&Vector3::zeros()).unwrap(), Matrix3::identity());
    }

    #[test]
    fn inverse_right_jacobian_inverts_right_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let theta = random_vec(&mut rng, 1.0).normalize();
            let prod = inverse_right_jacobian(&theta).unwrap() * right_jacobian_series(&theta);
            assert!((prod - Matrix3::identity()).abs().max() < 1e-9);
            let theta = random_vec(&mut rng, 1.0).normalize() * rng.random_range(0.0..3.0);
            let prod = inverse_right_jacobian(&theta).unwrap() * right_jacobian_series(&theta);
            assert!((prod - Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn inverse_right_jacobian_symmetric_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let theta = random_vec(&mut rng, 1.8);
            let rest = inverse_right_jacobian(&theta).unwrap() - Matrix3::identity() - 0.5 * skew(&theta);
            assert!((rest - rest.transpose()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn inverse_right_jacobian_coefficient_values() {
        // Values from a 50-digit evaluation of the closed form.
        let exact = [
            (1e-4, 0.083333333347222222225529100529927),
            (1e-2, 0.083333472222552910879631717310613),
            (0.5, 0.083682635354059894959478885571893),
            (2.0, 0.089476846016417324248395003351434),
        ];
        for (angle, value) in exact {
            let c = inverse_right_jacobian_coefficient(angle);
            assert!((c - value).abs() < 1e-12 * value.max(1.0), "angle {angle}: {c} vs {value}");
        }
        assert!((inverse_right_jacobian_coefficient(0.0) - 1.0 / 12.0).abs() < 1e-18);
        // smooth across the switch
        let below = inverse_right_jacobian_coefficient(JACOBIAN_SERIES_SWITCH * (1.0 - 1e-12));
        let above = inverse_right_jacobian_coefficient(JACOBIAN_SERIES_SWITCH * (1.0 + 1e-12));
        assert!((below - above).abs() / above < 1e-9);
    }

    #[test]
    fn inverse_right_jacobian_rejects_half_turn() {
        assert!(matches!(
            inverse_right_jacobian(&Vector3::new(PI, 0.0, 0.0)),
            Err(Error::JacobianDomain { .. })
        ));
        assert!(inverse_right_jacobian(&Vector3::new(0.0, PI - 1e-6, 0.0)).is_err());
        assert!(inverse_right_jacobian(&Vector3::new(0.0, PI - 2e-6, 0.0)).is_ok());
    }
}
