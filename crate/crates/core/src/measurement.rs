//! Board-pose measurement model.
//!
//! A camera reports the pose of the board in its own frame, `(p_cb, q_cb)`.
//! The prediction from the filter state is
//!
//! ```text
//! p̂_cb = R(q_ic)ᵀ [ R(q_ig) (p_gb − p_gi) − p_ic ]
//! q̂_cb = q_ic⁻¹ ⊗ q_ig ⊗ q_gb
//! ```
//!
//! and the residual is `[p_cb − p̂_cb ; Log(q̂_cb⁻¹ ⊗ q_cb)]`.

use crate::error::Result;
use crate::so3::{inverse_right_jacobian, log_map, skew, UnitQuaternion};
use crate::state::{camera_offset, FilterState, WorldModel, POSITION, THETA};
use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};

/// One board detection.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPoseMeasurement {
    pub cam_index: usize,
    /// Timestamp (sensor clock until translated).
    pub t_s: f64,
    /// Board origin in the camera frame, m.
    pub p_cb: Vector3<f64>,
    /// Rotation taking board-frame vectors into the camera frame.
    pub q_cb: UnitQuaternion,
    /// Covariance of `[position (m); rotation (rad)]`.
    pub r_meas: Matrix6<f64>,
}

impl CameraPoseMeasurement {
    /// Measurement with the default noise model.
    pub fn new(cam_index: usize, t_s: f64, p_cb: Vector3<f64>, q_cb: UnitQuaternion) -> Self {
        Self { cam_index, t_s, p_cb, q_cb, r_meas: default_measurement_covariance() }
    }

    pub fn with_covariance(mut self, r_meas: Matrix6<f64>) -> Self {
        self.r_meas = r_meas;
        self
    }
}

/// Planar fiducials are noisier in depth and in the rotation about the optical axis.
pub fn default_measurement_covariance() -> Matrix6<f64> {
    let deg = std::f64::consts::PI / 180.0;
    Matrix6::from_diagonal(&Vector6::new(
        0.005f64.powi(2),
        0.005f64.powi(2),
        0.010f64.powi(2),
        (0.5 * deg).powi(2),
        (0.5 * deg).powi(2),
        (1.0 * deg).powi(2),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedMeasurement {
    pub p_cb: Vector3<f64>,
    pub q_cb: UnitQuaternion,
}

/// `[position residual (m); rotation residual (rad)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual(pub Vector6<f64>);

impl Residual {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn position(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn vector(&self) -> &Vector6<f64> {
        &self.0
    }
}

pub fn predict_measurement(
    state: &FilterState,
    cam_index: usize,
    world: &WorldModel,
) -> Result<PredictedMeasurement> {
    let cam = state.camera(cam_index)?;
    let q_ci = cam.q_ic.inverse();
    let board_in_imu = state.imu.q_ig.rotate(&(world.p_gb - state.imu.position));
    Ok(PredictedMeasurement {
        p_cb: q_ci.rotate(&(board_in_imu - cam.p_ic)),
        q_cb: q_ci * state.imu.q_ig * world.q_gb,
    })
}

pub fn compute_residual(z: &CameraPoseMeasurement, predicted: &PredictedMeasurement) -> Residual {
    let dp = z.p_cb - predicted.p_cb;
    let dtheta = log_map(&(predicted.q_cb.inverse() * z.q_cb));
    Residual(Vector6::new(dp.x, dp.y, dp.z, dtheta.x, dtheta.y, dtheta.z))
}

/// Measurement Jacobian `H` (6 × (15 + 6N)) of `ẑ ⊟ z` with respect to the
/// error state, evaluated at `residual`.
///
/// The rotation rows carry the inverse right Jacobian at `θ = Log(z⁻¹ ⊗ ẑ)`;
/// a zero residual gives the plain prediction Jacobian.
pub fn compute_h(
    state: &FilterState,
    cam_index: usize,
    world: &WorldModel,
    residual: &Residual,
) -> Result<DMatrix<f64>> {
    let cam = state.camera(cam_index)?;
    let r_ig = state.imu.q_ig.to_rotation_matrix();
    let r_ci = cam.q_ic.to_rotation_matrix().transpose();
    let r_cb = (cam.q_ic.inverse() * state.imu.q_ig * world.q_gb).to_rotation_matrix();

    let board_in_imu = r_ig * (world.p_gb - state.imu.position);
    let p_cb = r_ci * (board_in_imu - cam.p_ic);

    let jr_inv = inverse_right_jacobian(&-residual.rotation())?;
    // ẑ_q ⊗ Exp(A δx) perturbation directions
    let rot_cam: Matrix3<f64> = -r_cb.transpose();
    let rot_imu = rot_cam * r_ci;

    let mut h = DMatrix::zeros(6, state.error_dim());
    let o = camera_offset(cam_index);
    h.fixed_view_mut::<3, 3>(0, THETA).copy_from(&(r_ci * skew(&board_in_imu)));
    h.fixed_view_mut::<3, 3>(0, POSITION).copy_from(&(-r_ci * r_ig));
    h.fixed_view_mut::<3, 3>(0, o).copy_from(&skew(&p_cb));
    h.fixed_view_mut::<3, 3>(0, o + 3).copy_from(&(-r_ci));
    h.fixed_view_mut::<3, 3>(3, THETA).copy_from(&(jr_inv * rot_imu));
    h.fixed_view_mut::<3, 3>(3, o).copy_from(&(jr_inv * rot_cam));
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::so3::exp_map;
    use crate::state::{initialize_imu_pose, CameraExtrinsic, ImuState, BIAS_ACCEL, BIAS_GYRO, VELOCITY};
    use crate::testutil::{random_quat, random_state, random_vec};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn identity_state(n: usize) -> FilterState {
        FilterState::new(ImuState::default(), vec![CameraExtrinsic::default(); n]).unwrap()
    }

    #[test]
    fn prediction_by_substitution() {
        let world = WorldModel { p_gb: Vector3::new(0.0, 0.0, 2.0), ..WorldModel::default() };
        let pred = predict_measurement(&identity_state(1), 0, &world).unwrap();
        assert_eq!(pred.p_cb, Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(pred.q_cb, UnitQuaternion::identity());

        let mut moved = identity_state(1);
        moved.imu.position.x = 0.3;
        let shifted = predict_measurement(&moved, 0, &world).unwrap();
        assert!((shifted.p_cb - Vector3::new(-0.3, 0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn invalid_camera_index() {
        let world = WorldModel::default();
        let s = identity_state(2);
        assert_eq!(
            predict_measurement(&s, 2, &world),
            Err(Error::InvalidCamera { index: 2, cameras: 2 })
        );
        assert!(compute_h(&s, 5, &world, &Residual::zeros()).is_err());
    }

    #[test]
    fn prediction_inverts_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let world = WorldModel {
                p_gb: random_vec(&mut rng, 3.0),
                q_gb: random_quat(&mut rng),
                ..WorldModel::default()
            };
            let state = random_state(&mut rng, 1);
            let pred = predict_measurement(&state, 0, &world).unwrap();
            let z = CameraPoseMeasurement::new(0, 0.0, pred.p_cb, pred.q_cb);
            let (q_ig, p_gi) = initialize_imu_pose(&state.cameras[0], &world, &z);
            assert!((q_ig.to_rotation_matrix() - state.imu.q_ig.to_rotation_matrix()).abs().max() < 1e-9);
            assert!((p_gi - state.imu.position).norm() < 1e-9);
        }
    }

    #[test]
    fn residual_definition() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.4);
        let pred = PredictedMeasurement { p_cb: Vector3::new(0.1, 0.2, 1.0), q_cb: q };
        let z = CameraPoseMeasurement::new(0, 0.0, pred.p_cb, q);
        assert!(compute_residual(&z, &pred).vector().norm() < 1e-15);

        let eps = 1e-4;
        let z = CameraPoseMeasurement::new(0, 0.0, pred.p_cb, q * exp_map(&Vector3::new(eps, 0.0, 0.0)));
        let r = compute_residual(&z, &pred);
        assert!((r.rotation() - Vector3::new(eps, 0.0, 0.0)).norm() < eps * eps);
        assert_eq!(r.position(), Vector3::zeros());
    }

    #[test]
    fn residual_at_half_turn_is_finite() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::new(0.0, 1.0, 1.0), 0.3);
        let pred = PredictedMeasurement { p_cb: Vector3::zeros(), q_cb: q };
        let flipped = q * UnitQuaternion::from_axis_angle(&Vector3::x(), PI);
        let z = CameraPoseMeasurement::new(0, 0.0, Vector3::zeros(), flipped);
        let r = compute_residual(&z, &pred);
        assert!(r.0.iter().all(|v| v.is_finite()));
        assert!((r.rotation().norm() - PI).abs() < 1e-9);
    }

    #[test]
    fn h_golden_blocks() {
        let world = WorldModel { p_gb: Vector3::new(0.5, -0.2, 2.0), ..WorldModel::default() };
        let h = compute_h(&identity_state(1), 0, &world, &Residual::zeros()).unwrap();
        let j_pc = h.fixed_view::<3, 3>(0, 18).into_owned();
        assert_eq!(j_pc, -Matrix3::identity());
    }

    #[test]
    fn h_sparsity_and_camera_placement() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let world = WorldModel { p_gb: random_vec(&mut rng, 2.0), q_gb: random_quat(&mut rng), ..WorldModel::default() };
        let state = random_state(&mut rng, 3);
        let h = compute_h(&state, 1, &world, &Residual::zeros()).unwrap();
        assert_eq!(h.ncols(), 33);
        for col in (BIAS_GYRO..BIAS_GYRO + 3)
            .chain(VELOCITY..VELOCITY + 3)
            .chain(BIAS_ACCEL..BIAS_ACCEL + 3)
            .chain(15..21)
            .chain(27..33)
        {
            assert!(h.column(col).iter().all(|v| *v == 0.0), "column {col}");
        }
        assert!(h.columns(21, 6).iter().any(|v| *v != 0.0));
        // rotation rows have no position columns
        assert!(h.view((3, POSITION), (3, 3)).iter().all(|v| *v == 0.0));
        assert!(h.view((3, 24), (3, 3)).iter().all(|v| *v == 0.0));
    }

    /// Central differences of the negated residual in every error direction.
    fn numeric_h(
        state: &FilterState,
        cam: usize,
        world: &WorldModel,
        z: &CameraPoseMeasurement,
        delta: f64,
    ) -> DMatrix<f64> {
        let n = state.error_dim();
        let mut h = DMatrix::zeros(6, n);
        for j in 0..n {
            let mut dx = DVector::zeros(n);
            dx[j] = delta;
            let plus = state.compose(&dx).unwrap();
            let minus = state.compose(&-dx).unwrap();
            let yp = compute_residual(z, &predict_measurement(&plus, cam, world).unwrap());
            let ym = compute_residual(z, &predict_measurement(&minus, cam, world).unwrap());
            h.set_column(j, &(-(yp.0 - ym.0) / (2.0 * delta)));
        }
        h
    }

    fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max() / b.abs().max().max(1.0)
    }

    fn perturbed_measurement(
        rng: &mut impl Rng,
        state: &FilterState,
        cam: usize,
        world: &WorldModel,
        max_angle: f64,
    ) -> CameraPoseMeasurement {
        let pred = predict_measurement(state, cam, world).unwrap();
        let axis = random_vec(rng, 1.0);
        let angle = rng.random_range(0.0..max_angle);
        CameraPoseMeasurement::new(
            cam,
            0.0,
            pred.p_cb + random_vec(rng, 0.2),
            pred.q_cb * UnitQuaternion::from_axis_angle(&axis, angle),
        )
    }

    #[test]
    fn h_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 1..=3 {
            for _ in 0..100 {
                let world = WorldModel {
                    p_gb: random_vec(&mut rng, 2.0),
                    q_gb: random_quat(&mut rng),
                    ..WorldModel::default()
                };
                let state = random_state(&mut rng, n);
                let cam = rng.random_range(0..n);
                let z = perturbed_measurement(&mut rng, &state, cam, &world, 1.5);
                let r = compute_residual(&z, &predict_measurement(&state, cam, &world).unwrap());
                let h = compute_h(&state, cam, &world, &r).unwrap();
                let fd = numeric_h(&state, cam, &world, &z, 1e-6);
                assert!(relative_error(&h, &fd) < 1e-5, "rel err {}", relative_error(&h, &fd));
            }
        }
    }

    #[test]
    fn right_jacobian_variant_fails_finite_differences() {
        // Using J_r instead of J_r⁻¹ in the rotation rows is the losing reading.
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let world = WorldModel { p_gb: random_vec(&mut rng, 2.0), ..WorldModel::default() };
        let state = random_state(&mut rng, 2);
        let z = perturbed_measurement(&mut rng, &state, 1, &world, 1.5);
        let r = compute_residual(&z, &predict_measurement(&state, 1, &world).unwrap());
        let mut h = compute_h(&state, 1, &world, &r).unwrap();
        let theta = -r.rotation();
        let jr_inv = inverse_right_jacobian(&theta).unwrap();
        let jr = jr_inv.try_inverse().unwrap();
        // J_r · A = J_r² · (J_r⁻¹ · A)
        let swap = jr * jr;
        let rows = h.rows(3, 3).into_owned();
        h.rows_mut(3, 3).copy_from(&(swap * rows));
        let fd = numeric_h(&state, 1, &world, &z, 1e-6);
        assert!(relative_error(&h, &fd) > 1e-2);
    }
}
