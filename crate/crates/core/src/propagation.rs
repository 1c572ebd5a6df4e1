//! IMU-driven propagation of the state mean and the error covariance.
//!
//! Continuous error dynamics `δẋ = F δx + G n` with `n = [n_g, n_wg, n_a, n_wa]`.
//! Camera extrinsics are constant, so their rows in `F` and `G` are zero and
//! only the 15×15 IMU block of the transition differs from identity.

use crate::error::{Error, Result};
use crate::so3::{exp_map, skew};
use crate::state::{
    ErrorCovariance, FilterState, ImuNoiseParams, BIAS_ACCEL, BIAS_GYRO, IMU_DIM, POSITION, THETA,
    VELOCITY,
};
use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

/// Largest single propagation step, s.
pub const MAX_STEP: f64 = 0.1;
/// Sub-step length used to bridge gaps in the IMU stream, s.
pub const SUB_STEP: f64 = 0.01;

pub type ImuMatrix = SMatrix<f64, IMU_DIM, IMU_DIM>;
pub type ImuNoiseMatrix = SMatrix<f64, IMU_DIM, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Timestamp, s.
    pub t_s: f64,
    /// Measured angular rate in the IMU frame, rad/s.
    pub gyro: Vector3<f64>,
    /// Measured specific force in the IMU frame, m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t_s.is_finite()
            && self.gyro.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
    }
}

/// Bias-corrected angular rate and specific force.
pub fn corrected(state: &FilterState, sample: &ImuSample) -> (Vector3<f64>, Vector3<f64>) {
    (sample.gyro - state.imu.bias_gyro, sample.accel - state.imu.bias_accel)
}

/// Propagate the mean over `dt` holding the sample constant.
pub fn propagate_mean(
    state: &FilterState,
    sample: &ImuSample,
    gravity: &Vector3<f64>,
    dt: f64,
) -> Result<FilterState> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(Error::InvalidTimeStep { dt });
    }
    let (omega, accel) = corrected(state, sample);
    let mut out = state.clone();
    let imu = &mut out.imu;
    // body rate ω turns the global→IMU rotation by -ω dt on the IMU side;
    // the specific force is rotated with the mid-step attitude
    let q_mid = exp_map(&(-omega * (0.5 * dt))) * imu.q_ig;
    let accel_global = q_mid.inverse().rotate(&accel) + gravity;
    imu.position += imu.velocity * dt + 0.5 * accel_global * dt * dt;
    imu.velocity += accel_global * dt;
    imu.q_ig = exp_map(&(-omega * dt)) * imu.q_ig;
    Ok(out)
}

/// IMU blocks of `F` and `G`.
pub fn imu_error_dynamics(
    state: &FilterState,
    omega: &Vector3<f64>,
    accel: &Vector3<f64>,
) -> (ImuMatrix, ImuNoiseMatrix) {
    let r_gi = state.imu.q_ig.to_rotation_matrix().transpose();
    let eye = Matrix3::identity();
    let mut f = ImuMatrix::zeros();
    f.fixed_view_mut::<3, 3>(THETA, THETA).copy_from(&-skew(omega));
    f.fixed_view_mut::<3, 3>(THETA, BIAS_GYRO).copy_from(&-eye);
    f.fixed_view_mut::<3, 3>(VELOCITY, THETA).copy_from(&(-r_gi * skew(accel)));
    f.fixed_view_mut::<3, 3>(VELOCITY, BIAS_ACCEL).copy_from(&-r_gi);
    f.fixed_view_mut::<3, 3>(POSITION, VELOCITY).copy_from(&eye);

    let mut g = ImuNoiseMatrix::zeros();
    g.fixed_view_mut::<3, 3>(THETA, 0).copy_from(&-eye);
    g.fixed_view_mut::<3, 3>(BIAS_GYRO, 3).copy_from(&eye);
    g.fixed_view_mut::<3, 3>(VELOCITY, 6).copy_from(&-r_gi);
    g.fixed_view_mut::<3, 3>(BIAS_ACCEL, 9).copy_from(&eye);
    (f, g)
}

/// Continuous-time error transition matrix, `(15+6N)²`.
pub fn compute_f(state: &FilterState, omega: &Vector3<f64>, accel: &Vector3<f64>) -> DMatrix<f64> {
    let n = state.error_dim();
    let (f_imu, _) = imu_error_dynamics(state, omega, accel);
    let mut f = DMatrix::zeros(n, n);
    f.view_mut((0, 0), (IMU_DIM, IMU_DIM)).copy_from(&f_imu);
    f
}

/// Noise input matrix, `(15+6N) × 12`.
pub fn compute_g(state: &FilterState) -> DMatrix<f64> {
    let (_, g_imu) = imu_error_dynamics(state, &Vector3::zeros(), &Vector3::zeros());
    let mut g = DMatrix::zeros(state.error_dim(), 12);
    g.view_mut((0, 0), (IMU_DIM, 12)).copy_from(&g_imu);
    g
}

fn continuous_noise(noise: &ImuNoiseParams) -> SMatrix<f64, 12, 12> {
    let mut q = SMatrix::<f64, 12, 12>::zeros();
    for (block, sigma) in [
        noise.sigma_gyro,
        noise.sigma_gyro_walk,
        noise.sigma_accel,
        noise.sigma_accel_walk,
    ]
    .into_iter()
    .enumerate()
    {
        for k in 0..3 {
            q[(3 * block + k, 3 * block + k)] = sigma * sigma;
        }
    }
    q
}

/// Second-order transition `Φ = I + F dt + ½ F² dt²` and discrete noise
/// `Q_d = Φ G Q_c Gᵀ Φᵀ dt` for the IMU block.
pub fn discretize(
    f: &ImuMatrix,
    g: &ImuNoiseMatrix,
    noise: &ImuNoiseParams,
    dt: f64,
) -> (ImuMatrix, ImuMatrix) {
    let fdt = f * dt;
    let phi = ImuMatrix::identity() + fdt + 0.5 * fdt * fdt;
    let phi_g = phi * g;
    let q = phi_g * continuous_noise(noise) * phi_g.transpose() * dt;
    (phi, q)
}

/// Apply an IMU-block transition to the full covariance:
/// `P_ii ← Φ P_ii Φᵀ + Q`, `P_ic ← Φ P_ic`, camera block untouched.
pub fn apply_imu_transition(cov: &mut ErrorCovariance, phi: &ImuMatrix, q: &ImuMatrix) {
    let n = cov.dim();
    let p = cov.matrix_mut();
    let p_ii: ImuMatrix = p.fixed_view::<IMU_DIM, IMU_DIM>(0, 0).into_owned();
    let new_ii = phi * p_ii * phi.transpose() + q;
    p.fixed_view_mut::<IMU_DIM, IMU_DIM>(0, 0).copy_from(&new_ii);
    if n > IMU_DIM {
        let p_ic = p.view((0, IMU_DIM), (IMU_DIM, n - IMU_DIM)).into_owned();
        let new_ic = phi * p_ic;
        p.view_mut((0, IMU_DIM), (IMU_DIM, n - IMU_DIM)).copy_from(&new_ic);
        p.view_mut((IMU_DIM, 0), (n - IMU_DIM, IMU_DIM)).copy_from(&new_ic.transpose());
    }
    cov.symmetrize();
}

/// `P ← Φ P Φᵀ + Q_d` for full-size `F` and `G`.
pub fn propagate_covariance(
    cov: &ErrorCovariance,
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    noise: &ImuNoiseParams,
    dt: f64,
) -> Result<ErrorCovariance> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep { dt });
    }
    let n = cov.dim();
    if f.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, found: f.nrows() });
    }
    if g.shape() != (n, 12) {
        return Err(Error::DimensionMismatch { expected: n, found: g.nrows() });
    }
    let imu_only = f.view((IMU_DIM, 0), (n - IMU_DIM, n)).iter().all(|v| *v == 0.0)
        && f.view((0, IMU_DIM), (IMU_DIM, n - IMU_DIM)).iter().all(|v| *v == 0.0)
        && g.view((IMU_DIM, 0), (n - IMU_DIM, 12)).iter().all(|v| *v == 0.0);
    let mut out = cov.clone();
    if imu_only {
        let f_imu: ImuMatrix = f.fixed_view::<IMU_DIM, IMU_DIM>(0, 0).into_owned();
        let g_imu: ImuNoiseMatrix = g.fixed_view::<IMU_DIM, 12>(0, 0).into_owned();
        let (phi, q) = discretize(&f_imu, &g_imu, noise, dt);
        apply_imu_transition(&mut out, &phi, &q);
    } else {
        let fdt = f * dt;
        let phi = DMatrix::identity(n, n) + &fdt + 0.5 * &fdt * &fdt;
        let qc = DMatrix::from_column_slice(12, 12, continuous_noise(noise).as_slice());
        let phi_g = &phi * g;
        let q = &phi_g * qc * phi_g.transpose() * dt;
        *out.matrix_mut() = &phi * cov.matrix() * phi.transpose() + q;
        out.symmetrize();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{CameraExtrinsic, ImuState, InitialCovariance};
    use crate::testutil::{random_state, random_vec};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gravity() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -9.81)
    }

    fn rest_state() -> FilterState {
        FilterState::new(ImuState::default(), vec![CameraExtrinsic::default()]).unwrap()
    }

    fn sample(gyro: Vector3<f64>, accel: Vector3<f64>) -> ImuSample {
        ImuSample { t_s: 0.0, gyro, accel }
    }

    #[test]
    fn stationary_rig_stays_put() {
        let mut x = rest_state();
        let u = sample(Vector3::zeros(), -gravity());
        for _ in 0..400 {
            x = propagate_mean(&x, &u, &gravity(), 0.0025).unwrap();
        }
        assert!(x.imu.velocity.norm() < 1e-12 * 400.0);
        assert!(x.imu.position.norm() < 1e-12 * 400.0);
        assert_eq!(x.imu.q_ig, crate::so3::UnitQuaternion::identity());
    }

    #[test]
    fn free_fall_kinematics() {
        let x = rest_state();
        let dt = 0.01;
        let y = propagate_mean(&x, &sample(Vector3::zeros(), Vector3::zeros()), &gravity(), dt).unwrap();
        assert!((y.imu.velocity - Vector3::new(0.0, 0.0, -0.0981)).norm() < 1e-15);
        assert!((y.imu.position - 0.5 * gravity() * dt * dt).norm() < 1e-15);
    }

    #[test]
    fn constant_rate_integrates_exactly() {
        let mut x = rest_state();
        let u = sample(Vector3::new(0.0, 0.0, 1.0), -gravity());
        for _ in 0..1000 {
            x = propagate_mean(&x, &u, &gravity(), 1e-3).unwrap();
        }
        assert!((x.imu.q_ig.angle() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_steps() {
        let x = rest_state();
        let u = sample(Vector3::zeros(), Vector3::zeros());
        for dt in [0.0, -1e-3, 0.1000001, f64::NAN] {
            assert!(matches!(propagate_mean(&x, &u, &gravity(), dt), Err(Error::InvalidTimeStep { .. })));
        }
        assert!(propagate_mean(&x, &u, &gravity(), 0.1).is_ok());
    }

    #[test]
    fn camera_states_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_state(&mut rng, 3);
        let u = sample(random_vec(&mut rng, 1.0), random_vec(&mut rng, 10.0));
        let y = propagate_mean(&x, &u, &gravity(), 0.005).unwrap();
        assert_eq!(x.cameras, y.cameras);
        assert_eq!(x.imu.bias_gyro, y.imu.bias_gyro);
        assert_eq!(x.imu.bias_accel, y.imu.bias_accel);
    }

    #[test]
    fn f_at_rest_reads_off_blocks() {
        let x = rest_state();
        let f = compute_f(&x, &Vector3::zeros(), &Vector3::zeros());
        let mut expected = DMatrix::<f64>::zeros(21, 21);
        for k in 0..3 {
            expected[(THETA + k, BIAS_GYRO + k)] = -1.0;
            expected[(VELOCITY + k, BIAS_ACCEL + k)] = -1.0;
            expected[(POSITION + k, VELOCITY + k)] = 1.0;
        }
        assert_eq!(f, expected);
    }

    #[test]
    fn f_and_g_camera_rows_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for n in 1..4 {
            let x = random_state(&mut rng, n);
            let f = compute_f(&x, &random_vec(&mut rng, 2.0), &random_vec(&mut rng, 10.0));
            assert!(f.rows(IMU_DIM, 6 * n).iter().all(|v| *v == 0.0));
            let g = compute_g(&x);
            assert!(g.rows(IMU_DIM, 6 * n).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn g_at_rest() {
        let g = compute_g(&rest_state());
        for k in 0..3 {
            assert_eq!(g[(THETA + k, k)], -1.0);
            assert_eq!(g[(BIAS_GYRO + k, 3 + k)], 1.0);
            assert_eq!(g[(VELOCITY + k, 6 + k)], -1.0);
            assert_eq!(g[(BIAS_ACCEL + k, 9 + k)], 1.0);
        }
        assert!(g.rows(POSITION, 3).iter().all(|v| *v == 0.0));
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 12);
    }

    /// Matrix exponential by scaling and squaring of a Taylor series.
    fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = a.abs().max() * n as f64;
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let scaled = a / 2f64.powi(s);
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn transition_matches_nonlinear_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (delta, dt) = (1e-6, 1e-3);
        for _ in 0..100 {
            let n = rng.random_range(1..4);
            let x = random_state(&mut rng, n);
            let u = sample(random_vec(&mut rng, 2.0), random_vec(&mut rng, 12.0));
            let (w, a) = corrected(&x, &u);
            let phi = expm(&(compute_f(&x, &w, &a) * dt));
            let base = propagate_mean(&x, &u, &gravity(), dt).unwrap();
            for j in 0..x.error_dim() {
                let mut dx = DVector::zeros(x.error_dim());
                dx[j] = delta;
                let moved = propagate_mean(&x.compose(&dx).unwrap(), &u, &gravity(), dt).unwrap();
                let actual = base.difference(&moved).unwrap();
                let predicted = &phi * &dx;
                let rel = (&actual - &predicted).norm() / actual.norm();
                assert!(rel < 1e-4, "direction {j}: rel {rel}");
            }
        }
    }

    #[test]
    fn transition_rate_matches_f() {
        // Stricter: the change over one step divided by dt against F δx.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (delta, dt) = (1e-6, 1e-5);
        for _ in 0..20 {
            let x = random_state(&mut rng, 1);
            let u = sample(random_vec(&mut rng, 2.0), random_vec(&mut rng, 12.0));
            let (w, a) = corrected(&x, &u);
            let f = compute_f(&x, &w, &a);
            let base = propagate_mean(&x, &u, &gravity(), dt).unwrap();
            for j in 0..IMU_DIM {
                let mut dx = DVector::zeros(x.error_dim());
                dx[j] = delta;
                let moved = propagate_mean(&x.compose(&dx).unwrap(), &u, &gravity(), dt).unwrap();
                let rate = (base.difference(&moved).unwrap() - &dx) / dt;
                let expected = &f * &dx;
                let scale = expected.norm().max(delta);
                assert!((rate - &expected).norm() / scale < 1e-3, "direction {j}");
            }
        }
    }

    #[test]
    fn zero_noise_zero_dynamics_keeps_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let x = random_state(&mut rng, 2);
        let a = DMatrix::from_fn(27, 27, |_, _| rng.random_range(-1.0..1.0));
        let cov = ErrorCovariance::new(&a * a.transpose()).unwrap();
        let f = DMatrix::zeros(27, 27);
        let g = DMatrix::zeros(27, 12);
        let out = propagate_covariance(&cov, &f, &g, &ImuNoiseParams::default(), 0.01).unwrap();
        assert!((out.matrix() - cov.matrix()).abs().max() < 1e-15);
        let _ = x;
    }

    #[test]
    fn noise_grows_trace_and_leaves_cameras() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let x = random_state(&mut rng, 2);
        let cov = InitialCovariance::default().build(2);
        let (w, a) = corrected(&x, &sample(random_vec(&mut rng, 1.0), random_vec(&mut rng, 10.0)));
        let f = compute_f(&x, &w, &a);
        let g = compute_g(&x);
        let out = propagate_covariance(&cov, &f, &g, &ImuNoiseParams::default(), 0.0025).unwrap();
        assert!(out.matrix().trace() > cov.matrix().trace());
        assert_eq!(out.block(IMU_DIM, 12), cov.block(IMU_DIM, 12));
        assert!(propagate_covariance(&cov, &f, &g, &ImuNoiseParams::default(), 0.0).is_err());
    }

    #[test]
    fn block_path_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x = random_state(&mut rng, 2);
        let a = DMatrix::from_fn(27, 27, |_, _| rng.random_range(-1.0..1.0));
        let cov = ErrorCovariance::new(&a * a.transpose()).unwrap();
        let (w, acc) = corrected(&x, &sample(random_vec(&mut rng, 1.0), random_vec(&mut rng, 10.0)));
        let f = compute_f(&x, &w, &acc);
        let g = compute_g(&x);
        let dt = 0.0025;
        let fast = propagate_covariance(&cov, &f, &g, &ImuNoiseParams::default(), dt).unwrap();
        let fdt = &f * dt;
        let phi = DMatrix::identity(27, 27) + &fdt + 0.5 * &fdt * &fdt;
        let qc = DMatrix::from_column_slice(12, 12, continuous_noise(&ImuNoiseParams::default()).as_slice());
        let dense = &phi * cov.matrix() * phi.transpose() + &phi * &g * qc * g.transpose() * phi.transpose() * dt;
        assert!((fast.matrix() - dense).abs().max() < 1e-12);
    }

    #[test]
    fn long_run_stays_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let mut x = random_state(&mut rng, 2);
        let mut cov = InitialCovariance::default().build(2);
        let noise = ImuNoiseParams::default();
        let dt = 1.0 / 400.0;
        for k in 0..100_000 {
            let u = sample(random_vec(&mut rng, 1.0), -gravity() + random_vec(&mut rng, 2.0));
            let (w, a) = corrected(&x, &u);
            let (f, g) = imu_error_dynamics(&x, &w, &a);
            let (phi, q) = discretize(&f, &g, &noise, dt);
            apply_imu_transition(&mut cov, &phi, &q);
            x = propagate_mean(&x, &u, &gravity(), dt).unwrap();
            if k % 10_000 == 9_999 {
                assert!(cov.max_asymmetry() < 1e-9);
                // no updates bound P here, so judge negativity relative to its scale
                let ev = cov.matrix().clone().symmetric_eigenvalues();
                assert!(ev.min() >= -1e-13 * ev.max(), "{} / {}", ev.min(), ev.max());
            }
        }
    }

    #[test]
    fn halving_step_is_second_order() {
        // Splitting one step into two halves changes the result by O(dt²).
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        for _ in 0..20 {
            let x = random_state(&mut rng, 1);
            let u = sample(random_vec(&mut rng, 1.5), random_vec(&mut rng, 12.0));
            let split = |dt: f64| {
                let whole = propagate_mean(&x, &u, &gravity(), dt).unwrap();
                let half = propagate_mean(&x, &u, &gravity(), dt / 2.0).unwrap();
                let halves = propagate_mean(&half, &u, &gravity(), dt / 2.0).unwrap();
                whole.difference(&halves).unwrap().norm()
            };
            let (d1, d2, d3) = (split(0.02), split(0.01), split(0.005));
            let rate1 = (d1 / d2).log2();
            let rate2 = (d2 / d3).log2();
            assert!(rate1 >= 1.9 && rate2 >= 1.9, "rates {rate1} {rate2}");
        }
    }
}
