use crate::so3::UnitQuaternion;
use crate::state::{CameraExtrinsic, FilterState, ImuState};
use nalgebra::Vector3;
use rand::Rng;

pub fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
    UnitQuaternion::from_wxyz(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .unwrap()
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_state(rng: &mut impl Rng, cameras: usize) -> FilterState {
    let imu = ImuState {
        q_ig: random_quat(rng),
        bias_gyro: random_vec(rng, 0.05),
        velocity: random_vec(rng, 2.0),
        bias_accel: random_vec(rng, 0.3),
        position: random_vec(rng, 3.0),
    };
    let cams = (0..cameras)
        .map(|_| CameraExtrinsic { q_ic: random_quat(rng), p_ic: random_vec(rng, 0.5) })
        .collect();
    FilterState::new(imu, cams).unwrap()
}
