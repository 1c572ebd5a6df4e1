//! Calibration state, error-state layout, the `⊕`/`⊖` operators and IMU pose
//! initialization from the first board detection.
//!
//! Error-state layout (15 + 6N):
//!
//! | offset     | block                          |
//! |------------|--------------------------------|
//! | 0          | IMU attitude error δθ (IMU frame) |
//! | 3          | gyro bias error                |
//! | 6          | velocity error (global)        |
//! | 9          | accel bias error               |
//! | 12         | position error (global)        |
//! | 15 + 6i    | camera i attitude error (camera frame) |
//! | 18 + 6i    | camera i position error (IMU frame) |

use crate::error::{Error, Result};
use crate::measurement::CameraPoseMeasurement;
use crate::so3::{exp_map, log_map, UnitQuaternion};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

pub const IMU_DIM: usize = 15;
pub const CAMERA_DIM: usize = 6;

pub const THETA: usize = 0;
pub const BIAS_GYRO: usize = 3;
pub const VELOCITY: usize = 6;
pub const BIAS_ACCEL: usize = 9;
pub const POSITION: usize = 12;

/// Offset of camera `i`'s block in the error state.
pub const fn camera_offset(i: usize) -> usize {
    IMU_DIM + CAMERA_DIM * i
}

/// IMU navigation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuState {
    /// Rotation taking global-frame vectors into the IMU frame.
    pub q_ig: UnitQuaternion,
    pub bias_gyro: Vector3<f64>,
    /// IMU velocity in the global frame.
    pub velocity: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    /// IMU position in the global frame.
    pub position: Vector3<f64>,
}

impl Default for ImuState {
    fn default() -> Self {
        Self {
            q_ig: UnitQuaternion::identity(),
            bias_gyro: Vector3::zeros(),
            velocity: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            position: Vector3::zeros(),
        }
    }
}

/// Camera extrinsic: camera frame expressed in the IMU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsic {
    /// Rotation taking camera-frame vectors into the IMU frame.
    pub q_ic: UnitQuaternion,
    /// Camera position in the IMU frame.
    pub p_ic: Vector3<f64>,
}

impl Default for CameraExtrinsic {
    fn default() -> Self {
        Self { q_ic: UnitQuaternion::identity(), p_ic: Vector3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub imu: ImuState,
    pub cameras: Vec<CameraExtrinsic>,
}

/// Leaves the quaternion bit-identical when the rotation increment is exactly zero.
fn rotate_if_nonzero(
    r: Vector3<f64>,
    apply: impl FnOnce(Vector3<f64>) -> UnitQuaternion,
    unchanged: UnitQuaternion,
) -> UnitQuaternion {
    if r == Vector3::zeros() {
        unchanged
    } else {
        apply(r)
    }
}

impl FilterState {
    pub fn new(imu: ImuState, cameras: Vec<CameraExtrinsic>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        Ok(Self { imu, cameras })
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn error_dim(&self) -> usize {
        IMU_DIM + CAMERA_DIM * self.cameras.len()
    }

    pub fn camera(&self, index: usize) -> Result<&CameraExtrinsic> {
        self.cameras
            .get(index)
            .ok_or(Error::InvalidCamera { index, cameras: self.cameras.len() })
    }

    /// `x ⊕ δx`.
    pub fn compose(&self, dx: &DVector<f64>) -> Result<FilterState> {
        if dx.len() != self.error_dim() {
            return Err(Error::DimensionMismatch { expected: self.error_dim(), found: dx.len() });
        }
        let block = |i: usize| Vector3::new(dx[i], dx[i + 1], dx[i + 2]);
        let imu = &self.imu;
        let imu = ImuState {
            q_ig: rotate_if_nonzero(block(THETA), |r| exp_map(&-r) * imu.q_ig, imu.q_ig),
            bias_gyro: imu.bias_gyro + block(BIAS_GYRO),
            velocity: imu.velocity + block(VELOCITY),
            bias_accel: imu.bias_accel + block(BIAS_ACCEL),
            position: imu.position + block(POSITION),
        };
        let cameras = self
            .cameras
            .iter()
            .enumerate()
            .map(|(i, cam)| {
                let o = camera_offset(i);
                CameraExtrinsic {
                    q_ic: rotate_if_nonzero(block(o), |r| cam.q_ic * exp_map(&r), cam.q_ic),
                    p_ic: cam.p_ic + block(o + 3),
                }
            })
            .collect();
        Ok(FilterState { imu, cameras })
    }

    /// `other ⊖ self`: the error vector `δx` with `self ⊕ δx == other`.
    pub fn difference(&self, other: &FilterState) -> Result<DVector<f64>> {
        if other.cameras.len() != self.cameras.len() {
            return Err(Error::DimensionMismatch {
                expected: self.error_dim(),
                found: other.error_dim(),
            });
        }
        let mut dx = DVector::zeros(self.error_dim());
        let mut put = |i: usize, v: Vector3<f64>| dx.fixed_rows_mut::<3>(i).copy_from(&v);
        put(THETA, -log_map(&(other.imu.q_ig * self.imu.q_ig.inverse())));
        put(BIAS_GYRO, other.imu.bias_gyro - self.imu.bias_gyro);
        put(VELOCITY, other.imu.velocity - self.imu.velocity);
        put(BIAS_ACCEL, other.imu.bias_accel - self.imu.bias_accel);
        put(POSITION, other.imu.position - self.imu.position);
        for (i, (a, b)) in self.cameras.iter().zip(&other.cameras).enumerate() {
            let o = camera_offset(i);
            put(o, log_map(&(a.q_ic.inverse() * b.q_ic)));
            put(o + 3, b.p_ic - a.p_ic);
        }
        Ok(dx)
    }
}

/// Covariance of the error state.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance(DMatrix<f64>);

impl ErrorCovariance {
    /// Wraps `p`, enforcing squareness and symmetrizing.
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::DimensionMismatch { expected: p.nrows(), found: p.ncols() });
        }
        let mut c = Self(p);
        c.symmetrize();
        Ok(c)
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        Self(DMatrix::from_diagonal(diag))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn symmetrize(&mut self) {
        let n = self.0.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.0[(i, j)] + self.0[(j, i)]);
                self.0[(i, j)] = m;
                self.0[(j, i)] = m;
            }
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.0 - self.0.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = 0.5 * (&self.0 + self.0.transpose());
        sym.symmetric_eigenvalues().min()
    }

    /// Marginal standard deviation per error dimension.
    pub fn sigmas(&self) -> DVector<f64> {
        self.0.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Square diagonal block starting at `offset`.
    pub fn block(&self, offset: usize, size: usize) -> DMatrix<f64> {
        self.0.view((offset, offset), (size, size)).into_owned()
    }

    pub fn block_trace(&self, offset: usize, size: usize) -> f64 {
        (offset..offset + size).map(|i| self.0[(i, i)]).sum()
    }
}

/// Fixed world quantities: gravity and the board pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    /// Gravity in the global frame, m/s².
    pub gravity: Vector3<f64>,
    /// Board origin in the global frame.
    pub p_gb: Vector3<f64>,
    /// Rotation taking board-frame vectors into the global frame.
    pub q_gb: UnitQuaternion,
    /// Accept gravity magnitudes outside [9.7, 9.9] m/s².
    #[serde(default)]
    pub allow_nonstandard_gravity: bool,
}

impl Default for WorldModel {
    fn default() -> Self {
        Self {
            gravity: Vector3::new(0.0, 0.0, -9.81),
            p_gb: Vector3::zeros(),
            q_gb: UnitQuaternion::identity(),
            allow_nonstandard_gravity: false,
        }
    }
}

impl WorldModel {
    pub fn validate(&self) -> Result<()> {
        let g = self.gravity.norm();
        if !self.allow_nonstandard_gravity && !(9.7..=9.9).contains(&g) {
            return Err(Error::Config(format!(
                "gravity magnitude {g} m/s² outside [9.7, 9.9]; set allow_nonstandard_gravity to override"
            )));
        }
        if !g.is_finite() || !self.p_gb.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("world model has non-finite values".into()));
        }
        Ok(())
    }
}

/// Continuous-time IMU noise densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseParams {
    /// Gyro white noise, rad/s/√Hz.
    pub sigma_gyro: f64,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub sigma_gyro_walk: f64,
    /// Accel white noise, m/s²/√Hz.
    pub sigma_accel: f64,
    /// Accel bias random walk, m/s³/√Hz.
    pub sigma_accel_walk: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        Self { sigma_gyro: 1e-3, sigma_gyro_walk: 1e-5, sigma_accel: 1e-2, sigma_accel_walk: 1e-4 }
    }
}

impl ImuNoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_gyro", self.sigma_gyro),
            ("sigma_gyro_walk", self.sigma_gyro_walk),
            ("sigma_accel", self.sigma_accel),
            ("sigma_accel_walk", self.sigma_accel_walk),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        Ok(())
    }
}

/// Block-diagonal initial covariance, given as variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialCovariance {
    pub attitude: f64,
    pub bias_gyro: f64,
    pub velocity: f64,
    pub bias_accel: f64,
    pub position: f64,
    pub camera_attitude: f64,
    pub camera_position: f64,
}

impl Default for InitialCovariance {
    fn default() -> Self {
        Self {
            attitude: 0.1,
            bias_gyro: 0.01 * 0.01,
            velocity: 0.1 * 0.1,
            bias_accel: 0.1 * 0.1,
            position: 0.1 * 0.1,
            camera_attitude: 0.2 * 0.2,
            camera_position: 0.2 * 0.2,
        }
    }
}

impl InitialCovariance {
    pub fn build(&self, num_cameras: usize) -> ErrorCovariance {
        let mut diag = Vec::with_capacity(IMU_DIM + CAMERA_DIM * num_cameras);
        for v in [self.attitude, self.bias_gyro, self.velocity, self.bias_accel, self.position] {
            diag.extend([v; 3]);
        }
        for _ in 0..num_cameras {
            diag.extend([self.camera_attitude; 3]);
            diag.extend([self.camera_position; 3]);
        }
        ErrorCovariance::from_diagonal(&DVector::from_vec(diag))
    }
}

/// IMU attitude and position implied by one board detection and the extrinsic
/// guess of the detecting camera. Returns `(q_ig, p_gi)`.
pub fn initialize_imu_pose(
    extrinsic: &CameraExtrinsic,
    world: &WorldModel,
    first: &CameraPoseMeasurement,
) -> (UnitQuaternion, Vector3<f64>) {
    // camera pose in the board frame
    let q_bc = first.q_cb.inverse();
    let p_bc = -q_bc.rotate(&first.p_cb);
    let q_ci = extrinsic.q_ic.inverse();

    let q_ig = (world.q_gb * q_bc * q_ci).inverse();
    // camera position relative to the board origin, in global coordinates
    let p_gc_rel = world.q_gb.rotate(&p_bc);
    let p_gi = p_gc_rel + world.p_gb - q_ig.inverse().rotate(&extrinsic.p_ic);
    (q_ig, p_gi)
}
