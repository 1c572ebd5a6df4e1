//! Synthetic rigs: a smooth 6-DoF excitation trajectory, a noisy biased IMU,
//! board detections per camera inside visibility windows, and skewed clocks.

use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::measurement::{predict_measurement, CameraPoseMeasurement};
use crate::so3::{exp_map, UnitQuaternion};
use crate::state::{CameraExtrinsic, FilterState, ImuNoiseParams, ImuState, WorldModel};
use crate::time_sync::ALPHA_BOUNDS;
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Sum-of-raised-cosines excitation; starts at rest so the filter can begin
/// with zero velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    /// Per-axis translation amplitude, m.
    pub translation_amplitude: Vector3<f64>,
    /// Per-axis translation frequency, Hz.
    pub translation_frequency: Vector3<f64>,
    /// Roll/pitch/yaw amplitude, rad.
    pub rotation_amplitude: Vector3<f64>,
    pub rotation_frequency: Vector3<f64>,
    pub initial_position: Vector3<f64>,
    pub initial_q_ig: UnitQuaternion,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            translation_amplitude: Vector3::repeat(0.3),
            translation_frequency: Vector3::new(0.4, 0.5, 0.6),
            rotation_amplitude: Vector3::repeat(0.4),
            rotation_frequency: Vector3::new(0.3, 0.45, 0.55),
            initial_position: Vector3::zeros(),
            initial_q_ig: UnitQuaternion::identity(),
        }
    }
}

/// Exact kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub q_ig: UnitQuaternion,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Acceleration in the global frame.
    pub acceleration: Vector3<f64>,
    /// Angular rate in the IMU frame.
    pub omega: Vector3<f64>,
}

/// `a(1 − cos ωt)` and its first two derivatives.
fn raised_cosine(a: f64, f: f64, t: f64) -> (f64, f64, f64) {
    let w = TAU * f;
    let (s, c) = (w * t).sin_cos();
    (a * (1.0 - c), a * w * s, a * w * w * c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

impl TrajectoryConfig {
    /// Body attitude is `R_GI(t) = R_GI(0) · Rz(ψ) Ry(θ) Rx(φ)`.
    pub fn kinematics(&self, t: f64) -> Kinematics {
        let mut position = self.initial_position;
        let mut velocity = Vector3::zeros();
        let mut acceleration = Vector3::zeros();
        for i in 0..3 {
            let (p, v, a) = raised_cosine(self.translation_amplitude[i], self.translation_frequency[i], t);
            position[i] += p;
            velocity[i] = v;
            acceleration[i] = a;
        }
        let angle = |i: usize| raised_cosine(self.rotation_amplitude[i], self.rotation_frequency[i], t);
        let ((roll, droll, _), (pitch, dpitch, _), (yaw, dyaw, _)) = (angle(0), angle(1), angle(2));
        let (rx, ry, rz) = (rot_x(roll), rot_y(pitch), rot_z(yaw));
        let r_gi = self.initial_q_ig.to_rotation_matrix().transpose() * rz * ry * rx;
        let omega = rx.transpose() * ry.transpose() * Vector3::new(0.0, 0.0, dyaw)
            + rx.transpose() * Vector3::new(0.0, dpitch, 0.0)
            + Vector3::new(droll, 0.0, 0.0);
        Kinematics {
            q_ig: UnitQuaternion::from_rotation_matrix(&r_gi.transpose()),
            position,
            velocity,
            acceleration,
            omega,
        }
    }
}

/// Sensor clock: `t_sensor = (t_true − β) / α`, host arrival `t_true + jitter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Track this sensor's clock with a translation filter (otherwise its
    /// timestamps are taken to be host time already).
    pub time_filter: bool,
    /// Width of the uniform arrival jitter, s, centred on the true time.
    pub jitter: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0, time_filter: false, jitter: 0.0 }
    }
}

impl ClockConfig {
    pub fn sensor_time(&self, t_true: f64) -> f64 {
        (t_true - self.beta) / self.alpha
    }

    pub fn true_time(&self, t_s: f64) -> f64 {
        self.alpha * t_s + self.beta
    }

    fn validate(&self, id: &str) -> Result<()> {
        if !(self.alpha > ALPHA_BOUNDS.0 && self.alpha < ALPHA_BOUNDS.1) || !self.beta.is_finite() {
            return Err(Error::Config(format!("{id}: clock skew/offset out of range")));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("{id}: jitter must be non-negative")));
        }
        if !self.time_filter && (self.alpha != 1.0 || self.beta != 0.0) {
            return Err(Error::Config(format!(
                "{id}: a sensor without a time filter must run on the host clock (alpha = 1, beta = 0)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuSimConfig {
    pub id: String,
    pub rate: f64,
    pub noise: ImuNoiseParams,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub clock: ClockConfig,
}

impl Default for ImuSimConfig {
    fn default() -> Self {
        Self {
            id: "imu0".into(),
            rate: 400.0,
            noise: ImuNoiseParams::default(),
            bias_gyro: Vector3::new(0.002, -0.001, 0.0015),
            bias_accel: Vector3::new(0.05, -0.03, 0.04),
            clock: ClockConfig::default(),
        }
    }
}

fn default_position_sigma() -> Vector3<f64> {
    Vector3::new(0.005, 0.005, 0.010)
}

fn default_rotation_sigma_deg() -> Vector3<f64> {
    Vector3::new(0.5, 0.5, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSimConfig {
    pub id: String,
    pub rate: f64,
    /// Offset of the first frame, s.
    #[serde(default)]
    pub phase: f64,
    pub extrinsic: CameraExtrinsic,
    /// Half-open `[start, end)` intervals in which the board is visible;
    /// empty means always.
    #[serde(default)]
    pub windows: Vec<[f64; 2]>,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default = "default_position_sigma")]
    pub position_sigma: Vector3<f64>,
    #[serde(default = "default_rotation_sigma_deg")]
    pub rotation_sigma_deg: Vector3<f64>,
}

impl CameraSimConfig {
    pub fn measurement_covariance(&self) -> Matrix6<f64> {
        let rot = self.rotation_sigma_deg * (PI / 180.0);
        let sigma = Vector6::new(
            self.position_sigma.x,
            self.position_sigma.y,
            self.position_sigma.z,
            rot.x,
            rot.y,
            rot.z,
        );
        Matrix6::from_diagonal(&sigma.component_mul(&sigma))
    }

    pub fn visible(&self, t: f64) -> bool {
        self.windows.is_empty() || self.windows.iter().any(|w| t >= w[0] && t < w[1])
    }
}

/// How far the filter's starting extrinsics are from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuessConfig {
    /// Length of the translation error, m.
    pub position_error: f64,
    /// Angle of the rotation error, degrees.
    pub rotation_error_deg: f64,
}

impl Default for GuessConfig {
    fn default() -> Self {
        Self { position_error: 0.03, rotation_error_deg: 2.0 }
    }
}

fn default_created() -> String {
    "1970-01-01T00:00:00Z".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Written verbatim into the log header so output is reproducible.
    #[serde(default = "default_created")]
    pub created: String,
    /// Scales every noise source (IMU white noise, bias walks, detections).
    #[serde(default = "one")]
    pub noise_scale: f64,
    pub world: WorldModel,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub imu: ImuSimConfig,
    pub cameras: Vec<CameraSimConfig>,
    #[serde(default)]
    pub initial_guess: GuessConfig,
}

fn one() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be non-negative".into()));
        }
        self.world.validate()?;
        self.imu.noise.validate()?;
        if !(self.imu.rate > 0.0 && self.imu.rate.is_finite()) {
            return Err(Error::Config(format!("{}: rate must be positive, got {}", self.imu.id, self.imu.rate)));
        }
        self.imu.clock.validate(&self.imu.id)?;
        if self.cameras.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        let mut ids = vec![self.imu.id.as_str()];
        for cam in &self.cameras {
            if !(cam.rate > 0.0 && cam.rate.is_finite()) {
                return Err(Error::Config(format!("{}: rate must be positive, got {}", cam.id, cam.rate)));
            }
            cam.clock.validate(&cam.id)?;
            for w in &cam.windows {
                if !(0.0 <= w[0] && w[0] <= w[1] && w[1] <= self.duration) {
                    return Err(Error::Config(format!(
                        "{}: window [{}, {}] is not inside [0, {}]",
                        cam.id, w[0], w[1], self.duration
                    )));
                }
            }
            let sig = cam.position_sigma.iter().chain(cam.rotation_sigma_deg.iter());
            if sig.clone().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::Config(format!("{}: measurement sigmas must be positive", cam.id)));
            }
            ids.push(cam.id.as_str());
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::Config("sensor ids must be unique".into()));
        }
        Ok(())
    }

    /// Two forward-looking cameras with toed-in mounts, both seeing the board
    /// throughout. The first runs on the host clock, the second and the IMU
    /// are tracked by time filters.
    pub fn overlap() -> Self {
        let deg = PI / 180.0;
        // camera x → −y_I, y → −z_I, z (optical axis) → +x_I
        let forward = UnitQuaternion::from_rotation_matrix(&Matrix3::new(
            0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0,
        ));
        let mount = |yaw: f64, pitch: f64, roll: f64| {
            UnitQuaternion::from_axis_angle(&Vector3::z(), yaw * deg)
                * UnitQuaternion::from_axis_angle(&Vector3::y(), pitch * deg)
                * forward
                * UnitQuaternion::from_axis_angle(&Vector3::z(), roll * deg)
        };
        let imu_clock = ClockConfig { alpha: 1.00005, beta: 0.2, time_filter: true, jitter: 1e-3 };
        let usb_clock = ClockConfig { alpha: 0.99998, beta: -0.35, time_filter: true, jitter: 1e-3 };
        Self {
            duration: 60.0,
            seed: 1,
            created: default_created(),
            noise_scale: 1.0,
            world: WorldModel {
                p_gb: Vector3::new(2.0, 0.0, 0.3),
                // board faces the rig: board z along global −x
                q_gb: UnitQuaternion::from_axis_angle(&Vector3::y(), -PI / 2.0),
                ..WorldModel::default()
            },
            trajectory: TrajectoryConfig::default(),
            imu: ImuSimConfig { clock: imu_clock, ..ImuSimConfig::default() },
            cameras: vec![
                CameraSimConfig {
                    id: "cam0".into(),
                    rate: 20.0,
                    phase: 0.0,
                    extrinsic: CameraExtrinsic { q_ic: mount(15.0, -10.0, 5.0), p_ic: Vector3::new(0.05, 0.25, 0.02) },
                    windows: vec![],
                    clock: ClockConfig::default(),
                    position_sigma: default_position_sigma(),
                    rotation_sigma_deg: default_rotation_sigma_deg(),
                },
                CameraSimConfig {
                    id: "cam1".into(),
                    rate: 50.0,
                    phase: 0.0,
                    extrinsic: CameraExtrinsic { q_ic: mount(-12.0, 8.0, -20.0), p_ic: Vector3::new(0.04, -0.25, -0.03) },
                    windows: vec![],
                    clock: usb_clock,
                    position_sigma: default_position_sigma(),
                    rotation_sigma_deg: default_rotation_sigma_deg(),
                },
            ],
            initial_guess: GuessConfig::default(),
        }
    }

    /// Cameras facing opposite ways with disjoint visibility.
    pub fn no_overlap() -> Self {
        let mut cfg = Self::overlap();
        let half_turn = UnitQuaternion::from_axis_angle(&Vector3::z(), PI);
        let cam = &mut cfg.cameras[1];
        cam.extrinsic.q_ic = half_turn * cam.extrinsic.q_ic;
        cam.extrinsic.p_ic = Vector3::new(-0.05, -0.25, -0.03);
        cfg.cameras[0].windows = vec![[0.0, 20.0], [40.0, 60.0]];
        cfg.cameras[1].windows = vec![[20.0, 40.0]];
        cfg
    }

    /// Filter configuration matching this scenario's world and noise, seeded
    /// with the given extrinsic guesses.
    pub fn filter_config(&self, initial_extrinsics: Vec<CameraExtrinsic>) -> FilterConfig {
        let mut cfg = FilterConfig::new(self.world.clone(), initial_extrinsics);
        cfg.imu_noise = self.imu.noise;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimImuSample {
    pub t_true: f64,
    pub t_s: f64,
    pub t_arrival: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection {
    pub t_true: f64,
    pub t_arrival: f64,
    /// `measurement.t_s` is the camera-clock timestamp.
    pub measurement: CameraPoseMeasurement,
}

/// Everything the generator knows that the filter does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub world: WorldModel,
    pub trajectory: TrajectoryConfig,
    pub cameras: Vec<CameraExtrinsic>,
    pub initial_guess: Vec<CameraExtrinsic>,
    pub clocks: Vec<SensorClockTruth>,
    pub bias_gyro_initial: Vector3<f64>,
    pub bias_accel_initial: Vector3<f64>,
    /// `(t, b_g, b_a)` at every IMU sample.
    #[serde(skip)]
    pub bias_track: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorClockTruth {
    pub id: String,
    pub alpha: f64,
    pub beta: f64,
}

impl ScenarioTruth {
    pub fn kinematics(&self, t: f64) -> Kinematics {
        self.trajectory.kinematics(t)
    }

    fn biases_at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let idx = self.bias_track.partition_point(|b| b.0 <= t);
        match idx.checked_sub(1).and_then(|i| self.bias_track.get(i)) {
            Some(b) => (b.1, b.2),
            None => (self.bias_gyro_initial, self.bias_accel_initial),
        }
    }

    /// True filter state at time `t`.
    pub fn state_at(&self, t: f64) -> FilterState {
        let k = self.kinematics(t);
        let (bias_gyro, bias_accel) = self.biases_at(t);
        let imu = ImuState { q_ig: k.q_ig, bias_gyro, velocity: k.velocity, bias_accel, position: k.position };
        FilterState::new(imu, self.cameras.clone()).expect("scenario has cameras")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub imu: Vec<SimImuSample>,
    /// One stream per camera.
    pub detections: Vec<Vec<SimDetection>>,
    pub truth: ScenarioTruth,
}

impl Simulation {
    pub fn filter_config(&self, scenario: &ScenarioConfig) -> FilterConfig {
        scenario.filter_config(self.truth.initial_guess.clone())
    }
}

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

fn jitter(rng: &mut ChaCha8Rng, width: f64) -> f64 {
    if width > 0.0 {
        rng.random_range(-0.5 * width..0.5 * width)
    } else {
        0.0
    }
}

/// RNG for run `run_index` of a scenario; runs are independent streams.
pub fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

fn tick_times(rate: f64, phase: f64, duration: f64) -> impl Iterator<Item = f64> {
    let count = ((duration - phase) * rate + 1e-9).floor().max(-1.0) as i64;
    (0..=count).map(move |k| phase + k as f64 / rate)
}

pub fn generate(config: &ScenarioConfig) -> Result<Simulation> {
    generate_run(config, 0)
}

/// Generate run `run_index` of the scenario (deterministic in seed and index).
pub fn generate_run(config: &ScenarioConfig, run_index: u64) -> Result<Simulation> {
    config.validate()?;
    let mut rng = run_rng(config.seed, run_index);
    let scale = config.noise_scale;
    let imu_cfg = &config.imu;
    let noise = imu_cfg.noise;
    let dt = 1.0 / imu_cfg.rate;
    let gravity = config.world.gravity;

    let mut b_g = imu_cfg.bias_gyro;
    let mut b_a = imu_cfg.bias_accel;
    let mut imu = Vec::new();
    let mut bias_track = Vec::new();
    for t in tick_times(imu_cfg.rate, 0.0, config.duration) {
        let k = config.trajectory.kinematics(t);
        let specific_force = k.q_ig.rotate(&(k.acceleration - gravity));
        let gyro = k.omega + b_g + normal3(&mut rng) * (scale * noise.sigma_gyro / dt.sqrt());
        let accel = specific_force + b_a + normal3(&mut rng) * (scale * noise.sigma_accel / dt.sqrt());
        bias_track.push((t, b_g, b_a));
        imu.push(SimImuSample {
            t_true: t,
            t_s: imu_cfg.clock.sensor_time(t),
            t_arrival: t + jitter(&mut rng, imu_cfg.clock.jitter),
            gyro,
            accel,
        });
        b_g += normal3(&mut rng) * (scale * noise.sigma_gyro_walk * dt.sqrt());
        b_a += normal3(&mut rng) * (scale * noise.sigma_accel_walk * dt.sqrt());
    }

    let extrinsics: Vec<CameraExtrinsic> = config.cameras.iter().map(|c| c.extrinsic).collect();
    let mut truth = ScenarioTruth {
        world: config.world.clone(),
        trajectory: config.trajectory.clone(),
        cameras: extrinsics.clone(),
        initial_guess: Vec::new(),
        clocks: std::iter::once((&imu_cfg.id, imu_cfg.clock))
            .chain(config.cameras.iter().map(|c| (&c.id, c.clock)))
            .map(|(id, c)| SensorClockTruth { id: id.clone(), alpha: c.alpha, beta: c.beta })
            .collect(),
        bias_gyro_initial: imu_cfg.bias_gyro,
        bias_accel_initial: imu_cfg.bias_accel,
        bias_track,
    };

    let mut detections = Vec::with_capacity(config.cameras.len());
    for (i, cam) in config.cameras.iter().enumerate() {
        let r_meas = cam.measurement_covariance();
        let pos_sigma = cam.position_sigma * scale;
        let rot_sigma = cam.rotation_sigma_deg * (scale * PI / 180.0);
        let mut stream = Vec::new();
        for t in tick_times(cam.rate, cam.phase, config.duration) {
            if !cam.visible(t) {
                continue;
            }
            let predicted = predict_measurement(&truth.state_at(t), i, &config.world)?;
            let p_cb = predicted.p_cb + normal3(&mut rng).component_mul(&pos_sigma);
            let q_cb = predicted.q_cb * exp_map(&normal3(&mut rng).component_mul(&rot_sigma));
            let measurement =
                CameraPoseMeasurement::new(i, cam.clock.sensor_time(t), p_cb, q_cb).with_covariance(r_meas);
            stream.push(SimDetection { t_true: t, t_arrival: t + jitter(&mut rng, cam.clock.jitter), measurement });
        }
        detections.push(stream);
    }

    let guess = config.initial_guess;
    truth.initial_guess = extrinsics
        .iter()
        .map(|e| {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let dq = exp_map(&(Vector3::from(axis) * guess.rotation_error_deg.to_radians()));
            CameraExtrinsic { q_ic: e.q_ic * dq, p_ic: e.p_ic + Vector3::from(dir) * guess.position_error }
        })
        .collect();
    Ok(Simulation { imu, detections, truth })
}
