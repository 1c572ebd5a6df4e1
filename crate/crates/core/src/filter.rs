//! The calibration filter: one IMU, N cameras, driven by time-ordered events.

use crate::error::{Error, Result};
use crate::measurement::{compute_h, compute_residual, predict_measurement, CameraPoseMeasurement, Residual};
use crate::propagation::{
    apply_imu_transition, corrected, discretize, imu_error_dynamics, propagate_mean, ImuSample, SUB_STEP,
};
use crate::state::{
    initialize_imu_pose, CameraExtrinsic, ErrorCovariance, FilterState, ImuNoiseParams, ImuState,
    InitialCovariance, WorldModel,
};
use crate::update::{kalman_correction, GateConfig, UpdateOutcome};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Longest step used for the mean between covariance steps, s.
const MEAN_STEP: f64 = 5e-4;

/// Recent and already-known upcoming IMU samples. The input inside an
/// interval is the quadratic through its two ends and the sample before;
/// past the newest sample it is extrapolated for at most one interval, then
/// held. Extrapolating across an interval inflates the sample noise well
/// beyond the propagation model, so callers that can see ahead should
/// `queue_imu` samples early.
#[derive(Debug, Clone, Default)]
struct InputHistory {
    samples: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
}

impl InputHistory {
    fn push(&mut self, t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) {
        let i = self.samples.partition_point(|s| s.0 < t);
        match self.samples.get_mut(i) {
            Some(s) if s.0 == t => *s = (t, gyro, accel),
            _ => self.samples.insert(i, (t, gyro, accel)),
        }
    }

    /// Forget samples no longer needed once time has reached `t`.
    fn prune(&mut self, t: f64) {
        let i = self.samples.partition_point(|s| s.0 <= t);
        let keep_from = i.saturating_sub(2).min(self.samples.len().saturating_sub(3));
        self.samples.drain(..keep_from);
    }

    fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let all = self.samples.as_slice();
        let n = all.len();
        if n == 1 {
            return (all[0].1, all[0].2);
        }
        let i = all.partition_point(|s| s.0 <= t).max(1);
        // interval (i−1, i) plus the sample before it, or the last three
        let lo = if i < n { i.saturating_sub(2) } else { n.saturating_sub(3) };
        let mut s = &all[lo..(lo + 3).min(n)];
        if s.len() == 3 {
            // uneven stamps (e.g. while a clock filter settles) make the
            // quadratic ill-conditioned; use the straight line instead
            let ratio = (s[1].0 - s[0].0) / (s[2].0 - s[1].0);
            if !(0.5..=2.0).contains(&ratio) {
                s = if i < n { &all[i - 1..=i] } else { &s[1..] };
            }
        }
        let last = s[s.len() - 1].0;
        let spacing = last - s[s.len() - 2].0;
        let t = t.clamp(s[0].0, last + spacing);
        let mut gyro = Vector3::zeros();
        let mut accel = Vector3::zeros();
        for (i, si) in s.iter().enumerate() {
            let w: f64 = s
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, sj)| (t - sj.0) / (si.0 - sj.0))
                .product();
            gyro += si.1 * w;
            accel += si.2 * w;
        }
        (gyro, accel)
    }
}

fn default_divergence_limit() -> usize {
    20
}

fn default_update_iterations() -> usize {
    5
}

/// Iterated updates stop once the correction moves less than this.
const ITERATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub world: WorldModel,
    #[serde(default)]
    pub imu_noise: ImuNoiseParams,
    #[serde(default)]
    pub initial_covariance: InitialCovariance,
    /// Starting guesses, one per camera.
    pub initial_extrinsics: Vec<CameraExtrinsic>,
    #[serde(default)]
    pub gate: GateConfig,
    /// Consecutive rejections tolerated before the filter is flagged as diverged.
    #[serde(default = "default_divergence_limit")]
    pub divergence_limit: usize,
    /// Linearizations per accepted update; 1 is the plain EKF update.
    #[serde(default = "default_update_iterations")]
    pub update_iterations: usize,
}

impl FilterConfig {
    pub fn new(world: WorldModel, initial_extrinsics: Vec<CameraExtrinsic>) -> Self {
        Self {
            world,
            imu_noise: ImuNoiseParams::default(),
            initial_covariance: InitialCovariance::default(),
            initial_extrinsics,
            gate: GateConfig::default(),
            divergence_limit: default_divergence_limit(),
            update_iterations: default_update_iterations(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.imu_noise.validate()?;
        if self.initial_extrinsics.is_empty() {
            return Err(Error::Config("at least one camera is required".into()));
        }
        self.gate.threshold()?;
        Ok(())
    }

    /// Keep only the listed cameras, in the given order.
    pub fn restrict(&self, cameras: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.initial_extrinsics = cameras
            .iter()
            .map(|&i| {
                self.initial_extrinsics.get(i).copied().ok_or(Error::InvalidCamera {
                    index: i,
                    cameras: self.initial_extrinsics.len(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    pub accepted: usize,
    pub rejected: usize,
    pub max_consecutive_rejections: usize,
}

impl GateStats {
    pub fn acceptance_rate(&self) -> f64 {
        let total = self.accepted + self.rejected;
        if total == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraEvent {
    /// First detection: the IMU pose was seeded from it.
    Initialized,
    Update(UpdateOutcome),
}

#[derive(Debug, Clone)]
pub struct CalibrationFilter {
    config: FilterConfig,
    threshold: f64,
    state: FilterState,
    cov: ErrorCovariance,
    initialized: bool,
    time: Option<f64>,
    inputs: InputHistory,
    gate: GateStats,
    per_camera: Vec<GateStats>,
    consecutive_rejections: usize,
    diverged: bool,
}

impl CalibrationFilter {
    pub fn new(config: FilterConfig) -> Result<Self> {
        config.validate()?;
        let threshold = config.gate.threshold()?;
        let n = config.initial_extrinsics.len();
        let state = FilterState::new(ImuState::default(), config.initial_extrinsics.clone())?;
        let cov = config.initial_covariance.build(n);
        Ok(Self {
            threshold,
            state,
            cov,
            initialized: false,
            time: None,
            inputs: InputHistory::default(),
            gate: GateStats::default(),
            per_camera: vec![GateStats::default(); n],
            consecutive_rejections: 0,
            diverged: false,
            config,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn covariance(&self) -> &ErrorCovariance {
        &self.cov
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn gate_stats(&self) -> GateStats {
        self.gate
    }

    pub fn camera_gate_stats(&self) -> &[GateStats] {
        &self.per_camera
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Set once more than `divergence_limit` consecutive updates were rejected.
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Overwrite the estimate; used to seed the filter from a known state.
    pub fn reset(&mut self, state: FilterState, cov: ErrorCovariance, time: f64) -> Result<()> {
        if state.num_cameras() != self.per_camera.len() || cov.dim() != state.error_dim() {
            return Err(Error::DimensionMismatch { expected: self.state.error_dim(), found: cov.dim() });
        }
        self.state = state;
        self.cov = cov;
        self.time = Some(time);
        self.initialized = true;
        Ok(())
    }

    /// Integrate from the current time to `t` using the interpolated IMU input.
    fn propagate_to(&mut self, t: f64) -> Result<()> {
        let Some(t0) = self.time else {
            self.time = Some(t);
            return Ok(());
        };
        let span = t - t0;
        if !(span > 0.0) || self.inputs.is_empty() {
            self.time = Some(self.time.map_or(t, |t0| t0.max(t)));
            return Ok(());
        }
        let steps = (span / SUB_STEP).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let mean_steps = (h / MEAN_STEP).ceil().max(1.0) as usize;
        let dt = h / mean_steps as f64;
        for i in 0..steps {
            let start = t0 + i as f64 * h;
            let (gyro, accel) = self.inputs.at(start + 0.5 * h);
            let probe = ImuSample { t_s: start, gyro, accel };
            let (w, a) = corrected(&self.state, &probe);
            let (f, g) = imu_error_dynamics(&self.state, &w, &a);
            let (phi, q) = discretize(&f, &g, &self.config.imu_noise, h);
            apply_imu_transition(&mut self.cov, &phi, &q);
            for j in 0..mean_steps {
                let (gyro, accel) = self.inputs.at(start + (j as f64 + 0.5) * dt);
                let sample = ImuSample { t_s: start, gyro, accel };
                self.state = propagate_mean(&self.state, &sample, &self.config.world.gravity, dt)?;
            }
        }
        self.time = Some(t);
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        let imu = &self.state.imu;
        let finite = imu.position.iter().chain(imu.velocity.iter()).all(|v| v.is_finite())
            && self.cov.matrix().iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Divergence("non-finite state or covariance".into()))
        }
    }

    /// Make an IMU sample known ahead of processing it, so that earlier
    /// camera stamps between it and the current sample are interpolated
    /// rather than extrapolated. It must still be fed to `process_imu` in turn.
    pub fn queue_imu(&mut self, t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Result<()> {
        if !(gyro.iter().chain(accel.iter()).all(|v| v.is_finite()) && t.is_finite()) {
            return Err(Error::OutOfRange { name: "imu sample", value: t });
        }
        if self.time.is_none_or(|t0| t >= t0) {
            self.inputs.push(t, gyro, accel);
        }
        Ok(())
    }

    /// Feed one IMU sample stamped `t` on the host clock.
    pub fn process_imu(&mut self, t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Result<()> {
        self.queue_imu(t, gyro, accel)?;
        if self.initialized {
            self.propagate_to(t)?;
        } else {
            self.time = Some(t);
        }
        self.inputs.prune(t);
        Ok(())
    }

    /// Gated update. An accepted update is relinearized about the corrected
    /// state up to `update_iterations − 1` more times; the large corrections
    /// right after initialization are far from linear.
    fn update(&mut self, z: &CameraPoseMeasurement, residual: &Residual, h: &DMatrix<f64>) -> Result<UpdateOutcome> {
        let r = DMatrix::from_column_slice(6, 6, z.r_meas.as_slice());
        let y = DVector::from_column_slice(residual.vector().as_slice());
        let (chi2, correction) = kalman_correction(self.cov.matrix(), &y, h, &r, self.threshold)?;
        let Some(mut c) = correction else {
            return Ok(UpdateOutcome { accepted: false, chi2 });
        };
        for _ in 1..self.config.update_iterations.max(1) {
            let x = self.state.compose(&c.dx)?;
            let residual = compute_residual(z, &predict_measurement(&x, z.cam_index, &self.config.world)?);
            let h = compute_h(&x, z.cam_index, &self.config.world, &residual)?;
            let y = DVector::from_column_slice(residual.vector().as_slice()) + &h * &c.dx;
            let Some(next) = kalman_correction(self.cov.matrix(), &y, &h, &r, f64::INFINITY)?.1 else { break };
            let step = (&next.dx - &c.dx).amax();
            c = next;
            if step < ITERATION_TOLERANCE {
                break;
            }
        }
        self.state = self.state.compose(&c.dx)?;
        *self.cov.matrix_mut() = c.covariance;
        self.cov.symmetrize();
        Ok(UpdateOutcome { accepted: true, chi2 })
    }

    /// Feed one camera detection stamped `t` on the host clock.
    pub fn process_camera(&mut self, t: f64, z: &CameraPoseMeasurement) -> Result<CameraEvent> {
        let n = self.per_camera.len();
        if z.cam_index >= n {
            return Err(Error::InvalidCamera { index: z.cam_index, cameras: n });
        }
        if !self.initialized {
            let (q_ig, p_gi) = initialize_imu_pose(&self.state.cameras[z.cam_index], &self.config.world, z);
            self.state.imu.q_ig = q_ig;
            self.state.imu.position = p_gi;
            self.initialized = true;
            self.time = Some(t);
            return Ok(CameraEvent::Initialized);
        }
        self.propagate_to(t)?;
        let predicted = predict_measurement(&self.state, z.cam_index, &self.config.world)?;
        let residual = compute_residual(z, &predicted);
        let h = compute_h(&self.state, z.cam_index, &self.config.world, &residual)?;
        let outcome = self
            .update(z, &residual, &h)
            .map_err(|e| match e {
                Error::InnovationNotPositiveDefinite { .. } => {
                    Error::InnovationNotPositiveDefinite { camera: Some(z.cam_index) }
                }
                other => other,
            })?;
        let cam = &mut self.per_camera[z.cam_index];
        if outcome.accepted {
            self.gate.accepted += 1;
            cam.accepted += 1;
            self.consecutive_rejections = 0;
        } else {
            self.gate.rejected += 1;
            cam.rejected += 1;
            self.consecutive_rejections += 1;
            self.gate.max_consecutive_rejections =
                self.gate.max_consecutive_rejections.max(self.consecutive_rejections);
            cam.max_consecutive_rejections = cam.max_consecutive_rejections.max(self.consecutive_rejections);
            if self.consecutive_rejections > self.config.divergence_limit && !self.diverged {
                log::warn!(
                    "{} consecutive measurement rejections at t = {t:.3} s; the filter may have diverged",
                    self.consecutive_rejections
                );
                self.diverged = true;
            }
        }
        self.check_finite()?;
        Ok(CameraEvent::Update(outcome))
    }
}
