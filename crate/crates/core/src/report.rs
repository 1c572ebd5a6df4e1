//! Run outputs: the per-record CSV trace, the end-of-run report and the
//! comparison of a report against reference extrinsics.

use crate::error::{Error, Result};
use crate::filter::{CalibrationFilter, CameraEvent, GateStats};
use crate::pipeline::{Event, EventKind, Pipeline, PipelineStats};
use crate::so3::{log_map, quat_to_rotmat, UnitQuaternion};
use crate::state::{camera_offset, CameraExtrinsic, IMU_DIM};
use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::io::Write;

const IMU_BLOCKS: [&str; 5] = ["theta", "bg", "v", "ba", "p"];
const AXES: [&str; 3] = ["x", "y", "z"];

/// Intrinsic X-Y-Z Euler angles `(α, β, γ)` of `R = Rx(α)·Ry(β)·Rz(γ)`, rad.
pub fn euler_xyz(q: &UnitQuaternion) -> Vector3<f64> {
    let r = quat_to_rotmat(q);
    let beta = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let alpha = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let gamma = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vector3::new(alpha, beta, gamma)
}

/// Column names of the CSV trace for `cameras` filter cameras.
pub fn trace_header(cameras: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = ["time", "sensor", "t_s", "kind"].iter().map(|s| s.to_string()).collect();
    cols.extend(["q_ig_w", "q_ig_x", "q_ig_y", "q_ig_z"].map(String::from));
    for b in &IMU_BLOCKS[1..] {
        cols.extend(AXES.iter().map(|a| format!("{b}_{a}")));
    }
    for c in cameras {
        cols.extend(["w", "x", "y", "z"].iter().map(|a| format!("{c}_q_ic_{a}")));
        cols.extend(AXES.iter().map(|a| format!("{c}_p_ic_{a}")));
    }
    for b in IMU_BLOCKS {
        cols.extend(AXES.iter().map(|a| format!("sigma_{b}_{a}")));
    }
    for c in cameras {
        cols.extend(AXES.iter().map(|a| format!("sigma_{c}_phi_{a}")));
        cols.extend(AXES.iter().map(|a| format!("sigma_{c}_p_{a}")));
    }
    cols.extend(["chi2", "accepted"].map(String::from));
    cols
}

/// One CSV row per processed record.
pub struct TraceWriter<W: Write> {
    out: csv::Writer<W>,
    columns: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, cameras: &[String]) -> Result<Self> {
        let mut out = csv::Writer::from_writer(out);
        let header = trace_header(cameras);
        out.write_record(&header).map_err(csv_error)?;
        Ok(Self { out, columns: header.len() })
    }

    pub fn record(&mut self, event: &Event, filter: &CalibrationFilter) -> Result<()> {
        let s = filter.state();
        let mut row: Vec<String> = Vec::with_capacity(self.columns);
        row.push(event.time.to_string());
        row.push(event.sensor.to_string());
        row.push(event.t_s.to_string());
        let (kind, chi2, accepted) = match event.kind {
            EventKind::Imu => ("imu", String::new(), String::new()),
            EventKind::Camera { event: CameraEvent::Initialized, .. } => ("init", String::new(), String::new()),
            EventKind::Camera { event: CameraEvent::Update(o), .. } => {
                ("update", o.chi2.to_string(), (o.accepted as u8).to_string())
            }
        };
        row.push(kind.into());
        let num = |row: &mut Vec<String>, v: &[f64]| row.extend(v.iter().map(|x| x.to_string()));
        num(&mut row, &s.imu.q_ig.wxyz());
        for v in [&s.imu.bias_gyro, &s.imu.velocity, &s.imu.bias_accel, &s.imu.position] {
            num(&mut row, v.as_slice());
        }
        for c in &s.cameras {
            num(&mut row, &c.q_ic.wxyz());
            num(&mut row, c.p_ic.as_slice());
        }
        num(&mut row, filter.covariance().sigmas().as_slice());
        row.push(chi2);
        row.push(accepted);
        debug_assert_eq!(row.len(), self.columns);
        self.out.write_record(&row).map_err(csv_error)
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Extrinsic history kept for the convergence times of the report.
#[derive(Debug, Clone, Default)]
pub struct ExtrinsicHistory {
    samples: Vec<(f64, Vec<CameraExtrinsic>)>,
}

impl ExtrinsicHistory {
    /// Extrinsics only move on camera updates, so those are the only samples kept.
    pub fn observe(&mut self, event: &Event, filter: &CalibrationFilter) {
        if matches!(event.kind, EventKind::Camera { .. }) && filter.is_initialized() {
            self.samples.push((event.time, filter.state().cameras.clone()));
        }
    }

    /// Per dimension, the first time after which the estimate stays within
    /// `sigma` of `last` (`[δφ; δp]` error coordinates); `None` if never.
    fn convergence_times(&self, camera: usize, last: &CameraExtrinsic, sigma: &Vector6<f64>) -> [Option<f64>; 6] {
        let mut times = [None; 6];
        for (d, slot) in times.iter_mut().enumerate() {
            let mut since = None;
            for (t, cams) in &self.samples {
                let e = extrinsic_error(&cams[camera], last);
                if e[d].abs() <= sigma[d] {
                    since.get_or_insert(*t);
                } else {
                    since = None;
                }
            }
            *slot = since;
        }
        times
    }
}

/// `[δφ; δp]` taking `from` to `to` with the filter's camera composition.
fn extrinsic_error(from: &CameraExtrinsic, to: &CameraExtrinsic) -> Vector6<f64> {
    let dphi = log_map(&(from.q_ic.inverse() * to.q_ic));
    let dp = to.p_ic - from.p_ic;
    Vector6::new(dphi.x, dphi.y, dphi.z, dp.x, dp.y, dp.z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraReport {
    pub sensor: String,
    /// Camera position in the IMU frame, mm.
    pub translation_mm: [f64; 3],
    /// Intrinsic XYZ Euler angles `(α, β, γ)` of the camera-to-IMU rotation, degrees.
    pub rotation_deg: [f64; 3],
    /// Camera-to-IMU rotation, `[w, x, y, z]`.
    pub quaternion_wxyz: [f64; 4],
    pub sigma_translation_mm: [f64; 3],
    /// 1σ of the camera-frame rotation error, degrees.
    pub sigma_rotation_deg: [f64; 3],
    /// First time each of `[φx, φy, φz, x, y, z]` stays within its final 1σ.
    pub convergence_time_s: [Option<f64>; 6],
    pub gate: GateStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockReport {
    pub sensor: String,
    /// False when timestamps were used verbatim.
    pub translated: bool,
    pub alpha: f64,
    pub beta: f64,
    pub updates: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub final_time: Option<f64>,
    pub cameras: Vec<CameraReport>,
    pub sigma_imu: Vec<f64>,
    pub gate: GateStats,
    pub pipeline: PipelineStats,
    pub clocks: Vec<ClockReport>,
}

impl RunReport {
    /// `camera_ids` are the sensor ids of the filter cameras, in filter order.
    pub fn build(pipeline: &Pipeline, camera_ids: &[String], history: &ExtrinsicHistory) -> Self {
        let filter = pipeline.filter();
        let sigmas = filter.covariance().sigmas();
        let per_camera = filter.camera_gate_stats();
        let cameras = filter
            .state()
            .cameras
            .iter()
            .enumerate()
            .map(|(i, cam)| {
                let o = camera_offset(i);
                let sigma = Vector6::from_iterator(sigmas.rows(o, 6).iter().copied());
                let euler = euler_xyz(&cam.q_ic).map(f64::to_degrees);
                CameraReport {
                    sensor: camera_ids.get(i).cloned().unwrap_or_else(|| format!("cam{i}")),
                    translation_mm: (cam.p_ic * 1e3).into(),
                    rotation_deg: euler.into(),
                    quaternion_wxyz: cam.q_ic.canonical().wxyz(),
                    sigma_translation_mm: [sigma[3] * 1e3, sigma[4] * 1e3, sigma[5] * 1e3],
                    sigma_rotation_deg: [sigma[0].to_degrees(), sigma[1].to_degrees(), sigma[2].to_degrees()],
                    convergence_time_s: history.convergence_times(i, cam, &sigma),
                    gate: per_camera.get(i).copied().unwrap_or_default(),
                }
            })
            .collect();
        let clocks = pipeline
            .clocks()
            .map(|(id, clock)| match clock.filter() {
                Some(f) => ClockReport {
                    sensor: id.to_string(),
                    translated: true,
                    alpha: f.alpha(),
                    beta: f.beta(),
                    updates: f.updates(),
                    dropped: f.dropped(),
                },
                None => ClockReport { sensor: id.to_string(), translated: false, alpha: 1.0, beta: 0.0, updates: 0, dropped: 0 },
            })
            .collect();
        Self {
            final_time: filter.time(),
            cameras,
            sigma_imu: sigmas.rows(0, IMU_DIM).iter().copied().collect(),
            gate: filter.gate_stats(),
            pipeline: pipeline.stats(),
            clocks,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad run report: {e}")))
    }
}

/// Reference extrinsics in the report's units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCamera {
    #[serde(default)]
    pub sensor: Option<String>,
    pub translation_mm: [f64; 3],
    pub rotation_deg: [f64; 3],
    /// When given, the rotation difference is also reported as a single angle.
    #[serde(default)]
    pub quaternion_wxyz: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    #[serde(rename = "camera")]
    pub cameras: Vec<ReferenceCamera>,
}

impl Reference {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad reference file: {e}")))
    }
}

/// Estimate − reference for one camera.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraDelta {
    pub sensor: String,
    pub translation_mm: [f64; 3],
    pub rotation_deg: [f64; 3],
    /// Angle of `q_ref⁻¹ ⊗ q_est`, degrees, when the reference has a quaternion.
    pub rotation_angle_deg: Option<f64>,
}

/// Deltas between `estimate` and `reference`, camera by camera in order.
pub fn compare(estimate: &[CameraReport], reference: &Reference) -> Result<Vec<CameraDelta>> {
    if estimate.len() != reference.cameras.len() {
        return Err(Error::Config(format!(
            "report has {} camera(s), reference has {}",
            estimate.len(),
            reference.cameras.len()
        )));
    }
    estimate
        .iter()
        .zip(&reference.cameras)
        .map(|(est, r)| {
            let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let rotation_angle_deg = match r.quaternion_wxyz {
                Some([w, x, y, z]) => {
                    let [ew, ex, ey, ez] = est.quaternion_wxyz;
                    let q_ref = UnitQuaternion::from_wxyz(w, x, y, z)?;
                    let q_est = UnitQuaternion::from_wxyz(ew, ex, ey, ez)?;
                    Some((q_ref.inverse() * q_est).angle().to_degrees())
                }
                None => None,
            };
            Ok(CameraDelta {
                sensor: est.sensor.clone(),
                translation_mm: sub(est.translation_mm, r.translation_mm),
                rotation_deg: sub(est.rotation_deg, r.rotation_deg),
                rotation_angle_deg,
            })
        })
        .collect()
}

/// Plain-text table of deltas.
pub fn format_comparison(deltas: &[CameraDelta]) -> String {
    let mut out = format!(
        "{:<12} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}\n",
        "camera", "X mm", "Y mm", "Z mm", "α deg", "β deg", "γ deg", "∠ deg"
    );
    for d in deltas {
        let t = d.translation_mm;
        let r = d.rotation_deg;
        let angle = d.rotation_angle_deg.map_or("-".to_string(), |a| format!("{a:.2}"));
        out += &format!(
            "{:<12} {:>9.1} {:>9.1} {:>9.1} {:>8.2} {:>8.2} {:>8.2} {:>8}\n",
            d.sensor, t[0], t[1], t[2], r[0], r[1], r[2], angle
        );
    }
    out
}
