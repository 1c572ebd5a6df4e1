//! Line-delimited JSON measurement logs.
//!
//! The first line is a header with the sensor registry; every following line
//! is one record tagged by `kind`. Camera indices follow the order of camera
//! sensors in the registry.

use crate::error::{Error, Result};
use crate::measurement::{default_measurement_covariance, CameraPoseMeasurement};
use crate::simulator::{ScenarioConfig, Simulation};
use crate::so3::UnitQuaternion;
use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};

pub const FORMAT: &str = "rigcal-log";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Imu,
    Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorInfo {
    pub id: String,
    pub kind: SensorKind,
    pub rate_hz: f64,
    /// Whether the sensor's timestamps need translating onto the host clock.
    pub time_translation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub created: String,
    pub sensors: Vec<SensorInfo>,
}

impl LogHeader {
    pub fn new(created: impl Into<String>, sensors: Vec<SensorInfo>) -> Self {
        Self { format: FORMAT.into(), version: VERSION, created: created.into(), sensors }
    }

    /// Ids of camera sensors in camera-index order.
    pub fn cameras(&self) -> Vec<&str> {
        self.sensors.iter().filter(|s| s.kind == SensorKind::Camera).map(|s| s.id.as_str()).collect()
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorInfo> {
        self.sensors.iter().find(|s| s.id == id)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.format != FORMAT {
            return Err(format!("not a {FORMAT} file (format {:?})", self.format));
        }
        if self.version != VERSION {
            return Err(format!("unsupported log version {}", self.version));
        }
        let mut seen = HashMap::new();
        for s in &self.sensors {
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(format!("duplicate sensor id {:?}", s.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuRecord {
    pub sensor: String,
    pub t_s: f64,
    pub t_arrival: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub sensor: String,
    pub t_s: f64,
    pub t_arrival: f64,
    pub p_cb: Vector3<f64>,
    /// `[w, x, y, z]` as written; normalized when converted to a measurement.
    pub q_cb: [f64; 4],
    /// Diagonal of the detection covariance `[position m²; rotation rad²]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_diag: Option<[f64; 6]>,
}

impl CameraRecord {
    pub fn measurement(&self, cam_index: usize) -> Result<CameraPoseMeasurement> {
        let [w, x, y, z] = self.q_cb;
        let q = UnitQuaternion::from_wxyz(w, x, y, z)?;
        let r = match self.cov_diag {
            Some(d) => Matrix6::from_diagonal(&Vector6::from_row_slice(&d)),
            None => default_measurement_covariance(),
        };
        Ok(CameraPoseMeasurement::new(cam_index, self.t_s, self.p_cb, q).with_covariance(r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Imu(ImuRecord),
    Camera(CameraRecord),
    /// Any other record kind; skipped.
    #[serde(other)]
    Unknown,
}

impl LogRecord {
    pub fn sensor(&self) -> Option<&str> {
        match self {
            LogRecord::Imu(r) => Some(&r.sensor),
            LogRecord::Camera(r) => Some(&r.sensor),
            LogRecord::Unknown => None,
        }
    }

    pub fn t_arrival(&self) -> Option<f64> {
        match self {
            LogRecord::Imu(r) => Some(r.t_arrival),
            LogRecord::Camera(r) => Some(r.t_arrival),
            LogRecord::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl MeasurementLog {
    pub fn unknown_records(&self) -> usize {
        self.records.iter().filter(|r| matches!(r, LogRecord::Unknown)).count()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", to_json(&self.header)?)?;
        for r in &self.records {
            if !matches!(r, LogRecord::Unknown) {
                writeln!(out, "{}", to_json(r)?)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (n, first) = lines.next().ok_or(Error::Parse { line: 1, message: "empty log".into() })?;
        let header: LogHeader = serde_json::from_str(&first?)
            .map_err(|e| Error::Parse { line: n, message: format!("bad header: {e}") })?;
        header.validate().map_err(|message| Error::Parse { line: n, message })?;
        let kinds: HashMap<&str, SensorKind> = header.sensors.iter().map(|s| (s.id.as_str(), s.kind)).collect();

        let mut records = Vec::new();
        for (n, line) in lines {
            let line = line?;
            let record: LogRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
            let expected = match &record {
                LogRecord::Imu(_) => SensorKind::Imu,
                LogRecord::Camera(_) => SensorKind::Camera,
                LogRecord::Unknown => {
                    records.push(record);
                    continue;
                }
            };
            let id = record.sensor().unwrap_or_default();
            match kinds.get(id) {
                Some(k) if *k == expected => {}
                Some(_) => {
                    return Err(Error::Parse { line: n, message: format!("record kind does not match sensor {id:?}") })
                }
                None => return Err(Error::Parse { line: n, message: format!("unknown sensor {id:?}") }),
            }
            records.push(record);
        }
        let unknown = records.iter().filter(|r| matches!(r, LogRecord::Unknown)).count();
        if unknown > 0 {
            log::warn!("skipped {unknown} record(s) of unknown kind");
        }
        Ok(Self { header, records })
    }

    /// Serialize a simulation in host-arrival order.
    pub fn from_simulation(sim: &Simulation, scenario: &ScenarioConfig) -> Self {
        let imu_cfg = &scenario.imu;
        let mut sensors = vec![SensorInfo {
            id: imu_cfg.id.clone(),
            kind: SensorKind::Imu,
            rate_hz: imu_cfg.rate,
            time_translation: imu_cfg.clock.time_filter,
        }];
        sensors.extend(scenario.cameras.iter().map(|c| SensorInfo {
            id: c.id.clone(),
            kind: SensorKind::Camera,
            rate_hz: c.rate,
            time_translation: c.clock.time_filter,
        }));

        // (arrival, sensor order, record)
        let mut tagged: Vec<(f64, usize, LogRecord)> = sim
            .imu
            .iter()
            .map(|s| {
                let r = ImuRecord {
                    sensor: imu_cfg.id.clone(),
                    t_s: s.t_s,
                    t_arrival: s.t_arrival,
                    gyro: s.gyro,
                    accel: s.accel,
                };
                (s.t_arrival, 0, LogRecord::Imu(r))
            })
            .collect();
        for (i, (stream, cam)) in sim.detections.iter().zip(&scenario.cameras).enumerate() {
            for d in stream {
                let m = &d.measurement;
                let r = CameraRecord {
                    sensor: cam.id.clone(),
                    t_s: m.t_s,
                    t_arrival: d.t_arrival,
                    p_cb: m.p_cb,
                    q_cb: m.q_cb.wxyz(),
                    cov_diag: Some(m.r_meas.diagonal().into()),
                };
                tagged.push((d.t_arrival, i + 1, LogRecord::Camera(r)));
            }
        }
        // stable sort keeps each sensor's own order on exact ties
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            header: LogHeader::new(scenario.created.clone(), sensors),
            records: tagged.into_iter().map(|t| t.2).collect(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Io(e.to_string()))
}
