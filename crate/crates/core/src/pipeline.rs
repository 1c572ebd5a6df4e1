//! Log replay: per-sensor clock translation, a short reorder buffer, and
//! dispatch into the calibration filter in host-time order.

use crate::error::{Error, Result};
use crate::filter::{CalibrationFilter, CameraEvent, FilterConfig};
use crate::log::{LogHeader, LogRecord, SensorKind};
use crate::time_sync::{SensorClock, TimeFilterConfig, TimeUpdate};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

fn default_reorder_window() -> f64 {
    0.005
}

fn yes() -> bool {
    true
}

/// Everything `calibrate` needs besides the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub filter: FilterConfig,
    #[serde(default)]
    pub time_filter: TimeFilterConfig,
    /// Stop with an error once the filter is flagged as diverged.
    #[serde(default = "yes")]
    pub abort_on_divergence: bool,
    /// Records arriving up to this much later than newer ones are still sorted, s.
    #[serde(default = "default_reorder_window")]
    pub reorder_window: f64,
}

impl RunConfig {
    pub fn new(filter: FilterConfig) -> Self {
        Self {
            filter,
            time_filter: TimeFilterConfig::default(),
            abort_on_divergence: true,
            reorder_window: default_reorder_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.time_filter.validate()?;
        if !(self.reorder_window >= 0.0 && self.reorder_window.is_finite()) {
            return Err(Error::Config("reorder_window must be non-negative".into()));
        }
        Ok(())
    }
}

/// Command-line adjustments applied on top of a [`RunConfig`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Restrict to these camera indices (log numbering).
    pub cameras: Option<Vec<usize>>,
    /// Sensors whose timestamps are used verbatim.
    pub no_time_filter: Vec<String>,
    pub gate_confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub imu_processed: usize,
    pub camera_processed: usize,
    /// Arrived after newer records had already been released.
    pub dropped_late: usize,
    /// Sensor clock ran backwards.
    pub dropped_clock: usize,
    /// Records of cameras excluded from this run.
    pub skipped_camera: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Imu,
    Camera { camera: usize, event: CameraEvent },
}

/// One record as it is applied to the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<'a> {
    /// Host-clock time.
    pub time: f64,
    pub sensor: &'a str,
    /// Raw sensor timestamp.
    pub t_s: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
struct Slot {
    id: String,
    kind: SensorKind,
    /// Filter camera index, `None` for IMUs and excluded cameras.
    camera: Option<usize>,
    clock: SensorClock,
}

#[derive(Debug)]
struct Pending {
    time: f64,
    rank: u8,
    sensor: usize,
    t_s: f64,
    seq: u64,
    record: LogRecord,
}

impl Pending {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.rank.cmp(&other.rank))
            .then(self.sensor.cmp(&other.sensor))
            .then(self.t_s.total_cmp(&other.t_s))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.cmp_key(self)
    }
}

#[derive(Debug)]
pub struct Pipeline {
    filter: CalibrationFilter,
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
    /// Log camera index of each filter camera.
    camera_map: Vec<usize>,
    heap: BinaryHeap<Pending>,
    window: f64,
    newest: f64,
    last_released: f64,
    seq: u64,
    abort_on_divergence: bool,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(header: &LogHeader, config: &RunConfig, options: &RunOptions) -> Result<Self> {
        let mut config = config.clone();
        if let Some(p) = options.gate_confidence {
            config.filter.gate.confidence = p;
        }
        config.validate()?;
        for id in &options.no_time_filter {
            if header.sensor(id).is_none() {
                return Err(Error::Config(format!("--no-time-filter: no sensor {id:?} in the log")));
            }
        }
        let log_cameras = header.cameras();
        if log_cameras.len() != config.filter.initial_extrinsics.len() {
            return Err(Error::Config(format!(
                "log has {} camera(s) but the configuration has {}",
                log_cameras.len(),
                config.filter.initial_extrinsics.len()
            )));
        }
        let imus = header.sensors.iter().filter(|s| s.kind == SensorKind::Imu).count();
        if imus != 1 {
            return Err(Error::Config(format!("exactly one IMU stream is supported, the log has {imus}")));
        }
        if log_cameras.is_empty() {
            return Err(Error::Config("the log has no camera stream".into()));
        }
        let camera_map: Vec<usize> = match &options.cameras {
            Some(list) => {
                let mut list = list.clone();
                list.sort_unstable();
                list.dedup();
                if list.is_empty() {
                    return Err(Error::Config("camera selection is empty".into()));
                }
                list
            }
            None => (0..log_cameras.len()).collect(),
        };
        let filter = CalibrationFilter::new(config.filter.restrict(&camera_map)?)?;

        let mut cam_counter = 0;
        let slots: Vec<Slot> = header
            .sensors
            .iter()
            .map(|s| {
                let camera = if s.kind == SensorKind::Camera {
                    let log_index = cam_counter;
                    cam_counter += 1;
                    camera_map.iter().position(|&c| c == log_index)
                } else {
                    None
                };
                let enabled = s.time_translation && !options.no_time_filter.contains(&s.id);
                Slot { id: s.id.clone(), kind: s.kind, camera, clock: SensorClock::new(enabled, config.time_filter) }
            })
            .collect();
        let index = slots.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Ok(Self {
            filter,
            slots,
            index,
            camera_map,
            heap: BinaryHeap::new(),
            window: config.reorder_window,
            newest: f64::NEG_INFINITY,
            last_released: f64::NEG_INFINITY,
            seq: 0,
            abort_on_divergence: config.abort_on_divergence,
            stats: PipelineStats::default(),
        })
    }

    pub fn filter(&self) -> &CalibrationFilter {
        &self.filter
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats
    }

    /// Log camera index of each filter camera.
    pub fn camera_map(&self) -> &[usize] {
        &self.camera_map
    }

    /// `(sensor id, clock)` for every sensor in the log.
    pub fn clocks(&self) -> impl Iterator<Item = (&str, &SensorClock)> {
        self.slots.iter().map(|s| (s.id.as_str(), &s.clock))
    }

    /// Accept one record in arrival order; releases whatever has left the
    /// reorder window.
    pub fn push<F>(&mut self, record: LogRecord, observer: &mut F) -> Result<()>
    where
        F: FnMut(&Event, &CalibrationFilter),
    {
        let (sensor, t_s, t_arrival, rank) = match &record {
            LogRecord::Unknown => {
                self.stats.unknown += 1;
                return Ok(());
            }
            LogRecord::Imu(r) => (r.sensor.as_str(), r.t_s, r.t_arrival, 0),
            LogRecord::Camera(r) => (r.sensor.as_str(), r.t_s, r.t_arrival, 1),
        };
        let &slot_index = self
            .index
            .get(sensor)
            .ok_or_else(|| Error::Parse { line: 0, message: format!("unknown sensor {sensor:?}") })?;
        let slot = &mut self.slots[slot_index];
        if slot.kind == SensorKind::Camera && slot.camera.is_none() {
            self.stats.skipped_camera += 1;
            return Ok(());
        }
        let (time, outcome) = slot.clock.observe(t_s, t_arrival);
        if outcome == TimeUpdate::Dropped {
            self.stats.dropped_clock += 1;
            return Ok(());
        }
        if time < self.last_released {
            self.stats.dropped_late += 1;
            return Ok(());
        }
        if let LogRecord::Imu(r) = &record {
            self.filter.queue_imu(time, r.gyro, r.accel)?;
        }
        self.seq += 1;
        self.heap.push(Pending { time, rank, sensor: slot_index, t_s, seq: self.seq, record });
        self.newest = self.newest.max(time);
        while self.heap.peek().is_some_and(|p| p.time <= self.newest - self.window) {
            let p = self.heap.pop().expect("peeked");
            self.release(p, observer)?;
        }
        Ok(())
    }

    /// Drain the reorder buffer.
    pub fn finish<F>(&mut self, observer: &mut F) -> Result<()>
    where
        F: FnMut(&Event, &CalibrationFilter),
    {
        while let Some(p) = self.heap.pop() {
            self.release(p, observer)?;
        }
        Ok(())
    }

    /// Push every record then drain.
    pub fn run<F>(&mut self, records: impl IntoIterator<Item = LogRecord>, observer: &mut F) -> Result<()>
    where
        F: FnMut(&Event, &CalibrationFilter),
    {
        for r in records {
            self.push(r, observer)?;
        }
        self.finish(observer)
    }

    fn release<F>(&mut self, p: Pending, observer: &mut F) -> Result<()>
    where
        F: FnMut(&Event, &CalibrationFilter),
    {
        self.last_released = p.time;
        let slot = &self.slots[p.sensor];
        let kind = match &p.record {
            LogRecord::Imu(r) => {
                self.filter.process_imu(p.time, r.gyro, r.accel)?;
                self.stats.imu_processed += 1;
                EventKind::Imu
            }
            LogRecord::Camera(r) => {
                let camera = slot.camera.expect("excluded cameras never enter the buffer");
                let z = r.measurement(camera)?;
                let event = self.filter.process_camera(p.time, &z)?;
                self.stats.camera_processed += 1;
                EventKind::Camera { camera, event }
            }
            LogRecord::Unknown => unreachable!("unknown records never enter the buffer"),
        };
        observer(&Event { time: p.time, sensor: &slot.id, t_s: p.t_s, kind }, &self.filter);
        if self.abort_on_divergence && self.filter.diverged() {
            return Err(Error::Divergence(format!(
                "more than {} consecutive rejected updates",
                self.filter.config().divergence_limit
            )));
        }
        Ok(())
    }
}
