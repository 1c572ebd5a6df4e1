//! Repeated simulate-and-filter runs scored against the generator's truth.

use crate::error::Result;
use crate::filter::{CalibrationFilter, GateStats};
use crate::log::MeasurementLog;
use crate::pipeline::{Event, EventKind, Pipeline, PipelineStats, RunConfig, RunOptions};
use crate::simulator::{generate_run, ScenarioConfig};
use crate::state::{camera_offset, FilterState, CAMERA_DIM, IMU_DIM};
use crate::update::chi2_threshold;
use nalgebra::{DMatrix, DVector, Vector6};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    pub runs: usize,
    /// Index of the first run; runs use RNG streams `first_run..first_run + runs`.
    pub first_run: u64,
    /// Record every `stride`-th IMU sample.
    pub stride: usize,
    pub run_options: RunOptions,
    /// Adjust the run configuration derived from the scenario.
    pub configure: fn(&mut RunConfig),
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self { runs: 1, first_run: 0, stride: 1, run_options: RunOptions::default(), configure: |_| {} }
    }
}

/// One run's error history, sampled after IMU events.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub run_index: u64,
    /// Log index of each filter camera.
    pub cameras: Vec<usize>,
    /// True time of each sample.
    pub times: Vec<f64>,
    /// IMU sample number of each sample.
    pub samples: Vec<usize>,
    /// Per filter camera: `truth ⊖ estimate` of the extrinsic, `[δφ; δp]`.
    pub extrinsic_error: Vec<Vec<Vector6<f64>>>,
    /// Per filter camera: trace of its 6×6 covariance block.
    pub camera_trace: Vec<Vec<f64>>,
    /// IMU error-state NEES (15 dof); NaN before initialization.
    pub nees: Vec<f64>,
    pub gate: GateStats,
    pub pipeline: PipelineStats,
    pub final_state: Option<FilterState>,
    /// Host time of the first divergence warning. Runs keep going past it.
    pub divergence_warning: Option<f64>,
    /// Set when the run stopped early.
    pub failure: Option<String>,
}

impl RunTrace {
    /// First time after which `|error|` of one extrinsic dimension stays
    /// within `bound` until the end of the run.
    pub fn convergence_time(&self, camera: usize, dim: usize, bound: f64) -> Option<f64> {
        let errs = &self.extrinsic_error[camera];
        let last_bad = errs.iter().rposition(|e| !(e[dim].abs() <= bound));
        match last_bad {
            None => self.times.first().copied(),
            Some(i) if i + 1 < errs.len() => Some(self.times[i + 1]),
            Some(_) => None,
        }
    }

    /// Worst convergence time over the six dimensions of one camera
    /// (rotation bound in rad, translation bound in m).
    pub fn camera_convergence_time(&self, camera: usize, rot_bound: f64, pos_bound: f64) -> Option<f64> {
        (0..6)
            .map(|d| self.convergence_time(camera, d, if d < 3 { rot_bound } else { pos_bound }))
            .try_fold(f64::NEG_INFINITY, |acc, t| t.map(|t| acc.max(t)))
    }

    pub fn final_error(&self, camera: usize) -> Option<Vector6<f64>> {
        self.extrinsic_error[camera].last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub runs: Vec<RunTrace>,
}

impl MonteCarloSummary {
    /// Average NEES over runs at every sample that all runs recorded, with
    /// the sample's time.
    pub fn average_nees(&self) -> Vec<(f64, f64)> {
        let Some(first) = self.runs.first() else { return Vec::new() };
        let n = self.runs.iter().map(|r| r.nees.len()).min().unwrap_or(0);
        (0..n)
            .filter(|&k| self.runs.iter().all(|r| r.samples.get(k) == first.samples.get(k)))
            .map(|k| {
                let mean = self.runs.iter().map(|r| r.nees[k]).sum::<f64>() / self.runs.len() as f64;
                (first.times[k], mean)
            })
            .collect()
    }

    /// Two-sided `confidence` band for the run-averaged NEES.
    pub fn nees_band(&self, confidence: f64) -> Result<(f64, f64)> {
        let runs = self.runs.len() as f64;
        let dof = (IMU_DIM * self.runs.len()) as u32;
        let tail = 0.5 * (1.0 - confidence);
        Ok((chi2_threshold(tail, dof)? / runs, chi2_threshold(1.0 - tail, dof)? / runs))
    }

    pub fn gate_totals(&self) -> GateStats {
        self.runs.iter().fold(GateStats::default(), |mut acc, r| {
            acc.accepted += r.gate.accepted;
            acc.rejected += r.gate.rejected;
            acc.max_consecutive_rejections = acc.max_consecutive_rejections.max(r.gate.max_consecutive_rejections);
            acc
        })
    }
}

fn imu_nees(filter: &CalibrationFilter, truth: &FilterState) -> f64 {
    let est = filter.state();
    let err = match est.difference(truth) {
        Ok(e) => e,
        Err(_) => return f64::NAN,
    };
    let e = DVector::from_iterator(IMU_DIM, err.iter().take(IMU_DIM).copied());
    let p: DMatrix<f64> = filter.covariance().block(0, IMU_DIM);
    match p.cholesky() {
        Some(c) => e.dot(&c.solve(&e)),
        None => f64::NAN,
    }
}

/// Simulate and filter one run of `scenario`.
pub fn run_once(scenario: &ScenarioConfig, run_index: u64, options: &MonteCarloOptions) -> Result<RunTrace> {
    let sim = generate_run(scenario, run_index)?;
    let log = MeasurementLog::from_simulation(&sim, scenario);
    let mut config = RunConfig::new(sim.filter_config(scenario));
    // the harness records divergence warnings instead of stopping on them
    config.abort_on_divergence = false;
    (options.configure)(&mut config);
    let mut pipeline = Pipeline::new(&log.header, &config, &options.run_options)?;
    let cameras = pipeline.camera_map().to_vec();
    let n = cameras.len();
    let imu_clock = scenario.imu.clock;
    let rate = scenario.imu.rate;
    let stride = options.stride.max(1);

    let mut trace = RunTrace {
        run_index,
        cameras: cameras.clone(),
        times: Vec::new(),
        samples: Vec::new(),
        extrinsic_error: vec![Vec::new(); n],
        camera_trace: vec![Vec::new(); n],
        nees: Vec::new(),
        gate: GateStats::default(),
        pipeline: PipelineStats::default(),
        final_state: None,
        divergence_warning: None,
        failure: None,
    };
    let truth = &sim.truth;
    let mut observer = |event: &Event, filter: &CalibrationFilter| {
        if event.kind != EventKind::Imu {
            if filter.diverged() && trace.divergence_warning.is_none() {
                trace.divergence_warning = Some(event.time);
            }
            return;
        }
        let t_true = imu_clock.true_time(event.t_s);
        let sample = (t_true * rate).round() as usize;
        if sample % stride != 0 {
            return;
        }
        let mut true_state = truth.state_at(t_true);
        true_state.cameras = cameras.iter().map(|&c| truth.cameras[c]).collect();
        trace.times.push(t_true);
        trace.samples.push(sample);
        if !filter.is_initialized() {
            trace.nees.push(f64::NAN);
        } else {
            trace.nees.push(imu_nees(filter, &true_state));
        }
        let diff = filter.state().difference(&true_state).expect("same camera count");
        for j in 0..n {
            let o = camera_offset(j);
            trace.extrinsic_error[j].push(Vector6::from_iterator(diff.iter().skip(o).take(CAMERA_DIM).copied()));
            trace.camera_trace[j].push(filter.covariance().block_trace(o, CAMERA_DIM));
        }
    };
    let result = pipeline.run(log.records, &mut observer);
    trace.gate = pipeline.filter().gate_stats();
    trace.pipeline = pipeline.stats();
    trace.final_state = Some(pipeline.filter().state().clone());
    if let Err(e) = result {
        trace.failure = Some(e.to_string());
    }
    Ok(trace)
}

/// Independent runs in parallel; results are ordered by run index.
pub fn run_monte_carlo(scenario: &ScenarioConfig, options: &MonteCarloOptions) -> Result<MonteCarloSummary> {
    scenario.validate()?;
    let runs = (0..options.runs as u64)
        .into_par_iter()
        .map(|i| run_once(scenario, options.first_run + i, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloSummary { runs })
}
