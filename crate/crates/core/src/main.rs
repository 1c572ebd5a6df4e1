use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rigcal::log::MeasurementLog;
use rigcal::pipeline::{Event, Pipeline, RunConfig, RunOptions};
use rigcal::report::{compare, format_comparison, ExtrinsicHistory, Reference, RunReport, TraceWriter};
use rigcal::simulator::{generate, ScenarioConfig};
use rigcal::{filter::CalibrationFilter, Error};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_LOG: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "rigcal", version, about = "Online camera-IMU extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a measurement log from a scenario file.
    ///
    /// Also writes `<output>.truth.json` (ground truth) and
    /// `<output>.filter.toml` (a run configuration seeded with the scenario's
    /// initial guess).
    Simulate {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Measurement log to write.
        #[arg(long)]
        output: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the calibration filter over a measurement log.
    ///
    /// Writes `trace.csv` (one row per processed record) and `report.json`
    /// into the output directory.
    Calibrate {
        /// Measurement log (JSON lines).
        log: PathBuf,
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Use only this camera (log numbering); repeat for several.
        #[arg(long = "camera", value_name = "IDX")]
        cameras: Vec<usize>,
        /// Use this sensor's timestamps verbatim; repeat for several.
        #[arg(long = "no-time-filter", value_name = "SENSOR_ID")]
        no_time_filter: Vec<String>,
        /// Confidence of the χ² gate, in (0, 1).
        #[arg(long, value_name = "P")]
        gate_confidence: Option<f64>,
    },
    /// Compare a run's extrinsics with reference values.
    Report {
        /// Run directory or its report.json.
        run: PathBuf,
        /// Reference extrinsics (TOML, one [[camera]] table per camera).
        reference: PathBuf,
        /// Also write the deltas as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, output, seed } => simulate(&config, &output, seed),
        Command::Calibrate { log, config, output, cameras, no_time_filter, gate_confidence } => {
            let options = RunOptions {
                cameras: (!cameras.is_empty()).then_some(cameras),
                no_time_filter,
                gate_confidence,
            };
            calibrate(&log, &config, &output, &options)
        }
        Command::Report { run, reference, output } => report(&run, &reference, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `<path><suffix>`, e.g. `run.jsonl` → `run.jsonl.truth.json`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(config: &Path, output: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut scenario: ScenarioConfig = read_toml(config).exit_with(EXIT_CONFIG)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let sim = generate(&scenario).exit_with(EXIT_CONFIG)?;
    let log = MeasurementLog::from_simulation(&sim, &scenario);

    let write = || -> anyhow::Result<()> {
        let file = File::create(output).with_context(|| format!("creating {}", output.display()))?;
        log.write(BufWriter::new(file))?;
        let truth = serde_json::to_string_pretty(&sim.truth)?;
        fs::write(sidecar(output, ".truth.json"), truth + "\n")?;
        let run_config = RunConfig::new(sim.filter_config(&scenario));
        fs::write(sidecar(output, ".filter.toml"), toml::to_string(&run_config)?)?;
        Ok(())
    };
    write().exit_with(1)?;
    println!(
        "wrote {} ({} IMU samples, {} detections)",
        output.display(),
        sim.imu.len(),
        sim.detections.iter().map(Vec::len).sum::<usize>()
    );
    Ok(())
}

fn run_error_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidCamera { .. } => EXIT_CONFIG,
        Error::Parse { .. } | Error::OutOfRange { .. } => EXIT_LOG,
        Error::Io(_) => 1,
        _ => EXIT_DIVERGED,
    }
}

fn calibrate(log_path: &Path, config: &Path, output: &Path, options: &RunOptions) -> Result<(), Failure> {
    let run_config: RunConfig = read_toml(config).exit_with(EXIT_CONFIG)?;
    let file = File::open(log_path).with_context(|| format!("opening {}", log_path.display())).exit_with(EXIT_LOG)?;
    let log = MeasurementLog::read(BufReader::new(file))
        .with_context(|| format!("reading {}", log_path.display()))
        .exit_with(EXIT_LOG)?;
    let mut pipeline = Pipeline::new(&log.header, &run_config, options).exit_with(EXIT_CONFIG)?;
    let log_cameras = log.header.cameras();
    let camera_ids: Vec<String> = pipeline.camera_map().iter().map(|&i| log_cameras[i].to_string()).collect();

    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display())).exit_with(1)?;
    let trace_file = File::create(output.join("trace.csv")).exit_with(1)?;
    let mut trace = TraceWriter::new(BufWriter::new(trace_file), &camera_ids).exit_with(1)?;
    let mut history = ExtrinsicHistory::default();
    let mut write_error = None;
    let result = pipeline.run(log.records, &mut |event: &Event, filter: &CalibrationFilter| {
        history.observe(event, filter);
        if write_error.is_none() {
            write_error = trace.record(event, filter).err();
        }
    });
    if let Some(e) = write_error {
        return Err(e).exit_with(1);
    }
    trace.finish().exit_with(1)?;

    // the report is written even when the run stopped early
    let report = RunReport::build(&pipeline, &camera_ids, &history);
    let json = report.to_json().exit_with(1)?;
    fs::write(output.join("report.json"), json + "\n").exit_with(1)?;
    if let Err(e) = result {
        let code = run_error_code(&e);
        return Err(anyhow!(e).context(format!("calibrating {}", log_path.display()))).exit_with(code);
    }

    let gate = report.gate;
    println!(
        "processed {} IMU samples and {} detections; {} updates accepted, {} rejected",
        report.pipeline.imu_processed, report.pipeline.camera_processed, gate.accepted, gate.rejected
    );
    for c in &report.cameras {
        let [x, y, z] = c.translation_mm;
        let [a, b, g] = c.rotation_deg;
        println!("{:<10} xyz [{x:.1}, {y:.1}, {z:.1}] mm  αβγ [{a:.2}, {b:.2}, {g:.2}] deg", c.sensor);
    }
    Ok(())
}

fn report(run: &Path, reference: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let report_path = if run.is_dir() { run.join("report.json") } else { run.to_path_buf() };
    let text = fs::read_to_string(&report_path)
        .with_context(|| format!("reading {}", report_path.display()))
        .exit_with(EXIT_CONFIG)?;
    let report = RunReport::from_json(&text).exit_with(EXIT_CONFIG)?;
    let reference_text = fs::read_to_string(reference)
        .with_context(|| format!("reading {}", reference.display()))
        .exit_with(EXIT_CONFIG)?;
    let reference = Reference::from_toml(&reference_text).exit_with(EXIT_CONFIG)?;
    let deltas = compare(&report.cameras, &reference).exit_with(EXIT_CONFIG)?;
    print!("{}", format_comparison(&deltas));
    if let Some(path) = output {
        let json = serde_json::to_string_pretty(&deltas).exit_with(1)?;
        fs::write(path, json + "\n").exit_with(1)?;
    }
    Ok(())
}
