use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hopsense::pipeline::{
    align, calibration_from_recording, joint_angle_series, mae, pearson, rate_series, read_recording_file,
    summarize, write_recording_file, SeriesSummary,
};
use hopsense::protocol::{ProtocolKind, SessionMetrics};
use hopsense::radio::session_trace_csv;
use hopsense::scenario::{simulate as run_scenario, simulate_radio, Scenario};
use hopsense::skeleton::{CalibrationPose, JointSpec, SensorId, SensorPlacement, Skeleton};
use hopsense::Error;
use rayon::prelude::*;
use serde::Serialize;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Io = 3,
    Validation = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitClass,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Unknown { .. } => ExitClass::Config,
            Error::Io { .. } | Error::Parse { .. } => ExitClass::Io,
            _ => ExitClass::Validation,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: ExitClass::Io,
        message: format!("{}: {e}", path.display()),
    }
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write(path, &text)
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path, seed: Option<u64>) -> CliResult<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut sc: Scenario = toml::from_str(&text).map_err(|e| CliError {
        code: ExitClass::Config,
        message: format!("{}: {e}", path.display()),
    })?;
    if let Some(s) = seed {
        sc.session.seed = s;
    }
    sc.validate().map_err(|e| CliError {
        code: ExitClass::Config,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(sc)
}

pub fn simulate(scenario: &Path, out: &Path, seed: Option<u64>) -> CliResult {
    let sc = load_scenario(scenario, seed)?;
    let sim = run_scenario(&sc)?;
    ensure_dir(out)?;
    write_recording_file(&out.join("recording.csv"), &sim.recording)?;
    write_recording_file(&out.join("ground_truth.csv"), &sim.ground_truth)?;
    write(&out.join("radio_trace.csv"), &session_trace_csv(&sim.trace.records))?;
    write_json(&out.join("metrics.json"), &sim.metrics)?;
    print_metrics(&sim.metrics);
    Ok(())
}

fn print_metrics(m: &SessionMetrics) {
    println!(
        "{}: {:.1} s, {} hop(s), {} resync(s), max skew {:.1} ms",
        m.protocol, m.duration_s, m.hops, m.resyncs, m.max_skew_ms
    );
    for (id, s) in &m.sensors {
        println!(
            "  sensor {id:>2}: {:6.2} Hz mean, {:6.2} Hz min window, pdr {:.3}",
            s.mean_rate_hz, s.min_window_rate_hz, s.pdr
        );
    }
}

#[derive(Serialize)]
struct AnalysisSummary {
    joints: BTreeMap<String, SeriesSummary>,
    rates: BTreeMap<SensorId, SeriesSummary>,
}

/// Angle ranges under this are treated as noise when counting peaks.
const PEAK_MIN_RANGE_DEG: f64 = 20.0;

pub fn analyze(recording: &Path, out: &Path, joints: &[String], pose: CalibrationPose, window_s: f64) -> CliResult {
    if !(window_s > 0.0 && window_s.is_finite()) {
        return Err(CliError {
            code: ExitClass::Config,
            message: "--window must be positive".into(),
        });
    }
    let frames = read_recording_file(recording)?;
    let ids: Vec<SensorId> = {
        let mut v: Vec<_> = frames.iter().map(|f| f.sensor_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let placement = SensorPlacement::from_sensor_ids(ids)?;
    let specs = if joints.is_empty() {
        JointSpec::available(&placement)
    } else {
        joints.iter().map(|j| JointSpec::by_label(j)).collect::<Result<_, _>>()?
    };
    let calib = calibration_from_recording(&frames, pose)?;
    let skel = Skeleton::standard();
    ensure_dir(out)?;
    let mut summary = AnalysisSummary {
        joints: BTreeMap::new(),
        rates: BTreeMap::new(),
    };
    for spec in &specs {
        let series = joint_angle_series(&frames, &calib, &skel, spec)?;
        write(&out.join(format!("angles_{}.csv", spec.label)), &series.to_csv())?;
        let values: Vec<f64> = series.values().collect();
        let s = summarize(&values, PEAK_MIN_RANGE_DEG);
        println!(
            "{:<15} min {:7.2}°  max {:7.2}°  mean {:7.2}°  peaks {}{}",
            spec.label,
            s.min,
            s.max,
            s.mean,
            s.peaks,
            if s.zero_range { "  (constant)" } else { "" }
        );
        summary.joints.insert(spec.label.clone(), s);
    }
    for (id, series) in rate_series(&frames, window_s) {
        let mut csv = String::from("timestamp_us,rate_hz\n");
        for (t, r) in &series {
            writeln!(csv, "{t},{r}").expect("string write");
        }
        write(&out.join(format!("rates_sensor{id}.csv")), &csv)?;
        let values: Vec<f64> = series.iter().map(|p| p.1).collect();
        summary.rates.insert(id, summarize(&values, f64::INFINITY));
    }
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct Comparison {
    joint: String,
    points: usize,
    mae_deg: f64,
    pearson: f64,
}

pub fn compare(a: &Path, b: &Path, joint: &str, pose: CalibrationPose, out: Option<&Path>) -> CliResult {
    let spec = JointSpec::by_label(joint)?;
    let skel = Skeleton::standard();
    let series = |path: &Path| -> CliResult<_> {
        let frames = read_recording_file(path)?;
        let calib = calibration_from_recording(&frames, pose)?;
        Ok(joint_angle_series(&frames, &calib, &skel, &spec)?)
    };
    let (sa, sb) = (series(a)?, series(b)?);
    let aligned = align(&sa, &sb)?;
    let report = Comparison {
        joint: spec.label.clone(),
        points: aligned.len(),
        mae_deg: mae(&sa, &sb)?,
        pearson: pearson(&sa, &sb)?,
    };
    println!(
        "{}: MAE {:.3}°, Pearson {:.5} over {} points",
        report.joint, report.mae_deg, report.pearson, report.points
    );
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let mut csv = String::from("timestamp_us,a_deg,b_deg\n");
        for (t, x, y) in &aligned {
            writeln!(csv, "{t},{x},{y}").expect("string write");
        }
        write(&dir.join(format!("aligned_{}.csv", spec.label)), &csv)?;
        write_json(&dir.join("compare.json"), &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRun {
    seed: u64,
    metrics: BTreeMap<String, SessionMetrics>,
}

#[derive(Serialize)]
struct BenchReport {
    scenario: String,
    protocols: Vec<String>,
    runs: Vec<BenchRun>,
    /// Seeds where the polling protocol beat the baseline on every sensor.
    cw_dominates: Option<usize>,
    cw_dominates_fraction: Option<f64>,
}

pub fn protocol_bench(
    scenario: &Path,
    protocols: &[ProtocolKind],
    seeds: u64,
    first_seed: Option<u64>,
    out: Option<&Path>,
) -> CliResult {
    let base = load_scenario(scenario, first_seed)?;
    if seeds == 0 {
        return Err(CliError {
            code: ExitClass::Config,
            message: "--seeds must be at least 1".into(),
        });
    }
    let mut protocols = protocols.to_vec();
    protocols.dedup();
    let start = base.session.seed;
    let runs: Vec<BenchRun> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = start.wrapping_add(i);
            let mut metrics = BTreeMap::new();
            for &p in &protocols {
                let sc = base.clone().with_seed(seed).with_protocol(p);
                metrics.insert(p.label().to_string(), simulate_radio(&sc)?.1);
            }
            Ok(BenchRun { seed, metrics })
        })
        .collect::<Result<_, Error>>()?;

    let (cw, ble) = (ProtocolKind::Cw.label(), ProtocolKind::BleBaseline.label());
    let cw_dominates = (protocols.contains(&ProtocolKind::Cw) && protocols.contains(&ProtocolKind::BleBaseline)).then(|| {
        runs.iter()
            .filter(|r| {
                let (c, b) = (&r.metrics[cw], &r.metrics[ble]);
                c.sensors
                    .iter()
                    .all(|(s, m)| b.sensors.get(s).is_some_and(|x| m.mean_rate_hz > x.mean_rate_hz))
            })
            .count()
    });
    let report = BenchReport {
        scenario: scenario.display().to_string(),
        protocols: protocols.iter().map(|p| p.label().to_string()).collect(),
        cw_dominates,
        cw_dominates_fraction: cw_dominates.map(|n| n as f64 / runs.len() as f64),
        runs,
    };
    for p in &report.protocols {
        let ms: Vec<&SessionMetrics> = report.runs.iter().map(|r| &r.metrics[p]).collect();
        let n = ms.len() as f64;
        println!(
            "{p:<13} mean rate {:6.2} Hz, worst window {:6.2} Hz, mean hops {:.1}",
            ms.iter().map(|m| m.mean_rate()).sum::<f64>() / n,
            ms.iter().map(|m| m.min_window_rate()).fold(f64::INFINITY, f64::min),
            ms.iter().map(|m| m.hops as f64).sum::<f64>() / n,
        );
    }
    if let (Some(k), Some(f)) = (report.cw_dominates, report.cw_dominates_fraction) {
        println!("cw beats ble-baseline on every sensor in {k}/{} seeds ({f:.2})", report.runs.len());
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("bench.json"), &report)?;
    }
    Ok(())
}
