//! Recordings on disk and the analyses run over them.
//!
//! A recording is a CSV file with one row per received sample:
//!
//! ```text
//! timestamp_us,sensor_id,seq,qw,qx,qy,qz,status
//! ```
//!
//! Rows with `seq` 0 hold the calibration snapshot taken before streaming
//! starts; streamed samples count from 1. Quaternion components are kept at
//! nine significant digits so that writing and reading back is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::window_rates;
use crate::quatmath::{slerp, UnitQuaternion};
use crate::skeleton::{
    animate_frame, calibrate, joint_angle, CalibrationPose, CalibrationRecord, JointSpec,
    SensorId, SensorPlacement, Skeleton,
};

pub const RECORDING_HEADER: &str = "timestamp_us,sensor_id,seq,qw,qx,qy,qz,status";
pub const CALIBRATION_SEQ: u64 = 0;
const UNIT_SLACK: f64 = 1e-6;

fn quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// One row of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordingFrame {
    pub timestamp_us: u64,
    pub sensor_id: SensorId,
    pub seq: u64,
    pub q: UnitQuaternion,
    pub status: u8,
}

impl RecordingFrame {
    /// Builds a row, rounding the quaternion to nine significant digits.
    pub fn new(timestamp_us: u64, sensor_id: SensorId, seq: u64, q: UnitQuaternion, status: u8) -> Result<Self> {
        if status > 3 {
            return Err(Error::invalid(format!("status {status} outside 0..=3")));
        }
        let [w, x, y, z] = q.components().map(quantize);
        let q = UnitQuaternion { w, x, y, z };
        if !q.is_finite() || (q.norm() - 1.0).abs() > UNIT_SLACK {
            return Err(Error::invalid("recording quaternion is not unit"));
        }
        Ok(RecordingFrame {
            timestamp_us,
            sensor_id,
            seq,
            q,
            status,
        })
    }

    pub fn is_calibration(&self) -> bool {
        self.seq == CALIBRATION_SEQ
    }
}

fn validate_row(
    f: &RecordingFrame,
    line: usize,
    last: &mut BTreeMap<SensorId, (u64, u64)>,
) -> Result<()> {
    let fail = |msg: String| Error::Validation {
        line,
        sensor: f.sensor_id,
        seq: f.seq,
        msg,
    };
    if f.status > 3 {
        return Err(fail(format!("status {} outside 0..=3", f.status)));
    }
    if !f.q.is_finite() || (f.q.norm() - 1.0).abs() > UNIT_SLACK {
        return Err(fail(format!("quaternion norm {} is not unit", f.q.norm())));
    }
    if let Some(&(ts, seq)) = last.get(&f.sensor_id) {
        if f.seq <= seq {
            return Err(fail(format!("sequence regressed from {seq}")));
        }
        if f.timestamp_us < ts {
            return Err(fail(format!("timestamp went back from {ts}")));
        }
    }
    last.insert(f.sensor_id, (f.timestamp_us, f.seq));
    Ok(())
}

/// Serializes frames as recording CSV after checking their invariants.
pub fn write_recording(frames: &[RecordingFrame]) -> Result<String> {
    let mut last = BTreeMap::new();
    let mut out = String::with_capacity(64 + frames.len() * 72);
    out.push_str(RECORDING_HEADER);
    out.push('\n');
    for (i, f) in frames.iter().enumerate() {
        validate_row(f, i + 2, &mut last)?;
        let UnitQuaternion { w, x, y, z } = f.q;
        writeln!(
            out,
            "{},{},{},{w},{x},{y},{z},{}",
            f.timestamp_us, f.sensor_id, f.seq, f.status
        )
        .unwrap();
    }
    Ok(out)
}

/// Parses recording CSV. Line numbers in errors count the header as line 1.
pub fn read_recording(text: &str) -> Result<Vec<RecordingFrame>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == RECORDING_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{RECORDING_HEADER}`, found `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut frames = vec![];
    let mut last = BTreeMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let err = |name: &str, e: &dyn std::fmt::Display| Error::Parse {
            line,
            msg: format!("{name}: {e}"),
        };
        let int = |k: usize, name: &str| fields[k].parse::<u64>().map_err(|e| err(name, &e));
        let real = |k: usize, name: &str| fields[k].parse::<f64>().map_err(|e| err(name, &e));
        let sensor = fields[1].parse::<SensorId>().map_err(|e| err("sensor_id", &e))?;
        let status = fields[7].parse::<u8>().map_err(|e| err("status", &e))?;
        let frame = RecordingFrame {
            timestamp_us: int(0, "timestamp_us")?,
            sensor_id: sensor,
            seq: int(2, "seq")?,
            q: UnitQuaternion {
                w: real(3, "qw")?,
                x: real(4, "qx")?,
                y: real(5, "qy")?,
                z: real(6, "qz")?,
            },
            status,
        };
        validate_row(&frame, line, &mut last)?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_recording_file(path: &Path, frames: &[RecordingFrame]) -> Result<()> {
    let text = write_recording(frames)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_recording_file(path: &Path) -> Result<Vec<RecordingFrame>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_recording(&text)
}

/// Streamed (non-calibration) frames grouped by sensor, in file order.
pub fn streams(frames: &[RecordingFrame]) -> BTreeMap<SensorId, Vec<RecordingFrame>> {
    let mut out: BTreeMap<SensorId, Vec<RecordingFrame>> = BTreeMap::new();
    for f in frames.iter().filter(|f| !f.is_calibration()) {
        out.entry(f.sensor_id).or_default().push(*f);
    }
    out
}

/// Rebuilds the calibration record from the `seq` 0 rows.
pub fn calibration_from_recording(frames: &[RecordingFrame], pose: CalibrationPose) -> Result<CalibrationRecord> {
    let ids: Vec<SensorId> = {
        let mut v: Vec<_> = frames.iter().map(|f| f.sensor_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let placement = SensorPlacement::from_sensor_ids(ids)?;
    let snapshot: BTreeMap<_, _> = frames
        .iter()
        .filter(|f| f.is_calibration())
        .map(|f| (f.sensor_id, f.q))
        .collect();
    let ts = frames
        .iter()
        .filter(|f| f.is_calibration())
        .map(|f| f.timestamp_us)
        .max()
        .unwrap_or(0);
    calibrate(&snapshot, pose, &placement, ts)
}

/// Resamples every sensor's stream onto a uniform grid by slerp between the
/// bracketing samples. Calibration rows pass through unchanged.
pub fn slerp_resample(frames: &[RecordingFrame], target_hz: f64) -> Result<Vec<RecordingFrame>> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::invalid("target rate must be positive"));
    }
    let mut out: Vec<RecordingFrame> = frames.iter().filter(|f| f.is_calibration()).copied().collect();
    for (sensor, s) in streams(frames) {
        if s.len() < 2 {
            return Err(Error::invalid(format!("sensor {sensor} has fewer than 2 frames")));
        }
        let first = s[0].timestamp_us;
        let last = s[s.len() - 1].timestamp_us;
        let mut j = 0;
        for k in 0u64.. {
            let t = first + (k as f64 * 1e6 / target_hz).round() as u64;
            if t > last {
                break;
            }
            while j + 2 < s.len() && s[j + 1].timestamp_us <= t {
                j += 1;
            }
            let (a, b) = (&s[j], &s[j + 1]);
            let span = b.timestamp_us.saturating_sub(a.timestamp_us);
            let frac = if span == 0 {
                0.0
            } else {
                ((t - a.timestamp_us) as f64 / span as f64).clamp(0.0, 1.0)
            };
            let q = slerp(a.q, b.q, frac)?;
            out.push(RecordingFrame::new(t, sensor, k + 1, q, a.status)?);
        }
    }
    out.sort_by_key(|f| (f.timestamp_us, f.sensor_id, f.seq));
    Ok(out)
}

/// Joint angle over time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleSeries {
    pub joint: String,
    pub points: Vec<(u64, f64)>,
}

impl AngleSeries {
    pub fn new(joint: impl Into<String>, points: Vec<(u64, f64)>) -> Self {
        AngleSeries {
            joint: joint.into(),
            points,
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Linear interpolation at `t`, `None` outside the support.
    pub fn at(&self, t: u64) -> Option<f64> {
        let p = &self.points;
        let i = p.partition_point(|q| q.0 < t);
        if i < p.len() && p[i].0 == t {
            return Some(p[i].1);
        }
        if i == 0 || i == p.len() {
            return None;
        }
        let (t0, v0) = p[i - 1];
        let (t1, v1) = p[i];
        Some(v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64)
    }

    /// Two-column CSV for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_us,angle_deg\n");
        for (t, v) in &self.points {
            writeln!(out, "{t},{v}").unwrap();
        }
        out
    }
}

/// Angle of `joint` at every timestamp where either of its sensors
/// reported, each side holding its latest sample.
pub fn joint_angle_series(
    frames: &[RecordingFrame],
    calib: &CalibrationRecord,
    skel: &Skeleton,
    joint: &JointSpec,
) -> Result<AngleSeries> {
    let sensor_on = |bone: crate::skeleton::BoneId| {
        calib
            .placement
            .sensor_on(bone)
            .ok_or_else(|| Error::MissingBone(bone.name().to_string()))
    };
    let (sa, sb) = (sensor_on(joint.parent_side)?, sensor_on(joint.child_side)?);
    let all = streams(frames);
    let get = |s: SensorId| all.get(&s).ok_or(Error::MissingSensor(s));
    let (a, b) = (get(sa)?, get(sb)?);
    let mut grid: Vec<u64> = a.iter().chain(b.iter()).map(|f| f.timestamp_us).collect();
    grid.sort_unstable();
    grid.dedup();
    let (mut ia, mut ib) = (0, 0);
    let mut points = Vec::with_capacity(grid.len());
    for t in grid {
        while ia < a.len() && a[ia].timestamp_us <= t {
            ia += 1;
        }
        while ib < b.len() && b[ib].timestamp_us <= t {
            ib += 1;
        }
        if ia == 0 || ib == 0 {
            continue;
        }
        let snap = BTreeMap::from([(sa, a[ia - 1].q), (sb, b[ib - 1].q)]);
        let frame = animate_frame(&snap, t, calib, skel)?;
        points.push((t, joint_angle(&frame, joint)?.0));
    }
    Ok(AngleSeries::new(joint.label.clone(), points))
}

/// `(t, a(t), b(t))` at each of `a`'s timestamps inside the common support,
/// `b` linearly interpolated.
pub fn align(a: &AngleSeries, b: &AngleSeries) -> Result<Vec<(u64, f64, f64)>> {
    let (Some(a0), Some(a1), Some(b0), Some(b1)) = (
        a.points.first(),
        a.points.last(),
        b.points.first(),
        b.points.last(),
    ) else {
        return Err(Error::NoOverlap);
    };
    let lo = a0.0.max(b0.0);
    let hi = a1.0.min(b1.0);
    let out: Vec<_> = a
        .points
        .iter()
        .filter(|(t, _)| *t >= lo && *t <= hi)
        .filter_map(|&(t, va)| b.at(t).map(|vb| (t, va, vb)))
        .collect();
    if out.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(out)
}

/// Mean absolute difference over the overlap, on `a`'s timestamps.
pub fn mae(a: &AngleSeries, b: &AngleSeries) -> Result<f64> {
    let pairs = align(a, b)?;
    Ok(pairs.iter().map(|(_, x, y)| (x - y).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Sample correlation over the overlap, on `a`'s timestamps.
pub fn pearson(a: &AngleSeries, b: &AngleSeries) -> Result<f64> {
    let pairs = align(a, b)?;
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.2).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (_, x, y) in &pairs {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance("first series"));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance("second series"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Delivered samples per second in sliding windows, per sensor. Windows
/// start at the sensor's first sample and step by a tenth of the window
/// while they fit before the recording's last timestamp.
pub fn rate_series(frames: &[RecordingFrame], window_s: f64) -> BTreeMap<SensorId, Vec<(u64, f64)>> {
    let window_us = (window_s * 1e6).round() as u64;
    let s = streams(frames);
    let end = s.values().filter_map(|v| v.last()).map(|f| f.timestamp_us).max().unwrap_or(0);
    s.into_iter()
        .map(|(id, v)| {
            let times: Vec<u64> = v.iter().map(|f| f.timestamp_us).collect();
            (id, window_rates(&times, times[0], end, window_us))
        })
        .collect()
}

/// Min, max and mean of a series, with a flag for constant series and a
/// count of pronounced peaks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub zero_range: bool,
    pub peaks: usize,
}

/// Peaks are counted with hysteresis: a rise above 75% of the range after
/// a dip below 25%. Series spanning less than `min_range` have no peaks.
pub fn summarize(values: &[f64], min_range: f64) -> SeriesSummary {
    if values.is_empty() {
        return SeriesSummary {
            count: 0,
            min: 0.0,
            max: 0.0,
            mean: 0.0,
            zero_range: true,
            peaks: 0,
        };
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut peaks = 0;
    if range >= min_range {
        let (low, high) = (min + 0.25 * range, min + 0.75 * range);
        let mut armed = values[0] < high;
        for &v in values {
            if armed && v > high {
                peaks += 1;
                armed = false;
            } else if v < low {
                armed = true;
            }
        }
    }
    SeriesSummary {
        count: values.len(),
        min,
        max,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        zero_range: range < 1e-9,
        peaks,
    }
}
