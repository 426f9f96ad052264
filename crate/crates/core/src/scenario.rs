//! Complete experiment descriptions and the runner that turns one into a
//! recording, a radio trace and session metrics.
//!
//! A run has two phases. During `setup_s` the sensors join and settle while
//! the wearer holds the calibration pose; nothing is recorded. The motion
//! then plays for `duration_s` and every sample the host receives becomes a
//! recording row.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_synth::{preset_scenario, MountingOffset, NoiseModel, PresetParams, SyntheticBody};
use crate::pipeline::RecordingFrame;
use crate::protocol::{
    ble_baseline_run, master_run, merge_interference, session_metrics, BleTiming, CwConfig,
    HopPolicy, ProtocolKind, SessionMetrics, SessionTrace, TimingProfile, MAX_ROSTER,
};
use crate::radio::{occupancy, ChannelPlan, Interferer, InterfererKind, Medium, Micros, PeakSchedule};
use crate::skeleton::{CalibrationPose, SensorId, SensorPlacement, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    /// Recorded length; defaults to the motion preset's own length.
    pub duration_s: Option<f64>,
    pub seed: u64,
    /// Unrecorded join-and-calibrate phase before the motion starts.
    pub setup_s: f64,
    /// Sliding window for rate metrics.
    pub window_s: f64,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            duration_s: None,
            seed: 0,
            setup_s: 0.0,
            window_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mounting {
    /// Sensors strapped on at arbitrary seeded orientations.
    #[default]
    Random,
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    pub preset: String,
    #[serde(default)]
    pub params: PresetParams,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub mounting: Mounting,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSection {
    /// One of `elbow-pair`, `p5-upper`, `p10`, `p12`.
    pub preset: Option<String>,
    /// Explicit sensor ids; overrides `preset`.
    pub sensors: Option<Vec<SensorId>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: Option<ProtocolKind>,
    pub timing: TimingProfile,
    pub hop: HopPolicy,
    pub ble: BleTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferencePreset {
    Clean,
    Crowded,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceSection {
    pub preset: Option<InterferencePreset>,
    pub interferers: Vec<Interferer>,
    /// Replaces the preset's peak schedule when given.
    pub peaks: Option<PeakSchedule>,
    pub floor_loss: f64,
}

/// A complete experiment. Everything not given takes a documented default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub session: SessionSection,
    pub motion: MotionSection,
    #[serde(default)]
    pub placement: PlacementSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub interference: InterferenceSection,
}

impl Scenario {
    /// A scenario playing `preset` on a clean channel with default noise.
    pub fn new(preset: &str) -> Self {
        Scenario {
            session: SessionSection::default(),
            motion: MotionSection {
                preset: preset.to_string(),
                params: PresetParams::default(),
                noise: NoiseModel::default(),
                mounting: Mounting::default(),
            },
            placement: PlacementSection::default(),
            protocol: ProtocolSection::default(),
            interference: InterferenceSection::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.session.seed = seed;
        self
    }

    pub fn with_protocol(mut self, kind: ProtocolKind) -> Self {
        self.protocol.kind = Some(kind);
        self
    }

    pub fn with_interference(mut self, preset: InterferencePreset) -> Self {
        self.interference.preset = Some(preset);
        self
    }

    pub fn with_placement(mut self, preset: &str) -> Self {
        self.placement.preset = Some(preset.to_string());
        self
    }

    pub fn protocol_kind(&self) -> ProtocolKind {
        self.protocol.kind.unwrap_or(ProtocolKind::Cw)
    }

    /// Trajectory parameters with the session length folded in.
    fn preset_params(&self) -> PresetParams {
        let mut p = self.motion.params.clone();
        if p.duration_s.is_none() {
            p.duration_s = self.session.duration_s;
        }
        p
    }

    /// Sensor placement after applying the placement section.
    pub fn placement(&self) -> Result<SensorPlacement> {
        if let Some(ids) = &self.placement.sensors {
            if ids.len() > MAX_ROSTER {
                return Err(Error::config(format!(
                    "placement lists {} sensors; at most {MAX_ROSTER} are supported",
                    ids.len()
                )));
            }
            return SensorPlacement::from_sensor_ids(ids.iter().copied())
                .map_err(|e| Error::config(format!("placement.sensors: {e}")));
        }
        if let Some(name) = &self.placement.preset {
            return SensorPlacement::preset(name).map_err(|e| Error::config(format!("placement.preset: {e}")));
        }
        let (_, placement) = preset_scenario(&self.motion.preset, &self.preset_params())
            .map_err(|e| Error::config(format!("motion: {e}")))?;
        Ok(placement)
    }

    pub fn calibration_pose(&self) -> CalibrationPose {
        self.motion.params.pose.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.session;
        if let Some(d) = s.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::config("session.duration_s must be positive"));
            }
        }
        if !(s.setup_s >= 0.0 && s.setup_s.is_finite()) {
            return Err(Error::config("session.setup_s must be non-negative"));
        }
        if !(s.window_s > 0.0 && s.window_s.is_finite()) {
            return Err(Error::config("session.window_s must be positive"));
        }
        preset_scenario(&self.motion.preset, &self.preset_params()).map_err(|e| Error::config(format!("motion: {e}")))?;
        self.motion.noise.validate().map_err(|e| Error::config(format!("motion.noise: {e}")))?;
        self.placement()?;
        self.protocol.timing.validate()?;
        self.protocol.hop.validate()?;
        self.protocol.ble.validate()?;
        for (i, it) in self.interference.interferers.iter().enumerate() {
            it.validate().map_err(|e| Error::config(format!("interference.interferers[{i}]: {e}")))?;
        }
        if !(0.0..=1.0).contains(&self.interference.floor_loss) {
            return Err(Error::config("interference.floor_loss must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Independent seed for one purpose of a run.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const SEED_NOISE: u64 = 1;
const SEED_MOUNT: u64 = 2;
const SEED_PROTOCOL: u64 = 3;
const SEED_INTERFERENCE: u64 = 4;
const SEED_FLOOR: u64 = 5;

/// Wi-Fi access point defaults used by the crowded preset.
pub const CROWDED_WIFI_DUTY: f64 = 0.25;
pub const CROWDED_WIFI_PEAK_DUTY: f64 = 0.8;
pub const CROWDED_WIFI_BURST_MS: f64 = 2.0;

/// A room full of 2.4 GHz traffic: four access points on each of Wi-Fi
/// channels 1, 6 and 11 plus eight Bluetooth devices. Access points switch
/// to a heavier duty during congestion peaks a few seconds long.
pub fn crowded_preset() -> (Vec<Interferer>, PeakSchedule) {
    let mut v = vec![];
    for ch in [1u8, 6, 11] {
        for _ in 0..4 {
            v.push(Interferer::new(InterfererKind::WifiAp {
                wifi_channel: ch,
                duty: CROWDED_WIFI_DUTY,
                mean_burst_ms: CROWDED_WIFI_BURST_MS,
                peak_duty: Some(CROWDED_WIFI_PEAK_DUTY),
            }));
        }
    }
    for _ in 0..8 {
        v.push(Interferer::new(InterfererKind::BtDevice {
            event_interval_ms: 15.0,
            burst_us: 296,
        }));
    }
    let peaks = PeakSchedule::Random {
        quiet_mean_ms: 8_000.0,
        peak_min_ms: 2_000.0,
        peak_max_ms: 4_000.0,
    };
    (v, peaks)
}

/// Interferers and peak schedule after applying the preset.
pub fn interference_of(sc: &Scenario) -> (Vec<Interferer>, PeakSchedule) {
    let (mut list, mut peaks) = match sc.interference.preset {
        Some(InterferencePreset::Crowded) => crowded_preset(),
        _ => (vec![], PeakSchedule::None),
    };
    list.extend(sc.interference.interferers.iter().cloned());
    if let Some(p) = &sc.interference.peaks {
        peaks = p.clone();
    }
    (list, peaks)
}

/// Builds the shared medium for `[0, end_us)`.
pub fn build_medium(sc: &Scenario, end_us: Micros) -> Result<(Medium, Vec<&'static str>)> {
    let (list, peaks) = interference_of(sc);
    let seed = derive_seed(sc.session.seed, SEED_INTERFERENCE);
    let peak_intervals = peaks.intervals(end_us, seed)?;
    let mut bursts = vec![];
    let mut labels = vec![];
    for (i, it) in list.iter().enumerate() {
        bursts.push(occupancy(it, i, (0, end_us.max(1)), &peak_intervals, seed)?);
        labels.push(it.kind_label());
    }
    let medium = Medium::new(bursts, sc.interference.floor_loss, derive_seed(sc.session.seed, SEED_FLOOR))?;
    Ok((medium, labels))
}

fn session_bounds(sc: &Scenario, motion_duration_s: f64) -> (Micros, Micros) {
    let setup = (sc.session.setup_s * 1e6).round() as Micros;
    let dur = (sc.session.duration_s.unwrap_or(motion_duration_s) * 1e6).round() as Micros;
    (setup, setup + dur)
}

/// Runs only the radio side of a scenario: protocol session over the
/// scenario's interference, metrics over the recorded phase.
pub fn simulate_radio(sc: &Scenario) -> Result<(SessionTrace, SessionMetrics)> {
    sc.validate()?;
    let (spec, _) = preset_scenario(&sc.motion.preset, &sc.preset_params())?;
    let placement = sc.placement()?;
    let (setup, end) = session_bounds(sc, spec.duration_s);
    let trace = run_protocol(sc, &placement, setup, end)?;
    let metrics = session_metrics(&trace, sc.session.window_s);
    Ok((trace, metrics))
}

fn run_protocol(sc: &Scenario, placement: &SensorPlacement, setup: Micros, end: Micros) -> Result<SessionTrace> {
    let roster: Vec<SensorId> = placement.sensors().collect();
    let (mut medium, labels) = build_medium(sc, end)?;
    let seed = derive_seed(sc.session.seed, SEED_PROTOCOL);
    let mut trace = match sc.protocol_kind() {
        ProtocolKind::Cw => {
            let cfg = CwConfig {
                roster,
                plan: ChannelPlan::standard(),
                timing: sc.protocol.timing.clone(),
                policy: sc.protocol.hop.clone(),
                seed,
                session_id: (sc.session.seed & 0xffff) as u16,
            };
            master_run(&cfg, &mut medium, end)?
        }
        ProtocolKind::BleBaseline => ble_baseline_run(&roster, &sc.protocol.ble, &mut medium, end, seed)?,
    };
    trace.metrics_window = (setup, end);
    merge_interference(&mut trace, &medium, &labels);
    Ok(trace)
}

/// The initial data channel the polling master will use for `sc`.
pub fn initial_channel(sc: &Scenario) -> u8 {
    CwConfig::new(vec![1], derive_seed(sc.session.seed, SEED_PROTOCOL)).initial_channel()
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub placement: SensorPlacement,
    pub pose: CalibrationPose,
    pub trace: SessionTrace,
    pub metrics: SessionMetrics,
    /// Noisy samples as the host received them.
    pub recording: Vec<RecordingFrame>,
    /// Noise-free orientation of each sensor at the same timestamps.
    pub ground_truth: Vec<RecordingFrame>,
}

/// Runs a scenario end to end.
pub fn simulate(sc: &Scenario) -> Result<Simulation> {
    sc.validate()?;
    let (spec, _) = preset_scenario(&sc.motion.preset, &sc.preset_params())?;
    let placement = sc.placement()?;
    let motion_len = spec.duration_s;
    let (setup, end) = session_bounds(sc, motion_len);
    let trace = run_protocol(sc, &placement, setup, end)?;
    let metrics = session_metrics(&trace, sc.session.window_s);

    let noise = sc.motion.noise.with_seed(derive_seed(sc.session.seed, SEED_NOISE));
    let offsets = match sc.motion.mounting {
        Mounting::Random => MountingOffset::random(&placement, derive_seed(sc.session.seed, SEED_MOUNT)),
        Mounting::Aligned => MountingOffset::identity(),
    };
    let mut body = SyntheticBody::new(spec, Skeleton::standard(), placement.clone(), offsets, noise)?;

    let mut recording = vec![];
    let mut ground_truth = vec![];
    for (s, r) in body.calibration_snapshot()? {
        recording.push(RecordingFrame::new(0, s, 0, r.q, r.status)?);
    }
    for (s, q) in body.rest_truth()? {
        ground_truth.push(RecordingFrame::new(0, s, 0, q, 3)?);
    }
    let motion_t = |us: Micros| (us.saturating_sub(setup) as f64 / 1e6).min(motion_len);
    let mut delivered: Vec<_> = trace
        .deliveries
        .iter()
        .filter(|d| d.rx_us >= setup && d.rx_us < end)
        .copied()
        .collect();
    delivered.sort_by_key(|d| (d.rx_us, d.sensor));
    let mut next_seq: BTreeMap<SensorId, u64> = BTreeMap::new();
    for d in delivered {
        let ts = d.rx_us - setup;
        // Deliveries keep their protocol sequence numbers; these start at 1.
        let seq = d.seq.max(next_seq.get(&d.sensor).copied().unwrap_or(1));
        next_seq.insert(d.sensor, seq + 1);
        let r = body.read(d.sensor, motion_t(d.sample_us))?;
        recording.push(RecordingFrame::new(ts, d.sensor, seq, r.q, r.status)?);
        let q = body.truth(d.sensor, motion_t(d.rx_us))?;
        ground_truth.push(RecordingFrame::new(ts, d.sensor, seq, q, 3)?);
    }
    Ok(Simulation {
        placement,
        pose: sc.calibration_pose(),
        trace,
        metrics,
        recording,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{calibration_from_recording, joint_angle_series};
    use crate::skeleton::JointSpec;

    #[test]
    fn zero_noise_artificial_joint_reads_the_set_angle() {
        let mut sc = Scenario::new("artificial-joint");
        sc.motion.params.angle_deg = Some(40.0);
        sc.motion.noise = NoiseModel::zero();
        sc.session.duration_s = Some(2.0);
        let sim = simulate(&sc).unwrap();
        let calib = calibration_from_recording(&sim.recording, sim.pose).unwrap();
        let j = JointSpec::by_label("right-elbow").unwrap();
        let s = joint_angle_series(&sim.recording, &calib, &Skeleton::standard(), &j).unwrap();
        assert!(s.points.len() > 100);
        for v in s.values() {
            assert!((v - 40.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn reruns_are_identical() {
        let mut sc = Scenario::new("elbow-flexion").with_seed(7);
        sc.session.duration_s = Some(3.0);
        let a = simulate(&sc).unwrap();
        let b = simulate(&sc).unwrap();
        assert_eq!(a.recording, b.recording);
        assert_eq!(a.trace.records, b.trace.records);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn oversized_roster_is_a_config_error() {
        let mut sc = Scenario::new("half-jacks");
        sc.placement.sensors = Some((1..=13).collect());
        assert!(matches!(sc.validate(), Err(Error::Config(_))));
        let sc = Scenario::new("half-jacks").with_protocol(ProtocolKind::BleBaseline);
        assert!(matches!(simulate_radio(&sc), Err(Error::Config(_))));
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        assert_ne!(derive_seed(1, SEED_NOISE), derive_seed(1, SEED_MOUNT));
        assert_eq!(derive_seed(1, SEED_NOISE), derive_seed(1, SEED_NOISE));
    }
}
