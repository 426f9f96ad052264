//! Spectrum model of the 2.4 GHz band.
//!
//! Protocol channels are 1 MHz apart with a 2 MHz occupied bandwidth, so
//! neighbours overlap. Interferers occupy their own bands and follow
//! seeded on/off processes. A transmission is lost if anything else
//! occupies an overlapping band at any instant of its airtime; there is no
//! capture effect.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Virtual time in microseconds.
pub type Micros = u64;

pub const NUM_CHANNELS: u8 = 80;
pub const SYNC_CHANNELS: [u8; 3] = [2, 26, 79];
pub const NUM_DATA_CHANNELS: usize = 77;
pub const NUM_BLE_DATA_CHANNELS: u8 = 37;
pub const NUM_BT_CHANNELS: u8 = 40;

/// A closed frequency interval in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_mhz: f64,
    pub hi_mhz: f64,
}

impl Band {
    pub fn centered(center_mhz: f64, width_mhz: f64) -> Band {
        Band {
            lo_mhz: center_mhz - width_mhz / 2.0,
            hi_mhz: center_mhz + width_mhz / 2.0,
        }
    }

    /// True when the intersection has non-zero width; touching edges do not count.
    pub fn overlaps(&self, other: &Band) -> bool {
        self.lo_mhz.max(other.lo_mhz) < self.hi_mhz.min(other.hi_mhz)
    }
}

/// The 80-channel plan: three fixed sync channels and 77 data channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    sync: [u8; 3],
    data: Vec<u8>,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        ChannelPlan::standard()
    }
}

impl ChannelPlan {
    pub fn standard() -> Self {
        let data = (0..NUM_CHANNELS).filter(|k| !SYNC_CHANNELS.contains(k)).collect();
        ChannelPlan {
            sync: SYNC_CHANNELS,
            data,
        }
    }

    pub fn center_mhz(k: u8) -> f64 {
        2400.0 + f64::from(k)
    }

    pub fn band(k: u8) -> Band {
        Band::centered(Self::center_mhz(k), 2.0)
    }

    pub fn sync_channels(&self) -> &[u8; 3] {
        &self.sync
    }

    pub fn data_channels(&self) -> &[u8] {
        &self.data
    }

    pub fn is_sync(&self, k: u8) -> bool {
        self.sync.contains(&k)
    }
}

/// Does protocol channel `k` share spectrum with `band`?
pub fn overlaps(k: u8, band: &Band) -> Result<bool> {
    if k >= NUM_CHANNELS {
        return Err(Error::invalid(format!("channel {k} outside 0..{NUM_CHANNELS}")));
    }
    Ok(ChannelPlan::band(k).overlaps(band))
}

/// Band of Wi-Fi channel `ch` (22 MHz wide).
pub fn wifi_band(ch: u8) -> Band {
    Band::centered(2407.0 + 5.0 * f64::from(ch), 22.0)
}

/// Centre of BLE data channel `k` (0..37), skipping the advertising slots.
pub fn ble_data_center_mhz(k: u8) -> f64 {
    if k <= 10 {
        2404.0 + 2.0 * f64::from(k)
    } else {
        2406.0 + 2.0 * f64::from(k)
    }
}

/// Centre of Bluetooth channel `k` (0..40) on the 2 MHz grid.
pub fn bt_center_mhz(k: u8) -> f64 {
    2402.0 + 2.0 * f64::from(k)
}

/// Identifies who put energy on the air. Master is 0, sensors use their
/// id, BLE centrals `100 + sensor`, interferers `1000 + index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId(pub u32);

impl SourceId {
    pub const MASTER: SourceId = SourceId(0);

    pub fn sensor(id: u16) -> SourceId {
        SourceId(u32::from(id))
    }

    pub fn central(id: u16) -> SourceId {
        SourceId(100 + u32::from(id))
    }

    pub fn interferer(index: usize) -> SourceId {
        SourceId(1000 + index as u32)
    }

    pub fn is_interferer(self) -> bool {
        self.0 >= 1000
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => f.write_str("master"),
            n @ 1..=99 => write!(f, "s{n}"),
            n @ 100..=999 => write!(f, "central{}", n - 100),
            n => write!(f, "i{}", n - 1000),
        }
    }
}

/// Where a transmission sits in the spectrum, for display and lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelRef {
    Cw(u8),
    Ble(u8),
    Wifi(u8),
    Bt(u8),
    Custom(Band),
}

impl ChannelRef {
    pub fn band(self) -> Band {
        match self {
            ChannelRef::Cw(k) => ChannelPlan::band(k),
            ChannelRef::Ble(k) => Band::centered(ble_data_center_mhz(k), 2.0),
            ChannelRef::Wifi(ch) => wifi_band(ch),
            ChannelRef::Bt(k) => Band::centered(bt_center_mhz(k), 2.0),
            ChannelRef::Custom(b) => b,
        }
    }
}

impl fmt::Display for ChannelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelRef::Cw(k) => write!(f, "{k}"),
            ChannelRef::Ble(k) => write!(f, "ble{k}"),
            ChannelRef::Wifi(ch) => write!(f, "wifi{ch}"),
            ChannelRef::Bt(k) => write!(f, "bt{k}"),
            ChannelRef::Custom(b) => write!(f, "{}-{}MHz", b.lo_mhz, b.hi_mhz),
        }
    }
}

/// One burst of energy on the air.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub channel: ChannelRef,
    pub start_us: Micros,
    pub duration_us: Micros,
    pub source: SourceId,
}

impl Transmission {
    pub fn new(channel: ChannelRef, start_us: Micros, duration_us: Micros, source: SourceId) -> Self {
        debug_assert!(duration_us > 0, "zero-length transmission");
        Transmission {
            channel,
            start_us,
            duration_us,
            source,
        }
    }

    pub fn end_us(&self) -> Micros {
        self.start_us + self.duration_us
    }

    pub fn band(&self) -> Band {
        self.channel.band()
    }

    /// Half-open time overlap of the two airtimes.
    pub fn overlaps_in_time(&self, other: &Transmission) -> bool {
        self.start_us < other.end_us() && other.start_us < self.end_us()
    }
}

/// Scenario-wide periods of heavy Wi-Fi use. During a peak every access
/// point with a `peak_duty` switches to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PeakSchedule {
    #[default]
    None,
    /// Explicit `(start_ms, end_ms)` intervals.
    Fixed { intervals: Vec<(u64, u64)> },
    /// Quiet gaps drawn from an exponential, peaks uniform in `[min, max]`.
    Random {
        quiet_mean_ms: f64,
        peak_min_ms: f64,
        peak_max_ms: f64,
    },
}

impl PeakSchedule {
    /// Peak intervals in µs covering `[0, horizon)`.
    pub fn intervals(&self, horizon: Micros, seed: u64) -> Result<Vec<(Micros, Micros)>> {
        match self {
            PeakSchedule::None => Ok(vec![]),
            PeakSchedule::Fixed { intervals } => {
                let mut out: Vec<_> = intervals
                    .iter()
                    .map(|&(a, b)| (a * 1000, b * 1000))
                    .filter(|(a, b)| a < b)
                    .collect();
                out.sort();
                Ok(out)
            }
            PeakSchedule::Random {
                quiet_mean_ms,
                peak_min_ms,
                peak_max_ms,
            } => {
                if !(*quiet_mean_ms > 0.0 && *peak_min_ms > 0.0 && peak_max_ms >= peak_min_ms) {
                    return Err(Error::config("peak schedule needs positive means and min <= max"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(0x7065616b);
                let quiet = Exp::new(1.0 / (quiet_mean_ms * 1000.0)).unwrap();
                let mut out = vec![];
                let mut t = 0.0;
                while (t as Micros) < horizon {
                    t += quiet.sample(&mut rng);
                    let len = rng.random_range(*peak_min_ms..=*peak_max_ms) * 1000.0;
                    if (t as Micros) < horizon {
                        out.push((t as Micros, (t + len) as Micros));
                    }
                    t += len;
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterfererKind {
    /// Wi-Fi access point on channel 1..13 with alternating busy/idle
    /// periods; `duty` is the long-run busy fraction outside peaks.
    WifiAp {
        wifi_channel: u8,
        duty: f64,
        mean_burst_ms: f64,
        #[serde(default)]
        peak_duty: Option<f64>,
    },
    /// Bluetooth device sending one burst per event on a hopping channel.
    BtDevice { event_interval_ms: f64, burst_us: u64 },
    /// Arbitrary band with the same busy/idle process as an access point.
    Narrowband {
        center_mhz: f64,
        width_mhz: f64,
        duty: f64,
        mean_burst_ms: f64,
    },
}

/// An interference source, optionally limited to `[start_ms, stop_ms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "InterfererRepr")]
pub struct Interferer {
    #[serde(flatten)]
    pub kind: InterfererKind,
    #[serde(default)]
    pub start_ms: Option<u64>,
    #[serde(default)]
    pub stop_ms: Option<u64>,
}

// Flat on-disk form. Serde cannot reject unknown keys next to a flattened
// field, so each variant repeats the activity window.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum InterfererRepr {
    WifiAp {
        wifi_channel: u8,
        duty: f64,
        mean_burst_ms: f64,
        #[serde(default)]
        peak_duty: Option<f64>,
        #[serde(default)]
        start_ms: Option<u64>,
        #[serde(default)]
        stop_ms: Option<u64>,
    },
    BtDevice {
        event_interval_ms: f64,
        burst_us: u64,
        #[serde(default)]
        start_ms: Option<u64>,
        #[serde(default)]
        stop_ms: Option<u64>,
    },
    Narrowband {
        center_mhz: f64,
        width_mhz: f64,
        duty: f64,
        mean_burst_ms: f64,
        #[serde(default)]
        start_ms: Option<u64>,
        #[serde(default)]
        stop_ms: Option<u64>,
    },
}

impl From<InterfererRepr> for Interferer {
    fn from(r: InterfererRepr) -> Self {
        let (kind, start_ms, stop_ms) = match r {
            InterfererRepr::WifiAp {
                wifi_channel,
                duty,
                mean_burst_ms,
                peak_duty,
                start_ms,
                stop_ms,
            } => (
                InterfererKind::WifiAp {
                    wifi_channel,
                    duty,
                    mean_burst_ms,
                    peak_duty,
                },
                start_ms,
                stop_ms,
            ),
            InterfererRepr::BtDevice {
                event_interval_ms,
                burst_us,
                start_ms,
                stop_ms,
            } => (
                InterfererKind::BtDevice {
                    event_interval_ms,
                    burst_us,
                },
                start_ms,
                stop_ms,
            ),
            InterfererRepr::Narrowband {
                center_mhz,
                width_mhz,
                duty,
                mean_burst_ms,
                start_ms,
                stop_ms,
            } => (
                InterfererKind::Narrowband {
                    center_mhz,
                    width_mhz,
                    duty,
                    mean_burst_ms,
                },
                start_ms,
                stop_ms,
            ),
        };
        Interferer { kind, start_ms, stop_ms }
    }
}

impl Interferer {
    pub fn new(kind: InterfererKind) -> Self {
        Interferer {
            kind,
            start_ms: None,
            stop_ms: None,
        }
    }

    pub fn wifi(wifi_channel: u8, duty: f64, mean_burst_ms: f64) -> Self {
        Interferer::new(InterfererKind::WifiAp {
            wifi_channel,
            duty,
            mean_burst_ms,
            peak_duty: None,
        })
    }

    pub fn active_from(mut self, ms: u64) -> Self {
        self.start_ms = Some(ms);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let duty_ok = |d: f64| (0.0..=1.0).contains(&d);
        match &self.kind {
            InterfererKind::WifiAp {
                wifi_channel,
                duty,
                mean_burst_ms,
                peak_duty,
            } => {
                if !(1..=13).contains(wifi_channel) {
                    return Err(Error::config(format!("wifi channel {wifi_channel} outside 1..=13")));
                }
                if !duty_ok(*duty) || !peak_duty.map(duty_ok).unwrap_or(true) {
                    return Err(Error::config("wifi duty must lie in [0, 1]"));
                }
                if !positive(*mean_burst_ms) {
                    return Err(Error::config("wifi mean_burst_ms must be positive"));
                }
            }
            InterfererKind::BtDevice {
                event_interval_ms,
                burst_us,
            } => {
                if !positive(*event_interval_ms) || *burst_us == 0 {
                    return Err(Error::config("bt device needs a positive interval and burst"));
                }
                if *burst_us as f64 > event_interval_ms * 1000.0 {
                    return Err(Error::config("bt burst longer than its event interval"));
                }
            }
            InterfererKind::Narrowband {
                center_mhz,
                width_mhz,
                duty,
                mean_burst_ms,
            } => {
                if !center_mhz.is_finite() || !positive(*width_mhz) {
                    return Err(Error::config("narrowband needs a finite centre and positive width"));
                }
                if !duty_ok(*duty) || !positive(*mean_burst_ms) {
                    return Err(Error::config("narrowband duty in [0, 1] and positive burst required"));
                }
            }
        }
        if let (Some(a), Some(b)) = (self.start_ms, self.stop_ms) {
            if b <= a {
                return Err(Error::config("interferer stop_ms must follow start_ms"));
            }
        }
        Ok(())
    }

    /// Label used in traces.
    pub fn kind_label(&self) -> &'static str {
        match self.kind {
            InterfererKind::WifiAp { .. } => "wifi",
            InterfererKind::BtDevice { .. } => "bt",
            InterfererKind::Narrowband { .. } => "narrowband",
        }
    }
}

/// Alternating busy/idle renewal process over `[t0, t1)` with busy
/// fraction `duty`, started in its stationary state.
fn renewal_bursts(
    rng: &mut ChaCha8Rng,
    t0: Micros,
    t1: Micros,
    duty: f64,
    mean_burst_us: f64,
    mut emit: impl FnMut(Micros, Micros),
) {
    if duty <= 0.0 || t1 <= t0 {
        return;
    }
    if duty >= 1.0 {
        emit(t0, t1 - t0);
        return;
    }
    let busy = Exp::new(1.0 / mean_burst_us).unwrap();
    let idle = Exp::new(duty / (mean_burst_us * (1.0 - duty))).unwrap();
    let mut t = t0 as f64;
    let mut on = rng.random_bool(duty);
    while t < t1 as f64 {
        let len = if on { busy.sample(rng) } else { idle.sample(rng) };
        if on {
            let start = t.round() as Micros;
            let end = ((t + len).round() as Micros).min(t1);
            if end > start {
                emit(start, end - start);
            }
        }
        t += len;
        on = !on;
    }
}

/// Seeded burst list of one interferer over `[t0, t1)`.
///
/// `peaks` switches access points with a `peak_duty` to that duty inside
/// the given intervals.
pub fn occupancy(
    interferer: &Interferer,
    index: usize,
    window: (Micros, Micros),
    peaks: &[(Micros, Micros)],
    seed: u64,
) -> Result<Vec<Transmission>> {
    let (t0, t1) = window;
    if t0 >= t1 {
        return Err(Error::invalid("occupancy window must have t0 < t1"));
    }
    interferer.validate()?;
    let t0 = t0.max(interferer.start_ms.map(|m| m * 1000).unwrap_or(0));
    let t1 = t1.min(interferer.stop_ms.map(|m| m * 1000).unwrap_or(Micros::MAX));
    let source = SourceId::interferer(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let mut out = vec![];
    if t0 >= t1 {
        return Ok(out);
    }
    match interferer.kind {
        InterfererKind::WifiAp {
            wifi_channel,
            duty,
            mean_burst_ms,
            peak_duty,
        } => {
            let ch = ChannelRef::Wifi(wifi_channel);
            let mut emit = |s, d| out.push(Transmission::new(ch, s, d, source));
            // Piecewise-constant duty: base outside peaks, peak inside.
            let mut segments = vec![];
            let mut cursor = t0;
            if let Some(pd) = peak_duty {
                for &(a, b) in peaks {
                    let (a, b) = (a.max(t0), b.min(t1));
                    if a >= b || a < cursor {
                        continue;
                    }
                    segments.push((cursor, a, duty));
                    segments.push((a, b, pd));
                    cursor = b;
                }
            }
            segments.push((cursor, t1, duty));
            for (a, b, d) in segments {
                renewal_bursts(&mut rng, a, b, d, mean_burst_ms * 1000.0, &mut emit);
            }
        }
        InterfererKind::Narrowband {
            center_mhz,
            width_mhz,
            duty,
            mean_burst_ms,
        } => {
            let ch = ChannelRef::Custom(Band::centered(center_mhz, width_mhz));
            renewal_bursts(&mut rng, t0, t1, duty, mean_burst_ms * 1000.0, |s, d| {
                out.push(Transmission::new(ch, s, d, source))
            });
        }
        InterfererKind::BtDevice {
            event_interval_ms,
            burst_us,
        } => {
            let interval = event_interval_ms * 1000.0;
            let hop = rng.random_range(5..=16u8);
            let mut channel = rng.random_range(0..NUM_BT_CHANNELS);
            let mut t = t0 as f64 + rng.random_range(0.0..interval);
            while t < t1 as f64 {
                channel = (channel + hop) % NUM_BT_CHANNELS;
                let start = t.round() as Micros;
                let d = burst_us.min(t1 - start);
                if d > 0 {
                    out.push(Transmission::new(ChannelRef::Bt(channel), start, d, source));
                }
                t += interval;
            }
        }
    }
    Ok(out)
}

/// Why a transmission failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    Collided { cause: SourceId },
    FloorLost,
    /// Interferer activity; never arbitrated.
    Busy,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::Collided { .. } => "collided",
            Outcome::FloorLost => "floor-lost",
            Outcome::Busy => "busy",
        }
    }

    pub fn is_delivered(self) -> bool {
        self == Outcome::Delivered
    }
}

/// Shared band state: interferer bursts plus every protocol transmission
/// put on the air so far.
#[derive(Debug, Clone)]
pub struct Medium {
    interference: Vec<Vec<Transmission>>,
    nodes: Vec<Transmission>,
    longest_node_us: Micros,
    floor_loss: f64,
    rng: ChaCha8Rng,
}

impl Medium {
    pub fn new(interference: Vec<Vec<Transmission>>, floor_loss: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&floor_loss) {
            return Err(Error::config("floor loss probability must lie in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x666c6f6f72);
        Ok(Medium {
            interference,
            nodes: vec![],
            longest_node_us: 0,
            floor_loss,
            rng,
        })
    }

    pub fn clean() -> Self {
        Medium::new(vec![], 0.0, 0).unwrap()
    }

    /// Registers a protocol transmission; call in nondecreasing start order.
    pub fn transmit(&mut self, tx: Transmission) {
        debug_assert!(self.nodes.last().map(|l| l.start_us <= tx.start_us).unwrap_or(true));
        self.longest_node_us = self.longest_node_us.max(tx.duration_us);
        self.nodes.push(tx);
    }

    pub fn interference(&self) -> impl Iterator<Item = &Transmission> {
        self.interference.iter().flatten()
    }

    pub fn node_transmissions(&self) -> &[Transmission] {
        &self.nodes
    }

    /// First transmission other than `tx` that overlaps it in time and band.
    pub fn first_conflict(&self, tx: &Transmission) -> Option<SourceId> {
        let band = tx.band();
        for bursts in &self.interference {
            // Bursts of one source never overlap each other, so the last one
            // starting before our end is the only candidate.
            let idx = bursts.partition_point(|b| b.start_us < tx.end_us());
            if idx > 0 {
                let b = &bursts[idx - 1];
                if b.end_us() > tx.start_us && b.band().overlaps(&band) {
                    return Some(b.source);
                }
            }
        }
        let lo = tx.start_us.saturating_sub(self.longest_node_us);
        let from = self.nodes.partition_point(|n| n.start_us < lo);
        self.nodes[from..]
            .iter()
            .filter(|n| **n != *tx)
            .find(|n| n.overlaps_in_time(tx) && n.band().overlaps(&band))
            .map(|n| n.source)
    }

    /// Decides the fate of `tx`. Every transmission that can overlap it
    /// must already be registered, i.e. call at or after its end.
    pub fn arbitrate(&mut self, tx: &Transmission) -> Outcome {
        if let Some(cause) = self.first_conflict(tx) {
            return Outcome::Collided { cause };
        }
        if self.floor_loss > 0.0 && self.rng.random_bool(self.floor_loss) {
            return Outcome::FloorLost;
        }
        Outcome::Delivered
    }
}

/// Frame kinds that appear in session traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameType {
    Beacon,
    Poll,
    Response,
    Hop,
    Ack,
    /// BLE baseline central-to-peripheral packet.
    BleEmpty,
    /// BLE baseline peripheral data packet.
    BleData,
}

impl FrameType {
    pub fn label(self) -> &'static str {
        match self {
            FrameType::Beacon => "beacon",
            FrameType::Poll => "poll",
            FrameType::Response => "response",
            FrameType::Hop => "hop",
            FrameType::Ack => "ack",
            FrameType::BleEmpty => "ble-empty",
            FrameType::BleData => "ble-data",
        }
    }
}

/// One row of a radio or session trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time_us: Micros,
    pub duration_us: Micros,
    pub source: SourceId,
    pub channel: ChannelRef,
    pub kind: &'static str,
    pub outcome: Outcome,
    pub frame_type: Option<FrameType>,
    pub sensor_id: Option<u16>,
    pub seq: Option<u64>,
}

pub const RADIO_TRACE_HEADER: &str = "time_us,source,channel,kind,outcome";
pub const SESSION_TRACE_HEADER: &str = "time_us,source,channel,kind,outcome,frame_type,sensor_id";

/// Radio trace CSV (`time_us,source,channel,kind,outcome`).
pub fn radio_trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 32 + 64);
    out.push_str(RADIO_TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.time_us,
            r.source,
            r.channel,
            r.kind,
            r.outcome.label()
        ));
    }
    out
}

/// Session trace CSV: the radio columns plus frame type and sensor id
/// (empty for interferer rows).
pub fn session_trace_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 40 + 64);
    out.push_str(SESSION_TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.time_us,
            r.source,
            r.channel,
            r.kind,
            r.outcome.label(),
            r.frame_type.map(FrameType::label).unwrap_or(""),
            r.sensor_id.map(|s| s.to_string()).unwrap_or_default()
        ));
    }
    out
}

struct Pending<E> {
    time: Micros,
    source: SourceId,
    seq: u64,
    event: E,
}

impl<E> Pending<E> {
    fn key(&self) -> (Micros, SourceId, u64) {
        (self.time, self.source, self.seq)
    }
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Single-threaded discrete-event queue. Events fire in time order, ties
/// broken by source id and then insertion order.
pub struct EventScheduler<E> {
    now: Micros,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Pending<E>>>,
    pub trace: Vec<TraceRecord>,
}

impl<E> Default for EventScheduler<E> {
    fn default() -> Self {
        EventScheduler::new()
    }
}

impl<E> EventScheduler<E> {
    pub fn new() -> Self {
        EventScheduler {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: vec![],
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Queues `event` at absolute time `at` (clamped to now).
    pub fn schedule(&mut self, at: Micros, source: SourceId, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Pending {
            time: at.max(self.now),
            source,
            seq,
            event,
        }));
    }

    pub fn pop(&mut self) -> Option<(Micros, E)> {
        let Reverse(p) = self.queue.pop()?;
        debug_assert!(p.time >= self.now);
        self.now = p.time;
        Some((p.time, p.event))
    }

    pub fn pop_until(&mut self, horizon: Micros) -> Option<(Micros, E)> {
        match self.queue.peek() {
            Some(Reverse(p)) if p.time < horizon => self.pop(),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn record(&mut self, r: TraceRecord) {
        self.trace.push(r);
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_partitions_the_band() {
        let p = ChannelPlan::standard();
        assert_eq!(p.sync_channels().len(), 3);
        assert_eq!(p.data_channels().len(), NUM_DATA_CHANNELS);
        for k in 0..NUM_CHANNELS {
            assert!(p.is_sync(k) ^ p.data_channels().contains(&k));
        }
    }

    #[test]
    fn overlap_examples() {
        assert!(overlaps(37, &wifi_band(6)).unwrap());
        assert_eq!(wifi_band(6), Band { lo_mhz: 2426.0, hi_mhz: 2448.0 });
        assert!(!overlaps(79, &wifi_band(1)).unwrap());
        // touching edges: [2423, 2425] vs [2401, 2423]
        assert!(!overlaps(24, &wifi_band(1)).unwrap());
        assert!(overlaps(80, &wifi_band(1)).is_err());
    }

    #[test]
    fn ble_channel_map_skips_advertising() {
        assert_eq!(ble_data_center_mhz(0), 2404.0);
        assert_eq!(ble_data_center_mhz(10), 2424.0);
        assert_eq!(ble_data_center_mhz(11), 2428.0);
        assert_eq!(ble_data_center_mhz(36), 2478.0);
    }

    #[test]
    fn occupancy_duty_extremes() {
        let w = (0, 1_000_000);
        let none = occupancy(&Interferer::wifi(6, 0.0, 2.0), 0, w, &[], 1).unwrap();
        assert!(none.is_empty());
        let full = occupancy(&Interferer::wifi(6, 1.0, 2.0), 0, w, &[], 1).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!((full[0].start_us, full[0].duration_us), (0, 1_000_000));
        assert!(occupancy(&Interferer::wifi(6, 0.5, 2.0), 0, (5, 5), &[], 1).is_err());
    }

    #[test]
    fn occupancy_reaches_configured_duty() {
        let w = (0, 10_000_000);
        let bursts = occupancy(&Interferer::wifi(6, 0.5, 2.0), 3, w, &[], 42).unwrap();
        let busy: u64 = bursts.iter().map(|b| b.duration_us).sum();
        let frac = busy as f64 / 10_000_000.0;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
        for pair in bursts.windows(2) {
            assert!(pair[0].end_us() <= pair[1].start_us);
        }
    }

    #[test]
    fn occupancy_honours_activity_window() {
        let i = Interferer::wifi(1, 1.0, 1.0).active_from(5_000);
        let b = occupancy(&i, 0, (0, 10_000_000), &[], 0).unwrap();
        assert_eq!(b[0].start_us, 5_000_000);
    }

    #[test]
    fn bt_device_bursts_once_per_event() {
        let i = Interferer::new(InterfererKind::BtDevice {
            event_interval_ms: 15.0,
            burst_us: 296,
        });
        let b = occupancy(&i, 0, (0, 1_500_000), &[], 3).unwrap();
        assert!((99..=100).contains(&b.len()));
        assert!(b.iter().all(|t| t.duration_us == 296));
    }

    #[test]
    fn arbitrate_cases() {
        let cw = |start| Transmission::new(ChannelRef::Cw(37), start, 128, SourceId::sensor(1));
        let mut m = Medium::clean();
        let tx = cw(1_000);
        m.transmit(tx);
        assert_eq!(m.arbitrate(&tx), Outcome::Delivered);

        let wifi = Transmission::new(ChannelRef::Wifi(6), 500, 5_000, SourceId::interferer(0));
        let mut m = Medium::new(vec![vec![wifi]], 0.0, 0).unwrap();
        assert!(matches!(m.arbitrate(&cw(1_000)), Outcome::Collided { .. }));

        // burst starts 1 µs before the packet ends
        let tail = Transmission::new(ChannelRef::Wifi(6), 1_127, 2_000, SourceId::interferer(0));
        let mut m = Medium::new(vec![vec![tail]], 0.0, 0).unwrap();
        assert_eq!(
            m.arbitrate(&cw(1_000)),
            Outcome::Collided { cause: SourceId::interferer(0) }
        );
        // and one that starts exactly at the end does not collide
        let after = Transmission::new(ChannelRef::Wifi(6), 1_128, 2_000, SourceId::interferer(0));
        let mut m = Medium::new(vec![vec![after]], 0.0, 0).unwrap();
        assert_eq!(m.arbitrate(&cw(1_000)), Outcome::Delivered);
    }

    #[test]
    fn node_transmissions_collide_with_each_other() {
        let mut m = Medium::clean();
        let a = Transmission::new(ChannelRef::Ble(3), 0, 300, SourceId::sensor(1));
        let b = Transmission::new(ChannelRef::Ble(3), 200, 300, SourceId::sensor(2));
        let c = Transmission::new(ChannelRef::Ble(9), 250, 300, SourceId::sensor(3));
        m.transmit(a);
        m.transmit(b);
        m.transmit(c);
        assert!(matches!(m.arbitrate(&a), Outcome::Collided { .. }));
        assert!(matches!(m.arbitrate(&b), Outcome::Collided { .. }));
        assert_eq!(m.arbitrate(&c), Outcome::Delivered);
    }

    #[test]
    fn floor_loss_is_seeded() {
        let tx = Transmission::new(ChannelRef::Cw(10), 0, 100, SourceId::MASTER);
        let run = || {
            let mut m = Medium::new(vec![], 0.3, 11).unwrap();
            (0..1000).map(|_| m.arbitrate(&tx)).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let lost = a.iter().filter(|o| **o == Outcome::FloorLost).count();
        assert!((230..370).contains(&lost), "{lost}");
    }

    #[test]
    fn scheduler_orders_by_time_source_then_insertion() {
        let mut s: EventScheduler<&str> = EventScheduler::new();
        s.schedule(10, SourceId(2), "c");
        s.schedule(10, SourceId(1), "b");
        s.schedule(5, SourceId(9), "a");
        s.schedule(10, SourceId(2), "d");
        let order: Vec<_> = std::iter::from_fn(|| s.pop()).map(|(_, e)| e).collect();
        assert_eq!(order, ["a", "b", "c", "d"]);
    }

    #[test]
    fn peak_schedule_is_seeded_and_bounded() {
        let p = PeakSchedule::Random {
            quiet_mean_ms: 5_000.0,
            peak_min_ms: 1_000.0,
            peak_max_ms: 2_000.0,
        };
        let a = p.intervals(60_000_000, 4).unwrap();
        assert_eq!(a, p.intervals(60_000_000, 4).unwrap());
        for (s, e) in &a {
            let len = e - s;
            assert!((1_000_000..=2_000_000).contains(&len));
        }
    }
}
