//! Master-slave polling protocol with loss-triggered channel hopping, and a
//! BLE-like baseline for comparison.
//!
//! The master owns all airtime: it beacons on the sync channels until every
//! slave has joined, then polls slaves in roster order on one data channel.
//! When too many recent exchanges fail it announces a new channel and
//! moves. Slaves that miss the announcement fall silent, time out and find
//! the master again through the sync channels.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{
    ChannelPlan, ChannelRef, EventScheduler, FrameType, Medium, Micros, Outcome, SourceId,
    TraceRecord, Transmission, NUM_BLE_DATA_CHANNELS,
};
use crate::skeleton::SensorId;

pub const MAX_ROSTER: usize = 12;
pub const MAX_BLE_ROSTER: usize = 5;

/// Frame timing of the polling protocol. Every field can be overridden
/// from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingProfile {
    pub poll_bytes: u64,
    pub response_bytes: u64,
    pub beacon_bytes: u64,
    pub hop_bytes: u64,
    pub ack_bytes: u64,
    pub turnaround_us: u64,
    pub guard_us: u64,
    /// Host-side processing time per delivered sample.
    pub host_cost_us: u64,
    pub rate_cap_hz: f64,
    pub beacon_interval_ms: f64,
    pub resync_timeout_ms: f64,
    /// Spacing between repeated Hop announcements.
    pub announce_spacing_us: u64,
}

impl Default for TimingProfile {
    fn default() -> Self {
        TimingProfile {
            poll_bytes: 12,
            response_bytes: 32,
            beacon_bytes: 16,
            hop_bytes: 12,
            ack_bytes: 8,
            turnaround_us: 150,
            guard_us: 50,
            host_cost_us: 1_750,
            rate_cap_hz: 60.0,
            beacon_interval_ms: 20.0,
            resync_timeout_ms: 200.0,
            announce_spacing_us: 2_000,
        }
    }
}

impl TimingProfile {
    /// 2 Mbps on air: 4 µs per byte.
    pub const US_PER_BYTE: u64 = 4;

    pub fn airtime_us(&self, frame: FrameType) -> Micros {
        let bytes = match frame {
            FrameType::Poll => self.poll_bytes,
            FrameType::Response => self.response_bytes,
            FrameType::Beacon => self.beacon_bytes,
            FrameType::Hop => self.hop_bytes,
            FrameType::Ack => self.ack_bytes,
            FrameType::BleEmpty | FrameType::BleData => 0,
        };
        bytes * Self::US_PER_BYTE
    }

    /// Poll, turnaround, Response and guard; plus host cost on delivery.
    pub fn slot_us(&self, delivered: bool) -> Micros {
        let base = self.airtime_us(FrameType::Poll)
            + self.turnaround_us
            + self.airtime_us(FrameType::Response)
            + self.guard_us;
        if delivered {
            base + self.host_cost_us
        } else {
            base
        }
    }

    pub fn cap_period_us(&self) -> f64 {
        1e6 / self.rate_cap_hz
    }

    pub fn beacon_interval_us(&self) -> Micros {
        (self.beacon_interval_ms * 1000.0).round() as Micros
    }

    /// A scanning slave stays on each sync channel for two beacon intervals.
    pub fn scan_dwell_us(&self) -> Micros {
        2 * self.beacon_interval_us()
    }

    pub fn resync_timeout_us(&self) -> Micros {
        (self.resync_timeout_ms * 1000.0).round() as Micros
    }

    /// Worst case from a hop until a slave that missed it is synced again:
    /// silence timeout plus one dwell on each sync channel.
    pub fn resync_bound_us(&self) -> Micros {
        self.resync_timeout_us() + 3 * self.scan_dwell_us()
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.poll_bytes,
            self.response_bytes,
            self.beacon_bytes,
            self.hop_bytes,
            self.ack_bytes,
        ];
        if sizes.contains(&0) {
            return Err(Error::config("timing: frame sizes must be positive"));
        }
        if !(self.rate_cap_hz > 0.0 && self.rate_cap_hz.is_finite()) {
            return Err(Error::config("timing: rate_cap_hz must be positive"));
        }
        if !positive(self.beacon_interval_ms) || !positive(self.resync_timeout_ms) {
            return Err(Error::config("timing: beacon interval and resync timeout must be positive"));
        }
        if self.announce_spacing_us < self.airtime_us(FrameType::Hop) + self.guard_us {
            return Err(Error::config("timing: announce spacing shorter than a Hop frame"));
        }
        Ok(())
    }
}

/// When and how the master changes data channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopPolicy {
    /// Losses within the window that trigger a hop.
    pub loss_threshold: usize,
    /// Number of most recent exchanges considered.
    pub loss_window: usize,
    pub blacklist_len: usize,
    pub announce_repeats: u32,
}

impl Default for HopPolicy {
    fn default() -> Self {
        HopPolicy {
            loss_threshold: 3,
            loss_window: 8,
            blacklist_len: 8,
            announce_repeats: 3,
        }
    }
}

impl HopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.loss_threshold == 0 || self.loss_threshold > self.loss_window {
            return Err(Error::config("hop: need 1 <= loss_threshold <= loss_window"));
        }
        if self.blacklist_len >= ChannelPlan::standard().data_channels().len() - 1 {
            return Err(Error::config("hop: blacklist would exhaust the data channels"));
        }
        if self.announce_repeats == 0 {
            return Err(Error::config("hop: announce_repeats must be at least 1"));
        }
        Ok(())
    }
}

/// Header carried by every protocol frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub frame_type: FrameType,
    pub session_id: u16,
    /// Addressed or sending sensor; 0 for broadcasts.
    pub sensor_id: SensorId,
    pub seq: u64,
    /// The master's data channel when the frame was sent.
    pub channel: u8,
    /// Hop target, on Hop frames only.
    pub next_channel: Option<u8>,
    /// When master and slaves move to `next_channel`.
    pub switch_at_us: Option<Micros>,
}

impl FrameHeader {
    fn new(frame_type: FrameType, session_id: u16, sensor_id: SensorId, channel: u8) -> Self {
        FrameHeader {
            frame_type,
            session_id,
            sensor_id,
            seq: 0,
            channel,
            next_channel: None,
            switch_at_us: None,
        }
    }
}

/// Seeded permutation of the data channels with a bounded blacklist of
/// recently abandoned ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopSequence {
    permutation: Vec<u8>,
    position: usize,
    blacklist: VecDeque<u8>,
}

impl HopSequence {
    pub fn new(plan: &ChannelPlan, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x686f70);
        let mut permutation = plan.data_channels().to_vec();
        permutation.shuffle(&mut rng);
        HopSequence {
            permutation,
            position: 0,
            blacklist: VecDeque::new(),
        }
    }

    /// Channel a fresh master starts on.
    pub fn initial(&self) -> u8 {
        self.permutation[self.position]
    }

    pub fn permutation(&self) -> &[u8] {
        &self.permutation
    }

    pub fn blacklist(&self) -> impl Iterator<Item = u8> + '_ {
        self.blacklist.iter().copied()
    }

    /// Blacklists `current` and returns the next permitted channel.
    pub fn select_next_channel(&mut self, current: u8, policy: &HopPolicy) -> u8 {
        if policy.blacklist_len > 0 {
            self.blacklist.push_back(current);
            while self.blacklist.len() > policy.blacklist_len {
                self.blacklist.pop_front();
            }
        }
        let n = self.permutation.len();
        for step in 1..=n {
            let pos = (self.position + step) % n;
            let ch = self.permutation[pos];
            if ch != current && !self.blacklist.contains(&ch) {
                self.position = pos;
                return ch;
            }
        }
        unreachable!("blacklist shorter than the channel set")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlavePhase {
    ScanningSyncChannels,
    Synced { channel: u8 },
    Resyncing,
}

/// Protocol-level happenings, kept alongside the radio trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolEvent {
    /// The master now polls on `channel`.
    MasterChannel { channel: u8 },
    Hop { from: u8, to: u8 },
    /// A slave locked on via a beacon.
    Synced { sensor: SensorId, channel: u8 },
    /// A slave followed a Hop announcement.
    Switched { sensor: SensorId, channel: u8 },
    /// A slave gave up on silence and went back to scanning.
    Resync { sensor: SensorId },
}

#[derive(Debug, Clone)]
pub struct SlaveState {
    pub id: SensorId,
    pub phase: SlavePhase,
    pub last_heard_us: Micros,
    scan_origin_us: Micros,
    scan_phase_us: Micros,
    scan_offset: usize,
    seq: u64,
    pending_switch: Option<(u8, Micros)>,
}

impl SlaveState {
    fn new(id: SensorId, scan_offset: usize, scan_phase_us: Micros) -> Self {
        SlaveState {
            id,
            phase: SlavePhase::ScanningSyncChannels,
            last_heard_us: 0,
            scan_origin_us: 0,
            scan_phase_us,
            scan_offset,
            seq: 0,
            pending_switch: None,
        }
    }

    /// Applies any state change due by time `t`.
    fn advance(&mut self, t: Micros, timing: &TimingProfile, log: &mut Vec<(Micros, ProtocolEvent)>) {
        if let Some((ch, at)) = self.pending_switch {
            if at <= t {
                self.pending_switch = None;
                self.phase = SlavePhase::Synced { channel: ch };
                self.last_heard_us = at;
                log.push((at, ProtocolEvent::Switched { sensor: self.id, channel: ch }));
            }
        }
        if let SlavePhase::Synced { .. } = self.phase {
            let deadline = self.last_heard_us + timing.resync_timeout_us();
            if t > deadline {
                self.phase = SlavePhase::Resyncing;
                self.pending_switch = None;
                self.scan_origin_us = deadline;
                self.scan_phase_us = 0;
                log.push((deadline, ProtocolEvent::Resync { sensor: self.id }));
            }
        }
    }

    /// Channel the receiver is tuned to at `t`.
    fn listening(&self, t: Micros, plan: &ChannelPlan, timing: &TimingProfile) -> u8 {
        match self.phase {
            SlavePhase::Synced { channel } => channel,
            _ => {
                let dwell = timing.scan_dwell_us();
                let k = ((t.saturating_sub(self.scan_origin_us) + self.scan_phase_us) / dwell) as usize;
                plan.sync_channels()[(self.scan_offset + k) % 3]
            }
        }
    }

    /// Handles a frame heard in full at `t_end`; returns the reply, if any.
    fn on_frame(
        &mut self,
        h: &FrameHeader,
        t_end: Micros,
        log: &mut Vec<(Micros, ProtocolEvent)>,
    ) -> Option<FrameHeader> {
        match (h.frame_type, self.phase) {
            (FrameType::Beacon, SlavePhase::Synced { .. }) => None,
            (FrameType::Beacon, _) => {
                self.phase = SlavePhase::Synced { channel: h.channel };
                self.last_heard_us = t_end;
                log.push((t_end, ProtocolEvent::Synced { sensor: self.id, channel: h.channel }));
                let mut ack = FrameHeader::new(FrameType::Ack, h.session_id, self.id, h.channel);
                ack.seq = self.seq;
                Some(ack)
            }
            (FrameType::Poll, SlavePhase::Synced { .. }) => {
                self.last_heard_us = t_end;
                if h.sensor_id != self.id {
                    return None;
                }
                self.seq += 1;
                let mut resp = FrameHeader::new(FrameType::Response, h.session_id, self.id, h.channel);
                resp.seq = self.seq;
                Some(resp)
            }
            (FrameType::Hop, SlavePhase::Synced { .. }) => {
                self.last_heard_us = t_end;
                if let (Some(ch), Some(at)) = (h.next_channel, h.switch_at_us) {
                    self.pending_switch = Some((ch, at));
                }
                None
            }
            _ => None,
        }
    }
}

/// One sample that reached the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub sensor: SensorId,
    pub seq: u64,
    /// When the sensor took the sample.
    pub sample_us: Micros,
    /// When the host received it.
    pub rx_us: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Cw,
    BleBaseline,
}

impl ProtocolKind {
    pub fn label(self) -> &'static str {
        match self {
            ProtocolKind::Cw => "cw",
            ProtocolKind::BleBaseline => "ble-baseline",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cw" => Ok(ProtocolKind::Cw),
            "ble-baseline" | "ble" => Ok(ProtocolKind::BleBaseline),
            other => Err(Error::unknown("protocol", other)),
        }
    }
}

/// Everything a session produced.
#[derive(Debug, Clone)]
pub struct SessionTrace {
    pub protocol: ProtocolKind,
    pub roster: Vec<SensorId>,
    /// Every transmission on air, interferers included, in time order.
    pub records: Vec<TraceRecord>,
    pub deliveries: Vec<Delivery>,
    pub events: Vec<(Micros, ProtocolEvent)>,
    /// Interval over which rate metrics are taken.
    pub metrics_window: (Micros, Micros),
}

impl SessionTrace {
    pub fn empty(protocol: ProtocolKind) -> Self {
        SessionTrace {
            protocol,
            roster: vec![],
            records: vec![],
            deliveries: vec![],
            events: vec![],
            metrics_window: (0, 0),
        }
    }

    pub fn hops(&self) -> impl Iterator<Item = (Micros, u8, u8)> + '_ {
        self.events.iter().filter_map(|(t, e)| match *e {
            ProtocolEvent::Hop { from, to } => Some((*t, from, to)),
            _ => None,
        })
    }
}

fn check_roster(roster: &[SensorId], max: usize) -> Result<()> {
    if roster.is_empty() || roster.len() > max {
        return Err(Error::config(format!(
            "roster of {} sensors outside 1..={max}",
            roster.len()
        )));
    }
    let mut sorted = roster.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != roster.len() {
        return Err(Error::config("roster contains duplicate sensor ids"));
    }
    if sorted.contains(&0) {
        return Err(Error::config("sensor id 0 is reserved for broadcasts"));
    }
    Ok(())
}

/// Parameters of one polling-protocol session.
#[derive(Debug, Clone)]
pub struct CwConfig {
    pub roster: Vec<SensorId>,
    pub plan: ChannelPlan,
    pub timing: TimingProfile,
    pub policy: HopPolicy,
    pub seed: u64,
    pub session_id: u16,
}

impl CwConfig {
    pub fn new(roster: Vec<SensorId>, seed: u64) -> Self {
        CwConfig {
            roster,
            plan: ChannelPlan::standard(),
            timing: TimingProfile::default(),
            policy: HopPolicy::default(),
            seed,
            session_id: (seed & 0xffff) as u16,
        }
    }

    pub fn initial_channel(&self) -> u8 {
        HopSequence::new(&self.plan, self.seed).initial()
    }
}

#[derive(Debug, Clone, Copy)]
enum MasterEvent {
    Beacon,
    Cycle,
}

struct Master<'a> {
    cfg: &'a CwConfig,
    medium: &'a mut Medium,
    channel: u8,
    hop: HopSequence,
    slaves: Vec<SlaveState>,
    confirmed: Vec<bool>,
    last_ok: Vec<Micros>,
    losses: VecDeque<bool>,
    switched_at: Micros,
    busy_until: Micros,
    next_beacon: Micros,
    cycle_anchor: f64,
    polling: bool,
    end: Micros,
    records: Vec<TraceRecord>,
    deliveries: Vec<Delivery>,
    events: Vec<(Micros, ProtocolEvent)>,
}

impl Master<'_> {
    /// Puts one frame on air and lets every slave tuned to `channel` hear it.
    /// Returns the outcome and the replies of slaves that heard it.
    fn broadcast(&mut self, h: FrameHeader, on: u8, t: Micros, target: Option<SensorId>) -> (Outcome, Vec<(usize, FrameHeader)>) {
        let dur = self.cfg.timing.airtime_us(h.frame_type);
        let outcome = self.put_on_air(SourceId::MASTER, on, t, dur, h.frame_type, target, None);
        let mut replies = vec![];
        let t_end = t + dur;
        for (i, s) in self.slaves.iter_mut().enumerate() {
            s.advance(t, &self.cfg.timing, &mut self.events);
            if outcome.is_delivered() && s.listening(t, &self.cfg.plan, &self.cfg.timing) == on {
                if let Some(r) = s.on_frame(&h, t_end, &mut self.events) {
                    replies.push((i, r));
                }
            }
        }
        (outcome, replies)
    }

    #[allow(clippy::too_many_arguments)]
    fn put_on_air(
        &mut self,
        source: SourceId,
        channel: u8,
        t: Micros,
        dur: Micros,
        frame: FrameType,
        sensor: Option<SensorId>,
        seq: Option<u64>,
    ) -> Outcome {
        let tx = Transmission::new(ChannelRef::Cw(channel), t, dur, source);
        self.medium.transmit(tx);
        let outcome = self.medium.arbitrate(&tx);
        self.records.push(TraceRecord {
            time_us: t,
            duration_us: dur,
            source,
            channel: ChannelRef::Cw(channel),
            kind: "cw",
            outcome,
            frame_type: Some(frame),
            sensor_id: sensor,
            seq,
        });
        outcome
    }

    fn any_unconfirmed(&self) -> bool {
        self.confirmed.iter().any(|c| !c)
    }

    /// Beacons on each sync channel, each followed by one Ack slot per
    /// roster entry. Returns when the master is free again.
    fn beacon_round(&mut self, mut t: Micros) -> Micros {
        let n = self.slaves.len() as u64;
        let tm = self.cfg.timing.clone();
        let ack_slot = tm.airtime_us(FrameType::Ack) + tm.guard_us;
        for &sync in self.cfg.plan.sync_channels() {
            let h = FrameHeader::new(FrameType::Beacon, self.cfg.session_id, 0, self.channel);
            let (_, replies) = self.broadcast(h, sync, t, None);
            let slots_at = t + tm.airtime_us(FrameType::Beacon) + tm.turnaround_us;
            for (i, ack) in replies {
                let at = slots_at + i as u64 * ack_slot;
                let src = SourceId::sensor(ack.sensor_id);
                let o = self.put_on_air(src, sync, at, tm.airtime_us(FrameType::Ack), FrameType::Ack, Some(ack.sensor_id), Some(ack.seq));
                if o.is_delivered() {
                    self.confirmed[i] = true;
                    self.last_ok[i] = at;
                }
            }
            t = slots_at + n * ack_slot;
        }
        t
    }

    fn beacon_if_due(&mut self, t: Micros) -> Micros {
        if t < self.next_beacon {
            return t;
        }
        let interval = self.cfg.timing.beacon_interval_us();
        let mut t_end = t;
        if self.any_unconfirmed() {
            t_end = self.beacon_round(t);
        }
        while self.next_beacon <= t {
            self.next_beacon += interval;
        }
        t_end
    }

    /// Announces a move off the current channel and performs it.
    fn hop(&mut self, t: Micros) -> Micros {
        let from = self.channel;
        let to = self.hop.select_next_channel(from, &self.cfg.policy);
        let tm = self.cfg.timing.clone();
        let repeats = u64::from(self.cfg.policy.announce_repeats);
        let switch_at = t + (repeats - 1) * tm.announce_spacing_us + tm.airtime_us(FrameType::Hop) + tm.guard_us;
        for r in 0..repeats {
            let mut h = FrameHeader::new(FrameType::Hop, self.cfg.session_id, 0, from);
            h.next_channel = Some(to);
            h.switch_at_us = Some(switch_at);
            self.broadcast(h, from, t + r * tm.announce_spacing_us, None);
        }
        self.channel = to;
        self.events.push((switch_at, ProtocolEvent::Hop { from, to }));
        self.events.push((switch_at, ProtocolEvent::MasterChannel { channel: to }));
        self.confirmed.iter_mut().for_each(|c| *c = false);
        self.losses.clear();
        self.switched_at = switch_at;
        switch_at
    }

    fn record_exchange(&mut self, lost: bool) -> bool {
        let w = self.cfg.policy.loss_window;
        self.losses.push_back(lost);
        while self.losses.len() > w {
            self.losses.pop_front();
        }
        self.losses.iter().filter(|l| **l).count() >= self.cfg.policy.loss_threshold
    }

    /// One TDMA round over the roster. Returns the time the master is free.
    fn cycle(&mut self, start: Micros) -> Micros {
        let tm = self.cfg.timing.clone();
        let timeout = tm.resync_timeout_us();
        for i in 0..self.slaves.len() {
            if self.confirmed[i] && start.saturating_sub(self.last_ok[i]) > timeout {
                self.confirmed[i] = false;
            }
        }
        let fail_after = tm.resync_bound_us() + 2 * tm.cap_period_us().round() as Micros;
        if !self.confirmed.iter().any(|c| *c) && start.saturating_sub(self.switched_at) > fail_after {
            return self.hop(start);
        }

        let mut t = start;
        for i in 0..self.slaves.len() {
            t = self.beacon_if_due(t);
            if t >= self.end {
                return t;
            }
            let id = self.slaves[i].id;
            let ch = self.channel;
            let h = FrameHeader::new(FrameType::Poll, self.cfg.session_id, id, ch);
            let (_, replies) = self.broadcast(h, ch, t, Some(id));
            let poll_end = t + tm.airtime_us(FrameType::Poll);
            let mut delivered = false;
            if let Some((_, resp)) = replies.into_iter().find(|(j, _)| *j == i) {
                let at = poll_end + tm.turnaround_us;
                let dur = tm.airtime_us(FrameType::Response);
                let o = self.put_on_air(SourceId::sensor(id), ch, at, dur, FrameType::Response, Some(id), Some(resp.seq));
                if o.is_delivered() {
                    delivered = true;
                    self.deliveries.push(Delivery {
                        sensor: id,
                        seq: resp.seq,
                        sample_us: poll_end,
                        rx_us: at + dur,
                    });
                }
            }
            let was_confirmed = self.confirmed[i];
            let t_end = t + tm.slot_us(delivered);
            if delivered {
                self.confirmed[i] = true;
                self.last_ok[i] = t_end;
            }
            if was_confirmed && self.record_exchange(!delivered) {
                return self.hop(t_end);
            }
            t = t_end;
        }
        t
    }

    fn finish(&mut self) {
        let end = self.end;
        for s in &mut self.slaves {
            s.advance(end, &self.cfg.timing, &mut self.events);
        }
    }
}

/// Runs the polling protocol on `medium` over `[0, end_us)`.
pub fn master_run(cfg: &CwConfig, medium: &mut Medium, end_us: Micros) -> Result<SessionTrace> {
    check_roster(&cfg.roster, MAX_ROSTER)?;
    cfg.timing.validate()?;
    cfg.policy.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x736c617665);
    let dwell = cfg.timing.scan_dwell_us();
    let slaves = cfg
        .roster
        .iter()
        .map(|&id| {
            let offset = rng.random_range(0..3);
            // powered up somewhere inside its first dwell
            let phase = rng.random_range(0..dwell);
            SlaveState::new(id, offset, phase)
        })
        .collect::<Vec<_>>();
    let hop = HopSequence::new(&cfg.plan, cfg.seed);
    let n = cfg.roster.len();
    let mut m = Master {
        cfg,
        medium,
        channel: hop.initial(),
        hop,
        slaves,
        confirmed: vec![false; n],
        last_ok: vec![0; n],
        losses: VecDeque::new(),
        switched_at: 0,
        busy_until: 0,
        next_beacon: 0,
        cycle_anchor: 0.0,
        polling: false,
        end: end_us,
        records: vec![],
        deliveries: vec![],
        events: vec![],
    };
    m.events.push((0, ProtocolEvent::MasterChannel { channel: m.channel }));

    let mut sched = EventScheduler::new();
    sched.schedule(0, SourceId::MASTER, MasterEvent::Beacon);
    while let Some((t, ev)) = sched.pop_until(end_us) {
        let start = t.max(m.busy_until);
        if start >= end_us {
            continue;
        }
        match ev {
            MasterEvent::Beacon => {
                m.busy_until = m.beacon_if_due(start);
                if !m.polling && !m.any_unconfirmed() {
                    m.polling = true;
                    m.cycle_anchor = m.busy_until as f64;
                    sched.schedule(m.busy_until, SourceId::MASTER, MasterEvent::Cycle);
                }
                sched.schedule(m.next_beacon, SourceId::MASTER, MasterEvent::Beacon);
            }
            MasterEvent::Cycle => {
                m.busy_until = m.cycle(start);
                // A late start pushes the grid back so the cap always holds.
                let anchor = if start as f64 > m.cycle_anchor.round() {
                    start as f64
                } else {
                    m.cycle_anchor
                };
                let next = (anchor + m.cfg.timing.cap_period_us()).max(m.busy_until as f64);
                m.cycle_anchor = next;
                sched.schedule(next.round() as Micros, SourceId::MASTER, MasterEvent::Cycle);
            }
        }
    }
    m.finish();

    let Master {
        records,
        deliveries,
        mut events,
        ..
    } = m;
    events.sort_by_key(|(t, _)| *t);
    Ok(SessionTrace {
        protocol: ProtocolKind::Cw,
        roster: cfg.roster.clone(),
        records,
        deliveries,
        events,
        metrics_window: (0, end_us),
    })
}

/// Link-layer timing of the BLE-like baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleTiming {
    pub interval_ms: f64,
    pub central_us: u64,
    pub tifs_us: u64,
    pub data_us: u64,
    /// Rate at which each sensor produces samples into its queue.
    pub sample_rate_hz: f64,
}

impl Default for BleTiming {
    fn default() -> Self {
        BleTiming {
            interval_ms: 15.0,
            central_us: 80,
            tifs_us: 150,
            data_us: 296,
            sample_rate_hz: 60.0,
        }
    }
}

impl BleTiming {
    pub fn interval_us(&self) -> f64 {
        self.interval_ms * 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        if !positive(self.interval_ms) || !positive(self.sample_rate_hz) {
            return Err(Error::config("ble: interval and sample rate must be positive"));
        }
        if self.central_us == 0 || self.data_us == 0 {
            return Err(Error::config("ble: packet durations must be positive"));
        }
        if (self.central_us + self.tifs_us + self.data_us) as f64 >= self.interval_us() {
            return Err(Error::config("ble: connection event longer than its interval"));
        }
        Ok(())
    }
}

/// Channel selection algorithm #1: fixed increment over the 37 data channels.
pub fn csa1_next(last: u8, hop_increment: u8) -> u8 {
    (last + hop_increment) % NUM_BLE_DATA_CHANNELS
}

#[derive(Debug, Clone, Copy)]
enum BleEvent {
    Anchor(usize),
    CentralRx(usize, Transmission),
    PeripheralTx(usize, u64),
    PeripheralRx(usize, Transmission, u64),
}

struct BleLink {
    id: SensorId,
    phase_us: f64,
    hop: u8,
    channel: u8,
    event: u64,
    sample_phase_us: f64,
    produced: u64,
    delivered: u64,
}

impl BleLink {
    fn sample_time(&self, k: u64, t: &BleTiming) -> Micros {
        (self.sample_phase_us + k as f64 * 1e6 / t.sample_rate_hz).round() as Micros
    }

    fn anchor(&self, n: u64, t: &BleTiming) -> Micros {
        (self.phase_us + n as f64 * t.interval_us()).round() as Micros
    }
}

/// Runs independent BLE-like connections, one per sensor, over `[0, end_us)`.
///
/// Each connection event the central sends a short packet on the next CSA#1
/// channel and, if it got through, the peripheral answers with its oldest
/// queued sample. Failed samples stay queued; there is no channel blacklist.
pub fn ble_baseline_run(
    roster: &[SensorId],
    timing: &BleTiming,
    medium: &mut Medium,
    end_us: Micros,
    seed: u64,
) -> Result<SessionTrace> {
    check_roster(roster, MAX_BLE_ROSTER)?;
    timing.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x626c65);
    let mut links: Vec<BleLink> = roster
        .iter()
        .map(|&id| BleLink {
            id,
            phase_us: rng.random_range(0.0..timing.interval_us()),
            hop: rng.random_range(5..=16),
            channel: rng.random_range(0..NUM_BLE_DATA_CHANNELS),
            event: 0,
            sample_phase_us: rng.random_range(0.0..1e6 / timing.sample_rate_hz),
            produced: 0,
            delivered: 0,
        })
        .collect();

    let mut sched = EventScheduler::new();
    for (i, l) in links.iter().enumerate() {
        sched.schedule(l.anchor(0, timing), SourceId::central(l.id), BleEvent::Anchor(i));
    }
    let mut records = vec![];
    let mut deliveries = vec![];
    let record = |records: &mut Vec<TraceRecord>, tx: &Transmission, o: Outcome, ft, id, seq| {
        records.push(TraceRecord {
            time_us: tx.start_us,
            duration_us: tx.duration_us,
            source: tx.source,
            channel: tx.channel,
            kind: "ble",
            outcome: o,
            frame_type: Some(ft),
            sensor_id: Some(id),
            seq,
        })
    };
    // Arbitration waits until the packet has ended so every overlapping
    // transmission is already registered.
    while let Some((t, ev)) = sched.pop() {
        match ev {
            BleEvent::Anchor(i) => {
                let l = &mut links[i];
                if t >= end_us {
                    continue;
                }
                l.channel = csa1_next(l.channel, l.hop);
                let tx = Transmission::new(ChannelRef::Ble(l.channel), t, timing.central_us, SourceId::central(l.id));
                medium.transmit(tx);
                sched.schedule(tx.end_us(), SourceId::central(l.id), BleEvent::CentralRx(i, tx));
                l.event += 1;
                let next = l.anchor(l.event, timing);
                sched.schedule(next, SourceId::central(l.id), BleEvent::Anchor(i));
            }
            BleEvent::CentralRx(i, tx) => {
                let o = medium.arbitrate(&tx);
                let l = &mut links[i];
                record(&mut records, &tx, o, FrameType::BleEmpty, l.id, None);
                let data_at = tx.end_us() + timing.tifs_us;
                while l.sample_time(l.produced, timing) <= data_at {
                    l.produced += 1;
                }
                if o.is_delivered() && l.produced > l.delivered && data_at < end_us {
                    sched.schedule(data_at, SourceId::sensor(l.id), BleEvent::PeripheralTx(i, l.delivered + 1));
                }
            }
            BleEvent::PeripheralTx(i, seq) => {
                let l = &links[i];
                let tx = Transmission::new(ChannelRef::Ble(l.channel), t, timing.data_us, SourceId::sensor(l.id));
                medium.transmit(tx);
                sched.schedule(tx.end_us(), SourceId::sensor(l.id), BleEvent::PeripheralRx(i, tx, seq));
            }
            BleEvent::PeripheralRx(i, tx, seq) => {
                let o = medium.arbitrate(&tx);
                let l = &mut links[i];
                record(&mut records, &tx, o, FrameType::BleData, l.id, Some(seq));
                if o.is_delivered() {
                    l.delivered = seq;
                    deliveries.push(Delivery {
                        sensor: l.id,
                        seq,
                        sample_us: l.sample_time(seq - 1, timing),
                        rx_us: tx.end_us(),
                    });
                }
            }
        }
    }
    records.sort_by_key(|r| (r.time_us, r.source));
    Ok(SessionTrace {
        protocol: ProtocolKind::BleBaseline,
        roster: roster.to_vec(),
        records,
        deliveries,
        events: vec![],
        metrics_window: (0, end_us),
    })
}

/// Adds interferer bursts to a trace and restores time order.
pub fn merge_interference(trace: &mut SessionTrace, medium: &Medium, labels: &[&'static str]) {
    for tx in medium.interference() {
        let idx = (tx.source.0 - 1000) as usize;
        trace.records.push(TraceRecord {
            time_us: tx.start_us,
            duration_us: tx.duration_us,
            source: tx.source,
            channel: tx.channel,
            kind: labels.get(idx).copied().unwrap_or("interferer"),
            outcome: Outcome::Busy,
            frame_type: None,
            sensor_id: None,
            seq: None,
        });
    }
    trace.records.sort_by_key(|r| (r.time_us, r.source));
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorMetrics {
    pub sent: u64,
    pub delivered: u64,
    pub collided: u64,
    pub floor_lost: u64,
    pub pdr: f64,
    pub mean_rate_hz: f64,
    pub min_window_rate_hz: f64,
}

/// Summary of one session. Serializes with a fixed key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub protocol: String,
    pub duration_s: f64,
    pub window_s: f64,
    pub hops: u64,
    pub resyncs: u64,
    pub max_skew_ms: f64,
    pub sensors: BTreeMap<SensorId, SensorMetrics>,
}

impl SessionMetrics {
    pub fn mean_rate(&self) -> f64 {
        if self.sensors.is_empty() {
            return 0.0;
        }
        self.sensors.values().map(|s| s.mean_rate_hz).sum::<f64>() / self.sensors.len() as f64
    }

    pub fn min_window_rate(&self) -> f64 {
        self.sensors
            .values()
            .map(|s| s.min_window_rate_hz)
            .fold(f64::INFINITY, f64::min)
            .min(if self.sensors.is_empty() { 0.0 } else { f64::INFINITY })
    }
}

/// Mean rate `(n-1)/(last-first)` of a sorted list of arrival times in µs.
pub fn mean_rate_hz(times: &[Micros]) -> f64 {
    match (times.first(), times.last()) {
        (Some(a), Some(b)) if times.len() >= 2 && b > a => (times.len() - 1) as f64 * 1e6 / (b - a) as f64,
        _ => 0.0,
    }
}

/// Arrivals per second in windows `[a, a+w)` stepping by `w/10` across
/// `[start, end]`.
pub fn window_rates(times: &[Micros], start: Micros, end: Micros, window_us: Micros) -> Vec<(Micros, f64)> {
    let step = (window_us / 10).max(1);
    let mut out = vec![];
    let mut a = start;
    while a + window_us <= end {
        let lo = times.partition_point(|t| *t < a);
        let hi = times.partition_point(|t| *t < a + window_us);
        out.push((a, (hi - lo) as f64 * 1e6 / window_us as f64));
        a += step;
    }
    out
}

/// Rates, delivery ratio, hops, resyncs and skew over the trace's metrics
/// window.
pub fn session_metrics(trace: &SessionTrace, window_s: f64) -> SessionMetrics {
    let (start, end) = trace.metrics_window;
    let window_us = (window_s * 1e6).round() as Micros;
    let mut sensors: BTreeMap<SensorId, SensorMetrics> =
        trace.roster.iter().map(|&s| (s, SensorMetrics::default())).collect();
    let inside = |t: Micros| t >= start && t < end;
    for r in &trace.records {
        let data = matches!(r.frame_type, Some(FrameType::Response | FrameType::BleData));
        if !data || !inside(r.time_us) {
            continue;
        }
        let Some(m) = r.sensor_id.and_then(|s| sensors.get_mut(&s)) else {
            continue;
        };
        m.sent += 1;
        match r.outcome {
            Outcome::Delivered => m.delivered += 1,
            Outcome::Collided { .. } => m.collided += 1,
            Outcome::FloorLost => m.floor_lost += 1,
            Outcome::Busy => {}
        }
    }
    let mut max_skew = 0u64;
    let mut latest: BTreeMap<SensorId, Micros> = BTreeMap::new();
    let mut per_sensor: BTreeMap<SensorId, Vec<Micros>> = BTreeMap::new();
    for d in trace.deliveries.iter().filter(|d| inside(d.rx_us)) {
        per_sensor.entry(d.sensor).or_default().push(d.rx_us);
        latest.insert(d.sensor, d.sample_us);
        if latest.len() == trace.roster.len() && latest.len() > 1 {
            let hi = latest.values().max().unwrap();
            let lo = latest.values().min().unwrap();
            max_skew = max_skew.max(hi - lo);
        }
    }
    for (s, m) in sensors.iter_mut() {
        let mut times = per_sensor.remove(s).unwrap_or_default();
        times.sort_unstable();
        m.pdr = if m.sent > 0 { m.delivered as f64 / m.sent as f64 } else { 0.0 };
        m.mean_rate_hz = mean_rate_hz(&times);
        m.min_window_rate_hz = window_rates(&times, start, end, window_us)
            .into_iter()
            .map(|(_, r)| r)
            .reduce(f64::min)
            .unwrap_or(0.0);
    }
    let count = |f: fn(&ProtocolEvent) -> bool| trace.events.iter().filter(|(_, e)| f(e)).count() as u64;
    SessionMetrics {
        protocol: trace.protocol.label().to_string(),
        duration_s: end.saturating_sub(start) as f64 / 1e6,
        window_s,
        hops: count(|e| matches!(e, ProtocolEvent::Hop { .. })),
        resyncs: count(|e| matches!(e, ProtocolEvent::Resync { .. })),
        max_skew_ms: max_skew as f64 / 1e3,
        sensors,
    }
}

/// Checks that no two protocol transmissions of a polling session overlap
/// in time.
pub fn check_tdma(trace: &SessionTrace) -> std::result::Result<(), String> {
    let mut last_end = 0;
    for r in trace.records.iter().filter(|r| r.kind == "cw") {
        if r.time_us < last_end {
            return Err(format!("{} frame at {} µs overlaps the previous one", r.source, r.time_us));
        }
        last_end = r.time_us + r.duration_us;
    }
    Ok(())
}

/// Checks that every packet has exactly one fate and, per sensor, that
/// delivered sequence numbers increase with gaps equal to lost Responses.
pub fn check_conservation(trace: &SessionTrace) -> std::result::Result<(), String> {
    let m = session_metrics(
        &SessionTrace {
            metrics_window: (0, trace.records.last().map(|r| r.time_us + 1).unwrap_or(0)),
            ..trace.clone()
        },
        1.0,
    );
    for (s, sm) in &m.sensors {
        if sm.sent != sm.delivered + sm.collided + sm.floor_lost {
            return Err(format!("sensor {s}: sent {} != delivered + lost", sm.sent));
        }
        if sm.delivered != trace.deliveries.iter().filter(|d| d.sensor == *s).count() as u64 {
            return Err(format!("sensor {s}: delivery log disagrees with the trace"));
        }
    }
    if trace.protocol == ProtocolKind::Cw {
        for &s in &trace.roster {
            let mut prev = 0;
            let mut lost_between = 0;
            for r in trace.records.iter().filter(|r| r.sensor_id == Some(s) && r.frame_type == Some(FrameType::Response)) {
                let seq = r.seq.unwrap_or(0);
                if r.outcome.is_delivered() {
                    if seq <= prev {
                        return Err(format!("sensor {s}: seq {seq} not increasing"));
                    }
                    if prev > 0 && seq - prev - 1 != lost_between {
                        return Err(format!("sensor {s}: gap before seq {seq} does not match losses"));
                    }
                    prev = seq;
                    lost_between = 0;
                } else {
                    lost_between += 1;
                }
            }
        }
    }
    Ok(())
}

/// Replays channel state and checks that a Synced slave disagrees with the
/// master for at most the resync timeout before it falls back to scanning.
pub fn check_channel_agreement(trace: &SessionTrace, timing: &TimingProfile) -> std::result::Result<(), String> {
    let timeout = timing.resync_timeout_us();
    let mut master = None;
    let mut slaves: BTreeMap<SensorId, (Option<u8>, Option<Micros>)> = BTreeMap::new();
    let check = |slaves: &mut BTreeMap<SensorId, (Option<u8>, Option<Micros>)>, master: Option<u8>, t: Micros| {
        for (id, (ch, since)) in slaves.iter_mut() {
            match (*ch, master) {
                (Some(c), Some(m)) if c != m => {
                    let s = *since.get_or_insert(t);
                    if t - s > timeout {
                        return Err(format!("sensor {id} stuck on {c} while master on {m}"));
                    }
                }
                _ => *since = None,
            }
        }
        Ok(())
    };
    for (t, e) in &trace.events {
        match *e {
            ProtocolEvent::MasterChannel { channel } => master = Some(channel),
            ProtocolEvent::Synced { sensor, channel } | ProtocolEvent::Switched { sensor, channel } => {
                slaves.insert(sensor, (Some(channel), None));
            }
            ProtocolEvent::Resync { sensor } => {
                if let Some((_, Some(since))) = slaves.get(&sensor) {
                    if t - since > timeout {
                        return Err(format!("sensor {sensor} resynced {} µs after losing the master", t - since));
                    }
                }
                slaves.insert(sensor, (None, None));
            }
            ProtocolEvent::Hop { .. } => {}
        }
        check(&mut slaves, master, *t)?;
    }
    Ok(())
}

/// For each hop, the time until every slave was synced on the channel the
/// master hopped to (`None` if some slave never made it).
pub fn resync_latencies(trace: &SessionTrace) -> Vec<(Micros, Option<Micros>)> {
    let hops: Vec<_> = trace.hops().collect();
    hops.iter()
        .enumerate()
        .map(|(k, &(at, _, to))| {
            let until = hops.get(k + 1).map(|h| h.0).unwrap_or(Micros::MAX);
            let mut worst = Some(0);
            for &s in &trace.roster {
                let joined = trace.events.iter().find_map(|(t, e)| match *e {
                    ProtocolEvent::Synced { sensor, channel } | ProtocolEvent::Switched { sensor, channel }
                        if sensor == s && channel == to && *t >= at && *t <= until =>
                    {
                        Some(*t - at)
                    }
                    _ => None,
                });
                worst = match (worst, joined) {
                    (Some(w), Some(j)) => Some(w.max(j)),
                    _ => None,
                };
            }
            (at, worst)
        })
        .collect()
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}
