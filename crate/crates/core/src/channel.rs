//! The shared radio medium.
//!
//! Every radio hears every other radio with zero propagation delay. Any
//! temporal overlap of two occupancy intervals destroys both (no capture).
//! Intervals are half-open `[start, end)`.
//!
//! Carrier sense is tracked separately from physical occupancy: a record
//! becomes *sensed* `cca_latency` after it starts and stops being sensed at
//! its end. The channel reports a busy notice when the sensed count leaves
//! zero and an idle notice once it settles back at zero. Settling is a
//! separate step so that back-to-back intervals with no gap produce no idle
//! notice in between.

use std::io::Write;

use serde::Serialize;

use crate::error::SimError;
use crate::frame::{Address, Frame, FrameKind};
use crate::radio::FrameTiming;
use crate::time::{Duration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sender {
    Node(Address),
    Jammer,
}

impl std::fmt::Display for Sender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sender::Node(a) => write!(f, "{a}"),
            Sender::Jammer => f.write_str("jammer"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JamInterval {
    pub start: SimTime,
    pub end: SimTime,
}

impl JamInterval {
    pub fn new(start: SimTime, end: SimTime) -> Result<Self, SimError> {
        if end <= start {
            return Err(SimError::Invariant(format!("empty jam interval [{start}, {end})")));
        }
        Ok(JamInterval { start, end })
    }

    pub fn timing(&self) -> FrameTiming {
        FrameTiming {
            start: self.start,
            preamble_end: self.start,
            header_end: self.start,
            end: self.end,
        }
    }
}

/// One occupancy interval on the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionRecord {
    pub id: RecordId,
    pub sender: Sender,
    /// `None` for jammer intervals.
    pub frame: Option<Frame>,
    pub timing: FrameTiming,
    pub collided: bool,
}

impl TransmissionRecord {
    pub fn start(&self) -> SimTime {
        self.timing.start
    }

    pub fn end(&self) -> SimTime {
        self.timing.end
    }

    pub fn kind(&self) -> FrameKind {
        self.frame.as_ref().map_or(FrameKind::Jam, |f| f.kind)
    }

    pub fn overlaps(&self, other: &TransmissionRecord) -> bool {
        self.start() < other.end() && other.start() < self.end()
    }
}

/// Carrier-sense transitions seen by subscribed radios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    BusyStart(SimTime),
    IdleStart(SimTime),
}

/// A completed clear-channel assessment that led to a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CcaDecision {
    pub node: Address,
    pub window_start: SimTime,
    pub window: Duration,
    /// `true` when the node never sensed activity for this frame and used
    /// the fixed part of the back-off only.
    pub shortcut: bool,
    /// Pseudo-random part of the window (zero for the shortcut).
    pub t_ps: Duration,
}

impl CcaDecision {
    pub fn tx_at(&self) -> SimTime {
        self.window_start + self.window
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LiveEntry {
    id: RecordId,
    sensed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Channel {
    cca_latency: Duration,
    records: Vec<TransmissionRecord>,
    live: Vec<LiveEntry>,
    sensed_count: usize,
    sensed_busy: bool,
    subscribers: Vec<usize>,
    activity: Vec<Activity>,
    cca: Vec<CcaDecision>,
}

impl Channel {
    pub fn new(cca_latency: Duration) -> Self {
        Channel {
            cca_latency,
            ..Channel::default()
        }
    }

    pub fn cca_latency(&self) -> Duration {
        self.cca_latency
    }

    /// Register a radio (by node index) for busy/idle notices.
    pub fn subscribe_activity(&mut self, node: usize) {
        if !self.subscribers.contains(&node) {
            self.subscribers.push(node);
        }
    }

    pub fn subscribers(&self) -> &[usize] {
        &self.subscribers
    }

    /// Start an occupancy interval. Marks every overlapping live record
    /// (and the new one) collided. Returns the record id and, when the
    /// sensing latency is zero, the busy notice it triggers.
    pub fn begin_transmission(
        &mut self,
        sender: Sender,
        frame: Option<Frame>,
        timing: FrameTiming,
        now: SimTime,
    ) -> Result<(RecordId, Option<Activity>), SimError> {
        if timing.end <= timing.start || timing.start != now {
            return Err(SimError::Invariant(format!(
                "bad transmission interval [{}, {}) at {now}",
                timing.start, timing.end
            )));
        }
        if let Sender::Node(addr) = sender {
            if self
                .live
                .iter()
                .any(|l| self.records[l.id.0].sender == sender && self.records[l.id.0].end() > now)
            {
                return Err(SimError::Invariant(format!("node {addr} transmits twice at {now}")));
            }
        }
        let id = RecordId(self.records.len());
        let mut collided = false;
        for l in &self.live {
            let r = &mut self.records[l.id.0];
            if r.end() > now {
                r.collided = true;
                collided = true;
            }
        }
        self.records.push(TransmissionRecord {
            id,
            sender,
            frame,
            timing,
            collided,
        });
        self.live.push(LiveEntry { id, sensed: false });
        let notice = if self.cca_latency == Duration::ZERO {
            self.sense_on(id, now)
        } else {
            None
        };
        Ok((id, notice))
    }

    /// When the sensing latency is non-zero, the kernel calls this at
    /// `start + latency`.
    pub fn sense_on(&mut self, id: RecordId, now: SimTime) -> Option<Activity> {
        let entry = self.live.iter_mut().find(|l| l.id == id)?;
        if entry.sensed {
            return None;
        }
        entry.sensed = true;
        self.sensed_count += 1;
        if !self.sensed_busy {
            self.sensed_busy = true;
            let a = Activity::BusyStart(now);
            self.activity.push(a);
            Some(a)
        } else {
            None
        }
    }

    /// Close a record at its end time. Returns `true` when the sensed count
    /// dropped to zero and [`Channel::settle`] should run at this instant.
    pub fn end_transmission(&mut self, id: RecordId) -> bool {
        let Some(pos) = self.live.iter().position(|l| l.id == id) else {
            return false;
        };
        let entry = self.live.swap_remove(pos);
        if entry.sensed {
            self.sensed_count -= 1;
        }
        self.sensed_busy && self.sensed_count == 0
    }

    /// Emit the idle notice if nothing is sensed any more.
    pub fn settle(&mut self, now: SimTime) -> Option<Activity> {
        if self.sensed_busy && self.sensed_count == 0 {
            self.sensed_busy = false;
            let a = Activity::IdleStart(now);
            self.activity.push(a);
            Some(a)
        } else {
            None
        }
    }

    /// Carrier-sense state as seen by the radios.
    pub fn sensed_busy(&self) -> bool {
        self.sensed_busy
    }

    /// Whether any interval is currently being sensed. Unlike
    /// [`Channel::sensed_busy`] this drops at a frame end before the idle
    /// notice is settled.
    pub fn sensing_now(&self) -> bool {
        self.sensed_count > 0
    }

    /// Physical occupancy: any live interval contains `now`.
    pub fn is_busy(&self, now: SimTime) -> bool {
        self.live.iter().any(|l| {
            let r = &self.records[l.id.0];
            r.start() <= now && now < r.end()
        })
    }

    pub fn live_records(&self) -> impl Iterator<Item = &TransmissionRecord> + '_ {
        self.live.iter().map(|l| &self.records[l.id.0])
    }

    pub fn record(&self, id: RecordId) -> &TransmissionRecord {
        &self.records[id.0]
    }

    pub fn records(&self) -> &[TransmissionRecord] {
        &self.records
    }

    pub fn activity(&self) -> &[Activity] {
        &self.activity
    }

    pub fn log_cca(&mut self, d: CcaDecision) {
        self.cca.push(d);
    }

    pub fn cca_decisions(&self) -> &[CcaDecision] {
        &self.cca
    }

    pub fn into_trace(self) -> ChannelTrace {
        ChannelTrace {
            cca_latency: self.cca_latency,
            records: self.records,
            cca: self.cca,
        }
    }
}

/// Everything that happened on the channel during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelTrace {
    pub cca_latency: Duration,
    /// Ordered by start time (records are appended as they begin).
    pub records: Vec<TransmissionRecord>,
    pub cca: Vec<CcaDecision>,
}

pub const TIMELINE_HEADER: [&str; 5] = ["start_us", "end_us", "sender", "kind", "collided"];

impl ChannelTrace {
    /// Timeline CSV: `start_us,end_us,sender,kind,collided`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(TIMELINE_HEADER)?;
        for r in &self.records {
            out.write_record([
                r.start().as_us().to_string(),
                r.end().as_us().to_string(),
                r.sender.to_string(),
                r.kind().to_string(),
                r.collided.to_string(),
            ])?;
        }
        out.flush().map_err(|e| SimError::io("timeline.csv", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Preamble;

    fn t(us: u64) -> SimTime {
        SimTime::from_us(us)
    }

    fn span(start: u64, end: u64) -> FrameTiming {
        FrameTiming {
            start: t(start),
            preamble_end: t(start),
            header_end: t(start),
            end: t(end),
        }
    }

    fn data(src: u8) -> Option<Frame> {
        Some(Frame::new(FrameKind::Reply, Address(src), Address(0), 0, vec![], Preamble::Normal).unwrap())
    }

    #[test]
    fn sole_transmission_is_clean() {
        let mut ch = Channel::new(Duration::ZERO);
        let (id, _) = ch.begin_transmission(Sender::Node(Address(1)), data(1), span(0, 100), t(0)).unwrap();
        ch.end_transmission(id);
        assert!(!ch.record(id).collided);
    }

    #[test]
    fn overlapping_transmissions_both_collide() {
        let mut ch = Channel::new(Duration::ZERO);
        let (a, _) = ch.begin_transmission(Sender::Node(Address(1)), data(1), span(0, 100), t(0)).unwrap();
        let (b, _) = ch.begin_transmission(Sender::Node(Address(2)), data(2), span(50, 150), t(50)).unwrap();
        assert!(ch.record(a).collided && ch.record(b).collided);
    }

    #[test]
    fn transmission_inside_jam_collides() {
        let mut ch = Channel::new(Duration::ZERO);
        let jam = JamInterval::new(t(0), t(10_000)).unwrap();
        ch.begin_transmission(Sender::Jammer, None, jam.timing(), t(0)).unwrap();
        let (id, _) = ch.begin_transmission(Sender::Node(Address(3)), data(3), span(2_000, 5_000), t(2_000)).unwrap();
        assert!(ch.record(id).collided);
    }

    #[test]
    fn abutting_intervals_do_not_collide() {
        let mut ch = Channel::new(Duration::ZERO);
        let (a, _) = ch.begin_transmission(Sender::Node(Address(1)), data(1), span(0, 100), t(0)).unwrap();
        ch.end_transmission(a);
        let (b, _) = ch.begin_transmission(Sender::Node(Address(2)), data(2), span(100, 200), t(100)).unwrap();
        assert!(!ch.record(a).collided && !ch.record(b).collided);
    }

    #[test]
    fn double_transmit_is_rejected() {
        let mut ch = Channel::new(Duration::ZERO);
        ch.begin_transmission(Sender::Node(Address(1)), data(1), span(0, 100), t(0)).unwrap();
        assert!(ch
            .begin_transmission(Sender::Node(Address(1)), data(1), span(10, 110), t(10))
            .is_err());
    }

    #[test]
    fn is_busy_half_open() {
        let mut ch = Channel::new(Duration::ZERO);
        assert!(!ch.is_busy(t(0)));
        let jam = JamInterval::new(t(10), t(20)).unwrap();
        ch.begin_transmission(Sender::Jammer, None, jam.timing(), t(10)).unwrap();
        assert!(ch.is_busy(t(10)));
        assert!(ch.is_busy(t(19)));
        assert!(!ch.is_busy(t(20)));
    }

    #[test]
    fn jam_produces_busy_then_idle() {
        let mut ch = Channel::new(Duration::ZERO);
        ch.subscribe_activity(1);
        let jam = JamInterval::new(t(0), t(10_000)).unwrap();
        let (id, busy) = ch.begin_transmission(Sender::Jammer, None, jam.timing(), t(0)).unwrap();
        assert_eq!(busy, Some(Activity::BusyStart(t(0))));
        assert!(ch.end_transmission(id));
        assert_eq!(ch.settle(t(10_000)), Some(Activity::IdleStart(t(10_000))));
        assert_eq!(ch.activity(), &[Activity::BusyStart(t(0)), Activity::IdleStart(t(10_000))]);
    }

    #[test]
    fn back_to_back_frames_merge() {
        let mut ch = Channel::new(Duration::ZERO);
        let (a, _) = ch.begin_transmission(Sender::Node(Address(1)), data(1), span(0, 100), t(0)).unwrap();
        assert!(ch.end_transmission(a));
        // a frame starting at the same instant, before the settle step
        let (b, notice) = ch.begin_transmission(Sender::Node(Address(2)), data(2), span(100, 200), t(100)).unwrap();
        assert_eq!(notice, None);
        assert_eq!(ch.settle(t(100)), None);
        assert!(ch.end_transmission(b));
        assert_eq!(ch.settle(t(200)), Some(Activity::IdleStart(t(200))));
        assert_eq!(ch.activity(), &[Activity::BusyStart(t(0)), Activity::IdleStart(t(200))]);
    }

    #[test]
    fn no_activity_no_notices() {
        let mut ch = Channel::new(Duration::ZERO);
        assert_eq!(ch.settle(t(50)), None);
        assert!(ch.activity().is_empty());
    }

    #[test]
    fn sensing_latency_delays_busy_notice() {
        let mut ch = Channel::new(Duration::from_us(30));
        let (id, notice) = ch.begin_transmission(Sender::Node(Address(1)), data(1), span(0, 100), t(0)).unwrap();
        assert_eq!(notice, None);
        assert!(!ch.sensed_busy());
        assert!(ch.is_busy(t(0)));
        assert_eq!(ch.sense_on(id, t(30)), Some(Activity::BusyStart(t(30))));
        assert!(ch.sensed_busy());
    }

    #[test]
    fn timeline_csv_header() {
        let mut ch = Channel::new(Duration::ZERO);
        let jam = JamInterval::new(t(0), t(5)).unwrap();
        ch.begin_transmission(Sender::Jammer, None, jam.timing(), t(0)).unwrap();
        let mut buf = Vec::new();
        ch.into_trace().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "start_us,end_us,sender,kind,collided\n0,5,jammer,jam,false\n"
        );
    }
}
