//! The simulated network: kernel, channel, per-node radio + MAC + energy
//! ledger, and an [`Application`] driving traffic.
//!
//! Radios are either always listening (the access point) or duty-cycled
//! in low-power listening. A duty-cycled radio wakes when a sniff window
//! overlaps a live preamble, when its MAC has a frame pending, or when the
//! application asks it to send. Frames are only received by radios that
//! were synchronised to the preamble; a radio reading a foreign destination
//! address gives up at the end of the header.

use crate::channel::{Activity, Channel, ChannelTrace, JamInterval, RecordId, Sender};
use crate::energy::{EnergyDfaModel, EnergyLedger, LplModel, PowerState, RadioCall};
use crate::engine::{EventHandle, QueueCounters, Scheduler};
use crate::error::SimError;
use crate::frame::{Address, Frame};
use crate::mac::{Mac, MacOutput, MacParams, SendRequest, TimerCmd};
use crate::maclog::{MacEvent, MacLog};
use crate::radio::{RadioParams, SniffSchedule};
use crate::rng::{RngStream, SCENARIO_STREAM};
use crate::time::{Duration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioPolicy {
    AlwaysOn,
    LowPowerListen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub address: Address,
    pub radio: RadioPolicy,
    /// After a successful reception the radio cannot synchronise to a new
    /// preamble for this long (frame read-out and receiver restart).
    pub rx_processing: Duration,
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub seed: u64,
    pub radio: RadioParams,
    pub mac: MacParams,
    pub energy: EnergyDfaModel,
    pub lpl_model: LplModel,
    pub nodes: Vec<NodeSpec>,
    pub jams: Vec<JamInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Event {
    MacTimer(usize),
    SenseOn(RecordId),
    TxEnd { node: Option<usize>, record: RecordId },
    Settle,
    SniffLock { node: usize, record: RecordId, epoch: u64 },
    HeaderEnd { node: usize, record: RecordId, epoch: u64 },
    Rearm(usize),
    JamStart(usize),
    AppTimer { node: usize, token: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Lpl(SniffSchedule),
    Rx,
    Tx(RecordId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lock {
    record: RecordId,
    accepted: bool,
}

#[derive(Debug, Clone)]
struct Node {
    spec: NodeSpec,
    mac: Mac,
    rng: RngStream,
    ledger: EnergyLedger,
    mode: Mode,
    lock: Option<Lock>,
    epoch: u64,
    deaf_until: SimTime,
    mac_timer: Option<EventHandle>,
    /// Alternating LPL accounting: time up to which sniffs are booked and
    /// the start of a sniff window that is booked as open.
    lpl_cursor: SimTime,
    open_window: Option<SimTime>,
}

/// Notifications queued for the application.
#[derive(Debug, Clone)]
enum Note {
    Receive { node: usize, frame: Frame },
    TxStart { node: usize, frame: Frame },
    TxEnd { node: usize, frame: Frame, collided: bool },
    Timer { node: usize, token: u64 },
}

/// Everything an application may touch while handling a callback.
pub struct Core {
    sched: Scheduler<Event>,
    channel: Channel,
    nodes: Vec<Node>,
    radio: RadioParams,
    energy: EnergyDfaModel,
    lpl_model: LplModel,
    jams: Vec<JamInterval>,
    log: MacLog,
    notes: Vec<Note>,
    dirty: Vec<usize>,
    scenario_rng: RngStream,
    deliveries: Vec<Delivery>,
}

pub trait Application {
    fn init(&mut self, core: &mut Core) -> Result<(), SimError>;

    fn on_receive(&mut self, core: &mut Core, node: usize, frame: &Frame) -> Result<(), SimError>;

    fn on_timer(&mut self, _core: &mut Core, _node: usize, _token: u64) -> Result<(), SimError> {
        Ok(())
    }

    fn on_tx_start(&mut self, _core: &mut Core, _node: usize, _frame: &Frame) -> Result<(), SimError> {
        Ok(())
    }

    fn on_tx_end(&mut self, _core: &mut Core, _node: usize, _frame: &Frame, _collided: bool) -> Result<(), SimError> {
        Ok(())
    }
}

impl Core {
    fn new(cfg: WorldConfig) -> Result<Self, SimError> {
        let mut nodes = Vec::with_capacity(cfg.nodes.len());
        for (i, spec) in cfg.nodes.into_iter().enumerate() {
            if nodes.iter().any(|n: &Node| n.spec.address == spec.address) || spec.address.is_broadcast() {
                return Err(SimError::config("scenario", "nodes", format!("bad or duplicate address {}", spec.address)));
            }
            let mut rng = RngStream::for_node(cfg.seed, i);
            let (mode, initial) = match spec.radio {
                RadioPolicy::AlwaysOn => (Mode::Rx, PowerState::Rx),
                RadioPolicy::LowPowerListen => {
                    // random phase of the first sniff
                    let period = cfg.radio.sniff_period();
                    let first = rng.uniform_us(Duration::ZERO, Duration::from_us(period.as_us() - 1));
                    let sched = SniffSchedule {
                        first: SimTime::ZERO + first,
                        period,
                        on: Duration::from_us(cfg.radio.sniff_on_us),
                    };
                    (Mode::Lpl(sched), PowerState::SleepLpl)
                }
            };
            nodes.push(Node {
                mac: Mac::new(spec.address, cfg.mac.clone()),
                spec,
                rng,
                ledger: EnergyLedger::new(initial, SimTime::ZERO),
                mode,
                lock: None,
                epoch: 0,
                deaf_until: SimTime::ZERO,
                mac_timer: None,
                lpl_cursor: SimTime::ZERO,
                open_window: None,
            });
        }
        let mut core = Core {
            sched: Scheduler::new(),
            channel: Channel::new(Duration::from_us(cfg.radio.cca_latency_us)),
            nodes,
            radio: cfg.radio,
            energy: cfg.energy,
            lpl_model: cfg.lpl_model,
            jams: cfg.jams,
            log: MacLog::new(),
            notes: Vec::new(),
            dirty: Vec::new(),
            scenario_rng: RngStream::new(cfg.seed, SCENARIO_STREAM),
            deliveries: Vec::new(),
        };
        for i in 0..core.nodes.len() {
            core.channel.subscribe_activity(i);
            let n = &core.nodes[i];
            core.log.push(SimTime::ZERO, n.spec.address, MacEvent::LedgerInit(n.ledger.state()));
        }
        for k in 0..core.jams.len() {
            core.sched.schedule(core.jams[k].start, Event::JamStart(k))?;
        }
        Ok(core)
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn address(&self, node: usize) -> Address {
        self.nodes[node].spec.address
    }

    pub fn index_of(&self, addr: Address) -> Option<usize> {
        self.nodes.iter().position(|n| n.spec.address == addr)
    }

    pub fn radio_params(&self) -> &RadioParams {
        &self.radio
    }

    pub fn mac(&self, node: usize) -> &Mac {
        &self.nodes[node].mac
    }

    pub fn mac_mut(&mut self, node: usize) -> &mut Mac {
        &mut self.nodes[node].mac
    }

    pub fn ledger(&self, node: usize) -> &EnergyLedger {
        &self.nodes[node].ledger
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    /// Scenario-level random stream (id 0), for application traffic.
    pub fn scenario_rng(&mut self) -> &mut RngStream {
        &mut self.scenario_rng
    }

    /// Whether the node's transmit queue has room.
    pub fn can_send(&self, node: usize) -> bool {
        self.nodes[node].mac.can_accept()
    }

    pub fn set_timer(&mut self, node: usize, at: SimTime, token: u64) -> Result<EventHandle, SimError> {
        self.sched.schedule(at, Event::AppTimer { node, token })
    }

    pub fn cancel_timer(&mut self, handle: EventHandle) -> bool {
        self.sched.cancel(handle)
    }

    /// Hand a frame to the node's MAC.
    pub fn send(&mut self, node: usize, frame: Frame, broadcast_reply: bool) -> Result<(), SimError> {
        let now = self.now();
        let busy = self.channel.sensing_now();
        let n = &mut self.nodes[node];
        let out = n
            .mac
            .request_send(SendRequest { frame, broadcast_reply }, now, busy, &mut n.rng, &mut self.log)?;
        // low-power listening is suspended while a frame is pending
        self.wake(node)?;
        self.apply_mac(node, out)?;
        self.dirty.push(node);
        Ok(())
    }

    pub fn reset_ledger(&mut self, node: usize) -> Result<(), SimError> {
        self.catch_up(node, self.now())?;
        let now = self.now();
        let n = &mut self.nodes[node];
        n.ledger.reset(now);
        self.log.push(now, n.spec.address, MacEvent::LedgerReset);
        Ok(())
    }

    pub fn freeze_ledger(&mut self, node: usize) -> Result<u64, SimError> {
        let now = self.now();
        if self.nodes[node].ledger.is_frozen() {
            return Ok(self.nodes[node].ledger.accumulated());
        }
        self.catch_up(node, now)?;
        let n = &mut self.nodes[node];
        let v = n.ledger.freeze(&self.energy, now);
        self.log.push(now, n.spec.address, MacEvent::LedgerFreeze);
        Ok(v)
    }

    fn radio_call(&mut self, node: usize, call: RadioCall, at: SimTime) -> Result<(), SimError> {
        let n = &mut self.nodes[node];
        n.ledger.on_transition(&self.energy, call, at)?;
        self.log.push(at, n.spec.address, MacEvent::Radio(call));
        Ok(())
    }

    /// Alternating LPL accounting: book every sniff window that opened
    /// before `t` (and every one that closed by `t`) as RX time.
    fn catch_up(&mut self, node: usize, t: SimTime) -> Result<(), SimError> {
        if self.lpl_model != LplModel::Alternating {
            return Ok(());
        }
        let Mode::Lpl(sched) = self.nodes[node].mode else {
            return Ok(());
        };
        loop {
            let n = &self.nodes[node];
            if let Some(ws) = n.open_window {
                let we = ws + sched.on;
                if we > t {
                    break;
                }
                self.radio_call(node, RadioCall::SniffEnd, we)?;
                let n = &mut self.nodes[node];
                n.open_window = None;
                n.lpl_cursor = we;
            } else {
                let w = sched.window_at_or_after(n.lpl_cursor).max(n.lpl_cursor);
                if w >= t {
                    break;
                }
                self.radio_call(node, RadioCall::SniffStart, w)?;
                let n = &mut self.nodes[node];
                n.open_window = Some(w);
                n.lpl_cursor = w;
            }
        }
        Ok(())
    }

    /// Leave low-power listening into full RX.
    fn wake(&mut self, node: usize) -> Result<(), SimError> {
        if !matches!(self.nodes[node].mode, Mode::Lpl(_)) {
            return Ok(());
        }
        let now = self.now();
        self.catch_up(node, now)?;
        self.radio_call(node, RadioCall::Listen, now)?;
        let n = &mut self.nodes[node];
        n.mode = Mode::Rx;
        n.open_window = None;
        n.epoch += 1;
        self.try_lock_live(node)
    }

    fn enter_lpl(&mut self, node: usize, call: RadioCall) -> Result<(), SimError> {
        let now = self.now();
        self.radio_call(node, call, now)?;
        let sched = SniffSchedule::after_entry(&self.radio, now);
        let n = &mut self.nodes[node];
        n.mode = Mode::Lpl(sched);
        n.lock = None;
        n.epoch += 1;
        n.lpl_cursor = now;
        n.open_window = None;
        let epoch = n.epoch;
        let me = Sender::Node(n.spec.address);
        let mut arms = Vec::new();
        for r in self.channel.live_records() {
            if r.sender == me || r.frame.is_none() {
                continue;
            }
            if let Some(td) = sched.first_detection(r.start().max(now), r.timing.preamble_end) {
                arms.push((td, r.id));
            }
        }
        for (td, record) in arms {
            self.sched.schedule(td, Event::SniffLock { node, record, epoch })?;
        }
        Ok(())
    }

    fn lock_onto(&mut self, node: usize, record: RecordId) -> Result<(), SimError> {
        let header_end = self.channel.record(record).timing.header_end;
        let n = &mut self.nodes[node];
        n.lock = Some(Lock {
            record,
            accepted: false,
        });
        n.epoch += 1;
        let epoch = n.epoch;
        self.sched.schedule(header_end, Event::HeaderEnd { node, record, epoch })?;
        Ok(())
    }

    /// A listening, unlocked radio synchronises to a live preamble.
    fn try_lock_live(&mut self, node: usize) -> Result<(), SimError> {
        let now = self.now();
        let n = &self.nodes[node];
        if n.mode != Mode::Rx || n.lock.is_some() {
            return Ok(());
        }
        if now < n.deaf_until {
            return Ok(());
        }
        let me = Sender::Node(n.spec.address);
        let target = self
            .channel
            .live_records()
            .filter(|r| r.sender != me && r.frame.is_some() && r.start() <= now && now < r.timing.preamble_end)
            .min_by_key(|r| (r.start(), r.id))
            .map(|r| r.id);
        if let Some(record) = target {
            self.lock_onto(node, record)?;
        }
        Ok(())
    }

    fn apply_mac(&mut self, node: usize, out: MacOutput) -> Result<(), SimError> {
        match out.timer {
            TimerCmd::Keep => {}
            TimerCmd::Set(at) => {
                if let Some(h) = self.nodes[node].mac_timer.take() {
                    self.sched.cancel(h);
                }
                self.nodes[node].mac_timer = Some(self.sched.schedule(at, Event::MacTimer(node))?);
            }
            TimerCmd::Cancel => {
                if let Some(h) = self.nodes[node].mac_timer.take() {
                    self.sched.cancel(h);
                }
            }
        }
        if let Some(tx) = out.transmit {
            if let Some(h) = self.nodes[node].mac_timer.take() {
                self.sched.cancel(h);
            }
            self.start_tx(node, tx.frame, tx.cca)?;
        }
        Ok(())
    }

    fn start_tx(&mut self, node: usize, frame: Frame, cca: Option<crate::channel::CcaDecision>) -> Result<(), SimError> {
        let now = self.now();
        self.wake(node)?;
        self.radio_call(node, RadioCall::Send, now)?;
        let timing = self.radio.timing(&frame, now);
        let addr = self.nodes[node].spec.address;
        let (record, notice) =
            self.channel
                .begin_transmission(Sender::Node(addr), Some(frame.clone()), timing, now)?;
        if let Some(d) = cca {
            self.channel.log_cca(d);
        }
        let n = &mut self.nodes[node];
        n.mode = Mode::Tx(record);
        n.lock = None;
        n.epoch += 1;
        self.sched.schedule(timing.end, Event::TxEnd { node: Some(node), record })?;
        let latency = self.channel.cca_latency();
        if latency > Duration::ZERO {
            self.sched.schedule(now + latency, Event::SenseOn(record))?;
        }
        self.notify_receivers(node, record, timing.preamble_end)?;
        self.notes.push(Note::TxStart { node, frame });
        if let Some(a) = notice {
            self.dispatch_activity(a)?;
        }
        Ok(())
    }

    /// Every other radio either synchronises now (listening), arms a sniff
    /// detection (duty-cycled) or misses the frame.
    fn notify_receivers(&mut self, sender: usize, record: RecordId, preamble_end: SimTime) -> Result<(), SimError> {
        let now = self.now();
        for j in 0..self.nodes.len() {
            if j == sender {
                continue;
            }
            match self.nodes[j].mode {
                Mode::Tx(_) => {}
                Mode::Rx => {
                    let n = &self.nodes[j];
                    if n.lock.is_none() && now >= n.deaf_until {
                        self.lock_onto(j, record)?;
                    }
                }
                Mode::Lpl(sched) => {
                    if let Some(td) = sched.first_detection(now, preamble_end) {
                        let epoch = self.nodes[j].epoch;
                        self.sched.schedule(td, Event::SniffLock { node: j, record, epoch })?;
                    }
                }
            }
        }
        Ok(())
    }

    fn dispatch_activity(&mut self, a: Activity) -> Result<(), SimError> {
        let now = self.now();
        for i in 0..self.nodes.len() {
            if !self.nodes[i].mac.has_pending() {
                continue;
            }
            let n = &mut self.nodes[i];
            let out = match a {
                Activity::BusyStart(_) => n.mac.on_busy(now, &mut self.log),
                Activity::IdleStart(_) => n.mac.on_idle(now, &mut n.rng, &mut self.log),
            };
            self.apply_mac(i, out)?;
        }
        Ok(())
    }

    /// Put a radio into the state its current obligations require.
    fn settle_radio(&mut self, node: usize) -> Result<(), SimError> {
        let n = &self.nodes[node];
        let want_on = n.spec.radio == RadioPolicy::AlwaysOn || n.mac.has_pending() || n.lock.is_some();
        match n.mode {
            Mode::Tx(_) => Ok(()),
            Mode::Rx if !want_on => self.enter_lpl(node, RadioCall::LowPowerListen),
            Mode::Rx => self.try_lock_live(node),
            Mode::Lpl(_) if want_on => self.wake(node),
            Mode::Lpl(_) => Ok(()),
        }
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        let now = self.now();
        match ev {
            Event::MacTimer(i) => {
                self.nodes[i].mac_timer = None;
                let busy = self.channel.sensing_now();
                let n = &mut self.nodes[i];
                let out = n.mac.on_timer(now, busy, &mut n.rng, &mut self.log);
                self.apply_mac(i, out)?;
                self.dirty.push(i);
            }
            Event::SenseOn(record) => {
                if let Some(a) = self.channel.sense_on(record, now) {
                    self.dispatch_activity(a)?;
                }
            }
            Event::Settle => {
                if let Some(a) = self.channel.settle(now) {
                    self.dispatch_activity(a)?;
                }
            }
            Event::JamStart(k) => {
                let jam = self.jams[k];
                let (record, notice) = self.channel.begin_transmission(Sender::Jammer, None, jam.timing(), now)?;
                self.sched.schedule(jam.end, Event::TxEnd { node: None, record })?;
                let latency = self.channel.cca_latency();
                if latency > Duration::ZERO {
                    self.sched.schedule(now + latency, Event::SenseOn(record))?;
                }
                if let Some(a) = notice {
                    self.dispatch_activity(a)?;
                }
            }
            Event::SniffLock { node, record, epoch } => {
                let n = &self.nodes[node];
                if n.epoch != epoch || !matches!(n.mode, Mode::Lpl(_)) {
                    return Ok(());
                }
                self.catch_up(node, now)?;
                if self.nodes[node].ledger.state() != PowerState::Rx {
                    self.radio_call(node, RadioCall::SniffStart, now)?;
                }
                let n = &mut self.nodes[node];
                n.mode = Mode::Rx;
                n.open_window = None;
                self.lock_onto(node, record)?;
            }
            Event::HeaderEnd { node, record, epoch } => {
                let n = &self.nodes[node];
                if n.epoch != epoch || n.lock.map(|l| l.record) != Some(record) {
                    return Ok(());
                }
                let addr = n.spec.address;
                let accepted = self
                    .channel
                    .record(record)
                    .frame
                    .as_ref()
                    .is_some_and(|f| f.accepted_by(addr));
                let n = &mut self.nodes[node];
                if accepted {
                    n.lock = Some(Lock { record, accepted: true });
                } else {
                    n.lock = None;
                    n.epoch += 1;
                    let duty_cycled = n.spec.radio == RadioPolicy::LowPowerListen && !n.mac.has_pending();
                    if duty_cycled {
                        self.enter_lpl(node, RadioCall::SniffEnd)?;
                    } else {
                        self.try_lock_live(node)?;
                    }
                }
            }
            Event::Rearm(i) => {
                self.try_lock_live(i)?;
            }
            Event::TxEnd { node, record } => self.end_tx(node, record)?,
            Event::AppTimer { node, token } => self.notes.push(Note::Timer { node, token }),
        }
        Ok(())
    }

    fn end_tx(&mut self, sender: Option<usize>, record: RecordId) -> Result<(), SimError> {
        let now = self.now();
        if self.channel.end_transmission(record) {
            self.sched.schedule(now, Event::Settle)?;
        }
        let rec = self.channel.record(record).clone();
        if let Some(s) = sender {
            self.radio_call(s, RadioCall::TxDone, now)?;
            let n = &mut self.nodes[s];
            n.mode = Mode::Rx;
            n.epoch += 1;
            let busy = self.channel.sensing_now();
            let out = n.mac.on_tx_done(now, busy, &mut n.rng, &mut self.log)?;
            self.apply_mac(s, out)?;
            let frame = rec.frame.clone().expect("node transmissions carry a frame");
            self.notes.push(Note::TxEnd {
                node: s,
                frame,
                collided: rec.collided,
            });
            self.dirty.push(s);
        }
        for j in 0..self.nodes.len() {
            let Some(lock) = self.nodes[j].lock else { continue };
            if lock.record != record {
                continue;
            }
            let n = &mut self.nodes[j];
            n.lock = None;
            n.epoch += 1;
            if lock.accepted && !rec.collided {
                self.radio_call(j, RadioCall::PacketReceived, now)?;
                let n = &mut self.nodes[j];
                if n.spec.rx_processing > Duration::ZERO {
                    n.deaf_until = now + n.spec.rx_processing;
                    self.sched.schedule(n.deaf_until, Event::Rearm(j))?;
                }
                let frame = rec.frame.clone().expect("received frames carry a frame");
                self.deliveries.push(Delivery {
                    record,
                    receiver: self.nodes[j].spec.address,
                    at: now,
                });
                self.notes.push(Note::Receive { node: j, frame });
            }
            self.dirty.push(j);
        }
        Ok(())
    }
}

/// A frame handed to a receiver's application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub record: RecordId,
    pub receiver: Address,
    pub at: SimTime,
}

/// Result of a finished simulation.
pub struct SimOutput<A> {
    pub app: A,
    pub trace: ChannelTrace,
    pub deliveries: Vec<Delivery>,
    pub log: MacLog,
    pub ledgers: Vec<EnergyLedger>,
    pub addresses: Vec<Address>,
    pub counters: QueueCounters,
    pub pending_events: usize,
    pub trace_hash: u64,
    pub end: SimTime,
}

pub struct Simulation<A> {
    core: Core,
    app: A,
    started: bool,
}

impl<A: Application> Simulation<A> {
    pub fn new(cfg: WorldConfig, app: A) -> Result<Self, SimError> {
        Ok(Simulation {
            core: Core::new(cfg)?,
            app,
            started: false,
        })
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Core {
        &mut self.core
    }

    pub fn app(&self) -> &A {
        &self.app
    }

    fn drain(&mut self) -> Result<(), SimError> {
        loop {
            if !self.core.notes.is_empty() {
                let notes = std::mem::take(&mut self.core.notes);
                for note in notes {
                    match note {
                        Note::Receive { node, frame } => self.app.on_receive(&mut self.core, node, &frame)?,
                        Note::TxStart { node, frame } => self.app.on_tx_start(&mut self.core, node, &frame)?,
                        Note::TxEnd { node, frame, collided } => {
                            self.app.on_tx_end(&mut self.core, node, &frame, collided)?
                        }
                        Note::Timer { node, token } => self.app.on_timer(&mut self.core, node, token)?,
                    }
                }
                continue;
            }
            if !self.core.dirty.is_empty() {
                let mut dirty = std::mem::take(&mut self.core.dirty);
                dirty.sort_unstable();
                dirty.dedup();
                for i in dirty {
                    self.core.settle_radio(i)?;
                }
                continue;
            }
            return Ok(());
        }
    }

    /// Process every event due at or before `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<(), SimError> {
        if !self.started {
            self.started = true;
            self.app.init(&mut self.core)?;
            self.drain()?;
        }
        if t_end < self.core.now() {
            return Err(SimError::Invariant(format!("run_until({t_end}) before clock {}", self.core.now())));
        }
        while let Some(f) = self.core.sched.pop_until(t_end) {
            self.core.handle(f.payload)?;
            self.drain()?;
        }
        self.core.sched.advance_to(t_end);
        Ok(())
    }

    /// Freeze every ledger that is still counting and hand back the
    /// artifacts.
    pub fn finish(mut self) -> Result<SimOutput<A>, SimError> {
        for i in 0..self.core.nodes.len() {
            self.core.freeze_ledger(i)?;
        }
        let counters = self.core.sched.counters();
        let pending_events = self.core.sched.pending();
        let trace_hash = self.core.sched.trace_hash();
        let end = self.core.now();
        let addresses = self.core.nodes.iter().map(|n| n.spec.address).collect();
        let ledgers = self.core.nodes.iter().map(|n| n.ledger.clone()).collect();
        Ok(SimOutput {
            app: self.app,
            trace: self.core.channel.into_trace(),
            deliveries: self.core.deliveries,
            log: self.core.log,
            ledgers,
            addresses,
            counters,
            pending_events,
            trace_hash,
            end,
        })
    }
}
