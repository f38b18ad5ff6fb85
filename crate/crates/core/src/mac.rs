//! Listen-before-talk channel access and the pure-ALOHA alternative.
//!
//! The MAC is a pure state machine. The simulation feeds it requests,
//! timer expiries and carrier-sense notices, and applies the returned
//! [`MacOutput`] (timer changes and transmissions).
//!
//! LBT rules: a frame first waits `t_F`. If no activity was sensed since
//! the request, it is sent when that window completes. Once activity has
//! been sensed, every idle period must last the full `t_F + t_PS` before
//! transmitting; any busy notice aborts the window and the next idle start
//! begins a fresh one.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::CcaDecision;
use crate::error::SimError;
use crate::frame::{Address, Frame};
use crate::maclog::{MacEvent, MacLog};
use crate::rng::RngStream;
use crate::time::{Duration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TpsPolicy {
    /// Fresh `t_PS` at the start of every contention round.
    #[default]
    Redraw,
    /// One `t_PS` per frame, drawn at request time.
    Retain,
}

impl FromStr for TpsPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "redraw" => Ok(TpsPolicy::Redraw),
            "retain" => Ok(TpsPolicy::Retain),
            other => Err(format!("unknown t_PS policy `{other}` (expected redraw or retain)")),
        }
    }
}

impl fmt::Display for TpsPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TpsPolicy::Redraw => "redraw",
            TpsPolicy::Retain => "retain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacMode {
    #[default]
    Lbt,
    Aloha,
}

impl FromStr for MacMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lbt" => Ok(MacMode::Lbt),
            "aloha" => Ok(MacMode::Aloha),
            other => Err(format!("unknown mode `{other}` (expected lbt or aloha)")),
        }
    }
}

impl fmt::Display for MacMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MacMode::Lbt => "lbt",
            MacMode::Aloha => "aloha",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub t_f_us: u64,
    pub t_ps_max_us: u64,
    pub pre_backoff_max_us: u64,
    pub tps_policy: TpsPolicy,
    pub mode: MacMode,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            t_f_us: 5_000,
            t_ps_max_us: 5_000,
            pre_backoff_max_us: 5_000,
            tps_policy: TpsPolicy::Redraw,
            mode: MacMode::Lbt,
        }
    }
}

impl MacParams {
    pub fn validate(&self, source: &str) -> Result<(), SimError> {
        if self.t_f_us == 0 {
            return Err(SimError::config(source, "mac.t_f_us", "must be positive"));
        }
        Ok(())
    }

    pub fn t_f(&self) -> Duration {
        Duration::from_us(self.t_f_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacPhase {
    Idle,
    PreBackoff,
    CcaCounting,
    DeferredBusy,
    Transmitting,
}

impl MacPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            MacPhase::Idle => "idle",
            MacPhase::PreBackoff => "pre-backoff",
            MacPhase::CcaCounting => "cca-counting",
            MacPhase::DeferredBusy => "deferred-busy",
            MacPhase::Transmitting => "transmitting",
        }
    }
}

impl fmt::Display for MacPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MacPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            MacPhase::Idle,
            MacPhase::PreBackoff,
            MacPhase::CcaCounting,
            MacPhase::DeferredBusy,
            MacPhase::Transmitting,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("unknown MAC phase `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendRequest {
    pub frame: Frame,
    /// Reply to a broadcast: gets the random pre-backoff before CCA.
    pub broadcast_reply: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimerCmd {
    #[default]
    Keep,
    Set(SimTime),
    Cancel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmit {
    pub frame: Frame,
    /// `None` in ALOHA mode.
    pub cca: Option<CcaDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MacOutput {
    pub timer: TimerCmd,
    pub transmit: Option<Transmit>,
}

/// Per-node channel access state.
#[derive(Debug, Clone)]
pub struct Mac {
    addr: Address,
    params: MacParams,
    phase: MacPhase,
    pending: Option<SendRequest>,
    queued: Option<SendRequest>,
    t_ps: Duration,
    sensed_activity: bool,
    cca_start: SimTime,
    window: Duration,
    timer_due: Option<SimTime>,
    forced_tps: VecDeque<Duration>,
    forced_pre: VecDeque<Duration>,
}

impl Mac {
    pub fn new(addr: Address, params: MacParams) -> Self {
        Mac {
            addr,
            params,
            phase: MacPhase::Idle,
            pending: None,
            queued: None,
            t_ps: Duration::ZERO,
            sensed_activity: false,
            cca_start: SimTime::ZERO,
            window: Duration::ZERO,
            timer_due: None,
            forced_tps: VecDeque::new(),
            forced_pre: VecDeque::new(),
        }
    }

    /// Scripted `t_PS` values consumed before the random stream.
    pub fn force_tps(&mut self, draws: impl IntoIterator<Item = Duration>) {
        self.forced_tps.extend(draws);
    }

    pub fn force_pre_backoff(&mut self, draws: impl IntoIterator<Item = Duration>) {
        self.forced_pre.extend(draws);
    }

    pub fn phase(&self) -> MacPhase {
        self.phase
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Whether another request can be accepted without overflowing the
    /// single-depth queue.
    pub fn can_accept(&self) -> bool {
        self.queued.is_none()
    }

    pub fn sensed_activity(&self) -> bool {
        self.sensed_activity
    }

    pub fn t_ps(&self) -> Duration {
        self.t_ps
    }

    fn set_phase(&mut self, to: MacPhase, now: SimTime, log: &mut MacLog) {
        if self.phase != to {
            log.push(now, self.addr, MacEvent::Phase { from: self.phase, to });
            self.phase = to;
        }
    }

    fn draw_tps(&mut self, now: SimTime, rng: &mut RngStream, log: &mut MacLog) {
        let d = match self.forced_tps.pop_front() {
            Some(d) => d,
            None => rng.uniform_us(Duration::ZERO, Duration::from_us(self.params.t_ps_max_us)),
        };
        self.t_ps = d;
        log.push(now, self.addr, MacEvent::TpsDraw(d));
    }

    /// Submit a frame. A second request while one is pending waits in the
    /// single-slot queue; a third is an error.
    pub fn request_send(
        &mut self,
        req: SendRequest,
        now: SimTime,
        busy: bool,
        rng: &mut RngStream,
        log: &mut MacLog,
    ) -> Result<MacOutput, SimError> {
        if self.pending.is_some() {
            if self.queued.is_some() {
                return Err(SimError::Invariant(format!(
                    "node {}: transmit queue overflow at {now}",
                    self.addr
                )));
            }
            self.queued = Some(req);
            return Ok(MacOutput::default());
        }
        Ok(self.start(req, now, busy, rng, log))
    }

    fn start(&mut self, req: SendRequest, now: SimTime, busy: bool, rng: &mut RngStream, log: &mut MacLog) -> MacOutput {
        let broadcast_reply = req.broadcast_reply;
        self.pending = Some(req);
        // activity already on air at request time counts as sensed
        self.sensed_activity = busy;
        if self.params.mode == MacMode::Aloha {
            return self.transmit(now, None, log);
        }
        if self.params.tps_policy == TpsPolicy::Retain {
            self.draw_tps(now, rng, log);
        }
        if broadcast_reply {
            let d = match self.forced_pre.pop_front() {
                Some(d) => d,
                None => rng.uniform_us(Duration::ZERO, Duration::from_us(self.params.pre_backoff_max_us)),
            };
            log.push(now, self.addr, MacEvent::PreBackoffDraw(d));
            self.set_phase(MacPhase::PreBackoff, now, log);
            self.timer_due = Some(now + d);
            return MacOutput {
                timer: TimerCmd::Set(now + d),
                transmit: None,
            };
        }
        self.enter_cca(now, busy, rng, log)
    }

    fn enter_cca(&mut self, now: SimTime, busy: bool, rng: &mut RngStream, log: &mut MacLog) -> MacOutput {
        if busy {
            self.sensed_activity = true;
            self.set_phase(MacPhase::DeferredBusy, now, log);
            self.timer_due = None;
            return MacOutput {
                timer: TimerCmd::Cancel,
                transmit: None,
            };
        }
        self.open_window(now, rng, log)
    }

    fn open_window(&mut self, now: SimTime, rng: &mut RngStream, log: &mut MacLog) -> MacOutput {
        if self.sensed_activity && self.params.tps_policy == TpsPolicy::Redraw {
            self.draw_tps(now, rng, log);
        }
        self.window = if self.sensed_activity {
            self.params.t_f() + self.t_ps
        } else {
            self.params.t_f()
        };
        self.cca_start = now;
        self.set_phase(MacPhase::CcaCounting, now, log);
        let due = now + self.window;
        self.timer_due = Some(due);
        MacOutput {
            timer: TimerCmd::Set(due),
            transmit: None,
        }
    }

    fn transmit(&mut self, now: SimTime, cca: Option<CcaDecision>, log: &mut MacLog) -> MacOutput {
        if let Some(d) = &cca {
            log.push(
                now,
                self.addr,
                MacEvent::Cca {
                    shortcut: d.shortcut,
                    t_ps: d.t_ps,
                },
            );
        }
        self.set_phase(MacPhase::Transmitting, now, log);
        self.timer_due = None;
        let frame = self
            .pending
            .as_ref()
            .expect("transmit without a pending frame")
            .frame
            .clone();
        MacOutput {
            timer: TimerCmd::Keep,
            transmit: Some(Transmit { frame, cca }),
        }
    }

    pub fn on_timer(&mut self, now: SimTime, busy: bool, rng: &mut RngStream, log: &mut MacLog) -> MacOutput {
        if self.timer_due != Some(now) {
            return MacOutput::default();
        }
        self.timer_due = None;
        match self.phase {
            MacPhase::PreBackoff => self.enter_cca(now, busy, rng, log),
            MacPhase::CcaCounting => {
                let shortcut = !self.sensed_activity;
                let decision = CcaDecision {
                    node: self.addr,
                    window_start: self.cca_start,
                    window: self.window,
                    shortcut,
                    t_ps: if shortcut { Duration::ZERO } else { self.t_ps },
                };
                self.transmit(now, Some(decision), log)
            }
            _ => MacOutput::default(),
        }
    }

    /// Carrier sense went busy.
    pub fn on_busy(&mut self, now: SimTime, log: &mut MacLog) -> MacOutput {
        match self.phase {
            MacPhase::PreBackoff => {
                self.sensed_activity = true;
                MacOutput::default()
            }
            // The window [cca_start, now) is complete and was idle: a frame
            // starting exactly now does not stop this node (tie -> collision).
            MacPhase::CcaCounting if self.timer_due == Some(now) => MacOutput::default(),
            MacPhase::CcaCounting => {
                self.sensed_activity = true;
                self.timer_due = None;
                self.set_phase(MacPhase::DeferredBusy, now, log);
                MacOutput {
                    timer: TimerCmd::Cancel,
                    transmit: None,
                }
            }
            _ => MacOutput::default(),
        }
    }

    /// Carrier sense went idle.
    pub fn on_idle(&mut self, now: SimTime, rng: &mut RngStream, log: &mut MacLog) -> MacOutput {
        if self.phase == MacPhase::DeferredBusy {
            self.open_window(now, rng, log)
        } else {
            MacOutput::default()
        }
    }

    /// The node's own frame left the air. Starts the queued frame, if any.
    pub fn on_tx_done(&mut self, now: SimTime, busy: bool, rng: &mut RngStream, log: &mut MacLog) -> Result<MacOutput, SimError> {
        if self.phase != MacPhase::Transmitting {
            return Err(SimError::Invariant(format!(
                "node {}: tx-done in phase {} at {now}",
                self.addr, self.phase
            )));
        }
        self.pending = None;
        self.set_phase(MacPhase::Idle, now, log);
        match self.queued.take() {
            Some(next) => Ok(self.start(next, now, busy, rng, log)),
            None => Ok(MacOutput::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{FrameKind, Preamble};

    fn req(broadcast_reply: bool) -> SendRequest {
        SendRequest {
            frame: Frame::new(FrameKind::Unicast, Address(1), Address(0), 0, vec![], Preamble::Normal).unwrap(),
            broadcast_reply,
        }
    }

    fn t(us: u64) -> SimTime {
        SimTime::from_us(us)
    }

    #[test]
    fn idle_channel_uses_fixed_window() {
        let mut m = Mac::new(Address(1), MacParams::default());
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        let out = m.request_send(req(false), t(100), false, &mut rng, &mut log).unwrap();
        assert_eq!(out.timer, TimerCmd::Set(t(5_100)));
        let out = m.on_timer(t(5_100), false, &mut rng, &mut log);
        let tx = out.transmit.unwrap();
        assert!(tx.cca.unwrap().shortcut);
    }

    #[test]
    fn busy_restarts_full_window() {
        let mut m = Mac::new(Address(1), MacParams::default());
        m.force_tps([Duration::from_us(700), Duration::from_us(300)]);
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        m.request_send(req(false), t(0), true, &mut rng, &mut log).unwrap();
        assert_eq!(m.phase(), MacPhase::DeferredBusy);
        let out = m.on_idle(t(1_000), &mut rng, &mut log);
        assert_eq!(out.timer, TimerCmd::Set(t(6_700)));
        // activity 2 ms into the wait
        let out = m.on_busy(t(3_000), &mut log);
        assert_eq!(out.timer, TimerCmd::Cancel);
        let out = m.on_idle(t(4_000), &mut rng, &mut log);
        assert_eq!(out.timer, TimerCmd::Set(t(9_300)));
        let tx = m.on_timer(t(9_300), false, &mut rng, &mut log).transmit.unwrap();
        let cca = tx.cca.unwrap();
        assert!(!cca.shortcut);
        assert_eq!(cca.t_ps, Duration::from_us(300));
    }

    #[test]
    fn retain_policy_reuses_draw() {
        let p = MacParams {
            tps_policy: TpsPolicy::Retain,
            ..MacParams::default()
        };
        let mut m = Mac::new(Address(1), p);
        m.force_tps([Duration::from_us(1_234), Duration::from_us(9)]);
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        m.request_send(req(false), t(0), true, &mut rng, &mut log).unwrap();
        assert_eq!(m.on_idle(t(10), &mut rng, &mut log).timer, TimerCmd::Set(t(6_244)));
        m.on_busy(t(20), &mut log);
        assert_eq!(m.on_idle(t(30), &mut rng, &mut log).timer, TimerCmd::Set(t(6_264)));
    }

    #[test]
    fn tps_zero_sends_exactly_t_f_after_idle() {
        let mut m = Mac::new(Address(1), MacParams::default());
        m.force_tps([Duration::ZERO]);
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        m.request_send(req(false), t(0), true, &mut rng, &mut log).unwrap();
        assert_eq!(m.on_idle(t(50), &mut rng, &mut log).timer, TimerCmd::Set(t(5_050)));
    }

    #[test]
    fn broadcast_reply_pre_backoff_bounds() {
        for seed in 0..200 {
            let mut m = Mac::new(Address(1), MacParams::default());
            let mut rng = RngStream::new(seed, 1);
            let mut log = MacLog::new();
            let out = m.request_send(req(true), t(0), false, &mut rng, &mut log).unwrap();
            let TimerCmd::Set(pre_end) = out.timer else { panic!() };
            assert!(pre_end <= t(5_000));
            let TimerCmd::Set(tx) = m.on_timer(pre_end, false, &mut rng, &mut log).timer else {
                panic!()
            };
            assert!(tx >= t(5_000) && tx <= t(10_000));
        }
    }

    #[test]
    fn simultaneous_expiry_is_not_deferred() {
        let mut m = Mac::new(Address(1), MacParams::default());
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        m.request_send(req(false), t(0), false, &mut rng, &mut log).unwrap();
        assert_eq!(m.on_busy(t(5_000), &mut log), MacOutput::default());
        assert!(m.on_timer(t(5_000), true, &mut rng, &mut log).transmit.is_some());
    }

    #[test]
    fn queue_depth_is_one() {
        let mut m = Mac::new(Address(1), MacParams::default());
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        m.request_send(req(false), t(0), false, &mut rng, &mut log).unwrap();
        m.request_send(req(false), t(1), false, &mut rng, &mut log).unwrap();
        assert!(m.request_send(req(false), t(2), false, &mut rng, &mut log).is_err());
        m.on_timer(t(5_000), false, &mut rng, &mut log);
        let out = m.on_tx_done(t(8_000), false, &mut rng, &mut log).unwrap();
        assert_eq!(out.timer, TimerCmd::Set(t(13_000)));
    }

    #[test]
    fn aloha_sends_immediately() {
        let p = MacParams {
            mode: MacMode::Aloha,
            ..MacParams::default()
        };
        let mut m = Mac::new(Address(1), p);
        let mut rng = RngStream::new(1, 1);
        let mut log = MacLog::new();
        let out = m.request_send(req(true), t(42), true, &mut rng, &mut log).unwrap();
        assert!(out.transmit.unwrap().cca.is_none());
    }
}
