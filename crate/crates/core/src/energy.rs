//! Energy accounting with a deterministic automaton over radio power
//! states.
//!
//! Each state carries an average power in µW and each driver call a fixed
//! transition energy in pJ. On every call the ledger adds
//! `power(current) * time_in_state + transition_energy`, so with integer
//! µW and µs the running total is an exact integer number of pJ.
//!
//! [`replay_oracle`] recomputes the same totals from the event log without
//! touching the ledger; the two must agree bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::frame::Address;
use crate::maclog::{MacEvent, MacLogEntry};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerState {
    SleepLpl,
    Rx,
    Tx,
    Idle,
}

impl PowerState {
    pub const ALL: [PowerState; 4] = [PowerState::SleepLpl, PowerState::Rx, PowerState::Tx, PowerState::Idle];

    pub fn as_str(self) -> &'static str {
        match self {
            PowerState::SleepLpl => "sleep-lpl",
            PowerState::Rx => "rx",
            PowerState::Tx => "tx",
            PowerState::Idle => "idle",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PowerState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PowerState::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown power state `{s}`"))
    }
}

/// Driver-level calls and radio interrupts that move the automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadioCall {
    Send,
    Listen,
    LowPowerListen,
    PacketReceived,
    TxDone,
    SniffStart,
    SniffEnd,
    Standby,
}

impl RadioCall {
    pub const ALL: [RadioCall; 8] = [
        RadioCall::Send,
        RadioCall::Listen,
        RadioCall::LowPowerListen,
        RadioCall::PacketReceived,
        RadioCall::TxDone,
        RadioCall::SniffStart,
        RadioCall::SniffEnd,
        RadioCall::Standby,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RadioCall::Send => "send",
            RadioCall::Listen => "listen",
            RadioCall::LowPowerListen => "low-power-listen",
            RadioCall::PacketReceived => "packet-received",
            RadioCall::TxDone => "tx-done",
            RadioCall::SniffStart => "sniff-start",
            RadioCall::SniffEnd => "sniff-end",
            RadioCall::Standby => "standby",
        }
    }
}

impl fmt::Display for RadioCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RadioCall {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RadioCall::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown radio call `{s}`"))
    }
}

/// How the low-power-listening duty cycle is accounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LplModel {
    /// One state at the average duty-cycle current.
    #[default]
    Averaged,
    /// Sleep current between sniffs, RX current during each sniff window.
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Currents {
    pub rx: u64,
    pub tx: u64,
    pub lpl_avg: u64,
    pub idle: u64,
    /// Only used by [`LplModel::Alternating`].
    pub sleep: u64,
}

impl Default for Currents {
    fn default() -> Self {
        Currents {
            rx: 23_000,
            tx: 45_000,
            lpl_avg: 1_500,
            idle: 1_500,
            // (1500 * 4900 - 23000 * 200) / 4700, so both LPL models share
            // the same average current.
            sleep: 585,
        }
    }
}

/// One edge of a custom automaton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub from: PowerState,
    pub call: RadioCall,
    pub to: PowerState,
    /// Overrides the per-call energy from `transition_pj`.
    #[serde(default)]
    pub energy_pj: Option<u64>,
}

/// Contents of the energy parameter file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub supply_mv: u64,
    pub lpl_model: LplModel,
    /// Per-state currents in µA.
    pub current_ua: Currents,
    /// Transition energy per driver call in pJ; missing calls cost zero.
    pub transition_pj: BTreeMap<RadioCall, u64>,
    /// Replaces the built-in edge set when non-empty.
    pub transition: Vec<TransitionSpec>,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            supply_mv: 3_000,
            lpl_model: LplModel::Averaged,
            current_ua: Currents::default(),
            transition_pj: BTreeMap::new(),
            transition: Vec::new(),
        }
    }
}

impl EnergyParams {
    pub fn from_toml_str(text: &str, source: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::config(source, "energy parameters", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    fn power_uw(&self, current_ua: u64, field: &str, source: &str) -> Result<u64, SimError> {
        let nw = self.supply_mv * current_ua;
        if !nw.is_multiple_of(1_000) {
            return Err(SimError::config(
                source,
                field,
                format!("{} mV x {current_ua} uA is not a whole number of uW", self.supply_mv),
            ));
        }
        Ok(nw / 1_000)
    }

    /// Build the automaton, checking determinism and unit exactness.
    pub fn model(&self, source: &str) -> Result<EnergyDfaModel, SimError> {
        if self.supply_mv == 0 {
            return Err(SimError::config(source, "supply_mv", "must be positive"));
        }
        let c = &self.current_ua;
        let sleep_ua = match self.lpl_model {
            LplModel::Averaged => c.lpl_avg,
            LplModel::Alternating => c.sleep,
        };
        let mut power = [0; 4];
        power[PowerState::SleepLpl.index()] = self.power_uw(sleep_ua, "current_ua.lpl", source)?;
        power[PowerState::Rx.index()] = self.power_uw(c.rx, "current_ua.rx", source)?;
        power[PowerState::Tx.index()] = self.power_uw(c.tx, "current_ua.tx", source)?;
        power[PowerState::Idle.index()] = self.power_uw(c.idle, "current_ua.idle", source)?;

        let specs: Vec<TransitionSpec> = if self.transition.is_empty() {
            default_edges()
                .into_iter()
                .map(|(from, call, to)| TransitionSpec {
                    from,
                    call,
                    to,
                    energy_pj: None,
                })
                .collect()
        } else {
            self.transition.clone()
        };
        let mut edges = HashMap::new();
        for s in specs {
            let e = s
                .energy_pj
                .unwrap_or_else(|| self.transition_pj.get(&s.call).copied().unwrap_or(0));
            if edges.insert((s.from, s.call), (s.to, e)).is_some() {
                return Err(SimError::config(
                    source,
                    "transition",
                    format!("two edges for ({}, {}): automaton must be deterministic", s.from, s.call),
                ));
            }
        }
        Ok(EnergyDfaModel { power, edges })
    }
}

/// Edge set of the default transceiver automaton.
fn default_edges() -> Vec<(PowerState, RadioCall, PowerState)> {
    use PowerState::*;
    use RadioCall::*;
    vec![
        (Idle, Listen, Rx),
        (Idle, LowPowerListen, SleepLpl),
        (Idle, Send, Tx),
        (Idle, Standby, Idle),
        (SleepLpl, Listen, Rx),
        (SleepLpl, Send, Tx),
        (SleepLpl, SniffStart, Rx),
        (SleepLpl, Standby, Idle),
        (SleepLpl, LowPowerListen, SleepLpl),
        (Rx, Send, Tx),
        (Rx, Listen, Rx),
        (Rx, PacketReceived, Rx),
        (Rx, LowPowerListen, SleepLpl),
        (Rx, SniffEnd, SleepLpl),
        (Rx, Standby, Idle),
        (Tx, TxDone, Rx),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnergyDfaModel {
    power: [u64; 4],
    edges: HashMap<(PowerState, RadioCall), (PowerState, u64)>,
}

impl Default for EnergyDfaModel {
    fn default() -> Self {
        EnergyParams::default()
            .model("defaults")
            .expect("default energy parameters are valid")
    }
}

impl EnergyDfaModel {
    /// Average power of `state` in µW.
    pub fn power_uw(&self, state: PowerState) -> u64 {
        self.power[state.index()]
    }

    /// Target state and transition energy (pJ) of `call` in `state`.
    pub fn step(&self, state: PowerState, call: RadioCall) -> Option<(PowerState, u64)> {
        self.edges.get(&(state, call)).copied()
    }

    /// All edges in a stable order.
    pub fn edges(&self) -> Vec<(PowerState, RadioCall, PowerState, u64)> {
        let mut v: Vec<_> = self
            .edges
            .iter()
            .map(|(&(from, call), &(to, e))| (from, call, to, e))
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerOp {
    Transition(RadioCall),
    Reset,
    Freeze,
}

/// One ledger operation with the online total right after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerStep {
    pub time: SimTime,
    pub op: LedgerOp,
    pub total_pj: u64,
}

/// Online energy counter of one radio.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    state: PowerState,
    entry: SimTime,
    accumulated: u64,
    frozen: bool,
    initial: PowerState,
    steps: Vec<LedgerStep>,
}

impl EnergyLedger {
    pub fn new(initial: PowerState, now: SimTime) -> Self {
        EnergyLedger {
            state: initial,
            entry: now,
            accumulated: 0,
            frozen: false,
            initial,
            steps: Vec::new(),
        }
    }

    pub fn state(&self) -> PowerState {
        self.state
    }

    pub fn initial_state(&self) -> PowerState {
        self.initial
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Accumulated energy in pJ (the open state interval is not included).
    pub fn accumulated(&self) -> u64 {
        self.accumulated
    }

    pub fn steps(&self) -> &[LedgerStep] {
        &self.steps
    }

    /// Apply a driver call. While frozen the state still follows the
    /// automaton but nothing is added to the total.
    pub fn on_transition(
        &mut self,
        model: &EnergyDfaModel,
        call: RadioCall,
        now: SimTime,
    ) -> Result<u64, SimError> {
        let (to, e_tran) = model.step(self.state, call).ok_or_else(|| {
            SimError::Invariant(format!("no transition for `{call}` in state `{}` at {now}", self.state))
        })?;
        if now < self.entry {
            return Err(SimError::Invariant(format!(
                "energy transition at {now} before state entry {}",
                self.entry
            )));
        }
        if !self.frozen {
            self.accumulated += model.power_uw(self.state) * (now - self.entry).as_us() + e_tran;
        }
        self.state = to;
        self.entry = now;
        self.steps.push(LedgerStep {
            time: now,
            op: LedgerOp::Transition(call),
            total_pj: self.accumulated,
        });
        Ok(self.accumulated)
    }

    /// Zero the counter and restart the open interval at `now`.
    pub fn reset(&mut self, now: SimTime) -> u64 {
        self.accumulated = 0;
        self.entry = now;
        self.frozen = false;
        self.steps.push(LedgerStep {
            time: now,
            op: LedgerOp::Reset,
            total_pj: 0,
        });
        0
    }

    /// Settle the open interval up to `now` and stop counting. Idempotent.
    pub fn freeze(&mut self, model: &EnergyDfaModel, now: SimTime) -> u64 {
        if !self.frozen {
            self.accumulated += model.power_uw(self.state) * now.since(self.entry).as_us();
            self.entry = now;
            self.frozen = true;
            self.steps.push(LedgerStep {
                time: now,
                op: LedgerOp::Freeze,
                total_pj: self.accumulated,
            });
        }
        self.accumulated
    }
}

/// First point where the replayed total differs from the online one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub node: Address,
    pub index: usize,
    pub time: SimTime,
    pub what: String,
    pub online_pj: u64,
    pub replay_pj: u64,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "node {} step {} at {} ({}): online {} pJ, replay {} pJ",
            self.node, self.index, self.time, self.what, self.online_pj, self.replay_pj
        )
    }
}

/// Recompute per-node energy by folding over the MAC event log.
///
/// Only `ledger:*` and `radio:*` entries matter; the first `ledger:init`
/// entry of a node fixes its initial state and time.
pub fn replay_oracle(log: &[MacLogEntry], model: &EnergyDfaModel) -> Result<BTreeMap<Address, u64>, SimError> {
    struct Fold {
        state: PowerState,
        since: SimTime,
        total: u64,
        counting: bool,
    }
    let mut nodes: BTreeMap<Address, Fold> = BTreeMap::new();
    for entry in log {
        let t = entry.time;
        match entry.event {
            MacEvent::LedgerInit(state) => {
                nodes.insert(
                    entry.node,
                    Fold {
                        state,
                        since: t,
                        total: 0,
                        counting: true,
                    },
                );
            }
            MacEvent::Radio(call) => {
                let f = nodes
                    .get_mut(&entry.node)
                    .ok_or_else(|| SimError::Invariant(format!("radio call before ledger init for node {}", entry.node)))?;
                let Some((to, e)) = model.step(f.state, call) else {
                    return Err(SimError::Invariant(format!(
                        "replay: no edge for `{call}` in `{}` (node {}, {t})",
                        f.state, entry.node
                    )));
                };
                if f.counting {
                    let dt = t.as_us() - f.since.as_us();
                    f.total += dt * model.power_uw(f.state) + e;
                }
                f.state = to;
                f.since = t;
            }
            MacEvent::LedgerReset => {
                if let Some(f) = nodes.get_mut(&entry.node) {
                    f.total = 0;
                    f.since = t;
                    f.counting = true;
                }
            }
            MacEvent::LedgerFreeze => {
                if let Some(f) = nodes.get_mut(&entry.node) {
                    if f.counting {
                        f.total += (t.as_us() - f.since.as_us()) * model.power_uw(f.state);
                        f.since = t;
                        f.counting = false;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(nodes.into_iter().map(|(a, f)| (a, f.total)).collect())
}

/// Replays one node's log step by step against the ledger's recorded
/// totals and reports the first mismatch.
pub fn first_divergence(
    node: Address,
    log: &[MacLogEntry],
    ledger: &EnergyLedger,
    model: &EnergyDfaModel,
) -> Result<Option<Divergence>, SimError> {
    let mine: Vec<&MacLogEntry> = log
        .iter()
        .filter(|e| e.node == node && e.event.is_energy_relevant())
        .collect();
    let mut replayed = Vec::with_capacity(mine.len());
    let mut prefix = Vec::new();
    for e in &mine {
        prefix.push((*e).clone());
        if !matches!(e.event, MacEvent::LedgerInit(_)) {
            replayed.push(replay_oracle(&prefix, model)?.get(&node).copied().unwrap_or(0));
        }
    }
    for (i, (step, replay)) in ledger.steps().iter().zip(&replayed).enumerate() {
        if step.total_pj != *replay {
            return Ok(Some(Divergence {
                node,
                index: i,
                time: step.time,
                what: format!("{:?}", step.op),
                online_pj: step.total_pj,
                replay_pj: *replay,
            }));
        }
    }
    if ledger.steps().len() != replayed.len() {
        return Ok(Some(Divergence {
            node,
            index: ledger.steps().len().min(replayed.len()),
            time: SimTime::ZERO,
            what: format!("step count: online {}, log {}", ledger.steps().len(), replayed.len()),
            online_pj: ledger.accumulated(),
            replay_pj: replayed.last().copied().unwrap_or(0),
        }));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(us: u64) -> SimTime {
        SimTime::from_us(us)
    }

    #[test]
    fn default_powers() {
        let m = EnergyDfaModel::default();
        assert_eq!(m.power_uw(PowerState::Rx), 69_000);
        assert_eq!(m.power_uw(PowerState::SleepLpl), 4_500);
        assert_eq!(m.power_uw(PowerState::Tx), 135_000);
    }

    // 69 000 uW * 1 000 us = 69 000 000 pJ
    #[test]
    fn rx_for_one_millisecond() {
        let m = EnergyDfaModel::default();
        let mut l = EnergyLedger::new(PowerState::Idle, t(0));
        l.on_transition(&m, RadioCall::Listen, t(0)).unwrap();
        let total = l.on_transition(&m, RadioCall::LowPowerListen, t(1_000)).unwrap();
        assert_eq!(total, 69_000_000);
    }

    #[test]
    fn zero_duration_transition_energy() {
        let params = EnergyParams {
            transition_pj: [(RadioCall::Send, 40_000)].into_iter().collect(),
            ..EnergyParams::default()
        };
        let m = params.model("test").unwrap();
        let mut l = EnergyLedger::new(PowerState::Rx, t(500));
        assert_eq!(l.on_transition(&m, RadioCall::Send, t(500)).unwrap(), 40_000);
    }

    // 4 500 uW * 11 750 000 us = 52 875 000 000 pJ
    #[test]
    fn full_run_in_low_power_listening() {
        let m = EnergyDfaModel::default();
        let mut l = EnergyLedger::new(PowerState::SleepLpl, t(0));
        l.reset(t(0));
        assert_eq!(l.freeze(&m, t(11_750_000)), 52_875_000_000);
    }

    #[test]
    fn reset_freeze_semantics() {
        let m = EnergyDfaModel::default();
        let mut l = EnergyLedger::new(PowerState::Idle, t(0));
        l.reset(t(10));
        assert_eq!(l.freeze(&m, t(10)), 0);
        let mut l = EnergyLedger::new(PowerState::Idle, t(0));
        l.reset(t(0));
        // IDLE at 4 500 uW for 1 s
        assert_eq!(l.freeze(&m, t(1_000_000)), 4_500_000_000);
        assert_eq!(l.freeze(&m, t(2_000_000)), 4_500_000_000);
    }

    #[test]
    fn idle_second_at_three_milliwatts() {
        let params = EnergyParams {
            current_ua: Currents {
                idle: 1_000,
                ..Currents::default()
            },
            ..EnergyParams::default()
        };
        let m = params.model("test").unwrap();
        let mut l = EnergyLedger::new(PowerState::Idle, t(0));
        l.reset(t(0));
        assert_eq!(l.freeze(&m, t(1_000_000)), 3_000_000_000);
    }

    #[test]
    fn frozen_ledger_ignores_later_transitions() {
        let m = EnergyDfaModel::default();
        let mut l = EnergyLedger::new(PowerState::Rx, t(0));
        let v = l.freeze(&m, t(100));
        l.on_transition(&m, RadioCall::Send, t(200)).unwrap();
        assert_eq!(l.accumulated(), v);
        assert_eq!(l.state(), PowerState::Tx);
    }

    #[test]
    fn undefined_transition_is_an_error() {
        let m = EnergyDfaModel::default();
        let mut l = EnergyLedger::new(PowerState::Tx, t(0));
        assert!(l.on_transition(&m, RadioCall::Listen, t(1)).is_err());
    }

    #[test]
    fn duplicate_edges_rejected() {
        let params = EnergyParams {
            transition: vec![
                TransitionSpec {
                    from: PowerState::Rx,
                    call: RadioCall::Send,
                    to: PowerState::Tx,
                    energy_pj: None,
                },
                TransitionSpec {
                    from: PowerState::Rx,
                    call: RadioCall::Send,
                    to: PowerState::Idle,
                    energy_pj: None,
                },
            ],
            ..EnergyParams::default()
        };
        assert!(params.model("test").is_err());
    }

    #[test]
    fn inexact_power_rejected() {
        let params = EnergyParams {
            supply_mv: 3_300,
            current_ua: Currents {
                rx: 23_001,
                ..Currents::default()
            },
            ..EnergyParams::default()
        };
        assert!(params.model("test").is_err());
    }

    #[test]
    fn parameter_file_parses_and_rejects_unknown_keys() {
        let text = r#"
supply_mv = 3000
lpl_model = "alternating"

[current_ua]
rx = 23000
tx = 45000

[transition_pj]
send = 1200
tx-done = 300
"#;
        let p = EnergyParams::from_toml_str(text, "inline").unwrap();
        assert_eq!(p.lpl_model, LplModel::Alternating);
        assert_eq!(p.transition_pj[&RadioCall::Send], 1_200);
        let bad = "supply_mv = 3000\nvoltage = 3\n";
        let err = EnergyParams::from_toml_str(bad, "inline").unwrap_err().to_string();
        assert!(err.contains("voltage"), "{err}");
    }

    #[test]
    fn replay_of_empty_log() {
        assert!(replay_oracle(&[], &EnergyDfaModel::default()).unwrap().is_empty());
    }

    #[test]
    fn replay_single_step() {
        let m = EnergyDfaModel::default();
        let a = Address(4);
        let log = vec![
            MacLogEntry::new(t(0), a, MacEvent::LedgerInit(PowerState::Rx)),
            MacLogEntry::new(t(250), a, MacEvent::Radio(RadioCall::Send)),
        ];
        assert_eq!(replay_oracle(&log, &m).unwrap()[&a], 69_000 * 250);
    }
}
