//! Post-run checks computed from the exported artifacts only.

use std::collections::BTreeMap;

use crate::channel::{ChannelTrace, Sender, TransmissionRecord};
use crate::energy::{first_divergence, replay_oracle, EnergyDfaModel, EnergyLedger};
use crate::error::SimError;
use crate::frame::Address;
use crate::mac::MacPhase;
use crate::maclog::{MacEvent, MacLog};
use crate::time::{Duration, SimTime};
use crate::world::Delivery;

/// Interval during which `r` is visible to carrier sense.
fn sensed_interval(r: &TransmissionRecord, latency: Duration) -> Option<(SimTime, SimTime)> {
    let from = r.start() + latency;
    (from < r.end()).then_some((from, r.end()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbtViolation {
    pub node: Address,
    pub tx_start: SimTime,
    pub reason: String,
}

/// Check every node transmission against the listen-before-talk rule:
/// either the channel was idle from the request (or pre-backoff end) for
/// exactly `t_F` with no activity sensed since the request, or it was idle
/// for exactly `t_F + t_PS` right before the transmission.
pub fn lbt_violations(trace: &ChannelTrace, log: &MacLog, t_f: Duration) -> Vec<LbtViolation> {
    let latency = trace.cca_latency;
    let mut sensed: Vec<(SimTime, SimTime)> = trace
        .records
        .iter()
        .filter_map(|r| sensed_interval(r, latency))
        .collect();
    sensed.sort();
    let max_len = sensed.iter().map(|(s, e)| e.as_us() - s.as_us()).max().unwrap_or(0);
    // any sensed interval intersecting [a, b); the sender's own frame
    // starts at b and never counts
    let busy_in = |a: SimTime, b: SimTime| -> bool {
        let lo = SimTime::from_us(a.as_us().saturating_sub(max_len));
        let i = sensed.partition_point(|(s, _)| *s < lo);
        sensed[i..]
            .iter()
            .take_while(|(s, _)| *s < b)
            .any(|(s, e)| *e > a && *s < b)
    };

    // per node: times at which a fresh frame left the idle phase
    let mut requests: BTreeMap<Address, Vec<SimTime>> = BTreeMap::new();
    for e in log.entries() {
        if let MacEvent::Phase { from: MacPhase::Idle, .. } = e.event {
            requests.entry(e.node).or_default().push(e.time);
        }
    }

    let mut by_tx: BTreeMap<(Address, SimTime), _> = BTreeMap::new();
    for d in &trace.cca {
        by_tx.insert((d.node, d.tx_at()), d);
    }

    let mut out = Vec::new();
    for r in &trace.records {
        let Sender::Node(node) = r.sender else { continue };
        let start = r.start();
        let violation = |reason: String| LbtViolation {
            node,
            tx_start: start,
            reason,
        };
        let Some(d) = by_tx.get(&(node, start)) else {
            out.push(violation("no clear-channel decision for this transmission".into()));
            continue;
        };
        let expected = if d.shortcut { t_f } else { t_f + d.t_ps };
        if d.window != expected {
            out.push(violation(format!("window {} but rule requires {expected}", d.window)));
            continue;
        }
        let from = if d.shortcut {
            let reqs = requests.get(&node).map(Vec::as_slice).unwrap_or(&[]);
            let k = reqs.partition_point(|t| *t <= d.window_start);
            match k.checked_sub(1).map(|k| reqs[k]) {
                Some(t) => t,
                None => {
                    out.push(violation("shortcut without a request".into()));
                    continue;
                }
            }
        } else {
            d.window_start
        };
        if busy_in(from, start) {
            out.push(violation(format!(
                "activity sensed in [{from}, {start}) ({})",
                if d.shortcut { "fixed window" } else { "full window" }
            )));
        }
    }
    out
}

/// Exhaustive overlap scan: `collided` must equal "overlaps another record".
pub fn collision_mismatches(trace: &ChannelTrace) -> Vec<usize> {
    let rs = &trace.records;
    let mut bad = Vec::new();
    for (i, a) in rs.iter().enumerate() {
        let overlaps = rs.iter().enumerate().any(|(j, b)| i != j && a.overlaps(b));
        if overlaps != a.collided {
            bad.push(i);
        }
    }
    bad
}

/// Every delivery refers to a non-collided frame addressed to the receiver.
pub fn capture_violations(trace: &ChannelTrace, deliveries: &[Delivery]) -> Vec<Delivery> {
    deliveries
        .iter()
        .filter(|d| {
            let r = &trace.records[d.record.0];
            r.collided || r.frame.as_ref().is_none_or(|f| !f.accepted_by(d.receiver)) || d.at != r.end()
        })
        .copied()
        .collect()
}

/// Online ledgers against the replay oracle, exact equality.
pub fn check_energy(
    log: &MacLog,
    ledgers: &[EnergyLedger],
    addresses: &[Address],
    model: &EnergyDfaModel,
) -> Result<(), SimError> {
    let replay = replay_oracle(log.entries(), model)?;
    for (ledger, &addr) in ledgers.iter().zip(addresses) {
        let r = replay.get(&addr).copied().unwrap_or(0);
        if r != ledger.accumulated() {
            let detail = first_divergence(addr, log.entries(), ledger, model)?
                .map(|d| d.to_string())
                .unwrap_or_else(|| "no step-level divergence found".into());
            return Err(SimError::Invariant(format!(
                "energy ledger of node {addr} is {} pJ but replay gives {r} pJ; {detail}",
                ledger.accumulated()
            )));
        }
    }
    Ok(())
}
