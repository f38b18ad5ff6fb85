//! Warehouse inventory application: the access point polls for a product,
//! nodes holding it reply, and a start/stop broadcast pair brackets the
//! measured interval.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::EventHandle;
use crate::error::SimError;
use crate::frame::{Address, Frame, FrameKind, Preamble};
use crate::time::{Duration, SimTime};
use crate::world::{Application, Core};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub product: u16,
    pub quantity: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collection {
    /// Statistics are read directly from the nodes after the run.
    #[default]
    OutOfBand,
    /// The access point asks every active node for its counters with
    /// acknowledged unicasts after the stop broadcast.
    InBand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarehouseParams {
    pub product: u16,
    pub quantity: u16,
    pub polls: u32,
    pub first_poll_ms: u64,
    pub poll_interval_ms: u64,
    /// Start to stop broadcast.
    pub run_ms: u64,
    /// Simulated time after the stop broadcast is requested.
    pub tail_ms: u64,
    pub poll_payload_bytes: usize,
    pub reply_payload_bytes: usize,
    pub stats_payload_bytes: usize,
    pub reply_preamble: Preamble,
    /// Receiver hold-off at the access point after each good frame. The
    /// default is a calibration value: with it the mean throughput levels
    /// off near one half once a dozen or more nodes reply.
    pub ap_rx_processing_us: u64,
    pub unicast_timeout_ms: u64,
    pub unicast_retries: u32,
    pub collection: Collection,
}

impl Default for WarehouseParams {
    fn default() -> Self {
        WarehouseParams {
            product: 7,
            quantity: 10,
            polls: 10,
            first_poll_ms: 500,
            poll_interval_ms: 1_000,
            run_ms: 11_750,
            tail_ms: 250,
            poll_payload_bytes: 2,
            reply_payload_bytes: 4,
            stats_payload_bytes: 12,
            reply_preamble: Preamble::Normal,
            ap_rx_processing_us: 7_200,
            unicast_timeout_ms: 100,
            unicast_retries: 3,
            collection: Collection::OutOfBand,
        }
    }
}

impl WarehouseParams {
    pub fn validate(&self, source: &str) -> Result<(), SimError> {
        let last_poll = self.first_poll_ms + self.poll_interval_ms * u64::from(self.polls.saturating_sub(1));
        if self.polls > 0 && last_poll >= self.run_ms {
            return Err(SimError::config(
                source,
                "app.run_ms",
                format!("last poll at {last_poll} ms does not fit in a {} ms run", self.run_ms),
            ));
        }
        if self.poll_payload_bytes < 2 || self.reply_payload_bytes < 4 || self.stats_payload_bytes < 12 {
            return Err(SimError::config(
                source,
                "app",
                "payloads need at least 2 (poll), 4 (reply) and 12 (stats) bytes",
            ));
        }
        for (field, v) in [
            ("app.poll_payload_bytes", self.poll_payload_bytes),
            ("app.reply_payload_bytes", self.reply_payload_bytes),
            ("app.stats_payload_bytes", self.stats_payload_bytes),
        ] {
            if v > crate::frame::MAX_PAYLOAD {
                return Err(SimError::config(source, field, format!("{v} exceeds {}", crate::frame::MAX_PAYLOAD)));
            }
        }
        Ok(())
    }

    pub fn stop_at(&self) -> SimTime {
        SimTime::from_ms(self.run_ms)
    }

    pub fn end_at(&self) -> SimTime {
        SimTime::from_ms(self.run_ms + self.tail_ms)
    }
}

/// A scripted acknowledged unicast from the access point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnicastJob {
    pub at_ms: u64,
    pub dst: u8,
    #[serde(default)]
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Scripted,
    Stats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    pub seq: u8,
    pub dst: Address,
    pub retries_left: u32,
    pub timeout: Duration,
    pub attempts: u32,
    payload: Vec<u8>,
    purpose: Purpose,
    timer: Option<EventHandle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Delivery {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnicastOutcome {
    pub dst: Address,
    pub seq: u8,
    pub attempts: u32,
    pub delivery: Delivery,
}

/// Counters of one node for one run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct NodeStats {
    pub address: Address,
    pub active: bool,
    /// Reply frames put on air inside the measured interval.
    pub n_tx: u32,
    pub polls_received: u32,
    /// Every frame accepted by the node, start and stop included.
    pub rx_raw: u32,
    /// Frames accepted after the start broadcast reset the counters,
    /// up to and including the stop broadcast.
    pub rx_framed: u32,
    pub energy_pj: u64,
    pub frozen: bool,
}

impl NodeStats {
    pub fn energy_mj(&self) -> f64 {
        self.energy_pj as f64 / 1e9
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunStats {
    pub seed: u64,
    pub n_active: usize,
    pub active: Vec<Address>,
    /// Node statistics, access point excluded, in address order.
    pub nodes: Vec<NodeStats>,
    /// Replies received at the access point inside the measured interval.
    pub n_rx: u32,
    pub polls_sent: u32,
    pub unicasts: Vec<UnicastOutcome>,
    /// Node statistics delivered over the air (in-band collection only).
    pub collected_in_band: usize,
    pub suppliers: Vec<Address>,
}

impl RunStats {
    pub fn sum_n_tx(&self) -> u64 {
        self.nodes.iter().filter(|n| n.active).map(|n| u64::from(n.n_tx)).sum()
    }

    pub fn throughput(&self) -> Option<f64> {
        throughput(u64::from(self.n_rx), self.sum_n_tx())
    }

    pub fn active_energies_mj(&self) -> Vec<f64> {
        self.nodes.iter().filter(|n| n.active).map(NodeStats::energy_mj).collect()
    }
}

/// Successful replies over reply transmissions; `None` when nothing was
/// sent.
pub fn throughput(n_rx: u64, sum_n_tx: u64) -> Option<f64> {
    (sum_n_tx > 0).then(|| n_rx as f64 / sum_n_tx as f64)
}

/// Greedy pick of repliers until `needed` is covered: largest quantity
/// first, lower address on ties.
pub fn select_suppliers(replies: &[(Address, u16)], needed: u32) -> Vec<Address> {
    let mut sorted: Vec<_> = replies.to_vec();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.dedup_by_key(|r| r.0);
    let mut got = 0u32;
    let mut picked = Vec::new();
    for (addr, q) in sorted {
        if got >= needed {
            break;
        }
        got += u32::from(q);
        picked.push(addr);
    }
    picked
}

const TOKEN_START: u64 = 0;
const TOKEN_STOP: u64 = 1;
const TOKEN_TIMEOUT: u64 = 2;
const TOKEN_POLL: u64 = 1 << 32;
const TOKEN_JOB: u64 = 2 << 32;

#[derive(Debug, Clone, Default)]
struct NodeState {
    inventory: Option<Inventory>,
    running: bool,
    stats: NodeStats,
}

#[derive(Debug, Clone)]
pub struct WarehouseApp {
    params: WarehouseParams,
    ap: usize,
    seed: u64,
    nodes: Vec<NodeState>,
    ap_running: bool,
    n_rx: u32,
    polls_sent: u32,
    replies: Vec<(Address, u16)>,
    next_seq: u8,
    pending: Option<PendingRequest>,
    unicast_queue: VecDeque<(Address, Vec<u8>, Purpose)>,
    jobs: Vec<UnicastJob>,
    outcomes: Vec<UnicastOutcome>,
    collected: Vec<(Address, u16, u16, u64)>,
}

fn le_u16(p: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([p[at], p[at + 1]])
}

impl WarehouseApp {
    /// `inventories[i]` belongs to world node `i`; node `ap` is the
    /// access point.
    pub fn new(params: WarehouseParams, ap: usize, seed: u64, inventories: Vec<Option<Inventory>>, jobs: Vec<UnicastJob>) -> Self {
        let nodes = inventories
            .into_iter()
            .map(|inventory| NodeState {
                inventory,
                ..NodeState::default()
            })
            .collect();
        WarehouseApp {
            params,
            ap,
            seed,
            nodes,
            ap_running: false,
            n_rx: 0,
            polls_sent: 0,
            replies: Vec::new(),
            next_seq: 0,
            pending: None,
            unicast_queue: VecDeque::new(),
            jobs,
            outcomes: Vec::new(),
            collected: Vec::new(),
        }
    }

    pub fn params(&self) -> &WarehouseParams {
        &self.params
    }

    fn is_active(&self, i: usize) -> bool {
        self.nodes[i]
            .inventory
            .is_some_and(|inv| inv.product == self.params.product)
    }

    #[allow(clippy::too_many_arguments)]
    fn frame(&self, core: &Core, kind: FrameKind, src: usize, dst: Address, seq: u8, payload: Vec<u8>, preamble: Preamble) -> Result<Frame, SimError> {
        Frame::new(kind, core.address(src), dst, seq, payload, preamble)
            .map_err(|e| SimError::Invariant(e.to_string()))
    }

    fn ap_broadcast(&mut self, core: &mut Core, kind: FrameKind, payload: Vec<u8>) -> Result<(), SimError> {
        let seq = self.take_seq();
        let f = self.frame(core, kind, self.ap, Address::BROADCAST, seq, payload, Preamble::Extended)?;
        core.send(self.ap, f, false)
    }

    fn take_seq(&mut self) -> u8 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    fn queue_unicast(&mut self, core: &mut Core, dst: Address, payload: Vec<u8>, purpose: Purpose) -> Result<(), SimError> {
        self.unicast_queue.push_back((dst, payload, purpose));
        self.next_unicast(core)
    }

    fn next_unicast(&mut self, core: &mut Core) -> Result<(), SimError> {
        if self.pending.is_some() {
            return Ok(());
        }
        let Some((dst, payload, purpose)) = self.unicast_queue.pop_front() else {
            return Ok(());
        };
        let seq = self.take_seq();
        self.pending = Some(PendingRequest {
            seq,
            dst,
            retries_left: self.params.unicast_retries,
            timeout: Duration::from_ms(self.params.unicast_timeout_ms),
            attempts: 0,
            payload,
            purpose,
            timer: None,
        });
        self.send_attempt(core)
    }

    fn send_attempt(&mut self, core: &mut Core) -> Result<(), SimError> {
        let p = self.pending.as_mut().expect("attempt without pending request");
        p.attempts += 1;
        let (dst, seq, payload) = (p.dst, p.seq, p.payload.clone());
        let f = self.frame(core, FrameKind::Unicast, self.ap, dst, seq, payload, Preamble::Extended)?;
        core.send(self.ap, f, false)
    }

    fn finish_unicast(&mut self, core: &mut Core, delivery: Delivery) -> Result<(), SimError> {
        let p = self.pending.take().expect("finish without pending request");
        if let Some(h) = p.timer {
            core.cancel_timer(h);
        }
        self.outcomes.push(UnicastOutcome {
            dst: p.dst,
            seq: p.seq,
            attempts: p.attempts,
            delivery,
        });
        self.next_unicast(core)
    }

    fn ap_receive(&mut self, core: &mut Core, frame: &Frame) -> Result<(), SimError> {
        match frame.kind {
            FrameKind::Reply if self.ap_running => {
                self.n_rx += 1;
                self.replies.push((frame.src, le_u16(&frame.payload, 2)));
            }
            FrameKind::Unicast => {
                let Some(p) = &self.pending else { return Ok(()) };
                if p.dst != frame.src || p.seq != frame.seq {
                    return Ok(());
                }
                if p.purpose == Purpose::Stats {
                    let pl = &frame.payload;
                    let energy = u64::from_le_bytes(pl[4..12].try_into().expect("12 byte stats payload"));
                    self.collected.push((frame.src, le_u16(pl, 0), le_u16(pl, 2), energy));
                }
                self.finish_unicast(core, Delivery::Success)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn node_receive(&mut self, core: &mut Core, i: usize, frame: &Frame) -> Result<(), SimError> {
        self.nodes[i].stats.rx_raw += 1;
        if self.nodes[i].running {
            self.nodes[i].stats.rx_framed += 1;
        }
        match frame.kind {
            FrameKind::Start => {
                core.reset_ledger(i)?;
                let st = &mut self.nodes[i];
                st.running = true;
                st.stats = NodeStats {
                    rx_raw: st.stats.rx_raw,
                    ..NodeStats::default()
                };
            }
            FrameKind::Stop => {
                if self.nodes[i].running {
                    let e = core.freeze_ledger(i)?;
                    let st = &mut self.nodes[i];
                    st.running = false;
                    st.stats.frozen = true;
                    st.stats.energy_pj = e;
                }
            }
            FrameKind::Poll => {
                if !self.nodes[i].running {
                    return Ok(());
                }
                self.nodes[i].stats.polls_received += 1;
                let product = le_u16(&frame.payload, 0);
                let Some(inv) = self.nodes[i].inventory else { return Ok(()) };
                if inv.product != product {
                    return Ok(());
                }
                let mut payload = vec![0; self.params.reply_payload_bytes];
                payload[0..2].copy_from_slice(&inv.product.to_le_bytes());
                payload[2..4].copy_from_slice(&inv.quantity.to_le_bytes());
                let f = self.frame(core, FrameKind::Reply, i, frame.src, frame.seq, payload, self.params.reply_preamble)?;
                core.send(i, f, true)?;
            }
            FrameKind::Unicast => {
                // echo with the same sequence number; stats requests are
                // answered with the frozen counters
                let mut payload = frame.payload.clone();
                if payload.len() == self.params.stats_payload_bytes && payload.first() == Some(&0x5a) {
                    let s = &self.nodes[i].stats;
                    payload = vec![0; self.params.stats_payload_bytes];
                    payload[0..2].copy_from_slice(&(s.n_tx as u16).to_le_bytes());
                    payload[2..4].copy_from_slice(&(s.rx_framed as u16).to_le_bytes());
                    payload[4..12].copy_from_slice(&s.energy_pj.to_le_bytes());
                }
                let f = self.frame(core, FrameKind::Unicast, i, frame.src, frame.seq, payload, self.params.reply_preamble)?;
                core.send(i, f, false)?;
            }
            FrameKind::Reply | FrameKind::Jam => {}
        }
        Ok(())
    }

    /// Collect the run's statistics. `ledger_pj[i]` is the final ledger
    /// value of world node `i`, used for nodes that never saw the stop.
    pub fn into_stats(self, addresses: &[Address], ledger_pj: &[u64]) -> RunStats {
        let mut nodes = Vec::new();
        let mut active = Vec::new();
        for (i, st) in self.nodes.iter().enumerate() {
            if i == self.ap {
                continue;
            }
            let mut s = st.stats.clone();
            s.address = addresses[i];
            s.active = self.is_active(i);
            if !s.frozen {
                s.energy_pj = ledger_pj[i];
            }
            if s.active {
                active.push(s.address);
            }
            nodes.push(s);
        }
        nodes.sort_by_key(|n| n.address);
        active.sort();
        let suppliers = select_suppliers(&self.replies, u32::from(self.params.quantity) * 2);
        RunStats {
            seed: self.seed,
            n_active: active.len(),
            active,
            nodes,
            n_rx: self.n_rx,
            polls_sent: self.polls_sent,
            unicasts: self.outcomes,
            collected_in_band: self.collected.len(),
            suppliers,
        }
    }

    /// Node statistics delivered in-band: (address, n_tx, rx_framed, energy_pj).
    pub fn collected(&self) -> &[(Address, u16, u16, u64)] {
        &self.collected
    }
}

impl Application for WarehouseApp {
    fn init(&mut self, core: &mut Core) -> Result<(), SimError> {
        let ap = self.ap;
        core.set_timer(ap, SimTime::ZERO, TOKEN_START)?;
        for k in 0..self.params.polls {
            let at = SimTime::from_ms(self.params.first_poll_ms + u64::from(k) * self.params.poll_interval_ms);
            core.set_timer(ap, at, TOKEN_POLL | u64::from(k))?;
        }
        core.set_timer(ap, self.params.stop_at(), TOKEN_STOP)?;
        for (k, job) in self.jobs.iter().enumerate() {
            core.set_timer(ap, SimTime::from_ms(job.at_ms), TOKEN_JOB | k as u64)?;
        }
        Ok(())
    }

    fn on_timer(&mut self, core: &mut Core, _node: usize, token: u64) -> Result<(), SimError> {
        match token {
            TOKEN_START => self.ap_broadcast(core, FrameKind::Start, Vec::new()),
            TOKEN_STOP => self.ap_broadcast(core, FrameKind::Stop, Vec::new()),
            TOKEN_TIMEOUT => {
                let Some(p) = self.pending.as_mut() else { return Ok(()) };
                p.timer = None;
                if p.retries_left > 0 {
                    p.retries_left -= 1;
                    self.send_attempt(core)
                } else {
                    self.finish_unicast(core, Delivery::Failure)
                }
            }
            t if t & TOKEN_JOB == TOKEN_JOB => {
                let job = self.jobs[(t & 0xffff_ffff) as usize].clone();
                let dst = Address(job.dst);
                if core.index_of(dst).is_none() {
                    return Err(SimError::config("scenario", "unicast.dst", format!("unknown node {dst}")));
                }
                self.queue_unicast(core, dst, vec![0; job.payload_bytes], Purpose::Scripted)
            }
            t if t & TOKEN_POLL == TOKEN_POLL => {
                let mut payload = vec![0; self.params.poll_payload_bytes];
                payload[0..2].copy_from_slice(&self.params.product.to_le_bytes());
                self.polls_sent += 1;
                self.ap_broadcast(core, FrameKind::Poll, payload)
            }
            _ => Ok(()),
        }
    }

    fn on_receive(&mut self, core: &mut Core, node: usize, frame: &Frame) -> Result<(), SimError> {
        if node == self.ap {
            self.ap_receive(core, frame)
        } else {
            self.node_receive(core, node, frame)
        }
    }

    fn on_tx_start(&mut self, _core: &mut Core, node: usize, frame: &Frame) -> Result<(), SimError> {
        if node == self.ap {
            if frame.kind == FrameKind::Stop {
                self.ap_running = false;
            }
        } else if frame.kind == FrameKind::Reply && self.nodes[node].running {
            self.nodes[node].stats.n_tx += 1;
        }
        Ok(())
    }

    fn on_tx_end(&mut self, core: &mut Core, node: usize, frame: &Frame, _collided: bool) -> Result<(), SimError> {
        if node != self.ap {
            return Ok(());
        }
        match frame.kind {
            FrameKind::Start => self.ap_running = true,
            FrameKind::Stop if self.params.collection == Collection::InBand => {
                let targets: Vec<Address> = (0..self.nodes.len())
                    .filter(|&i| i != self.ap && self.is_active(i))
                    .map(|i| core.address(i))
                    .collect();
                for dst in targets {
                    let mut payload = vec![0; self.params.stats_payload_bytes];
                    payload[0] = 0x5a;
                    self.queue_unicast(core, dst, payload, Purpose::Stats)?;
                }
            }
            FrameKind::Unicast => {
                if let Some(p) = self.pending.as_mut() {
                    if p.seq == frame.seq && p.dst == frame.dst {
                        let at = core.now() + p.timeout;
                        p.timer = Some(core.set_timer(self.ap, at, TOKEN_TIMEOUT)?);
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_formula() {
        assert_eq!(throughput(50, 100), Some(0.5));
        assert_eq!(throughput(7, 7), Some(1.0));
        assert_eq!(throughput(0, 0), None);
    }

    #[test]
    fn greedy_selection() {
        let r = [(Address(3), 5), (Address(1), 8), (Address(2), 8), (Address(4), 1)];
        assert_eq!(select_suppliers(&r, 10), vec![Address(1), Address(2)]);
        assert_eq!(select_suppliers(&r, 0), Vec::<Address>::new());
        assert_eq!(select_suppliers(&r, 100).len(), 4);
    }

    #[test]
    fn default_schedule_fits() {
        let p = WarehouseParams::default();
        p.validate("defaults").unwrap();
        let bad = WarehouseParams {
            run_ms: 9_000,
            ..p
        };
        assert!(bad.validate("test").is_err());
    }
}
