//! Pure-ALOHA baseline: many senders with Poisson traffic and no carrier
//! sense, measured as the fraction of time carrying intact frames.

use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::channel::Sender;
use crate::energy::{EnergyDfaModel, LplModel};
use crate::error::SimError;
use crate::frame::{Address, Frame, FrameKind, Preamble};
use crate::mac::{MacMode, MacParams};
use crate::radio::RadioParams;
use crate::time::{Duration, SimTime};
use crate::world::{Application, Core, NodeSpec, RadioPolicy, Simulation, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlohaParams {
    pub senders: usize,
    pub payload_bytes: usize,
    pub horizon_ms: u64,
}

impl Default for AlohaParams {
    fn default() -> Self {
        AlohaParams {
            senders: 100,
            payload_bytes: 20,
            horizon_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlohaPoint {
    /// Requested load in frames per frame time.
    pub offered_load: f64,
    /// Load actually put on air, from the trace.
    pub attempted_load: f64,
    pub utilization: f64,
    pub frames: usize,
    pub intact: usize,
    /// Arrivals dropped because the sender's queue was full.
    pub dropped: usize,
}

/// Analytic pure-ALOHA throughput `G e^{-2G}`.
pub fn analytic_utilization(g: f64) -> f64 {
    g * (-2.0 * g).exp()
}

struct Poisson {
    exp: Exp<f64>,
    horizon: SimTime,
    frame: Frame,
    dropped: usize,
}

impl Poisson {
    fn schedule_next(&mut self, core: &mut Core, node: usize) -> Result<(), SimError> {
        let gap = self.exp.sample(core.scenario_rng().rng());
        let at = core.now() + Duration::from_us(gap.round() as u64);
        if at < self.horizon {
            core.set_timer(node, at, 0)?;
        }
        Ok(())
    }
}

impl Application for Poisson {
    fn init(&mut self, core: &mut Core) -> Result<(), SimError> {
        for node in 1..core.node_count() {
            self.schedule_next(core, node)?;
        }
        Ok(())
    }

    fn on_timer(&mut self, core: &mut Core, node: usize, _token: u64) -> Result<(), SimError> {
        if core.can_send(node) {
            let mut f = self.frame.clone();
            f.src = core.address(node);
            core.send(node, f, false)?;
        } else {
            self.dropped += 1;
        }
        self.schedule_next(core, node)
    }

    fn on_receive(&mut self, _core: &mut Core, _node: usize, _frame: &Frame) -> Result<(), SimError> {
        Ok(())
    }
}

/// One offered-load point: `offered_load` frames per frame time spread
/// evenly over the senders.
pub fn run_aloha(p: &AlohaParams, offered_load: f64, seed: u64) -> Result<AlohaPoint, SimError> {
    if p.senders == 0 || p.senders > 254 || offered_load <= 0.0 {
        return Err(SimError::config("aloha", "senders/load", "need 1..=254 senders and a positive load"));
    }
    let radio = RadioParams::default();
    let frame = Frame::new(
        FrameKind::Unicast,
        Address(1),
        Address(0),
        0,
        vec![0; p.payload_bytes],
        Preamble::Normal,
    )
    .map_err(|e| SimError::config("aloha", "payload_bytes", e.to_string()))?;
    let airtime = radio.airtime(&frame).as_us() as f64;
    let per_node_rate = offered_load / (p.senders as f64 * airtime);
    let mut nodes = vec![NodeSpec {
        address: Address(0),
        radio: RadioPolicy::AlwaysOn,
        rx_processing: Duration::ZERO,
    }];
    for a in 1..=p.senders {
        nodes.push(NodeSpec {
            address: Address(a as u8),
            radio: RadioPolicy::LowPowerListen,
            rx_processing: Duration::ZERO,
        });
    }
    let cfg = WorldConfig {
        seed,
        radio,
        mac: MacParams {
            mode: MacMode::Aloha,
            ..MacParams::default()
        },
        energy: EnergyDfaModel::default(),
        lpl_model: LplModel::Averaged,
        nodes,
        jams: Vec::new(),
    };
    let horizon = SimTime::from_ms(p.horizon_ms);
    let app = Poisson {
        exp: Exp::new(per_node_rate).map_err(|e| SimError::config("aloha", "load", e.to_string()))?,
        horizon,
        frame,
        dropped: 0,
    };
    let mut sim = Simulation::new(cfg, app)?;
    // let the last frames finish
    sim.run_until(horizon + Duration::from_ms(100))?;
    let out = sim.finish()?;
    let frames: Vec<_> = out
        .trace
        .records
        .iter()
        .filter(|r| matches!(r.sender, Sender::Node(_)))
        .collect();
    let intact = frames.iter().filter(|r| !r.collided).count();
    let span = horizon.as_us() as f64;
    let busy_ok: u64 = frames.iter().filter(|r| !r.collided).map(|r| (r.end() - r.start()).as_us()).sum();
    let busy_all: u64 = frames.iter().map(|r| (r.end() - r.start()).as_us()).sum();
    Ok(AlohaPoint {
        offered_load,
        attempted_load: busy_all as f64 / span,
        utilization: busy_ok as f64 / span,
        frames: frames.len(),
        intact,
        dropped: out.app.dropped,
    })
}

/// Sweep offered loads and return every point.
pub fn sweep_aloha(p: &AlohaParams, loads: &[f64], seed: u64) -> Result<Vec<AlohaPoint>, SimError> {
    loads.iter().map(|&g| run_aloha(p, g, seed)).collect()
}

/// Default load grid around the analytic optimum `G = 0.5`.
pub fn default_loads() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0, 1.25, 1.5]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_optimum() {
        let peak = analytic_utilization(0.5);
        assert!((peak - 1.0 / (2.0 * std::f64::consts::E)).abs() < 1e-12);
        assert!((peak - 0.184).abs() < 0.001);
    }

    #[test]
    fn single_sender_has_no_collisions() {
        let p = AlohaParams {
            senders: 1,
            horizon_ms: 20_000,
            ..AlohaParams::default()
        };
        let pt = run_aloha(&p, 0.05, 3).unwrap();
        assert_eq!(pt.intact, pt.frames);
        assert!((pt.utilization - pt.attempted_load).abs() < 1e-12);
    }
}
