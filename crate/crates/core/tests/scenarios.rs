use std::path::Path;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use lbtsim::channel::Sender;
use lbtsim::experiment::run_experiment;
use lbtsim::frame::{Address, Frame, FrameKind, Preamble};
use lbtsim::rng::RngStream;
use lbtsim::scenario::{JamSpec, Scenario};
use lbtsim::script::{ScriptApp, ScriptedSend};
use lbtsim::warehouse::{Collection, Delivery, UnicastJob};
use lbtsim::world::{NodeSpec, RadioPolicy, Simulation, WorldConfig};
use lbtsim::{Duration, SimTime};

fn from_ap(r: &lbtsim::channel::TransmissionRecord) -> bool {
    r.kind() == FrameKind::Unicast && r.sender == Sender::Node(Address(0))
}

fn loaded(sc: Scenario) -> lbtsim::scenario::LoadedScenario {
    sc.resolve(Path::new("."), "test").unwrap()
}

/// A small world with one unicast to node 5 at 1.6 s, after the replies to
/// the second poll have died down.
fn unicast_scenario(jam: Vec<JamSpec>) -> Scenario {
    Scenario {
        nodes: 8,
        n_active: Some(1),
        jam,
        unicast: vec![UnicastJob {
            at_ms: 1_600,
            dst: 5,
            payload_bytes: 6,
        }],
        ..Scenario::default()
    }
}

#[test]
fn unicast_on_clean_channel_needs_one_attempt() {
    let out = run_experiment(&loaded(unicast_scenario(vec![])), 1, 4).unwrap();
    assert_eq!(out.stats.unicasts.len(), 1);
    let u = out.stats.unicasts[0];
    assert_eq!(u.delivery, Delivery::Success);
    assert_eq!(u.attempts, 1);
    assert_eq!(u.dst, Address(5));
}

#[test]
fn unicast_recovers_on_first_retry() {
    // The first attempt airs at 1.605 s (t_F after the request on an idle
    // channel); a short burst during its preamble destroys it.
    let jam = vec![JamSpec {
        start_us: 1_606_000,
        end_us: 1_607_000,
    }];
    let out = run_experiment(&loaded(unicast_scenario(jam)), 1, 4).unwrap();
    let first = out
        .trace
        .records
        .iter()
        .find(|r| from_ap(r))
        .unwrap();
    assert_eq!(first.start(), SimTime::from_us(1_605_000));
    assert!(first.collided);
    let u = out.stats.unicasts[0];
    assert_eq!(u.delivery, Delivery::Success);
    assert_eq!(u.attempts, 2);
    // the retry reuses the sequence number
    let seqs: Vec<u8> = out
        .trace
        .records
        .iter()
        .filter(|r| from_ap(r))
        .map(|r| r.frame.as_ref().unwrap().seq)
        .collect();
    assert_eq!(seqs, vec![u.seq, u.seq]);
}

#[test]
fn unicast_gives_up_after_all_retries() {
    // Repeating 3 ms bursts with 9 ms gaps: an access point frame can only
    // start 5 ms or more into a gap and is always cut by the next burst.
    let jam = (0..70)
        .map(|k| {
            let start = 1_606_000 + k * 12_000;
            JamSpec {
                start_us: start,
                end_us: start + 3_000,
            }
        })
        .collect();
    let out = run_experiment(&loaded(unicast_scenario(jam)), 1, 4).unwrap();
    let u = out.stats.unicasts[0];
    assert_eq!(u.delivery, Delivery::Failure);
    assert_eq!(u.attempts, 1 + lbtsim::warehouse::WarehouseParams::default().unicast_retries);
    let tries: Vec<_> = out
        .trace
        .records
        .iter()
        .filter(|r| from_ap(r))
        .collect();
    assert_eq!(tries.len() as u32, u.attempts);
    assert!(tries.iter().all(|r| r.collided));
}

#[test]
fn lpl_node_always_catches_an_extended_preamble() {
    // A duty-cycled listener wakes every 4.9 ms; any frame with the longer
    // preamble must be picked up whatever the sniff phase.
    for start_us in (0..4_900u64).step_by(97) {
        let frame = Frame::new(FrameKind::Unicast, Address(0), Address(1), 0, vec![1, 2], Preamble::Extended).unwrap();
        let cfg = WorldConfig {
            seed: start_us,
            radio: Default::default(),
            mac: Default::default(),
            energy: Default::default(),
            lpl_model: Default::default(),
            nodes: vec![
                NodeSpec {
                    address: Address(0),
                    radio: RadioPolicy::AlwaysOn,
                    rx_processing: Duration::ZERO,
                },
                NodeSpec {
                    address: Address(1),
                    radio: RadioPolicy::LowPowerListen,
                    rx_processing: Duration::ZERO,
                },
            ],
            jams: vec![],
        };
        let send = ScriptedSend {
            at: SimTime::from_us(20_000 + start_us),
            node: 0,
            frame,
            broadcast_reply: false,
        };
        let mut sim = Simulation::new(cfg, ScriptApp::new(vec![send])).unwrap();
        sim.run_until(SimTime::from_ms(100)).unwrap();
        let out = sim.finish().unwrap();
        assert_eq!(out.app.received.len(), 1, "missed frame sent at offset {start_us}");
        assert_eq!(out.app.received[0].node, 1);
    }
}

#[test]
fn single_replier_is_never_disturbed() {
    for seed in 0..20 {
        let out = run_experiment(&loaded(Scenario::default()), 1, seed).unwrap();
        assert_eq!(out.row.throughput, Some(1.0));
        assert_eq!(out.row.n_rx, 10);
        assert_eq!(out.row.reply_collisions, 0);
    }
}

#[test]
fn node_counters_follow_the_start_stop_framing() {
    let out = run_experiment(&loaded(Scenario::default()), 3, 7).unwrap();
    for n in &out.stats.nodes {
        assert_eq!(n.polls_received, 10);
        assert_eq!(n.rx_raw, 12, "node {}", n.address);
        assert_eq!(n.rx_framed, 11, "node {}", n.address);
        assert!(n.frozen);
        assert_eq!(n.n_tx, if n.active { 10 } else { 0 });
    }
}

#[test]
fn in_band_collection_reports_every_node() {
    let mut sc = Scenario {
        nodes: 6,
        ..Scenario::default()
    };
    sc.app.collection = Collection::InBand;
    let out = run_experiment(&loaded(sc), 6, 2).unwrap();
    assert_eq!(out.stats.collected_in_band, 6);
}

#[test]
fn same_seed_same_trace() {
    let l = loaded(Scenario::default());
    let a = run_experiment(&l, 9, 11).unwrap();
    let b = run_experiment(&l, 9, 11).unwrap();
    assert_eq!(a.trace_hash, b.trace_hash);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.row, b.row);
    let c = run_experiment(&l, 9, 12).unwrap();
    assert_ne!(a.trace_hash, c.trace_hash);
}

#[test]
fn jammer_blocks_all_access() {
    let sc = Scenario {
        nodes: 4,
        jam: vec![JamSpec {
            start_us: 400_000,
            end_us: 700_000,
        }],
        ..Scenario::default()
    };
    let out = run_experiment(&loaded(sc), 4, 1).unwrap();
    for r in out.trace.records.iter().filter(|r| matches!(r.sender, Sender::Node(_))) {
        assert!(r.end() <= SimTime::from_us(400_000) || r.start() >= SimTime::from_us(705_000));
    }
}

#[test]
fn uniform_draws_pass_chi_square() {
    const DRAWS: usize = 1_000_000;
    const BINS: usize = 50;
    let mut s = RngStream::new(2024, 1);
    let hi = Duration::from_us(4_999);
    let mut counts = [0u64; BINS];
    for _ in 0..DRAWS {
        let v = s.uniform_us(Duration::ZERO, hi).as_us() as usize;
        counts[v * BINS / 5_000] += 1;
    }
    let expect = DRAWS as f64 / BINS as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let p = 1.0 - ChiSquared::new((BINS - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat:.1}, p = {p:.4}");
}
