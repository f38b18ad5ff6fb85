use proptest::prelude::*;

use lbtsim::channel::{Channel, Sender};
use lbtsim::energy::{EnergyDfaModel, EnergyLedger, PowerState, RadioCall};
use lbtsim::engine::Scheduler;
use lbtsim::experiment::run_experiment;
use lbtsim::frame::Address;
use lbtsim::radio::FrameTiming;
use lbtsim::scenario::Scenario;
use lbtsim::warehouse::throughput;
use lbtsim::{Duration, SimTime};

proptest! {
    #[test]
    fn scheduler_fires_in_due_then_fifo_order(
        dues in prop::collection::vec(0u64..50, 1..80),
        cancel_mask in prop::collection::vec(any::<bool>(), 80),
    ) {
        let mut s: Scheduler<usize> = Scheduler::new();
        let handles: Vec<_> = dues
            .iter()
            .enumerate()
            .map(|(i, &d)| s.schedule(SimTime::from_us(d), i).unwrap())
            .collect();
        let mut cancelled = std::collections::BTreeSet::new();
        for (i, h) in handles.iter().enumerate() {
            if cancel_mask[i] && s.cancel(*h) {
                cancelled.insert(i);
            }
        }
        let mut fired = Vec::new();
        s.run_until(SimTime::from_us(25), |_, ev| {
            fired.push(ev.payload);
            Ok(())
        })
        .unwrap();

        let mut expect: Vec<usize> = (0..dues.len())
            .filter(|i| !cancelled.contains(i) && dues[*i] <= 25)
            .collect();
        expect.sort_by_key(|&i| (dues[i], i));
        prop_assert_eq!(&fired, &expect);

        let c = s.counters();
        prop_assert_eq!(c.scheduled, dues.len() as u64);
        prop_assert_eq!(c.fired + c.cancelled + s.pending() as u64, c.scheduled);
        prop_assert_eq!(s.now(), SimTime::from_us(25));
    }

    #[test]
    fn collided_iff_overlapping(spans in prop::collection::vec((0u64..2_000, 1u64..400), 1..25)) {
        let mut spans = spans;
        spans.sort();
        // Drive the channel in time order: ends before starts at equal times.
        let mut ch = Channel::new(Duration::ZERO);
        let mut events: Vec<(u64, u8, usize)> = Vec::new();
        for (i, &(s, len)) in spans.iter().enumerate() {
            events.push((s, 1, i));
            events.push((s + len, 0, i));
        }
        events.sort();
        let mut ids = vec![None; spans.len()];
        for (t, kind, i) in events {
            let now = SimTime::from_us(t);
            if kind == 1 {
                let timing = FrameTiming {
                    start: now,
                    preamble_end: now,
                    header_end: now,
                    end: SimTime::from_us(t + spans[i].1),
                };
                let (id, _) = ch.begin_transmission(Sender::Jammer, None, timing, now).unwrap();
                ids[i] = Some(id);
            } else if ch.end_transmission(ids[i].unwrap()) {
                ch.settle(now);
            }
        }
        let trace = ch.into_trace();
        for (i, r) in trace.records.iter().enumerate() {
            let overlaps = trace.records.iter().enumerate().any(|(j, o)| j != i && r.overlaps(o));
            prop_assert_eq!(r.collided, overlaps, "record {}", i);
        }
    }

    #[test]
    fn ledger_is_monotone_and_additive(steps in prop::collection::vec((0u64..10_000, 0usize..4), 1..60)) {
        let model = EnergyDfaModel::default();
        let mut ledger = EnergyLedger::new(PowerState::Rx, SimTime::ZERO);
        let mut now = 0u64;
        let mut state = PowerState::Rx;
        let mut oracle = 0u64;
        let mut last = 0u64;
        for (dt, pick) in steps {
            // Only calls that are legal from the current state.
            let call = match (state, pick % 2) {
                (PowerState::Rx, 0) => RadioCall::Send,
                (PowerState::Rx, _) => RadioCall::LowPowerListen,
                (PowerState::Tx, _) => RadioCall::TxDone,
                (PowerState::SleepLpl, 0) => RadioCall::Listen,
                (PowerState::SleepLpl, _) => RadioCall::Send,
                (PowerState::Idle, _) => RadioCall::Listen,
            };
            oracle += model.power_uw(state) * dt;
            now += dt;
            let total = ledger.on_transition(&model, call, SimTime::from_us(now)).unwrap();
            state = model.step(state, call).unwrap().0;
            prop_assert!(total >= last);
            prop_assert_eq!(total, oracle);
            last = total;
        }
        let end = now + 1_000;
        oracle += model.power_uw(state) * 1_000;
        prop_assert_eq!(ledger.freeze(&model, SimTime::from_us(end)), oracle);
        // frozen ledgers no longer grow
        prop_assert_eq!(ledger.freeze(&model, SimTime::from_us(end + 5_000)), oracle);
    }

    #[test]
    fn throughput_stays_in_unit_interval(sent in 0u64..10_000, frac in 0.0f64..=1.0) {
        let received = (sent as f64 * frac).floor() as u64;
        match throughput(received, sent) {
            None => prop_assert_eq!(sent, 0),
            Some(t) => prop_assert!((0.0..=1.0).contains(&t)),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Every run re-checks the energy replay, collision flags, capture and
    // the LBT rule internally and fails on the first violation.
    #[test]
    fn random_runs_keep_their_invariants(n in 1usize..=12, seed in 0u64..1_000_000, alternating in any::<bool>()) {
        let mut sc = Scenario {
            nodes: 12,
            ..Scenario::default()
        };
        if alternating {
            sc.energy = Some(lbtsim::energy::EnergyParams {
                lpl_model: lbtsim::energy::LplModel::Alternating,
                ..Default::default()
            });
        }
        let loaded = sc.resolve(std::path::Path::new("."), "prop").unwrap();
        let out = run_experiment(&loaded, n, seed).unwrap();
        let t = out.row.throughput.unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert_eq!(out.lbt_violations, 0);
        prop_assert_eq!(out.stats.sum_n_tx(), 10 * n as u64);
        for addr in out.addresses.iter().filter(|a| **a != Address(0)) {
            prop_assert!(out.stats.nodes.iter().any(|s| s.address == *addr));
        }
    }
}
