//! Single runs, sweeps over the active-set size, aggregation and the
//! result files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::channel::ChannelTrace;
use crate::energy::EnergyLedger;
use crate::error::SimError;
use crate::frame::{Address, FrameKind};
use crate::maclog::MacLog;
use crate::scenario::LoadedScenario;
use crate::time::Duration;
use crate::verify;
use crate::warehouse::{RunStats, WarehouseApp};
use crate::world::{NodeSpec, RadioPolicy, Simulation, WorldConfig};

/// Bumped whenever a column of an output file changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: [&str; 12] = [
    "n_active",
    "seed",
    "throughput",
    "n_rx",
    "sum_n_tx",
    "energy_mean_mj",
    "energy_std_mj",
    "energy_min_mj",
    "energy_max_mj",
    "polls_sent",
    "reply_frames",
    "reply_collisions",
];

pub const AGGREGATE_HEADER: [&str; 9] = [
    "n_active",
    "runs",
    "throughput_runs",
    "throughput_mean",
    "throughput_std",
    "energy_mean_mj",
    "energy_std_mj",
    "energy_node_sd_mj",
    "sum_n_tx_mean",
];

pub const NODE_STATS_HEADER: [&str; 9] = [
    "address",
    "active",
    "n_tx",
    "polls_received",
    "rx_raw",
    "rx_framed",
    "frozen",
    "energy_pJ",
    "energy_mJ",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub n_active: usize,
    pub seed: u64,
    pub throughput: Option<f64>,
    pub n_rx: u32,
    pub sum_n_tx: u64,
    pub energy_mean_mj: f64,
    pub energy_std_mj: f64,
    pub energy_min_mj: f64,
    pub energy_max_mj: f64,
    pub polls_sent: u32,
    pub reply_frames: usize,
    pub reply_collisions: usize,
}

/// Mean, sample standard deviation (0 for fewer than two values), min, max.
pub fn describe(xs: &[f64]) -> (f64, f64, f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, sd, min, max)
}

impl ResultRow {
    fn from_run(stats: &RunStats, trace: &ChannelTrace) -> Self {
        let (mean, sd, min, max) = describe(&stats.active_energies_mj());
        let replies: Vec<_> = trace
            .records
            .iter()
            .filter(|r| r.frame.as_ref().is_some_and(|f| f.kind == FrameKind::Reply))
            .collect();
        ResultRow {
            n_active: stats.n_active,
            seed: stats.seed,
            throughput: stats.throughput(),
            n_rx: stats.n_rx,
            sum_n_tx: stats.sum_n_tx(),
            energy_mean_mj: mean,
            energy_std_mj: sd,
            energy_min_mj: min,
            energy_max_mj: max,
            polls_sent: stats.polls_sent,
            reply_frames: replies.len(),
            reply_collisions: replies.iter().filter(|r| r.collided).count(),
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.n_active.to_string(),
            self.seed.to_string(),
            fmt_opt(self.throughput),
            self.n_rx.to_string(),
            self.sum_n_tx.to_string(),
            fmt_f(self.energy_mean_mj),
            fmt_f(self.energy_std_mj),
            fmt_f(self.energy_min_mj),
            fmt_f(self.energy_max_mj),
            self.polls_sent.to_string(),
            self.reply_frames.to_string(),
            self.reply_collisions.to_string(),
        ]
    }
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.6}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_else(|| "NaN".into())
}

/// Everything produced by one run.
#[derive(Debug)]
pub struct RunOutput {
    pub row: ResultRow,
    pub stats: RunStats,
    pub trace: ChannelTrace,
    pub log: MacLog,
    pub ledgers: Vec<EnergyLedger>,
    pub addresses: Vec<Address>,
    pub trace_hash: u64,
    pub lbt_violations: usize,
}

/// Build the world for `n_active` repliers: the access point (address 0,
/// always listening) plus nodes 1..=nodes in low-power listening.
pub fn build(loaded: &LoadedScenario, n_active: usize, seed: u64) -> Result<(WorldConfig, WarehouseApp), SimError> {
    let sc = &loaded.scenario;
    if n_active == 0 || n_active > sc.nodes {
        return Err(SimError::config(
            &loaded.source,
            "n_active",
            format!("{n_active} is outside 1..={}", sc.nodes),
        ));
    }
    let energy = loaded.energy.model(&loaded.source)?;
    let mut nodes = vec![NodeSpec {
        address: Address(0),
        radio: RadioPolicy::AlwaysOn,
        rx_processing: Duration::from_us(sc.app.ap_rx_processing_us),
    }];
    for a in 1..=sc.nodes {
        nodes.push(NodeSpec {
            address: Address(a as u8),
            radio: RadioPolicy::LowPowerListen,
            rx_processing: Duration::ZERO,
        });
    }
    let mut inventories = vec![None];
    inventories.extend(sc.inventories(n_active));
    let cfg = WorldConfig {
        seed,
        radio: sc.radio.clone(),
        mac: sc.mac.clone(),
        energy,
        lpl_model: loaded.energy.lpl_model,
        nodes,
        jams: sc.jams(),
    };
    let app = WarehouseApp::new(sc.app.clone(), 0, seed, inventories, sc.unicast.clone());
    Ok((cfg, app))
}

/// One complete run, checked against the energy replay, the collision
/// oracle and the listen-before-talk rule. Any failed check is an
/// invariant violation.
pub fn run_experiment(loaded: &LoadedScenario, n_active: usize, seed: u64) -> Result<RunOutput, SimError> {
    let (cfg, app) = build(loaded, n_active, seed)?;
    let model = cfg.energy.clone();
    let t_f = cfg.mac.t_f();
    let lbt = cfg.mac.mode == crate::mac::MacMode::Lbt;
    let end = loaded.scenario.app.end_at();
    let mut sim = Simulation::new(cfg, app)?;
    sim.run_until(end)?;
    let out = sim.finish()?;

    let c = out.counters;
    if c.fired + out.pending_events as u64 + c.cancelled != c.scheduled {
        return Err(SimError::Invariant(format!("event accounting broken: {c:?}, {} pending", out.pending_events)));
    }
    verify::check_energy(&out.log, &out.ledgers, &out.addresses, &model)?;
    let bad = verify::collision_mismatches(&out.trace);
    if let Some(&i) = bad.first() {
        return Err(SimError::Invariant(format!("collision flag wrong on record {i}")));
    }
    if let Some(d) = verify::capture_violations(&out.trace, &out.deliveries).first() {
        return Err(SimError::Invariant(format!("impossible delivery {d:?}")));
    }
    let violations = if lbt {
        verify::lbt_violations(&out.trace, &out.log, t_f)
    } else {
        Vec::new()
    };
    if let Some(v) = violations.first() {
        return Err(SimError::Invariant(format!(
            "listen-before-talk violated by node {} at {}: {}",
            v.node, v.tx_start, v.reason
        )));
    }

    let ledger_pj: Vec<u64> = out.ledgers.iter().map(EnergyLedger::accumulated).collect();
    let stats = out.app.into_stats(&out.addresses, &ledger_pj);
    if u64::from(stats.n_rx) > stats.sum_n_tx() {
        return Err(SimError::Invariant(format!(
            "{} replies received but only {} sent",
            stats.n_rx,
            stats.sum_n_tx()
        )));
    }
    if let Some(n) = stats.nodes.iter().find(|n| n.n_tx > n.polls_received) {
        return Err(SimError::Invariant(format!(
            "node {} sent {} replies to {} polls",
            n.address, n.n_tx, n.polls_received
        )));
    }
    let row = ResultRow::from_run(&stats, &out.trace);
    Ok(RunOutput {
        row,
        stats,
        trace: out.trace,
        log: out.log,
        ledgers: out.ledgers,
        addresses: out.addresses,
        trace_hash: out.trace_hash,
        lbt_violations: violations.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is on, otherwise sequential.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Apply `f` to every point; output order equals input order.
pub fn map_points<T, F>(points: &[(usize, u64)], exec: Execution, f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T, SimError> + Sync,
{
    let with_context = |&(n, seed): &(usize, u64)| {
        f(n, seed).map_err(|e| match e {
            SimError::Invariant(m) => SimError::Invariant(format!("run n_active={n} seed={seed}: {m}")),
            other => other,
        })
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            points.par_iter().map(with_context).collect()
        }
        _ => points.iter().map(with_context).collect(),
    }
}

/// Every `(n, seed)` for `n` in `ns` and `seeds` consecutive seeds from
/// `base_seed`.
pub fn sweep_points(ns: std::ops::RangeInclusive<usize>, seeds: u64, base_seed: u64) -> Vec<(usize, u64)> {
    ns.flat_map(|n| (0..seeds).map(move |k| (n, base_seed + k))).collect()
}

pub fn sweep(loaded: &LoadedScenario, points: &[(usize, u64)], exec: Execution) -> Result<Vec<ResultRow>, SimError> {
    let mut rows = map_points(points, exec, |n, seed| run_experiment(loaded, n, seed).map(|o| o.row))?;
    rows.sort_by_key(|r| (r.n_active, r.seed));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub n_active: usize,
    pub runs: usize,
    pub throughput_runs: usize,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    /// Mean over runs of the per-run mean node energy.
    pub energy_mean_mj: f64,
    /// Standard deviation over runs of the per-run mean node energy.
    pub energy_std_mj: f64,
    /// Mean over runs of the per-run sample standard deviation across nodes.
    pub energy_node_sd_mj: f64,
    pub sum_n_tx_mean: f64,
}

pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut by_n: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n_active).or_default().push(r);
    }
    by_n.into_iter()
        .map(|(n, rs)| {
            let t: Vec<f64> = rs.iter().filter_map(|r| r.throughput).collect();
            let e: Vec<f64> = rs.iter().map(|r| r.energy_mean_mj).collect();
            let sd: Vec<f64> = rs.iter().map(|r| r.energy_std_mj).collect();
            let tx: Vec<f64> = rs.iter().map(|r| r.sum_n_tx as f64).collect();
            let (t_mean, t_sd, _, _) = describe(&t);
            let (e_mean, e_sd, _, _) = describe(&e);
            AggregateRow {
                n_active: n,
                runs: rs.len(),
                throughput_runs: t.len(),
                throughput_mean: t_mean,
                throughput_std: t_sd,
                energy_mean_mj: e_mean,
                energy_std_mj: e_sd,
                energy_node_sd_mj: describe(&sd).0,
                sum_n_tx_mean: describe(&tx).0,
            }
        })
        .collect()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn flush<W: Write>(mut w: csv::Writer<W>, what: &str) -> Result<(), SimError> {
    w.flush().map_err(|e| SimError::io(what, e))
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<(), SimError> {
    let mut out = csv_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    flush(out, "results")
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], w: W) -> Result<(), SimError> {
    let mut out = csv_writer(w);
    out.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        out.write_record([
            r.n_active.to_string(),
            r.runs.to_string(),
            r.throughput_runs.to_string(),
            fmt_f(r.throughput_mean),
            fmt_f(r.throughput_std),
            fmt_f(r.energy_mean_mj),
            fmt_f(r.energy_std_mj),
            fmt_f(r.energy_node_sd_mj),
            fmt_f(r.sum_n_tx_mean),
        ])?;
    }
    flush(out, "aggregate")
}

pub fn write_node_stats<W: Write>(stats: &RunStats, w: W) -> Result<(), SimError> {
    let mut out = csv_writer(w);
    out.write_record(NODE_STATS_HEADER)?;
    for n in &stats.nodes {
        out.write_record([
            n.address.0.to_string(),
            n.active.to_string(),
            n.n_tx.to_string(),
            n.polls_received.to_string(),
            n.rx_raw.to_string(),
            n.rx_framed.to_string(),
            n.frozen.to_string(),
            n.energy_pj.to_string(),
            format!("{:.9}", n.energy_mj()),
        ])?;
    }
    flush(out, "node stats")
}

/// Description of a run or sweep, written as JSON next to the tables.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Absent for the built-in demos.
    pub scenario: Option<crate::scenario::Scenario>,
    pub energy: Option<crate::energy::EnergyParams>,
    pub rng: &'static str,
    pub seeds: Vec<u64>,
    pub n_active: Vec<usize>,
    pub trace_hash: Option<String>,
}

impl RunMetadata {
    pub fn new(command: &str, loaded: &LoadedScenario, seeds: Vec<u64>, n_active: Vec<usize>) -> Self {
        RunMetadata {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            scenario: Some(loaded.scenario.clone()),
            energy: Some(loaded.energy.clone()),
            rng: crate::rng::ALGORITHM,
            seeds,
            n_active,
            trace_hash: None,
        }
    }

    pub fn builtin(command: &str, seeds: Vec<u64>) -> Self {
        RunMetadata {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            scenario: None,
            energy: None,
            rng: crate::rng::ALGORITHM,
            seeds,
            n_active: Vec::new(),
            trace_hash: None,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), SimError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Create `path` (and parents) and write it through `f`.
pub fn write_file<F>(path: &Path, f: F) -> Result<(), SimError>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<(), SimError>,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| SimError::io(path, e))
}
