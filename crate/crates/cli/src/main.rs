use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lbtsim::aloha::{self, AlohaParams};
use lbtsim::experiment::{self, Execution, RunMetadata};
use lbtsim::fig5;
use lbtsim::mac::{MacMode, TpsPolicy};
use lbtsim::radio::RadioParams;
use lbtsim::scenario::{LoadedScenario, Scenario};
use lbtsim::SimError;

#[derive(Parser, Debug)]
#[command(name = "lbtsim", version, about = "Warehouse radio network simulator with listen-before-talk access")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario once and write its tables and traces.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of nodes holding the polled product.
        #[arg(long)]
        n_active: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a scenario for every active-set size in a range and several seeds.
    Sweep {
        scenario: PathBuf,
        /// Inclusive range such as `1..38`, or a single value.
        #[arg(long, value_parser = parse_range)]
        n: RangeInclusive<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// First seed; defaults to the scenario's seed.
        #[arg(long)]
        base_seed: Option<u64>,
        /// Run the points one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// The scripted three-device contention demo after a jammed period.
    Fig5 {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pure-ALOHA utilization against offered load.
    Aloha {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        senders: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    mode: Option<MacMode>,
    #[arg(long)]
    tps_policy: Option<TpsPolicy>,
    /// Energy parameter file; replaces whatever the scenario names.
    #[arg(long)]
    energy_params: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = num(s)?;
            (v, v)
        }
    };
    if a == 0 || b < a {
        return Err(format!("`{s}` is not a range of positive sizes"));
    }
    Ok(a..=b)
}

fn load(path: &Path, o: &Overrides) -> Result<LoadedScenario, SimError> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::config(&source, "file", format!("cannot read scenario: {e}")))?;
    let mut sc = Scenario::from_toml_str(&text, &source)?;
    if let Some(m) = o.mode {
        sc.mac.mode = m;
    }
    if let Some(p) = o.tps_policy {
        sc.mac.tps_policy = p;
    }
    if let Some(p) = &o.energy_params {
        let abs = std::env::current_dir()
            .map_err(|e| SimError::io(".", e))?
            .join(p);
        sc.energy = None;
        sc.energy_params = Some(abs);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    sc.resolve(base, &source)
}

/// Buffers every output file so nothing is written unless the whole
/// command succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(&'static str, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &'static str, f: impl FnOnce(&mut Vec<u8>) -> Result<(), SimError>) -> Result<(), SimError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.push((name, buf));
        Ok(())
    }

    fn commit(self) -> Result<(), SimError> {
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            experiment::write_file(&path, |w| {
                std::io::Write::write_all(w, &bytes).map_err(|e| SimError::io(&path, e))
            })?;
        }
        Ok(())
    }
}

fn cmd_run(scenario: &Path, seed: Option<u64>, n_active: Option<usize>, out: &Path, o: &Overrides) -> Result<(), SimError> {
    let loaded = load(scenario, o)?;
    let seed = seed.unwrap_or(loaded.scenario.seed);
    let n = n_active.unwrap_or_else(|| loaded.scenario.n_active());
    let run = experiment::run_experiment(&loaded, n, seed)?;
    let mut meta = RunMetadata::new("run", &loaded, vec![seed], vec![n]);
    meta.trace_hash = Some(format!("{:016x}", run.trace_hash));

    let mut files = Outputs::new(out);
    files.add("results.csv", |w| experiment::write_results(std::slice::from_ref(&run.row), w))?;
    files.add("node_stats.csv", |w| experiment::write_node_stats(&run.stats, w))?;
    files.add("timeline.csv", |w| run.trace.write_csv(w))?;
    files.add("mac_log.csv", |w| run.log.write_csv(w))?;
    files.add("metadata.json", |w| meta.write(w))?;
    files.commit()?;
    match run.row.throughput {
        Some(t) => println!("n_active={n} seed={seed} T={t:.4} N_RX={} sum_N_TX={}", run.row.n_rx, run.row.sum_n_tx),
        None => println!("n_active={n} seed={seed} T=NaN (no replies sent)"),
    }
    Ok(())
}

fn cmd_sweep(
    scenario: &Path,
    n: RangeInclusive<usize>,
    seeds: u64,
    base_seed: Option<u64>,
    sequential: bool,
    out: &Path,
    o: &Overrides,
) -> Result<(), SimError> {
    let loaded = load(scenario, o)?;
    if seeds == 0 {
        return Err(SimError::config("command line", "--seeds", "need at least one seed"));
    }
    if *n.end() > loaded.scenario.nodes {
        return Err(SimError::config(
            "command line",
            "--n",
            format!("range ends at {} but the scenario has {} nodes", n.end(), loaded.scenario.nodes),
        ));
    }
    let base = base_seed.unwrap_or(loaded.scenario.seed);
    let exec = if sequential { Execution::Sequential } else { Execution::default() };
    let points = experiment::sweep_points(n.clone(), seeds, base);
    let rows = experiment::sweep(&loaded, &points, exec)?;
    let agg = experiment::aggregate(&rows);
    let meta = RunMetadata::new("sweep", &loaded, (base..base + seeds).collect(), n.collect());

    let mut files = Outputs::new(out);
    files.add("results.csv", |w| experiment::write_results(&rows, w))?;
    files.add("aggregate.csv", |w| experiment::write_aggregate(&agg, w))?;
    files.add("metadata.json", |w| meta.write(w))?;
    files.commit()?;
    for a in &agg {
        println!(
            "n={:>2} T={:.3} E={:.2} mJ (node sd {:.2})",
            a.n_active, a.throughput_mean, a.energy_mean_mj, a.energy_node_sd_mj
        );
    }
    Ok(())
}

fn cmd_fig5(out: &Path) -> Result<(), SimError> {
    let r = fig5::run_fig5(&RadioParams::default())?;
    let meta = RunMetadata::builtin("fig5", vec![0]);
    let mut files = Outputs::new(out);
    files.add("timeline.csv", |w| r.trace.write_csv(w))?;
    files.add("mac_log.csv", |w| r.log.write_csv(w))?;
    files.add("accesses.csv", |w| {
        let mut c = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        c.write_record(["device", "start_us", "end_us", "offset_us"])?;
        for a in &r.accesses {
            c.write_record([a.device.0.to_string(), a.start_us.to_string(), a.end_us.to_string(), a.offset_us.to_string()])?;
        }
        c.flush().map_err(|e| SimError::io("accesses.csv", e))
    })?;
    files.add("metadata.json", |w| meta.write(w))?;
    files.commit()?;
    for a in &r.accesses {
        println!("device {} starts {} us after the previous activity", a.device, a.offset_us);
    }
    Ok(())
}

fn cmd_aloha(seed: u64, senders: usize, out: &Path) -> Result<(), SimError> {
    let p = AlohaParams {
        senders,
        ..AlohaParams::default()
    };
    let points = aloha::sweep_aloha(&p, &aloha::default_loads(), seed)?;
    let meta = RunMetadata::builtin("aloha", vec![seed]);
    let mut files = Outputs::new(out);
    files.add("aloha.csv", |w| {
        let mut c = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        c.write_record(["offered_load", "attempted_load", "utilization", "analytic", "frames", "intact", "dropped"])?;
        for pt in &points {
            c.write_record([
                format!("{:.3}", pt.offered_load),
                format!("{:.6}", pt.attempted_load),
                format!("{:.6}", pt.utilization),
                format!("{:.6}", aloha::analytic_utilization(pt.offered_load)),
                pt.frames.to_string(),
                pt.intact.to_string(),
                pt.dropped.to_string(),
            ])?;
        }
        c.flush().map_err(|e| SimError::io("aloha.csv", e))
    })?;
    files.add("metadata.json", |w| meta.write(w))?;
    files.commit()?;
    let peak = points.iter().map(|p| p.utilization).fold(0.0, f64::max);
    println!("peak utilization {:.1} %", peak * 100.0);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Run {
            scenario,
            seed,
            n_active,
            out,
            overrides,
        } => cmd_run(scenario, *seed, *n_active, out, overrides),
        Command::Sweep {
            scenario,
            n,
            seeds,
            base_seed,
            sequential,
            out,
            overrides,
        } => cmd_sweep(scenario, n.clone(), *seeds, *base_seed, *sequential, out, overrides),
        Command::Fig5 { out } => cmd_fig5(out),
        Command::Aloha { seed, senders, out } => cmd_aloha(*seed, *senders, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..38").unwrap(), 1..=38);
        assert_eq!(parse_range("2..=5").unwrap(), 2..=5);
        assert_eq!(parse_range("7").unwrap(), 7..=7);
        assert!(parse_range("0..3").is_err());
        assert!(parse_range("5..2").is_err());
        assert!(parse_range("a..b").is_err());
    }
}
