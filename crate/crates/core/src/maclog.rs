//! Per-node MAC and radio event log.
//!
//! CSV columns: `time_us,node,transition,t_ps_us`. The `transition` column
//! is a tagged string (`phase:idle>cca-counting`, `draw:t_ps`,
//! `radio:send`, `ledger:reset`, ...); `t_ps_us` is filled only for draws
//! and clear-channel decisions.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::energy::{PowerState, RadioCall};
use crate::error::SimError;
use crate::frame::Address;
use crate::mac::MacPhase;
use crate::time::{Duration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacEvent {
    Phase { from: MacPhase, to: MacPhase },
    TpsDraw(Duration),
    PreBackoffDraw(Duration),
    /// Transmission granted after an idle window; `shortcut` means the
    /// window was `t_F` alone.
    Cca { shortcut: bool, t_ps: Duration },
    Radio(RadioCall),
    LedgerInit(PowerState),
    LedgerReset,
    LedgerFreeze,
}

impl MacEvent {
    pub fn is_energy_relevant(&self) -> bool {
        matches!(
            self,
            MacEvent::Radio(_) | MacEvent::LedgerInit(_) | MacEvent::LedgerReset | MacEvent::LedgerFreeze
        )
    }

    fn value(&self) -> Option<Duration> {
        match *self {
            MacEvent::TpsDraw(d) | MacEvent::PreBackoffDraw(d) => Some(d),
            MacEvent::Cca { t_ps, .. } => Some(t_ps),
            _ => None,
        }
    }

    fn parse(tag: &str, value: Option<Duration>) -> Result<Self, String> {
        let need = || value.ok_or_else(|| format!("`{tag}` needs a t_ps_us value"));
        if let Some(rest) = tag.strip_prefix("phase:") {
            let (a, b) = rest.split_once('>').ok_or_else(|| format!("bad phase tag `{tag}`"))?;
            return Ok(MacEvent::Phase {
                from: a.parse()?,
                to: b.parse()?,
            });
        }
        if let Some(call) = tag.strip_prefix("radio:") {
            return Ok(MacEvent::Radio(call.parse()?));
        }
        if let Some(state) = tag.strip_prefix("ledger:init:") {
            return Ok(MacEvent::LedgerInit(state.parse()?));
        }
        Ok(match tag {
            "draw:t_ps" => MacEvent::TpsDraw(need()?),
            "draw:pre_backoff" => MacEvent::PreBackoffDraw(need()?),
            "cca:shortcut" => MacEvent::Cca {
                shortcut: true,
                t_ps: need()?,
            },
            "cca:full" => MacEvent::Cca {
                shortcut: false,
                t_ps: need()?,
            },
            "ledger:reset" => MacEvent::LedgerReset,
            "ledger:freeze" => MacEvent::LedgerFreeze,
            other => return Err(format!("unknown transition `{other}`")),
        })
    }
}

impl fmt::Display for MacEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MacEvent::Phase { from, to } => write!(f, "phase:{from}>{to}"),
            MacEvent::TpsDraw(_) => f.write_str("draw:t_ps"),
            MacEvent::PreBackoffDraw(_) => f.write_str("draw:pre_backoff"),
            MacEvent::Cca { shortcut: true, .. } => f.write_str("cca:shortcut"),
            MacEvent::Cca { shortcut: false, .. } => f.write_str("cca:full"),
            MacEvent::Radio(call) => write!(f, "radio:{call}"),
            MacEvent::LedgerInit(state) => write!(f, "ledger:init:{state}"),
            MacEvent::LedgerReset => f.write_str("ledger:reset"),
            MacEvent::LedgerFreeze => f.write_str("ledger:freeze"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacLogEntry {
    pub time: SimTime,
    pub node: Address,
    pub event: MacEvent,
}

impl MacLogEntry {
    pub fn new(time: SimTime, node: Address, event: MacEvent) -> Self {
        MacLogEntry { time, node, event }
    }
}

pub const MAC_LOG_HEADER: [&str; 4] = ["time_us", "node", "transition", "t_ps_us"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacLog {
    entries: Vec<MacLogEntry>,
}

impl MacLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, node: Address, event: MacEvent) {
        self.entries.push(MacLogEntry { time, node, event });
    }

    pub fn entries(&self) -> &[MacLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_node(&self, node: Address) -> impl Iterator<Item = &MacLogEntry> + '_ {
        self.entries.iter().filter(move |e| e.node == node)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(MAC_LOG_HEADER)?;
        for e in &self.entries {
            let value = e.event.value().map(|d| d.as_us().to_string()).unwrap_or_default();
            out.write_record([
                e.time.as_us().to_string(),
                e.node.0.to_string(),
                e.event.to_string(),
                value,
            ])?;
        }
        out.flush().map_err(|e| SimError::io("mac log", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(MAC_LOG_HEADER) {
            return Err(SimError::Invariant(format!("unexpected mac log header {headers:?}")));
        }
        let mut log = MacLog::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| SimError::Invariant(format!("mac log row {}: {m}", i + 1));
            let num = |s: &str| u64::from_str(s).map_err(|e| bad(format!("`{s}`: {e}")));
            let time = SimTime::from_us(num(&rec[0])?);
            let node = Address(u8::from_str(&rec[1]).map_err(|e| bad(e.to_string()))?);
            let value = if rec[3].is_empty() {
                None
            } else {
                Some(Duration::from_us(num(&rec[3])?))
            };
            let event = MacEvent::parse(&rec[2], value).map_err(bad)?;
            log.push(time, node, event);
        }
        Ok(log)
    }
}
