//! Radio timing: frame airtime, preamble and header boundaries, and the
//! low-power-listening sniff schedule.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::frame::{Frame, Preamble};
use crate::time::{Duration, SimTime};

/// Physical-layer and framing parameters of the transceiver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub bit_rate: u64,
    pub sniff_on_us: u64,
    pub sleep_us: u64,
    pub preamble_bytes: u64,
    pub sync_bytes: u64,
    pub header_bytes: u64,
    pub crc_bytes: u64,
    pub extended_preamble_us: u64,
    /// Carrier-sense rising-edge latency: a transmission starting at `s` is
    /// sensed by other radios from `s + cca_latency_us`. Two contenders whose
    /// waits end within this window both transmit.
    pub cca_latency_us: u64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bit_rate: 38_400,
            sniff_on_us: 200,
            sleep_us: 4_700,
            preamble_bytes: 4,
            sync_bytes: 4,
            header_bytes: 4,
            crc_bytes: 2,
            extended_preamble_us: 4_900,
            cca_latency_us: 30,
        }
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Absolute boundaries of one frame on air.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameTiming {
    pub start: SimTime,
    /// First instant after the preamble; a listening radio can lock onto the
    /// frame while `now < preamble_end`.
    pub preamble_end: SimTime,
    /// First instant at which the destination address has been received.
    pub header_end: SimTime,
    pub end: SimTime,
}

impl RadioParams {
    pub fn validate(&self, source: &str) -> Result<(), SimError> {
        let positive = [
            ("radio.bit_rate", self.bit_rate),
            ("radio.sniff_on_us", self.sniff_on_us),
            ("radio.sleep_us", self.sleep_us),
            ("radio.preamble_bytes", self.preamble_bytes),
            ("radio.sync_bytes", self.sync_bytes),
            ("radio.header_bytes", self.header_bytes),
            ("radio.crc_bytes", self.crc_bytes),
            ("radio.extended_preamble_us", self.extended_preamble_us),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(SimError::config(source, field, "must be positive"));
            }
        }
        if self.extended_preamble_us < self.sleep_us {
            return Err(SimError::config(
                source,
                "radio.extended_preamble_us",
                format!(
                    "{} is shorter than the sleep interval {}",
                    self.extended_preamble_us, self.sleep_us
                ),
            ));
        }
        Ok(())
    }

    fn bits_to_us(&self, bytes: u64) -> u64 {
        ceil_div(bytes * 8 * 1_000_000, self.bit_rate)
    }

    pub fn sniff_period(&self) -> Duration {
        Duration::from_us(self.sleep_us + self.sniff_on_us)
    }

    /// Time on air of `frame`.
    pub fn airtime(&self, frame: &Frame) -> Duration {
        let body = self.sync_bytes + self.header_bytes + frame.payload_len() as u64 + self.crc_bytes;
        let us = match frame.preamble {
            Preamble::Normal => self.bits_to_us(self.preamble_bytes + body),
            Preamble::Extended => self.extended_preamble_us + self.bits_to_us(body),
        };
        Duration::from_us(us)
    }

    pub fn timing(&self, frame: &Frame, start: SimTime) -> FrameTiming {
        let (preamble_end, header_end) = match frame.preamble {
            Preamble::Normal => (
                self.bits_to_us(self.preamble_bytes),
                self.bits_to_us(self.preamble_bytes + self.sync_bytes + self.header_bytes),
            ),
            Preamble::Extended => (
                self.extended_preamble_us,
                self.extended_preamble_us + self.bits_to_us(self.sync_bytes + self.header_bytes),
            ),
        };
        FrameTiming {
            start,
            preamble_end: start + Duration::from_us(preamble_end),
            header_end: start + Duration::from_us(header_end),
            end: start + self.airtime(frame),
        }
    }
}

/// Sniff windows of a radio in low-power listening: `[w_k, w_k + on)` with
/// `w_k = first + k * period` for `k >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SniffSchedule {
    pub first: SimTime,
    pub period: Duration,
    pub on: Duration,
}

impl SniffSchedule {
    /// Schedule for a radio entering low-power listening at `entered`: it
    /// sleeps a full interval before the first sniff.
    pub fn after_entry(p: &RadioParams, entered: SimTime) -> Self {
        SniffSchedule {
            first: entered + Duration::from_us(p.sleep_us),
            period: p.sniff_period(),
            on: Duration::from_us(p.sniff_on_us),
        }
    }

    /// Start of the window containing `t`, or of the next one.
    pub fn window_at_or_after(&self, t: SimTime) -> SimTime {
        if t <= self.first {
            return self.first;
        }
        let off = (t - self.first).as_us();
        let period = self.period.as_us();
        let k = off / period;
        let w = self.first + Duration::from_us(k * period);
        if t < w + self.on {
            w
        } else {
            w + self.period
        }
    }

    /// Earliest instant in `[from, until)` covered by a sniff window, i.e.
    /// when a sniffing radio first hears a preamble that occupies that span.
    pub fn first_detection(&self, from: SimTime, until: SimTime) -> Option<SimTime> {
        if from >= until {
            return None;
        }
        let w = self.window_at_or_after(from);
        let x = w.max(from);
        (x < until).then_some(x)
    }

    /// Window starts `w` with `w + on <= t` and `w >= since`, i.e. the sniffs
    /// completed strictly before `t`.
    pub fn completed_before(&self, since: SimTime, t: SimTime) -> impl Iterator<Item = SimTime> + '_ {
        let period = self.period;
        let on = self.on;
        let mut w = self.window_at_or_after(since);
        if w < since {
            w += period;
        }
        std::iter::from_fn(move || {
            if w + on <= t {
                let cur = w;
                w += period;
                Some(cur)
            } else {
                None
            }
        })
    }
}
