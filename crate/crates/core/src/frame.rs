//! Over-the-air frames.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// 8-bit link-layer address.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u8);

impl Address {
    pub const BROADCAST: Address = Address(255);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Largest payload the radio driver accepts.
pub const MAX_PAYLOAD: usize = 126;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Poll,
    Reply,
    Unicast,
    Start,
    Stop,
    Jam,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Poll => "poll",
            FrameKind::Reply => "reply",
            FrameKind::Unicast => "unicast",
            FrameKind::Start => "start",
            FrameKind::Stop => "stop",
            FrameKind::Jam => "jam",
        }
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "poll" => FrameKind::Poll,
            "reply" => FrameKind::Reply,
            "unicast" => FrameKind::Unicast,
            "start" => FrameKind::Start,
            "stop" => FrameKind::Stop,
            "jam" => FrameKind::Jam,
            other => return Err(format!("unknown frame kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preamble {
    Normal,
    /// Stretched to cover a full low-power-listening sleep interval.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: Address,
    pub dst: Address,
    pub seq: u8,
    pub payload: Vec<u8>,
    pub preamble: Preamble,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte limit")]
pub struct PayloadTooLong(pub usize);

impl Frame {
    pub fn new(
        kind: FrameKind,
        src: Address,
        dst: Address,
        seq: u8,
        payload: Vec<u8>,
        preamble: Preamble,
    ) -> Result<Self, PayloadTooLong> {
        if payload.len() > MAX_PAYLOAD {
            return Err(PayloadTooLong(payload.len()));
        }
        Ok(Frame {
            kind,
            src,
            dst,
            seq,
            payload,
            preamble,
        })
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst.is_broadcast()
    }

    /// Whether a radio with address `addr` keeps this frame after reading
    /// the header.
    pub fn accepted_by(&self, addr: Address) -> bool {
        self.is_broadcast() || self.dst == addr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_limit() {
        let ok = Frame::new(FrameKind::Reply, Address(1), Address(0), 0, vec![0; 126], Preamble::Normal);
        assert!(ok.is_ok());
        let err = Frame::new(FrameKind::Reply, Address(1), Address(0), 0, vec![0; 127], Preamble::Normal);
        assert_eq!(err.unwrap_err(), PayloadTooLong(127));
    }

    #[test]
    fn address_filter() {
        let f = Frame::new(FrameKind::Unicast, Address(0), Address(7), 1, vec![], Preamble::Extended).unwrap();
        assert!(f.accepted_by(Address(7)));
        assert!(!f.accepted_by(Address(8)));
        let b = Frame { dst: Address::BROADCAST, ..f };
        assert!(b.accepted_by(Address(8)));
    }

    #[test]
    fn kind_round_trip() {
        for k in [
            FrameKind::Poll,
            FrameKind::Reply,
            FrameKind::Unicast,
            FrameKind::Start,
            FrameKind::Stop,
            FrameKind::Jam,
        ] {
            assert_eq!(k.as_str().parse::<FrameKind>().unwrap(), k);
        }
    }
}
