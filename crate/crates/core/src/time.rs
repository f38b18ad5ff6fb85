//! Integer microsecond virtual time.
//!
//! Every timing constant of the protocol (5 ms back-off, 4.7 ms sleep,
//! 0.2 ms sniff, 11.75 s run window) is a whole number of microseconds, so
//! the simulation clock is a plain `u64` tick counter.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Absolute virtual time in microseconds since simulation start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

/// A span of virtual time in microseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Duration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    /// Time elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration(self.0.saturating_sub(earlier.0))
    }
}

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_us(us: u64) -> Self {
        Duration(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        Duration(ms * 1_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = Duration;

    /// Panics on negative spans; use [`SimTime::since`] when the order is
    /// not known.
    fn sub(self, rhs: SimTime) -> Duration {
        Duration(
            self.0
                .checked_sub(rhs.0)
                .expect("negative time span between SimTime values"),
        )
    }
}

impl Add for Duration {
    type Output = Duration;

    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_constants_are_exact() {
        assert_eq!(Duration::from_ms(5).as_us(), 5_000);
        assert_eq!(Duration::from_us(4_700) + Duration::from_us(200), Duration::from_us(4_900));
        assert_eq!(SimTime::from_ms(11_750).as_us(), 11_750_000);
    }

    #[test]
    fn since_saturates() {
        let a = SimTime::from_us(10);
        let b = SimTime::from_us(3);
        assert_eq!(a.since(b), Duration::from_us(7));
        assert_eq!(b.since(a), Duration::ZERO);
        assert_eq!(a - b, Duration::from_us(7));
    }
}
