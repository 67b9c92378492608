use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// A point in simulated time, in integer microseconds since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VirtualTime(u64);

/// A span of simulated time in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Duration(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub const fn from_micros(us: u64) -> Self {
        VirtualTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * 1_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    /// Time elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: VirtualTime) -> Duration {
        Duration(self.0.saturating_sub(earlier.0))
    }

    /// Smallest multiple of `period` (shifted by `phase`) that is `>= self`.
    pub fn ceil_to(self, period: Duration, phase: Duration) -> VirtualTime {
        let p = period.0.max(1);
        let ph = phase.0 % p;
        if self.0 <= ph {
            return VirtualTime(ph);
        }
        let k = (self.0 - ph).div_ceil(p);
        VirtualTime(ph + k * p)
    }

    /// Largest multiple of `period` that is `<= self`.
    pub fn floor_to(self, period: Duration) -> VirtualTime {
        let p = period.0.max(1);
        VirtualTime(self.0 / p * p)
    }
}

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_micros(us: u64) -> Self {
        Duration(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        Duration(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        Duration(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_sub(self, other: Duration) -> Duration {
        Duration(self.0.saturating_sub(other.0))
    }
}

impl Add<Duration> for VirtualTime {
    type Output = VirtualTime;
    fn add(self, rhs: Duration) -> VirtualTime {
        VirtualTime(self.0 + rhs.0)
    }
}

impl AddAssign<Duration> for VirtualTime {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub<VirtualTime> for VirtualTime {
    type Output = Duration;
    fn sub(self, rhs: VirtualTime) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl AddAssign for Duration {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

impl Sub for Duration {
    type Output = Duration;
    fn sub(self, rhs: Duration) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let us = self.0;
        if us != 0 && us % 1_000_000 == 0 {
            write!(f, "{}s", us / 1_000_000)
        } else if us != 0 && us % 1_000 == 0 {
            write!(f, "{}ms", us / 1_000)
        } else {
            write!(f, "{}us", us)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_to_guest_tick() {
        let tick = Duration::from_millis(1);
        assert_eq!(
            VirtualTime::from_micros(9_800).ceil_to(tick, Duration::ZERO),
            VirtualTime::from_micros(10_000)
        );
        assert_eq!(
            VirtualTime::from_micros(10_000).ceil_to(tick, Duration::ZERO),
            VirtualTime::from_micros(10_000)
        );
        assert_eq!(
            VirtualTime::from_micros(9_800).ceil_to(tick, Duration::from_micros(300)),
            VirtualTime::from_micros(10_300)
        );
        assert_eq!(
            VirtualTime::from_micros(100).ceil_to(tick, Duration::from_micros(300)),
            VirtualTime::from_micros(300)
        );
    }

    #[test]
    fn duration_display_picks_largest_unit() {
        assert_eq!(Duration::from_millis(30).to_string(), "30ms");
        assert_eq!(Duration::from_secs(60).to_string(), "60s");
        assert_eq!(Duration::from_micros(9_050).to_string(), "9050us");
        assert_eq!(Duration::ZERO.to_string(), "0us");
    }
}
