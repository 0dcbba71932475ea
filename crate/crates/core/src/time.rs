use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Virtual time in integer picoseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    /// Converts a decimal nanosecond string such as `"1.2"` without going through
    /// floating point. At most three fractional digits are accepted.
    pub fn parse_ns(text: &str) -> Option<Self> {
        let text = text.trim();
        let (int, frac) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if int.is_empty() && frac.is_empty() || frac.len() > 3 {
            return None;
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let mut frac_ps = 0u64;
        for (i, c) in frac.chars().enumerate() {
            let d = c.to_digit(10)? as u64;
            frac_ps += d * 10u64.pow(2 - i as u32);
        }
        int.checked_mul(1_000)?.checked_add(frac_ps).map(SimTime)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    pub fn as_ns<F: Scalar>(self) -> F {
        F::from_u64(self.0).unwrap_or_else(F::infinity) / F::lit(1_000.0)
    }

    pub fn as_secs<F: Scalar>(self) -> F {
        F::from_u64(self.0).unwrap_or_else(F::infinity) / F::lit(1.0e12)
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    /// Always rendered in nanoseconds with picosecond resolution.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03} ns", self.0 / 1_000, self.0 % 1_000)
    }
}
