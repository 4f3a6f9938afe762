//! Time scalars used by the cost model and the simulator.
//!
//! Profiles store execution times as integer nanoseconds. The pipeline
//! arithmetic only needs addition, multiplication by a frame count and a
//! total order, so it is written once over [`TimeScalar`] and instantiated
//! with `u64` nanoseconds (exact) or `f32`/`f64` seconds.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, Mul};

use num_traits::Zero;

/// Integer nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

/// A duration-like scalar.
///
/// Integer implementations count nanoseconds; floating-point
/// implementations count seconds. Conversions from seconds into an integer
/// scalar round to the nearest nanosecond.
pub trait TimeScalar:
    Copy + PartialOrd + Debug + Send + Sync + Zero + Add<Output = Self> + Mul<Output = Self> + Sum
{
    fn from_nanos(ns: Nanos) -> Self;
    fn from_seconds(secs: f64) -> Self;
    /// Dimensionless multiplier, used for `(n - 1) * bottleneck`.
    fn from_count(count: u64) -> Self;
    fn to_seconds(self) -> f64;
    fn to_nanos(self) -> Nanos;

    /// Larger of two values; the left operand wins ties.
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// Seconds to nanoseconds, rounded to nearest.
pub fn seconds_to_nanos(secs: f64) -> Nanos {
    debug_assert!(secs >= 0.0 && secs.is_finite());
    (secs * NANOS_PER_SEC).round() as Nanos
}

/// Milliseconds (as written in profile files) to nanoseconds, rounded to nearest.
pub fn millis_to_nanos(ms: f64) -> Nanos {
    (ms * 1e6).round() as Nanos
}

pub fn nanos_to_millis(ns: Nanos) -> f64 {
    ns as f64 / 1e6
}

impl TimeScalar for u64 {
    fn from_nanos(ns: Nanos) -> Self {
        ns
    }

    fn from_seconds(secs: f64) -> Self {
        seconds_to_nanos(secs)
    }

    fn from_count(count: u64) -> Self {
        count
    }

    fn to_seconds(self) -> f64 {
        self as f64 / NANOS_PER_SEC
    }

    fn to_nanos(self) -> Nanos {
        self
    }
}

macro_rules! float_seconds {
    ($($t:ty),*) => {$(
        impl TimeScalar for $t {
            fn from_nanos(ns: Nanos) -> Self {
                (ns as f64 / NANOS_PER_SEC) as $t
            }

            fn from_seconds(secs: f64) -> Self {
                secs as $t
            }

            fn from_count(count: u64) -> Self {
                count as $t
            }

            fn to_seconds(self) -> f64 {
                self as f64
            }

            fn to_nanos(self) -> Nanos {
                seconds_to_nanos(self as f64)
            }
        }
    )*};
}

float_seconds!(f32, f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nanos_are_identity() {
        assert_eq!(<u64 as TimeScalar>::from_nanos(1_650_000_000), 1_650_000_000);
        assert_eq!(<u64 as TimeScalar>::from_seconds(0.1), 100_000_000);
        assert_eq!(<u64 as TimeScalar>::from_seconds(0.0025), 2_500_000);
    }

    #[test]
    fn float_seconds_convert() {
        assert_eq!(<f64 as TimeScalar>::from_nanos(500_000_000), 0.5);
        assert_eq!(1.65_f64.to_nanos(), 1_650_000_000);
        assert!((<f32 as TimeScalar>::from_nanos(250_000_000) - 0.25).abs() < 1e-7);
    }

    #[test]
    fn millis_round_trip() {
        for ms in [0.15, 2.5, 300.0, 1234.567891, 0.000001] {
            assert_eq!(nanos_to_millis(millis_to_nanos(ms)), ms);
        }
    }

    #[test]
    fn max_prefers_left_on_tie() {
        assert_eq!(3u64.max_of(3), 3);
        assert_eq!(2u64.max_of(5), 5);
    }
}
