use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IntervalError {
    #[error("interval bounds out of order: [{lo}, {hi}]")]
    Reversed { lo: f64, hi: f64 },
    #[error("interval bounds must be finite")]
    NonFinite,
}

/// Closed interval `[lo, hi]` over finite reals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval", into = "RawInterval")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

#[derive(Serialize, Deserialize)]
struct RawInterval {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawInterval> for Interval {
    type Error = IntervalError;
    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        Interval::new(raw.lo, raw.hi)
    }
}

impl From<Interval> for RawInterval {
    fn from(i: Interval) -> Self {
        RawInterval { lo: i.lo, hi: i.hi }
    }
}

#[allow(clippy::should_implement_trait)]
impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(IntervalError::NonFinite);
        }
        if lo > hi {
            return Err(IntervalError::Reversed { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        debug_assert!(v.is_finite());
        Interval { lo: v, hi: v }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn midpoint(&self) -> f64 {
        self.lo + (self.hi - self.lo) / 2.0
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    /// `other ⊆ self`, allowing `slack` on each endpoint.
    pub fn encloses(&self, other: &Interval, slack: f64) -> bool {
        self.lo - slack <= other.lo && other.hi <= self.hi + slack
    }

    pub(crate) fn from_unchecked(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn add(self, rhs: Interval) -> Interval {
        Interval::from_unchecked(self.lo + rhs.lo, self.hi + rhs.hi)
    }

    pub fn sub(self, rhs: Interval) -> Interval {
        Interval::from_unchecked(self.lo - rhs.hi, self.hi - rhs.lo)
    }

    pub fn neg(self) -> Interval {
        Interval::from_unchecked(-self.hi, -self.lo)
    }

    pub fn mul(self, rhs: Interval) -> Interval {
        let p = [self.lo * rhs.lo, self.lo * rhs.hi, self.hi * rhs.lo, self.hi * rhs.hi];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::from_unchecked(lo, hi)
    }

    /// `None` when the divisor touches zero.
    pub fn div(self, rhs: Interval) -> Option<Interval> {
        if rhs.contains_zero() {
            return None;
        }
        let q = [self.lo / rhs.lo, self.lo / rhs.hi, self.hi / rhs.lo, self.hi / rhs.hi];
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Interval::from_unchecked(lo, hi))
    }

    pub fn min(self, rhs: Interval) -> Interval {
        Interval::from_unchecked(self.lo.min(rhs.lo), self.hi.min(rhs.hi))
    }

    pub fn max(self, rhs: Interval) -> Interval {
        Interval::from_unchecked(self.lo.max(rhs.lo), self.hi.max(rhs.hi))
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_reversed_and_non_finite() {
        assert!(matches!(Interval::new(2.0, 1.0), Err(IntervalError::Reversed { .. })));
        assert_eq!(Interval::new(f64::NAN, 1.0), Err(IntervalError::NonFinite));
        assert_eq!(Interval::new(0.0, f64::INFINITY), Err(IntervalError::NonFinite));
    }

    #[test]
    fn division_guard_is_strict() {
        let one = Interval::point(1.0);
        assert!(one.div(Interval::new(0.0, 2.0).unwrap()).is_none());
        assert!(one.div(Interval::new(-1.0, 1.0).unwrap()).is_none());
        assert_eq!(one.div(Interval::new(2.0, 4.0).unwrap()), Some(Interval::new(0.25, 0.5).unwrap()));
    }

    #[test]
    fn serde_enforces_order() {
        let i: Interval = serde_json::from_str(r#"{"lo":7,"hi":9}"#).unwrap();
        assert_eq!(i, Interval::new(7.0, 9.0).unwrap());
        assert!(serde_json::from_str::<Interval>(r#"{"lo":9,"hi":7}"#).is_err());
    }

    fn interval() -> impl Strategy<Value = Interval> {
        (-50.0f64..50.0, 0.0f64..20.0).prop_map(|(lo, w)| Interval::new(lo, lo + w).unwrap())
    }

    proptest! {
        #[test]
        fn ops_contain_pointwise_results(a in interval(), b in interval(), s in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let x = a.lo() + s * a.width();
            let y = b.lo() + t * b.width();
            let slack = 1e-9;
            prop_assert!(a.add(b).encloses(&Interval::point(x + y), slack));
            prop_assert!(a.sub(b).encloses(&Interval::point(x - y), slack));
            prop_assert!(a.mul(b).encloses(&Interval::point(x * y), slack));
            prop_assert!(a.min(b).encloses(&Interval::point(x.min(y)), slack));
            prop_assert!(a.max(b).encloses(&Interval::point(x.max(y)), slack));
            prop_assert!(a.neg().encloses(&Interval::point(-x), slack));
            if let Some(q) = a.div(b) {
                prop_assert!(q.encloses(&Interval::point(x / y), slack));
            }
        }
    }
}
