//! Signed interval domain with explicit infinities.
//!
//! Joins are hulls; there is no widening. Arithmetic that could leave
//! the 64-bit range goes straight to top, because wrapping makes widened
//! bounds unsound.

use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Bound {
    NegInf,
    Fin(i64),
    PosInf,
}

use Bound::*;

impl Bound {
    fn add(self, other: Bound) -> Option<Bound> {
        match (self, other) {
            (NegInf, PosInf) | (PosInf, NegInf) => None,
            (NegInf, _) | (_, NegInf) => Some(NegInf),
            (PosInf, _) | (_, PosInf) => Some(PosInf),
            (Fin(a), Fin(b)) => {
                let s = a as i128 + b as i128;
                if s < i64::MIN as i128 || s > i64::MAX as i128 {
                    None
                } else {
                    Some(Fin(s as i64))
                }
            }
        }
    }
}

/// A closed interval; `lo > hi` encodes the empty interval.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Interval {
    pub lo: Bound,
    pub hi: Bound,
}

impl Interval {
    pub fn point(n: i64) -> Interval {
        Interval { lo: Fin(n), hi: Fin(n) }
    }

    pub fn range(lo: i64, hi: i64) -> Interval {
        Interval { lo: Fin(lo), hi: Fin(hi) }
    }

    pub fn top() -> Interval {
        Interval { lo: NegInf, hi: PosInf }
    }

    pub fn bottom() -> Interval {
        Interval { lo: PosInf, hi: NegInf }
    }

    pub fn is_bottom(&self) -> bool {
        self.lo > self.hi
    }

    pub fn is_finite(&self) -> bool {
        !self.is_bottom() && matches!(self.lo, Fin(_)) && matches!(self.hi, Fin(_))
    }

    pub fn singleton(&self) -> Option<i64> {
        match (self.lo, self.hi) {
            (Fin(a), Fin(b)) if a == b => Some(a),
            _ => None,
        }
    }

    pub fn join(&self, other: &Interval) -> Interval {
        if self.is_bottom() {
            return *other;
        }
        if other.is_bottom() {
            return *self;
        }
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn meet(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.min(other.hi) }
    }

    pub fn add(&self, other: &Interval) -> Interval {
        if self.is_bottom() || other.is_bottom() {
            return Interval::bottom();
        }
        match (self.lo.add(other.lo), self.hi.add(other.hi)) {
            (Some(lo), Some(hi)) => Interval { lo, hi },
            _ => Interval::top(),
        }
    }

    pub fn sub(&self, other: &Interval) -> Interval {
        if self.is_bottom() || other.is_bottom() {
            return Interval::bottom();
        }
        let neg = |b: Bound| match b {
            NegInf => PosInf,
            PosInf => NegInf,
            Fin(n) => {
                if n == i64::MIN {
                    PosInf
                } else {
                    Fin(-n)
                }
            }
        };
        self.add(&Interval { lo: neg(other.hi), hi: neg(other.lo) })
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        if self.is_bottom() || other.is_bottom() {
            return Interval::bottom();
        }
        match (self.lo, self.hi, other.lo, other.hi) {
            (Fin(a), Fin(b), Fin(c), Fin(d)) => {
                let mut lo = i128::MAX;
                let mut hi = i128::MIN;
                for x in [a as i128 * c as i128, a as i128 * d as i128, b as i128 * c as i128, b as i128 * d as i128]
                {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                if lo < i64::MIN as i128 || hi > i64::MAX as i128 {
                    Interval::top()
                } else {
                    Interval::range(lo as i64, hi as i64)
                }
            }
            _ => {
                if self.singleton() == Some(0) || other.singleton() == Some(0) {
                    Interval::point(0)
                } else {
                    Interval::top()
                }
            }
        }
    }

    pub fn contains(&self, n: i64) -> bool {
        !self.is_bottom() && self.lo <= Fin(n) && Fin(n) <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        self.is_bottom() || (!other.is_bottom() && other.lo <= self.lo && self.hi <= other.hi)
    }

    /// Clamps to at least `n` (used for branch refinement).
    pub fn clamp_lo(&self, n: i64) -> Interval {
        self.meet(&Interval { lo: Fin(n), hi: PosInf })
    }

    /// Clamps to at most `n`.
    pub fn clamp_hi(&self, n: i64) -> Interval {
        self.meet(&Interval { lo: NegInf, hi: Fin(n) })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_bottom() {
            return write!(f, "[]");
        }
        match self.lo {
            NegInf => write!(f, "[-inf, ")?,
            Fin(n) => write!(f, "[{n}, ")?,
            PosInf => unreachable!(),
        }
        match self.hi {
            PosInf => write!(f, "+inf]"),
            Fin(n) => write!(f, "{n}]"),
            NegInf => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_and_meet() {
        let a = Interval::range(0, 3);
        let b = Interval::range(5, 9);
        assert_eq!(a.join(&b), Interval::range(0, 9));
        assert!(a.meet(&b).is_bottom());
        assert_eq!(a.join(&Interval::bottom()), a);
    }

    #[test]
    fn arithmetic() {
        let a = Interval::range(1, 3);
        let b = Interval::range(10, 20);
        assert_eq!(a.add(&b), Interval::range(11, 23));
        assert_eq!(b.sub(&a), Interval::range(7, 19));
        assert_eq!(a.mul(&Interval::point(-2)), Interval::range(-6, -2));
        assert_eq!(a.add(&Interval::top()), Interval::top());
    }

    #[test]
    fn overflow_goes_to_top() {
        let big = Interval::point(i64::MAX);
        assert_eq!(big.add(&Interval::point(1)), Interval::top());
        assert_eq!(big.mul(&Interval::point(2)), Interval::top());
    }

    #[test]
    fn subset_and_refinement() {
        let a = Interval::range(0, 7);
        assert!(Interval::range(2, 5).is_subset_of(&a));
        assert!(!Interval::top().is_subset_of(&a));
        assert!(Interval::bottom().is_subset_of(&a));
        assert_eq!(a.clamp_hi(4), Interval::range(0, 4));
        assert_eq!(a.clamp_lo(9).is_bottom(), true);
    }
}
