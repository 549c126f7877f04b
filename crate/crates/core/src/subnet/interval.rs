use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Closed real interval `[lo, hi]`, possibly unbounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan());
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn symmetric(r: f64) -> Self {
        Interval { lo: -r, hi: r }
    }

    pub fn everything() -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// `max(|lo|, |hi|)`.
    pub fn mag(self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn hull(self, other: Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn scale(self, a: f64) -> Interval {
        if a >= 0.0 {
            Interval { lo: a * self.lo, hi: a * self.hi }
        } else {
            Interval { lo: a * self.hi, hi: a * self.lo }
        }
    }

    /// Reciprocal of an interval that excludes zero.
    pub fn recip(self) -> Option<Interval> {
        if self.lo > 0.0 || self.hi < 0.0 {
            Some(Interval { lo: 1.0 / self.hi, hi: 1.0 / self.lo })
        } else {
            None
        }
    }

    /// Widens by a relative `frac` of its width on both sides (at least `min_pad`).
    pub fn padded(self, frac: f64, min_pad: f64) -> Interval {
        let p = (self.width() * frac).max(min_pad);
        Interval { lo: self.lo - p, hi: self.hi + p }
    }
}

impl Add for Interval {
    type Output = Interval;

    fn add(self, other: Interval) -> Interval {
        Interval { lo: self.lo + other.lo, hi: self.hi + other.hi }
    }
}

impl Sub for Interval {
    type Output = Interval;

    fn sub(self, other: Interval) -> Interval {
        Interval { lo: self.lo - other.hi, hi: self.hi - other.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;

    fn mul(self, other: Interval) -> Interval {
        let c = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi];
        let c = c.map(|v| if v.is_nan() { 0.0 } else { v });
        Interval { lo: c.iter().copied().fold(f64::INFINITY, f64::min), hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max) }
    }
}

/// Axis-aligned box as one interval per coordinate.
pub type IntervalBox = Vec<Interval>;

pub fn cube(a: f64, b: f64, d: usize) -> IntervalBox {
    vec![Interval::new(a, b); d]
}

pub fn box_hull(b: &[Interval]) -> Interval {
    b.iter().copied().reduce(Interval::hull).unwrap_or(Interval::point(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = Interval::new(-1.0, 2.0);
        let b = Interval::new(3.0, 4.0);
        assert_eq!(a + b, Interval::new(2.0, 6.0));
        assert_eq!(a - b, Interval::new(-5.0, -1.0));
        assert_eq!(a * b, Interval::new(-4.0, 8.0));
        assert_eq!(a.scale(-2.0), Interval::new(-4.0, 2.0));
        assert_eq!(b.recip().unwrap(), Interval::new(0.25, 1.0 / 3.0));
        assert!(a.recip().is_none());
        assert_eq!(a.mag(), 2.0);
    }

    #[test]
    fn unbounded_products_stay_sane() {
        let z = Interval::point(0.0);
        let inf = Interval::everything();
        assert_eq!(z * inf, Interval::point(0.0));
    }
}
