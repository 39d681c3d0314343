//! Double-double (compensated) arithmetic.
//!
//! The pathwise power identities compare two algebraically equal expressions
//! whose terms can be orders of magnitude larger than the result. Carrying
//! ~32 significant digits through the accumulation keeps the comparison
//! meaningful even on paths where the additive functional nearly cancels.

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    #[inline]
    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    #[inline]
    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn mul_f64(self, x: f64) -> Dd {
        self.mul(Dd::from_f64(x))
    }

    /// Integer power by repeated multiplication (exponents stay tiny here).
    pub fn powi(self, n: u32) -> Dd {
        let mut acc = Dd::from_f64(1.0);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_recovers_cancelled_bits() {
        // (1 + 1e-18) - 1 is lost in f64 but preserved in Dd.
        let a = Dd::from_f64(1.0).add(Dd::from_f64(1e-18));
        let d = a.sub(Dd::from_f64(1.0));
        assert!((d.to_f64() - 1e-18).abs() < 1e-30);
    }

    #[test]
    fn product_error_term() {
        let a = Dd::from_f64(1.0 + 2f64.powi(-30));
        let sq = a.mul(a);
        let expected = 1.0 + 2.0 * 2f64.powi(-30) + 2f64.powi(-60);
        assert!((sq.to_f64() - expected).abs() < 1e-25);
    }

    #[test]
    fn powi_matches_direct() {
        let a = Dd::from_f64(-0.2);
        assert!((a.powi(3).to_f64() + 0.008).abs() < 1e-18);
    }
}
