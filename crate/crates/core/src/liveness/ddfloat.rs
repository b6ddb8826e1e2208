//! Double-double arithmetic (about 32 significant digits) for evaluating
//! the loss inside the finite-difference gradient check.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar operations the LSTM forward pass needs.
pub(crate) trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_positive(self) -> bool;

    fn sigmoid(self) -> Self {
        let one = Self::from_f64(1.0);
        if self.is_positive() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }

    fn tanh(self) -> Self {
        let one = Self::from_f64(1.0);
        let (mag, neg) = if self.is_positive() { (self, false) } else { (-self, true) };
        let e = (Self::from_f64(-2.0) * mag).exp();
        let t = (one - e) / (one + e);
        if neg {
            -t
        } else {
            t
        }
    }

    /// log(1 + e^x).
    fn softplus(self) -> Self {
        let one = Self::from_f64(1.0);
        if self.is_positive() {
            self + (one + (-self).exp()).ln()
        } else {
            (one + self.exp()).ln()
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn is_positive(self) -> bool {
        self > 0.0
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DoubleDouble {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

// Dekker's product; `mul_add` is a library call without hardware FMA
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

// 1/n! for n = 1..=10 as double-doubles
const INV_FACT: [DoubleDouble; 10] = [
    DoubleDouble { hi: 1.0, lo: 0.0 },
    DoubleDouble { hi: 0.5, lo: 0.0 },
    DoubleDouble { hi: 1.666_666_666_666_666_6e-1, lo: 9.251_858_538_542_97e-18 },
    DoubleDouble { hi: 4.166_666_666_666_666_4e-2, lo: 2.312_964_634_635_742_6e-18 },
    DoubleDouble { hi: 8.333_333_333_333_333e-3, lo: 1.156_482_317_317_871_3e-19 },
    DoubleDouble { hi: 1.388_888_888_888_889e-3, lo: -5.300_543_954_373_577_5e-20 },
    DoubleDouble { hi: 1.984_126_984_126_984e-4, lo: 1.720_955_829_342_070_4e-22 },
    DoubleDouble { hi: 2.480_158_730_158_73e-5, lo: 2.151_194_786_677_588e-23 },
    DoubleDouble { hi: 2.755_731_922_398_589e-6, lo: -1.858_393_274_046_472e-22 },
    DoubleDouble { hi: 2.755_731_922_398_589e-7, lo: 2.376_771_462_225_029_4e-23 },
];

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub(crate) const fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        // sloppy addition
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = quick_two_sum(s, e + (self.lo + o.lo));
        Self { hi, lo }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * Self::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Self::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::new(q3)
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        Self::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::new(0.0);
        }
        // x = k ln2 + r, then exp(r) = exp(r / 2^10)^(2^10)
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Self::new(k)).scale_pow2(-10);
        let mut sum = INV_FACT[9];
        for c in INV_FACT[..9].iter().rev() {
            sum = sum * r + *c;
        }
        sum = sum * r + Self::new(1.0);
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        // one Newton step on exp(y) = x from the f64 logarithm
        let y = Self::new(self.hi.ln());
        y + self * (-y).exp() - Self::new(1.0)
    }

    fn is_positive(self) -> bool {
        self.hi > 0.0
    }
}
