//! Learning-rate policies.
//!
//! `lr_at` evaluates in double-double arithmetic (about 106 significant bits)
//! and rounds once at the end, so results are within one unit in the last
//! place of the exact value for the given `f64` parameters.

use serde::Deserialize;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrKind {
    Fixed,
    Step,
    Inv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrPolicy {
    pub kind: LrKind,
    pub base_lr: f64,
    pub gamma: f64,
    pub step_size: u64,
    pub power: f64,
}

impl LrPolicy {
    pub fn fixed(base_lr: f64) -> Self {
        Self {
            kind: LrKind::Fixed,
            base_lr,
            gamma: 0.0,
            step_size: 0,
            power: 0.0,
        }
    }

    pub fn step(base_lr: f64, gamma: f64, step_size: u64) -> Self {
        Self {
            kind: LrKind::Step,
            base_lr,
            gamma,
            step_size,
            power: 0.0,
        }
    }

    pub fn inv(base_lr: f64, gamma: f64, power: f64) -> Self {
        Self {
            kind: LrKind::Inv,
            base_lr,
            gamma,
            step_size: 0,
            power,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        match self.kind {
            LrKind::Fixed => {}
            LrKind::Step => {
                if self.step_size == 0 {
                    return bad("step policy needs step_size >= 1".into());
                }
                if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                    return bad(format!("step policy needs gamma > 0, got {}", self.gamma));
                }
            }
            LrKind::Inv => {
                if !(self.power > 0.0 && self.power.is_finite()) {
                    return bad(format!("inv policy needs power > 0, got {}", self.power));
                }
                if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
                    return bad(format!("inv policy needs gamma >= 0, got {}", self.gamma));
                }
            }
        }
        Ok(())
    }
}

/// `fixed`: `base_lr`; `step`: `base_lr * gamma^floor(iter / step_size)`;
/// `inv`: `base_lr * (1 + gamma * iter)^(-power)`.
pub fn lr_at(policy: &LrPolicy, iter: u64) -> f64 {
    match policy.kind {
        LrKind::Fixed => policy.base_lr,
        LrKind::Step => {
            let n = iter / policy.step_size.max(1);
            Dd::from(policy.gamma)
                .powi(n)
                .mul_f64(policy.base_lr)
                .round()
        }
        LrKind::Inv => {
            if iter == 0 || policy.gamma == 0.0 {
                return policy.base_lr;
            }
            let (p, pe) = two_prod(policy.gamma, iter as f64);
            let x = Dd::from(1.0).add(Dd::new(p, pe));
            x.ln()
                .mul_f64(-policy.power)
                .exp()
                .mul_f64(policy.base_lr)
                .round()
        }
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
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

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Dd {
    fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn round(self) -> f64 {
        self.hi + self.lo
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::new(s, e + f)
    }

    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::new(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::new(p, e + self.lo * b)
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let (p, e) = two_prod(q1, b);
        let r = (self.hi - p - e + self.lo) / b;
        Dd::new(q1, r)
    }

    fn scale(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn powi(self, mut n: u64) -> Dd {
        let mut acc = Dd::from(1.0);
        let mut base = self;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(base);
            }
        }
        acc
    }

    fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::from(0.0);
        }
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN2.hi).round();
        let r = self.add(LN2.mul_f64(-k)).scale(-SQUARINGS);
        // expm1(r) by Taylor series; |r| < 4e-4 so 10 terms reach ~1e-40.
        let mut term = r;
        let mut sum = r;
        for i in 2..=10 {
            term = term.mul(r).div_f64(i as f64);
            sum = sum.add(term);
        }
        // expm1(2r) = 2 expm1(r) + expm1(r)^2
        for _ in 0..SQUARINGS {
            sum = sum.scale(1).add(sum.mul(sum));
        }
        sum.add(Dd::from(1.0)).scale(k as i32)
    }

    fn ln(self) -> Dd {
        // One Newton step on exp(y) = x from the f64 estimate.
        let y0 = Dd::from(self.hi.ln());
        let t = self.mul(Dd::from(-self.hi.ln()).exp()).add(Dd::from(-1.0));
        y0.add(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(lr_at(&LrPolicy::fixed(0.001), 123_456), 0.001);
        let s = LrPolicy::step(0.001, 0.1, 20_000);
        assert_eq!(lr_at(&s, 0), 0.001);
        assert_eq!(lr_at(&s, 19_999), 0.001);
        assert_eq!(lr_at(&s, 20_000), 1e-4);
        assert_eq!(lr_at(&s, 40_000), 1e-5);
        let inv = LrPolicy::inv(0.01, 1e-5, 0.75);
        assert_eq!(lr_at(&inv, 0), 0.01);
        let want = 0.01 * 2f64.powf(-0.75);
        assert!((lr_at(&inv, 100_000) - want).abs() < 1e-17);
    }

    #[test]
    fn dd_exp_and_ln() {
        for x in [1e-3, 0.5, 1.0, 2.0, 10.0, 1e6] {
            let l = Dd::from(x).ln();
            assert!((l.round() - x.ln()).abs() <= x.ln().abs() * 2.3e-16, "{x}");
            let back = l.exp();
            assert!((back.round() - x).abs() <= x * 2.3e-16, "{x}");
        }
        assert_eq!(Dd::from(0.0).exp().round(), 1.0);
    }

    #[test]
    fn validation() {
        assert!(LrPolicy::fixed(0.0).validate().is_err());
        assert!(LrPolicy::step(0.1, 0.1, 0).validate().is_err());
        assert!(LrPolicy::inv(0.1, 1e-4, 0.0).validate().is_err());
        assert!(LrPolicy::inv(0.1, 1e-4, 0.75).validate().is_ok());
    }

    proptest! {
        #[test]
        fn step_is_piecewise_constant(step in 1u64..1000, k in 0u64..20, off in 0u64..1000) {
            let p = LrPolicy::step(0.01, 0.5, step);
            let off = off % step;
            prop_assert_eq!(lr_at(&p, k * step + off), lr_at(&p, k * step));
            prop_assert!(lr_at(&p, (k + 1) * step) < lr_at(&p, k * step + off));
        }

        #[test]
        fn inv_is_decreasing(gamma in 1e-6f64..1e-2, power in 0.1f64..2.0, iter in 0u64..1_000_000) {
            let p = LrPolicy::inv(0.01, gamma, power);
            prop_assert!(lr_at(&p, iter + 1) < lr_at(&p, iter));
        }
    }
}
