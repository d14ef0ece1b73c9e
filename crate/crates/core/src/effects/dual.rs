//! Forward-mode dual scalar for differentiating the small closed-form maps
//! from physical parameters to filter coefficients. The audio-rate signal
//! path uses hand-written adjoints instead; duals only ever touch a handful
//! of scalars per render.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn var(v: f64) -> Self {
        Self { v, d: 1.0 }
    }

    pub fn con(v: f64) -> Self {
        Self { v, d: 0.0 }
    }

    pub fn sin(self) -> Self {
        Self {
            v: self.v.sin(),
            d: self.d * self.v.cos(),
        }
    }

    pub fn cos(self) -> Self {
        Self {
            v: self.v.cos(),
            d: -self.d * self.v.sin(),
        }
    }

    pub fn tan(self) -> Self {
        let c = self.v.cos();
        Self {
            v: self.v.tan(),
            d: self.d / (c * c),
        }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        Self { v: e, d: self.d * e }
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self {
            v: s,
            d: self.d / (2.0 * s),
        }
    }

    pub fn recip(self) -> Self {
        Self {
            v: 1.0 / self.v,
            d: -self.d / (self.v * self.v),
        }
    }

    /// `10^(self / 40)`, the shelving amplitude for a dB gain.
    pub fn db_amp40(self) -> Self {
        let ln10 = std::f64::consts::LN_10;
        let v = 10f64.powf(self.v / 40.0);
        Self {
            v,
            d: self.d * v * ln10 / 40.0,
        }
    }

    /// `10^(self / 20)`, linear gain for a dB value.
    pub fn db_amp20(self) -> Self {
        let ln10 = std::f64::consts::LN_10;
        let v = 10f64.powf(self.v / 20.0);
        Self {
            v,
            d: self.d * v * ln10 / 20.0,
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            v: -self.v,
            d: -self.d,
        }
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, s: f64) -> Dual {
        Dual {
            v: self.v * s,
            d: self.d * s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn matches_finite_differences_on_a_messy_expression() {
        let f = |x: f64| ((x.sin() * 3.0 + 1.5) / (x.cos() + 2.0)).sqrt() * (0.3 * x).exp();
        let g = |x: Dual| ((x.sin() * 3.0 + Dual::con(1.5)) / (x.cos() + Dual::con(2.0))).sqrt()
            * (x * 0.3).exp();
        for x in [0.1, 0.7, 1.9, -0.4] {
            let d = g(Dual::var(x));
            assert_relative_eq!(d.v, f(x), max_relative = 1e-12);
            assert_relative_eq!(d.d, fd(f, x), max_relative = 1e-6);
        }
    }

    #[test]
    fn db_maps() {
        let g = Dual::var(6.0).db_amp20();
        assert_relative_eq!(g.v, 10f64.powf(0.3), max_relative = 1e-12);
        assert_relative_eq!(
            g.d,
            fd(|x| 10f64.powf(x / 20.0), 6.0),
            max_relative = 1e-7
        );
    }
}
