//! Second- and first-order IIR sections: cookbook coefficient design with
//! exact parameter Jacobians, exact-recursion filtering, and the transposed
//! (time-reversed) adjoint recursions used for reverse-mode gradients.

use super::dual::Dual;
use super::params::BandKind;
use crate::SAMPLE_RATE;

/// Normalised biquad coefficients (`a0 == 1`).
#[derive(Debug, Clone, Copy)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Coefficients plus their derivatives w.r.t. (freq_hz, gain_db, q).
#[derive(Debug, Clone, Copy)]
pub struct BiquadDesign {
    pub coeffs: BiquadCoeffs,
    pub d_freq: [f64; 5],
    pub d_gain: [f64; 5],
    pub d_q: [f64; 5],
}

fn rbj(kind: BandKind, freq: Dual, gain_db: Dual, q: Dual) -> [Dual; 6] {
    let w0 = freq * (2.0 * std::f64::consts::PI / SAMPLE_RATE as f64);
    let cosw = w0.cos();
    let sinw = w0.sin();
    let alpha = sinw / (q * 2.0);
    let a = gain_db.db_amp40();
    let one = Dual::con(1.0);
    match kind {
        BandKind::Peak => {
            let b0 = one + alpha * a;
            let b1 = -cosw * 2.0;
            let b2 = one - alpha * a;
            let a0 = one + alpha / a;
            let a1 = -cosw * 2.0;
            let a2 = one - alpha / a;
            [b0, b1, b2, a0, a1, a2]
        }
        BandKind::LowShelf => {
            let sq = a.sqrt() * 2.0 * alpha;
            let ap1 = a + one;
            let am1 = a - one;
            let b0 = a * (ap1 - am1 * cosw + sq);
            let b1 = a * (am1 - ap1 * cosw) * 2.0;
            let b2 = a * (ap1 - am1 * cosw - sq);
            let a0 = ap1 + am1 * cosw + sq;
            let a1 = -(am1 + ap1 * cosw) * 2.0;
            let a2 = ap1 + am1 * cosw - sq;
            [b0, b1, b2, a0, a1, a2]
        }
        BandKind::HighShelf => {
            let sq = a.sqrt() * 2.0 * alpha;
            let ap1 = a + one;
            let am1 = a - one;
            let b0 = a * (ap1 + am1 * cosw + sq);
            let b1 = -(a * (am1 + ap1 * cosw)) * 2.0;
            let b2 = a * (ap1 + am1 * cosw - sq);
            let a0 = ap1 - am1 * cosw + sq;
            let a1 = (am1 - ap1 * cosw) * 2.0;
            let a2 = ap1 - am1 * cosw - sq;
            [b0, b1, b2, a0, a1, a2]
        }
    }
}

fn normalised(raw: [Dual; 6]) -> [Dual; 5] {
    let a0 = raw[3];
    [raw[0] / a0, raw[1] / a0, raw[2] / a0, raw[4] / a0, raw[5] / a0]
}

/// Design one EQ band and its coefficient Jacobian.
pub fn design_band(kind: BandKind, freq_hz: f64, gain_db: f64, q: f64) -> BiquadDesign {
    let wrt = |seed: usize| {
        let mk = |v: f64, active: bool| {
            if active {
                Dual::var(v)
            } else {
                Dual::con(v)
            }
        };
        normalised(rbj(
            kind,
            mk(freq_hz, seed == 0),
            mk(gain_db, seed == 1),
            mk(q, seed == 2),
        ))
    };
    let f = wrt(0);
    let g = wrt(1);
    let qd = wrt(2);
    BiquadDesign {
        coeffs: BiquadCoeffs {
            b0: f[0].v,
            b1: f[1].v,
            b2: f[2].v,
            a1: f[3].v,
            a2: f[4].v,
        },
        d_freq: [f[0].d, f[1].d, f[2].d, f[3].d, f[4].d],
        d_gain: [g[0].d, g[1].d, g[2].d, g[3].d, g[4].d],
        d_q: [qd[0].d, qd[1].d, qd[2].d, qd[3].d, qd[4].d],
    }
}

/// Direct-form biquad with zero initial state.
pub fn biquad_filter(x: &[f64], c: &BiquadCoeffs) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for (n, &xn) in x.iter().enumerate() {
        let yn = c.b0 * xn + c.b1 * x1 + c.b2 * x2 - c.a1 * y1 - c.a2 * y2;
        y[n] = yn;
        x2 = x1;
        x1 = xn;
        y2 = y1;
        y1 = yn;
    }
    y
}

#[derive(Debug, Clone)]
pub struct BiquadGrads {
    pub input: Vec<f64>,
    /// d(loss)/d(b0, b1, b2, a1, a2)
    pub coeffs: [f64; 5],
}

/// Reverse-mode pass. `x` and `y` are the forward input/output; `grad_out`
/// is the cotangent on `y`. The all-pole adjoint runs anticausally with the
/// same coefficients.
pub fn biquad_backward(x: &[f64], y: &[f64], c: &BiquadCoeffs, grad_out: &[f64]) -> BiquadGrads {
    let n = x.len();
    let mut v = vec![0.0; n];
    let (mut v1, mut v2) = (0.0, 0.0); // v[n+1], v[n+2]
    for i in (0..n).rev() {
        let vi = grad_out[i] - c.a1 * v1 - c.a2 * v2;
        v[i] = vi;
        v2 = v1;
        v1 = vi;
    }
    let mut input = vec![0.0; n];
    for i in 0..n {
        let v0 = v[i];
        let vp1 = if i + 1 < n { v[i + 1] } else { 0.0 };
        let vp2 = if i + 2 < n { v[i + 2] } else { 0.0 };
        input[i] = c.b0 * v0 + c.b1 * vp1 + c.b2 * vp2;
    }
    let mut coeffs = [0.0; 5];
    for i in 0..n {
        let vi = v[i];
        coeffs[0] += vi * x[i];
        if i >= 1 {
            coeffs[1] += vi * x[i - 1];
            coeffs[3] -= vi * y[i - 1];
        }
        if i >= 2 {
            coeffs[2] += vi * x[i - 2];
            coeffs[4] -= vi * y[i - 2];
        }
    }
    BiquadGrads { input, coeffs }
}

/// First-order section (`a0 == 1`), used by the reverb absorption filters.
#[derive(Debug, Clone, Copy)]
pub struct FirstOrderCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
}

/// First-order shelf with DC gain `low_db`, Nyquist gain `high_db`, and the
/// transition placed at `crossover_hz` (bilinear transform). Returns the
/// coefficients and their Jacobian w.r.t. (low_db, high_db, crossover_hz).
#[derive(Debug, Clone, Copy)]
pub struct ShelfDesign {
    pub coeffs: FirstOrderCoeffs,
    pub d_low: [f64; 3],
    pub d_high: [f64; 3],
    pub d_crossover: [f64; 3],
}

fn shelf1(low_db: Dual, high_db: Dual, fc: Dual) -> [Dual; 3] {
    let g_lo = low_db.db_amp20();
    let g_hi = high_db.db_amp20();
    let t = (fc * (std::f64::consts::PI / SAMPLE_RATE as f64)).tan();
    let ti = t.recip();
    let one = Dual::con(1.0);
    let d0 = ti + one;
    let b0 = (g_hi * ti + g_lo) / d0;
    let b1 = (g_lo - g_hi * ti) / d0;
    let a1 = (one - ti) / d0;
    [b0, b1, a1]
}

pub fn design_shelf1(low_db: f64, high_db: f64, crossover_hz: f64) -> ShelfDesign {
    let wrt = |seed: usize| {
        let mk = |v: f64, active: bool| {
            if active {
                Dual::var(v)
            } else {
                Dual::con(v)
            }
        };
        shelf1(
            mk(low_db, seed == 0),
            mk(high_db, seed == 1),
            mk(crossover_hz, seed == 2),
        )
    };
    let l = wrt(0);
    let h = wrt(1);
    let c = wrt(2);
    ShelfDesign {
        coeffs: FirstOrderCoeffs {
            b0: l[0].v,
            b1: l[1].v,
            a1: l[2].v,
        },
        d_low: [l[0].d, l[1].d, l[2].d],
        d_high: [h[0].d, h[1].d, h[2].d],
        d_crossover: [c[0].d, c[1].d, c[2].d],
    }
}
