//! Ping-pong delay: one conceptual delay of `time_ms` per hop, two storage
//! lines with cross-feedback, one-pole damping in the loop, and a width
//! control that collapses the taps toward their mono mix. Delay lines are
//! stored as full-length absolute-time arrays and read at fractional
//! positions with a windowed-sinc kernel whose frequency response barely
//! depends on the fractional part, so losses stay smooth in the delay time
//! at sub-sample resolution.

use super::params::DelayParams;
use crate::SAMPLE_RATE;

/// Interpolation taps per fractional read. Reads reach `HALF` samples past
/// `floor(pos)`, so every delay must stay above `HALF + 1` samples for the
/// feedback recursions to remain causal; the shortest mapped delay time
/// (1 ms = 44.1 samples) clears that.
pub const INTERP_TAPS: usize = 64;
const HALF: i64 = INTERP_TAPS as i64 / 2;

/// Windowed-sinc weights over taps at offsets (1 - HALF ..= HALF) from
/// `floor(pos)`, plus their derivatives w.r.t. the fractional part. The
/// Blackman window and its slope both vanish at the kernel edges, keeping
/// the read C1 in the position even as the tap grid shifts. At u = 0 the
/// kernel is an exact Kronecker delta, so integer delays are bit-exact.
pub fn sinc_kernel(u: f64) -> ([f64; INTERP_TAPS], [f64; INTERP_TAPS]) {
    use std::f64::consts::PI;
    let spu = (PI * u).sin();
    let cpu = (PI * u).cos();
    // Window phase a = pi * t / HALF at the first tap, rotated per tap.
    let step = PI / HALF as f64;
    let a0 = step * ((1 - HALF) as f64 - u);
    let (mut ca, mut sa) = (a0.cos(), a0.sin());
    let (cd, sd) = (step.cos(), step.sin());

    let mut w = [0.0; INTERP_TAPS];
    let mut dw = [0.0; INTERP_TAPS];
    for (j, (wj, dwj)) in w.iter_mut().zip(dw.iter_mut()).enumerate() {
        let k = j as i64 + 1 - HALF;
        let t = k as f64 - u;
        // sin(pi t) and cos(pi t) via the parity of k.
        let (sin_pt, cos_pt) = if k % 2 == 0 { (-spu, cpu) } else { (spu, -cpu) };
        let c2 = 2.0 * ca * ca - 1.0;
        let s2 = 2.0 * sa * ca;
        let win = 0.42 + 0.5 * ca + 0.08 * c2;
        let dwin = -step * (0.5 * sa + 0.16 * s2);
        let (snc, dsnc) = if t.abs() < 1e-6 {
            (1.0 - (PI * t) * (PI * t) / 6.0, -PI * PI * t / 3.0)
        } else {
            (sin_pt / (PI * t), (PI * t * cos_pt - sin_pt) / (PI * t * t))
        };
        *wj = win * snc;
        *dwj = -(dwin * snc + win * dsnc);

        let (ca_next, sa_next) = (ca * cd - sa * sd, sa * cd + ca * sd);
        ca = ca_next;
        sa = sa_next;
    }
    (w, dw)
}

/// Precomputed interpolation kernel for reads a fixed `delay` behind the
/// write head. The fractional part, and with it the tap weights, is the same
/// at every sample of a render, so the kernel is built once per pass and the
/// inner loops reduce to dot products.
#[derive(Debug, Clone)]
pub struct ReadKernel {
    w: [f64; INTERP_TAPS],
    dw: [f64; INTERP_TAPS],
    /// Offset of the first tap from the current write index.
    base: i64,
}

impl ReadKernel {
    pub fn for_delay(delay_samples: f64) -> Self {
        let neg = -delay_samples;
        let floor = neg.floor();
        let (w, dw) = sinc_kernel(neg - floor);
        ReadKernel {
            w,
            dw,
            base: floor as i64 + 1 - HALF,
        }
    }

    /// Interpolated value of `line` at position `t - delay`; samples before
    /// the start of time are silence.
    #[inline]
    pub fn value(&self, line: &[f64], t: usize) -> f64 {
        let base = t as i64 + self.base;
        let mut value = 0.0;
        for (j, wj) in self.w.iter().enumerate() {
            let idx = base + j as i64;
            if idx >= 0 && (idx as usize) < line.len() {
                value += wj * line[idx as usize];
            }
        }
        value
    }

    /// Value plus d(value)/d(position).
    #[inline]
    pub fn value_deriv(&self, line: &[f64], t: usize) -> (f64, f64) {
        let base = t as i64 + self.base;
        let mut value = 0.0;
        let mut deriv = 0.0;
        for j in 0..INTERP_TAPS {
            let idx = base + j as i64;
            if idx >= 0 && (idx as usize) < line.len() {
                let s = line[idx as usize];
                value += self.w[j] * s;
                deriv += self.dw[j] * s;
            }
        }
        (value, deriv)
    }

    /// Scatter a cotangent on the interpolated value back onto the line taps.
    #[inline]
    pub fn scatter(&self, grad_line: &mut [f64], t: usize, g: f64) {
        let base = t as i64 + self.base;
        for (j, wj) in self.w.iter().enumerate() {
            let idx = base + j as i64;
            if idx >= 0 && (idx as usize) < grad_line.len() {
                grad_line[idx as usize] += wj * g;
            }
        }
    }
}

/// Interpolated read of `line` at continuous position `pos`; samples before
/// the start of time are silence. Returns the value and d(value)/d(pos).
pub fn frac_read(line: &[f64], pos: f64) -> (f64, f64) {
    ReadKernel::for_delay(-pos).value_deriv(line, 0)
}

/// Scatter a cotangent on the interpolated value back onto the line taps.
pub fn frac_read_adjoint(grad_line: &mut [f64], pos: f64, g: f64) {
    ReadKernel::for_delay(-pos).scatter(grad_line, 0, g);
}

fn damp_coeff(fc: f64) -> f64 {
    (-2.0 * std::f64::consts::PI * fc / SAMPLE_RATE as f64).exp()
}

#[derive(Debug)]
pub struct PingPongTape {
    pub out_l: Vec<f64>,
    pub out_r: Vec<f64>,
    line_a: Vec<f64>,
    line_b: Vec<f64>,
    read_a: Vec<f64>,
    read_b: Vec<f64>,
    damp_a: Vec<f64>,
    damp_b: Vec<f64>,
    delay_samples: f64,
    damp: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PingPongGrads {
    pub input: Vec<f64>,
    pub send: f64,
    pub time_ms: f64,
    pub feedback: f64,
    pub cross: f64,
    pub damp_hz: f64,
    pub wet: f64,
    pub width: f64,
}

pub fn pingpong_forward(input: &[f64], p: &DelayParams, send: f64) -> PingPongTape {
    let n = input.len();
    let delay = p.time_ms * SAMPLE_RATE as f64 / 1000.0;
    let ad = damp_coeff(p.damp_hz);
    let (fb, c, wet, w) = (p.feedback, p.cross, p.wet, p.width);

    let mut line_a = vec![0.0; n];
    let mut line_b = vec![0.0; n];
    let mut read_a = vec![0.0; n];
    let mut read_b = vec![0.0; n];
    let mut damp_a = vec![0.0; n];
    let mut damp_b = vec![0.0; n];
    let mut out_l = vec![0.0; n];
    let mut out_r = vec![0.0; n];

    let kernel = ReadKernel::for_delay(delay);
    let (mut da_prev, mut db_prev) = (0.0, 0.0);
    for i in 0..n {
        let a = kernel.value(&line_a, i);
        let b = kernel.value(&line_b, i);
        read_a[i] = a;
        read_b[i] = b;
        let da = (1.0 - ad) * a + ad * da_prev;
        let db = (1.0 - ad) * b + ad * db_prev;
        damp_a[i] = da;
        damp_b[i] = db;
        da_prev = da;
        db_prev = db;

        line_a[i] = send * input[i] + fb * ((1.0 - c) * da + c * db);
        line_b[i] = fb * (c * da + (1.0 - c) * db);

        let mix = 0.5 * (a + b);
        out_l[i] = wet * (w * a + (1.0 - w) * mix);
        out_r[i] = wet * (w * b + (1.0 - w) * mix);
    }

    PingPongTape {
        out_l,
        out_r,
        line_a,
        line_b,
        read_a,
        read_b,
        damp_a,
        damp_b,
        delay_samples: delay,
        damp: ad,
    }
}

pub fn pingpong_backward(
    input: &[f64],
    tape: &PingPongTape,
    p: &DelayParams,
    send: f64,
    grad_l: &[f64],
    grad_r: &[f64],
) -> PingPongGrads {
    let n = input.len();
    let delay = tape.delay_samples;
    let ad = tape.damp;
    let (fb, c, wet, w) = (p.feedback, p.cross, p.wet, p.width);

    let mut g = PingPongGrads {
        input: vec![0.0; n],
        ..Default::default()
    };
    let mut g_read_a = vec![0.0; n];
    let mut g_read_b = vec![0.0; n];
    let mut g_line_a = vec![0.0; n];
    let mut g_line_b = vec![0.0; n];
    let mut g_delay = 0.0;
    let mut g_ad = 0.0;

    // Output mix is memoryless.
    for i in 0..n {
        let (a, b) = (tape.read_a[i], tape.read_b[i]);
        let mix = 0.5 * (a + b);
        let (gl, gr) = (grad_l[i], grad_r[i]);
        g.wet += (w * a + (1.0 - w) * mix) * gl + (w * b + (1.0 - w) * mix) * gr;
        g.width += wet * ((a - mix) * gl + (b - mix) * gr);
        g_read_a[i] += wet * (w + 0.5 * (1.0 - w)) * gl + wet * 0.5 * (1.0 - w) * gr;
        g_read_b[i] += wet * 0.5 * (1.0 - w) * gl + wet * (w + 0.5 * (1.0 - w)) * gr;
    }

    // Recurrent part, anticausal.
    let kernel = ReadKernel::for_delay(delay);
    let (mut adj_da_next, mut adj_db_next) = (0.0, 0.0);
    for i in (0..n).rev() {
        // Writes at time i.
        let (gla, glb) = (g_line_a[i], g_line_b[i]);
        let (da, db) = (tape.damp_a[i], tape.damp_b[i]);
        g.input[i] += send * gla;
        g.send += input[i] * gla;
        g.feedback += ((1.0 - c) * da + c * db) * gla + (c * da + (1.0 - c) * db) * glb;
        g.cross += fb * ((db - da) * gla + (da - db) * glb);
        let g_da_direct = fb * (1.0 - c) * gla + fb * c * glb;
        let g_db_direct = fb * c * gla + fb * (1.0 - c) * glb;

        // Damping one-pole adjoint.
        let adj_da = g_da_direct + ad * adj_da_next;
        let adj_db = g_db_direct + ad * adj_db_next;
        let da_prev = if i > 0 { tape.damp_a[i - 1] } else { 0.0 };
        let db_prev = if i > 0 { tape.damp_b[i - 1] } else { 0.0 };
        g_ad += adj_da * (da_prev - tape.read_a[i]) + adj_db * (db_prev - tape.read_b[i]);
        g_read_a[i] += (1.0 - ad) * adj_da;
        g_read_b[i] += (1.0 - ad) * adj_db;
        adj_da_next = adj_da;
        adj_db_next = adj_db;

        // Fractional reads.
        let (_, deriv_a) = kernel.value_deriv(&tape.line_a, i);
        let (_, deriv_b) = kernel.value_deriv(&tape.line_b, i);
        g_delay -= g_read_a[i] * deriv_a + g_read_b[i] * deriv_b;
        kernel.scatter(&mut g_line_a, i, g_read_a[i]);
        kernel.scatter(&mut g_line_b, i, g_read_b[i]);
    }

    g.time_ms = g_delay * SAMPLE_RATE as f64 / 1000.0;
    g.damp_hz = g_ad * (-2.0 * std::f64::consts::PI / SAMPLE_RATE as f64) * ad;
    g
}
