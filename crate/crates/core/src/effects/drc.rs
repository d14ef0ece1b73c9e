//! Feed-forward dynamic range compressor. Level detection runs in the dB
//! domain on a squared-sample floor, ballistics are a one-pole smoother whose
//! attack/release coefficient is blended through a sigmoid of the level step
//! (so the whole block stays smooth in every parameter), and the gain
//! computer is a quadratic soft knee.

use super::params::DrcParams;
use crate::SAMPLE_RATE;

/// Power floor inside the level detector, about -160 dBFS.
const DETECTOR_FLOOR: f64 = 1e-16;
/// Sharpness (per dB) of the attack/release blend.
const BLEND_K: f64 = 2.0;

const LN10_OVER_20: f64 = std::f64::consts::LN_10 / 20.0;

#[derive(Debug)]
pub struct DrcTape {
    pub output: Vec<f64>,
    level_db: Vec<f64>,
    smoothed: Vec<f64>,
    blend: Vec<f64>,
    mult: Vec<f64>,
    a_att: f64,
    a_rel: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DrcGrads {
    pub input: Vec<f64>,
    pub threshold_db: f64,
    pub ratio: f64,
    pub knee_db: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub makeup_db: f64,
}

fn smoothing_coeff(ms: f64) -> f64 {
    (-1000.0 / (SAMPLE_RATE as f64 * ms)).exp()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft-knee gain computer: dB of gain reduction for an overshoot `o` above
/// threshold, with slope `c = 1/ratio - 1`.
fn knee_gain_db(o: f64, c: f64, knee: f64) -> f64 {
    if o <= -0.5 * knee {
        0.0
    } else if o < 0.5 * knee {
        let t = o + 0.5 * knee;
        c * t * t / (2.0 * knee)
    } else {
        c * o
    }
}

pub fn drc_forward(input: &[f64], p: &DrcParams) -> DrcTape {
    let n = input.len();
    let a_att = smoothing_coeff(p.attack_ms);
    let a_rel = smoothing_coeff(p.release_ms);
    let c = 1.0 / p.ratio - 1.0;

    let mut level_db = vec![0.0; n];
    let mut smoothed = vec![0.0; n];
    let mut blend = vec![0.0; n];
    let mut mult = vec![0.0; n];
    let mut output = vec![0.0; n];

    let mut ls_prev = if n > 0 {
        10.0 * (input[0] * input[0] + DETECTOR_FLOOR).log10()
    } else {
        0.0
    };
    for i in 0..n {
        let u = input[i];
        let l = 10.0 * (u * u + DETECTOR_FLOOR).log10();
        level_db[i] = l;
        let delta = l - ls_prev;
        let s = sigmoid(BLEND_K * delta);
        blend[i] = s;
        let a = a_rel + (a_att - a_rel) * s;
        let ls = ls_prev + (1.0 - a) * delta;
        smoothed[i] = ls;
        ls_prev = ls;

        let gdb = knee_gain_db(ls - p.threshold_db, c, p.knee_db);
        let m = (LN10_OVER_20 * (gdb + p.makeup_db)).exp();
        mult[i] = m;
        output[i] = u * m;
    }

    DrcTape {
        output,
        level_db,
        smoothed,
        blend,
        mult,
        a_att,
        a_rel,
    }
}

pub fn drc_backward(
    input: &[f64],
    tape: &DrcTape,
    p: &DrcParams,
    grad_out: &[f64],
) -> DrcGrads {
    let n = input.len();
    let c = 1.0 / p.ratio - 1.0;
    let knee = p.knee_db;
    let mut g = DrcGrads {
        input: vec![0.0; n],
        ..Default::default()
    };
    let mut g_level = vec![0.0; n];
    let mut g_ls_ext = vec![0.0; n];
    let mut g_c = 0.0;
    let mut g_a_att = 0.0;
    let mut g_a_rel = 0.0;

    // Gain computer and multiplicative application.
    for i in 0..n {
        let gy = grad_out[i];
        let m = tape.mult[i];
        g.input[i] += m * gy;
        let g_gtot = input[i] * gy * m * LN10_OVER_20;
        g.makeup_db += g_gtot;
        let o = tape.smoothed[i] - p.threshold_db;
        let g_o;
        if o <= -0.5 * knee {
            g_o = 0.0;
        } else if o < 0.5 * knee {
            let t = o + 0.5 * knee;
            g_o = g_gtot * c * t / knee;
            g_c += g_gtot * t * t / (2.0 * knee);
            g.knee_db += g_gtot * c * t * (knee - t) / (2.0 * knee * knee);
        } else {
            g_o = g_gtot * c;
            g_c += g_gtot * o;
        }
        g.threshold_db -= g_o;
        g_ls_ext[i] = g_o;
    }

    // Detector smoother, anticausal.
    let (a_att, a_rel) = (tape.a_att, tape.a_rel);
    let mut carry = 0.0;
    for i in (0..n).rev() {
        let g_ls = g_ls_ext[i] + carry;
        let ls_prev = if i > 0 {
            tape.smoothed[i - 1]
        } else {
            tape.level_db[0]
        };
        let delta = tape.level_db[i] - ls_prev;
        let s = tape.blend[i];
        let a = a_rel + (a_att - a_rel) * s;
        let dls_ddelta = (1.0 - a) - delta * (a_att - a_rel) * BLEND_K * s * (1.0 - s);
        g_level[i] += g_ls * dls_ddelta;
        g_a_att += g_ls * (-delta) * s;
        g_a_rel += g_ls * (-delta) * (1.0 - s);
        carry = g_ls * (1.0 - dls_ddelta);
    }
    // Initial state was pinned to the first level sample.
    if n > 0 {
        g_level[0] += carry;
    }

    // Level detector into the input samples.
    for i in 0..n {
        let u = input[i];
        g.input[i] += g_level[i] * (20.0 / std::f64::consts::LN_10) * u / (u * u + DETECTOR_FLOOR);
    }

    g.ratio = g_c * (-1.0 / (p.ratio * p.ratio));
    let fs = SAMPLE_RATE as f64;
    g.attack_ms = g_a_att * a_att * 1000.0 / (fs * p.attack_ms * p.attack_ms);
    g.release_ms = g_a_rel * a_rel * 1000.0 / (fs * p.release_ms * p.release_ms);
    g
}
