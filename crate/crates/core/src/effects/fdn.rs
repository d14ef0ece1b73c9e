//! Feedback delay network reverb: six fractional delay lines, per-line
//! absorption (first-order shelf plus broadband trim), a dense feedback
//! matrix rescaled to spectral norm 0.999 so the loop cannot blow up, stereo
//! output taps, and a four-band tone EQ on the return.

use nalgebra::Matrix6;

use super::biquad::{
    biquad_backward, biquad_filter, design_band, design_shelf1, BiquadDesign, ShelfDesign,
};
use super::delay::ReadKernel;
use super::params::{AbsorbParams, EqBand};
use crate::SAMPLE_RATE;

pub const FDN_ORDER: usize = 6;
const NORM_TARGET: f64 = 0.999;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FdnParams {
    /// Row-major feedback matrix before spectral-norm rescaling.
    pub matrix: Vec<f64>,
    pub input_gains: [f64; FDN_ORDER],
    pub output_left: [f64; FDN_ORDER],
    pub output_right: [f64; FDN_ORDER],
    pub times_ms: [f64; FDN_ORDER],
    pub absorb: [AbsorbParams; FDN_ORDER],
    pub tone: [EqBand; 4],
}

impl FdnParams {
    pub fn from_physical(phys: &super::params::PhysicalParams) -> Self {
        FdnParams {
            matrix: phys.fdn_matrix().to_vec(),
            input_gains: std::array::from_fn(|i| phys.fdn_input()[i]),
            output_left: std::array::from_fn(|i| phys.fdn_output_left()[i]),
            output_right: std::array::from_fn(|i| phys.fdn_output_right()[i]),
            times_ms: std::array::from_fn(|i| phys.fdn_times_ms()[i]),
            absorb: std::array::from_fn(|i| phys.fdn_absorb(i)),
            tone: std::array::from_fn(|b| phys.tone_band(b)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdnGrads {
    pub input: Vec<f64>,
    pub matrix: Vec<f64>,
    pub input_gains: [f64; FDN_ORDER],
    pub output_left: [f64; FDN_ORDER],
    pub output_right: [f64; FDN_ORDER],
    pub times_ms: [f64; FDN_ORDER],
    /// Per line: d/d(low_db, high_db, crossover_hz, gain_db).
    pub absorb: [[f64; 4]; FDN_ORDER],
    /// Per band: d/d(freq_hz, gain_db, q).
    pub tone: [[f64; 3]; 4],
}

#[derive(Debug)]
pub struct FdnTape {
    pub out_l: Vec<f64>,
    pub out_r: Vec<f64>,
    reads: [Vec<f64>; FDN_ORDER],
    shelf_out: [Vec<f64>; FDN_ORDER],
    lines: [Vec<f64>; FDN_ORDER],
    /// Tone cascade signals per channel: entry 0 is the raw tap mix, entry k
    /// the output of band k-1; entry 4 equals the block output.
    stages_l: Vec<Vec<f64>>,
    stages_r: Vec<Vec<f64>>,
    q: Vec<f64>,
    sigma: f64,
    u1: [f64; FDN_ORDER],
    v1: [f64; FDN_ORDER],
    shelves: [ShelfDesign; FDN_ORDER],
    tone_designs: [BiquadDesign; 4],
    delays: [f64; FDN_ORDER],
}

/// Largest singular value with its singular vector pair.
fn spectral_norm(mat: &[f64]) -> (f64, [f64; FDN_ORDER], [f64; FDN_ORDER]) {
    let m = Matrix6::from_fn(|r, c| mat[r * FDN_ORDER + c]);
    let svd = m.svd(true, true);
    let mut k = 0;
    for i in 1..FDN_ORDER {
        if svd.singular_values[i] > svd.singular_values[k] {
            k = i;
        }
    }
    let sigma = svd.singular_values[k];
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let mut u1 = [0.0; FDN_ORDER];
    let mut v1 = [0.0; FDN_ORDER];
    for i in 0..FDN_ORDER {
        u1[i] = u[(i, k)];
        v1[i] = v_t[(k, i)];
    }
    (sigma, u1, v1)
}

fn shelf_design_for(a: &AbsorbParams) -> ShelfDesign {
    // The broadband trim is a common factor of both shelf gains.
    design_shelf1(
        a.low_db + a.gain_db,
        a.high_db + a.gain_db,
        a.crossover_hz,
    )
}

pub fn fdn_forward(input: &[f64], p: &FdnParams) -> FdnTape {
    let n = input.len();
    let (sigma, u1, v1) = spectral_norm(&p.matrix);
    let scale = NORM_TARGET / (sigma + NORM_EPS);
    let q: Vec<f64> = p.matrix.iter().map(|m| m * scale).collect();

    let shelves: [ShelfDesign; FDN_ORDER] =
        std::array::from_fn(|i| shelf_design_for(&p.absorb[i]));
    let delays: [f64; FDN_ORDER] =
        std::array::from_fn(|i| p.times_ms[i] * SAMPLE_RATE as f64 / 1000.0);

    let mut reads: [Vec<f64>; FDN_ORDER] = std::array::from_fn(|_| vec![0.0; n]);
    let mut shelf_out: [Vec<f64>; FDN_ORDER] = std::array::from_fn(|_| vec![0.0; n]);
    let mut lines: [Vec<f64>; FDN_ORDER] = std::array::from_fn(|_| vec![0.0; n]);
    let mut pre_l = vec![0.0; n];
    let mut pre_r = vec![0.0; n];
    let kernels: [ReadKernel; FDN_ORDER] = std::array::from_fn(|i| ReadKernel::for_delay(delays[i]));
    let mut r_prev = [0.0; FDN_ORDER];
    let mut so_prev = [0.0; FDN_ORDER];

    for t in 0..n {
        let mut so = [0.0; FDN_ORDER];
        for i in 0..FDN_ORDER {
            let r = kernels[i].value(&lines[i], t);
            reads[i][t] = r;
            let c = shelves[i].coeffs;
            let s = c.b0 * r + c.b1 * r_prev[i] - c.a1 * so_prev[i];
            shelf_out[i][t] = s;
            so[i] = s;
            pre_l[t] += p.output_left[i] * r;
            pre_r[t] += p.output_right[i] * r;
        }
        for i in 0..FDN_ORDER {
            let mut m = 0.0;
            for j in 0..FDN_ORDER {
                m += q[i * FDN_ORDER + j] * so[j];
            }
            lines[i][t] = p.input_gains[i] * input[t] + m;
        }
        for i in 0..FDN_ORDER {
            r_prev[i] = reads[i][t];
            so_prev[i] = so[i];
        }
    }

    let tone_designs: [BiquadDesign; 4] =
        std::array::from_fn(|b| design_band(p.tone[b].kind, p.tone[b].freq_hz, p.tone[b].gain_db, p.tone[b].q));
    let mut stages_l = vec![pre_l];
    let mut stages_r = vec![pre_r];
    for d in &tone_designs {
        stages_l.push(biquad_filter(stages_l.last().unwrap(), &d.coeffs));
        stages_r.push(biquad_filter(stages_r.last().unwrap(), &d.coeffs));
    }

    FdnTape {
        out_l: stages_l[4].clone(),
        out_r: stages_r[4].clone(),
        reads,
        shelf_out,
        lines,
        stages_l,
        stages_r,
        q,
        sigma,
        u1,
        v1,
        shelves,
        tone_designs,
        delays,
    }
}

pub fn fdn_backward(
    input: &[f64],
    tape: &FdnTape,
    p: &FdnParams,
    grad_l: &[f64],
    grad_r: &[f64],
) -> FdnGrads {
    let n = input.len();
    let mut g = FdnGrads {
        input: vec![0.0; n],
        matrix: vec![0.0; FDN_ORDER * FDN_ORDER],
        input_gains: [0.0; FDN_ORDER],
        output_left: [0.0; FDN_ORDER],
        output_right: [0.0; FDN_ORDER],
        times_ms: [0.0; FDN_ORDER],
        absorb: [[0.0; 4]; FDN_ORDER],
        tone: [[0.0; 3]; 4],
    };

    // Tone cascade, both channels share coefficients.
    let mut tone_coeff_grads = [[0.0; 5]; 4];
    let mut g_pre_l = grad_l.to_vec();
    let mut g_pre_r = grad_r.to_vec();
    for b in (0..4).rev() {
        let c = &tape.tone_designs[b].coeffs;
        let bl = biquad_backward(&tape.stages_l[b], &tape.stages_l[b + 1], c, &g_pre_l);
        let br = biquad_backward(&tape.stages_r[b], &tape.stages_r[b + 1], c, &g_pre_r);
        for k in 0..5 {
            tone_coeff_grads[b][k] = bl.coeffs[k] + br.coeffs[k];
        }
        g_pre_l = bl.input;
        g_pre_r = br.input;
    }
    for b in 0..4 {
        let d = &tape.tone_designs[b];
        for k in 0..5 {
            g.tone[b][0] += tone_coeff_grads[b][k] * d.d_freq[k];
            g.tone[b][1] += tone_coeff_grads[b][k] * d.d_gain[k];
            g.tone[b][2] += tone_coeff_grads[b][k] * d.d_q[k];
        }
    }

    // Recirculating part, anticausal in time.
    let kernels: [ReadKernel; FDN_ORDER] =
        std::array::from_fn(|i| ReadKernel::for_delay(tape.delays[i]));
    let mut g_lines: [Vec<f64>; FDN_ORDER] = std::array::from_fn(|_| vec![0.0; n]);
    let mut g_q = vec![0.0; FDN_ORDER * FDN_ORDER];
    let mut g_delay = [0.0; FDN_ORDER];
    let mut shelf_coeff_grads = [[0.0; 3]; FDN_ORDER]; // d/d(b0, b1, a1)
    let mut v_next = [0.0; FDN_ORDER];

    for t in (0..n).rev() {
        // Line writes at t: lines[i][t] = b_i * x[t] + sum_j q_ij so_j[t].
        let mut g_so = [0.0; FDN_ORDER];
        for i in 0..FDN_ORDER {
            let gl = g_lines[i][t];
            g.input[t] += p.input_gains[i] * gl;
            g.input_gains[i] += input[t] * gl;
            for j in 0..FDN_ORDER {
                g_q[i * FDN_ORDER + j] += gl * tape.shelf_out[j][t];
                g_so[j] += tape.q[i * FDN_ORDER + j] * gl;
            }
        }
        // Shelf one-pole adjoints and read cotangents.
        for i in 0..FDN_ORDER {
            let c = tape.shelves[i].coeffs;
            let v = g_so[i] - c.a1 * v_next[i];
            let mut g_r = c.b0 * v + c.b1 * v_next[i];
            shelf_coeff_grads[i][0] += v * tape.reads[i][t];
            if t > 0 {
                shelf_coeff_grads[i][1] += v * tape.reads[i][t - 1];
                shelf_coeff_grads[i][2] -= v * tape.shelf_out[i][t - 1];
            }
            v_next[i] = v;

            g_r += p.output_left[i] * g_pre_l[t] + p.output_right[i] * g_pre_r[t];
            g.output_left[i] += tape.reads[i][t] * g_pre_l[t];
            g.output_right[i] += tape.reads[i][t] * g_pre_r[t];

            let (_, deriv) = kernels[i].value_deriv(&tape.lines[i], t);
            g_delay[i] -= g_r * deriv;
            kernels[i].scatter(&mut g_lines[i], t, g_r);
        }
    }

    // Spectral-norm rescale: Q = k M / (sigma + eps). The sigma path pulls
    // along the top singular direction.
    let scale = NORM_TARGET / (tape.sigma + NORM_EPS);
    let mut inner = 0.0;
    for k in 0..FDN_ORDER * FDN_ORDER {
        inner += g_q[k] * p.matrix[k];
    }
    let sigma_coeff = inner * NORM_TARGET / ((tape.sigma + NORM_EPS) * (tape.sigma + NORM_EPS));
    for i in 0..FDN_ORDER {
        for j in 0..FDN_ORDER {
            g.matrix[i * FDN_ORDER + j] =
                scale * g_q[i * FDN_ORDER + j] - sigma_coeff * tape.u1[i] * tape.v1[j];
        }
    }

    for i in 0..FDN_ORDER {
        let d = &tape.shelves[i];
        let mut g_low = 0.0;
        let mut g_high = 0.0;
        let mut g_fc = 0.0;
        for k in 0..3 {
            g_low += shelf_coeff_grads[i][k] * d.d_low[k];
            g_high += shelf_coeff_grads[i][k] * d.d_high[k];
            g_fc += shelf_coeff_grads[i][k] * d.d_crossover[k];
        }
        g.absorb[i] = [g_low, g_high, g_fc, g_low + g_high];
        g.times_ms[i] = g_delay[i] * SAMPLE_RATE as f64 / 1000.0;
    }
    g
}
