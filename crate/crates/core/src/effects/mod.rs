//! Differentiable vocal effects chain.
//!
//! Signal flow for a mono dry input `x`:
//!
//! ```text
//! x -> 6-band EQ -> compressor -> v
//! v -> pan ------------------------------------+
//! v -> send -> ping-pong delay -> (d_l, d_r) --+--> (out_l, out_r)
//! v -> send ---+                               |
//! (d_l+d_r)/2 -> send -+-> FDN reverb ---------+
//! ```
//!
//! Every stage keeps a tape for an exact reverse-mode pass, so a loss on the
//! stereo output yields the gradient over all 130 raw parameters.

pub mod biquad;
pub mod delay;
pub mod drc;
pub mod dual;
pub mod fdn;
pub mod params;

pub use params::{map_params, neutral, ParamVector, PhysicalParams, PARAM_COUNT};

use biquad::{biquad_backward, biquad_filter, design_band, BiquadDesign};
use delay::{pingpong_backward, pingpong_forward, PingPongTape};
use drc::{drc_backward, drc_forward, DrcTape};
use fdn::{fdn_backward, fdn_forward, FdnParams, FdnTape};
use params::{
    DLY_CROSS, DLY_DAMP, DLY_FEEDBACK, DLY_TIME, DLY_WET, DLY_WIDTH, DRC_ATTACK, DRC_KNEE,
    DRC_MAKEUP, DRC_RATIO, DRC_RELEASE, DRC_THRESHOLD, FDN_ABSORB, FDN_INPUT, FDN_LINES,
    FDN_MATRIX, FDN_OUTPUT, FDN_TIME, FDN_TONE, PAN, PEQ_BANDS, PEQ_START, SEND_DELAY,
    SEND_DELAY_TO_REVERB, SEND_REVERB, TONE_BANDS,
};

/// Forward pass with everything needed for the reverse pass.
pub struct RenderTape {
    pub out_l: Vec<f64>,
    pub out_r: Vec<f64>,
    phys: PhysicalParams,
    jacobian: Vec<f64>,
    input: Vec<f64>,
    /// EQ cascade signals; entry 0 is the dry input, entry 6 feeds the DRC.
    eq_stages: Vec<Vec<f64>>,
    eq_designs: Vec<BiquadDesign>,
    drc_tape: DrcTape,
    pp_tape: PingPongTape,
    fdn_params: FdnParams,
    fdn_tape: FdnTape,
    reverb_in: Vec<f64>,
    pan_l: f64,
    pan_r: f64,
    d_pan_l: f64,
    d_pan_r: f64,
}

#[derive(Debug, Clone)]
pub struct RenderGrads {
    /// Gradient over the 130 raw parameters.
    pub raw: Vec<f64>,
    /// Gradient over the dry input samples.
    pub input: Vec<f64>,
}

/// Constant-power pan gains and their derivatives w.r.t. the position in
/// (-1, 1). Centre is exactly (1/2, 1/2); hard left silences the right.
fn pan_gains(pos: f64) -> (f64, f64, f64, f64) {
    use std::f64::consts::{FRAC_PI_4, SQRT_2};
    let phi = FRAC_PI_4 * (pos + 1.0);
    let (s, c) = phi.sin_cos();
    (
        c / SQRT_2,
        s / SQRT_2,
        -s / SQRT_2 * FRAC_PI_4,
        c / SQRT_2 * FRAC_PI_4,
    )
}

pub fn render_taped(theta: &ParamVector, input: &[f64]) -> RenderTape {
    let phys = map_params(theta);
    let jacobian = params::map_jacobian_diag(theta);

    let eq_designs: Vec<BiquadDesign> = (0..PEQ_BANDS)
        .map(|b| {
            let band = phys.peq_band(b);
            design_band(band.kind, band.freq_hz, band.gain_db, band.q)
        })
        .collect();
    let mut eq_stages = vec![input.to_vec()];
    for d in &eq_designs {
        eq_stages.push(biquad_filter(eq_stages.last().unwrap(), &d.coeffs));
    }

    let drc_tape = drc_forward(eq_stages.last().unwrap(), &phys.drc());
    let v = &drc_tape.output;

    let pp_tape = pingpong_forward(v, &phys.delay(), phys.send_delay());

    let s_rev = phys.send_reverb();
    let s_d2r = phys.send_delay_to_reverb();
    let reverb_in: Vec<f64> = (0..input.len())
        .map(|i| s_rev * v[i] + s_d2r * 0.5 * (pp_tape.out_l[i] + pp_tape.out_r[i]))
        .collect();
    let fdn_params = FdnParams::from_physical(&phys);
    let fdn_tape = fdn_forward(&reverb_in, &fdn_params);

    let (pan_l, pan_r, d_pan_l, d_pan_r) = pan_gains(phys.pan_position());
    let out_l: Vec<f64> = (0..input.len())
        .map(|i| pan_l * v[i] + pp_tape.out_l[i] + fdn_tape.out_l[i])
        .collect();
    let out_r: Vec<f64> = (0..input.len())
        .map(|i| pan_r * v[i] + pp_tape.out_r[i] + fdn_tape.out_r[i])
        .collect();

    RenderTape {
        out_l,
        out_r,
        phys,
        jacobian,
        input: input.to_vec(),
        eq_stages,
        eq_designs,
        drc_tape,
        pp_tape,
        fdn_params,
        fdn_tape,
        reverb_in,
        pan_l,
        pan_r,
        d_pan_l,
        d_pan_r,
    }
}

/// Forward pass only.
pub fn render(theta: &ParamVector, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let tape = render_taped(theta, input);
    (tape.out_l, tape.out_r)
}

impl RenderTape {
    pub fn backward(&self, grad_l: &[f64], grad_r: &[f64]) -> RenderGrads {
        let n = self.input.len();
        let phys = &self.phys;
        let v = &self.drc_tape.output;

        let fg = fdn_backward(
            &self.reverb_in,
            &self.fdn_tape,
            &self.fdn_params,
            grad_l,
            grad_r,
        );

        let s_rev = phys.send_reverb();
        let s_d2r = phys.send_delay_to_reverb();
        let mut g_dl = vec![0.0; n];
        let mut g_dr = vec![0.0; n];
        let mut g_s_d2r = 0.0;
        let mut g_s_rev = 0.0;
        for i in 0..n {
            let gr_in = fg.input[i];
            g_dl[i] = grad_l[i] + s_d2r * 0.5 * gr_in;
            g_dr[i] = grad_r[i] + s_d2r * 0.5 * gr_in;
            g_s_d2r += 0.5 * (self.pp_tape.out_l[i] + self.pp_tape.out_r[i]) * gr_in;
            g_s_rev += v[i] * gr_in;
        }

        let pg = pingpong_backward(
            v,
            &self.pp_tape,
            &phys.delay(),
            phys.send_delay(),
            &g_dl,
            &g_dr,
        );

        let mut g_v = pg.input;
        let mut g_pos = 0.0;
        for i in 0..n {
            g_v[i] += self.pan_l * grad_l[i] + self.pan_r * grad_r[i] + s_rev * fg.input[i];
            g_pos += (self.d_pan_l * grad_l[i] + self.d_pan_r * grad_r[i]) * v[i];
        }

        let dg = drc_backward(self.eq_stages.last().unwrap(), &self.drc_tape, &phys.drc(), &g_v);

        let mut g_phys = vec![0.0; PARAM_COUNT];
        let mut g_sig = dg.input;
        for b in (0..PEQ_BANDS).rev() {
            let d = &self.eq_designs[b];
            let bg = biquad_backward(&self.eq_stages[b], &self.eq_stages[b + 1], &d.coeffs, &g_sig);
            let base = PEQ_START + 3 * b;
            for k in 0..5 {
                g_phys[base] += bg.coeffs[k] * d.d_freq[k];
                g_phys[base + 1] += bg.coeffs[k] * d.d_gain[k];
                g_phys[base + 2] += bg.coeffs[k] * d.d_q[k];
            }
            g_sig = bg.input;
        }

        g_phys[DRC_THRESHOLD] = dg.threshold_db;
        g_phys[DRC_RATIO] = dg.ratio;
        g_phys[DRC_KNEE] = dg.knee_db;
        g_phys[DRC_ATTACK] = dg.attack_ms;
        g_phys[DRC_RELEASE] = dg.release_ms;
        g_phys[DRC_MAKEUP] = dg.makeup_db;

        g_phys[DLY_TIME] = pg.time_ms;
        g_phys[DLY_FEEDBACK] = pg.feedback;
        g_phys[DLY_CROSS] = pg.cross;
        g_phys[DLY_DAMP] = pg.damp_hz;
        g_phys[DLY_WET] = pg.wet;
        g_phys[DLY_WIDTH] = pg.width;

        g_phys[PAN] = g_pos;
        g_phys[SEND_DELAY] = pg.send;
        g_phys[SEND_REVERB] = g_s_rev;
        g_phys[SEND_DELAY_TO_REVERB] = g_s_d2r;

        g_phys[FDN_MATRIX..FDN_MATRIX + 36].copy_from_slice(&fg.matrix);
        for i in 0..FDN_LINES {
            g_phys[FDN_INPUT + i] = fg.input_gains[i];
            g_phys[FDN_OUTPUT + i] = fg.output_left[i];
            g_phys[FDN_OUTPUT + FDN_LINES + i] = fg.output_right[i];
            g_phys[FDN_TIME + i] = fg.times_ms[i];
            g_phys[FDN_ABSORB + 4 * i..FDN_ABSORB + 4 * i + 4].copy_from_slice(&fg.absorb[i]);
        }
        for b in 0..TONE_BANDS {
            g_phys[FDN_TONE + 3 * b..FDN_TONE + 3 * b + 3].copy_from_slice(&fg.tone[b]);
        }

        let raw = g_phys
            .iter()
            .zip(&self.jacobian)
            .map(|(g, j)| g * j)
            .collect();
        RenderGrads { raw, input: g_sig }
    }
}
