//! MFCC-statistics encoder: 2048-sample Hann frames at 50% overlap, power
//! spectrum, 128-band mel filterbank, floored log, orthonormal DCT-II keeping
//! 25 coefficients, temporal statistics pooling, L2 normalisation.

use rustfft::num_complex::Complex;

use crate::dsp::{dct_ii_matrix, MelBank, MEL_BANDS, MFCC_COEFFS};
use crate::dsp::{stft, stft_adjoint, Stft, StftConfig};
use crate::error::Result;

use super::stats::{
    normalise, normalise_backward, stats_pool, stats_pool_backward, FrameFeatures,
};

pub const MFCC_DIM: usize = 4 * MFCC_COEFFS;
/// Mel powers below this are clamped before the log.
pub const LOG_FLOOR: f64 = 1e-10;

fn frame_config() -> StftConfig {
    StftConfig::new(2048, 0.5).expect("fixed config is valid")
}

pub struct MfccTape {
    pub z: Vec<f64>,
    norm: f64,
    pooled_len: usize,
    spec: Stft,
    /// Mel powers per frame, pre-log.
    mel: Vec<Vec<f64>>,
    features: FrameFeatures,
    input_len: usize,
}

pub fn mfcc_forward(audio: &[f64]) -> Result<MfccTape> {
    if audio.iter().all(|x| *x == 0.0) {
        return Err(crate::error::Error::DegenerateEmbedding("all-zero input"));
    }
    let spec = stft(audio, &frame_config())?;
    let bank = MelBank::shared();
    let dct = dct_ii_matrix(MFCC_COEFFS, MEL_BANDS);

    let n_frames = spec.n_frames();
    let mut mel = Vec::with_capacity(n_frames);
    let mut rows = vec![vec![0.0; n_frames]; MFCC_COEFFS];
    let mut power = vec![0.0; spec.n_bins()];
    for (f, frame) in spec.frames.iter().enumerate() {
        for (k, bin) in frame.iter().enumerate() {
            power[k] = bin.norm_sqr();
        }
        let mut bands = vec![0.0; MEL_BANDS];
        bank.apply(&power, &mut bands);
        let logm: Vec<f64> = bands.iter().map(|m| m.max(LOG_FLOOR).ln()).collect();
        for (c, row) in dct.iter().enumerate() {
            rows[c][f] = row.iter().zip(&logm).map(|(a, b)| a * b).sum();
        }
        mel.push(bands);
    }

    let features = FrameFeatures { rows };
    let pooled = stats_pool(&features)?;
    let (z, norm) = normalise(&pooled)?;
    Ok(MfccTape {
        z,
        norm,
        pooled_len: pooled.len(),
        spec,
        mel,
        features,
        input_len: audio.len(),
    })
}

/// Pull a cotangent on the unit embedding back to the input samples.
pub fn mfcc_backward(tape: &MfccTape, grad_z: &[f64]) -> Vec<f64> {
    debug_assert_eq!(grad_z.len(), tape.pooled_len);
    let g_pooled = normalise_backward(&tape.z, tape.norm, grad_z);
    let g_rows = stats_pool_backward(&tape.features, &g_pooled);
    let dct = dct_ii_matrix(MFCC_COEFFS, MEL_BANDS);
    let bank = MelBank::shared();

    let mut grad_frames = Vec::with_capacity(tape.spec.n_frames());
    let mut g_power = vec![0.0; tape.spec.n_bins()];
    for (f, frame) in tape.spec.frames.iter().enumerate() {
        let mut g_logm = vec![0.0; MEL_BANDS];
        for (c, row) in dct.iter().enumerate() {
            let g = g_rows.rows[c][f];
            for (b, w) in row.iter().enumerate() {
                g_logm[b] += g * w;
            }
        }
        let g_mel: Vec<f64> = g_logm
            .iter()
            .zip(&tape.mel[f])
            .map(|(g, m)| if *m > LOG_FLOOR { g / m } else { 0.0 })
            .collect();
        for v in g_power.iter_mut() {
            *v = 0.0;
        }
        bank.apply_adjoint(&g_mel, &mut g_power);
        grad_frames.push(
            frame
                .iter()
                .zip(&g_power)
                .map(|(x, g)| Complex::new(2.0 * x.re * g, 2.0 * x.im * g))
                .collect(),
        );
    }
    let grad_spec = Stft {
        frames: grad_frames,
        fft_size: tape.spec.fft_size,
        hop: tape.spec.hop,
    };
    stft_adjoint(&grad_spec, tape.input_len)
}
