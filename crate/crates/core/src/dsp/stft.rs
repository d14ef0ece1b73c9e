//! Short-time Fourier transform with the framing used across the pipeline:
//! no centre padding, Hann window, one-sided spectrum, final partial frame
//! zero-padded.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub overlap: f64,
}

impl StftConfig {
    pub fn new(fft_size: usize, overlap: f64) -> Result<Self> {
        if !matches!(fft_size, 128 | 512 | 2048) {
            return Err(Error::InvalidArgument(format!(
                "fft_size {fft_size} not in {{128, 512, 2048}}"
            )));
        }
        if overlap != 0.5 && overlap != 0.75 {
            return Err(Error::InvalidArgument(format!(
                "overlap {overlap} not in {{0.5, 0.75}}"
            )));
        }
        Ok(Self { fft_size, overlap })
    }

    pub fn hop(&self) -> usize {
        (self.fft_size as f64 * (1.0 - self.overlap)).round() as usize
    }
}

/// One-sided complex spectrogram, frames outermost.
#[derive(Debug, Clone)]
pub struct Stft {
    pub frames: Vec<Vec<Complex<f64>>>,
    pub fft_size: usize,
    pub hop: usize,
}

impl Stft {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Number of frames for a signal of `len` samples: `ceil((len - fft) / hop) + 1`.
pub fn stft_frame_count(len: usize, fft_size: usize, hop: usize) -> Result<usize> {
    if len < fft_size {
        return Err(Error::InputTooShort {
            needed: fft_size,
            got: len,
        });
    }
    Ok((len - fft_size).div_ceil(hop) + 1)
}

fn plan(fft_size: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().unwrap();
    guard
        .entry((fft_size, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(fft_size)
            } else {
                planner.plan_fft_forward(fft_size)
            }
        })
        .clone()
}

pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<Stft> {
    let fft_size = cfg.fft_size;
    let hop = cfg.hop();
    let n_frames = stft_frame_count(signal.len(), fft_size, hop)?;
    let window = hann_window(fft_size);
    let fft = plan(fft_size, false);
    let n_bins = fft_size / 2 + 1;

    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for f in 0..n_frames {
        let start = f * hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let x = signal.get(start + n).copied().unwrap_or(0.0);
            *slot = Complex::new(x * window[n], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..n_bins].to_vec());
    }
    Ok(Stft {
        frames,
        fft_size,
        hop,
    })
}

/// Adjoint of [`stft`] as a linear map from signal to one-sided bins: pulls a
/// cotangent on the bins back to a cotangent on the signal. `grad.frames`
/// holds d(loss)/d(re, im) packed as complex values.
pub fn stft_adjoint(grad: &Stft, signal_len: usize) -> Vec<f64> {
    let fft_size = grad.fft_size;
    let window = hann_window(fft_size);
    let ifft = plan(fft_size, true);
    let mut out = vec![0.0; signal_len];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for (f, frame) in grad.frames.iter().enumerate() {
        for slot in buf.iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        buf[..frame.len()].copy_from_slice(frame);
        // Unnormalised inverse transform computes sum_k G_k e^{+i 2 pi k n / N};
        // its real part is exactly d(loss)/d(windowed sample) because the loss
        // reads only bins 0..=N/2.
        ifft.process(&mut buf);
        let start = f * grad.hop;
        for n in 0..fft_size {
            let idx = start + n;
            if idx < signal_len {
                out[idx] += buf[n].re * window[n];
            }
        }
    }
    out
}
