//! Mel filterbank and DCT-II basis shared by the MFCC encoder.

use std::sync::OnceLock;

use crate::SAMPLE_RATE;

pub const MEL_BANDS: usize = 128;
pub const MFCC_COEFFS: usize = 25;

/// HTK mel scale.
fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over one-sided power-spectrum bins. Rows are sparse:
/// each stores its first bin index and the contiguous weights.
#[derive(Debug)]
pub struct MelBank {
    pub n_bins: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl MelBank {
    fn build(fft_size: usize, n_bands: usize) -> Self {
        let n_bins = fft_size / 2 + 1;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let mel_lo = hz_to_mel(0.0);
        let mel_hi = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_bands + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_bands + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / fft_size as f64;

        let mut rows = Vec::with_capacity(n_bands);
        for b in 0..n_bands {
            let (lo, centre, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= centre {
                    (f - lo) / (centre - lo)
                } else {
                    (hi - f) / (hi - centre)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(k);
                    }
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            rows.push((start.unwrap_or(0), weights));
        }
        Self { n_bins, rows }
    }

    /// Shared instance for the encoder configuration (2048-point FFT).
    pub fn shared() -> &'static MelBank {
        static BANK: OnceLock<MelBank> = OnceLock::new();
        BANK.get_or_init(|| MelBank::build(2048, MEL_BANDS))
    }

    pub fn n_bands(&self) -> usize {
        self.rows.len()
    }

    /// `out[b] = sum_k W[b][k] * power[k]`.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (row, slot) in self.rows.iter().zip(out.iter_mut()) {
            let (start, weights) = row;
            *slot = weights
                .iter()
                .zip(&power[*start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }

    /// Transpose: scatter band cotangents back onto power bins.
    pub fn apply_adjoint(&self, grad_bands: &[f64], grad_power: &mut [f64]) {
        for ((start, weights), g) in self.rows.iter().zip(grad_bands) {
            for (i, w) in weights.iter().enumerate() {
                grad_power[start + i] += w * g;
            }
        }
    }
}

/// Orthonormal DCT-II matrix, `n_coeffs` x `n_bands`.
pub fn dct_ii_matrix(n_coeffs: usize, n_bands: usize) -> &'static Vec<Vec<f64>> {
    static DCT: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    let m = DCT.get_or_init(|| {
        let mut rows = Vec::with_capacity(MFCC_COEFFS);
        for k in 0..MFCC_COEFFS {
            let scale = if k == 0 {
                (1.0 / MEL_BANDS as f64).sqrt()
            } else {
                (2.0 / MEL_BANDS as f64).sqrt()
            };
            rows.push(
                (0..MEL_BANDS)
                    .map(|m| {
                        scale
                            * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64
                                / (2.0 * MEL_BANDS as f64))
                                .cos()
                    })
                    .collect(),
            );
        }
        rows
    });
    assert_eq!(n_coeffs, MFCC_COEFFS);
    assert_eq!(n_bands, MEL_BANDS);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bank_shape_and_coverage() {
        let bank = MelBank::shared();
        assert_eq!(bank.n_bands(), 128);
        assert_eq!(bank.n_bins, 1025);
        // Mid-spectrum bins are covered by at least one triangle.
        let mut coverage = vec![0.0; bank.n_bins];
        for (start, weights) in &bank.rows {
            for (i, w) in weights.iter().enumerate() {
                coverage[start + i] += w;
            }
        }
        for k in 20..1000 {
            assert!(coverage[k] > 0.0, "bin {k} uncovered");
        }
    }

    #[test]
    fn apply_matches_dense_matmul() {
        let bank = MelBank::shared();
        let power: Vec<f64> = (0..bank.n_bins).map(|k| ((k * 7919) % 101) as f64).collect();
        let mut fast = vec![0.0; bank.n_bands()];
        bank.apply(&power, &mut fast);
        for (b, (start, weights)) in bank.rows.iter().enumerate() {
            let dense: f64 = weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * power[start + i])
                .sum();
            assert_relative_eq!(fast[b], dense);
        }
    }

    #[test]
    fn adjoint_inner_product() {
        let bank = MelBank::shared();
        let power: Vec<f64> = (0..bank.n_bins).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let grad: Vec<f64> = (0..bank.n_bands()).map(|b| (b as f64 * 0.11).cos()).collect();
        let mut bands = vec![0.0; bank.n_bands()];
        bank.apply(&power, &mut bands);
        let lhs: f64 = grad.iter().zip(&bands).map(|(a, b)| a * b).sum();
        let mut pulled = vec![0.0; bank.n_bins];
        bank.apply_adjoint(&grad, &mut pulled);
        let rhs: f64 = pulled.iter().zip(&power).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn dct_rows_orthonormal() {
        let m = dct_ii_matrix(MFCC_COEFFS, MEL_BANDS);
        for i in 0..MFCC_COEFFS {
            for j in 0..MFCC_COEFFS {
                let dot: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, expect, epsilon = 1e-12);
            }
        }
    }
}
