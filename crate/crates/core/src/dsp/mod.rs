//! Audio containers, mid/side coding, level measurement.

mod mel;
mod stft;

pub use mel::{dct_ii_matrix, MelBank, MEL_BANDS, MFCC_COEFFS};
pub use stft::{hann_window, stft, stft_adjoint, stft_frame_count, Stft, StftConfig};

use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Frame length used by [`activity_fraction`], in samples.
pub const ACTIVITY_FRAME: usize = 1024;

/// Multichannel audio pinned to 44100 Hz. All channels have equal length.
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::ChannelCount {
                expected: 2,
                got: channels.len(),
            });
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidArgument(
                "channels have unequal lengths".into(),
            ));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>) -> Result<Self> {
        Self::new(vec![samples], SAMPLE_RATE)
    }

    pub fn stereo(left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        Self::new(vec![left, right], SAMPLE_RATE)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// The single channel of a mono buffer.
    pub fn expect_mono(&self) -> Result<&[f64]> {
        if self.num_channels() != 1 {
            return Err(Error::ChannelCount {
                expected: 1,
                got: self.num_channels(),
            });
        }
        Ok(self.channel(0))
    }

    pub fn expect_stereo(&self) -> Result<(&[f64], &[f64])> {
        if self.num_channels() != 2 {
            return Err(Error::ChannelCount {
                expected: 2,
                got: self.num_channels(),
            });
        }
        Ok((self.channel(0), self.channel(1)))
    }

    /// Slice out `range` from every channel.
    pub fn segment(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::InvalidArgument(format!(
                "segment {range:?} out of bounds for length {}",
                self.len()
            )));
        }
        Self::new(
            self.channels.iter().map(|c| c[range.clone()].to_vec()).collect(),
            self.sample_rate,
        )
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Unnormalised mid/side pair: `mid = l + r`, `side = l - r`.
#[derive(Debug, Clone)]
pub struct MidSidePair {
    pub mid: Vec<f64>,
    pub side: Vec<f64>,
}

/// Split a stereo buffer into its mid and side channels.
pub fn mid_side(buffer: &AudioBuffer) -> Result<MidSidePair> {
    let (l, r) = buffer.expect_stereo()?;
    let mid = l.iter().zip(r).map(|(a, b)| a + b).collect();
    let side = l.iter().zip(r).map(|(a, b)| a - b).collect();
    Ok(MidSidePair { mid, side })
}

/// Inverse of [`mid_side`]: reconstruct left/right as `((m + s) / 2, (m - s) / 2)`.
pub fn mid_side_inverse(pair: &MidSidePair) -> (Vec<f64>, Vec<f64>) {
    let l = pair
        .mid
        .iter()
        .zip(&pair.side)
        .map(|(m, s)| 0.5 * (m + s))
        .collect();
    let r = pair
        .mid
        .iter()
        .zip(&pair.side)
        .map(|(m, s)| 0.5 * (m - s))
        .collect();
    (l, r)
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    20.0 * lin.log10()
}

/// Fraction of 1024-sample frames whose RMS (pooled over channels) exceeds
/// `threshold_db` dBFS. The trailing partial frame is measured over its
/// actual length.
pub fn activity_fraction(buffer: &AudioBuffer, threshold_db: f64) -> Result<f64> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let len = buffer.len();
    let n_frames = len.div_ceil(ACTIVITY_FRAME);
    let mut active = 0usize;
    for f in 0..n_frames {
        let start = f * ACTIVITY_FRAME;
        let end = (start + ACTIVITY_FRAME).min(len);
        let mut energy = 0.0;
        for ch in &buffer.channels {
            for &x in &ch[start..end] {
                energy += x * x;
            }
        }
        let rms = (energy / ((end - start) * buffer.num_channels()) as f64).sqrt();
        if 20.0 * rms.log10() > threshold_db {
            active += 1;
        }
    }
    Ok(active as f64 / n_frames as f64)
}
