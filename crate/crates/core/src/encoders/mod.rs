//! Style encoders: deterministic maps from audio to unit vectors whose
//! angular distances define the style objective. Two built-in encoders
//! (cepstral statistics and MIR-feature statistics) are differentiable in
//! their input; external encoders participate only through precomputed
//! embedding files.

pub mod mfcc;
pub mod mir;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::dsp::{mid_side, AudioBuffer};
use crate::error::{Error, Result};

pub use mfcc::{mfcc_backward, mfcc_forward, MFCC_DIM};
pub use mir::{mir_backward, mir_forward, MIR_DIM};
pub use stats::{stats_pool, FrameFeatures};

/// A differentiable built-in encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mfcc,
    Mir,
}

impl EncoderKind {
    pub fn dim(self) -> usize {
        match self {
            EncoderKind::Mfcc => MFCC_DIM,
            EncoderKind::Mir => MIR_DIM,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            EncoderKind::Mfcc => "mfcc",
            EncoderKind::Mir => "mir",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(EncoderKind::Mfcc),
            "mir" => Ok(EncoderKind::Mir),
            other => Err(Error::InvalidArgument(format!("unknown encoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleEmbedding {
    pub values: Vec<f64>,
    pub encoder_id: String,
}

impl StyleEmbedding {
    /// Construct and enforce the unit-norm contract.
    pub fn new_validated(values: Vec<f64>, encoder_id: String) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::NotUnitNorm { norm, tol: 1e-3 });
        }
        Ok(Self { values, encoder_id })
    }
}

/// Mid/side embedding pair of a stereo buffer. A silent side channel yields
/// an all-zero side embedding with the flag set; downstream losses give that
/// channel zero weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StereoEmbedding {
    pub mid: StyleEmbedding,
    pub side: StyleEmbedding,
    pub side_degenerate: bool,
}

/// Per-call tape for the differentiable encoders.
pub enum EncodeTape {
    Mfcc(mfcc::MfccTape),
    Mir(mir::MirTape),
}

impl EncodeTape {
    pub fn z(&self) -> &[f64] {
        match self {
            EncodeTape::Mfcc(t) => &t.z,
            EncodeTape::Mir(t) => &t.z,
        }
    }

    /// d(loss)/d(input samples) given d(loss)/d(z).
    pub fn backward(&self, grad_z: &[f64]) -> Vec<f64> {
        match self {
            EncodeTape::Mfcc(t) => mfcc_backward(t, grad_z),
            EncodeTape::Mir(t) => mir_backward(t, grad_z),
        }
    }
}

pub fn embed_mono_taped(kind: EncoderKind, audio: &[f64]) -> Result<EncodeTape> {
    Ok(match kind {
        EncoderKind::Mfcc => EncodeTape::Mfcc(mfcc_forward(audio)?),
        EncoderKind::Mir => EncodeTape::Mir(mir_forward(audio)?),
    })
}

pub fn embed_mono(kind: EncoderKind, audio: &[f64]) -> Result<StyleEmbedding> {
    let tape = embed_mono_taped(kind, audio)?;
    Ok(StyleEmbedding {
        values: tape.z().to_vec(),
        encoder_id: kind.id().to_string(),
    })
}

const SIDE_SILENCE: f64 = 1e-12;

pub fn side_is_degenerate(side: &[f64]) -> bool {
    side.iter().all(|v| v.abs() <= SIDE_SILENCE)
}

pub fn embed_stereo(kind: EncoderKind, audio: &AudioBuffer) -> Result<StereoEmbedding> {
    let pair = mid_side(audio)?;
    let mid_emb = embed_mono(kind, &pair.mid)?;
    if side_is_degenerate(&pair.side) {
        log::warn!("side channel silent; its embedding carries no weight");
        return Ok(StereoEmbedding {
            mid: mid_emb,
            side: StyleEmbedding {
                values: vec![0.0; kind.dim()],
                encoder_id: kind.id().to_string(),
            },
            side_degenerate: true,
        });
    }
    Ok(StereoEmbedding {
        mid: mid_emb,
        side: embed_mono(kind, &pair.side)?,
        side_degenerate: false,
    })
}
