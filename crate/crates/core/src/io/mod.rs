//! WAV audio I/O and the JSON artifact formats: presets, preset datasets,
//! priors, embedding banks, evaluation manifests, reports and run logs.
//!
//! Every JSON artifact embeds the parameter layout identifier and loaders
//! reject files written against a different layout. Audio stays in WAV:
//! PCM16/PCM24/float32 in, float32 out, 44.1 kHz only.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dsp::AudioBuffer;
use crate::effects::{ParamVector, PARAM_COUNT};
use crate::encoders::StereoEmbedding;
use crate::error::{Error, Result};
use crate::metrics::{EmbeddingBank, EvalReport};
use crate::prior::{GaussianPrior, PresetDataset};
use crate::{LAYOUT_VERSION, SAMPLE_RATE};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Load a WAV file into doubles in [-1, 1].
///
/// Accepts mono or stereo PCM16, PCM24 and IEEE float32 at 44.1 kHz,
/// including the extensible wrapper around those encodings. Integer
/// samples are scaled by their full-scale magnitude; float samples are
/// taken as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing RIFF/WAVE header".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_le(&bytes[pos + 4..pos + 8]) as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| Error::Wav(format!("truncated chunk {}", String::from_utf8_lossy(id))))?;
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("fmt chunk shorter than 16 bytes".into()));
                }
                let mut format = u16_le(&body[0..2]);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Wav("extensible fmt chunk too short".into()));
                    }
                    format = u16_le(&body[24..26]);
                }
                fmt = Some((format, u16_le(&body[2..4]), u32_le(&body[4..8]), u16_le(&body[14..16])));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos += 8 + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| Error::Wav("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Wav("no data chunk".into()))?;
    if rate != SAMPLE_RATE {
        return Err(Error::SampleRate(rate));
    }
    let channels = channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::WavEncoding(format!(
            "{channels} channels (expected mono or stereo)"
        )));
    }

    let bytes_per_sample = match (format, bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_FLOAT, 32) => 4,
        _ => {
            return Err(Error::WavEncoding(format!(
                "format {format} with {bits} bits per sample"
            )))
        }
    };
    let frame = bytes_per_sample * channels;
    if data.len() % frame != 0 {
        return Err(Error::Wav(format!(
            "data size {} is not a multiple of the {frame}-byte frame",
            data.len()
        )));
    }

    let frames = data.len() / frame;
    let mut chans = vec![Vec::with_capacity(frames); channels];
    for f in 0..frames {
        for (c, chan) in chans.iter_mut().enumerate() {
            let b = &data[f * frame + c * bytes_per_sample..];
            let v = match (format, bits) {
                (FORMAT_PCM, 16) => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
                (FORMAT_PCM, 24) => {
                    let raw = b[0] as i32 | (b[1] as i32) << 8 | (b[2] as i32) << 16;
                    let signed = if raw & 0x0080_0000 != 0 {
                        raw | !0x00FF_FFFF
                    } else {
                        raw
                    };
                    signed as f64 / 8_388_608.0
                }
                _ => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            };
            chan.push(v);
        }
    }

    let mut it = chans.into_iter();
    match channels {
        1 => AudioBuffer::mono(it.next().unwrap()),
        _ => AudioBuffer::stereo(it.next().unwrap(), it.next().unwrap()),
    }
}

/// Write a buffer as float32 WAV at 44.1 kHz.
///
/// Samples beyond full scale are written unclamped (the format carries
/// them losslessly) with a warning. Loading the file back reproduces
/// float32 inputs bit-exactly.
pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let channels = buffer.channels().len();
    let frames = buffer.len();
    for chan in buffer.channels() {
        if chan.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
    }
    if buffer.peak() > 1.0 {
        log::warn!(
            "writing samples beyond full scale (peak {:.3}); downstream PCM conversion would clip",
            buffer.peak()
        );
    }

    let data_len = (frames * channels * 4) as u32;
    let mut out = Vec::with_capacity(60 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    // 4 (WAVE) + 26 (fmt) + 12 (fact) + 8 (data header) + payload.
    out.extend_from_slice(&(50 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&18u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_FLOAT.to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * channels as u32 * 4).to_le_bytes());
    out.extend_from_slice(&(channels as u16 * 4).to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());

    out.extend_from_slice(b"fact");
    out.extend_from_slice(&4u32.to_le_bytes());
    out.extend_from_slice(&(frames as u32).to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for f in 0..frames {
        for chan in buffer.channels() {
            out.extend_from_slice(&(chan[f] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn check_layout(got: &str) -> Result<()> {
    if got != LAYOUT_VERSION {
        return Err(Error::LayoutVersion {
            expected: LAYOUT_VERSION.into(),
            got: got.into(),
        });
    }
    Ok(())
}

/// One saved parameter vector.
#[derive(Debug, Serialize, Deserialize)]
pub struct PresetFile {
    pub layout_version: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub raw: Vec<f64>,
}

pub fn save_preset(path: impl AsRef<Path>, theta: &ParamVector) -> Result<()> {
    save_json(
        path,
        &PresetFile {
            layout_version: LAYOUT_VERSION.into(),
            m: PARAM_COUNT,
            raw: theta.raw().to_vec(),
        },
    )
}

pub fn load_preset(path: impl AsRef<Path>) -> Result<ParamVector> {
    let file: PresetFile = load_json(path)?;
    check_layout(&file.layout_version)?;
    if file.m != PARAM_COUNT {
        return Err(Error::ParamCount {
            expected: PARAM_COUNT,
            got: file.m,
        });
    }
    ParamVector::new(file.raw)
}

/// A collection of presets, one row per parameter vector.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetFile {
    pub layout_version: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub count: usize,
    pub data: Vec<Vec<f64>>,
}

pub fn save_dataset(path: impl AsRef<Path>, data: &PresetDataset) -> Result<()> {
    save_json(
        path,
        &DatasetFile {
            layout_version: LAYOUT_VERSION.into(),
            m: PARAM_COUNT,
            count: data.presets.len(),
            data: data.presets.iter().map(|p| p.raw().to_vec()).collect(),
        },
    )
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PresetDataset> {
    let source = path.as_ref().display().to_string();
    let file: DatasetFile = load_json(path)?;
    check_layout(&file.layout_version)?;
    if file.m != PARAM_COUNT {
        return Err(Error::ParamCount {
            expected: PARAM_COUNT,
            got: file.m,
        });
    }
    if file.count != file.data.len() {
        return Err(Error::InvalidArgument(format!(
            "dataset declares {} presets but carries {} rows",
            file.count,
            file.data.len()
        )));
    }
    let presets = file
        .data
        .into_iter()
        .map(ParamVector::new)
        .collect::<Result<_>>()?;
    PresetDataset::new(presets, source)
}

/// Serialised Gaussian prior: first two moments plus the shrinkage that
/// produced the covariance. Validated for symmetry and positive
/// definiteness on load.
#[derive(Debug, Serialize, Deserialize)]
pub struct PriorFile {
    pub layout_version: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub shrinkage: f64,
}

pub fn save_prior(path: impl AsRef<Path>, prior: &GaussianPrior) -> Result<()> {
    let cov = prior.covariance();
    save_json(
        path,
        &PriorFile {
            layout_version: LAYOUT_VERSION.into(),
            m: PARAM_COUNT,
            mean: prior.mean().to_vec(),
            covariance: (0..PARAM_COUNT)
                .map(|i| (0..PARAM_COUNT).map(|j| cov[(i, j)]).collect())
                .collect(),
            shrinkage: prior.shrinkage,
        },
    )
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<GaussianPrior> {
    let file: PriorFile = load_json(path)?;
    check_layout(&file.layout_version)?;
    if file.m != PARAM_COUNT || file.mean.len() != PARAM_COUNT {
        return Err(Error::ParamCount {
            expected: PARAM_COUNT,
            got: file.mean.len(),
        });
    }
    if file.covariance.len() != PARAM_COUNT
        || file.covariance.iter().any(|row| row.len() != PARAM_COUNT)
    {
        return Err(Error::InvalidArgument(
            "covariance is not a 130x130 matrix".into(),
        ));
    }
    let cov = nalgebra::DMatrix::from_fn(PARAM_COUNT, PARAM_COUNT, |i, j| file.covariance[i][j]);
    GaussianPrior::from_parts(file.mean, cov, file.shrinkage)
}

/// Reference embeddings for the nearest-neighbour baseline, one entry per
/// dataset preset.
#[derive(Debug, Serialize, Deserialize)]
pub struct BankFile {
    pub layout_version: String,
    pub encoder_id: String,
    pub entries: Vec<StereoEmbedding>,
}

pub fn save_bank(path: impl AsRef<Path>, bank: &EmbeddingBank) -> Result<()> {
    save_json(
        path,
        &BankFile {
            layout_version: LAYOUT_VERSION.into(),
            encoder_id: bank.encoder_id.clone(),
            entries: bank.entries.clone(),
        },
    )
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    let file: BankFile = load_json(path)?;
    check_layout(&file.layout_version)?;
    for entry in &file.entries {
        crate::encoders::StyleEmbedding::new_validated(
            entry.mid.values.clone(),
            entry.mid.encoder_id.clone(),
        )?;
        if !entry.side_degenerate {
            crate::encoders::StyleEmbedding::new_validated(
                entry.side.values.clone(),
                entry.side.encoder_id.clone(),
            )?;
        }
        for emb in [&entry.mid, &entry.side] {
            if emb.encoder_id != file.encoder_id {
                return Err(Error::EncoderMismatch {
                    expected: file.encoder_id.clone(),
                    got: emb.encoder_id.clone(),
                });
            }
        }
    }
    Ok(EmbeddingBank {
        encoder_id: file.encoder_id,
        entries: file.entries,
    })
}

/// A single saved style embedding (both mid and side vectors).
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub layout_version: String,
    pub encoder_id: String,
    pub embedding: StereoEmbedding,
}

pub fn save_embedding(path: impl AsRef<Path>, emb: &StereoEmbedding) -> Result<()> {
    save_json(
        path,
        &EmbeddingFile {
            layout_version: LAYOUT_VERSION.into(),
            encoder_id: emb.mid.encoder_id.clone(),
            embedding: emb.clone(),
        },
    )
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<StereoEmbedding> {
    let file: EmbeddingFile = load_json(path)?;
    check_layout(&file.layout_version)?;
    crate::encoders::StyleEmbedding::new_validated(
        file.embedding.mid.values.clone(),
        file.embedding.mid.encoder_id.clone(),
    )?;
    if !file.embedding.side_degenerate {
        crate::encoders::StyleEmbedding::new_validated(
            file.embedding.side.values.clone(),
            file.embedding.side.encoder_id.clone(),
        )?;
    }
    Ok(file.embedding)
}

/// One evaluation track: paths are resolved relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub track_id: String,
    pub dry_wav: String,
    pub wet_wav: String,
    pub oracle_preset: String,
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    save_json(path, &entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    load_json(path)
}

/// Load the audio and oracle preset behind a manifest entry.
pub fn load_track(entry: &ManifestEntry, base: &Path) -> Result<crate::metrics::EvalTrack> {
    Ok(crate::metrics::EvalTrack {
        id: entry.track_id.clone(),
        dry: read_wav(base.join(&entry.dry_wav))?,
        wet: read_wav(base.join(&entry.wet_wav))?,
        oracle: load_preset(base.join(&entry.oracle_preset))?,
    })
}

pub fn save_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    save_json(path, report)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let report: EvalReport = load_json(path)?;
    Ok(report)
}

/// Reproducibility record written next to every CLI output artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub layout_version: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

pub fn save_runlog(path: impl AsRef<Path>, log: &RunLog) -> Result<()> {
    save_json(path, log)
}

pub fn load_runlog(path: impl AsRef<Path>) -> Result<RunLog> {
    let log: RunLog = load_json(path)?;
    check_layout(&log.layout_version)?;
    Ok(log)
}
