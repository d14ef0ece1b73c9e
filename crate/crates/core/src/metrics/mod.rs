//! Evaluation metrics (multi-scale spectral loss, microdynamics, parameter
//! MSE), the A/B segment protocol, and the mean / nearest-preset baselines.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dsp::{mid_side, stft, stft_adjoint, AudioBuffer, Stft, StftConfig};
use crate::effects::{render, ParamVector, PARAM_COUNT};
use crate::encoders::StereoEmbedding;
use crate::error::{Error, Result};
use crate::objective::{angular_distance, ReferenceSet};
use crate::prior::{GaussianPrior, PresetDataset};
use crate::SAMPLE_RATE;

/// Magnitude floor of the spectral loss: estimate magnitudes are clamped
/// here before taking logs, and bins whose target magnitude does not clear
/// it are excluded from the log term.
pub const MSS_FLOOR: f64 = 1e-8;

/// FFT sizes of the multi-resolution spectral loss.
pub const MSS_FFT_SIZES: [usize; 3] = [128, 512, 2048];

const MSS_OVERLAP: f64 = 0.75;

/// Additive floor inside the log-RMS envelope.
const ENV_FLOOR: f64 = 1e-12;

/// (fast, slow) smoother time constants in seconds for the two
/// microdynamics scales.
pub const MLDR_SCALES: [(f64, f64); 2] = [(0.010, 0.100), (0.100, 1.000)];

/// Protocol segment length: 11 s at the pipeline rate.
pub const SEGMENT_SAMPLES: usize = 11 * SAMPLE_RATE as usize;

/// A segment is active when at least half of the processed audio sits above
/// this level.
pub const ACTIVITY_DB: f64 = -60.0;

const MIN_ACTIVE_FRACTION: f64 = 0.5;

/// Which stereo decomposition a metric scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelPair {
    LeftRight,
    MidSide,
}

fn channel_signals(buffer: &AudioBuffer, pair: ChannelPair) -> Result<[Vec<f64>; 2]> {
    match pair {
        ChannelPair::LeftRight => {
            let (l, r) = buffer.expect_stereo()?;
            Ok([l.to_vec(), r.to_vec()])
        }
        ChannelPair::MidSide => {
            let ms = mid_side(buffer)?;
            Ok([ms.mid, ms.side])
        }
    }
}

/// Fold per-channel sample gradients back onto the buffer's (l, r) channels.
fn fold_channel_grads(pair: ChannelPair, grads: [Vec<f64>; 2]) -> (Vec<f64>, Vec<f64>) {
    match pair {
        ChannelPair::LeftRight => {
            let [gl, gr] = grads;
            (gl, gr)
        }
        ChannelPair::MidSide => {
            // mid = l + r, side = l - r
            let [gm, gs] = grads;
            let gl = gm.iter().zip(&gs).map(|(m, s)| m + s).collect();
            let gr = gm.iter().zip(&gs).map(|(m, s)| m - s).collect();
            (gl, gr)
        }
    }
}

fn check_lengths(estimate: &AudioBuffer, target: &AudioBuffer) -> Result<()> {
    if estimate.len() != target.len() {
        return Err(Error::LengthMismatch {
            a: estimate.len(),
            b: target.len(),
        });
    }
    Ok(())
}

struct ChannelMss {
    loss: f64,
    grad: Option<Vec<f64>>,
}

/// One channel of the spectral loss: per resolution, spectral convergence
/// plus the mean absolute log-magnitude difference, summed over resolutions.
fn mss_channel(estimate: &[f64], target: &[f64], with_grad: bool) -> Result<ChannelMss> {
    let mut loss = 0.0;
    let mut grad = if with_grad {
        Some(vec![0.0; estimate.len()])
    } else {
        None
    };

    for fft_size in MSS_FFT_SIZES {
        let cfg = StftConfig::new(fft_size, MSS_OVERLAP)?;
        let s_t = stft(target, &cfg)?;
        let s_e = stft(estimate, &cfg)?;

        let mut diff_sq = 0.0;
        let mut tgt_sq = 0.0;
        let mut log_sum = 0.0;
        let mut count = 0usize;
        for (ft, fe) in s_t.frames.iter().zip(&s_e.frames) {
            for (ct, ce) in ft.iter().zip(fe) {
                let at = ct.norm();
                let ae = ce.norm();
                diff_sq += (at - ae) * (at - ae);
                tgt_sq += at * at;
                // The log distance is measured where the target carries
                // signal; bins the target leaves silent are covered by the
                // convergence ratio alone. Without this mask, matching a
                // silent channel would cost ln(level/floor) for any audible
                // residual, a cliff no finite learning rate can settle into.
                if at > MSS_FLOOR {
                    log_sum += (at.ln() - ae.max(MSS_FLOOR).ln()).abs();
                    count += 1;
                }
            }
        }
        let diff_fro = diff_sq.sqrt();
        let tgt_fro = tgt_sq.sqrt();
        // A silent target also makes the convergence ratio undefined.
        if tgt_fro > 0.0 {
            loss += diff_fro / tgt_fro;
        }
        if count > 0 {
            loss += log_sum / count as f64;
        }

        if let Some(g) = grad.as_mut() {
            let mut grad_frames = Vec::with_capacity(s_e.frames.len());
            for (ft, fe) in s_t.frames.iter().zip(&s_e.frames) {
                let mut gf = Vec::with_capacity(fe.len());
                for (ct, ce) in ft.iter().zip(fe) {
                    let ae = ce.norm();
                    if ae <= MSS_FLOOR {
                        gf.push(Complex::new(0.0, 0.0));
                        continue;
                    }
                    let at = ct.norm();
                    let mut d_ae = 0.0;
                    if diff_fro > 0.0 && tgt_fro > 0.0 {
                        d_ae += -(at - ae) / (diff_fro * tgt_fro);
                    }
                    if at > MSS_FLOOR {
                        let delta = at.ln() - ae.ln();
                        if delta != 0.0 {
                            d_ae += -delta.signum() / (ae * count as f64);
                        }
                    }
                    gf.push(Complex::new(d_ae * ce.re / ae, d_ae * ce.im / ae));
                }
                grad_frames.push(gf);
            }
            let pulled = stft_adjoint(
                &Stft {
                    frames: grad_frames,
                    fft_size: s_e.fft_size,
                    hop: s_e.hop,
                },
                estimate.len(),
            );
            for (acc, p) in g.iter_mut().zip(&pulled) {
                *acc += p;
            }
        }
    }
    Ok(ChannelMss { loss, grad })
}

/// Multi-scale spectral loss between two stereo buffers, averaged over the
/// channels of `pair`.
pub fn mss(estimate: &AudioBuffer, target: &AudioBuffer, pair: ChannelPair) -> Result<f64> {
    check_lengths(estimate, target)?;
    let est = channel_signals(estimate, pair)?;
    let tgt = channel_signals(target, pair)?;
    let a = mss_channel(&est[0], &tgt[0], false)?.loss;
    let b = mss_channel(&est[1], &tgt[1], false)?.loss;
    Ok(0.5 * (a + b))
}

/// [`mss`] plus its gradient with respect to the estimate's (l, r) samples.
pub fn mss_with_grad(
    estimate: &AudioBuffer,
    target: &AudioBuffer,
    pair: ChannelPair,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_lengths(estimate, target)?;
    let est = channel_signals(estimate, pair)?;
    let tgt = channel_signals(target, pair)?;
    let a = mss_channel(&est[0], &tgt[0], true)?;
    let b = mss_channel(&est[1], &tgt[1], true)?;
    let scale = |g: Vec<f64>| g.into_iter().map(|v| 0.5 * v).collect::<Vec<f64>>();
    let (gl, gr) = fold_channel_grads(pair, [scale(a.grad.unwrap()), scale(b.grad.unwrap())]);
    Ok((0.5 * (a.loss + b.loss), gl, gr))
}

/// Log-RMS envelope from a one-pole smoother on the squared signal.
fn log_rms_envelope(x: &[f64], tau_seconds: f64) -> (Vec<f64>, Vec<f64>) {
    let a = (-1.0 / (tau_seconds * SAMPLE_RATE as f64)).exp();
    let mut energy = Vec::with_capacity(x.len());
    let mut level = Vec::with_capacity(x.len());
    let mut e = 0.0;
    for &v in x {
        e = a * e + (1.0 - a) * v * v;
        energy.push(e);
        level.push(0.5 * (e + ENV_FLOOR).ln());
    }
    (level, energy)
}

/// Pull a cotangent on the log-RMS envelope back to the signal.
fn log_rms_adjoint(x: &[f64], energy: &[f64], grad_level: &[f64], tau_seconds: f64) -> Vec<f64> {
    let a = (-1.0 / (tau_seconds * SAMPLE_RATE as f64)).exp();
    let mut grad = vec![0.0; x.len()];
    let mut carry = 0.0;
    for t in (0..x.len()).rev() {
        let de = grad_level[t] * 0.5 / (energy[t] + ENV_FLOOR) + carry;
        grad[t] = de * (1.0 - a) * 2.0 * x[t];
        carry = a * de;
    }
    grad
}

struct ChannelMldr {
    loss: f64,
    grad: Option<Vec<f64>>,
}

fn mldr_channel(estimate: &[f64], target: &[f64], with_grad: bool) -> ChannelMldr {
    let n = estimate.len();
    let mut loss = 0.0;
    let mut grad = if with_grad { Some(vec![0.0; n]) } else { None };

    for (fast, slow) in MLDR_SCALES {
        let (le_f, ee_f) = log_rms_envelope(estimate, fast);
        let (le_s, ee_s) = log_rms_envelope(estimate, slow);
        let (lt_f, _) = log_rms_envelope(target, fast);
        let (lt_s, _) = log_rms_envelope(target, slow);

        let mut abs_sum = 0.0;
        let mut sign = Vec::with_capacity(if with_grad { n } else { 0 });
        for t in 0..n {
            let delta = (le_f[t] - le_s[t]) - (lt_f[t] - lt_s[t]);
            abs_sum += delta.abs();
            if with_grad {
                sign.push(if delta == 0.0 { 0.0 } else { delta.signum() });
            }
        }
        loss += abs_sum / n as f64;

        if let Some(g) = grad.as_mut() {
            let d_mu: Vec<f64> = sign.iter().map(|s| s / n as f64).collect();
            let neg: Vec<f64> = d_mu.iter().map(|v| -v).collect();
            let gf = log_rms_adjoint(estimate, &ee_f, &d_mu, fast);
            let gs = log_rms_adjoint(estimate, &ee_s, &neg, slow);
            for t in 0..n {
                g[t] += gf[t] + gs[t];
            }
        }
    }
    ChannelMldr { loss, grad }
}

/// Microdynamics deviation: MAE between the fast/slow log-RMS envelope
/// differences of estimate and target, summed over the two scale pairs and
/// averaged over the channels of `pair`. Invariant to constant gain.
pub fn mldr(estimate: &AudioBuffer, target: &AudioBuffer, pair: ChannelPair) -> Result<f64> {
    check_lengths(estimate, target)?;
    let est = channel_signals(estimate, pair)?;
    let tgt = channel_signals(target, pair)?;
    let a = mldr_channel(&est[0], &tgt[0], false).loss;
    let b = mldr_channel(&est[1], &tgt[1], false).loss;
    Ok(0.5 * (a + b))
}

/// [`mldr`] plus its gradient with respect to the estimate's (l, r) samples.
pub fn mldr_with_grad(
    estimate: &AudioBuffer,
    target: &AudioBuffer,
    pair: ChannelPair,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_lengths(estimate, target)?;
    let est = channel_signals(estimate, pair)?;
    let tgt = channel_signals(target, pair)?;
    let a = mldr_channel(&est[0], &tgt[0], true);
    let b = mldr_channel(&est[1], &tgt[1], true);
    let scale = |g: Vec<f64>| g.into_iter().map(|v| 0.5 * v).collect::<Vec<f64>>();
    let (gl, gr) = fold_channel_grads(pair, [scale(a.grad.unwrap()), scale(b.grad.unwrap())]);
    Ok((0.5 * (a.loss + b.loss), gl, gr))
}

/// Mean squared difference in raw parameter space.
pub fn pmse(a: &ParamVector, b: &ParamVector) -> f64 {
    a.raw()
        .iter()
        .zip(b.raw())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / PARAM_COUNT as f64
}

/// Indices of 11 s segments assigned to the reference (A) and evaluation (B)
/// sides of a track.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSplit {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub seed: u64,
}

/// Sample range of protocol segment `index`.
pub fn segment_range(index: usize) -> std::ops::Range<usize> {
    index * SEGMENT_SAMPLES..(index + 1) * SEGMENT_SAMPLES
}

/// Cut aligned dry/wet audio into non-overlapping 11 s segments, keep those
/// where the processed audio is active, and split them into two sets with a
/// seeded shuffle. Sizes differ by at most one (A gets the extra segment).
pub fn segment_and_split(dry: &AudioBuffer, wet: &AudioBuffer, seed: u64) -> Result<SegmentSplit> {
    dry.expect_mono()?;
    wet.expect_stereo()?;
    if dry.len() != wet.len() {
        return Err(Error::LengthMismatch {
            a: dry.len(),
            b: wet.len(),
        });
    }

    let n_segments = dry.len() / SEGMENT_SAMPLES;
    let mut active = Vec::new();
    for k in 0..n_segments {
        let chunk = wet.segment(segment_range(k))?;
        if crate::dsp::activity_fraction(&chunk, ACTIVITY_DB)? >= MIN_ACTIVE_FRACTION {
            active.push(k);
        }
    }
    if active.len() < 2 {
        return Err(Error::InsufficientSegments(active.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    active.shuffle(&mut rng);
    let half = active.len().div_ceil(2);
    let b = active.split_off(half);
    Ok(SegmentSplit { a: active, b, seed })
}

/// The prior's mode: the preset mean.
pub fn mean_baseline(prior: &GaussianPrior) -> ParamVector {
    ParamVector::new(prior.mean().to_vec()).expect("prior mean has the layout length")
}

/// Space the nearest-preset search runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnSpace {
    Theta,
    Mfcc,
    Mir,
    Precomputed,
}

impl NnSpace {
    fn encoder_id(self) -> Option<&'static str> {
        match self {
            NnSpace::Theta => None,
            NnSpace::Mfcc => Some("mfcc"),
            NnSpace::Mir => Some("mir"),
            NnSpace::Precomputed => None,
        }
    }
}

/// Query for the nearest-preset baseline: oracle parameters for the theta
/// space, style references for the embedding spaces.
#[derive(Debug)]
pub enum NnQuery<'a> {
    Theta(&'a ParamVector),
    Style(&'a ReferenceSet),
}

/// One embedding per preset, computed by rendering the preset on its source
/// audio; index-aligned with the preset dataset it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingBank {
    pub encoder_id: String,
    pub entries: Vec<StereoEmbedding>,
}

/// Angular distance between a reference and a bank entry: mid and side
/// averaged when both sides carry signal, mid alone otherwise.
fn stereo_distance(a: &StereoEmbedding, b: &StereoEmbedding) -> Result<f64> {
    let mid = angular_distance(&a.mid.values, &b.mid.values)?;
    if a.side_degenerate || b.side_degenerate {
        return Ok(mid);
    }
    let side = angular_distance(&a.side.values, &b.side.values)?;
    Ok(0.5 * (mid + side))
}

/// Return the preset nearest to the query: Euclidean in raw parameter space,
/// or mean angular distance to the references in an embedding space. Ties go
/// to the lowest index.
pub fn nn_baseline(
    query: NnQuery,
    data: &PresetDataset,
    space: NnSpace,
    bank: Option<&EmbeddingBank>,
) -> Result<ParamVector> {
    if data.presets.is_empty() {
        return Err(Error::EmptyCollection("preset dataset"));
    }

    let distances: Vec<f64> = match (space, query) {
        (NnSpace::Theta, NnQuery::Theta(theta)) => data
            .presets
            .iter()
            .map(|p| {
                p.raw()
                    .iter()
                    .zip(theta.raw())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
        (NnSpace::Theta, NnQuery::Style(_)) => {
            return Err(Error::InvalidArgument(
                "theta-space search needs a parameter query".into(),
            ));
        }
        (_, NnQuery::Theta(_)) => {
            return Err(Error::InvalidArgument(
                "embedding-space search needs style references".into(),
            ));
        }
        (_, NnQuery::Style(refs)) => {
            let bank = bank.ok_or_else(|| {
                Error::InvalidArgument("embedding-space search needs a rendered bank".into())
            })?;
            if bank.entries.len() != data.presets.len() {
                return Err(Error::InvalidArgument(format!(
                    "bank holds {} embeddings for {} presets",
                    bank.entries.len(),
                    data.presets.len()
                )));
            }
            let expected = space.encoder_id().unwrap_or(&bank.encoder_id);
            if bank.encoder_id != expected {
                return Err(Error::EncoderMismatch {
                    expected: expected.to_string(),
                    got: bank.encoder_id.clone(),
                });
            }
            if refs.encoder_id != expected {
                return Err(Error::EncoderMismatch {
                    expected: expected.to_string(),
                    got: refs.encoder_id.clone(),
                });
            }
            let mut out = Vec::with_capacity(bank.entries.len());
            for entry in &bank.entries {
                let mut sum = 0.0;
                for r in &refs.embeddings {
                    sum += stereo_distance(r, entry)?;
                }
                out.push(sum / refs.embeddings.len() as f64);
            }
            out
        }
    };

    let mut best = 0;
    for (i, d) in distances.iter().enumerate() {
        if *d < distances[best] {
            best = i;
        }
    }
    Ok(data.presets[best].clone())
}

/// One aligned dry/wet pair with the preset that produced the wet side.
#[derive(Debug, Clone)]
pub struct EvalTrack {
    pub id: String,
    pub dry: AudioBuffer,
    pub wet: AudioBuffer,
    pub oracle: ParamVector,
}

/// What an estimator sees for one track: the split plus the materialised
/// segment buffers (wet references from A, dry inputs from B).
pub struct EstimateContext<'a> {
    pub track: &'a EvalTrack,
    pub split: &'a SegmentSplit,
    pub a_wet: &'a [AudioBuffer],
    pub b_dry: &'a [AudioBuffer],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackScore {
    pub track_id: String,
    pub mss_lr: f64,
    pub mss_ms: f64,
    pub mldr_lr: f64,
    pub mldr_ms: f64,
    pub pmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackFailure {
    pub track_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianScores {
    pub mss_lr: f64,
    pub mss_ms: f64,
    pub mldr_lr: f64,
    pub mldr_ms: f64,
    pub pmse: f64,
}

/// Protocol output: per-track scores, recorded failures, and medians over
/// the successful tracks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config: String,
    pub seed: u64,
    pub tracks: Vec<TrackScore>,
    pub failures: Vec<TrackFailure>,
    pub medians: MedianScores,
}

/// Median with the even case averaging the two central order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    Some(0.5 * (sorted[(n - 1) / 2] + sorted[n / 2]))
}

/// Per-track seed: FNV-1a over the track id folded into the protocol seed,
/// so shuffles stay stable under track reordering.
fn track_seed(protocol_seed: u64, track_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in track_id.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ protocol_seed
}

/// Run the A/B evaluation: per track, split into segments, let `estimate`
/// produce parameters from A-side wet references and B-side dry inputs, then
/// render the B-side dry segments and score them against the B-side wet
/// audio, plus parameter MSE against the track's own preset. Failed tracks
/// are recorded and excluded from the medians.
pub fn run_protocol<F>(
    tracks: &[EvalTrack],
    method: &str,
    config: &str,
    seed: u64,
    estimate: F,
) -> Result<EvalReport>
where
    F: Fn(&EstimateContext) -> Result<ParamVector>,
{
    if tracks.is_empty() {
        return Err(Error::EmptyCollection("evaluation tracks"));
    }

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for track in tracks {
        match score_track(track, seed, &estimate) {
            Ok(score) => scores.push(score),
            Err(e) => failures.push(TrackFailure {
                track_id: track.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if scores.is_empty() {
        return Err(Error::EmptyCollection("successful evaluation tracks"));
    }

    let pick = |f: fn(&TrackScore) -> f64| {
        median(&scores.iter().map(f).collect::<Vec<_>>()).expect("scores are non-empty")
    };
    let medians = MedianScores {
        mss_lr: pick(|s| s.mss_lr),
        mss_ms: pick(|s| s.mss_ms),
        mldr_lr: pick(|s| s.mldr_lr),
        mldr_ms: pick(|s| s.mldr_ms),
        pmse: pick(|s| s.pmse),
    };
    Ok(EvalReport {
        method: method.to_string(),
        config: config.to_string(),
        seed,
        tracks: scores,
        failures,
        medians,
    })
}

fn score_track<F>(track: &EvalTrack, protocol_seed: u64, estimate: &F) -> Result<TrackScore>
where
    F: Fn(&EstimateContext) -> Result<ParamVector>,
{
    let split = segment_and_split(&track.dry, &track.wet, track_seed(protocol_seed, &track.id))?;
    let a_wet: Vec<AudioBuffer> = split
        .a
        .iter()
        .map(|&k| track.wet.segment(segment_range(k)))
        .collect::<Result<_>>()?;
    let b_dry: Vec<AudioBuffer> = split
        .b
        .iter()
        .map(|&k| track.dry.segment(segment_range(k)))
        .collect::<Result<_>>()?;

    let theta = estimate(&EstimateContext {
        track,
        split: &split,
        a_wet: &a_wet,
        b_dry: &b_dry,
    })?;

    let mut sums = [0.0; 4];
    for (&k, dry_seg) in split.b.iter().zip(&b_dry) {
        let (l, r) = render(&theta, dry_seg.expect_mono()?);
        let est = AudioBuffer::stereo(l, r)?;
        let wet_seg = track.wet.segment(segment_range(k))?;
        sums[0] += mss(&est, &wet_seg, ChannelPair::LeftRight)?;
        sums[1] += mss(&est, &wet_seg, ChannelPair::MidSide)?;
        sums[2] += mldr(&est, &wet_seg, ChannelPair::LeftRight)?;
        sums[3] += mldr(&est, &wet_seg, ChannelPair::MidSide)?;
    }
    let n = split.b.len() as f64;
    Ok(TrackScore {
        track_id: track.id.clone(),
        mss_lr: sums[0] / n,
        mss_ms: sums[1] / n,
        mldr_lr: sums[2] / n,
        mldr_ms: sums[3] / n,
        pmse: pmse(&theta, &track.oracle),
    })
}
