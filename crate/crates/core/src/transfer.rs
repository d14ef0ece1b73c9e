//! Track-level preset fitting against wet audio, and the reference-driven
//! MAP transfer loop that ties the objective, prior and optimiser together.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioBuffer;
use crate::effects::{neutral, render_taped, ParamVector, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::metrics::{mldr_with_grad, mss_with_grad, ChannelPair};
use crate::objective::{map_objective, InputSet, ObjectiveConfig, ReferenceSet};
use crate::optim::{adam_minimize, OptimRun};
use crate::prior::GaussianPrior;
use crate::SAMPLE_RATE;

/// Fitting chunk length: 10 s, stepped at 50% overlap.
pub const CHUNK_SAMPLES: usize = 10 * SAMPLE_RATE as usize;
pub const CHUNK_HOP: usize = CHUNK_SAMPLES / 2;

/// At most this many chunks enter one optimisation step.
pub const MAX_BATCH: usize = 35;

/// A chunk is silent when the wet side never rises above this peak.
const SILENCE_PEAK: f64 = 1e-3;

/// Batch subsampling is seeded per call so fits are reproducible.
const BATCH_SEED: u64 = 0;

/// Overlapping chunk spans with silent ones dropped. The last chunk is
/// anchored to the end of the track so the tail is always covered.
pub(crate) fn plan_chunks(wet: &AudioBuffer) -> Result<Vec<std::ops::Range<usize>>> {
    let len = wet.len();
    let mut spans = Vec::new();
    if len <= CHUNK_SAMPLES {
        spans.push(0..len);
    } else {
        let mut start = 0;
        while start + CHUNK_SAMPLES <= len {
            spans.push(start..start + CHUNK_SAMPLES);
            start += CHUNK_HOP;
        }
        if spans.last().expect("at least one span").end < len {
            spans.push(len - CHUNK_SAMPLES..len);
        }
    }
    let active: Vec<_> = spans
        .into_iter()
        .filter_map(|span| match wet.segment(span.clone()) {
            Ok(seg) if seg.peak() >= SILENCE_PEAK => Some(Ok(span)),
            Ok(_) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_>>()?;
    if active.is_empty() {
        return Err(Error::AllChunksSilent);
    }
    Ok(active)
}

/// Audio-domain loss for one chunk: spectral and microdynamics deviations
/// over the left/right and mid/side pairs, with the gradient pulled back
/// through the render.
fn chunk_loss_grad(
    theta: &ParamVector,
    dry: &[f64],
    wet: &AudioBuffer,
) -> Result<(f64, Vec<f64>)> {
    let tape = render_taped(theta, dry);
    let est = AudioBuffer::stereo(tape.out_l.clone(), tape.out_r.clone())?;
    let mut loss = 0.0;
    let mut gl = vec![0.0; dry.len()];
    let mut gr = vec![0.0; dry.len()];
    for pair in [ChannelPair::LeftRight, ChannelPair::MidSide] {
        let (l, a, b) = mss_with_grad(&est, wet, pair)?;
        loss += l;
        for i in 0..dry.len() {
            gl[i] += a[i];
            gr[i] += b[i];
        }
        let (l, a, b) = mldr_with_grad(&est, wet, pair)?;
        loss += l;
        for i in 0..dry.len() {
            gl[i] += a[i];
            gr[i] += b[i];
        }
    }
    let rg = tape.backward(&gl, &gr);
    Ok((loss, rg.raw))
}

/// Fit chain parameters to a processed track by gradient descent on the
/// audio-domain loss, starting from the neutral chain. Chunks are batched
/// per step (all of them, or a seeded draw of [`MAX_BATCH`] when there are
/// more) and the per-step loss is the batch mean.
pub fn fit_preset(
    dry: &AudioBuffer,
    wet: &AudioBuffer,
    steps: usize,
    lr: f64,
) -> Result<OptimRun> {
    let dry_mono = dry.expect_mono()?;
    wet.expect_stereo()?;
    if dry.len() != wet.len() {
        return Err(Error::LengthMismatch {
            a: dry.len(),
            b: wet.len(),
        });
    }

    let chunks = plan_chunks(wet)?;
    let wet_chunks: Vec<AudioBuffer> = chunks
        .iter()
        .map(|span| wet.segment(span.clone()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(BATCH_SEED);
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let objective = |theta: &ParamVector| -> Result<(f64, Vec<f64>)> {
        let batch: &[usize] = if order.len() <= MAX_BATCH {
            &order
        } else {
            order.shuffle(&mut rng);
            &order[..MAX_BATCH]
        };
        let mut loss = 0.0;
        let mut grad = vec![0.0; PARAM_COUNT];
        for &ci in batch {
            let (l, g) = chunk_loss_grad(theta, &dry_mono[chunks[ci].clone()], &wet_chunks[ci])?;
            loss += l;
            for (acc, gk) in grad.iter_mut().zip(&g) {
                *acc += gk;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        Ok((loss * scale, grad))
    };
    adam_minimize(objective, &neutral(), steps, lr)
}

/// Starting point of a transfer run.
#[derive(Debug, Clone)]
pub enum TransferInit {
    Neutral,
    PriorMean,
    Custom(ParamVector),
}

/// Minimise the negative log-posterior: style likelihood of the rendered
/// inputs against the references, plus the weighted prior.
pub fn style_transfer(
    refs: &ReferenceSet,
    inputs: &InputSet,
    prior: &GaussianPrior,
    cfg: &ObjectiveConfig,
    steps: usize,
    lr: f64,
    init: &TransferInit,
) -> Result<OptimRun> {
    let theta0 = match init {
        TransferInit::Neutral => neutral(),
        TransferInit::PriorMean => ParamVector::new(prior.mean().to_vec())?,
        TransferInit::Custom(theta) => theta.clone(),
    };
    adam_minimize(
        |theta| map_objective(theta, inputs, refs, prior, cfg),
        &theta0,
        steps,
        lr,
    )
}
