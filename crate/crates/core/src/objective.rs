//! Negative log-posterior over raw parameters: angular Gaussian likelihood
//! of mid/side style embeddings, averaged over all (input, reference) pairs,
//! plus a weighted Gaussian prior penalty. Every term carries an exact
//! hand-derived gradient so the whole thing can be dropped into Adam.

use std::str::FromStr;

use crate::effects::{render_taped, ParamVector, PARAM_COUNT};
use crate::encoders::{
    embed_mono_taped, side_is_degenerate, EncodeTape, EncoderKind, StereoEmbedding,
};
use crate::error::{Error, Result};
use crate::prior::GaussianPrior;
use crate::dsp::AudioBuffer;

/// Dot products are clamped this far inside [-1, 1] before the arccos so the
/// gradient stays finite for coincident or antipodal embeddings.
pub const DOT_CLAMP: f64 = 1e-7;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Per-channel variance set to the mean squared angular distance of the
    /// current pair set, differentiated through.
    Adaptive,
    /// Fixed variances for the mid and side channels.
    Fixed { mid_var: f64, side_var: f64 },
}

#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    /// Prior weight; zero recovers the pure likelihood.
    pub alpha: f64,
    pub encoder_id: String,
    pub sigma: SigmaMode,
}

impl ObjectiveConfig {
    pub fn new(alpha: f64, encoder_id: &str, sigma: SigmaMode) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "prior weight {alpha} must be finite and non-negative"
            )));
        }
        Ok(Self {
            alpha,
            encoder_id: encoder_id.to_string(),
            sigma,
        })
    }
}

/// Style targets: one mid/side embedding pair per reference recording.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub embeddings: Vec<StereoEmbedding>,
    pub encoder_id: String,
}

impl ReferenceSet {
    pub fn new(embeddings: Vec<StereoEmbedding>, encoder_id: String) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptyCollection("reference set"));
        }
        for e in &embeddings {
            if e.mid.encoder_id != encoder_id || e.side.encoder_id != encoder_id {
                return Err(Error::EncoderMismatch {
                    expected: encoder_id.clone(),
                    got: e.mid.encoder_id.clone(),
                });
            }
            check_unit(&e.mid.values)?;
            if !e.side_degenerate {
                check_unit(&e.side.values)?;
            }
        }
        Ok(Self {
            embeddings,
            encoder_id,
        })
    }
}

/// Raw vocals to be rendered and matched against the references.
#[derive(Debug, Clone)]
pub struct InputSet {
    pub buffers: Vec<AudioBuffer>,
}

impl InputSet {
    pub fn new(buffers: Vec<AudioBuffer>) -> Result<Self> {
        if buffers.is_empty() {
            return Err(Error::EmptyCollection("input set"));
        }
        for b in &buffers {
            b.expect_mono()?;
        }
        Ok(Self { buffers })
    }
}

fn check_unit(z: &[f64]) -> Result<()> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-3 {
        return Err(Error::NotUnitNorm { norm, tol: 1e-3 });
    }
    Ok(())
}

/// Great-circle distance between two unit embeddings.
pub fn angular_distance(z1: &[f64], z2: &[f64]) -> Result<f64> {
    Ok(distance_and_slope(z1, z2)?.0)
}

/// Returns (phi, d phi / d dot). The slope is zero where the clamp is active.
fn distance_and_slope(z1: &[f64], z2: &[f64]) -> Result<(f64, f64)> {
    if z1.len() != z2.len() {
        return Err(Error::EmbeddingDim {
            expected: z1.len(),
            got: z2.len(),
        });
    }
    check_unit(z1)?;
    check_unit(z2)?;
    let dot: f64 = z1.iter().zip(z2).map(|(a, b)| a * b).sum();
    let hi = 1.0 - DOT_CLAMP;
    if dot.abs() < hi {
        Ok((dot.acos(), -1.0 / (1.0 - dot * dot).sqrt()))
    } else {
        Ok((dot.clamp(-hi, hi).acos(), 0.0))
    }
}

/// Mean negative log-likelihood of one channel over every (reference,
/// estimate) pair. `sigma_sq` of `None` selects the adaptive variance.
pub fn channel_neg_log_likelihood(
    refs: &[&[f64]],
    ests: &[&[f64]],
    sigma_sq: Option<f64>,
) -> Result<f64> {
    Ok(channel_term(refs, ests, sigma_sq)?.loss)
}

struct ChannelTerm {
    loss: f64,
    /// d loss / d estimate embedding, one vector per estimate.
    est_grads: Vec<Vec<f64>>,
}

fn channel_term(refs: &[&[f64]], ests: &[&[f64]], sigma_sq: Option<f64>) -> Result<ChannelTerm> {
    if refs.is_empty() {
        return Err(Error::EmptyCollection("reference embeddings"));
    }
    if ests.is_empty() {
        return Err(Error::EmptyCollection("estimate embeddings"));
    }
    let pairs = (refs.len() * ests.len()) as f64;
    let mut phis = vec![vec![(0.0, 0.0); refs.len()]; ests.len()];
    let mut sq_sum = 0.0;
    for (j, est) in ests.iter().enumerate() {
        for (i, r) in refs.iter().enumerate() {
            let ps = distance_and_slope(r, est)?;
            sq_sum += ps.0 * ps.0;
            phis[j][i] = ps;
        }
    }
    // The clamp keeps every phi away from zero, so both branches divide by a
    // strictly positive variance.
    let (loss, var) = match sigma_sq {
        Some(var) => {
            if !(var.is_finite() && var > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "channel variance {var} must be positive"
                )));
            }
            let mean_term = sq_sum / pairs / (2.0 * var);
            ((var.sqrt()).ln() + HALF_LN_TWO_PI + mean_term, var)
        }
        None => {
            let var = sq_sum / pairs;
            (0.5 * var.ln() + 0.5 + HALF_LN_TWO_PI, var)
        }
    };
    // Either way d loss / d phi_ij = phi_ij / (pairs * var).
    let est_grads = ests
        .iter()
        .enumerate()
        .map(|(j, est)| {
            let mut g = vec![0.0; est.len()];
            for (i, r) in refs.iter().enumerate() {
                let (phi, slope) = phis[j][i];
                let w = phi / (pairs * var) * slope;
                for (gk, rk) in g.iter_mut().zip(*r) {
                    *gk += w * rk;
                }
            }
            g
        })
        .collect();
    Ok(ChannelTerm { loss, est_grads })
}

struct EstimateTapes {
    render: crate::effects::RenderTape,
    mid: EncodeTape,
    side: Option<EncodeTape>,
}

fn sigma_of(sigma: SigmaMode, side: bool) -> Option<f64> {
    match sigma {
        SigmaMode::Adaptive => None,
        SigmaMode::Fixed { mid_var, side_var } => Some(if side { side_var } else { mid_var }),
    }
}

fn evaluate(
    theta: &ParamVector,
    inputs: &InputSet,
    refs: &ReferenceSet,
    prior: &GaussianPrior,
    cfg: &ObjectiveConfig,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if !cfg.alpha.is_finite() || cfg.alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "prior weight {} must be finite and non-negative",
            cfg.alpha
        )));
    }
    let kind = EncoderKind::from_str(&cfg.encoder_id).map_err(|_| Error::NotOptimisable(cfg.encoder_id.clone()))?;
    if refs.encoder_id != cfg.encoder_id {
        return Err(Error::EncoderMismatch {
            expected: cfg.encoder_id.clone(),
            got: refs.encoder_id.clone(),
        });
    }
    if inputs.buffers.is_empty() {
        return Err(Error::EmptyCollection("input set"));
    }

    let mut tapes = Vec::with_capacity(inputs.buffers.len());
    for buf in &inputs.buffers {
        let mono = buf.expect_mono()?;
        let render = render_taped(theta, mono);
        let n = mono.len();
        let mut mid = vec![0.0; n];
        let mut side = vec![0.0; n];
        for k in 0..n {
            mid[k] = render.out_l[k] + render.out_r[k];
            side[k] = render.out_l[k] - render.out_r[k];
        }
        let mid_tape = embed_mono_taped(kind, &mid)?;
        let side_tape = if side_is_degenerate(&side) {
            log::warn!("render produced a silent side channel; skipping its likelihood");
            None
        } else {
            Some(embed_mono_taped(kind, &side)?)
        };
        tapes.push(EstimateTapes {
            render,
            mid: mid_tape,
            side: side_tape,
        });
    }

    let ref_mid: Vec<&[f64]> = refs.embeddings.iter().map(|e| e.mid.values.as_slice()).collect();
    let est_mid: Vec<&[f64]> = tapes.iter().map(|t| t.mid.z()).collect();
    let mid_term = channel_term(&ref_mid, &est_mid, sigma_of(cfg.sigma, false))?;

    // Degenerate sides carry zero weight: the channel averages over the
    // surviving pairs only, and vanishes entirely when none survive.
    let ref_side: Vec<&[f64]> = refs
        .embeddings
        .iter()
        .filter(|e| !e.side_degenerate)
        .map(|e| e.side.values.as_slice())
        .collect();
    let side_js: Vec<usize> = tapes
        .iter()
        .enumerate()
        .filter(|(_, t)| t.side.is_some())
        .map(|(j, _)| j)
        .collect();
    let est_side: Vec<&[f64]> = side_js
        .iter()
        .map(|&j| tapes[j].side.as_ref().unwrap().z())
        .collect();
    let side_term = if ref_side.is_empty() || est_side.is_empty() {
        log::warn!("no usable side-channel pairs; side likelihood contributes zero");
        None
    } else {
        Some(channel_term(&ref_side, &est_side, sigma_of(cfg.sigma, true))?)
    };

    let likelihood = mid_term.loss + side_term.as_ref().map_or(0.0, |t| t.loss);
    let log_prior = prior.log_density(theta.raw())?;
    let loss = likelihood - cfg.alpha * log_prior;

    if !with_grad {
        return Ok((loss, None));
    }

    let mut grad = vec![0.0; PARAM_COUNT];
    for (j, tape) in tapes.iter().enumerate() {
        let g_mid_sig = tape.mid.backward(&mid_term.est_grads[j]);
        let g_side_sig = match (&tape.side, &side_term) {
            (Some(side_tape), Some(term)) => side_js
                .iter()
                .position(|&sj| sj == j)
                .map(|pos| side_tape.backward(&term.est_grads[pos])),
            _ => None,
        };
        let n = g_mid_sig.len();
        let mut g_l = vec![0.0; n];
        let mut g_r = vec![0.0; n];
        for k in 0..n {
            let gs = g_side_sig.as_ref().map_or(0.0, |g| g[k]);
            g_l[k] = g_mid_sig[k] + gs;
            g_r[k] = g_mid_sig[k] - gs;
        }
        let rg = tape.render.backward(&g_l, &g_r);
        for (gk, rk) in grad.iter_mut().zip(&rg.raw) {
            *gk += rk;
        }
    }
    let g_prior = prior.grad_log_density(theta.raw())?;
    for (gk, pk) in grad.iter_mut().zip(&g_prior) {
        *gk -= cfg.alpha * pk;
    }
    Ok((loss, Some(grad)))
}

/// Negative log-posterior and its gradient with respect to the raw vector.
pub fn map_objective(
    theta: &ParamVector,
    inputs: &InputSet,
    refs: &ReferenceSet,
    prior: &GaussianPrior,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = evaluate(theta, inputs, refs, prior, cfg, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Forward-only evaluation; what finite-difference probes call.
pub fn map_loss(
    theta: &ParamVector,
    inputs: &InputSet,
    refs: &ReferenceSet,
    prior: &GaussianPrior,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    Ok(evaluate(theta, inputs, refs, prior, cfg, false)?.0)
}
