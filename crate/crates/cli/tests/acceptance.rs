//! Acceptance gate for the calibration pipeline. Each test checks one
//! release criterion end to end and prints a single `[acceptance]` line with
//! the measured figure next to its pinned tolerance. Run with `--nocapture`
//! to see the lines for passing tests.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use voxstyle::dsp::{mid_side, mid_side_inverse, AudioBuffer};
use voxstyle::effects::params::{layout, DLY_DAMP, DLY_TIME, PAN, SEND_DELAY};
use voxstyle::effects::{neutral, render, ParamVector, PARAM_COUNT};
use voxstyle::encoders::{embed_stereo, EncoderKind, StereoEmbedding, StyleEmbedding};
use voxstyle::metrics::{
    median, mldr, mss, nn_baseline, pmse, ChannelPair, EmbeddingBank, NnQuery, NnSpace,
};
use voxstyle::objective::{
    angular_distance, map_loss, map_objective, InputSet, ObjectiveConfig, ReferenceSet, SigmaMode,
};
use voxstyle::optim::{adam_minimize, fd_gradient};
use voxstyle::prior::{fit_gaussian, GaussianPrior, PresetDataset};
use voxstyle::transfer::{style_transfer, TransferInit};
use voxstyle::{io, SAMPLE_RATE};

// ---------------------------------------------------------------------------
// fixtures

/// Pitched pseudo-vocal test signal: vibrato, tremolo, a second harmonic and
/// a little noise, so every stage of the chain sees structure it can act on.
fn voice(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.gen_range(110.0..220.0);
    (0..len)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let vib = 1.0 + 0.01 * (2.0 * std::f64::consts::PI * 5.0 * t).sin();
            let am = 0.75 + 0.25 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
            let ph = 2.0 * std::f64::consts::PI * f0 * vib * t;
            0.3 * am * (ph.sin() + 0.4 * (2.0 * ph).sin()) + 0.02 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero so the log stays finite.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `n` draws from an isotropic Gaussian of width `sigma` around the neutral
/// preset.
fn gaussian_presets(seed: u64, n: usize, sigma: f64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut raw = neutral().into_raw();
            for v in raw.iter_mut() {
                *v += sigma * standard_normal(&mut rng);
            }
            ParamVector::new(raw).unwrap()
        })
        .collect()
}

fn uniform_preset(rng: &mut ChaCha8Rng, spread: f64) -> ParamVector {
    let mut raw = neutral().into_raw();
    for v in raw.iter_mut() {
        *v += rng.gen_range(-spread..spread);
    }
    ParamVector::new(raw).unwrap()
}

fn fixture_prior(seed: u64) -> GaussianPrior {
    let data = PresetDataset::new(gaussian_presets(seed, 50, 0.25), "fixture".into()).unwrap();
    fit_gaussian(&data, 1e-3).unwrap()
}

fn refs_for(kind: EncoderKind, theta: &ParamVector, source: &[f64]) -> ReferenceSet {
    let (l, r) = render(theta, source);
    let emb = embed_stereo(kind, &AudioBuffer::stereo(l, r).unwrap()).unwrap();
    ReferenceSet::new(vec![emb], kind.id().to_string()).unwrap()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// criteria

/// Analytic posterior gradient vs central finite differences (h = 1e-4) on
/// 20 random presets and 0.5 s of audio, under both encoders. Tolerance:
/// per-coordinate relative error 1e-3; coordinates whose gradient is below
/// 1e-8 in magnitude are compared absolutely at 1e-8.
#[test]
fn gradient_contract() {
    let started = Instant::now();
    let source = voice(SAMPLE_RATE as usize / 2, 900);
    let style_source = voice(SAMPLE_RATE as usize / 2, 901);
    let prior = fixture_prior(902);
    let inputs = InputSet::new(vec![AudioBuffer::mono(source).unwrap()]).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(903);
    let thetas: Vec<ParamVector> = (0..20).map(|_| uniform_preset(&mut rng, 0.5)).collect();

    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    for kind in [EncoderKind::Mfcc, EncoderKind::Mir] {
        let refs = refs_for(kind, &uniform_preset(&mut rng, 0.5), &style_source);
        let cfg = ObjectiveConfig::new(0.1, kind.id(), SigmaMode::Adaptive).unwrap();
        for (t, theta) in thetas.iter().enumerate() {
            let (_, grad) = map_objective(theta, &inputs, &refs, &prior, &cfg).unwrap();
            let fd = fd_gradient(
                |p| map_loss(p, &inputs, &refs, &prior, &cfg),
                theta,
                1e-4,
            )
            .unwrap();
            for k in 0..PARAM_COUNT {
                let diff = (grad[k] - fd[k]).abs();
                if grad[k].abs() < 1e-8 {
                    worst_abs = worst_abs.max(diff);
                    assert!(
                        diff <= 1e-8,
                        "[acceptance] gradient contract: FAIL \
                         ({} theta {t} coord {k}: analytic {:+e} fd {:+e})",
                        kind.id(),
                        grad[k],
                        fd[k]
                    );
                } else {
                    let rel = diff / grad[k].abs().max(fd[k].abs());
                    worst_rel = worst_rel.max(rel);
                    assert!(
                        rel <= 1e-3,
                        "[acceptance] gradient contract: FAIL \
                         ({} theta {t} coord {k}: rel err {rel:.3e} > 1e-3)",
                        kind.id()
                    );
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(
        secs <= 600.0,
        "[acceptance] gradient contract: FAIL (took {secs:.0}s > 600s)"
    );
    println!(
        "[acceptance] gradient contract: PASS \
         (worst rel {worst_rel:.2e} vs 1e-3, worst small-coord abs {worst_abs:.2e} vs 1e-8, \
         {secs:.0}s)"
    );
}

/// Exactness of the identities the losses and transforms promise.
#[test]
fn analytic_identities() {
    let l = voice(8192, 910);
    let r = voice(8192, 911);
    let x = AudioBuffer::stereo(l.clone(), r.clone()).unwrap();

    let mss_self = mss(&x, &x, ChannelPair::LeftRight).unwrap();
    assert!(
        mss_self == 0.0,
        "[acceptance] analytic identities: FAIL (MSS(x,x) = {mss_self:e})"
    );
    let mldr_self = mldr(&x, &x, ChannelPair::MidSide).unwrap();
    assert!(
        mldr_self == 0.0,
        "[acceptance] analytic identities: FAIL (MLDR(x,x) = {mldr_self:e})"
    );

    let theta = uniform_preset(&mut ChaCha8Rng::seed_from_u64(912), 1.0);
    let pmse_self = pmse(&theta, &theta);
    assert!(
        pmse_self == 0.0,
        "[acceptance] analytic identities: FAIL (PMSE(theta,theta) = {pmse_self:e})"
    );

    let e1 = [1.0, 0.0, 0.0, 0.0];
    let e2 = [0.0, 0.0, 1.0, 0.0];
    let ortho = angular_distance(&e1, &e2).unwrap();
    assert!(
        (ortho - std::f64::consts::FRAC_PI_2).abs() <= 1e-9,
        "[acceptance] analytic identities: FAIL (orthogonal distance {ortho:.15})"
    );

    let prior = fixture_prior(913);
    let at_mean = prior.grad_log_density(prior.mean()).unwrap();
    let g_max = at_mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(
        g_max <= 1e-10,
        "[acceptance] analytic identities: FAIL (prior grad at mean {g_max:e})"
    );

    let pair = mid_side(&x).unwrap();
    let (l2_, r2_) = mid_side_inverse(&pair);
    let round = l
        .iter()
        .zip(&l2_)
        .chain(r.iter().zip(&r2_))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        round <= 1e-9,
        "[acceptance] analytic identities: FAIL (mid/side round trip {round:e})"
    );

    println!(
        "[acceptance] analytic identities: PASS \
         (self-losses exactly 0, orthogonal {ortho:.12}, prior grad {g_max:.1e} vs 1e-10, \
         round trip {round:.1e} vs 1e-9)"
    );
}

/// Gaussian log-density against a dense LU inverse/determinant written here
/// from scratch: relative error 1e-8 over 100 random (prior, theta) pairs.
#[test]
fn prior_matches_dense_reference() {
    // LU with partial pivoting; returns log|det| (asserting det > 0) and the
    // solution of A x = b. Deliberately naive: this is the reference.
    fn lu_logdet_solve(a: &mut Vec<Vec<f64>>, mut b: Vec<f64>) -> (f64, Vec<f64>) {
        let n = a.len();
        let mut sign = 1.0f64;
        let mut logdet = 0.0f64;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            if pivot != col {
                a.swap(pivot, col);
                b.swap(pivot, col);
                sign = -sign;
            }
            let d = a[col][col];
            assert!(d != 0.0, "singular reference matrix");
            sign *= d.signum();
            logdet += d.abs().ln();
            for row in col + 1..n {
                let f = a[row][col] / d;
                a[row][col] = f;
                for k in col + 1..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        assert!(sign > 0.0, "covariance determinant came out negative");
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        (logdet, x)
    }

    let mut rng = ChaCha8Rng::seed_from_u64(920);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let count = rng.gen_range(6..=20);
        let presets = (0..count).map(|_| uniform_preset(&mut rng, 0.6)).collect();
        let data = PresetDataset::new(presets, format!("inst{i}")).unwrap();
        let shrinkage = rng.gen_range(1e-3..0.5);
        let prior = fit_gaussian(&data, shrinkage).unwrap();
        let theta = uniform_preset(&mut rng, 0.8);

        let mine = prior.log_density(theta.raw()).unwrap();

        let cov = prior.covariance();
        let mut dense: Vec<Vec<f64>> = (0..PARAM_COUNT)
            .map(|r| (0..PARAM_COUNT).map(|c| cov[(r, c)]).collect())
            .collect();
        let delta: Vec<f64> = theta
            .raw()
            .iter()
            .zip(prior.mean())
            .map(|(t, m)| t - m)
            .collect();
        let (logdet, solved) = lu_logdet_solve(&mut dense, delta.clone());
        let quad: f64 = delta.iter().zip(&solved).map(|(d, s)| d * s).sum();
        let reference = -0.5
            * (PARAM_COUNT as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);

        let rel = (mine - reference).abs() / reference.abs();
        worst = worst.max(rel);
        assert!(
            rel <= 1e-8,
            "[acceptance] prior density vs dense reference: FAIL \
             (instance {i}: {mine:.12} vs {reference:.12}, rel {rel:.2e})"
        );
    }
    println!(
        "[acceptance] prior density vs dense reference: PASS \
         (100 instances, worst rel {worst:.2e} vs 1e-8)"
    );
}

/// Nearest-preset retrieval against exhaustive search in every space, on 50
/// random instances with datasets of up to 20 presets. Must agree exactly,
/// including the lowest-index tie rule.
#[test]
fn nearest_preset_matches_exhaustive_search() {
    fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }
    fn embedding(rng: &mut ChaCha8Rng, id: &str, degenerate: bool) -> StereoEmbedding {
        let mid = StyleEmbedding::new_validated(unit(rng, 16), id.to_string()).unwrap();
        let side = StyleEmbedding::new_validated(unit(rng, 16), id.to_string()).unwrap();
        StereoEmbedding {
            mid,
            side,
            side_degenerate: degenerate,
        }
    }
    // Mirror of the documented rule: mid-only when either side is
    // degenerate, otherwise the average of mid and side distances.
    fn pair_distance(a: &StereoEmbedding, b: &StereoEmbedding) -> f64 {
        let mid = angular_distance(&a.mid.values, &b.mid.values).unwrap();
        if a.side_degenerate || b.side_degenerate {
            return mid;
        }
        0.5 * (mid + angular_distance(&a.side.values, &b.side.values).unwrap())
    }

    let mut rng = ChaCha8Rng::seed_from_u64(930);
    for i in 0..50usize {
        let count = rng.gen_range(1..=20);
        let presets: Vec<ParamVector> =
            (0..count).map(|_| uniform_preset(&mut rng, 1.0)).collect();
        let data = PresetDataset::new(
            if presets.len() < 2 {
                vec![presets[0].clone(), presets[0].clone()]
            } else {
                presets.clone()
            },
            format!("inst{i}"),
        )
        .unwrap();

        match i % 4 {
            0 => {
                let query = uniform_preset(&mut rng, 1.0);
                let got = nn_baseline(NnQuery::Theta(&query), &data, NnSpace::Theta, None).unwrap();
                let expect = data
                    .presets
                    .iter()
                    .min_by(|a, b| {
                        l2(a.raw(), query.raw()).total_cmp(&l2(b.raw(), query.raw()))
                    })
                    .unwrap();
                assert_eq!(
                    got.raw(),
                    expect.raw(),
                    "[acceptance] nearest preset vs exhaustive: FAIL (theta instance {i})"
                );
            }
            rem => {
                let (space, id) = match rem {
                    1 => (NnSpace::Mfcc, "mfcc"),
                    2 => (NnSpace::Mir, "mir"),
                    _ => (NnSpace::Precomputed, "afx"),
                };
                let entries: Vec<StereoEmbedding> = (0..data.presets.len())
                    .map(|j| embedding(&mut rng, id, (i + j) % 5 == 0))
                    .collect();
                let bank = EmbeddingBank {
                    encoder_id: id.to_string(),
                    entries: entries.clone(),
                };
                let ref_count = rng.gen_range(1..=3);
                let refs_vec: Vec<StereoEmbedding> = (0..ref_count)
                    .map(|j| embedding(&mut rng, id, (i + j) % 7 == 0))
                    .collect();
                let refs = ReferenceSet::new(refs_vec.clone(), id.to_string()).unwrap();

                let got =
                    nn_baseline(NnQuery::Style(&refs), &data, space, Some(&bank)).unwrap();
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (j, entry) in entries.iter().enumerate() {
                    let d: f64 = refs_vec.iter().map(|r| pair_distance(r, entry)).sum::<f64>()
                        / ref_count as f64;
                    if d < best_d {
                        best = j;
                        best_d = d;
                    }
                }
                assert_eq!(
                    got.raw(),
                    data.presets[best].raw(),
                    "[acceptance] nearest preset vs exhaustive: FAIL ({id} instance {i})"
                );
            }
        }
    }
    println!(
        "[acceptance] nearest preset vs exhaustive: PASS \
         (50 instances across theta/mfcc/mir/precomputed, exact match incl. tie rule)"
    );
}

/// Optimiser update rule against a from-scratch reference on a scripted
/// quadratic: one step in closed form, then a full 200-step trajectory, both
/// within 1e-10 per coordinate.
#[test]
fn adam_matches_handwritten_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(940);
    let curv: Vec<f64> = (0..PARAM_COUNT)
        .map(|_| 10f64.powf(rng.gen_range(-2.0..2.0)))
        .collect();
    let target: Vec<f64> = (0..PARAM_COUNT).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x0: Vec<f64> = target
        .iter()
        .map(|t| t + rng.gen_range(-1.0..1.0))
        .collect();
    let quad = |x: &ParamVector| {
        let loss: f64 = x
            .raw()
            .iter()
            .zip(&curv)
            .zip(&target)
            .map(|((x, a), b)| a * (x - b) * (x - b))
            .sum();
        let grad: Vec<f64> = x
            .raw()
            .iter()
            .zip(&curv)
            .zip(&target)
            .map(|((x, a), b)| 2.0 * a * (x - b))
            .collect();
        Ok((loss, grad))
    };

    let lr = 0.05;
    let steps = 200;
    let run = adam_minimize(quad, &ParamVector::new(x0.clone()).unwrap(), steps, lr).unwrap();

    // Closed-form first step: m-hat = g, v-hat = g^2, update lr*g/(|g|+eps).
    for k in 0..PARAM_COUNT {
        let g = 2.0 * curv[k] * (x0[k] - target[k]);
        let expect = x0[k] - lr * g / (g.abs() + 1e-8);
        let got = run.trajectory[0].raw()[k];
        assert!(
            (got - expect).abs() <= 1e-10,
            "[acceptance] optimiser vs hand reference: FAIL \
             (one-step coord {k}: {got:.15} vs {expect:.15})"
        );
    }

    // Independent textbook loop, written against plain vectors.
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut x = x0;
    let mut m = vec![0.0; PARAM_COUNT];
    let mut v = vec![0.0; PARAM_COUNT];
    let mut worst = 0.0f64;
    for step in 1..=steps {
        let g: Vec<f64> = x
            .iter()
            .zip(&curv)
            .zip(&target)
            .map(|((x, a), b)| 2.0 * a * (x - b))
            .collect();
        for k in 0..PARAM_COUNT {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / (1.0 - beta1.powi(step as i32));
            let v_hat = v[k] / (1.0 - beta2.powi(step as i32));
            x[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        for k in 0..PARAM_COUNT {
            let diff = (run.trajectory[step - 1].raw()[k] - x[k]).abs();
            worst = worst.max(diff);
            assert!(
                diff <= 1e-10,
                "[acceptance] optimiser vs hand reference: FAIL \
                 (step {step} coord {k} diverges by {diff:e})"
            );
        }
    }
    println!(
        "[acceptance] optimiser vs hand reference: PASS \
         (one-step closed form and 200-step trajectory, worst diff {worst:.1e} vs 1e-10)"
    );
}

/// Closed-loop calibration: fit a prior to 50 synthetic presets, then for 10
/// trials sample a ground truth, render 5 s of reference audio, and run the
/// transfer at 300 steps with and without the prior. The prior must reduce
/// the median parameter error without degrading the spectral match by more
/// than 10%.
#[test]
fn closed_loop_calibration() {
    let started = Instant::now();
    let data = PresetDataset::new(gaussian_presets(41, 50, 0.25), "synthetic".into()).unwrap();
    let prior = fit_gaussian(&data, 1e-3).unwrap();
    let cfg_like = ObjectiveConfig::new(0.0, "mfcc", SigmaMode::Adaptive).unwrap();
    let cfg_map = ObjectiveConfig::new(0.1, "mfcc", SigmaMode::Adaptive).unwrap();

    let mut pmse_like = Vec::new();
    let mut pmse_map = Vec::new();
    let mut mss_like = Vec::new();
    let mut mss_map = Vec::new();
    for trial in 0..10u64 {
        let truth = &gaussian_presets(500 + trial, 1, 0.25)[0];
        let ref_source = voice(5 * SAMPLE_RATE as usize, 600 + trial);
        let refs = refs_for(EncoderKind::Mfcc, truth, &ref_source);
        // Held-out material the optimiser actually processes; shorter than
        // the references to keep the loop inside its time budget.
        let input = voice(2 * SAMPLE_RATE as usize, 700 + trial);
        let inputs = InputSet::new(vec![AudioBuffer::mono(input.clone()).unwrap()]).unwrap();
        let (tl, tr) = render(truth, &input);
        let truth_render = AudioBuffer::stereo(tl, tr).unwrap();

        for (cfg, pmse_out, mss_out) in [
            (&cfg_like, &mut pmse_like, &mut mss_like),
            (&cfg_map, &mut pmse_map, &mut mss_map),
        ] {
            let run = style_transfer(&refs, &inputs, &prior, cfg, 300, 0.01, &TransferInit::PriorMean)
                .unwrap();
            pmse_out.push(pmse(&run.final_theta, truth));
            let (el, er) = render(&run.final_theta, &input);
            let est = AudioBuffer::stereo(el, er).unwrap();
            mss_out.push(mss(&est, &truth_render, ChannelPair::LeftRight).unwrap());
        }
    }

    let med_pmse_like = median(&pmse_like).unwrap();
    let med_pmse_map = median(&pmse_map).unwrap();
    let med_mss_like = median(&mss_like).unwrap();
    let med_mss_map = median(&mss_map).unwrap();
    let secs = started.elapsed().as_secs_f64();

    assert!(
        med_pmse_map < med_pmse_like,
        "[acceptance] closed-loop calibration: FAIL \
         (median PMSE with prior {med_pmse_map:.4} !< without {med_pmse_like:.4})"
    );
    assert!(
        med_mss_map <= 1.1 * med_mss_like,
        "[acceptance] closed-loop calibration: FAIL \
         (median MSS with prior {med_mss_map:.4} > 1.1 x {med_mss_like:.4})"
    );
    assert!(
        secs <= 1800.0,
        "[acceptance] closed-loop calibration: FAIL (took {secs:.0}s > 1800s)"
    );
    println!(
        "[acceptance] closed-loop calibration: PASS \
         (median PMSE {med_pmse_map:.4} with prior vs {med_pmse_like:.4} without \
         ({:.0}% reduction), median MSS {med_mss_map:.3} vs {med_mss_like:.3} \
         (limit 1.1x), {secs:.0}s)",
        100.0 * (1.0 - med_pmse_map / med_pmse_like)
    );
}

/// With the likelihood disabled the posterior is the prior alone, so the
/// optimiser must contract to the prior mean: distance shrinks by 100x
/// within 1000 steps at lr 0.01.
#[test]
fn prior_only_objective_reaches_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let presets: Vec<ParamVector> = (0..400).map(|_| uniform_preset(&mut rng, 0.5)).collect();
    let data = PresetDataset::new(presets, "fixture".into()).unwrap();
    let prior = fit_gaussian(&data, 1e-3).unwrap();
    let mean = prior.mean().to_vec();

    let mut sign_rng = ChaCha8Rng::seed_from_u64(72);
    let mut start = mean.clone();
    for v in start.iter_mut() {
        *v += if sign_rng.gen_bool(0.5) { 3.0 } else { -3.0 };
    }
    let theta0 = ParamVector::new(start).unwrap();

    let alpha = 0.1;
    let run = adam_minimize(
        |theta| {
            let lp = prior.log_density(theta.raw())?;
            let grad = prior.grad_log_density(theta.raw())?;
            Ok((-alpha * lp, grad.iter().map(|g| -alpha * g).collect()))
        },
        &theta0,
        1000,
        0.01,
    )
    .unwrap();

    let d0 = l2(theta0.raw(), &mean);
    let d1 = l2(run.final_theta.raw(), &mean);
    assert!(
        d1 < 0.01 * d0,
        "[acceptance] prior-only contraction: FAIL \
         (distance {d1:.4} from mean, started at {d0:.4}, needs < {:.4})",
        0.01 * d0
    );
    println!(
        "[acceptance] prior-only contraction: PASS \
         (distance to mean {d0:.2} -> {d1:.4}, ratio {:.1e} vs 1e-2)",
        d1 / d0
    );
}

/// Two `evaluate` runs over the same manifest and seed must write
/// byte-identical reports.
#[test]
fn evaluation_protocol_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let base = dir.path();

    let mut entries = Vec::new();
    for t in 0..2u64 {
        let dry = voice(23 * SAMPLE_RATE as usize, 950 + t);
        let oracle = &gaussian_presets(960 + t, 1, 0.3)[0];
        let (wl, wr) = render(oracle, &dry);
        let entry = io::ManifestEntry {
            track_id: format!("t{t}"),
            dry_wav: format!("t{t}_dry.wav"),
            wet_wav: format!("t{t}_wet.wav"),
            oracle_preset: format!("t{t}_oracle.json"),
        };
        io::write_wav(base.join(&entry.dry_wav), &AudioBuffer::mono(dry).unwrap()).unwrap();
        io::write_wav(
            base.join(&entry.wet_wav),
            &AudioBuffer::stereo(wl, wr).unwrap(),
        )
        .unwrap();
        io::save_preset(base.join(&entry.oracle_preset), oracle).unwrap();
        entries.push(entry);
    }
    let manifest = base.join("manifest.json");
    io::save_manifest(&manifest, &entries).unwrap();
    let prior_path = base.join("prior.json");
    io::save_prior(&prior_path, &fixture_prior(970)).unwrap();

    let run = |report: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_voxstyle"))
            .args(["evaluate", "--method", "mean", "--seed", "17"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--prior")
            .arg(&prior_path)
            .arg("--report")
            .arg(report)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(report).unwrap()
    };
    let first = run(&base.join("report_a.json"));
    let second = run(&base.join("report_b.json"));
    assert!(
        first == second,
        "[acceptance] protocol determinism: FAIL (reports differ between identical runs)"
    );
    println!(
        "[acceptance] protocol determinism: PASS \
         (two evaluate runs, {} byte reports identical)",
        first.len()
    );
}

/// Ground truths about the effects chain itself: neutral settings are a
/// centre-pan pass-through, a hard-left pan silences the right channel, and
/// the delay's echo spacing matches its mapped time.
#[test]
fn effects_chain_sanity() {
    // Neutral pass-through under the constant-power pan law: both channels
    // carry exactly half the input at centre.
    let x = voice(8192, 980);
    let (l, r) = render(&neutral(), &x);
    let worst = x
        .iter()
        .enumerate()
        .map(|(i, v)| (l[i] - 0.5 * v).abs().max((r[i] - 0.5 * v).abs()))
        .fold(0.0f64, f64::max);
    assert!(
        worst <= 1e-6,
        "[acceptance] effects sanity: FAIL (neutral deviates from centre pan by {worst:e})"
    );

    let mut hard_left = neutral();
    hard_left.raw_mut()[PAN] = -40.0;
    let (ll, rr) = render(&hard_left, &x);
    let right_peak = rr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let left_peak = ll.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(
        right_peak <= 1e-9 && left_peak > 0.1,
        "[acceptance] effects sanity: FAIL (hard-left leaves right peak {right_peak:e})"
    );

    // Echo spacing: open the delay send on an impulse and measure the gap
    // between the first (left) and second (right) ping-pong repeats.
    let mut echoing = neutral();
    echoing.raw_mut()[SEND_DELAY] = 6.0;
    echoing.raw_mut()[DLY_TIME] = 1.7;
    echoing.raw_mut()[DLY_DAMP] = 8.0;
    let expected_ms = layout()[DLY_TIME].kind.forward(1.7);
    let expected = expected_ms * SAMPLE_RATE as f64 / 1000.0;
    let mut impulse = vec![0.0; 8192];
    impulse[0] = 1.0;
    let (el, er) = render(&echoing, &impulse);
    let argmax = |y: &[f64], lo: usize, hi: usize| {
        (lo..hi.min(y.len()))
            .max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()))
            .unwrap()
    };
    let d = expected.round() as usize;
    let p1 = argmax(&el, d / 2, d + d / 2);
    let p2 = argmax(&er, p1 + d / 2, p1 + d + d / 2);
    let spacing = (p2 - p1) as f64;
    assert!(
        el[p1].abs() > 1e-3 && er[p2].abs() > 1e-3,
        "[acceptance] effects sanity: FAIL (echoes too weak to locate)"
    );
    assert!(
        (spacing - expected).abs() <= 1.0,
        "[acceptance] effects sanity: FAIL \
         (echo spacing {spacing} samples vs mapped {expected:.2})"
    );

    println!(
        "[acceptance] effects sanity: PASS \
         (neutral within {worst:.1e} of centre pan, right-channel leak {right_peak:.1e}, \
         echo spacing {spacing} vs {expected:.2} samples)"
    );
}
