//! Command line driver for the calibration pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors. Every
//! subcommand writes a `<output>.runlog.json` next to its primary artifact
//! recording the flags, seed and crate version that produced it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use voxstyle::dsp::AudioBuffer;
use voxstyle::effects::render;
use voxstyle::encoders::{embed_stereo, EncoderKind};
use voxstyle::io;
use voxstyle::metrics::{mean_baseline, nn_baseline, run_protocol, NnQuery, NnSpace};
use voxstyle::objective::{InputSet, ObjectiveConfig, ReferenceSet, SigmaMode};
use voxstyle::prior::fit_gaussian;
use voxstyle::transfer::{fit_preset, style_transfer, TransferInit};
use voxstyle::Error;

#[derive(Parser)]
#[command(
    name = "voxstyle",
    version,
    about = "Calibrated style transfer for a differentiable vocal effects chain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a mono track through the chain with a saved preset.
    Render {
        /// Mono input WAV.
        #[arg(long)]
        input: PathBuf,
        /// Preset JSON holding the parameter vector.
        #[arg(long)]
        preset: PathBuf,
        /// Stereo output WAV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit chain parameters to a dry/wet pair by gradient descent.
    FitPreset {
        /// Mono dry WAV.
        #[arg(long)]
        dry: PathBuf,
        /// Stereo wet WAV, time-aligned with the dry track.
        #[arg(long)]
        wet: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Fitted preset JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Gaussian preset prior over a preset dataset.
    FitPrior {
        /// Preset dataset JSON.
        #[arg(long)]
        presets: PathBuf,
        /// Shrinkage towards the scaled identity, in [0, 1].
        #[arg(long, default_value_t = 1e-3)]
        shrinkage: f64,
        /// Prior JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate chain parameters matching reference recordings.
    Transfer {
        /// Mono input WAV; repeat for several content examples.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Reference WAV carrying the target style; repeatable.
        #[arg(long, required = true)]
        reference: Vec<PathBuf>,
        /// Prior JSON from fit-prior.
        #[arg(long)]
        prior: PathBuf,
        /// Style encoder: mfcc or mir.
        #[arg(long, default_value = "mfcc")]
        encoder: String,
        /// Prior weight.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Recorded in the run log; the optimisation itself is deterministic.
        #[arg(long)]
        seed: Option<u64>,
        /// Estimated preset JSON.
        #[arg(long)]
        params_out: PathBuf,
        /// Optional render of the first input under the estimated preset.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Starting point: prior-mean, neutral, or a preset JSON path.
        #[arg(long, default_value = "prior-mean")]
        init: String,
    },
    /// Embed a recording into a style space.
    Embed {
        /// Input WAV; mono is treated as a centred stereo image.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "mfcc")]
        encoder: String,
        /// Embedding JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Find the dataset preset nearest to a query.
    Nearest {
        /// Preset dataset JSON.
        #[arg(long)]
        presets: PathBuf,
        /// Query space: theta, mfcc, mir or precomputed.
        #[arg(long, default_value = "theta")]
        space: String,
        /// Query preset (theta space).
        #[arg(long)]
        query_preset: Option<PathBuf>,
        /// Query reference WAVs (mfcc/mir spaces); repeatable.
        #[arg(long)]
        reference: Vec<PathBuf>,
        /// Query embedding JSONs (precomputed space); repeatable.
        #[arg(long)]
        query_embedding: Vec<PathBuf>,
        /// Embedding bank JSON, one entry per dataset preset.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Winning preset JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the segment-split evaluation protocol over a track manifest.
    Evaluate {
        /// Manifest JSON; audio and preset paths resolve relative to it.
        #[arg(long)]
        manifest: PathBuf,
        /// Estimator: map, mean, nn or oracle.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value = "mfcc")]
        encoder: String,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Prior JSON (map and mean methods).
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Preset dataset JSON (nn method).
        #[arg(long)]
        presets: Option<PathBuf>,
        /// Embedding bank JSON (nn method in embedding spaces).
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Query space for the nn method.
        #[arg(long, default_value = "theta")]
        space: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON.
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

fn write_runlog(
    primary_out: &Path,
    command: &str,
    seed: Option<u64>,
    config: serde_json::Value,
) -> Result<()> {
    let mut name = primary_out.file_name().unwrap_or_default().to_os_string();
    name.push(".runlog.json");
    let path = primary_out.with_file_name(name);
    io::save_runlog(
        &path,
        &io::RunLog {
            layout_version: voxstyle::LAYOUT_VERSION.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
        },
    )
    .with_context(|| format!("writing run log {}", path.display()))
}

fn read_wav(path: &Path) -> Result<AudioBuffer> {
    io::read_wav(path).with_context(|| format!("reading {}", path.display()))
}

/// Mono recordings become a centred stereo image (silent side channel).
fn as_stereo(buf: AudioBuffer) -> Result<AudioBuffer> {
    if buf.channels().len() == 2 {
        return Ok(buf);
    }
    let mono = buf.expect_mono()?.to_vec();
    Ok(AudioBuffer::stereo(mono.clone(), mono)?)
}

/// The optimisation path needs an encoder with gradients; the precomputed
/// loader is query-only.
fn gradient_encoder(name: &str) -> Result<EncoderKind> {
    if name == "precomputed" {
        return Err(Error::NotOptimisable(name.into()).into());
    }
    Ok(name.parse::<EncoderKind>()?)
}

fn embed_files(paths: &[PathBuf], kind: EncoderKind) -> Result<ReferenceSet> {
    let mut embeddings = Vec::with_capacity(paths.len());
    for path in paths {
        let audio = as_stereo(read_wav(path)?)?;
        embeddings.push(embed_stereo(kind, &audio)?);
    }
    Ok(ReferenceSet::new(embeddings, kind.id().to_string())?)
}

fn load_inputs(paths: &[PathBuf]) -> Result<InputSet> {
    let mut buffers = Vec::with_capacity(paths.len());
    for path in paths {
        buffers.push(read_wav(path)?);
    }
    Ok(InputSet::new(buffers)?)
}

fn parse_space(name: &str) -> Result<NnSpace> {
    Ok(match name {
        "theta" => NnSpace::Theta,
        "mfcc" => NnSpace::Mfcc,
        "mir" => NnSpace::Mir,
        "precomputed" => NnSpace::Precomputed,
        other => bail!("unknown query space {other:?}"),
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Render { input, preset, out } => {
            let dry = read_wav(&input)?;
            let theta = io::load_preset(&preset)?;
            let (l, r) = render(&theta, dry.expect_mono()?);
            io::write_wav(&out, &AudioBuffer::stereo(l, r)?)?;
            write_runlog(
                &out,
                "render",
                None,
                serde_json::json!({
                    "input": input, "preset": preset, "out": out,
                }),
            )?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::FitPreset {
            dry,
            wet,
            steps,
            lr,
            out,
        } => {
            let dry_buf = read_wav(&dry)?;
            let wet_buf = read_wav(&wet)?;
            let run = fit_preset(&dry_buf, &wet_buf, steps, lr)?;
            io::save_preset(&out, &run.final_theta)?;
            write_runlog(
                &out,
                "fit-preset",
                None,
                serde_json::json!({
                    "dry": dry, "wet": wet, "steps": steps, "lr": lr, "out": out,
                    "initial_loss": run.losses.first(),
                    "final_loss": run.losses.last(),
                }),
            )?;
            println!(
                "wrote {} (loss {:.6} -> {:.6})",
                out.display(),
                run.losses.first().copied().unwrap_or(f64::NAN),
                run.losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }

        Command::FitPrior {
            presets,
            shrinkage,
            out,
        } => {
            let data = io::load_dataset(&presets)?;
            let prior = fit_gaussian(&data, shrinkage)?;
            io::save_prior(&out, &prior)?;
            write_runlog(
                &out,
                "fit-prior",
                None,
                serde_json::json!({
                    "presets": presets, "shrinkage": shrinkage, "out": out,
                    "preset_count": data.presets.len(),
                }),
            )?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Transfer {
            input,
            reference,
            prior,
            encoder,
            alpha,
            steps,
            lr,
            seed,
            params_out,
            out,
            init,
        } => {
            let kind = gradient_encoder(&encoder)?;
            let prior_model = io::load_prior(&prior)?;
            let refs = embed_files(&reference, kind)?;
            let inputs = load_inputs(&input)?;
            let cfg = ObjectiveConfig::new(alpha, &encoder, SigmaMode::Adaptive)?;
            let start = match init.as_str() {
                "prior-mean" => TransferInit::PriorMean,
                "neutral" => TransferInit::Neutral,
                path => TransferInit::Custom(io::load_preset(path)?),
            };
            let run = style_transfer(&refs, &inputs, &prior_model, &cfg, steps, lr, &start)?;
            io::save_preset(&params_out, &run.final_theta)?;
            if let Some(out_path) = &out {
                let first = read_wav(&input[0])?;
                let (l, r) = render(&run.final_theta, first.expect_mono()?);
                io::write_wav(out_path, &AudioBuffer::stereo(l, r)?)?;
            }
            write_runlog(
                &params_out,
                "transfer",
                seed,
                serde_json::json!({
                    "input": input, "reference": reference, "prior": prior,
                    "encoder": encoder, "alpha": alpha, "steps": steps, "lr": lr,
                    "init": init, "params_out": params_out, "out": out,
                    "initial_loss": run.losses.first(),
                    "final_loss": run.losses.last(),
                }),
            )?;
            println!(
                "wrote {} (loss {:.6} -> {:.6})",
                params_out.display(),
                run.losses.first().copied().unwrap_or(f64::NAN),
                run.losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }

        Command::Embed {
            input,
            encoder,
            out,
        } => {
            let kind = encoder.parse::<EncoderKind>()?;
            let audio = as_stereo(read_wav(&input)?)?;
            let emb = embed_stereo(kind, &audio)?;
            io::save_embedding(&out, &emb)?;
            write_runlog(
                &out,
                "embed",
                None,
                serde_json::json!({
                    "input": input, "encoder": encoder, "out": out,
                }),
            )?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Nearest {
            presets,
            space,
            query_preset,
            reference,
            query_embedding,
            bank,
            out,
        } => {
            let data = io::load_dataset(&presets)?;
            let space_kind = parse_space(&space)?;
            let bank_model = bank.as_ref().map(io::load_bank).transpose()?;
            let winner = match space_kind {
                NnSpace::Theta => {
                    let path = query_preset
                        .as_ref()
                        .context("theta space needs --query-preset")?;
                    let query = io::load_preset(path)?;
                    nn_baseline(
                        NnQuery::Theta(&query),
                        &data,
                        space_kind,
                        bank_model.as_ref(),
                    )?
                }
                NnSpace::Mfcc | NnSpace::Mir => {
                    if reference.is_empty() {
                        bail!("{space} space needs at least one --reference");
                    }
                    let kind = space.parse::<EncoderKind>()?;
                    let refs = embed_files(&reference, kind)?;
                    nn_baseline(
                        NnQuery::Style(&refs),
                        &data,
                        space_kind,
                        bank_model.as_ref(),
                    )?
                }
                NnSpace::Precomputed => {
                    if query_embedding.is_empty() {
                        bail!("precomputed space needs at least one --query-embedding");
                    }
                    let bank_ref = bank_model
                        .as_ref()
                        .context("precomputed space needs --bank")?;
                    let mut embeddings = Vec::with_capacity(query_embedding.len());
                    for path in &query_embedding {
                        embeddings.push(io::load_embedding(path)?);
                    }
                    let refs = ReferenceSet::new(embeddings, bank_ref.encoder_id.clone())?;
                    nn_baseline(NnQuery::Style(&refs), &data, space_kind, Some(bank_ref))?
                }
            };
            io::save_preset(&out, &winner)?;
            write_runlog(
                &out,
                "nearest",
                None,
                serde_json::json!({
                    "presets": presets, "space": space, "query_preset": query_preset,
                    "reference": reference, "query_embedding": query_embedding,
                    "bank": bank, "out": out,
                }),
            )?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Evaluate {
            manifest,
            method,
            alpha,
            encoder,
            steps,
            lr,
            prior,
            presets,
            bank,
            space,
            seed,
            report,
        } => {
            let entries = io::load_manifest(&manifest)?;
            let base = manifest.parent().unwrap_or_else(|| Path::new("."));
            let mut tracks = Vec::with_capacity(entries.len());
            for entry in &entries {
                tracks.push(
                    io::load_track(entry, base)
                        .with_context(|| format!("loading track {}", entry.track_id))?,
                );
            }

            let config = serde_json::to_string(&serde_json::json!({
                "alpha": alpha, "encoder": encoder, "steps": steps, "lr": lr,
                "space": space,
            }))?;

            let result = match method.as_str() {
                "map" => {
                    let prior_path = prior.as_ref().context("map method needs --prior")?;
                    let prior_model = io::load_prior(prior_path)?;
                    let kind = gradient_encoder(&encoder)?;
                    let cfg = ObjectiveConfig::new(alpha, &encoder, SigmaMode::Adaptive)?;
                    run_protocol(&tracks, &method, &config, seed, |ctx| {
                        let embeddings = ctx
                            .a_wet
                            .iter()
                            .map(|seg| embed_stereo(kind, seg))
                            .collect::<voxstyle::Result<Vec<_>>>()?;
                        let refs = ReferenceSet::new(embeddings, kind.id().to_string())?;
                        let inputs = InputSet::new(ctx.b_dry.to_vec())?;
                        let run = style_transfer(
                            &refs,
                            &inputs,
                            &prior_model,
                            &cfg,
                            steps,
                            lr,
                            &TransferInit::PriorMean,
                        )?;
                        Ok(run.final_theta)
                    })?
                }
                "mean" => {
                    let prior_path = prior.as_ref().context("mean method needs --prior")?;
                    let prior_model = io::load_prior(prior_path)?;
                    let theta = mean_baseline(&prior_model);
                    run_protocol(&tracks, &method, &config, seed, move |_| Ok(theta.clone()))?
                }
                "nn" => {
                    let presets_path = presets.as_ref().context("nn method needs --presets")?;
                    let data = io::load_dataset(presets_path)?;
                    let space_kind = parse_space(&space)?;
                    let bank_model = bank.as_ref().map(io::load_bank).transpose()?;
                    run_protocol(&tracks, &method, &config, seed, |ctx| {
                        match space_kind {
                            NnSpace::Theta => nn_baseline(
                                NnQuery::Theta(&ctx.track.oracle),
                                &data,
                                space_kind,
                                bank_model.as_ref(),
                            ),
                            NnSpace::Mfcc | NnSpace::Mir => {
                                let kind = if space_kind == NnSpace::Mfcc {
                                    EncoderKind::Mfcc
                                } else {
                                    EncoderKind::Mir
                                };
                                let embeddings = ctx
                                    .a_wet
                                    .iter()
                                    .map(|seg| embed_stereo(kind, seg))
                                    .collect::<voxstyle::Result<Vec<_>>>()?;
                                let refs =
                                    ReferenceSet::new(embeddings, kind.id().to_string())?;
                                nn_baseline(
                                    NnQuery::Style(&refs),
                                    &data,
                                    space_kind,
                                    bank_model.as_ref(),
                                )
                            }
                            NnSpace::Precomputed => Err(voxstyle::Error::InvalidArgument(
                                "the protocol cannot supply precomputed query embeddings"
                                    .into(),
                            )),
                        }
                    })?
                }
                "oracle" => run_protocol(&tracks, &method, &config, seed, |ctx| {
                    Ok(ctx.track.oracle.clone())
                })?,
                other => bail!("unknown method {other:?} (map, mean, nn or oracle)"),
            };

            io::save_report(&report, &result)?;
            write_runlog(
                &report,
                "evaluate",
                Some(seed),
                serde_json::json!({
                    "manifest": manifest, "method": method, "alpha": alpha,
                    "encoder": encoder, "steps": steps, "lr": lr,
                    "prior": prior, "presets": presets, "bank": bank, "space": space,
                    "report": report,
                }),
            )?;
            println!(
                "wrote {} ({} tracks, {} failures; median pmse {:.6})",
                report.display(),
                result.tracks.len(),
                result.failures.len(),
                result.medians.pmse
            );
            Ok(())
        }
    }
}
