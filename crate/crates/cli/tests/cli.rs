//! End-to-end checks of the command line surface: artifact plumbing, exit
//! codes, and determinism of the evaluation protocol.

use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

use voxstyle::dsp::AudioBuffer;
use voxstyle::effects::{neutral, render, ParamVector};
use voxstyle::io;
use voxstyle::prior::PresetDataset;
use voxstyle::SAMPLE_RATE;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voxstyle"))
}

fn voice(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
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

fn perturbed(seed: u64, radius: f64) -> ParamVector {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut raw = neutral().into_raw();
    for v in raw.iter_mut() {
        *v += rng.gen_range(-radius..radius);
    }
    ParamVector::new(raw).unwrap()
}

fn write_mono(path: &Path, samples: Vec<f64>) {
    io::write_wav(path, &AudioBuffer::mono(samples).unwrap()).unwrap();
}

fn save_prior_fixture(dir: &Path, seed: u64) -> PathBuf {
    let presets = (0..6).map(|k| perturbed(seed + k, 0.4)).collect();
    let data = PresetDataset::new(presets, "fixture".into()).unwrap();
    let prior = voxstyle::prior::fit_gaussian(&data, 1e-3).unwrap();
    let path = dir.join("prior.json");
    io::save_prior(&path, &prior).unwrap();
    path
}

#[test]
fn render_reproduces_the_library_output() {
    let dir = TempDir::new().unwrap();
    let dry = voice(8192, 1);
    let dry_path = dir.path().join("dry.wav");
    write_mono(&dry_path, dry.clone());
    let preset = perturbed(2, 0.3);
    let preset_path = dir.path().join("preset.json");
    io::save_preset(&preset_path, &preset).unwrap();
    let out_path = dir.path().join("out.wav");

    let status = bin()
        .args(["render", "--input"])
        .arg(&dry_path)
        .arg("--preset")
        .arg(&preset_path)
        .arg("--out")
        .arg(&out_path)
        .status()
        .unwrap();
    assert!(status.success());

    // The CLI renders the float32 copy of the dry signal, so compare against
    // the library render of exactly that.
    let loaded_dry = io::read_wav(&dry_path).unwrap();
    let (l, r) = render(&preset, loaded_dry.expect_mono().unwrap());
    let out = io::read_wav(&out_path).unwrap();
    assert_eq!(out.channel(0).len(), 8192);
    for i in 0..8192 {
        assert_eq!(out.channel(0)[i], l[i] as f32 as f64);
        assert_eq!(out.channel(1)[i], r[i] as f32 as f64);
    }

    let log = io::load_runlog(dir.path().join("out.wav.runlog.json")).unwrap();
    assert_eq!(log.command, "render");
    assert_eq!(log.seed, None);
}

#[test]
fn transfer_writes_params_render_and_runlog() {
    let dir = TempDir::new().unwrap();
    let prior_path = save_prior_fixture(dir.path(), 10);

    let truth = perturbed(20, 0.4);
    let (wl, wr) = render(&truth, &voice(8192, 21));
    let ref_path = dir.path().join("ref.wav");
    io::write_wav(&ref_path, &AudioBuffer::stereo(wl, wr).unwrap()).unwrap();
    let input_path = dir.path().join("input.wav");
    write_mono(&input_path, voice(8192, 22));

    let params_path = dir.path().join("theta.json");
    let out_path = dir.path().join("styled.wav");
    let output = bin()
        .args(["transfer", "--encoder", "mfcc", "--alpha", "0.1"])
        .args(["--steps", "3", "--lr", "0.01", "--seed", "7"])
        .arg("--input")
        .arg(&input_path)
        .arg("--reference")
        .arg(&ref_path)
        .arg("--prior")
        .arg(&prior_path)
        .arg("--params-out")
        .arg(&params_path)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let theta = io::load_preset(&params_path).unwrap();
    assert_eq!(theta.raw().len(), 130);
    assert!(io::read_wav(&out_path).unwrap().channels().len() == 2);

    let log = io::load_runlog(dir.path().join("theta.json.runlog.json")).unwrap();
    assert_eq!(log.command, "transfer");
    assert_eq!(log.seed, Some(7));
    assert_eq!(log.config["steps"], 3);
    assert!(log.config["final_loss"].is_number());
}

#[test]
fn transfer_refuses_encoders_without_gradients() {
    let dir = TempDir::new().unwrap();
    let prior_path = save_prior_fixture(dir.path(), 30);
    let wav = dir.path().join("x.wav");
    write_mono(&wav, voice(4096, 31));

    let output = bin()
        .args(["transfer", "--encoder", "precomputed"])
        .arg("--input")
        .arg(&wav)
        .arg("--reference")
        .arg(&wav)
        .arg("--prior")
        .arg(&prior_path)
        .arg("--params-out")
        .arg(dir.path().join("t.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("cannot drive optimisation"), "{stderr}");
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let output = bin().args(["render", "--bogus-flag", "x"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("--bogus-flag"));

    let output = bin().args(["transfer"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));

    let output = bin().arg("--help").output().unwrap();
    assert_eq!(output.status.code(), Some(0));

    // Unknown method is a runtime decision, not a clap-level usage error.
    let mut cmd = bin();
    cmd.args(["evaluate", "--manifest", "m.json", "--method", "bogus"]);
    let output = cmd.args(["--report", "r.json"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn fit_prior_validates_and_writes_a_loadable_prior() {
    let dir = TempDir::new().unwrap();
    let presets = (0..8).map(|k| perturbed(40 + k, 0.5)).collect();
    let data = PresetDataset::new(presets, "fixture".into()).unwrap();
    let data_path = dir.path().join("presets.json");
    io::save_dataset(&data_path, &data).unwrap();
    let prior_path = dir.path().join("prior.json");

    let status = bin()
        .args(["fit-prior", "--shrinkage", "1e-3"])
        .arg("--presets")
        .arg(&data_path)
        .arg("--out")
        .arg(&prior_path)
        .status()
        .unwrap();
    assert!(status.success());
    let prior = io::load_prior(&prior_path).unwrap();
    assert_eq!(prior.mean().len(), 130);

    let output = bin()
        .args(["fit-prior", "--shrinkage", "2.0"])
        .arg("--presets")
        .arg(&data_path)
        .arg("--out")
        .arg(dir.path().join("bad.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn fit_preset_runs_and_records_losses() {
    let dir = TempDir::new().unwrap();
    let dry = voice(8192, 50);
    let (wl, wr) = render(&perturbed(51, 0.2), &dry);
    let dry_path = dir.path().join("dry.wav");
    let wet_path = dir.path().join("wet.wav");
    write_mono(&dry_path, dry);
    io::write_wav(&wet_path, &AudioBuffer::stereo(wl, wr).unwrap()).unwrap();
    let out_path = dir.path().join("fitted.json");

    let status = bin()
        .args(["fit-preset", "--steps", "2", "--lr", "0.01"])
        .arg("--dry")
        .arg(&dry_path)
        .arg("--wet")
        .arg(&wet_path)
        .arg("--out")
        .arg(&out_path)
        .status()
        .unwrap();
    assert!(status.success());
    io::load_preset(&out_path).unwrap();
    let log = io::load_runlog(dir.path().join("fitted.json.runlog.json")).unwrap();
    assert!(log.config["initial_loss"].is_number());
}

#[test]
fn embed_and_nearest_round_trip() {
    let dir = TempDir::new().unwrap();
    let (l, r) = render(&perturbed(60, 0.3), &voice(8192, 61));
    let wav_path = dir.path().join("styled.wav");
    io::write_wav(&wav_path, &AudioBuffer::stereo(l, r).unwrap()).unwrap();

    let emb_path = dir.path().join("emb.json");
    let status = bin()
        .args(["embed", "--encoder", "mir"])
        .arg("--input")
        .arg(&wav_path)
        .arg("--out")
        .arg(&emb_path)
        .status()
        .unwrap();
    assert!(status.success());
    let emb = io::load_embedding(&emb_path).unwrap();
    let norm: f64 = emb.mid.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);

    // theta-space nearest with a query equal to a dataset row returns it.
    let presets: Vec<ParamVector> = (0..4).map(|k| perturbed(70 + k, 0.5)).collect();
    let data = PresetDataset::new(presets.clone(), "fixture".into()).unwrap();
    let data_path = dir.path().join("presets.json");
    io::save_dataset(&data_path, &data).unwrap();
    let query_path = dir.path().join("query.json");
    io::save_preset(&query_path, &presets[2]).unwrap();
    let hit_path = dir.path().join("nearest.json");

    let status = bin()
        .args(["nearest", "--space", "theta"])
        .arg("--presets")
        .arg(&data_path)
        .arg("--query-preset")
        .arg(&query_path)
        .arg("--out")
        .arg(&hit_path)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(io::load_preset(&hit_path).unwrap().raw(), presets[2].raw());
}

fn build_manifest(dir: &Path, track_seconds: usize, n_tracks: usize) -> PathBuf {
    let mut entries = Vec::new();
    for t in 0..n_tracks {
        let dry = voice(track_seconds * SAMPLE_RATE as usize, 100 + t as u64);
        let oracle = perturbed(200 + t as u64, 0.3);
        let (wl, wr) = render(&oracle, &dry);
        let track_id = format!("t{t}");
        let entry = io::ManifestEntry {
            track_id: track_id.clone(),
            dry_wav: format!("{track_id}_dry.wav"),
            wet_wav: format!("{track_id}_wet.wav"),
            oracle_preset: format!("{track_id}_oracle.json"),
        };
        write_mono(&dir.join(&entry.dry_wav), dry);
        io::write_wav(
            dir.join(&entry.wet_wav),
            &AudioBuffer::stereo(wl, wr).unwrap(),
        )
        .unwrap();
        io::save_preset(dir.join(&entry.oracle_preset), &oracle).unwrap();
        entries.push(entry);
    }
    let path = dir.join("manifest.json");
    io::save_manifest(&path, &entries).unwrap();
    path
}

#[test]
fn evaluate_is_deterministic_and_oracle_scores_zero_pmse() {
    let dir = TempDir::new().unwrap();
    let manifest = build_manifest(dir.path(), 23, 1);
    let prior_path = save_prior_fixture(dir.path(), 80);

    let run_eval = |method: &str, report_name: &str| {
        let report_path = dir.path().join(report_name);
        let mut cmd = bin();
        cmd.args(["evaluate", "--method", method, "--seed", "7"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--prior")
            .arg(&prior_path)
            .arg("--report")
            .arg(&report_path);
        let output = cmd.output().unwrap();
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        report_path
    };

    let first = run_eval("mean", "rep_a.json");
    let second = run_eval("mean", "rep_b.json");
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap(),
        "identical evaluate runs diverged"
    );
    let report = io::load_report(&first).unwrap();
    assert_eq!(report.tracks.len(), 1);
    assert!(report.medians.pmse > 0.0);

    let oracle_report = io::load_report(&run_eval("oracle", "rep_o.json")).unwrap();
    assert_eq!(oracle_report.medians.pmse, 0.0);

    let log = io::load_runlog(dir.path().join("rep_o.json.runlog.json")).unwrap();
    assert_eq!(log.command, "evaluate");
    assert_eq!(log.seed, Some(7));
}
