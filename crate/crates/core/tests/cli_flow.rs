mod common;

use std::path::Path;

use meldiff::audio::AudioBuffer;
use meldiff::cli::run_cli;

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("meldiff").chain(args.iter().copied()))
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn train_then_run_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg_path = d.join("tiny.yaml");
    std::fs::write(&cfg_path, common::tiny_config().to_yaml().unwrap()).unwrap();
    let cfg = s(&cfg_path);
    let corpus = d.join("corpus");

    assert_eq!(run(&["make-corpus", "--config", &cfg, "--items", "3", "--duration", "0.5", "--output", &s(&corpus)]), 0);
    assert!(corpus.join("corpus.manifest.json").exists());
    assert!(corpus.join("item_0002.wav").exists());

    let (voc, dif) = (s(&d.join("v.ckpt")), s(&d.join("d.ckpt")));
    let train = |cmd: &str, out: &str| run(&[cmd, "--config", &cfg, "--corpus", &s(&corpus), "--steps", "3", "--output", out]);
    assert_eq!(train("train-vocoder", &voc), 0);
    assert_eq!(train("train-diffusion", &dif), 0);
    assert_eq!(train("train-diffusion", &dif), 1, "existing checkpoint must not be overwritten");

    let models = ["--diffusion", dif.as_str(), "--vocoder", voc.as_str(), "--steps", "4"];
    let task = |extra: &[&str], out: &str| {
        let mut args: Vec<&str> = extra.to_vec();
        args.extend_from_slice(&models);
        args.extend_from_slice(&["--output", out]);
        run(&args)
    };
    let gen = s(&d.join("gen.wav"));
    assert_eq!(task(&["generate", "--frames", "16"], &gen), 0);
    let audio = AudioBuffer::read_wav(&gen).unwrap();
    assert_eq!(audio.channels(), 1);
    assert!(audio.samples().iter().all(|v| v.is_finite()));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("gen.wav.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["checkpoint_format_version"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let item = s(&corpus.join("item_0000.wav"));
    let other = s(&corpus.join("item_0001.wav"));
    assert_eq!(task(&["audio2audio", "--input", &item, "--timestep", "300"], &s(&d.join("a2a.wav"))), 0);
    assert_eq!(
        task(&["interpolate", "--a", &item, "--b", &other, "--ratio", "0.3", "--timestep", "500"], &s(&d.join("mix.wav"))),
        0
    );
    assert_eq!(task(&["inpaint", "--input", &item, "--keep", "0:0.1,0.3:0.4"], &s(&d.join("inp.wav"))), 0);
    assert_eq!(task(&["inpaint", "--input", &item, "--keep", "0:99"], &s(&d.join("bad.wav"))), 1);

    let short = d.join("short.wav");
    AudioBuffer::read_wav(&item).unwrap().slice(0, 128 * 7).unwrap().write_wav(&short).unwrap();
    let out = s(&d.join("out.wav"));
    assert_eq!(task(&["outpaint", "--input", &s(&short), "--extend-frames", "8"], &out), 0);
    assert_eq!(AudioBuffer::read_wav(&out).unwrap().len(), 128 * 15);
}

#[test]
fn missing_required_flags_are_usage_errors() {
    assert_eq!(run(&["generate", "--output", "x.wav"]), 2);
    assert_eq!(run(&["interpolate", "--output", "x.wav", "--ratio", "0.5"]), 2);
    assert_eq!(run(&["train-diffusion"]), 2);
}
