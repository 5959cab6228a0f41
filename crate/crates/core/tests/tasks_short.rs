mod common;

use meldiff::corpus::synth_corpus;
use meldiff::tasks::{Pipeline, TaskKind, TaskRequest};
use meldiff::train::{train_diffusion, train_vocoder};

#[test]
fn short_trained_models_support_every_task() {
    let mut cfg = common::tiny_config();
    cfg.training.training_steps = 40;
    let data = synth_corpus(4, 0.5, cfg.data.sample_rate, 2).unwrap();
    let (diffusion, _) = train_diffusion(&cfg, &data, 1, |_| {}).unwrap();
    let (vocoder, _) = train_vocoder(&cfg, &data, 1, |_| {}).unwrap();
    let pipe = Pipeline::new(&diffusion, &vocoder).unwrap();
    let hop = cfg.transforms.hop_length;
    let a = data[0].slice(0, 15 * hop).unwrap();
    let b = data[1].slice(0, 15 * hop).unwrap();
    let xa = pipe.encode(&a).unwrap();

    // Larger timesteps destroy more of the source, averaged over seeds.
    let distance = |t: usize| -> f64 {
        (0..4)
            .map(|seed| {
                let y = pipe.audio_to_audio_mel(&a, t, seed).unwrap();
                (&y - &xa).mapv(|v| v * v).sum().sqrt()
            })
            .sum::<f64>()
            / 4.0
    };
    let d: Vec<f64> = [100, 500, 900].into_iter().map(distance).collect();
    assert!(d[0] < d[1] && d[1] < d[2], "distances {d:?}");

    for kind in [
        TaskKind::Generate { frames: 16 },
        TaskKind::AudioToAudio { source: a.clone(), timestep: 200 },
        TaskKind::Interpolate { a: a.clone(), b: b.clone(), ratio: 0.5, timestep: 400 },
        TaskKind::Inpaint { source: a.clone(), keep: vec![(0.0, 0.02)] },
        TaskKind::Outpaint { source: data[2].slice(0, 7 * hop).unwrap(), extend_frames: 8 },
    ] {
        let out = pipe.run(&TaskRequest { kind, seed: 5 }).unwrap();
        assert_eq!(out.mel.dim().2, 16);
        assert_eq!(out.audio.len(), 15 * hop);
        assert!(out.audio.samples().iter().all(|v| v.is_finite()));
    }
}
