//! Synthetic training audio: short pentatonic phrases of harmonic tones.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// MIDI notes of a two-octave A minor pentatonic scale.
const SCALE: [u8; 11] = [57, 60, 62, 64, 67, 69, 72, 74, 76, 79, 81];

/// Peak amplitude range of every generated item.
pub const PEAK_RANGE: (f64, f64) = (0.3, 0.9);

fn midi_to_hz(note: u8) -> f64 {
    440.0 * 2f64.powf((note as f64 - 69.0) / 12.0)
}

/// Attack, decay, sustain level and release, in seconds except the level.
#[derive(Clone, Copy, Debug)]
struct Adsr {
    attack: f64,
    decay: f64,
    sustain: f64,
    release: f64,
}

impl Adsr {
    fn random(rng: &mut impl Rng) -> Self {
        Self {
            attack: rng.random_range(0.005..0.04),
            decay: rng.random_range(0.03..0.12),
            sustain: rng.random_range(0.4..0.8),
            release: rng.random_range(0.03..0.1),
        }
    }

    fn level(&self, t: f64, length: f64) -> f64 {
        let body = if t < self.attack {
            t / self.attack
        } else if t < self.attack + self.decay {
            1.0 - (1.0 - self.sustain) * (t - self.attack) / self.decay
        } else {
            self.sustain
        };
        let to_end = length - t;
        if to_end < self.release {
            body * (to_end / self.release).max(0.0)
        } else {
            body
        }
    }
}

/// Adds one voice of back-to-back notes to `out`.
fn render_voice(out: &mut [f64], sample_rate: f64, octave_shift: i8, gain: f64, rng: &mut impl Rng) {
    let mut start = 0usize;
    while start < out.len() {
        let length = rng.random_range(0.12..0.45);
        let n = ((length * sample_rate) as usize).max(1);
        let note = SCALE[rng.random_range(0..SCALE.len())] as i16 + 12 * octave_shift as i16;
        let f0 = midi_to_hz(note as u8);
        let harmonics: Vec<f64> = (1..=4).map(|k| rng.random_range(0.3..1.0) / k as f64).collect();
        let env = Adsr::random(rng);
        let phase = rng.random_range(0.0..TAU);
        let end = (start + n).min(out.len());
        for (i, sample) in out[start..end].iter_mut().enumerate() {
            let t = i as f64 / sample_rate;
            let tone: f64 = harmonics
                .iter()
                .enumerate()
                .filter(|(k, _)| f0 * (*k as f64 + 1.0) < 0.45 * sample_rate)
                .map(|(k, a)| a * (TAU * f0 * (k as f64 + 1.0) * t + phase).sin())
                .sum();
            *sample += gain * env.level(t, length) * tone;
        }
        start += n;
    }
}

/// `n_items` mono buffers of `round(duration_s * sample_rate)` samples each,
/// a melody over a bass line, peak-normalized into [`PEAK_RANGE`].
/// The same seed always yields the same corpus.
pub fn synth_corpus(n_items: usize, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Vec<AudioBuffer>> {
    if n_items == 0 {
        return Err(Error::input("corpus needs at least one item"));
    }
    if sample_rate == 0 || !(duration_s > 0.0) {
        return Err(Error::input("sample rate and duration must be positive"));
    }
    let len = (duration_s * sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::input("duration is shorter than one sample"));
    }
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_items)
        .map(|_| {
            let mut out = vec![0.0; len];
            render_voice(&mut out, sr, 0, 1.0, &mut rng);
            render_voice(&mut out, sr, -1, 0.6, &mut rng);
            let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let target = rng.random_range(PEAK_RANGE.0..PEAK_RANGE.1);
            if peak > 0.0 {
                out.iter_mut().for_each(|v| *v *= target / peak);
            }
            AudioBuffer::mono(out, sample_rate)
        })
        .collect()
}
