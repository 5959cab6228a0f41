//! Multi-channel waveforms and WAV file I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Waveform samples laid out as `[channels, length]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        if samples.nrows() == 0 {
            return Err(Error::input("audio needs at least one channel"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("audio contains non-finite samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        Self::new(Array2::from_shape_vec((1, n), samples).expect("row vector"), sample_rate)
    }

    pub fn silence(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(Array2::zeros((channels, len)), sample_rate)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::input(format!("slice {start}..{} exceeds length {}", start + len, self.len())));
        }
        let samples = self.samples.slice_axis(Axis(1), ndarray::Slice::from(start..start + len)).to_owned();
        Self::new(samples, self.sample_rate)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        let interleaved: Vec<f64> = match spec.sample_format {
            SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
            SampleFormat::Int => {
                let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
                reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<Result<_, _>>()?
            }
        };
        let frames = interleaved.len() / channels.max(1);
        let samples = Array2::from_shape_vec((frames, channels), interleaved)
            .map_err(|e| Error::input(format!("malformed wav data: {e}")))?
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 32-bit float PCM.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = WavSpec {
            channels: self.channels() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut writer = WavWriter::create(path, spec)?;
        for t in 0..self.len() {
            for c in 0..self.channels() {
                writer.write_sample(self.samples[[c, t]] as f32)?;
            }
        }
        writer.finalize()?;
        Ok(())
    }
}
