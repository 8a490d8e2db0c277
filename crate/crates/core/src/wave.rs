//! Multichannel time-domain buffers and 16-bit PCM WAV I/O.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};

use crate::error::{Error, Result};

/// Canonical sample rate of the whole pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// Real samples laid out as `(channel, sample)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl WaveBuffer {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.nrows() == 0 {
            return Err(Error::Shape("a wave buffer needs at least one channel".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("wave buffer contains non-finite samples".into()));
        }
        Ok(WaveBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let len = samples.len();
        let samples = Array2::from_shape_vec((1, len), samples)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let count = channels.len();
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("all channels must have equal length".into()));
        }
        let flat: Vec<f64> = channels.into_iter().flatten().collect();
        let samples =
            Array2::from_shape_vec((count, len), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(Array2::zeros((channels, len)), sample_rate)
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

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, m: usize) -> ArrayView1<'_, f64> {
        self.samples.row(m)
    }

    pub fn channel_mut(&mut self, m: usize) -> ArrayViewMut1<'_, f64> {
        self.samples.row_mut(m)
    }

    /// Copies one channel out as a mono buffer.
    pub fn select_channel(&self, m: usize) -> Result<WaveBuffer> {
        if m >= self.channels() {
            return Err(Error::Config(format!(
                "channel {m} out of range for {} channels",
                self.channels()
            )));
        }
        let row = self.samples.select(Axis(0), &[m]);
        WaveBuffer::new(row, self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |acc, s| acc.max(s.abs()))
    }

    pub fn energy(&self, m: usize) -> f64 {
        self.channel(m).iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, gain: f64) -> WaveBuffer {
        WaveBuffer {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }

    /// Returns the first `len` samples of every channel, zero-padding when the
    /// buffer is shorter.
    pub fn truncated(&self, len: usize) -> WaveBuffer {
        let mut out = Array2::zeros((self.channels(), len));
        let keep = len.min(self.len());
        out.slice_mut(ndarray::s![.., ..keep])
            .assign(&self.samples.slice(ndarray::s![.., ..keep]));
        WaveBuffer {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a 16-bit PCM WAV file at the canonical sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveBuffer> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Data(format!(
            "{}: expected 16-bit PCM, found {:?} {} bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz is not supported (expected {SAMPLE_RATE} Hz, no resampling is done)",
            path.display(),
            spec.sample_rate
        )));
    }
    let channels = spec.channels as usize;
    let interleaved = reader
        .samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    let frames = interleaved.len() / channels;
    let mut samples = Array2::zeros((channels, frames));
    for (i, s) in interleaved.iter().enumerate().take(frames * channels) {
        samples[[i % channels, i / channels]] = f64::from(*s) / 32768.0;
    }
    WaveBuffer::new(samples, spec.sample_rate)
}

/// Writes the buffer as 16-bit PCM. Samples outside `[-1, 1)` are clipped.
pub fn write_wav(path: impl AsRef<Path>, wave: &WaveBuffer) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for t in 0..wave.len() {
        for m in 0..wave.channels() {
            writer
                .write_sample(quantize(wave.samples[[m, t]]))
                .map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}

/// Writes the buffer as 32-bit float WAV, for inspecting RIRs and other
/// signals outside the PCM range.
pub fn write_wav_f32(path: impl AsRef<Path>, wave: &WaveBuffer) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for t in 0..wave.len() {
        for m in 0..wave.channels() {
            writer
                .write_sample(wave.samples[[m, t]] as f32)
                .map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}

/// Rounds to the nearest 16-bit step, which makes a written buffer read back
/// exactly.
pub fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
