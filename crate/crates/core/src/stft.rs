//! One-sided STFT analysis and weighted overlap-add synthesis.
//!
//! Frames lie fully inside the signal: there is no padding at either end, so a
//! clip of `len` samples yields `1 + (len - window_len) / hop` frames and the
//! synthesized signal has `(frames - 1) * hop + window_len` samples. Synthesis
//! applies the analysis window a second time and divides by the overlapped sum
//! of squared windows, which reconstructs every sample covered by at least one
//! frame with nonzero window weight.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wave::WaveBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    #[serde(default)]
    pub window_kind: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms window, 16 ms hop and a 512-point FFT at 16 kHz.
    fn default() -> Self {
        StftConfig {
            window_len: 512,
            hop: 256,
            fft_len: 512,
            window_kind: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn window(&self) -> Vec<f64> {
        self.window_kind.samples(self.window_len)
    }

    /// Number of frames for a signal of `len` samples, `None` when the signal
    /// is shorter than one window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| 1 + (len - self.window_len) / self.hop)
    }

    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len || self.window_len > self.fft_len {
            return Err(Error::Config(format!(
                "need 0 < hop <= window_len <= fft_len, got hop={} window_len={} fft_len={}",
                self.hop, self.window_len, self.fft_len
            )));
        }
        if self.fft_len % 2 != 0 {
            return Err(Error::Config(format!(
                "fft_len must be even, got {}",
                self.fft_len
            )));
        }
        // Constant overlap-add: the hop-shifted window copies sum to a constant.
        let window = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| window.iter().skip(n).step_by(self.hop).sum())
            .collect();
        let reference = sums[0];
        let tolerance = 1e-9 * reference.abs().max(1.0);
        if sums.iter().any(|s| (s - reference).abs() > tolerance) || reference <= 0.0 {
            return Err(Error::Config(format!(
                "{:?} window of {} samples is not constant-overlap-add at hop {}",
                self.window_kind, self.window_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex STFT laid out as `(channel, frame, bin)` with `fft_len / 2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSpectrogram {
    data: Array3<Complex64>,
    sample_rate: u32,
}

impl MultiChannelSpectrogram {
    pub fn new(data: Array3<Complex64>, sample_rate: u32) -> Result<Self> {
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Data("spectrogram contains non-finite entries".into()));
        }
        if data.shape()[0] == 0 {
            return Err(Error::Shape("spectrogram needs at least one channel".into()));
        }
        Ok(MultiChannelSpectrogram { data, sample_rate })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    pub fn channel(&self, m: usize) -> ArrayView2<'_, Complex64> {
        self.data.index_axis(Axis(0), m)
    }

    /// Single-channel spectrogram holding channel `m`.
    pub fn select_channel(&self, m: usize) -> MultiChannelSpectrogram {
        MultiChannelSpectrogram {
            data: self.data.select(Axis(0), &[m]),
            sample_rate: self.sample_rate,
        }
    }
}

struct Plans {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

fn plans(fft_len: usize) -> Plans {
    let mut planner = RealFftPlanner::<f64>::new();
    Plans {
        forward: planner.plan_fft_forward(fft_len),
        inverse: planner.plan_fft_inverse(fft_len),
    }
}

pub fn stft(wave: &WaveBuffer, cfg: &StftConfig) -> Result<MultiChannelSpectrogram> {
    cfg.validate()?;
    let frames = cfg.frame_count(wave.len()).ok_or_else(|| {
        Error::Length(format!(
            "signal of {} samples is shorter than one {}-sample window",
            wave.len(),
            cfg.window_len
        ))
    })?;
    let window = cfg.window();
    let fft = plans(cfg.fft_len).forward;
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut data = Array3::zeros((wave.channels(), frames, cfg.bins()));

    for m in 0..wave.channels() {
        let signal = wave.channel(m);
        for l in 0..frames {
            let start = l * cfg.hop;
            input.iter_mut().for_each(|v| *v = 0.0);
            for (n, w) in window.iter().enumerate() {
                input[n] = signal[start + n] * w;
            }
            fft.process_with_scratch(&mut input, &mut output, &mut scratch)
                .map_err(|e| Error::Shape(e.to_string()))?;
            for (f, z) in output.iter().enumerate() {
                data[[m, l, f]] = *z;
            }
        }
    }
    MultiChannelSpectrogram::new(data, wave.sample_rate())
}

pub fn istft(spec: &MultiChannelSpectrogram, cfg: &StftConfig) -> Result<WaveBuffer> {
    cfg.validate()?;
    if spec.bins() != cfg.bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins but fft_len {} implies {}",
            spec.bins(),
            cfg.fft_len,
            cfg.bins()
        )));
    }
    let frames = spec.frames();
    let len = cfg.output_len(frames);
    let window = cfg.window();
    let ifft = plans(cfg.fft_len).inverse;
    let mut input = ifft.make_input_vec();
    let mut output = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / cfg.fft_len as f64;

    let mut norm = vec![0.0; len];
    for l in 0..frames {
        let start = l * cfg.hop;
        for (n, w) in window.iter().enumerate() {
            norm[start + n] += w * w;
        }
    }
    let floor = 1e-10 * norm.iter().cloned().fold(0.0, f64::max);

    let mut samples = Array2::zeros((spec.channels(), len));
    for m in 0..spec.channels() {
        for l in 0..frames {
            for (f, z) in input.iter_mut().enumerate() {
                *z = spec.data[[m, l, f]];
            }
            // Hermitian symmetry of a real frame forces real DC and Nyquist bins.
            input[0].im = 0.0;
            let last = input.len() - 1;
            input[last].im = 0.0;
            ifft.process_with_scratch(&mut input, &mut output, &mut scratch)
                .map_err(|e| Error::Shape(e.to_string()))?;
            let start = l * cfg.hop;
            for (n, w) in window.iter().enumerate() {
                samples[[m, start + n]] += output[n] * scale * w;
            }
        }
        for (t, weight) in norm.iter().enumerate() {
            samples[[m, t]] = if *weight > floor {
                samples[[m, t]] / weight
            } else {
                0.0
            };
        }
    }
    WaveBuffer::new(samples, spec.sample_rate())
}

/// Elementwise complex modulus, `(channel, frame, bin)`.
pub fn magnitude(spec: &MultiChannelSpectrogram) -> Array3<f64> {
    spec.data.mapv(|z| z.norm())
}
