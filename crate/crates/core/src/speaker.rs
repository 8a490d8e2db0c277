//! Speaker encoder producing a 256-D d-vector from an enrollment utterance.
//!
//! Front-end: 40-band log mel energies (25 ms Hann window, 10 ms hop, 512-point
//! FFT, HTK mel scale over 0..8 kHz) with the per-utterance band mean removed.
//! Network: three LSTM layers of width 256 and a linear 256 -> 256 projection
//! of the last hidden state. The utterance is cut into 160-frame windows with
//! 50% overlap; each window embedding is L2-normalized, the window embeddings
//! are averaged and the mean is L2-normalized again.

use std::path::Path;

use log::warn;
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::nn::{expect_shape, to_array2, Lstm};
use crate::wave::{WaveBuffer, SAMPLE_RATE};

pub const EMBEDDING_DIM: usize = 256;
pub const MEL_BANDS: usize = 40;
pub const ENCODER_LAYERS: usize = 3;
pub const MEL_WINDOW: usize = 400;
pub const MEL_HOP: usize = 160;
pub const MEL_FFT: usize = 512;
pub const WINDOW_FRAMES: usize = 160;
pub const WINDOW_HOP: usize = 80;
const LOG_FLOOR: f64 = 1e-10;
const NORM_TOLERANCE: f32 = 1e-4;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters `(band, bin)` over the one-sided spectrum.
pub fn mel_filterbank(bands: usize, fft_len: usize, sample_rate: u32) -> Array2<f64> {
    let bins = fft_len / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((bands, bins));
    for b in 0..bands {
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * f64::from(sample_rate) / fft_len as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[b, k]] = w;
        }
    }
    fb
}

/// Mean-normalized log mel energies `(frame, band)`.
pub fn log_mel(samples: &[f64]) -> Result<Array2<f64>> {
    if samples.len() < MEL_WINDOW {
        return Err(Error::Length(format!(
            "utterance has {} samples, need at least {MEL_WINDOW}",
            samples.len()
        )));
    }
    let frames = 1 + (samples.len() - MEL_WINDOW) / MEL_HOP;
    let window: Vec<f64> = (0..MEL_WINDOW)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / MEL_WINDOW as f64).cos())
        .collect();
    let fb = mel_filterbank(MEL_BANDS, MEL_FFT, SAMPLE_RATE);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(MEL_FFT);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut power = Array1::<f64>::zeros(MEL_FFT / 2 + 1);
    let mut out = Array2::zeros((frames, MEL_BANDS));
    for l in 0..frames {
        input.fill(0.0);
        let start = l * MEL_HOP;
        for (n, w) in window.iter().enumerate() {
            input[n] = samples[start + n] * w;
        }
        fft.process(&mut input, &mut spectrum).expect("fft sizes match");
        for (p, z) in power.iter_mut().zip(&spectrum) {
            *p = z.norm_sqr();
        }
        let energies = fb.dot(&power);
        for (b, e) in energies.iter().enumerate() {
            out[[l, b]] = e.max(LOG_FLOOR).ln();
        }
    }
    let mean = out.mean_axis(ndarray::Axis(0)).expect("at least one frame");
    out -= &mean;
    Ok(out)
}

/// Number of 160-frame windows taken from `frames` feature frames.
pub fn window_count(frames: usize) -> usize {
    if frames <= WINDOW_FRAMES {
        usize::from(frames > 0)
    } else {
        1 + (frames - WINDOW_FRAMES) / WINDOW_HOP
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    layers: Vec<Lstm>,
    proj_weight: Array2<f32>,
    proj_bias: Array1<f32>,
}

impl EncoderWeights {
    pub fn zeros() -> Self {
        let layers = (0..ENCODER_LAYERS)
            .map(|k| {
                let input = if k == 0 { MEL_BANDS } else { EMBEDDING_DIM };
                Lstm::zeros(input, EMBEDDING_DIM)
            })
            .collect();
        EncoderWeights {
            layers,
            proj_weight: Array2::zeros((EMBEDDING_DIM, EMBEDDING_DIM)),
            proj_bias: Array1::zeros(EMBEDDING_DIM),
        }
    }

    /// Uniform `±1/sqrt(256)` initialization from a seed.
    pub fn random(seed: u64) -> Self {
        let mut w = Self::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (EMBEDDING_DIM as f32).sqrt();
        let mut draw = |_: f32| rng.gen_range(-bound..bound);
        for layer in &mut w.layers {
            layer.input.mapv_inplace(&mut draw);
            layer.recurrent.mapv_inplace(&mut draw);
            layer.bias.mapv_inplace(&mut draw);
        }
        w.proj_weight.mapv_inplace(&mut draw);
        w.proj_bias.mapv_inplace(&mut draw);
        w
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_attribute("kind", "speaker-encoder");
        for (k, layer) in self.layers.iter().enumerate() {
            layer.write_into(&mut c, &format!("lstm{k}"));
        }
        c.insert(
            "proj.weight",
            Tensor::new(
                vec![EMBEDDING_DIM, EMBEDDING_DIM],
                self.proj_weight.iter().copied().collect(),
            ),
        );
        c.insert("proj.bias", Tensor::new(vec![EMBEDDING_DIM], self.proj_bias.to_vec()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if let Some(kind) = c.attribute("kind") {
            if kind != "speaker-encoder" {
                return Err(Error::Weights(format!(
                    "container holds `{kind}`, not speaker encoder weights"
                )));
            }
        }
        let mut known: Vec<String> = vec!["proj.weight".into(), "proj.bias".into()];
        for k in 0..ENCODER_LAYERS {
            for part in ["input", "recurrent", "bias"] {
                known.push(format!("lstm{k}.{part}"));
            }
        }
        if let Some(unknown) = c.names().find(|n| !known.iter().any(|k| k == n)) {
            return Err(Error::UnknownTensor(unknown.to_string()));
        }
        let layers = (0..ENCODER_LAYERS)
            .map(|k| {
                let input = if k == 0 { MEL_BANDS } else { EMBEDDING_DIM };
                Lstm::from_container(c, &format!("lstm{k}"), input, EMBEDDING_DIM)
            })
            .collect::<Result<Vec<_>>>()?;
        let proj_weight = to_array2(
            expect_shape(c, "proj.weight", &[EMBEDDING_DIM, EMBEDDING_DIM])?,
            EMBEDDING_DIM,
            EMBEDDING_DIM,
        );
        let proj_bias = Array1::from(expect_shape(c, "proj.bias", &[EMBEDDING_DIM])?.data);
        Ok(EncoderWeights {
            layers,
            proj_weight,
            proj_bias,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    /// Unnormalized embedding of one window of features `(frame, band)`.
    pub fn embed_window(&self, features: &Array2<f64>) -> Array1<f32> {
        let mut x = features.mapv(|v| v as f32);
        for layer in &self.layers {
            x = layer.forward(x.view());
        }
        let last = x.row(x.nrows() - 1);
        self.proj_weight.dot(&last) + &self.proj_bias
    }
}

fn l2_normalize(v: &Array1<f32>) -> Result<Array1<f32>> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::Data("embedding has zero norm".into()));
    }
    Ok(v.mapv(|x| (f64::from(x) / norm) as f32))
}

/// Averages L2-normalized window embeddings and normalizes the mean.
pub fn aggregate(windows: &[Array1<f32>]) -> Result<Array1<f32>> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to aggregate".into()));
    }
    let mut sum = vec![0.0f64; windows[0].len()];
    for w in windows {
        let w = l2_normalize(w)?;
        for (s, v) in sum.iter_mut().zip(w.iter()) {
            *s += f64::from(*v);
        }
    }
    l2_normalize(&Array1::from_iter(
        sum.iter().map(|s| (s / windows.len() as f64) as f32),
    ))
}

/// A unit-norm d-vector with the speaker it was enrolled from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Vec<f32>,
    speaker_id: String,
}

impl SpeakerEmbedding {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f32>, speaker_id: impl Into<String>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::Shape(format!(
                "embedding has {} values, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        let v = l2_normalize(&Array1::from(values))?;
        Ok(SpeakerEmbedding {
            values: v.to_vec(),
            speaker_id: speaker_id.into(),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn speaker_id(&self) -> &str {
        &self.speaker_id
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_attribute("kind", "dvector");
        c.set_attribute("speaker_id", self.speaker_id.clone());
        c.insert("dvector", Tensor::new(vec![EMBEDDING_DIM], self.values.clone()));
        c
    }

    /// Reads a stored embedding, renormalizing it with a warning if it is not
    /// unit length.
    pub fn from_container(c: &Container) -> Result<Self> {
        let tensor = c.require("dvector")?;
        if tensor.shape != [EMBEDDING_DIM] {
            return Err(Error::Shape(format!(
                "dvector has shape {:?}, expected [{EMBEDDING_DIM}]",
                tensor.shape
            )));
        }
        let speaker_id = c.attribute("speaker_id").unwrap_or("").to_string();
        let norm = tensor.data.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        if (norm as f32 - 1.0).abs() > NORM_TOLERANCE {
            warn!("d-vector for `{speaker_id}` has norm {norm:.6}; renormalizing");
            return Self::normalized(tensor.data.clone(), speaker_id);
        }
        Ok(SpeakerEmbedding {
            values: tensor.data.clone(),
            speaker_id,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }
}

/// Embeds a single-channel enrollment utterance.
pub fn embed_utterance(
    utterance: &WaveBuffer,
    weights: &EncoderWeights,
    speaker_id: &str,
) -> Result<SpeakerEmbedding> {
    if utterance.channels() != 1 {
        return Err(Error::Shape(format!(
            "enrollment must be mono, got {} channels",
            utterance.channels()
        )));
    }
    if utterance.sample_rate() != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "enrollment sample rate {} Hz, expected {SAMPLE_RATE}",
            utterance.sample_rate()
        )));
    }
    let samples = utterance.channel(0).to_vec();
    let features = log_mel(&samples)?;
    let frames = features.nrows();
    let windows: Vec<Array1<f32>> = (0..window_count(frames))
        .map(|w| {
            let start = w * WINDOW_HOP;
            let end = (start + WINDOW_FRAMES).min(frames);
            weights.embed_window(&features.slice(s![start..end, ..]).to_owned())
        })
        .collect();
    let mean = aggregate(&windows)?;
    Ok(SpeakerEmbedding {
        values: mean.to_vec(),
        speaker_id: speaker_id.to_string(),
    })
}
