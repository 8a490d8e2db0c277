//! Target speech sifting network: a causal convolutional recurrent network
//! that maps feature planes plus a speaker embedding to a magnitude mask.
//!
//! Tensors are `(channels, frames, bins)`. Every convolution has a 1 x 3
//! kernel with stride (1, 2) and no padding, so layers never mix frames; the
//! only temporal context comes from the forward LSTM, which keeps the whole
//! network causal.
//!
//! Layout details a trainer must match:
//! * `conv{k}.kernel` is `(out, in, 1, 3)` and `deconv{k}.kernel` is
//!   `(in, out, 1, 3)`, the PyTorch `Conv2d` / `ConvTranspose2d` layouts.
//! * The encoder output `128 x T x 3` is flattened per frame channel-major
//!   (`c * 3 + f`) before the embedding is appended; the LSTM output is folded
//!   back the same way.
//! * Each decoder layer sees `cat([decoder path, encoder skip])` along channels.
//! * `deconv2` (63 -> 128 bins) carries one bin of output padding, which only
//!   receives the bias.
//! * ELU (alpha = 1) follows every conv and deconv except `deconv1`, which is
//!   followed by a sigmoid. The LSTM output has no extra activation.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::nn::{elu, expect_shape, sigmoid, Lstm};
use crate::spatial::FeatureStack;
use crate::speaker::{SpeakerEmbedding, EMBEDDING_DIM};

pub const FREQ_BINS: usize = 257;
pub const LSTM_HIDDEN: usize = 384;
pub const ENCODER_LAYERS: usize = 6;
const KERNEL: usize = 3;
const STRIDE: usize = 2;

/// Output channels of `conv1..conv6`.
pub fn conv_channels(k: usize) -> usize {
    4 << (k - 1)
}

/// Frequency sizes entering `conv1` through leaving `conv6`: 257, 128, ..., 3.
pub fn encoder_freqs() -> [usize; ENCODER_LAYERS + 1] {
    let mut freqs = [FREQ_BINS; ENCODER_LAYERS + 1];
    for k in 1..=ENCODER_LAYERS {
        freqs[k] = (freqs[k - 1] - KERNEL) / STRIDE + 1;
    }
    freqs
}

fn deconv_output_padding(k: usize) -> usize {
    let freqs = encoder_freqs();
    freqs[k - 1] - ((freqs[k] - 1) * STRIDE + KERNEL)
}

fn deconv_out_channels(k: usize) -> usize {
    if k == 1 {
        1
    } else {
        conv_channels(k - 1)
    }
}

fn bottleneck_width() -> usize {
    conv_channels(ENCODER_LAYERS) * encoder_freqs()[ENCODER_LAYERS]
}

/// One row of the layer table: name, input size, hyperparameters, output size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub layer: String,
    pub input: String,
    pub hyper: String,
    pub output: String,
}

fn chw(c: usize, f: usize) -> String {
    format!("{c} × T × {f}")
}

/// Layer table derived from the size arithmetic, in
/// `featureMaps × timeSteps × frequencyChannels` notation.
pub fn layer_table(input_planes: usize) -> Vec<LayerRow> {
    let freqs = encoder_freqs();
    let mut rows = Vec::new();
    let mut in_ch = input_planes;
    for k in 1..=ENCODER_LAYERS {
        let out_ch = conv_channels(k);
        rows.push(LayerRow {
            layer: format!("conv2d {k}"),
            input: chw(in_ch, freqs[k - 1]),
            hyper: format!("1 × 3, (1, 2), {out_ch}"),
            output: chw(out_ch, freqs[k]),
        });
        in_ch = out_ch;
    }
    let last = freqs[ENCODER_LAYERS];
    rows.push(LayerRow {
        layer: "reshape 1".into(),
        input: chw(in_ch, last),
        hyper: "-".into(),
        output: format!("T × {}", bottleneck_width()),
    });
    rows.push(LayerRow {
        layer: "lstm".into(),
        input: format!("T × ({}+{EMBEDDING_DIM})", bottleneck_width()),
        hyper: LSTM_HIDDEN.to_string(),
        output: format!("T × {LSTM_HIDDEN}"),
    });
    rows.push(LayerRow {
        layer: "reshape 2".into(),
        input: format!("T × {LSTM_HIDDEN}"),
        hyper: "-".into(),
        output: chw(2 * conv_channels(ENCODER_LAYERS), last),
    });
    for k in (1..=ENCODER_LAYERS).rev() {
        rows.push(LayerRow {
            layer: format!("deconv2d {k}"),
            input: chw(2 * conv_channels(k), freqs[k]),
            hyper: format!("1 × 3, (1, 2), {}", deconv_out_channels(k)),
            output: chw(deconv_out_channels(k), freqs[k - 1]),
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    /// `(out, in, 3)`
    kernel: Array3<f32>,
    bias: Array1<f32>,
}

impl Conv {
    fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv {
            kernel: Array3::zeros((out_ch, in_ch, KERNEL)),
            bias: Array1::zeros(out_ch),
        }
    }

    fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (in_ch, frames, freqs) = x.dim();
        let out_ch = self.kernel.shape()[0];
        let out_f = (freqs - KERNEL) / STRIDE + 1;
        let mut y = Array3::zeros((out_ch, frames, out_f));
        for o in 0..out_ch {
            for t in 0..frames {
                for j in 0..out_f {
                    let mut acc = self.bias[o];
                    for i in 0..in_ch {
                        for k in 0..KERNEL {
                            acc += self.kernel[[o, i, k]] * x[[i, t, STRIDE * j + k]];
                        }
                    }
                    y[[o, t, j]] = elu(acc);
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Deconv {
    /// `(in, out, 3)`
    kernel: Array3<f32>,
    bias: Array1<f32>,
    output_padding: usize,
}

impl Deconv {
    fn zeros(in_ch: usize, out_ch: usize, output_padding: usize) -> Self {
        Deconv {
            kernel: Array3::zeros((in_ch, out_ch, KERNEL)),
            bias: Array1::zeros(out_ch),
            output_padding,
        }
    }

    /// Transposed convolution without activation.
    fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (in_ch, frames, freqs) = x.dim();
        let out_ch = self.kernel.shape()[1];
        let out_f = (freqs - 1) * STRIDE + KERNEL + self.output_padding;
        let mut y = Array3::zeros((out_ch, frames, out_f));
        for o in 0..out_ch {
            for t in 0..frames {
                let mut row = y.slice_mut(s![o, t, ..]);
                row.fill(self.bias[o]);
                for i in 0..in_ch {
                    for m in 0..freqs {
                        let v = x[[i, t, m]];
                        for k in 0..KERNEL {
                            row[STRIDE * m + k] += self.kernel[[i, o, k]] * v;
                        }
                    }
                }
            }
        }
        y
    }
}

/// All weights of the sifting network.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnWeights {
    input_planes: usize,
    /// `conv1..conv6`
    convs: Vec<Conv>,
    lstm: Lstm,
    /// `deconv1..deconv6`, indexed by `k - 1`.
    deconvs: Vec<Deconv>,
}

impl CrnWeights {
    /// All-zero weights. The resulting mask is 0.5 everywhere.
    pub fn zeros(input_planes: usize) -> Result<Self> {
        check_planes(input_planes)?;
        let convs = (1..=ENCODER_LAYERS)
            .map(|k| {
                let in_ch = if k == 1 { input_planes } else { conv_channels(k - 1) };
                Conv::zeros(in_ch, conv_channels(k))
            })
            .collect();
        let deconvs = (1..=ENCODER_LAYERS)
            .map(|k| {
                Deconv::zeros(
                    2 * conv_channels(k),
                    deconv_out_channels(k),
                    deconv_output_padding(k),
                )
            })
            .collect();
        let weights = CrnWeights {
            input_planes,
            convs,
            lstm: Lstm::zeros(bottleneck_width() + EMBEDDING_DIM, LSTM_HIDDEN),
            deconvs,
        };
        weights.check_table()?;
        Ok(weights)
    }

    /// Uniform `±1/sqrt(fan_in)` initialization from a seed; forget-gate bias 1.
    pub fn random(input_planes: usize, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(input_planes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in &mut w.convs {
            let bound = 1.0 / ((conv.kernel.shape()[1] * KERNEL) as f32).sqrt();
            conv.kernel.mapv_inplace(|_| rng.gen_range(-bound..bound));
            conv.bias.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        let bound = 1.0 / (LSTM_HIDDEN as f32).sqrt();
        w.lstm.input.mapv_inplace(|_| rng.gen_range(-bound..bound));
        w.lstm.recurrent.mapv_inplace(|_| rng.gen_range(-bound..bound));
        w.lstm.bias.mapv_inplace(|_| rng.gen_range(-bound..bound));
        w.lstm
            .bias
            .slice_mut(s![LSTM_HIDDEN..2 * LSTM_HIDDEN])
            .fill(1.0);
        for deconv in &mut w.deconvs {
            let bound = 1.0 / ((deconv.kernel.shape()[0] * KERNEL) as f32).sqrt();
            deconv.kernel.mapv_inplace(|_| rng.gen_range(-bound..bound));
            deconv.bias.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        Ok(w)
    }

    pub fn input_planes(&self) -> usize {
        self.input_planes
    }

    /// Every layer's sizes against the derived table.
    fn check_table(&self) -> Result<()> {
        let freqs = encoder_freqs();
        let expected = [257, 128, 63, 31, 15, 7, 3];
        if freqs != expected {
            return Err(Error::Weights(format!(
                "encoder frequency chain {freqs:?} differs from {expected:?}"
            )));
        }
        if bottleneck_width() != LSTM_HIDDEN {
            return Err(Error::Weights("bottleneck width must equal LSTM hidden size".into()));
        }
        for k in 1..=ENCODER_LAYERS {
            let conv = &self.convs[k - 1];
            let in_ch = if k == 1 { self.input_planes } else { conv_channels(k - 1) };
            if conv.kernel.dim() != (conv_channels(k), in_ch, KERNEL) {
                return Err(Error::Weights(format!("conv{k} kernel {:?}", conv.kernel.dim())));
            }
            let deconv = &self.deconvs[k - 1];
            if deconv.kernel.dim() != (2 * conv_channels(k), deconv_out_channels(k), KERNEL) {
                return Err(Error::Weights(format!(
                    "deconv{k} kernel {:?}",
                    deconv.kernel.dim()
                )));
            }
            if deconv.output_padding > 1 {
                return Err(Error::Weights(format!(
                    "deconv{k} would need output padding {}",
                    deconv.output_padding
                )));
            }
        }
        Ok(())
    }

    pub fn tensor_names(input_planes: usize) -> Vec<String> {
        let _ = input_planes;
        let mut names = Vec::new();
        for k in 1..=ENCODER_LAYERS {
            names.push(format!("conv{k}.kernel"));
            names.push(format!("conv{k}.bias"));
            names.push(format!("deconv{k}.kernel"));
            names.push(format!("deconv{k}.bias"));
        }
        for n in ["lstm.input", "lstm.recurrent", "lstm.bias"] {
            names.push(n.to_string());
        }
        names
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_attribute("kind", "crn");
        c.set_attribute("input_planes", self.input_planes.to_string());
        c.set_attribute("embedding_dim", EMBEDDING_DIM.to_string());
        for (k, conv) in self.convs.iter().enumerate() {
            let (o, i, w) = conv.kernel.dim();
            c.insert(
                format!("conv{}.kernel", k + 1),
                Tensor::new(vec![o, i, 1, w], conv.kernel.iter().copied().collect()),
            );
            c.insert(
                format!("conv{}.bias", k + 1),
                Tensor::new(vec![o], conv.bias.to_vec()),
            );
        }
        for (k, deconv) in self.deconvs.iter().enumerate() {
            let (i, o, w) = deconv.kernel.dim();
            c.insert(
                format!("deconv{}.kernel", k + 1),
                Tensor::new(vec![i, o, 1, w], deconv.kernel.iter().copied().collect()),
            );
            c.insert(
                format!("deconv{}.bias", k + 1),
                Tensor::new(vec![o], deconv.bias.to_vec()),
            );
        }
        self.lstm.write_into(&mut c, "lstm");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if let Some(kind) = c.attribute("kind") {
            if kind != "crn" {
                return Err(Error::Weights(format!("container holds `{kind}`, not crn weights")));
            }
        }
        let input_planes: usize = c
            .attribute("input_planes")
            .ok_or_else(|| Error::Weights("missing `input_planes` attribute".into()))?
            .parse()
            .map_err(|_| Error::Weights("`input_planes` is not an integer".into()))?;
        check_planes(input_planes).map_err(|e| Error::Weights(e.to_string()))?;
        if let Some(dim) = c.attribute("embedding_dim") {
            if dim != EMBEDDING_DIM.to_string() {
                return Err(Error::Weights(format!(
                    "embedding_dim {dim}, expected {EMBEDDING_DIM}"
                )));
            }
        }
        let known = Self::tensor_names(input_planes);
        if let Some(unknown) = c.names().find(|n| !known.iter().any(|k| k == n)) {
            return Err(Error::UnknownTensor(unknown.to_string()));
        }

        let mut w = Self::zeros(input_planes)?;
        for k in 1..=ENCODER_LAYERS {
            let conv = &mut w.convs[k - 1];
            let (o, i, _) = conv.kernel.dim();
            let kernel = expect_shape(c, &format!("conv{k}.kernel"), &[o, i, 1, KERNEL])?;
            conv.kernel = Array3::from_shape_vec((o, i, KERNEL), kernel.data).unwrap();
            conv.bias = Array1::from(expect_shape(c, &format!("conv{k}.bias"), &[o])?.data);

            let deconv = &mut w.deconvs[k - 1];
            let (i, o, _) = deconv.kernel.dim();
            let kernel = expect_shape(c, &format!("deconv{k}.kernel"), &[i, o, 1, KERNEL])?;
            deconv.kernel = Array3::from_shape_vec((i, o, KERNEL), kernel.data).unwrap();
            deconv.bias = Array1::from(expect_shape(c, &format!("deconv{k}.bias"), &[o])?.data);
        }
        w.lstm = Lstm::from_container(c, "lstm", bottleneck_width() + EMBEDDING_DIM, LSTM_HIDDEN)?;
        w.check_table()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }
}

fn check_planes(input_planes: usize) -> Result<()> {
    if !(1..=3).contains(&input_planes) {
        return Err(Error::Config(format!(
            "input plane count must be 1, 2 or 3, got {input_planes}"
        )));
    }
    Ok(())
}

/// Soft mask `(frame, bin)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpectrogram {
    pub values: Array2<f64>,
}

impl MaskSpectrogram {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("mask values must lie in [0, 1]".into()));
        }
        Ok(MaskSpectrogram { values })
    }

    pub fn constant(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((frames, bins), value))
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

fn shape_label(x: &Array3<f32>) -> String {
    chw(x.shape()[0], x.shape()[2])
}

/// Runs the network and also reports the observed input and output size of
/// every layer, in the same notation as [`layer_table`].
pub fn crn_forward_traced(
    features: &FeatureStack,
    dvector: &SpeakerEmbedding,
    weights: &CrnWeights,
) -> Result<(MaskSpectrogram, Vec<LayerRow>)> {
    if features.plane_count() != weights.input_planes {
        return Err(Error::Shape(format!(
            "weights expect {} input planes, features have {}",
            weights.input_planes,
            features.plane_count()
        )));
    }
    if features.bins() != FREQ_BINS {
        return Err(Error::Shape(format!(
            "network expects {FREQ_BINS} bins, features have {}",
            features.bins()
        )));
    }
    let table = layer_table(weights.input_planes);
    let mut trace = Vec::with_capacity(table.len());
    let frames = features.frames();

    let mut x = Array3::<f32>::zeros((features.plane_count(), frames, FREQ_BINS));
    for (c, plane) in features.planes.iter().enumerate() {
        x.index_axis_mut(Axis(0), c).assign(&plane.mapv(|v| v as f32));
    }

    let mut skips = Vec::with_capacity(ENCODER_LAYERS);
    for (k, conv) in weights.convs.iter().enumerate() {
        let y = conv.forward(&x);
        trace.push(LayerRow {
            output: shape_label(&y),
            input: shape_label(&x),
            ..table[k].clone()
        });
        skips.push(y.clone());
        x = y;
    }

    // reshape 1: (128, T, 3) -> (T, 384), channel-major per frame.
    let (channels, _, last) = x.dim();
    let mut flat = Array2::<f32>::zeros((frames, channels * last + EMBEDDING_DIM));
    for t in 0..frames {
        for c in 0..channels {
            for f in 0..last {
                flat[[t, c * last + f]] = x[[c, t, f]];
            }
        }
        for (d, v) in dvector.values().iter().enumerate() {
            flat[[t, channels * last + d]] = *v;
        }
    }
    trace.push(LayerRow {
        input: shape_label(&x),
        output: format!("T × {}", channels * last),
        ..table[6].clone()
    });
    trace.push(LayerRow {
        input: format!("T × ({}+{})", channels * last, dvector.values().len()),
        output: format!("T × {}", weights.lstm.hidden()),
        ..table[7].clone()
    });
    let hidden = weights.lstm.forward(flat.view());

    // reshape 2 back to (128, T, 3), then the first skip concatenation.
    let mut folded = Array3::<f32>::zeros((channels, frames, last));
    for t in 0..frames {
        for c in 0..channels {
            for f in 0..last {
                folded[[c, t, f]] = hidden[[t, c * last + f]];
            }
        }
    }
    let mut x = concat_channels(&folded, &skips[ENCODER_LAYERS - 1]);
    trace.push(LayerRow {
        input: format!("T × {}", hidden.ncols()),
        output: shape_label(&x),
        ..table[8].clone()
    });

    for k in (1..=ENCODER_LAYERS).rev() {
        let deconv = &weights.deconvs[k - 1];
        let pre = deconv.forward(&x);
        let row = LayerRow {
            input: shape_label(&x),
            output: shape_label(&pre),
            ..table[9 + ENCODER_LAYERS - k].clone()
        };
        trace.push(row);
        if k == 1 {
            x = pre;
        } else {
            let y = pre.mapv(elu);
            x = concat_channels(&y, &skips[k - 2]);
        }
    }

    let values = x
        .index_axis(Axis(0), 0)
        .mapv(|v| f64::from(sigmoid(v)));
    Ok((MaskSpectrogram { values }, trace))
}

pub fn crn_forward(
    features: &FeatureStack,
    dvector: &SpeakerEmbedding,
    weights: &CrnWeights,
) -> Result<MaskSpectrogram> {
    crn_forward_traced(features, dvector, weights).map(|(mask, _)| mask)
}

fn concat_channels(a: &Array3<f32>, b: &Array3<f32>) -> Array3<f32> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching frame and bin sizes")
}

/// `mask * |Y| * exp(j angle(Y))`, which is just `mask * Y`.
pub fn apply_mask(
    noisy: ArrayView2<'_, Complex64>,
    mask: &MaskSpectrogram,
) -> Result<Array2<Complex64>> {
    if noisy.dim() != mask.values.dim() {
        return Err(Error::Shape(format!(
            "spectrogram {:?} and mask {:?} differ",
            noisy.dim(),
            mask.values.dim()
        )));
    }
    let mut out = noisy.to_owned();
    out.zip_mut_with(&mask.values, |z, m| *z *= *m);
    Ok(out)
}

/// Mean of `(mask * noisy - clean)^2` over all bins.
pub fn mse_masked_loss(
    mask: &MaskSpectrogram,
    noisy_mag: ArrayView2<'_, f64>,
    clean_mag: ArrayView2<'_, f64>,
) -> Result<f64> {
    if noisy_mag.dim() != mask.values.dim() || clean_mag.dim() != mask.values.dim() {
        return Err(Error::Shape(format!(
            "mask {:?}, noisy {:?}, clean {:?}",
            mask.values.dim(),
            noisy_mag.dim(),
            clean_mag.dim()
        )));
    }
    let count = mask.values.len().max(1) as f64;
    let total: f64 = ndarray::Zip::from(&mask.values)
        .and(&noisy_mag)
        .and(&clean_mag)
        .fold(0.0, |acc, m, n, c| acc + (m * n - c).powi(2));
    Ok(total / count)
}
