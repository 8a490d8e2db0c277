//! Small f32 building blocks shared by the sifting network and the speaker
//! encoder.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};

pub fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn expect_shape(container: &Container, name: &str, shape: &[usize]) -> Result<Tensor> {
    let tensor = container.require(name)?;
    if tensor.shape != shape {
        return Err(Error::Weights(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            tensor.shape
        )));
    }
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Weights(format!("tensor `{name}` has non-finite values")));
    }
    Ok(tensor.clone())
}

pub(crate) fn to_array2(tensor: Tensor, rows: usize, cols: usize) -> Array2<f32> {
    Array2::from_shape_vec((rows, cols), tensor.data).expect("shape checked")
}

/// Single-direction LSTM layer with PyTorch gate order `(i, f, g, o)`.
///
/// `input` is `(4H, I)`, `recurrent` is `(4H, H)` and `bias` is the combined
/// `(4H)` input and recurrent bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input: Array2<f32>,
    pub recurrent: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Lstm {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Lstm {
            input: Array2::zeros((4 * hidden, input_size)),
            recurrent: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.ncols()
    }

    pub fn input_size(&self) -> usize {
        self.input.ncols()
    }

    pub(crate) fn from_container(
        container: &Container,
        prefix: &str,
        input_size: usize,
        hidden: usize,
    ) -> Result<Self> {
        let input = expect_shape(container, &format!("{prefix}.input"), &[4 * hidden, input_size])?;
        let recurrent =
            expect_shape(container, &format!("{prefix}.recurrent"), &[4 * hidden, hidden])?;
        let bias = expect_shape(container, &format!("{prefix}.bias"), &[4 * hidden])?;
        Ok(Lstm {
            input: to_array2(input, 4 * hidden, input_size),
            recurrent: to_array2(recurrent, 4 * hidden, hidden),
            bias: Array1::from(bias.data),
        })
    }

    pub(crate) fn write_into(&self, container: &mut Container, prefix: &str) {
        let put = |c: &mut Container, name: &str, shape: Vec<usize>, data: Vec<f32>| {
            c.insert(format!("{prefix}.{name}"), Tensor::new(shape, data));
        };
        put(
            container,
            "input",
            self.input.shape().to_vec(),
            self.input.iter().copied().collect(),
        );
        put(
            container,
            "recurrent",
            self.recurrent.shape().to_vec(),
            self.recurrent.iter().copied().collect(),
        );
        put(container, "bias", vec![self.bias.len()], self.bias.to_vec());
    }

    /// Runs the sequence `(T, I)` forward from zero state, returning `(T, H)`.
    /// Output frame `t` depends only on input frames `<= t`.
    pub fn forward(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let hidden = self.hidden();
        let projected = x.dot(&self.input.t());
        let mut h = Array1::<f32>::zeros(hidden);
        let mut c = Array1::<f32>::zeros(hidden);
        let mut out = Array2::zeros((x.nrows(), hidden));
        for (t, row) in projected.rows().into_iter().enumerate() {
            self.step(row, &mut h, &mut c);
            out.row_mut(t).assign(&h);
        }
        out
    }

    /// Final hidden state after running the sequence.
    pub fn last_hidden(&self, x: ArrayView2<'_, f32>) -> Array1<f32> {
        let out = self.forward(x);
        match out.nrows() {
            0 => Array1::zeros(self.hidden()),
            n => out.row(n - 1).to_owned(),
        }
    }

    /// One step given the already projected input `W_x x_t`.
    fn step(&self, projected: ArrayView1<'_, f32>, h: &mut Array1<f32>, c: &mut Array1<f32>) {
        let hidden = self.hidden();
        let gates = self.recurrent.dot(&*h) + projected + &self.bias;
        for k in 0..hidden {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hidden + k]);
            let g = gates[2 * hidden + k].tanh();
            let o = sigmoid(gates[3 * hidden + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
    }
}
