//! Small 1-D convolutional regressors, implemented from scratch on f64.
//!
//! A [`Model`] maps a batch of `[window_len x channels]` inputs to a flat
//! output vector through a declared layer chain. Convolutions run as
//! im2col + matrix multiplication; gradients come from hand-written
//! backpropagation and are checked against finite differences in the test
//! suite. Everything is `f64`: training these models is cheap, and full
//! precision keeps gradient checks and reproducibility exact.
//!
//! The parameter surface is exposed flat ([`Model::params_flat`] /
//! [`Model::set_params_flat`]) so the optimizer and the finite-difference
//! oracle share one addressing scheme.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{ModelCheckpoint, NormStats, TargetStats, CHECKPOINT_SCHEMA_VERSION};
pub use train::{fit, TrainConfig};

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Cross-correlation along time: `[B x L x Cin] -> [B x L' x Cout]`
    /// with `L' = (L - kernel_len) / stride + 1`.
    Conv1d {
        /// Input channels.
        in_channels: usize,
        /// Output channels (filters).
        out_channels: usize,
        /// Kernel length in time steps.
        kernel_len: usize,
        /// Step between kernel applications.
        stride: usize,
    },
    /// Elementwise `max(x, 0)`.
    Relu,
    /// Temporal max pooling with non-overlapping windows; a trailing
    /// remainder shorter than `pool_len` is dropped.
    MaxPool1d {
        /// Pooling window length.
        pool_len: usize,
    },
    /// Reshapes `[B x L x C]` to `[B x L*C]`.
    Flatten,
    /// Affine map `y = W x + b` on flat activations.
    Dense {
        /// Input dimension.
        in_dim: usize,
        /// Output dimension.
        out_dim: usize,
    },
}

/// Shape of an activation as it flows through the layer chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Time-by-channel activation (per example).
    Temporal {
        /// Time steps.
        len: usize,
        /// Channels.
        channels: usize,
    },
    /// Flat activation (per example).
    Flat {
        /// Dimension.
        dim: usize,
    },
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::invalid("layer spec", why));
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_len,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel_len == 0 || stride == 0 {
                    return bad(format!("conv1d dimensions must all be >= 1, got {self:?}"));
                }
            }
            LayerSpec::MaxPool1d { pool_len } => {
                if pool_len == 0 {
                    return bad("max_pool1d pool_len must be >= 1".into());
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return bad(format!("dense dimensions must be >= 1, got {self:?}"));
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Output shape of this layer for a given input shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        let mismatch = |why: String| Err(Error::Shape(why));
        match (*self, input) {
            (
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_len,
                    stride,
                },
                Shape::Temporal { len, channels },
            ) => {
                if channels != in_channels {
                    return mismatch(format!(
                        "conv1d expects {in_channels} input channels, activation has {channels}"
                    ));
                }
                if len < kernel_len {
                    return mismatch(format!(
                        "conv1d kernel ({kernel_len}) longer than activation ({len})"
                    ));
                }
                Ok(Shape::Temporal {
                    len: (len - kernel_len) / stride + 1,
                    channels: out_channels,
                })
            }
            (LayerSpec::Conv1d { .. }, Shape::Flat { .. }) => {
                mismatch("conv1d needs a temporal activation".into())
            }
            (LayerSpec::Relu, shape) => Ok(shape),
            (LayerSpec::MaxPool1d { pool_len }, Shape::Temporal { len, channels }) => {
                if len < pool_len {
                    return mismatch(format!(
                        "max_pool1d window ({pool_len}) longer than activation ({len})"
                    ));
                }
                Ok(Shape::Temporal {
                    len: len / pool_len,
                    channels,
                })
            }
            (LayerSpec::MaxPool1d { .. }, Shape::Flat { .. }) => {
                mismatch("max_pool1d needs a temporal activation".into())
            }
            (LayerSpec::Flatten, Shape::Temporal { len, channels }) => Ok(Shape::Flat {
                dim: len * channels,
            }),
            (LayerSpec::Flatten, Shape::Flat { .. }) => {
                mismatch("flatten needs a temporal activation".into())
            }
            (LayerSpec::Dense { in_dim, out_dim }, Shape::Flat { dim }) => {
                if dim != in_dim {
                    return mismatch(format!(
                        "dense expects {in_dim} inputs, activation has {dim}"
                    ));
                }
                Ok(Shape::Flat { dim: out_dim })
            }
            (LayerSpec::Dense { .. }, Shape::Temporal { .. }) => {
                mismatch("dense needs a flat activation; add a flatten layer first".into())
            }
        }
    }
}

/// Output shape of each layer when `arch` consumes `input`.
pub fn infer_shapes(arch: &[LayerSpec], input: Shape) -> Result<Vec<Shape>> {
    let mut shapes = Vec::with_capacity(arch.len());
    let mut cur = input;
    for spec in arch {
        cur = spec.output_shape(cur)?;
        shapes.push(cur);
    }
    Ok(shapes)
}

/// The layer chain used throughout: two conv/pool stages, then two dense
/// layers. Hidden sizes are fixed (32 filters, 64 dense units); only the
/// input geometry and output dimension vary.
pub fn reference_arch(
    window_len: usize,
    n_channels: usize,
    out_dim: usize,
) -> Result<Vec<LayerSpec>> {
    let mut arch = vec![
        LayerSpec::Conv1d {
            in_channels: n_channels,
            out_channels: 32,
            kernel_len: 5,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d { pool_len: 2 },
        LayerSpec::Conv1d {
            in_channels: 32,
            out_channels: 32,
            kernel_len: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d { pool_len: 2 },
        LayerSpec::Flatten,
    ];
    let shapes = infer_shapes(
        &arch,
        Shape::Temporal {
            len: window_len,
            channels: n_channels,
        },
    )?;
    let Shape::Flat { dim } = shapes[shapes.len() - 1] else {
        unreachable!("flatten output is flat");
    };
    arch.push(LayerSpec::Dense {
        in_dim: dim,
        out_dim: 64,
    });
    arch.push(LayerSpec::Relu);
    arch.push(LayerSpec::Dense {
        in_dim: 64,
        out_dim,
    });
    Ok(arch)
}

#[derive(Debug, Clone, PartialEq)]
enum LayerParams {
    Conv { w: Array2<f64>, b: Array1<f64> },
    Dense { w: Array2<f64>, b: Array1<f64> },
    None,
}

/// Batch activation: temporal `[B x L x C]` or flat `[B x D]`.
#[derive(Debug, Clone)]
enum Act {
    T(Array3<f64>),
    F(Array2<f64>),
}

enum Aux {
    /// im2col matrix of a conv layer's input.
    Cols(Array2<f64>),
    /// Flat argmax offsets of a pooling layer, in output-index order.
    Argmax(Vec<usize>),
    None,
}

struct Trace {
    /// Input activation of each layer.
    inputs: Vec<Act>,
    aux: Vec<Aux>,
}

fn reshape_2_to_3(a: Array2<f64>, dims: (usize, usize, usize)) -> Array3<f64> {
    let (v, offset) = a.into_raw_vec_and_offset();
    debug_assert!(matches!(offset, Some(0) | None));
    Array3::from_shape_vec(dims, v).expect("element count preserved")
}

fn reshape_3_to_2(a: Array3<f64>, dims: (usize, usize)) -> Array2<f64> {
    let (v, offset) = a.into_raw_vec_and_offset();
    debug_assert!(matches!(offset, Some(0) | None));
    Array2::from_shape_vec(dims, v).expect("element count preserved")
}

/// A feed-forward model with materialized parameters.
///
/// Construction validates the whole layer chain against the input
/// geometry and requires a flat final activation (the regression output).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Vec<LayerSpec>,
    window_len: usize,
    n_channels: usize,
    out_dim: usize,
    params: Vec<LayerParams>,
}

impl Model {
    /// Builds a model with Glorot-uniform weights and zero biases drawn
    /// from `rng`.
    ///
    /// Weight draw order is fixed: layers in order; within a layer the
    /// weight matrix row-major, biases zero-initialized (no draws).
    pub fn new<R: Rng>(
        window_len: usize,
        n_channels: usize,
        arch: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(window_len, n_channels, arch, Some(rng))
    }

    /// Builds a model with all parameters zero (placeholder for loading).
    pub fn zeroed(window_len: usize, n_channels: usize, arch: &[LayerSpec]) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(window_len, n_channels, arch, None)
    }

    fn build<R: Rng>(
        window_len: usize,
        n_channels: usize,
        arch: &[LayerSpec],
        mut rng: Option<&mut R>,
    ) -> Result<Self> {
        if arch.is_empty() {
            return Err(Error::invalid("model", "empty architecture"));
        }
        if window_len == 0 || n_channels == 0 {
            return Err(Error::invalid(
                "model",
                format!("input geometry must be nonzero, got [{window_len} x {n_channels}]"),
            ));
        }
        let shapes = infer_shapes(
            arch,
            Shape::Temporal {
                len: window_len,
                channels: n_channels,
            },
        )?;
        let Shape::Flat { dim: out_dim } = shapes[shapes.len() - 1] else {
            return Err(Error::invalid(
                "model",
                "architecture must end in a flat activation (add flatten/dense)",
            ));
        };
        let mut params = Vec::with_capacity(arch.len());
        for spec in arch {
            params.push(match *spec {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_len,
                    ..
                } => {
                    let fan_in = in_channels * kernel_len;
                    let fan_out = out_channels * kernel_len;
                    let w = init_weight(out_channels, fan_in, fan_in, fan_out, rng.as_deref_mut());
                    LayerParams::Conv {
                        w,
                        b: Array1::zeros(out_channels),
                    }
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let w = init_weight(out_dim, in_dim, in_dim, out_dim, rng.as_deref_mut());
                    LayerParams::Dense {
                        w,
                        b: Array1::zeros(out_dim),
                    }
                }
                _ => LayerParams::None,
            });
        }
        Ok(Self {
            arch: arch.to_vec(),
            window_len,
            n_channels,
            out_dim,
            params,
        })
    }

    /// Declared layer chain.
    pub fn arch(&self) -> &[LayerSpec] {
        &self.arch
    }

    /// Expected input window length.
    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Expected input channel count.
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Output dimension.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Total number of trainable parameters.
    pub fn n_params(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => w.len() + b.len(),
                LayerParams::None => 0,
            })
            .sum()
    }

    /// All parameters as one flat vector: layers in order, weight matrix
    /// row-major, then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        for p in &self.params {
            if let LayerParams::Conv { w, b } | LayerParams::Dense { w, b } = p {
                flat.extend(w.iter());
                flat.extend(b.iter());
            }
        }
        flat
    }

    /// Replaces all parameters from a flat vector laid out as
    /// [`Model::params_flat`] produces.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model needs {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut pos = 0;
        for p in &mut self.params {
            if let LayerParams::Conv { w, b } | LayerParams::Dense { w, b } = p {
                for dst in w.iter_mut() {
                    *dst = flat[pos];
                    pos += 1;
                }
                for dst in b.iter_mut() {
                    *dst = flat[pos];
                    pos += 1;
                }
            }
        }
        Ok(())
    }

    /// Per-parameter weight/bias segment lengths, for checkpoint layout.
    pub(crate) fn param_segments(&self) -> Vec<usize> {
        let mut segs = Vec::new();
        for p in &self.params {
            if let LayerParams::Conv { w, b } | LayerParams::Dense { w, b } = p {
                segs.push(w.len());
                segs.push(b.len());
            }
        }
        segs
    }

    fn check_input(&self, inputs: &Array3<f64>) -> Result<()> {
        let (_, l, c) = inputs.dim();
        if l != self.window_len || c != self.n_channels {
            return Err(Error::Shape(format!(
                "model expects [B x {} x {}] inputs, got [{} x {l} x {c}]",
                self.window_len,
                self.n_channels,
                inputs.dim().0
            )));
        }
        if inputs.dim().0 == 0 {
            return Err(Error::invalid("forward", "empty batch"));
        }
        Ok(())
    }

    /// Runs the model on a batch: `[B x window_len x channels]` to
    /// `[B x out_dim]`.
    pub fn forward(&self, inputs: &Array3<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs)?;
        let (out, _) = self.forward_trace(inputs, false);
        match out {
            Act::F(y) => Ok(y),
            Act::T(_) => unreachable!("final activation is flat by construction"),
        }
    }

    /// Mean-squared-error loss over a batch (mean over batch and output
    /// dimensions), without gradients.
    pub fn loss(&self, inputs: &Array3<f64>, targets: &Array2<f64>) -> Result<f64> {
        let preds = self.forward(inputs)?;
        self.mse_from_preds(&preds, targets)
    }

    fn mse_from_preds(&self, preds: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
        if preds.dim() != targets.dim() {
            return Err(Error::Shape(format!(
                "predictions are {:?} but targets are {:?}",
                preds.dim(),
                targets.dim()
            )));
        }
        if let Some((i, _)) = preds
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| !r.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite {
                context: format!("model output for batch example {i}"),
            });
        }
        let n = (preds.nrows() * preds.ncols()) as f64;
        let loss = preds
            .iter()
            .zip(targets.iter())
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum::<f64>()
            / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "training loss".into(),
            });
        }
        Ok(loss)
    }

    /// Loss plus the gradient of the loss with respect to every parameter,
    /// flattened like [`Model::params_flat`].
    pub fn loss_and_grad(
        &self,
        inputs: &Array3<f64>,
        targets: &Array2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(inputs)?;
        let (out, trace) = self.forward_trace(inputs, true);
        let trace = trace.expect("trace recorded");
        let Act::F(preds) = out else {
            unreachable!("final activation is flat by construction");
        };
        let loss = self.mse_from_preds(&preds, targets)?;
        let n = (preds.nrows() * preds.ncols()) as f64;
        let dpred = (&preds - targets) * (2.0 / n);
        let grads = self.backward(&trace, dpred);
        Ok((loss, grads))
    }

    fn forward_trace(&self, inputs: &Array3<f64>, record: bool) -> (Act, Option<Trace>) {
        let mut act = Act::T(inputs.clone());
        let mut trace = record.then(|| Trace {
            inputs: Vec::with_capacity(self.arch.len()),
            aux: Vec::with_capacity(self.arch.len()),
        });
        for (spec, params) in self.arch.iter().zip(&self.params) {
            let mut aux = Aux::None;
            let next = match (*spec, &act) {
                (
                    LayerSpec::Conv1d {
                        kernel_len, stride, ..
                    },
                    Act::T(x),
                ) => {
                    let LayerParams::Conv { w, b } = params else {
                        unreachable!("conv layer has conv params");
                    };
                    let (y, cols) = conv_forward(x, w, b, kernel_len, stride);
                    if record {
                        aux = Aux::Cols(cols);
                    }
                    Act::T(y)
                }
                (LayerSpec::Relu, Act::T(x)) => Act::T(x.mapv(|v| v.max(0.0))),
                (LayerSpec::Relu, Act::F(x)) => Act::F(x.mapv(|v| v.max(0.0))),
                (LayerSpec::MaxPool1d { pool_len }, Act::T(x)) => {
                    let (y, argmax) = pool_forward(x, pool_len);
                    if record {
                        aux = Aux::Argmax(argmax);
                    }
                    Act::T(y)
                }
                (LayerSpec::Flatten, Act::T(x)) => {
                    let (b, l, c) = x.dim();
                    Act::F(reshape_3_to_2(x.clone(), (b, l * c)))
                }
                (LayerSpec::Dense { .. }, Act::F(x)) => {
                    let LayerParams::Dense { w, b } = params else {
                        unreachable!("dense layer has dense params");
                    };
                    let mut y = x.dot(&w.t());
                    y += b;
                    Act::F(y)
                }
                _ => unreachable!("shape inference rejects invalid layer/activation pairs"),
            };
            if let Some(t) = trace.as_mut() {
                t.inputs.push(act);
                t.aux.push(aux);
            }
            act = next;
        }
        (act, trace)
    }

    fn backward(&self, trace: &Trace, dpred: Array2<f64>) -> Vec<f64> {
        let mut per_layer: Vec<Option<(Array2<f64>, Array1<f64>)>> =
            vec![None; self.arch.len()];
        let mut grad = Act::F(dpred);
        for i in (0..self.arch.len()).rev() {
            let spec = self.arch[i];
            let input = &trace.inputs[i];
            grad = match (spec, input, &grad) {
                (LayerSpec::Dense { .. }, Act::F(x), Act::F(dy)) => {
                    let LayerParams::Dense { w, .. } = &self.params[i] else {
                        unreachable!("dense layer has dense params");
                    };
                    let dw = dy.t().dot(x);
                    let db = dy.sum_axis(Axis(0));
                    per_layer[i] = Some((dw, db));
                    Act::F(dy.dot(w))
                }
                (LayerSpec::Flatten, Act::T(x), Act::F(dy)) => {
                    Act::T(reshape_2_to_3(dy.clone(), x.dim()))
                }
                (LayerSpec::Relu, Act::T(x), Act::T(dy)) => {
                    let mut dx = dy.clone();
                    dx.zip_mut_with(x, |g, &v| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    Act::T(dx)
                }
                (LayerSpec::Relu, Act::F(x), Act::F(dy)) => {
                    let mut dx = dy.clone();
                    dx.zip_mut_with(x, |g, &v| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    Act::F(dx)
                }
                (LayerSpec::MaxPool1d { pool_len }, Act::T(x), Act::T(dy)) => {
                    let Aux::Argmax(argmax) = &trace.aux[i] else {
                        unreachable!("pool layer recorded argmax");
                    };
                    Act::T(pool_backward(x.dim(), dy, argmax, pool_len))
                }
                (
                    LayerSpec::Conv1d {
                        kernel_len, stride, ..
                    },
                    Act::T(x),
                    Act::T(dy),
                ) => {
                    let LayerParams::Conv { w, .. } = &self.params[i] else {
                        unreachable!("conv layer has conv params");
                    };
                    let Aux::Cols(cols) = &trace.aux[i] else {
                        unreachable!("conv layer recorded im2col matrix");
                    };
                    let (dw, db, dx) = conv_backward(x.dim(), dy, w, cols, kernel_len, stride);
                    per_layer[i] = Some((dw, db));
                    Act::T(dx)
                }
                _ => unreachable!("backward mirrors forward"),
            };
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (g, p) in per_layer.iter().zip(&self.params) {
            match (g, p) {
                (Some((dw, db)), _) => {
                    flat.extend(dw.iter());
                    flat.extend(db.iter());
                }
                (None, LayerParams::None) => {}
                (None, _) => unreachable!("parameterized layers produce gradients"),
            }
        }
        flat
    }
}

fn init_weight<R: Rng>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: Option<&mut R>,
) -> Array2<f64> {
    match rng {
        None => Array2::zeros((rows, cols)),
        Some(rng) => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| (2.0 * rng.random::<f64>() - 1.0) * limit)
        }
    }
}

/// im2col + GEMM cross-correlation. Returns the output activation and the
/// im2col matrix (reused by the backward pass).
fn conv_forward(
    x: &Array3<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    kernel_len: usize,
    stride: usize,
) -> (Array3<f64>, Array2<f64>) {
    let (batch, len, channels) = x.dim();
    let out_len = (len - kernel_len) / stride + 1;
    let out_channels = w.nrows();
    let mut cols = Array2::zeros((batch * out_len, channels * kernel_len));
    {
        let x_slice = x.as_slice().expect("standard layout");
        let cols_slice = cols.as_slice_mut().expect("standard layout");
        let row_w = channels * kernel_len;
        for bi in 0..batch {
            for t in 0..out_len {
                let row = (bi * out_len + t) * row_w;
                let base = (bi * len + t * stride) * channels;
                for c in 0..channels {
                    for j in 0..kernel_len {
                        cols_slice[row + c * kernel_len + j] = x_slice[base + j * channels + c];
                    }
                }
            }
        }
    }
    let mut out2 = cols.dot(&w.t());
    out2 += b;
    (reshape_2_to_3(out2, (batch, out_len, out_channels)), cols)
}

fn conv_backward(
    in_dim: (usize, usize, usize),
    dy: &Array3<f64>,
    w: &Array2<f64>,
    cols: &Array2<f64>,
    kernel_len: usize,
    stride: usize,
) -> (Array2<f64>, Array1<f64>, Array3<f64>) {
    let (batch, len, channels) = in_dim;
    let (_, out_len, out_channels) = dy.dim();
    let dy2 = reshape_3_to_2(dy.clone(), (batch * out_len, out_channels));
    let dw = dy2.t().dot(cols);
    let db = dy2.sum_axis(Axis(0));
    let dcols = dy2.dot(w);
    let mut dx = Array3::zeros((batch, len, channels));
    {
        let dx_slice = dx.as_slice_mut().expect("standard layout");
        let dcols_slice = dcols.as_slice().expect("standard layout");
        let row_w = channels * kernel_len;
        for bi in 0..batch {
            for t in 0..out_len {
                let row = (bi * out_len + t) * row_w;
                let base = (bi * len + t * stride) * channels;
                for c in 0..channels {
                    for j in 0..kernel_len {
                        dx_slice[base + j * channels + c] += dcols_slice[row + c * kernel_len + j];
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

/// Max pooling; argmax offsets (first maximum wins) are recorded flat in
/// `(batch, out_t, channel)` row-major order.
fn pool_forward(x: &Array3<f64>, pool_len: usize) -> (Array3<f64>, Vec<usize>) {
    let (batch, len, channels) = x.dim();
    let out_len = len / pool_len;
    let mut y = Array3::zeros((batch, out_len, channels));
    let mut argmax = vec![0usize; batch * out_len * channels];
    for bi in 0..batch {
        for t in 0..out_len {
            for c in 0..channels {
                let mut best = x[(bi, t * pool_len, c)];
                let mut best_j = 0;
                for j in 1..pool_len {
                    let v = x[(bi, t * pool_len + j, c)];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                y[(bi, t, c)] = best;
                argmax[(bi * out_len + t) * channels + c] = best_j;
            }
        }
    }
    (y, argmax)
}

fn pool_backward(
    in_dim: (usize, usize, usize),
    dy: &Array3<f64>,
    argmax: &[usize],
    pool_len: usize,
) -> Array3<f64> {
    let (batch, _, channels) = in_dim;
    let (_, out_len, _) = dy.dim();
    let mut dx = Array3::zeros(in_dim);
    for bi in 0..batch {
        for t in 0..out_len {
            for c in 0..channels {
                let j = argmax[(bi * out_len + t) * channels + c];
                dx[(bi, t * pool_len + j, c)] += dy[(bi, t, c)];
            }
        }
    }
    dx
}
