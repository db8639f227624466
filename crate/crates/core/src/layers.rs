//! Differentiable layer primitives recorded on a [`Tape`].
//!
//! Convolutions are same-padded cross-correlations with stride 1 (no kernel
//! flip). A dense layer is the kernel-size-1 case of the same operation, so
//! `[B, 1, n]` activations and `[B, L, C]` feature maps share one code path.

use rand::Rng;

use crate::autograd::{Backward, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Shape, Tensor};

/// Kernel size used by every convolution in the conv architectures.
pub const KERNEL_SIZE: usize = 3;

/// Glorot-uniform initialization: uniform in ±√(6/(fan_in+fan_out)).
pub fn glorot_uniform(shape: Shape, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.numel()).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("shape is non-empty")
}

/// Convolution parameters: kernel `[k, C_in, C_out]` and bias `[1, 1, C_out]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1dParams {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1dParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let kernel = store.add(
            format!("{name}.kernel"),
            glorot_uniform(
                Shape::new(kernel_size, in_channels, out_channels),
                kernel_size * in_channels,
                kernel_size * out_channels,
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, 1, out_channels)));
        Conv1dParams { kernel, bias: Some(bias), kernel_size, in_channels, out_channels }
    }

    pub fn param_count(&self) -> usize {
        self.kernel_size * self.in_channels * self.out_channels
            + if self.bias.is_some() { self.out_channels } else { 0 }
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.kernel);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv1d(x, w, b)
    }
}

/// Dense parameters: weights `[1, n_in, n_out]` and optional bias `[1, 1, n_out]`.
#[derive(Clone, Copy, Debug)]
pub struct DenseParams {
    pub weights: ParamId,
    pub bias: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl DenseParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weights = store.add(
            format!("{name}.weights"),
            glorot_uniform(Shape::new(1, n_in, n_out), n_in, n_out, rng),
        );
        let bias = with_bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, 1, n_out))));
        DenseParams { weights, bias, n_in, n_out }
    }

    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out + if self.bias.is_some() { self.n_out } else { 0 }
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weights);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.dense(x, w, b)
    }

    /// Same as [`apply`](Self::apply) but without tracking parameter gradients.
    pub fn apply_frozen<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.frozen(store, self.weights);
        let b = self.bias.map(|b| tape.frozen(store, b));
        tape.dense(x, w, b)
    }
}

fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let Shape { batch, len, channels } = x.shape();
    let half = k / 2;
    let width = k * channels;
    let mut cols = vec![0.0; batch * len * width];
    let xd = x.data();
    for b in 0..batch {
        for i in 0..len {
            let row = &mut cols[(b * len + i) * width..(b * len + i + 1) * width];
            for o in 0..k {
                let src = i as isize + o as isize - half as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let start = (b * len + src as usize) * channels;
                row[o * channels..(o + 1) * channels].copy_from_slice(&xd[start..start + channels]);
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], shape: Shape, k: usize) -> Tensor {
    let Shape { batch, len, channels } = shape;
    let half = k / 2;
    let width = k * channels;
    let mut dx = vec![0.0; shape.numel()];
    for b in 0..batch {
        for i in 0..len {
            let row = &dcols[(b * len + i) * width..(b * len + i + 1) * width];
            for o in 0..k {
                let src = i as isize + o as isize - half as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let start = (b * len + src as usize) * channels;
                for (d, g) in dx[start..start + channels].iter_mut().zip(&row[o * channels..(o + 1) * channels]) {
                    *d += g;
                }
            }
        }
    }
    Tensor::new(shape, dx).expect("shape preserved")
}

struct ConvOp {
    kernel_size: usize,
    /// Unfolded input rows; `None` when the kernel size is 1 and the input is used directly.
    cols: Option<Vec<f64>>,
}

impl Backward for ConvOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, wants: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let w = inputs[1];
        let rows = x.shape().rows();
        let width = self.kernel_size * x.shape().channels;
        let c_out = w.shape().channels;
        let cols: &[f64] = self.cols.as_deref().unwrap_or(x.data());
        let dy = MatRef::row_major(up.data(), rows, c_out);

        let dx = if wants[0] {
            let mut dcols = vec![0.0; rows * width];
            gemm(dy, MatRef::row_major(w.data(), width, c_out).t(), 0.0, &mut dcols);
            Some(if self.kernel_size == 1 {
                Tensor::new(x.shape(), dcols)?
            } else {
                col2im(&dcols, x.shape(), self.kernel_size)
            })
        } else {
            None
        };
        let dw = if wants[1] {
            let mut g = vec![0.0; width * c_out];
            gemm(MatRef::row_major(cols, rows, width).t(), dy, 0.0, &mut g);
            Some(Tensor::new(w.shape(), g)?)
        } else {
            None
        };
        let mut out = vec![dx, dw];
        if inputs.len() == 3 {
            out.push(if wants[2] {
                let mut g = vec![0.0; c_out];
                for r in up.data().chunks_exact(c_out) {
                    for (a, v) in g.iter_mut().zip(r) {
                        *a += v;
                    }
                }
                Some(Tensor::new(inputs[2].shape(), g)?)
            } else {
                None
            });
        }
        Ok(out)
    }
}

struct MaxPoolOp {
    /// Flat input index of the selected element for every output element.
    argmax: Vec<usize>,
}

impl Backward for MaxPoolOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        for (&src, g) in self.argmax.iter().zip(up.data()) {
            d[src] += g;
        }
        Ok(vec![Some(dx)])
    }
}

struct ReluOp;

impl Backward for ReluOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let data = up
            .data()
            .iter()
            .zip(inputs[0].data())
            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
            .collect();
        Ok(vec![Some(Tensor::new(up.shape(), data)?)])
    }
}

struct SigmoidOp;

impl Backward for SigmoidOp {
    fn backward(&self, up: &Tensor, _: &[&Tensor], out: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let data = up.data().iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
        Ok(vec![Some(Tensor::new(up.shape(), data)?)])
    }
}

struct GlobalAvgPoolOp;

impl Backward for GlobalAvgPoolOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let shape = inputs[0].shape();
        let inv = 1.0 / shape.len as f64;
        let mut dx = Tensor::zeros(shape);
        let c = shape.channels;
        for (b, chunk) in dx.data_mut().chunks_exact_mut(shape.len * c).enumerate() {
            let g = &up.data()[b * c..(b + 1) * c];
            for row in chunk.chunks_exact_mut(c) {
                for (d, gv) in row.iter_mut().zip(g) {
                    *d = gv * inv;
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

struct ChannelScaleOp;

impl Backward for ChannelScaleOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, wants: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (x, e) = (inputs[0], inputs[1]);
        let Shape { batch, len, channels: c } = x.shape();
        let dx = wants[0].then(|| {
            let mut d = vec![0.0; x.numel()];
            for b in 0..batch {
                let eb = &e.data()[b * c..(b + 1) * c];
                for i in 0..len {
                    let off = (b * len + i) * c;
                    for ch in 0..c {
                        d[off + ch] = up.data()[off + ch] * eb[ch];
                    }
                }
            }
            Tensor::new(x.shape(), d).expect("shape")
        });
        let de = wants[1].then(|| {
            let mut d = vec![0.0; e.numel()];
            for b in 0..batch {
                for i in 0..len {
                    let off = (b * len + i) * c;
                    for ch in 0..c {
                        d[b * c + ch] += up.data()[off + ch] * x.data()[off + ch];
                    }
                }
            }
            Tensor::new(e.shape(), d).expect("shape")
        });
        Ok(vec![dx, de])
    }
}

struct MseOp;

impl Backward for MseOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, wants: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (p, t) = (inputs[0], inputs[1]);
        let scale = 2.0 * up.data()[0] / p.numel() as f64;
        let diff: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| scale * (a - b)).collect();
        let dp = wants[0].then(|| Tensor::new(p.shape(), diff.clone()).expect("shape"));
        let dt = wants[1].then(|| Tensor::new(t.shape(), diff.iter().map(|v| -v).collect()).expect("shape"));
        Ok(vec![dp, dt])
    }
}

impl<'a> Tape<'a> {
    /// Same-padded stride-1 cross-correlation.
    ///
    /// `x: [B, L, C_in]`, `kernel: [k, C_in, C_out]` with odd `k`,
    /// `bias: [1, 1, C_out]`; output `[B, L, C_out]`.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x);
        let ws = self.shape(kernel);
        let (k, c_in, c_out) = (ws.batch, ws.len, ws.channels);
        if k % 2 == 0 {
            return Err(Error::shape(format!("kernel size {k} must be odd")));
        }
        if xs.channels != c_in {
            return Err(Error::shape(format!("conv1d: input has {} channels, kernel expects {c_in}", xs.channels)));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, 1, c_out) {
                return Err(Error::shape(format!("conv1d: bias {bs} does not match {c_out} outputs")));
            }
        }
        let rows = xs.rows();
        let width = k * c_in;
        let cols = (k != 1).then(|| im2col(self.value(x), k));
        let mut y = vec![0.0; rows * c_out];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for r in y.chunks_exact_mut(c_out) {
                r.copy_from_slice(bv);
            }
        }
        {
            let a = cols.as_deref().unwrap_or(self.value(x).data());
            gemm(
                MatRef::row_major(a, rows, width),
                MatRef::row_major(self.value(kernel).data(), width, c_out),
                if bias.is_some() { 1.0 } else { 0.0 },
                &mut y,
            );
        }
        let out = Tensor::new(Shape::new(xs.batch, xs.len, c_out), y)?;
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        Ok(self.record(out, parents, ConvOp { kernel_size: k, cols }))
    }

    /// Affine map over the channel axis: `x: [B, L, n_in]`, `weights: [1, n_in, n_out]`.
    pub fn dense(&mut self, x: NodeId, weights: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let ws = self.shape(weights);
        if ws.batch != 1 {
            return Err(Error::shape(format!("dense weights must be [1, n_in, n_out], got {ws}")));
        }
        self.conv1d(x, weights, bias)
    }

    /// Max pooling with window 2 and stride 2; a trailing odd element is dropped.
    pub fn maxpool1d(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x);
        if xs.len < 2 {
            return Err(Error::shape(format!("maxpool1d needs length >= 2, got {}", xs.len)));
        }
        let out_len = xs.len / 2;
        let c = xs.channels;
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(xs.batch * out_len * c);
        let mut argmax = Vec::with_capacity(xs.batch * out_len * c);
        let mut margin = f64::INFINITY;
        for b in 0..xs.batch {
            for j in 0..out_len {
                let first = (b * xs.len + 2 * j) * c;
                let second = first + c;
                for ch in 0..c {
                    let (u, v) = (xd[first + ch], xd[second + ch]);
                    // two dead ReLU outputs stay tied under small perturbations
                    if u != 0.0 || v != 0.0 {
                        margin = margin.min((u - v).abs());
                    }
                    // ties resolve to the earlier position
                    if u >= v {
                        y.push(u);
                        argmax.push(first + ch);
                    } else {
                        y.push(v);
                        argmax.push(second + ch);
                    }
                }
            }
        }
        let out = Tensor::new(Shape::new(xs.batch, out_len, c), y)?;
        self.note_kink(margin);
        Ok(self.record(out, vec![x], MaxPoolOp { argmax }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let margin = self.value(x).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        self.note_kink(margin);
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.record(out, vec![x], ReluOp)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.record(out, vec![x], SigmoidOp)
    }

    /// Per-channel mean over the length axis: `[B, L, C] → [B, 1, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xs = self.shape(x);
        let c = xs.channels;
        let inv = 1.0 / xs.len as f64;
        let mut s = vec![0.0; xs.batch * c];
        for (b, chunk) in self.value(x).data().chunks_exact(xs.len * c).enumerate() {
            let acc = &mut s[b * c..(b + 1) * c];
            for row in chunk.chunks_exact(c) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
        let out = Tensor::new(Shape::new(xs.batch, 1, c), s).expect("shape");
        self.record(out, vec![x], GlobalAvgPoolOp)
    }

    /// `y[b, i, c] = e[b, c] · x[b, i, c]` with `e: [B, 1, C]`.
    pub fn channel_scale(&mut self, x: NodeId, e: NodeId) -> Result<NodeId> {
        let xs = self.shape(x);
        let es = self.shape(e);
        if es != Shape::new(xs.batch, 1, xs.channels) {
            return Err(Error::shape(format!("channel_scale: scales {es} do not fit input {xs}")));
        }
        let c = xs.channels;
        let ed = self.value(e).data();
        let mut y = self.value(x).data().to_vec();
        for (r, row) in y.chunks_exact_mut(c).enumerate() {
            let b = r / xs.len;
            for (v, s) in row.iter_mut().zip(&ed[b * c..(b + 1) * c]) {
                *v *= s;
            }
        }
        let out = Tensor::new(xs, y)?;
        Ok(self.record(out, vec![x, e], ChannelScaleOp))
    }

    /// `[B, L, C] → [B, 1, L·C]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x);
        self.reshape(x, Shape::new(xs.batch, 1, xs.len * xs.channels))
    }

    /// Mean squared error over all elements, as a scalar node.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape(format!("mse_loss: {} vs {}", p.shape(), t.shape())));
        }
        let n = p.numel() as f64;
        let loss = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.record(Tensor::scalar(loss), vec![pred, target], MseOp))
    }
}
