//! Layers with explicit forward caches and backward passes.
//!
//! Activations are stored channel-major, `[C][B][H][W]`, so a convolution
//! is one GEMM over the whole batch and batch normalization works on one
//! contiguous slice per channel. Fully connected activations use the same
//! type with `H = W = 1`.

use rand::Rng;

use super::scalar::{matmul, Op, Real};
use crate::exec::{self, Execution};

/// Channel-major activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub data: Vec<T>,
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Self {
        Self {
            data: vec![T::zero(); c * b * h * w],
            c,
            b,
            h,
            w,
        }
    }

    pub fn from_vec(data: Vec<T>, c: usize, b: usize, h: usize, w: usize) -> Self {
        assert_eq!(data.len(), c * b * h * w);
        Self { data, c, b, h, w }
    }

    pub fn plane(&self) -> usize {
        self.b * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `[F][B]` features from row-major `B x F`.
    pub fn from_rows(rows: &[T], batch: usize, features: usize) -> Self {
        assert_eq!(rows.len(), batch * features);
        let mut data = vec![T::zero(); rows.len()];
        for b in 0..batch {
            for f in 0..features {
                data[f * batch + b] = rows[b * features + f];
            }
        }
        Self::from_vec(data, features, batch, 1, 1)
    }

    /// Row-major `B x F` from `[F][B]` features.
    pub fn to_rows(&self) -> Vec<T> {
        let (f_n, b_n) = (self.c * self.h * self.w, self.b);
        let mut out = vec![T::zero(); self.data.len()];
        for f in 0..f_n {
            for b in 0..b_n {
                out[b * f_n + f] = self.data[f * b_n + b];
            }
        }
        out
    }

    /// `[C][B][H][W] -> [C*H*W][B][1][1]` with feature index `c*H*W + y*W + x`.
    pub fn flatten(&self) -> Self {
        let hw = self.h * self.w;
        let mut data = vec![T::zero(); self.data.len()];
        for c in 0..self.c {
            for b in 0..self.b {
                for p in 0..hw {
                    data[(c * hw + p) * self.b + b] = self.data[(c * self.b + b) * hw + p];
                }
            }
        }
        Self::from_vec(data, self.c * hw, self.b, 1, 1)
    }

    /// Inverse of [`Tensor::flatten`].
    pub fn unflatten(&self, c: usize, h: usize, w: usize) -> Self {
        let hw = h * w;
        assert_eq!(self.c, c * hw);
        let mut data = vec![T::zero(); self.data.len()];
        for ci in 0..c {
            for b in 0..self.b {
                for p in 0..hw {
                    data[(ci * self.b + b) * hw + p] = self.data[(ci * hw + p) * self.b + b];
                }
            }
        }
        Self::from_vec(data, c, self.b, h, w)
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// Trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform<R: Rng>(name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len = shape.iter().product();
        let value = (0..len).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        Self::new(name, shape, value)
    }

    pub fn filled(name: &str, shape: Vec<usize>, v: f64) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![T::of(v); len])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Non-trainable state saved with checkpoints (batch-norm running stats).
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

pub trait Module<T: Real> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>);
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>);
    fn buffers_mut<'a>(&'a mut self, _out: &mut Vec<&'a mut Buffer<T>>) {}
    fn buffers<'a>(&'a self, _out: &mut Vec<&'a Buffer<T>>) {}
}

/// Output size of a strided convolution along one axis.
pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `cout x (cin * k * k)`.
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<(Vec<T>, [usize; 4])>,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = Param::fan_in_uniform(&format!("{name}.weight"), vec![cout, fan_in], fan_in, rng);
        let bias = bias.then(|| Param::fan_in_uniform(&format!("{name}.bias"), vec![cout], fan_in, rng));
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight,
            bias,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.pad),
            conv_out(w, self.kernel, self.stride, self.pad),
        )
    }

    fn im2col(&self, exec: Execution, x: &Tensor<T>) -> (Vec<T>, usize, usize) {
        let (ho, wo) = self.out_hw(x.h, x.w);
        let k = self.kernel;
        let ncol = x.b * ho * wo;
        let mut cols = vec![T::zero(); self.cin * k * k * ncol];
        let (s, p) = (self.stride as isize, self.pad as isize);
        exec::for_each_chunk_mut(exec, &mut cols, ncol, |row, dst| {
            let c = row / (k * k);
            let (ki, kj) = ((row / k) % k, row % k);
            for b in 0..x.b {
                let src = &x.data[(c * x.b + b) * x.h * x.w..(c * x.b + b + 1) * x.h * x.w];
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ki as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let base = (b * ho + oy) * wo;
                    for ox in 0..wo {
                        let ix = ox as isize * s - p + kj as isize;
                        if ix >= 0 && ix < x.w as isize {
                            dst[base + ox] = src[iy as usize * x.w + ix as usize];
                        }
                    }
                }
            }
        });
        (cols, ho, wo)
    }

    fn apply(&self, exec: Execution, cols: &[T], batch: usize, ho: usize, wo: usize) -> Tensor<T> {
        let ncol = batch * ho * wo;
        let kk = self.cin * self.kernel * self.kernel;
        let mut out = vec![T::zero(); self.cout * ncol];
        if let Some(bias) = &self.bias {
            for (co, chunk) in out.chunks_mut(ncol).enumerate() {
                chunk.fill(bias.value[co]);
            }
        }
        let beta = if self.bias.is_some() { T::one() } else { T::zero() };
        matmul(exec, Op::N, Op::N, self.cout, ncol, kk, &self.weight.value, cols, beta, &mut out);
        Tensor::from_vec(out, self.cout, batch, ho, wo)
    }

    pub fn forward_eval(&self, exec: Execution, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let (cols, ho, wo) = self.im2col(exec, x);
        self.apply(exec, &cols, x.b, ho, wo)
    }

    pub fn forward_train(&mut self, exec: Execution, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let (cols, ho, wo) = self.im2col(exec, x);
        let out = self.apply(exec, &cols, x.b, ho, wo);
        self.cache = Some((cols, [x.c, x.b, x.h, x.w]));
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, exec: Execution, dout: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let (cols, [c, b, h, w]) = self.cache.take().expect("backward without forward_train");
        let ncol = dout.plane();
        let kk = self.cin * self.kernel * self.kernel;
        matmul(exec, Op::N, Op::T, self.cout, kk, ncol, &dout.data, &cols, T::one(), &mut self.weight.grad);
        if let Some(bias) = &mut self.bias {
            for (co, chunk) in dout.data.chunks(ncol).enumerate() {
                let s: T = chunk.iter().copied().sum();
                bias.grad[co] += s;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * ncol];
        matmul(exec, Op::T, Op::N, kk, ncol, self.cout, &self.weight.value, &dout.data, T::zero(), &mut dcols);
        // col2im, one channel per task
        let (ho, wo) = (dout.h, dout.w);
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.pad as isize);
        let mut dx = Tensor::zeros(c, b, h, w);
        exec::for_each_chunk_mut(exec, &mut dx.data, b * h * w, |ci, dst| {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &dcols[row * ncol..(row + 1) * ncol];
                    for bi in 0..b {
                        for oy in 0..ho {
                            let iy = oy as isize * s - p + ki as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = ox as isize * s - p + kj as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[(bi * h + iy as usize) * w + ix as usize] += src[(bi * ho + oy) * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        out.push(&self.weight);
        if let Some(b) = &self.bias {
            out.push(b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `fan_out x fan_in`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Vec<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: Param::fan_in_uniform(&format!("{name}.weight"), vec![fan_out, fan_in], fan_in, rng),
            bias: Param::fan_in_uniform(&format!("{name}.bias"), vec![fan_out], fan_in, rng),
            cache: None,
        }
    }

    pub fn forward_eval(&self, exec: Execution, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c * x.h * x.w, self.fan_in, "{}: feature mismatch", self.weight.name);
        let b = x.b;
        let mut out = vec![T::zero(); self.fan_out * b];
        for (o, chunk) in out.chunks_mut(b).enumerate() {
            chunk.fill(self.bias.value[o]);
        }
        matmul(exec, Op::N, Op::N, self.fan_out, b, self.fan_in, &self.weight.value, &x.data, T::one(), &mut out);
        Tensor::from_vec(out, self.fan_out, b, 1, 1)
    }

    pub fn forward_train(&mut self, exec: Execution, x: &Tensor<T>) -> Tensor<T> {
        let out = self.forward_eval(exec, x);
        self.cache = Some(x.data.clone());
        out
    }

    pub fn backward(&mut self, exec: Execution, dout: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self.cache.take().expect("backward without forward_train");
        let b = dout.b;
        matmul(exec, Op::N, Op::T, self.fan_out, self.fan_in, b, &dout.data, &x, T::one(), &mut self.weight.grad);
        for (o, chunk) in dout.data.chunks(b).enumerate() {
            let s: T = chunk.iter().copied().sum();
            self.bias.grad[o] += s;
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![T::zero(); self.fan_in * b];
        matmul(exec, Op::T, Op::N, self.fan_in, b, self.fan_out, &self.weight.value, &dout.data, T::zero(), &mut dx);
        Some(Tensor::from_vec(dx, self.fan_in, b, 1, 1))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over everything but the channel axis.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(&format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::filled(&format!("{name}.beta"), vec![channels], 0.0),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                value: vec![T::zero(); channels],
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                value: vec![T::one(); channels],
            },
            cache: None,
        }
    }

    pub fn forward_eval(&self, exec: Execution, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        let plane = x.plane();
        let eps = T::of(BN_EPS);
        exec::for_each_chunk_mut(exec, &mut out.data, plane, |c, chunk| {
            let inv = T::one() / (self.running_var.value[c] + eps).sqrt();
            let (g, b, m) = (self.gamma.value[c], self.beta.value[c], self.running_mean.value[c]);
            chunk.iter_mut().for_each(|v| *v = g * (*v - m) * inv + b);
        });
        out
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, exec: Execution, x: &Tensor<T>) -> Tensor<T> {
        let plane = x.plane();
        assert!(plane >= 2, "batch normalization needs at least two values per channel");
        let mut xhat = x.data.clone();
        let mut inv_std = vec![T::zero(); x.c];
        let stats: Vec<(f64, f64)> = exec::map_indexed(exec, x.c, |c| {
            let chunk = &x.data[c * plane..(c + 1) * plane];
            let mean = chunk.iter().map(|v| v.f64()).sum::<f64>() / plane as f64;
            let var = chunk.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / plane as f64;
            (mean, var)
        });
        for (c, &(mean, var)) in stats.iter().enumerate() {
            inv_std[c] = T::of(1.0 / (var + BN_EPS).sqrt());
            let unbiased = var * plane as f64 / (plane - 1) as f64;
            let rm = &mut self.running_mean.value[c];
            *rm = T::of((1.0 - BN_MOMENTUM) * rm.f64() + BN_MOMENTUM * mean);
            let rv = &mut self.running_var.value[c];
            *rv = T::of((1.0 - BN_MOMENTUM) * rv.f64() + BN_MOMENTUM * unbiased);
        }
        exec::for_each_chunk_mut(exec, &mut xhat, plane, |c, chunk| {
            let m = T::of(stats[c].0);
            chunk.iter_mut().for_each(|v| *v = (*v - m) * inv_std[c]);
        });
        let mut out = xhat.clone();
        exec::for_each_chunk_mut(exec, &mut out, plane, |c, chunk| {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            chunk.iter_mut().for_each(|v| *v = g * *v + b);
        });
        self.cache = Some((xhat, inv_std));
        Tensor::from_vec(out, x.c, x.b, x.h, x.w)
    }

    pub fn backward(&mut self, exec: Execution, dout: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv_std) = self.cache.take().expect("backward without forward_train");
        let plane = dout.plane();
        let sums: Vec<(T, T)> = exec::map_indexed(exec, dout.c, |c| {
            let dy = &dout.data[c * plane..(c + 1) * plane];
            let xh = &xhat[c * plane..(c + 1) * plane];
            let sdy: T = dy.iter().copied().sum();
            let sdyx: T = dy.iter().zip(xh).map(|(a, b)| *a * *b).sum();
            (sdy, sdyx)
        });
        for (c, &(sdy, sdyx)) in sums.iter().enumerate() {
            self.beta.grad[c] += sdy;
            self.gamma.grad[c] += sdyx;
        }
        let mut dx = dout.data.clone();
        let n = T::of(plane as f64);
        exec::for_each_chunk_mut(exec, &mut dx, plane, |c, chunk| {
            let (sdy, sdyx) = sums[c];
            let scale = self.gamma.value[c] * inv_std[c] / n;
            let xh = &xhat[c * plane..(c + 1) * plane];
            for (v, x) in chunk.iter_mut().zip(xh) {
                *v = scale * (n * *v - sdy - *x * sdyx);
            }
        });
        Tensor::from_vec(dx, dout.c, dout.b, dout.h, dout.w)
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<T>>) {
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
    fn buffers<'a>(&'a self, out: &mut Vec<&'a Buffer<T>>) {
        out.push(&self.running_mean);
        out.push(&self.running_var);
    }
}

/// In-place ReLU that remembers its output for the backward mask.
#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Option<Vec<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward_eval(x: &mut Tensor<T>) {
        x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    }

    pub fn forward_train(&mut self, x: &mut Tensor<T>) {
        Self::forward_eval(x);
        self.cache = Some(x.data.clone());
    }

    pub fn backward(&mut self, dout: &mut Tensor<T>) {
        let out = self.cache.take().expect("backward without forward_train");
        for (d, o) in dout.data.iter_mut().zip(&out) {
            if *o <= T::zero() {
                *d = T::zero();
            }
        }
    }
}
