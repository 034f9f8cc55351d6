//! Residual convolutional encoder, reparameterized Gaussian codes and a
//! shallow fully connected decoder.
//!
//! Encoder: stride-2 3x3 stem (1 -> c1) + BN + ReLU, then per stage a 1x1
//! channel-raising convolution followed by a residual block
//! `relu(BN(conv2(relu(BN(conv1(x))))) + proj(x))` where `conv1` has stride 2
//! and `proj` is a 1x1 stride-2 convolution. The last feature map is
//! flattened into two linear heads for the code mean `g` and log-variance
//! `h`. Decoder: linear `r -> hidden`, BN, ReLU, linear `hidden -> m`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{conv_out, BatchNorm, Buffer, Conv2d, Linear, Module, Param, Relu, Tensor};
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

const KERNEL: usize = 3;
const PAD: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Latent dimension `r`.
    pub latent_dim: usize,
    /// Channel counts, starting with the single input channel.
    pub channel_schedule: Vec<usize>,
    pub n_res_blocks: usize,
    pub decoder_hidden: usize,
    /// Output dimension `m`.
    pub output_dim: usize,
    /// Log-variance is clamped to `[-h_clamp, h_clamp]`.
    #[serde(default = "default_h_clamp")]
    pub h_clamp: f64,
}

fn default_h_clamp() -> f64 {
    10.0
}

impl ArchConfig {
    /// The full-size layout: 69x54 inputs, channels 1..256, four residual
    /// blocks, a 512-wide decoder and 323 outputs.
    pub fn full_scale(latent_dim: usize) -> Self {
        Self {
            input_h: 69,
            input_w: 54,
            latent_dim,
            channel_schedule: vec![1, 16, 32, 64, 128, 256],
            n_res_blocks: 4,
            decoder_hidden: 512,
            output_dim: 323,
            h_clamp: default_h_clamp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return bad("latent dimension must be at least 1".into());
        }
        if self.output_dim == 0 || self.decoder_hidden == 0 {
            return bad("decoder widths must be positive".into());
        }
        if self.input_h == 0 || self.input_w == 0 {
            return bad("input image must be non-empty".into());
        }
        if self.channel_schedule.len() != self.n_res_blocks + 2 {
            return bad(format!(
                "channel schedule needs {} entries for {} residual blocks, got {}",
                self.n_res_blocks + 2,
                self.n_res_blocks,
                self.channel_schedule.len()
            ));
        }
        if self.channel_schedule[0] != 1 {
            return bad("channel schedule must start at the single input channel".into());
        }
        if self.channel_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("channel schedule must increase strictly: {:?}", self.channel_schedule));
        }
        if !(self.h_clamp > 0.0) {
            return bad("h_clamp must be positive".into());
        }
        Ok(())
    }

    /// Number of stride-2 stages (stem plus one per residual block).
    pub fn stride_stages(&self) -> usize {
        1 + self.n_res_blocks
    }

    /// Spatial size after each stride-2 stage, from
    /// `floor((s + 2p - k) / 2) + 1` with `k = 3, p = 1`.
    pub fn stage_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.stride_stages());
        let (mut h, mut w) = (self.input_h, self.input_w);
        for _ in 0..self.stride_stages() {
            h = conv_out(h, KERNEL, 2, PAD);
            w = conv_out(w, KERNEL, 2, PAD);
            dims.push((h, w));
        }
        dims
    }

    pub fn final_dims(&self) -> (usize, usize) {
        *self.stage_dims().last().expect("at least the stem stage")
    }

    pub fn flattened_size(&self) -> usize {
        let (h, w) = self.final_dims();
        h * w * self.channel_schedule.last().copied().unwrap_or(1)
    }

    /// Convolutions on the main path: stem, plus a channel-raising
    /// convolution and two block convolutions per residual block.
    /// Projection shortcuts are counted separately.
    pub fn conv_layer_count(&self) -> usize {
        1 + 3 * self.n_res_blocks
    }

    pub fn projection_count(&self) -> usize {
        self.n_res_blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Code mean and clamped log-variance, row-major `B x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub g: Vec<T>,
    pub h: Vec<T>,
    pub batch: usize,
    pub r: usize,
}

/// Source of the standard-normal draws used by the reparameterization.
pub enum Noise<'a, T> {
    Sample(&'a mut rng::Rng),
    Fixed(&'a [T]),
    Zero,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `B x m`.
    pub y_hat: Vec<T>,
    pub enc: EncoderOutput<T>,
    /// `B x r` sampled codes.
    pub z: Vec<T>,
    /// `B x r` noise used for `z`.
    pub eps: Vec<T>,
}

/// `z = g + eps * exp(h / 2)`, elementwise.
pub fn reparameterize<T: Real>(g: &[T], h: &[T], eps: &[T]) -> Result<Vec<T>> {
    if g.len() != h.len() || g.len() != eps.len() {
        return Err(Error::Dimension(format!(
            "reparameterize: g {}, h {}, eps {}",
            g.len(),
            h.len(),
            eps.len()
        )));
    }
    let half = T::of(0.5);
    Ok(g.iter()
        .zip(h)
        .zip(eps)
        .map(|((&g, &h), &e)| g + e * (h * half).exp())
        .collect())
}

#[derive(Debug, Clone)]
struct ResUnit<T> {
    raise: Conv2d<T>,
    conv1: Conv2d<T>,
    bn1: BatchNorm<T>,
    relu1: Relu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm<T>,
    proj: Conv2d<T>,
    relu_out: Relu<T>,
}

impl<T: Real> ResUnit<T> {
    fn new(name: &str, cin: usize, cout: usize, rng: &mut rng::Rng) -> Self {
        Self {
            raise: Conv2d::new(&format!("{name}.raise"), cin, cout, 1, 1, 0, true, rng),
            conv1: Conv2d::new(&format!("{name}.conv1"), cout, cout, KERNEL, 2, PAD, false, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), cout),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, KERNEL, 1, PAD, false, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), cout),
            proj: Conv2d::new(&format!("{name}.proj"), cout, cout, 1, 2, 0, true, rng),
            relu_out: Relu::new(),
        }
    }

    fn forward_eval(&self, ex: Execution, x: &Tensor<T>) -> Tensor<T> {
        let r = self.raise.forward_eval(ex, x);
        let mut a = self.bn1.forward_eval(ex, &self.conv1.forward_eval(ex, &r));
        Relu::forward_eval(&mut a);
        let mut o = self.bn2.forward_eval(ex, &self.conv2.forward_eval(ex, &a));
        let p = self.proj.forward_eval(ex, &r);
        o.data.iter_mut().zip(&p.data).for_each(|(o, p)| *o += *p);
        Relu::forward_eval(&mut o);
        o
    }

    fn forward_train(&mut self, ex: Execution, x: &Tensor<T>) -> Tensor<T> {
        let r = self.raise.forward_train(ex, x);
        let c1 = self.conv1.forward_train(ex, &r);
        let mut a = self.bn1.forward_train(ex, &c1);
        self.relu1.forward_train(&mut a);
        let c2 = self.conv2.forward_train(ex, &a);
        let mut o = self.bn2.forward_train(ex, &c2);
        let p = self.proj.forward_train(ex, &r);
        o.data.iter_mut().zip(&p.data).for_each(|(o, p)| *o += *p);
        self.relu_out.forward_train(&mut o);
        o
    }

    fn backward(&mut self, ex: Execution, mut dout: Tensor<T>) -> Tensor<T> {
        self.relu_out.backward(&mut dout);
        let d_proj = self.proj.backward(ex, &dout, true).expect("input grad");
        let d = self.bn2.backward(ex, &dout);
        let mut d = self.conv2.backward(ex, &d, true).expect("input grad");
        self.relu1.backward(&mut d);
        let d = self.bn1.backward(ex, &d);
        let mut dr = self.conv1.backward(ex, &d, true).expect("input grad");
        dr.data.iter_mut().zip(&d_proj.data).for_each(|(a, b)| *a += *b);
        self.raise.backward(ex, &dr, true).expect("input grad")
    }
}

impl<T: Real> Module<T> for ResUnit<T> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.raise.params_mut(out);
        self.conv1.params_mut(out);
        self.bn1.params_mut(out);
        self.conv2.params_mut(out);
        self.bn2.params_mut(out);
        self.proj.params_mut(out);
    }
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        self.raise.params(out);
        self.conv1.params(out);
        self.bn1.params(out);
        self.conv2.params(out);
        self.bn2.params(out);
        self.proj.params(out);
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<T>>) {
        self.bn1.buffers_mut(out);
        self.bn2.buffers_mut(out);
    }
    fn buffers<'a>(&'a self, out: &mut Vec<&'a Buffer<T>>) {
        self.bn1.buffers(out);
        self.bn2.buffers(out);
    }
}

#[derive(Debug, Clone)]
struct Encoder<T> {
    stem: Conv2d<T>,
    stem_bn: BatchNorm<T>,
    stem_relu: Relu<T>,
    units: Vec<ResUnit<T>>,
    fc_g: Linear<T>,
    fc_h: Linear<T>,
    final_shape: (usize, usize, usize),
}

fn check_finite<T: Real>(t: &Tensor<T>, layer: &str) -> Result<()> {
    match t.first_non_finite() {
        Some(i) => Err(Error::numerical(layer, format!("non-finite activation at flat index {i}"))),
        None => Ok(()),
    }
}

impl<T: Real> Encoder<T> {
    fn new(arch: &ArchConfig, rng: &mut rng::Rng) -> Self {
        let ch = &arch.channel_schedule;
        let stem = Conv2d::new("enc.stem", 1, ch[1], KERNEL, 2, PAD, false, rng);
        let units = (0..arch.n_res_blocks)
            .map(|u| ResUnit::new(&format!("enc.unit{u}"), ch[u + 1], ch[u + 2], rng))
            .collect();
        let flat = arch.flattened_size();
        let (fh, fw) = arch.final_dims();
        Self {
            stem,
            stem_bn: BatchNorm::new("enc.stem_bn", ch[1]),
            stem_relu: Relu::new(),
            units,
            fc_g: Linear::new("enc.fc_g", flat, arch.latent_dim, rng),
            fc_h: Linear::new("enc.fc_h", flat, arch.latent_dim, rng),
            final_shape: (*ch.last().unwrap(), fh, fw),
        }
    }

    fn forward_eval(&self, ex: Execution, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut s = self.stem_bn.forward_eval(ex, &self.stem.forward_eval(ex, x));
        Relu::forward_eval(&mut s);
        check_finite(&s, "enc.stem")?;
        for (u, unit) in self.units.iter().enumerate() {
            s = unit.forward_eval(ex, &s);
            check_finite(&s, &format!("enc.unit{u}"))?;
        }
        let f = s.flatten();
        Ok((self.fc_g.forward_eval(ex, &f), self.fc_h.forward_eval(ex, &f)))
    }

    fn forward_train(&mut self, ex: Execution, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let c = self.stem.forward_train(ex, x);
        let mut s = self.stem_bn.forward_train(ex, &c);
        self.stem_relu.forward_train(&mut s);
        check_finite(&s, "enc.stem")?;
        for (u, unit) in self.units.iter_mut().enumerate() {
            s = unit.forward_train(ex, &s);
            check_finite(&s, &format!("enc.unit{u}"))?;
        }
        let f = s.flatten();
        Ok((self.fc_g.forward_train(ex, &f), self.fc_h.forward_train(ex, &f)))
    }

    fn backward(&mut self, ex: Execution, dg: &Tensor<T>, dh: &Tensor<T>) {
        let mut df = self.fc_g.backward(ex, dg, true).expect("input grad");
        let df_h = self.fc_h.backward(ex, dh, true).expect("input grad");
        df.data.iter_mut().zip(&df_h.data).for_each(|(a, b)| *a += *b);
        let (c, h, w) = self.final_shape;
        let mut d = df.unflatten(c, h, w);
        for unit in self.units.iter_mut().rev() {
            d = unit.backward(ex, d);
        }
        self.stem_relu.backward(&mut d);
        let d = self.stem_bn.backward(ex, &d);
        self.stem.backward(ex, &d, false);
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.stem.params_mut(out);
        self.stem_bn.params_mut(out);
        for u in &mut self.units {
            u.params_mut(out);
        }
        self.fc_g.params_mut(out);
        self.fc_h.params_mut(out);
    }
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        self.stem.params(out);
        self.stem_bn.params(out);
        for u in &self.units {
            u.params(out);
        }
        self.fc_g.params(out);
        self.fc_h.params(out);
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<T>>) {
        self.stem_bn.buffers_mut(out);
        for u in &mut self.units {
            u.buffers_mut(out);
        }
    }
    fn buffers<'a>(&'a self, out: &mut Vec<&'a Buffer<T>>) {
        self.stem_bn.buffers(out);
        for u in &self.units {
            u.buffers(out);
        }
    }
}

#[derive(Debug, Clone)]
struct Decoder<T> {
    fc1: Linear<T>,
    bn: BatchNorm<T>,
    relu: Relu<T>,
    fc2: Linear<T>,
}

impl<T: Real> Decoder<T> {
    fn new(arch: &ArchConfig, rng: &mut rng::Rng) -> Self {
        Self {
            fc1: Linear::new("dec.fc1", arch.latent_dim, arch.decoder_hidden, rng),
            bn: BatchNorm::new("dec.bn", arch.decoder_hidden),
            relu: Relu::new(),
            fc2: Linear::new("dec.fc2", arch.decoder_hidden, arch.output_dim, rng),
        }
    }

    fn forward_eval(&self, ex: Execution, z: &Tensor<T>) -> Tensor<T> {
        let mut a = self.bn.forward_eval(ex, &self.fc1.forward_eval(ex, z));
        Relu::forward_eval(&mut a);
        self.fc2.forward_eval(ex, &a)
    }

    fn forward_train(&mut self, ex: Execution, z: &Tensor<T>) -> Tensor<T> {
        let a = self.fc1.forward_train(ex, z);
        let mut a = self.bn.forward_train(ex, &a);
        self.relu.forward_train(&mut a);
        self.fc2.forward_train(ex, &a)
    }

    fn backward(&mut self, ex: Execution, dy: &Tensor<T>) -> Tensor<T> {
        let mut d = self.fc2.backward(ex, dy, true).expect("input grad");
        self.relu.backward(&mut d);
        let d = self.bn.backward(ex, &d);
        self.fc1.backward(ex, &d, true).expect("input grad")
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.fc1.params_mut(out);
        self.bn.params_mut(out);
        self.fc2.params_mut(out);
    }
    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        self.fc1.params(out);
        self.bn.params(out);
        self.fc2.params(out);
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<T>>) {
        self.bn.buffers_mut(out);
    }
    fn buffers<'a>(&'a self, out: &mut Vec<&'a Buffer<T>>) {
        self.bn.buffers(out);
    }
}

#[derive(Debug, Clone)]
struct TrainCache<T> {
    eps: Vec<T>,
    h: Vec<T>,
    clamped: Vec<bool>,
}

/// Variational encoder-decoder.
#[derive(Debug, Clone)]
pub struct Ved<T> {
    arch: ArchConfig,
    encoder: Encoder<T>,
    decoder: Decoder<T>,
    exec: Execution,
    cache: Option<TrainCache<T>>,
}

impl<T: Real> Ved<T> {
    /// Builds a model with fan-in-scaled uniform weights from the
    /// `(seed, "init", 0)` substream.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::substream(seed, "init", 0);
        let encoder = Encoder::new(&arch, &mut r);
        let decoder = Decoder::new(&arch, &mut r);
        Ok(Self {
            arch,
            encoder,
            decoder,
            exec: Execution::default(),
            cache: None,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    fn check_images(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != 1 || x.h != self.arch.input_h || x.w != self.arch.input_w || x.b == 0 {
            return Err(Error::Dimension(format!(
                "expected B x 1 x {} x {} images, got c={} b={} h={} w={}",
                self.arch.input_h, self.arch.input_w, x.c, x.b, x.h, x.w
            )));
        }
        Ok(())
    }

    fn check_train_batch(&self, b: usize) -> Result<()> {
        if b < 2 {
            return Err(Error::Dimension(format!(
                "train mode uses batch statistics and needs B >= 2, got {b}"
            )));
        }
        Ok(())
    }

    fn heads_to_output(&self, g: Tensor<T>, h_raw: Tensor<T>) -> Result<(EncoderOutput<T>, Vec<bool>)> {
        let batch = g.b;
        let r = self.arch.latent_dim;
        let c = T::of(self.arch.h_clamp);
        let g_rows = g.to_rows();
        let h_raw_rows = h_raw.to_rows();
        if let Some(i) = g_rows.iter().chain(&h_raw_rows).position(|v| !v.is_finite()) {
            return Err(Error::numerical("enc.heads", format!("non-finite head output at {i}")));
        }
        let clamped = h_raw_rows.iter().map(|&v| v > c || v < -c).collect();
        let h_rows = h_raw_rows.iter().map(|&v| v.max(-c).min(c)).collect();
        Ok((
            EncoderOutput {
                g: g_rows,
                h: h_rows,
                batch,
                r,
            },
            clamped,
        ))
    }

    /// Encodes a `B x 1 x H x W` image batch. Train mode uses batch
    /// statistics and updates running estimates.
    pub fn encode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<EncoderOutput<T>> {
        match mode {
            Mode::Eval => self.encode_eval(x),
            Mode::Train => {
                self.check_images(x)?;
                self.check_train_batch(x.b)?;
                let (g, h) = self.encoder.forward_train(self.exec, x)?;
                Ok(self.heads_to_output(g, h)?.0)
            }
        }
    }

    pub fn encode_eval(&self, x: &Tensor<T>) -> Result<EncoderOutput<T>> {
        self.check_images(x)?;
        let (g, h) = self.encoder.forward_eval(self.exec, x)?;
        Ok(self.heads_to_output(g, h)?.0)
    }

    /// Decodes row-major `B x r` codes into `B x m` outputs.
    pub fn decode(&mut self, z: &[T], batch: usize, mode: Mode) -> Result<Vec<T>> {
        match mode {
            Mode::Eval => self.decode_eval(z, batch),
            Mode::Train => {
                self.check_codes(z, batch)?;
                self.check_train_batch(batch)?;
                let zt = Tensor::from_rows(z, batch, self.arch.latent_dim);
                Ok(self.decoder.forward_train(self.exec, &zt).to_rows())
            }
        }
    }

    pub fn decode_eval(&self, z: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_codes(z, batch)?;
        let zt = Tensor::from_rows(z, batch, self.arch.latent_dim);
        let y = self.decoder.forward_eval(self.exec, &zt);
        check_finite(&y, "dec.fc2")?;
        Ok(y.to_rows())
    }

    fn check_codes(&self, z: &[T], batch: usize) -> Result<()> {
        if batch == 0 || z.len() != batch * self.arch.latent_dim {
            return Err(Error::Dimension(format!(
                "expected {batch} x {} codes, got {} values",
                self.arch.latent_dim,
                z.len()
            )));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical("dec.input", format!("non-finite code at {i}")));
        }
        Ok(())
    }

    fn draw_noise(&self, noise: Noise<'_, T>, len: usize) -> Result<Vec<T>> {
        match noise {
            Noise::Sample(r) => Ok((0..len).map(|_| T::of(r.sample::<f64, _>(StandardNormal))).collect()),
            Noise::Fixed(e) => {
                if e.len() != len {
                    return Err(Error::Dimension(format!("noise has {} values, need {len}", e.len())));
                }
                Ok(e.to_vec())
            }
            Noise::Zero => Ok(vec![T::zero(); len]),
        }
    }

    /// Encode, draw one code per sample, decode. Train mode keeps the
    /// intermediates needed by [`Ved::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, noise: Noise<'_, T>, mode: Mode) -> Result<ForwardOutput<T>> {
        self.check_images(x)?;
        let batch = x.b;
        let len = batch * self.arch.latent_dim;
        match mode {
            Mode::Eval => self.forward_eval(x, noise),
            Mode::Train => {
                self.check_train_batch(batch)?;
                let (g, h) = self.encoder.forward_train(self.exec, x)?;
                let (enc, clamped) = self.heads_to_output(g, h)?;
                let eps = self.draw_noise(noise, len)?;
                let z = reparameterize(&enc.g, &enc.h, &eps)?;
                let zt = Tensor::from_rows(&z, batch, self.arch.latent_dim);
                let y = self.decoder.forward_train(self.exec, &zt);
                check_finite(&y, "dec.fc2")?;
                self.cache = Some(TrainCache {
                    eps: eps.clone(),
                    h: enc.h.clone(),
                    clamped,
                });
                Ok(ForwardOutput {
                    y_hat: y.to_rows(),
                    enc,
                    z,
                    eps,
                })
            }
        }
    }

    /// Eval-mode forward; never mutates parameters or running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>, noise: Noise<'_, T>) -> Result<ForwardOutput<T>> {
        self.check_images(x)?;
        let batch = x.b;
        let enc = self.encode_eval(x)?;
        let eps = self.draw_noise(noise, batch * self.arch.latent_dim)?;
        let z = reparameterize(&enc.g, &enc.h, &eps)?;
        let y_hat = self.decode_eval(&z, batch)?;
        Ok(ForwardOutput { y_hat, enc, z, eps })
    }

    /// Backpropagates loss gradients with respect to `y_hat`, and the direct
    /// gradients with respect to `g` and `h` (all row-major), into the
    /// parameter gradient accumulators.
    pub fn backward(&mut self, d_yhat: &[T], d_g: &[T], d_h: &[T]) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Config("backward called without a train-mode forward".into()))?;
        let r = self.arch.latent_dim;
        let batch = cache.eps.len() / r;
        if d_yhat.len() != batch * self.arch.output_dim || d_g.len() != batch * r || d_h.len() != batch * r {
            return Err(Error::Dimension("gradient shapes do not match the cached forward".into()));
        }
        let dy = Tensor::from_rows(d_yhat, batch, self.arch.output_dim);
        let dz = self.decoder.backward(self.exec, &dy).to_rows();
        let half = T::of(0.5);
        let mut dg = Vec::with_capacity(dz.len());
        let mut dh = Vec::with_capacity(dz.len());
        for i in 0..dz.len() {
            dg.push(dz[i] + d_g[i]);
            let via_z = dz[i] * cache.eps[i] * half * (cache.h[i] * half).exp();
            dh.push(if cache.clamped[i] { T::zero() } else { via_z + d_h[i] });
        }
        let dg = Tensor::from_rows(&dg, batch, r);
        let dh = Tensor::from_rows(&dh, batch, r);
        self.encoder.backward(self.exec, &dg, &dh);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        self.encoder.params_mut(&mut out);
        self.decoder.params_mut(&mut out);
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.encoder.params(&mut out);
        self.decoder.params(&mut out);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut out = Vec::new();
        self.encoder.buffers_mut(&mut out);
        self.decoder.buffers_mut(&mut out);
        out
    }

    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        let mut out = Vec::new();
        self.encoder.buffers(&mut out);
        self.decoder.buffers(&mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Number of main-path convolutions actually instantiated.
    pub fn conv_layer_count(&self) -> usize {
        1 + self.encoder.units.len() * 3
    }

    /// Zeroes the weights of the output layers of both encoder heads, so
    /// `g` and `h` equal the head biases.
    pub fn zero_encoder_head_weights(&mut self) {
        self.encoder.fc_g.weight.value.iter_mut().for_each(|v| *v = T::zero());
        self.encoder.fc_h.weight.value.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn encoder_head_biases(&self) -> (&[T], &[T]) {
        (&self.encoder.fc_g.bias.value, &self.encoder.fc_h.bias.value)
    }

    /// Zeroes the decoder output weights, so `y_hat` equals the output bias.
    pub fn zero_decoder_output_weights(&mut self) {
        self.decoder.fc2.weight.value.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn decoder_output_bias(&self) -> &[T] {
        &self.decoder.fc2.bias.value
    }
}

/// `B x 1 x H x W` batch from row-major `B x (H*W)` pixels.
pub fn image_batch<T: Real>(pixels: Vec<T>, batch: usize, h: usize, w: usize) -> Tensor<T> {
    Tensor::from_vec(pixels, 1, batch, h, w)
}
