//! Convolutional variational autoencoder over square bitmaps.
//!
//! Encoder: stride-2 3×3 convolutions (leaky ReLU) down to `res/2^L`, then
//! dense heads for the posterior mean and log-variance. Decoder: dense layer
//! back to the bottleneck volume, then stride-2 transposed convolutions
//! (the adjoints of the encoder's convolutions) up to one logit per pixel.
//! Loss per sample: summed binary cross-entropy on the logits plus
//! `β·KL(q(z|x) ‖ N(0, I))`, averaged over the minibatch, minimized with
//! Adam.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoding::{Bitmap, EncodingError};
use crate::validate::Violation;

use super::layers::{
    add_bias, bias_grad, col2im, flatten, im2col, leaky, leaky_backward, unflatten, TAPS,
};
use super::GenError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FDAV";
pub const WEIGHTS_VERSION: u32 = 1;
const MAX_RESTARTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub input_resolution: usize,
    /// Output channels of each stride-2 convolution; the decoder mirrors
    /// them.
    pub conv_layers: Vec<usize>,
    pub kl_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 5,
            input_resolution: 64,
            conv_layers: vec![8, 16, 32, 64],
            kl_weight: 1.0,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.latent_dim == 0 {
            v.push(Violation::new("latent_dim", "must be at least 1"));
        }
        if self.conv_layers.is_empty() || self.conv_layers.contains(&0) {
            v.push(Violation::new(
                "conv_layers",
                "need at least one layer, each with at least one filter",
            ));
        }
        let reduction = 1usize
            .checked_shl(self.conv_layers.len() as u32)
            .unwrap_or(0);
        if reduction == 0 || self.input_resolution == 0 || self.input_resolution % reduction != 0 {
            v.push(Violation::new(
                "input_resolution",
                format!(
                    "must be a positive multiple of 2^{}",
                    self.conv_layers.len()
                ),
            ));
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            v.push(Violation::new("kl_weight", "must be non-negative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(Violation::new("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            v.push(Violation::new("batch_size", "must be at least 1"));
        }
        v
    }

    fn layers(&self) -> usize {
        self.conv_layers.len()
    }

    /// Side of the smallest feature map.
    fn bottleneck(&self) -> usize {
        self.input_resolution >> self.layers()
    }

    fn flat_len(&self) -> usize {
        self.conv_layers[self.layers() - 1] * self.bottleneck().pow(2)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    fn parameter_shapes(&self) -> Vec<(String, [usize; 2])> {
        let l = self.layers();
        let f = &self.conv_layers;
        let mut shapes = Vec::new();
        for i in 0..l {
            let in_c = if i == 0 { 1 } else { f[i - 1] };
            shapes.push((format!("enc{i}.w"), [f[i], in_c * TAPS]));
            shapes.push((format!("enc{i}.b"), [f[i], 1]));
        }
        let flat = self.flat_len();
        shapes.push(("mu.w".into(), [self.latent_dim, flat]));
        shapes.push(("mu.b".into(), [self.latent_dim, 1]));
        shapes.push(("logvar.w".into(), [self.latent_dim, flat]));
        shapes.push(("logvar.b".into(), [self.latent_dim, 1]));
        shapes.push(("dec_in.w".into(), [flat, self.latent_dim]));
        shapes.push(("dec_in.b".into(), [flat, 1]));
        for j in 0..l {
            let i = l - 1 - j;
            let out_c = if i == 0 { 1 } else { f[i - 1] };
            // Stored as the weight of the convolution this layer is the
            // adjoint of: (input channels, output channels · 9).
            shapes.push((format!("dec{j}.w"), [f[i], out_c * TAPS]));
            shapes.push((format!("dec{j}.b"), [out_c, 1]));
        }
        shapes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean per-sample reconstruction term.
    pub reconstruction: f64,
    /// Mean per-sample KL term (before weighting).
    pub kl: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    params: Vec<Array2<f64>>,
    history: Vec<EpochLoss>,
}

struct Forward {
    enc_cols: Vec<Array2<f64>>,
    enc_pre: Vec<Array2<f64>>,
    flat: Array2<f64>,
    mu: Array2<f64>,
    logvar: Array2<f64>,
    z: Array2<f64>,
    dec_in_pre: Array2<f64>,
    dec_inputs: Vec<Array2<f64>>,
    dec_pre: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

/// Closed-form `KL(N(μ, e^{lv}) ‖ N(0, 1))` summed over dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `−[t·ln σ(x) + (1−t)·ln(1−σ(x))]` in a form that never overflows.
fn bce_with_logits(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

impl VaeModel {
    /// Untrained model with He-initialized weights and zero biases.
    pub fn new(config: VaeConfig) -> Result<Self, GenError> {
        let problems = config.violations();
        if !problems.is_empty() {
            return Err(GenError::InvalidConfig(problems));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let params = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, [r, c])| {
                if name.ends_with(".b") {
                    Array2::zeros((r, c))
                } else {
                    let fan_in = if name.starts_with("dec") && name != "dec_in.w" {
                        r
                    } else {
                        c
                    };
                    let std = (2.0 / fan_in as f64).sqrt();
                    Array2::from_shape_fn((r, c), |_| std * rng.sample::<f64, _>(StandardNormal))
                }
            })
            .collect();
        Ok(Self {
            config,
            params,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn resolution(&self) -> usize {
        self.config.input_resolution
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Flat view of every parameter, in storage order.
    pub fn parameters(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let mut rest = index;
        for p in &mut self.params {
            if rest < p.len() {
                let c = p.ncols();
                p[[rest / c, rest % c]] = value;
                return;
            }
            rest -= p.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn enc_w(&self, i: usize) -> &Array2<f64> {
        &self.params[2 * i]
    }

    fn enc_b(&self, i: usize) -> &Array2<f64> {
        &self.params[2 * i + 1]
    }

    fn head(&self, k: usize) -> &Array2<f64> {
        &self.params[2 * self.config.layers() + k]
    }

    fn dec_w(&self, j: usize) -> &Array2<f64> {
        &self.params[2 * self.config.layers() + 6 + 2 * j]
    }

    fn dec_b(&self, j: usize) -> &Array2<f64> {
        &self.params[2 * self.config.layers() + 6 + 2 * j + 1]
    }

    fn check_bitmap(&self, b: &Bitmap) -> Result<(), GenError> {
        if b.resolution() != self.config.input_resolution {
            return Err(GenError::ResolutionMismatch {
                expected: self.config.input_resolution,
                got: b.resolution(),
            });
        }
        Ok(())
    }

    fn input_batch(bitmaps: &[&Bitmap]) -> Array2<f64> {
        let cells: Vec<f64> = bitmaps
            .iter()
            .flat_map(|b| b.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }))
            .collect();
        Array2::from_shape_vec((1, cells.len()), cells).expect("one channel")
    }

    /// Encoder up to the posterior parameters `(μ, log σ²)`, each
    /// `(latent, batch)`.
    fn encode_forward(
        &self,
        x: &Array2<f64>,
        batch: usize,
    ) -> (
        Vec<Array2<f64>>,
        Vec<Array2<f64>>,
        Array2<f64>,
        Array2<f64>,
        Array2<f64>,
    ) {
        let mut size = self.config.input_resolution;
        let mut a = x.clone();
        let mut cols_cache = Vec::new();
        let mut pre_cache = Vec::new();
        for i in 0..self.config.layers() {
            let cols = im2col(&a, batch, size, size);
            let mut z = self.enc_w(i).dot(&cols);
            add_bias(&mut z, self.enc_b(i).as_slice().expect("contiguous"));
            a = leaky(&z);
            cols_cache.push(cols);
            pre_cache.push(z);
            size /= 2;
        }
        let flat = flatten(&a, batch);
        let mut mu = self.head(0).dot(&flat);
        add_bias(&mut mu, self.head(1).as_slice().expect("contiguous"));
        let mut logvar = self.head(2).dot(&flat);
        add_bias(&mut logvar, self.head(3).as_slice().expect("contiguous"));
        (cols_cache, pre_cache, flat, mu, logvar)
    }

    /// Decoder from latents `(latent, batch)` to logits `(1, batch·res²)`.
    fn decode_forward(
        &self,
        z: &Array2<f64>,
    ) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let batch = z.ncols();
        let l = self.config.layers();
        let mut h = self.head(4).dot(z);
        add_bias(&mut h, self.head(5).as_slice().expect("contiguous"));
        let dec_in_pre = h.clone();
        let mut a = unflatten(&leaky(&h), self.config.conv_layers[l - 1]);
        let mut size = self.config.bottleneck();
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        for j in 0..l {
            let w = self.dec_w(j);
            let out_c = w.ncols() / TAPS;
            let cols = w.t().dot(&a);
            let mut y = col2im(&cols, out_c, batch, 2 * size, 2 * size);
            add_bias(&mut y, self.dec_b(j).as_slice().expect("contiguous"));
            inputs.push(a);
            a = if j + 1 < l { leaky(&y) } else { y.clone() };
            pres.push(y);
            size *= 2;
        }
        (dec_in_pre, inputs, pres, a)
    }

    fn forward(&self, x: &Array2<f64>, eps: &Array2<f64>) -> Forward {
        let batch = eps.ncols();
        let (enc_cols, enc_pre, flat, mu, logvar) = self.encode_forward(x, batch);
        let z = &mu + &(logvar.mapv(|lv| (0.5 * lv).exp()) * eps);
        let (dec_in_pre, dec_inputs, dec_pre, logits) = self.decode_forward(&z);
        Forward {
            enc_cols,
            enc_pre,
            flat,
            mu,
            logvar,
            z,
            dec_in_pre,
            dec_inputs,
            dec_pre,
            logits,
        }
    }

    fn loss_of(&self, fwd: &Forward, x: &Array2<f64>) -> LossParts {
        let batch = fwd.z.ncols() as f64;
        let recon: f64 = fwd
            .logits
            .iter()
            .zip(x.iter())
            .map(|(&l, &t)| bce_with_logits(l, t))
            .sum::<f64>()
            / batch;
        let kl = kl_divergence(
            fwd.mu.as_slice().expect("contiguous"),
            fwd.logvar.as_slice().expect("contiguous"),
        ) / batch;
        LossParts {
            reconstruction: recon,
            kl,
            total: recon + self.config.kl_weight * kl,
        }
    }

    /// Mean minibatch loss and its gradient with respect to every parameter
    /// (same order as storage), for fixed reparameterization noise `eps`
    /// of shape `(latent, batch)`.
    pub fn loss_and_gradient(
        &self,
        bitmaps: &[&Bitmap],
        eps: &Array2<f64>,
    ) -> Result<(LossParts, Vec<Array2<f64>>), GenError> {
        for b in bitmaps {
            self.check_bitmap(b)?;
        }
        let x = Self::input_batch(bitmaps);
        let fwd = self.forward(&x, eps);
        let loss = self.loss_of(&fwd, &x);
        Ok((loss, self.backward(&fwd, &x, eps)))
    }

    /// Loss only, with the same conventions as [`Self::loss_and_gradient`].
    pub fn loss(&self, bitmaps: &[&Bitmap], eps: &Array2<f64>) -> Result<LossParts, GenError> {
        for b in bitmaps {
            self.check_bitmap(b)?;
        }
        let x = Self::input_batch(bitmaps);
        Ok(self.loss_of(&self.forward(&x, eps), &x))
    }

    fn backward(&self, fwd: &Forward, x: &Array2<f64>, eps: &Array2<f64>) -> Vec<Array2<f64>> {
        let l = self.config.layers();
        let batch = eps.ncols();
        let scale = 1.0 / batch as f64;
        let beta = self.config.kl_weight;
        let mut grads: Vec<Array2<f64>> = self
            .params
            .iter()
            .map(|p| Array2::zeros(p.raw_dim()))
            .collect();

        // Decoder, last layer first.
        let mut dy = Array2::from_shape_fn(fwd.logits.raw_dim(), |(r, c)| {
            scale * (sigmoid(fwd.logits[[r, c]]) - x[[r, c]])
        });
        let mut size = self.config.input_resolution;
        for j in (0..l).rev() {
            if j + 1 < l {
                leaky_backward(&mut dy, &fwd.dec_pre[j]);
            }
            let dcols = im2col(&dy, batch, size, size);
            let a = &fwd.dec_inputs[j];
            let gw = a.dot(&dcols.t());
            let gb = bias_grad(&dy);
            let idx = 2 * l + 6 + 2 * j;
            grads[idx] = gw;
            grads[idx + 1] = Array2::from_shape_vec((gb.len(), 1), gb).expect("bias");
            dy = self.dec_w(j).dot(&dcols);
            size /= 2;
        }
        let mut dh = flatten(&dy, batch);
        leaky_backward(&mut dh, &fwd.dec_in_pre);
        grads[2 * l + 4] = dh.dot(&fwd.z.t());
        let gb = bias_grad(&dh);
        grads[2 * l + 5] = Array2::from_shape_vec((gb.len(), 1), gb).expect("bias");
        let dz = self.head(4).t().dot(&dh);

        // Reparameterization and KL.
        let std = fwd.logvar.mapv(|lv| (0.5 * lv).exp());
        let dmu = &dz + &(fwd.mu.mapv(|m| beta * scale * m));
        let dlv = &(&(&dz * eps) * &std) * 0.5
            + fwd.logvar.mapv(|lv| beta * scale * 0.5 * (lv.exp() - 1.0));
        grads[2 * l] = dmu.dot(&fwd.flat.t());
        let gb = bias_grad(&dmu);
        grads[2 * l + 1] = Array2::from_shape_vec((gb.len(), 1), gb).expect("bias");
        grads[2 * l + 2] = dlv.dot(&fwd.flat.t());
        let gb = bias_grad(&dlv);
        grads[2 * l + 3] = Array2::from_shape_vec((gb.len(), 1), gb).expect("bias");
        let dflat = self.head(0).t().dot(&dmu) + self.head(2).t().dot(&dlv);

        // Encoder, deepest layer first.
        let mut da = unflatten(&dflat, self.config.conv_layers[l - 1]);
        let mut size = self.config.bottleneck() * 2;
        for i in (0..l).rev() {
            leaky_backward(&mut da, &fwd.enc_pre[i]);
            grads[2 * i] = da.dot(&fwd.enc_cols[i].t());
            let gb = bias_grad(&da);
            grads[2 * i + 1] = Array2::from_shape_vec((gb.len(), 1), gb).expect("bias");
            if i > 0 {
                let dcols = self.enc_w(i).t().dot(&da);
                da = col2im(&dcols, self.enc_w(i).ncols() / TAPS, batch, size, size);
            }
            size *= 2;
        }
        grads
    }

    /// Posterior means, one row per bitmap.
    pub fn encode_batch(&self, bitmaps: &[&Bitmap]) -> Result<Vec<Vec<f64>>, GenError> {
        for b in bitmaps {
            self.check_bitmap(b)?;
        }
        if bitmaps.is_empty() {
            return Ok(Vec::new());
        }
        let x = Self::input_batch(bitmaps);
        let (_, _, _, mu, _) = self.encode_forward(&x, bitmaps.len());
        Ok((0..bitmaps.len()).map(|b| mu.column(b).to_vec()).collect())
    }

    /// Posterior mean of one bitmap.
    pub fn encode(&self, bitmap: &Bitmap) -> Result<Vec<f64>, GenError> {
        Ok(self.encode_batch(&[bitmap])?.remove(0))
    }

    fn check_latent(&self, z: &[f64]) -> Result<(), GenError> {
        if z.len() != self.config.latent_dim {
            return Err(GenError::LatentDimension {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(GenError::NonFiniteLatent);
        }
        Ok(())
    }

    /// Pixel probabilities (row-major) for each latent.
    pub fn decode_probabilities_batch(
        &self,
        latents: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, GenError> {
        for z in latents {
            self.check_latent(z)?;
        }
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let z = Array2::from_shape_fn((self.config.latent_dim, latents.len()), |(r, c)| {
            latents[c][r]
        });
        let (_, _, _, logits) = self.decode_forward(&z);
        let n = self.config.input_resolution.pow(2);
        let logits = logits.as_slice().expect("contiguous");
        Ok((0..latents.len())
            .map(|b| {
                logits[b * n..(b + 1) * n]
                    .iter()
                    .map(|&l| sigmoid(l))
                    .collect()
            })
            .collect())
    }

    pub fn decode_probabilities(&self, latent: &[f64]) -> Result<Vec<f64>, GenError> {
        Ok(self
            .decode_probabilities_batch(&[latent.to_vec()])?
            .remove(0))
    }

    /// Thresholded, cleaned decodes; degenerate outputs come back as `Err`
    /// entries rather than aborting the batch.
    pub fn decode_batch(
        &self,
        latents: &[Vec<f64>],
    ) -> Result<Vec<Result<Bitmap, GenError>>, GenError> {
        let res = self.config.input_resolution;
        Ok(self
            .decode_probabilities_batch(latents)?
            .iter()
            .map(|p| threshold(p, res))
            .collect())
    }

    pub fn decode(&self, latent: &[f64]) -> Result<Bitmap, GenError> {
        threshold(
            &self.decode_probabilities(latent)?,
            self.config.input_resolution,
        )
    }

    /// Rounds every parameter to the nearest `f32`, so that a saved and
    /// reloaded model is identical to this one.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Writes the weight file: `"FDAV"`, version, layer count, then per layer
    /// the name (u32 length + UTF-8) and its two dimensions, then all
    /// weights in table order as little-endian f32. Integers are u32 LE.
    pub fn write_weights<W: Write>(&self, mut out: W) -> Result<(), GenError> {
        let shapes = self.config.parameter_shapes();
        out.write_all(WEIGHTS_MAGIC)?;
        out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        out.write_all(&(shapes.len() as u32).to_le_bytes())?;
        for (name, [r, c]) in &shapes {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(*r as u32).to_le_bytes())?;
            out.write_all(&(*c as u32).to_le_bytes())?;
        }
        for p in &self.params {
            for &v in p.iter() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a weight file written for `config`; the layer table must match
    /// the architecture the config describes.
    pub fn read_weights<R: Read>(
        mut input: R,
        config: VaeConfig,
        history: Vec<EpochLoss>,
    ) -> Result<Self, GenError> {
        let mut model = Self::new(config)?;
        let word = |input: &mut R| -> Result<u32, GenError> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(GenError::Format("bad weight-file magic".into()));
        }
        let version = word(&mut input)?;
        if version != WEIGHTS_VERSION {
            return Err(GenError::Format(format!(
                "unsupported weight-file version {version}"
            )));
        }
        let shapes = model.config.parameter_shapes();
        if word(&mut input)? as usize != shapes.len() {
            return Err(GenError::Format(
                "layer count does not match the configuration".into(),
            ));
        }
        for (name, [r, c]) in &shapes {
            let len = word(&mut input)? as usize;
            let mut buf = vec![0u8; len];
            input.read_exact(&mut buf)?;
            let (rr, cc) = (word(&mut input)? as usize, word(&mut input)? as usize);
            if buf != name.as_bytes() || rr != *r || cc != *c {
                return Err(GenError::Format(format!(
                    "layer table entry for {name} does not match"
                )));
            }
        }
        for p in &mut model.params {
            let mut buf = vec![0u8; 4 * p.len()];
            input.read_exact(&mut buf)?;
            for (v, chunk) in p.iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
            }
        }
        model.history = history;
        Ok(model)
    }
}

/// Probabilities to a bitmap: a pixel is solid when `p ≥ 0.5`; only the
/// largest 4-connected component is kept.
pub fn threshold(probabilities: &[f64], resolution: usize) -> Result<Bitmap, GenError> {
    let cells = probabilities.iter().map(|&p| p >= 0.5).collect();
    let bitmap = Bitmap::from_cells(resolution, cells)?.largest_component();
    if bitmap.solid_count() == 0 {
        return Err(GenError::Encoding(EncodingError::DegenerateShape));
    }
    Ok(bitmap)
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Array2<f64>], lr: f64) -> Self {
        Self {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

fn train_once(
    bitmaps: &[&Bitmap],
    config: &VaeConfig,
    lr: f64,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<VaeModel, GenError> {
    let mut model = VaeModel::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1));
    let mut adam = Adam::new(&model.params, lr);
    let mut order: Vec<usize> = (0..bitmaps.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Bitmap> = chunk.iter().map(|&i| bitmaps[i]).collect();
            let eps = Array2::from_shape_fn((config.latent_dim, batch.len()), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let (loss, grads) = model.loss_and_gradient(&batch, &eps)?;
            if !loss.total.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(GenError::DivergedTraining { epoch });
            }
            let w = batch.len() as f64;
            sums.reconstruction += loss.reconstruction * w;
            sums.kl += loss.kl * w;
            sums.total += loss.total * w;
            adam.step(&mut model.params, &grads);
        }
        let n = bitmaps.len() as f64;
        let record = EpochLoss {
            epoch,
            reconstruction: sums.reconstruction / n,
            kl: sums.kl / n,
            total: sums.total / n,
        };
        on_epoch(&record);
        model.history.push(record);
    }
    model.round_to_f32();
    Ok(model)
}

pub const MIN_TRAINING_BITMAPS: usize = 100;

/// Trains from scratch. A non-finite loss restarts training with a tenfold
/// smaller learning rate, at most three times. Final weights are rounded
/// to `f32`.
pub fn train_vae(bitmaps: &[Bitmap], config: &VaeConfig) -> Result<VaeModel, GenError> {
    train_vae_with_progress(bitmaps, config, &mut |_| {})
}

pub fn train_vae_with_progress(
    bitmaps: &[Bitmap],
    config: &VaeConfig,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<VaeModel, GenError> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(GenError::InvalidConfig(problems));
    }
    if bitmaps.len() < MIN_TRAINING_BITMAPS {
        return Err(GenError::InsufficientData {
            needed: MIN_TRAINING_BITMAPS,
            got: bitmaps.len(),
        });
    }
    let refs: Vec<&Bitmap> = bitmaps.iter().collect();
    if let Some(b) = refs
        .iter()
        .find(|b| b.resolution() != config.input_resolution)
    {
        return Err(GenError::ResolutionMismatch {
            expected: config.input_resolution,
            got: b.resolution(),
        });
    }
    let mut lr = config.learning_rate;
    let mut last = None;
    for _ in 0..=MAX_RESTARTS {
        match train_once(&refs, config, lr, on_epoch) {
            Err(GenError::DivergedTraining { epoch }) => {
                last = Some(epoch);
                lr /= 10.0;
            }
            other => return other,
        }
    }
    Err(GenError::DivergedTraining {
        epoch: last.unwrap_or(0),
    })
}
