//! Class-conditional GAN at 32×32.
//!
//! The generator maps `[z | s·e]` (noise and scaled EEG latent) through a dense
//! layer to `(c0, 4, 4)`, then three stride-2 transposed convolutions to
//! `(3, 32, 32)` and `tanh`. The discriminator is three stride-2 convolutions,
//! flattened to `φ(x)`, with logit `w·φ(x) + b + ⟨E[y], φ(x)⟩` (projection
//! conditioning on the class label). Losses are the non-saturating softplus
//! pair; images entering the discriminator pass through adaptive augmentation.

use std::collections::VecDeque;

use eegart_autodiff::{AdamConfig, AdamState, AutodiffError, Real, SeededRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{take_shaped, take_tensor, CheckpointError, ModelKind, NamedTensors, Persist};
use crate::encoder::{EncoderError, EncoderModel};
use crate::imaging::{color_stats, ImageRGB};
use crate::ingest::{EegDataset, EegEpoch};
use crate::label::{EmotionLabel, NUM_CLASSES};

pub const IMAGE_SIZE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
const BASE: usize = 4;
const LEAKY_SLOPE: f64 = 0.2;
const MAX_SHIFT: i64 = 4;
const MAX_BRIGHTNESS: f64 = 0.2;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("{dataset} has no samples of class {label}")]
    ClassMissing { dataset: &'static str, label: EmotionLabel },
    #[error("encoder latent dim {encoder} does not match generator latent slice {generator}")]
    EncoderMismatch { encoder: usize, generator: usize },
    #[error("painting {index} is {h}x{w}, expected {IMAGE_SIZE}x{IMAGE_SIZE}")]
    BadImage { index: usize, h: usize, w: usize },
    #[error("invalid GAN hyperparameter: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanHyper {
    pub noise_dim: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub steps: usize,
    pub ada_target: f64,
    pub ada_step: f64,
    pub ada_window: usize,
    /// Generator widths after the dense layer and after each of the first two
    /// upsampling stages.
    pub g_channels: [usize; 3],
    /// Discriminator widths of its three convolution stages.
    pub d_channels: [usize; 3],
    /// Colour statistics are sampled every this many steps (0 disables).
    pub report_every: usize,
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            noise_dim: 64,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 32,
            steps: 3000,
            ada_target: 0.6,
            ada_step: 0.01,
            ada_window: 64,
            g_channels: [128, 64, 32],
            d_channels: [32, 64, 128],
            report_every: 500,
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::InvalidHyper(m.to_string()));
        if self.noise_dim == 0 || self.batch == 0 {
            return bad("noise_dim and batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.ada_target) || !(self.ada_step > 0.0 && self.ada_step <= 1.0) {
            return bad("ada_target must lie in [0, 1] and ada_step in (0, 1]");
        }
        if self.ada_window == 0 || self.g_channels.contains(&0) || self.d_channels.contains(&0) {
            return bad("ada_window and channel widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T: Real = f32> {
    pub noise_dim: usize,
    /// Multiplier applied to the EEG latent before concatenation.
    pub latent_scale: T,
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
    /// Transposed-convolution weights `(c_in, c_out, 4, 4)` and biases.
    pub up_w: [Tensor<T>; 3],
    pub up_b: [Tensor<T>; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorVars<'t, T: Real> {
    pub dense_w: Var<'t, T>,
    pub dense_b: Var<'t, T>,
    pub up_w: [Var<'t, T>; 3],
    pub up_b: [Var<'t, T>; 3],
}

impl<'t, T: Real> GeneratorVars<'t, T> {
    pub fn params(&self) -> Vec<Var<'t, T>> {
        let mut v = vec![self.dense_w, self.dense_b];
        v.extend(self.up_w);
        v.extend(self.up_b);
        v
    }
}

impl<T: Real> Generator<T> {
    pub fn new(noise_dim: usize, latent_dim: usize, channels: [usize; 3], rng: &mut SeededRng) -> Self {
        let din = noise_dim + latent_dim;
        let widths = [channels[0], channels[1], channels[2], IMAGE_CHANNELS];
        let up_w = std::array::from_fn(|i| Tensor::he_normal(&[widths[i], widths[i + 1], 4, 4], widths[i] * 4, rng));
        Self {
            noise_dim,
            latent_scale: T::one(),
            dense_w: Tensor::he_normal(&[din, channels[0] * BASE * BASE], din, rng),
            dense_b: Tensor::zeros(&[channels[0] * BASE * BASE]),
            up_w,
            up_b: std::array::from_fn(|i| Tensor::zeros(&[widths[i + 1]])),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.dense_w.shape()[0] - self.noise_dim
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.dense_w, &self.dense_b];
        v.extend(self.up_w.iter());
        v.extend(self.up_b.iter());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.dense_w, &mut self.dense_b];
        v.extend(self.up_w.iter_mut());
        v.extend(self.up_b.iter_mut());
        v
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> GeneratorVars<'t, T> {
        let put = |t: &Tensor<T>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        GeneratorVars {
            dense_w: put(&self.dense_w),
            dense_b: put(&self.dense_b),
            up_w: std::array::from_fn(|i| put(&self.up_w[i])),
            up_b: std::array::from_fn(|i| put(&self.up_b[i])),
        }
    }

    /// `(N, 3, 32, 32)` images in `[−1, 1]` from `z (N, Dz)` and `e (N, L)`.
    pub fn forward<'t>(&self, vars: GeneratorVars<'t, T>, z: Var<'t, T>, e: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
        let n = z.shape()[0];
        let c0 = self.up_w[0].shape()[0];
        let mut h = z
            .concat_cols(e.scale(self.latent_scale))?
            .matmul(vars.dense_w)?
            .add_bias(vars.dense_b)?
            .leaky_relu(LEAKY_SLOPE)
            .reshape(&[n, c0, BASE, BASE])?;
        for i in 0..3 {
            h = h.conv_transpose2d(vars.up_w[i], 2, 1)?.add_bias(vars.up_b[i])?;
            h = if i < 2 { h.leaky_relu(LEAKY_SLOPE) } else { h.tanh() };
        }
        Ok(h)
    }

    /// Forward pass without gradients.
    pub fn generate(&self, z: Tensor<T>, e: Tensor<T>) -> Result<Tensor<T>, GanError> {
        if z.shape().len() != 2 || z.shape()[1] != self.noise_dim {
            return Err(GanError::InvalidHyper(format!("noise has shape {:?}, expected (N, {})", z.shape(), self.noise_dim)));
        }
        if e.shape().len() != 2 || e.shape()[1] != self.latent_dim() {
            return Err(GanError::EncoderMismatch {
                encoder: e.shape().get(1).copied().unwrap_or(0),
                generator: self.latent_dim(),
            });
        }
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let out = self.forward(vars, tape.constant(z), tape.constant(e))?;
        let v = out.value();
        Ok((*v).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T: Real = f32> {
    /// Convolution weights `(c_out, c_in, 3, 3)` and biases.
    pub conv_w: [Tensor<T>; 3],
    pub conv_b: [Tensor<T>; 3],
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
    /// Class embedding `(4, Dd)`.
    pub embed: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorVars<'t, T: Real> {
    pub conv_w: [Var<'t, T>; 3],
    pub conv_b: [Var<'t, T>; 3],
    pub dense_w: Var<'t, T>,
    pub dense_b: Var<'t, T>,
    pub embed: Var<'t, T>,
}

impl<'t, T: Real> DiscriminatorVars<'t, T> {
    pub fn params(&self) -> Vec<Var<'t, T>> {
        let mut v: Vec<Var<'t, T>> = self.conv_w.to_vec();
        v.extend(self.conv_b);
        v.extend([self.dense_w, self.dense_b, self.embed]);
        v
    }
}

impl<T: Real> Discriminator<T> {
    pub fn new(channels: [usize; 3], rng: &mut SeededRng) -> Self {
        let widths = [IMAGE_CHANNELS, channels[0], channels[1], channels[2]];
        let dd = feature_dim(channels);
        Self {
            conv_w: std::array::from_fn(|i| Tensor::he_normal(&[widths[i + 1], widths[i], 3, 3], widths[i] * 9, rng)),
            conv_b: std::array::from_fn(|i| Tensor::zeros(&[widths[i + 1]])),
            dense_w: Tensor::he_normal(&[dd, 1], dd, rng),
            dense_b: Tensor::zeros(&[1]),
            embed: Tensor::he_normal(&[NUM_CLASSES, dd], dd, rng),
        }
    }

    pub fn zeros(channels: [usize; 3]) -> Self {
        let mut d = Self::new(channels, &mut SeededRng::new(0));
        for t in d.params_mut() {
            *t = Tensor::zeros(t.shape());
        }
        d
    }

    pub fn feature_dim(&self) -> usize {
        self.embed.shape()[1]
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.conv_w.iter().collect();
        v.extend(self.conv_b.iter());
        v.extend([&self.dense_w, &self.dense_b, &self.embed]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.conv_w.iter_mut().collect();
        v.extend(self.conv_b.iter_mut());
        v.extend([&mut self.dense_w, &mut self.dense_b, &mut self.embed]);
        v
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> DiscriminatorVars<'t, T> {
        let put = |t: &Tensor<T>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        DiscriminatorVars {
            conv_w: std::array::from_fn(|i| put(&self.conv_w[i])),
            conv_b: std::array::from_fn(|i| put(&self.conv_b[i])),
            dense_w: put(&self.dense_w),
            dense_b: put(&self.dense_b),
            embed: put(&self.embed),
        }
    }

    /// Logits `(N, 1)` for images `(N, 3, 32, 32)` with class codes `labels`.
    pub fn forward<'t>(&self, vars: DiscriminatorVars<'t, T>, x: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>, AutodiffError> {
        let n = x.shape()[0];
        let mut h = x;
        for i in 0..3 {
            h = h.conv2d(vars.conv_w[i], 2, 1)?.add_bias(vars.conv_b[i])?.leaky_relu(LEAKY_SLOPE);
        }
        let phi = h.reshape(&[n, self.feature_dim()])?;
        let plain = phi.matmul(vars.dense_w)?.add_bias(vars.dense_b)?;
        let projection = phi.mul(vars.embed.gather_rows(labels)?)?.row_sums()?;
        plain.add(projection)
    }

    /// Logits without gradients.
    pub fn logits(&self, x: Tensor<T>, labels: &[usize]) -> Result<Vec<T>, GanError> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let out = self.forward(vars, tape.constant(x), labels)?;
        let v = out.value();
        Ok(v.data().to_vec())
    }
}

fn feature_dim(channels: [usize; 3]) -> usize {
    channels[2] * BASE * BASE
}

/// `(L_D, L_G)`: `mean softplus(−real) + mean softplus(fake)` and
/// `mean softplus(−fake)`.
pub fn gan_losses<'t, T: Real>(real: Var<'t, T>, fake: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
    let neg_one = T::lit(-1.0);
    let d_real = real.scale(neg_one).softplus().mean();
    let d_fake = fake.softplus().mean();
    let d = d_real.add(d_fake).expect("scalars");
    let g = fake.scale(neg_one).softplus().mean();
    (d, g)
}

/// A sampled augmentation as an index map and additive offset over one
/// `(C, H, W)` image. `None` means the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub shift: (i64, i64),
    pub brightness: f64,
}

impl AugmentPlan {
    /// With probability `p` draws a flip (prob 0.5), a shift in `[−4, 4]²` and
    /// a brightness offset in `[−0.2, 0.2]`.
    pub fn sample(p: f64, rng: &mut SeededRng) -> Option<AugmentPlan> {
        if !rng.bernoulli(p) {
            return None;
        }
        Some(AugmentPlan {
            flip: rng.bernoulli(0.5),
            shift: (rng.int_in(-MAX_SHIFT, MAX_SHIFT), rng.int_in(-MAX_SHIFT, MAX_SHIFT)),
            brightness: rng.uniform_in(-MAX_BRIGHTNESS, MAX_BRIGHTNESS),
        })
    }

    /// Source index for each output element of a `(c, h, w)` image; edges clamp.
    pub fn source_indices(&self, c: usize, h: usize, w: usize) -> Vec<usize> {
        let (dy, dx) = self.shift;
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
                for x in 0..w {
                    let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
                    let sx = if self.flip { w - 1 - sx } else { sx };
                    out.push((ch * h + sy) * w + sx);
                }
            }
        }
        out
    }
}

/// Index map and offsets for a batch `(N, C, H, W)` with one plan per image.
fn batch_map<T: Real>(plans: &[Option<AugmentPlan>], c: usize, h: usize, w: usize) -> (Vec<usize>, Vec<T>) {
    let per = c * h * w;
    let mut index = Vec::with_capacity(plans.len() * per);
    let mut offset = Vec::with_capacity(plans.len() * per);
    for (i, plan) in plans.iter().enumerate() {
        match plan {
            Some(p) => {
                index.extend(p.source_indices(c, h, w).into_iter().map(|s| i * per + s));
                offset.extend(std::iter::repeat_n(T::lit(p.brightness), per));
            }
            None => {
                index.extend(i * per..(i + 1) * per);
                offset.extend(std::iter::repeat_n(T::zero(), per));
            }
        }
    }
    (index, offset)
}

fn apply_map<T: Real>(x: &Tensor<T>, index: &[usize], offset: &[T]) -> Tensor<T> {
    let (lo, hi) = (T::lit(-1.0), T::one());
    Tensor::from_fn(x.shape(), |o| (x.data()[index[o]] + offset[o]).max(lo).min(hi))
}

/// Augments one `(C, H, W)` image in `[−1, 1]`.
pub fn augment<T: Real>(image: &Tensor<T>, p: f64, rng: &mut SeededRng) -> Tensor<T> {
    let s = image.shape();
    let plans = [AugmentPlan::sample(p, rng)];
    if plans[0].is_none() {
        return image.clone();
    }
    let (index, offset) = batch_map(&plans, s[0], s[1], s[2]);
    apply_map(image, &index, &offset)
}

fn augment_batch<T: Real>(x: &Tensor<T>, p: f64, rng: &mut SeededRng) -> Tensor<T> {
    let s = x.shape();
    let plans: Vec<_> = (0..s[0]).map(|_| AugmentPlan::sample(p, rng)).collect();
    if plans.iter().all(Option::is_none) {
        return x.clone();
    }
    let (index, offset) = batch_map(&plans, s[1], s[2], s[3]);
    apply_map(x, &index, &offset)
}

fn augment_batch_var<'t, T: Real>(x: Var<'t, T>, p: f64, rng: &mut SeededRng) -> Result<Var<'t, T>, AutodiffError> {
    let s = x.shape();
    let plans: Vec<_> = (0..s[0]).map(|_| AugmentPlan::sample(p, rng)).collect();
    if plans.iter().all(Option::is_none) {
        return Ok(x);
    }
    let (index, offset) = batch_map(&plans, s[1], s[2], s[3]);
    x.remap(&s, index, offset, (T::lit(-1.0), T::one()))
}

/// Adaptive augmentation probability driven by the sign of real logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaState {
    pub p: f64,
    pub target: f64,
    pub step: f64,
    capacity: usize,
    window: VecDeque<f64>,
}

impl AdaState {
    pub fn new(target: f64, step: f64, capacity: usize) -> Self {
        Self {
            p: 0.0,
            target,
            step,
            capacity: capacity.max(1),
            window: VecDeque::with_capacity(capacity),
        }
    }

    /// Mean of `sign(D(real))` over the window.
    pub fn r(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().sum::<f64>() / self.window.len() as f64
    }

    pub fn is_saturated(&self) -> bool {
        self.window.len() == self.capacity
    }

    pub fn update(&mut self, real_logits: &[f64]) {
        for &l in real_logits {
            if self.window.len() == self.capacity {
                self.window.pop_front();
            }
            self.window.push_back(if l > 0.0 { 1.0 } else if l < 0.0 { -1.0 } else { 0.0 });
        }
        // r is a mean over a full window; until then p holds
        if !self.is_saturated() {
            return;
        }
        let r = self.r();
        if r > self.target {
            self.p = (self.p + self.step).min(1.0);
        } else if r < self.target {
            self.p = (self.p - self.step).max(0.0);
        }
        // absorb accumulated rounding at the ends of the range
        if self.p > 1.0 - 1e-9 {
            self.p = 1.0;
        } else if self.p < 1e-9 {
            self.p = 0.0;
        }
    }
}

/// Returns the updated state; see [`AdaState::update`].
pub fn ada_update(mut state: AdaState, real_logits: &[f64]) -> AdaState {
    state.update(real_logits);
    state
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassColor {
    pub label: EmotionLabel,
    pub coldness: f64,
    pub value: f64,
    pub saturation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorCheckpoint {
    pub step: usize,
    pub classes: Vec<ClassColor>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GanReport {
    pub d_losses: Vec<f64>,
    pub g_losses: Vec<f64>,
    /// Augmentation probability after each step.
    pub p: Vec<f64>,
    pub checkpoints: Vec<ColorCheckpoint>,
}

/// A labelled painting for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Painting {
    pub label: EmotionLabel,
    pub image: ImageRGB,
}

fn check_classes(dataset: &'static str, labels: impl Iterator<Item = EmotionLabel>) -> Result<(), GanError> {
    let mut seen = [false; NUM_CLASSES];
    for l in labels {
        seen[l.code()] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(k) => Err(GanError::ClassMissing {
            dataset,
            label: EmotionLabel::from_code(k).expect("class code"),
        }),
        None => Ok(()),
    }
}

fn noise(n: usize, dim: usize, rng: &mut SeededRng) -> Tensor<f32> {
    Tensor::randn(&[n, dim], 1.0, rng)
}

/// Latent rows stacked into `(N, L)`.
fn stack(rows: &[&[f32]]) -> Result<Tensor<f32>, AutodiffError> {
    let l = rows[0].len();
    Tensor::new(&[rows.len(), l], rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// Mean colour statistics of `per_class` samples per class, each conditioned
/// on a latent drawn from that class.
pub fn class_colors(
    generator: &Generator,
    latents: &[Vec<Vec<f32>>],
    per_class: usize,
    rng: &mut SeededRng,
) -> Result<Vec<ClassColor>, GanError> {
    let mut out = Vec::with_capacity(NUM_CLASSES);
    for label in EmotionLabel::ALL {
        let pool = &latents[label.code()];
        let rows: Vec<&[f32]> = (0..per_class).map(|_| pool[rng.below(pool.len())].as_slice()).collect();
        let z = noise(per_class, generator.noise_dim, rng);
        let images = generator.generate(z, stack(&rows)?)?;
        let (mut c, mut v, mut s) = (0.0, 0.0, 0.0);
        for img in images_from_batch(&images)? {
            let st = color_stats(&img);
            c += st.coldness;
            v += st.value;
            s += st.saturation;
        }
        let k = per_class as f64;
        out.push(ClassColor {
            label,
            coldness: c / k,
            value: v / k,
            saturation: s / k,
        });
    }
    Ok(out)
}

/// Splits `(N, 3, H, W)` generator output into `[0, 1]` images.
pub fn images_from_batch(batch: &Tensor<f32>) -> Result<Vec<ImageRGB>, GanError> {
    let s = batch.shape();
    let per = s[1] * s[2] * s[3];
    batch
        .data()
        .chunks(per)
        .map(|chunk| ImageRGB::from_signed_planar(s[2], s[3], chunk).map_err(|e| GanError::InvalidHyper(e.to_string())))
        .collect()
}

fn adam_for<T: Real>(hyper: &GanHyper, params: &[&Tensor<T>]) -> AdamState<T> {
    let config = AdamConfig {
        lr: hyper.lr,
        beta1: hyper.beta1,
        beta2: hyper.beta2,
        eps: 1e-8,
    };
    AdamState::new(config, &params.iter().map(|&t| t.clone()).collect::<Vec<_>>())
}

fn apply_step(adam: &mut AdamState, params: Vec<&mut Tensor<f32>>, grads: &[Tensor<f32>]) -> Result<(), AutodiffError> {
    let mut values: Vec<Tensor<f32>> = params.iter().map(|t| (**t).clone()).collect();
    adam.step(&mut values, grads)?;
    for (dst, src) in params.into_iter().zip(values) {
        *dst = src;
    }
    Ok(())
}

/// Alternating one-D/one-G training on label-paired paintings and EEG.
/// Every real painting of class `y` is paired with the latent of a uniformly
/// drawn EEG epoch of class `y`.
pub fn train_gan(
    paintings: &[Painting],
    eeg: &EegDataset,
    encoder: &EncoderModel,
    hyper: &GanHyper,
    seed: u64,
) -> Result<(Generator, Discriminator, GanReport), GanError> {
    hyper.validate()?;
    check_classes("paintings", paintings.iter().map(|p| p.label))?;
    check_classes("EEG dataset", eeg.labels().into_iter())?;
    for (index, p) in paintings.iter().enumerate() {
        if p.image.height() != IMAGE_SIZE || p.image.width() != IMAGE_SIZE {
            return Err(GanError::BadImage {
                index,
                h: p.image.height(),
                w: p.image.width(),
            });
        }
    }

    let all_latents = encoder.encode_epochs(eeg.epochs())?;
    let mut latents: Vec<Vec<Vec<f32>>> = vec![Vec::new(); NUM_CLASSES];
    for (latent, label) in all_latents.iter().zip(eeg.labels()) {
        latents[label.code()].push(latent.clone());
    }
    let count = all_latents.len() * all_latents[0].len();
    let rms = (all_latents.iter().flatten().map(|&v| f64::from(v).powi(2)).sum::<f64>() / count as f64).sqrt();

    let mut generator = Generator::<f32>::new(
        hyper.noise_dim,
        encoder.latent_dim(),
        hyper.g_channels,
        &mut SeededRng::derive(seed, 10),
    );
    generator.latent_scale = if rms > 1e-6 { (1.0 / rms) as f32 } else { 1.0 };
    let mut disc = Discriminator::<f32>::new(hyper.d_channels, &mut SeededRng::derive(seed, 11));
    let mut adam_g = adam_for(hyper, &generator.params());
    let mut adam_d = adam_for(hyper, &disc.params());
    let mut ada = AdaState::new(hyper.ada_target, hyper.ada_step, hyper.ada_window);

    let planar: Vec<Vec<f32>> = paintings.iter().map(|p| p.image.to_signed_planar()).collect();
    let per_image = IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
    let image_shape = [hyper.batch, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE];
    let mut rng = SeededRng::derive(seed, 12);
    let mut order: Vec<usize> = (0..paintings.len()).collect();
    let mut cursor = order.len();

    let mut report = GanReport {
        d_losses: Vec::with_capacity(hyper.steps),
        g_losses: Vec::with_capacity(hyper.steps),
        p: Vec::with_capacity(hyper.steps),
        checkpoints: Vec::new(),
    };
    for step in 0..hyper.steps {
        let mut batch = Vec::with_capacity(hyper.batch);
        while batch.len() < hyper.batch {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let labels: Vec<usize> = batch.iter().map(|&i| paintings[i].label.code()).collect();
        let rows: Vec<&[f32]> = labels
            .iter()
            .map(|&y| latents[y][rng.below(latents[y].len())].as_slice())
            .collect();
        let e = stack(&rows)?;
        let mut real = Vec::with_capacity(hyper.batch * per_image);
        for &i in &batch {
            real.extend_from_slice(&planar[i]);
        }
        let real = Tensor::new(&image_shape, real)?;

        // discriminator step
        let fake = generator.generate(noise(hyper.batch, hyper.noise_dim, &mut rng), e.clone())?;
        let real_aug = augment_batch(&real, ada.p, &mut rng);
        let fake_aug = augment_batch(&fake, ada.p, &mut rng);
        let d_loss;
        let real_logits;
        {
            let tape = Tape::new();
            let vars = disc.bind(&tape, true);
            let lr = disc.forward(vars, tape.constant(real_aug), &labels)?;
            let lf = disc.forward(vars, tape.constant(fake_aug), &labels)?;
            let (ld, _) = gan_losses(lr, lf);
            d_loss = f64::from(ld.value().item());
            real_logits = lr.value().data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
            let grads = tape.backward(ld)?;
            let g: Vec<Tensor<f32>> = vars.params().iter().map(|&p| grads.wrt(p)).collect();
            apply_step(&mut adam_d, disc.params_mut(), &g)?;
        }
        ada.update(&real_logits);

        // generator step
        let g_loss;
        {
            let tape = Tape::new();
            let gv = generator.bind(&tape, true);
            let dv = disc.bind(&tape, false);
            let z = tape.constant(noise(hyper.batch, hyper.noise_dim, &mut rng));
            let fake = generator.forward(gv, z, tape.constant(e))?;
            let fake = augment_batch_var(fake, ada.p, &mut rng)?;
            let lf = disc.forward(dv, fake, &labels)?;
            let lg = lf.scale(-1.0).softplus().mean();
            g_loss = f64::from(lg.value().item());
            let grads = tape.backward(lg)?;
            let g: Vec<Tensor<f32>> = gv.params().iter().map(|&p| grads.wrt(p)).collect();
            apply_step(&mut adam_g, generator.params_mut(), &g)?;
        }

        report.d_losses.push(d_loss);
        report.g_losses.push(g_loss);
        report.p.push(ada.p);
        let done = step + 1;
        if hyper.report_every > 0 && (done % hyper.report_every == 0 || done == hyper.steps) {
            let classes = class_colors(&generator, &latents, 16, &mut SeededRng::derive(seed, 13))?;
            report.checkpoints.push(ColorCheckpoint { step: done, classes });
        }
    }
    Ok((generator, disc, report))
}

/// `count` images for one epoch: encode once, then one seeded noise draw per
/// image.
pub fn generate_painting(
    epoch: &EegEpoch,
    encoder: &EncoderModel,
    generator: &Generator,
    seed: u64,
    count: usize,
) -> Result<Vec<ImageRGB>, GanError> {
    if encoder.latent_dim() != generator.latent_dim() {
        return Err(GanError::EncoderMismatch {
            encoder: encoder.latent_dim(),
            generator: generator.latent_dim(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let latent = encoder.encode_epoch(epoch)?;
    generate_from_latent(&latent, generator, seed, count)
}

pub fn generate_from_latent(latent: &[f32], generator: &Generator, seed: u64, count: usize) -> Result<Vec<ImageRGB>, GanError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = SeededRng::new(seed);
    let z = noise(count, generator.noise_dim, &mut rng);
    let rows: Vec<&[f32]> = vec![latent; count];
    let images = generator.generate(z, stack(&rows)?)?;
    images_from_batch(&images)
}

fn scalar_meta(value: f32) -> Tensor<f32> {
    Tensor::scalar(value)
}

impl Persist for Generator<f32> {
    const KIND: ModelKind = ModelKind::Generator;

    fn to_tensors(&self) -> NamedTensors {
        let mut out = vec![
            ("noise_dim".to_string(), scalar_meta(self.noise_dim as f32)),
            ("latent_scale".to_string(), scalar_meta(self.latent_scale)),
            ("dense_w".to_string(), self.dense_w.clone()),
            ("dense_b".to_string(), self.dense_b.clone()),
        ];
        for i in 0..3 {
            out.push((format!("up{i}_w"), self.up_w[i].clone()));
            out.push((format!("up{i}_b"), self.up_b[i].clone()));
        }
        out
    }

    fn from_tensors(mut tensors: NamedTensors) -> Result<Self, CheckpointError> {
        let noise_dim = take_shaped(&mut tensors, "noise_dim", &[1])?.item() as usize;
        let latent_scale = take_shaped(&mut tensors, "latent_scale", &[1])?.item();
        let dense_w = take_tensor(&mut tensors, "dense_w")?;
        let mut up_w = Vec::new();
        let mut up_b = Vec::new();
        for i in 0..3 {
            let w = take_tensor(&mut tensors, &format!("up{i}_w"))?;
            if w.shape().len() != 4 || w.shape()[2..] != [4, 4] {
                return Err(CheckpointError::Malformed(format!("up{i}_w must be (c_in, c_out, 4, 4)")));
            }
            up_b.push(take_shaped(&mut tensors, &format!("up{i}_b"), &[w.shape()[1]])?);
            up_w.push(w);
        }
        let c0 = up_w[0].shape()[0];
        if dense_w.shape().len() != 2 || dense_w.shape()[1] != c0 * BASE * BASE || dense_w.shape()[0] <= noise_dim {
            return Err(CheckpointError::Malformed("generator dense layer is inconsistent".into()));
        }
        if up_w[1].shape()[0] != up_w[0].shape()[1] || up_w[2].shape()[0] != up_w[1].shape()[1] || up_w[2].shape()[1] != IMAGE_CHANNELS {
            return Err(CheckpointError::Malformed("generator stage widths are inconsistent".into()));
        }
        let dense_b = take_shaped(&mut tensors, "dense_b", &[c0 * BASE * BASE])?;
        if let Some((name, _)) = tensors.first() {
            return Err(CheckpointError::Malformed(format!("unexpected tensor {name:?}")));
        }
        let mut w = up_w.into_iter();
        let mut b = up_b.into_iter();
        Ok(Generator {
            noise_dim,
            latent_scale,
            dense_w,
            dense_b,
            up_w: std::array::from_fn(|_| w.next().expect("three stages")),
            up_b: std::array::from_fn(|_| b.next().expect("three stages")),
        })
    }
}

impl Persist for Discriminator<f32> {
    const KIND: ModelKind = ModelKind::Discriminator;

    fn to_tensors(&self) -> NamedTensors {
        let mut out = Vec::new();
        for i in 0..3 {
            out.push((format!("conv{i}_w"), self.conv_w[i].clone()));
            out.push((format!("conv{i}_b"), self.conv_b[i].clone()));
        }
        out.push(("dense_w".to_string(), self.dense_w.clone()));
        out.push(("dense_b".to_string(), self.dense_b.clone()));
        out.push(("embed".to_string(), self.embed.clone()));
        out
    }

    fn from_tensors(mut tensors: NamedTensors) -> Result<Self, CheckpointError> {
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut c_in = IMAGE_CHANNELS;
        for i in 0..3 {
            let w = take_tensor(&mut tensors, &format!("conv{i}_w"))?;
            if w.shape().len() != 4 || w.shape()[1] != c_in || w.shape()[2..] != [3, 3] {
                return Err(CheckpointError::Malformed(format!("conv{i}_w has shape {:?}", w.shape())));
            }
            c_in = w.shape()[0];
            conv_b.push(take_shaped(&mut tensors, &format!("conv{i}_b"), &[c_in])?);
            conv_w.push(w);
        }
        let dd = c_in * BASE * BASE;
        let dense_w = take_shaped(&mut tensors, "dense_w", &[dd, 1])?;
        let dense_b = take_shaped(&mut tensors, "dense_b", &[1])?;
        let embed = take_shaped(&mut tensors, "embed", &[NUM_CLASSES, dd])?;
        if let Some((name, _)) = tensors.first() {
            return Err(CheckpointError::Malformed(format!("unexpected tensor {name:?}")));
        }
        let mut w = conv_w.into_iter();
        let mut b = conv_b.into_iter();
        Ok(Discriminator {
            conv_w: std::array::from_fn(|_| w.next().expect("three stages")),
            conv_b: std::array::from_fn(|_| b.next().expect("three stages")),
            dense_w,
            dense_b,
            embed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_losses() {
        let tape: Tape<f64> = Tape::new();
        let real = tape.constant(Tensor::zeros(&[5, 1]));
        let fake = tape.constant(Tensor::zeros(&[5, 1]));
        let (d, g) = gan_losses(real, fake);
        assert!((d.value().item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.value().item() - 2f64.ln()).abs() < 1e-12);
        let real = tape.constant(Tensor::full(&[3, 1], 100.0));
        let fake = tape.constant(Tensor::full(&[3, 1], -100.0));
        let (d, _) = gan_losses(real, fake);
        assert!(d.value().item() < 1e-40);
    }

    #[test]
    fn generator_loss_decreases_in_fake_logit() {
        let tape: Tape<f64> = Tape::new();
        let real = tape.constant(Tensor::zeros(&[1, 1]));
        let mut last = f64::INFINITY;
        for v in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let (_, g) = gan_losses(real, tape.constant(Tensor::full(&[1, 1], v)));
            let g = g.value().item();
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn zero_discriminator_gives_zero_logits() {
        let d = Discriminator::<f32>::zeros([4, 4, 4]);
        let mut rng = SeededRng::new(1);
        let x = Tensor::randn(&[2, 3, 32, 32], 1.0, &mut rng);
        assert_eq!(d.logits(x, &[0, 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn projection_term_depends_on_label() {
        let d = Discriminator::<f32>::new([4, 4, 4], &mut SeededRng::new(2));
        let x = Tensor::randn(&[1, 3, 32, 32], 0.5, &mut SeededRng::new(3));
        let logits: Vec<f32> = (0..4).map(|y| d.logits(x.clone(), &[y]).unwrap()[0]).collect();
        assert!(logits.windows(2).any(|w| w[0] != w[1]));
        for extreme in [-1.0f32, 1.0] {
            let l = d.logits(Tensor::full(&[1, 3, 32, 32], extreme), &[1]).unwrap();
            assert!(l[0].is_finite());
        }
    }

    #[test]
    fn generator_output_shape_and_range() {
        let g = Generator::<f32>::new(8, 5, [8, 4, 4], &mut SeededRng::new(4));
        let mut rng = SeededRng::new(5);
        let out = g
            .generate(Tensor::randn(&[3, 8], 5.0, &mut rng), Tensor::randn(&[3, 5], 5.0, &mut rng))
            .unwrap();
        assert_eq!(out.shape(), &[3, 3, 32, 32]);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn augment_identity_at_zero_probability() {
        let mut rng = SeededRng::new(6);
        let img = Tensor::<f32>::randn(&[3, 8, 8], 0.3, &mut rng).map(|v| v.clamp(-1.0, 1.0));
        for _ in 0..50 {
            assert_eq!(augment(&img, 0.0, &mut rng), img);
        }
    }

    #[test]
    fn ada_rule() {
        let mut s = AdaState::new(0.6, 0.01, 64);
        s.update(&[1.0; 63]);
        assert_eq!(s.p, 0.0);
        s.update(&[1.0]);
        assert_eq!(s.p, 0.01);
        s.p = 1.0;
        s.update(&[1.0; 4]);
        assert_eq!(s.p, 1.0);
        let mut s = AdaState::new(0.5, 0.01, 4);
        s.p = 0.3;
        s.update(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(s.r(), 0.0);
        assert!((s.p - 0.29).abs() < 1e-12);
        s.update(&[1.0, 1.0]);
        assert_eq!(s.r(), 0.5);
        assert!((s.p - 0.29).abs() < 1e-12);
    }
}
