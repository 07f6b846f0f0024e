//! Regularized graph network over the electrode montage.
//!
//! With `Â = normalize(relu(A_base + ΔA))` and standardized features `X (n × bands)`:
//!
//! ```text
//! H1 = lrelu(Â X W1)   H2 = lrelu(Â H1 W2)   z = lrelu(vec(H2) Wp)   logits = z Wc
//! ```
//!
//! `z` is the emotion latent. `ΔA` is stored as its strict upper triangle, so
//! it is symmetric by construction, and the loss adds `λ‖ΔA‖₁`.

use eegart_autodiff::{AdamConfig, AdamState, AutodiffError, Real, SeededRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{take_shaped, take_tensor, CheckpointError, ModelKind, NamedTensors, Persist};
use crate::features::{extract_features, BandDef, FeatureError, FeatureVector, MontageGraph};
use crate::ingest::{EegDataset, EegEpoch};
use crate::label::{EmotionLabel, NUM_CLASSES};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const MIN_TRAINING_EPOCHS: usize = 40;
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("latent dim must exceed class count ({NUM_CLASSES}), got {0}")]
    LatentTooSmall(usize),
    #[error("invalid encoder hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("need at least {MIN_TRAINING_EPOCHS} labeled epochs, got {0}")]
    InsufficientData(usize),
    #[error("class {0} has no epochs")]
    ClassMissing(EmotionLabel),
    #[error("features have shape {got:?}, model expects {expected:?}")]
    ShapeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderHyper {
    pub hidden: usize,
    pub latent: usize,
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub passes: usize,
    pub val_fraction: f64,
}

impl Default for EncoderHyper {
    fn default() -> Self {
        Self {
            hidden: 16,
            latent: 16,
            lambda: 1e-3,
            lr: 1e-3,
            batch: 16,
            passes: 30,
            val_fraction: 0.2,
        }
    }
}

impl EncoderHyper {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.latent <= NUM_CLASSES {
            return Err(EncoderError::LatentTooSmall(self.latent));
        }
        let bad = |what: &str| Err(EncoderError::InvalidHyper(what.to_string()));
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.passes == 0 {
            return bad("batch and passes must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T: Real = f32> {
    pub bands: Vec<BandDef>,
    /// Montage weights `(n, n)`.
    pub a_base: Tensor<T>,
    /// Feature standardization, `(n, bands)` each.
    pub feat_mean: Tensor<T>,
    pub feat_std: Tensor<T>,
    /// Strict upper triangle of ΔA, `n(n−1)/2`.
    pub delta_upper: Tensor<T>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub wp: Tensor<T>,
    pub wc: Tensor<T>,
}

/// The model's tensors placed on a tape; fields are public so callers can
/// substitute any of them.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars<'t, T: Real> {
    pub a_base: Var<'t, T>,
    pub delta_upper: Var<'t, T>,
    pub w1: Var<'t, T>,
    pub w2: Var<'t, T>,
    pub wp: Var<'t, T>,
    pub wc: Var<'t, T>,
}

impl<'t, T: Real> EncoderVars<'t, T> {
    pub fn params(&self) -> [Var<'t, T>; 5] {
        [self.delta_upper, self.w1, self.w2, self.wp, self.wc]
    }
}

fn upper_len(n: usize) -> usize {
    (n * (n - 1) / 2).max(1)
}

impl<T: Real> EncoderModel<T> {
    /// He-initialized weights, `ΔA = 0`, identity standardization.
    pub fn new(
        montage: &MontageGraph,
        bands: Vec<BandDef>,
        hidden: usize,
        latent: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, EncoderError> {
        let mut m = Self::zeros(montage, bands, hidden, latent)?;
        let (n, f) = m.input_shape();
        m.w1 = Tensor::he_normal(&[f, hidden], f, rng);
        m.w2 = Tensor::he_normal(&[hidden, hidden], hidden, rng);
        m.wp = Tensor::he_normal(&[n * hidden, latent], n * hidden, rng);
        m.wc = Tensor::he_normal(&[latent, NUM_CLASSES], latent, rng);
        Ok(m)
    }

    /// All learnable weights zero.
    pub fn zeros(montage: &MontageGraph, bands: Vec<BandDef>, hidden: usize, latent: usize) -> Result<Self, EncoderError> {
        if latent <= NUM_CLASSES {
            return Err(EncoderError::LatentTooSmall(latent));
        }
        let n = montage.n();
        let f = bands.len();
        let a_base = Tensor::from_f64(&[n, n], montage.adjacency.data())?;
        Ok(Self {
            bands,
            a_base,
            feat_mean: Tensor::zeros(&[n, f]),
            feat_std: Tensor::ones(&[n, f]),
            delta_upper: Tensor::zeros(&[upper_len(n)]),
            w1: Tensor::zeros(&[f, hidden]),
            w2: Tensor::zeros(&[hidden, hidden]),
            wp: Tensor::zeros(&[n * hidden, latent]),
            wc: Tensor::zeros(&[latent, NUM_CLASSES]),
        })
    }

    /// `(nodes, bands)`.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.a_base.shape()[0], self.bands.len())
    }

    pub fn hidden(&self) -> usize {
        self.w2.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.wc.shape()[0]
    }

    pub fn cast<U: Real>(&self) -> EncoderModel<U> {
        EncoderModel {
            bands: self.bands.clone(),
            a_base: self.a_base.cast(),
            feat_mean: self.feat_mean.cast(),
            feat_std: self.feat_std.cast(),
            delta_upper: self.delta_upper.cast(),
            w1: self.w1.cast(),
            w2: self.w2.cast(),
            wp: self.wp.cast(),
            wc: self.wc.cast(),
        }
    }

    /// Learnable tensors in optimizer order.
    pub fn params(&self) -> [&Tensor<T>; 5] {
        [&self.delta_upper, &self.w1, &self.w2, &self.wp, &self.wc]
    }

    fn params_mut(&mut self) -> [&mut Tensor<T>; 5] {
        [&mut self.delta_upper, &mut self.w1, &mut self.w2, &mut self.wp, &mut self.wc]
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> EncoderVars<'t, T> {
        EncoderVars {
            a_base: tape.constant(self.a_base.clone()),
            delta_upper: tape.param(self.delta_upper.clone()),
            w1: tape.param(self.w1.clone()),
            w2: tape.param(self.w2.clone()),
            wp: tape.param(self.wp.clone()),
            wc: tape.param(self.wc.clone()),
        }
    }

    /// Standardized features stacked into `(N, n, bands)`.
    pub fn input_tensor(&self, features: &[&FeatureVector]) -> Result<Tensor<T>, EncoderError> {
        let (n, f) = self.input_shape();
        let mut data = Vec::with_capacity(features.len() * n * f);
        for fv in features {
            if fv.shape() != (n, f) {
                return Err(EncoderError::ShapeMismatch {
                    got: fv.shape(),
                    expected: (n, f),
                });
            }
            for (i, &v) in fv.values().iter().enumerate() {
                data.push((T::lit(v) - self.feat_mean.data()[i]) / self.feat_std.data()[i]);
            }
        }
        Ok(Tensor::new(&[features.len().max(1), n, f], data)?)
    }

    /// Effective adjacency as a plain tensor.
    pub fn effective_adjacency(&self) -> Result<Tensor<T>, EncoderError> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let a = effective_adjacency(vars.a_base, vars.delta_upper)?;
        let v = a.value();
        Ok((*v).clone())
    }

    /// Latents `(N, L)` and logits `(N, 4)` without recording gradients.
    pub fn forward_values(&self, x: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), EncoderError> {
        let tape = Tape::new();
        let vars = EncoderVars {
            a_base: tape.constant(self.a_base.clone()),
            delta_upper: tape.constant(self.delta_upper.clone()),
            w1: tape.constant(self.w1.clone()),
            w2: tape.constant(self.w2.clone()),
            wp: tape.constant(self.wp.clone()),
            wc: tape.constant(self.wc.clone()),
        };
        let (latent, logits) = forward(vars, tape.constant(x))?;
        let (latent, logits) = (latent.value(), logits.value());
        Ok(((*latent).clone(), (*logits).clone()))
    }
}

/// `normalize(relu(A_base + sym(ΔA_upper)))`.
pub fn effective_adjacency<'t, T: Real>(a_base: Var<'t, T>, delta_upper: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
    let n = a_base.shape()[0];
    let delta = delta_upper.sym_from_upper(n)?;
    a_base.add(delta)?.relu().gcn_normalize()
}

/// Batched forward pass over `x (N, n, bands)`; returns `(latent, logits)`.
pub fn forward<'t, T: Real>(vars: EncoderVars<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>), AutodiffError> {
    let xs = x.shape();
    let (batch, n, f) = (xs[0], xs[1], xs[2]);
    let h = vars.w2.shape()[0];
    let a = effective_adjacency(vars.a_base, vars.delta_upper)?;
    // node-major layout lets Â act on every sample with one product
    let x = x.swap_leading()?.reshape(&[n, batch * f])?;
    let h1 = a
        .matmul(x)?
        .reshape(&[n * batch, f])?
        .matmul(vars.w1)?
        .leaky_relu(LEAKY_SLOPE);
    let h2 = a
        .matmul(h1.reshape(&[n, batch * h])?)?
        .reshape(&[n * batch, h])?
        .matmul(vars.w2)?
        .leaky_relu(LEAKY_SLOPE);
    let pooled = h2.reshape(&[n, batch, h])?.swap_leading()?.reshape(&[batch, n * h])?;
    let latent = pooled.matmul(vars.wp)?.leaky_relu(LEAKY_SLOPE);
    let logits = latent.matmul(vars.wc)?;
    Ok((latent, logits))
}

/// Mean cross-entropy plus `λ‖ΔA‖₁` over the full symmetric matrix.
pub fn loss<'t, T: Real>(
    vars: EncoderVars<'t, T>,
    logits: Var<'t, T>,
    labels: &[usize],
    lambda: f64,
) -> Result<Var<'t, T>, AutodiffError> {
    let ce = logits.softmax_cross_entropy(labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let n = vars.a_base.shape()[0];
    let reg = vars.delta_upper.sym_from_upper(n)?.l1_norm().scale(T::lit(lambda));
    ce.add(reg)
}

/// Probabilities via a max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: EmotionLabel,
    pub probabilities: [f64; NUM_CLASSES],
    pub latent: Vec<f32>,
}

impl EncoderModel<f32> {
    pub fn features(&self, epoch: &EegEpoch) -> Result<FeatureVector, EncoderError> {
        Ok(extract_features(epoch, &self.bands)?)
    }

    /// Latent and prediction for each feature matrix.
    pub fn predict_features(&self, features: &[&FeatureVector]) -> Result<Vec<Prediction>, EncoderError> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let (latent, logits) = self.forward_values(self.input_tensor(features)?)?;
        let l = self.latent_dim();
        Ok((0..features.len())
            .map(|i| {
                let row: Vec<f64> = logits.data()[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect();
                let p = softmax(&row);
                Prediction {
                    label: EmotionLabel::from_code(argmax(&row)).expect("class code"),
                    probabilities: p.try_into().expect("four classes"),
                    latent: latent.data()[i * l..(i + 1) * l].to_vec(),
                }
            })
            .collect())
    }

    pub fn predict(&self, epoch: &EegEpoch) -> Result<Prediction, EncoderError> {
        let fv = self.features(epoch)?;
        Ok(self.predict_features(&[&fv])?.remove(0))
    }

    pub fn encode_epoch(&self, epoch: &EegEpoch) -> Result<Vec<f32>, EncoderError> {
        Ok(self.predict(epoch)?.latent)
    }

    /// Latents for many epochs at once, `(N, L)`.
    pub fn encode_epochs(&self, epochs: &[EegEpoch]) -> Result<Vec<Vec<f32>>, EncoderError> {
        let fvs = epochs.iter().map(|e| self.features(e)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&FeatureVector> = fvs.iter().collect();
        Ok(self.predict_features(&refs)?.into_iter().map(|p| p.latent).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss of each pass.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
    /// Validation confusion counts, `[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

/// Accuracy and `[true][predicted]` counts.
pub fn confusion(
    model: &EncoderModel,
    features: &[&FeatureVector],
    labels: &[usize],
) -> Result<(f64, [[usize; NUM_CLASSES]; NUM_CLASSES]), EncoderError> {
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    let predictions = model.predict_features(features)?;
    for (p, &y) in predictions.iter().zip(labels) {
        m[y][p.label.code()] += 1;
    }
    let correct: usize = (0..NUM_CLASSES).map(|k| m[k][k]).sum();
    Ok((correct as f64 / labels.len().max(1) as f64, m))
}

/// Per-class shuffled, the first `round(fraction·count)` of each class held
/// out (at least one when a class has two or more epochs).
pub fn stratified_split(labels: &[usize], fraction: f64, rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..NUM_CLASSES {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        let mut held = (idx.len() as f64 * fraction).round() as usize;
        if idx.len() >= 2 {
            held = held.clamp(1, idx.len() - 1);
        } else {
            held = 0;
        }
        val.extend_from_slice(&idx[..held]);
        train.extend_from_slice(&idx[held..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn standardization(features: &[FeatureVector], rows: &[usize], n: usize, f: usize) -> (Vec<f64>, Vec<f64>) {
    let count = rows.len() as f64;
    let mut mean = vec![0.0; n * f];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(features[r].values()) {
            *m += v / count;
        }
    }
    let mut var = vec![0.0; n * f];
    for &r in rows {
        for ((s, v), m) in var.iter_mut().zip(features[r].values()).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect())
}

/// Trains on a stratified split of `dataset`; deterministic in `seed`.
pub fn train_encoder(
    dataset: &EegDataset,
    montage: &MontageGraph,
    bands: &[BandDef],
    hyper: &EncoderHyper,
    seed: u64,
) -> Result<(EncoderModel, TrainReport), EncoderError> {
    hyper.validate()?;
    if dataset.len() < MIN_TRAINING_EPOCHS {
        return Err(EncoderError::InsufficientData(dataset.len()));
    }
    let counts = dataset.class_counts();
    if let Some(k) = (0..NUM_CLASSES).find(|&k| counts[k] == 0) {
        return Err(EncoderError::ClassMissing(EmotionLabel::from_code(k).expect("class code")));
    }
    if montage.n() != dataset.channels() {
        return Err(EncoderError::ShapeMismatch {
            got: (dataset.channels(), bands.len()),
            expected: (montage.n(), bands.len()),
        });
    }

    let features = dataset
        .epochs()
        .iter()
        .map(|e| extract_features(e, bands))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = dataset.labels().iter().map(|l| l.code()).collect();
    let (train, val) = stratified_split(&labels, hyper.val_fraction, &mut SeededRng::derive(seed, 1));

    let mut model = EncoderModel::<f32>::new(
        montage,
        bands.to_vec(),
        hyper.hidden,
        hyper.latent,
        &mut SeededRng::derive(seed, 2),
    )?;
    let (n, f) = model.input_shape();
    let (mean, std) = standardization(&features, &train, n, f);
    model.feat_mean = Tensor::from_f64(&[n, f], &mean)?;
    model.feat_std = Tensor::from_f64(&[n, f], &std)?;

    let inputs = model.input_tensor(&features.iter().collect::<Vec<_>>())?;
    let per_sample = n * f;
    let adam_config = AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_config, &model.params().map(|t| t.clone()));
    let mut order = train.clone();
    let mut rng = SeededRng::derive(seed, 3);
    let mut losses = Vec::with_capacity(hyper.passes);
    for _ in 0..hyper.passes {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch) {
            let mut x = Vec::with_capacity(batch.len() * per_sample);
            for &i in batch {
                x.extend_from_slice(&inputs.data()[i * per_sample..(i + 1) * per_sample]);
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let tape = Tape::new();
            let vars = model.bind(&tape);
            let x = tape.constant(Tensor::new(&[batch.len(), n, f], x)?);
            let (_, logits) = forward(vars, x)?;
            let l = loss(vars, logits, &y, hyper.lambda)?;
            total += f64::from(l.value().item()) * batch.len() as f64;
            let grads = tape.backward(l)?;
            let g: Vec<Tensor<f32>> = vars.params().iter().map(|&p| grads.wrt(p)).collect();
            let mut params: Vec<Tensor<f32>> = model.params().iter().map(|&t| t.clone()).collect();
            adam.step(&mut params, &g)?;
            for (dst, src) in model.params_mut().into_iter().zip(params) {
                *dst = src;
            }
        }
        losses.push(total / train.len() as f64);
    }

    let pick = |rows: &[usize]| -> (Vec<&FeatureVector>, Vec<usize>) {
        (rows.iter().map(|&i| &features[i]).collect(), rows.iter().map(|&i| labels[i]).collect())
    };
    let (tf, tl) = pick(&train);
    let (train_accuracy, _) = confusion(&model, &tf, &tl)?;
    let (vf, vl) = pick(&val);
    let (val_accuracy, confusion) = confusion(&model, &vf, &vl)?;
    Ok((
        model,
        TrainReport {
            losses,
            train_accuracy,
            val_accuracy,
            train_size: train.len(),
            val_size: val.len(),
            confusion,
        },
    ))
}

impl Persist for EncoderModel<f32> {
    const KIND: ModelKind = ModelKind::Encoder;

    fn to_tensors(&self) -> NamedTensors {
        let mut out: NamedTensors = self
            .bands
            .iter()
            .map(|b| {
                let edges = Tensor::from_f64(&[2], &[b.lo_hz, b.hi_hz]).expect("two edges");
                (format!("band:{}", b.name), edges)
            })
            .collect();
        for (name, t) in [
            ("a_base", &self.a_base),
            ("feat_mean", &self.feat_mean),
            ("feat_std", &self.feat_std),
            ("delta_upper", &self.delta_upper),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("wp", &self.wp),
            ("wc", &self.wc),
        ] {
            out.push((name.to_string(), t.clone()));
        }
        out
    }

    fn from_tensors(mut tensors: NamedTensors) -> Result<Self, CheckpointError> {
        let mut bands = Vec::new();
        tensors.retain(|(name, t)| match name.strip_prefix("band:") {
            Some(band) if t.len() == 2 => {
                bands.push(BandDef::new(band, f64::from(t.data()[0]), f64::from(t.data()[1])));
                false
            }
            _ => true,
        });
        let a_base = take_tensor(&mut tensors, "a_base")?;
        let wc = take_tensor(&mut tensors, "wc")?;
        let w2 = take_tensor(&mut tensors, "w2")?;
        if a_base.shape().len() != 2 || wc.shape().len() != 2 || w2.shape().len() != 2 {
            return Err(CheckpointError::Malformed("encoder matrices must be 2-D".into()));
        }
        let (n, f, h, l) = (a_base.shape()[0], bands.len(), w2.shape()[0], wc.shape()[0]);
        if l <= NUM_CLASSES {
            return Err(CheckpointError::Malformed(format!("latent dim must exceed class count, got {l}")));
        }
        let model = EncoderModel {
            feat_mean: take_shaped(&mut tensors, "feat_mean", &[n, f])?,
            feat_std: take_shaped(&mut tensors, "feat_std", &[n, f])?,
            delta_upper: take_shaped(&mut tensors, "delta_upper", &[upper_len(n)])?,
            w1: take_shaped(&mut tensors, "w1", &[f, h])?,
            wp: take_shaped(&mut tensors, "wp", &[n * h, l])?,
            a_base,
            w2,
            wc,
            bands,
        };
        if model.a_base.shape() != [n, n] || model.w2.shape() != [h, h] || model.wc.shape() != [l, NUM_CLASSES] {
            return Err(CheckpointError::Malformed("encoder tensor shapes are inconsistent".into()));
        }
        if let Some((name, _)) = tensors.first() {
            return Err(CheckpointError::Malformed(format!("unexpected tensor {name:?}")));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{default_montage, normalized_adjacency};

    fn montage() -> MontageGraph {
        default_montage(8, 0.6).unwrap()
    }

    #[test]
    fn latent_must_exceed_classes() {
        let err = EncoderModel::<f32>::zeros(&montage(), BandDef::defaults(), 16, 4).unwrap_err();
        assert!(err.to_string().contains("latent dim must exceed class count"));
    }

    #[test]
    fn zero_delta_gives_normalized_base() {
        let m = EncoderModel::<f64>::zeros(&montage(), BandDef::defaults(), 16, 16).unwrap();
        let expected = normalized_adjacency(&montage().adjacency).unwrap();
        let got = m.effective_adjacency().unwrap();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn large_negative_delta_clips_every_edge() {
        let mut m = EncoderModel::<f64>::zeros(&montage(), BandDef::defaults(), 16, 16).unwrap();
        m.delta_upper = m.delta_upper.map(|_| -10.0);
        let a = m.effective_adjacency().unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(a.data()[i * 8 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let m = EncoderModel::<f32>::zeros(&montage(), BandDef::defaults(), 16, 16).unwrap();
        let fv = FeatureVector::new(8, 5, (0..40).map(|i| i as f64 * 0.1).collect());
        let p = m.predict_features(&[&fv]).unwrap().remove(0);
        assert_eq!(p.probabilities, [0.25; 4]);
        assert_eq!(p.label, EmotionLabel::Anger);
        assert_eq!(p.latent.len(), 16);
    }

    #[test]
    fn regularizer_is_l1_of_full_matrix() {
        let mut m = EncoderModel::<f64>::zeros(&montage(), BandDef::defaults(), 3, 5).unwrap();
        m.delta_upper = Tensor::from_fn(&[28], |i| (i as f64 - 13.5) * 0.01);
        let logits = Tensor::zeros(&[1, 4]);
        let value = |model: &EncoderModel<f64>, lambda: f64| {
            let tape = Tape::new();
            let vars = model.bind(&tape);
            let l = loss(vars, tape.constant(logits.clone()), &[2], lambda).unwrap();
            l.value().item()
        };
        let ce = 4f64.ln();
        assert!((value(&m, 0.0) - ce).abs() < 1e-12);
        let reg = value(&m, 1.0) - ce;
        let upper_l1: f64 = m.delta_upper.data().iter().map(|v| v.abs()).sum();
        assert!((reg - 2.0 * upper_l1).abs() < 1e-12);
        m.delta_upper = m.delta_upper.map(|v| 2.0 * v);
        assert!((value(&m, 1.0) - ce - 2.0 * reg).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_code_on_ties() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.2]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (train, val) = stratified_split(&labels, 0.2, &mut SeededRng::new(1));
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        for k in 0..4 {
            assert_eq!(val.iter().filter(|&&i| labels[i] == k).count(), 5);
        }
    }
}
