use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{sigmoid as logistic, FppModel, Trace};
use super::KeypointFrame2D;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::pressure::DenseContact;

/// One labeled training sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FppSequence {
    /// Normalized per-frame inputs.
    pub inputs: Vec<Vec<f64>>,
    pub contact: Vec<Vec<bool>>,
    /// Per-vertex pressure targets.
    pub pressure: Vec<Vec<f64>>,
}

impl FppSequence {
    /// Normalizes keypoints and takes labels and normalized pressure from
    /// dense contact annotations.
    pub fn from_frames(frames: &[KeypointFrame2D], contact: &[DenseContact], image_size: [f64; 2]) -> Result<Self> {
        if frames.len() != contact.len() {
            return Err(Error::LengthMismatch {
                what: "contact annotations",
                expected: frames.len(),
                got: contact.len(),
            });
        }
        Ok(Self {
            inputs: frames.iter().map(|f| super::normalize_keypoints(f, image_size)).collect::<Result<_>>()?,
            contact: contact.iter().map(|c| c.labels.clone()).collect(),
            pressure: contact.iter().map(|c| c.p_norm.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, model: &FppModel) -> Result<()> {
        let (d, o) = (model.config.input_dim(), model.config.outputs);
        if self.is_empty() {
            return Err(Error::InvalidInput("empty training sequence".into()));
        }
        if self.contact.len() != self.len() || self.pressure.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "sequence labels",
                expected: self.len(),
                got: self.contact.len().min(self.pressure.len()),
            });
        }
        for (what, bad, expected) in [
            ("input width", self.inputs.iter().find(|x| x.len() != d).map(Vec::len), d),
            ("contact width", self.contact.iter().find(|x| x.len() != o).map(Vec::len), o),
            ("pressure width", self.pressure.iter().find(|x| x.len() != o).map(Vec::len), o),
        ] {
            if let Some(got) = bad {
                return Err(Error::LengthMismatch { what, expected, got });
            }
        }
        if self.inputs.iter().flatten().chain(self.pressure.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training sequence"));
        }
        Ok(())
    }
}

/// Optimization schedule of [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 32,
            stride: 8,
            batch_size: 16,
            learning_rate: 1e-4,
            epochs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("window, stride and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_validation_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept; `None` keeps the initial model.
    pub best_epoch: Option<usize>,
}

/// (sequence, start, length) slices of at most `window` frames.
fn windows(data: &[FppSequence], window: usize, stride: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (i, seq) in data.iter().enumerate() {
        let mut start = 0;
        loop {
            out.push((i, start, window.min(seq.len() - start)));
            if start + window >= seq.len() {
                break;
            }
            start += stride;
        }
    }
    out
}

/// Mean over valid frames of the per-frame loss; gradient with respect to
/// the output pre-activations. Padded rows carry zero gradient.
fn batch_loss(
    model: &FppModel,
    data: &[FppSequence],
    batch: &[(usize, usize, usize)],
    window: usize,
) -> Result<(f64, usize, Trace, Array2<f64>)> {
    let (d, o) = (model.config.input_dim(), model.config.outputs);
    let steps = batch.iter().map(|w| w.2).max().unwrap_or(0).min(window);
    let mut inputs = Array2::zeros((batch.len() * steps, d));
    for (b, &(i, start, len)) in batch.iter().enumerate() {
        for t in 0..len {
            inputs.row_mut(b * steps + t).assign(&ndarray::ArrayView1::from(&data[i].inputs[start + t]));
        }
    }
    let trace = model.forward_trace(&inputs, batch.len(), steps)?;
    let frames: usize = batch.iter().map(|w| w.2).sum();
    let scale = 1.0 / (frames as f64 * o as f64);
    let mut dlogits = Array2::zeros(trace.logits.raw_dim());
    let mut total = 0.0;
    for (b, &(i, start, len)) in batch.iter().enumerate() {
        for t in 0..len {
            let row = b * steps + t;
            let (labels, target) = (&data[i].contact[start + t], &data[i].pressure[start + t]);
            for k in 0..o {
                let z = trace.logits[[row, k]];
                let y = if labels[k] { 1.0 } else { 0.0 };
                total += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
                dlogits[[row, k]] = (logistic(z) - y) * scale;
                let zp = trace.logits[[row, o + k]];
                let err = zp.max(0.0) + (-zp.abs()).exp().ln_1p() - target[k];
                total += err * err;
                dlogits[[row, o + k]] = 2.0 * err * logistic(zp) * scale;
            }
        }
    }
    Ok((total * scale, frames, trace, dlogits))
}

/// Frame-weighted mean loss over every window of `data`.
pub fn dataset_loss(model: &FppModel, data: &[FppSequence], cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    for s in data {
        s.validate(model)?;
    }
    let all = windows(data, cfg.window, cfg.window);
    let (mut sum, mut frames) = (0.0, 0);
    for chunk in all.chunks(cfg.batch_size) {
        let (l, n, _, _) = batch_loss(model, data, chunk, cfg.window)?;
        sum += l * n as f64;
        frames += n;
    }
    if frames == 0 {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    Ok(sum / frames as f64)
}

/// Loss and its parameter gradient on one batch of whole sequences.
pub fn loss_and_gradient(model: &FppModel, data: &[FppSequence]) -> Result<(f64, Vec<f64>)> {
    for s in data {
        s.validate(model)?;
    }
    let batch: Vec<_> = data.iter().enumerate().map(|(i, s)| (i, 0, s.len())).collect();
    let window = batch.iter().map(|w| w.2).max().unwrap_or(0);
    let (l, _, trace, dlogits) = batch_loss(model, data, &batch, window)?;
    Ok((l, model.backward(&trace, &dlogits)))
}

/// Adam training over shuffled windows. Returns the parameters with the
/// lowest validation loss seen, the initial ones included. The training set
/// doubles as validation set when none is given.
pub fn train(
    model: &FppModel,
    train_set: &[FppSequence],
    validation: Option<&[FppSequence]>,
    cfg: &TrainConfig,
) -> Result<(FppModel, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    for s in train_set {
        s.validate(model)?;
    }
    let val = validation.unwrap_or(train_set);
    let initial = dataset_loss(model, val, cfg)?;
    let mut report = TrainReport {
        initial_validation_loss: initial,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
    };
    let mut current = model.clone();
    let mut best = (initial, model.clone());
    let mut adam = Adam::new(current.params().len(), cfg.learning_rate, 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all = windows(train_set, cfg.window, cfg.stride);
    for epoch in 0..cfg.epochs {
        all.shuffle(&mut rng);
        let (mut sum, mut frames) = (0.0, 0);
        for (b, chunk) in all.chunks(cfg.batch_size).enumerate() {
            let (l, n, trace, dlogits) = batch_loss(&current, train_set, chunk, cfg.window)?;
            let grad = current.backward(&trace, &dlogits);
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam.step(current.params_mut(), &grad, None);
            sum += l * n as f64;
            frames += n;
        }
        let validation_loss = dataset_loss(&current, val, cfg)?;
        if !validation_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: sum / frames as f64,
            validation_loss,
        });
        if validation_loss < best.0 {
            best = (validation_loss, current.clone());
            report.best_epoch = Some(epoch);
        }
    }
    Ok((best.1, report))
}
