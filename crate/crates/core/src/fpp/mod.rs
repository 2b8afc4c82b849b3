//! Foot-pressure and contact sequence predictor.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use net::{FppConfig, FppModel, TensorSpec};
pub use train::{dataset_loss, loss_and_gradient, train, EpochStats, FppSequence, TrainConfig, TrainReport};

use nalgebra::Vector2;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::body::FOOT_VERTEX_COUNT;
use crate::error::{Error, Result};
use crate::pressure::{DenseContact, CONTACT_THRESHOLD};

/// 2D keypoints of one frame with detector confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame2D {
    pub positions: Vec<Vector2<f64>>,
    pub confidences: Vec<f64>,
}

impl KeypointFrame2D {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.confidences.len() {
            return Err(Error::LengthMismatch {
                what: "keypoint confidences",
                expected: self.positions.len(),
                got: self.confidences.len(),
            });
        }
        if self
            .positions
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::NonFinite("keypoint positions"));
        }
        if self.confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput(
                "keypoint confidences must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-vertex contact probability and pressure for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FppPrediction {
    pub contact_prob: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl FppPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.contact_prob.len() != FOOT_VERTEX_COUNT || self.pressure.len() != FOOT_VERTEX_COUNT
        {
            return Err(Error::LengthMismatch {
                what: "prediction",
                expected: FOOT_VERTEX_COUNT,
                got: self.contact_prob.len().min(self.pressure.len()),
            });
        }
        if self.contact_prob.iter().any(|p| !(0.0..=1.0).contains(p))
            || self.pressure.iter().any(|p| !(*p >= 0.0))
        {
            return Err(Error::InvalidInput("prediction outside its range".into()));
        }
        Ok(())
    }

    /// Binary contact at the 0.5 probability threshold.
    pub fn labels(&self) -> Vec<bool> {
        self.contact_prob
            .iter()
            .map(|&p| p >= CONTACT_THRESHOLD)
            .collect()
    }

    /// Confident prediction reproducing given contact.
    pub fn from_contact(contact: &DenseContact) -> Self {
        Self {
            contact_prob: contact
                .labels
                .iter()
                .map(|&l| if l { 1.0 } else { 0.0 })
                .collect(),
            pressure: contact.p_norm.clone(),
        }
    }
}

fn check_image_size(image_size: [f64; 2]) -> Result<()> {
    if image_size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    Ok(())
}

/// Maps pixel positions to [-1, 1] per axis and appends the confidences.
pub fn normalize_keypoints(frame: &KeypointFrame2D, image_size: [f64; 2]) -> Result<Vec<f64>> {
    frame.validate()?;
    check_image_size(image_size)?;
    let mut out: Vec<f64> = frame
        .positions
        .iter()
        .flat_map(|p| [2.0 * p.x / image_size[0] - 1.0, 2.0 * p.y / image_size[1] - 1.0])
        .collect();
    out.extend_from_slice(&frame.confidences);
    Ok(out)
}

/// Inverse of the position part of [`normalize_keypoints`].
pub fn denormalize_position(p: Vector2<f64>, image_size: [f64; 2]) -> Vector2<f64> {
    Vector2::new((p.x + 1.0) * 0.5 * image_size[0], (p.y + 1.0) * 0.5 * image_size[1])
}

/// Runs the network over a sequence of normalized inputs from a zero
/// recurrent state. The prediction at frame t depends on frames up to t.
pub fn forward_sequence(model: &FppModel, frames: &[Vec<f64>]) -> Result<Vec<FppPrediction>> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("empty input sequence".into()));
    }
    let d = model.config.input_dim();
    if let Some(f) = frames.iter().find(|f| f.len() != d) {
        return Err(Error::LengthMismatch {
            what: "network input width",
            expected: d,
            got: f.len(),
        });
    }
    if frames.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    let inputs = Array2::from_shape_vec((frames.len(), d), frames.concat()).expect("checked widths");
    let trace = model.forward_trace(&inputs, 1, frames.len())?;
    Ok(trace
        .logits
        .rows()
        .into_iter()
        .map(|row| {
            let (contact_prob, pressure) = net::squash(row, model.config.outputs);
            FppPrediction { contact_prob, pressure }
        })
        .collect())
}

/// Normalizes detected keypoints and predicts every frame.
pub fn predict_keypoints(model: &FppModel, frames: &[KeypointFrame2D], image_size: [f64; 2]) -> Result<Vec<FppPrediction>> {
    let inputs = frames
        .iter()
        .map(|f| normalize_keypoints(f, image_size))
        .collect::<Result<Vec<_>>>()?;
    forward_sequence(model, &inputs)
}

/// Probability floor applied before taking logarithms.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

/// Mean binary cross entropy of the contact probabilities plus mean squared
/// error of the pressures against the normalized pressure targets.
pub fn loss(pred: &FppPrediction, gt: &DenseContact) -> Result<f64> {
    let n = pred.contact_prob.len();
    for (what, len) in [
        ("predicted pressure", pred.pressure.len()),
        ("contact labels", gt.labels.len()),
        ("pressure targets", gt.p_norm.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch { what, expected: n, got: len });
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty prediction".into()));
    }
    let bce = pred
        .contact_prob
        .iter()
        .zip(&gt.labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>();
    let mse = pred.pressure.iter().zip(&gt.p_norm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let value = (bce + mse) / n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("prediction loss"));
    }
    Ok(value)
}

#[cfg(test)]
mod tests;
