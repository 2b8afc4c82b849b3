use std::ops::Range;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, Camera};
use crate::energy::{EnergyBreakdown, GroundPlane};
use crate::error::{Error, Result};
use crate::fpp::KeypointFrame2D;
use crate::optim::StopReason;
use crate::pressure::DenseContact;

/// Observations of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub keypoints: KeypointFrame2D,
    /// Camera-frame points, meters.
    pub depth_cloud: Vec<Vector3<f64>>,
    pub cam: Camera,
    pub timestamp: f64,
}

impl ObservationFrame {
    pub fn validate(&self) -> Result<()> {
        self.keypoints.validate()?;
        self.cam.validate()?;
        if !self.timestamp.is_finite() {
            return Err(Error::NonFinite("frame timestamp"));
        }
        if self
            .depth_cloud
            .iter()
            .any(|p| !(p.z > 0.0 && p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::InvalidInput(
                "depth points need finite coordinates and positive depth".into(),
            ));
        }
        Ok(())
    }
}

/// A synchronized sequence ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub subject: String,
    pub frame_rate: f64,
    /// Image width and height in pixels.
    pub image_size: [f64; 2],
    pub floor: GroundPlane,
    pub frames: Vec<ObservationFrame>,
    /// Dense contact aligned with `frames`; absent for monocular input.
    pub pressure: Option<Vec<DenseContact>>,
    /// Frames used to estimate body weight.
    pub standing_segment: Range<usize>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidInput("sequence has no frames".into()));
        }
        self.floor.validate()?;
        for f in &self.frames {
            f.validate()?;
        }
        if self
            .frames
            .windows(2)
            .any(|w| !(w[1].timestamp > w[0].timestamp))
        {
            return Err(Error::InvalidInput(
                "frame timestamps must increase strictly".into(),
            ));
        }
        if let Some(p) = &self.pressure {
            if p.len() != self.frames.len() {
                return Err(Error::LengthMismatch {
                    what: "dense contact frames",
                    expected: self.frames.len(),
                    got: p.len(),
                });
            }
            for c in p {
                c.validate()?;
            }
        }
        if self.standing_segment.end > self.frames.len()
            || self.standing_segment.start > self.standing_segment.end
        {
            return Err(Error::InvalidInput(
                "standing segment outside the sequence".into(),
            ));
        }
        if !(self.frame_rate > 0.0) || self.image_size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput(
                "frame rate and image size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The first `n` frames.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            frames: self.frames[..n].to_vec(),
            pressure: self.pressure.as_ref().map(|p| p[..n].to_vec()),
            standing_segment: self.standing_segment.start.min(n)..self.standing_segment.end.min(n),
            ..self.clone()
        }
    }
}

/// Per-frame convergence information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub iterations: usize,
    pub stop: StopReason,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// Set when the frame's result was rejected and the previous frame's
    /// parameters were carried forward.
    pub carried_forward: bool,
    /// Set when the frame had no initial estimate and was skipped.
    #[serde(default)]
    pub skipped: bool,
    /// Residuals dropped during the final evaluation.
    #[serde(default)]
    pub dropped_residuals: usize,
}

/// Output of either pipeline: one entry per input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<BodyParams>,
    pub energies: Vec<EnergyBreakdown>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

impl FitResult {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}
