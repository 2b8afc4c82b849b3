//! A generic differentiable parametric body.
//!
//! Two templates with shared topology (adult and child) are blended by a
//! scalar `alpha`, deformed by a linear shape basis, posed by linear blend
//! skinning over a fixed 24-joint skeleton and finally placed by a global
//! rotation about the root joint and a translation.

mod camera;
mod model;
mod planes;
pub mod rotation;
mod template;

pub use camera::{Camera, Projection};
pub use model::{AttachedPoint, BodyModel, Posed, Upstream};
pub use planes::{build_foot_planes, FootPlanes, PlaneRegion};
pub use template::{blend_template, BodyTemplate, TEMPLATE_FORMAT, TEMPLATE_VERSION};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const POSE_DIM: usize = 3 * NUM_JOINTS;
pub const SHAPE_DIM: usize = 10;
pub const FOOT_VERTEX_COUNT: usize = 192;
pub const FOOT_VERTICES_PER_SIDE: usize = FOOT_VERTEX_COUNT / 2;

/// Kinematic tree; every parent index is smaller than its child's.
pub const JOINT_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_toe",
    "right_toe",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const LEFT_HIP: usize = 1;
    pub const RIGHT_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const LEFT_KNEE: usize = 4;
    pub const RIGHT_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const LEFT_TOE: usize = 10;
    pub const RIGHT_TOE: usize = 11;
    pub const NECK: usize = 12;
    pub const LEFT_COLLAR: usize = 13;
    pub const RIGHT_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const LEFT_SHOULDER: usize = 16;
    pub const RIGHT_SHOULDER: usize = 17;
    pub const LEFT_ELBOW: usize = 18;
    pub const RIGHT_ELBOW: usize = 19;
    pub const LEFT_WRIST: usize = 20;
    pub const RIGHT_WRIST: usize = 21;
    pub const LEFT_HAND: usize = 22;
    pub const RIGHT_HAND: usize = 23;
}

/// Foot joints used by the contact terms: ankle and toe of each side.
pub const FOOT_JOINTS: [usize; 4] = [
    joint::LEFT_ANKLE,
    joint::LEFT_TOE,
    joint::RIGHT_ANKLE,
    joint::RIGHT_TOE,
];

/// Number of 2D keypoints per frame.
pub const NUM_KEYPOINTS: usize = 17;

/// Model joint observed by each 2D keypoint.
pub const KEYPOINT_JOINTS: [usize; NUM_KEYPOINTS] = [
    joint::HEAD,
    joint::NECK,
    joint::LEFT_SHOULDER,
    joint::RIGHT_SHOULDER,
    joint::LEFT_ELBOW,
    joint::RIGHT_ELBOW,
    joint::LEFT_WRIST,
    joint::RIGHT_WRIST,
    joint::LEFT_HIP,
    joint::RIGHT_HIP,
    joint::LEFT_KNEE,
    joint::RIGHT_KNEE,
    joint::LEFT_ANKLE,
    joint::RIGHT_ANKLE,
    joint::LEFT_TOE,
    joint::RIGHT_TOE,
    joint::PELVIS,
];

/// Shoulder abduction of the A-pose.
pub const A_POSE_ANGLE: f64 = 50.0 * std::f64::consts::PI / 180.0;

/// Straight-legged pose with both arms lowered by [`A_POSE_ANGLE`].
pub fn a_pose_theta() -> Vec<f64> {
    let mut theta = vec![0.0; POSE_DIM];
    theta[3 * joint::LEFT_SHOULDER + 2] = -A_POSE_ANGLE;
    theta[3 * joint::RIGHT_SHOULDER + 2] = A_POSE_ANGLE;
    theta
}

/// Offsets of each parameter block inside the flat parameter vector.
pub mod layout {
    use std::ops::Range;

    pub const THETA: Range<usize> = 0..72;
    pub const BETA: Range<usize> = 72..82;
    pub const ROTATION: Range<usize> = 82..85;
    pub const TRANSLATION: Range<usize> = 85..88;
    pub const ALPHA: usize = 88;
    pub const DIM: usize = 89;
}

/// Full per-frame body state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Axis-angle per joint, radians.
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    /// Global rotation about the root joint, axis-angle.
    pub rotation: Vector3<f64>,
    /// Global translation, meters.
    pub translation: Vector3<f64>,
    /// Adult/child blend in `[0, 1]`; 1 is the adult template.
    pub alpha: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self::rest()
    }
}

impl BodyParams {
    pub fn rest() -> Self {
        Self {
            theta: vec![0.0; POSE_DIM],
            beta: vec![0.0; SHAPE_DIM],
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
            alpha: 1.0,
        }
    }

    pub fn joint_rotation(&self, j: usize) -> Vector3<f64> {
        Vector3::new(
            self.theta[3 * j],
            self.theta[3 * j + 1],
            self.theta[3 * j + 2],
        )
    }

    pub fn set_joint_rotation(&mut self, j: usize, r: Vector3<f64>) {
        self.theta[3 * j..3 * j + 3].copy_from_slice(r.as_slice());
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != POSE_DIM {
            return Err(Error::LengthMismatch {
                what: "theta",
                expected: POSE_DIM,
                got: self.theta.len(),
            });
        }
        if self.beta.len() != SHAPE_DIM {
            return Err(Error::LengthMismatch {
                what: "beta",
                expected: SHAPE_DIM,
                got: self.beta.len(),
            });
        }
        if !self.to_vec().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("body parameters"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Flattens into the layout described by [`layout`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(layout::DIM);
        v.extend_from_slice(&self.theta);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(self.rotation.as_slice());
        v.extend_from_slice(self.translation.as_slice());
        v.push(self.alpha);
        v
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != layout::DIM {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: layout::DIM,
                got: x.len(),
            });
        }
        Ok(Self {
            theta: x[layout::THETA].to_vec(),
            beta: x[layout::BETA].to_vec(),
            rotation: Vector3::from_column_slice(&x[layout::ROTATION]),
            translation: Vector3::from_column_slice(&x[layout::TRANSLATION]),
            alpha: x[layout::ALPHA],
        })
    }
}

/// Which parameter blocks an optimization may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamMask {
    pub theta: bool,
    pub beta: bool,
    pub rotation: bool,
    pub translation: bool,
    pub alpha: bool,
}

impl Default for ParamMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        theta: true,
        beta: true,
        rotation: true,
        translation: true,
        alpha: true,
    };
    pub const NONE: ParamMask = ParamMask {
        theta: false,
        beta: false,
        rotation: false,
        translation: false,
        alpha: false,
    };
    /// Shape stage: blend and shape coefficients plus placement.
    pub const SHAPE: ParamMask = ParamMask {
        theta: false,
        beta: true,
        rotation: false,
        translation: true,
        alpha: true,
    };
    /// Pose stages: articulation and placement, shape frozen.
    pub const POSE: ParamMask = ParamMask {
        theta: true,
        beta: false,
        rotation: true,
        translation: true,
        alpha: false,
    };
    /// Monocular stage: articulation and translation only.
    pub const POSE_TRANSLATION: ParamMask = ParamMask {
        theta: true,
        beta: false,
        rotation: false,
        translation: true,
        alpha: false,
    };

    /// Per-coordinate activity flags over the flat layout.
    pub fn to_flags(&self) -> Vec<bool> {
        let mut f = vec![false; layout::DIM];
        let mut set = |r: std::ops::Range<usize>, on: bool| f[r].iter_mut().for_each(|x| *x = on);
        set(layout::THETA, self.theta);
        set(layout::BETA, self.beta);
        set(layout::ROTATION, self.rotation);
        set(layout::TRANSLATION, self.translation);
        f[layout::ALPHA] = self.alpha;
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parents_precede_children() {
        for (j, p) in JOINT_PARENTS.iter().enumerate() {
            if let Some(p) = p {
                assert!(*p < j);
            }
        }
    }

    #[test]
    fn params_flatten_round_trip() {
        let mut p = BodyParams::rest();
        p.theta[5] = 0.2;
        p.beta[3] = -1.0;
        p.translation = Vector3::new(1.0, 2.0, 3.0);
        p.alpha = 0.4;
        assert_eq!(BodyParams::from_slice(&p.to_vec()).unwrap(), p);
    }

    #[test]
    fn validate_rejects_bad_params() {
        let mut p = BodyParams::rest();
        p.alpha = 1.5;
        assert!(p.validate().is_err());
        let mut p = BodyParams::rest();
        p.theta.pop();
        assert!(p.validate().is_err());
        let mut p = BodyParams::rest();
        p.translation.x = f64::NAN;
        assert!(p.validate().is_err());
    }
}
