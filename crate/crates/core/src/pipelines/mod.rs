//! Staged RGBD-P fitting and the monocular contact-guided optimization.

mod types;

pub use types::{FitResult, FrameDiagnostics, ObservationFrame, SequenceInput};
mod rgbdp;

pub use rgbdp::{
    fit_rgbdp, fit_shape, init_pose, track_sequence, RgbdpConfig, RgbdpFit, Shape, StageConfig,
};
mod vp;

pub use vp::{
    build_ground_anchors, derive_joint_contact, foot_joint_vertices, keypoint_of_joint,
    vp_optimize, GroundAnchors, VpConfig, ANCHOR_DEPTH_BAND, ANCHOR_MIN_CONFIDENCE,
    ANCHOR_RADIUS_PX, JOINT_CONTACT_FRACTION,
};
