use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::types::{FitResult, FrameDiagnostics, ObservationFrame, SequenceInput};
use crate::body::{
    BodyModel, BodyParams, ParamMask, FOOT_JOINTS, FOOT_VERTEX_COUNT, KEYPOINT_JOINTS, SHAPE_DIM,
};
use crate::energy::{total_vp, EnergyBreakdown, EnergyWeights, Evaluation, VpInputs};
use crate::error::{Error, Result};
use crate::fpp::FppPrediction;
use crate::optim::{minimize, OptimizerConfig, StopReason};

/// Pixel radius of the ground-anchor neighborhood.
pub const ANCHOR_RADIUS_PX: f64 = 8.0;
/// Depth band behind the nearest neighborhood point that still counts as
/// the same surface, meters.
pub const ANCHOR_DEPTH_BAND: f64 = 0.05;
/// Pixel radius around the keypoint whose front-most point fixes the
/// surface depth.
pub const ANCHOR_CORE_RADIUS_PX: f64 = 3.0;
/// Fraction of a foot joint's vertices that must be in contact.
pub const JOINT_CONTACT_FRACTION: f64 = 0.25;
/// Keypoints below this confidence get no ground anchor.
pub const ANCHOR_MIN_CONFIDENCE: f64 = 0.5;

/// Settings of the monocular contact-guided optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpConfig {
    pub weights: EnergyWeights,
    pub optimizer: OptimizerConfig,
    pub anchor_radius: f64,
    pub joint_contact_fraction: f64,
    pub anchor_min_confidence: f64,
    /// Translation-only iterations run before the full pose solve.
    pub translation_iterations: usize,
}

impl Default for VpConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            optimizer: OptimizerConfig {
                step_size: 1e-2,
                step_decay: 0.995,
                max_iterations: 600,
                convergence_tolerance: 1e-7,
                parameter_mask: ParamMask::POSE_TRANSLATION,
                ..OptimizerConfig::default()
            },
            anchor_radius: ANCHOR_RADIUS_PX,
            joint_contact_fraction: JOINT_CONTACT_FRACTION,
            anchor_min_confidence: ANCHOR_MIN_CONFIDENCE,
            translation_iterations: 200,
        }
    }
}

impl VpConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        if !(self.anchor_radius > 0.0 && self.anchor_radius.is_finite()) {
            return Err(Error::InvalidInput("anchor_radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.joint_contact_fraction) {
            return Err(Error::InvalidInput(
                "joint_contact_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.anchor_min_confidence) {
            return Err(Error::InvalidInput(
                "anchor_min_confidence must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// 3D anchors for contacted foot joints and the keypoints left without one.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundAnchors {
    /// (joint id, anchor point).
    pub anchors: Vec<(usize, Vector3<f64>)>,
    /// Keypoint indices with too low a confidence or no cloud point nearby.
    pub skipped: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// For each contacted keypoint, the coordinate-wise median of the cloud
/// points projecting within `radius` pixels of it. Only points within
/// [`ANCHOR_DEPTH_BAND`] in depth of the front-most point near the keypoint
/// itself enter the median, so other surfaces overlapping the neighborhood
/// are ignored. Keypoints with confidence
/// below `min_confidence` are skipped.
pub fn build_ground_anchors(
    frame: &ObservationFrame,
    contacted_keypoints: &[usize],
    radius: f64,
    min_confidence: f64,
) -> Result<GroundAnchors> {
    if let Some(&k) = contacted_keypoints
        .iter()
        .find(|&&k| k >= frame.keypoints.len())
    {
        return Err(Error::InvalidInput(format!(
            "keypoint index {k} out of range"
        )));
    }
    let mut out = GroundAnchors {
        anchors: Vec::new(),
        skipped: Vec::new(),
    };
    if contacted_keypoints.is_empty() {
        return Ok(out);
    }
    if frame.depth_cloud.is_empty() {
        return Err(Error::Missing(
            "depth cloud for a frame with contact".into(),
        ));
    }
    let pixels: Vec<_> = frame
        .depth_cloud
        .iter()
        .map(|p| frame.cam.project_point(p).pixel())
        .collect();
    for &k in contacted_keypoints {
        if frame.keypoints.confidences[k] < min_confidence {
            out.skipped.push(k);
            continue;
        }
        let center = frame.keypoints.positions[k];
        let ring: Vec<(&Vector3<f64>, f64)> = frame
            .depth_cloud
            .iter()
            .zip(&pixels)
            .filter_map(|(p, px)| px.map(|px| (p, (px - center).norm())))
            .filter(|&(_, d)| d <= radius)
            .collect();
        let Some(closest) = ring.iter().map(|r| r.1).min_by(f64::total_cmp) else {
            out.skipped.push(k);
            continue;
        };
        let inner = closest.max(ANCHOR_CORE_RADIUS_PX);
        let front = ring
            .iter()
            .filter(|r| r.1 <= inner)
            .map(|r| r.0.z)
            .fold(f64::INFINITY, f64::min);
        let near: Vec<_> = ring
            .iter()
            .map(|&(p, _)| p)
            .filter(|p| (p.z - front).abs() <= ANCHOR_DEPTH_BAND)
            .collect();
        let coord = |i: usize| median(&mut near.iter().map(|p| p[i]).collect::<Vec<_>>());
        out.anchors.push((
            KEYPOINT_JOINTS[k],
            Vector3::new(coord(0), coord(1), coord(2)),
        ));
    }
    Ok(out)
}

/// Keypoint index observing a joint.
pub fn keypoint_of_joint(joint: usize) -> Option<usize> {
    KEYPOINT_JOINTS.iter().position(|&j| j == joint)
}

/// Foot-vertex registry positions assigned to each of [`FOOT_JOINTS`]: the
/// vertices skinned to that joint with weight at least one half.
pub fn foot_joint_vertices(model: &BodyModel) -> Vec<Vec<usize>> {
    let skin = model.skinning();
    FOOT_JOINTS
        .iter()
        .map(|&j| {
            model
                .foot_vertex_ids()
                .iter()
                .enumerate()
                .filter(|(_, &v)| skin[v].iter().any(|&(b, w)| b == j && w >= 0.5))
                .map(|(k, _)| k)
                .collect()
        })
        .collect()
}

/// Foot joints with at least `fraction` of their assigned vertices in
/// contact.
pub fn derive_joint_contact(
    model: &BodyModel,
    labels: &[bool],
    fraction: f64,
) -> Result<Vec<usize>> {
    if labels.len() != FOOT_VERTEX_COUNT {
        return Err(Error::LengthMismatch {
            what: "contact labels",
            expected: FOOT_VERTEX_COUNT,
            got: labels.len(),
        });
    }
    Ok(FOOT_JOINTS
        .iter()
        .zip(foot_joint_vertices(model))
        .filter(|(_, ids)| {
            let on = ids.iter().filter(|&&k| labels[k]).count();
            !ids.is_empty() && on as f64 >= fraction * ids.len() as f64
        })
        .map(|(&j, _)| j)
        .collect())
}

/// Mean of the available shape estimates.
fn mean_shape(init: &[Option<BodyParams>]) -> Option<(f64, Vec<f64>)> {
    let present: Vec<_> = init.iter().flatten().collect();
    if present.is_empty() {
        return None;
    }
    let n = present.len() as f64;
    let alpha = present.iter().map(|p| p.alpha).sum::<f64>() / n;
    let beta = (0..SHAPE_DIM)
        .map(|i| present.iter().map(|p| p.beta[i]).sum::<f64>() / n)
        .collect();
    Some((alpha, beta))
}

/// Sequential monocular optimization. Each frame starts from its initial
/// estimate with the averaged shape, shifted by the translation correction
/// found for the previous accepted frame. A translation-only solve precedes
/// the pose and translation solve, and the foot-consistency term ties the
/// frame to the previous accepted one.
pub fn vp_optimize(
    model: &BodyModel,
    input: &SequenceInput,
    init: &[Option<BodyParams>],
    contacts: &[FppPrediction],
    cfg: &VpConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    input.validate()?;
    for (what, len) in [
        ("initial estimates", init.len()),
        ("contact predictions", contacts.len()),
    ] {
        if len != input.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: input.len(),
                got: len,
            });
        }
    }
    for c in contacts {
        c.validate()?;
    }
    for p in init.iter().flatten() {
        p.validate()?;
    }
    let (alpha, beta) = mean_shape(init)
        .ok_or_else(|| Error::Missing("initial estimates for every frame".into()))?;
    let opt = OptimizerConfig {
        parameter_mask: ParamMask::POSE_TRANSLATION,
        ..cfg.optimizer
    };

    let mut out = FitResult {
        params: Vec::with_capacity(input.len()),
        energies: Vec::with_capacity(input.len()),
        diagnostics: Vec::with_capacity(input.len()),
    };
    let rigid = OptimizerConfig {
        parameter_mask: ParamMask {
            translation: true,
            ..ParamMask::NONE
        },
        max_iterations: cfg.translation_iterations,
        ..cfg.optimizer
    };
    // Previous accepted frame: params, joints, contacted joints.
    let mut previous: Option<(BodyParams, Vec<Vector3<f64>>, Vec<usize>)> = None;
    let mut correction = Vector3::zeros();
    for (t, frame) in input.frames.iter().enumerate() {
        let Some(guess) = &init[t] else {
            let carried = previous
                .as_ref()
                .map(|p| p.0.clone())
                .or_else(|| init.iter().flatten().next().cloned())
                .expect("at least one estimate exists");
            out.params.push(carried);
            out.energies.push(EnergyBreakdown::default());
            out.diagnostics.push(FrameDiagnostics {
                iterations: 0,
                stop: StopReason::MaxIterations,
                initial_energy: 0.0,
                final_energy: 0.0,
                carried_forward: previous.is_some(),
                skipped: true,
                dropped_residuals: 0,
            });
            continue;
        };
        let mut start = BodyParams {
            alpha,
            beta: beta.clone(),
            translation: guess.translation + correction,
            ..guess.clone()
        };
        let contacted =
            derive_joint_contact(model, &contacts[t].labels(), cfg.joint_contact_fraction)?;
        let keypoints: Vec<usize> = contacted
            .iter()
            .filter_map(|&j| keypoint_of_joint(j))
            .collect();
        let anchors = build_ground_anchors(
            frame,
            &keypoints,
            cfg.anchor_radius,
            cfg.anchor_min_confidence,
        )?;
        let (prev_joints, linked): (Option<&[Vector3<f64>]>, Vec<usize>) = match &previous {
            Some((_, joints, prev_contacted)) => (
                Some(joints.as_slice()),
                contacted
                    .iter()
                    .copied()
                    .filter(|j| prev_contacted.contains(j))
                    .collect(),
            ),
            None => (None, Vec::new()),
        };
        let inputs = VpInputs {
            cam: &frame.cam,
            keypoints: &frame.keypoints.positions,
            confidences: &frame.keypoints.confidences,
            theta_init: &guess.theta,
            anchors: &anchors.anchors,
            contacted_joints: &linked,
            previous_joints: prev_joints,
        };
        let eval =
            |p: &BodyParams| -> Result<Evaluation> { total_vp(model, p, &inputs, &cfg.weights) };
        let before = eval(&start)?;
        if cfg.translation_iterations > 0 {
            let shifted = minimize(
                |x| {
                    let e = eval(&BodyParams::from_slice(x)?)?;
                    Ok((e.value, e.grad))
                },
                &start.to_vec(),
                &rigid,
            );
            match shifted {
                Ok(m) if !matches!(m.stop, StopReason::NonFinite { .. }) => {
                    start = BodyParams::from_slice(&m.params)?
                }
                Err(e) if e.is_validation() => return Err(e),
                _ => {}
            }
        }
        let fitted = minimize(
            |x| {
                let e = eval(&BodyParams::from_slice(x)?)?;
                Ok((e.value, e.grad))
            },
            &start.to_vec(),
            &opt,
        );
        let (params, iterations, stop, carried) = match fitted {
            Ok(m) if !matches!(m.stop, StopReason::NonFinite { .. }) => (
                BodyParams::from_slice(&m.params)?,
                m.iterations,
                m.stop,
                false,
            ),
            Ok(m) => (fallback(&previous, &start), m.iterations, m.stop, true),
            Err(e) if e.is_validation() => return Err(e),
            Err(_) => (
                fallback(&previous, &start),
                0,
                StopReason::NonFinite { iteration: 0 },
                true,
            ),
        };
        let after = eval(&params)?;
        out.diagnostics.push(FrameDiagnostics {
            iterations,
            stop,
            initial_energy: before.value,
            final_energy: after.value,
            carried_forward: carried,
            skipped: false,
            dropped_residuals: after.skipped + anchors.skipped.len(),
        });
        out.energies.push(after.breakdown);
        if !carried {
            correction = params.translation - guess.translation;
        }
        let joints = model.forward(&params)?.joints;
        previous = Some((params.clone(), joints, contacted));
        out.params.push(params);
    }
    Ok(out)
}

fn fallback(
    previous: &Option<(BodyParams, Vec<Vector3<f64>>, Vec<usize>)>,
    start: &BodyParams,
) -> BodyParams {
    previous
        .as_ref()
        .map_or_else(|| start.clone(), |p| p.0.clone())
}
