use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::terms::{
    anchor_part, c_dense_part, c_temp_part, check_contact, check_joint_ids, check_keypoints,
    depth_part, keypoint_part, nearest_vertices, plane_positions,
};
use super::{EnergyWeights, GmmPosePrior, GroundPlane};
use crate::body::{layout, BodyModel, BodyParams, Camera, FootPlanes, Upstream};
use crate::error::{Error, Result};
use crate::pressure::DenseContact;

/// Unweighted term values of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub depth: f64,
    pub c_dense: f64,
    pub keypoints_2d: f64,
    pub c_temp: f64,
    pub gmm: f64,
    pub mimic: f64,
    pub contact_joint: f64,
    pub foot_consistency: f64,
}

impl EnergyBreakdown {
    pub const COLUMNS: [&'static str; 9] = [
        "total",
        "depth",
        "c_dense",
        "keypoints_2d",
        "c_temp",
        "gmm",
        "mimic",
        "contact_joint",
        "foot_consistency",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.total,
            self.depth,
            self.c_dense,
            self.keypoints_2d,
            self.c_temp,
            self.gmm,
            self.mimic,
            self.contact_joint,
            self.foot_consistency,
        ]
    }
}

/// Weighted total with its gradient over the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub breakdown: EnergyBreakdown,
    pub skipped: usize,
}

/// State of the previously accepted frame, held constant by the temporal
/// terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousFrame {
    pub contact: DenseContact,
    pub plane_points: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

impl PreviousFrame {
    pub fn new(
        model: &BodyModel,
        params: &BodyParams,
        planes: &FootPlanes,
        contact: DenseContact,
    ) -> Result<Self> {
        check_contact(&contact)?;
        let posed = model.forward(params)?;
        Ok(Self {
            contact,
            plane_points: plane_positions(&posed, model, planes),
            joints: posed.joints,
        })
    }
}

/// Observations and context for the RGBD-P objective.
#[derive(Debug, Clone, Copy)]
pub struct RgbdpInputs<'a> {
    pub cam: &'a Camera,
    pub keypoints: &'a [Vector2<f64>],
    pub confidences: &'a [f64],
    pub cloud: &'a [Vector3<f64>],
    /// Fixed nearest-vertex correspondences; recomputed per call when absent.
    pub correspondences: Option<&'a [usize]>,
    pub depth_cap: Option<f64>,
    pub contact: Option<&'a DenseContact>,
    pub floor: &'a GroundPlane,
    pub planes: &'a FootPlanes,
    pub prior: Option<&'a GmmPosePrior>,
    pub previous: Option<&'a PreviousFrame>,
}

/// Observations and context for the monocular objective.
#[derive(Debug, Clone, Copy)]
pub struct VpInputs<'a> {
    pub cam: &'a Camera,
    pub keypoints: &'a [Vector2<f64>],
    pub confidences: &'a [f64],
    pub theta_init: &'a [f64],
    /// Ground anchor per contacted foot joint.
    pub anchors: &'a [(usize, Vector3<f64>)],
    pub contacted_joints: &'a [usize],
    /// Joints of the previous accepted frame.
    pub previous_joints: Option<&'a [Vector3<f64>]>,
}

/// `λ_depth E_depth + λ_C_dense E_C_dense + λ_2d E_2d + λ_C_temp E_C_temp +
/// λ_GMM E_GMM`. Terms whose inputs are absent contribute zero.
pub fn total_rgbdp(
    model: &BodyModel,
    params: &BodyParams,
    inputs: &RgbdpInputs,
    weights: &EnergyWeights,
) -> Result<Evaluation> {
    weights.validate()?;
    inputs.cam.validate()?;
    inputs.floor.validate()?;
    check_keypoints(inputs.keypoints, inputs.confidences)?;
    if let Some(c) = inputs.contact {
        check_contact(c)?;
    }
    if let Some(pairs) = inputs.correspondences {
        if pairs.len() != inputs.cloud.len() || pairs.iter().any(|&v| v >= model.vertex_count()) {
            return Err(Error::InvalidInput(
                "depth correspondences do not match the cloud".into(),
            ));
        }
    }
    let posed = model.forward(params)?;
    let mut up = Upstream::new(model.vertex_count());
    let mut b = EnergyBreakdown::default();
    let mut skipped = 0;

    if inputs.cloud.is_empty() {
        skipped += 1;
    } else {
        let owned;
        let pairs = match inputs.correspondences {
            Some(p) => p,
            None => {
                owned = nearest_vertices(inputs.cloud, &posed.vertices);
                &owned
            }
        };
        b.depth = depth_part(
            &posed,
            inputs.cloud,
            pairs,
            inputs.depth_cap,
            &mut up,
            weights.lambda_depth,
        );
    }
    let (kp, s) = keypoint_part(
        &posed,
        inputs.cam,
        inputs.keypoints,
        inputs.confidences,
        &mut up,
        weights.lambda_2d,
    );
    b.keypoints_2d = kp;
    skipped += s;
    if let Some(contact) = inputs.contact {
        b.c_dense = c_dense_part(
            &posed,
            model.foot_vertex_ids(),
            contact,
            inputs.floor,
            &mut up,
            weights.lambda_c_dense,
        );
        if let Some(prev) = inputs.previous {
            b.c_temp = c_temp_part(
                &posed,
                model,
                inputs.planes,
                contact,
                &prev.contact,
                &prev.plane_points,
                &mut up,
                weights.lambda_c_temp,
            );
        }
    }
    let mut grad = posed.backward(model, &up);
    if let Some(prior) = inputs.prior {
        let (v, g) = prior.neg_log_density(&params.theta)?;
        b.gmm = v;
        for (dst, src) in grad[layout::THETA].iter_mut().zip(g) {
            *dst += weights.lambda_gmm * src;
        }
    }
    b.total = weights.lambda_depth * b.depth
        + weights.lambda_c_dense * b.c_dense
        + weights.lambda_2d * b.keypoints_2d
        + weights.lambda_c_temp * b.c_temp
        + weights.lambda_gmm * b.gmm;
    Ok(Evaluation {
        value: b.total,
        grad,
        breakdown: b,
        skipped,
    })
}

/// `λ_2d E_2d + λ_p E_p + λ_3d E_3d + λ_t E_t`.
pub fn total_vp(
    model: &BodyModel,
    params: &BodyParams,
    inputs: &VpInputs,
    weights: &EnergyWeights,
) -> Result<Evaluation> {
    weights.validate()?;
    inputs.cam.validate()?;
    check_keypoints(inputs.keypoints, inputs.confidences)?;
    check_joint_ids(
        inputs
            .anchors
            .iter()
            .map(|a| a.0)
            .chain(inputs.contacted_joints.iter().copied()),
    )?;
    if inputs.theta_init.len() != params.theta.len() {
        return Err(Error::LengthMismatch {
            what: "initial pose",
            expected: params.theta.len(),
            got: inputs.theta_init.len(),
        });
    }
    let posed = model.forward(params)?;
    let mut up = Upstream::new(model.vertex_count());
    let mut b = EnergyBreakdown::default();

    let (kp, skipped) = keypoint_part(
        &posed,
        inputs.cam,
        inputs.keypoints,
        inputs.confidences,
        &mut up,
        weights.lambda_2d,
    );
    b.keypoints_2d = kp;
    b.contact_joint = anchor_part(&posed, inputs.anchors, &mut up, weights.lambda_3d);
    if let Some(prev) = inputs.previous_joints {
        let anchors: Vec<_> = inputs
            .contacted_joints
            .iter()
            .map(|&j| (j, prev[j]))
            .collect();
        b.foot_consistency = anchor_part(&posed, &anchors, &mut up, weights.lambda_t);
    }
    let mut grad = posed.backward(model, &up);
    for ((g, a), b0) in grad[layout::THETA]
        .iter_mut()
        .zip(&params.theta)
        .zip(inputs.theta_init)
    {
        b.mimic += (a - b0) * (a - b0);
        *g += weights.lambda_p * 2.0 * (a - b0);
    }
    b.total = weights.lambda_2d * b.keypoints_2d
        + weights.lambda_p * b.mimic
        + weights.lambda_3d * b.contact_joint
        + weights.lambda_t * b.foot_consistency;
    Ok(Evaluation {
        value: b.total,
        grad,
        breakdown: b,
        skipped,
    })
}
