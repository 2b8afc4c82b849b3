use nalgebra::{Vector2, Vector3};

use super::{GmmPosePrior, GroundPlane, Term};
use crate::body::{
    BodyModel, BodyParams, Camera, FootPlanes, Posed, Upstream, FOOT_VERTEX_COUNT, KEYPOINT_JOINTS,
    NUM_JOINTS, NUM_KEYPOINTS, POSE_DIM,
};
use crate::error::{Error, Result};
use crate::pressure::DenseContact;

/// Index of the nearest vertex for every cloud point.
pub fn nearest_vertices(cloud: &[Vector3<f64>], vertices: &[Vector3<f64>]) -> Vec<usize> {
    cloud
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (i, v) in vertices.iter().enumerate() {
                let d = (v - p).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect()
}

pub(crate) fn depth_part(
    posed: &Posed,
    cloud: &[Vector3<f64>],
    pairs: &[usize],
    cap: Option<f64>,
    up: &mut Upstream,
    scale: f64,
) -> f64 {
    let cap2 = cap.map_or(f64::INFINITY, |c| c * c);
    let mut value = 0.0;
    for (p, &v) in cloud.iter().zip(pairs) {
        let r = posed.vertices[v] - p;
        let d2 = r.norm_squared();
        if d2 < cap2 {
            value += d2;
            up.vertices[v] += 2.0 * scale * r;
        } else {
            value += cap2;
        }
    }
    value
}

pub(crate) fn check_keypoints(keypoints: &[Vector2<f64>], confidences: &[f64]) -> Result<()> {
    for (what, len) in [
        ("keypoints", keypoints.len()),
        ("keypoint confidences", confidences.len()),
    ] {
        if len != NUM_KEYPOINTS {
            return Err(Error::LengthMismatch {
                what,
                expected: NUM_KEYPOINTS,
                got: len,
            });
        }
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidInput(
            "keypoint confidences must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Returns the value and the number of keypoints whose joint sits behind the
/// camera.
pub(crate) fn keypoint_part(
    posed: &Posed,
    cam: &Camera,
    keypoints: &[Vector2<f64>],
    confidences: &[f64],
    up: &mut Upstream,
    scale: f64,
) -> (f64, usize) {
    let mut value = 0.0;
    let mut skipped = 0;
    for (i, &j) in KEYPOINT_JOINTS.iter().enumerate() {
        let c = confidences[i];
        if c == 0.0 {
            continue;
        }
        let p = posed.joints[j];
        let Some(px) = cam.project_point(&p).pixel() else {
            skipped += 1;
            continue;
        };
        let r = px - keypoints[i];
        value += c * r.norm_squared();
        let jac = cam.projection_jacobian(&p);
        for (a, row) in jac.iter().enumerate() {
            for b in 0..3 {
                up.joints[j][b] += scale * 2.0 * c * r[a] * row[b];
            }
        }
    }
    (value, skipped)
}

pub(crate) fn check_contact(contact: &DenseContact) -> Result<()> {
    if contact.labels.len() != FOOT_VERTEX_COUNT {
        return Err(Error::LengthMismatch {
            what: "contact labels",
            expected: FOOT_VERTEX_COUNT,
            got: contact.labels.len(),
        });
    }
    Ok(())
}

pub(crate) fn c_dense_part(
    posed: &Posed,
    foot_ids: &[usize],
    contact: &DenseContact,
    floor: &GroundPlane,
    up: &mut Upstream,
    scale: f64,
) -> f64 {
    let mut value = 0.0;
    for (&v, &label) in foot_ids.iter().zip(&contact.labels) {
        if !label {
            continue;
        }
        let h = floor.height(&posed.vertices[v]);
        value += h.abs();
        if h != 0.0 {
            up.vertices[v] += scale * h.signum() * floor.normal;
        }
    }
    value
}

/// World positions of all plane points for a posed body.
pub(crate) fn plane_positions(
    posed: &Posed,
    model: &BodyModel,
    planes: &FootPlanes,
) -> Vec<Vector3<f64>> {
    (0..planes.len())
        .map(|i| posed.attached_point(model, &planes.attached(i)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn c_temp_part(
    posed: &Posed,
    model: &BodyModel,
    planes: &FootPlanes,
    contact_t: &DenseContact,
    contact_tm1: &DenseContact,
    previous_points: &[Vector3<f64>],
    up: &mut Upstream,
    scale: f64,
) -> f64 {
    let mut value = 0.0;
    for k in 0..FOOT_VERTEX_COUNT {
        if !(contact_t.labels[k] && contact_tm1.labels[k]) {
            continue;
        }
        let i = planes.association[k];
        let pt = planes.attached(i);
        let d = posed.attached_point(model, &pt) - previous_points[i];
        let n = d.norm();
        value += n;
        if n > 0.0 {
            up.attached.push((pt, scale * d / n));
        }
    }
    value
}

pub(crate) fn check_joint_ids(ids: impl IntoIterator<Item = usize>) -> Result<()> {
    for j in ids {
        if j >= NUM_JOINTS {
            return Err(Error::InvalidInput(format!("joint index {j} out of range")));
        }
    }
    Ok(())
}

pub(crate) fn anchor_part(
    posed: &Posed,
    anchors: &[(usize, Vector3<f64>)],
    up: &mut Upstream,
    scale: f64,
) -> f64 {
    let mut value = 0.0;
    for &(j, a) in anchors {
        let r = posed.joints[j] - a;
        value += r.norm_squared();
        up.joints[j] += 2.0 * scale * r;
    }
    value
}

fn pose_check(theta: &[f64], what: &'static str) -> Result<()> {
    if theta.len() != POSE_DIM {
        return Err(Error::LengthMismatch {
            what,
            expected: POSE_DIM,
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

fn with_body(
    model: &BodyModel,
    params: &BodyParams,
    f: impl FnOnce(&Posed, &mut Upstream) -> Result<(f64, usize)>,
) -> Result<Term> {
    let posed = model.forward(params)?;
    let mut up = Upstream::new(model.vertex_count());
    let (value, skipped) = f(&posed, &mut up)?;
    Ok(Term {
        value,
        grad: posed.backward(model, &up),
        skipped,
    })
}

/// Sum over cloud points of the squared distance to the corresponding posed
/// body vertex, optionally clamped at `cap²`. Without explicit
/// correspondences each point is paired with its nearest posed vertex. An
/// empty cloud yields zero with `skipped = 1`.
pub fn e_depth(
    model: &BodyModel,
    params: &BodyParams,
    cloud: &[Vector3<f64>],
    correspondences: Option<&[usize]>,
    cap: Option<f64>,
) -> Result<Term> {
    if let Some(c) = cap {
        if !(c > 0.0) {
            return Err(Error::InvalidInput("depth cap must be positive".into()));
        }
    }
    if let Some(pairs) = correspondences {
        if pairs.len() != cloud.len() || pairs.iter().any(|&v| v >= model.vertex_count()) {
            return Err(Error::InvalidInput(
                "depth correspondences do not match the cloud".into(),
            ));
        }
    }
    with_body(model, params, |posed, up| {
        if cloud.is_empty() {
            return Ok((0.0, 1));
        }
        let owned;
        let pairs = match correspondences {
            Some(p) => p,
            None => {
                owned = nearest_vertices(cloud, &posed.vertices);
                &owned
            }
        };
        Ok((depth_part(posed, cloud, pairs, cap, up, 1.0), 0))
    })
}

/// Confidence-weighted squared reprojection error of the keypoint joints.
pub fn e_2d(
    model: &BodyModel,
    params: &BodyParams,
    cam: &Camera,
    keypoints: &[Vector2<f64>],
    confidences: &[f64],
) -> Result<Term> {
    cam.validate()?;
    check_keypoints(keypoints, confidences)?;
    with_body(model, params, |posed, up| {
        Ok(keypoint_part(posed, cam, keypoints, confidences, up, 1.0))
    })
}

/// Negative log of the mixture density at `theta`; gradient over the pose.
pub fn e_gmm(theta: &[f64], prior: &GmmPosePrior) -> Result<Term> {
    pose_check(theta, "pose")?;
    let (value, grad) = prior.neg_log_density(theta)?;
    Ok(Term::new(value, grad))
}

/// Sum of absolute floor distances of the contacted foot vertices.
pub fn e_c_dense(
    model: &BodyModel,
    params: &BodyParams,
    contact: &DenseContact,
    floor: &GroundPlane,
) -> Result<Term> {
    check_contact(contact)?;
    floor.validate()?;
    with_body(model, params, |posed, up| {
        Ok((
            c_dense_part(posed, model.foot_vertex_ids(), contact, floor, up, 1.0),
            0,
        ))
    })
}

/// Sum of plane-point displacement norms over points contacted in both
/// frames; `params_tm1` is constant.
pub fn e_c_temp(
    model: &BodyModel,
    params_t: &BodyParams,
    params_tm1: &BodyParams,
    contact_t: &DenseContact,
    contact_tm1: &DenseContact,
    planes: &FootPlanes,
) -> Result<Term> {
    check_contact(contact_t)?;
    check_contact(contact_tm1)?;
    let previous = plane_positions(&model.forward(params_tm1)?, model, planes);
    with_body(model, params_t, |posed, up| {
        Ok((
            c_temp_part(
                posed,
                model,
                planes,
                contact_t,
                contact_tm1,
                &previous,
                up,
                1.0,
            ),
            0,
        ))
    })
}

/// `‖θ - θ̃‖²`.
pub fn e_mimic(theta: &[f64], theta_init: &[f64]) -> Result<Term> {
    pose_check(theta, "pose")?;
    pose_check(theta_init, "initial pose")?;
    let mut value = 0.0;
    let grad = theta
        .iter()
        .zip(theta_init)
        .map(|(a, b)| {
            value += (a - b) * (a - b);
            2.0 * (a - b)
        })
        .collect();
    Ok(Term::new(value, grad))
}

/// Squared distance of each contacted foot joint to its ground anchor.
pub fn e_contact_joint(
    model: &BodyModel,
    params: &BodyParams,
    anchors: &[(usize, Vector3<f64>)],
) -> Result<Term> {
    check_joint_ids(anchors.iter().map(|a| a.0))?;
    with_body(model, params, |posed, up| {
        Ok((anchor_part(posed, anchors, up, 1.0), 0))
    })
}

/// Squared displacement of the contacted joints since the previous frame.
pub fn e_foot_consistency(
    model: &BodyModel,
    params_t: &BodyParams,
    params_tm1: &BodyParams,
    contacted_joint_ids: &[usize],
) -> Result<Term> {
    check_joint_ids(contacted_joint_ids.iter().copied())?;
    let previous = model.forward(params_tm1)?;
    let anchors: Vec<_> = contacted_joint_ids
        .iter()
        .map(|&j| (j, previous.joints[j]))
        .collect();
    with_body(model, params_t, |posed, up| {
        Ok((anchor_part(posed, &anchors, up, 1.0), 0))
    })
}
