//! Pose, translation and contact evaluation metrics. Distances are
//! reported in millimetres.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{joint, BodyModel, BodyParams, FOOT_JOINTS, FOOT_VERTEX_COUNT};
use crate::energy::GroundPlane;
use crate::error::{Error, Result};

/// Default floor distance under which a fitted foot vertex counts as in
/// contact, meters.
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.01;

fn same_len<T, U>(what: &'static str, a: &[T], b: &[U]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what,
            expected: b.len(),
            got: a.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: empty input")));
    }
    Ok(())
}

fn mean_distance_mm(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    1000.0
        * pred
            .iter()
            .zip(gt)
            .map(|(p, g)| (p - g).norm())
            .sum::<f64>()
        / pred.len() as f64
}

/// Mean per-joint position error.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    same_len("joints", pred, gt)?;
    Ok(mean_distance_mm(pred, gt))
}

/// Least-squares similarity transform `(s, R, t)` mapping `source` onto
/// `target`.
pub fn similarity_alignment(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    same_len("alignment points", source, target)?;
    let n = source.len() as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() / n;
    let mu_t = target.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (x, y) = (s - mu_s, t - mu_t);
        cov += y * x.transpose();
        var_s += x.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s == 0.0 {
        return Ok((0.0, Matrix3::identity(), mu_t));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidInput("alignment decomposition failed".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let s = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s;
    Ok((s, r, mu_t - s * r * mu_s))
}

/// MPJPE after the least-squares similarity alignment of `pred` to `gt`.
pub fn pmpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let (s, r, t) = similarity_alignment(pred, gt)?;
    let aligned: Vec<_> = pred.iter().map(|p| s * r * p + t).collect();
    Ok(mean_distance_mm(&aligned, gt))
}

/// Mean per-vertex error.
pub fn pve(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    same_len("vertices", pred, gt)?;
    Ok(mean_distance_mm(pred, gt))
}

/// Mean per-vertex error over the foot vertices.
pub fn pve_feet(pred: &[Vector3<f64>], gt: &[Vector3<f64>], foot_ids: &[usize]) -> Result<f64> {
    same_len("vertices", pred, gt)?;
    if foot_ids.is_empty() || foot_ids.iter().any(|&i| i >= pred.len()) {
        return Err(Error::InvalidInput("foot ids out of range".into()));
    }
    let p: Vec<_> = foot_ids.iter().map(|&i| pred[i]).collect();
    let g: Vec<_> = foot_ids.iter().map(|&i| gt[i]).collect();
    Ok(mean_distance_mm(&p, &g))
}

/// Per-frame error between start-relative pelvis displacements.
pub fn traj_series(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<f64>> {
    same_len("pelvis trajectory", pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| 1000.0 * ((p - pred[0]) - (g - gt[0])).norm())
        .collect())
}

/// Mean error of pelvis displacement relative to each sequence's own first
/// frame.
pub fn traj(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let s = traj_series(pred, gt)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Mean pelvis position error without start re-anchoring.
pub fn traj_absolute(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    same_len("pelvis trajectory", pred, gt)?;
    Ok(mean_distance_mm(pred, gt))
}

fn check_labels(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<()> {
    same_len("contact frames", pred, gt)?;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                what: "contact labels",
                expected: g.len(),
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// Mean over frames of the L2 norm of the label difference vector.
pub fn mfce(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<f64> {
    check_labels(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p.iter().zip(g).filter(|(a, b)| a != b).count() as f64).sqrt())
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

/// Confusion-matrix scores pooled over all frames and vertices. A ratio
/// with an empty denominator is 1 when its numerator population is also
/// empty everywhere (nothing to find, nothing claimed) and 0 otherwise.
pub fn contact_prf_iou(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<ContactScores> {
    check_labels(pred, gt)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        for (&a, &b) in p.iter().zip(g) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(scores_from_counts(tp, fp, fn_))
}

pub fn scores_from_counts(tp: usize, fp: usize, fn_: usize) -> ContactScores {
    if tp + fp + fn_ == 0 {
        return ContactScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            iou: 1.0,
        };
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ContactScores {
        precision,
        recall,
        f1,
        iou: ratio(tp, tp + fp + fn_),
    }
}

/// Mean acceleration norm per interior frame, averaged over joints. Each
/// frame holds the positions of the tracked joints.
pub fn foot_acceleration_series(joints: &[Vec<Vector3<f64>>], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("time step must be positive".into()));
    }
    if joints.len() < 3 {
        return Ok(Vec::new());
    }
    let k = joints[0].len();
    if k == 0 || joints.iter().any(|f| f.len() != k) {
        return Err(Error::InvalidInput(
            "every frame needs the same non-empty joint set".into(),
        ));
    }
    Ok(joints
        .windows(3)
        .map(|w| {
            (0..k)
                .map(|j| ((w[2][j] - 2.0 * w[1][j] + w[0][j]) / (dt * dt)).norm())
                .sum::<f64>()
                / k as f64
        })
        .collect())
}

/// Mean absolute acceleration (m/s²) of the tracked joints.
pub fn foot_jitter(joints: &[Vec<Vector3<f64>>], dt: f64) -> Result<f64> {
    let s = foot_acceleration_series(joints, dt)?;
    Ok(if s.is_empty() {
        0.0
    } else {
        s.iter().sum::<f64>() / s.len() as f64
    })
}

/// Mean displacement in millimetres between consecutive frames of the foot
/// vertices labeled in contact at both frames. Each frame holds the foot
/// vertex positions in registry order. Zero when no vertex stays in contact.
pub fn contacted_foot_displacement(feet: &[Vec<Vector3<f64>>], contact: &[Vec<bool>]) -> Result<f64> {
    same_len("contact labels", contact, feet)?;
    if feet.iter().any(|f| f.len() != FOOT_VERTEX_COUNT) || contact.iter().any(|c| c.len() != FOOT_VERTEX_COUNT) {
        return Err(Error::InvalidInput(format!(
            "every frame needs {FOOT_VERTEX_COUNT} foot vertices and labels"
        )));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for t in 1..feet.len() {
        for k in 0..FOOT_VERTEX_COUNT {
            if contact[t][k] && contact[t - 1][k] {
                total += (feet[t][k] - feet[t - 1][k]).norm();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { 1000.0 * total / count as f64 })
}

/// Foot vertices within `threshold` meters of the floor (inclusive).
pub fn model_contact_from_fit(
    vertices: &[nalgebra::Vector3<f64>],
    foot_ids: &[usize],
    floor: &GroundPlane,
    threshold: f64,
) -> Result<Vec<bool>> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidInput(
            "contact threshold must be non-negative".into(),
        ));
    }
    if foot_ids.len() != FOOT_VERTEX_COUNT || foot_ids.iter().any(|&i| i >= vertices.len()) {
        return Err(Error::InvalidInput(
            "foot ids do not match the vertex set".into(),
        ));
    }
    Ok(foot_ids
        .iter()
        .map(|&i| floor.height(&vertices[i]).abs() <= threshold)
        .collect())
}

/// Every metric for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpjpe: f64,
    pub pmpjpe: f64,
    pub pve: f64,
    pub pve_feet: f64,
    pub traj: f64,
    pub mfce: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub foot_jitter: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 11] = [
        "mpjpe",
        "pmpjpe",
        "pve",
        "pve_feet",
        "traj",
        "mfce",
        "precision",
        "recall",
        "f1",
        "iou",
        "foot_jitter",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.mpjpe,
            self.pmpjpe,
            self.pve,
            self.pve_feet,
            self.traj,
            self.mfce,
            self.precision,
            self.recall,
            self.f1,
            self.iou,
            self.foot_jitter,
        ]
    }
}

/// Options for [`evaluate_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub contact_threshold: f64,
    /// Compare pelvis positions directly instead of start-relative.
    pub absolute_traj: bool,
    pub frame_rate: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            absolute_traj: false,
            frame_rate: 30.0,
        }
    }
}

/// Time series behind the trajectory and jitter figures.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    /// Per frame: time, predicted and ground-truth start-relative pelvis
    /// displacement (m), and the trajectory error (mm).
    pub trajectory: Vec<(f64, Vector3<f64>, Vector3<f64>, f64)>,
    /// Per interior frame: time, predicted and ground-truth foot
    /// acceleration (m/s²).
    pub foot_acceleration: Vec<(f64, f64, f64)>,
}

/// Evaluates fitted parameters against ground truth. Without explicit
/// predicted labels, contact is read off the fitted mesh.
pub fn evaluate_sequence(
    model: &BodyModel,
    pred: &[BodyParams],
    gt: &[BodyParams],
    pred_contact: Option<&[Vec<bool>]>,
    gt_contact: &[Vec<bool>],
    floor: &GroundPlane,
    options: &EvalOptions,
) -> Result<(MetricsReport, PlotSeries)> {
    same_len("parameter frames", pred, gt)?;
    same_len("contact frames", gt_contact, gt)?;
    if !(options.frame_rate > 0.0) {
        return Err(Error::InvalidInput("frame rate must be positive".into()));
    }
    let n = pred.len() as f64;
    let (mut mp, mut pmp, mut pv, mut pvf) = (0.0, 0.0, 0.0, 0.0);
    let mut pelvis = (Vec::new(), Vec::new());
    let mut feet = (Vec::new(), Vec::new());
    let mut fitted_contact = Vec::new();
    let foot_ids = model.foot_vertex_ids();
    for (p, g) in pred.iter().zip(gt) {
        let (pp, gp) = (model.forward(p)?, model.forward(g)?);
        mp += mpjpe(&pp.joints, &gp.joints)?;
        pmp += pmpjpe(&pp.joints, &gp.joints)?;
        pv += pve(&pp.vertices, &gp.vertices)?;
        pvf += pve_feet(&pp.vertices, &gp.vertices, foot_ids)?;
        pelvis.0.push(pp.joints[joint::PELVIS]);
        pelvis.1.push(gp.joints[joint::PELVIS]);
        feet.0.push(
            FOOT_JOINTS
                .iter()
                .map(|&j| pp.joints[j])
                .collect::<Vec<_>>(),
        );
        feet.1.push(
            FOOT_JOINTS
                .iter()
                .map(|&j| gp.joints[j])
                .collect::<Vec<_>>(),
        );
        if pred_contact.is_none() {
            fitted_contact.push(model_contact_from_fit(
                &pp.vertices,
                foot_ids,
                floor,
                options.contact_threshold,
            )?);
        }
    }
    let contact = pred_contact.unwrap_or(&fitted_contact);
    let scores = contact_prf_iou(contact, gt_contact)?;
    let dt = 1.0 / options.frame_rate;
    let traj_err = traj_series(&pelvis.0, &pelvis.1)?;
    let report = MetricsReport {
        mpjpe: mp / n,
        pmpjpe: pmp / n,
        pve: pv / n,
        pve_feet: pvf / n,
        traj: if options.absolute_traj {
            traj_absolute(&pelvis.0, &pelvis.1)?
        } else {
            traj_err.iter().sum::<f64>() / n
        },
        mfce: mfce(contact, gt_contact)?,
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        iou: scores.iou,
        foot_jitter: foot_jitter(&feet.0, dt)?,
    };
    let acc_p = foot_acceleration_series(&feet.0, dt)?;
    let acc_g = foot_acceleration_series(&feet.1, dt)?;
    let series = PlotSeries {
        trajectory: (0..pred.len())
            .map(|t| {
                (
                    t as f64 * dt,
                    pelvis.0[t] - pelvis.0[0],
                    pelvis.1[t] - pelvis.1[0],
                    traj_err[t],
                )
            })
            .collect(),
        foot_acceleration: acc_p
            .iter()
            .zip(&acc_g)
            .enumerate()
            .map(|(i, (a, b))| ((i + 1) as f64 * dt, *a, *b))
            .collect(),
    };
    Ok((report, series))
}
