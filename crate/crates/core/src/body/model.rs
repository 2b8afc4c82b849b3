use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation;
use super::template::{generic_body, regress, BodyTemplate};
use super::{layout, BodyParams, JOINT_PARENTS, NUM_JOINTS, SHAPE_DIM};
use crate::error::{Error, Result};

const MODEL_FORMAT: &str = "contactcap-body-model";
const MODEL_VERSION: u32 = 1;

/// Adult and child templates plus a linear shape basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub adult: BodyTemplate,
    pub child: BodyTemplate,
    /// Per vertex, one displacement per shape coefficient.
    pub shape_dirs: Vec<[Vector3<f64>; SHAPE_DIM]>,
}

/// A point rigidly attached to a vertex's skinning: rest position is the
/// vertex's rest position plus `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachedPoint {
    pub vertex: usize,
    pub offset: Vector3<f64>,
}

/// Gradients of a scalar energy with respect to posed outputs.
#[derive(Debug, Clone)]
pub struct Upstream {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
    pub attached: Vec<(AttachedPoint, Vector3<f64>)>,
}

impl Upstream {
    pub fn new(vertex_count: usize) -> Self {
        Self {
            vertices: vec![Vector3::zeros(); vertex_count],
            joints: vec![Vector3::zeros(); NUM_JOINTS],
            attached: Vec::new(),
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.vertices.iter_mut().for_each(|g| *g *= s);
        self.joints.iter_mut().for_each(|g| *g *= s);
        self.attached.iter_mut().for_each(|(_, g)| *g *= s);
        self
    }
}

/// Posed body with the intermediates needed for the backward pass.
#[derive(Debug, Clone)]
pub struct Posed {
    /// World-space vertices.
    pub vertices: Vec<Vector3<f64>>,
    /// World-space joints.
    pub joints: Vec<Vector3<f64>>,
    rest_vertices: Vec<Vector3<f64>>,
    rest_joints: Vec<Vector3<f64>>,
    local_rot: Vec<Matrix3<f64>>,
    global_rot: Vec<Matrix3<f64>>,
    joint_pos: Vec<Vector3<f64>>,
    skinned: Vec<Vector3<f64>>,
    root_rot: Matrix3<f64>,
    theta: Vec<f64>,
    rotation: Vector3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    adult: serde_json::Value,
    child: serde_json::Value,
    shape_dirs: Vec<Vec<[f64; 3]>>,
}

impl BodyModel {
    /// The procedurally generated 24-joint body used throughout the toolkit.
    pub fn generic() -> Self {
        let g = generic_body();
        Self {
            adult: g.adult,
            child: g.child,
            shape_dirs: g.shape_dirs,
        }
    }

    pub fn new(
        adult: BodyTemplate,
        child: BodyTemplate,
        shape_dirs: Vec<[Vector3<f64>; SHAPE_DIM]>,
    ) -> Result<Self> {
        adult.validate()?;
        child.validate()?;
        adult.check_topology(&child)?;
        if shape_dirs.len() != adult.vertex_count() {
            return Err(Error::LengthMismatch {
                what: "shape directions",
                expected: adult.vertex_count(),
                got: shape_dirs.len(),
            });
        }
        Ok(Self {
            adult,
            child,
            shape_dirs,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.adult.vertex_count()
    }

    pub fn foot_vertex_ids(&self) -> &[usize] {
        &self.adult.foot_vertex_ids
    }

    pub fn skinning(&self) -> &[Vec<(usize, f64)>] {
        &self.adult.skinning_weights
    }

    /// Rest-pose shaped vertices.
    pub fn rest_vertices(&self, alpha: f64, beta: &[f64]) -> Vec<Vector3<f64>> {
        self.adult
            .vertices
            .iter()
            .zip(&self.child.vertices)
            .zip(&self.shape_dirs)
            .map(|((a, c), dirs)| {
                let mut v = alpha * a + (1.0 - alpha) * c;
                for (b, d) in beta.iter().zip(dirs) {
                    v += *b * d;
                }
                v
            })
            .collect()
    }

    /// Template at a given blend and shape, in rest pose.
    pub fn shaped_template(&self, alpha: f64, beta: &[f64]) -> BodyTemplate {
        BodyTemplate {
            vertices: self.rest_vertices(alpha, beta),
            ..self.adult.clone()
        }
    }

    pub fn rest_joints(&self, alpha: f64, beta: &[f64]) -> Vec<Vector3<f64>> {
        regress(
            &self.adult.joint_regressor,
            &self.rest_vertices(alpha, beta),
        )
    }

    /// Shape, articulate, skin and place the body.
    pub fn forward(&self, params: &BodyParams) -> Result<Posed> {
        params.validate()?;
        Ok(self.forward_unchecked(params))
    }

    pub(crate) fn forward_unchecked(&self, params: &BodyParams) -> Posed {
        let rest_vertices = self.rest_vertices(params.alpha, &params.beta);
        let rest_joints = regress(&self.adult.joint_regressor, &rest_vertices);
        let local_rot: Vec<_> = (0..NUM_JOINTS)
            .map(|j| rotation::exp(&params.joint_rotation(j)))
            .collect();
        let mut global_rot = vec![Matrix3::identity(); NUM_JOINTS];
        let mut joint_pos = vec![Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            match JOINT_PARENTS[j] {
                None => {
                    global_rot[j] = local_rot[j];
                    joint_pos[j] = rest_joints[j];
                }
                Some(p) => {
                    global_rot[j] = global_rot[p] * local_rot[j];
                    joint_pos[j] = global_rot[p] * (rest_joints[j] - rest_joints[p]) + joint_pos[p];
                }
            }
        }
        let skinned: Vec<_> = rest_vertices
            .iter()
            .zip(self.skinning())
            .map(|(x, weights)| {
                weights.iter().fold(Vector3::zeros(), |acc, &(j, w)| {
                    acc + w * (global_rot[j] * (x - rest_joints[j]) + joint_pos[j])
                })
            })
            .collect();
        let root_rot = rotation::exp(&params.rotation);
        let root = rest_joints[0];
        let place = |p: &Vector3<f64>| root_rot * (p - root) + root + params.translation;
        Posed {
            vertices: skinned.iter().map(place).collect(),
            joints: joint_pos.iter().map(place).collect(),
            rest_vertices,
            rest_joints,
            local_rot,
            global_rot,
            joint_pos,
            skinned,
            root_rot,
            theta: params.theta.clone(),
            rotation: params.rotation,
            translation: params.translation,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            adult: serde_json::from_str(&self.adult.to_json()?)?,
            child: serde_json::from_str(&self.child.to_json()?)?,
            shape_dirs: self
                .shape_dirs
                .iter()
                .map(|dirs| dirs.iter().map(|d| [d.x, d.y, d.z]).collect())
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::format(
                "body model",
                "unexpected format tag or version",
            ));
        }
        let adult = BodyTemplate::from_json(&file.adult.to_string())?;
        let child = BodyTemplate::from_json(&file.child.to_string())?;
        let mut shape_dirs = Vec::with_capacity(file.shape_dirs.len());
        for dirs in file.shape_dirs {
            if dirs.len() != SHAPE_DIM {
                return Err(Error::format(
                    "body model",
                    "shape direction row has wrong width",
                ));
            }
            let mut row = [Vector3::zeros(); SHAPE_DIM];
            for (r, d) in row.iter_mut().zip(dirs) {
                *r = Vector3::from(d);
            }
            shape_dirs.push(row);
        }
        Self::new(adult, child, shape_dirs)
    }
}

impl Posed {
    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.rest_joints
    }

    pub fn rest_vertices(&self) -> &[Vector3<f64>] {
        &self.rest_vertices
    }

    fn place(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let root = self.rest_joints[0];
        self.root_rot * (p - root) + root + self.translation
    }

    /// World position of a point carried by a vertex's skinning.
    pub fn attached_point(&self, model: &BodyModel, point: &AttachedPoint) -> Vector3<f64> {
        let x = self.rest_vertices[point.vertex] + point.offset;
        let s = model.skinning()[point.vertex]
            .iter()
            .fold(Vector3::zeros(), |acc, &(j, w)| {
                acc + w * (self.global_rot[j] * (x - self.rest_joints[j]) + self.joint_pos[j])
            });
        self.place(&s)
    }

    /// Reverse-mode pass: gradient over the flat parameter layout.
    pub fn backward(&self, model: &BodyModel, up: &Upstream) -> Vec<f64> {
        let n = self.rest_vertices.len();
        let mut grad = vec![0.0; layout::DIM];
        let root = self.rest_joints[0];
        let rt = self.root_rot.transpose();

        // Global placement.
        let mut g_trans = Vector3::zeros();
        let mut m_rot = Matrix3::zeros();
        let mut g_root_rest = Vector3::zeros();
        let mut g_skinned = vec![Vector3::zeros(); n];
        let mut g_joint_pos = vec![Vector3::zeros(); NUM_JOINTS];
        let mut place_back = |g: &Vector3<f64>, pre: &Vector3<f64>| -> Vector3<f64> {
            g_trans += g;
            m_rot += g * (pre - root).transpose();
            let local = rt * g;
            g_root_rest += g - local;
            local
        };
        for v in 0..n {
            let g = up.vertices[v];
            if g != Vector3::zeros() {
                g_skinned[v] = place_back(&g, &self.skinned[v]);
            }
        }
        for j in 0..NUM_JOINTS {
            let g = up.joints[j];
            if g != Vector3::zeros() {
                g_joint_pos[j] = place_back(&g, &self.joint_pos[j]);
            }
        }
        let mut attached_local = Vec::with_capacity(up.attached.len());
        for (pt, g) in &up.attached {
            let x = self.rest_vertices[pt.vertex] + pt.offset;
            let pre = model.skinning()[pt.vertex]
                .iter()
                .fold(Vector3::zeros(), |acc, &(j, w)| {
                    acc + w * (self.global_rot[j] * (x - self.rest_joints[j]) + self.joint_pos[j])
                });
            attached_local.push((pt.vertex, x, place_back(g, &pre)));
        }
        grad[layout::TRANSLATION].copy_from_slice(g_trans.as_slice());
        let dr = rotation::exp_derivatives(&self.rotation);
        for i in 0..3 {
            grad[layout::ROTATION.start + i] = dr[i].component_mul(&m_rot).sum();
        }

        // Linear blend skinning.
        let mut g_global_rot = vec![Matrix3::zeros(); NUM_JOINTS];
        let mut g_rest_joints = vec![Vector3::zeros(); NUM_JOINTS];
        let mut g_rest_vertices = vec![Vector3::zeros(); n];
        g_rest_joints[0] += g_root_rest;
        let mut skin_back = |v: usize, x: &Vector3<f64>, g: &Vector3<f64>| {
            for &(j, w) in &model.skinning()[v] {
                let wg = w * g;
                let rtg = self.global_rot[j].transpose() * wg;
                g_rest_vertices[v] += rtg;
                g_global_rot[j] += wg * (x - self.rest_joints[j]).transpose();
                g_rest_joints[j] -= rtg;
                g_joint_pos[j] += wg;
            }
        };
        for v in 0..n {
            let g = g_skinned[v];
            if g != Vector3::zeros() {
                skin_back(v, &self.rest_vertices[v], &g);
            }
        }
        for (v, x, g) in &attached_local {
            skin_back(*v, x, g);
        }

        // Forward kinematics, children before parents.
        let mut g_local_rot = vec![Matrix3::zeros(); NUM_JOINTS];
        for j in (0..NUM_JOINTS).rev() {
            match JOINT_PARENTS[j] {
                None => {
                    g_local_rot[j] = g_global_rot[j];
                    g_rest_joints[j] += g_joint_pos[j];
                }
                Some(p) => {
                    let parent_rot = self.global_rot[p];
                    let g_rot = g_global_rot[j];
                    g_global_rot[p] += g_rot * self.local_rot[j].transpose();
                    g_local_rot[j] = parent_rot.transpose() * g_rot;
                    let gt = g_joint_pos[j];
                    let d = self.rest_joints[j] - self.rest_joints[p];
                    g_global_rot[p] += gt * d.transpose();
                    let back = parent_rot.transpose() * gt;
                    g_rest_joints[j] += back;
                    g_rest_joints[p] -= back;
                    g_joint_pos[p] += gt;
                }
            }
        }
        for j in 0..NUM_JOINTS {
            if g_local_rot[j] == Matrix3::zeros() {
                continue;
            }
            let r = Vector3::new(
                self.theta[3 * j],
                self.theta[3 * j + 1],
                self.theta[3 * j + 2],
            );
            let d = rotation::exp_derivatives(&r);
            for i in 0..3 {
                grad[3 * j + i] = d[i].component_mul(&g_local_rot[j]).sum();
            }
        }

        // Joint regressor, then blend and shape.
        for (row, g) in model.adult.joint_regressor.iter().zip(&g_rest_joints) {
            for &(v, w) in row {
                g_rest_vertices[v] += w * g;
            }
        }
        let mut g_alpha = 0.0;
        let mut g_beta = [0.0; SHAPE_DIM];
        for v in 0..n {
            let g = g_rest_vertices[v];
            if g == Vector3::zeros() {
                continue;
            }
            g_alpha += g.dot(&(model.adult.vertices[v] - model.child.vertices[v]));
            for (k, d) in model.shape_dirs[v].iter().enumerate() {
                g_beta[k] += g.dot(d);
            }
        }
        grad[layout::ALPHA] = g_alpha;
        grad[layout::BETA].copy_from_slice(&g_beta);
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng) -> BodyParams {
        let mut p = BodyParams::rest();
        p.theta
            .iter_mut()
            .for_each(|t| *t = rng.random_range(-0.6..0.6));
        p.beta
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-1.5..1.5));
        p.rotation = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        p.translation = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(2.0..4.0),
        );
        p.alpha = rng.random_range(0.1..0.9);
        p
    }

    #[test]
    fn identity_pose_returns_rest_template() {
        let m = BodyModel::generic();
        let posed = m.forward(&BodyParams::rest()).unwrap();
        for (a, b) in posed.vertices.iter().zip(&m.adult.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_shifts_everything() {
        let m = BodyModel::generic();
        let mut p = BodyParams::rest();
        p.translation = Vector3::new(0.0, 1.0, 0.0);
        let posed = m.forward(&p).unwrap();
        let rest = m.forward(&BodyParams::rest()).unwrap();
        for (a, b) in posed.vertices.iter().zip(&rest.vertices) {
            assert!((a - b - Vector3::y()).norm() < 1e-12);
        }
        for (a, b) in posed.joints.iter().zip(&rest.joints) {
            assert!((a - b - Vector3::y()).norm() < 1e-12);
        }
    }

    #[test]
    fn rigid_segments_keep_their_distances() {
        let m = BodyModel::generic();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng);
        let posed = m.forward(&p).unwrap();
        let rest = m.rest_vertices(p.alpha, &p.beta);
        for j in 0..NUM_JOINTS {
            let rigid: Vec<usize> = (0..m.vertex_count())
                .filter(|&v| m.skinning()[v] == vec![(j, 1.0)])
                .collect();
            assert!(rigid.len() >= 2);
            for &a in &rigid {
                for &b in &rigid {
                    let d0 = (rest[a] - rest[b]).norm();
                    let d1 = (posed.vertices[a] - posed.vertices[b]).norm();
                    assert!((d0 - d1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_finite_params_are_rejected() {
        let m = BodyModel::generic();
        let mut p = BodyParams::rest();
        p.theta[7] = f64::INFINITY;
        assert!(m.forward(&p).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = BodyModel::generic();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_params(&mut rng);
        // Random linear functional of vertices, joints and one attached point.
        let wv: Vec<Vector3<f64>> = (0..m.vertex_count())
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let wj: Vec<Vector3<f64>> = (0..NUM_JOINTS)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let pt = AttachedPoint {
            vertex: m.foot_vertex_ids()[40],
            offset: Vector3::new(0.0, -0.01, 0.0),
        };
        let wa = Vector3::new(0.3, -0.7, 0.2);
        let f = |x: &[f64]| {
            let posed = m.forward_unchecked(&BodyParams::from_slice(x).unwrap());
            let mut s = 0.0;
            for (v, w) in posed.vertices.iter().zip(&wv) {
                s += v.dot(w);
            }
            for (v, w) in posed.joints.iter().zip(&wj) {
                s += v.dot(w);
            }
            s + posed.attached_point(&m, &pt).dot(&wa)
        };
        let posed = m.forward_unchecked(&p);
        let up = Upstream {
            vertices: wv.clone(),
            joints: wj.clone(),
            attached: vec![(pt, wa)],
        };
        let g = posed.backward(&m, &up);
        let x = p.to_vec();
        let scale = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..x.len() {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * scale,
                "coordinate {i}: fd {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = BodyModel::generic();
        assert_eq!(BodyModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
