use std::collections::HashSet;
use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{joint, FOOT_VERTEX_COUNT, JOINT_PARENTS, NUM_JOINTS, SHAPE_DIM};
use crate::error::{Error, Result};

pub const TEMPLATE_FORMAT: &str = "contactcap-body-template";
pub const TEMPLATE_VERSION: u32 = 1;

/// A rest-pose mesh with its rig.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Sparse rows: for each joint, `(vertex, weight)` pairs.
    pub joint_regressor: Vec<Vec<(usize, f64)>>,
    /// Sparse rows: for each vertex, `(joint, weight)` pairs summing to one.
    pub skinning_weights: Vec<Vec<(usize, f64)>>,
    /// Exactly 192 vertices on the soles; left foot first, then right.
    pub foot_vertex_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    format: String,
    version: u32,
    vertex_count: usize,
    joint_count: usize,
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    /// `(joint, vertex, weight)` triplets.
    joint_regressor: Vec<(usize, usize, f64)>,
    /// `(vertex, joint, weight)` triplets.
    skinning_weights: Vec<(usize, usize, f64)>,
    foot_vertex_ids: Vec<usize>,
}

impl BodyTemplate {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Checks every structural invariant of the rig.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.skinning_weights.len() != n {
            return Err(Error::LengthMismatch {
                what: "skinning weight rows",
                expected: n,
                got: self.skinning_weights.len(),
            });
        }
        if self.joint_regressor.len() != NUM_JOINTS {
            return Err(Error::LengthMismatch {
                what: "joint regressor rows",
                expected: NUM_JOINTS,
                got: self.joint_regressor.len(),
            });
        }
        if !self
            .vertices
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite("template vertices"));
        }
        for (v, row) in self.skinning_weights.iter().enumerate() {
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&(j, w)| j >= NUM_JOINTS || w < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "skinning weights of vertex {v} are not a convex combination of joints"
                )));
            }
        }
        for row in &self.joint_regressor {
            if row.iter().any(|&(v, _)| v >= n) {
                return Err(Error::InvalidInput(
                    "joint regressor references a missing vertex".into(),
                ));
            }
        }
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::InvalidInput(
                "face references a missing vertex".into(),
            ));
        }
        if self.foot_vertex_ids.len() != FOOT_VERTEX_COUNT {
            return Err(Error::LengthMismatch {
                what: "foot vertex ids",
                expected: FOOT_VERTEX_COUNT,
                got: self.foot_vertex_ids.len(),
            });
        }
        let unique: HashSet<_> = self.foot_vertex_ids.iter().collect();
        if unique.len() != FOOT_VERTEX_COUNT || self.foot_vertex_ids.iter().any(|&i| i >= n) {
            return Err(Error::InvalidInput(
                "foot vertex ids must be unique valid indices".into(),
            ));
        }
        Ok(())
    }

    /// Shared topology: vertex count, faces and regressor structure.
    pub fn check_topology(&self, other: &BodyTemplate) -> Result<()> {
        if self.vertices.len() != other.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "vertex counts differ ({} vs {})",
                self.vertices.len(),
                other.vertices.len()
            )));
        }
        if self.faces != other.faces {
            return Err(Error::TopologyMismatch("face lists differ".into()));
        }
        let shape = |t: &BodyTemplate| t.joint_regressor.iter().map(Vec::len).collect::<Vec<_>>();
        if shape(self) != shape(other) {
            return Err(Error::TopologyMismatch(
                "joint regressor shapes differ".into(),
            ));
        }
        if self.foot_vertex_ids != other.foot_vertex_ids {
            return Err(Error::TopologyMismatch("foot registries differ".into()));
        }
        Ok(())
    }

    pub fn regress_joints(&self) -> Vec<Vector3<f64>> {
        regress(&self.joint_regressor, &self.vertices)
    }

    /// Joint with the largest skinning weight on vertex `v` (lowest index on ties).
    pub fn dominant_joint(&self, v: usize) -> usize {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &(j, w) in &self.skinning_weights[v] {
            if w > best.1 + 1e-12 || ((w - best.1).abs() <= 1e-12 && j < best.0) {
                best = (j, w);
            }
        }
        best.0
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TemplateFile {
            format: TEMPLATE_FORMAT.into(),
            version: TEMPLATE_VERSION,
            vertex_count: self.vertices.len(),
            joint_count: NUM_JOINTS,
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: self.faces.clone(),
            joint_regressor: self
                .joint_regressor
                .iter()
                .enumerate()
                .flat_map(|(j, row)| row.iter().map(move |&(v, w)| (j, v, w)))
                .collect(),
            skinning_weights: self
                .skinning_weights
                .iter()
                .enumerate()
                .flat_map(|(v, row)| row.iter().map(move |&(j, w)| (v, j, w)))
                .collect(),
            foot_vertex_ids: self.foot_vertex_ids.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TemplateFile = serde_json::from_str(text)?;
        if file.format != TEMPLATE_FORMAT {
            return Err(Error::format(
                "body template",
                format!("unexpected format tag {:?}", file.format),
            ));
        }
        if file.version != TEMPLATE_VERSION {
            return Err(Error::format(
                "body template",
                format!("unsupported version {}", file.version),
            ));
        }
        if file.joint_count != NUM_JOINTS || file.vertices.len() != file.vertex_count {
            return Err(Error::format(
                "body template",
                "header counts disagree with payload",
            ));
        }
        let n = file.vertex_count;
        let mut joint_regressor = vec![Vec::new(); NUM_JOINTS];
        for (j, v, w) in file.joint_regressor {
            joint_regressor
                .get_mut(j)
                .ok_or_else(|| Error::format("body template", "regressor joint out of range"))?
                .push((v, w));
        }
        let mut skinning_weights = vec![Vec::new(); n];
        for (v, j, w) in file.skinning_weights {
            skinning_weights
                .get_mut(v)
                .ok_or_else(|| Error::format("body template", "skinning vertex out of range"))?
                .push((j, w));
        }
        let t = BodyTemplate {
            vertices: file
                .vertices
                .iter()
                .map(|v| Vector3::new(v[0], v[1], v[2]))
                .collect(),
            faces: file.faces,
            joint_regressor,
            skinning_weights,
            foot_vertex_ids: file.foot_vertex_ids,
        };
        t.validate()?;
        Ok(t)
    }
}

pub(crate) fn regress(reg: &[Vec<(usize, f64)>], vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    reg.iter()
        .map(|row| {
            row.iter()
                .fold(Vector3::zeros(), |acc, &(v, w)| acc + w * vertices[v])
        })
        .collect()
}

/// Convex blend of two topology-compatible templates; rig taken from `adult`.
pub fn blend_template(
    adult: &BodyTemplate,
    child: &BodyTemplate,
    alpha: f64,
) -> Result<BodyTemplate> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
    }
    adult.check_topology(child)?;
    let mut out = adult.clone();
    for (o, c) in out.vertices.iter_mut().zip(&child.vertices) {
        *o = alpha * *o + (1.0 - alpha) * c;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Procedural generic body.

pub(crate) const REST_JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.92, 0.0],
    [0.09, 0.84, 0.0],
    [-0.09, 0.84, 0.0],
    [0.0, 1.02, 0.0],
    [0.09, 0.47, 0.0],
    [-0.09, 0.47, 0.0],
    [0.0, 1.15, 0.0],
    [0.09, 0.08, 0.0],
    [-0.09, 0.08, 0.0],
    [0.0, 1.28, 0.0],
    [0.09, 0.03, 0.13],
    [-0.09, 0.03, 0.13],
    [0.0, 1.50, 0.0],
    [0.07, 1.42, 0.0],
    [-0.07, 1.42, 0.0],
    [0.0, 1.62, 0.0],
    [0.18, 1.43, 0.0],
    [-0.18, 1.43, 0.0],
    [0.45, 1.43, 0.0],
    [-0.45, 1.43, 0.0],
    [0.70, 1.43, 0.0],
    [-0.70, 1.43, 0.0],
    [0.78, 1.43, 0.0],
    [-0.78, 1.43, 0.0],
];

/// Bone each joint's tube follows; `None` marks a terminal segment.
const PRIMARY_CHILD: [Option<usize>; NUM_JOINTS] = [
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(10),
    Some(11),
    Some(12),
    None,
    None,
    Some(15),
    Some(16),
    Some(17),
    None,
    Some(18),
    Some(19),
    Some(20),
    Some(21),
    Some(22),
    Some(23),
    None,
    None,
];

/// Terminal segment ends and `(start radius, end radius)` per joint tube.
fn segment(j: usize) -> (Vector3<f64>, f64, f64) {
    let rest = |i: usize| Vector3::from(REST_JOINTS[i]);
    let side = |x: f64| if rest(j).x >= 0.0 { x } else { -x };
    let end = match PRIMARY_CHILD[j] {
        Some(c) => rest(c),
        None => match j {
            joint::LEFT_TOE | joint::RIGHT_TOE => Vector3::new(rest(j).x, 0.025, 0.21),
            joint::HEAD => Vector3::new(0.0, 1.80, 0.0),
            _ => Vector3::new(side(0.88), 1.43, 0.0),
        },
    };
    let (r0, r1) = match j {
        0 => (0.14, 0.13),
        1 | 2 => (0.08, 0.055),
        3 => (0.13, 0.14),
        4 | 5 => (0.05, 0.04),
        6 => (0.14, 0.15),
        7 | 8 => (0.04, 0.02),
        9 => (0.15, 0.10),
        10 | 11 => (0.02, 0.015),
        12 => (0.05, 0.05),
        13 | 14 => (0.05, 0.05),
        15 => (0.09, 0.08),
        16 | 17 => (0.05, 0.04),
        18 | 19 => (0.04, 0.03),
        20 | 21 => (0.03, 0.03),
        _ => (0.03, 0.02),
    };
    (end, r0, r1)
}

fn mirror(j: usize) -> usize {
    match j {
        1 | 4 | 7 | 10 | 13 | 16 | 18 | 20 | 22 => j + 1,
        2 | 5 | 8 | 11 | 14 | 17 | 19 | 21 | 23 => j - 1,
        _ => j,
    }
}

const RING_SIZE: usize = 10;
const RING_FRACTIONS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];
const SOLE_ROWS: usize = 12;
const SOLE_COLS: usize = 8;
const SHAPE_SEED: u64 = 0x5eed_0b0d;

/// Generated adult template, child template and per-vertex shape directions.
pub(crate) struct GenericBody {
    pub adult: BodyTemplate,
    pub child: BodyTemplate,
    pub shape_dirs: Vec<[Vector3<f64>; SHAPE_DIM]>,
}

enum VertexKind {
    Ring {
        owner: usize,
        fraction: f64,
        radial: Vector3<f64>,
    },
    Sole {
        ankle: usize,
    },
}

pub(crate) fn generic_body() -> GenericBody {
    let rest = |i: usize| Vector3::from(REST_JOINTS[i]);
    let mut vertices = Vec::new();
    let mut kinds = Vec::new();
    let mut skinning = Vec::new();
    let mut faces = Vec::new();
    let mut joint_regressor = vec![Vec::new(); NUM_JOINTS];

    for j in 0..NUM_JOINTS {
        let start = rest(j);
        let (end, r0, r1) = segment(j);
        let axis = (end - start).normalize();
        let helper = if axis.y.abs() < 0.9 {
            Vector3::y()
        } else {
            Vector3::x()
        };
        let u = helper.cross(&axis).normalize();
        let w = axis.cross(&u);
        let mut rings = Vec::new();
        for &f in &RING_FRACTIONS {
            let center = start + f * (end - start);
            let radius = r0 + (r1 - r0) * f;
            let mut ring = Vec::with_capacity(RING_SIZE);
            for k in 0..RING_SIZE {
                let phi = TAU * k as f64 / RING_SIZE as f64;
                let radial = phi.cos() * u + phi.sin() * w;
                ring.push(vertices.len());
                vertices.push(center + radius * radial);
                kinds.push(VertexKind::Ring {
                    owner: j,
                    fraction: f,
                    radial,
                });
                let weights = match (f == 0.0, JOINT_PARENTS[j]) {
                    (true, Some(p)) => vec![(p, 0.5), (j, 0.5)],
                    _ => vec![(j, 1.0)],
                };
                skinning.push(weights);
            }
            if f == 0.0 {
                joint_regressor[j] = ring.iter().map(|&v| (v, 1.0 / RING_SIZE as f64)).collect();
            }
            rings.push(ring);
        }
        for pair in rings.windows(2) {
            for k in 0..RING_SIZE {
                let (a, b) = (pair[0][k], pair[0][(k + 1) % RING_SIZE]);
                let (c, d) = (pair[1][k], pair[1][(k + 1) % RING_SIZE]);
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
    }

    let mut foot_vertex_ids = Vec::with_capacity(FOOT_VERTEX_COUNT);
    for (ankle, toe) in [
        (joint::LEFT_ANKLE, joint::LEFT_TOE),
        (joint::RIGHT_ANKLE, joint::RIGHT_TOE),
    ] {
        let a = rest(ankle);
        let mut grid = vec![[0usize; SOLE_COLS]; SOLE_ROWS];
        for (r, row) in grid.iter_mut().enumerate() {
            let z = a.z - 0.06 + 0.26 * r as f64 / (SOLE_ROWS - 1) as f64;
            let y = match r {
                0 => 0.004,
                r if r == SOLE_ROWS - 1 => 0.006,
                _ => 0.0,
            };
            for (c, slot) in row.iter_mut().enumerate() {
                let x = a.x - 0.04 + 0.08 * c as f64 / (SOLE_COLS - 1) as f64;
                *slot = vertices.len();
                foot_vertex_ids.push(vertices.len());
                vertices.push(Vector3::new(x, y, z));
                kinds.push(VertexKind::Sole { ankle });
                let weights = if z < 0.09 {
                    vec![(ankle, 1.0)]
                } else if z < 0.12 {
                    vec![(ankle, 0.5), (toe, 0.5)]
                } else {
                    vec![(toe, 1.0)]
                };
                skinning.push(weights);
            }
        }
        for r in 0..SOLE_ROWS - 1 {
            for c in 0..SOLE_COLS - 1 {
                let (p, q, s, t) = (
                    grid[r][c],
                    grid[r][c + 1],
                    grid[r + 1][c],
                    grid[r + 1][c + 1],
                );
                faces.push([p, s, t]);
                faces.push([p, t, q]);
            }
        }
    }

    let adult = BodyTemplate {
        vertices,
        faces,
        joint_regressor,
        skinning_weights: skinning,
        foot_vertex_ids,
    };

    let mut child = adult.clone();
    let head = rest(joint::HEAD).component_mul(&Vector3::new(0.78, 0.66, 0.78));
    for (v, kind) in child.vertices.iter_mut().zip(&kinds) {
        *v = v.component_mul(&Vector3::new(0.78, 0.66, 0.78));
        if matches!(
            kind,
            VertexKind::Ring {
                owner: joint::HEAD,
                ..
            }
        ) {
            *v = head + 1.2 * (*v - head);
        }
    }

    // Shape directions: symmetric bone-length changes propagated down the
    // tree plus per-segment girth changes.
    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_SEED);
    let bone = Normal::new(0.0, 0.03).unwrap();
    let girth = Normal::new(0.0, 0.006).unwrap();
    let mut shape_dirs = vec![[Vector3::zeros(); SHAPE_DIM]; adult.vertices.len()];
    for k in 0..SHAPE_DIM {
        let mut scale = [0.0; NUM_JOINTS];
        let mut radial = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            if mirror(j) < j {
                scale[j] = scale[mirror(j)];
                radial[j] = radial[mirror(j)];
            } else {
                scale[j] = bone.sample(&mut rng);
                radial[j] = girth.sample(&mut rng);
            }
        }
        scale[joint::LEFT_TOE] = 0.0;
        scale[joint::RIGHT_TOE] = 0.0;
        let mut disp = [Vector3::zeros(); NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let p = JOINT_PARENTS[j].unwrap();
            disp[j] = disp[p] + scale[j] * (rest(j) - rest(p));
        }
        for (v, kind) in kinds.iter().enumerate() {
            shape_dirs[v][k] = match *kind {
                VertexKind::Ring {
                    owner,
                    fraction,
                    radial: dir,
                } => {
                    let along = match PRIMARY_CHILD[owner] {
                        Some(c) => disp[c] - disp[owner],
                        None => Vector3::zeros(),
                    };
                    disp[owner] + fraction * along + radial[owner] * dir
                }
                VertexKind::Sole { ankle } => disp[ankle],
            };
        }
    }

    GenericBody {
        adult,
        child,
        shape_dirs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generic_templates_are_valid_and_compatible() {
        let g = generic_body();
        g.adult.validate().unwrap();
        g.child.validate().unwrap();
        g.adult.check_topology(&g.child).unwrap();
        assert!(g.adult.vertex_count() >= 800);
    }

    #[test]
    fn regressed_rest_joints_match_skeleton() {
        let g = generic_body();
        for (j, p) in g.adult.regress_joints().iter().enumerate() {
            assert!(
                (p - Vector3::from(REST_JOINTS[j])).norm() < 1e-12,
                "joint {j}"
            );
        }
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let g = generic_body();
        assert_eq!(blend_template(&g.adult, &g.child, 1.0).unwrap(), g.adult);
        let zero = blend_template(&g.adult, &g.child, 0.0).unwrap();
        assert_eq!(zero.vertices, g.child.vertices);
        let mid = blend_template(&g.adult, &g.child, 0.5).unwrap();
        for ((m, a), c) in mid
            .vertices
            .iter()
            .zip(&g.adult.vertices)
            .zip(&g.child.vertices)
        {
            assert!((m - 0.5 * (a + c)).norm() < 1e-12);
        }
    }

    #[test]
    fn blend_averages_single_vertex() {
        let mut g = generic_body();
        g.adult.vertices[0] = Vector3::new(1.0, 0.0, 0.0);
        g.child.vertices[0] = Vector3::zeros();
        let mid = blend_template(&g.adult, &g.child, 0.5).unwrap();
        assert_eq!(mid.vertices[0], Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn blend_rejects_mismatched_topology() {
        let g = generic_body();
        let mut other = g.child.clone();
        other.faces.pop();
        assert!(matches!(
            blend_template(&g.adult, &other, 0.5),
            Err(Error::TopologyMismatch(_))
        ));
        let mut fewer = g.child.clone();
        fewer.vertices.pop();
        assert!(blend_template(&g.adult, &fewer, 0.5).is_err());
        assert!(blend_template(&g.adult, &g.child, 1.2).is_err());
    }

    #[test]
    fn validation_catches_broken_rig() {
        let g = generic_body();
        let mut t = g.adult.clone();
        t.skinning_weights[3] = vec![(0, 0.7)];
        assert!(t.validate().is_err());
        let mut t = g.adult.clone();
        t.foot_vertex_ids[1] = t.foot_vertex_ids[0];
        assert!(t.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = generic_body();
        let text = g.adult.to_json().unwrap();
        assert_eq!(BodyTemplate::from_json(&text).unwrap(), g.adult);
        let bad = text.replace(TEMPLATE_FORMAT, "something-else");
        assert!(BodyTemplate::from_json(&bad).is_err());
    }
}
