use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{
    a_pose_theta, joint, rotation, BodyModel, BodyParams, A_POSE_ANGLE, NUM_JOINTS, SHAPE_DIM,
};
use crate::energy::GroundPlane;
use crate::error::{Error, Result};
use crate::pressure::{annotate_frame, DenseContact, PressureFrame, SensorVertexMap};

/// Foot vertices closer than this to the floor carry load.
pub const CONTACT_HEIGHT: f64 = 0.002;
/// Total synthetic plantar load while standing, in sensor units.
pub const BODY_WEIGHT: f64 = 600.0;
/// Shoulder abduction of the A-pose, radians.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionFamily {
    /// Quiet A-pose standing.
    Stand,
    Walk,
    SideStep,
    /// Repeated standing long jumps.
    Jump,
    Run,
}

/// Blend scalar and shape coefficients of a synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub alpha: f64,
    pub beta: Vec<f64>,
}

impl Default for Subject {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: vec![0.0; SHAPE_DIM],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionScript {
    pub family: MotionFamily,
    /// Seconds.
    pub duration: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    /// Scales stride, lift and bounce.
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub subject: Subject,
    /// Facing direction as a yaw about the vertical camera axis; by default
    /// standing subjects face the camera and moving ones cross the view.
    #[serde(default)]
    pub heading: Option<f64>,
    /// Camera-frame (x, z) of the pelvis at mid-sequence.
    #[serde(default = "default_center")]
    pub center: [f64; 2],
    /// Height of the camera above the floor, meters.
    #[serde(default = "one")]
    pub camera_height: f64,
}

fn default_frame_rate() -> f64 {
    30.0
}

fn one() -> f64 {
    1.0
}

fn default_center() -> [f64; 2] {
    [0.0, 3.5]
}

impl MotionScript {
    pub fn new(family: MotionFamily, duration: f64, seed: u64) -> Self {
        Self {
            family,
            duration,
            frame_rate: default_frame_rate(),
            amplitude: 1.0,
            seed,
            subject: Subject::default(),
            heading: None,
            center: default_center(),
            camera_height: 1.0,
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("motion script: {m}")));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad("frame rate must be positive");
        }
        if !(self.amplitude >= 0.0 && self.amplitude <= 2.0) {
            return bad("amplitude must lie in [0, 2]");
        }
        if !(0.0..=1.0).contains(&self.subject.alpha) || self.subject.beta.len() != SHAPE_DIM {
            return bad("subject needs alpha in [0, 1] and 10 shape coefficients");
        }
        if !(self.camera_height > 0.0)
            || self.center.iter().any(|c| !c.is_finite())
            || self.center[1] <= 0.5
        {
            return bad("subject must stand in front of a camera above the floor");
        }
        if self.frame_count() == 0 {
            return bad("duration shorter than one frame");
        }
        Ok(())
    }

    pub fn floor(&self) -> GroundPlane {
        GroundPlane::horizontal(-self.camera_height)
    }
}

/// Ground-truth motion: parameters, per-vertex foot loads and contact.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frame_rate: f64,
    pub params: Vec<BodyParams>,
    /// Per frame, load on each of the 192 foot vertices.
    pub loads: Vec<Vec<f64>>,
    pub contact: Vec<DenseContact>,
    pub floor: GroundPlane,
    pub body_weight: f64,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| i as f64 / self.frame_rate)
            .collect()
    }
}

fn rx(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner()
}

fn rz(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

struct Leg {
    hip: usize,
    knee: usize,
    ankle: usize,
}

/// Shaped skeleton with the quantities the gait builders need.
struct Rig {
    rest: Vec<Vector3<f64>>,
    /// Height of the ankle above the floor when the foot is flat.
    ankle_height: f64,
    leg_length: f64,
}

const LEGS: [Leg; 2] = [
    Leg {
        hip: joint::LEFT_HIP,
        knee: joint::LEFT_KNEE,
        ankle: joint::LEFT_ANKLE,
    },
    Leg {
        hip: joint::RIGHT_HIP,
        knee: joint::RIGHT_KNEE,
        ankle: joint::RIGHT_ANKLE,
    },
];

/// Joint targets for one frame in the ground frame (x lateral, y up, z
/// forward, floor at y = 0).
struct FrameTargets {
    pelvis: Vector3<f64>,
    ankles: [Vector3<f64>; 2],
    arm_swing: f64,
    arm_down: f64,
    lean: f64,
}

impl Rig {
    fn new(model: &BodyModel, subject: &Subject) -> Self {
        let rest = model.rest_joints(subject.alpha, &subject.beta);
        let verts = model.rest_vertices(subject.alpha, &subject.beta);
        let sole = model
            .foot_vertex_ids()
            .iter()
            .map(|&v| verts[v].y)
            .fold(f64::INFINITY, f64::min);
        let leg_length = LEGS
            .iter()
            .map(|l| (rest[l.knee] - rest[l.hip]).norm() + (rest[l.ankle] - rest[l.knee]).norm())
            .sum::<f64>()
            / 2.0;
        Self {
            ankle_height: rest[joint::LEFT_ANKLE].y - sole,
            rest,
            leg_length,
        }
    }

    fn hip_offset(&self, side: usize) -> Vector3<f64> {
        self.rest[LEGS[side].hip] - self.rest[joint::PELVIS]
    }

    /// Pelvis height at which an ankle `reach` meters away horizontally is
    /// reached with the leg extended to `extension` of its length.
    fn pelvis_height(&self, reach: f64, extension: f64) -> f64 {
        let l = extension * self.leg_length;
        self.ankle_height - self.hip_offset(0).y + (l * l - reach * reach).max(0.0).sqrt()
    }

    /// Local rotations of hip, knee and ankle placing the ankle at `d`
    /// relative to the hip with the foot flat.
    fn leg_ik(&self, side: usize, d: Vector3<f64>) -> [Matrix3<f64>; 3] {
        let leg = &LEGS[side];
        let v1 = self.rest[leg.knee] - self.rest[leg.hip];
        let v2 = self.rest[leg.ankle] - self.rest[leg.knee];
        let delta = v1.x + v2.x;
        // Abduction about z brings the leg plane through the target.
        let ly = -(d.x * d.x + d.y * d.y - delta * delta).max(1e-12).sqrt();
        let b = d.y.atan2(d.x) - ly.atan2(delta);
        // Two-link solve in the (y, z) plane; flexion is about x.
        let ang = |y: f64, z: f64| z.atan2(y);
        let (l1, l2) = (
            (v1.y * v1.y + v1.z * v1.z).sqrt(),
            (v2.y * v2.y + v2.z * v2.z).sqrt(),
        );
        let dist = (ly * ly + d.z * d.z)
            .sqrt()
            .clamp((l1 - l2).abs() + 1e-9, l1 + l2 - 1e-9);
        let cos_phi = ((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let phi = cos_phi.acos();
        let phi0 = ang(v2.y, v2.z) - ang(v1.y, v1.z);
        let knee = phi - phi0;
        let (c, s) = (knee.cos(), knee.sin());
        let (sy, sz) = (v1.y + c * v2.y - s * v2.z, v1.z + s * v2.y + c * v2.z);
        let hip_flex = ang(ly, d.z) - ang(sy, sz);
        let hip = rz(b) * rx(hip_flex);
        let knee_rot = rx(knee);
        let ankle = (hip * knee_rot).transpose();
        [hip, knee_rot, ankle]
    }

    fn theta(&self, t: &FrameTargets) -> Vec<f64> {
        let mut theta = vec![0.0; 3 * NUM_JOINTS];
        let mut set = |j: usize, m: &Matrix3<f64>| {
            theta[3 * j..3 * j + 3].copy_from_slice(rotation::log(m).as_slice());
        };
        for side in 0..2 {
            let hip = t.pelvis + self.hip_offset(side);
            let [h, k, a] = self.leg_ik(side, t.ankles[side] - hip);
            set(LEGS[side].hip, &h);
            set(LEGS[side].knee, &k);
            set(LEGS[side].ankle, &a);
        }
        set(joint::SPINE1, &rx(t.lean));
        // The spine lean is undone at the collar level so arms hang freely.
        set(joint::LEFT_SHOULDER, &(rx(t.arm_swing) * rz(-t.arm_down)));
        set(joint::RIGHT_SHOULDER, &(rx(-t.arm_swing) * rz(t.arm_down)));
        set(joint::LEFT_ELBOW, &rx(-0.15 * t.arm_swing.abs()));
        set(joint::RIGHT_ELBOW, &rx(-0.15 * t.arm_swing.abs()));
        theta
    }
}

/// Cyclic stepping gait: each foot alternates stance (fixed on the floor)
/// and swing along `dir`. Returns (pelvis, ankles) for time `t`.
struct Gait {
    period: f64,
    stance: f64,
    stride: f64,
    lift: f64,
    dir: Vector3<f64>,
    speed: f64,
}

impl Gait {
    fn foot(&self, t: f64, offset: f64, base: Vector3<f64>) -> Vector3<f64> {
        let cycle = t / self.period + offset;
        let phase = cycle - cycle.floor();
        let landing_time = (cycle.floor() - offset) * self.period;
        let landing = self.speed * landing_time + 0.5 * self.stance * self.stride;
        let along = if phase < self.stance {
            landing
        } else {
            let s = (phase - self.stance) / (1.0 - self.stance);
            landing + self.stride * smoothstep(s)
        };
        let height = if phase < self.stance {
            0.0
        } else {
            self.lift * (PI * (phase - self.stance) / (1.0 - self.stance)).sin()
        };
        base + along * self.dir + Vector3::new(0.0, height, 0.0)
    }
}

struct Variation {
    period_scale: f64,
    phase: f64,
    arm: f64,
}

fn targets(script: &MotionScript, rig: &Rig, var: &Variation, t: f64) -> FrameTargets {
    let amp = script.amplitude;
    let scale = rig.leg_length / 0.76;
    let foot_base = |side: usize| {
        let h = rig.hip_offset(side);
        Vector3::new(h.x, rig.ankle_height, 0.0)
    };
    let stepping = |gait: &Gait, extension: f64, bounce: f64| {
        let pelvis_y = rig.pelvis_height(0.5 * gait.stance * gait.stride, extension);
        let phase = t / gait.period + var.phase;
        let dip = bounce * (2.0 * PI * 2.0 * phase).cos().mul_add(0.5, -0.5);
        let pelvis = gait.speed * t * gait.dir + Vector3::new(0.0, pelvis_y + dip, 0.0);
        let ankles = [
            gait.foot(t, var.phase, foot_base(0)),
            gait.foot(t, var.phase + 0.5, foot_base(1)),
        ];
        (pelvis, ankles, (2.0 * PI * phase).sin())
    };
    match script.family {
        MotionFamily::Stand => {
            // Static A-pose; the legs are straight so the pose is exact.
            FrameTargets {
                pelvis: Vector3::new(0.0, rig.pelvis_height(0.0, 1.0), 0.0),
                ankles: [foot_base(0), foot_base(1)],
                arm_swing: 0.0,
                arm_down: A_POSE_ANGLE,
                lean: 0.0,
            }
        }
        MotionFamily::Walk | MotionFamily::Run | MotionFamily::SideStep => {
            let (period, stance, stride, lift, dir, extension, bounce, lean, arm) = match script
                .family
            {
                MotionFamily::Walk => (1.1, 0.6, 0.8, 0.08, Vector3::z(), 0.97, 0.012, 0.03, 0.35),
                MotionFamily::Run => (0.72, 0.35, 1.3, 0.16, Vector3::z(), 0.93, 0.02, 0.12, 0.6),
                _ => (1.2, 0.6, 0.3, 0.06, Vector3::x(), 0.97, 0.008, 0.0, 0.05),
            };
            let period = period * var.period_scale;
            let stride = stride * amp * scale;
            let gait = Gait {
                period,
                stance,
                stride,
                lift: lift * amp.max(0.3),
                dir,
                speed: stride / period,
            };
            let (pelvis, ankles, swing) = stepping(&gait, extension, bounce * amp);
            FrameTargets {
                pelvis,
                ankles,
                arm_swing: arm * var.arm * amp * swing,
                arm_down: 70f64.to_radians(),
                lean,
            }
        }
        MotionFamily::Jump => {
            let period = 1.6 * var.period_scale;
            let distance = 0.7 * amp * scale;
            let cycle = t / period + var.phase;
            let k = cycle.floor();
            let phase = cycle - k;
            let base = rig.pelvis_height(0.0, 0.98);
            let (crouch, height, tuck) = (0.12 * amp.max(0.3), 0.18 * amp.max(0.3), 0.12);
            let start = k * distance - var.phase * distance;
            let (pelvis_y, forward, foot_y, foot_fwd) = if phase < 0.35 {
                let s = phase / 0.35;
                (base - crouch * (PI * s).sin().powi(2), start, 0.0, start)
            } else if phase < 0.6 {
                let s = (phase - 0.35) / 0.25;
                let arc = 4.0 * s * (1.0 - s);
                let fwd = start + distance * s;
                (
                    base + height * arc,
                    fwd,
                    height * arc + tuck * (PI * s).sin(),
                    start + distance * smoothstep(s),
                )
            } else {
                let s = (phase - 0.6) / 0.4;
                (
                    base - crouch * (PI * s).sin().powi(2),
                    start + distance,
                    0.0,
                    start + distance,
                )
            };
            let ankle = |side: usize| foot_base(side) + Vector3::new(0.0, foot_y, foot_fwd);
            FrameTargets {
                pelvis: Vector3::new(0.0, pelvis_y, forward),
                ankles: [ankle(0), ankle(1)],
                arm_swing: -0.8 * amp * (2.0 * PI * phase).sin(),
                arm_down: 60f64.to_radians(),
                lean: 0.1 + 0.15 * (PI * phase).sin(),
            }
        }
    }
}

/// Generates a kinematically consistent motion and its ground-truth foot
/// loads and dense contact. A foot vertex carries load iff it is less than
/// [`CONTACT_HEIGHT`] above the floor; load is proportional to the
/// remaining clearance and sums to [`BODY_WEIGHT`] whenever any vertex is
/// loaded.
pub fn generate_motion(script: &MotionScript, model: &BodyModel) -> Result<MotionSequence> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let var = Variation {
        period_scale: rng.random_range(0.93..1.07),
        phase: rng.random_range(0.0..1.0),
        arm: rng.random_range(0.8..1.2),
    };
    let rig = Rig::new(model, &script.subject);
    let n = script.frame_count();
    let dt = 1.0 / script.frame_rate;
    let frames: Vec<FrameTargets> = (0..n)
        .map(|i| targets(script, &rig, &var, i as f64 * dt))
        .collect();

    let heading = script.heading.unwrap_or(match script.family {
        MotionFamily::Stand => PI,
        _ => FRAC_PI_2,
    });
    let world = Rotation3::from_axis_angle(&Vector3::y_axis(), heading).into_inner();
    let mid = frames[n / 2].pelvis;
    let offset = Vector3::new(script.center[0], -script.camera_height, script.center[1])
        - world * Vector3::new(mid.x, 0.0, mid.z);
    let root_rest = rig.rest[joint::PELVIS];
    let rot = rotation::log(&world);

    let floor = script.floor();
    let map = SensorVertexMap::build(&model.adult);
    let mut seq = MotionSequence {
        frame_rate: script.frame_rate,
        params: Vec::with_capacity(n),
        loads: Vec::with_capacity(n),
        contact: Vec::with_capacity(n),
        floor,
        body_weight: BODY_WEIGHT,
    };
    for f in &frames {
        let params = BodyParams {
            theta: match script.family {
                MotionFamily::Stand => a_pose_theta(),
                _ => rig.theta(f),
            },
            beta: script.subject.beta.clone(),
            rotation: rot,
            translation: world * f.pelvis + offset - root_rest,
            alpha: script.subject.alpha,
        };
        let posed = model.forward(&params)?;
        let clearance: Vec<f64> = model
            .foot_vertex_ids()
            .iter()
            .map(|&v| (CONTACT_HEIGHT - floor.height(&posed.vertices[v])).max(0.0))
            .collect();
        let total: f64 = clearance.iter().sum();
        let loads: Vec<f64> = if total > 0.0 {
            clearance.iter().map(|c| BODY_WEIGHT * c / total).collect()
        } else {
            vec![0.0; clearance.len()]
        };
        let pressure = map.scatter(&loads, 0.0)?;
        seq.contact
            .push(annotate_frame(&pressure, &map, BODY_WEIGHT)?);
        seq.loads.push(loads);
        seq.params.push(params);
    }
    Ok(seq)
}

/// Raw insole frames for a motion, with optional multiplicative noise on
/// loaded sensors.
pub fn synthesize_pressure(
    motion: &MotionSequence,
    map: &SensorVertexMap,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PressureFrame>> {
    let normal = rand_distr::Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("pressure noise: {e}")))?;
    let mut out = Vec::with_capacity(motion.len());
    for (i, loads) in motion.loads.iter().enumerate() {
        let mut frame = map.scatter(loads, i as f64 / motion.frame_rate)?;
        if noise_sigma > 0.0 {
            for v in frame.left.iter_mut().chain(frame.right.iter_mut()) {
                if *v > 0.0 {
                    *v = (*v * (1.0 + rand_distr::Distribution::sample(&normal, rng)))
                        .max(f64::MIN_POSITIVE);
                }
            }
        }
        out.push(frame);
    }
    Ok(out)
}
