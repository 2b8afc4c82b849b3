//! Synthetic ground truth and observations.
//!
//! Motions are analytic gaits driven through exact leg inverse kinematics,
//! so stance feet stay fixed on the floor and every frame has closed-form
//! contact. Observations (keypoints, depth clouds, insole pressure) are
//! rendered from the ground truth with seeded noise.

mod motion;

pub use motion::{
    generate_motion, synthesize_pressure, MotionFamily, MotionScript, MotionSequence, Subject,
    BODY_WEIGHT, CONTACT_HEIGHT,
};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyParams, Camera, KEYPOINT_JOINTS};
use crate::error::{Error, Result};
use crate::fpp::KeypointFrame2D;
use crate::optim::central_differences;
use crate::pipelines::{ObservationFrame, SequenceInput};
use crate::pressure::{PressureFrame, SensorVertexMap};

/// Default image size matching [`default_camera`].
pub const IMAGE_SIZE: [f64; 2] = [640.0, 480.0];

/// 640×480 pinhole camera with a 500 px focal length.
pub fn default_camera() -> Camera {
    Camera {
        fx: 500.0,
        fy: 500.0,
        cx: 320.0,
        cy: 240.0,
    }
}

/// Observation noise and initial-estimate corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Keypoint pixel noise σ.
    pub keypoint_sigma: f64,
    /// Confidences are drawn uniformly from `[confidence_min, 1]`.
    pub confidence_min: f64,
    /// Depth noise σ per axis, meters.
    pub depth_sigma: f64,
    /// Probability of dropping each cloud point.
    pub cloud_dropout: f64,
    /// Relative σ of the noise on loaded insole sensors.
    pub pressure_sigma: f64,
    /// Depth drift of the initial translation at the last frame, meters.
    pub init_drift: f64,
    /// σ of the per-joint noise on the initial pose, radians.
    pub init_pose_sigma: f64,
    /// σ of the constant bias on the initial shape coefficients.
    pub init_shape_bias: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            keypoint_sigma: 0.0,
            confidence_min: 1.0,
            depth_sigma: 0.0,
            cloud_dropout: 0.0,
            pressure_sigma: 0.0,
            init_drift: 0.0,
            init_pose_sigma: 0.0,
            init_shape_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [
            self.keypoint_sigma,
            self.depth_sigma,
            self.pressure_sigma,
            self.init_drift,
            self.init_pose_sigma,
            self.init_shape_bias,
        ];
        if sig.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput(
                "noise magnitudes must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cloud_dropout) || !(0.0..=1.0).contains(&self.confidence_min)
        {
            return Err(Error::InvalidInput("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).unwrap_or_else(|_| Normal::new(0.0, 0.0).unwrap())
}

/// Depth tolerance of the visibility test, meters.
pub const VISIBILITY_TOLERANCE: f64 = 0.01;

/// A joint lying more than this far behind the rendered surface anywhere
/// within [`OCCLUSION_WINDOW_PX`] of its pixel counts as occluded, meters.
pub const OCCLUSION_MARGIN: f64 = 0.1;
/// Half-width of the pixel window searched for occluders.
pub const OCCLUSION_WINDOW_PX: usize = 3;
/// Confidence reported for occluded keypoints.
pub const OCCLUDED_CONFIDENCE: f64 = 0.2;

/// Per-pixel nearest surface depth of a rasterized mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major depths; infinity where nothing was drawn.
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn render(
        vertices: &[Vector3<f64>],
        faces: &[[usize; 3]],
        cam: &Camera,
        image_size: [f64; 2],
    ) -> Self {
        let (w, h) = (image_size[0] as usize, image_size[1] as usize);
        let mut zbuf = vec![f64::INFINITY; w * h];
        let px: Vec<_> = vertices
            .iter()
            .map(|v| cam.project_point(v).pixel())
            .collect();
        for f in faces {
            let (Some(a), Some(b), Some(c)) = (px[f[0]], px[f[1]], px[f[2]]) else {
                continue;
            };
            let z = [vertices[f[0]].z, vertices[f[1]].z, vertices[f[2]].z];
            let area = (b - a).perp(&(c - a));
            if area.abs() < 1e-12 {
                continue;
            }
            let lo = a.inf(&b).inf(&c);
            let hi = a.sup(&b).sup(&c);
            let (x0, x1) = (
                lo.x.floor().max(0.0) as usize,
                (hi.x.ceil().max(0.0) as usize).min(w),
            );
            let (y0, y1) = (
                lo.y.floor().max(0.0) as usize,
                (hi.y.ceil().max(0.0) as usize).min(h),
            );
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = nalgebra::Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let l1 = (c - b).perp(&(p - b)) / area;
                    let l2 = (a - c).perp(&(p - c)) / area;
                    let l3 = 1.0 - l1 - l2;
                    if l1 < 0.0 || l2 < 0.0 || l3 < 0.0 {
                        continue;
                    }
                    let cell = &mut zbuf[y * w + x];
                    *cell = cell.min(l1 * z[0] + l2 * z[1] + l3 * z[2]);
                }
            }
        }
        Self {
            width: w,
            height: h,
            depth: zbuf,
        }
    }

    /// Nearest surface depth over the square window of half-width `radius`
    /// pixels around the projection of `p`, if that pixel is inside the image.
    pub fn nearest_around(&self, p: &Vector3<f64>, cam: &Camera, radius: usize) -> Option<f64> {
        let px = cam.project_point(p).pixel()?;
        if !(px.x >= 0.0
            && px.y >= 0.0
            && (px.x as usize) < self.width
            && (px.y as usize) < self.height)
        {
            return None;
        }
        let (cx, cy) = (px.x as usize, px.y as usize);
        let mut best = f64::INFINITY;
        for y in cy.saturating_sub(radius)..(cy + radius + 1).min(self.height) {
            for x in cx.saturating_sub(radius)..(cx + radius + 1).min(self.width) {
                best = best.min(self.depth[y * self.width + x]);
            }
        }
        Some(best)
    }

    /// Surface depth at the pixel containing `p`, if inside the image.
    pub fn at(&self, p: &Vector3<f64>, cam: &Camera) -> Option<f64> {
        let px = cam.project_point(p).pixel()?;
        (px.x >= 0.0
            && px.y >= 0.0
            && (px.x as usize) < self.width
            && (px.y as usize) < self.height)
            .then(|| self.depth[px.y as usize * self.width + px.x as usize])
    }
}

/// Flags the vertices a depth camera would see: inside the image and no
/// farther than [`VISIBILITY_TOLERANCE`] behind the rasterized surface at
/// their pixel.
pub fn visible_vertices(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    cam: &Camera,
    image_size: [f64; 2],
) -> Vec<bool> {
    let map = DepthMap::render(vertices, faces, cam, image_size);
    vertices
        .iter()
        .map(|v| {
            map.at(v, cam)
                .is_some_and(|d| v.z <= d + VISIBILITY_TOLERANCE)
        })
        .collect()
}

/// Rendered observations plus the raw insole frames behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub input: SequenceInput,
    pub pressure: Vec<PressureFrame>,
}

/// Renders keypoints, depth clouds and raw pressure for a motion.
///
/// Keypoints are projected joints plus pixel noise. Clouds are the visible
/// posed body vertices with per-axis noise and random dropout. Pressure is the
/// ground-truth load scattered onto the insole grid. The returned input
/// carries no dense contact; annotate the pressure to obtain it.
pub fn synthesize_observations(
    motion: &MotionSequence,
    model: &BodyModel,
    cam: &Camera,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Synthesized> {
    noise.validate()?;
    cam.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kp_noise, depth_noise) = (normal(noise.keypoint_sigma), normal(noise.depth_sigma));
    let mut frames = Vec::with_capacity(motion.len());
    for (i, params) in motion.params.iter().enumerate() {
        let posed = model.forward(params)?;
        let map = DepthMap::render(&posed.vertices, &model.adult.faces, cam, IMAGE_SIZE);
        let mut positions = Vec::with_capacity(KEYPOINT_JOINTS.len());
        let mut confidences = Vec::with_capacity(KEYPOINT_JOINTS.len());
        for &j in &KEYPOINT_JOINTS {
            let px = cam
                .project_point(&posed.joints[j])
                .pixel()
                .ok_or_else(|| Error::InvalidInput("subject behind the camera".into()))?;
            let jitter =
                nalgebra::Vector2::new(kp_noise.sample(&mut rng), kp_noise.sample(&mut rng));
            positions.push(px + jitter);
            let score = if noise.confidence_min < 1.0 {
                rng.random_range(noise.confidence_min..=1.0)
            } else {
                1.0
            };
            let occluded = map
                .nearest_around(&posed.joints[j], cam, OCCLUSION_WINDOW_PX)
                .is_some_and(|d| d < posed.joints[j].z - OCCLUSION_MARGIN);
            confidences.push(if occluded {
                score.min(OCCLUDED_CONFIDENCE)
            } else {
                score
            });
        }
        let mut cloud = Vec::new();
        for v in &posed.vertices {
            let seen = map
                .at(v, cam)
                .is_some_and(|d| v.z <= d + VISIBILITY_TOLERANCE);
            let keep = noise.cloud_dropout == 0.0 || rng.random::<f64>() >= noise.cloud_dropout;
            let jitter = Vector3::from_fn(|_, _| depth_noise.sample(&mut rng));
            if seen && keep && v.z + jitter.z > 0.0 {
                cloud.push(v + jitter);
            }
        }
        frames.push(ObservationFrame {
            keypoints: KeypointFrame2D {
                positions,
                confidences,
            },
            depth_cloud: cloud,
            cam: *cam,
            timestamp: i as f64 / motion.frame_rate,
        });
    }
    let map = SensorVertexMap::build(&model.adult);
    let pressure = synthesize_pressure(motion, &map, noise.pressure_sigma, &mut rng)?;
    Ok(Synthesized {
        input: SequenceInput {
            subject: "synthetic".into(),
            frame_rate: motion.frame_rate,
            image_size: IMAGE_SIZE,
            floor: motion.floor,
            frames,
            pressure: None,
            standing_segment: standing_segment(motion),
        },
        pressure,
    })
}

/// First run of up to ten consecutive loaded frames.
fn standing_segment(motion: &MotionSequence) -> std::ops::Range<usize> {
    let loaded: Vec<bool> = motion
        .loads
        .iter()
        .map(|l| l.iter().any(|&v| v > 0.0))
        .collect();
    let start = loaded.iter().position(|&l| l).unwrap_or(0);
    let len = loaded[start..].iter().take(10).take_while(|&&l| l).count();
    start..start + len.max(1).min(motion.len() - start)
}

/// Corrupted per-frame estimates standing in for a monocular regressor:
/// Gaussian pose noise, one constant shape bias and a translation drift
/// along the camera axis growing linearly to `init_drift` at the last frame.
pub fn synthesize_initial_estimates(
    motion: &MotionSequence,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<BodyParams>> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pose, shape) = (normal(noise.init_pose_sigma), normal(noise.init_shape_bias));
    let bias: Vec<f64> = (0..crate::body::SHAPE_DIM)
        .map(|_| shape.sample(&mut rng))
        .collect();
    let n = motion.len();
    Ok(motion
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut q = p.clone();
            q.theta
                .iter_mut()
                .skip(3)
                .for_each(|t| *t += pose.sample(&mut rng));
            q.beta.iter_mut().zip(&bias).for_each(|(b, d)| *b += d);
            let frac = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            q.translation.z += noise.init_drift * frac;
            q
        })
        .collect())
}

/// Pose vectors sampled from every motion family at several amplitudes,
/// seeds and body blends; the training set of the built-in pose prior.
pub fn pose_library(model: &BodyModel) -> Result<Vec<Vec<f64>>> {
    let families = [
        MotionFamily::Stand,
        MotionFamily::Walk,
        MotionFamily::SideStep,
        MotionFamily::Jump,
        MotionFamily::Run,
    ];
    let mut out = Vec::new();
    for family in families {
        for (k, amplitude) in [0.6, 0.8, 1.0, 1.2].into_iter().enumerate() {
            for alpha in [0.7, 1.0] {
                let mut script = MotionScript::new(family, 3.0, 100 + k as u64);
                script.amplitude = amplitude;
                script.subject.alpha = alpha;
                let motion = generate_motion(&script, model)?;
                out.extend(motion.params.iter().step_by(3).map(|p| p.theta.clone()));
            }
        }
    }
    Ok(out)
}

/// Central-difference gradient with step 1e-5.
pub fn brute_force_gradient<F: FnMut(&[f64]) -> f64>(objective: F, point: &[f64]) -> Vec<f64> {
    central_differences(objective, point, 1e-5)
}
