use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::types::{FitResult, FrameDiagnostics, ObservationFrame, SequenceInput};
use crate::body::{
    a_pose_theta, build_foot_planes, layout, BodyModel, BodyParams, FootPlanes, ParamMask,
    SHAPE_DIM,
};
use crate::energy::{
    nearest_vertices, total_rgbdp, EnergyWeights, Evaluation, GmmPosePrior, GroundPlane,
    PreviousFrame, RgbdpInputs, DEFAULT_DEPTH_CAP,
};
use crate::error::{Error, Result};
use crate::optim::{minimize_projected, Minimized, OptimizerConfig, StopReason};
use crate::pressure::DenseContact;

const RIGID: ParamMask = ParamMask {
    theta: false,
    beta: false,
    rotation: true,
    translation: true,
    alpha: false,
};

/// Optimizer settings for one fitting stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub optimizer: OptimizerConfig,
    /// Nearest-vertex correspondence updates; the optimizer runs once per
    /// round with correspondences held fixed.
    pub icp_rounds: usize,
    /// Leading rounds that run with the contact terms switched off.
    pub warmup_rounds: usize,
    /// Factor on the depth weight during warm-up rounds.
    pub warmup_depth_scale: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            icp_rounds: 4,
            warmup_rounds: 0,
            warmup_depth_scale: 1.0,
        }
    }
}

impl StageConfig {
    fn with(
        step_size: f64,
        step_decay: f64,
        max_iterations: usize,
        icp_rounds: usize,
        warmup_rounds: usize,
    ) -> Self {
        Self {
            optimizer: OptimizerConfig {
                step_size,
                step_decay,
                max_iterations,
                convergence_tolerance: 1e-7,
                ..OptimizerConfig::default()
            },
            icp_rounds,
            warmup_rounds,
            warmup_depth_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.icp_rounds == 0 || self.warmup_rounds >= self.icp_rounds {
            return Err(Error::InvalidInput(
                "icp_rounds must be at least 1 and exceed warmup_rounds".into(),
            ));
        }
        if !(self.warmup_depth_scale >= 0.0 && self.warmup_depth_scale.is_finite()) {
            return Err(Error::InvalidInput(
                "warmup_depth_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Settings of the three-stage RGBD-P fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgbdpConfig {
    pub weights: EnergyWeights,
    /// Cap on the depth residual, meters.
    pub depth_cap: f64,
    pub shape: StageConfig,
    pub pose: StageConfig,
    pub track: StageConfig,
    /// At most this many evenly spaced A-pose frames enter the shape fit.
    pub shape_frames: usize,
    /// Heading hypotheses tried when placing the body in a first frame.
    pub yaw_candidates: usize,
    /// Blend value the shape fit starts from.
    pub initial_alpha: f64,
    /// Start each tracked frame from the pose extrapolated at constant
    /// velocity over the two previous accepted frames instead of the
    /// previous frame alone.
    pub extrapolate: bool,
}

impl Default for RgbdpConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            depth_cap: DEFAULT_DEPTH_CAP,
            shape: StageConfig::with(1e-2, 0.998, 1000, 30, 28),
            pose: StageConfig {
                warmup_depth_scale: 0.3,
                ..StageConfig::with(1e-2, 0.998, 1000, 10, 8)
            },
            track: StageConfig {
                warmup_depth_scale: 0.3,
                ..StageConfig::with(1e-2, 0.99, 300, 6, 4)
            },
            shape_frames: 4,
            yaw_candidates: 8,
            initial_alpha: 0.5,
            extrapolate: true,
        }
    }
}

impl RgbdpConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        for s in [&self.shape, &self.pose, &self.track] {
            s.validate()?;
        }
        if !(self.depth_cap > 0.0) {
            return Err(Error::InvalidInput("depth_cap must be positive".into()));
        }
        if self.shape_frames == 0 || self.yaw_candidates == 0 {
            return Err(Error::InvalidInput(
                "shape_frames and yaw_candidates must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.initial_alpha) {
            return Err(Error::InvalidInput(
                "initial_alpha must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Recovered body shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub alpha: f64,
    pub beta: Vec<f64>,
}

/// Output of the full three-stage fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdpFit {
    pub shape: Shape,
    pub init: BodyParams,
    pub result: FitResult,
}

fn clamp_alpha(x: &mut [f64]) {
    x[layout::ALPHA] = x[layout::ALPHA].clamp(0.0, 1.0);
}

/// Fixed inputs shared by every frame of one fit.
struct Scene<'a> {
    model: &'a BodyModel,
    planes: FootPlanes,
    prior: Option<&'a GmmPosePrior>,
    floor: GroundPlane,
    weights: EnergyWeights,
    depth_cap: f64,
}

impl<'a> Scene<'a> {
    fn new(
        model: &'a BodyModel,
        shape: Option<&Shape>,
        prior: Option<&'a GmmPosePrior>,
        floor: GroundPlane,
        cfg: &RgbdpConfig,
    ) -> Self {
        let planes = match shape {
            Some(s) => build_foot_planes(&model.shaped_template(s.alpha, &s.beta)),
            None => build_foot_planes(&model.adult),
        };
        Self {
            model,
            planes,
            prior,
            floor,
            weights: cfg.weights,
            depth_cap: cfg.depth_cap,
        }
    }

    fn round_weights(&self, stage: &StageConfig, round: usize) -> EnergyWeights {
        let mut w = self.weights;
        if round < stage.warmup_rounds {
            w.lambda_c_dense = 0.0;
            w.lambda_c_temp = 0.0;
            w.lambda_depth *= stage.warmup_depth_scale;
        }
        w
    }

    fn inputs<'b>(
        &'b self,
        frame: &'b ObservationFrame,
        corr: Option<&'b [usize]>,
        contact: Option<&'b DenseContact>,
        previous: Option<&'b PreviousFrame>,
    ) -> RgbdpInputs<'b> {
        RgbdpInputs {
            cam: &frame.cam,
            keypoints: &frame.keypoints.positions,
            confidences: &frame.keypoints.confidences,
            cloud: &frame.depth_cloud,
            correspondences: corr,
            depth_cap: Some(self.depth_cap),
            contact,
            floor: &self.floor,
            planes: &self.planes,
            prior: self.prior,
            previous,
        }
    }

    /// Energy with fresh nearest-vertex correspondences.
    fn evaluate(
        &self,
        params: &BodyParams,
        frame: &ObservationFrame,
        contact: Option<&DenseContact>,
        previous: Option<&PreviousFrame>,
    ) -> Result<Evaluation> {
        total_rgbdp(
            self.model,
            params,
            &self.inputs(frame, None, contact, previous),
            &self.weights,
        )
    }

    /// Alternates correspondence updates with masked minimization.
    fn icp(
        &self,
        frame: &ObservationFrame,
        contact: Option<&DenseContact>,
        previous: Option<&PreviousFrame>,
        init: &BodyParams,
        stage: &StageConfig,
        mask: ParamMask,
    ) -> Result<(BodyParams, usize, StopReason)> {
        let cfg = OptimizerConfig {
            parameter_mask: mask,
            ..stage.optimizer
        };
        let mut params = init.clone();
        let (mut iterations, mut stop) = (0, StopReason::MaxIterations);
        for round in 0..stage.icp_rounds {
            let weights = self.round_weights(stage, round);
            let corr = nearest_vertices(&frame.depth_cloud, &self.model.forward(&params)?.vertices);
            let inputs = self.inputs(frame, Some(&corr), contact, previous);
            let out: Minimized = minimize_projected(
                |x| {
                    let p = BodyParams::from_slice(x)?;
                    let e = total_rgbdp(self.model, &p, &inputs, &weights)?;
                    Ok((e.value, e.grad))
                },
                &params.to_vec(),
                &cfg,
                clamp_alpha,
            )?;
            params = BodyParams::from_slice(&out.params)?;
            iterations += out.iterations;
            stop = out.stop;
            if matches!(stop, StopReason::NonFinite { .. }) {
                break;
            }
        }
        Ok((params, iterations, stop))
    }

    /// Tries evenly spaced headings about the floor normal, centers the body
    /// on the cloud, refines the rigid placement against depth and keypoints
    /// and keeps the best.
    fn place(
        &self,
        frame: &ObservationFrame,
        body: &BodyParams,
        candidates: usize,
        stage: &StageConfig,
    ) -> Result<BodyParams> {
        if frame.depth_cloud.is_empty() {
            return Err(Error::Missing(
                "depth cloud for the initial placement".into(),
            ));
        }
        let n = frame.depth_cloud.len() as f64;
        let target = frame.depth_cloud.iter().sum::<Vector3<f64>>() / n;
        let rigid = StageConfig {
            optimizer: OptimizerConfig {
                max_iterations: 80,
                ..stage.optimizer
            },
            icp_rounds: 2,
            warmup_rounds: 0,
            warmup_depth_scale: 1.0,
        };
        let mut best: Option<(f64, BodyParams)> = None;
        for k in 0..candidates {
            let yaw = 2.0 * std::f64::consts::PI * k as f64 / candidates as f64;
            let mut p = body.clone();
            p.rotation = yaw * self.floor.normal;
            p.translation = Vector3::zeros();
            let verts = self.model.forward(&p)?.vertices;
            let centroid = verts.iter().sum::<Vector3<f64>>() / verts.len() as f64;
            p.translation = target - centroid;
            let (p, _, _) = self.icp(frame, None, None, &p, &rigid, RIGID)?;
            let e = self.evaluate(&p, frame, None, None)?.value;
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, p));
            }
        }
        Ok(best.expect("at least one heading candidate").1)
    }
}

fn contact_at(input: &SequenceInput, t: usize) -> Option<&DenseContact> {
    input.pressure.as_ref().map(|p| &p[t])
}

/// Evenly spaced indices into `0..n`, at most `k` of them.
fn spread(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|i| i * (n - 1) / (k - 1).max(1)).collect()
}

/// Fits the blend `alpha` and shape `beta` to an A-pose sequence. The pose
/// stays at the A-pose; each used frame gets its own global placement.
pub fn fit_shape(
    model: &BodyModel,
    apose: &SequenceInput,
    prior: Option<&GmmPosePrior>,
    cfg: &RgbdpConfig,
) -> Result<Shape> {
    cfg.validate()?;
    apose.validate()?;
    let ids = spread(apose.len(), cfg.shape_frames);
    if ids.iter().any(|&t| apose.frames[t].depth_cloud.is_empty()) {
        return Err(Error::Missing("depth clouds for shape fitting".into()));
    }
    let scene = Scene::new(model, None, prior, apose.floor, cfg);
    let start = BodyParams {
        theta: a_pose_theta(),
        alpha: cfg.initial_alpha,
        ..BodyParams::rest()
    };
    let mut placed = Vec::with_capacity(ids.len());
    for &t in &ids {
        placed.push(scene.place(&apose.frames[t], &start, cfg.yaw_candidates, &cfg.pose)?);
    }

    // x = [alpha, beta, (rotation, translation) per frame]
    const SHARED: usize = 1 + SHAPE_DIM;
    let mut x = vec![start.alpha];
    x.extend_from_slice(&start.beta);
    for p in &placed {
        x.extend(p.rotation.iter().chain(p.translation.iter()));
    }
    let unpack = |x: &[f64], i: usize| -> BodyParams {
        let o = SHARED + 6 * i;
        BodyParams {
            theta: start.theta.clone(),
            beta: x[1..SHARED].to_vec(),
            rotation: Vector3::new(x[o], x[o + 1], x[o + 2]),
            translation: Vector3::new(x[o + 3], x[o + 4], x[o + 5]),
            alpha: x[0],
        }
    };
    let opt = OptimizerConfig {
        parameter_mask: ParamMask::ALL,
        ..cfg.shape.optimizer
    };
    for round in 0..cfg.shape.icp_rounds {
        let current = Shape {
            alpha: x[0],
            beta: x[1..SHARED].to_vec(),
        };
        let scene = Scene::new(model, Some(&current), prior, apose.floor, cfg);
        let weights = scene.round_weights(&cfg.shape, round);
        let mut corr = Vec::with_capacity(ids.len());
        for (i, &t) in ids.iter().enumerate() {
            let verts = model.forward(&unpack(&x, i))?.vertices;
            corr.push(nearest_vertices(&apose.frames[t].depth_cloud, &verts));
        }
        let out = minimize_projected(
            |x| {
                let mut value = 0.0;
                let mut grad = vec![0.0; x.len()];
                for (i, &t) in ids.iter().enumerate() {
                    let inputs =
                        scene.inputs(&apose.frames[t], Some(&corr[i]), contact_at(apose, t), None);
                    let e = total_rgbdp(model, &unpack(x, i), &inputs, &weights)?;
                    value += e.value;
                    grad[0] += e.grad[layout::ALPHA];
                    for (g, s) in grad[1..SHARED].iter_mut().zip(&e.grad[layout::BETA]) {
                        *g += s;
                    }
                    let o = SHARED + 6 * i;
                    grad[o..o + 3].copy_from_slice(&e.grad[layout::ROTATION]);
                    grad[o + 3..o + 6].copy_from_slice(&e.grad[layout::TRANSLATION]);
                }
                Ok((value, grad))
            },
            &x,
            &opt,
            |x| x[0] = x[0].clamp(0.0, 1.0),
        )?;
        x = out.params;
        if matches!(out.stop, StopReason::NonFinite { .. }) {
            break;
        }
    }
    Ok(Shape {
        alpha: x[0],
        beta: x[1..SHARED].to_vec(),
    })
}

/// Fits pose and placement of one frame with the shape frozen, starting
/// from the A-pose centered on the cloud.
pub fn init_pose(
    model: &BodyModel,
    frame: &ObservationFrame,
    contact: Option<&DenseContact>,
    floor: &GroundPlane,
    shape: &Shape,
    prior: Option<&GmmPosePrior>,
    cfg: &RgbdpConfig,
) -> Result<BodyParams> {
    cfg.validate()?;
    frame.validate()?;
    let scene = Scene::new(model, Some(shape), prior, *floor, cfg);
    let start = BodyParams {
        theta: a_pose_theta(),
        beta: shape.beta.clone(),
        alpha: shape.alpha,
        ..BodyParams::rest()
    };
    let placed = scene.place(frame, &start, cfg.yaw_candidates, &cfg.pose)?;
    let (params, _, _) = scene.icp(frame, contact, None, &placed, &cfg.pose, ParamMask::POSE)?;
    Ok(params)
}

/// Frame-by-frame warm-started tracking. Each frame is fitted against the
/// previous accepted frame through the temporal contact term; a frame whose
/// optimization breaks down keeps the previous parameters.
pub fn track_sequence(
    model: &BodyModel,
    input: &SequenceInput,
    shape: &Shape,
    init: &BodyParams,
    prior: Option<&GmmPosePrior>,
    cfg: &RgbdpConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    input.validate()?;
    init.validate()?;
    let scene = Scene::new(model, Some(shape), prior, input.floor, cfg);
    let mut current = BodyParams {
        beta: shape.beta.clone(),
        alpha: shape.alpha,
        ..init.clone()
    };
    let mut out = FitResult {
        params: Vec::with_capacity(input.len()),
        energies: Vec::with_capacity(input.len()),
        diagnostics: Vec::with_capacity(input.len()),
    };
    let mut previous: Option<PreviousFrame> = None;
    for (t, frame) in input.frames.iter().enumerate() {
        let contact = contact_at(input, t);
        if cfg.extrapolate && t >= 2 {
            current = extrapolated(&out.params[t - 1], &out.params[t - 2]);
        }
        let before = scene.evaluate(&current, frame, contact, previous.as_ref())?;
        let fitted = scene.icp(
            frame,
            contact,
            previous.as_ref(),
            &current,
            &cfg.track,
            ParamMask::POSE,
        );
        let (params, iterations, stop, carried) = match fitted {
            Ok((p, it, stop)) if !matches!(stop, StopReason::NonFinite { .. }) => {
                (p, it, stop, false)
            }
            Ok((_, it, stop)) => (current.clone(), it, stop, true),
            Err(e) if e.is_validation() => return Err(e),
            Err(_) => (
                current.clone(),
                0,
                StopReason::NonFinite { iteration: 0 },
                true,
            ),
        };
        let after = scene.evaluate(&params, frame, contact, previous.as_ref())?;
        out.diagnostics.push(FrameDiagnostics {
            iterations,
            stop,
            initial_energy: before.value,
            final_energy: after.value,
            carried_forward: carried,
            skipped: false,
            dropped_residuals: after.skipped,
        });
        out.energies.push(after.breakdown);
        previous = Some(PreviousFrame::new(
            model,
            &params,
            &scene.planes,
            contact.cloned().unwrap_or_else(DenseContact::none),
        )?);
        current = params.clone();
        out.params.push(params);
    }
    Ok(out)
}

fn extrapolated(last: &BodyParams, before: &BodyParams) -> BodyParams {
    BodyParams {
        theta: last.theta.iter().zip(&before.theta).map(|(a, b)| 2.0 * a - b).collect(),
        rotation: 2.0 * last.rotation - before.rotation,
        translation: 2.0 * last.translation - before.translation,
        ..last.clone()
    }
}

/// Runs shape fitting on `apose`, initializes the first frame of `input`
/// and tracks the whole sequence.
pub fn fit_rgbdp(
    model: &BodyModel,
    apose: &SequenceInput,
    input: &SequenceInput,
    prior: Option<&GmmPosePrior>,
    cfg: &RgbdpConfig,
) -> Result<RgbdpFit> {
    let shape = fit_shape(model, apose, prior, cfg)?;
    input.validate()?;
    let init = init_pose(
        model,
        &input.frames[0],
        contact_at(input, 0),
        &input.floor,
        &shape,
        prior,
        cfg,
    )?;
    let result = track_sequence(model, input, &shape, &init, prior, cfg)?;
    Ok(RgbdpFit {
        shape,
        init,
        result,
    })
}
