use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::body::{
    build_foot_planes, layout, BodyModel, BodyParams, Camera, KEYPOINT_JOINTS, NUM_JOINTS,
};
use crate::pressure::DenseContact;

struct Scene {
    model: BodyModel,
    cam: Camera,
    floor: GroundPlane,
}

fn scene() -> Scene {
    Scene {
        model: BodyModel::generic(),
        cam: Camera::new(500.0, 500.0, 320.0, 240.0).unwrap(),
        floor: GroundPlane::horizontal(-1.0),
    }
}

fn placed() -> BodyParams {
    let mut p = BodyParams::rest();
    p.translation = Vector3::new(0.0, -1.0, 3.5);
    p
}

fn random_params(rng: &mut ChaCha8Rng) -> BodyParams {
    let mut p = placed();
    p.theta
        .iter_mut()
        .for_each(|t| *t = rng.random_range(-0.3..0.3));
    p.beta
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-1.0..1.0));
    p.rotation = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
    p.translation += Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    p.alpha = rng.random_range(0.1..0.9);
    p
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let fp = f(&x);
            x[i] = x0 - h;
            let fm = f(&x);
            x[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn check_body_term(params: &BodyParams, term: impl Fn(&BodyParams) -> Term) {
    let t = term(params);
    let fd = central_difference(
        |x| term(&BodyParams::from_slice(x).unwrap()).value,
        &params.to_vec(),
    );
    let e = rel_err(&t.grad, &fd);
    assert!(e <= 1e-4, "relative gradient error {e}");
}

fn keypoints_of(s: &Scene, p: &BodyParams) -> Vec<Vector2<f64>> {
    let posed = s.model.forward(p).unwrap();
    KEYPOINT_JOINTS
        .iter()
        .map(|&j| s.cam.project_point(&posed.joints[j]).pixel().unwrap())
        .collect()
}

#[test]
fn depth_zero_on_own_vertices() {
    let s = scene();
    let p = placed();
    let cloud = s.model.forward(&p).unwrap().vertices;
    let t = e_depth(&s.model, &p, &cloud, None, Some(DEFAULT_DEPTH_CAP)).unwrap();
    assert_eq!(t.value, 0.0);
    assert!(t.grad.iter().all(|g| *g == 0.0));
}

#[test]
fn depth_one_meter_shift() {
    let s = scene();
    let p = placed();
    let verts = s.model.forward(&p).unwrap().vertices;
    let front = verts
        .iter()
        .min_by(|a, b| a.z.partial_cmp(&b.z).unwrap())
        .copied()
        .unwrap();
    let mut moved = p.clone();
    moved.translation.z += 1.0;
    let t = e_depth(&s.model, &moved, &[front], None, None).unwrap();
    assert!((t.value - 1.0).abs() < 1e-12, "{}", t.value);
    let capped = e_depth(&s.model, &moved, &[front], None, Some(0.05)).unwrap();
    assert!((capped.value - 0.0025).abs() < 1e-15);
    assert!(capped.grad.iter().all(|g| *g == 0.0));
}

#[test]
fn depth_empty_cloud_flags() {
    let s = scene();
    let t = e_depth(&s.model, &placed(), &[], None, None).unwrap();
    assert_eq!((t.value, t.skipped), (0.0, 1));
    assert!(e_depth(
        &s.model,
        &placed(),
        &[Vector3::zeros()],
        Some(&[5000]),
        None
    )
    .is_err());
}

#[test]
fn keypoint_examples() {
    let s = scene();
    let p = placed();
    let mut kp = keypoints_of(&s, &p);
    let conf = vec![1.0; 17];
    assert!(e_2d(&s.model, &p, &s.cam, &kp, &conf).unwrap().value < 1e-18);
    kp[3] += Vector2::new(3.0, 4.0);
    let t = e_2d(&s.model, &p, &s.cam, &kp, &conf).unwrap();
    assert!((t.value - 25.0).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let far = random_params(&mut rng);
    let zero = e_2d(&s.model, &far, &s.cam, &kp, &[0.0; 17]).unwrap();
    assert_eq!(zero.value, 0.0);
}

#[test]
fn keypoint_behind_camera_is_skipped() {
    let s = scene();
    let mut p = placed();
    p.translation.z = -3.0;
    let kp = vec![Vector2::new(320.0, 240.0); 17];
    let t = e_2d(&s.model, &p, &s.cam, &kp, &[1.0; 17]).unwrap();
    assert_eq!(t.skipped, 17);
    assert_eq!(t.value, 0.0);
}

#[test]
fn c_dense_examples() {
    let s = scene();
    let p = placed();
    let none = DenseContact::none();
    assert_eq!(e_c_dense(&s.model, &p, &none, &s.floor).unwrap().value, 0.0);
    let posed = s.model.forward(&p).unwrap();
    let v = s.model.foot_vertex_ids()[40];
    let mut labels = vec![false; 192];
    labels[40] = true;
    let contact = DenseContact::from_labels(labels);
    let floor = GroundPlane::horizontal(posed.vertices[v].y - 0.1);
    let t = e_c_dense(&s.model, &p, &contact, &floor).unwrap();
    assert!((t.value - 0.1).abs() < 1e-12);
    let on_floor = GroundPlane::horizontal(posed.vertices[v].y);
    assert_eq!(
        e_c_dense(&s.model, &p, &contact, &on_floor).unwrap().value,
        0.0
    );
}

#[test]
fn c_temp_examples() {
    let s = scene();
    let planes = build_foot_planes(&s.model.adult);
    let p = placed();
    let all = DenseContact::from_labels(vec![true; 192]);
    assert_eq!(
        e_c_temp(&s.model, &p, &p, &all, &all, &planes)
            .unwrap()
            .value,
        0.0
    );

    let mut moved = p.clone();
    moved.translation += Vector3::new(0.3, 0.0, 0.4);
    let mut a = vec![false; 192];
    let mut b = vec![false; 192];
    a[10] = true;
    b[11] = true;
    let (ca, cb) = (
        DenseContact::from_labels(a.clone()),
        DenseContact::from_labels(b),
    );
    assert_eq!(
        e_c_temp(&s.model, &moved, &p, &ca, &cb, &planes)
            .unwrap()
            .value,
        0.0
    );
    let t = e_c_temp(&s.model, &moved, &p, &ca, &ca, &planes).unwrap();
    assert!((t.value - 0.5).abs() < 1e-12);
}

#[test]
fn c_temp_ignores_non_contacted_labels() {
    let s = scene();
    let planes = build_foot_planes(&s.model.adult);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (p, q) = (random_params(&mut rng), random_params(&mut rng));
    let mut a = vec![false; 192];
    (0..60).for_each(|i| a[i] = true);
    let mut b = a.clone();
    let ca = DenseContact::from_labels(a.clone());
    // Relabel vertices outside the intersection.
    (100..150).for_each(|i| b[i] = true);
    let cb = DenseContact::from_labels(b);
    let v1 = e_c_temp(&s.model, &p, &q, &ca, &ca, &planes).unwrap();
    let v2 = e_c_temp(&s.model, &p, &q, &ca, &cb, &planes).unwrap();
    assert_eq!(v1, v2);
}

#[test]
fn mimic_examples() {
    let a = vec![0.2; 72];
    assert_eq!(e_mimic(&a, &a).unwrap().value, 0.0);
    let b = vec![0.1; 72];
    let t = e_mimic(&a, &b).unwrap();
    assert!((t.value - 0.72).abs() < 1e-12);
    let fd = central_difference(|x| e_mimic(x, &b).unwrap().value, &a);
    assert!(rel_err(&t.grad, &fd) < 1e-8);
    assert!(t.grad.iter().all(|g| (g - 0.2).abs() < 1e-12));
}

#[test]
fn contact_joint_examples() {
    let s = scene();
    let p = placed();
    let j = s.model.forward(&p).unwrap().joints[7];
    assert_eq!(e_contact_joint(&s.model, &p, &[(7, j)]).unwrap().value, 0.0);
    let one = e_contact_joint(&s.model, &p, &[(7, j + Vector3::new(0.0, 0.0, 0.2))]).unwrap();
    assert!((one.value - 0.04).abs() < 1e-12);
    let two = e_contact_joint(&s.model, &p, &[(7, j + Vector3::new(0.0, 0.0, 0.4))]).unwrap();
    assert!((two.value - 4.0 * one.value).abs() < 1e-12);
    assert_eq!(e_contact_joint(&s.model, &p, &[]).unwrap().value, 0.0);
    assert!(e_contact_joint(&s.model, &p, &[(NUM_JOINTS, j)]).is_err());
}

#[test]
fn foot_consistency_examples() {
    let s = scene();
    let p = placed();
    assert_eq!(
        e_foot_consistency(&s.model, &p, &p, &[7, 8]).unwrap().value,
        0.0
    );
    let mut moved = p.clone();
    moved.translation += Vector3::new(0.3, 0.0, 0.4);
    let t = e_foot_consistency(&s.model, &moved, &p, &[7]).unwrap();
    assert!((t.value - 0.25).abs() < 1e-12);
    assert_eq!(
        e_foot_consistency(&s.model, &moved, &p, &[]).unwrap().value,
        0.0
    );
}

#[test]
fn gradients_match_finite_differences() {
    let s = scene();
    let planes = build_foot_planes(&s.model.adult);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..3 {
        let p = random_params(&mut rng);
        let q = random_params(&mut rng);
        let posed = s.model.forward(&q).unwrap();
        let cloud: Vec<_> = posed
            .vertices
            .iter()
            .step_by(9)
            .map(|v| v + Vector3::new(0.01, -0.01, 0.02))
            .collect();
        let pairs = nearest_vertices(&cloud, &s.model.forward(&p).unwrap().vertices);
        check_body_term(&p, |x| {
            e_depth(&s.model, x, &cloud, Some(&pairs), None).unwrap()
        });
        let kp = keypoints_of(&s, &q);
        let conf: Vec<f64> = (0..17).map(|_| rng.random_range(0.2..1.0)).collect();
        check_body_term(&p, |x| e_2d(&s.model, x, &s.cam, &kp, &conf).unwrap());
        let labels: Vec<bool> = (0..192).map(|_| rng.random_bool(0.5)).collect();
        let contact = DenseContact::from_labels(labels);
        check_body_term(&p, |x| e_c_dense(&s.model, x, &contact, &s.floor).unwrap());
        check_body_term(&p, |x| {
            e_c_temp(&s.model, x, &q, &contact, &contact, &planes).unwrap()
        });
        let anchors = [(7, posed.joints[7]), (11, posed.joints[11])];
        check_body_term(&p, |x| e_contact_joint(&s.model, x, &anchors).unwrap());
        check_body_term(&p, |x| {
            e_foot_consistency(&s.model, x, &q, &[7, 10, 8]).unwrap()
        });
    }
}

fn small_prior(rng: &mut ChaCha8Rng) -> GmmPosePrior {
    let means: Vec<_> = (0..3)
        .map(|_| DVector::from_fn(72, |_, _| rng.random_range(-0.3..0.3)))
        .collect();
    let covs: Vec<_> = (0..3)
        .map(|_| {
            let a = DMatrix::from_fn(72, 72, |_, _| rng.random_range(-0.05..0.05));
            &a * a.transpose() + DMatrix::identity(72, 72) * 0.02
        })
        .collect();
    GmmPosePrior::new(&[0.5, 0.3, 0.2], &means, &covs).unwrap()
}

#[test]
fn gmm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let prior = small_prior(&mut rng);
    for _ in 0..3 {
        let theta: Vec<f64> = (0..72).map(|_| rng.random_range(-0.3..0.3)).collect();
        let t = e_gmm(&theta, &prior).unwrap();
        let fd = central_difference(|x| e_gmm(x, &prior).unwrap().value, &theta);
        assert!(rel_err(&t.grad, &fd) <= 1e-4);
    }
}

fn rgbdp_fixture(
    s: &Scene,
    rng: &mut ChaCha8Rng,
) -> (
    BodyParams,
    Vec<Vector3<f64>>,
    Vec<Vector2<f64>>,
    DenseContact,
    PreviousFrame,
    GmmPosePrior,
) {
    let planes = build_foot_planes(&s.model.adult);
    let p = random_params(rng);
    let q = random_params(rng);
    let cloud: Vec<_> = s
        .model
        .forward(&q)
        .unwrap()
        .vertices
        .into_iter()
        .step_by(11)
        .collect();
    let kp = keypoints_of(s, &q);
    let contact = DenseContact::from_labels((0..192).map(|i| i % 3 != 0).collect());
    let prev = PreviousFrame::new(&s.model, &q, &planes, contact.clone()).unwrap();
    (p, cloud, kp, contact, prev, small_prior(rng))
}

#[test]
fn rgbdp_total_recomposes_terms() {
    let s = scene();
    let planes = build_foot_planes(&s.model.adult);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, cloud, kp, contact, prev, prior) = rgbdp_fixture(&s, &mut rng);
    let conf = vec![0.8; 17];
    let pairs = nearest_vertices(&cloud, &s.model.forward(&p).unwrap().vertices);
    let inputs = RgbdpInputs {
        cam: &s.cam,
        keypoints: &kp,
        confidences: &conf,
        cloud: &cloud,
        correspondences: Some(&pairs),
        depth_cap: Some(0.05),
        contact: Some(&contact),
        floor: &s.floor,
        planes: &planes,
        prior: Some(&prior),
        previous: Some(&prev),
    };
    let w = EnergyWeights::default();
    let total = total_rgbdp(&s.model, &p, &inputs, &w).unwrap();

    let terms = [
        (
            w.lambda_depth,
            e_depth(&s.model, &p, &cloud, Some(&pairs), Some(0.05)).unwrap(),
        ),
        (
            w.lambda_c_dense,
            e_c_dense(&s.model, &p, &contact, &s.floor).unwrap(),
        ),
        (w.lambda_2d, e_2d(&s.model, &p, &s.cam, &kp, &conf).unwrap()),
        (w.lambda_c_temp, {
            // Previous frame built from the same params as the fixture.
            let mut rng2 = ChaCha8Rng::seed_from_u64(5);
            let _ = random_params(&mut rng2);
            let q = random_params(&mut rng2);
            e_c_temp(&s.model, &p, &q, &contact, &contact, &planes).unwrap()
        }),
    ];
    let mut value = 0.0;
    let mut grad = vec![0.0; layout::DIM];
    for (l, t) in &terms {
        value += l * t.value;
        grad.iter_mut().zip(&t.grad).for_each(|(g, x)| *g += l * x);
    }
    let gmm = e_gmm(&p.theta, &prior).unwrap();
    value += w.lambda_gmm * gmm.value;
    grad[layout::THETA]
        .iter_mut()
        .zip(&gmm.grad)
        .for_each(|(g, x)| *g += w.lambda_gmm * x);
    assert!((total.value - value).abs() < 1e-9 * value.abs().max(1.0));
    assert!(rel_err(&total.grad, &grad) < 1e-10);

    let mut doubled = w;
    doubled.lambda_c_dense *= 2.0;
    let d = total_rgbdp(&s.model, &p, &inputs, &doubled).unwrap();
    let expected = total.value + w.lambda_c_dense * terms[1].1.value;
    assert!((d.value - expected).abs() < 1e-9 * expected.abs());

    let zero = total_rgbdp(&s.model, &p, &inputs, &EnergyWeights::zero()).unwrap();
    assert_eq!(zero.value, 0.0);
    assert!(zero.grad.iter().all(|g| *g == 0.0));

    let fd = central_difference(
        |x| {
            total_rgbdp(&s.model, &BodyParams::from_slice(x).unwrap(), &inputs, &w)
                .unwrap()
                .value
        },
        &p.to_vec(),
    );
    assert!(rel_err(&total.grad, &fd) <= 1e-4);
}

#[test]
fn vp_total_recomposes_terms() {
    let s = scene();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_params(&mut rng);
    let q = random_params(&mut rng);
    let prev = s.model.forward(&q).unwrap().joints;
    let kp = keypoints_of(&s, &q);
    let conf = vec![0.9; 17];
    let theta_init = q.theta.clone();
    let anchors = [(7, prev[7] + Vector3::new(0.01, 0.0, 0.0)), (10, prev[10])];
    let contacted = [7, 10];
    let inputs = VpInputs {
        cam: &s.cam,
        keypoints: &kp,
        confidences: &conf,
        theta_init: &theta_init,
        anchors: &anchors,
        contacted_joints: &contacted,
        previous_joints: Some(&prev),
    };
    let w = EnergyWeights::default();
    let total = total_vp(&s.model, &p, &inputs, &w).unwrap();
    let e2 = e_2d(&s.model, &p, &s.cam, &kp, &conf).unwrap();
    let ep = e_mimic(&p.theta, &theta_init).unwrap();
    let e3 = e_contact_joint(&s.model, &p, &anchors).unwrap();
    let et = e_foot_consistency(&s.model, &p, &q, &contacted).unwrap();
    let value = w.lambda_2d * e2.value
        + w.lambda_p * ep.value
        + w.lambda_3d * e3.value
        + w.lambda_t * et.value;
    assert!((total.value - value).abs() < 1e-9 * value.max(1.0));
    let mut grad = vec![0.0; layout::DIM];
    for (l, t) in [(w.lambda_2d, &e2), (w.lambda_3d, &e3), (w.lambda_t, &et)] {
        grad.iter_mut().zip(&t.grad).for_each(|(g, x)| *g += l * x);
    }
    grad[layout::THETA]
        .iter_mut()
        .zip(&ep.grad)
        .for_each(|(g, x)| *g += w.lambda_p * x);
    assert!(rel_err(&total.grad, &grad) < 1e-10);

    let mut no_contact = w;
    no_contact.lambda_3d = 0.0;
    no_contact.lambda_t = 0.0;
    let base = total_vp(&s.model, &p, &inputs, &no_contact).unwrap();
    assert!((base.value - (w.lambda_2d * e2.value + ep.value)).abs() < 1e-9 * base.value.max(1.0));
    assert_eq!(
        total_vp(&s.model, &p, &inputs, &EnergyWeights::zero())
            .unwrap()
            .value,
        0.0
    );
}
