use super::*;
use crate::metrics::contact_prf_iou;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mini() -> FppConfig {
    FppConfig {
        num_keypoints: 3,
        conv_channels: [2, 3],
        kernel: 3,
        feature_width: 8,
        hidden_width: 4,
        decoder_width: 5,
        outputs: 6,
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, steps: usize, width: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn tensor<'a>(model: &'a FppModel, name: &str) -> (&'a [f64], Vec<usize>) {
    let s = model.layout().iter().find(|s| s.name == name).unwrap();
    (&model.params()[s.offset..s.offset + s.len()], s.shape.clone())
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop evaluation of one frame at a time, written from the layer
/// definitions without the batched code path.
fn unrolled(model: &FppModel, frames: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let c = model.config;
    let (d, [c1, c2], k) = (c.input_dim(), c.conv_channels, c.kernel as isize);
    let (f, h, m, o) = (c.feature_width, c.hidden_width, c.decoder_width, c.outputs);
    let (w1, _) = tensor(model, "conv1.weight");
    let (b1, _) = tensor(model, "conv1.bias");
    let (w2, _) = tensor(model, "conv2.weight");
    let (b2, _) = tensor(model, "conv2.bias");
    let (wp, _) = tensor(model, "proj.weight");
    let (bp, _) = tensor(model, "proj.bias");
    let (wx, _) = tensor(model, "gru.input_weight");
    let (bx, _) = tensor(model, "gru.input_bias");
    let (uh, _) = tensor(model, "gru.hidden_weight");
    let (bh, _) = tensor(model, "gru.hidden_bias");
    let (wd1, _) = tensor(model, "decoder1.weight");
    let (bd1, _) = tensor(model, "decoder1.bias");
    let (wd2, _) = tensor(model, "decoder2.weight");
    let (bd2, _) = tensor(model, "decoder2.bias");
    let conv = |x: &dyn Fn(isize, usize) -> f64, cin: usize, cout: usize, w: &[f64], b: &[f64]| {
        let mut y = vec![vec![0.0; cout]; d];
        for (l, row) in y.iter_mut().enumerate() {
            for (co, v) in row.iter_mut().enumerate() {
                let mut acc = b[co];
                for tap in 0..k {
                    let src = l as isize + tap - k / 2;
                    if src < 0 || src >= d as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += w[(tap as usize * cin + ci) * cout + co] * x(src, ci);
                    }
                }
                *v = acc.max(0.0);
            }
        }
        y
    };
    let mut state = vec![0.0; h];
    let mut out = Vec::new();
    for frame in frames {
        let a1 = conv(&|l, _| frame[l as usize], 1, c1, w1, b1);
        let a2 = conv(&|l, ci| a1[l as usize][ci], c1, c2, w2, b2);
        let flat: Vec<f64> = a2.concat();
        let feat: Vec<f64> = (0..f)
            .map(|j| (bp[j] + (0..d * c2).map(|i| flat[i] * wp[i * f + j]).sum::<f64>()).max(0.0))
            .collect();
        let gx: Vec<f64> = (0..3 * h)
            .map(|j| bx[j] + (0..f).map(|i| feat[i] * wx[i * 3 * h + j]).sum::<f64>())
            .collect();
        let gh: Vec<f64> = (0..3 * h)
            .map(|j| bh[j] + (0..h).map(|i| state[i] * uh[i * 3 * h + j]).sum::<f64>())
            .collect();
        state = (0..h)
            .map(|j| {
                let z = sig(gx[j] + gh[j]);
                let r = sig(gx[h + j] + gh[h + j]);
                let n = (gx[2 * h + j] + r * gh[2 * h + j]).tanh();
                (1.0 - z) * n + z * state[j]
            })
            .collect();
        let dec: Vec<f64> = (0..m)
            .map(|j| (bd1[j] + (0..h).map(|i| state[i] * wd1[i * m + j]).sum::<f64>()).max(0.0))
            .collect();
        let logits: Vec<f64> = (0..2 * o)
            .map(|j| bd2[j] + (0..m).map(|i| dec[i] * wd2[i * 2 * o + j]).sum::<f64>())
            .collect();
        out.push((
            logits[..o].iter().map(|&z| sig(z)).collect(),
            logits[o..].iter().map(|&z| (1.0 + z.exp()).ln()).collect(),
        ));
    }
    out
}

#[test]
fn center_and_corners_normalize_to_unit_square() {
    let size = [640.0, 480.0];
    let frame = KeypointFrame2D {
        positions: vec![Vector2::new(320.0, 240.0), Vector2::new(0.0, 0.0), Vector2::new(640.0, 480.0)],
        confidences: vec![1.0, 0.5, 0.0],
    };
    let x = normalize_keypoints(&frame, size).unwrap();
    assert_eq!(x, vec![0.0, 0.0, -1.0, -1.0, 1.0, 1.0, 1.0, 0.5, 0.0]);
}

#[test]
fn normalization_round_trips() {
    let size = [640.0, 480.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let p = Vector2::new(rng.random_range(-50.0..700.0), rng.random_range(-50.0..500.0));
        let frame = KeypointFrame2D {
            positions: vec![p],
            confidences: vec![0.7],
        };
        let x = normalize_keypoints(&frame, size).unwrap();
        let back = denormalize_position(Vector2::new(x[0], x[1]), size);
        assert!((back - p).norm() < 1e-9);
    }
}

#[test]
fn normalization_rejects_bad_frames() {
    let frame = KeypointFrame2D {
        positions: vec![Vector2::new(1.0, 1.0)],
        confidences: vec![1.5],
    };
    assert!(normalize_keypoints(&frame, [640.0, 480.0]).is_err());
    let ok = KeypointFrame2D {
        positions: vec![Vector2::new(1.0, 1.0)],
        confidences: vec![1.0],
    };
    assert!(normalize_keypoints(&ok, [0.0, 480.0]).is_err());
}

#[test]
fn production_widths_and_parameter_count() {
    let c = FppConfig::default();
    let (d, k, c1, c2, f, h, m, o) = (51, 3, 16, 16, 2048, 484, 256, 192);
    let expected = k * c1 + c1 + k * c1 * c2 + c2 + d * c2 * f + f + 2 * (3 * h) + f * 3 * h + h * 3 * h + h * m + m + m * 2 * o + 2 * o;
    assert_eq!((c.feature_width, c.hidden_width, c.outputs), (2048, 484, 192));
    assert_eq!(c.parameter_count(), expected);
    let layout = c.layout();
    assert_eq!(layout.last().map(|s| s.offset + s.len()), Some(expected));
}

#[test]
fn zero_model_outputs_squash_of_zero() {
    let model = FppModel::zeros(mini()).unwrap();
    let out = forward_sequence(&model, &[vec![0.0; 9]]).unwrap();
    assert!(out[0].contact_prob.iter().all(|&p| p == 0.5));
    assert!(out[0].pressure.iter().all(|&p| (p - 2f64.ln()).abs() < 1e-15));
}

#[test]
fn matches_unrolled_scalar_evaluation() {
    let model = FppModel::new(mini(), 5).unwrap();
    let frames = random_inputs(&mut ChaCha8Rng::seed_from_u64(6), 7, 9);
    let batched = forward_sequence(&model, &frames).unwrap();
    for (b, (c, p)) in batched.iter().zip(unrolled(&model, &frames)) {
        for (x, y) in b.contact_prob.iter().zip(&c).chain(b.pressure.iter().zip(&p)) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn forward_is_causal() {
    let model = FppModel::new(mini(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames = random_inputs(&mut rng, 10, 9);
    let mut altered = frames.clone();
    for f in &mut altered[6..] {
        *f = random_inputs(&mut rng, 1, 9).remove(0);
    }
    let a = forward_sequence(&model, &frames).unwrap();
    let b = forward_sequence(&model, &altered).unwrap();
    assert_eq!(a[..6], b[..6]);
    assert_ne!(a[6..], b[6..]);
}

#[test]
fn forward_rejects_width_mismatch_and_empty_input() {
    let model = FppModel::zeros(mini()).unwrap();
    assert!(matches!(forward_sequence(&model, &[vec![0.0; 8]]), Err(Error::LengthMismatch { .. })));
    assert!(forward_sequence(&model, &[]).is_err());
}

fn contact(labels: Vec<bool>, p_norm: Vec<f64>) -> DenseContact {
    DenseContact { p_norm, labels }
}

#[test]
fn loss_closed_forms() {
    let labels: Vec<bool> = (0..192).map(|i| i % 3 == 0).collect();
    let target: Vec<f64> = (0..192).map(|i| i as f64 / 191.0).collect();
    let perfect = FppPrediction {
        contact_prob: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
        pressure: target.clone(),
    };
    let gt = contact(labels.clone(), target.clone());
    assert!(loss(&perfect, &gt).unwrap() <= 1e-6);
    let half = FppPrediction {
        contact_prob: vec![0.5; 192],
        pressure: target.clone(),
    };
    assert!((loss(&half, &gt).unwrap() - 2f64.ln()).abs() < 1e-12);
    let off = FppPrediction {
        contact_prob: perfect.contact_prob.clone(),
        pressure: target.iter().map(|t| t + 0.1).collect(),
    };
    let bce = -(1.0 - PROBABILITY_CLAMP).ln();
    assert!((loss(&off, &gt).unwrap() - (0.01 + bce)).abs() < 1e-12);
}

#[test]
fn training_loss_matches_public_loss() {
    let model = FppModel::new(mini(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let seq = FppSequence {
        inputs: random_inputs(&mut rng, 5, 9),
        contact: (0..5).map(|_| (0..6).map(|_| rng.random_bool(0.5)).collect()).collect(),
        pressure: (0..5).map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
    };
    let preds = forward_sequence(&model, &seq.inputs).unwrap();
    let direct: f64 = preds
        .iter()
        .zip(seq.contact.iter().zip(&seq.pressure))
        .map(|(p, (c, q))| loss(p, &contact(c.clone(), q.clone())).unwrap())
        .sum::<f64>()
        / 5.0;
    let (batched, _) = loss_and_gradient(&model, std::slice::from_ref(&seq)).unwrap();
    assert!((direct - batched).abs() < 1e-12);
}

#[test]
fn backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Random biases keep every unit off the ReLU kink.
    let n = mini().parameter_count();
    let model = FppModel::from_params(mini(), (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let data: Vec<FppSequence> = [4, 6]
        .iter()
        .map(|&n| FppSequence {
            inputs: random_inputs(&mut rng, n, 9),
            contact: (0..n).map(|_| (0..6).map(|_| rng.random_bool(0.4)).collect()).collect(),
            pressure: (0..n).map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
        })
        .collect();
    let (_, grad) = loss_and_gradient(&model, &data).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..model.params().len() {
        let mut plus = model.clone();
        plus.params_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut()[i] -= h;
        let fd = (loss_and_gradient(&plus, &data).unwrap().0 - loss_and_gradient(&minus, &data).unwrap().0) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

/// Contact of each output is fixed by one input coordinate crossing zero.
fn separable(rng: &mut ChaCha8Rng, sequences: usize, len: usize, cfg: &FppConfig) -> Vec<FppSequence> {
    let d = cfg.input_dim();
    (0..sequences)
        .map(|_| {
            let phase: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..6.3)).collect();
            let rate: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..0.4)).collect();
            let inputs: Vec<Vec<f64>> = (0..len)
                .map(|t| (0..d).map(|i| (phase[i] + rate[i] * t as f64).sin()).collect())
                .collect();
            let contact = inputs
                .iter()
                .map(|x| (0..cfg.outputs).map(|o| x[o % d] > 0.0).collect())
                .collect();
            let pressure = inputs
                .iter()
                .map(|x| (0..cfg.outputs).map(|o| x[o % d].max(0.0)).collect())
                .collect();
            FppSequence { inputs, contact, pressure }
        })
        .collect()
}

fn small() -> FppConfig {
    FppConfig {
        num_keypoints: 2,
        conv_channels: [4, 4],
        kernel: 3,
        feature_width: 32,
        hidden_width: 16,
        decoder_width: 16,
        outputs: 4,
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        seed: 4,
        learning_rate: 3e-3,
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_task_reaches_high_f1_with_decreasing_loss() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let train_set = separable(&mut rng, 12, 64, &cfg);
    let held_out = separable(&mut rng, 4, 64, &cfg);
    let model = FppModel::new(cfg, 31).unwrap();
    let (trained, report) = train(&model, &train_set, Some(&held_out), &train_cfg(40)).unwrap();
    let smoothed: Vec<f64> = report.epochs[..11].windows(2).map(|w| 0.5 * (w[0].train_loss + w[1].train_loss)).collect();
    assert!(smoothed.windows(2).all(|w| w[1] < w[0]), "{smoothed:?}");
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for seq in &held_out {
        for (p, c) in forward_sequence(&trained, &seq.inputs).unwrap().iter().zip(&seq.contact) {
            pred.push(p.labels());
            gt.push(c.clone());
        }
    }
    let scores = contact_prf_iou(&pred, &gt).unwrap();
    assert!(scores.f1 >= 0.95, "{scores:?}");
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let cfg = small();
    let data = separable(&mut ChaCha8Rng::seed_from_u64(40), 2, 20, &cfg);
    let model = FppModel::new(cfg, 41).unwrap();
    let (same, report) = train(&model, &data, None, &train_cfg(0)).unwrap();
    assert_eq!(same, model);
    assert!(report.epochs.is_empty() && report.best_epoch.is_none());
}

#[test]
fn training_never_returns_worse_validation_loss() {
    let cfg = small();
    let data = separable(&mut ChaCha8Rng::seed_from_u64(50), 3, 40, &cfg);
    let model = FppModel::new(cfg, 51).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.5,
        ..train_cfg(3)
    };
    let (out, report) = train(&model, &data, None, &tc).unwrap();
    assert!(dataset_loss(&out, &data, &tc).unwrap() <= report.initial_validation_loss);
}

#[test]
fn training_is_seed_deterministic() {
    let cfg = small();
    let data = separable(&mut ChaCha8Rng::seed_from_u64(60), 3, 40, &cfg);
    let model = FppModel::new(cfg, 61).unwrap();
    let a = train(&model, &data, None, &train_cfg(2)).unwrap();
    let b = train(&model, &data, None, &train_cfg(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_rejects_malformed_sets() {
    let cfg = small();
    let model = FppModel::new(cfg, 1).unwrap();
    assert!(train(&model, &[], None, &train_cfg(1)).is_err());
    let mut data = separable(&mut ChaCha8Rng::seed_from_u64(2), 1, 10, &cfg);
    data[0].contact.pop();
    assert!(train(&model, &data, None, &train_cfg(1)).is_err());
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let model = FppModel::new(mini(), 70).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), model);
    let mut again = Vec::new();
    write_checkpoint(&model, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = FppModel::new(mini(), 71).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&model, &mut buf).unwrap();
    assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(read_checkpoint(bad_magic.as_slice()).is_err());
    let mut trailing = buf.clone();
    trailing.push(0);
    assert!(read_checkpoint(trailing.as_slice()).is_err());
    let mut bad_version = buf;
    bad_version[8] = 9;
    assert!(read_checkpoint(bad_version.as_slice()).is_err());
}
