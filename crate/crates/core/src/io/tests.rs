use std::io::Cursor;

use super::*;
use crate::error::Error;
use crate::body::{BodyModel, BodyParams};
use crate::energy::EnergyBreakdown;
use crate::fpp::FppPrediction;
use crate::metrics::MetricsReport;
use crate::optim::StopReason;
use crate::pipelines::{FitResult, FrameDiagnostics, SequenceInput};
use crate::pressure::{annotate_sequence, DenseContact, PressureFrame, SensorVertexMap};
use crate::synth::{default_camera, generate_motion, synthesize_observations, MotionFamily, MotionScript, NoiseSpec, BODY_WEIGHT};

fn synthetic(with_contact: bool) -> (SequenceInput, Vec<PressureFrame>) {
    let model = BodyModel::generic();
    let motion = generate_motion(&MotionScript::new(MotionFamily::Walk, 0.2, 3), &model).unwrap();
    let noise = NoiseSpec {
        keypoint_sigma: 1.0,
        depth_sigma: 0.003,
        cloud_dropout: 0.5,
        ..NoiseSpec::zero()
    };
    let mut syn = synthesize_observations(&motion, &model, &default_camera(), &noise, 1).unwrap();
    if with_contact {
        let map = SensorVertexMap::build(&model.adult);
        syn.input.pressure = Some(annotate_sequence(&syn.pressure, &map, BODY_WEIGHT).unwrap());
    }
    (syn.input, syn.pressure)
}

fn bytes(f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> Vec<u8> {
    let mut out = Vec::new();
    f(&mut out).unwrap();
    out
}

#[test]
fn sequence_container_round_trips_exactly() {
    for with_contact in [false, true] {
        let (seq, _) = synthetic(with_contact);
        let raw = bytes(|o| write_sequence(&seq, o));
        let back = read_sequence(Cursor::new(&raw)).unwrap();
        assert_eq!(back, seq);
        assert_eq!(bytes(|o| write_sequence(&back, o)), raw);
    }
}

#[test]
fn sequence_header_is_readable_text() {
    let (seq, _) = synthetic(false);
    let raw = bytes(|o| write_sequence(&seq, o));
    let first = raw.split(|&b| b == b'\n').next().unwrap();
    let header: serde_json::Value = serde_json::from_slice(first).unwrap();
    assert_eq!(header["format"], SEQUENCE_FORMAT);
    assert_eq!(header["frames"], seq.len());
    assert_eq!(header["version"], FORMAT_VERSION);
}

#[test]
fn per_frame_cameras_survive() {
    let (mut seq, _) = synthetic(false);
    seq.frames[2].cam.fx += 10.0;
    let back = read_sequence(Cursor::new(bytes(|o| write_sequence(&seq, o)))).unwrap();
    assert_eq!(back.frames[2].cam, seq.frames[2].cam);
    assert_eq!(back.frames[1].cam, seq.frames[1].cam);
}

#[test]
fn damaged_containers_are_rejected() {
    let (seq, _) = synthetic(true);
    let raw = bytes(|o| write_sequence(&seq, o));
    let truncated = &raw[..raw.len() - 8];
    assert!(read_sequence(Cursor::new(truncated)).is_err());
    let mut longer = raw.clone();
    longer.push(0);
    assert!(read_sequence(Cursor::new(&longer)).is_err());
    let text = String::from_utf8_lossy(&raw[..200]).replace(SEQUENCE_FORMAT, "contactcap-other");
    let mut renamed = text.into_bytes();
    renamed.extend_from_slice(&raw[200..]);
    assert!(matches!(read_sequence(Cursor::new(&renamed)), Err(Error::Format { .. })));
    assert!(read_sequence(Cursor::new(b"")).is_err());
}

#[test]
fn pressure_round_trips_in_both_encodings() {
    let (_, pressure) = synthetic(false);
    let text = bytes(|o| write_pressure_jsonl(&pressure, o));
    let bin = bytes(|o| write_pressure_binary(&pressure, o));
    assert_eq!(read_pressure(Cursor::new(&text)).unwrap(), pressure);
    assert_eq!(read_pressure(Cursor::new(&bin)).unwrap(), pressure);
    assert_eq!(bin.len(), 24 + pressure.len() * 8 * (1 + 2 * 242));
    assert!(read_pressure_binary(Cursor::new(&bin[..bin.len() - 1])).is_err());
    let mut bad = pressure.clone();
    bad[0].left.pop();
    assert!(write_pressure_jsonl(&bad, Vec::new()).is_err());
}

#[test]
fn record_count_must_match_the_header() {
    let c = vec![DenseContact::none(); 3];
    let raw = bytes(|o| write_contact(&c, o));
    assert_eq!(read_contact(Cursor::new(&raw)).unwrap(), c);
    let text = String::from_utf8(raw).unwrap();
    let dropped: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(read_contact(Cursor::new(dropped)).is_err());
    assert!(read_predictions(Cursor::new(text)).is_err());
}

#[test]
fn fit_results_round_trip() {
    let mut p = BodyParams::rest();
    p.theta[7] = 0.1 + 1e-13;
    p.translation.z = 3.0;
    let fit = FitResult {
        params: vec![p.clone(), BodyParams::rest()],
        energies: vec![
            EnergyBreakdown {
                total: 1.5,
                depth: 0.25,
                ..Default::default()
            },
            EnergyBreakdown::default(),
        ],
        diagnostics: vec![
            FrameDiagnostics {
                iterations: 12,
                stop: StopReason::Converged,
                initial_energy: 3.0,
                final_energy: 1.5,
                carried_forward: false,
                skipped: false,
                dropped_residuals: 0,
            },
            FrameDiagnostics {
                iterations: 0,
                stop: StopReason::NonFinite { iteration: 0 },
                initial_energy: 1.0,
                final_energy: 1.0,
                carried_forward: true,
                skipped: true,
                dropped_residuals: 4,
            },
        ],
    };
    let raw = bytes(|o| write_fit(&fit, o));
    assert_eq!(read_fit(Cursor::new(&raw)).unwrap(), fit);
    let csv = String::from_utf8(bytes(|o| write_energy_csv(&fit, o))).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "frame,total,depth,c_dense,keypoints_2d,c_temp,gmm,mimic,contact_joint,foot_consistency");
    assert_eq!(lines[1], "0,1.5,0.25,0,0,0,0,0,0,0");
    assert_eq!(lines.len(), 3);
}

#[test]
fn reports_round_trip() {
    let m = MetricsReport {
        mpjpe: 12.5,
        pmpjpe: 9.0,
        pve: 14.0,
        pve_feet: 20.0,
        traj: 33.3,
        mfce: 2.0,
        precision: 0.9,
        recall: 0.8,
        f1: 0.85,
        iou: 0.7,
        foot_jitter: 1.25,
    };
    let reports = vec![("walk".to_string(), m)];
    assert_eq!(read_report(Cursor::new(bytes(|o| write_report(&reports, o)))).unwrap(), reports);
    let csv = String::from_utf8(bytes(|o| write_report_csv(&reports, o))).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "walk,12.5,9,14,20,33.3,2,0.9,0.8,0.85,0.7,1.25");
}

#[test]
fn predictions_are_validated_on_read() {
    let mut p = FppPrediction::from_contact(&DenseContact::none());
    let raw = bytes(|o| write_predictions(std::slice::from_ref(&p), o));
    assert_eq!(read_predictions(Cursor::new(raw)).unwrap(), vec![p.clone()]);
    p.contact_prob[0] = 1.5;
    let raw = bytes(|o| write_predictions(&[p], o));
    assert!(read_predictions(Cursor::new(raw)).is_err());
}
