use std::io::BufRead;
use std::path::Path;

use super::config::{
    exists, require, AnnotateConfig, Dataset, EvaluateConfig, FitRgbdpConfig, PredictConfig, PressureEncoding,
    SynthConfig, TrainFppConfig, VpRunConfig,
};
use crate::body::{BodyModel, BodyParams};
use crate::energy::{EnergyWeights, GmmPosePrior};
use crate::error::{Error, Result};
use crate::fpp::{load_checkpoint, predict_keypoints, save_checkpoint, train, FppModel, FppPrediction, FppSequence};
use crate::io::{self, GroundTruthRecord, RecordHeader};
use crate::metrics::evaluate_sequence;
use crate::pipelines::{fit_rgbdp, vp_optimize, SequenceInput};
use crate::pressure::{annotate_sequence, estimate_body_weight, DenseContact, SensorVertexMap};
use crate::synth::{generate_motion, synthesize_initial_estimates, synthesize_observations};

pub const SEQUENCE_FILE: &str = "sequence.ccs";
pub const PRESSURE_JSONL_FILE: &str = "pressure.jsonl";
pub const PRESSURE_BINARY_FILE: &str = "pressure.bin";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const CONTACT_FILE: &str = "contact.jsonl";
pub const FIT_FILE: &str = "fit.jsonl";
pub const ENERGY_FILE: &str = "energies.csv";
pub const SHAPE_FILE: &str = "shape.json";
pub const CHECKPOINT_FILE: &str = "fpp.ckpt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ACCELERATION_FILE: &str = "foot_acceleration.csv";

/// Overrides shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub seed: Option<u64>,
    pub weights: Vec<(String, f64)>,
}

impl Common {
    fn apply_weights(&self, w: &mut EnergyWeights) -> Result<()> {
        for (k, v) in &self.weights {
            w.set(k, *v)?;
        }
        Ok(())
    }

    fn no_weights(&self, command: &str) -> Result<()> {
        if self.weights.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "--weights-override does not apply to `{command}`"
            )))
        }
    }
}

fn read_sequence(path: &Path) -> Result<SequenceInput> {
    io::read_sequence(io::open(path)?)
}

fn format_of(path: &Path) -> Result<String> {
    let mut first = String::new();
    io::open(path)?.read_line(&mut first)?;
    let header: RecordHeader = serde_json::from_str(&first)
        .map_err(|e| Error::format("record file", format!("{}: {e}", path.display())))?;
    Ok(header.format)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn synth(cfg: &SynthConfig, common: &Common, out: &Path) -> Result<()> {
    common.no_weights("synth")?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let model = BodyModel::generic();
    let mut script = cfg.motion.clone();
    script.seed = seed;
    let motion = generate_motion(&script, &model)?;
    let mut syn = synthesize_observations(&motion, &model, &cfg.camera, &cfg.noise, seed.wrapping_add(1))?;
    syn.input.subject = cfg.subject_name.clone();
    let initial = synthesize_initial_estimates(&motion, &cfg.noise, seed.wrapping_add(2))?;
    let gt: Vec<GroundTruthRecord> = motion
        .params
        .iter()
        .zip(&motion.contact)
        .zip(initial)
        .map(|((p, c), i)| GroundTruthRecord {
            params: p.clone(),
            contact: c.labels.clone(),
            initial: i,
        })
        .collect();
    std::fs::create_dir_all(out)?;
    io::write_sequence(&syn.input, io::create(&out.join(SEQUENCE_FILE))?)?;
    match cfg.pressure_encoding {
        PressureEncoding::Jsonl => {
            io::write_pressure_jsonl(&syn.pressure, io::create(&out.join(PRESSURE_JSONL_FILE))?)?
        }
        PressureEncoding::Binary => {
            io::write_pressure_binary(&syn.pressure, io::create(&out.join(PRESSURE_BINARY_FILE))?)?
        }
    }
    io::write_ground_truth(&gt, io::create(&out.join(GROUND_TRUTH_FILE))?)
}

pub fn annotate(cfg: &AnnotateConfig, common: &Common, out: &Path) -> Result<()> {
    common.no_weights("annotate")?;
    let pressure = io::read_pressure(io::open(require("pressure", &cfg.pressure)?)?)?;
    let sequence = match &cfg.sequence {
        Some(p) => {
            exists("sequence", p)?;
            Some(read_sequence(p)?)
        }
        None => None,
    };
    if let Some(s) = &sequence {
        if s.len() != pressure.len() {
            return Err(Error::LengthMismatch {
                what: "pressure frames",
                expected: s.len(),
                got: pressure.len(),
            });
        }
    }
    let weight = match cfg.body_weight {
        Some(w) => w,
        None => {
            let range = match (cfg.standing_frames, &sequence) {
                (Some([a, b]), _) => a..b,
                (None, Some(s)) => s.standing_segment.clone(),
                (None, None) => 0..pressure.len().min(10),
            };
            if range.start > range.end || range.end > pressure.len() {
                return Err(Error::InvalidInput(format!(
                    "standing frames {range:?} outside the {} pressure frames",
                    pressure.len()
                )));
            }
            estimate_body_weight(&pressure[range])?
        }
    };
    let map = SensorVertexMap::build(&BodyModel::generic().adult);
    let contact = annotate_sequence(&pressure, &map, weight)?;
    std::fs::create_dir_all(out)?;
    io::write_contact(&contact, io::create(&out.join(CONTACT_FILE))?)?;
    if let Some(mut s) = sequence {
        s.pressure = Some(contact);
        io::write_sequence(&s, io::create(&out.join(SEQUENCE_FILE))?)?;
    }
    Ok(())
}

fn with_contact(mut seq: SequenceInput, contact: Option<&Path>) -> Result<SequenceInput> {
    if let Some(p) = contact {
        exists("contact", p)?;
        seq.pressure = Some(io::read_contact(io::open(p)?)?);
        seq.validate()?;
    }
    Ok(seq)
}

pub fn fit_rgbdp_cmd(cfg: &FitRgbdpConfig, common: &Common, out: &Path) -> Result<()> {
    let mut rgbdp = cfg.rgbdp.clone();
    common.apply_weights(&mut rgbdp.weights)?;
    rgbdp.validate()?;
    let seq = with_contact(read_sequence(require("sequence", &cfg.sequence)?)?, cfg.contact.as_deref())?;
    let apose = match &cfg.apose {
        Some(p) => {
            exists("apose", p)?;
            read_sequence(p)?
        }
        None => seq.clone(),
    };
    let prior = cfg.use_prior.then(GmmPosePrior::builtin);
    let model = BodyModel::generic();
    let fit = fit_rgbdp(&model, &apose, &seq, prior.as_ref(), &rgbdp)?;
    std::fs::create_dir_all(out)?;
    io::write_fit(&fit.result, io::create(&out.join(FIT_FILE))?)?;
    io::write_energy_csv(&fit.result, io::create(&out.join(ENERGY_FILE))?)?;
    write_json(&fit.shape, &out.join(SHAPE_FILE))
}

fn read_initial(path: &Path) -> Result<Vec<BodyParams>> {
    match format_of(path)?.as_str() {
        "contactcap-fit" => Ok(io::read_fit(io::open(path)?)?.params),
        "contactcap-ground-truth" => Ok(io::read_ground_truth(io::open(path)?)?
            .into_iter()
            .map(|r| r.initial)
            .collect()),
        other => Err(Error::format(
            "initial estimates",
            format!("`{other}` holds no body parameters"),
        )),
    }
}

fn read_contact_guidance(path: &Path) -> Result<Vec<FppPrediction>> {
    match format_of(path)?.as_str() {
        "contactcap-predictions" => io::read_predictions(io::open(path)?),
        "contactcap-contact" => Ok(io::read_contact(io::open(path)?)?
            .iter()
            .map(FppPrediction::from_contact)
            .collect()),
        other => Err(Error::format("contact", format!("`{other}` holds no contact"))),
    }
}

pub fn vp(cfg: &VpRunConfig, common: &Common, out: &Path) -> Result<()> {
    let mut vp = cfg.vp.clone();
    common.apply_weights(&mut vp.weights)?;
    vp.validate()?;
    let seq = read_sequence(require("sequence", &cfg.sequence)?)?;
    let init: Vec<Option<BodyParams>> = read_initial(require("initial", &cfg.initial)?)?
        .into_iter()
        .map(Some)
        .collect();
    let contacts = match &cfg.contact {
        Some(p) => {
            exists("contact", p)?;
            read_contact_guidance(p)?
        }
        None => vec![FppPrediction::from_contact(&DenseContact::none()); seq.len()],
    };
    let fit = vp_optimize(&BodyModel::generic(), &seq, &init, &contacts, &vp)?;
    std::fs::create_dir_all(out)?;
    io::write_fit(&fit, io::create(&out.join(FIT_FILE))?)?;
    io::write_energy_csv(&fit, io::create(&out.join(ENERGY_FILE))?)
}

fn load_dataset(d: &Dataset) -> Result<FppSequence> {
    exists("sequence", &d.sequence)?;
    let seq = with_contact(read_sequence(&d.sequence)?, d.contact.as_deref())?;
    let contact = seq.pressure.as_ref().ok_or_else(|| {
        Error::Missing(format!("dense contact for {}", d.sequence.display()))
    })?;
    let frames: Vec<_> = seq.frames.iter().map(|f| f.keypoints.clone()).collect();
    FppSequence::from_frames(&frames, contact, seq.image_size)
}

pub fn train_fpp(cfg: &TrainFppConfig, common: &Common, out: &Path) -> Result<()> {
    common.no_weights("train-fpp")?;
    if cfg.train.is_empty() {
        return Err(Error::InvalidInput("missing required key `train`".into()));
    }
    cfg.network.validate()?;
    let mut schedule = cfg.schedule;
    let mut init_seed = cfg.init_seed;
    if let Some(s) = common.seed {
        schedule.seed = s;
        init_seed = s;
    }
    schedule.validate()?;
    let train_set = cfg.train.iter().map(load_dataset).collect::<Result<Vec<_>>>()?;
    let validation = cfg.validation.iter().map(load_dataset).collect::<Result<Vec<_>>>()?;
    let model = FppModel::new(cfg.network, init_seed)?;
    let (model, report) = train(
        &model,
        &train_set,
        (!validation.is_empty()).then_some(&validation[..]),
        &schedule,
    )?;
    std::fs::create_dir_all(out)?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    write_json(&report, &out.join(TRAIN_REPORT_FILE))
}

pub fn predict(cfg: &PredictConfig, common: &Common, out: &Path) -> Result<()> {
    common.no_weights("predict")?;
    let model = load_checkpoint(require("checkpoint", &cfg.checkpoint)?)?;
    let seq = read_sequence(require("sequence", &cfg.sequence)?)?;
    let frames: Vec<_> = seq.frames.iter().map(|f| f.keypoints.clone()).collect();
    let pred = predict_keypoints(&model, &frames, seq.image_size)?;
    std::fs::create_dir_all(out)?;
    io::write_predictions(&pred, io::create(&out.join(PREDICTIONS_FILE))?)
}

pub fn evaluate(cfg: &EvaluateConfig, common: &Common, out: &Path) -> Result<()> {
    common.no_weights("evaluate")?;
    let fit = io::read_fit(io::open(require("fit", &cfg.fit)?)?)?;
    let gt = io::read_ground_truth(io::open(require("ground_truth", &cfg.ground_truth)?)?)?;
    let seq = read_sequence(require("sequence", &cfg.sequence)?)?;
    let pred_contact = match &cfg.contact {
        Some(p) => {
            exists("contact", p)?;
            Some(
                read_contact_guidance(p)?
                    .iter()
                    .map(FppPrediction::labels)
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let gt_params: Vec<_> = gt.iter().map(|r| r.params.clone()).collect();
    let gt_contact: Vec<_> = gt.iter().map(|r| r.contact.clone()).collect();
    let mut options = cfg.options;
    options.frame_rate = seq.frame_rate;
    let (report, series) = evaluate_sequence(
        &BodyModel::generic(),
        &fit.params,
        &gt_params,
        pred_contact.as_deref(),
        &gt_contact,
        &seq.floor,
        &options,
    )?;
    let reports = [(cfg.name.clone(), report)];
    std::fs::create_dir_all(out)?;
    io::write_report(&reports, io::create(&out.join(REPORT_FILE))?)?;
    io::write_report_csv(&reports, io::create(&out.join(REPORT_CSV_FILE))?)?;
    io::write_plot_csv(
        &series,
        io::create(&out.join(TRAJECTORY_FILE))?,
        io::create(&out.join(ACCELERATION_FILE))?,
    )
}
