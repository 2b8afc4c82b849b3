use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body::Camera;
use crate::error::{Error, Result};
use crate::fpp::{FppConfig, TrainConfig};
use crate::metrics::EvalOptions;
use crate::pipelines::{RgbdpConfig, VpConfig};
use crate::synth::{default_camera, MotionFamily, MotionScript, NoiseSpec};

/// Reads a TOML config; unknown keys are rejected by name. Relative paths
/// inside the file resolve against the file's directory.
pub fn load<T: DeserializeOwned + Default + Paths>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Missing(format!("config {}: {e}", path.display())))?;
    let mut cfg: T = toml::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("config {}: {}", path.display(), e.message())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.resolve(base);
    Ok(cfg)
}

/// Config types holding file references.
pub trait Paths {
    fn resolve(&mut self, base: &Path);
}

fn rebase(p: &mut PathBuf, base: &Path) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(p: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = p {
        rebase(p, base);
    }
}

/// Fails with the key name when a required path is absent or unreadable.
pub fn require<'a>(key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("missing required key `{key}`")))?;
    exists(key, p)?;
    Ok(p)
}

pub fn exists(key: &str, p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(Error::Missing(format!("`{key}` = {} does not exist", p.display())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PressureEncoding {
    #[default]
    Jsonl,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub subject_name: String,
    pub motion: MotionScript,
    pub noise: NoiseSpec,
    pub camera: Camera,
    pub pressure_encoding: PressureEncoding,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            subject_name: "synthetic".into(),
            motion: MotionScript::new(MotionFamily::Walk, 2.0, 0),
            noise: NoiseSpec::zero(),
            camera: default_camera(),
            pressure_encoding: PressureEncoding::Jsonl,
        }
    }
}

impl Paths for SynthConfig {
    fn resolve(&mut self, _: &Path) {}
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateConfig {
    /// Pressure stream, JSON Lines or binary.
    pub pressure: Option<PathBuf>,
    /// Body weight in sensor units; estimated from the standing frames
    /// when absent.
    pub body_weight: Option<f64>,
    /// Frames `[start, end)` averaged for the body weight; defaults to the
    /// sequence's standing segment, or the first ten frames without one.
    pub standing_frames: Option<[usize; 2]>,
    /// Sequence whose standing segment is used and which is rewritten with
    /// the contact embedded.
    pub sequence: Option<PathBuf>,
}

impl Paths for AnnotateConfig {
    fn resolve(&mut self, base: &Path) {
        rebase_opt(&mut self.pressure, base);
        rebase_opt(&mut self.sequence, base);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitRgbdpConfig {
    pub sequence: Option<PathBuf>,
    /// Dense contact file; the sequence's embedded contact otherwise.
    pub contact: Option<PathBuf>,
    /// A-pose sequence for the shape fit; the main sequence otherwise.
    pub apose: Option<PathBuf>,
    pub use_prior: bool,
    pub rgbdp: RgbdpConfig,
}

impl Default for FitRgbdpConfig {
    fn default() -> Self {
        Self {
            sequence: None,
            contact: None,
            apose: None,
            use_prior: true,
            rgbdp: RgbdpConfig::default(),
        }
    }
}

impl Paths for FitRgbdpConfig {
    fn resolve(&mut self, base: &Path) {
        rebase_opt(&mut self.sequence, base);
        rebase_opt(&mut self.contact, base);
        rebase_opt(&mut self.apose, base);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpRunConfig {
    pub sequence: Option<PathBuf>,
    /// Per-frame initial estimates: a fit file or a ground-truth file.
    pub initial: Option<PathBuf>,
    /// Predictions or dense contact; no contact guidance when absent.
    pub contact: Option<PathBuf>,
    pub vp: VpConfig,
}

impl Paths for VpRunConfig {
    fn resolve(&mut self, base: &Path) {
        rebase_opt(&mut self.sequence, base);
        rebase_opt(&mut self.initial, base);
        rebase_opt(&mut self.contact, base);
    }
}

/// A keypoint sequence with its dense contact labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub sequence: PathBuf,
    /// Dense contact file; the sequence's embedded contact otherwise.
    #[serde(default)]
    pub contact: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFppConfig {
    pub train: Vec<Dataset>,
    pub validation: Vec<Dataset>,
    pub network: FppConfig,
    pub schedule: TrainConfig,
    /// Seed of the initial weights.
    pub init_seed: u64,
}

impl Default for TrainFppConfig {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            validation: Vec::new(),
            network: FppConfig::default(),
            schedule: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

impl Paths for TrainFppConfig {
    fn resolve(&mut self, base: &Path) {
        for d in self.train.iter_mut().chain(&mut self.validation) {
            rebase(&mut d.sequence, base);
            rebase_opt(&mut d.contact, base);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub checkpoint: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
}

impl Paths for PredictConfig {
    fn resolve(&mut self, base: &Path) {
        rebase_opt(&mut self.checkpoint, base);
        rebase_opt(&mut self.sequence, base);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub name: String,
    pub fit: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Sequence providing the floor and frame rate.
    pub sequence: Option<PathBuf>,
    /// Predicted contact; read off the fitted mesh when absent.
    pub contact: Option<PathBuf>,
    pub options: EvalOptions,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            name: "sequence".into(),
            fit: None,
            ground_truth: None,
            sequence: None,
            contact: None,
            options: EvalOptions::default(),
        }
    }
}

impl Paths for EvaluateConfig {
    fn resolve(&mut self, base: &Path) {
        rebase_opt(&mut self.fit, base);
        rebase_opt(&mut self.ground_truth, base);
        rebase_opt(&mut self.sequence, base);
        rebase_opt(&mut self.contact, base);
    }
}
