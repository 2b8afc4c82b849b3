//! Differentiable energy terms for both fitting pipelines.
//!
//! Every term returns its value together with an analytic gradient. Terms
//! that depend on the posed body report the gradient over the full flat
//! parameter layout ([`crate::body::layout`]); the pose-only terms
//! ([`e_gmm`], [`e_mimic`]) report it over the 72 pose values.

mod gmm;
mod terms;
mod total;

pub use gmm::{
    GmmComponent, GmmPosePrior, BUILTIN_COMPONENTS, BUILTIN_EM_ITERATIONS, BUILTIN_REGULARIZATION,
    BUILTIN_SEED, GMM_FORMAT, GMM_VERSION,
};
pub use terms::{
    e_2d, e_c_dense, e_c_temp, e_contact_joint, e_depth, e_foot_consistency, e_gmm, e_mimic,
    nearest_vertices,
};
pub use total::{
    total_rgbdp, total_vp, EnergyBreakdown, Evaluation, PreviousFrame, RgbdpInputs, VpInputs,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default robust cap on a cloud point's residual distance, meters.
pub const DEFAULT_DEPTH_CAP: f64 = 0.05;

/// Value and gradient of one energy term.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Residuals dropped because they were undefined (empty cloud, joint
    /// behind the camera).
    pub skipped: usize,
}

impl Term {
    pub(crate) fn new(value: f64, grad: Vec<f64>) -> Self {
        Self {
            value,
            grad,
            skipped: 0,
        }
    }
}

/// Relative weights of the energy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyWeights {
    pub lambda_depth: f64,
    pub lambda_c_dense: f64,
    /// Per squared pixel.
    pub lambda_2d: f64,
    pub lambda_c_temp: f64,
    pub lambda_gmm: f64,
    pub lambda_p: f64,
    pub lambda_3d: f64,
    pub lambda_t: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            lambda_depth: 1.0,
            lambda_c_dense: 10.0,
            lambda_2d: 1e-4,
            lambda_c_temp: 10.0,
            lambda_gmm: 1e-2,
            lambda_p: 1.0,
            lambda_3d: 10.0,
            lambda_t: 5.0,
        }
    }
}

impl EnergyWeights {
    pub const KEYS: [&'static str; 8] = [
        "lambda_depth",
        "lambda_c_dense",
        "lambda_2d",
        "lambda_c_temp",
        "lambda_gmm",
        "lambda_p",
        "lambda_3d",
        "lambda_t",
    ];

    pub fn zero() -> Self {
        Self {
            lambda_depth: 0.0,
            lambda_c_dense: 0.0,
            lambda_2d: 0.0,
            lambda_c_temp: 0.0,
            lambda_gmm: 0.0,
            lambda_p: 0.0,
            lambda_3d: 0.0,
            lambda_t: 0.0,
        }
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "lambda_depth" => &mut self.lambda_depth,
            "lambda_c_dense" => &mut self.lambda_c_dense,
            "lambda_2d" => &mut self.lambda_2d,
            "lambda_c_temp" => &mut self.lambda_c_temp,
            "lambda_gmm" => &mut self.lambda_gmm,
            "lambda_p" => &mut self.lambda_p,
            "lambda_3d" => &mut self.lambda_3d,
            "lambda_t" => &mut self.lambda_t,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        let mut copy = *self;
        copy.slot(key).map(|v| *v)
    }

    /// Sets one weight by name.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = self
            .slot(key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown weight `{key}`")))?;
        *slot = value;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for key in Self::KEYS {
            let v = self.get(key).unwrap_or(0.0);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "weight `{key}` must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Floor plane `{p : n·p = offset}`; height is `n·p - offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl GroundPlane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0 && offset.is_finite()) {
            return Err(Error::InvalidInput(
                "ground plane needs a non-zero finite normal".into(),
            ));
        }
        Ok(Self {
            normal: normal / n,
            offset,
        })
    }

    /// Horizontal floor `y = level` with normal +y.
    pub fn horizontal(level: f64) -> Self {
        Self {
            normal: Vector3::y(),
            offset: level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.normal.norm() - 1.0).abs() > 1e-9 || !self.offset.is_finite() {
            return Err(Error::InvalidInput(
                "ground normal must have unit length".into(),
            ));
        }
        Ok(())
    }

    pub fn height(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.height(p) * self.normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights() {
        let w = EnergyWeights::default();
        assert_eq!(w.lambda_2d, 1e-4);
        assert_eq!(w.lambda_c_dense, 10.0);
        w.validate().unwrap();
    }

    #[test]
    fn weight_override_by_name() {
        let mut w = EnergyWeights::default();
        w.set("lambda_t", 0.0).unwrap();
        assert_eq!(w.lambda_t, 0.0);
        assert!(w.set("lambda_x", 1.0).is_err());
        assert!(w.set("lambda_p", -1.0).is_err());
        assert!(w.set("lambda_p", f64::NAN).is_err());
    }

    #[test]
    fn weights_reject_unknown_toml_keys() {
        let ok: EnergyWeights = toml::from_str("lambda_3d = 2.0").unwrap();
        assert_eq!(ok.lambda_3d, 2.0);
        assert_eq!(ok.lambda_depth, 1.0);
        assert!(toml::from_str::<EnergyWeights>("lambda_3e = 2.0").is_err());
    }

    #[test]
    fn plane_height_and_projection() {
        let g = GroundPlane::horizontal(-1.0);
        let p = Vector3::new(0.3, -0.9, 2.0);
        assert!((g.height(&p) - 0.1).abs() < 1e-12);
        assert!(g.height(&g.project(&p)).abs() < 1e-12);
        let tilted = GroundPlane::new(Vector3::new(0.0, 2.0, 0.0), 0.5).unwrap();
        assert!((tilted.normal.norm() - 1.0).abs() < 1e-12);
        assert!(GroundPlane::new(Vector3::zeros(), 0.0).is_err());
    }
}

#[cfg(test)]
mod term_tests;
