use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. The camera looks along +z; `u = fx x / z + cx`,
/// `v = fy y / z + cy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Result of projecting one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Vector2<f64>),
    /// The point is on or behind the image plane.
    Undefined,
}

impl Projection {
    pub fn pixel(self) -> Option<Vector2<f64>> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::Undefined => None,
        }
    }
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "camera focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Projection {
        if p.z <= 0.0 || !p.z.is_finite() {
            return Projection::Undefined;
        }
        Projection::Pixel(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn project(&self, points: &[Vector3<f64>]) -> Vec<Projection> {
        points.iter().map(|p| self.project_point(p)).collect()
    }

    /// Jacobian of the projection of `p` (rows u, v; columns x, y, z).
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> [[f64; 3]; 2] {
        let iz = 1.0 / p.z;
        [
            [self.fx * iz, 0.0, -self.fx * p.x * iz * iz],
            [0.0, self.fy * iz, -self.fy * p.y * iz * iz],
        ]
    }

    /// Back-projects a pixel at known depth.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::new(500.0, 500.0, 250.0, 250.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = cam()
            .project_point(&Vector3::new(0.0, 0.0, 1.0))
            .pixel()
            .unwrap();
        assert_eq!(p, Vector2::new(250.0, 250.0));
    }

    #[test]
    fn hand_evaluated_pixel() {
        let p = cam()
            .project_point(&Vector3::new(1.0, 0.0, 1.0))
            .pixel()
            .unwrap();
        assert_eq!(p, Vector2::new(750.0, 250.0));
    }

    #[test]
    fn projection_is_scale_invariant_along_ray() {
        let x = Vector3::new(0.3, -0.2, 2.0);
        let a = cam().project_point(&x).pixel().unwrap();
        let b = cam().project_point(&(x * 3.7)).pixel().unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn non_positive_depth_is_flagged() {
        assert_eq!(
            cam().project_point(&Vector3::new(0.0, 0.0, 0.0)),
            Projection::Undefined
        );
        assert_eq!(
            cam().project_point(&Vector3::new(1.0, 0.0, -2.0)),
            Projection::Undefined
        );
    }

    #[test]
    fn unproject_recovers_point() {
        let x = Vector3::new(0.4, 0.1, 3.2);
        let px = cam().project_point(&x).pixel().unwrap();
        assert!((cam().unproject(&px, x.z) - x).norm() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_focal() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0).is_err());
    }
}
