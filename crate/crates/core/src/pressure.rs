//! Plantar pressure to dense foot contact.
//!
//! Raw insole frames are resampled onto the 192 foot vertices, normalized
//! by body weight through a logistic map and thresholded at 0.5. Because the
//! logistic of a non-negative ratio is never below 0.5, a vertex only counts
//! as in contact when its raw pressure is strictly positive.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::body::{BodyTemplate, FOOT_VERTEX_COUNT, FOOT_VERTICES_PER_SIDE};
use crate::error::{Error, Result};

pub const SENSORS_PER_INSOLE: usize = 242;
/// Insole grid: rows run heel to toe, columns medial to lateral.
pub const INSOLE_ROWS: usize = 22;
pub const INSOLE_COLS: usize = 11;
pub const CONTACT_THRESHOLD: f64 = 0.5;

/// One timestamped reading of both insoles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureFrame {
    pub timestamp: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl PressureFrame {
    pub fn zeros(timestamp: f64) -> Self {
        Self {
            timestamp,
            left: vec![0.0; SENSORS_PER_INSOLE],
            right: vec![0.0; SENSORS_PER_INSOLE],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, side) in [("left insole", &self.left), ("right insole", &self.right)] {
            if side.len() != SENSORS_PER_INSOLE {
                return Err(Error::LengthMismatch {
                    what,
                    expected: SENSORS_PER_INSOLE,
                    got: side.len(),
                });
            }
            if side.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{what} readings must be finite and non-negative"
                )));
            }
        }
        if !self.timestamp.is_finite() {
            return Err(Error::NonFinite("pressure timestamp"));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.left.iter().chain(&self.right).sum()
    }
}

/// Per-vertex normalized pressure and binary contact, aligned with the
/// template's foot vertex registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseContact {
    pub p_norm: Vec<f64>,
    pub labels: Vec<bool>,
}

impl DenseContact {
    pub fn none() -> Self {
        Self {
            p_norm: vec![0.5; FOOT_VERTEX_COUNT],
            labels: vec![false; FOOT_VERTEX_COUNT],
        }
    }

    pub fn from_labels(labels: Vec<bool>) -> Self {
        let p_norm = labels.iter().map(|&l| if l { 1.0 } else { 0.5 }).collect();
        Self { p_norm, labels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != FOOT_VERTEX_COUNT || self.p_norm.len() != FOOT_VERTEX_COUNT {
            return Err(Error::LengthMismatch {
                what: "dense contact",
                expected: FOOT_VERTEX_COUNT,
                got: self.labels.len().min(self.p_norm.len()),
            });
        }
        for (&p, &l) in self.p_norm.iter().zip(&self.labels) {
            if !(0.0..=1.0).contains(&p) || (l && p < CONTACT_THRESHOLD) {
                return Err(Error::InvalidInput(
                    "contact pressure outside [0, 1] or label without pressure".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Assignment from each foot vertex to the insole sensors it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorVertexMap {
    /// 96 rows, one per left-foot vertex in registry order.
    pub left: Vec<Vec<(usize, f64)>>,
    pub right: Vec<Vec<(usize, f64)>>,
}

/// Normalized position of a sensor in its insole (u across, v heel→toe).
pub fn sensor_position(index: usize) -> Vector2<f64> {
    let (row, col) = (index / INSOLE_COLS, index % INSOLE_COLS);
    Vector2::new(
        (col as f64 + 0.5) / INSOLE_COLS as f64,
        (row as f64 + 0.5) / INSOLE_ROWS as f64,
    )
}

impl SensorVertexMap {
    /// Nearest-neighbour assignment in normalized foot coordinates. Both the
    /// sensor grid and each foot's footprint are scaled to the unit square;
    /// every sensor goes to its nearest vertex and a vertex left without a
    /// sensor borrows its own nearest one.
    pub fn build(template: &BodyTemplate) -> Self {
        let mut sides = Vec::with_capacity(2);
        for (side, chunk) in template
            .foot_vertex_ids
            .chunks(FOOT_VERTICES_PER_SIDE)
            .enumerate()
        {
            let pts: Vec<_> = chunk.iter().map(|&v| template.vertices[v]).collect();
            let (mut lo, mut hi) = (
                Vector2::repeat(f64::INFINITY),
                Vector2::repeat(f64::NEG_INFINITY),
            );
            for p in &pts {
                let q = Vector2::new(p.x, p.z);
                lo = lo.inf(&q);
                hi = hi.sup(&q);
            }
            let extent = (hi - lo).map(|e| if e > 0.0 { e } else { 1.0 });
            let footprint: Vec<Vector2<f64>> = pts
                .iter()
                .map(|p| {
                    let mut u = (p.x - lo.x) / extent.x;
                    // Sensor columns run medial to lateral on both feet.
                    if side == 1 {
                        u = 1.0 - u;
                    }
                    Vector2::new(u, (p.z - lo.y) / extent.y)
                })
                .collect();
            let nearest =
                |q: &Vector2<f64>, cands: &mut dyn Iterator<Item = (usize, Vector2<f64>)>| {
                    cands
                        .fold((usize::MAX, f64::INFINITY), |best, (i, c)| {
                            let d = (c - q).norm_squared();
                            if d < best.1 {
                                (i, d)
                            } else {
                                best
                            }
                        })
                        .0
                };
            let mut owned = vec![Vec::new(); footprint.len()];
            for s in 0..SENSORS_PER_INSOLE {
                let v = nearest(
                    &sensor_position(s),
                    &mut footprint.iter().copied().enumerate(),
                );
                owned[v].push(s);
            }
            for (v, sensors) in owned.iter_mut().enumerate() {
                if sensors.is_empty() {
                    let s = nearest(
                        &footprint[v],
                        &mut (0..SENSORS_PER_INSOLE).map(|s| (s, sensor_position(s))),
                    );
                    sensors.push(s);
                }
            }
            sides.push(
                owned
                    .into_iter()
                    .map(|s| {
                        let w = 1.0 / s.len() as f64;
                        s.into_iter().map(|i| (i, w)).collect()
                    })
                    .collect(),
            );
        }
        let right = sides.pop().unwrap_or_default();
        let left = sides.pop().unwrap_or_default();
        Self { left, right }
    }

    pub fn validate(&self) -> Result<()> {
        for side in [&self.left, &self.right] {
            if side.len() != FOOT_VERTICES_PER_SIDE {
                return Err(Error::LengthMismatch {
                    what: "sensor map rows",
                    expected: FOOT_VERTICES_PER_SIDE,
                    got: side.len(),
                });
            }
            for row in side {
                if row.is_empty() {
                    return Err(Error::InvalidInput("foot vertex without sensors".into()));
                }
                if let Some(&(index, _)) = row.iter().find(|(i, _)| *i >= SENSORS_PER_INSOLE) {
                    return Err(Error::SensorIndex {
                        index,
                        len: SENSORS_PER_INSOLE,
                    });
                }
                let sum: f64 = row.iter().map(|(_, w)| w).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput("sensor weights must sum to one".into()));
                }
            }
        }
        Ok(())
    }

    /// Distributes per-vertex loads onto sensors, splitting each vertex's
    /// load evenly between the sensors it averages.
    pub fn scatter(&self, vertex_loads: &[f64], timestamp: f64) -> Result<PressureFrame> {
        if vertex_loads.len() != FOOT_VERTEX_COUNT {
            return Err(Error::LengthMismatch {
                what: "vertex loads",
                expected: FOOT_VERTEX_COUNT,
                got: vertex_loads.len(),
            });
        }
        let mut frame = PressureFrame::zeros(timestamp);
        let (left_loads, right_loads) = vertex_loads.split_at(FOOT_VERTICES_PER_SIDE);
        for (rows, loads, out) in [
            (&self.left, left_loads, &mut frame.left),
            (&self.right, right_loads, &mut frame.right),
        ] {
            for (row, &load) in rows.iter().zip(loads) {
                for &(s, _) in row {
                    out[s] += load / row.len() as f64;
                }
            }
        }
        Ok(frame)
    }
}

/// Mean over frames of the total reading of all 484 sensors.
pub fn estimate_body_weight(standing: &[PressureFrame]) -> Result<f64> {
    if standing.is_empty() {
        return Err(Error::Missing("standing pressure frames".into()));
    }
    let mut total = 0.0;
    for f in standing {
        f.validate()?;
        total += f.total();
    }
    if total <= 0.0 {
        return Err(Error::NoLoad);
    }
    Ok(total / standing.len() as f64)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `sigmoid(P / w_s)`.
pub fn normalize_pressure(raw: &[f64], body_weight: f64) -> Result<Vec<f64>> {
    if !(body_weight > 0.0 && body_weight.is_finite()) {
        return Err(Error::InvalidWeight(body_weight));
    }
    Ok(raw.iter().map(|p| logistic(p / body_weight)).collect())
}

/// Contact iff the normalized pressure reaches the threshold and the raw
/// reading is strictly positive.
pub fn label_contact(p_norm: &[f64], p_raw: &[f64]) -> Result<Vec<bool>> {
    if p_norm.len() != FOOT_VERTEX_COUNT || p_raw.len() != FOOT_VERTEX_COUNT {
        return Err(Error::LengthMismatch {
            what: "contact inputs",
            expected: FOOT_VERTEX_COUNT,
            got: if p_norm.len() != FOOT_VERTEX_COUNT {
                p_norm.len()
            } else {
                p_raw.len()
            },
        });
    }
    Ok(p_norm
        .iter()
        .zip(p_raw)
        .map(|(&n, &r)| n >= CONTACT_THRESHOLD && r > 0.0)
        .collect())
}

/// Weighted average of the assigned sensors for each of the 192 vertices.
pub fn map_sensors_to_vertices(frame: &PressureFrame, map: &SensorVertexMap) -> Result<Vec<f64>> {
    frame.validate()?;
    map.validate()?;
    let mut out = Vec::with_capacity(FOOT_VERTEX_COUNT);
    for (rows, sensors) in [(&map.left, &frame.left), (&map.right, &frame.right)] {
        for row in rows {
            out.push(row.iter().map(|&(s, w)| w * sensors[s]).sum());
        }
    }
    Ok(out)
}

pub fn annotate_frame(
    frame: &PressureFrame,
    map: &SensorVertexMap,
    body_weight: f64,
) -> Result<DenseContact> {
    let raw = map_sensors_to_vertices(frame, map)?;
    let p_norm = normalize_pressure(&raw, body_weight)?;
    let labels = label_contact(&p_norm, &raw)?;
    Ok(DenseContact { p_norm, labels })
}

/// Annotates every frame independently.
pub fn annotate_sequence(
    frames: &[PressureFrame],
    map: &SensorVertexMap,
    body_weight: f64,
) -> Result<Vec<DenseContact>> {
    frames
        .iter()
        .map(|f| annotate_frame(f, map, body_weight))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::BodyModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map() -> SensorVertexMap {
        SensorVertexMap::build(&BodyModel::generic().adult)
    }

    fn random_frame(rng: &mut ChaCha8Rng) -> PressureFrame {
        let mut f = PressureFrame::zeros(0.0);
        for v in f.left.iter_mut().chain(f.right.iter_mut()) {
            *v = if rng.random_bool(0.4) {
                rng.random_range(0.0..50.0)
            } else {
                0.0
            };
        }
        f
    }

    #[test]
    fn body_weight_of_all_zero_input_is_no_load() {
        assert!(matches!(
            estimate_body_weight(&[PressureFrame::zeros(0.0)]),
            Err(Error::NoLoad)
        ));
        assert!(estimate_body_weight(&[]).is_err());
    }

    #[test]
    fn body_weight_of_unit_sensors() {
        let mut f = PressureFrame::zeros(0.0);
        f.left.fill(1.0);
        f.right.fill(1.0);
        assert_eq!(estimate_body_weight(&[f.clone(), f]).unwrap(), 484.0);
    }

    #[test]
    fn body_weight_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<_> = (0..3).map(|_| random_frame(&mut rng)).collect();
        let mut oracle = 0.0;
        for f in &frames {
            for i in 0..SENSORS_PER_INSOLE {
                oracle += f.left[i] + f.right[i];
            }
        }
        oracle /= 3.0;
        assert!((estimate_body_weight(&frames).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn normalization_values() {
        let n = normalize_pressure(&[0.0, 80.0, 1e9], 80.0).unwrap();
        assert_eq!(n[0], 0.5);
        assert!((n[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((n[1] - 0.7310586).abs() < 1e-7);
        assert!(n[2] <= 1.0 && n[2] > 0.999_999);
        assert!(matches!(
            normalize_pressure(&[1.0], 0.0),
            Err(Error::InvalidWeight(_))
        ));
        assert!(normalize_pressure(&[1.0], -2.0).is_err());
    }

    #[test]
    fn normalization_is_monotone() {
        let raw: Vec<f64> = (0..200).map(|i| i as f64 * 0.37).collect();
        let n = normalize_pressure(&raw, 13.0).unwrap();
        assert!(n.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn labels_follow_threshold_and_zero_guard() {
        let mut p_norm = vec![0.5; 192];
        let mut raw = vec![0.0; 192];
        p_norm[1] = 0.9;
        raw[1] = 3.0;
        p_norm[2] = 0.49;
        raw[2] = 3.0;
        let labels = label_contact(&p_norm, &raw).unwrap();
        assert!(!labels[0]);
        assert!(labels[1]);
        assert!(!labels[2]);
        assert!(label_contact(&p_norm[..10], &raw).is_err());
    }

    #[test]
    fn generic_map_is_valid_and_exclusive() {
        let m = map();
        m.validate().unwrap();
        for side in [&m.left, &m.right] {
            let mut seen = vec![0; SENSORS_PER_INSOLE];
            for row in side {
                for &(s, _) in row {
                    seen[s] += 1;
                }
            }
            assert!(
                seen.iter().all(|&c| c == 1),
                "every sensor owned by exactly one vertex"
            );
        }
    }

    #[test]
    fn mapping_zero_and_unit_assignment() {
        let m = map();
        let zero = map_sensors_to_vertices(&PressureFrame::zeros(0.0), &m).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let mut unit = m.clone();
        for row in unit.left.iter_mut().chain(unit.right.iter_mut()) {
            *row = vec![(0, 1.0)];
        }
        unit.left[7] = vec![(5, 1.0)];
        let mut f = PressureFrame::zeros(0.0);
        f.left[5] = 2.5;
        let out = map_sensors_to_vertices(&f, &unit).unwrap();
        assert_eq!(out[7], 2.5);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn mapping_matches_weighted_sum_oracle() {
        let m = map();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_frame(&mut rng);
        let out = map_sensors_to_vertices(&f, &m).unwrap();
        for v in 0..192 {
            let (row, sensors) = if v < 96 {
                (&m.left[v], &f.left)
            } else {
                (&m.right[v - 96], &f.right)
            };
            let mut acc = 0.0;
            for (s, w) in row {
                acc += sensors[*s] * w;
            }
            assert!((out[v] - acc).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_sensor_rejected() {
        let mut m = map();
        m.left[0] = vec![(SENSORS_PER_INSOLE, 1.0)];
        assert!(matches!(
            map_sensors_to_vertices(&PressureFrame::zeros(0.0), &m),
            Err(Error::SensorIndex { .. })
        ));
    }

    #[test]
    fn heel_load_labels_heel_only() {
        let model = BodyModel::generic();
        let m = SensorVertexMap::build(&model.adult);
        let mut f = PressureFrame::zeros(0.0);
        for s in 0..SENSORS_PER_INSOLE {
            if sensor_position(s).y < 0.3 {
                f.left[s] = 40.0;
                f.right[s] = 40.0;
            }
        }
        let out = annotate_sequence(&[f.clone(), f], &m, 500.0).unwrap();
        for (k, &v) in model.adult.foot_vertex_ids.iter().enumerate() {
            let z = model.adult.vertices[v].z;
            if z < -0.03 {
                assert!(out[0].labels[k], "heel vertex {k} should be in contact");
            }
            if z > 0.1 {
                assert!(!out[0].labels[k], "toe vertex {k} should be free");
            }
        }
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn annotate_all_zero_is_no_contact() {
        let out = annotate_sequence(&vec![PressureFrame::zeros(0.0); 4], &map(), 10.0).unwrap();
        assert!(out.iter().all(|c| c.count() == 0));
    }

    #[test]
    fn scatter_then_map_preserves_support() {
        let m = map();
        let mut loads = vec![0.0; 192];
        loads[3] = 10.0;
        loads[150] = 4.0;
        let f = m.scatter(&loads, 0.0).unwrap();
        let back = map_sensors_to_vertices(&f, &m).unwrap();
        for (k, v) in back.iter().enumerate() {
            assert_eq!(*v > 0.0, loads[k] > 0.0);
        }
        assert!((f.total() - 14.0).abs() < 1e-12);
    }
}
