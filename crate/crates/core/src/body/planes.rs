use nalgebra::Vector3;

use super::{AttachedPoint, BodyTemplate, FOOT_VERTICES_PER_SIDE};

/// One of the four ground-projected foot regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneRegion {
    LeftPosterior,
    LeftAnterior,
    RightPosterior,
    RightAnterior,
}

/// Ground-projected copies of the 192 foot vertices.
///
/// Plane point `i` is carried by foot vertex `vertex_ids[i]`: it is skinned
/// with that vertex's weights from rest position `points[i]`, so it moves
/// with the foot while staying in the sole's ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FootPlanes {
    /// Rest-pose plane points, all at height 0.
    pub points: Vec<Vector3<f64>>,
    pub regions: Vec<PlaneRegion>,
    /// Foot-vertex id carrying each plane point.
    pub vertex_ids: Vec<usize>,
    /// Registry position (0..192) → plane-point index.
    pub association: Vec<usize>,
    /// Rest offset from the carrying vertex to its plane point.
    pub offsets: Vec<Vector3<f64>>,
}

impl FootPlanes {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn attached(&self, index: usize) -> AttachedPoint {
        AttachedPoint {
            vertex: self.vertex_ids[index],
            offset: self.offsets[index],
        }
    }

    pub fn region_points(&self, region: PlaneRegion) -> impl Iterator<Item = usize> + '_ {
        self.regions
            .iter()
            .enumerate()
            .filter(move |(_, r)| **r == region)
            .map(|(i, _)| i)
    }
}

/// Projects every foot vertex of a rest-pose template vertically onto the
/// ground (height 0) and splits each foot into posterior and anterior
/// planes at the midpoint of its extent along the long axis.
pub fn build_foot_planes(template: &BodyTemplate) -> FootPlanes {
    let ids = &template.foot_vertex_ids;
    let mut planes = FootPlanes {
        points: Vec::with_capacity(ids.len()),
        regions: Vec::with_capacity(ids.len()),
        vertex_ids: ids.clone(),
        association: (0..ids.len()).collect(),
        offsets: Vec::with_capacity(ids.len()),
    };
    for (side, chunk) in ids.chunks(FOOT_VERTICES_PER_SIDE).enumerate() {
        let verts: Vec<_> = chunk.iter().map(|&v| template.vertices[v]).collect();
        let (min, max) = verts.iter().fold(
            (
                Vector3::repeat(f64::INFINITY),
                Vector3::repeat(f64::NEG_INFINITY),
            ),
            |(lo, hi), v| (lo.inf(v), hi.sup(v)),
        );
        let long_axis = if max.z - min.z >= max.x - min.x { 2 } else { 0 };
        let mid = 0.5 * (min[long_axis] + max[long_axis]);
        for v in &verts {
            planes.points.push(Vector3::new(v.x, 0.0, v.z));
            planes.offsets.push(Vector3::new(0.0, -v.y, 0.0));
            let anterior = v[long_axis] >= mid;
            planes.regions.push(match (side, anterior) {
                (0, false) => PlaneRegion::LeftPosterior,
                (0, true) => PlaneRegion::LeftAnterior,
                (_, false) => PlaneRegion::RightPosterior,
                (_, true) => PlaneRegion::RightAnterior,
            });
        }
    }
    planes
}
