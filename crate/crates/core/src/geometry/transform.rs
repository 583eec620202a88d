use super::{Point3, PointCloud};

/// Axis-aligned `(min, max)` corners.
pub fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

pub fn translate(cloud: &PointCloud, t: Point3) -> PointCloud {
    let pts = cloud
        .points()
        .iter()
        .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
        .collect();
    PointCloud::new(pts).expect("translation of a valid cloud stays valid")
}

/// Moves the bounding-box center to the origin. Returns the centered cloud
/// and the translation that was added; subtracting it undoes the operation.
pub fn normalize_shape(cloud: &PointCloud) -> (PointCloud, Point3) {
    let (lo, hi) = bounding_box(cloud.points());
    let t = std::array::from_fn(|k| -0.5 * (lo[k] + hi[k]));
    (translate(cloud, t), t)
}

/// Right-handed rotation about +Y: `(1,0,0)` by `π/2` lands on `(0,0,-1)`.
pub fn rotate_y(cloud: &PointCloud, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    let pts = cloud
        .points()
        .iter()
        .map(|p| [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]])
        .collect();
    PointCloud::new(pts).expect("rotation of a valid cloud stays valid")
}
