use rand::Rng;

use super::{Mesh, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Faces drawn proportionally to area, points uniform inside the face.
    UniformArea,
    /// The first `n` vertices, cycling when `n` exceeds the vertex count.
    VertexOnly,
}

/// Sampled points with the face and barycentric coordinates they came from.
#[derive(Debug, Clone)]
pub struct SurfaceSamples {
    pub cloud: PointCloud,
    pub faces: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
}

impl SurfaceSamples {
    /// Re-evaluates the provenance on a mesh with the same connectivity, e.g.
    /// a posed copy of the sampled template.
    pub fn evaluate_on(&self, mesh: &Mesh) -> Result<PointCloud> {
        let pts = self
            .faces
            .iter()
            .zip(&self.barycentric)
            .map(|(&f, b)| barycentric_point(mesh, f, *b))
            .collect();
        PointCloud::new(pts)
    }
}

pub(crate) fn barycentric_point(mesh: &Mesh, face: usize, b: [f64; 3]) -> Point3 {
    let [i, j, k] = mesh.faces()[face];
    let v = mesh.vertices();
    std::array::from_fn(|c| b[0] * v[i][c] + b[1] * v[j][c] + b[2] * v[k][c])
}

pub fn sample_surface(mesh: &Mesh, n: usize, mode: SampleMode, seed: u64) -> Result<SurfaceSamples> {
    if n == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    let (faces, barycentric) = match mode {
        SampleMode::VertexOnly => vertex_samples(mesh, n),
        SampleMode::UniformArea => area_samples(mesh, n, seed),
    };
    let pts = faces
        .iter()
        .zip(&barycentric)
        .map(|(&f, b)| barycentric_point(mesh, f, *b))
        .collect();
    Ok(SurfaceSamples {
        cloud: PointCloud::new(pts)?,
        faces,
        barycentric,
    })
}

fn vertex_samples(mesh: &Mesh, n: usize) -> (Vec<usize>, Vec<[f64; 3]>) {
    // First incident face of each vertex, with a one-hot barycentric weight.
    let mut incident = vec![None; mesh.vertex_count()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        for (k, &v) in f.iter().enumerate() {
            if incident[v].is_none() {
                incident[v] = Some((fi, k));
            }
        }
    }
    let nv = mesh.vertex_count();
    (0..n)
        .map(|i| {
            let v = i % nv;
            // Isolated vertices cannot be expressed on the surface; fall back
            // to face 0 with its first corner.
            let (f, k) = incident[v].unwrap_or((0, 0));
            let mut b = [0.0; 3];
            b[k] = 1.0;
            if incident[v].is_none() {
                log::warn!("vertex {v} has no incident face");
            }
            (f, b)
        })
        .unzip()
}

fn area_samples(mesh: &Mesh, n: usize, seed: u64) -> (Vec<usize>, Vec<[f64; 3]>) {
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut total = 0.0;
    for f in 0..mesh.face_count() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    let mut r = rng::stream(seed, &[0x5a4d_504c]);
    (0..n)
        .map(|_| {
            let u = r.random::<f64>() * total;
            let f = cumulative
                .partition_point(|&c| c <= u)
                .min(cumulative.len() - 1);
            let s = r.random::<f64>().sqrt();
            let t = r.random::<f64>();
            (f, [1.0 - s, s * (1.0 - t), s * t])
        })
        .unzip()
}
