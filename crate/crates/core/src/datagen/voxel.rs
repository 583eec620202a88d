//! Closed triangle meshes from unions of unit cubes.

use std::collections::{BTreeSet, HashMap};

use crate::error::Result;
use crate::geometry::{Mesh, Point3};

pub(crate) type Voxel = [i64; 3];

/// Boundary of the voxel union, every unit face split into an `s × s` grid
/// of quads and each quad into two triangles, oriented outward. Vertices are
/// in voxel units.
pub(crate) fn surface(voxels: &BTreeSet<Voxel>, s: usize) -> Result<Mesh> {
    let s = s as i64;
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces = Vec::new();
    let mut id = |p: [i64; 3]| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push(p.map(|c| c as f64 / s as f64));
            vertices.len() - 1
        })
    };
    for v in voxels {
        for axis in 0..3 {
            for outward in [false, true] {
                let mut n = *v;
                n[axis] += if outward { 1 } else { -1 };
                if voxels.contains(&n) {
                    continue;
                }
                let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
                let plane = (v[axis] + i64::from(outward)) * s;
                let lattice = |i: i64, j: i64| {
                    let mut p = [0; 3];
                    p[axis] = plane;
                    p[u] = v[u] * s + i;
                    p[w] = v[w] * s + j;
                    p
                };
                for i in 0..s {
                    for j in 0..s {
                        let c00 = id(lattice(i, j));
                        let c10 = id(lattice(i + 1, j));
                        let c11 = id(lattice(i + 1, j + 1));
                        let c01 = id(lattice(i, j + 1));
                        // (u, w, axis) is right-handed, so c00→c10→c11 faces +axis.
                        if outward {
                            faces.push([c00, c10, c11]);
                            faces.push([c00, c11, c01]);
                        } else {
                            faces.push([c00, c11, c10]);
                            faces.push([c00, c01, c11]);
                        }
                    }
                }
            }
        }
    }
    Mesh::new(vertices, faces)
}

/// Taubin λ|μ smoothing with uniform neighbor averaging; keeps volume far
/// better than plain Laplacian smoothing.
pub(crate) fn taubin(mesh: &Mesh, iterations: usize, lambda: f64, mu: f64) -> Result<Mesh> {
    let n = mesh.vertex_count();
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in mesh.edges() {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    let mut v = mesh.vertices().to_vec();
    for _ in 0..iterations {
        for factor in [lambda, mu] {
            let next: Vec<Point3> = (0..n)
                .map(|i| {
                    let k = neighbors[i].len() as f64;
                    let mut avg = [0.0; 3];
                    for &j in &neighbors[i] {
                        for c in 0..3 {
                            avg[c] += v[j][c] / k;
                        }
                    }
                    std::array::from_fn(|c| v[i][c] + factor * (avg[c] - v[i][c]))
                })
                .collect();
            v = next;
        }
    }
    mesh.with_vertices(v)
}
