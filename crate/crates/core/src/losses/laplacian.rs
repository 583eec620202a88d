use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CsrMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, sub, Mesh, PointCloud};
use crate::network::cloud_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianVariant {
    /// Degree on the diagonal, −1 per neighbor.
    Uniform,
    /// Clamped cotangent weights normalized by one third of the incident
    /// face area.
    #[default]
    Cotangent,
}

/// Sparse `|V| × |V|` Laplacian with rows summing to zero.
#[derive(Debug, Clone)]
pub struct LaplacianOperator {
    variant: LaplacianVariant,
    matrix: Arc<CsrMatrix>,
    edge_weights: BTreeMap<(usize, usize), f64>,
    cell_areas: Vec<f64>,
}

impl LaplacianOperator {
    pub fn variant(&self) -> LaplacianVariant {
        self.variant
    }

    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.matrix
    }

    /// Symmetric weight `w_ij` of edge `(i, j)`, `i < j`, before area
    /// normalization.
    pub fn edge_weight(&self, i: usize, j: usize) -> Option<f64> {
        self.edge_weights.get(&(i.min(j), i.max(j))).copied()
    }

    /// Per-vertex normalization areas (all ones for the uniform variant).
    pub fn cell_areas(&self) -> &[f64] {
        &self.cell_areas
    }

    pub fn apply(&self, vertices: &PointCloud) -> Result<Vec<[f64; 3]>> {
        if vertices.len() != self.matrix.cols() {
            return Err(Error::CardinalityMismatch { expected: self.matrix.cols(), actual: vertices.len() });
        }
        let out = self.matrix.mul_dense(&vertices.flat(), 3);
        Ok(out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

fn cot(a: [f64; 3], b: [f64; 3]) -> f64 {
    dot(a, b) / norm(cross(a, b))
}

pub fn build_laplacian(mesh: &Mesh, variant: LaplacianVariant) -> Result<LaplacianOperator> {
    let n = mesh.vertex_count();
    let v = mesh.vertices();
    let mut incident: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let c = incident.entry((a.min(b), a.max(b))).or_default();
            *c += 1;
            if *c > 2 {
                return Err(Error::NonManifoldEdge(a.min(b), a.max(b)));
            }
        }
    }

    let (edge_weights, cell_areas) = match variant {
        LaplacianVariant::Uniform => (
            mesh.edges().iter().map(|&e| (e, 1.0)).collect::<BTreeMap<_, _>>(),
            vec![1.0; n],
        ),
        LaplacianVariant::Cotangent => {
            let mut w: BTreeMap<(usize, usize), f64> = mesh.edges().iter().map(|&e| (e, 0.0)).collect();
            let mut area = vec![0.0; n];
            for (fi, f) in mesh.faces().iter().enumerate() {
                let a = mesh.face_area(fi);
                for k in 0..3 {
                    let (o, i, j) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                    let c = cot(sub(v[i], v[o]), sub(v[j], v[o]));
                    *w.get_mut(&(i.min(j), i.max(j))).expect("face edge is a mesh edge") += 0.5 * c;
                    area[o] += a / 3.0;
                }
            }
            for x in w.values_mut() {
                *x = x.max(0.0);
            }
            (w, area)
        }
    };

    let mut triplets = Vec::with_capacity(2 * edge_weights.len() + n);
    let mut diag = vec![0.0; n];
    for (&(i, j), &w) in &edge_weights {
        let (wi, wj) = (w / cell_areas[i], w / cell_areas[j]);
        triplets.push((i, j, -wi));
        triplets.push((j, i, -wj));
        diag[i] += wi;
        diag[j] += wj;
    }
    triplets.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    if triplets.iter().any(|t| !t.2.is_finite()) {
        return Err(Error::NonFiniteValue("laplacian weights".into()));
    }
    Ok(LaplacianOperator {
        variant,
        matrix: Arc::new(CsrMatrix::from_triplets(n, n, triplets)),
        edge_weights,
        cell_areas,
    })
}

/// `(1/|V|) Σ_i ‖(L V)_i − (L T)_i‖²` against a fixed template.
#[derive(Debug, Clone)]
pub struct LaplacianLoss {
    operator: LaplacianOperator,
    reference: Tensor,
}

impl LaplacianLoss {
    pub fn new(operator: LaplacianOperator, template: &PointCloud) -> Result<Self> {
        let lt = operator.apply(template)?;
        let reference = Tensor::new(lt.len(), 3, lt.into_iter().flatten().collect())?;
        Ok(Self { operator, reference })
    }

    pub fn on_tape(&self, tape: &mut Tape, deformed: Var) -> Result<Var> {
        let lv = tape.sparse_matmul(self.operator.matrix.clone(), deformed)?;
        let lt = tape.constant(self.reference.clone());
        let d = tape.sub(lv, lt)?;
        let d = tape.square(d)?;
        let s = tape.sum(d)?;
        tape.scale(s, 1.0 / self.reference.rows() as f64)
    }
}

pub fn laplacian_loss(operator: &LaplacianOperator, template: &PointCloud, deformed: &PointCloud) -> Result<f64> {
    let loss = LaplacianLoss::new(operator.clone(), template)?;
    let mut tape = Tape::new();
    let d = tape.constant(cloud_tensor(deformed));
    let out = loss.on_tape(&mut tape, d)?;
    Ok(tape.value(out).item())
}
