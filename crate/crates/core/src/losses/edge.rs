use super::tensor_points;
use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{dist2, Mesh, PointCloud};
use crate::network::cloud_tensor;

/// Mean over template edges of `| ‖v_i − v_j‖ / ‖t_i − t_j‖ − 1 |`.
#[derive(Debug, Clone)]
pub struct EdgeLoss {
    first: Vec<usize>,
    second: Vec<usize>,
    inv_lengths: Tensor,
    vertex_count: usize,
}

const MIN_EDGE: f64 = 1e-12;

impl EdgeLoss {
    pub fn new(template: &Mesh) -> Result<Self> {
        let v = template.vertices();
        let mut inv = Vec::with_capacity(template.edges().len());
        for &(i, j) in template.edges() {
            let len = dist2(v[i], v[j]).sqrt();
            if len < MIN_EDGE {
                return Err(Error::DegenerateEdge(i, j));
            }
            inv.push(1.0 / len);
        }
        let n = inv.len();
        Ok(Self {
            first: template.edges().iter().map(|e| e.0).collect(),
            second: template.edges().iter().map(|e| e.1).collect(),
            inv_lengths: Tensor::new(n, 1, inv)?,
            vertex_count: template.vertex_count(),
        })
    }

    pub fn on_tape(&self, tape: &mut Tape, deformed: Var) -> Result<Var> {
        let rows = tape.value(deformed).rows();
        if rows != self.vertex_count {
            return Err(Error::CardinalityMismatch { expected: self.vertex_count, actual: rows });
        }
        let a = tape.gather_rows(deformed, self.first.clone())?;
        let b = tape.gather_rows(deformed, self.second.clone())?;
        let d = tape.sub(a, b)?;
        let d = tape.square(d)?;
        let d = tape.sum_over_axis(d, Axis::Cols)?;
        let len = tape.sqrt(d)?;
        let inv = tape.constant(self.inv_lengths.clone());
        let ratio = tape.mul(len, inv)?;
        let ratio = tape.add_scalar(ratio, -1.0)?;
        let ratio = tape.abs(ratio)?;
        tape.mean(ratio)
    }

    pub fn evaluate(&self, deformed: &PointCloud) -> Result<f64> {
        let mut tape = Tape::new();
        let d = tape.constant(cloud_tensor(deformed));
        let out = self.on_tape(&mut tape, d)?;
        Ok(tape.value(out).item())
    }
}

pub fn edge_loss(template: &Mesh, deformed: &PointCloud) -> Result<f64> {
    EdgeLoss::new(template)?.evaluate(deformed)
}

#[allow(dead_code)]
fn ratios(template: &Mesh, deformed: &Tensor) -> Vec<f64> {
    let d = tensor_points(deformed);
    let t = template.vertices();
    template
        .edges()
        .iter()
        .map(|&(i, j)| (dist2(d[i], d[j]) / dist2(t[i], t[j])).sqrt())
        .collect()
}
