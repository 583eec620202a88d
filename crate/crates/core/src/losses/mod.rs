//! Loss functions, each available as a plain evaluation and as a
//! differentiable construction on a [`Tape`].
//!
//! Point sets enter a tape as `n × 3` tensors.

mod chamfer;
mod edge;
mod laplacian;

pub use chamfer::{chamfer, chamfer_on_tape, ChamferMode};
pub use edge::{edge_loss, EdgeLoss};
pub use laplacian::{build_laplacian, laplacian_loss, LaplacianLoss, LaplacianOperator, LaplacianVariant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point3, PointCloud};
use crate::network::cloud_tensor;

/// Regularization weights of the unsupervised objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_lap: f64,
    pub lambda_edges: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_lap: 5e-3,
            lambda_edges: 5e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_lap >= 0.0 && self.lambda_edges >= 0.0) {
            return Err(Error::Precondition(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

pub(crate) fn tensor_points(t: &Tensor) -> Vec<Point3> {
    debug_assert_eq!(t.cols(), 3);
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn evaluate(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = build(&mut tape)?;
    Ok(tape.value(out).item())
}

/// `Σ_j ‖predicted_j − target_j‖²`.
pub fn supervised_on_tape(tape: &mut Tape, predicted: Var, target: Var) -> Result<Var> {
    let (p, t) = (tape.value(predicted).rows(), tape.value(target).rows());
    if p != t {
        return Err(Error::CardinalityMismatch { expected: t, actual: p });
    }
    let d = tape.sub(predicted, target)?;
    let d = tape.square(d)?;
    tape.sum(d)
}

pub fn supervised_loss(predicted: &PointCloud, target: &PointCloud) -> Result<f64> {
    evaluate(|tape| {
        let p = tape.constant(cloud_tensor(predicted));
        let t = tape.constant(cloud_tensor(target));
        supervised_on_tape(tape, p, t)
    })
}

/// Chamfer + λ_Lap·Laplacian + λ_edges·edge loss, with the template-dependent
/// parts precomputed once.
#[derive(Debug, Clone)]
pub struct UnsupervisedLoss {
    pub edges: EdgeLoss,
    pub laplacian: LaplacianLoss,
    pub weights: LossWeights,
}

impl UnsupervisedLoss {
    pub fn new(template: &Mesh, laplacian: &LaplacianOperator, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            edges: EdgeLoss::new(template)?,
            laplacian: LaplacianLoss::new(laplacian.clone(), &template.vertex_cloud())?,
            weights,
        })
    }

    /// `deformed` must hold the template vertices in order.
    pub fn on_tape(&self, tape: &mut Tape, deformed: Var, target: Var) -> Result<Var> {
        let mut total = chamfer_on_tape(tape, deformed, target, ChamferMode::Symmetric)?;
        if self.weights.lambda_lap != 0.0 {
            let l = self.laplacian.on_tape(tape, deformed)?;
            let l = tape.scale(l, self.weights.lambda_lap)?;
            total = tape.add(total, l)?;
        }
        if self.weights.lambda_edges != 0.0 {
            let e = self.edges.on_tape(tape, deformed)?;
            let e = tape.scale(e, self.weights.lambda_edges)?;
            total = tape.add(total, e)?;
        }
        Ok(total)
    }
}

pub fn unsupervised_loss(
    template: &Mesh,
    deformed: &PointCloud,
    target: &PointCloud,
    weights: LossWeights,
    laplacian: &LaplacianOperator,
) -> Result<f64> {
    let loss = UnsupervisedLoss::new(template, laplacian, weights)?;
    evaluate(|tape| {
        let d = tape.constant(cloud_tensor(deformed));
        let t = tape.constant(cloud_tensor(target));
        loss.on_tape(tape, d, t)
    })
}
