use serde::{Deserialize, Serialize};

use super::tensor_points;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::geometry::{NearestNeighborIndex, Point3, PointCloud};
use crate::network::cloud_tensor;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferMode {
    /// Both directed terms.
    Symmetric,
    /// `Σ_{p∈a} min_{q∈b} ‖p − q‖²` only.
    AToB,
    /// `Σ_{q∈b} min_{p∈a} ‖p − q‖²` only.
    BToA,
}

impl ChamferMode {
    fn terms(self) -> (bool, bool) {
        match self {
            ChamferMode::Symmetric => (true, true),
            ChamferMode::AToB => (true, false),
            ChamferMode::BToA => (false, true),
        }
    }
}

/// For every point of `from`, the index of its nearest neighbor in `to`.
fn nearest(from: &[Point3], to: Vec<Point3>) -> Vec<usize> {
    let index = NearestNeighborIndex::from_points(to);
    par::map(from, |&p| index.query(p).0)
}

/// Squared-distance Chamfer. Nearest neighbors are fixed during the forward
/// pass, so the gradient flows through the selected pairs only.
pub fn chamfer_on_tape(tape: &mut Tape, a: Var, b: Var, mode: ChamferMode) -> Result<Var> {
    let pa = tensor_points(tape.value(a));
    let pb = tensor_points(tape.value(b));
    let (forward, backward) = mode.terms();
    let mut terms = Vec::with_capacity(2);
    if forward {
        let nn = nearest(&pa, pb.clone());
        let matched = tape.gather_rows(b, nn)?;
        let d = tape.sub(a, matched)?;
        let d = tape.square(d)?;
        terms.push(tape.sum(d)?);
    }
    if backward {
        let nn = nearest(&pb, pa);
        let matched = tape.gather_rows(a, nn)?;
        let d = tape.sub(b, matched)?;
        let d = tape.square(d)?;
        terms.push(tape.sum(d)?);
    }
    match terms.as_slice() {
        [t] => Ok(*t),
        [t0, t1] => tape.add(*t0, *t1),
        _ => unreachable!("at least one term is always selected"),
    }
}

pub fn chamfer(a: &PointCloud, b: &PointCloud, mode: ChamferMode) -> f64 {
    let (forward, backward) = mode.terms();
    let directed = |from: &PointCloud, to: &PointCloud| -> f64 {
        let index = NearestNeighborIndex::new(to);
        par::map(from.points(), |&p| index.query(p).1).iter().sum()
    };
    let mut total = 0.0;
    if forward {
        total += directed(a, b);
    }
    if backward {
        total += directed(b, a);
    }
    total
}

#[allow(dead_code)]
fn chamfer_via_tape(a: &PointCloud, b: &PointCloud, mode: ChamferMode) -> Result<f64> {
    let mut tape = Tape::new();
    let av = tape.constant(cloud_tensor(a));
    let bv = tape.constant(cloud_tensor(b));
    let out = chamfer_on_tape(&mut tape, av, bv, mode)?;
    Ok(tape.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist2;
    use crate::rng;
    use rand::Rng;

    fn random_cloud(r: &mut rng::Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0))).collect()).unwrap()
    }

    fn brute(a: &PointCloud, b: &PointCloud) -> f64 {
        a.points()
            .iter()
            .map(|p| b.points().iter().map(|q| dist2(*p, *q)).fold(f64::INFINITY, f64::min))
            .sum()
    }

    #[test]
    fn hand_enumerated_example() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(chamfer(&a, &b, ChamferMode::AToB), 1.0);
        assert_eq!(chamfer(&a, &b, ChamferMode::BToA), 5.0);
        assert_eq!(chamfer(&a, &b, ChamferMode::Symmetric), 6.0);
        for mode in [ChamferMode::AToB, ChamferMode::BToA, ChamferMode::Symmetric] {
            assert_eq!(chamfer(&a, &a, mode), 0.0);
            assert_eq!(chamfer_via_tape(&a, &b, mode).unwrap(), chamfer(&a, &b, mode));
        }
    }

    #[test]
    fn matches_brute_force_and_symmetries() {
        let mut r = rng::stream(31, &[]);
        for _ in 0..20 {
            let a = random_cloud(&mut r, 30);
            let b = random_cloud(&mut r, 40);
            let (ab, ba) = (brute(&a, &b), brute(&b, &a));
            assert!((chamfer(&a, &b, ChamferMode::AToB) - ab).abs() < 1e-12);
            assert!((chamfer(&a, &b, ChamferMode::BToA) - ba).abs() < 1e-12);
            assert!((chamfer(&a, &b, ChamferMode::Symmetric) - (ab + ba)).abs() < 1e-12);
            assert!((chamfer_via_tape(&a, &b, ChamferMode::Symmetric).unwrap() - (ab + ba)).abs() < 1e-12);
            assert_eq!(
                chamfer(&a, &b, ChamferMode::Symmetric),
                chamfer(&b, &a, ChamferMode::Symmetric)
            );
            assert_eq!(chamfer(&a, &b, ChamferMode::AToB), chamfer(&b, &a, ChamferMode::BToA));
            assert!(chamfer(&a, &b, ChamferMode::Symmetric) > 0.0);
        }
    }

    #[test]
    fn gradient_flows_through_selected_pairs() {
        let mut tape = Tape::new();
        let a = tape.leaf(cloud_tensor(&PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap()), true);
        let b = tape.leaf(
            cloud_tensor(&PointCloud::new(vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap()),
            true,
        );
        let l = chamfer_on_tape(&mut tape, a, b, ChamferMode::Symmetric).unwrap();
        let g = tape.backward(l).unwrap();
        // a→b: 2(a − b0); b→a: −2(b0 − a) − 2(b1 − a).
        assert_eq!(g.get(a).unwrap().data(), &[-2.0 - 2.0 - 4.0, 0.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0 + 2.0, 0.0, 0.0, 4.0, 0.0, 0.0]);
    }
}
