use proptest::prelude::*;
use shapedeform::datagen::{
    generate_shapes, make_template, pose_shape, sample_pose, PoseBounds, PoseSample, Rig, TemplateKind,
};
use shapedeform::geometry::{dist2, normalize_shape};
use shapedeform::losses::{chamfer, edge_loss, supervised_loss, ChamferMode};

fn kind() -> impl Strategy<Value = TemplateKind> {
    prop_oneof![Just(TemplateKind::Biped), Just(TemplateKind::Quadruped), Just(TemplateKind::Tube)]
}

fn check_weights(rig: &Rig) -> Result<(), TestCaseError> {
    for w in &rig.weights {
        prop_assert!(!w.is_empty() && w.len() <= 4);
        prop_assert!(w.iter().all(|&(j, x)| j < rig.joints.len() && x >= 0.0));
        prop_assert!((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_pose_reproduces_template_vertex_for_vertex(k in kind(), res in 0usize..2) {
        let t = make_template(k, res).unwrap();
        let posed = pose_shape(&t, &PoseSample::identity(t.rig.joints.len())).unwrap();
        prop_assert_eq!(supervised_loss(&posed.vertex_cloud(), &t.mesh.vertex_cloud()).unwrap(), 0.0);
        prop_assert_eq!(posed.faces(), t.mesh.faces());
    }

    #[test]
    fn skinning_weights_stay_convex_through_json(k in kind(), res in 0usize..3) {
        let t = make_template(k, res).unwrap();
        check_weights(&t.rig)?;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        t.rig.save_json(&path).unwrap();
        let back = Rig::load_json(&path).unwrap();
        check_weights(&back)?;
        prop_assert_eq!(back, t.rig);
    }

    #[test]
    fn sampled_poses_respect_bounds(k in kind(), seed in any::<u64>(), limb in 0.1f64..2.0) {
        let t = make_template(k, 0).unwrap();
        let bounds = PoseBounds { limb_scale: limb, ..PoseBounds::default() };
        let pose = sample_pose(&t, &bounds, seed);
        prop_assert!((0.8..=1.2).contains(&pose.scale));
        for (r, joint) in pose.rotations.iter().zip(&t.rig.joints) {
            for c in 0..3 {
                prop_assert!(r[c].abs() <= joint.bounds[c] * limb + 1e-15);
            }
        }
    }

    #[test]
    fn generated_shapes_fit_the_unit_cube(k in kind(), seed in any::<u64>()) {
        let t = make_template(k, 0).unwrap();
        for s in generate_shapes(&t, 4, &PoseBounds::default(), seed).unwrap() {
            prop_assert!(s.mesh.vertices().iter().flatten().all(|c| c.abs() < 1.0));
            let (renormalized, _) = normalize_shape(&s.mesh.vertex_cloud());
            prop_assert!(renormalized.points().iter().flatten().all(|c| c.abs() <= 1.0));
            prop_assert!(edge_loss(&t.mesh, &s.mesh.vertex_cloud()).unwrap() > 0.0);
        }
    }
}

/// 500 default biped shapes: none collapses onto the template and poses are
/// spread out, measured as the std of per-vertex displacement between
/// consecutive shapes.
#[test]
fn biped_dataset_statistics() {
    let t = make_template(TemplateKind::Biped, 0).unwrap();
    let shapes = generate_shapes(&t, 500, &PoseBounds::default(), 1).unwrap();
    let template = t.mesh.vertex_cloud();
    let mean_chamfer = shapes
        .iter()
        .map(|s| chamfer(&s.mesh.vertex_cloud(), &template, ChamferMode::Symmetric))
        .sum::<f64>()
        / shapes.len() as f64;
    assert!(mean_chamfer > 0.0);

    let mut d = Vec::new();
    for w in shapes.windows(2) {
        for (a, b) in w[0].mesh.vertices().iter().zip(w[1].mesh.vertices()) {
            d.push(dist2(*a, *b).sqrt());
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    assert!(std > 0.05, "displacement std {std}");
}
