//! Procedural articulated shapes with known correspondences.
//!
//! A template is a smoothed voxel figure with a joint tree and skinning
//! weights. Posed copies come from linear blend skinning, so vertex `i` of
//! every generated shape is the image of template vertex `i`.

mod voxel;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, dist2, dot, load_mesh, save_mesh, sub, Mesh, MeshFormat, Point3};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Biped,
    Quadruped,
    Tube,
}

impl std::str::FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biped" => Ok(Self::Biped),
            "quadruped" => Ok(Self::Quadruped),
            "tube" => Ok(Self::Tube),
            _ => Err(Error::Precondition(format!("unknown template kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub rest: Point3,
    /// Per-axis bound on the axis-angle components, in radians.
    pub bounds: Point3,
}

/// Skeleton and skinning weights of a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub kind: TemplateKind,
    pub resolution: usize,
    pub joints: Vec<Joint>,
    /// Per vertex, `(joint, weight)` with weights summing to one.
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl Rig {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        if self.joints.is_empty() || self.joints[0].parent.is_some() {
            return Err(Error::InvalidTopology("joint 0 must be the root".into()));
        }
        for (j, joint) in self.joints.iter().enumerate().skip(1) {
            if !joint.parent.is_some_and(|p| p < j) {
                return Err(Error::InvalidTopology(format!("joint {j} must have an earlier parent")));
            }
        }
        if self.weights.len() != vertex_count {
            return Err(Error::CardinalityMismatch { expected: vertex_count, actual: self.weights.len() });
        }
        for (i, w) in self.weights.iter().enumerate() {
            let sum: f64 = w.iter().map(|x| x.1).sum();
            if w.is_empty()
                || w.len() > 4
                || w.iter().any(|&(j, x)| j >= self.joints.len() || !(x >= 0.0))
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::Data(format!("skinning weights of vertex {i} are not convex")));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct ArticulatedTemplate {
    pub mesh: Mesh,
    pub rig: Rig,
}

struct JointSpec {
    name: &'static str,
    parent: Option<usize>,
    rest: Point3,
    /// End of the bone segment used for skinning.
    tip: Point3,
    bounds: Point3,
}

fn joint(name: &'static str, parent: Option<usize>, rest: Point3, tip: Point3, bounds: Point3) -> JointSpec {
    JointSpec { name, parent, rest, tip, bounds }
}

fn boxes(ranges: &[([i64; 2], [i64; 2], [i64; 2])]) -> BTreeSet<[i64; 3]> {
    let mut s = BTreeSet::new();
    for (x, y, z) in ranges {
        for i in x[0]..=x[1] {
            for j in y[0]..=y[1] {
                for k in z[0]..=z[1] {
                    s.insert([i, j, k]);
                }
            }
        }
    }
    s
}

/// Voxels and skeleton in voxel units. Each figure has a forward-facing
/// feature along +z so that it has no yaw symmetry.
fn blueprint(kind: TemplateKind) -> (BTreeSet<[i64; 3]>, Vec<JointSpec>) {
    const FIXED: Point3 = [0.0; 3];
    match kind {
        TemplateKind::Biped => {
            let voxels = boxes(&[
                ([0, 0], [0, 2], [0, 0]),
                ([2, 2], [0, 2], [0, 0]),
                ([0, 0], [0, 0], [1, 1]),
                ([2, 2], [0, 0], [1, 1]),
                ([0, 2], [3, 6], [0, 0]),
                ([-3, -1], [6, 6], [0, 0]),
                ([3, 5], [6, 6], [0, 0]),
                ([1, 1], [7, 9], [0, 0]),
                ([1, 1], [8, 8], [1, 1]),
            ]);
            let arm = [0.6, 0.6, 0.9];
            let elbow = [0.2, 0.9, 0.9];
            let hip = [0.8, 0.3, 0.3];
            let knee = [0.9, 0.1, 0.1];
            let joints = vec![
                joint("pelvis", None, [1.5, 3.0, 0.5], [1.5, 4.0, 0.5], FIXED),
                joint("chest", Some(0), [1.5, 4.5, 0.5], [1.5, 7.0, 0.5], [0.3, 0.3, 0.3]),
                joint("neck", Some(1), [1.5, 7.0, 0.5], [1.5, 10.0, 0.5], [0.4, 0.6, 0.3]),
                joint("left_shoulder", Some(1), [0.0, 6.5, 0.5], [-1.5, 6.5, 0.5], arm),
                joint("left_elbow", Some(3), [-1.5, 6.5, 0.5], [-3.0, 6.5, 0.5], elbow),
                joint("right_shoulder", Some(1), [3.0, 6.5, 0.5], [4.5, 6.5, 0.5], arm),
                joint("right_elbow", Some(5), [4.5, 6.5, 0.5], [6.0, 6.5, 0.5], elbow),
                joint("left_hip", Some(0), [0.5, 3.0, 0.5], [0.5, 1.5, 0.5], hip),
                joint("left_knee", Some(7), [0.5, 1.5, 0.5], [0.5, 0.0, 0.5], knee),
                joint("right_hip", Some(0), [2.5, 3.0, 0.5], [2.5, 1.5, 0.5], hip),
                joint("right_knee", Some(9), [2.5, 1.5, 0.5], [2.5, 0.0, 0.5], knee),
            ];
            (voxels, joints)
        }
        TemplateKind::Quadruped => {
            let voxels = boxes(&[
                ([0, 5], [2, 3], [0, 2]),
                ([0, 0], [0, 1], [0, 0]),
                ([0, 0], [0, 1], [2, 2]),
                ([5, 5], [0, 1], [0, 0]),
                ([5, 5], [0, 1], [2, 2]),
                ([6, 6], [3, 5], [1, 1]),
                ([7, 7], [5, 5], [1, 1]),
                ([-2, -1], [3, 3], [1, 1]),
            ]);
            let hip = [0.2, 0.2, 0.7];
            let knee = [0.1, 0.1, 0.7];
            let mut joints = vec![
                joint("root", None, [3.0, 3.0, 1.5], [1.0, 3.0, 1.5], FIXED),
                joint("front", Some(0), [3.5, 3.0, 1.5], [6.0, 3.0, 1.5], [0.2, 0.3, 0.2]),
                joint("neck", Some(1), [6.0, 3.5, 1.5], [8.0, 5.5, 1.5], [0.3, 0.6, 0.5]),
                joint("tail", Some(0), [0.0, 3.5, 1.5], [-2.0, 3.5, 1.5], [0.5, 0.8, 0.8]),
            ];
            let legs = [
                ("rear_left", 0, 0.5, 0.5),
                ("rear_right", 0, 0.5, 2.5),
                ("front_left", 1, 5.5, 0.5),
                ("front_right", 1, 5.5, 2.5),
            ];
            for (name, parent, x, z) in legs {
                let hip_id = joints.len();
                let names: (&'static str, &'static str) = match name {
                    "rear_left" => ("rear_left_hip", "rear_left_knee"),
                    "rear_right" => ("rear_right_hip", "rear_right_knee"),
                    "front_left" => ("front_left_hip", "front_left_knee"),
                    _ => ("front_right_hip", "front_right_knee"),
                };
                joints.push(joint(names.0, Some(parent), [x, 2.0, z], [x, 1.0, z], hip));
                joints.push(joint(names.1, Some(hip_id), [x, 1.0, z], [x, 0.0, z], knee));
            }
            (voxels, joints)
        }
        TemplateKind::Tube => {
            let voxels = boxes(&[([0, 0], [0, 9], [0, 0]), ([0, 0], [9, 9], [1, 1])]);
            let names = ["segment_0", "segment_1", "segment_2", "segment_3", "segment_4"];
            let joints = names
                .iter()
                .enumerate()
                .map(|(i, &name)| {
                    let y = 2.0 * i as f64;
                    let bounds = if i == 0 { FIXED } else { [0.4, 0.2, 0.4] };
                    joint(name, i.checked_sub(1), [0.5, y, 0.5], [0.5, y + 2.0, 0.5], bounds)
                })
                .collect();
            (voxels, joints)
        }
    }
}

fn segment_distance(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    let q = std::array::from_fn(|k| a[k] + t * ab[k]);
    dist2(p, q).sqrt()
}

/// Half-extent of the largest axis after normalization.
const TEMPLATE_HALF_EXTENT: f64 = 0.7;
const BASE_SUBDIVISION: usize = 2;

/// Deterministic template of the given kind. `resolution ∈ [0, 4]` raises
/// the face subdivision.
pub fn make_template(kind: TemplateKind, resolution: usize) -> Result<ArticulatedTemplate> {
    if resolution > 4 {
        return Err(Error::Precondition(format!("template resolution {resolution} is outside [0, 4]")));
    }
    let (voxels, specs) = blueprint(kind);
    let raw = voxel::surface(&voxels, BASE_SUBDIVISION + resolution)?;
    let smooth = voxel::taubin(&raw, 10, 0.5, -0.53)?;

    let max_influences = if kind == TemplateKind::Tube { 2 } else { 4 };
    let weights: Vec<Vec<(usize, f64)>> = smooth
        .vertices()
        .iter()
        .map(|&p| {
            let mut w: Vec<(usize, f64)> = specs
                .iter()
                .enumerate()
                .map(|(j, s)| (j, (segment_distance(p, s.rest, s.tip) + 0.1).powi(-4)))
                .collect();
            w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            w.truncate(max_influences);
            let total: f64 = w.iter().map(|x| x.1).sum();
            w.iter_mut().for_each(|x| x.1 /= total);
            w
        })
        .collect();

    let (lo, hi) = bounding_box(smooth.vertices());
    let center: Point3 = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
    let half = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max);
    let f = TEMPLATE_HALF_EXTENT / half;
    let place = |p: Point3| -> Point3 { std::array::from_fn(|k| (p[k] - center[k]) * f) };

    let mesh = smooth.with_vertices(smooth.vertices().iter().map(|&p| place(p)).collect())?;
    let joints = specs
        .iter()
        .map(|s| Joint {
            name: s.name.to_string(),
            parent: s.parent,
            rest: place(s.rest),
            bounds: s.bounds,
        })
        .collect();
    let rig = Rig { kind, resolution, joints, weights };
    rig.validate(mesh.vertex_count())?;
    Ok(ArticulatedTemplate { mesh, rig })
}

/// Per-joint axis-angle rotations plus a global scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub rotations: Vec<Point3>,
    pub scale: f64,
    pub seed: u64,
}

impl PoseSample {
    pub fn identity(joints: usize) -> Self {
        Self { rotations: vec![[0.0; 3]; joints], scale: 1.0, seed: 0 }
    }
}

/// Sampling ranges for poses. The hard-pose option widens the listed joints'
/// bounds for a fraction of the shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseBounds {
    /// Multiplier on every joint's own bounds.
    pub limb_scale: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub hard_joints: Vec<usize>,
    pub hard_scale: f64,
    pub hard_probability: f64,
}

impl Default for PoseBounds {
    fn default() -> Self {
        Self {
            limb_scale: 1.0,
            scale_min: 0.8,
            scale_max: 1.2,
            hard_joints: Vec::new(),
            hard_scale: 2.0,
            hard_probability: 0.0,
        }
    }
}

pub fn sample_pose(template: &ArticulatedTemplate, bounds: &PoseBounds, seed: u64) -> PoseSample {
    let mut r = rng::stream(seed, &[0x905e]);
    let hard = bounds.hard_probability > 0.0 && r.random_bool(bounds.hard_probability.min(1.0));
    let rotations = template
        .rig
        .joints
        .iter()
        .enumerate()
        .map(|(j, joint)| {
            let mut m = bounds.limb_scale;
            if hard && bounds.hard_joints.contains(&j) {
                m *= bounds.hard_scale;
            }
            std::array::from_fn(|k| {
                let b = joint.bounds[k] * m;
                if b > 0.0 {
                    r.random_range(-b..=b)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let scale = if bounds.scale_max > bounds.scale_min {
        r.random_range(bounds.scale_min..=bounds.scale_max)
    } else {
        bounds.scale_min
    };
    PoseSample { rotations, scale, seed }
}

type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy)]
struct Affine {
    r: Mat3,
    t: Point3,
}

impl Affine {
    fn apply(&self, p: Point3) -> Point3 {
        std::array::from_fn(|i| dot(self.r[i], p) + self.t[i])
    }

    fn then_inner(&self, inner: &Affine) -> Affine {
        let r = std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| self.r[i][k] * inner.r[k][j]).sum()));
        Affine { r, t: self.apply(inner.t) }
    }
}

fn rodrigues(v: Point3) -> Mat3 {
    let theta = dot(v, v).sqrt();
    if theta < 1e-12 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = v.map(|x| x / theta);
    let (s, c) = theta.sin_cos();
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let id = if i == j { 1.0 } else { 0.0 };
            c * id + s * kx[i][j] + (1.0 - c) * k[i] * k[j]
        })
    })
}

/// Linear blend skinning followed by the global scale. Vertex order is kept.
pub fn pose_shape(template: &ArticulatedTemplate, pose: &PoseSample) -> Result<Mesh> {
    let joints = &template.rig.joints;
    if pose.rotations.len() != joints.len() {
        return Err(Error::CardinalityMismatch { expected: joints.len(), actual: pose.rotations.len() });
    }
    let mut world: Vec<Affine> = Vec::with_capacity(joints.len());
    for (j, joint) in joints.iter().enumerate() {
        let r = rodrigues(pose.rotations[j]);
        let c = joint.rest;
        let rc: Point3 = std::array::from_fn(|i| dot(r[i], c));
        let local = Affine { r, t: std::array::from_fn(|i| c[i] - rc[i]) };
        world.push(match joint.parent {
            Some(p) => world[p].then_inner(&local),
            None => local,
        });
    }
    let vertices = template
        .mesh
        .vertices()
        .iter()
        .zip(&template.rig.weights)
        .map(|(&v, w)| {
            // Blended displacements rather than blended positions, so the
            // rest pose reproduces the template exactly.
            let mut out = v;
            for &(j, x) in w {
                let p = world[j].apply(v);
                for k in 0..3 {
                    out[k] += x * (p[k] - v[k]);
                }
            }
            out.map(|c| c * pose.scale)
        })
        .collect();
    template.mesh.with_vertices(vertices)
}

/// Largest absolute coordinate a generated shape may have after centering.
pub const SHAPE_LIMIT: f64 = 0.98;
const MAX_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone)]
pub struct GeneratedShape {
    pub mesh: Mesh,
    pub pose: PoseSample,
}

fn centered(mesh: &Mesh) -> Result<Mesh> {
    let (lo, hi) = bounding_box(mesh.vertices());
    let c: Point3 = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
    mesh.with_vertices(mesh.vertices().iter().map(|p| std::array::from_fn(|k| p[k] - c[k])).collect())
}

/// Posed, bounding-box-centered shapes. Shape `i` depends only on
/// `(seed, i)`; poses that leave `(−0.98, 0.98)³` are redrawn.
pub fn generate_shapes(
    template: &ArticulatedTemplate,
    n: usize,
    bounds: &PoseBounds,
    seed: u64,
) -> Result<Vec<GeneratedShape>> {
    par::try_map_range(n, |i| {
        for attempt in 0..MAX_ATTEMPTS {
            let pose = sample_pose(template, bounds, rng::derive_seed(seed, &[i as u64, attempt]));
            let mesh = centered(&pose_shape(template, &pose)?)?;
            if mesh.vertices().iter().flatten().all(|c| c.abs() < SHAPE_LIMIT) {
                return Ok(GeneratedShape { mesh, pose });
            }
        }
        Err(Error::Data(format!("no pose for shape {i} fits the unit cube")))
    })
}

pub const CORRESPONDENCE_BY_INDEX: &str = "by-vertex-index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub path: String,
    pub seed: u64,
    pub pose: Vec<Point3>,
    pub scale: f64,
}

/// Dataset index. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: TemplateKind,
    pub resolution: usize,
    pub template: String,
    pub rig: String,
    pub shapes: Vec<ShapeEntry>,
    pub correspondence: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEMPLATE_FILE: &str = "template.ply";

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Writes the template, its rig, `n` posed PLY meshes and `manifest.json`
/// into `out_dir`.
pub fn generate_dataset(
    template: &ArticulatedTemplate,
    n: usize,
    bounds: &PoseBounds,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Precondition("dataset must contain at least one shape".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let shapes = generate_shapes(template, n, bounds, seed)?;
    save_mesh(&template.mesh, &out_dir.join(TEMPLATE_FILE), MeshFormat::PlyAscii, None)?;
    template.rig.save_json(&out_dir.join("rig.json"))?;
    let width = n.to_string().len().max(4);
    let mut entries = Vec::with_capacity(n);
    for (i, s) in shapes.iter().enumerate() {
        let name = format!("shape_{i:0width$}.ply");
        save_mesh(&s.mesh, &out_dir.join(&name), MeshFormat::PlyAscii, None)?;
        entries.push(ShapeEntry { path: name, seed: s.pose.seed, pose: s.pose.rotations.clone(), scale: s.pose.scale });
    }
    let manifest = Manifest {
        kind: template.rig.kind,
        resolution: template.rig.resolution,
        template: TEMPLATE_FILE.into(),
        rig: "rig.json".into(),
        shapes: entries,
        correspondence: CORRESPONDENCE_BY_INDEX.into(),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A manifest with its meshes loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub template: Mesh,
    pub shapes: Vec<Mesh>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        if manifest.correspondence != CORRESPONDENCE_BY_INDEX {
            return Err(Error::Data(format!("unsupported correspondence {:?}", manifest.correspondence)));
        }
        let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let read = |name: &str| {
            let p = dir.join(name);
            load_mesh(&p, MeshFormat::from_path(&p)?)
        };
        let template = read(&manifest.template)?;
        let shapes = manifest
            .shapes
            .iter()
            .map(|s| {
                let m = read(&s.path)?;
                if m.vertex_count() != template.vertex_count() {
                    return Err(Error::CardinalityMismatch { expected: template.vertex_count(), actual: m.vertex_count() });
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dir, manifest, template, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{edge_loss, supervised_loss};

    #[test]
    fn biped_size_and_topology() {
        let t = make_template(TemplateKind::Biped, 0).unwrap();
        let n = t.mesh.vertex_count();
        assert!((200..=800).contains(&n), "{n}");
        assert!(t.mesh.is_closed());
        assert_eq!(t.mesh.euler_characteristic(), 2);
        assert_eq!(t.rig.joints.len(), 11);
        for p in t.mesh.vertices() {
            assert!(p.iter().all(|c| c.abs() <= 0.9));
        }
    }

    #[test]
    fn every_kind_is_closed_and_rigged() {
        for kind in [TemplateKind::Biped, TemplateKind::Quadruped, TemplateKind::Tube] {
            for res in [0, 1] {
                let t = make_template(kind, res).unwrap();
                assert!(t.mesh.is_closed(), "{kind:?}");
                assert_eq!(t.mesh.euler_characteristic(), 2, "{kind:?}");
                assert!((5..=15).contains(&t.rig.joints.len()));
                t.rig.validate(t.mesh.vertex_count()).unwrap();
            }
        }
        assert!(make_template(TemplateKind::Biped, 5).is_err());
    }

    #[test]
    fn deterministic_template() {
        let a = make_template(TemplateKind::Quadruped, 0).unwrap();
        let b = make_template(TemplateKind::Quadruped, 0).unwrap();
        assert_eq!(a.mesh.vertices(), b.mesh.vertices());
        assert_eq!(a.mesh.faces(), b.mesh.faces());
        assert_eq!(a.rig, b.rig);
    }

    #[test]
    fn tube_is_a_chain_with_two_influences() {
        let t = make_template(TemplateKind::Tube, 0).unwrap();
        for (j, joint) in t.rig.joints.iter().enumerate().skip(1) {
            assert_eq!(joint.parent, Some(j - 1));
        }
        assert!(t.rig.weights.iter().all(|w| w.len() <= 2));
    }

    #[test]
    fn identity_pose_reproduces_template() {
        let t = make_template(TemplateKind::Biped, 0).unwrap();
        let posed = pose_shape(&t, &PoseSample::identity(t.rig.joints.len())).unwrap();
        for (a, b) in posed.vertices().iter().zip(t.mesh.vertices()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        assert!(supervised_loss(&posed.vertex_cloud(), &t.mesh.vertex_cloud()).unwrap() < 1e-20);
    }

    #[test]
    fn root_rotation_is_rigid() {
        let t = make_template(TemplateKind::Biped, 0).unwrap();
        let mut pose = PoseSample::identity(t.rig.joints.len());
        pose.rotations[0] = [0.3, -0.7, 0.2];
        let posed = pose_shape(&t, &pose).unwrap();
        let (a, b) = (t.mesh.vertices(), posed.vertices());
        for i in (0..a.len()).step_by(7) {
            for j in (0..a.len()).step_by(11) {
                assert!((dist2(a[i], a[j]).sqrt() - dist2(b[i], b[j]).sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_poses_fit_and_deform() {
        let t = make_template(TemplateKind::Biped, 0).unwrap();
        let shapes = generate_shapes(&t, 20, &PoseBounds::default(), 5).unwrap();
        for s in &shapes {
            assert!(s.mesh.vertices().iter().flatten().all(|c| c.abs() < 1.0));
            assert!(edge_loss(&t.mesh, &s.mesh.vertex_cloud()).unwrap() > 0.0);
            assert!((0.8..=1.2).contains(&s.pose.scale));
            for (r, j) in s.pose.rotations.iter().zip(&t.rig.joints) {
                for k in 0..3 {
                    assert!(r[k].abs() <= j.bounds[k]);
                }
            }
        }
    }

    #[test]
    fn hard_poses_widen_selected_joints() {
        let t = make_template(TemplateKind::Biped, 0).unwrap();
        let bounds = PoseBounds { hard_joints: vec![7, 9], hard_probability: 1.0, hard_scale: 2.0, ..PoseBounds::default() };
        let wide = (0..50)
            .map(|s| sample_pose(&t, &bounds, s))
            .filter(|p| p.rotations[7][0].abs() > t.rig.joints[7].bounds[0])
            .count();
        assert!(wide > 0);
    }

    #[test]
    fn rig_json_round_trip_keeps_convexity() {
        let t = make_template(TemplateKind::Quadruped, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rig.json");
        t.rig.save_json(&p).unwrap();
        let back = Rig::load_json(&p).unwrap();
        assert_eq!(back, t.rig);
        back.validate(t.mesh.vertex_count()).unwrap();
    }

    #[test]
    fn dataset_files_and_determinism() {
        let t = make_template(TemplateKind::Tube, 0).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_dataset(&t, 3, &PoseBounds::default(), 7, a.path()).unwrap();
        generate_dataset(&t, 3, &PoseBounds::default(), 7, b.path()).unwrap();
        assert_eq!(m.shapes.len(), 3);
        for name in ["manifest.json", "template.ply", "rig.json", "shape_0000.ply", "shape_0002.ply"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
        let ds = Dataset::load(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ds.shapes.len(), 3);
        assert_eq!(ds.manifest, m);
        assert!(generate_dataset(&t, 0, &PoseBounds::default(), 7, a.path()).is_err());
    }
}
