//! Test-time matching: rotation search, latent refinement, correspondence
//! extraction through the template, and error metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{
    dist2, normalize_shape, rotate_y, sample_surface, Mesh, NearestNeighborIndex, Point3, PointCloud, SampleMode,
    SurfaceSamples,
};
use crate::losses::{chamfer, chamfer_on_tape, ChamferMode};
use crate::network::{cloud_tensor, LatentCode, NetworkParams};
use crate::training::AdamState;
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub iterations: usize,
    pub lr: f64,
    pub chamfer_mode: ChamferMode,
    /// Template points decoded during refinement; `None` uses the vertices.
    pub template_sample_count: Option<usize>,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr: 5e-4,
            chamfer_mode: ChamferMode::Symmetric,
            template_sample_count: None,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.template_sample_count == Some(0) {
            return Err(Error::Precondition(format!("invalid refinement config: {self:?}")));
        }
        Ok(())
    }
}

/// Maps template points through a latent code. Implemented by the network;
/// tests substitute simpler maps.
pub trait Deformer: Sync {
    fn deform(&self, points: &PointCloud, code: &LatentCode) -> Result<PointCloud>;
}

impl Deformer for NetworkParams {
    fn deform(&self, points: &PointCloud, code: &LatentCode) -> Result<PointCloud> {
        self.decode(points, code)
    }
}

#[derive(Debug, Clone)]
pub struct Orientation {
    pub index: usize,
    pub angle: f64,
    pub code: LatentCode,
    pub chamfer: f64,
}

/// Tries the yaw angles `2πk/n` and keeps the one whose reconstruction has
/// the smallest symmetric Chamfer distance (smallest `k` on ties).
pub fn best_orientation(
    params: &NetworkParams,
    template: &PointCloud,
    shape: &PointCloud,
    n_orientations: usize,
) -> Result<Orientation> {
    if n_orientations == 0 {
        return Err(Error::Precondition("at least one orientation is required".into()));
    }
    let candidates = par::try_map_range(n_orientations, |k| {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / n_orientations as f64;
        let rotated = if k == 0 { shape.clone() } else { rotate_y(shape, angle) };
        let code = params.encode(&rotated)?;
        let decoded = params.decode(template, &code)?;
        let chamfer = chamfer(&decoded, &rotated, ChamferMode::Symmetric);
        Ok::<_, Error>(Orientation { index: k, angle, code, chamfer })
    })?;
    let mut best: Option<Orientation> = None;
    for c in candidates {
        if best.as_ref().is_none_or(|b| c.chamfer < b.chamfer) {
            best = Some(c);
        }
    }
    Ok(best.expect("n_orientations >= 1"))
}

/// Adam on the latent code with frozen weights. Returns the best code visited
/// (the earliest one on ties) and its Chamfer distance.
pub fn refine_latent(
    params: &NetworkParams,
    template: &PointCloud,
    shape: &PointCloud,
    init: &LatentCode,
    config: &RefinementConfig,
) -> Result<(LatentCode, f64)> {
    config.validate()?;
    let mut code = init.to_tensor();
    let target = cloud_tensor(shape);
    let points = cloud_tensor(template);
    let mut adam = AdamState::new(&[&code], config.lr);
    let mut best = (init.clone(), f64::INFINITY);
    for it in 0..=config.iterations {
        let mut tape = Tape::new();
        let decoder = params.decoder.register(&mut tape, false);
        let x = tape.leaf(code.clone(), true);
        let p = tape.leaf_ref(&points, false);
        let t = tape.leaf_ref(&target, false);
        let decoded = decoder.forward(&mut tape, p, x)?;
        let loss = chamfer_on_tape(&mut tape, decoded, t, config.chamfer_mode)?;
        let value = tape.value(loss).item();
        if value < best.1 {
            best = (LatentCode::from_tensor(&code)?, value);
        }
        if it == config.iterations {
            break;
        }
        let mut grads = tape.backward(loss)?;
        let g = grads.take(x).expect("code requires a gradient");
        adam.step(&mut [&mut code], &[g])?;
    }
    Ok(best)
}

/// One matched reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub reference: Point3,
    pub target: Point3,
    pub template: Point3,
    pub target_index: Option<usize>,
}

/// Pairs in reference-point order: pair `i` belongs to reference point `i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<CorrespondencePair>,
}

const CSV_HEADER: &str = "ref_x,ref_y,ref_z,tgt_x,tgt_y,tgt_z,tpl_x,tpl_y,tpl_z";

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for p in &self.pairs {
            let v: Vec<String> = [p.reference, p.target, p.template]
                .iter()
                .flatten()
                .map(|x| x.to_string())
                .collect();
            let _ = writeln!(s, "{}", v.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::parse(1, format!("expected header {CSV_HEADER:?}"))),
        }
        let mut pairs = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
            if v.len() != 9 || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(i + 1, "expected 9 finite values"));
            }
            pairs.push(CorrespondencePair {
                reference: [v[0], v[1], v[2]],
                target: [v[3], v[4], v[5]],
                template: [v[6], v[7], v[8]],
                target_index: None,
            });
        }
        Ok(Self { pairs })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// All template vertices first, then `resolution − |V|` area-uniform samples.
pub fn template_samples(template: &Mesh, resolution: usize, seed: u64) -> Result<SurfaceSamples> {
    let nv = template.vertex_count();
    if resolution < nv {
        return Err(Error::Precondition(format!(
            "template resolution {resolution} is below the vertex count {nv}"
        )));
    }
    let mut s = sample_surface(template, nv, SampleMode::VertexOnly, seed)?;
    if resolution > nv {
        let extra = sample_surface(template, resolution - nv, SampleMode::UniformArea, seed)?;
        let mut pts = s.cloud.into_points();
        pts.extend_from_slice(extra.cloud.points());
        s.cloud = PointCloud::new(pts)?;
        s.faces.extend(extra.faces);
        s.barycentric.extend(extra.barycentric);
    }
    Ok(s)
}

/// Output of [`extract_correspondences`] with the intermediate lookups kept
/// for visualization.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub set: CorrespondenceSet,
    /// Index into the template samples for every reference point.
    pub reference_samples: Vec<usize>,
    /// Index into the template samples for every target point.
    pub target_samples: Vec<usize>,
}

/// For each reference point: nearest sample of the template deformed by
/// `code_r`, then the target point nearest to that sample deformed by
/// `code_t`.
#[allow(clippy::too_many_arguments)]
pub fn extract_correspondences<D: Deformer>(
    deformer: &D,
    samples: &PointCloud,
    shape_r: &PointCloud,
    code_r: &LatentCode,
    shape_t: &PointCloud,
    code_t: &LatentCode,
) -> Result<Extraction> {
    let deformed_r = deformer.deform(samples, code_r)?;
    let deformed_t = deformer.deform(samples, code_t)?;
    let index_r = NearestNeighborIndex::new(&deformed_r);
    let index_shape_t = NearestNeighborIndex::new(shape_t);
    let pairs_idx = par::map(shape_r.points(), |&q| {
        let p = index_r.query(q).0;
        let t = index_shape_t.query(deformed_t.points()[p]).0;
        (p, t)
    });
    let index_t = NearestNeighborIndex::new(&deformed_t);
    let target_samples = par::map(shape_t.points(), |&q| index_t.query(q).0);
    let pairs = shape_r
        .points()
        .iter()
        .zip(&pairs_idx)
        .map(|(&q, &(p, t))| CorrespondencePair {
            reference: q,
            target: shape_t.points()[t],
            template: samples.points()[p],
            target_index: Some(t),
        })
        .collect();
    Ok(Extraction {
        set: CorrespondenceSet { pairs },
        reference_samples: pairs_idx.iter().map(|p| p.0).collect(),
        target_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceError {
    pub mean: f64,
    pub per_pair: Vec<f64>,
}

/// Mean Euclidean distance between predicted and true targets. `truth` is
/// keyed by reference index.
pub fn correspondence_error(pred: &CorrespondenceSet, truth: &BTreeMap<usize, Point3>) -> Result<CorrespondenceError> {
    if pred.is_empty() {
        return Err(Error::Precondition("no correspondences to evaluate".into()));
    }
    let per_pair = pred
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = truth.get(&i).ok_or(Error::MissingGroundTruth(i))?;
            Ok(dist2(p.target, *t).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(CorrespondenceError { mean, per_pair })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub orientations: usize,
    pub refinement: RefinementConfig,
    /// Template samples used for extraction; `None` means 20× the vertex
    /// count.
    pub template_resolution: Option<usize>,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            orientations: 50,
            refinement: RefinementConfig::default(),
            template_resolution: None,
            seed: 0,
        }
    }
}

/// Result of fitting one shape: normalization, rotation and refined code.
#[derive(Debug, Clone)]
pub struct Fit {
    pub translation: Point3,
    pub orientation: Orientation,
    /// The centered, rotated shape the code describes.
    pub aligned: PointCloud,
    pub code: LatentCode,
    pub chamfer: f64,
}

/// normalize → rotation search → refinement.
pub fn fit_shape(params: &NetworkParams, template: &Mesh, shape: &PointCloud, config: &MatchConfig) -> Result<Fit> {
    let tpl = refinement_template(template, &config.refinement, config.seed)?;
    let (centered, translation) = normalize_shape(shape);
    let orientation = best_orientation(params, &template.vertex_cloud(), &centered, config.orientations)?;
    let aligned = if orientation.index == 0 { centered } else { rotate_y(&centered, orientation.angle) };
    let (code, chamfer) = if config.refinement.iterations == 0 {
        (orientation.code.clone(), orientation.chamfer)
    } else {
        refine_latent(params, &tpl, &aligned, &orientation.code, &config.refinement)?
    };
    Ok(Fit { translation, orientation, aligned, code, chamfer })
}

fn refinement_template(template: &Mesh, config: &RefinementConfig, seed: u64) -> Result<PointCloud> {
    match config.template_sample_count {
        None => Ok(template.vertex_cloud()),
        Some(n) => Ok(sample_surface(template, n, SampleMode::UniformArea, rng::derive_seed(seed, &[0x7e]))?.cloud),
    }
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub reference: Fit,
    pub target: Fit,
    pub samples: SurfaceSamples,
    /// Pairs in the original coordinates of the input shapes.
    pub extraction: Extraction,
}

/// Full pipeline between two shapes; each is fitted independently, then
/// matched through the template.
pub fn match_shapes(
    params: &NetworkParams,
    template: &Mesh,
    reference: &PointCloud,
    target: &PointCloud,
    config: &MatchConfig,
) -> Result<MatchResult> {
    let resolution = config.template_resolution.unwrap_or(20 * template.vertex_count());
    let samples = template_samples(template, resolution, rng::derive_seed(config.seed, &[0x5a]))?;
    let fit_r = fit_shape(params, template, reference, config)?;
    let fit_t = fit_shape(params, template, target, config)?;
    let mut extraction =
        extract_correspondences(params, &samples.cloud, &fit_r.aligned, &fit_r.code, &fit_t.aligned, &fit_t.code)?;
    for (i, p) in extraction.set.pairs.iter_mut().enumerate() {
        p.reference = reference.points()[i];
        p.target = target.points()[p.target_index.expect("set by extraction")];
    }
    Ok(MatchResult { reference: fit_r, target: fit_t, samples, extraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{brute_force_nearest, tetrahedron};
    use crate::network::NetworkConfig;
    use rand::Rng;

    struct Identity;

    impl Deformer for Identity {
        fn deform(&self, points: &PointCloud, _: &LatentCode) -> Result<PointCloud> {
            Ok(points.clone())
        }
    }

    fn tiny(seed: u64) -> NetworkParams {
        let cfg = NetworkConfig { encoder_hidden: vec![8, 16], latent_dim: 8, decoder_hidden: vec![16, 8] };
        NetworkParams::init(&cfg, seed).unwrap()
    }

    fn random_cloud(r: &mut rng::Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| std::array::from_fn(|_| r.random_range(-0.5..0.5))).collect()).unwrap()
    }

    #[test]
    fn identity_deformer_reduces_to_nearest_neighbors() {
        let mut r = rng::stream(8, &[]);
        let samples = random_cloud(&mut r, 10);
        let shape_r = random_cloud(&mut r, 10);
        let shape_t = random_cloud(&mut r, 10);
        let code = LatentCode::new(vec![0.0]).unwrap();
        let ex = extract_correspondences(&Identity, &samples, &shape_r, &code, &shape_t, &code).unwrap();
        assert_eq!(ex.set.len(), 10);
        for (q, pair) in shape_r.points().iter().zip(&ex.set.pairs) {
            let (p, _) = brute_force_nearest(samples.points(), *q);
            let (t, _) = brute_force_nearest(shape_t.points(), samples.points()[p]);
            assert_eq!(pair.template, samples.points()[p]);
            assert_eq!(pair.target, shape_t.points()[t]);
            assert_eq!(pair.reference, *q);
        }
    }

    #[test]
    fn self_match_on_samples_is_identity() {
        let mut r = rng::stream(9, &[]);
        let samples = random_cloud(&mut r, 200);
        let code = LatentCode::new(vec![0.0]).unwrap();
        let ex = extract_correspondences(&Identity, &samples, &samples, &code, &samples, &code).unwrap();
        for (i, p) in ex.set.pairs.iter().enumerate() {
            assert_eq!(p.target_index, Some(i));
        }
    }

    #[test]
    fn correspondence_error_examples() {
        let pair = |t: Point3| CorrespondencePair { reference: [0.0; 3], target: t, template: [0.0; 3], target_index: None };
        let set = CorrespondenceSet { pairs: vec![pair([0.05, 0.0, 0.0])] };
        let truth = BTreeMap::from([(0, [0.0; 3])]);
        assert!((correspondence_error(&set, &truth).unwrap().mean - 0.05).abs() < 1e-15);
        let truth = BTreeMap::from([(0, [0.05, 0.0, 0.0])]);
        assert_eq!(correspondence_error(&set, &truth).unwrap().mean, 0.0);
        assert!(matches!(correspondence_error(&set, &BTreeMap::new()), Err(Error::MissingGroundTruth(0))));

        let mut r = rng::stream(10, &[]);
        let pred = random_cloud(&mut r, 30);
        let truth_pts = random_cloud(&mut r, 30);
        let set = CorrespondenceSet { pairs: pred.points().iter().map(|&t| pair(t)).collect() };
        let truth: BTreeMap<_, _> = truth_pts.points().iter().copied().enumerate().collect();
        let mut sum = 0.0;
        for (a, b) in pred.points().iter().zip(truth_pts.points()) {
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        }
        assert!((correspondence_error(&set, &truth).unwrap().mean - sum / 30.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let set = CorrespondenceSet {
            pairs: vec![CorrespondencePair {
                reference: [0.1, -0.2, 1.0 / 3.0],
                target: [1e-17, 2.0, 3.0],
                template: [4.0, 5.5, -6.0],
                target_index: None,
            }],
        };
        let csv = set.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(CorrespondenceSet::from_csv(&csv).unwrap(), set);
        assert!(CorrespondenceSet::from_csv("a,b\n").is_err());
        assert!(CorrespondenceSet::from_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
    }

    #[test]
    fn single_orientation_is_plain_encode() {
        let params = tiny(1);
        let m = tetrahedron();
        let o = best_orientation(&params, &m.vertex_cloud(), &m.vertex_cloud(), 1).unwrap();
        assert_eq!(o.angle, 0.0);
        assert_eq!(o.code, params.encode(&m.vertex_cloud()).unwrap());
    }

    #[test]
    fn orientation_is_the_exhaustive_argmin_and_deterministic() {
        let params = tiny(2);
        let m = tetrahedron();
        let tpl = m.vertex_cloud();
        let mut r = rng::stream(11, &[]);
        let shape = random_cloud(&mut r, 40);
        let o = best_orientation(&params, &tpl, &shape, 12).unwrap();
        for k in 0..12 {
            let one = best_orientation(&params, &tpl, &rotate_y(&shape, 2.0 * std::f64::consts::PI * k as f64 / 12.0), 1)
                .unwrap();
            assert!(o.chamfer <= one.chamfer);
        }
        let again = best_orientation(&params, &tpl, &shape, 12).unwrap();
        assert_eq!(o.index, again.index);
        assert_eq!(o.code, again.code);
    }

    #[test]
    fn refinement_never_worsens_and_respects_zero_iterations() {
        let params = tiny(3);
        let tpl = tetrahedron().vertex_cloud();
        let mut r = rng::stream(12, &[]);
        let shape = random_cloud(&mut r, 30);
        let init = params.encode(&shape).unwrap();
        let initial = chamfer(&params.decode(&tpl, &init).unwrap(), &shape, ChamferMode::Symmetric);

        let zero = RefinementConfig { iterations: 0, ..RefinementConfig::default() };
        let (code, c) = refine_latent(&params, &tpl, &shape, &init, &zero).unwrap();
        assert_eq!(code, init);
        assert!((c - initial).abs() < 1e-12 * initial);

        let cfg = RefinementConfig { iterations: 200, lr: 1e-2, ..RefinementConfig::default() };
        let (code, c) = refine_latent(&params, &tpl, &shape, &init, &cfg).unwrap();
        assert!(c <= initial);
        let check = chamfer(&params.decode(&tpl, &code).unwrap(), &shape, ChamferMode::Symmetric);
        assert!((check - c).abs() < 1e-12 * c);
    }

    #[test]
    fn refinement_of_an_exact_reconstruction_keeps_init() {
        let params = tiny(4);
        let tpl = tetrahedron().vertex_cloud();
        let init = LatentCode::new(vec![0.3; 8]).unwrap();
        let shape = params.decode(&tpl, &init).unwrap();
        let cfg = RefinementConfig { iterations: 20, ..RefinementConfig::default() };
        let (code, c) = refine_latent(&params, &tpl, &shape, &init, &cfg).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(code, init);
    }

    #[test]
    fn template_samples_put_vertices_first() {
        let m = tetrahedron();
        let s = template_samples(&m, 20, 1).unwrap();
        assert_eq!(s.cloud.len(), 20);
        assert_eq!(&s.cloud.points()[..4], m.vertices());
        assert!(template_samples(&m, 3, 1).is_err());
    }

    #[test]
    fn match_pipeline_maps_back_to_input_coordinates() {
        let params = tiny(5);
        let m = tetrahedron();
        let mut r = rng::stream(13, &[]);
        let a = crate::geometry::translate(&random_cloud(&mut r, 25), [2.0, 0.0, 1.0]);
        let b = random_cloud(&mut r, 15);
        let cfg = MatchConfig {
            orientations: 4,
            refinement: RefinementConfig { iterations: 5, ..RefinementConfig::default() },
            ..MatchConfig::default()
        };
        let res = match_shapes(&params, &m, &a, &b, &cfg).unwrap();
        assert_eq!(res.extraction.set.len(), 25);
        assert_eq!(res.samples.cloud.len(), 80);
        for (p, q) in res.extraction.set.pairs.iter().zip(a.points()) {
            assert_eq!(p.reference, *q);
            assert!(b.points().contains(&p.target));
        }
        assert_eq!(res.extraction.target_samples.len(), 15);
    }
}
