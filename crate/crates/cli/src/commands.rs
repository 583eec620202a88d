use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use shapedeform::datagen::{generate_dataset, make_template, ArticulatedTemplate, Dataset, PoseBounds};
use shapedeform::geometry::{bounding_box, load_mesh, save_mesh, Mesh, MeshFormat, Point3, Rgb};
use shapedeform::inference::{correspondence_error, match_shapes, CorrespondenceSet};
use shapedeform::network::{config_hash, load_checkpoint, save_checkpoint, NetworkParams};
use shapedeform::training::{train, TrainingItem};
use shapedeform::{Error, Result};

use crate::config::RunConfig;
use crate::{Cli, Command, EvalArgs, GenDataArgs, MatchArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const TEMPLATE_FILE: &str = "template.ply";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Result<()> {
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_any(path: &Path) -> Result<Mesh> {
    load_mesh(path, MeshFormat::from_path(path)?)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let template = make_template(a.kind, a.resolution)?;
    let bounds = hard_bounds(&template, PoseBounds { hard_probability: a.hard_probability, ..PoseBounds::default() });
    let manifest = generate_dataset(&template, a.count, &bounds, a.seed, &a.out)?;
    log::info!(
        "wrote {} shapes ({} vertices each) to {}",
        manifest.shapes.len(),
        template.mesh.vertex_count(),
        a.out.display()
    );
    Ok(())
}

/// Hard poses widen every non-root joint.
fn hard_bounds(template: &ArticulatedTemplate, mut bounds: PoseBounds) -> PoseBounds {
    if bounds.hard_probability > 0.0 && bounds.hard_joints.is_empty() {
        bounds.hard_joints = (1..template.rig.joints.len()).collect();
    }
    bounds
}

fn resolve_train(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = RunConfig::load(a.config.as_deref())?;
    if let Some(d) = &a.data {
        c.data = Some(d.clone());
    }
    if let Some(m) = a.mode {
        c.training.mode = m;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    let t = &mut c.training;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.epochs_phase1, t.epochs_phase1);
    set!(a.epochs_phase2, t.epochs_phase2);
    set!(a.lr_phase1, t.lr_phase1);
    set!(a.lr_phase2, t.lr_phase2);
    set!(a.batch_size, t.batch_size);
    set!(a.points_per_shape, t.points_per_shape);
    set!(a.lambda_lap, t.weights.lambda_lap);
    set!(a.lambda_edges, t.weights.lambda_edges);
    set!(a.jitter, t.translation_jitter);
    if c.data.is_none() {
        return Err(Error::Precondition("no dataset given (--data or `data` in the config)".into()));
    }
    c.resolve()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = resolve_train(&a)?;
    let manifest = config.data.clone().expect("checked in resolve_train");
    let data = Dataset::load(&manifest)?;
    let items: Vec<TrainingItem> = data.shapes.iter().map(TrainingItem::from_posed).collect();
    log::info!(
        "training ({:?}) on {} shapes, {} template vertices",
        config.training.mode,
        items.len(),
        data.template.vertex_count()
    );

    create_dir(&a.out)?;
    let echo = config.to_toml();
    let config_path = a.out.join(CONFIG_FILE);
    std::fs::write(&config_path, &echo).map_err(|e| Error::io(&config_path, e))?;

    let mut init = NetworkParams::init(&config.network, config.seed)?;
    init.metadata.config_hash = Some(config_hash(echo.as_bytes()));
    let (params, log) = train(&data.template, &items, &config.training, init)?;

    save_checkpoint(&params, &a.out.join(CHECKPOINT_FILE))?;
    log.write_csv(&a.out.join(LOSS_FILE))?;
    save_mesh(&data.template, &a.out.join(TEMPLATE_FILE), MeshFormat::PlyAscii, None)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn resolve_match(a: &MatchArgs) -> Result<RunConfig> {
    let mut c = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(n) = a.orientations {
        c.matching.orientations = n;
    }
    if let Some(n) = a.template_res {
        c.matching.template_resolution = Some(n);
    }
    if let Some(n) = a.refine_iters {
        c.refinement.iterations = n;
    }
    if let Some(lr) = a.refine_lr {
        c.refinement.lr = lr;
    }
    if let Some(m) = a.chamfer_mode {
        c.refinement.chamfer_mode = m;
    }
    c.resolve()
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let config = resolve_match(&a)?;
    let params = load_checkpoint(&a.checkpoint)?;
    let template_path = a.template.clone().unwrap_or_else(|| {
        a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default().join(TEMPLATE_FILE)
    });
    let template = load_any(&template_path)?;
    let reference = load_any(&a.reference)?;
    let target = load_any(&a.target)?;

    let result = match_shapes(
        &params,
        &template,
        &reference.vertex_cloud(),
        &target.vertex_cloud(),
        &config.match_config(),
    )?;
    log::info!(
        "reference: angle {:.4}, chamfer {:.6}; target: angle {:.4}, chamfer {:.6}",
        result.reference.orientation.angle,
        result.reference.chamfer,
        result.target.orientation.angle,
        result.target.chamfer
    );
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    result.extraction.set.write_csv(&a.out)?;

    if let Some(dir) = &a.color_out {
        create_dir(dir)?;
        let samples = result.samples.cloud.points();
        let (lo, hi) = bounding_box(template.vertices());
        let color = |p: Point3| -> Rgb {
            std::array::from_fn(|k| {
                let t = if hi[k] > lo[k] { (p[k] - lo[k]) / (hi[k] - lo[k]) } else { 0.5 };
                (t.clamp(0.0, 1.0) * 255.0).round() as u8
            })
        };
        let ref_colors: Vec<Rgb> = result.extraction.set.pairs.iter().map(|p| color(p.template)).collect();
        let tgt_colors: Vec<Rgb> = result.extraction.target_samples.iter().map(|&i| color(samples[i])).collect();
        save_mesh(&reference, &dir.join("reference.ply"), MeshFormat::PlyAscii, Some(&ref_colors))?;
        save_mesh(&target, &dir.join("target.ply"), MeshFormat::PlyAscii, Some(&tgt_colors))?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let pred = CorrespondenceSet::read_csv(&a.pred)?;
    let data = Dataset::load(&a.truth)?;
    let (i, j) = a.pair;
    let n = data.shapes.len();
    if i >= n || j >= n {
        return Err(Error::Precondition(format!("pair ({i}, {j}) is outside the {n} shapes of the manifest")));
    }
    if pred.len() != data.shapes[i].vertex_count() {
        return Err(Error::CardinalityMismatch { expected: data.shapes[i].vertex_count(), actual: pred.len() });
    }
    let truth: BTreeMap<usize, Point3> = data.shapes[j].vertices().iter().copied().enumerate().collect();
    let err = correspondence_error(&pred, &truth)?;
    if let Some(out) = &a.out {
        let mut s = String::from("index,error\n");
        for (k, e) in err.per_pair.iter().enumerate() {
            let _ = writeln!(s, "{k},{e}");
        }
        std::fs::write(out, s).map_err(|e| Error::io(out, e))?;
    }
    println!("{:.6}", err.mean);
    Ok(())
}
