use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shapedeform"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"
seed = 3

[network]
encoder_hidden = [8, 16]
latent_dim = 8
decoder_hidden = [16, 8]

[training]
epochs_phase1 = 1
epochs_phase2 = 1
batch_size = 4
"#;

#[test]
fn missing_out_is_a_usage_error() {
    let o = run(&["gen-data", "--kind", "biped", "--count", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn unknown_kind_is_a_usage_error() {
    let o = run(&["gen-data", "--kind", "octopus", "--count", "2", "--seed", "1", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn gen_train_match_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["gen-data", "--kind", "tube", "--count", "10", "--seed", "1", "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plys = std::fs::read_dir(&data)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("shape_"))
        .count();
    assert_eq!(plys, 10);

    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run_dir = dir.path().join("run");
    let manifest = data.join("manifest.json");
    let o = run(&["train", "--data", s(&manifest), "--mode", "supervised", "--config", s(&cfg), "--out", s(&run_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.ckpt", "loss.csv", "config.toml", "template.ply"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    // The echoed config reproduces the run.
    let again = dir.path().join("again");
    let o = run(&["train", "--config", s(&run_dir.join("config.toml")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(run_dir.join("model.ckpt")).unwrap(),
        std::fs::read(again.join("model.ckpt")).unwrap()
    );

    let pred = dir.path().join("pred.csv");
    let colors = dir.path().join("colors");
    let shape0 = data.join("shape_0000.ply");
    let shape1 = data.join("shape_0001.ply");
    let o = run(&[
        "match", "--checkpoint", s(&run_dir.join("model.ckpt")), "--ref", s(&shape0), "--target", s(&shape1),
        "--out", s(&pred), "--orientations", "4", "--refine-iters", "5", "--color-out", s(&colors),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(&pred).unwrap().lines().count();
    assert_eq!(rows, 1 + 186);
    assert!(std::fs::read_to_string(colors.join("reference.ply")).unwrap().contains("property uchar red"));
    assert!(colors.join("target.ply").exists());

    let per_pair = dir.path().join("per_pair.csv");
    let o = run(&["eval", "--pred", s(&pred), "--truth", s(&manifest), "--pair", "0,1", "--out", s(&per_pair)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mean: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!(mean.is_finite() && mean >= 0.0);
    assert_eq!(std::fs::read_to_string(&per_pair).unwrap().lines().count(), 1 + 186);

    let o = run(&["train", "--data", s(&manifest), "--mode", "unsupervised", "--config", s(&cfg),
        "--lambda-lap", "0.01", "--lambda-edges", "0.02", "--out", s(&dir.path().join("unsup"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("unsup/loss.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let loss: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(loss.is_finite());
    }
    let echo = std::fs::read_to_string(dir.path().join("unsup/config.toml")).unwrap();
    assert!(echo.contains("lambda_edges = 0.02"));
}

const TETRA_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";

#[test]
fn eval_prints_the_mean_distance() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.obj"), TETRA_OBJ).unwrap();
    let manifest = r#"{"kind":"tube","resolution":0,"template":"t.obj","rig":"rig.json",
        "shapes":[{"path":"t.obj","seed":0,"pose":[],"scale":1.0},{"path":"t.obj","seed":0,"pose":[],"scale":1.0}],
        "correspondence":"by-vertex-index"}"#;
    std::fs::write(dir.path().join("manifest.json"), manifest).unwrap();
    let header = "ref_x,ref_y,ref_z,tgt_x,tgt_y,tgt_z,tpl_x,tpl_y,tpl_z\n";
    let truth = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    let write = |name: &str, offsets: [f64; 4]| {
        let mut csv = header.to_string();
        for (t, d) in truth.iter().zip(offsets) {
            csv += &format!("0,0,0,{},{},{},0,0,0\n", t[0] + d, t[1], t[2]);
        }
        let p = dir.path().join(name);
        std::fs::write(&p, csv).unwrap();
        p
    };
    let m = dir.path().join("manifest.json");

    let perfect = write("perfect.csv", [0.0; 4]);
    let o = run(&["eval", "--pred", s(&perfect), "--truth", s(&m), "--pair", "0,1"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0.000000");

    let off = write("off.csv", [0.1, 0.3, 0.1, 0.3]);
    let o = run(&["eval", "--pred", s(&off), "--truth", s(&m), "--pair", "0,1"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0.200000");

    let o = run(&["eval", "--pred", s(&off), "--truth", s(&m), "--pair", "0,9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["eval", "--pred", s(&off), "--truth", s(&m), "--pair", "0-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["gen-data", "--kind", "quadruped", "--count", "3", "--seed", "9", "--out", s(out)]);
        assert!(o.status.success());
    }
    for f in ["manifest.json", "template.ply", "rig.json", "shape_0000.ply", "shape_0002.ply"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
