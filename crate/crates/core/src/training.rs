//! Adam and the supervised / unsupervised training loops.
//!
//! Each batch evaluates its items on independent tapes (concurrently with the
//! `parallel` feature), sums their gradients in item order, divides by the
//! batch size and applies one Adam step. Every random draw comes from a
//! stream keyed by `(seed, epoch, item)`, so results do not depend on
//! scheduling.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, PointCloud};
use crate::losses::{build_laplacian, supervised_on_tape, LaplacianVariant, LossWeights, UnsupervisedLoss};
use crate::network::{cloud_tensor, NetworkParams};
use crate::{par, rng};

/// First and second moment estimates for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Nothing is modified if any shape differs or
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::CardinalityMismatch {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteValue("adam gradient".into()));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
    state.step(params, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    Supervised,
    Unsupervised,
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "unsupervised" => Ok(Self::Unsupervised),
            _ => Err(Error::Precondition(format!("unknown training mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: TrainingMode,
    pub epochs_phase1: usize,
    pub lr_phase1: f64,
    pub epochs_phase2: usize,
    pub lr_phase2: f64,
    pub batch_size: usize,
    pub points_per_shape: usize,
    pub weights: LossWeights,
    /// Half-width of the uniform per-axis translation applied to each item.
    pub translation_jitter: f64,
    pub laplacian: LaplacianVariant,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: TrainingMode::Supervised,
            epochs_phase1: 25,
            lr_phase1: 1e-3,
            epochs_phase2: 2,
            lr_phase2: 1e-4,
            batch_size: 32,
            points_per_shape: 6890,
            weights: LossWeights::default(),
            translation_jitter: 0.03,
            laplacian: LaplacianVariant::Cotangent,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.epochs_phase1 + self.epochs_phase2 == 0
            || self.batch_size == 0
            || self.points_per_shape == 0
            || !positive(self.lr_phase1)
            || !positive(self.lr_phase2)
            || !(self.translation_jitter >= 0.0 && self.translation_jitter.is_finite())
        {
            return Err(Error::Precondition(format!("invalid training config: {self:?}")));
        }
        self.weights.validate()
    }

    fn phases(&self) -> [(u8, usize, f64); 2] {
        [(1, self.epochs_phase1, self.lr_phase1), (2, self.epochs_phase2, self.lr_phase2)]
    }
}

/// One training shape. Supervised targets are aligned with the template
/// vertices: `targets[i]` is the image of template vertex `i`.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub input: PointCloud,
    pub targets: Option<PointCloud>,
}

impl TrainingItem {
    /// A posed mesh that shares the template's vertex order supervises itself.
    pub fn from_posed(mesh: &Mesh) -> Self {
        let cloud = mesh.vertex_cloud();
        Self {
            input: cloud.clone(),
            targets: Some(cloud),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// 1-based, counted across both phases.
    pub epoch: usize,
    pub phase: u8,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLoss>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,mean_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.phase, e.mean_loss);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

struct Objective {
    mode: TrainingMode,
    template: PointCloud,
    unsupervised: Option<UnsupervisedLoss>,
}

impl Objective {
    fn new(template: &Mesh, config: &TrainingConfig) -> Result<Self> {
        let unsupervised = match config.mode {
            TrainingMode::Supervised => None,
            TrainingMode::Unsupervised => {
                let lap = build_laplacian(template, config.laplacian)?;
                Some(UnsupervisedLoss::new(template, &lap, config.weights)?)
            }
        };
        Ok(Self {
            mode: config.mode,
            template: template.vertex_cloud(),
            unsupervised,
        })
    }

    /// Loss and parameter gradients (in [`NetworkParams::tensors`] order) of
    /// one item.
    fn item(
        &self,
        params: &NetworkParams,
        item: &TrainingItem,
        config: &TrainingConfig,
        rng: &mut rng::Rng,
    ) -> Result<(f64, Vec<Tensor>)> {
        let j = config.translation_jitter;
        let shift: [f64; 3] = std::array::from_fn(|_| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 });
        let jitter = |c: &PointCloud| crate::geometry::translate(c, shift);

        let n = item.input.len();
        let picked = (n > config.points_per_shape).then(|| index::sample(rng, n, config.points_per_shape).into_vec());
        let input = match &picked {
            Some(idx) => item.input.select(idx)?,
            None => item.input.clone(),
        };
        let input = jitter(&input);

        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let x = tape.constant(cloud_tensor(&input));
        let code = vars.encoder.forward(&mut tape, x)?;

        let loss = match self.mode {
            TrainingMode::Supervised => {
                let targets = item
                    .targets
                    .as_ref()
                    .ok_or_else(|| Error::Data("supervised training item has no targets".into()))?;
                if targets.len() != self.template.len() {
                    return Err(Error::CardinalityMismatch {
                        expected: self.template.len(),
                        actual: targets.len(),
                    });
                }
                let (tpl, tgt) = match &picked {
                    Some(idx) if targets.len() == n => (self.template.select(idx)?, targets.select(idx)?),
                    _ => (self.template.clone(), targets.clone()),
                };
                let p = tape.constant(cloud_tensor(&tpl));
                let decoded = vars.decoder.forward(&mut tape, p, code)?;
                let t = tape.constant(cloud_tensor(&jitter(&tgt)));
                supervised_on_tape(&mut tape, decoded, t)?
            }
            TrainingMode::Unsupervised => {
                let objective = self.unsupervised.as_ref().expect("built for unsupervised mode");
                let p = tape.constant(cloud_tensor(&self.template));
                let decoded = vars.decoder.forward(&mut tape, p, code)?;
                objective.on_tape(&mut tape, decoded, x)?
            }
        };
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, vars.collect_grads(&tape, &mut grads)))
    }
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteValue(message) => Error::Diverged { epoch, batch, message },
        other => other,
    }
}

/// Runs phase 1 then phase 2 over `dataset` starting from `init`.
pub fn train(
    template: &Mesh,
    dataset: &[TrainingItem],
    config: &TrainingConfig,
    init: NetworkParams,
) -> Result<(NetworkParams, TrainingLog)> {
    config.validate()?;
    template.validate_template()?;
    if dataset.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if config.mode == TrainingMode::Supervised {
        if let Some(i) = dataset.iter().position(|d| d.targets.is_none()) {
            return Err(Error::Data(format!("supervised training item {i} has no targets")));
        }
    }
    let objective = Objective::new(template, config)?;
    let mut params = init;
    let mut adam = AdamState::new(&params.tensors(), config.lr_phase1);
    let mut log = TrainingLog::default();
    let mut epoch = 0usize;

    for (phase, epochs, lr) in config.phases() {
        adam.lr = lr;
        for _ in 0..epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng::stream(config.seed, &[0x5f, epoch as u64]));
            let mut total = 0.0;
            for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
                let results = par::try_map_range(chunk.len(), |k| {
                    let i = chunk[k];
                    let mut r = rng::stream(config.seed, &[0x17, epoch as u64, i as u64]);
                    objective.item(&params, &dataset[i], config, &mut r)
                })
                .map_err(|e| diverged(epoch, batch, e))?;

                let mut sum: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
                for (loss, grads) in &results {
                    total += loss;
                    for (s, g) in sum.iter_mut().zip(grads) {
                        for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
                let inv = 1.0 / chunk.len() as f64;
                for s in &mut sum {
                    s.data_mut().iter_mut().for_each(|x| *x *= inv);
                }
                adam.step(&mut params.tensors_mut(), &sum)
                    .map_err(|e| diverged(epoch, batch, e))?;
            }
            let mean_loss = total / dataset.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: 0,
                    message: "non-finite epoch loss".into(),
                });
            }
            log::info!("epoch {epoch} (phase {phase}): mean loss {mean_loss:.6}");
            log.epochs.push(EpochLoss { epoch, phase, mean_loss });
        }
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tetrahedron;
    use crate::network::NetworkConfig;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            encoder_hidden: vec![8, 16],
            latent_dim: 8,
            decoder_hidden: vec![16, 8],
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = Tensor::new(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&[&p], 0.1);
        s.step(&mut [&mut p], &[Tensor::zeros(1, 3)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn adam_first_step_example() {
        let mut p = Tensor::scalar(0.0);
        let mut s = AdamState::new(&[&p], 0.1);
        s.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.item() - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = Tensor::scalar(0.0);
        let mut s = AdamState::new(&[&p], 0.1);
        for _ in 0..1000 {
            let g = Tensor::scalar(2.0 * (p.item() - 3.0));
            s.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!((p.item() - 3.0).abs() < 1e-3, "{}", p.item());
    }

    #[test]
    fn adam_rejects_bad_input_without_mutating() {
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamState::new(&[&p], 0.1);
        assert!(matches!(
            s.step(&mut [&mut p], &[Tensor::scalar(f64::NAN)]),
            Err(Error::NonFiniteValue(_))
        ));
        assert!(s.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).is_err());
        assert_eq!(p.item(), 1.0);
        assert_eq!(s.steps(), 0);
    }

    fn config(mode: TrainingMode, epochs: usize) -> TrainingConfig {
        TrainingConfig {
            mode,
            epochs_phase1: epochs,
            epochs_phase2: 0,
            batch_size: 2,
            seed: 3,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn overfits_a_single_shape() {
        let m = tetrahedron();
        let data = vec![TrainingItem::from_posed(&m)];
        let init = NetworkParams::init(&tiny(), 1).unwrap();
        let cfg = TrainingConfig { translation_jitter: 0.0, ..config(TrainingMode::Supervised, 5) };
        let (_, log) = train(&m, &data, &cfg, init).unwrap();
        assert_eq!(log.epochs.len(), 5);
        let l: Vec<f64> = log.epochs.iter().map(|e| e.mean_loss).collect();
        assert!(l[4] < l[0]);
        for w in l.windows(2) {
            assert!(w[1] <= w[0], "{l:?}");
        }
    }

    #[test]
    fn deterministic_across_runs_and_paths() {
        let m = tetrahedron();
        let data: Vec<_> = (0..5).map(|_| TrainingItem::from_posed(&m)).collect();
        let cfg = TrainingConfig { epochs_phase2: 1, ..config(TrainingMode::Supervised, 2) };
        let init = NetworkParams::init(&tiny(), 1).unwrap();
        let (p1, l1) = train(&m, &data, &cfg, init.clone()).unwrap();
        let (p2, l2) = train(&m, &data, &cfg, init.clone()).unwrap();
        par::set_sequential(true);
        let (p3, l3) = train(&m, &data, &cfg, init).unwrap();
        par::set_sequential(false);
        assert_eq!(l1, l2);
        assert_eq!(l1, l3);
        assert_eq!(p1.tensors(), p2.tensors());
        assert_eq!(p1.tensors(), p3.tensors());
        assert_eq!(l1.epochs.iter().map(|e| (e.epoch, e.phase)).collect::<Vec<_>>(), vec![(1, 1), (2, 1), (3, 2)]);
    }

    #[test]
    fn unsupervised_runs_and_logs_csv() {
        let m = tetrahedron();
        let data = vec![TrainingItem { input: m.vertex_cloud(), targets: None }];
        let init = NetworkParams::init(&tiny(), 2).unwrap();
        let (_, log) = train(&m, &data, &config(TrainingMode::Unsupervised, 2), init).unwrap();
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,phase,mean_loss");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,1,"));
    }

    #[test]
    fn supervised_without_targets_is_a_data_error() {
        let m = tetrahedron();
        let data = vec![TrainingItem { input: m.vertex_cloud(), targets: None }];
        let init = NetworkParams::init(&tiny(), 2).unwrap();
        assert!(matches!(
            train(&m, &data, &config(TrainingMode::Supervised, 1), init),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn subsampling_keeps_pairs_aligned() {
        let m = tetrahedron();
        let data = vec![TrainingItem::from_posed(&m)];
        let init = NetworkParams::init(&tiny(), 4).unwrap();
        let cfg = TrainingConfig { points_per_shape: 2, ..config(TrainingMode::Supervised, 3) };
        let (_, log) = train(&m, &data, &cfg, init).unwrap();
        assert!(log.epochs.iter().all(|e| e.mean_loss.is_finite()));
    }
}
