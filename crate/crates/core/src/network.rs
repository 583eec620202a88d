//! Point-cloud encoder and template deformation decoder.
//!
//! The encoder applies a shared per-point MLP (ReLU after every layer), takes
//! the channelwise max over all points and finishes with a linear layer,
//! producing the latent code. The decoder maps a template point concatenated
//! with the latent code through a ReLU MLP and a final `tanh`, so every
//! decoded coordinate lies in `(-1, 1)`.
//!
//! The first decoder layer multiplies `[p ; x]`; it is evaluated as
//! `p·W[..3] + x·W[3..]` so the latent half is computed once per shape rather
//! than once per template point.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Axis, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng;

/// Layer widths. [`NetworkConfig::paper`] is the default architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Per-point MLP widths, applied to 3D input coordinates.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Hidden widths of the decoder; its input is `3 + latent_dim`, output 3.
    pub decoder_hidden: Vec<usize>,
}

impl NetworkConfig {
    /// 3→64→128→1024, max-pool, 1024→1024; decoder 1027→1024→512→254→128→3.
    pub fn paper() -> Self {
        Self {
            encoder_hidden: vec![64, 128, 1024],
            latent_dim: 1024,
            decoder_hidden: vec![1024, 512, 254, 128],
        }
    }

    /// Same depth at a quarter of the width or less; trainable on one CPU core
    /// in minutes.
    pub fn desk() -> Self {
        Self {
            encoder_hidden: vec![32, 64, 256],
            latent_dim: 128,
            decoder_hidden: vec![256, 128, 64, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_hidden.is_empty()
            || self.decoder_hidden.is_empty()
            || self.latent_dim == 0
            || self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0)
        {
            return Err(Error::Precondition(format!("invalid network widths {self:?}")));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        let mut fan_in = 3;
        for &w in &self.encoder_hidden {
            n += (fan_in + 1) * w;
            fan_in = w;
        }
        n += (fan_in + 1) * self.latent_dim;
        fan_in = 3 + self.latent_dim;
        for &w in self.decoder_hidden.iter().chain(std::iter::once(&3)) {
            n += (fan_in + 1) * w;
            fan_in = w;
        }
        n
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Dense layer `y = x·W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, r: &mut rng::Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| r.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::new(fan_in, fan_out, w).expect("sized by construction"),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    fn register<'a>(&'a self, tape: &mut Tape<'a>, grad: bool) -> LinearVars {
        LinearVars {
            weight: tape.leaf_ref(&self.weight, grad),
            bias: tape.leaf_ref(&self.bias, grad),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.weight)?;
        tape.add_bias(h, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub point_mlp: Vec<Linear>,
    pub head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// `layers[0]` takes `3 + latent_dim` inputs; the last layer outputs 3.
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub network: NetworkConfig,
    /// Hash of the training configuration that produced the weights.
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub metadata: Metadata,
}

/// Global shape descriptor produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("latent code".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::row(self.0.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.data().to_vec())
    }
}

/// Paper-width parameters; see [`NetworkParams::init`].
pub fn init_params(seed: u64) -> NetworkParams {
    NetworkParams::init(&NetworkConfig::paper(), seed).expect("paper config is valid")
}

impl NetworkParams {
    /// Weights `~ U(-1/√fan_in, 1/√fan_in)`, biases zero. Each layer draws
    /// from its own seeded stream.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layer = 0u64;
        let mut next = |fan_in: usize, fan_out: usize| {
            let mut r = rng::stream(seed, &[0x1417, layer]);
            layer += 1;
            Linear::init(fan_in, fan_out, &mut r)
        };
        let mut point_mlp = Vec::new();
        let mut fan_in = 3;
        for &w in &config.encoder_hidden {
            point_mlp.push(next(fan_in, w));
            fan_in = w;
        }
        let head = next(fan_in, config.latent_dim);
        let mut layers = Vec::new();
        fan_in = 3 + config.latent_dim;
        for &w in config.decoder_hidden.iter().chain(std::iter::once(&3)) {
            layers.push(next(fan_in, w));
            fan_in = w;
        }
        Ok(Self {
            encoder: EncoderParams { point_mlp, head },
            decoder: DecoderParams { layers },
            metadata: Metadata {
                seed,
                network: config.clone(),
                config_hash: None,
            },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.metadata.network
    }

    pub fn latent_dim(&self) -> usize {
        self.metadata.network.latent_dim
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut v: Vec<(String, &Linear)> = self
            .encoder
            .point_mlp
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("encoder.mlp.{i}"), l))
            .collect();
        v.push(("encoder.head".into(), &self.encoder.head));
        v.extend(
            self.decoder
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| (format!("decoder.{i}"), l)),
        );
        v
    }

    /// Every tensor in canonical order with its checkpoint name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.linears()
            .into_iter()
            .flat_map(|(n, l)| [(format!("{n}.weight"), &l.weight), (format!("{n}.bias"), &l.bias)])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for l in self.encoder.point_mlp.iter_mut() {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v.push(&mut self.encoder.head.weight);
        v.push(&mut self.encoder.head.bias);
        for l in self.decoder.layers.iter_mut() {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> NetworkVars {
        NetworkVars {
            encoder: self.encoder.register(tape, requires_grad),
            decoder: self.decoder.register(tape, requires_grad),
        }
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<LatentCode> {
        self.encoder.encode(cloud)
    }

    pub fn decode(&self, template: &PointCloud, code: &LatentCode) -> Result<PointCloud> {
        self.decoder.decode(template, code)
    }
}

impl EncoderParams {
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, grad: bool) -> EncoderVars {
        EncoderVars {
            point_mlp: self.point_mlp.iter().map(|l| l.register(tape, grad)).collect(),
            head: self.head.register(tape, grad),
        }
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<LatentCode> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(cloud_tensor(cloud));
        let code = vars.forward(&mut tape, x)?;
        LatentCode::from_tensor(tape.value(code))
    }
}

impl DecoderParams {
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, grad: bool) -> DecoderVars {
        DecoderVars {
            layers: self.layers.iter().map(|l| l.register(tape, grad)).collect(),
        }
    }

    /// Deforms every template point; output order matches the input.
    pub fn decode(&self, template: &PointCloud, code: &LatentCode) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let p = tape.constant(cloud_tensor(template));
        let x = tape.constant(code.to_tensor());
        let out = vars.forward(&mut tape, p, x)?;
        PointCloud::from_flat(tape.value(out).data())
    }
}

pub struct EncoderVars {
    pub point_mlp: Vec<LinearVars>,
    pub head: LinearVars,
}

impl EncoderVars {
    /// `cloud: n × 3` → latent `1 × latent_dim`.
    pub fn forward(&self, tape: &mut Tape, cloud: Var) -> Result<Var> {
        let mut h = cloud;
        for l in &self.point_mlp {
            h = l.forward(tape, h)?;
            h = tape.relu(h)?;
        }
        let pooled = tape.max_over_axis(h, Axis::Rows)?;
        self.head.forward(tape, pooled)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.point_mlp
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

pub struct DecoderVars {
    pub layers: Vec<LinearVars>,
}

impl DecoderVars {
    /// `template: m × 3`, `code: 1 × latent_dim` → deformed `m × 3`.
    pub fn forward(&self, tape: &mut Tape, template: Var, code: Var) -> Result<Var> {
        let first = &self.layers[0];
        let in_dim = tape.value(first.weight).rows();
        let w_point = tape.slice_rows(first.weight, 0, 3)?;
        let w_code = tape.slice_rows(first.weight, 3, in_dim)?;
        let per_shape = tape.matmul(code, w_code)?;
        let per_shape = tape.add(per_shape, first.bias)?;
        let per_point = tape.matmul(template, w_point)?;
        let mut h = tape.add_bias(per_point, per_shape)?;
        for l in &self.layers[1..] {
            h = tape.relu(h)?;
            h = l.forward(tape, h)?;
        }
        tape.tanh(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

pub struct NetworkVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

impl NetworkVars {
    /// Leaf handles in [`NetworkParams::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.decoder.vars());
        v
    }

    /// Gradients in [`NetworkParams::tensors`] order; missing ones are zero.
    pub fn collect_grads(&self, tape: &Tape, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars()
            .into_iter()
            .map(|v| {
                grads.take(v).unwrap_or_else(|| {
                    let t = tape.value(v);
                    Tensor::zeros(t.rows(), t.cols())
                })
            })
            .collect()
    }
}

/// `n × 3` tensor of a cloud's coordinates.
pub fn cloud_tensor(cloud: &PointCloud) -> Tensor {
    Tensor::new(cloud.len(), 3, cloud.flat()).expect("cloud rows have three coordinates")
}

const MAGIC: &[u8; 8] = b"SDNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Short hex digest used to tag checkpoints with the config that made them.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Layout: magic, `u32` version, `u32` metadata length and JSON metadata,
/// `u32` tensor count, then per tensor a `u32`-length name, `u64` rows and
/// cols and little-endian `f64` payload; a trailing CRC32 covers everything
/// before it.
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&params.metadata)?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    let named = params.named_tensors();
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptChecksum("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptChecksum("missing checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 16 {
        return Err(Error::CorruptChecksum("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptChecksum("CRC32 mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 12 };
    let meta_len = r.u32()? as usize;
    let metadata: Metadata = serde_json::from_slice(r.take(meta_len)?)?;
    let mut params = NetworkParams::init(&metadata.network, metadata.seed)?;
    params.metadata = metadata;
    let count = r.u32()? as usize;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if count != names.len() {
        return Err(Error::Data(format!(
            "checkpoint holds {count} tensors, network expects {}",
            names.len()
        )));
    }
    for (expected, slot) in names.iter().zip(params.tensors_mut()) {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        if name != expected {
            return Err(Error::Data(format!("expected tensor {expected}, found {name}")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if [rows, cols] != slot.shape() {
            return Err(Error::Data(format!(
                "tensor {name} has shape {rows}x{cols}, expected {:?}",
                slot.shape()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Data("trailing bytes after last tensor".into()));
    }
    Ok(params)
}
