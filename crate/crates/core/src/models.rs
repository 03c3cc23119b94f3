//! Shared-MLP point encoders and classifier heads.
//!
//! The encoder applies one MLP identically to every point (weights shared
//! across the N axis), which makes it permutation-equivariant; the head
//! pools over points and runs a fully-connected stack, so with max pooling
//! the logits are permutation-invariant. Hidden layers use ReLU; the final
//! encoder layer and the final head layer are linear.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kv::{parse_list, parse_scalar, KvFile};
use crate::rng::{stream, PURPOSE_INIT};
use crate::tape::{ReduceKind, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Widths of the shared hidden layers.
    pub hidden: Vec<usize>,
    /// Final per-point feature width D.
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Mean,
}

impl Pooling {
    fn name(&self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadConfig {
    pub pool: Pooling,
    /// Widths of the fully-connected hidden layers; the stack always ends
    /// in `classes` outputs.
    pub widths: Vec<usize>,
    pub classes: usize,
}

/// Full model description; `adapter_dim` adds a learned linear map from the
/// encoder's feature space to a teacher's feature space (used only when a
/// student's D differs from its teacher's).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub adapter_dim: Option<usize>,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, head: HeadConfig) -> Result<Self> {
        let cfg = ModelConfig {
            encoder,
            head,
            adapter_dim: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Shipped teacher: encoder [64, 128, 256] → D=64, head [128] → C.
    pub fn default_teacher(classes: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                hidden: vec![64, 128, 256],
                feature_dim: 64,
            },
            head: HeadConfig {
                pool: Pooling::Max,
                widths: vec![128],
                classes,
            },
            adapter_dim: None,
        }
    }

    /// Shipped student: encoder [8, 8] → D=64, head [12] → C.
    /// Sized so the teacher/student parameter ratio clears 40x.
    pub fn default_student(classes: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                hidden: vec![8, 8],
                feature_dim: 64,
            },
            head: HeadConfig {
                pool: Pooling::Max,
                widths: vec![12],
                classes,
            },
            adapter_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.feature_dim == 0
            || self.encoder.hidden.iter().any(|&w| w == 0)
            || self.head.widths.iter().any(|&w| w == 0)
        {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        if self.head.classes == 0 {
            return Err(Error::Config("head must end in at least 1 class".into()));
        }
        if self.adapter_dim == Some(0) {
            return Err(Error::Config("adapter dimension must be at least 1".into()));
        }
        Ok(())
    }

    /// Layer in/out dims of the encoder path: 3 → hidden… → D.
    pub fn encoder_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = 3;
        for &w in self.encoder.hidden.iter().chain([self.encoder.feature_dim].iter()) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    /// Layer in/out dims of the head path: D → widths… → C.
    pub fn head_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.encoder.feature_dim;
        for &w in self.head.widths.iter().chain([self.head.classes].iter()) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn render(&self) -> String {
        let mut kv = KvFile::new();
        kv.set(
            "encoder",
            "hidden",
            self.encoder.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("encoder", "feature_dim", self.encoder.feature_dim);
        kv.set("head", "pool", self.head.pool.name());
        kv.set(
            "head",
            "widths",
            self.head.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("head", "classes", self.head.classes);
        if let Some(d) = self.adapter_dim {
            kv.set("adapter", "teacher_dim", d);
        }
        kv.render()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let pool = match kv.get("head", "pool").unwrap_or("max") {
            "max" => Pooling::Max,
            "mean" => Pooling::Mean,
            other => return Err(Error::Config(format!("unknown pooling {other:?}"))),
        };
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                hidden: parse_list(kv.require("encoder", "hidden")?)?,
                feature_dim: parse_scalar(kv.require("encoder", "feature_dim")?, "feature_dim")?,
            },
            head: HeadConfig {
                pool,
                widths: parse_list(kv.require("head", "widths")?)?,
                classes: parse_scalar(kv.require("head", "classes")?, "classes")?,
            },
            adapter_dim: match kv.get("adapter", "teacher_dim") {
                Some(v) => Some(parse_scalar(v, "teacher_dim")?),
                None => None,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One fully-connected layer: weight `[in, out]`, bias `[out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Ordered trainable parameters of one model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: Vec<Linear>,
    pub head: Vec<Linear>,
    pub adapter: Option<Linear>,
}

impl ModelParams {
    /// All layers in checkpoint/optimizer order.
    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.encoder.iter().chain(self.head.iter()).chain(self.adapter.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.encoder
            .iter_mut()
            .chain(self.head.iter_mut())
            .chain(self.adapter.iter_mut())
    }

    pub fn scalar_count(&self) -> u64 {
        self.layers()
            .map(|l| (l.weight.numel() + l.bias.numel()) as u64)
            .sum()
    }
}

/// Xavier-uniform weights, zero biases, deterministic under the seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = stream(seed, PURPOSE_INIT, 0);
    let mut make = |dims: &[(usize, usize)]| -> Vec<Linear> {
        dims.iter()
            .map(|&(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Linear {
                    weight: Tensor::new(data, &[fan_in, fan_out]).unwrap().with_grad(),
                    bias: Tensor::zeros(&[fan_out]).with_grad(),
                }
            })
            .collect()
    };
    let encoder = make(&config.encoder_dims());
    let head = make(&config.head_dims());
    let adapter = config.adapter_dim.map(|d| {
        make(&[(config.encoder.feature_dim, d)]).pop().unwrap()
    });
    ModelParams {
        encoder,
        head,
        adapter,
    }
}

/// Tape handles for one registered model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Vec<(Var, Var)>,
    pub head: Vec<(Var, Var)>,
    pub adapter: Option<(Var, Var)>,
}

/// Put every parameter on the tape; `trainable` controls gradient tracking.
pub fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> ModelVars {
    let mut reg = |layers: &[Linear]| -> Vec<(Var, Var)> {
        layers
            .iter()
            .map(|l| {
                let mut w = l.weight.clone();
                let mut b = l.bias.clone();
                w.requires_grad = trainable;
                b.requires_grad = trainable;
                w.grad = None;
                b.grad = None;
                (tape.leaf(w), tape.leaf(b))
            })
            .collect()
    };
    let encoder = reg(&params.encoder);
    let head = reg(&params.head);
    let adapter = params.adapter.as_ref().map(|l| {
        reg(std::slice::from_ref(l)).pop().unwrap()
    });
    ModelVars {
        encoder,
        head,
        adapter,
    }
}

/// Per-point feature map `[B, N, D]` from coordinates `[B, N, 3]`.
/// ReLU after every hidden layer; the final feature layer is linear.
pub fn encode(tape: &mut Tape, layers: &[(Var, Var)], coords: Var) -> Result<Var> {
    if tape.shape(coords).len() != 3 || tape.shape(coords)[2] != 3 {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: tape.shape(coords).to_vec(),
            rhs: vec![0, 0, 3],
        });
    }
    let mut x = coords;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(x, w)?;
        x = tape.add(z, b)?;
        if i + 1 < layers.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Logits `[B, C]` from a feature map `[B, N, D]`: pool over points, then
/// the fully-connected stack (ReLU between layers, linear at the end).
pub fn classify(tape: &mut Tape, layers: &[(Var, Var)], pool: Pooling, features: Var) -> Result<Var> {
    if tape.shape(features).len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "classify",
            lhs: tape.shape(features).to_vec(),
            rhs: vec![0, 0, 0],
        });
    }
    let mut x = match pool {
        Pooling::Max => tape.reduce(features, 1, ReduceKind::Max)?,
        Pooling::Mean => tape.reduce(features, 1, ReduceKind::Mean)?,
    };
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(x, w)?;
        x = tape.add(z, b)?;
        if i + 1 < layers.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Map features through the learned linear adapter.
pub fn apply_adapter(tape: &mut Tape, adapter: (Var, Var), features: Var) -> Result<Var> {
    let z = tape.matmul(features, adapter.0)?;
    tape.add(z, adapter.1)
}

/// Closed-form parameter and per-sample FLOP counts.
///
/// Parameters: Σ (in·out + out) over every layer. FLOPs: 2·in·out per
/// matrix-vector product, applied per point for the shared encoder layers
/// (× n_points) and once per sample for the head stack.
pub fn count_params_flops(config: &ModelConfig, n_points: usize) -> (u64, u64) {
    let mut params = 0u64;
    let mut enc_flops_per_point = 0u64;
    for (i, o) in config.encoder_dims() {
        params += (i * o + o) as u64;
        enc_flops_per_point += 2 * (i * o) as u64;
    }
    let mut head_flops = 0u64;
    for (i, o) in config.head_dims() {
        params += (i * o + o) as u64;
        head_flops += 2 * (i * o) as u64;
    }
    if let Some(d) = config.adapter_dim {
        params += (config.encoder.feature_dim * d + d) as u64;
    }
    (params, enc_flops_per_point * n_points as u64 + head_flops)
}

// ── FADC checkpoint format ─────────────────────────────────────────────
//
// Layout, all little-endian:
//   magic  b"FADC"
//   u32    version (1)
//   u32    config text length, then that many bytes of UTF-8 (ModelConfig)
//   u32    tensor count
//   per tensor: u32 rank, u64 × rank extents, f64 × numel payload

const CKPT_MAGIC: &[u8; 4] = b"FADC";
const CKPT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let cfg = config.render();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    let tensors: Vec<&Tensor> = params
        .layers()
        .flat_map(|l| [&l.weight, &l.bias])
        .collect();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad("truncated checkpoint"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != CKPT_MAGIC {
        return Err(bad("not a FADC checkpoint"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let cfg_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let cfg_text = std::str::from_utf8(take(cfg_len)?)
        .map_err(|_| bad("config echo is not UTF-8"))?
        .to_string();
    let config = ModelConfig::parse(&cfg_text)?;
    let n_tensors = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;

    let mut read_tensor = |expect: &[usize]| -> Result<Tensor> {
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        if shape != expect {
            return Err(Error::Checkpoint(format!(
                "tensor shape {shape:?} does not match config ({expect:?})"
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::new(data, &shape)?.with_grad())
    };

    let mut read_layers = |dims: &[(usize, usize)]| -> Result<Vec<Linear>> {
        dims.iter()
            .map(|&(i, o)| {
                Ok(Linear {
                    weight: read_tensor(&[i, o])?,
                    bias: read_tensor(&[o])?,
                })
            })
            .collect()
    };

    let enc_dims = config.encoder_dims();
    let head_dims = config.head_dims();
    let expected = 2 * (enc_dims.len() + head_dims.len() + config.adapter_dim.map_or(0, |_| 1));
    if n_tensors != expected {
        return Err(bad(&format!(
            "checkpoint has {n_tensors} tensors, config implies {expected}"
        )));
    }
    let encoder = read_layers(&enc_dims)?;
    let head = read_layers(&head_dims)?;
    let adapter = match config.adapter_dim {
        Some(d) => Some(
            read_layers(&[(config.encoder.feature_dim, d)])?
                .pop()
                .unwrap(),
        ),
        None => None,
    };
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok((
        config,
        ModelParams {
            encoder,
            head,
            adapter,
        },
    ))
}
