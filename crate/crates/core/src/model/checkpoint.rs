//! VARW weight files.
//!
//! Layout (little-endian): magic `VARW`, u32 version, u32 tensor count, then
//! per tensor `{u32 name_len, name, u32 rank, u32 dims[rank], f64 data}`.
//! Besides the layer tensors, three `meta.*` tensors carry the image
//! dimensions and the loss settings so a file is self-describing.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dense, Model, ModelConfig, ModelError, ModelWeights};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VARW";
const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

fn meta_tensors(cfg: &ModelConfig) -> Vec<(String, Tensor)> {
    let t = |v: Vec<f64>| Tensor::new(vec![v.len()], v).expect("finite metadata");
    vec![
        (
            "meta.image_dims".into(),
            t(vec![cfg.image_height as f64, cfg.image_width as f64, cfg.channels as f64]),
        ),
        ("meta.recon_weight".into(), t(vec![cfg.recon_weight])),
        ("meta.kl_y_only".into(), t(vec![if cfg.kl_y_only { 1.0 } else { 0.0 }])),
    ]
}

pub fn write_checkpoint<W: Write>(model: &Model, mut out: W) -> std::io::Result<()> {
    let meta = meta_tensors(&model.config);
    let tensors: Vec<(String, &Tensor)> = model
        .weights
        .named_tensors()
        .into_iter()
        .chain(meta.iter().map(|(n, t)| (n.clone(), t)))
        .collect();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_checkpoint(model, std::io::BufWriter::new(file)).map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, String> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => "file is truncated".to_string(),
            _ => e.to_string(),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }
}

fn parse<R: Read>(input: R) -> Result<BTreeMap<String, Tensor>, String> {
    let mut r = Reader { inner: input };
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic, not a VARW file".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 1024 {
            return Err(format!("tensor name length {name_len} is implausible"));
        }
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let rank = r.u32()?;
        if rank > MAX_RANK {
            return Err(format!("{name}: rank {rank} is implausible"));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.filter(|&n| n <= 1 << 28).ok_or_else(|| format!("{name}: shape {shape:?} too large"))?;
        let raw = r.bytes(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(format!("duplicate tensor {name}"));
        }
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| e.to_string())? != 0 {
        return Err("trailing bytes after the last tensor".into());
    }
    Ok(tensors)
}

fn take_dense(tensors: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Dense, String> {
    let mut take = |suffix: &str| {
        let name = format!("{prefix}.{suffix}");
        tensors.remove(&name).ok_or(format!("missing tensor {name}"))
    };
    let weight = take("weight")?;
    let bias = take("bias")?;
    if weight.shape().len() != 2 || bias.shape() != [1, weight.shape()[1]] {
        return Err(format!("{prefix}: weight {:?} and bias {:?} disagree", weight.shape(), bias.shape()));
    }
    Ok(Dense {
        weight: weight.into_parameter(),
        bias: bias.into_parameter(),
    })
}

fn take_layers(tensors: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Vec<Dense>, String> {
    let mut layers = Vec::new();
    while tensors.contains_key(&format!("{prefix}.{}.weight", layers.len())) {
        layers.push(take_dense(tensors, &format!("{prefix}.{}", layers.len()))?);
    }
    Ok(layers)
}

fn assemble(mut tensors: BTreeMap<String, Tensor>) -> Result<Model, String> {
    let mut meta = |name: &str, len: usize| {
        let t = tensors.remove(name).ok_or(format!("missing tensor {name}"))?;
        if t.numel() != len {
            return Err(format!("{name} should hold {len} values"));
        }
        Ok(t.data().to_vec())
    };
    let dims = meta("meta.image_dims", 3)?;
    let recon_weight = meta("meta.recon_weight", 1)?[0];
    let kl_y_only = meta("meta.kl_y_only", 1)?[0] != 0.0;
    let as_dim = |v: f64| {
        if v >= 1.0 && v.fract() == 0.0 && v < 1e6 {
            Ok(v as usize)
        } else {
            Err(format!("invalid image dimension {v}"))
        }
    };
    let image_dims = (as_dim(dims[0])?, as_dim(dims[1])?, as_dim(dims[2])?);

    let encoder = take_layers(&mut tensors, "enc")?;
    let head = take_dense(&mut tensors, "enc.head")?;
    let decoder = take_layers(&mut tensors, "dec")?;
    let output = take_dense(&mut tensors, "dec.out")?;
    if let Some(name) = tensors.keys().next() {
        return Err(format!("unexpected tensor {name}"));
    }
    let weights = ModelWeights {
        encoder,
        head,
        decoder,
        output,
    };
    let mut config = weights.infer_config(image_dims).map_err(|e| e.to_string())?;
    config.recon_weight = recon_weight;
    config.kl_y_only = kl_y_only;
    config.validate().map_err(|e| e.to_string())?;
    weights.check_shapes(&config).map_err(|e| e.to_string())?;
    Ok(Model { config, weights })
}

pub fn read_checkpoint<R: Read>(input: R, label: &str) -> Result<Model, ModelError> {
    parse(input).and_then(assemble).map_err(|reason| ModelError::Checkpoint {
        path: label.to_string(),
        reason,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(std::io::BufReader::new(file), &path.display().to_string())
}
