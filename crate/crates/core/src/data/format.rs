//! VARG sequence files and the key=value dataset manifest.
//!
//! VARG layout (little-endian): magic `VARG`, u32 version = 1, u32 T,
//! u32 n(X), u32 H, u32 W, u32 C, then `T·n(X)` f32 domain values and
//! `T·H·W·C` f32 pixels.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, Dataset, GeneratorSpec, ImageDims, SequencePair};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"VARG";
const SEQUENCE_VERSION: u32 = 1;
const MANIFEST_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;
pub(crate) const MANIFEST_FILE: &str = "manifest.txt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_sequence<W: Write>(seq: &SequencePair, dims: ImageDims, mut out: W) -> std::io::Result<()> {
    let header = [
        seq.len() as u32,
        seq.domain_dim() as u32,
        dims.height as u32,
        dims.width as u32,
        dims.channels as u32,
    ];
    out.write_all(SEQUENCE_MAGIC)?;
    out.write_all(&SEQUENCE_VERSION.to_le_bytes())?;
    for v in header {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in seq.x.iter().chain(&seq.y).flatten() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()
}

/// Reads one sequence file; the header is validated against the file size
/// before any payload is read.
pub fn read_sequence(path: &Path, id: &str) -> Result<(SequencePair, ImageDims), DataError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let size = file.metadata().map_err(io_err(path))?.len();
    let mut header = [0u8; HEADER_LEN];
    file.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(path, "file is shorter than the header"),
        _ => io_err(path)(e),
    })?;
    if &header[..4] != SEQUENCE_MAGIC {
        return Err(format_err(path, "bad magic, not a VARG file"));
    }
    let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if field(0) != SEQUENCE_VERSION {
        return Err(format_err(path, format!("unsupported version {}", field(0))));
    }
    let [t, nx, h, w, c] = [1, 2, 3, 4, 5].map(|i| field(i) as u64);
    if [t, nx, h, w, c].contains(&0) {
        return Err(format_err(path, "header has a zero dimension"));
    }
    let values = t
        .checked_mul(nx)
        .and_then(|a| h.checked_mul(w)?.checked_mul(c)?.checked_mul(t)?.checked_add(a));
    let expected = values.and_then(|v| v.checked_mul(4)?.checked_add(HEADER_LEN as u64));
    if expected != Some(size) {
        return Err(format_err(
            path,
            format!("header describes {expected:?} bytes but the file has {size}"),
        ));
    }
    let mut payload = Vec::with_capacity((size as usize).saturating_sub(HEADER_LEN));
    file.read_to_end(&mut payload).map_err(io_err(path))?;
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let (t, nx) = (t as usize, nx as usize);
    let dims = ImageDims::new(h as usize, w as usize, c as usize);
    let (xs, ys) = floats.split_at(t * nx);
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite value in payload"));
    }
    Ok((
        SequencePair {
            id: id.to_string(),
            x: xs.chunks(nx).map(<[f64]>::to_vec).collect(),
            y: ys.chunks(dims.pixels()).map(<[f64]>::to_vec).collect(),
        },
        dims,
    ))
}

fn manifest_text(ds: &Dataset) -> String {
    let mut lines = vec![
        format!("format_version={MANIFEST_VERSION}"),
        format!("name={}", ds.name),
        format!("generator={}", ds.generator.name()),
    ];
    if let GeneratorSpec::PendulumJoints { links } = ds.generator {
        lines.push(format!("links={links}"));
    }
    lines.extend([
        format!("seed={}", ds.seed),
        format!("first_index={}", ds.first_index),
        format!("height={}", ds.dims.height),
        format!("width={}", ds.dims.width),
        format!("channels={}", ds.dims.channels),
        format!("domain_dim={}", ds.domain_dim()),
        format!("sequences={}", ds.sequences.len()),
    ]);
    for (i, seq) in ds.sequences.iter().enumerate() {
        lines.push(format!("sequence.{i}={}.varg", seq.id));
    }
    lines.join("\n") + "\n"
}

/// Writes `manifest.txt` plus one `.varg` file per sequence into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for seq in &ds.sequences {
        let path = dir.join(format!("{}.varg", seq.id));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_sequence(seq, ds.dims, std::io::BufWriter::new(file)).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest_text(ds)).map_err(io_err(&path))
}

/// Loads a dataset from a directory holding `manifest.txt` (or from the
/// manifest path itself).
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(&manifest, format!("line {}: expected key=value", n + 1)))?;
        if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format_err(&manifest, format!("duplicate key '{}'", k.trim())));
        }
    }
    let mut take = |key: &str| kv.remove(key).ok_or_else(|| format_err(&manifest, format!("missing key '{key}'")));
    let num = |key: &str, v: String| {
        v.parse::<u64>()
            .map_err(|_| format_err(&manifest, format!("'{key}' is not a non-negative integer: {v}")))
    };
    let version = num("format_version", take("format_version")?)?;
    if version != MANIFEST_VERSION as u64 {
        return Err(format_err(&manifest, format!("unsupported manifest version {version}")));
    }
    let name = take("name")?;
    let generator = match take("generator")?.as_str() {
        "rotating-bar" => GeneratorSpec::RotatingBar,
        "pendulum-joints" => GeneratorSpec::PendulumJoints {
            links: num("links", take("links")?)? as usize,
        },
        other => return Err(format_err(&manifest, format!("unknown generator '{other}'"))),
    };
    let seed = num("seed", take("seed")?)?;
    let first_index = num("first_index", take("first_index")?)?;
    let dims = ImageDims::new(
        num("height", take("height")?)? as usize,
        num("width", take("width")?)? as usize,
        num("channels", take("channels")?)? as usize,
    );
    let domain_dim = num("domain_dim", take("domain_dim")?)? as usize;
    let count = num("sequences", take("sequences")?)? as usize;
    if domain_dim != generator.domain_dim() {
        return Err(format_err(&manifest, "domain_dim disagrees with the generator"));
    }
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        files.push(take(&format!("sequence.{i}"))?);
    }
    if let Some(extra) = kv.keys().next() {
        return Err(format_err(&manifest, format!("unknown key '{extra}'")));
    }

    let mut sequences = Vec::with_capacity(count);
    for file in files {
        let path = dir.join(&file);
        let id = file.strip_suffix(".varg").unwrap_or(&file);
        let (seq, seq_dims) = read_sequence(&path, id)?;
        if seq_dims != dims || seq.domain_dim() != domain_dim {
            return Err(format_err(&path, "dimensions disagree with the manifest"));
        }
        sequences.push(seq);
    }
    Ok(Dataset {
        name,
        generator,
        dims,
        seed,
        first_index,
        sequences,
    })
}
