//! Model bundles and their binary file format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "XRTB"                      4 bytes magic
//! u32 version                 currently 1
//! u32 tensor_count
//! u32 len, UTF-8              architecture config (`key = value` lines)
//! u32 len, UTF-8              preprocessing (`key = value` lines)
//! u32 len, UTF-8              class labels, one per line
//! tensor_count ×
//!   u16 name_len, UTF-8 name  `<layer_id>.<param>`
//!   u8 rank, u32 dims[rank]
//!   f32 payload[Π dims]       IEEE-754
//! u32 CRC-32                  of every preceding byte
//! ```
//!
//! There is no padding anywhere, so a file is exactly the sum of its parts.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arch::{self, parse_shape, ArchError, ArchitectureConfig, FeatureShape, LayerGraph};

pub const MAGIC: &[u8; 4] = b"XRTB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a model bundle: bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated bundle: needed {needed} bytes for {what} at offset {offset}, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed bundle: {0}")]
    Format(String),
    #[error("tensor `{layer}.{param}` has shape {got:?}, architecture expects {expected:?}")]
    ShapeMismatch {
        layer: String,
        param: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing tensor `{layer}.{param}`")]
    MissingTensor { layer: String, param: String },
    #[error("tensor `{0}` does not belong to any layer of the architecture")]
    UnexpectedTensor(String),
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

impl WeightsError {
    fn io(path: &Path, source: io::Error) -> Self {
        WeightsError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One named parameter array. Equality compares float bit patterns.
#[derive(Clone)]
pub struct WeightArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightArray {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, WeightsError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(WeightsError::Invalid(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

impl PartialEq for WeightArray {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for WeightArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightArray")
            .field("shape", &self.shape)
            .field("numel", &self.data.len())
            .finish()
    }
}

pub type LayerWeights = IndexMap<String, WeightArray>;

/// Input preprocessing stored with the model so serving matches training.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub input_size: FeatureShape,
    /// Per-channel mean applied after scaling pixels to `[0, 1]`.
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Preprocessing {
    /// Mean 0.5 / std 0.5 on every channel, mapping pixels to `[-1, 1]`.
    pub fn standard(input_size: FeatureShape) -> Self {
        Self {
            input_size,
            mean: vec![0.5; input_size.c],
            std: vec![0.5; input_size.c],
        }
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!("input = {}\nmean = {}\nstd = {}\n", self.input_size, join(&self.mean), join(&self.std))
    }

    pub fn parse(text: &str) -> Result<Self, WeightsError> {
        let mut input = None;
        let mut mean = None;
        let mut std = None;
        let floats = |v: &str| -> Result<Vec<f32>, WeightsError> {
            v.split(',')
                .map(|x| x.trim().parse::<f32>().map_err(|_| WeightsError::Format(format!("bad float `{x}` in preprocessing"))))
                .collect()
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| WeightsError::Format(format!("bad preprocessing line `{line}`")))?;
            match k.trim() {
                "input" => input = Some(parse_shape(v.trim())?),
                "mean" => mean = Some(floats(v)?),
                "std" => std = Some(floats(v)?),
                other => return Err(WeightsError::Format(format!("unknown preprocessing key `{other}`"))),
            }
        }
        Ok(Self {
            input_size: input.ok_or_else(|| WeightsError::Format("preprocessing lacks `input`".into()))?,
            mean: mean.ok_or_else(|| WeightsError::Format("preprocessing lacks `mean`".into()))?,
            std: std.ok_or_else(|| WeightsError::Format("preprocessing lacks `std`".into()))?,
        })
    }
}

/// Frozen base weights, head weights, preprocessing and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub architecture: ArchitectureConfig,
    /// Layer id → parameter name → array, in graph order.
    pub tensors: IndexMap<String, LayerWeights>,
    pub preprocessing: Preprocessing,
    /// Index → label; index 0 is the positive class.
    pub class_labels: Vec<String>,
    pub format_version: u32,
}

impl ModelBundle {
    /// Checks the bundle against its architecture and returns the validated graph.
    pub fn validate(&self) -> Result<LayerGraph, WeightsError> {
        let graph = arch::build(&self.architecture)?;
        if self.class_labels.len() != self.architecture.num_classes {
            return Err(WeightsError::Invalid(format!(
                "{} class labels for {} classes",
                self.class_labels.len(),
                self.architecture.num_classes
            )));
        }
        if let Some(bad) = self.class_labels.iter().find(|l| l.is_empty() || l.contains('\n')) {
            return Err(WeightsError::Invalid(format!("invalid class label {bad:?}")));
        }
        let p = &self.preprocessing;
        if p.input_size != self.architecture.input_size {
            return Err(WeightsError::Invalid(format!(
                "preprocessing input {} differs from architecture input {}",
                p.input_size, self.architecture.input_size
            )));
        }
        let c = p.input_size.c;
        if p.mean.len() != c || p.std.len() != c {
            return Err(WeightsError::Invalid(format!("normalization needs {c} mean/std values")));
        }
        if p.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || p.mean.iter().any(|m| !m.is_finite()) {
            return Err(WeightsError::Invalid("normalization constants must be finite, std positive".into()));
        }
        if self.tensors.is_empty() {
            return Err(WeightsError::Invalid("bundle holds no tensors".into()));
        }

        let expected = graph.parameter_shapes()?;
        for (layer, params) in &expected {
            let have = self.tensors.get(layer);
            for (param, shape) in params {
                let arr = have.and_then(|m| m.get(*param)).ok_or_else(|| WeightsError::MissingTensor {
                    layer: layer.clone(),
                    param: param.to_string(),
                })?;
                if arr.shape != *shape {
                    return Err(WeightsError::ShapeMismatch {
                        layer: layer.clone(),
                        param: param.to_string(),
                        expected: shape.clone(),
                        got: arr.shape.clone(),
                    });
                }
                if arr.data.len() != shape.iter().product::<usize>() {
                    return Err(WeightsError::Invalid(format!("`{layer}.{param}` payload length mismatch")));
                }
            }
        }
        for (layer, params) in &self.tensors {
            let known = expected.iter().find(|(id, _)| id == layer);
            for name in params.keys() {
                if !known.is_some_and(|(_, ps)| ps.iter().any(|(p, _)| p == name)) {
                    return Err(WeightsError::UnexpectedTensor(format!("{layer}.{name}")));
                }
            }
        }
        Ok(graph)
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn get(&self, layer: &str, param: &str) -> Option<&WeightArray> {
        self.tensors.get(layer)?.get(param)
    }

    /// Stable identifier: family plus the CRC-32 of the serialized bundle.
    pub fn model_id(&self) -> Result<String, WeightsError> {
        let bytes = to_bytes(self)?;
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        Ok(format!("{}-{:08x}", self.architecture.family, crc))
    }

    /// Index of `label` in the class list.
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }
}

/// Default label list: `covid`, `normal` for binary models.
pub fn default_labels(num_classes: usize) -> Vec<String> {
    if num_classes == 2 {
        vec!["covid".into(), "normal".into()]
    } else {
        (0..num_classes).map(|i| format!("class{i}")).collect()
    }
}

/// Seeded stand-in for pretrained weights. Conv and dense weights are
/// uniform in `±sqrt(6/(fan_in + fan_out))`, biases zero; batchnorm starts
/// as the identity (gamma 1, beta 0, mean 0, var 1).
pub fn init_random_base(config: &ArchitectureConfig, seed: u64) -> Result<ModelBundle, WeightsError> {
    let graph = arch::build(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = IndexMap::new();
    for (layer, params) in graph.parameter_shapes()? {
        let mut lw = LayerWeights::new();
        for (name, shape) in params {
            let arr = match name {
                "weight" => {
                    let bound = glorot_bound(&shape);
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                    WeightArray { shape, data }
                }
                "gamma" | "running_var" => WeightArray::filled(shape, 1.0),
                _ => WeightArray::filled(shape, 0.0),
            };
            lw.insert(name.to_string(), arr);
        }
        tensors.insert(layer, lw);
    }
    Ok(ModelBundle {
        architecture: *config,
        tensors,
        preprocessing: Preprocessing::standard(config.input_size),
        class_labels: default_labels(config.num_classes),
        format_version: FORMAT_VERSION,
    })
}

/// `sqrt(6/(fan_in + fan_out))` for a conv `(c_out, c_in, kh, kw)` or dense `(f, k)` weight.
pub fn glorot_bound(shape: &[usize]) -> f32 {
    let (fan_in, fan_out) = match *shape {
        [c_out, c_in, kh, kw] => (c_in * kh * kw, c_out * kh * kw),
        [f, k] => (f, k),
        _ => (1, 1),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

// ---------------------------------------------------------------------------
// Serialization

fn put_block(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

fn labels_text(labels: &[String]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>, WeightsError> {
    bundle.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&bundle.format_version.to_le_bytes());
    out.extend_from_slice(&(bundle.tensor_count() as u32).to_le_bytes());
    put_block(&mut out, &bundle.architecture.to_text());
    put_block(&mut out, &bundle.preprocessing.to_text());
    put_block(&mut out, &labels_text(&bundle.class_labels));
    for (layer, params) in &bundle.tensors {
        for (param, arr) in params {
            let name = format!("{layer}.{param}");
            if arr.data.is_empty() {
                return Err(WeightsError::Invalid(format!("tensor `{name}` is empty")));
            }
            let name_len = u16::try_from(name.len()).map_err(|_| WeightsError::Invalid(format!("tensor name `{name}` too long")))?;
            let rank = u8::try_from(arr.shape.len()).map_err(|_| WeightsError::Invalid(format!("tensor `{name}` rank too high")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in &arr.shape {
                let d = u32::try_from(d).map_err(|_| WeightsError::Invalid(format!("tensor `{name}` dimension too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &arr.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightsError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WeightsError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, what: &'static str) -> Result<&'a str, WeightsError> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| WeightsError::Format(format!("{what} is not UTF-8")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle, WeightsError> {
    let head = &bytes[..bytes.len().min(4)];
    if head != &MAGIC[..head.len()] {
        return Err(WeightsError::BadMagic(head.to_vec()));
    }
    if bytes.len() < 4 {
        return Err(WeightsError::Truncated {
            what: "magic",
            offset: 0,
            needed: 4,
            available: bytes.len(),
        });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    // the last four bytes are the checksum; structure must fit before them
    if bytes.len() < 4 + 4 + 4 {
        return Err(WeightsError::Truncated {
            what: "header",
            offset: bytes.len(),
            needed: 16,
            available: bytes.len(),
        });
    }
    let body_end = bytes.len() - 4;
    let mut r = Reader {
        buf: &bytes[..body_end],
        pos: r.pos,
    };
    let count = r.u32("tensor count")? as usize;
    let arch_text = r.text("architecture block")?;
    let prep_text = r.text("preprocessing block")?;
    let labels = r.text("labels block")?;
    let mut raw = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| WeightsError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WeightsError::Format(format!("tensor `{name}` is impossibly large")))?;
        let payload = r.take(n, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        raw.push((name, WeightArray { shape, data }));
    }
    if r.pos != body_end {
        return Err(WeightsError::Format(format!("{} unexpected bytes after the last tensor", body_end - r.pos)));
    }
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(WeightsError::ChecksumMismatch { stored, computed });
    }

    let architecture = ArchitectureConfig::parse(arch_text)?;
    let preprocessing = Preprocessing::parse(prep_text)?;
    let class_labels = labels.lines().map(str::to_string).collect();
    let mut tensors: IndexMap<String, LayerWeights> = IndexMap::new();
    for (name, arr) in raw {
        let (layer, param) = name
            .rsplit_once('.')
            .ok_or_else(|| WeightsError::Format(format!("tensor name `{name}` lacks `layer.param` form")))?;
        let slot = tensors.entry(layer.to_string()).or_default();
        if slot.insert(param.to_string(), arr).is_some() {
            return Err(WeightsError::Format(format!("duplicate tensor `{name}`")));
        }
    }
    let bundle = ModelBundle {
        architecture,
        tensors,
        preprocessing,
        class_labels,
        format_version: version,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    let bytes = to_bytes(bundle)?;
    fs::write(path, bytes).map_err(|e| WeightsError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelBundle, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| WeightsError::io(path, e))?;
    from_bytes(&bytes)
}

// ---------------------------------------------------------------------------
// Text manifest + raw arrays, for moving weights in from other tools.
//
//   architecture = arch.cfg          path relative to the manifest
//   labels = covid,normal
//   mean = 0.5,0.5,0.5
//   std = 0.5,0.5,0.5
//   tensor = block1_conv1.weight 8x3x3x3 block1_conv1.weight.f32
//
// Each raw file holds the little-endian f32 payload and nothing else.

pub fn import_manifest(path: impl AsRef<Path>) -> Result<ModelBundle, WeightsError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path).map_err(|e| WeightsError::io(path, e))?;
    let mut architecture = None;
    let mut labels = None;
    let mut mean = None;
    let mut std = None;
    let mut tensors: IndexMap<String, LayerWeights> = IndexMap::new();
    let floats = |v: &str| -> Result<Vec<f32>, WeightsError> {
        v.split(',')
            .map(|x| x.trim().parse::<f32>().map_err(|_| WeightsError::Format(format!("bad float `{x}` in manifest"))))
            .collect()
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| WeightsError::Format(format!("manifest line {}: expected `key = value`", i + 1)))?;
        let v = v.trim();
        match k.trim() {
            "architecture" => {
                let p = dir.join(v);
                let t = fs::read_to_string(&p).map_err(|e| WeightsError::io(&p, e))?;
                architecture = Some(ArchitectureConfig::parse(&t)?);
            }
            "labels" => labels = Some(v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
            "mean" => mean = Some(floats(v)?),
            "std" => std = Some(floats(v)?),
            "tensor" => {
                let mut parts = v.split_whitespace();
                let (Some(name), Some(shape), Some(file), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                    return Err(WeightsError::Format(format!("manifest line {}: expected `tensor = NAME DIMS FILE`", i + 1)));
                };
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| WeightsError::Format(format!("bad dims `{shape}`"))))
                    .collect::<Result<_, _>>()?;
                let p = dir.join(file);
                let bytes = fs::read(&p).map_err(|e| WeightsError::io(&p, e))?;
                if bytes.len() % 4 != 0 {
                    return Err(WeightsError::Format(format!("{}: length is not a multiple of 4", p.display())));
                }
                let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                let arr = WeightArray::new(shape, data)?;
                let (layer, param) = name
                    .rsplit_once('.')
                    .ok_or_else(|| WeightsError::Format(format!("tensor name `{name}` lacks `layer.param` form")))?;
                tensors.entry(layer.to_string()).or_default().insert(param.to_string(), arr);
            }
            other => return Err(WeightsError::Format(format!("manifest line {}: unknown key `{other}`", i + 1))),
        }
    }
    let architecture = architecture.ok_or_else(|| WeightsError::Format("manifest lacks `architecture`".into()))?;
    let mut preprocessing = Preprocessing::standard(architecture.input_size);
    if let Some(m) = mean {
        preprocessing.mean = m;
    }
    if let Some(s) = std {
        preprocessing.std = s;
    }
    let bundle = ModelBundle {
        architecture,
        tensors,
        preprocessing,
        class_labels: labels.unwrap_or_else(|| default_labels(architecture.num_classes)),
        format_version: FORMAT_VERSION,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `manifest.txt`, `architecture.cfg` and one raw file per tensor into `dir`.
pub fn export_manifest(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<PathBuf, WeightsError> {
    let dir = dir.as_ref();
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| WeightsError::io(dir, e))?;
    let arch_path = dir.join("architecture.cfg");
    fs::write(&arch_path, bundle.architecture.to_text()).map_err(|e| WeightsError::io(&arch_path, e))?;
    let join = |v: &[f32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut manifest = format!(
        "architecture = architecture.cfg\nlabels = {}\nmean = {}\nstd = {}\n",
        bundle.class_labels.join(","),
        join(&bundle.preprocessing.mean),
        join(&bundle.preprocessing.std)
    );
    for (layer, params) in &bundle.tensors {
        for (param, arr) in params {
            let file = format!("{layer}.{param}.f32");
            let dims = arr.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            manifest.push_str(&format!("tensor = {layer}.{param} {dims} {file}\n"));
            let bytes: Vec<u8> = arr.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            let p = dir.join(&file);
            fs::write(&p, bytes).map_err(|e| WeightsError::io(&p, e))?;
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| WeightsError::io(&path, e))?;
    Ok(path)
}
