//! Bit-exact weight persistence.
//!
//! Tensor files carry a fixed 24-byte header followed by row-major
//! little-endian data:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPLW"
//! 4       1     format version (= 1)
//! 5       1     dtype code (0 = f32, 1 = f64)
//! 6       2     reserved, must be zero
//! 8       8     rows (u64 little-endian, >= 1)
//! 16      8     cols (u64 little-endian, >= 1)
//! ```
//!
//! Every header byte is load-bearing: any single-byte corruption is
//! rejected (field checks catch the first 24 bytes, and the payload
//! length check catches shape edits). A weight container is a directory
//! with a `manifest.json` mapping tensor names to files; adapter
//! checkpoints reuse the tensor format with their own manifest.
//!
//! Reads are concurrent-safe; writes require exclusive directory access.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::adapter::{AdapterConfig, Direction, SpecLoraAdapter, Variant};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: [u8; 4] = *b"SPLW";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

/// On-disk scalar type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Serialize a matrix to the tensor file format. 64-bit writes are
/// lossless; 32-bit writes round each value once.
pub fn write_tensor(path: &Path, matrix: &DenseMatrix, dtype: Dtype) -> Result<()> {
    if matrix.rows() == 0 || matrix.cols() == 0 {
        return Err(Error::Data(
            "empty tensors are not representable on disk".to_string(),
        ));
    }
    if !matrix.is_finite() {
        return Err(Error::Data(
            "refusing to write non-finite tensor values".to_string(),
        ));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + matrix.data().len() * dtype.size());
    bytes.extend_from_slice(&MAGIC);
    bytes.push(FORMAT_VERSION);
    bytes.push(dtype.code());
    bytes.extend_from_slice(&[0, 0]);
    bytes.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    match dtype {
        Dtype::F64 => {
            for v in matrix.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for v in matrix.data() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read and fully validate a tensor file. 32-bit payloads widen to f64.
pub fn read_tensor(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!(
                "length error: truncated header ({} of {HEADER_LEN} bytes)",
                bytes.len()
            ),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {:?}, expected {:?}", &bytes[0..4], MAGIC),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {}, expected {FORMAT_VERSION}", bytes[4]),
        });
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or_else(|| Error::Format {
        offset: 5,
        msg: format!("unknown dtype code {}", bytes[5]),
    })?;
    for (off, &byte) in bytes.iter().enumerate().take(8).skip(6) {
        if byte != 0 {
            return Err(Error::Format {
                offset: off as u64,
                msg: format!("reserved byte must be zero, found {byte}"),
            });
        }
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if rows == 0 {
        return Err(Error::Format {
            offset: 8,
            msg: "rows must be >= 1".to_string(),
        });
    }
    if cols == 0 {
        return Err(Error::Format {
            offset: 16,
            msg: "cols must be >= 1".to_string(),
        });
    }
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c <= usize::MAX as u64 / 8)
        .ok_or_else(|| Error::Format {
            offset: 8,
            msg: format!("shape {rows}x{cols} overflows"),
        })?;
    let expected = HEADER_LEN as u64 + count * dtype.size() as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Format {
            offset: HEADER_LEN as u64,
            msg: format!(
                "length error: header promises {expected} bytes, file has {}",
                bytes.len()
            ),
        });
    }

    let payload = &bytes[HEADER_LEN..];
    let mut data = Vec::with_capacity(count as usize);
    match dtype {
        Dtype::F64 => {
            for chunk in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        Dtype::F32 => {
            for chunk in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
    }
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value at flat index {idx} in {}",
            path.display()
        )));
    }
    DenseMatrix::from_vec(rows as usize, cols as usize, data)
}

/// Tensor names follow `layer.<index>.<q|k|v|up|down>` so analysis
/// reports group naturally by layer and projection.
pub fn valid_tensor_name(name: &str) -> bool {
    let parts: Vec<&str> = name.split('.').collect();
    if parts.len() != 3 || parts[0] != "layer" {
        return false;
    }
    if parts[1].is_empty() || !parts[1].bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    matches!(parts[2], "q" | "k" | "v" | "up" | "down")
}

/// An in-memory weight container: uniquely named tensors following the
/// naming grammar, persisted as a directory of tensor files plus a
/// JSON manifest.
#[derive(Debug, Clone, Default)]
pub struct WeightContainer {
    tensors: BTreeMap<String, DenseMatrix>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a tensor. The name must match the grammar and be unused.
    pub fn insert(&mut self, name: &str, matrix: DenseMatrix) -> Result<()> {
        if !valid_tensor_name(name) {
            return Err(Error::Data(format!(
                "tensor name {name:?} does not match layer.<index>.<q|k|v|up|down>"
            )));
        }
        if self.tensors.contains_key(name) {
            return Err(Error::Data(format!("duplicate tensor name {name:?}")));
        }
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::Data(format!("tensor {name:?} is empty")));
        }
        self.tensors.insert(name.to_string(), matrix);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    dtype: u8,
    rows: u64,
    cols: u64,
}

/// Write the container into `dir` (created if needed): one tensor file
/// per entry plus `manifest.json`. Tensors are stored at 64-bit.
pub fn save_container(dir: &Path, container: &WeightContainer) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BTreeMap::new();
    for (name, matrix) in container.iter() {
        let file = format!("{name}.bin");
        write_tensor(&dir.join(&file), matrix, Dtype::F64)?;
        manifest.insert(
            name.to_string(),
            ManifestEntry {
                file,
                dtype: Dtype::F64.code(),
                rows: matrix.rows() as u64,
                cols: matrix.cols() as u64,
            },
        );
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Manifest parsed as a sequence of pairs so duplicate names are
/// detectable (a plain JSON map would silently keep the last one).
struct ManifestPairs(Vec<(String, ManifestEntry)>);

impl<'de> Deserialize<'de> for ManifestPairs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PairsVisitor;
        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = Vec<(String, ManifestEntry)>;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "a manifest object mapping tensor names to entries")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut pairs = Vec::new();
                while let Some(pair) = map.next_entry::<String, ManifestEntry>()? {
                    pairs.push(pair);
                }
                Ok(pairs)
            }
        }
        deserializer.deserialize_map(PairsVisitor).map(ManifestPairs)
    }
}

/// Load and validate a container directory: manifest present, names
/// unique and well-formed, every file present with the manifest shape.
pub fn load_container(dir: &Path) -> Result<WeightContainer> {
    let manifest_path = dir.join("manifest.json");
    let manifest_bytes = fs::read(&manifest_path).map_err(|e| {
        Error::Data(format!(
            "cannot read manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let ManifestPairs(pairs) = serde_json::from_slice(&manifest_bytes)?;

    let mut container = WeightContainer::new();
    for (name, entry) in pairs {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "tensor {name:?}: file {} is missing",
                entry.file
            )));
        }
        let matrix = read_tensor(&path)?;
        if matrix.rows() as u64 != entry.rows || matrix.cols() as u64 != entry.cols {
            return Err(Error::Data(format!(
                "tensor {name:?}: manifest says {}x{} but file holds {}x{}",
                entry.rows,
                entry.cols,
                matrix.rows(),
                matrix.cols()
            )));
        }
        container.insert(&name, matrix)?;
    }
    Ok(container)
}

/// Adapter checkpoint manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub name: String,
    pub variant: Variant,
    pub direction: Direction,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub k: usize,
    pub alpha: f64,
    pub dropout_p: f64,
    pub seed: u64,
}

/// Persist the trainable state of an adapter (not the frozen base
/// weight) into `dir`: `adapter.json` plus tensors `d`, `a`, `b`, and
/// `m_cached` for the exact variant. Empty tensors (k = 0) are elided.
pub fn save_adapter(dir: &Path, adapter: &SpecLoraAdapter, name: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg = adapter.config();
    let manifest = AdapterManifest {
        name: name.to_string(),
        variant: cfg.variant,
        direction: cfg.direction,
        n: adapter.w_frozen().rows(),
        m: adapter.w_frozen().cols(),
        r: cfg.rank,
        k: cfg.k,
        alpha: cfg.alpha,
        dropout_p: cfg.dropout_p,
        seed: cfg.seed,
    };
    fs::write(
        dir.join("adapter.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    if cfg.k > 0 {
        let d = DenseMatrix::from_vec(cfg.k, 1, adapter.d().to_vec())?;
        write_tensor(&dir.join("d.bin"), &d, Dtype::F64)?;
        if let Some(mc) = adapter.m_cached() {
            write_tensor(&dir.join("m_cached.bin"), mc, Dtype::F64)?;
        }
    }
    write_tensor(&dir.join("a.bin"), adapter.a(), Dtype::F64)?;
    write_tensor(&dir.join("b.bin"), adapter.b(), Dtype::F64)?;
    Ok(())
}

/// Restore an adapter from a checkpoint directory onto its frozen base
/// weight. Returns the manifest's logical name alongside the adapter.
pub fn load_adapter(dir: &Path, w_frozen: DenseMatrix) -> Result<(SpecLoraAdapter, String)> {
    let manifest: AdapterManifest = read_json(&dir.join("adapter.json"))?;
    if w_frozen.rows() != manifest.n || w_frozen.cols() != manifest.m {
        return Err(Error::Dimension(format!(
            "checkpoint expects a {}x{} base weight, got {}x{}",
            manifest.n,
            manifest.m,
            w_frozen.rows(),
            w_frozen.cols()
        )));
    }
    let config = AdapterConfig {
        rank: manifest.r,
        alpha: manifest.alpha,
        k: manifest.k,
        dropout_p: manifest.dropout_p,
        variant: manifest.variant,
        direction: manifest.direction,
        seed: manifest.seed,
    };
    let d = if manifest.k > 0 {
        read_tensor(&dir.join("d.bin"))?.data().to_vec()
    } else {
        Vec::new()
    };
    let a = read_tensor(&dir.join("a.bin"))?;
    let b = read_tensor(&dir.join("b.bin"))?;
    let m_cached = match manifest.variant {
        Variant::Hadamard => None,
        Variant::SvdExact if manifest.k > 0 => Some(read_tensor(&dir.join("m_cached.bin"))?),
        Variant::SvdExact => Some(DenseMatrix::zeros(0, manifest.m)),
    };
    let adapter = SpecLoraAdapter::from_parts(w_frozen, d, a, b, m_cached, config)?;
    Ok((adapter, manifest.name))
}

/// Read a JSON file into a typed value.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Write a value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
