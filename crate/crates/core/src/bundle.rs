//! Weight-bundle container: `manifest.json` plus a single little-endian
//! `weights.bin` blob.
//!
//! Manifest layout:
//!
//! ```json
//! {
//!   "version": 1,
//!   "matrices": [
//!     {"name": "layers.0.attn.q", "role": "attn_q", "layer": 0,
//!      "rows": 64, "cols": 64, "dtype": "bf16", "offset_bytes": 0}
//!   ],
//!   "metadata": {"source": "demo"}
//! }
//! ```
//!
//! Payloads are row-major. `bf16` entries take 2 bytes and `f32` entries 4
//! bytes each. BF16 words are kept verbatim so the MDL estimate sees the exact
//! stored bits; decoding places the word in the high half of an `f32`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    MlpGate,
    MlpUp,
    MlpDown,
    Embed,
    Other,
}

impl Role {
    pub const ALL: [Role; 9] = [
        Role::AttnQ,
        Role::AttnK,
        Role::AttnV,
        Role::AttnO,
        Role::MlpGate,
        Role::MlpUp,
        Role::MlpDown,
        Role::Embed,
        Role::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::AttnQ => "attn_q",
            Role::AttnK => "attn_k",
            Role::AttnV => "attn_v",
            Role::AttnO => "attn_o",
            Role::MlpGate => "mlp_gate",
            Role::MlpUp => "mlp_up",
            Role::MlpDown => "mlp_down",
            Role::Embed => "embed",
            Role::Other => "other",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, Role::AttnQ | Role::AttnK | Role::AttnV | Role::AttnO)
    }

    pub fn is_mlp(self) -> bool {
        matches!(self, Role::MlpGate | Role::MlpUp | Role::MlpDown)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = std::convert::Infallible;

    /// Unrecognized names map to [`Role::Other`].
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Role::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .unwrap_or(Role::Other))
    }
}

/// Which layer family a computation is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Attn,
    Mlp,
    Both,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Attn, Scope::Mlp, Scope::Both];

    pub fn contains(self, role: Role) -> bool {
        match self {
            Scope::Attn => role.is_attention(),
            Scope::Mlp => role.is_mlp(),
            Scope::Both => role.is_attention() || role.is_mlp(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Attn => "attn",
            Scope::Mlp => "mlp",
            Scope::Both => "both",
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attn" | "attention" => Ok(Scope::Attn),
            "mlp" => Ok(Scope::Mlp),
            "both" | "all" => Ok(Scope::Both),
            other => Err(Error::InvalidInput(format!("unknown scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Bf16,
    F32,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::Bf16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Bf16 => "bf16",
            Dtype::F32 => "f32",
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bf16" => Ok(Dtype::Bf16),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

/// Decodes a BF16 word: the 16 bits become the high half of an IEEE `f32`.
#[inline]
pub fn bf16_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

/// Round-to-nearest-even BF16 encoding.
#[inline]
pub fn f32_to_bf16(value: f32) -> u16 {
    half::bf16::from_f32(value).to_bits()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub name: String,
    pub role: Role,
    pub layer_index: u32,
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    /// Row-major values.
    pub values: Vec<f32>,
    /// Stored BF16 words, present iff `dtype == Bf16`.
    pub raw_bits: Option<Vec<u16>>,
}

impl WeightMatrix {
    pub fn from_f32(
        name: impl Into<String>,
        role: Role,
        layer_index: u32,
        rows: usize,
        cols: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let name = name.into();
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix `{name}` declares {rows}x{cols} but has {} values",
                values.len()
            )));
        }
        Ok(WeightMatrix {
            name,
            role,
            layer_index,
            rows,
            cols,
            dtype: Dtype::F32,
            values,
            raw_bits: None,
        })
    }

    pub fn from_bf16_bits(
        name: impl Into<String>,
        role: Role,
        layer_index: u32,
        rows: usize,
        cols: usize,
        bits: Vec<u16>,
    ) -> Result<Self> {
        let name = name.into();
        if bits.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix `{name}` declares {rows}x{cols} but has {} words",
                bits.len()
            )));
        }
        let values = bits.iter().map(|&b| bf16_to_f32(b)).collect();
        Ok(WeightMatrix {
            name,
            role,
            layer_index,
            rows,
            cols,
            dtype: Dtype::Bf16,
            values,
            raw_bits: Some(bits),
        })
    }

    /// Rounds a dense `f64` matrix to BF16 storage.
    pub fn bf16_from_dmatrix(
        name: impl Into<String>,
        role: Role,
        layer_index: u32,
        m: &DMatrix<f64>,
    ) -> Result<Self> {
        let (rows, cols) = m.shape();
        let bits = row_major(m).map(|x| f32_to_bf16(x as f32)).collect();
        Self::from_bf16_bits(name, role, layer_index, rows, cols, bits)
    }

    pub fn f32_from_dmatrix(
        name: impl Into<String>,
        role: Role,
        layer_index: u32,
        m: &DMatrix<f64>,
    ) -> Result<Self> {
        let (rows, cols) = m.shape();
        let values = row_major(m).map(|x| x as f32).collect();
        Self::from_f32(name, role, layer_index, rows, cols, values)
    }

    pub fn param_count(&self) -> u64 {
        (self.rows * self.cols) as u64
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            self.values[i * self.cols + j] as f64
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    let (rows, cols) = m.shape();
    (0..rows).flat_map(move |i| (0..cols).map(move |j| m[(i, j)]))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBundle {
    pub matrices: Vec<WeightMatrix>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelBundle {
    pub fn new(matrices: Vec<WeightMatrix>, metadata: BTreeMap<String, String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &matrices {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::DuplicateName(m.name.clone()));
            }
        }
        Ok(ModelBundle { matrices, metadata })
    }

    /// N: the sum of rows×cols over every matrix.
    pub fn total_params(&self) -> u64 {
        self.matrices.iter().map(WeightMatrix::param_count).sum()
    }

    pub fn get(&self, name: &str) -> Option<&WeightMatrix> {
        self.matrices.iter().find(|m| m.name == name)
    }

    pub fn in_scope(&self, scope: Scope) -> impl Iterator<Item = &WeightMatrix> {
        self.matrices.iter().filter(move |m| scope.contains(m.role))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    matrices: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    role: String,
    layer: u32,
    rows: usize,
    cols: usize,
    dtype: String,
    offset_bytes: u64,
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = path.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut matrices = Vec::with_capacity(manifest.matrices.len());
    for entry in manifest.matrices {
        let dtype: Dtype = entry.dtype.parse()?;
        let role: Role = entry.role.parse().unwrap_or(Role::Other);
        let count = entry
            .rows
            .checked_mul(entry.cols)
            .ok_or_else(|| Error::Manifest(format!("matrix `{}` is too large", entry.name)))?;
        let start = entry.offset_bytes;
        let end = start + (count * dtype.size_bytes()) as u64;
        if end > blob.len() as u64 {
            return Err(Error::TruncatedBlob {
                name: entry.name,
                start,
                end,
                len: blob.len() as u64,
            });
        }
        let bytes = &blob[start as usize..end as usize];
        let matrix = match dtype {
            Dtype::Bf16 => {
                let bits = bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect();
                WeightMatrix::from_bf16_bits(
                    entry.name,
                    role,
                    entry.layer,
                    entry.rows,
                    entry.cols,
                    bits,
                )?
            }
            Dtype::F32 => {
                let values = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                WeightMatrix::from_f32(
                    entry.name,
                    role,
                    entry.layer,
                    entry.rows,
                    entry.cols,
                    values,
                )?
            }
        };
        matrices.push(matrix);
    }
    ModelBundle::new(matrices, manifest.metadata)
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(bundle.matrices.len());
    for m in &bundle.matrices {
        entries.push(ManifestEntry {
            name: m.name.clone(),
            role: m.role.as_str().to_string(),
            layer: m.layer_index,
            rows: m.rows,
            cols: m.cols,
            dtype: m.dtype.as_str().to_string(),
            offset_bytes: blob.len() as u64,
        });
        match (m.dtype, &m.raw_bits) {
            (Dtype::Bf16, Some(bits)) => {
                for b in bits {
                    blob.extend_from_slice(&b.to_le_bytes());
                }
            }
            (Dtype::Bf16, None) => {
                for &v in &m.values {
                    blob.extend_from_slice(&f32_to_bf16(v).to_le_bytes());
                }
            }
            (Dtype::F32, _) => {
                for v in &m.values {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        matrices: entries,
        metadata: bundle.metadata.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}
