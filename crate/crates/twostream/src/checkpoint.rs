//! Named-tensor container used for model checkpoints and feature caches.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TSTENSOR"
//! version  u32
//! count    u64
//! count × { name_len u32, name bytes (UTF-8), rank u32, rank × u64 extent,
//!           product(extents) × f32 }
//! ```
//!
//! Values are stored as `f32`, so a save of loaded tensors reproduces the
//! file bit for bit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use twostream_core::fusion::FusionKind;
use twostream_core::model::{SequenceConfig, SequenceModel};
use twostream_core::nn::{C3dParams, C3dSpec, Preset};
use twostream_core::params::{assign_named, ParamSet};
use twostream_core::Tensor;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"TSTENSOR";
pub const VERSION: u32 = 1;

const C3D_META: &str = "c3d.config";
const MODEL_META: &str = "model.config";
const FUSION_META: &str = "fusion.kind";

/// Ordered list of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor, rounding its values to `f32`. Replaces an existing
    /// tensor of the same name in place.
    pub fn insert(&mut self, name: impl Into<String>, tensor: &Tensor) {
        let name = name.into();
        let mut t = tensor.clone();
        t.round_to_f32();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, t));
            }
        }
    }

    pub fn insert_params<P: ParamSet>(&mut self, params: &P) {
        for (name, t) in params.named_tensors() {
            self.insert(name, t);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses a container; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::format(origin, "not a tensor container (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported container version {}", version)));
        }
        let count = r.u64()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::format(origin, format!("tensor {} has implausible extents {:?}", name, dims)))?;
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if ck.contains(&name) {
                return Err(Error::format(origin, format!("duplicate tensor {}", name)));
            }
            let t = Tensor::from_vec(&dims, data)?;
            ck.insert(name, &t);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last tensor"));
        }
        Ok(ck)
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        let tmp = path.with_extension("ckpt.partial");
        fs::write(&tmp, self.to_bytes()).at(&tmp)?;
        fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// Hex SHA-256 of the serialized container.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    fn meta(&self, name: &str, origin: &Path) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::format(origin, format!("missing tensor {}", name)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.origin, "truncated container")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn c3d_checkpoint(params: &C3dParams) -> Checkpoint {
    let mut ck = Checkpoint::new();
    let preset = if params.spec == C3dSpec::tiny(params.spec.num_classes) {
        Preset::Tiny
    } else {
        Preset::Full
    };
    ck.insert(
        C3D_META,
        &Tensor::vector(vec![preset.code(), params.spec.num_classes as f64]),
    );
    ck.insert_params(params);
    ck
}

pub fn c3d_from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<C3dParams> {
    let meta = ck.meta(C3D_META, origin)?.data();
    let bad = || Error::format(origin, format!("malformed {}", C3D_META));
    if meta.len() != 2 {
        return Err(bad());
    }
    let preset = Preset::from_code(meta[0]).ok_or_else(bad)?;
    let spec = C3dSpec::preset(preset, meta[1] as usize);
    Ok(C3dParams::from_named(&spec, |n| ck.get(n))?)
}

pub fn model_checkpoint(model: &SequenceModel) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.insert(MODEL_META, &Tensor::vector(model.config.to_codes()));
    ck.insert(FUSION_META, &Tensor::vector(vec![model.config.fusion.code()]));
    ck.insert_params(model);
    ck
}

pub fn model_from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<SequenceModel> {
    let config = SequenceConfig::from_codes(ck.meta(MODEL_META, origin)?.data())?;
    let kind = ck.meta(FUSION_META, origin)?.data();
    if kind.len() != 1 || FusionKind::from_code(kind[0]) != Some(config.fusion) {
        return Err(Error::format(origin, format!("{} disagrees with {}", FUSION_META, MODEL_META)));
    }
    let mut model = SequenceModel::init(config, 0)?;
    assign_named(&mut model, |n| ck.get(n))?;
    Ok(model)
}

/// Short content hash of a parameter set, used to key caches.
pub fn params_hash<P: ParamSet>(params: &P) -> String {
    let mut ck = Checkpoint::new();
    ck.insert_params(params);
    ck.digest()[..16].to_string()
}
