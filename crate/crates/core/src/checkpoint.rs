//! Versioned binary checkpoint.
//!
//! ```text
//! b"ITGPTCK1"                       magic
//! u32 version
//! u64 n, n bytes                    UTF-8 `key = value` text: TrainConfig + model.* keys
//! u64 count                         parameters, in registration order
//!   u32 n, n bytes                  parameter path
//!   u32 rank, rank × u64            shape
//!   prod(shape) × f64               row-major values
//! ```
//!
//! All integers and floats are little-endian, so the bytes do not depend on the host.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::kv::{parse_value, KvFile};
use crate::model::{ItgptParams, ModelSpec};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"ITGPTCK1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ItgptParams,
}

fn header(config: &TrainConfig, spec: &ModelSpec) -> String {
    let mut kv = config.to_kv();
    kv.push(
        "model.modality_dims",
        spec.modality_dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
    );
    kv.push("model.num_classes", spec.num_classes);
    kv.push("model.lambda", format!("{:?}", spec.lambda));
    kv.render()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible {what} length {n}")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("text is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = header(&self.config, &self.params.spec);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let store = &self.params.store;
        out.extend_from_slice(&(store.len() as u64).to_le_bytes());
        for (name, t) in store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let n = r.len("header")?;
        let text = r.string(n)?;
        let kv = KvFile::parse(&text, Path::new("<checkpoint header>"))?;
        let mut config_kv = KvFile::default();
        for (k, v) in kv.entries().filter(|(k, _)| !k.starts_with("model.")) {
            config_kv.push(k, v);
        }
        let config = TrainConfig::from_kv(&config_kv)?;
        let need = |k: &str| kv.get(k).ok_or_else(|| Error::Checkpoint(format!("header lacks `{k}`")));
        let modality_dims = need("model.modality_dims")?
            .split(',')
            .map(|d| parse_value("model.modality_dims", d.trim()))
            .collect::<Result<Vec<usize>>>()?;
        let num_classes = parse_value("model.num_classes", need("model.num_classes")?)?;
        let lambda = parse_value("model.lambda", need("model.lambda")?)?;
        let spec = ModelSpec {
            modality_dims,
            num_classes,
            d_k: config.d_k,
            d_o: config.d_o(),
            d_a: config.d_a,
            depth: config.depth,
            mixing: config.mixing,
            dropout: config.dropout,
            query_map: config.query_map,
            lambda,
        };
        let mut params = ItgptParams::init(&spec, config.seed)?;

        let count = r.len("parameter count")?;
        let mut stored = ParamStore::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("parameter `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len("dimension")?);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            stored.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        params.store.load_values(&stored)?;
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
