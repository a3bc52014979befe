//! Binary checkpoint format.
//!
//! ```text
//! "IANMT1"
//! u32 LE metadata length, then UTF-8 `key=value` lines (sorted by key)
//! per tensor until EOF:
//!   u32 name length, name bytes, u32 rank, rank × u32 dims, f64 LE values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 6] = b"IANMT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub epoch: usize,
    pub dev_bleu: f64,
    /// Additional `key=value` pairs echoed verbatim (run configuration).
    pub extra: BTreeMap<String, String>,
}

fn config_entries(c: &ModelConfig) -> [(&'static str, String); 8] {
    [
        ("variant", c.variant.to_string()),
        ("config.src_vocab", c.src_vocab.to_string()),
        ("config.tgt_vocab", c.tgt_vocab.to_string()),
        ("config.d_emb", c.d_emb.to_string()),
        ("config.d_enc", c.d_enc.to_string()),
        ("config.d_s", c.d_s.to_string()),
        ("config.d_a", c.d_a.to_string()),
        ("config.d_readout", c.d_readout.to_string()),
    ]
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| bad(format!("{what} {n} does not fit in 32 bits")))
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            epoch: 0,
            dev_bleu: 0.0,
            extra: BTreeMap::new(),
        }
    }

    fn metadata(&self) -> Result<BTreeMap<String, String>> {
        let mut meta = BTreeMap::new();
        for (k, v) in &self.extra {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(bad(format!("metadata entry {k:?} is not a single key=value line")));
            }
            meta.insert(k.clone(), v.clone());
        }
        meta.insert("format_version".into(), FORMAT_VERSION.to_string());
        meta.insert("epoch".into(), self.epoch.to_string());
        meta.insert("dev_bleu".into(), self.dev_bleu.to_string());
        for (k, v) in config_entries(&self.params.config) {
            meta.insert(k.into(), v);
        }
        Ok(meta)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let meta: String = self.metadata()?.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.write_all(MAGIC)?;
        out.write_all(&u32_len(meta.len(), "metadata length")?.to_le_bytes())?;
        out.write_all(meta.as_bytes())?;
        for p in self.params.store.iter() {
            out.write_all(&u32_len(p.name.len(), "name length")?.to_le_bytes())?;
            out.write_all(p.name.as_bytes())?;
            let shape = p.tensor.shape();
            out.write_all(&u32_len(shape.len(), "rank")?.to_le_bytes())?;
            for &d in shape {
                out.write_all(&u32_len(d, "dimension")?.to_le_bytes())?;
            }
            for v in p.tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(bad("missing IANMT1 magic"));
        }
        let meta_len = cur.u32()? as usize;
        let meta_text = std::str::from_utf8(cur.take(meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("metadata line without '=': {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let mut field = |key: &str| meta.remove(key).ok_or_else(|| bad(format!("metadata is missing {key}")));
        let version: u32 = parse(&field("format_version")?, "format_version")?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let epoch = parse(&field("epoch")?, "epoch")?;
        let dev_bleu = parse(&field("dev_bleu")?, "dev_bleu")?;
        let config = ModelConfig {
            variant: field("variant")?.parse()?,
            src_vocab: parse(&field("config.src_vocab")?, "src_vocab")?,
            tgt_vocab: parse(&field("config.tgt_vocab")?, "tgt_vocab")?,
            d_emb: parse(&field("config.d_emb")?, "d_emb")?,
            d_enc: parse(&field("config.d_enc")?, "d_enc")?,
            d_s: parse(&field("config.d_s")?, "d_s")?,
            d_a: parse(&field("config.d_a")?, "d_a")?,
            d_readout: parse(&field("config.d_readout")?, "d_readout")?,
        };
        let mut params = ModelParams::zeros(config)?;

        let mut seen = vec![false; params.store.len()];
        while !cur.at_end() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let pos = params
                .store
                .position(&name)
                .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
            if std::mem::replace(&mut seen[pos], true) {
                return Err(bad(format!("tensor {name} appears twice")));
            }
            let tensor = params.store.get_mut(&name).expect("position checked");
            if tensor.shape() != shape.as_slice() {
                return Err(bad(format!(
                    "tensor {name} has shape {shape:?}, expected {:?}",
                    tensor.shape()
                )));
            }
            for v in tensor.data_mut() {
                *v = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if let Some(missing) = params.store.names().zip(&seen).find(|(_, &s)| !s).map(|(n, _)| n.to_string()) {
            return Err(bad(format!("tensor {missing} is missing")));
        }
        Ok(Self {
            params,
            epoch,
            dev_bleu,
            extra: meta.into_iter().collect(),
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse().map_err(|_| bad(format!("bad value {s:?} for {key}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
