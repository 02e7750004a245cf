//! Checkpoint files: a binary tensor blob plus a `key=value` text sidecar
//! (`<path>.meta`) holding the model config, vocabularies and run metadata.
//!
//! Blob layout, little endian: magic `CGCKPT01`, `u32` tensor count, then per
//! tensor a `u32` name length, the UTF-8 name, `u64` rows, `u64` cols and the
//! row-major `f64` values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::model::{ModelConfig, ModelState, Params};
use super::vocab::{Side, Vocab, Vocabs};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CGCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub step: usize,
    pub dev_accuracy: Option<f64>,
    pub seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn encode_params(params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.size() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.names().iter().zip(params.values()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for x in value.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated tensor blob".into()))?;
        let s = &self.bytes[self.pos..end];
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

pub fn decode_params(bytes: &[u8]) -> Result<Params> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut names = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let data = r.take(rows * cols * 8)?;
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m = Array2::from_shape_vec((rows, cols), flat).map_err(|e| Error::Checkpoint(e.to_string()))?;
        names.push(name);
        values.push(m);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Params::from_parts(names, values)
}

fn format_sidecar(model: &ModelState, meta: &CheckpointMeta) -> String {
    let c = &model.config;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
    kv("model.arch", c.arch.to_string());
    kv("model.layers", c.layers.to_string());
    kv("model.hidden_dim", c.hidden_dim.to_string());
    kv("model.embed_dim", c.embed_dim.to_string());
    kv("model.heads", c.heads.to_string());
    kv("model.ff_dim", c.ff_dim.to_string());
    kv("model.dropout", c.dropout.to_string());
    kv("model.max_decode_len", c.max_decode_len.to_string());
    kv("init_seed", model.seed.to_string());
    kv("step", meta.step.to_string());
    kv(
        "dev_accuracy",
        meta.dev_accuracy.map_or_else(|| "none".to_string(), |a| a.to_string()),
    );
    kv("seed", meta.seed.to_string());
    kv("vocab.source", model.vocabs.source.tokens()[3..].join(" "));
    kv("vocab.target", model.vocabs.target.tokens()[3..].join(" "));
    s
}

fn parse_sidecar(text: &str) -> Result<(ModelConfig, Vocabs, u64, CheckpointMeta)> {
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad sidecar line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| map.get(k).ok_or_else(|| Error::Checkpoint(format!("sidecar lacks {k}")));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Checkpoint(format!("bad value for {k}: {v:?}")))
    }
    let config = ModelConfig {
        arch: get("model.arch")?.parse()?,
        layers: num("model.layers", get("model.layers")?)?,
        hidden_dim: num("model.hidden_dim", get("model.hidden_dim")?)?,
        embed_dim: num("model.embed_dim", get("model.embed_dim")?)?,
        heads: num("model.heads", get("model.heads")?)?,
        ff_dim: num("model.ff_dim", get("model.ff_dim")?)?,
        dropout: num("model.dropout", get("model.dropout")?)?,
        max_decode_len: num("model.max_decode_len", get("model.max_decode_len")?)?,
    };
    let vocab = |side: Side, key: &str| -> Result<Vocab> {
        let tokens: Vec<&str> = get(key)?.split_whitespace().collect();
        let v = Vocab::new(side, tokens.iter().copied());
        if v.tokens()[3..] != tokens[..] {
            return Err(Error::Checkpoint(format!("{key} is not in canonical order")));
        }
        Ok(v)
    };
    let vocabs = Vocabs {
        source: vocab(Side::Source, "vocab.source")?,
        target: vocab(Side::Target, "vocab.target")?,
    };
    let dev = get("dev_accuracy")?;
    let meta = CheckpointMeta {
        step: num("step", get("step")?)?,
        dev_accuracy: if dev == "none" { None } else { Some(num("dev_accuracy", dev)?) },
        seed: num("seed", get("seed")?)?,
    };
    Ok((config, vocabs, num("init_seed", get("init_seed")?)?, meta))
}

pub fn save(model: &ModelState, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    fs::write(path, encode_params(&model.params))?;
    fs::write(sidecar_path(path), format_sidecar(model, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelState, CheckpointMeta)> {
    let params = decode_params(&fs::read(path)?)?;
    let (config, vocabs, init_seed, meta) = parse_sidecar(&fs::read_to_string(sidecar_path(path))?)?;
    let mut model = ModelState::new(config, vocabs, init_seed)?;
    if model.params.names() != params.names()
        || model.params.values().iter().zip(params.values()).any(|(a, b)| a.dim() != b.dim())
    {
        return Err(Error::Checkpoint("tensors do not match the configured model".into()));
    }
    model.params = params;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Example};
    use crate::nn::model::Arch;

    fn small(arch: Arch) -> ModelState {
        let d = Dataset::new(vec![Example::from_strs("walk left", "TL WALK")]);
        let cfg = ModelConfig {
            arch,
            layers: 1,
            hidden_dim: 8,
            embed_dim: 8,
            heads: 2,
            ff_dim: 8,
            dropout: 0.0,
            max_decode_len: 5,
        };
        ModelState::new(cfg, Vocabs::from_datasets([&d]), 3).unwrap()
    }

    #[test]
    fn round_trip() {
        for arch in [Arch::SelfAttention, Arch::Recurrent] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.bin");
            let mut m = small(arch);
            m.params.values_mut()[0][(0, 0)] = 42.5;
            let meta = CheckpointMeta {
                step: 7,
                dev_accuracy: Some(0.25),
                seed: 9,
            };
            save(&m, &meta, &path).unwrap();
            let (back, meta_back) = load(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(meta_back, meta);
        }
    }

    #[test]
    fn corrupt_blob() {
        let m = small(Arch::SelfAttention);
        let mut bytes = encode_params(&m.params);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_params(&bytes), Err(Error::Checkpoint(_))));
        assert!(matches!(decode_params(b"nonsense"), Err(Error::Checkpoint(_))));
    }
}
