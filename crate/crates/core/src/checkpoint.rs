//! Flat tensor archives.
//!
//! ```text
//! line 1   JSON header terminated by '\n'
//! then     one record per tensor, in order:
//!            u32  name length in bytes
//!            [u8] UTF-8 name
//!            u32  number of dimensions
//!            u64  each extent
//!            f64  row-major data
//! ```
//!
//! All integers and floats are little-endian. The header always carries
//! `format_version` and `model_config`; the other fields describe what the
//! archive holds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{attach_adapters, DualLoraConfig, Fingerprint};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamKind, Seq2Seq, Tokenizer};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    /// Backbone weights only.
    Base,
    /// Adapter tensors only, loaded on top of a separately stored base.
    Adapter,
    /// Backbone weights with adapters folded in.
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub kind: ArchiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_config: Option<DualLoraConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<Tokenizer>,
    /// Hex fingerprint of the prompt summary merged into the biases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_prompt: Option<String>,
    /// Projections whose bias holds that prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_projections: Vec<String>,
}

impl Header {
    pub fn new(model_config: ModelConfig, kind: ArchiveKind) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_config,
            kind,
            adapter_config: None,
            tokenizer: None,
            merged_prompt: None,
            merged_projections: Vec::new(),
        }
    }
}

pub fn write_archive(path: &Path, header: &Header, tensors: &[(String, &Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated archive while reading {what}: {e}")))?;
    Ok(b)
}

/// Header plus tensors in file order.
pub fn read_archive(path: &Path) -> Result<(Header, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    let mut tensors = Vec::new();
    loop {
        let mut first = [0u8; 1];
        if r.read(&mut first)? == 0 {
            break;
        }
        let rest: [u8; 3] = read_exact(&mut r, "name length")?;
        let name_len = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = u32::from_le_bytes(read_exact(&mut r, "ndim")?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact(&mut r, "extent")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(&mut r, &name)?));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok((header, tensors))
}

fn base_tensors(model: &Seq2Seq) -> Vec<(String, &Tensor)> {
    model
        .params()
        .into_iter()
        .filter(|(_, k, _)| *k == ParamKind::Base)
        .map(|(n, _, t)| (n, t))
        .collect()
}

/// Writes the backbone. Fails if any adapter is folded into the weights,
/// since the result would no longer be the plain base.
pub fn save_base(path: &Path, model: &Seq2Seq, tokenizer: Option<&Tokenizer>) -> Result<()> {
    if model
        .projections()
        .iter()
        .any(|p| p.is_context_merged() || p.merged_prompt().is_some())
    {
        return Err(Error::merge_state(
            "cannot save a merged model as a base checkpoint",
        ));
    }
    let mut header = Header::new(model.config.clone(), ArchiveKind::Base);
    header.tokenizer = tokenizer.cloned();
    write_archive(path, &header, &base_tensors(model))
}

/// Writes only the adapter tensors.
pub fn save_adapters(path: &Path, model: &Seq2Seq, adapter_config: &DualLoraConfig) -> Result<()> {
    let tensors: Vec<(String, &Tensor)> = model
        .params()
        .into_iter()
        .filter(|(_, k, _)| *k == ParamKind::Adapter)
        .map(|(n, _, t)| (n, t))
        .collect();
    let mut header = Header::new(model.config.clone(), ArchiveKind::Adapter);
    header.adapter_config = Some(adapter_config.clone());
    write_archive(path, &header, &tensors)
}

/// Writes a model whose adapters have all been merged and stripped.
pub fn save_merged(path: &Path, model: &Seq2Seq, tokenizer: Option<&Tokenizer>) -> Result<()> {
    let mut header = Header::new(model.config.clone(), ArchiveKind::Merged);
    header.tokenizer = tokenizer.cloned();
    for p in model.projections() {
        if p.has_adapters() {
            return Err(Error::merge_state(format!(
                "{}: adapters must be merged and stripped first",
                p.name
            )));
        }
        if let Some(m) = p.merged_prompt() {
            let hex = m.fingerprint.to_hex();
            match &header.merged_prompt {
                Some(existing) if *existing != hex => {
                    return Err(Error::merge_state(
                        "projections carry different merged prompts",
                    ));
                }
                _ => header.merged_prompt = Some(hex),
            }
            header.merged_projections.push(p.name.clone());
        }
    }
    write_archive(path, &header, &base_tensors(model))
}

fn assign(model: &mut Seq2Seq, kind: ParamKind, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let mut incoming: BTreeMap<String, Tensor> = BTreeMap::new();
    for (n, t) in tensors {
        if incoming.insert(n.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor '{n}'")));
        }
    }
    for (name, k, slot) in model.params_mut() {
        if k != kind {
            continue;
        }
        let t = incoming
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = incoming.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
    }
    Ok(())
}

/// Loads a base or merged archive.
pub fn load_model(path: &Path) -> Result<(Seq2Seq, Header)> {
    let (header, tensors) = read_archive(path)?;
    if header.kind == ArchiveKind::Adapter {
        return Err(Error::Checkpoint(format!(
            "{} holds adapters, not a model",
            path.display()
        )));
    }
    let mut model = Seq2Seq::new(header.model_config.clone(), 0)?;
    assign(&mut model, ParamKind::Base, tensors)?;
    if let Some(hex) = &header.merged_prompt {
        let fp = Fingerprint::from_hex(hex)?;
        for name in &header.merged_projections {
            let p = model
                .projections_mut()
                .into_iter()
                .find(|p| p.name == *name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown merged projection '{name}'")))?;
            p.set_merged_prompt_marker(fp);
        }
    }
    Ok((model, header))
}

/// Attaches the archived adapters to `model` and fills in their values.
pub fn load_adapters(path: &Path, model: &mut Seq2Seq) -> Result<DualLoraConfig> {
    let (header, tensors) = read_archive(path)?;
    if header.kind != ArchiveKind::Adapter {
        return Err(Error::Checkpoint(format!(
            "{} does not hold adapters",
            path.display()
        )));
    }
    if header.model_config != model.config {
        return Err(Error::Checkpoint(
            "adapter archive was built for a different model shape".into(),
        ));
    }
    let cfg = header
        .adapter_config
        .ok_or_else(|| Error::Checkpoint("adapter archive lacks adapter_config".into()))?;
    attach_adapters(model, &cfg)?;
    assign(model, ParamKind::Adapter, tensors)?;
    Ok(cfg)
}
