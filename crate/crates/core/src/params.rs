//! Named parameter sets and the archive format shared by every checkpoint
//! (generator, discriminator, VLDA networks, embedder, direction sets).
//!
//! Archive layout, all text lines terminated by `\n`, followed by one raw
//! binary blob:
//!
//! ```text
//! toon3d-archive v1
//! kind = <kind>
//! meta <key> = <value>          (zero or more, sorted by key)
//! array <name> f64le <d0> <d1> ...   (one per array, in set order)
//! blob <byte-length> sha256=<hex>
//! data
//! <raw little-endian f64, row-major, arrays concatenated in order>
//! ```
//!
//! The blob hash is verified on decode; mismatches, truncation, and manifest
//! disagreements produce [`Error::Integrity`] with a diff of the offending
//! entries.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::Digest;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.entries.iter().any(|(n, _)| n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name.to_string(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::incompatible(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Shape signature used for architecture compatibility checks.
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

impl Archive {
    pub fn new(kind: &str) -> Self {
        Archive {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            params: ParamSet::new(),
        }
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::incompatible(format!("missing or invalid meta key {key}")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::incompatible(format!("missing or invalid meta key {key}")))
    }
}

/// A parameter set entered on a tape, keeping name -> Var alignment so
/// gradients can be collected back in set order.
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<crate::graph::Var>,
}

impl BoundParams {
    pub fn trainable(tape: &crate::graph::Tape, set: &ParamSet) -> Self {
        BoundParams {
            names: set.iter().map(|(n, _)| n.to_string()).collect(),
            vars: set.iter().map(|(_, t)| tape.param(t.clone())).collect(),
        }
    }

    pub fn constants(tape: &crate::graph::Tape, set: &ParamSet) -> Self {
        BoundParams {
            names: set.iter().map(|(n, _)| n.to_string()).collect(),
            vars: set.iter().map(|(_, t)| tape.constant(t.clone())).collect(),
        }
    }

    pub fn get(&self, name: &str) -> crate::graph::Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[crate::graph::Var] {
        &self.vars
    }

    /// Gradients in set order, ready for the optimizer.
    pub fn grads(&self, g: &mut crate::graph::Grads) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| g.take(*v)).collect()
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        core::fmt::write(&mut s, format_args!("{b:02x}")).ok();
    }
    s
}

fn blob_of(params: &ParamSet) -> Vec<u8> {
    let mut blob = Vec::with_capacity(params.total_elements() * 8);
    for (_, t) in params.iter() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    blob
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = sha2::Sha256::new();
    h.update(bytes);
    to_hex(&h.finalize())
}

pub fn encode(archive: &Archive) -> Vec<u8> {
    let blob = blob_of(&archive.params);
    let mut text = String::new();
    text.push_str("toon3d-archive v1\n");
    text.push_str(&format!("kind = {}\n", archive.kind));
    for (k, v) in &archive.meta {
        text.push_str(&format!("meta {k} = {v}\n"));
    }
    for (name, t) in archive.params.iter() {
        text.push_str(&format!("array {name} f64le"));
        for d in t.shape() {
            text.push_str(&format!(" {d}"));
        }
        text.push('\n');
    }
    text.push_str(&format!("blob {} sha256={}\n", blob.len(), sha256_hex(&blob)));
    text.push_str("data\n");
    let mut out = text.into_bytes();
    out.extend_from_slice(&blob);
    out
}

/// Full-archive content hash, used as checkpoint provenance ids.
pub fn archive_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Archive> {
    let bad = |msg: &str, diff: Vec<String>| Error::integrity(msg.to_string(), diff);

    // Split header from blob at the `data\n` line.
    let mut pos = 0usize;
    let mut lines: Vec<&str> = Vec::new();
    let mut data_start = None;
    while pos < bytes.len() {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|k| pos + k)
            .ok_or_else(|| bad("missing data section", Vec::new()))?;
        let line = core::str::from_utf8(&bytes[pos..nl])
            .map_err(|_| bad("non-utf8 header", Vec::new()))?;
        pos = nl + 1;
        if line == "data" {
            data_start = Some(pos);
            break;
        }
        lines.push(line);
    }
    let data_start = data_start.ok_or_else(|| bad("missing data section", Vec::new()))?;

    let mut it = lines.into_iter();
    match it.next() {
        Some("toon3d-archive v1") => {}
        other => {
            return Err(bad(
                "bad magic",
                alloc::vec![format!("first line: {other:?}")],
            ))
        }
    }

    let mut kind = None;
    let mut meta = BTreeMap::new();
    let mut arrays: Vec<(String, Vec<usize>)> = Vec::new();
    let mut blob_len = None;
    let mut blob_hash = None;
    for line in it {
        if let Some(rest) = line.strip_prefix("kind = ") {
            kind = Some(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once(" = ")
                .ok_or_else(|| bad("malformed meta line", alloc::vec![line.to_string()]))?;
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("array ") {
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| bad("malformed array line", alloc::vec![line.to_string()]))?;
            let dtype = parts.next();
            if dtype != Some("f64le") {
                return Err(bad(
                    "unsupported element type",
                    alloc::vec![format!("{name}: {dtype:?}")],
                ));
            }
            let dims: core::result::Result<Vec<usize>, _> =
                parts.map(|p| p.parse::<usize>()).collect();
            let dims =
                dims.map_err(|_| bad("malformed array dims", alloc::vec![line.to_string()]))?;
            arrays.push((name.to_string(), dims));
        } else if let Some(rest) = line.strip_prefix("blob ") {
            let (len_s, hash_s) = rest
                .split_once(' ')
                .ok_or_else(|| bad("malformed blob line", alloc::vec![line.to_string()]))?;
            blob_len = len_s.parse::<usize>().ok();
            blob_hash = hash_s.strip_prefix("sha256=").map(|h| h.to_string());
        } else if !line.is_empty() {
            return Err(bad("unknown header line", alloc::vec![line.to_string()]));
        }
    }

    let kind = kind.ok_or_else(|| bad("missing kind", Vec::new()))?;
    let blob_len = blob_len.ok_or_else(|| bad("missing blob length", Vec::new()))?;
    let blob_hash = blob_hash.ok_or_else(|| bad("missing blob hash", Vec::new()))?;

    let blob = &bytes[data_start..];
    if blob.len() != blob_len {
        return Err(bad(
            "blob length mismatch (truncated or padded archive)",
            alloc::vec![format!("manifest {blob_len} bytes, found {} bytes", blob.len())],
        ));
    }
    let expected: usize = arrays.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    if expected * 8 != blob_len {
        return Err(bad(
            "manifest arrays do not match blob size",
            alloc::vec![format!("arrays need {} bytes, blob has {blob_len}", expected * 8)],
        ));
    }
    let got_hash = sha256_hex(blob);
    if got_hash != blob_hash {
        return Err(bad(
            "content hash mismatch",
            alloc::vec![format!("manifest sha256={blob_hash}"), format!("computed sha256={got_hash}")],
        ));
    }

    let mut params = ParamSet::new();
    let mut off = 0usize;
    for (name, dims) in arrays {
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for k in 0..n {
            let b = &blob[(off + k) * 8..(off + k + 1) * 8];
            data.push(f64::from_le_bytes(b.try_into().unwrap()));
        }
        off += n;
        params.insert(&name, Tensor::new(dims, data));
    }

    Ok(Archive { kind, meta, params })
}
