//! Parameter checkpoints: `<stem>.bin` holds every tensor back to back as
//! little-endian `f32`; `<stem>.manifest` is a text index with one
//! `name shape byte_offset kind` line per tensor, preceded by `@meta key value`
//! lines describing the model that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

const MAGIC: &str = "# dsnet-checkpoint 1";

pub fn stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("manifest") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = stem(path);
    (with_suffix(&stem, ".bin"), with_suffix(&stem, ".manifest"))
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Serialized form without touching the filesystem: `(payload, manifest)`.
pub fn encode<T: Scalar>(store: &ParamStore<T>, meta: &BTreeMap<String, String>) -> (Vec<u8>, String) {
    let mut payload = Vec::new();
    let mut manifest = String::from(MAGIC);
    manifest.push('\n');
    for (k, v) in meta {
        let _ = writeln!(manifest, "@meta {k} {v}");
    }
    for (name, t) in store.iter() {
        let kind = if store.is_trainable(name) { "param" } else { "buffer" };
        let _ = writeln!(manifest, "{name} {} {} {kind}", shape_text(t.shape()), payload.len());
        for &x in t.data() {
            payload.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    (payload, manifest)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, meta: &BTreeMap<String, String>, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let (bin, man) = paths(path);
    let (payload, manifest) = encode(store, meta);
    fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))?;
    fs::write(&man, manifest).map_err(|e| Error::io(&man, e))?;
    Ok((bin, man))
}

pub fn decode<T: Scalar>(
    payload: &[u8],
    manifest: &str,
    origin: &Path,
) -> Result<(ParamStore<T>, BTreeMap<String, String>)> {
    let mut lines = manifest.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::format(origin, "missing checkpoint header line")),
    }
    let mut store = ParamStore::new();
    let mut meta = BTreeMap::new();
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: String| Error::format(origin, format!("line {}: {msg}", no + 1));
        if let Some(rest) = line.strip_prefix("@meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_owned(), v.to_owned());
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, shape, offset, kind] = fields[..] else {
            return Err(fail(format!("expected `name shape offset kind`, got `{line}`")));
        };
        let shape: Vec<usize> = if shape == "scalar" {
            Vec::new()
        } else {
            shape
                .split('x')
                .map(|d| d.parse().map_err(|_| fail(format!("bad extent `{d}`"))))
                .collect::<Result<_>>()?
        };
        let offset: usize = offset.parse().map_err(|_| fail(format!("bad offset `{offset}`")))?;
        let numel: usize = shape.iter().product();
        let end = offset + numel * 4;
        if end > payload.len() {
            return Err(fail(format!(
                "`{name}` needs bytes {offset}..{end}, payload has {}",
                payload.len()
            )));
        }
        let data = payload[offset..end]
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        let t = Tensor::new(&shape, data)?;
        match kind {
            "param" => store.insert(name, t),
            "buffer" => store.insert_buffer(name, t),
            other => return Err(fail(format!("unknown kind `{other}`"))),
        }
    }
    Ok((store, meta))
}

pub fn load<T: Scalar>(path: &Path) -> Result<(ParamStore<T>, BTreeMap<String, String>)> {
    let (bin, man) = paths(path);
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let manifest = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    decode(&payload, &manifest, &man)
}
