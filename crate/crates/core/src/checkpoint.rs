//! Parameter checkpoints: an 8-byte little-endian header length, a JSON
//! manifest, then every parameter as little-endian `f64` in manifest order.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::diffcore::{ParamKind, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FORMAT: &str = "audiotext-checkpoint-1";

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    /// Model family, e.g. `"biencoder"`.
    pub model: String,
    /// Free-form training stage label.
    pub stage: String,
    pub config: serde_json::Value,
    pub vocab: Vec<String>,
    /// Tag table rows for models that have one.
    #[serde(default)]
    pub tags: Vec<String>,
    pub params: Vec<ParamEntry>,
    /// SHA-256 of the payload.
    pub payload_sha256: String,
}

/// Serializes to bytes; also used for hashing model state.
pub fn encode(
    model: &str,
    stage: &str,
    config: serde_json::Value,
    vocab: &[String],
    tags: &[String],
    params: &ParamStore,
) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(params.len());
    for p in params.iter() {
        payload.extend_from_slice(&p.value.to_le_bytes());
        entries.push(ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), kind: p.kind, dtype: "f64".into() });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        model: model.into(),
        stage: stage.into(),
        config,
        vocab: vocab.to_vec(),
        tags: tags.to_vec(),
        params: entries,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(bytes).map_err(|e| Error::file(path, e))
}

/// Parsed checkpoint: manifest plus one tensor per entry.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor>,
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<Loaded> {
    let parse = |m: String| Error::Parse(format!("{origin}: {m}"));
    if bytes.len() < 8 {
        return Err(parse("file too short for a checkpoint header".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let rest = &bytes[8..];
    if header_len > rest.len() {
        return Err(parse(format!("header claims {header_len} bytes, file has {}", rest.len())));
    }
    let manifest: Manifest =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| parse(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("{origin}: unsupported checkpoint format `{}`", manifest.format)));
    }
    let payload = &rest[header_len..];
    let expected: usize = manifest.params.iter().map(|p| 8 * p.shape.iter().product::<usize>()).sum();
    if payload.len() != expected {
        return Err(parse(format!("payload has {} bytes, manifest needs {expected}", payload.len())));
    }
    if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(parse("payload checksum mismatch".into()));
    }
    let mut tensors = Vec::with_capacity(manifest.params.len());
    let mut off = 0;
    for p in &manifest.params {
        if p.dtype != "f64" {
            return Err(Error::Format(format!("{origin}: parameter `{}` has dtype {}", p.name, p.dtype)));
        }
        let n: usize = p.shape.iter().product();
        let data = payload[off..off + 8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        off += 8 * n;
        tensors.push(Tensor::new(p.shape.clone(), data).map_err(|e| parse(format!("`{}`: {e}", p.name)))?);
    }
    Ok(Loaded { manifest, tensors })
}

pub fn read(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes, &path.display().to_string())
}

/// Copies loaded values into `store`, which must have exactly the same
/// parameter names and shapes. Nothing is written unless everything matches.
pub fn restore(loaded: &Loaded, store: &mut ParamStore) -> Result<()> {
    let mut problems = Vec::new();
    for (entry, t) in loaded.manifest.params.iter().zip(&loaded.tensors) {
        match store.get(&entry.name) {
            None => problems.push(format!("unexpected parameter `{}`", entry.name)),
            Some(p) if p.value.shape() != t.shape() => problems.push(format!(
                "`{}` has shape {:?} in the checkpoint but {:?} in the model",
                entry.name,
                t.shape(),
                p.value.shape()
            )),
            Some(p) if p.kind != entry.kind => problems.push(format!("`{}` has kind {:?}, model expects {:?}", entry.name, entry.kind, p.kind)),
            Some(_) => {}
        }
    }
    let present: std::collections::HashSet<&str> = loaded.manifest.params.iter().map(|p| p.name.as_str()).collect();
    for p in store.iter().filter(|p| !present.contains(p.name.as_str())) {
        problems.push(format!("missing parameter `{}`", p.name));
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(problems.join("; ")));
    }
    for (entry, t) in loaded.manifest.params.iter().zip(&loaded.tensors) {
        store.set_value(&entry.name, t.clone())?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::vector(vec![1.0, -2.5]), ParamKind::Trainable).unwrap();
        s.add("b", Tensor::matrix(1, 2, vec![0.1, f64::MIN_POSITIVE]).unwrap(), ParamKind::Buffer).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = store();
        let bytes = encode("m", "stage", serde_json::json!({"k": 1}), &["x".into()], &[], &s).unwrap();
        let loaded = decode(&bytes, "mem").unwrap();
        let mut t = store();
        t.set_value("a", Tensor::vector(vec![0.0, 0.0])).unwrap();
        restore(&loaded, &mut t).unwrap();
        assert_eq!(t.fingerprint(""), s.fingerprint(""));
        assert_eq!(loaded.manifest.stage, "stage");
    }

    #[test]
    fn truncation_and_corruption_are_parse_errors() {
        let bytes = encode("m", "s", serde_json::Value::Null, &[], &[], &store()).unwrap();
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut], "mem"), Err(Error::Parse(_))));
        }
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(decode(&flipped, "mem"), Err(Error::Parse(_))));
    }

    #[test]
    fn name_and_shape_mismatches_are_listed() {
        let mut extra = store();
        extra.add("zzz", Tensor::scalar(1.0), ParamKind::Trainable).unwrap();
        let loaded = decode(&encode("m", "s", serde_json::Value::Null, &[], &[], &extra).unwrap(), "mem").unwrap();
        let mut target = store();
        let before = target.fingerprint("");
        let err = restore(&loaded, &mut target).unwrap_err();
        assert!(matches!(&err, Error::Checkpoint(m) if m.contains("zzz")), "{err}");
        assert_eq!(target.fingerprint(""), before);

        let mut wrong = ParamStore::new();
        wrong.add("a", Tensor::vector(vec![1.0, 2.0, 3.0]), ParamKind::Trainable).unwrap();
        let loaded = decode(&encode("m", "s", serde_json::Value::Null, &[], &[], &wrong).unwrap(), "mem").unwrap();
        let err = restore(&loaded, &mut store()).unwrap_err().to_string();
        assert!(err.contains("`a` has shape") && err.contains("missing parameter `b`"), "{err}");
    }
}
