//! Container format for parameter collections.
//!
//! Layout: the 8-byte magic `EMPCCKPT`, a little-endian `u64` manifest length,
//! the JSON manifest, then the payload of little-endian `f64` values. Each
//! manifest entry records its name, shape and byte offset into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"EMPCCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

pub fn encode<T: Real>(params: &ParamSet<T>, meta: &Map<String, Value>) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(params.numel() * 8);
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: "f64le".into(),
        entries,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<(ParamSet<T>, Map<String, Value>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    if manifest.format_version != FORMAT_VERSION || manifest.dtype != "f64le" {
        return Err(bad("unsupported format version or dtype"));
    }
    let payload = &bytes[16 + len..];
    let mut params = ParamSet::new();
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let raw = payload
            .get(start..start + 8 * n)
            .ok_or_else(|| Error::Checkpoint(format!("payload of `{}` out of range", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        params.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
    }
    Ok((params, manifest.meta))
}

pub fn save<T: Real>(path: &Path, params: &ParamSet<T>, meta: &Map<String, Value>) -> Result<()> {
    fs::write(path, encode(params, meta)?)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(ParamSet<T>, Map<String, Value>)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            a in prop::collection::vec(-1e300f64..1e300, 1..40),
            b in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6),
        ) {
            let mut p = ParamSet::new();
            p.insert("w.alpha", Tensor::new(&[a.len()], a.clone()).unwrap());
            p.insert("b", Tensor::new(&[2, 3], b.clone()).unwrap());
            let mut meta = Map::new();
            meta.insert("step".into(), Value::from(7));
            let bytes = encode(&p, &meta).unwrap();
            let (q, m) = decode::<f64>(&bytes).unwrap();
            prop_assert_eq!(m, meta);
            for (name, t) in p.iter() {
                let u = q.get(name).unwrap();
                prop_assert_eq!(t.shape(), u.shape());
                for (x, y) in t.data().iter().zip(u.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode::<f64>(b"not a checkpoint at all").is_err());
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let mut bytes = encode(&p, &Map::new()).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(decode::<f64>(&bytes).is_err());
    }

    #[test]
    fn f32_round_trip() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(&[3], vec![0.1f32, -2.5, 3.0e-7]).unwrap());
        let (q, _) = decode::<f32>(&encode(&p, &Map::new()).unwrap()).unwrap();
        assert_eq!(p, q);
    }
}
