//! On-disk array files and checkpoint directories.
//!
//! An array file holds `rank: u32`, then `rank` dimensions as `u32`, then the
//! values as `f32`, all little-endian. A checkpoint directory holds one array
//! file per tensor plus a `meta.txt` of `key=value` lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor};

pub const META_FILE: &str = "meta.txt";
const ARRAY_EXT: &str = "f32";

pub fn encode_tensor<T: Float>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor<T: Float>(bytes: &[u8]) -> Result<Tensor<T>> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| b.try_into().unwrap())
            .ok_or_else(|| Error::Checkpoint("array file truncated".into()))
    };
    let rank = u32::from_le_bytes(word(0)?) as usize;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|i| word(1 + i).map(|w| u32::from_le_bytes(w) as usize))
        .collect::<Result<Vec<_>>>()?;
    let numel: usize = shape.iter().product();
    let expected = 4 * (1 + rank + numel);
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "array file has {} bytes, shape {:?} needs {expected}",
            bytes.len(),
            shape
        )));
    }
    let data = bytes[4 * (1 + rank)..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_tensor<T: Float>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t)).at(path)
}

pub fn read_tensor<T: Float>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).at(path)?;
    decode_tensor(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn array_path(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.{ARRAY_EXT}"))
}

/// Write every tensor of `store` as `<dir>/<prefix><name>.f32`.
pub fn save_store<T: Float>(dir: &Path, prefix: &str, store: &ParamStore<T>) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (name, t) in store.iter() {
        write_tensor(&array_path(dir, &format!("{prefix}{name}")), t)?;
    }
    Ok(())
}

/// Overwrite every tensor of `store` from `dir`; names and shapes must match.
pub fn load_store<T: Float>(dir: &Path, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = format!("{prefix}{}", store.name(id));
        let t: Tensor<T> = read_tensor(&array_path(dir, &name))?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {:?}, expected {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        store.set(id, t);
    }
    Ok(())
}

/// Save a list of tensors under `<dir>/<prefix><index>.f32`.
pub fn save_list<T: Float>(dir: &Path, prefix: &str, tensors: &[Tensor<T>]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (i, t) in tensors.iter().enumerate() {
        write_tensor(&array_path(dir, &format!("{prefix}{i}")), t)?;
    }
    Ok(())
}

/// Load tensors saved by [`save_list`] into `tensors`, checking shapes.
pub fn load_list<T: Float>(dir: &Path, prefix: &str, tensors: &mut [Tensor<T>]) -> Result<()> {
    for (i, slot) in tensors.iter_mut().enumerate() {
        let name = format!("{prefix}{i}");
        let t: Tensor<T> = read_tensor(&array_path(dir, &name))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

pub fn write_metadata(dir: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let path = dir.join(META_FILE);
    fs::write(&path, text).at(path)
}

pub fn read_metadata(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line {l:?}")))
        })
        .collect()
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t: Tensor<f32> = Init::new(0).normal(&[2, 3, 4], 1.0);
        let back: Tensor<f32> = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(t, back);
        let s = Tensor::<f32>::scalar(1.5);
        assert_eq!(s, decode_tensor(&encode_tensor(&s)).unwrap());
    }

    #[test]
    fn truncated_arrays_error() {
        let t: Tensor<f32> = Init::new(0).normal(&[5], 1.0);
        let bytes = encode_tensor(&t);
        for cut in [0, 3, 9, bytes.len() - 1] {
            assert!(decode_tensor::<f32>(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn store_round_trip_and_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::<f32>::new();
        let mut init = Init::new(1);
        a.add("w", init.normal(&[3, 2], 1.0));
        a.add("b", init.normal(&[3], 1.0));
        save_store(dir.path(), "net.", &a).unwrap();
        let mut b = ParamStore::<f32>::new();
        b.add("w", Tensor::zeros(&[3, 2]));
        b.add("b", Tensor::zeros(&[3]));
        load_store(dir.path(), "net.", &mut b).unwrap();
        assert!(a.same_as(&b));
        let mut c = ParamStore::<f32>::new();
        c.add("w", Tensor::zeros(&[2, 3]));
        assert!(load_store(dir.path(), "net.", &mut c).is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta: BTreeMap<String, String> = [("step", "7"), ("seed", "3")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        write_metadata(dir.path(), &meta).unwrap();
        assert_eq!(read_metadata(dir.path()).unwrap(), meta);
    }
}
