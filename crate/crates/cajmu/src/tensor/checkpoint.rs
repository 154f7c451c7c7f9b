//! Parameter checkpoint container: a JSON manifest (paths, shapes, format
//! version) followed by raw little-endian 64-bit floats in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::data::{ParamSet, TensorData};

const MAGIC: &[u8; 4] = b"CAJC";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u16,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let manifest = Manifest {
        format_version: VERSION,
        entries: params
            .iter()
            .map(|(p, t)| ManifestEntry {
                path: p.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, t) in params.iter() {
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated before magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut manifest_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut manifest_bytes)
        .map_err(|_| Error::Format("checkpoint truncated inside manifest".to_string()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != VERSION {
        return Err(Error::Format(format!(
            "manifest version {} does not match container {VERSION}",
            manifest.format_version
        )));
    }
    let mut params = ParamSet::new();
    for entry in manifest.entries {
        let n: usize = entry.shape.iter().product();
        let mut values = vec![0.0; n];
        for v in values.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format("checkpoint truncated inside values".to_string()))?;
            *v = f64::from_le_bytes(b);
        }
        params.insert(entry.path, TensorData::new(entry.shape, values)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".to_string()));
    }
    Ok(params)
}
