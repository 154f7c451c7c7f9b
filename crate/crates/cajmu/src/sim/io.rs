//! CSEQ sequence file format: magic "CSEQ", version u16, JSON header
//! (config, counts, dtype), frames as raw little-endian f32, then boxes as
//! f64. Frames are stored in 32-bit and promoted to 64-bit on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorData;
use crate::tracker::BBox;

use super::generate::{SequenceConfig, SequenceRecord};

const MAGIC: &[u8; 4] = b"CSEQ";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: SequenceConfig,
    frame_count: usize,
    frame_shape: Vec<usize>,
    dtype: String,
}

pub fn save_sequence(record: &SequenceRecord, path: &Path) -> Result<()> {
    let frame_shape = record
        .frames
        .first()
        .map(|f| f.shape.clone())
        .unwrap_or_else(|| {
            vec![
                3,
                record.config.frame_size.0,
                record.config.frame_size.1,
            ]
        });
    let header = Header {
        config: record.config.clone(),
        frame_count: record.frames.len(),
        frame_shape,
        dtype: "f32".to_string(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for frame in &record.frames {
        for &v in &frame.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    for b in &record.gt {
        for v in [b.cx, b.cy, b.w, b.h] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_sequence(path: &Path) -> Result<SequenceRecord> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("sequence file truncated before magic".to_string()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad sequence magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported sequence version {version}"
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("sequence file truncated inside header".to_string()))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unknown dtype {}", header.dtype)));
    }
    let frame_len: usize = header.frame_shape.iter().product();
    let mut frames = Vec::with_capacity(header.frame_count);
    for _ in 0..header.frame_count {
        let mut values = vec![0.0f64; frame_len];
        for v in values.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format("sequence file truncated inside frames".to_string()))?;
            *v = f32::from_le_bytes(b) as f64;
        }
        frames.push(TensorData::new(header.frame_shape.clone(), values)?);
    }
    let mut gt = Vec::with_capacity(header.frame_count);
    for _ in 0..header.frame_count {
        let mut vals = [0.0f64; 4];
        for v in vals.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::Format("sequence file truncated inside boxes".to_string()))?;
            *v = f64::from_le_bytes(b);
        }
        gt.push(BBox::new(vals[0], vals[1], vals[2], vals[3])?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after sequence".to_string()));
    }
    Ok(SequenceRecord {
        frames,
        gt,
        config: header.config,
    })
}
