//! Single-file checkpoint archive.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON header
//! (config echo, step counter, RNG position, tensor directory), then the raw
//! f64 payloads in directory order. f64 bits round-trip exactly, which is
//! what makes interrupted-and-resumed runs byte-identical.

use super::config::TrainConfig;
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"GSRCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngSnapshot {
    pub fn capture(rng: &rand_chacha::ChaCha8Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    rng: RngSnapshot,
    tensors: Vec<TensorMeta>,
}

/// Deserialized archive: config echo, counters, and named tensors in file
/// order.
pub struct CheckpointData {
    pub config: TrainConfig,
    pub step: u64,
    pub rng: RngSnapshot,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

pub fn save_archive(
    path: &Path,
    config: &TrainConfig,
    step: u64,
    rng: &RngSnapshot,
    tensors: &[(String, &ArrayD<f64>)],
) -> Result<()> {
    let header = Header {
        config: config.clone(),
        step,
        rng: rng.clone(),
        tensors: tensors
            .iter()
            .map(|(name, arr)| TensorMeta {
                name: name.clone(),
                shape: arr.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("serialize header: {e}")))?;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, arr) in tensors {
        for v in arr.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<CheckpointData> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint archive",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("parse header: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in &header.tensors {
        let count: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&meta.shape), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", meta.name)))?;
        tensors.push((meta.name.clone(), arr));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(CheckpointData {
        config: header.config,
        step: header.step,
        rng: header.rng,
        tensors,
    })
}
