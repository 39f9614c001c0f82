//! Checkpoint layout: the 4-byte magic `RLM1`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then little-endian `f32` payloads for `S`,
//! `W`, `b` and `U`, each row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::NeuralLm;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RLM1";
pub const CHECKPOINT_VERSION: u32 = 1;
const GATE_ORDER: &str = "i,f,g,o";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    d_s: usize,
    d_h: usize,
    vocab_size: usize,
    gate_order: String,
    vocab: Vec<String>,
    counts: Vec<u64>,
}

pub fn write_model<W: Write>(m: &NeuralLm, mut w: W) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        d_s: m.embed_dim(),
        d_h: m.hidden_dim(),
        vocab_size: m.vocab_size(),
        gate_order: GATE_ORDER.to_string(),
        vocab: m.vocab.words().to_vec(),
        counts: m.vocab.counts().to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut payload = Vec::with_capacity(4 * (m.s.len() + m.w.len() + m.b.len() + m.u.len()));
    for v in m.s.iter().chain(&m.w).chain(&m.b).chain(&m.u) {
        payload.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<NeuralLm> {
    let err = |m: String| Error::Checkpoint(m);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(err("file truncated before header".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(err(format!("bad magic {:?}, expected {:?}", &bytes[..4], CHECKPOINT_MAGIC)));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(err("file truncated inside header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| err(format!("malformed header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(err(format!(
            "unsupported version {}, expected {CHECKPOINT_VERSION}",
            header.version
        )));
    }
    if header.gate_order != GATE_ORDER {
        return Err(err(format!("unsupported gate order {:?}", header.gate_order)));
    }
    let (d_s, d_h, v) = (header.d_s, header.d_h, header.vocab_size);
    if header.vocab.len() != v || header.counts.len() != v {
        return Err(err(format!(
            "header declares {v} words but lists {} words and {} counts",
            header.vocab.len(),
            header.counts.len()
        )));
    }
    if d_s == 0 || d_h == 0 {
        return Err(err("zero-sized dimensions".into()));
    }
    let sizes = [d_s * v, 4 * d_h * (d_s + d_h), 4 * d_h, d_h * v];
    let expected = 4 * sizes.iter().sum::<usize>();
    let payload = &body[hlen..];
    if payload.len() != expected {
        return Err(err(format!(
            "payload is {} bytes, header dimensions require {expected}",
            payload.len()
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f64>>();
    let s = Array2::from_shape_vec((d_s, v), take(sizes[0])).expect("sized");
    let w = Array2::from_shape_vec((4 * d_h, d_s + d_h), take(sizes[1])).expect("sized");
    let b = Array1::from(take(sizes[2]));
    let u = Array2::from_shape_vec((d_h, v), take(sizes[3])).expect("sized");

    let vocab = Vocabulary::from_entries(header.vocab.into_iter().zip(header.counts))
        .map_err(|e| err(e.to_string()))?;
    if vocab.len() != v {
        return Err(err("vocabulary in header is inconsistent with its special tokens".into()));
    }
    NeuralLm::from_parts(vocab, s, w, b, u).map_err(|e| err(e.to_string()))
}

pub fn save_model(m: &NeuralLm, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(m, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NeuralLm> {
    read_model(fs::File::open(path)?)
}
