//! Binary model files.
//!
//! Layout: 8-byte magic `LRKMODEL`, `u32` LE version, `u64` LE header length,
//! UTF-8 JSON header, then little-endian `f64` payload: `x0`, every `A_{z,t}`
//! ordered by `(t, z)`, every `B_t` ordered by `t`. Matrices are row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Alphabet, TimeVaryingIsan};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"LRKMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    hidden_dim: usize,
    horizon: usize,
    alphabet_size: usize,
    final_transition: bool,
    payload_f64s: usize,
    sha256: String,
    #[serde(default)]
    provenance: serde_json::Value,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

pub fn write_model<W: Write>(
    model: &TimeVaryingIsan,
    provenance: &serde_json::Value,
    mut w: W,
) -> Result<()> {
    let mut payload = Vec::new();
    for x in model.x0().iter() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    for step in model.transitions_raw() {
        for a in step {
            push_matrix(&mut payload, a);
        }
    }
    for b in model.emissions_raw() {
        push_matrix(&mut payload, b);
    }
    let header = Header {
        hidden_dim: model.hidden_dim(),
        horizon: model.horizon(),
        alphabet_size: model.alphabet().size(),
        final_transition: model.has_final_transition(),
        payload_f64s: payload.len() / 8,
        sha256: sha256_hex(&payload),
        provenance: provenance.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn save_model(
    model: &TimeVaryingIsan,
    provenance: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_model(model, provenance, BufWriter::new(File::create(path)?))
}

pub fn read_model<R: Read>(mut r: R) -> Result<(TimeVaryingIsan, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    if hlen > 1 << 30 {
        return Err(Error::Format("header length out of range".into()));
    }
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json)?;
    let h: Header = serde_json::from_slice(&json)?;
    let (d, t, k) = (h.hidden_dim, h.horizon, h.alphabet_size);
    let steps = if h.final_transition {
        t
    } else {
        t.saturating_sub(1)
    };
    let expected = d + steps * k * d * d + t * k * d;
    if h.payload_f64s != expected {
        return Err(Error::Format(format!(
            "payload declares {} values, shape implies {expected}",
            h.payload_f64s
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            expected * 8
        )));
    }
    let computed = sha256_hex(&payload);
    if computed != h.sha256 {
        return Err(Error::Checksum {
            stored: h.sha256,
            computed,
        });
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |rows: usize, cols: usize| -> DMatrix<f64> {
        let v: Vec<f64> = vals.by_ref().take(rows * cols).collect();
        DMatrix::from_row_slice(rows, cols, &v)
    };
    let x0 = DVector::from_column_slice(take(d, 1).as_slice());
    let transitions = (0..steps)
        .map(|_| (0..k).map(|_| take(d, d)).collect())
        .collect();
    let emissions = (0..t).map(|_| take(k, d)).collect();
    let model = TimeVaryingIsan::new(Alphabet::new(k)?, x0, transitions, emissions)?;
    Ok((model, h.provenance))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(TimeVaryingIsan, serde_json::Value)> {
    read_model(BufReader::new(File::open(path)?))
}
