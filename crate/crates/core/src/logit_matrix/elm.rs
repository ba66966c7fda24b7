//! `.elm` files. See `docs/elm-format.md` for the byte layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ColumnSelector, LogitMatrix};
use crate::error::{Error, Result};
use crate::model::{Alphabet, Sequence, Token};

pub const ELM_MAGIC: &[u8; 16] = b"LOGITRANK-ELM\0\0\0";
pub const ELM_VERSION: u32 = 1;

const CENTERING: &str = "full-alphabet";
const KL_CONVENTION: &str = "renormalize-over-stored-columns";
const DTYPE: &str = "float64-le";

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    rows: usize,
    cols: usize,
    alphabet_size: usize,
    histories: Vec<Sequence>,
    futures: Vec<Sequence>,
    columns: Vec<(usize, Token)>,
    selector: ColumnSelector,
    centering: String,
    kl_convention: String,
    dtype: String,
    model_id: String,
    duplicate_histories: bool,
    duplicate_futures: bool,
    sha256: String,
    #[serde(default)]
    extra: serde_json::Value,
}

pub fn write<W: Write>(m: &LogitMatrix, mut w: W) -> Result<()> {
    let mut payload = Vec::with_capacity(m.nrows() * m.ncols() * 8);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            payload.extend_from_slice(&m.values[(i, j)].to_le_bytes());
        }
    }
    let meta = Metadata {
        rows: m.nrows(),
        cols: m.ncols(),
        alphabet_size: m.alphabet.size(),
        histories: m.histories.clone(),
        futures: m.futures.clone(),
        columns: m.columns.clone(),
        selector: m.selector,
        centering: CENTERING.into(),
        kl_convention: KL_CONVENTION.into(),
        dtype: DTYPE.into(),
        model_id: m.model_id.clone(),
        duplicate_histories: m.duplicate_histories(),
        duplicate_futures: m.duplicate_futures(),
        sha256: crate::model::sha256_hex(&payload),
        extra: m.extra.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(ELM_MAGIC)?;
    w.write_all(&ELM_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn save(m: &LogitMatrix, path: impl AsRef<Path>) -> Result<()> {
    write(m, BufWriter::new(File::create(path)?))
}

pub fn read<R: Read>(mut r: R) -> Result<LogitMatrix> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for an .elm header".into()))?;
    if &magic != ELM_MAGIC {
        return Err(Error::Format("not an .elm file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != ELM_VERSION {
        return Err(Error::Version {
            found: version,
            expected: ELM_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > 1 << 32 {
        return Err(Error::Format("metadata length out of range".into()));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let meta: Metadata = serde_json::from_slice(&json)?;
    if meta.centering != CENTERING {
        return Err(Error::Format(format!(
            "unsupported centering {:?}",
            meta.centering
        )));
    }
    if meta.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {:?}", meta.dtype)));
    }
    if meta.rows != meta.histories.len() || meta.cols != meta.columns.len() {
        return Err(Error::Format(format!(
            "declared shape ({}, {}) disagrees with {} histories and {} columns",
            meta.rows,
            meta.cols,
            meta.histories.len(),
            meta.columns.len()
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = meta
        .rows
        .checked_mul(meta.cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, shape implies {expected}",
            payload.len()
        )));
    }
    let computed = crate::model::sha256_hex(&payload);
    if computed != meta.sha256 {
        return Err(Error::Checksum {
            stored: meta.sha256,
            computed,
        });
    }
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let values = DMatrix::from_row_slice(meta.rows, meta.cols, &vals);
    LogitMatrix::from_parts(
        Alphabet::new(meta.alphabet_size)?,
        meta.histories,
        meta.futures,
        meta.columns,
        values,
        meta.selector,
        meta.model_id,
        meta.extra,
    )
}

pub fn load(path: impl AsRef<Path>) -> Result<LogitMatrix> {
    read(BufReader::new(File::open(path)?))
}
