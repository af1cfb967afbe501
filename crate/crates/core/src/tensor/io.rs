//! Tensor file formats: a JSON-header binary for payloads and a CSV loader
//! for small fixtures.
//!
//! Binary layout: one JSON line `{"shape":[...],"dtype":"f64"}` terminated by
//! `\n`, followed by the row-major payload as little-endian f64 bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), TensorError> {
    let header = Header {
        shape: t.shape().to_vec(),
        dtype: "f64".to_string(),
    };
    let mut f = File::create(path)?;
    let head = serde_json::to_string(&header).map_err(|e| TensorError::Format(e.to_string()))?;
    f.write_all(head.as_bytes())?;
    f.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| TensorError::Format(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(TensorError::Format(format!(
            "unsupported dtype '{}'",
            header.dtype
        )));
    }
    let n: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::from_vec(header.shape, data)
}

/// Loads a rank-2 tensor from comma-separated text, one row per line.
pub fn load_tensor_csv(path: &Path) -> Result<Tensor, TensorError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = trimmed
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        let row = row.map_err(|e| {
            TensorError::Format(format!("line {}: {e}", lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(TensorError::Format(format!(
                    "line {}: ragged row ({} vs {})",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(TensorError::Format("empty csv".to_string()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Tensor::from_vec(vec![r, c], rows.into_iter().flatten().collect())
}
