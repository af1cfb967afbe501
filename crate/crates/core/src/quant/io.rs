//! Quantized tensor file format: one JSON header line
//! `{"shape":[...],"params":{...}}` followed by the raw int8 payload.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{QuantError, QuantParams, QuantizedTensor};

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    params: QuantParams,
}

pub fn save_quantized(path: &Path, q: &QuantizedTensor) -> Result<(), QuantError> {
    let header = Header {
        shape: q.shape().to_vec(),
        params: q.params().clone(),
    };
    let mut f = File::create(path)?;
    let head = serde_json::to_string(&header).map_err(|e| QuantError::Format(e.to_string()))?;
    f.write_all(head.as_bytes())?;
    f.write_all(b"\n")?;
    let bytes: Vec<u8> = q.payload().iter().map(|&v| v as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_quantized(path: &Path) -> Result<QuantizedTensor, QuantError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| QuantError::Format(e.to_string()))?;
    let n: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)?;
    let payload: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
    QuantizedTensor::from_parts(header.shape, payload, header.params)
}
