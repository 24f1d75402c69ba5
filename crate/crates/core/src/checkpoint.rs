//! Versioned binary container for named weight matrices.
//!
//! Layout: the magic bytes, then per tensor a little-endian `u32` name
//! length, the UTF-8 name, `u32` rows, `u32` cols and `rows × cols`
//! little-endian `f32` values in row-major order, repeated until the end of
//! the file.

use crate::error::{Error, Result};

pub const POSE_MAGIC: &[u8] = b"HFGPOSE1";
pub const DECODER_MAGIC: &[u8] = b"HFGDEC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: &[f64]) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            name: name.into(),
            rows,
            cols,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn encode(magic: &[u8], tensors: &[Tensor]) -> Vec<u8> {
    let mut out = magic.to_vec();
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            format: "checkpoint",
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8], magic: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        let offset = bytes.iter().zip(magic).take_while(|(a, b)| a == b).count();
        return Err(Error::Parse {
            format: "checkpoint",
            offset,
            message: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        });
    }
    r.pos = magic.len();
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")?;
        let start = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Parse {
                format: "checkpoint",
                offset: start,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rows = r.u32("row count")?;
        let cols = r.u32("column count")?;
        let count = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.fail("tensor size overflows"))?;
        let raw = r.take(count, "tensor data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor { name, rows, cols, data });
    }
    Ok(tensors)
}

/// Removes and returns the tensor called `name` with the expected shape.
pub fn take_tensor(tensors: &mut Vec<Tensor>, name: &str) -> Result<Tensor> {
    let i = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::Shape(format!("checkpoint has no tensor {name}")))?;
    Ok(tensors.remove(i))
}
