//! Named f64 tensors in a little-endian binary container:
//! `"P3PC"`, version `u32`, count `u64`, then per tensor the name length
//! (`u64`), UTF-8 name, rank (`u64`), dims (`u64` each) and raw `f64` data.

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 4] = b"P3PC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Self {
            name: name.into(),
            dims,
            data,
        })
    }

    pub fn from_mat(name: impl Into<String>, m: &Mat) -> Self {
        Self {
            name: name.into(),
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        match self.dims.as_slice() {
            &[r, c] => Ok(Mat::from_vec(r, c, self.data.clone())),
            d => Err(Error::Shape(format!("tensor '{}' has rank {}, expected 2", self.name, d.len()))),
        }
    }
}

pub fn write_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend((t.name.len() as u64).to_le_bytes());
        out.extend(t.name.as_bytes());
        out.extend((t.dims.len() as u64).to_le_bytes());
        for &d in &t.dims {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn write_tensors_file(path: &Path, tensors: &[Tensor]) -> Result<()> {
    write_file(path, &write_tensors(tensors))
}

pub fn read_tensors_file(path: &Path) -> Result<Vec<Tensor>> {
    read_tensors(&read_file(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("tensor file", self.pos, format!("truncated while reading {what}")));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::format("tensor file", at, format!("{what} {v} too large")))
    }
}

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format("tensor file", 0, "bad magic, expected 'P3PC'"));
    }
    let version = u32::from_le_bytes(c.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format("tensor file", 4, format!("unsupported version {version}")));
    }
    let count = c.u64("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u64("name length")?;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::format("tensor file", at, "name is not UTF-8"))?
            .to_string();
        let rank = c.u64("rank")?;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(c.u64("dimension")?);
        }
        let at = c.pos;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format("tensor file", at, "tensor size overflows"))?;
        let data = c
            .take(n, "tensor data")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(Tensor { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::format("tensor file", c.pos, "trailing bytes after last tensor"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let ts = vec![
            Tensor::new("w", vec![2, 3], (0..6).map(f64::from).collect()).unwrap(),
            Tensor::new("sizes", vec![4], vec![1.0, 2.0, 3.0, -0.5]).unwrap(),
        ];
        let bytes = write_tensors(&ts);
        assert_eq!(&bytes[..4], b"P3PC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + (8 + 1 + 8 + 16 + 48) + (8 + 5 + 8 + 8 + 32));
        assert_eq!(read_tensors(&bytes).unwrap(), ts);
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(read_tensors(b"NOPE").unwrap_err(), Error::Format { offset: 0, .. }));
        let bytes = write_tensors(&[Tensor::new("a", vec![1], vec![1.0]).unwrap()]);
        let err = read_tensors(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 41, .. }), "{err}");
        assert!(Tensor::new("a", vec![2], vec![1.0]).is_err());
    }
}
