//! File formats: ASCII PLY clouds, Netpbm/PFM images and a flat binary tensor
//! container used for checkpoints and token dumps.

pub mod netpbm;
pub mod ply;
pub mod tensorfile;

use std::path::Path;

use crate::error::{Error, Result};

pub use netpbm::{read_depth, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm16, write_ppm, Gray, Rgb8};
pub use ply::{read_ply, read_ply_file, write_ply, write_ply_file};
pub use tensorfile::{read_tensors, read_tensors_file, write_tensors, write_tensors_file, Tensor};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated header tokens with `#` comments, tracking byte offsets.
pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pub pos: usize,
    what: &'static str,
}

impl<'a> HeaderReader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.what, self.pos, msg)
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    pub fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::format(self.what, start, "non-UTF-8 header"))
    }

    pub fn number<T: std::str::FromStr>(&mut self, name: &str) -> Result<T> {
        self.skip_space();
        let start = self.pos;
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::format(self.what, start, format!("invalid {name} '{tok}'")))
    }

    /// Consumes the single whitespace byte that ends a binary header.
    pub fn end_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(self.err("expected whitespace after header")),
        }
    }
}
