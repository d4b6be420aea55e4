//! Binary PPM (P6), PGM (P5, 8 or 16 bit) and grayscale PFM ("Pf").

use std::path::Path;

use super::{read_file, HeaderReader};
use crate::error::{Error, Result};

/// An RGB image with colors in `[0, 1]`, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

/// A single-channel image, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

fn dims(h: &mut HeaderReader) -> Result<(usize, usize)> {
    let w: usize = h.number("width")?;
    let hh: usize = h.number("height")?;
    if w == 0 || hh == 0 {
        return Err(h.err(format!("empty image {w}x{hh}")));
    }
    Ok((w, hh))
}

fn body<'a>(bytes: &'a [u8], start: usize, need: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < start + need {
        return Err(Error::format(
            what,
            bytes.len(),
            format!("pixel data truncated: need {need} bytes after offset {start}"),
        ));
    }
    Ok(&bytes[start..start + need])
}

pub fn read_ppm(bytes: &[u8]) -> Result<Rgb8> {
    let mut h = HeaderReader::new(bytes, "PPM");
    if h.token()? != "P6" {
        return Err(Error::format("PPM", 0, "expected magic 'P6'"));
    }
    let (width, height) = dims(&mut h)?;
    let max: u32 = h.number("maxval")?;
    if max == 0 || max > 255 {
        return Err(h.err(format!("unsupported maxval {max}; only 8-bit PPM is accepted")));
    }
    let start = h.end_header()?;
    let data = body(bytes, start, width * height * 3, "PPM")?;
    let m = f64::from(max);
    let pixels = data
        .chunks_exact(3)
        .map(|c| [f64::from(c[0]) / m, f64::from(c[1]) / m, f64::from(c[2]) / m])
        .collect();
    Ok(Rgb8 { width, height, pixels })
}

pub fn read_pgm(bytes: &[u8]) -> Result<Gray> {
    let mut h = HeaderReader::new(bytes, "PGM");
    if h.token()? != "P5" {
        return Err(Error::format("PGM", 0, "expected magic 'P5'"));
    }
    let (width, height) = dims(&mut h)?;
    let max: u32 = h.number("maxval")?;
    if max == 0 || max > 65535 {
        return Err(h.err(format!("invalid maxval {max}")));
    }
    let start = h.end_header()?;
    let n = width * height;
    let values = if max > 255 {
        body(bytes, start, 2 * n, "PGM")?
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    } else {
        body(bytes, start, n, "PGM")?.iter().map(|&b| f64::from(b)).collect()
    };
    Ok(Gray { width, height, values })
}

pub fn read_pfm(bytes: &[u8]) -> Result<Gray> {
    let mut h = HeaderReader::new(bytes, "PFM");
    match h.token()? {
        "Pf" => {}
        "PF" => return Err(Error::format("PFM", 0, "color PFM is not supported; expected 'Pf'")),
        _ => return Err(Error::format("PFM", 0, "expected magic 'Pf'")),
    }
    let (width, height) = dims(&mut h)?;
    let scale: f64 = h.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(h.err("scale must be finite and non-zero"));
    }
    let start = h.end_header()?;
    let data = body(bytes, start, 4 * width * height, "PFM")?;
    let little = scale < 0.0;
    let mut values = vec![0.0; width * height];
    // stored bottom row first
    for (i, c) in data.chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (r, col) = (i / width, i % width);
        values[(height - 1 - r) * width + col] = f64::from(v);
    }
    Ok(Gray { width, height, values })
}

/// Reads a depth map from a `.pfm` or 16-bit `.pgm` file, chosen by magic.
pub fn read_depth(path: &Path) -> Result<Gray> {
    let bytes = read_file(path)?;
    match bytes.get(..2) {
        Some(b"Pf") | Some(b"PF") => read_pfm(&bytes),
        Some(b"P5") => read_pgm(&bytes),
        _ => Err(Error::format(
            format!("depth map {}", path.display()),
            0,
            "expected PFM ('Pf') or PGM ('P5') magic",
        )),
    }
}

pub fn write_ppm(img: &Rgb8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        out.extend(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

pub fn write_pgm16(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for &v in &img.values {
        out.extend((v.clamp(0.0, 65535.0).round() as u16).to_be_bytes());
    }
    out
}

/// Little-endian grayscale PFM.
pub fn write_pfm(img: &Gray) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for r in (0..img.height).rev() {
        for c in 0..img.width {
            out.extend((img.values[r * img.width + c] as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let img = Rgb8 {
            width: 2,
            height: 1,
            pixels: vec![[1.0, 0.0, 0.2], [0.0, 1.0, 1.0]],
        };
        let back = read_ppm(&write_ppm(&img)).unwrap();
        assert_eq!((back.width, back.height), (2, 1));
        assert_eq!(back.pixels[0][2], 51.0 / 255.0);
        assert_eq!(back.pixels[1], [0.0, 1.0, 1.0]);
    }

    #[test]
    fn ppm_comments_and_errors() {
        let mut bytes = b"P6 # c\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        assert_eq!(read_ppm(&bytes).unwrap().pixels, vec![[1.0, 0.0, 0.0]]);

        let err = read_ppm(b"P6\n1 x\n255\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 5, .. }), "{err}");
        let err = read_ppm(b"P3\n1 1\n255\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        let err = read_ppm(b"P6\n2 2\n255\n\x00\x00").unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn pfm_and_pgm_round_trip() {
        let img = Gray {
            width: 2,
            height: 2,
            values: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(read_pfm(&write_pfm(&img)).unwrap(), img);
        assert_eq!(read_pgm(&write_pgm16(&img)).unwrap(), img);

        // big-endian PFM with a positive scale
        let mut be = b"Pf\n1 2\n1.0\n".to_vec();
        be.extend(5.0f32.to_be_bytes());
        be.extend(7.0f32.to_be_bytes());
        assert_eq!(read_pfm(&be).unwrap().values, vec![7.0, 5.0]);
    }
}
