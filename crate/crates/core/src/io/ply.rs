//! ASCII PLY with float coordinates and 8-bit colors.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_file, write_file};
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

pub fn write_ply(pc: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", pc.len());
    for name in ["x", "y", "z"] {
        let _ = writeln!(out, "property float {name}");
    }
    for name in ["red", "green", "blue"] {
        let _ = writeln!(out, "property uchar {name}");
    }
    out.push_str("end_header\n");
    for p in &pc.points {
        let c = p.color.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            p.pos[0] as f32, p.pos[1] as f32, p.pos[2] as f32, c[0], c[1], c[2]
        );
    }
    out
}

pub fn write_ply_file(path: &Path, pc: &PointCloud) -> Result<()> {
    write_file(path, write_ply(pc).as_bytes())
}

pub fn read_ply_file(path: &Path) -> Result<PointCloud> {
    read_ply(&read_file(path)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Float,
    UChar,
    Other,
}

/// Reads the `vertex` element of an ASCII PLY. Colors default to black when
/// absent; `uchar` colors are divided by 255, float colors taken as is.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
    let err = |offset: usize, msg: String| Error::format("PLY", offset, msg);
    let mut offset = 0;
    let mut lines = bytes.split_inclusive(|&b| b == b'\n').map(|l| {
        let start = offset;
        offset += l.len();
        (start, l)
    });
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((at, l)) => std::str::from_utf8(l)
                .map(|s| (at, s.trim().to_string()))
                .map_err(|_| err(at, format!("non-UTF-8 {what}"))),
            None => Err(err(bytes.len(), format!("unexpected end of file reading {what}"))),
        }
    };

    let (at, magic) = next_line("magic")?;
    if magic != "ply" {
        return Err(err(at, "expected 'ply' magic".into()));
    }
    let mut vertices: Option<usize> = None;
    let mut before_vertex = 0usize;
    let mut props: Vec<(String, Kind)> = Vec::new();
    let mut current = String::new();
    loop {
        let (at, line) = next_line("header")?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", f, ..] => return Err(err(at, format!("unsupported format '{f}'; only ascii is read"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| err(at, format!("invalid element count '{count}'")))?;
                current = name.to_string();
                if current == "vertex" {
                    vertices = Some(count);
                } else if vertices.is_none() {
                    before_vertex += count;
                }
            }
            ["property", "list", ..] if current != "vertex" => {}
            ["property", ty, name] => {
                if current == "vertex" {
                    let kind = match *ty {
                        "float" | "float32" | "double" | "float64" => Kind::Float,
                        "uchar" | "uint8" => Kind::UChar,
                        _ => Kind::Other,
                    };
                    props.push((name.to_string(), kind));
                }
            }
            _ => return Err(err(at, format!("unrecognized header line '{line}'"))),
        }
    }
    let n = vertices.ok_or_else(|| err(0, "no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|(p, _)| p == name);
    let xyz = ["x", "y", "z"].map(col);
    if xyz.iter().any(Option::is_none) {
        return Err(err(0, "vertex element lacks x, y or z".into()));
    }
    let rgb = ["red", "green", "blue"].map(col);
    for _ in 0..before_vertex {
        next_line("element data")?;
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let (at, line) = next_line("vertex")?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| err(at, format!("invalid number '{w}'"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(err(at, format!("{} values, expected {}", vals.len(), props.len())));
        }
        let pos = xyz.map(|i| vals[i.unwrap()]);
        let color = rgb.map(|i| match i {
            Some(i) if props[i].1 == Kind::UChar => vals[i] / 255.0,
            Some(i) => vals[i],
            None => 0.0,
        });
        points.push(Point::new(pos, color));
    }
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::uniform_cloud;

    #[test]
    fn round_trip_fidelity() {
        let pc = uniform_cloud(200, 8);
        let back = read_ply(write_ply(&pc).as_bytes()).unwrap();
        assert_eq!(back.len(), pc.len());
        for (a, b) in pc.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert!((a.pos[k] - b.pos[k]).abs() <= 1e-6);
                assert!((a.color[k] - b.color[k]).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn header_layout() {
        let pc = uniform_cloud(3, 1);
        let text = write_ply(&pc);
        assert!(text.contains("element vertex 3\n"));
        assert!(text.contains("property float x\n"));
        assert!(text.contains("property uchar blue\nend_header\n"));
    }

    #[test]
    fn foreign_layouts_and_errors() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 1\nproperty float z\nproperty float y\n\
                    property float x\nproperty float nx\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n\
                    0.3 0.2 0.1 9\n";
        let pc = read_ply(text.as_bytes()).unwrap();
        assert_eq!(pc.points[0].pos, [0.1, 0.2, 0.3]);
        assert_eq!(pc.points[0].color, [0.0; 3]);

        let err = read_ply(b"ply\nformat binary_little_endian 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");
        let err = read_ply(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").unwrap_err();
        assert!(err.to_string().contains("end of file"));
        let bad = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 q 3\n";
        let err = read_ply(bad).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 100, .. }), "{err}");
    }
}
