//! Lifting an RGB image plus a dense depth map into a pseudo-3D point cloud.
//!
//! Image width maps to x, depth to y and image height to z (row 0 is the top
//! of the image and therefore the largest z). Every pixel becomes one point.

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// An RGB image with one depth value per pixel, both stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Colors in `[0, 1]`.
    pub rgb: Vec<[f64; 3]>,
    /// Arbitrary scale, larger is farther.
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, rgb: Vec<[f64; 3]>, depth: Vec<f64>) -> Result<Self> {
        let img = Self {
            width,
            height,
            rgb,
            depth,
        };
        img.check()?;
        Ok(img)
    }

    fn check(&self) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(Error::InvalidInput(format!(
                "image has no pixels ({}x{})",
                self.width, self.height
            )));
        }
        if self.rgb.len() != n || self.depth.len() != n {
            return Err(Error::Shape(format!(
                "{}x{} image needs {n} pixels, got {} colors and {} depths",
                self.width,
                self.height,
                self.rgb.len(),
                self.depth.len()
            )));
        }
        if let Some(i) = self.depth.iter().position(|d| !d.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite depth at row {}, column {}",
                i / self.width,
                i % self.width
            )));
        }
        Ok(())
    }
}

/// Lifts every pixel into the canonical cube.
pub fn lift(img: &DepthImage) -> Result<PointCloud> {
    img.check()?;
    let (w, h) = (img.width, img.height);
    let x_den = (w.saturating_sub(1)).max(1) as f64;
    let z_den = (h.saturating_sub(1)).max(1) as f64;
    let mut points = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            points.push(Point::new(
                [c as f64 / x_den, img.depth[i], (h - 1 - r) as f64 / z_den],
                img.rgb[i],
            ));
        }
    }
    // Depth gets its min-max here; x and z are already in [0, 1] unless the
    // image is a single row or column, in which case they collapse to 0.5.
    Ok(PointCloud::new(points).renormalize())
}

/// Rotates `(x, y)` about `(0.5, 0.5)` without renormalizing.
pub fn rotate_z_raw(pc: &PointCloud, angle: f64) -> PointCloud {
    let (sin, cos) = angle.sin_cos();
    let points = pc
        .points
        .iter()
        .map(|p| {
            let dx = p.pos[0] - 0.5;
            let dy = p.pos[1] - 0.5;
            Point::new(
                [0.5 + cos * dx - sin * dy, 0.5 + sin * dx + cos * dy, p.pos[2]],
                p.color,
            )
        })
        .collect();
    PointCloud::new(points)
}

/// Rotates about the vertical axis through the cube center and renormalizes
/// back into the canonical cube.
pub fn rotate_z(pc: &PointCloud, angle: f64) -> PointCloud {
    rotate_z_raw(pc, angle).renormalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grey(n: usize) -> Vec<[f64; 3]> {
        vec![[0.5; 3]; n]
    }

    #[test]
    fn single_pixel_collapses_to_center() {
        let img = DepthImage::new(1, 1, vec![[0.2, 0.4, 0.6]], vec![5.0]).unwrap();
        let pc = lift(&img).unwrap();
        assert_eq!(pc.points, vec![Point::new([0.5; 3], [0.2, 0.4, 0.6])]);
    }

    #[test]
    fn two_by_two_example() {
        let img = DepthImage::new(2, 2, grey(4), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let pc = lift(&img).unwrap();
        assert_eq!(pc.len(), 4);
        assert_eq!(pc.points[0].pos, [0.0, 0.0, 1.0]);
        assert_eq!(pc.points[3].pos, [1.0, 1.0, 0.0]);
        assert_eq!(pc.points[1].pos, [1.0, 1.0 / 3.0, 1.0]);
        assert_eq!(pc.points[2].pos, [0.0, 2.0 / 3.0, 0.0]);
    }

    #[test]
    fn rejects_bad_images() {
        assert!(DepthImage::new(0, 3, vec![], vec![]).is_err());
        assert!(DepthImage::new(1, 1, grey(1), vec![f64::NAN]).is_err());
        assert!(DepthImage::new(2, 1, grey(1), vec![1.0]).is_err());
    }

    #[test]
    fn rotation_identity_and_half_turn() {
        let pc = PointCloud::new(vec![
            Point::new([0.0, 0.5, 0.2], [0.1; 3]),
            Point::new([1.0, 0.5, 0.7], [0.9; 3]),
        ]);
        let same = rotate_z(&pc, 0.0);
        for (a, b) in same.points.iter().zip(&pc.renormalize().points) {
            for k in 0..3 {
                assert!((a.pos[k] - b.pos[k]).abs() < 1e-12);
            }
        }
        let turned = rotate_z(&pc, PI);
        assert!((turned.points[0].pos[0] - 1.0).abs() < 1e-12);
        assert!((turned.points[1].pos[0] - 0.0).abs() < 1e-12);
        assert!((turned.points[0].pos[1] - 0.5).abs() < 1e-12);
        // z is carried through untouched up to renormalization.
        assert_eq!(turned.points[0].pos[2], 0.0);
        assert_eq!(turned.points[1].pos[2], 1.0);
    }

    fn arb_image() -> impl Strategy<Value = DepthImage> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            (
                prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), w * h),
                prop::collection::vec(-100.0f64..100.0, w * h),
            )
                .prop_map(move |(rgb, depth)| DepthImage::new(w, h, rgb, depth).unwrap())
        })
    }

    proptest! {
        #[test]
        fn lift_properties(img in arb_image()) {
            let pc = lift(&img).unwrap();
            prop_assert_eq!(pc.len(), img.width * img.height);
            prop_assert!(pc.validate().is_ok());
            for i in 0..pc.len() {
                for j in 0..pc.len() {
                    if img.depth[i] < img.depth[j] {
                        prop_assert!(pc.points[i].pos[1] < pc.points[j].pos[1]);
                    }
                }
            }
        }

        #[test]
        fn rotation_is_an_isometry(
            pts in prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), 2..30),
            angle in 0.0f64..(2.0 * PI),
        ) {
            let pc = PointCloud::new(pts.into_iter().map(|p| Point::new(p, [0.0; 3])).collect());
            let rot = rotate_z_raw(&pc, angle);
            for i in 0..pc.len() {
                prop_assert_eq!(rot.points[i].pos[2], pc.points[i].pos[2]);
                for j in 0..pc.len() {
                    let d = |c: &PointCloud| {
                        let (a, b) = (c.points[i].pos, c.points[j].pos);
                        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                    };
                    prop_assert!((d(&pc) - d(&rot)).abs() < 1e-9);
                }
            }
            prop_assert!(rotate_z(&pc, angle).validate().is_ok());
        }
    }
}
