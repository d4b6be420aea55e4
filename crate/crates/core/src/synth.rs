//! Deterministic synthetic point clouds for benchmarks and smoke training.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Point, PointCloud};

/// `n` points uniform in the unit cube with uniform random colors.
pub fn uniform_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            Point::new(
                [rng.random(), rng.random(), rng.random()],
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    PointCloud::new(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Plane,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Sphere,
        Primitive::Box,
        Primitive::Cylinder,
        Primitive::Torus,
        Primitive::Plane,
    ];

    fn sample(self, rng: &mut impl Rng) -> [f64; 3] {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        match self {
            Primitive::Sphere => {
                let theta = 2.0 * PI * u;
                let z = 2.0 * v - 1.0;
                let r = (1.0 - z * z).sqrt();
                [r * theta.cos(), r * theta.sin(), z]
            }
            Primitive::Box => {
                let face = rng.random_range(0..6);
                let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Primitive::Cylinder => {
                let theta = 2.0 * PI * u;
                [theta.cos(), theta.sin(), 2.0 * v - 1.0]
            }
            Primitive::Torus => {
                let (theta, phi) = (2.0 * PI * u, 2.0 * PI * v);
                let r = 1.0 + 0.35 * phi.cos();
                [r * theta.cos(), r * theta.sin(), 0.35 * phi.sin()]
            }
            Primitive::Plane => {
                let (x, y) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                [x, y, 0.3 * (PI * x).sin() * (PI * y).cos()]
            }
        }
    }
}

/// A randomly oriented primitive surface with a linear color gradient along
/// a random direction, renormalized into the unit cube.
pub fn primitive_cloud(kind: Primitive, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (yaw, pitch) = (rng.random_range(0.0..2.0 * PI), rng.random_range(-0.5..0.5));
    let scale = [rng.random_range(0.6..1.0), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)];
    let c0: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let c1: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let dir = {
        let d: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
        d.map(|v| v / len)
    };
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = f64::sin_cos(pitch);
    let raw: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let p = kind.sample(&mut rng);
            let p = [p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]];
            let p = [cy * p[0] - sy * p[1], sy * p[0] + cy * p[1], p[2]];
            [p[0], cp * p[1] - sp * p[2], sp * p[1] + cp * p[2]]
        })
        .collect();
    let points = raw
        .iter()
        .map(|p| {
            // projection onto dir lies in [-sqrt(3), sqrt(3)]
            let t = ((p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2]) / 3f64.sqrt() + 1.0) / 2.0;
            let t = t.clamp(0.0, 1.0);
            let color = [0, 1, 2].map(|k| c0[k] + (c1[k] - c0[k]) * t);
            Point::new(*p, color)
        })
        .collect();
    PointCloud::new(points).renormalize()
}

/// `count` primitive clouds with point counts uniform in `min_points..=max_points`.
pub fn primitive_corpus(count: usize, min_points: usize, max_points: usize, seed: u64) -> Vec<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.random_range(min_points..=max_points);
            let kind = Primitive::ALL[i % Primitive::ALL.len()];
            primitive_cloud(kind, n, rng.random())
        })
        .collect()
}
