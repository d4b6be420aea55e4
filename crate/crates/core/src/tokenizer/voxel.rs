use std::collections::HashMap;

use super::TokenizerConfig;
use crate::cloud::PointCloud;
use crate::flops::OpCounter;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voxel {
    /// Discrete `(m, n, q)`.
    pub coord: [u32; 3],
    /// `[x, y, z, r, g, b]` of the representative point.
    pub features: [f64; 6],
}

/// Sparse voxel set, sorted lexicographically by discrete coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub voxels: Vec<Voxel>,
    pub voxel_size: f64,
    pub space_size: u32,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// `floor(v / s)` clamped to `[0, S - 1]`.
pub fn discretize(v: f64, voxel_size: f64, space_size: u32) -> u32 {
    let idx = (v / voxel_size).floor();
    if idx.is_nan() || idx < 0.0 {
        0
    } else {
        (idx as u64).min(u64::from(space_size - 1)) as u32
    }
}

pub fn voxelize(pc: &PointCloud, cfg: &TokenizerConfig) -> VoxelGrid {
    voxelize_counted(pc, cfg, &mut OpCounter::default())
}

/// Keeps one point per occupied voxel: the one with the largest feature sum,
/// ties going to the smallest point index.
pub fn voxelize_counted(pc: &PointCloud, cfg: &TokenizerConfig, ops: &mut OpCounter) -> VoxelGrid {
    let s = cfg.voxel_size;
    let size = cfg.space_size;
    let mut best: HashMap<[u32; 3], (usize, f64)> = HashMap::with_capacity(pc.len());
    for (i, p) in pc.points.iter().enumerate() {
        let coord = p.pos.map(|v| discretize(v, s, size));
        // divide + floor per axis
        ops.voxelize += 6;
        let sum = p.feature_sum();
        best.entry(coord)
            .and_modify(|(j, best_sum)| {
                if sum > *best_sum {
                    *j = i;
                    *best_sum = sum;
                }
            })
            .or_insert((i, sum));
    }
    let mut voxels: Vec<Voxel> = best
        .into_iter()
        .map(|(coord, (i, _))| Voxel {
            coord,
            features: pc.points[i].features(),
        })
        .collect();
    voxels.sort_unstable_by_key(|v| v.coord);
    VoxelGrid {
        voxels,
        voxel_size: s,
        space_size: size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use proptest::prelude::*;

    fn cfg() -> TokenizerConfig {
        TokenizerConfig::default()
    }

    #[test]
    fn origin_and_half() {
        assert_eq!(discretize(0.0, 1.0 / 224.0, 224), 0);
        assert_eq!(discretize(0.5, 1.0 / 224.0, 224), 112);
        assert_eq!(discretize(1.0, 1.0 / 224.0, 224), 223);
    }

    #[test]
    fn representative_is_largest_feature_sum() {
        let pc = PointCloud::new(vec![
            Point::new([0.1, 0.1, 0.1], [0.2, 0.2, 0.2]),  // 0.9
            Point::new([0.1, 0.1, 0.1], [0.6, 0.6, 0.6]),  // 2.1
            Point::new([0.1, 0.1, 0.1], [0.4, 0.4, 0.4]),  // 1.5
        ]);
        let grid = voxelize(&pc, &cfg());
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.voxels[0].features, pc.points[1].features());
    }

    #[test]
    fn ties_go_to_first_point() {
        let pc = PointCloud::new(vec![
            Point::new([0.1, 0.1, 0.1], [0.2, 0.4, 0.6]),
            Point::new([0.1, 0.1, 0.1], [0.6, 0.4, 0.2]),
        ]);
        let grid = voxelize(&pc, &cfg());
        assert_eq!(grid.voxels[0].features, pc.points[0].features());
    }

    proptest! {
        #[test]
        fn scaled_cloud_and_voxel_size_agree(
            pts in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..50),
            lambda in 0.1f64..10.0,
        ) {
            let s = 1.0 / 224.0;
            for p in &pts {
                for &v in p {
                    prop_assert_eq!(
                        discretize(lambda * v, lambda * s, 1 << 20),
                        discretize(v, s, 1 << 20)
                    );
                }
            }
        }

        #[test]
        fn grid_invariants(pts in prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), 1..200)) {
            let pc = PointCloud::new(pts.into_iter().map(|p| Point::new(p, [0.3; 3])).collect());
            let c = TokenizerConfig { voxel_size: 0.125, space_size: 8, ..cfg() };
            let grid = voxelize(&pc, &c);
            prop_assert!(grid.len() <= pc.len());
            for w in grid.voxels.windows(2) {
                prop_assert!(w[0].coord < w[1].coord);
            }
            for v in &grid.voxels {
                let expect = [0, 1, 2].map(|k| discretize(v.features[k], 0.125, 8));
                prop_assert_eq!(v.coord, expect);
            }
        }
    }
}
