use std::collections::HashMap;

use super::voxel::{Voxel, VoxelGrid};
use crate::flops::OpCounter;

/// Number of per-voxel features after graph augmentation:
/// `[x, y, z, r, g, b, x', y', z', cx, cy, cz]`.
pub const PATCH_FEATURES: usize = 12;

/// Sparse weight index of a voxel inside its patch.
pub fn swi_index(m: u32, n: u32, q: u32, a: u32) -> usize {
    let a = a as usize;
    (m as usize % a) + (n as usize % a) * a + (q as usize % a) * a * a
}

/// An `a x a x a` block of voxels before graph augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPatch {
    /// Minimum corner, a multiple of the patch size on each axis.
    pub position: [u32; 3],
    /// Sorted by cell index.
    pub voxels: Vec<Voxel>,
    pub cell_indices: Vec<usize>,
}

/// A patch with graph-augmented voxel features, ready for embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub position: [u32; 3],
    pub voxels: Vec<[f64; PATCH_FEATURES]>,
    /// Distinct, ascending, each `< a^3`.
    pub cell_indices: Vec<usize>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn center(&self) -> [f64; 3] {
        let v = &self.voxels[0];
        [v[9], v[10], v[11]]
    }
}

/// Groups voxels into non-empty patches keyed by their minimum corner, in
/// lexicographic order of position.
pub fn partition(grid: &VoxelGrid, a: u32) -> Vec<RawPatch> {
    let mut slots: HashMap<[u32; 3], usize> = HashMap::new();
    let mut patches: Vec<RawPatch> = Vec::new();
    for v in &grid.voxels {
        let key = v.coord.map(|c| c / a * a);
        let slot = *slots.entry(key).or_insert_with(|| {
            patches.push(RawPatch {
                position: key,
                voxels: Vec::new(),
                cell_indices: Vec::new(),
            });
            patches.len() - 1
        });
        patches[slot].voxels.push(*v);
    }
    for p in &mut patches {
        p.voxels
            .sort_unstable_by_key(|v| swi_index(v.coord[0], v.coord[1], v.coord[2], a));
        p.cell_indices = p
            .voxels
            .iter()
            .map(|v| swi_index(v.coord[0], v.coord[1], v.coord[2], a))
            .collect();
    }
    patches.sort_unstable_by_key(|p| p.position);
    patches
}

pub fn graph_features(patch: &RawPatch) -> Patch {
    graph_features_counted(patch, &mut OpCounter::default())
}

/// Appends graph edges (offset from the patch centroid) and the centroid
/// itself to each voxel's features.
pub fn graph_features_counted(patch: &RawPatch, ops: &mut OpCounter) -> Patch {
    let l = patch.voxels.len();
    assert!(l > 0, "graph features of an empty patch");
    let mut center = [0.0; 3];
    for v in &patch.voxels {
        for k in 0..3 {
            center[k] += v.features[k];
        }
    }
    for c in &mut center {
        *c /= l as f64;
    }
    ops.graph += 3 * l as u64 + 3;
    let voxels = patch
        .voxels
        .iter()
        .map(|v| {
            let f = v.features;
            [
                f[0],
                f[1],
                f[2],
                f[3],
                f[4],
                f[5],
                f[0] - center[0],
                f[1] - center[1],
                f[2] - center[2],
                center[0],
                center[1],
                center[2],
            ]
        })
        .collect();
    ops.graph += 3 * l as u64;
    Patch {
        position: patch.position,
        voxels,
        cell_indices: patch.cell_indices.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn voxel(coord: [u32; 3], xyz: [f64; 3]) -> Voxel {
        Voxel {
            coord,
            features: [xyz[0], xyz[1], xyz[2], 0.1, 0.2, 0.3],
        }
    }

    fn grid(voxels: Vec<Voxel>) -> VoxelGrid {
        let mut voxels = voxels;
        voxels.sort_by_key(|v| v.coord);
        VoxelGrid {
            voxels,
            voxel_size: 1.0 / 224.0,
            space_size: 224,
        }
    }

    #[test]
    fn swi_examples() {
        assert_eq!(swi_index(0, 0, 0, 7), 0);
        assert_eq!(swi_index(17, 17, 0, 16), 17);
        assert_eq!(swi_index(15, 15, 15, 16), 4095);
    }

    #[test]
    fn partition_examples() {
        let p = partition(&grid(vec![voxel([17, 17, 0], [0.0; 3])]), 16);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].position, [16, 16, 0]);

        let p = partition(
            &grid(vec![voxel([0, 0, 0], [0.0; 3]), voxel([15, 15, 15], [0.0; 3])]),
            16,
        );
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].voxels.len(), 2);
        assert_eq!(p[0].cell_indices, vec![0, 4095]);

        assert!(partition(&grid(vec![]), 16).is_empty());
    }

    #[test]
    fn partition_orders_by_position() {
        let g = grid(vec![
            voxel([40, 0, 0], [0.0; 3]),
            voxel([0, 20, 0], [0.0; 3]),
            voxel([0, 0, 33], [0.0; 3]),
            voxel([1, 1, 1], [0.0; 3]),
        ]);
        let p = partition(&g, 16);
        let pos: Vec<_> = p.iter().map(|p| p.position).collect();
        assert_eq!(pos, vec![[0, 0, 0], [0, 0, 32], [0, 16, 0], [32, 0, 0]]);
        assert_eq!(p.iter().map(|p| p.voxels.len()).sum::<usize>(), g.len());
    }

    #[test]
    fn graph_single_node() {
        let raw = partition(&grid(vec![voxel([3, 4, 5], [0.1, 0.2, 0.3])]), 16);
        let p = graph_features(&raw[0]);
        assert_eq!(&p.voxels[0][6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(p.center(), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn graph_two_nodes() {
        let raw = partition(
            &grid(vec![
                voxel([0, 0, 0], [0.1, 0.2, 0.3]),
                voxel([1, 0, 0], [0.3, 0.2, 0.1]),
            ]),
            16,
        );
        let p = graph_features(&raw[0]);
        let c = p.center();
        assert!((c[0] - 0.2).abs() < 1e-15 && (c[1] - 0.2).abs() < 1e-15 && (c[2] - 0.2).abs() < 1e-15);
        let e0 = &p.voxels[0][6..9];
        let e1 = &p.voxels[1][6..9];
        for (got, want) in e0.iter().zip([-0.1, 0.0, 0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in e1.iter().zip([0.1, 0.0, -0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
        for k in 6..9 {
            assert!((e0[k - 6] + e1[k - 6]).abs() < 1e-9);
        }
        // centroid features identical across the patch
        assert_eq!(&p.voxels[0][9..], &p.voxels[1][9..]);
    }
}
