//! Sparse Weight Indexing token embedding and positional embedding.

use rand::Rng;

use super::patch::{Patch, PATCH_FEATURES};
use crate::error::{Error, Result};
use crate::flops::OpCounter;
use crate::tensor::{gelu, Mat};

/// `a^3` shared `12 x C` weight matrices, stored stacked as one
/// `(a^3 * 12) x C` matrix; rows `12 d .. 12 d + 12` belong to cell `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    patch_size: u32,
    embed_dim: usize,
    weights: Mat,
}

impl WeightTable {
    pub fn new(patch_size: u32, embed_dim: usize, weights: Mat) -> Result<Self> {
        let cells = (patch_size as usize).pow(3);
        if weights.shape() != (cells * PATCH_FEATURES, embed_dim) {
            return Err(Error::Shape(format!(
                "weight table for a={patch_size}, C={embed_dim} must be {}x{embed_dim}, got {:?}",
                cells * PATCH_FEATURES,
                weights.shape()
            )));
        }
        Ok(Self {
            patch_size,
            embed_dim,
            weights,
        })
    }

    pub fn zeros(patch_size: u32, embed_dim: usize) -> Self {
        let cells = (patch_size as usize).pow(3);
        Self {
            patch_size,
            embed_dim,
            weights: Mat::zeros(cells * PATCH_FEATURES, embed_dim),
        }
    }

    pub fn init(patch_size: u32, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let cells = (patch_size as usize).pow(3);
        let bound = (6.0 / (PATCH_FEATURES + embed_dim) as f64).sqrt();
        Self {
            patch_size,
            embed_dim,
            weights: Mat::uniform(cells * PATCH_FEATURES, embed_dim, bound, rng),
        }
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Number of weight matrices, `a^3`.
    pub fn num_cells(&self) -> usize {
        (self.patch_size as usize).pow(3)
    }

    pub fn matrix(&self) -> &Mat {
        &self.weights
    }

    pub fn into_matrix(self) -> Mat {
        self.weights
    }

    /// Row `k` of the `12 x C` matrix for cell `d`.
    pub fn cell_row(&self, d: usize, k: usize) -> &[f64] {
        self.weights.row(d * PATCH_FEATURES + k)
    }
}

/// Mean-reduces `v' * w_d` over each patch. Voxels are accumulated in
/// ascending cell-index order, so the result is independent of input order.
pub fn embed_tokens(patches: &[Patch], w: &WeightTable) -> Result<Mat> {
    embed_tokens_counted(patches, w, &mut OpCounter::default())
}

pub fn embed_tokens_counted(patches: &[Patch], w: &WeightTable, ops: &mut OpCounter) -> Result<Mat> {
    let segments: Vec<(usize, &Patch)> = patches.iter().enumerate().collect();
    scatter_mean(&segments, patches.len(), w, ops)
}

/// Embeds several samples in one scatter pass, keyed by (sample, patch).
pub fn embed_tokens_batched(samples: &[&[Patch]], w: &WeightTable) -> Result<Vec<Mat>> {
    let mut segments = Vec::new();
    let mut offsets = Vec::with_capacity(samples.len() + 1);
    offsets.push(0);
    for patches in samples {
        let base = *offsets.last().unwrap();
        segments.extend(patches.iter().enumerate().map(|(j, p)| (base + j, p)));
        offsets.push(base + patches.len());
    }
    let all = scatter_mean(&segments, *offsets.last().unwrap(), w, &mut OpCounter::default())?;
    Ok(offsets
        .windows(2)
        .map(|r| {
            let mut m = Mat::zeros(r[1] - r[0], w.embed_dim());
            for (i, row) in (r[0]..r[1]).enumerate() {
                m.row_mut(i).copy_from_slice(all.row(row));
            }
            m
        })
        .collect())
}

fn scatter_mean(
    segments: &[(usize, &Patch)],
    num_segments: usize,
    w: &WeightTable,
    ops: &mut OpCounter,
) -> Result<Mat> {
    let c = w.embed_dim();
    let cells = w.num_cells();
    let mut out = Mat::zeros(num_segments, c);
    for &(seg, patch) in segments {
        if patch.is_empty() {
            return Err(Error::InvalidInput("cannot embed an empty patch".into()));
        }
        let row = out.row_mut(seg);
        for (v, &d) in patch.voxels.iter().zip(&patch.cell_indices) {
            if d >= cells {
                return Err(Error::InvalidInput(format!(
                    "cell index {d} out of range for {cells} weights"
                )));
            }
            for (k, &f) in v.iter().enumerate() {
                for (o, &wk) in row.iter_mut().zip(w.cell_row(d, k)) {
                    *o += f * wk;
                }
            }
        }
        let inv = 1.0 / patch.len() as f64;
        row.iter_mut().for_each(|o| *o *= inv);
        ops.swi += (2 * PATCH_FEATURES * c * patch.len() + c) as u64;
    }
    Ok(out)
}

/// A fully materialised patch: `a^3` cells in cell-index order, each either
/// empty or holding 12 features.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePatch {
    pub patch_size: u32,
    pub cells: Vec<Option<[f64; PATCH_FEATURES]>>,
}

/// Reference token for a fully occupied patch, computed the ViT/MAE way: the
/// flattened patch times the flattened weights, divided by the cell count.
pub fn dense_reference_embed(dense: &DensePatch, w: &WeightTable) -> Result<Vec<f64>> {
    let cells = w.num_cells();
    if dense.patch_size != w.patch_size() || dense.cells.len() != cells {
        return Err(Error::Shape(format!(
            "dense patch of size {} with {} cells does not match a={}",
            dense.patch_size,
            dense.cells.len(),
            w.patch_size()
        )));
    }
    let mut flat = Vec::with_capacity(cells * PATCH_FEATURES);
    for (d, cell) in dense.cells.iter().enumerate() {
        match cell {
            Some(f) => flat.extend_from_slice(f),
            None => {
                return Err(Error::InvalidInput(format!(
                    "dense reference requires every cell occupied; cell {d} is empty"
                )))
            }
        }
    }
    let row = Mat::from_vec(1, flat.len(), flat);
    let mut token = row.matmul(w.matrix());
    token.scale(1.0 / cells as f64);
    Ok(token.into_vec())
}

/// Two-layer positional MLP: `3 -> h`, GELU, `h -> C`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosEmbed {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl PosEmbed {
    pub fn zeros(hidden: usize, embed_dim: usize) -> Self {
        Self {
            w1: Mat::zeros(3, hidden),
            b1: Mat::zeros(1, hidden),
            w2: Mat::zeros(hidden, embed_dim),
            b2: Mat::zeros(1, embed_dim),
        }
    }

    pub fn init(hidden: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: Mat::xavier(3, hidden, rng),
            b1: Mat::zeros(1, hidden),
            w2: Mat::xavier(hidden, embed_dim, rng),
            b2: Mat::zeros(1, embed_dim),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn forward(&self, positions: &[[u32; 3]], space_size: u32) -> Mat {
        self.forward_counted(positions, space_size, &mut OpCounter::default())
    }

    pub fn forward_counted(&self, positions: &[[u32; 3]], space_size: u32, ops: &mut OpCounter) -> Mat {
        let input = position_input(positions, space_size);
        let mut hidden = input.matmul(&self.w1);
        add_bias(&mut hidden, &self.b1);
        hidden.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let mut out = hidden.matmul(&self.w2);
        add_bias(&mut out, &self.b2);
        let h = self.hidden() as u64;
        ops.posembed += positions.len() as u64 * (2 * 3 * h + 2 * h * self.embed_dim() as u64);
        out
    }
}

/// Min corners scaled by `1 / S`, one row per position.
pub fn position_input(positions: &[[u32; 3]], space_size: u32) -> Mat {
    let inv = 1.0 / f64::from(space_size);
    let data = positions
        .iter()
        .flat_map(|p| p.map(|c| f64::from(c) * inv))
        .collect();
    Mat::from_vec(positions.len(), 3, data)
}

fn add_bias(m: &mut Mat, bias: &Mat) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias.row(0)) {
            *v += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn patch(cells: Vec<usize>, feats: Vec<[f64; 12]>) -> Patch {
        Patch {
            position: [0, 0, 0],
            voxels: feats,
            cell_indices: cells,
        }
    }

    #[test]
    fn zero_weights_give_zero_tokens() {
        let w = WeightTable::zeros(2, 4);
        let t = embed_tokens(&[patch(vec![0, 3], vec![[1.0; 12], [2.0; 12]])], &w).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_voxel_hand_value() {
        let w = WeightTable::new(1, 1, Mat::from_vec(12, 1, vec![0.5; 12])).unwrap();
        let t = embed_tokens(&[patch(vec![0], vec![[1.0; 12]])], &w).unwrap();
        assert_eq!(t.data(), &[6.0]);
    }

    #[test]
    fn duplicate_patches_embed_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = WeightTable::init(2, 5, &mut rng);
        let p = patch(vec![1, 6], vec![[0.3; 12], [0.7; 12]]);
        let t = embed_tokens(&[p.clone(), p], &w).unwrap();
        assert_eq!(t.row(0), t.row(1));
    }

    #[test]
    fn out_of_range_cell_is_an_error() {
        let w = WeightTable::zeros(2, 3);
        assert!(embed_tokens(&[patch(vec![8], vec![[0.0; 12]])], &w).is_err());
    }

    #[test]
    fn batched_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = WeightTable::init(2, 6, &mut rng);
        let a = vec![
            patch(vec![0, 5], vec![[0.1; 12], [0.9; 12]]),
            patch(vec![7], vec![[0.4; 12]]),
        ];
        let b = vec![patch(vec![2, 3, 4], vec![[0.2; 12], [0.5; 12], [0.6; 12]])];
        let batched = embed_tokens_batched(&[&a, &b], &w).unwrap();
        assert!(batched[0].max_abs_diff(&embed_tokens(&a, &w).unwrap()) <= 1e-9);
        assert!(batched[1].max_abs_diff(&embed_tokens(&b, &w).unwrap()) <= 1e-9);
    }

    #[test]
    fn dense_reference_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = WeightTable::init(1, 3, &mut rng);
        let v = [0.25; 12];
        let got = dense_reference_embed(&DensePatch { patch_size: 1, cells: vec![Some(v)] }, &w).unwrap();
        for c in 0..3 {
            let want: f64 = (0..12).map(|k| v[k] * w.cell_row(0, k)[c]).sum();
            assert!((got[c] - want).abs() < 1e-15);
        }
        let zero = DensePatch { patch_size: 1, cells: vec![Some([0.0; 12])] };
        assert_eq!(dense_reference_embed(&zero, &w).unwrap(), vec![0.0; 3]);

        let w2 = WeightTable::init(2, 3, &mut rng);
        let mut holey = DensePatch { patch_size: 2, cells: vec![Some([1.0; 12]); 8] };
        holey.cells[5] = None;
        assert!(dense_reference_embed(&holey, &w2).is_err());
    }

    #[test]
    fn positional_embedding_cases() {
        let z = PosEmbed::zeros(16, 8);
        assert!(z.forward(&[[16, 32, 0]], 224).data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PosEmbed::init(16, 8, &mut rng);
        let e = p.forward(&[[16, 32, 0], [16, 32, 0]], 224);
        assert_eq!(e.row(0), e.row(1));

        let sum = PosEmbed {
            w1: Mat::from_vec(3, 1, vec![1.0; 3]),
            b1: Mat::zeros(1, 1),
            w2: Mat::from_vec(1, 1, vec![1.0]),
            b2: Mat::zeros(1, 1),
        };
        assert_eq!(sum.forward(&[[0, 0, 0]], 224).data(), &[0.0]);
    }
}
