//! Voxelize -> Partition -> Sparse Weight Indexing tokenizer, plus the
//! FPS -> KNN -> PointNet baseline.

mod embed;
pub mod fkp;
mod patch;
mod voxel;

pub use embed::{
    dense_reference_embed, embed_tokens, embed_tokens_batched, embed_tokens_counted,
    position_input, DensePatch, PosEmbed, WeightTable,
};
pub use patch::{
    graph_features, graph_features_counted, partition, swi_index, Patch, RawPatch, PATCH_FEATURES,
};
pub use voxel::{discretize, voxelize, voxelize_counted, Voxel, VoxelGrid};

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::flops::OpCounter;
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Continuous voxel edge length `s`.
    pub voxel_size: f64,
    /// Discrete cells per axis `S`.
    pub space_size: u32,
    /// Patch edge length `a` in voxels.
    pub patch_size: u32,
    /// Token width `C`.
    pub embed_dim: usize,
    /// Hidden width of the positional MLP.
    pub posembed_hidden: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            voxel_size: 1.0 / 224.0,
            space_size: 224,
            patch_size: 16,
            embed_dim: 384,
            posembed_hidden: 128,
        }
    }
}

impl TokenizerConfig {
    /// Small grid for CPU experiments: 32^3 voxels, 4^3 patches, C = 32.
    pub fn desk() -> Self {
        Self {
            voxel_size: 1.0 / 32.0,
            space_size: 32,
            patch_size: 4,
            embed_dim: 32,
            posembed_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.space_size == 0 || self.patch_size == 0 {
            return bad("space and patch size must be positive".into());
        }
        if self.space_size % self.patch_size != 0 {
            return bad(format!(
                "space size {} is not divisible by patch size {}",
                self.space_size, self.patch_size
            ));
        }
        if !(self.voxel_size > 0.0) || (self.voxel_size * f64::from(self.space_size) - 1.0).abs() > 1e-9 {
            return bad(format!(
                "voxel size {} times space size {} must be 1",
                self.voxel_size, self.space_size
            ));
        }
        if self.embed_dim == 0 || self.posembed_hidden == 0 {
            return bad("embedding widths must be positive".into());
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        (self.patch_size as usize).pow(3)
    }

    /// Upper bound on the number of patches, `(S / a)^3`.
    pub fn max_patches(&self) -> usize {
        ((self.space_size / self.patch_size) as usize).pow(3)
    }
}

/// Embedded tokens of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    /// `P x C`
    pub tokens: Mat,
    /// Patch minimum corners (or discretized centers for the baseline).
    pub positions: Vec<[u32; 3]>,
    /// `P x C`
    pub pos_embeddings: Mat,
    pub valid: Vec<bool>,
    /// Voxels (or points) per token.
    pub patch_sizes: Vec<usize>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Voxelize, partition and graph-augment a cloud. The result does not
/// depend on learned weights.
pub fn patchify(pc: &PointCloud, cfg: &TokenizerConfig) -> Result<(VoxelGrid, Vec<Patch>)> {
    patchify_counted(pc, cfg, &mut OpCounter::default())
}

pub fn patchify_counted(
    pc: &PointCloud,
    cfg: &TokenizerConfig,
    ops: &mut OpCounter,
) -> Result<(VoxelGrid, Vec<Patch>)> {
    cfg.validate()?;
    let report = pc.validate();
    if !report.is_ok() {
        return Err(Error::InvalidInput(format!("point cloud: {report}")));
    }
    let grid = voxelize_counted(pc, cfg, ops);
    let patches = partition(&grid, cfg.patch_size)
        .iter()
        .map(|raw| graph_features_counted(raw, ops))
        .collect();
    Ok((grid, patches))
}

/// Full V-P-S tokenization of one cloud.
pub fn tokenize(
    pc: &PointCloud,
    cfg: &TokenizerConfig,
    weights: &WeightTable,
    pos: &PosEmbed,
) -> Result<TokenSet> {
    tokenize_counted(pc, cfg, weights, pos, &mut OpCounter::default())
}

pub fn tokenize_counted(
    pc: &PointCloud,
    cfg: &TokenizerConfig,
    weights: &WeightTable,
    pos: &PosEmbed,
    ops: &mut OpCounter,
) -> Result<TokenSet> {
    if weights.patch_size() != cfg.patch_size || weights.embed_dim() != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "weight table (a={}, C={}) does not match tokenizer (a={}, C={})",
            weights.patch_size(),
            weights.embed_dim(),
            cfg.patch_size,
            cfg.embed_dim
        )));
    }
    if pos.embed_dim() != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "positional embedding width {} does not match C={}",
            pos.embed_dim(),
            cfg.embed_dim
        )));
    }
    let (_, patches) = patchify_counted(pc, cfg, ops)?;
    Ok(embed_patches(&patches, cfg, weights, pos, ops)?)
}

pub fn embed_patches(
    patches: &[Patch],
    cfg: &TokenizerConfig,
    weights: &WeightTable,
    pos: &PosEmbed,
    ops: &mut OpCounter,
) -> Result<TokenSet> {
    let tokens = embed_tokens_counted(patches, weights, ops)?;
    let positions: Vec<[u32; 3]> = patches.iter().map(|p| p.position).collect();
    let pos_embeddings = pos.forward_counted(&positions, cfg.space_size, ops);
    Ok(TokenSet {
        tokens,
        pos_embeddings,
        valid: vec![true; positions.len()],
        patch_sizes: patches.iter().map(Patch::len).collect(),
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_validation() {
        assert!(TokenizerConfig::default().validate().is_ok());
        assert!(TokenizerConfig::desk().validate().is_ok());
        let c = TokenizerConfig { patch_size: 15, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TokenizerConfig { voxel_size: 0.01, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_voxel_cloud_collapses() {
        let cfg = TokenizerConfig::desk();
        let pc = PointCloud::new(
            (0..20)
                .map(|i| Point::new([0.501, 0.502, 0.503], [0.01 * i as f64, 0.2, 0.3]))
                .collect(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = WeightTable::init(cfg.patch_size, cfg.embed_dim, &mut rng);
        let pos = PosEmbed::init(cfg.posembed_hidden, cfg.embed_dim, &mut rng);
        let (grid, _) = patchify(&pc, &cfg).unwrap();
        assert_eq!(grid.len(), 1);
        let ts = tokenize(&pc, &cfg, &w, &pos).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.patch_sizes, vec![1]);
        assert_eq!(ts.positions, vec![[16, 16, 16]]);
        assert!(ts.tokens.is_finite());
    }

    #[test]
    fn invalid_cloud_is_rejected() {
        let cfg = TokenizerConfig::desk();
        let pc = PointCloud::new(vec![Point::new([1.5, 0.0, 0.0], [0.0; 3])]);
        assert!(patchify(&pc, &cfg).is_err());
    }
}
