//! Random token masking, padded-batch attention masks and scale/translate
//! augmentation.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::lift::rotate_z;

pub const DEFAULT_MASK_RATIO: f64 = 0.6;
pub const DEFAULT_AUGMENT_RATIO: f64 = 0.5;

/// Disjoint visible/masked partition of `0..P`, both sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of masked tokens for `p` tokens at `ratio`: `round(ratio * p)`,
    /// capped so that one token stays visible.
    pub fn masked_count(p: usize, ratio: f64) -> usize {
        ((ratio * p as f64).round() as usize).min(p.saturating_sub(1))
    }
}

pub fn random_mask(p: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    random_mask_with(p, ratio, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_mask_with(p: usize, ratio: f64, rng: &mut impl Rng) -> Result<MaskPlan> {
    if p == 0 {
        return Err(Error::InvalidInput("cannot mask an empty token set".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidInput(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let k = MaskPlan::masked_count(p, ratio);
    let mut is_masked = vec![false; p];
    for i in index::sample(rng, p, k) {
        is_masked[i] = true;
    }
    let (masked, visible): (Vec<usize>, Vec<usize>) = (0..p).partition(|&i| is_masked[i]);
    Ok(MaskPlan { visible, masked })
}

/// Per-row validity of a padded batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub valid: Vec<Vec<bool>>,
}

impl AttentionMask {
    pub fn batch(&self) -> usize {
        self.valid.len()
    }

    pub fn width(&self) -> usize {
        self.valid.first().map_or(0, Vec::len)
    }

    /// Position `i` may attend to `j` only if both are real tokens.
    pub fn allow(&self, b: usize, i: usize, j: usize) -> bool {
        self.valid[b][i] && self.valid[b][j]
    }

    pub fn allow_matrix(&self, b: usize) -> Vec<Vec<bool>> {
        let t = self.width();
        (0..t).map(|i| (0..t).map(|j| self.allow(b, i, j)).collect()).collect()
    }
}

pub fn build_attention_mask(lengths: &[usize], width: usize) -> Result<AttentionMask> {
    let mut valid = Vec::with_capacity(lengths.len());
    for (b, &len) in lengths.iter().enumerate() {
        if len == 0 {
            return Err(Error::InvalidInput(format!("sample {b} has no tokens")));
        }
        if len > width {
            return Err(Error::InvalidInput(format!(
                "sample {b} has {len} tokens, more than the padded width {width}"
            )));
        }
        valid.push((0..width).map(|i| i < len).collect());
    }
    Ok(AttentionMask { valid })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Scale drawn from `[r, 1/r]`, translation from `[-(1-r)/2, (1-r)/2]`.
    pub ratio: f64,
    pub scale: bool,
    pub translate: bool,
    /// Random rotation about the vertical axis, uniform in `[0, 2 pi)`.
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_AUGMENT_RATIO,
            scale: true,
            translate: true,
            rotate: true,
        }
    }
}

/// Scale then translate about the cube center, clamped to `[0, 1]`.
/// Rotation is left to [`augment_with`].
pub fn augment(pc: &PointCloud, ratio: f64, seed: u64) -> Result<PointCloud> {
    let cfg = AugmentConfig {
        ratio,
        scale: true,
        translate: true,
        rotate: false,
    };
    augment_with(pc, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Optional rotation about the vertical axis (renormalized), then scale and
/// translation.
pub fn augment_with(pc: &PointCloud, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<PointCloud> {
    let r = cfg.ratio;
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidInput(format!("augmentation ratio {r} outside (0, 1]")));
    }
    let rotated;
    let pc = if cfg.rotate {
        rotated = rotate_z(pc, rng.random_range(0.0..std::f64::consts::TAU));
        &rotated
    } else {
        pc
    };
    let mut scale = [1.0; 3];
    let mut shift = [0.0; 3];
    if cfg.scale {
        for s in &mut scale {
            *s = rng.random_range(r..=1.0 / r);
        }
    }
    if cfg.translate {
        let half = (1.0 - r) / 2.0;
        for t in &mut shift {
            *t = rng.random_range(-half..=half);
        }
    }
    Ok(apply_scale_shift(pc, scale, shift))
}

/// `0.5 + scale * (v - 0.5) + shift` per axis, clamped to the unit cube.
/// Evaluated as `v * scale + offset` so that the identity map is exact.
pub fn apply_scale_shift(pc: &PointCloud, scale: [f64; 3], shift: [f64; 3]) -> PointCloud {
    let offset = [0, 1, 2].map(|k| 0.5 * (1.0 - scale[k]) + shift[k]);
    let points = pc
        .points
        .iter()
        .map(|p| {
            let pos = [0, 1, 2].map(|k| (p.pos[k] * scale[k] + offset[k]).clamp(0.0, 1.0));
            Point::new(pos, p.color)
        })
        .collect();
    PointCloud::new(points)
}
