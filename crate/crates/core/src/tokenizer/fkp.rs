//! Baseline tokenizer: farthest point sampling, k-nearest-neighbour grouping
//! and a mini-PointNet per group.

use rand::Rng;

use super::voxel::discretize;
use super::TokenSet;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::flops::OpCounter;
use crate::tensor::Mat;

/// How many FPS centers to draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CenterRule {
    Fixed(usize),
    /// `G = max(1, N / ratio)`.
    PerPoints(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FkpConfig {
    pub centers: CenterRule,
    pub neighbors: usize,
    pub embed_dim: usize,
    /// Shared per-point MLP, first entry is the input width (3).
    pub point_dims: Vec<usize>,
    /// Second stage; the first entry must be twice the last point-stage
    /// width and the last entry is the token width.
    pub global_dims: Vec<usize>,
    /// `None` starts FPS at the point with the largest feature sum (ties to
    /// the smallest index), which makes the whole pipeline order-independent.
    pub start_index: Option<usize>,
    pub voxel_size: f64,
    pub space_size: u32,
}

impl FkpConfig {
    pub fn new(centers: CenterRule, neighbors: usize, embed_dim: usize) -> Self {
        Self {
            centers,
            neighbors,
            embed_dim,
            point_dims: vec![3, 128, 256],
            global_dims: vec![512, 512, embed_dim],
            start_index: None,
            voxel_size: 1.0 / 224.0,
            space_size: 224,
        }
    }

    pub fn num_centers(&self, n: usize) -> usize {
        match self.centers {
            CenterRule::Fixed(g) => g,
            CenterRule::PerPoints(r) => (n / r.max(1)).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if matches!(self.centers, CenterRule::Fixed(0) | CenterRule::PerPoints(0)) {
            return bad("number of centers must be at least 1".into());
        }
        if self.neighbors == 0 {
            return bad("k must be at least 1".into());
        }
        if self.point_dims.len() < 2 || self.point_dims[0] != 3 {
            return bad(format!("point stage must start at width 3, got {:?}", self.point_dims));
        }
        if self.global_dims.len() < 2
            || self.global_dims[0] != 2 * self.point_dims.last().unwrap()
            || *self.global_dims.last().unwrap() != self.embed_dim
        {
            return bad(format!(
                "global stage {:?} must map 2x{} features to C={}",
                self.global_dims,
                self.point_dims.last().unwrap(),
                self.embed_dim
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    fn zeros(i: usize, o: usize) -> Self {
        Self {
            w: Mat::zeros(i, o),
            b: vec![0.0; o],
        }
    }

    fn init(i: usize, o: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: Mat::xavier(i, o, rng),
            b: vec![0.0; o],
        }
    }

    fn apply(&self, x: &Mat, relu: bool) -> Mat {
        let mut y = x.matmul(&self.w);
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.b) {
                *v += b;
                if relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        y
    }

    fn flops(&self, rows: usize) -> u64 {
        2 * (rows * self.w.rows() * self.w.cols()) as u64
    }
}

/// Mini-PointNet weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PointNet {
    pub point_stage: Vec<Linear>,
    pub global_stage: Vec<Linear>,
}

impl PointNet {
    pub fn zeros(cfg: &FkpConfig) -> Self {
        Self::build(cfg, |i, o| Linear::zeros(i, o))
    }

    pub fn init(cfg: &FkpConfig, rng: &mut impl Rng) -> Self {
        Self::build(cfg, |i, o| Linear::init(i, o, rng))
    }

    fn build(cfg: &FkpConfig, mut make: impl FnMut(usize, usize) -> Linear) -> Self {
        let point_stage = cfg.point_dims.windows(2).map(|w| make(w[0], w[1])).collect();
        let global_stage = cfg.global_dims.windows(2).map(|w| make(w[0], w[1])).collect();
        Self {
            point_stage,
            global_stage,
        }
    }

    /// Embeds one re-centered group (`k x 3`) into a token.
    ///
    /// Point stage with ReLU between layers, max-pool, concatenate the pooled
    /// feature in front of every point feature, global stage per point except
    /// its last layer, max-pool, then the last layer once per group.
    pub fn embed_group(&self, group: &Mat, ops: &mut OpCounter) -> Vec<f64> {
        let k = group.rows();
        let mut x = group.clone();
        let last = self.point_stage.len() - 1;
        for (i, layer) in self.point_stage.iter().enumerate() {
            ops.pointnet += layer.flops(k);
            x = layer.apply(&x, i < last);
        }
        let pooled = max_pool(&x);
        let width = x.cols();
        let mut cat = Mat::zeros(k, 2 * width);
        for r in 0..k {
            let row = cat.row_mut(r);
            row[..width].copy_from_slice(&pooled);
            row[width..].copy_from_slice(x.row(r));
        }
        let mut x = cat;
        let (head, per_point) = self.global_stage.split_last().expect("non-empty global stage");
        for layer in per_point {
            ops.pointnet += layer.flops(k);
            x = layer.apply(&x, true);
        }
        let pooled = Mat::from_vec(1, x.cols(), max_pool(&x));
        ops.pointnet += head.flops(1);
        head.apply(&pooled, false).into_vec()
    }
}

fn max_pool(x: &Mat) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; x.cols()];
    for r in 0..x.rows() {
        for (o, &v) in out.iter_mut().zip(x.row(r)) {
            *o = o.max(v);
        }
    }
    out
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn fps(pc: &PointCloud, count: usize, start_index: usize) -> Result<Vec<usize>> {
    fps_counted(pc, count, start_index, &mut OpCounter::default())
}

/// Farthest point sampling on `(x, y, z)`. Each step adds the point whose
/// minimum squared distance to the selection is largest, ties going to the
/// smallest index.
pub fn fps_counted(
    pc: &PointCloud,
    count: usize,
    start_index: usize,
    ops: &mut OpCounter,
) -> Result<Vec<usize>> {
    let n = pc.len();
    if count > n {
        return Err(Error::InvalidInput(format!("cannot sample {count} centers from {n} points")));
    }
    if count > 0 && start_index >= n {
        return Err(Error::InvalidInput(format!("start index {start_index} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = start_index;
    while selected.len() < count {
        selected.push(current);
        let c = pc.points[current].pos;
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, (p, d)) in pc.points.iter().zip(min_dist.iter_mut()).enumerate() {
            let dist = sq_dist(&p.pos, &c);
            if dist < *d {
                *d = dist;
            }
            if *d > best.0 {
                best = (*d, i);
            }
        }
        // 8 for the squared distance, 1 for the running min/max
        ops.fps += 9 * n as u64;
        current = best.1;
    }
    Ok(selected)
}

pub fn knn_group(pc: &PointCloud, centers: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    knn_group_counted(pc, centers, k, &mut OpCounter::default())
}

/// For each center, the `k` nearest points ordered by squared distance, ties
/// going to the smallest index.
pub fn knn_group_counted(
    pc: &PointCloud,
    centers: &[usize],
    k: usize,
    ops: &mut OpCounter,
) -> Result<Vec<Vec<usize>>> {
    let n = pc.len();
    if k > n {
        return Err(Error::InvalidInput(format!("cannot take {k} neighbours from {n} points")));
    }
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut groups = Vec::with_capacity(centers.len());
    for &c in centers {
        let cpos = pc.points[c].pos;
        scratch.clear();
        scratch.extend(pc.points.iter().enumerate().map(|(i, p)| (sq_dist(&p.pos, &cpos), i)));
        ops.knn += 9 * n as u64;
        if k < n {
            scratch.select_nth_unstable_by(k - 1, order);
        }
        let mut nearest = scratch[..k].to_vec();
        nearest.sort_unstable_by(order);
        groups.push(nearest.into_iter().map(|(_, i)| i).collect());
    }
    Ok(groups)
}

/// Canonical FPS seed: largest feature sum, ties to the smallest index.
pub fn canonical_start(pc: &PointCloud) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, p) in pc.points.iter().enumerate() {
        let s = p.feature_sum();
        if s > best.0 {
            best = (s, i);
        }
    }
    best.1
}

pub fn fkp_tokenize(pc: &PointCloud, cfg: &FkpConfig, net: &PointNet) -> Result<TokenSet> {
    fkp_tokenize_counted(pc, cfg, net, &mut OpCounter::default())
}

/// FPS -> KNN -> PointNet. Group coordinates are re-centered on their
/// center point. Positional embeddings are left at zero; positions are the
/// discretized center coordinates.
pub fn fkp_tokenize_counted(
    pc: &PointCloud,
    cfg: &FkpConfig,
    net: &PointNet,
    ops: &mut OpCounter,
) -> Result<TokenSet> {
    cfg.validate()?;
    if pc.is_empty() {
        return Err(Error::InvalidInput("empty point cloud".into()));
    }
    let g = cfg.num_centers(pc.len());
    let start = cfg.start_index.unwrap_or_else(|| canonical_start(pc));
    let centers = fps_counted(pc, g, start, ops)?;
    let groups = knn_group_counted(pc, &centers, cfg.neighbors, ops)?;

    let mut tokens = Mat::zeros(g, cfg.embed_dim);
    let mut positions = Vec::with_capacity(g);
    for (row, (&c, members)) in centers.iter().zip(&groups).enumerate() {
        let cpos = pc.points[c].pos;
        let mut group = Mat::zeros(members.len(), 3);
        for (r, &i) in members.iter().enumerate() {
            let p = pc.points[i].pos;
            group.row_mut(r).copy_from_slice(&[p[0] - cpos[0], p[1] - cpos[1], p[2] - cpos[2]]);
        }
        tokens.row_mut(row).copy_from_slice(&net.embed_group(&group, ops));
        positions.push(cpos.map(|v| discretize(v, cfg.voxel_size, cfg.space_size)));
    }
    Ok(TokenSet {
        pos_embeddings: Mat::zeros(g, cfg.embed_dim),
        valid: vec![true; g],
        patch_sizes: vec![cfg.neighbors; g],
        tokens,
        positions,
    })
}
