//! Floating-point operation accounting for both tokenizers.
//!
//! Counting rules (both the analytic formulas and the instrumented
//! counters follow them):
//!
//! | stage     | cost                                              |
//! |-----------|---------------------------------------------------|
//! | voxelize  | `6 N` (divide + floor per coordinate)             |
//! | graph     | `6 M + 3 P` (centroid sums, divides, edges)       |
//! | swi       | `24 M C + P C` (12 x C MACs per voxel, mean)      |
//! | posembed  | `P (2 * 3 h + 2 h C)`                             |
//! | fps       | `9 G N` (8 for a squared distance, 1 compare)     |
//! | knn       | `9 G N`                                           |
//! | pointnet  | `2 * in * out` per layer application              |
//!
//! Integer hashing, comparisons outside distance scans, activations,
//! biases and pooling count zero.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::synth;
use crate::tokenizer::fkp::{fkp_tokenize_counted, CenterRule, FkpConfig, PointNet};
use crate::tokenizer::{patchify_counted, embed_patches, PosEmbed, TokenizerConfig, WeightTable};

/// Instrumented per-stage counters, incremented by the tokenizer code paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub voxelize: u64,
    pub graph: u64,
    pub swi: u64,
    pub posembed: u64,
    pub fps: u64,
    pub knn: u64,
    pub pointnet: u64,
}

impl OpCounter {
    pub fn vps_total(&self) -> u64 {
        self.voxelize + self.graph + self.swi + self.posembed
    }

    pub fn fkp_total(&self) -> u64 {
        self.fps + self.knn + self.pointnet
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopReport {
    pub stages: Vec<(&'static str, u64)>,
    pub total: u64,
    /// Inputs the report was computed from, e.g. `("N", 1000)`.
    pub params: Vec<(&'static str, usize)>,
}

impl FlopReport {
    fn new(stages: Vec<(&'static str, u64)>, params: Vec<(&'static str, usize)>) -> Self {
        let total = stages.iter().map(|(_, v)| v).sum();
        Self {
            stages,
            total,
            params,
        }
    }

    pub fn stage(&self, name: &str) -> Option<u64> {
        self.stages.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Analytic V-P-S cost for `N` points, `M` voxels and `P` patches.
pub fn vps_flops(n: usize, m: usize, p: usize, a: usize, c: usize, h: usize) -> Result<FlopReport> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    if m > n || p > m {
        return Err(Error::InvalidInput(format!("need P <= M <= N, got P={p}, M={m}, N={n}")));
    }
    let (n64, m64, p64, c64, h64) = (n as u64, m as u64, p as u64, c as u64, h as u64);
    Ok(FlopReport::new(
        vec![
            ("voxelize", 6 * n64),
            ("graph", 6 * m64 + 3 * p64),
            ("swi", 24 * m64 * c64 + p64 * c64),
            ("posembed", p64 * (2 * 3 * h64 + 2 * h64 * c64)),
        ],
        vec![("N", n), ("M", m), ("P", p), ("a", a), ("C", c), ("h", h)],
    ))
}

/// Analytic F-K-P cost. `point_dims` and `global_dims` follow
/// [`FkpConfig`]; the last global layer runs once per group.
pub fn fkp_flops(
    n: usize,
    g: usize,
    k: usize,
    point_dims: &[usize],
    global_dims: &[usize],
) -> Result<FlopReport> {
    if n == 0 || g == 0 || k == 0 {
        return Err(Error::InvalidInput("N, G and k must be at least 1".into()));
    }
    if g > n || k > n {
        return Err(Error::InvalidInput(format!("need G <= N and k <= N, got G={g}, k={k}, N={n}")));
    }
    if point_dims.len() < 2 || global_dims.len() < 2 {
        return Err(Error::InvalidInput("each PointNet stage needs at least one layer".into()));
    }
    let macs = |dims: &[usize]| dims.windows(2).map(|w| (w[0] * w[1]) as u64).sum::<u64>();
    let (n64, g64, k64) = (n as u64, g as u64, k as u64);
    let (per_point, head) = global_dims.split_at(global_dims.len() - 2);
    let per_point_global = macs(&[per_point, &head[..1]].concat());
    let head_macs = (head[0] * head[1]) as u64;
    let pointnet = g64 * k64 * 2 * macs(point_dims) + g64 * k64 * 2 * per_point_global + g64 * 2 * head_macs;
    let c = *global_dims.last().unwrap();
    Ok(FlopReport::new(
        vec![("fps", 9 * g64 * n64), ("knn", 9 * g64 * n64), ("pointnet", pointnet)],
        vec![("N", n), ("G", g), ("k", k), ("C", c)],
    ))
}

/// Least-squares slope of `ln y` against `ln x`. NaN with fewer than two
/// distinct sizes.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub tokenizer: TokenizerConfig,
    pub fkp: FkpConfig,
    pub seed: u64,
    /// Record wall times; when false the time columns are written as zero
    /// so the CSV is reproducible byte for byte.
    pub timing: bool,
}

impl BenchConfig {
    /// Full-scale tokenizers, `G = N / 32`, `k = 32`.
    pub fn new(sizes: Vec<usize>, seed: u64) -> Self {
        let tokenizer = TokenizerConfig::default();
        let fkp = FkpConfig::new(CenterRule::PerPoints(32), 32, tokenizer.embed_dim);
        Self {
            sizes,
            tokenizer,
            fkp,
            seed,
            timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub voxels: usize,
    pub patches: usize,
    pub centers: usize,
    pub vps_measured: u64,
    pub vps_formula: u64,
    pub fkp_measured: u64,
    pub fkp_formula: u64,
    pub vps_ms: f64,
    pub fkp_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub vps_slope: f64,
    pub fkp_slope: f64,
}

pub const CSV_HEADER: &str = "n,vps_measured,vps_formula,fkp_measured,fkp_formula,vps_ms,fkp_ms";

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.3}",
                r.n, r.vps_measured, r.vps_formula, r.fkp_measured, r.fkp_formula, r.vps_ms, r.fkp_ms
            );
        }
        out
    }
}

/// Runs both tokenizers on uniform synthetic clouds of each size and
/// compares instrumented counts against the analytic formulas.
pub fn scaling_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.tokenizer.validate()?;
    cfg.fkp.validate()?;
    let tk = &cfg.tokenizer;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = WeightTable::init(tk.patch_size, tk.embed_dim, &mut rng);
    let pos = PosEmbed::init(tk.posembed_hidden, tk.embed_dim, &mut rng);
    let net = PointNet::init(&cfg.fkp, &mut rng);

    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let cloud = synth::uniform_cloud(n, cfg.seed.wrapping_add(n as u64));

        let mut vps = OpCounter::default();
        let t0 = Instant::now();
        let (grid, patches) = patchify_counted(&cloud, tk, &mut vps)?;
        embed_patches(&patches, tk, &weights, &pos, &mut vps)?;
        let vps_ms = t0.elapsed().as_secs_f64() * 1e3;
        let vps_formula = vps_flops(
            n,
            grid.len(),
            patches.len(),
            tk.patch_size as usize,
            tk.embed_dim,
            tk.posembed_hidden,
        )?;

        let mut fkp = OpCounter::default();
        let t0 = Instant::now();
        fkp_tokenize_counted(&cloud, &cfg.fkp, &net, &mut fkp)?;
        let fkp_ms = t0.elapsed().as_secs_f64() * 1e3;
        let g = cfg.fkp.num_centers(n);
        let fkp_formula = fkp_flops(n, g, cfg.fkp.neighbors, &cfg.fkp.point_dims, &cfg.fkp.global_dims)?;

        rows.push(BenchRow {
            n,
            voxels: grid.len(),
            patches: patches.len(),
            centers: g,
            vps_measured: vps.vps_total(),
            vps_formula: vps_formula.total,
            fkp_measured: fkp.fkp_total(),
            fkp_formula: fkp_formula.total,
            vps_ms: if cfg.timing { vps_ms } else { 0.0 },
            fkp_ms: if cfg.timing { fkp_ms } else { 0.0 },
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let vps: Vec<f64> = rows.iter().map(|r| r.vps_measured as f64).collect();
    let fkp: Vec<f64> = rows.iter().map(|r| r.fkp_measured as f64).collect();
    Ok(BenchResult {
        vps_slope: log_log_slope(&xs, &vps),
        fkp_slope: log_log_slope(&xs, &fkp),
        rows,
    })
}
