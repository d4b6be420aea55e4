//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
//! measured quantity before asserting.

use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pseudo3d::flops::{scaling_bench, BenchConfig, BenchResult};
use pseudo3d::io::{read_ply, write_ply};
use pseudo3d::lift::{lift, DepthImage};
use pseudo3d::loss::{chamfer_loss, occupancy_loss, occupancy_loss_probs, OCC_CLAMP};
use pseudo3d::masking::random_mask;
use pseudo3d::model::{gradcheck, GradCheckConfig, Model, ModelConfig, Sample, TrainConfig, Trainer};
use pseudo3d::synth::{primitive_corpus, uniform_cloud};
use pseudo3d::tokenizer::{
    dense_reference_embed, embed_tokens, swi_index, tokenize, DensePatch, Patch, PosEmbed, TokenizerConfig,
    WeightTable, PATCH_FEATURES,
};
use pseudo3d::{Point, PointCloud};

fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

#[test]
fn dense_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let a: u32 = if i % 2 == 0 { 2 } else { 4 };
        let cells = (a as usize).pow(3);
        let w = WeightTable::init(a, 16, &mut rng);
        let feats: Vec<[f64; PATCH_FEATURES]> = (0..cells)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let patch = Patch {
            position: [0, 0, 0],
            voxels: feats.clone(),
            cell_indices: (0..cells).collect(),
        };
        let sparse = embed_tokens(&[patch], &w).unwrap();
        let dense = dense_reference_embed(
            &DensePatch {
                patch_size: a,
                cells: feats.into_iter().map(Some).collect(),
            },
            &w,
        )
        .unwrap();
        for (x, y) in sparse.row(0).iter().zip(&dense) {
            worst = worst.max((x - y).abs());
        }
    }
    verdict("dense equivalence (100 patches, a in {2,4})", worst <= 1e-6, format!("max |diff| = {worst:.3e}"));
}

#[test]
fn swi_bijectivity() {
    let mut ok = true;
    for a in [1u32, 2, 4, 16] {
        let n = (a as usize).pow(3);
        let mut seen = vec![false; n];
        // a patch whose minimum corner is not at the origin
        let base = [3 * a, 5 * a, 7 * a];
        for q in 0..a {
            for nn in 0..a {
                for m in 0..a {
                    let d = swi_index(base[0] + m, base[1] + nn, base[2] + q, a);
                    ok &= d < n && !seen[d];
                    if d < n {
                        seen[d] = true;
                    }
                }
            }
        }
        ok &= seen.iter().all(|&s| s);
    }
    verdict("SWI bijectivity (a in {1,2,4,16})", ok, "exhaustive over each patch");
}

/// True if no two points in the same voxel share a feature sum.
fn unique_voxel_sums(pc: &PointCloud, tok: &TokenizerConfig) -> bool {
    let mut seen = std::collections::HashMap::new();
    for p in &pc.points {
        let key = p.pos.map(|v| pseudo3d::tokenizer::discretize(v, tok.voxel_size, tok.space_size));
        if let Some(prev) = seen.insert(key, p.feature_sum()) {
            if prev == p.feature_sum() {
                return false;
            }
        }
    }
    true
}

#[test]
fn permutation_invariance() {
    let tok = TokenizerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = WeightTable::init(tok.patch_size, tok.embed_dim, &mut rng);
    let pos = PosEmbed::init(tok.posembed_hidden, tok.embed_dim, &mut rng);
    let mut worst: f64 = 0.0;
    let mut same_shape = true;
    for c in 0..50 {
        let n = rng.random_range(1..=5000);
        let pc = uniform_cloud(n, 1000 + c);
        assert!(unique_voxel_sums(&pc, &tok));
        let base = tokenize(&pc, &tok, &w, &pos).unwrap();
        for _ in 0..5 {
            let mut pts = pc.points.clone();
            pts.shuffle(&mut rng);
            let t = tokenize(&PointCloud::new(pts), &tok, &w, &pos).unwrap();
            same_shape &= t.positions == base.positions && t.patch_sizes == base.patch_sizes;
            if same_shape {
                worst = worst
                    .max(t.tokens.max_abs_diff(&base.tokens))
                    .max(t.pos_embeddings.max_abs_diff(&base.pos_embeddings));
            }
        }
    }
    verdict(
        "permutation invariance (50 clouds x 5 permutations)",
        same_shape && worst <= 1e-6,
        format!("identical layout: {same_shape}, max |diff| = {worst:.3e}"),
    );
}

fn desk_batch(seed: u64) -> (Model, Vec<Sample>) {
    let tok = TokenizerConfig::desk();
    let model = Model::init(ModelConfig::desk(), tok.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = primitive_corpus(2, 1500, 2500, seed)
        .iter()
        .map(|pc| Sample::from_cloud(pc, &tok, 0.6, &mut rng).unwrap())
        .collect();
    (model, batch)
}

#[test]
fn gradient_check() {
    let (model, batch) = desk_batch(3);
    let report = gradcheck(&model, &batch, &Default::default(), &GradCheckConfig::default()).unwrap();
    let worst = report.worst().unwrap();
    verdict(
        "gradient check (desk model, 20 parameters, step 1e-5)",
        report.passed(),
        format!(
            "max relative error {:.3e} at {}[{}] (tolerance {:.0e})",
            report.max_rel_err, worst.name, worst.index, report.tolerance
        ),
    );
}

fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut fwd = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
            if d < best {
                best = d;
            }
        }
        fwd += best;
    }
    let mut bwd = 0.0;
    for q in b {
        let mut best = f64::INFINITY;
        for p in a {
            let d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
            if d < best {
                best = d;
            }
        }
        bwd += best;
    }
    fwd / a.len() as f64 + bwd / b.len() as f64
}

fn brute_bce(o: &[bool], logits: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&oi, &l) in o.iter().zip(logits) {
        let p = (1.0 / (1.0 + (-l).exp())).clamp(OCC_CLAMP, 1.0 - OCC_CLAMP);
        s += if oi { -p.ln() } else { -(1.0 - p).ln() };
    }
    s / o.len() as f64
}

#[test]
fn loss_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cd_worst: f64 = 0.0;
    let mut occ_worst: f64 = 0.0;
    for _ in 0..100 {
        let na = rng.random_range(1..=32);
        let nb = rng.random_range(1..=32);
        let a: Vec<[f64; 3]> = (0..na).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let b: Vec<[f64; 3]> = (0..nb).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        cd_worst = cd_worst.max((chamfer_loss(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs());

        let cells = [8, 64, 4096][rng.random_range(0..3)];
        let o: Vec<bool> = (0..cells).map(|_| rng.random()).collect();
        let logits: Vec<f64> = (0..cells).map(|_| rng.random_range(-20.0..20.0)).collect();
        occ_worst = occ_worst.max((occupancy_loss(&o, &logits).unwrap() - brute_bce(&o, &logits)).abs());
    }
    verdict(
        "loss oracles (100 Chamfer + 100 occupancy instances)",
        cd_worst <= 1e-9 && occ_worst <= 1e-9,
        format!("Chamfer max |diff| = {cd_worst:.3e}, occupancy max |diff| = {occ_worst:.3e}"),
    );
}

#[test]
fn hand_loss_values() {
    let cd = chamfer_loss(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap();
    let occ = occupancy_loss_probs(&[true, false], &[0.9, 0.1]).unwrap();
    let want = -(0.9f64).ln();
    verdict(
        "hand-derived loss values",
        (cd - 0.5).abs() <= 1e-6 && (occ - want).abs() <= 1e-6 && (occ - 0.10536).abs() <= 1e-5,
        format!("Chamfer {cd} (want 0.5), occupancy {occ:.6} (want {want:.6})"),
    );
}

fn bench() -> &'static BenchResult {
    static RESULT: OnceLock<BenchResult> = OnceLock::new();
    RESULT.get_or_init(|| {
        let mut cfg = BenchConfig::new(vec![2_000, 4_000, 8_000, 16_000, 32_000, 64_000], 7);
        cfg.timing = false;
        let r = scaling_bench(&cfg).unwrap();
        println!("{}", r.to_csv());
        r
    })
}

#[test]
fn complexity_counters_match_formulas() {
    let r = bench();
    let worst = r
        .rows
        .iter()
        .flat_map(|row| {
            [
                (row.vps_measured as f64 - row.vps_formula as f64).abs() / row.vps_formula as f64,
                (row.fkp_measured as f64 - row.fkp_formula as f64).abs() / row.fkp_formula as f64,
            ]
        })
        .fold(0.0, f64::max);
    verdict("complexity: counters vs formulas within 5%", worst <= 0.05, format!("max relative gap {worst:.3e}"));
}

#[test]
fn complexity_vps_below_fkp() {
    let r = bench();
    let big: Vec<_> = r.rows.iter().filter(|row| row.n >= 10_000).collect();
    let ok = !big.is_empty() && big.iter().all(|row| row.vps_measured < row.fkp_measured);
    let detail: Vec<String> = big
        .iter()
        .map(|row| format!("N={}: {} vs {}", row.n, row.vps_measured, row.fkp_measured))
        .collect();
    verdict("complexity: V-P-S < F-K-P for N >= 10k", ok, detail.join("; "));
}

#[test]
fn complexity_vps_slope() {
    let s = bench().vps_slope;
    verdict("complexity: V-P-S log-log slope in [0.85, 1.15]", (0.85..=1.15).contains(&s), format!("slope {s:.3}"));
}

#[test]
fn complexity_fkp_slope() {
    let s = bench().fkp_slope;
    verdict("complexity: F-K-P (G = N/32) log-log slope >= 1.8", s >= 1.8, format!("slope {s:.3}"));
}

#[test]
fn training_smoke() {
    let corpus = primitive_corpus(64, 2_000, 10_000, 11);
    let run = || {
        let model = Model::init(ModelConfig::desk(), TokenizerConfig::desk(), 11).unwrap();
        let cfg = TrainConfig {
            steps: 300,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, cfg, 11).unwrap();
        trainer.run(&corpus, |_| {}).unwrap()
    };
    let a = run();
    let b = run();
    let (first, last) = (a[0].total, a[a.len() - 1].total);
    let drift = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x.total - y.total).abs())
        .fold(0.0, f64::max);
    verdict(
        "training smoke (64 clouds, 300 steps)",
        last < 0.6 * first && drift <= 1e-9,
        format!("step 1 loss {first:.4}, step 300 loss {last:.4} (ratio {:.3}), run-to-run drift {drift:.1e}", last / first),
    );
}

#[test]
fn masking_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = true;
    for i in 0..1000 {
        let p = rng.random_range(1..=2000);
        let ratio = rng.random_range(0.0..0.99);
        let m = random_mask(p, ratio, i).unwrap();
        let want = ((ratio * p as f64).round() as usize).min(p - 1);
        let mut all: Vec<usize> = m.visible.iter().chain(&m.masked).copied().collect();
        all.sort_unstable();
        ok &= m.masked.len() == want && !m.visible.is_empty() && all == (0..p).collect::<Vec<_>>();
    }
    let p = 50;
    let mut counts = vec![0usize; p];
    for s in 0..10_000 {
        for &i in &random_mask(p, 0.6, 100_000 + s).unwrap().masked {
            counts[i] += 1;
        }
    }
    let worst = counts
        .iter()
        .map(|&c| (c as f64 / 10_000.0 - 0.6).abs())
        .fold(0.0, f64::max);
    verdict(
        "masking contract (1000 pairs, 10000 draws)",
        ok && worst <= 0.02,
        format!("partitions ok: {ok}, max frequency deviation {worst:.4}"),
    );
}

#[test]
fn lift_pipeline() {
    let img = DepthImage::new(2, 2, vec![[0.5; 3]; 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let pc = lift(&img).unwrap();
    let want = [[0.0, 0.0, 1.0], [1.0, 1.0 / 3.0, 1.0], [0.0, 2.0 / 3.0, 0.0], [1.0, 1.0, 0.0]];
    let exact = pc.points.iter().map(|p| p.pos).collect::<Vec<_>>() == want;

    let mut runner = TestRunner::new(Config {
        cases: 64,
        ..Config::default()
    });
    let strategy = prop::collection::vec((prop::array::uniform3(0.0f64..=1.0), prop::array::uniform3(0.0f64..=1.0)), 1..200);
    let round_trip = runner
        .run(&strategy, |pts| {
            let pc = PointCloud::new(pts.into_iter().map(|(p, c)| Point::new(p, c)).collect());
            let back = read_ply(write_ply(&pc).as_bytes()).unwrap();
            prop_assert_eq!(back.len(), pc.len());
            for (a, b) in pc.points.iter().zip(&back.points) {
                for k in 0..3 {
                    prop_assert!((a.pos[k] - b.pos[k]).abs() <= 1e-6);
                    prop_assert!((a.color[k] - b.color[k]).abs() <= 1.0 / 255.0);
                }
            }
            Ok(())
        })
        .is_ok();
    verdict(
        "lift pipeline (2x2 example, PLY round trip)",
        exact && round_trip,
        format!("exact coordinates: {exact}, round trip within 1/255 and 1e-6: {round_trip}"),
    );
}
