//! `pseudo3d` command-line front end.
//!
//! Exit codes: 0 on success, 1 for validation or configuration failures,
//! 2 for I/O failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pseudo3d::config::RunConfig;
use pseudo3d::flops::{scaling_bench, BenchConfig};
use pseudo3d::io::{read_depth, read_ply_file, read_ppm, read_tensors_file, write_file, write_ply_file, write_tensors_file, Tensor};
use pseudo3d::lift::{lift, rotate_z, DepthImage};
use pseudo3d::model::{gradcheck, GradCheckConfig, Model, Params, Sample, StepLog, Trainer};
use pseudo3d::synth::primitive_corpus;
use pseudo3d::tokenizer::{patchify, tokenize};
use pseudo3d::{Error, Mat, Result};

#[derive(Parser)]
#[command(name = "pseudo3d", version, about = "Pseudo-3D point cloud lifting, tokenization and pre-training")]
struct Cli {
    /// Seed for every random choice; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift an RGB image and a depth map into an ASCII PLY point cloud.
    Lift(LiftArgs),
    /// Tokenize a PLY cloud and dump positions, tokens and patch sizes.
    Tokenize(TokenizeArgs),
    /// Masked-autoencoder pre-training on a directory of PLY clouds.
    Pretrain(PretrainArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
    /// Operation-count scaling benchmark of both tokenizers.
    Bench(BenchArgs),
    /// Write a synthetic corpus of primitive shapes as PLY files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct LiftArgs {
    /// Binary 8-bit PPM (P6).
    #[arg(long)]
    image: PathBuf,
    /// PFM or 16-bit PGM (P5) of the same size.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rotate about the vertical axis by an angle drawn from this seed.
    #[arg(long)]
    rotate_seed: Option<u64>,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON run config; desk settings when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Take the embedding weights from a checkpoint instead of a fresh init.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory of `.ply` clouds; defaults to `io.data`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; defaults to `io.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `optimizer.steps`.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Ascending cloud sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [2_000, 4_000, 8_000, 16_000, 32_000, 64_000])]
    sizes: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write zero wall times so the CSV is byte-for-byte reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 2_000)]
    min_points: usize,
    #[arg(long, default_value_t = 10_000)]
    max_points: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.cmd {
        Command::Lift(a) => cmd_lift(a),
        Command::Tokenize(a) => cmd_tokenize(a, seed),
        Command::Pretrain(a) => cmd_pretrain(a, seed),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed),
        Command::Bench(a) => cmd_bench(a, seed.unwrap_or(0)),
        Command::Synth(a) => cmd_synth(a, seed.unwrap_or(0)),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_lift(a: LiftArgs) -> Result<ExitCode> {
    let image = read_ppm(&pseudo3d::io::read_file(&a.image)?)?;
    let depth = read_depth(&a.depth)?;
    if (image.width, image.height) != (depth.width, depth.height) {
        return Err(Error::InvalidInput(format!(
            "image is {}x{} but depth map is {}x{}",
            image.width, image.height, depth.width, depth.height
        )));
    }
    let img = DepthImage::new(image.width, image.height, image.pixels, depth.values)?;
    let mut pc = lift(&img)?;
    if let Some(s) = a.rotate_seed {
        let angle = ChaCha8Rng::seed_from_u64(s).random_range(0.0..std::f64::consts::TAU);
        pc = rotate_z(&pc, angle);
    }
    write_ply_file(&a.out, &pc)?;
    println!("wrote {} points to {}", pc.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_tokenize(a: TokenizeArgs, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let pc = read_ply_file(&a.input)?;
    let model = match &a.checkpoint {
        Some(p) => Model::from_params(cfg.model_config(), cfg.tokenizer.clone(), Params::from_tensors(&read_tensors_file(p)?)?)?,
        None => Model::init(cfg.model_config(), cfg.tokenizer.clone(), cfg.seed)?,
    };
    let (grid, _) = patchify(&pc, &cfg.tokenizer)?;
    let tokens = tokenize(&pc, &cfg.tokenizer, &model.weight_table(), &model.pos_embed())?;
    let p = tokens.len();
    let positions = Mat::from_vec(
        p,
        3,
        tokens.positions.iter().flat_map(|q| q.map(f64::from)).collect(),
    );
    let sizes: Vec<f64> = tokens.patch_sizes.iter().map(|&l| l as f64).collect();
    write_tensors_file(
        &a.out,
        &[
            Tensor::from_mat("positions", &positions),
            Tensor::from_mat("tokens", &tokens.tokens),
            Tensor::from_mat("pos_embeddings", &tokens.pos_embeddings),
            Tensor::new("patch_sizes", vec![p], sizes)?,
        ],
    )?;
    println!(
        "N={} M={} P={} weight rows={} (a^3, each of width C={})",
        pc.len(),
        grid.len(),
        p,
        cfg.tokenizer.num_cells(),
        cfg.tokenizer.embed_dim
    );
    Ok(ExitCode::SUCCESS)
}

fn load_corpus(dir: &Path) -> Result<Vec<pseudo3d::PointCloud>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .ply files in {}", dir.display())));
    }
    // read_dir order is platform dependent
    files.sort();
    files.iter().map(|f| read_ply_file(f)).collect()
}

fn cmd_pretrain(a: PretrainArgs, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let data = a
        .data
        .or_else(|| cfg.io.data.clone())
        .ok_or_else(|| Error::Config("no data directory (--data or io.data)".into()))?;
    let out = a
        .out
        .or_else(|| cfg.io.out.clone())
        .ok_or_else(|| Error::Config("no checkpoint path (--out or io.out)".into()))?;
    let log = cfg.io.log.clone().unwrap_or_else(|| out.with_extension("csv"));
    let corpus = load_corpus(&data)?;

    let mut train = cfg.train_config();
    if let Some(s) = a.steps {
        train.steps = s;
    }
    let model = Model::init(cfg.model_config(), cfg.tokenizer.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, train, cfg.seed)?;
    let total = trainer.config.steps;
    let every = (total / 20).max(1);
    let logs = trainer.run(&corpus, |l| {
        if l.step % every == 0 || l.step == 1 {
            eprintln!("step {}/{total}: loss {:.6} lr {:.3e}", l.step, l.total, l.lr);
        }
    })?;

    write_tensors_file(&out, &trainer.model.params.to_tensors())?;
    let mut csv = String::from(StepLog::CSV_HEADER);
    csv.push('\n');
    for l in &logs {
        csv.push_str(&l.csv_row());
        csv.push('\n');
    }
    write_file(&log, csv.as_bytes())?;
    match (logs.first(), logs.last()) {
        (Some(f), Some(l)) => println!("{} steps on {} clouds: loss {:.6} -> {:.6}", logs.len(), corpus.len(), f.total, l.total),
        _ => println!("0 steps; checkpoint is the initialization"),
    }
    println!("checkpoint {}, log {}", out.display(), log.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let tok = cfg.tokenizer.clone();
    let model = Model::init(cfg.model_config(), tok.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = primitive_corpus(2, 1500, 2500, cfg.seed)
        .iter()
        .map(|pc| Sample::from_cloud(pc, &tok, cfg.masking.ratio, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let check = GradCheckConfig {
        samples: a.samples,
        step: a.step,
        tolerance: a.tolerance,
        seed: cfg.seed,
    };
    let report = gradcheck(&model, &batch, &cfg.loss, &check)?;
    for e in &report.entries {
        println!(
            "{}[{}]: analytic {:+.9e} numeric {:+.9e} rel {:.3e}",
            e.name, e.index, e.analytic, e.numeric, e.rel_err
        );
    }
    if let Some(w) = report.worst() {
        println!("worst: {}[{}]", w.name, w.index);
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "max relative error {:.3e} (tolerance {:.1e}): {verdict}",
        report.max_rel_err, report.tolerance
    );
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_bench(a: BenchArgs, seed: u64) -> Result<ExitCode> {
    if a.sizes.is_empty() || a.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("--sizes must be non-empty and strictly ascending".into()));
    }
    let mut cfg = BenchConfig::new(a.sizes, seed);
    cfg.timing = !a.no_timing;
    let result = scaling_bench(&cfg)?;
    write_file(&a.out, result.to_csv().as_bytes())?;
    if result.rows.len() < 2 {
        eprintln!("warning: a slope needs at least two sizes; reporting NaN");
    }
    println!("V-P-S slope {:.3}", result.vps_slope);
    println!("F-K-P slope {:.3}", result.fkp_slope);
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<ExitCode> {
    if a.count == 0 || a.min_points == 0 || a.min_points > a.max_points {
        return Err(Error::InvalidInput("need count > 0 and 0 < min-points <= max-points".into()));
    }
    let corpus = primitive_corpus(a.count, a.min_points, a.max_points, seed);
    for (i, pc) in corpus.iter().enumerate() {
        write_ply_file(&a.out.join(format!("cloud_{i:04}.ply")), pc)?;
    }
    println!("wrote {} clouds to {}", corpus.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
