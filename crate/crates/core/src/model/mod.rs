//! Masked autoencoder over sparse voxel tokens: a pre-norm transformer
//! encoder on visible tokens and a decoder that predicts every cell of the
//! masked patches.

mod gradcheck;
mod params;
mod train;

pub use gradcheck::{gradcheck, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use params::Params;
pub use train::{cosine_lr, train_step, AdamW, AdamWConfig, StepLog, TrainConfig, Trainer};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::loss::{patch_loss_grad, HeadOutput, LossTerms, LossWeights, PatchTarget, HEAD_FIELDS};
use crate::masking::{random_mask_with, AttentionMask, MaskPlan};
use crate::tensor::Mat;
use crate::tokenizer::{patchify, position_input, Patch, PosEmbed, TokenizerConfig, WeightTable, PATCH_FEATURES};

/// Attention head width used when the head count is left unset.
pub const HEAD_DIM: usize = 16;
pub const MLP_RATIO: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub enc_blocks: usize,
    /// Must equal the tokenizer width `C`.
    pub enc_dim: usize,
    pub dec_blocks: usize,
    pub dec_dim: usize,
    /// Defaults to `enc_dim / 16`, at least 1.
    pub enc_heads: Option<usize>,
    /// Defaults to `dec_dim / 16`, at least 1.
    pub dec_heads: Option<usize>,
    pub patch_size: u32,
    pub class_token: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            enc_blocks: 2,
            enc_dim: 32,
            dec_blocks: 2,
            dec_dim: 32,
            enc_heads: None,
            dec_heads: None,
            patch_size: 4,
            class_token: false,
        }
    }

    pub fn full() -> Self {
        Self {
            enc_blocks: 12,
            enc_dim: 384,
            dec_blocks: 8,
            dec_dim: 512,
            enc_heads: None,
            dec_heads: None,
            patch_size: 16,
            class_token: false,
        }
    }

    pub fn enc_heads(&self) -> usize {
        self.enc_heads.unwrap_or((self.enc_dim / HEAD_DIM).max(1))
    }

    pub fn dec_heads(&self) -> usize {
        self.dec_heads.unwrap_or((self.dec_dim / HEAD_DIM).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        for (what, dim, heads) in [
            ("encoder", self.enc_dim, self.enc_heads()),
            ("decoder", self.dec_dim, self.dec_heads()),
        ] {
            if dim == 0 || heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!(
                    "{what} width {dim} is not divisible by {heads} heads"
                )));
            }
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        Ok(())
    }

    pub fn check_tokenizer(&self, tok: &TokenizerConfig) -> Result<()> {
        if tok.embed_dim != self.enc_dim || tok.patch_size != self.patch_size {
            return Err(Error::Config(format!(
                "model (C={}, a={}) does not match tokenizer (C={}, a={})",
                self.enc_dim, self.patch_size, tok.embed_dim, tok.patch_size
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        (self.patch_size as usize).pow(3) * HEAD_FIELDS
    }
}

/// One tokenized, masked cloud with targets for its masked patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// All patches in position order.
    pub patches: Vec<Patch>,
    pub plan: MaskPlan,
    /// One per entry of `plan.masked`.
    pub targets: Vec<PatchTarget>,
}

impl Sample {
    pub fn new(patches: Vec<Patch>, plan: MaskPlan, patch_size: u32) -> Result<Self> {
        if plan.len() != patches.len() {
            return Err(Error::Shape(format!(
                "mask covers {} tokens but the sample has {} patches",
                plan.len(),
                patches.len()
            )));
        }
        let targets = plan
            .masked
            .iter()
            .map(|&i| PatchTarget::from_patch(&patches[i], patch_size))
            .collect::<Result<_>>()?;
        Ok(Self { patches, plan, targets })
    }

    pub fn from_cloud(pc: &PointCloud, tok: &TokenizerConfig, ratio: f64, rng: &mut impl Rng) -> Result<Self> {
        let (_, patches) = patchify(pc, tok)?;
        let plan = random_mask_with(patches.len(), ratio, rng)?;
        Self::new(patches, plan, tok.patch_size)
    }

    fn positions(&self, idx: &[usize]) -> Vec<[u32; 3]> {
        idx.iter().map(|&i| self.patches[i].position).collect()
    }
}

/// Input to [`Model::decoder_forward`] for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderInput {
    /// Encoder output: class token row (if enabled) followed by the visible
    /// tokens; extra rows are ignored.
    pub encoded: Mat,
    pub visible: usize,
    /// Decoder positional embeddings of the visible tokens, `visible x D`.
    pub pos_visible: Mat,
    /// Decoder positional embeddings of the masked slots, `M x D`.
    pub pos_masked: Mat,
}

/// Chamfer prediction cells for every masked patch of every sample.
pub type Selection = Vec<Vec<Vec<usize>>>;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    /// Each term averaged over masked patches, then over samples.
    pub terms: LossTerms,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub tokenizer: TokenizerConfig,
    pub params: Params,
}

struct Graph<'a> {
    tape: Tape,
    params: &'a Params,
    vars: BTreeMap<String, Var>,
}

impl Graph<'_> {
    fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let v = self.tape.leaf(self.params.get(name).clone());
        self.vars.insert(name.to_string(), v);
        v
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let (w, b) = (self.p(&format!("{prefix}.w")), self.p(&format!("{prefix}.b")));
        self.tape.linear(x, w, b)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Var {
        let (g, b) = (self.p(&format!("{prefix}.g")), self.p(&format!("{prefix}.b")));
        let y = self.tape.layer_norm(x);
        let y = self.tape.mul_row(y, g);
        self.tape.add_row(y, b)
    }

    fn pos_mlp(&mut self, input: Mat, prefix: &str) -> Var {
        let x = self.tape.leaf(input);
        let h = self.linear(x, &format!("{prefix}.l1"));
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{prefix}.l2"))
    }

    fn block(&mut self, x: Var, prefix: &str, valid: &[bool], heads: usize) -> Var {
        let h = self.norm(x, &format!("{prefix}.ln1"));
        let q = self.linear(h, &format!("{prefix}.attn.q"));
        let k = self.linear(h, &format!("{prefix}.attn.k"));
        let v = self.linear(h, &format!("{prefix}.attn.v"));
        let width = self.tape.value(x).cols();
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let (qh, kh, vh) = (
                self.tape.slice_cols(q, i * dh, dh),
                self.tape.slice_cols(k, i * dh, dh),
                self.tape.slice_cols(v, i * dh, dh),
            );
            let s = self.tape.matmul_nt(qh, kh);
            let s = self.tape.scale(s, scale);
            let a = self.tape.masked_softmax(s, valid, valid);
            outs.push(self.tape.matmul(a, vh));
        }
        let o = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs) };
        let o = self.linear(o, &format!("{prefix}.attn.o"));
        let x = self.tape.add(x, o);
        let h = self.norm(x, &format!("{prefix}.ln2"));
        let h = self.linear(h, &format!("{prefix}.mlp.l1"));
        let h = self.tape.gelu(h);
        let h = self.linear(h, &format!("{prefix}.mlp.l2"));
        self.tape.add(x, h)
    }

    /// Trunk over a padded `T x C` input; returns the output and its validity.
    fn encode(&mut self, cfg: &ModelConfig, x: Var, valid: &[bool]) -> (Var, Vec<bool>) {
        let (mut x, valid) = if cfg.class_token {
            let cls = self.p("enc.cls");
            let rows = self.tape.value(x).rows();
            let mut src = vec![Some((cls, 0))];
            src.extend((0..rows).map(|r| Some((x, r))));
            let cols = self.tape.value(x).cols();
            let mut v = vec![true];
            v.extend_from_slice(valid);
            (self.tape.rows(src, cols), v)
        } else {
            (x, valid.to_vec())
        };
        for b in 0..cfg.enc_blocks {
            x = self.block(x, &format!("enc.blk{b}"), &valid, cfg.enc_heads());
        }
        (x, valid)
    }

    /// Decoder over `[visible..., mask tokens...]` padded to `width`; returns
    /// the `M x a^3*13` head output.
    fn decode(
        &mut self,
        cfg: &ModelConfig,
        encoded: Var,
        visible: usize,
        pos: Var,
        masked: usize,
        width: usize,
    ) -> Var {
        let offset = usize::from(cfg.class_token);
        let e = self.norm(encoded, "enc.norm");
        let e = self.linear(e, "dec.embed");
        let mask_token = self.p("dec.mask_token");
        let d = cfg.dec_dim;
        let n = visible + masked;
        let mut seq: Vec<Option<(Var, usize)>> = (0..visible).map(|i| Some((e, offset + i))).collect();
        seq.extend((0..masked).map(|_| Some((mask_token, 0))));
        seq.resize(width, None);
        let mut pos_rows: Vec<Option<(Var, usize)>> = (0..n).map(|i| Some((pos, i))).collect();
        pos_rows.resize(width, None);
        let seq = self.tape.rows(seq, d);
        let pos = self.tape.rows(pos_rows, d);
        let mut x = self.tape.add(seq, pos);
        let valid: Vec<bool> = (0..width).map(|i| i < n).collect();
        for b in 0..cfg.dec_blocks {
            x = self.block(x, &format!("dec.blk{b}"), &valid, cfg.dec_heads());
        }
        let x = self.norm(x, "dec.norm");
        let out = self.tape.rows((visible..n).map(|i| Some((x, i))).collect(), d);
        self.linear(out, "dec.head")
    }
}

fn heads_from(m: &Mat, patch_size: u32) -> Vec<HeadOutput> {
    (0..m.rows())
        .map(|r| HeadOutput::new(patch_size, m.row(r).to_vec()).expect("head width"))
        .collect()
}

impl Model {
    pub fn init(config: ModelConfig, tokenizer: TokenizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        tokenizer.validate()?;
        config.check_tokenizer(&tokenizer)?;
        let params = Params::init(&config, &tokenizer, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            config,
            tokenizer,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, tokenizer: TokenizerConfig, params: Params) -> Result<Self> {
        let reference = Self::init(config, tokenizer, 0)?;
        reference.params.check_layout(&params)?;
        Ok(Self { params, ..reference })
    }

    pub fn weight_table(&self) -> WeightTable {
        WeightTable::new(self.config.patch_size, self.config.enc_dim, self.params.get("tok.swi").clone())
            .expect("weight table layout")
    }

    /// The encoder-side positional MLP, shared with the tokenizer.
    pub fn pos_embed(&self) -> PosEmbed {
        self.params.pos_embed("enc.pos")
    }

    /// The decoder's independent positional MLP.
    pub fn dec_pos_embed(&self) -> PosEmbed {
        self.params.pos_embed("dec.pos")
    }

    fn graph(&self) -> Graph<'_> {
        Graph {
            tape: Tape::new(),
            params: &self.params,
            vars: BTreeMap::new(),
        }
    }

    /// Encoder over padded `T x C` token and position matrices. Output rows
    /// follow the input rows, with the class token (if any) prepended.
    pub fn encoder_forward(&self, tokens: &[Mat], pos: &[Mat], mask: &AttentionMask) -> Result<Vec<Mat>> {
        let c = self.config.enc_dim;
        if tokens.len() != pos.len() || tokens.len() != mask.batch() {
            return Err(Error::Shape(format!(
                "{} token sets, {} position sets, {} mask rows",
                tokens.len(),
                pos.len(),
                mask.batch()
            )));
        }
        let mut out = Vec::with_capacity(tokens.len());
        for (b, (t, p)) in tokens.iter().zip(pos).enumerate() {
            let want = (mask.width(), c);
            if t.shape() != want || p.shape() != want {
                return Err(Error::Shape(format!(
                    "sample {b}: tokens {:?} and positions {:?}, expected {want:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            let mut g = self.graph();
            let (tv, pv) = (g.tape.leaf(t.clone()), g.tape.leaf(p.clone()));
            let x = g.tape.add(tv, pv);
            let (y, _) = g.encode(&self.config, x, &mask.valid[b]);
            out.push(g.tape.value(y).clone());
        }
        Ok(out)
    }

    /// Decoder for each sample, padded to the widest sample of the batch.
    pub fn decoder_forward(&self, inputs: &[DecoderInput]) -> Result<Vec<Vec<HeadOutput>>> {
        let (c, d) = (self.config.enc_dim, self.config.dec_dim);
        let offset = usize::from(self.config.class_token);
        let width = inputs
            .iter()
            .map(|i| i.visible + i.pos_masked.rows())
            .max()
            .unwrap_or(0);
        let mut out = Vec::with_capacity(inputs.len());
        for (b, inp) in inputs.iter().enumerate() {
            if inp.encoded.cols() != c
                || inp.encoded.rows() < offset + inp.visible
                || inp.pos_visible.shape() != (inp.visible, d)
                || inp.pos_masked.cols() != d
            {
                return Err(Error::Shape(format!(
                    "sample {b}: encoded {:?} with {} visible, positions {:?} / {:?}, widths C={c} D={d}",
                    inp.encoded.shape(),
                    inp.visible,
                    inp.pos_visible.shape(),
                    inp.pos_masked.shape()
                )));
            }
            let mut g = self.graph();
            let e = g.tape.leaf(inp.encoded.clone());
            let (pv, pm) = (g.tape.leaf(inp.pos_visible.clone()), g.tape.leaf(inp.pos_masked.clone()));
            let m = inp.pos_masked.rows();
            let mut rows: Vec<Option<(Var, usize)>> = (0..inp.visible).map(|i| Some((pv, i))).collect();
            rows.extend((0..m).map(|i| Some((pm, i))));
            let pos = g.tape.rows(rows, d);
            let h = g.decode(&self.config, e, inp.visible, pos, m, width);
            out.push(heads_from(g.tape.value(h), self.config.patch_size));
        }
        Ok(out)
    }

    /// Builds the full forward graph for a batch; returns per-sample head vars.
    fn build(&self, batch: &[Sample]) -> Result<(Graph<'_>, Vec<Var>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let a = self.config.patch_size;
        let cells = (a as usize).pow(3);
        let c = self.config.enc_dim;
        let s = self.tokenizer.space_size;
        let enc_width = batch.iter().map(|x| x.plan.visible.len()).max().unwrap();
        let dec_width = batch.iter().map(|x| x.patches.len()).max().unwrap();
        let mut g = self.graph();
        let mut heads = Vec::with_capacity(batch.len());
        for (b, sample) in batch.iter().enumerate() {
            let vis = &sample.plan.visible;
            let mut sparse = Vec::with_capacity(enc_width);
            for &i in vis {
                let p = &sample.patches[i];
                if p.is_empty() {
                    return Err(Error::InvalidInput(format!("sample {b}: patch {i} is empty")));
                }
                let inv = 1.0 / p.len() as f64;
                let mut row = Vec::with_capacity(p.len() * PATCH_FEATURES);
                for (v, &d) in p.voxels.iter().zip(&p.cell_indices) {
                    if d >= cells {
                        return Err(Error::InvalidInput(format!("sample {b}: cell index {d} out of range")));
                    }
                    row.extend(v.iter().enumerate().map(|(k, &f)| (d * PATCH_FEATURES + k, f * inv)));
                }
                sparse.push(row);
            }
            sparse.resize(enc_width, Vec::new());
            let swi = g.p("tok.swi");
            let tokens = g.tape.sparse_matmul(sparse, swi);
            let pos = g.pos_mlp(position_input(&sample.positions(vis), s), "enc.pos");
            let pos = g.tape.rows((0..enc_width).map(|i| (i < vis.len()).then_some((pos, i))).collect(), c);
            let x = g.tape.add(tokens, pos);
            let valid: Vec<bool> = (0..enc_width).map(|i| i < vis.len()).collect();
            let (encoded, _) = g.encode(&self.config, x, &valid);

            let order: Vec<usize> = vis.iter().chain(&sample.plan.masked).copied().collect();
            let dpos = g.pos_mlp(position_input(&sample.positions(&order), s), "dec.pos");
            heads.push(g.decode(&self.config, encoded, vis.len(), dpos, sample.plan.masked.len(), dec_width));
        }
        Ok((g, heads))
    }

    /// Head outputs for every masked patch of every sample.
    pub fn forward(&self, batch: &[Sample]) -> Result<Vec<Vec<HeadOutput>>> {
        let (g, heads) = self.build(batch)?;
        Ok(heads
            .iter()
            .map(|&h| heads_from(g.tape.value(h), self.config.patch_size))
            .collect())
    }

    /// Chamfer prediction cells the current parameters would pick.
    pub fn selection(&self, batch: &[Sample]) -> Result<Selection> {
        Ok(self
            .forward(batch)?
            .iter()
            .map(|hs| hs.iter().map(HeadOutput::predicted_cells).collect())
            .collect())
    }

    pub fn loss(&self, batch: &[Sample], weights: &LossWeights, selection: Option<&Selection>) -> Result<BatchLoss> {
        Ok(self.evaluate(batch, weights, selection, false)?.0)
    }

    /// Batch loss and the gradient of its total with respect to every
    /// parameter. Samples without masked patches are skipped.
    pub fn loss_and_grad(
        &self,
        batch: &[Sample],
        weights: &LossWeights,
        selection: Option<&Selection>,
    ) -> Result<(BatchLoss, Params)> {
        let (loss, grads) = self.evaluate(batch, weights, selection, true)?;
        Ok((loss, grads.expect("gradients requested")))
    }

    fn evaluate(
        &self,
        batch: &[Sample],
        weights: &LossWeights,
        selection: Option<&Selection>,
        with_grad: bool,
    ) -> Result<(BatchLoss, Option<Params>)> {
        let (g, heads) = self.build(batch)?;
        let counted = batch.iter().filter(|s| !s.targets.is_empty()).count();
        if counted == 0 {
            return Err(Error::InvalidInput("no sample in the batch has a masked patch".into()));
        }
        let mut terms = LossTerms::default();
        let mut seeds = Vec::new();
        for (b, (sample, &h)) in batch.iter().zip(&heads).enumerate() {
            let m = sample.targets.len();
            if m == 0 {
                continue;
            }
            let scale = 1.0 / (m * counted) as f64;
            let out = heads_from(g.tape.value(h), self.config.patch_size);
            let mut seed = Mat::zeros(m, self.config.head_width());
            for (j, (t, pred)) in sample.targets.iter().zip(&out).enumerate() {
                let sel = selection.map(|s| s[b][j].as_slice());
                let (pt, grad) = patch_loss_grad(t, pred, weights, sel)?;
                terms.add_scaled(&pt, scale);
                seed.row_mut(j).iter_mut().zip(&grad).for_each(|(s, g)| *s = g * scale);
            }
            seeds.push((h, seed));
        }
        if let Some(term) = terms.non_finite() {
            return Err(Error::NonFinite { term, step: None });
        }
        let loss = BatchLoss {
            total: terms.total(weights),
            terms,
        };
        if !with_grad {
            return Ok((loss, None));
        }
        let grads = g.tape.backward(seeds);
        let mut out = self.params.zeros_like();
        for (name, v) in &g.vars {
            if let Some(gm) = &grads[v.index()] {
                *out.get_mut(name) = gm.clone();
            }
        }
        Ok((loss, Some(out)))
    }
}
