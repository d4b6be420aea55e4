use std::collections::BTreeMap;

use rand::Rng;

use super::{ModelConfig, MLP_RATIO};
use crate::error::{Error, Result};
use crate::io::Tensor;
use crate::tensor::Mat;
use crate::tokenizer::{PosEmbed, TokenizerConfig, WeightTable};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Mat>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> &Mat {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|m| m.data().len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, m)| (k.clone(), Mat::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        self.tensors
            .iter()
            .map(|(k, m)| m.max_abs_diff(other.get(k)))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Mat::is_finite)
    }

    /// Same names and shapes as `self`.
    pub fn check_layout(&self, other: &Params) -> Result<()> {
        for (k, m) in &self.tensors {
            match other.tensors.get(k) {
                None => return Err(Error::Shape(format!("missing parameter '{k}'"))),
                Some(o) if o.shape() != m.shape() => {
                    return Err(Error::Shape(format!(
                        "parameter '{k}' has shape {:?}, expected {:?}",
                        o.shape(),
                        m.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(k) = other.tensors.keys().find(|k| !self.tensors.contains_key(*k)) {
            return Err(Error::Shape(format!("unexpected parameter '{k}'")));
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|(k, m)| Tensor::from_mat(k.clone(), m)).collect()
    }

    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        let mut p = Self::new();
        for t in tensors {
            if p.contains(&t.name) {
                return Err(Error::Shape(format!("duplicate parameter '{}'", t.name)));
            }
            p.insert(t.name.clone(), t.to_mat()?);
        }
        Ok(p)
    }

    pub(super) fn pos_embed(&self, prefix: &str) -> PosEmbed {
        PosEmbed {
            w1: self.get(&format!("{prefix}.l1.w")).clone(),
            b1: self.get(&format!("{prefix}.l1.b")).clone(),
            w2: self.get(&format!("{prefix}.l2.w")).clone(),
            b2: self.get(&format!("{prefix}.l2.b")).clone(),
        }
    }

    fn insert_pos(&mut self, prefix: &str, pe: PosEmbed) {
        self.insert(format!("{prefix}.l1.w"), pe.w1);
        self.insert(format!("{prefix}.l1.b"), pe.b1);
        self.insert(format!("{prefix}.l2.w"), pe.w2);
        self.insert(format!("{prefix}.l2.b"), pe.b2);
    }

    fn insert_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        self.insert(format!("{prefix}.w"), Mat::xavier(fan_in, fan_out, rng));
        self.insert(format!("{prefix}.b"), Mat::zeros(1, fan_out));
    }

    fn insert_norm(&mut self, prefix: &str, dim: usize) {
        self.insert(format!("{prefix}.g"), Mat::from_vec(1, dim, vec![1.0; dim]));
        self.insert(format!("{prefix}.b"), Mat::zeros(1, dim));
    }

    fn insert_block(&mut self, prefix: &str, dim: usize, rng: &mut impl Rng) {
        self.insert_norm(&format!("{prefix}.ln1"), dim);
        for proj in ["q", "k", "v", "o"] {
            self.insert_linear(&format!("{prefix}.attn.{proj}"), dim, dim, rng);
        }
        self.insert_norm(&format!("{prefix}.ln2"), dim);
        self.insert_linear(&format!("{prefix}.mlp.l1"), dim, MLP_RATIO * dim, rng);
        self.insert_linear(&format!("{prefix}.mlp.l2"), MLP_RATIO * dim, dim, rng);
    }

    pub(super) fn init(cfg: &ModelConfig, tok: &TokenizerConfig, rng: &mut impl Rng) -> Self {
        let (c, d, h) = (cfg.enc_dim, cfg.dec_dim, tok.posembed_hidden);
        let mut p = Self::new();
        p.insert("tok.swi", WeightTable::init(cfg.patch_size, c, rng).into_matrix());
        p.insert_pos("enc.pos", PosEmbed::init(h, c, rng));
        if cfg.class_token {
            p.insert("enc.cls", Mat::uniform(1, c, 0.02, rng));
        }
        for b in 0..cfg.enc_blocks {
            p.insert_block(&format!("enc.blk{b}"), c, rng);
        }
        p.insert_norm("enc.norm", c);
        p.insert_linear("dec.embed", c, d, rng);
        p.insert("dec.mask_token", Mat::uniform(1, d, 0.02, rng));
        p.insert_pos("dec.pos", PosEmbed::init(h, d, rng));
        for b in 0..cfg.dec_blocks {
            p.insert_block(&format!("dec.blk{b}"), d, rng);
        }
        p.insert_norm("dec.norm", d);
        p.insert_linear("dec.head", d, cfg.head_width(), rng);
        p
    }
}
