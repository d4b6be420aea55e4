use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, Sample};
use crate::error::Result;
use crate::loss::LossWeights;

/// Denominator floor of the relative error, so that parameters with
/// vanishing gradients are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Central finite differences on randomly chosen scalars (tensor uniformly,
/// then an element uniformly). The Chamfer prediction set is frozen at the
/// unperturbed parameters so the objective is smooth in each probe.
pub fn gradcheck(model: &Model, batch: &[Sample], weights: &LossWeights, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let selection = model.selection(batch)?;
    let (_, grads) = model.loss_and_grad(batch, weights, Some(&selection))?;
    let names = model.params.names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let name = &names[rng.random_range(0..names.len())];
        let index = rng.random_range(0..model.params.get(name).data().len());
        let base = model.params.get(name).data()[index];
        let mut eval = |x: f64| -> Result<f64> {
            probe.params.get_mut(name).data_mut()[index] = x;
            Ok(probe.loss(batch, weights, Some(&selection))?.total)
        };
        let up = eval(base + cfg.step)?;
        let down = eval(base - cfg.step)?;
        probe.params.get_mut(name).data_mut()[index] = base;
        let numeric = (up - down) / (2.0 * cfg.step);
        let analytic = grads.get(name).data()[index];
        entries.push(GradCheckEntry {
            name: name.clone(),
            index,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_err,
        tolerance: cfg.tolerance,
    })
}
