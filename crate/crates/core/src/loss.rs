//! Reconstruction losses over the cells of a masked patch: feature MSE,
//! Chamfer distance between coordinate sets, and occupancy BCE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Patch;

/// Values per cell in a head output: `[x, y, z, e0..e8, logit]`.
pub const HEAD_FIELDS: usize = 13;
pub const E_FEATURES: usize = 9;
const LOGIT: usize = 12;

/// Predicted occupancy probabilities are clamped to `[OCC_CLAMP, 1 - OCC_CLAMP]`.
pub const OCC_CLAMP: f64 = 1e-7;

/// Ground truth for one masked patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTarget {
    patch_size: u32,
    /// Occupied cell indices, ascending.
    cells: Vec<usize>,
    coords: Vec<[f64; 3]>,
    features: Vec<[f64; E_FEATURES]>,
    occupancy: Vec<bool>,
}

impl PatchTarget {
    pub fn new(
        patch_size: u32,
        cells: Vec<usize>,
        coords: Vec<[f64; 3]>,
        features: Vec<[f64; E_FEATURES]>,
    ) -> Result<Self> {
        let n = (patch_size as usize).pow(3);
        if cells.is_empty() {
            return Err(Error::InvalidInput("target patch has no occupied cells".into()));
        }
        if coords.len() != cells.len() || features.len() != cells.len() {
            return Err(Error::Shape(format!(
                "{} cells but {} coordinates and {} feature rows",
                cells.len(),
                coords.len(),
                features.len()
            )));
        }
        let mut occupancy = vec![false; n];
        for &d in &cells {
            if d >= n {
                return Err(Error::InvalidInput(format!("cell index {d} outside patch of {n} cells")));
            }
            if occupancy[d] {
                return Err(Error::InvalidInput(format!("cell index {d} repeated")));
            }
            occupancy[d] = true;
        }
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by_key(|&i| cells[i]);
        Ok(Self {
            patch_size,
            cells: order.iter().map(|&i| cells[i]).collect(),
            coords: order.iter().map(|&i| coords[i]).collect(),
            features: order.iter().map(|&i| features[i]).collect(),
            occupancy,
        })
    }

    pub fn from_patch(patch: &Patch, patch_size: u32) -> Result<Self> {
        let coords = patch.voxels.iter().map(|v| [v[0], v[1], v[2]]).collect();
        let features = patch
            .voxels
            .iter()
            .map(|v| std::array::from_fn(|k| v[3 + k]))
            .collect();
        Self::new(patch_size, patch.cell_indices.clone(), coords, features)
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn num_cells(&self) -> usize {
        self.occupancy.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn features(&self) -> &[[f64; E_FEATURES]] {
        &self.features
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }
}

/// Dense per-cell prediction for one masked patch, `a^3 x 13` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    patch_size: u32,
    values: Vec<f64>,
}

impl HeadOutput {
    pub fn new(patch_size: u32, values: Vec<f64>) -> Result<Self> {
        let want = (patch_size as usize).pow(3) * HEAD_FIELDS;
        if values.len() != want {
            return Err(Error::Shape(format!("head output has {} values, expected {want}", values.len())));
        }
        Ok(Self { patch_size, values })
    }

    pub fn zeros(patch_size: u32) -> Self {
        Self {
            patch_size,
            values: vec![0.0; (patch_size as usize).pow(3) * HEAD_FIELDS],
        }
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn num_cells(&self) -> usize {
        self.values.len() / HEAD_FIELDS
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, d: usize) -> &[f64] {
        &self.values[d * HEAD_FIELDS..(d + 1) * HEAD_FIELDS]
    }

    pub fn coord(&self, d: usize) -> [f64; 3] {
        let c = self.cell(d);
        [c[0], c[1], c[2]]
    }

    pub fn features(&self, d: usize) -> &[f64] {
        &self.cell(d)[3..3 + E_FEATURES]
    }

    pub fn logit(&self, d: usize) -> f64 {
        self.cell(d)[LOGIT]
    }

    pub fn logits(&self) -> Vec<f64> {
        (0..self.num_cells()).map(|d| self.logit(d)).collect()
    }

    /// Cells whose occupancy probability exceeds 1/2; if none do, the single
    /// highest-logit cell (lowest index on ties).
    pub fn predicted_cells(&self) -> Vec<usize> {
        let on: Vec<usize> = (0..self.num_cells()).filter(|&d| self.logit(d) > 0.0).collect();
        if !on.is_empty() {
            return on;
        }
        let mut best = 0;
        for d in 1..self.num_cells() {
            if self.logit(d) > self.logit(best) {
                best = d;
            }
        }
        vec![best]
    }
}

fn check_pair(target: &PatchTarget, pred: &HeadOutput) -> Result<()> {
    if target.patch_size != pred.patch_size {
        return Err(Error::Shape(format!(
            "target patch size {} but prediction patch size {}",
            target.patch_size, pred.patch_size
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Mean squared L2 error of the 9 non-coordinate features at the ground-truth
/// occupied cells.
pub fn mse_loss(target: &PatchTarget, pred: &HeadOutput) -> Result<f64> {
    check_pair(target, pred)?;
    let mut sum = 0.0;
    for (&d, e) in target.cells.iter().zip(&target.features) {
        sum += e.iter().zip(pred.features(d)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / target.cells.len() as f64)
}

/// Index of the nearest point in `set` (lowest index on ties).
fn nearest(p: &[f64; 3], set: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Symmetric Chamfer distance with squared distances, each direction averaged.
pub fn chamfer_loss(gt: &[[f64; 3]], pred: &[[f64; 3]]) -> Result<f64> {
    if gt.is_empty() || pred.is_empty() {
        return Err(Error::InvalidInput("Chamfer distance of an empty set".into()));
    }
    let fwd: f64 = gt.iter().map(|g| nearest(g, pred).1).sum::<f64>() / gt.len() as f64;
    let bwd: f64 = pred.iter().map(|p| nearest(p, gt).1).sum::<f64>() / pred.len() as f64;
    Ok(fwd + bwd)
}

/// Gradient of [`chamfer_loss`] with respect to each predicted point.
pub fn chamfer_grad(gt: &[[f64; 3]], pred: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    let loss = chamfer_loss(gt, pred)?;
    let mut grad = vec![[0.0; 3]; pred.len()];
    let (ng, np) = (gt.len() as f64, pred.len() as f64);
    for g in gt {
        let (j, _) = nearest(g, pred);
        for k in 0..3 {
            grad[j][k] += 2.0 * (pred[j][k] - g[k]) / ng;
        }
    }
    for (j, p) in pred.iter().enumerate() {
        let (i, _) = nearest(p, gt);
        for k in 0..3 {
            grad[j][k] += 2.0 * (p[k] - gt[i][k]) / np;
        }
    }
    Ok((loss, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamped_prob(logit: f64) -> (f64, bool) {
    let p = sigmoid(logit);
    let c = p.clamp(OCC_CLAMP, 1.0 - OCC_CLAMP);
    (c, c != p)
}

/// Binary cross-entropy between occupancy and clamped sigmoid probabilities,
/// averaged over all cells.
pub fn occupancy_loss(occupancy: &[bool], logits: &[f64]) -> Result<f64> {
    if occupancy.len() != logits.len() {
        return Err(Error::Shape(format!(
            "{} occupancy flags but {} logits",
            occupancy.len(),
            logits.len()
        )));
    }
    let probs: Vec<f64> = logits.iter().map(|&l| clamped_prob(l).0).collect();
    occupancy_loss_probs(occupancy, &probs)
}

/// Same as [`occupancy_loss`] but from probabilities (clamped here as well).
pub fn occupancy_loss_probs(occupancy: &[bool], probs: &[f64]) -> Result<f64> {
    if occupancy.len() != probs.len() || occupancy.is_empty() {
        return Err(Error::Shape(format!(
            "{} occupancy flags but {} probabilities",
            occupancy.len(),
            probs.len()
        )));
    }
    let sum: f64 = occupancy
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let p = p.clamp(OCC_CLAMP, 1.0 - OCC_CLAMP);
            if o {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / occupancy.len() as f64)
}

pub fn total_loss(mse: f64, cd: f64, occ: f64) -> f64 {
    mse + cd + occ
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mse: f64,
    pub chamfer: f64,
    pub occupancy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            chamfer: 1.0,
            occupancy: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub mse: f64,
    pub chamfer: f64,
    pub occupancy: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(w.mse * self.mse, w.chamfer * self.chamfer, w.occupancy * self.occupancy)
    }

    pub fn add_scaled(&mut self, other: &LossTerms, s: f64) {
        self.mse += s * other.mse;
        self.chamfer += s * other.chamfer;
        self.occupancy += s * other.occupancy;
    }

    /// The first non-finite term, by name.
    pub fn non_finite(&self) -> Option<&'static str> {
        [("mse", self.mse), ("chamfer", self.chamfer), ("occupancy", self.occupancy)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// All three terms for one patch plus the gradient of the weighted total with
/// respect to every head value. The Chamfer prediction set is `selection` if
/// given, else [`HeadOutput::predicted_cells`].
pub fn patch_loss_grad(
    target: &PatchTarget,
    pred: &HeadOutput,
    weights: &LossWeights,
    selection: Option<&[usize]>,
) -> Result<(LossTerms, Vec<f64>)> {
    check_pair(target, pred)?;
    let mut grad = vec![0.0; pred.values.len()];

    let mse = mse_loss(target, pred)?;
    let scale = 2.0 * weights.mse / target.cells.len() as f64;
    for (&d, e) in target.cells.iter().zip(&target.features) {
        for k in 0..E_FEATURES {
            grad[d * HEAD_FIELDS + 3 + k] += scale * (pred.features(d)[k] - e[k]);
        }
    }

    let chosen = match selection {
        Some(s) => s.to_vec(),
        None => pred.predicted_cells(),
    };
    let pts: Vec<[f64; 3]> = chosen.iter().map(|&d| pred.coord(d)).collect();
    let (chamfer, cgrad) = chamfer_grad(&target.coords, &pts)?;
    for (&d, g) in chosen.iter().zip(&cgrad) {
        for k in 0..3 {
            grad[d * HEAD_FIELDS + k] += weights.chamfer * g[k];
        }
    }

    let logits = pred.logits();
    let occupancy = occupancy_loss(&target.occupancy, &logits)?;
    let n = logits.len() as f64;
    for (d, (&l, &o)) in logits.iter().zip(&target.occupancy).enumerate() {
        let (p, clamped) = clamped_prob(l);
        if !clamped {
            let o = if o { 1.0 } else { 0.0 };
            grad[d * HEAD_FIELDS + LOGIT] += weights.occupancy * (p - o) / n;
        }
    }

    Ok((LossTerms { mse, chamfer, occupancy }, grad))
}

pub fn patch_loss(target: &PatchTarget, pred: &HeadOutput) -> Result<LossTerms> {
    let gt = target.coords.clone();
    let pts: Vec<[f64; 3]> = pred.predicted_cells().iter().map(|&d| pred.coord(d)).collect();
    Ok(LossTerms {
        mse: mse_loss(target, pred)?,
        chamfer: chamfer_loss(&gt, &pts)?,
        occupancy: occupancy_loss(&target.occupancy, &pred.logits())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn target(a: u32, cells: &[usize]) -> PatchTarget {
        let coords = cells.iter().map(|&d| [d as f64 * 0.1, 0.2, 0.3]).collect();
        let feats = cells.iter().map(|&d| [d as f64 * 0.01; E_FEATURES]).collect();
        PatchTarget::new(a, cells.to_vec(), coords, feats).unwrap()
    }

    #[test]
    fn mse_examples() {
        let t = target(2, &[3, 5]);
        let mut pred = HeadOutput::zeros(2);
        for &d in t.cells() {
            let e = t.features()[t.cells().iter().position(|&c| c == d).unwrap()];
            pred.values_mut()[d * HEAD_FIELDS + 3..d * HEAD_FIELDS + 12].copy_from_slice(&e);
        }
        assert_eq!(mse_loss(&t, &pred).unwrap(), 0.0);

        let mut e = [0.0; E_FEATURES];
        e[0] = 1.0;
        let t = PatchTarget::new(2, vec![0], vec![[0.0; 3]], vec![e]).unwrap();
        assert_eq!(mse_loss(&t, &HeadOutput::zeros(2)).unwrap(), 1.0);

        let mut e3 = [0.0; E_FEATURES];
        e3[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let t = PatchTarget::new(2, vec![1, 4], vec![[0.0; 3]; 2], vec![e, e3]).unwrap();
        assert_eq!(mse_loss(&t, &HeadOutput::zeros(2)).unwrap(), 2.0);
        assert!(mse_loss(&t, &HeadOutput::zeros(1)).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
        assert_eq!(chamfer_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_loss(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        assert_eq!(chamfer_loss(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap(), 0.5);
        assert!(chamfer_loss(&[], &a).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let l = (0.9f64 / 0.1).ln();
        let v = occupancy_loss(&[true, false], &[l, -l]).unwrap();
        assert!((v - 0.10536051565782628).abs() < 1e-12);
        for o in [[true, true], [false, true], [false, false]] {
            let v = occupancy_loss(&o, &[0.0, 0.0]).unwrap();
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let v = occupancy_loss(&[true, false], &[50.0, -50.0]).unwrap();
        assert!(v <= 1e-6);
        assert!(occupancy_loss(&[true], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(0.0, 0.0, 0.0), 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0), 6.0);
        let t = LossTerms { mse: 1.0, chamfer: 2.0, occupancy: 3.0 };
        let w = LossWeights { chamfer: 0.0, ..Default::default() };
        assert_eq!(t.total(&LossWeights::default()) - t.total(&w), 2.0);
        assert_eq!(
            LossTerms { mse: f64::NAN, ..t }.non_finite(),
            Some("mse")
        );
    }

    #[test]
    fn target_validation() {
        assert!(PatchTarget::new(2, vec![], vec![], vec![]).is_err());
        assert!(PatchTarget::new(2, vec![8], vec![[0.0; 3]], vec![[0.0; 9]]).is_err());
        assert!(PatchTarget::new(2, vec![1, 1], vec![[0.0; 3]; 2], vec![[0.0; 9]; 2]).is_err());
        let t = target(2, &[6, 2]);
        assert_eq!(t.cells(), &[2, 6]);
        assert_eq!(t.occupancy().iter().filter(|&&o| o).count(), 2);
    }

    #[test]
    fn selection_rule() {
        let mut p = HeadOutput::zeros(2);
        p.values_mut()[5 * HEAD_FIELDS + LOGIT] = -0.5;
        for d in [0, 1, 2, 3, 4, 6, 7] {
            p.values_mut()[d * HEAD_FIELDS + LOGIT] = -1.0;
        }
        assert_eq!(p.predicted_cells(), vec![5]);
        p.values_mut()[2 * HEAD_FIELDS + LOGIT] = 0.1;
        p.values_mut()[7 * HEAD_FIELDS + LOGIT] = 3.0;
        assert_eq!(p.predicted_cells(), vec![2, 7]);
        assert_eq!(HeadOutput::zeros(2).predicted_cells(), vec![0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = PatchTarget::new(
            2,
            vec![0, 3, 6],
            (0..3).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
            (0..3).map(|_| std::array::from_fn(|_| rng.random())).collect(),
        )
        .unwrap();
        let vals: Vec<f64> = (0..8 * HEAD_FIELDS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pred = HeadOutput::new(2, vals).unwrap();
        let w = LossWeights { mse: 1.0, chamfer: 0.7, occupancy: 1.3 };
        let sel = pred.predicted_cells();
        let (_, grad) = patch_loss_grad(&t, &pred, &w, Some(&sel)).unwrap();
        let h = 1e-6;
        for i in 0..pred.values().len() {
            let eval = |delta: f64| {
                let mut p = pred.clone();
                p.values_mut()[i] += delta;
                patch_loss_grad(&t, &p, &w, Some(&sel)).unwrap().0.total(&w)
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-7, "value {i}: {num} vs {}", grad[i]);
        }
    }

    fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let one = |x: &[[f64; 3]], y: &[[f64; 3]]| {
            let mut s = 0.0;
            for p in x {
                let mut m = f64::INFINITY;
                for q in y {
                    m = m.min((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2));
                }
                s += m;
            }
            s / x.len() as f64
        };
        one(a, b) + one(b, a)
    }

    fn points() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..16)
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_and_matches_loop(a in points(), b in points()) {
            let ab = chamfer_loss(&a, &b).unwrap();
            prop_assert_eq!(ab, chamfer_loss(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - brute_chamfer(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn occupancy_nonnegative(o in prop::collection::vec(any::<bool>(), 1..64), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits: Vec<f64> = o.iter().map(|_| rng.random_range(-30.0..30.0)).collect();
            prop_assert!(occupancy_loss(&o, &logits).unwrap() >= 0.0);
        }
    }
}
