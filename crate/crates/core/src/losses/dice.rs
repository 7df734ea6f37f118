//! Soft Dice overlap on trilinearly warped organ indicators.

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, LabelMask, Volume3D};
use crate::warp::{warp_with_gradient, InterpSpec};

use super::SampleMask;

pub const DICE_EPSILON: f64 = 1e-6;

/// Fixed-side organ indicators (possibly soft after pooling) and the optional
/// region gate.
pub(crate) struct SoftDice {
    fixed: Vec<Vec<f64>>,
    region: Option<Vec<f64>>,
    sum_g: Vec<f64>,
}

impl SoftDice {
    pub(crate) fn new(fixed: Vec<Vec<f64>>, region: Option<Vec<f64>>) -> Self {
        let sum_g = fixed
            .iter()
            .map(|g| match &region {
                Some(r) => g.iter().zip(r).map(|(a, b)| a * b).sum(),
                None => g.iter().sum(),
            })
            .collect();
        Self {
            fixed,
            region,
            sum_g,
        }
    }

    #[inline]
    fn r(&self, i: usize) -> f64 {
        self.region.as_ref().map_or(1.0, |r| r[i])
    }

    fn sums(&self, k: usize, p: &[f64]) -> (f64, f64) {
        let g = &self.fixed[k];
        let mut inter = 0.0;
        let mut sum_p = 0.0;
        for i in 0..p.len() {
            let r = self.r(i);
            inter += r * p[i] * g[i];
            sum_p += r * p[i];
        }
        (inter, sum_p + self.sum_g[k] + DICE_EPSILON)
    }

    pub(crate) fn per_organ(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        (0..self.fixed.len())
            .map(|k| {
                let (inter, denom) = self.sums(k, &probs[k]);
                2.0 * inter / denom
            })
            .collect()
    }

    pub(crate) fn mean(&self, probs: &[Vec<f64>]) -> f64 {
        let d = self.per_organ(probs);
        d.iter().sum::<f64>() / d.len() as f64
    }

    /// Mean Dice and `d(mean Dice)/dp_k` for every organ.
    pub(crate) fn mean_and_gradient(&self, probs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n_org = self.fixed.len() as f64;
        let mut mean = 0.0;
        let mut grads = Vec::with_capacity(self.fixed.len());
        for (k, p) in probs.iter().enumerate() {
            let (inter, denom) = self.sums(k, p);
            mean += 2.0 * inter / denom / n_org;
            let g = &self.fixed[k];
            let a = 2.0 / denom;
            let b = 2.0 * inter / (denom * denom);
            grads.push(
                (0..p.len())
                    .map(|i| self.r(i) * (a * g[i] - b) / n_org)
                    .collect(),
            );
        }
        (mean, grads)
    }
}

fn organ_indicators(mask: &LabelMask, organ_labels: &[u8]) -> Result<Vec<Vec<f64>>> {
    organ_labels
        .iter()
        .map(|&l| {
            mask.ensure_known(l)?;
            Ok(mask.organ_indicator(l).into_data())
        })
        .collect()
}

fn check_probabilities(probs: &[Volume3D]) -> Result<()> {
    for p in probs {
        if p.data()
            .iter()
            .any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v))
        {
            return Err(Error::InvalidArgument(
                "soft Dice probabilities must lie in [0, 1]".into(),
            ));
        }
    }
    Ok(())
}

/// Mean over organs of `2 Σ p g / (Σ p + Σ g + ε)`, with `g` the binary fixed
/// indicator of each organ.
pub fn soft_dice(
    fixed_mask: &LabelMask,
    warped_organ_probs: &[Volume3D],
    organ_labels: &[u8],
) -> Result<f64> {
    soft_dice_gated(fixed_mask, warped_organ_probs, organ_labels, None)
}

/// [`soft_dice`] with every sum restricted to a sample region.
pub fn soft_dice_gated(
    fixed_mask: &LabelMask,
    warped_organ_probs: &[Volume3D],
    organ_labels: &[u8],
    region: Option<&SampleMask>,
) -> Result<f64> {
    if organ_labels.is_empty() || organ_labels.len() != warped_organ_probs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probability volumes for {} organ labels",
            warped_organ_probs.len(),
            organ_labels.len()
        )));
    }
    for p in warped_organ_probs {
        fixed_mask.grid().ensure_matches(p.grid(), "soft_dice")?;
    }
    check_probabilities(warped_organ_probs)?;
    let dice = SoftDice::new(
        organ_indicators(fixed_mask, organ_labels)?,
        region.map(|r| r.weights().to_vec()),
    );
    let probs: Vec<Vec<f64>> = warped_organ_probs
        .iter()
        .map(|p| p.data().to_vec())
        .collect();
    Ok(dice.mean(&probs))
}

/// Gradient of `1 - mean soft Dice` with respect to the field, where the
/// probabilities are the moving organ indicators warped trilinearly.
pub fn soft_dice_gradient(
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    organ_labels: &[u8],
    field: &DisplacementField,
    interp: InterpSpec,
) -> Result<DisplacementField> {
    if organ_labels.is_empty() {
        return Err(Error::InvalidArgument("empty organ list".into()));
    }
    fixed_mask
        .grid()
        .ensure_matches(moving_mask.grid(), "soft_dice_gradient")?;
    fixed_mask
        .grid()
        .ensure_matches(field.grid(), "soft_dice_gradient")?;
    let dice = SoftDice::new(organ_indicators(fixed_mask, organ_labels)?, None);
    let moving = organ_indicators(moving_mask, organ_labels)?;
    let (probs, spatial): (Vec<_>, Vec<_>) = moving
        .iter()
        .map(|m| warp_with_gradient(m, field, interp.padding))
        .unzip();
    let (_, dp) = dice.mean_and_gradient(&probs);
    let mut out = vec![[0.0; 3]; field.grid().len()];
    for (dk, sk) in dp.iter().zip(&spatial) {
        for i in 0..out.len() {
            for c in 0..3 {
                out[i][c] -= dk[i] * sk[i][c];
            }
        }
    }
    Ok(DisplacementField::from_parts(*field.grid(), out))
}
