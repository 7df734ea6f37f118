//! Similarity, overlap and smoothness terms and their weighted composite
//! `alpha * (-MI) + lambda * (1 - mean Dice) + beta * bending`.

mod bending;
mod dice;
mod mi;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use bending::{bending_defined, bending_energy, bending_gradient};
pub use dice::{soft_dice, soft_dice_gated, soft_dice_gradient, DICE_EPSILON};
pub use mi::{mi_gradient, mutual_information, IntensityRange, MISpec};

pub(crate) use bending::bending_energy_into;
pub(crate) use dice::SoftDice;
pub(crate) use mi::MutualInformation;

use crate::error::{Error, Result};
use crate::volume::{add_fields, DisplacementField, LabelMask, LossWeights, Volume3D, VolumeGrid};
use crate::warp::{warp_data, warp_with_gradient, InterpSpec, Padding};

/// Per-voxel contribution weights in `[0, 1]` restricting a loss to a region.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    grid: VolumeGrid,
    weights: Vec<f64>,
}

impl SampleMask {
    /// Voxels of `mask` whose label is in `labels` (body expands to the whole
    /// foreground).
    pub fn from_labels(mask: &LabelMask, labels: &BTreeSet<u8>) -> Self {
        let weights = mask
            .region(labels)
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        Self {
            grid: *mask.grid(),
            weights,
        }
    }

    pub fn from_weights(grid: VolumeGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument(
                "sample weights must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { grid, weights })
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Values of the three terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mutual information in nats (higher is better).
    pub mi: f64,
    /// Mean soft Dice over the organs (higher is better); 1 with no organs.
    pub dice: f64,
    pub bending: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn new(mi: f64, dice: f64, bending: f64, weights: LossWeights) -> Self {
        let total = weights.alpha * -mi + weights.lambda * (1.0 - dice) + weights.beta * bending;
        Self {
            mi,
            dice,
            bending,
            total,
            weights,
        }
    }
}

/// Prepared loss for one fixed/moving pair at one resolution: fixed-side
/// histogram weights and organ indicators are computed once.
pub(crate) struct LossContext {
    grid: VolumeGrid,
    moving: Vec<f64>,
    moving_organs: Vec<Vec<f64>>,
    mi: MutualInformation,
    dice: Option<SoftDice>,
    weights: LossWeights,
    padding: Padding,
}

impl LossContext {
    /// `fixed_organs` / `moving_organs` are indicator (or pooled soft
    /// indicator) volumes, one per organ. An automatic MI range is resolved
    /// from the fixed and moving intensities and kept for every evaluation.
    pub(crate) fn new(
        fixed: &Volume3D,
        moving: &Volume3D,
        fixed_organs: Vec<Vec<f64>>,
        moving_organs: Vec<Vec<f64>>,
        weights: LossWeights,
        mi_spec: &MISpec,
        padding: Padding,
    ) -> Result<Self> {
        fixed.grid().ensure_matches(moving.grid(), "loss context")?;
        weights.validate()?;
        if fixed_organs.len() != moving_organs.len() {
            return Err(Error::InvalidArgument(
                "organ indicator count mismatch".into(),
            ));
        }
        let mut spec = mi_spec.clone();
        if spec.intensity_range == IntensityRange::Auto {
            let (flo, fhi) = fixed.min_max();
            let (mut lo, mut hi) = moving.min_max();
            lo = lo.min(flo);
            hi = hi.max(fhi);
            if padding == Padding::Zeros {
                lo = lo.min(0.0);
                hi = hi.max(0.0);
            }
            if hi > lo {
                spec.intensity_range = IntensityRange::Explicit { lo, hi };
            }
        }
        let region = spec.sample_mask.as_ref().map(|m| m.weights().to_vec());
        let mi = MutualInformation::new(fixed.data(), fixed.data(), &spec)?;
        let dice = (!fixed_organs.is_empty()).then(|| SoftDice::new(fixed_organs, region));
        Ok(Self {
            grid: *fixed.grid(),
            moving: moving.data().to_vec(),
            moving_organs,
            mi,
            dice,
            weights,
            padding,
        })
    }

    pub(crate) fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    /// Loss of warping with `incoming + stage`, regularizing `stage`.
    #[cfg(test)]
    pub(crate) fn evaluate(
        &self,
        incoming: &DisplacementField,
        stage: &DisplacementField,
    ) -> LossBreakdown {
        let total = add_fields(incoming, stage).expect("context grids agree");
        let spec = InterpSpec {
            padding: self.padding,
            ..InterpSpec::default()
        };
        let warped = warp_data(&self.moving, &total, spec, Default::default());
        let mi = self.mi.value(warped.data());
        let dice = match &self.dice {
            Some(d) => {
                let probs: Vec<Vec<f64>> = self
                    .moving_organs
                    .iter()
                    .map(|m| warp_data(m, &total, spec, Default::default()).into_data())
                    .collect();
                d.mean(&probs)
            }
            None => 1.0,
        };
        let be = bending_energy(stage);
        LossBreakdown::new(mi, dice, be, self.weights)
    }

    /// Loss and its gradient with respect to `stage`.
    pub(crate) fn evaluate_with_gradient(
        &self,
        incoming: &DisplacementField,
        stage: &DisplacementField,
    ) -> (LossBreakdown, Vec<[f64; 3]>) {
        let total = add_fields(incoming, stage).expect("context grids agree");
        let n = self.grid.len();
        let mut grad = vec![[0.0; 3]; n];
        let w = self.weights;

        let (warped, spatial) = warp_with_gradient(&self.moving, &total, self.padding);
        let (mi, dmi) = self.mi.value_and_intensity_gradient(&warped);
        if w.alpha > 0.0 {
            for i in 0..n {
                let s = -w.alpha * dmi[i];
                for c in 0..3 {
                    grad[i][c] += s * spatial[i][c];
                }
            }
        }

        let dice = match &self.dice {
            Some(d) => {
                let (probs, sp): (Vec<_>, Vec<_>) = self
                    .moving_organs
                    .iter()
                    .map(|m| warp_with_gradient(m, &total, self.padding))
                    .unzip();
                let (mean, dp) = d.mean_and_gradient(&probs);
                if w.lambda > 0.0 {
                    for (dk, sk) in dp.iter().zip(&sp) {
                        for i in 0..n {
                            let s = -w.lambda * dk[i];
                            for c in 0..3 {
                                grad[i][c] += s * sk[i][c];
                            }
                        }
                    }
                }
                mean
            }
            None => 1.0,
        };

        let be = if w.beta > 0.0 {
            bending_energy_into(stage.vectors(), self.grid.dims(), Some(&mut grad), w.beta)
        } else {
            bending_energy(stage)
        };
        (LossBreakdown::new(mi, dice, be, w), grad)
    }
}

/// Warps the moving image and organ indicators with `field` and evaluates
/// all three terms. MI and Dice sums are gated by `mi_spec.sample_mask`.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    fixed: &Volume3D,
    moving: &Volume3D,
    field: &DisplacementField,
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    organ_labels: &[u8],
    weights: LossWeights,
    mi_spec: &MISpec,
) -> Result<LossBreakdown> {
    let grid = fixed.grid();
    grid.ensure_matches(moving.grid(), "composite_loss moving")?;
    grid.ensure_matches(field.grid(), "composite_loss field")?;
    grid.ensure_matches(fixed_mask.grid(), "composite_loss fixed mask")?;
    grid.ensure_matches(moving_mask.grid(), "composite_loss moving mask")?;
    weights.validate()?;
    if !weights.has_data_term() {
        return Err(Error::InvalidArgument(
            "alpha + lambda must be positive".into(),
        ));
    }
    let warped = warp_data(moving.data(), field, InterpSpec::default(), moving.unit());
    let mi = mutual_information(fixed, &warped, mi_spec)?;
    let dice = if organ_labels.is_empty() {
        1.0
    } else {
        let probs: Vec<Volume3D> = organ_labels
            .iter()
            .map(|&l| {
                moving_mask.ensure_known(l)?;
                Ok(warp_data(
                    moving_mask.organ_indicator(l).data(),
                    field,
                    InterpSpec::default(),
                    Default::default(),
                ))
            })
            .collect::<Result<_>>()?;
        soft_dice_gated(
            fixed_mask,
            &probs,
            organ_labels,
            mi_spec.sample_mask.as_ref(),
        )?
    };
    Ok(LossBreakdown::new(mi, dice, bending_energy(field), weights))
}
