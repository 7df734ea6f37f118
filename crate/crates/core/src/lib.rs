//! Decomposed multi-stage deformable registration for whole-body CT volumes.
//!
//! The total deformation is built as a sum of stage fields (an affine stage,
//! then region-gated deformable stages for thorax, abdomen and the whole
//! body). Each stage is optimized per image pair against a weighted sum of
//! mutual information, soft Dice on organ masks and bending energy.

pub mod cascade;
pub mod error;
pub mod filter;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod nifti;
pub mod optimizer;
pub mod phantom;
pub mod preprocess;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
pub use volume::{
    add_fields, make_volume, mask_to_binary, zero_field, DisplacementField, IntensityUnit,
    LabelMask, LossWeights, Volume3D, VolumeGrid, BODY,
};
