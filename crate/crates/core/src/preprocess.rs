//! Cropping, fixed-size resampling and intensity normalization.
//!
//! Orientation and HU rescaling happen when a file is read (see
//! [`crate::nifti`]); [`preprocess`] runs the remaining steps in order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityUnit, LabelMask, Volume3D, VolumeGrid};
use crate::warp::{Padding, Sampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Normalization {
    /// `[min, max]` onto `[0, 1]`.
    #[default]
    Minmax01,
    /// Clamp to `[lo, hi]`, then map onto `[0, 1]`.
    Window { lo: f64, hi: f64 },
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    /// `minmax_01` or `window:LO,HI`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "minmax_01" || s == "minmax" {
            return Ok(Self::Minmax01);
        }
        let bad = || {
            Error::Config(format!(
                "normalization '{s}': expected minmax_01 or window:LO,HI"
            ))
        };
        let rest = s.strip_prefix("window:").ok_or_else(bad)?;
        let (lo, hi) = rest.split_once(',').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let n = Self::Window { lo, hi };
        n.validate()?;
        Ok(n)
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Window { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => Err(
                Error::Config(format!("window [{lo}, {hi}] must satisfy lo < hi")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSpec {
    pub target_dims: [usize; 3],
    pub normalize: Normalization,
    pub crop_margin_voxels: usize,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            target_dims: [256, 192, 160],
            normalize: Normalization::Minmax01,
            crop_margin_voxels: 2,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_dims.iter().any(|&d| d < 8) {
            return Err(Error::Config(format!(
                "target dims {:?} must all be >= 8",
                self.target_dims
            )));
        }
        self.normalize.validate()
    }
}

/// Inclusive voxel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropBox {
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a] + 1)
    }
}

/// Bounding box of the foreground of `body`, grown by `margin` and clamped.
pub fn body_box(body: &LabelMask, margin: usize) -> Result<CropBox> {
    let g = body.grid();
    let dims = g.dims();
    let mut lo = dims;
    let mut hi = [0; 3];
    let mut any = false;
    for (i, &l) in body.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        any = true;
        let c = g.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    if !any {
        return Err(Error::InvalidArgument("body mask is empty".into()));
    }
    for a in 0..3 {
        lo[a] = lo[a].saturating_sub(margin);
        hi[a] = (hi[a] + margin).min(dims[a] - 1);
    }
    Ok(CropBox { lo, hi })
}

fn cropped_grid(grid: &VolumeGrid, b: &CropBox) -> Result<VolumeGrid> {
    let sp = grid.spacing();
    let o = grid.origin();
    VolumeGrid::new(
        b.dims(),
        sp,
        [0, 1, 2].map(|a| o[a] + b.lo[a] as f64 * sp[a]),
    )
}

fn crop_data<T: Copy>(data: &[T], grid: &VolumeGrid, b: &CropBox) -> Vec<T> {
    let d = b.dims();
    let mut out = Vec::with_capacity(d[0] * d[1] * d[2]);
    for z in b.lo[2]..=b.hi[2] {
        for y in b.lo[1]..=b.hi[1] {
            let row = grid.index(b.lo[0], y, z);
            out.extend_from_slice(&data[row..row + d[0]]);
        }
    }
    out
}

pub fn crop_to_box(vol: &Volume3D, b: &CropBox) -> Result<Volume3D> {
    let g = cropped_grid(vol.grid(), b)?;
    Ok(Volume3D::from_parts(
        g,
        crop_data(vol.data(), vol.grid(), b),
        vol.unit(),
    ))
}

pub fn crop_mask_to_box(mask: &LabelMask, b: &CropBox) -> Result<LabelMask> {
    let g = cropped_grid(mask.grid(), b)?;
    LabelMask::new(
        g,
        crop_data(mask.labels(), mask.grid(), b),
        mask.label_names().clone(),
    )
}

/// Crops to the body bounding box dilated by `margin`. The origin moves with
/// the box, so world positions of kept voxels do not change.
pub fn crop_to_body(
    vol: &Volume3D,
    body: &LabelMask,
    margin: usize,
) -> Result<(Volume3D, CropBox)> {
    vol.grid().ensure_matches(body.grid(), "crop_to_body")?;
    let b = body_box(body, margin)?;
    Ok((crop_to_box(vol, &b)?, b))
}

/// Grid with `target` voxels covering the same physical extent and centered
/// on the same point as `grid`.
pub fn resampled_grid(grid: &VolumeGrid, target: [usize; 3]) -> Result<VolumeGrid> {
    let d = grid.dims();
    let sp = grid.spacing();
    let o = grid.origin();
    let spacing = [0, 1, 2].map(|a| d[a] as f64 * sp[a] / target[a] as f64);
    let origin = [0, 1, 2].map(|a| o[a] + sp[a] * (0.5 * d[a] as f64 / target[a] as f64 - 0.5));
    VolumeGrid::new(target, spacing, origin)
}

/// Continuous source index of each output index along one axis.
fn source_positions(n_in: usize, n_out: usize) -> Vec<f64> {
    let r = n_in as f64 / n_out as f64;
    (0..n_out).map(|q| (q as f64 + 0.5) * r - 0.5).collect()
}

/// Trilinear resampling onto `target` dims with extent preserved.
pub fn resample_to(vol: &Volume3D, target: [usize; 3]) -> Result<Volume3D> {
    let src = vol.grid();
    let g = resampled_grid(src, target)?;
    if src.dims() == target {
        return Ok(vol.clone());
    }
    let pos: Vec<Vec<f64>> = (0..3)
        .map(|a| source_positions(src.dims()[a], target[a]))
        .collect();
    let s = Sampler::new(vol.data(), src.dims(), Padding::Border);
    let mut out = Vec::with_capacity(g.len());
    for &z in &pos[2] {
        for &y in &pos[1] {
            for &x in &pos[0] {
                out.push(s.trilinear([x, y, z]));
            }
        }
    }
    Ok(Volume3D::from_parts(g, out, vol.unit()))
}

/// Nearest-neighbor counterpart of [`resample_to`] for label masks.
pub fn resample_mask_to(mask: &LabelMask, target: [usize; 3]) -> Result<LabelMask> {
    let src = mask.grid();
    let g = resampled_grid(src, target)?;
    let d = src.dims();
    let idx: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            source_positions(d[a], target[a])
                .into_iter()
                .map(|p| (p + 0.5).floor().clamp(0.0, (d[a] - 1) as f64) as usize)
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(g.len());
    for &z in &idx[2] {
        for &y in &idx[1] {
            for &x in &idx[0] {
                out.push(mask.labels()[src.index(x, y, z)]);
            }
        }
    }
    LabelMask::new(g, out, mask.label_names().clone())
}

/// Maps intensities onto `[0, 1]`. The flag is set when a min-max volume is
/// constant; every voxel then becomes 0.5.
pub fn normalize_intensity(vol: &Volume3D, mode: &Normalization) -> Result<(Volume3D, bool)> {
    mode.validate()?;
    let (lo, hi, clamp) = match *mode {
        Normalization::Minmax01 => {
            let (lo, hi) = vol.min_max();
            (lo, hi, false)
        }
        Normalization::Window { lo, hi } => (lo, hi, true),
    };
    let g = *vol.grid();
    if hi <= lo {
        log::warn!("constant volume under min-max normalization; writing 0.5 everywhere");
        let data = vec![0.5; g.len()];
        return Ok((
            Volume3D::from_parts(g, data, IntensityUnit::Normalized),
            true,
        ));
    }
    let w = hi - lo;
    let data = vol
        .data()
        .iter()
        .map(|&v| {
            let v = if clamp { v.clamp(lo, hi) } else { v };
            (v - lo) / w
        })
        .collect();
    Ok((
        Volume3D::from_parts(g, data, IntensityUnit::Normalized),
        false,
    ))
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub volume: Volume3D,
    pub mask: LabelMask,
    pub crop_box: CropBox,
    pub constant_intensity: bool,
}

/// Normalize, crop to the body of `mask` and resample volume and mask to the
/// target dims.
pub fn preprocess(vol: &Volume3D, mask: &LabelMask, spec: &PreprocessSpec) -> Result<Preprocessed> {
    spec.validate()?;
    let (norm, constant) = normalize_intensity(vol, &spec.normalize)?;
    let (cropped, crop_box) = crop_to_body(&norm, mask, spec.crop_margin_voxels)?;
    let cropped_mask = crop_mask_to_box(mask, &crop_box)?;
    Ok(Preprocessed {
        volume: resample_to(&cropped, spec.target_dims)?,
        mask: resample_mask_to(&cropped_mask, spec.target_dims)?,
        crop_box,
        constant_intensity: constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use proptest::prelude::*;

    fn grid(dims: [usize; 3]) -> VolumeGrid {
        VolumeGrid::new(dims, [1.5, 0.75, 2.0], [3.0, -4.0, 10.0]).unwrap()
    }

    #[test]
    fn full_body_crop_is_noop() {
        let g = grid([5, 4, 3]);
        let vol = Volume3D::from_data(g, (0..60).map(f64::from).collect()).unwrap();
        let body = LabelMask::with_default_names(g, vec![1; 60]).unwrap();
        let (c, b) = crop_to_body(&vol, &body, 2).unwrap();
        assert_eq!(
            b,
            CropBox {
                lo: [0; 3],
                hi: [4, 3, 2]
            }
        );
        assert_eq!(c, vol);
    }

    #[test]
    fn single_voxel_body_gives_five_cube() {
        let g = grid([11, 11, 11]);
        let mut labels = vec![0; g.len()];
        labels[g.index(5, 5, 5)] = 1;
        let body = LabelMask::with_default_names(g, labels).unwrap();
        let vol = Volume3D::from_data(g, vec![0.0; g.len()]).unwrap();
        let (c, b) = crop_to_body(&vol, &body, 2).unwrap();
        assert_eq!(c.grid().dims(), [5, 5, 5]);
        assert_eq!(b.lo, [3, 3, 3]);
        assert_eq!(c.grid().origin(), [3.0 + 4.5, -4.0 + 2.25, 10.0 + 6.0]);
    }

    #[test]
    fn empty_body_is_an_error() {
        let g = grid([4, 4, 4]);
        let body = LabelMask::with_default_names(g, vec![0; 64]).unwrap();
        let vol = Volume3D::from_data(g, vec![0.0; 64]).unwrap();
        assert!(crop_to_body(&vol, &body, 2).is_err());
    }

    proptest! {
        #[test]
        fn crop_box_matches_scan_oracle(
            bits in proptest::collection::vec(0u8..12, 7 * 6 * 5),
            margin in 0usize..4,
        ) {
            let g = grid([7, 6, 5]);
            let labels: Vec<u8> = bits.iter().map(|&b| if b == 0 { 1 } else { 0 }).collect();
            prop_assume!(labels.iter().any(|&l| l != 0));
            let body = LabelMask::with_default_names(g, labels.clone()).unwrap();
            let b = body_box(&body, margin).unwrap();
            let mut lo = [usize::MAX; 3];
            let mut hi = [0usize; 3];
            for z in 0..5 {
                for y in 0..6 {
                    for x in 0..7 {
                        if labels[x + 7 * (y + 6 * z)] != 0 {
                            let c = [x, y, z];
                            for a in 0..3 {
                                lo[a] = lo[a].min(c[a]);
                                hi[a] = hi[a].max(c[a]);
                            }
                        }
                    }
                }
            }
            let d = [7, 6, 5];
            for a in 0..3 {
                prop_assert_eq!(b.lo[a], lo[a].saturating_sub(margin));
                prop_assert_eq!(b.hi[a], (hi[a] + margin).min(d[a] - 1));
            }
        }
    }

    #[test]
    fn same_dims_resample_is_identity() {
        let g = grid([6, 5, 4]);
        let vol = Volume3D::from_data(g, (0..120).map(|i| (i as f64).sqrt()).collect()).unwrap();
        let r = resample_to(&vol, [6, 5, 4]).unwrap();
        assert!(r.grid().matches(&g));
        for (a, b) in r.data().iter().zip(vol.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn default_target_dims_and_extent() {
        let g = VolumeGrid::new([128; 3], [1.2, 1.0, 0.9], [0.0; 3]).unwrap();
        let vol = make_ramp(g, [0.01, -0.02, 0.005]);
        let r = resample_to(&vol, [256, 192, 160]).unwrap();
        assert_eq!(r.grid().dims(), [256, 192, 160]);
        for a in 0..3 {
            assert!((r.grid().extent()[a] - g.extent()[a]).abs() < 1e-6);
            // the world-space centers coincide
            let c0 = g.origin()[a] + g.center()[a] * g.spacing()[a];
            let c1 = r.grid().origin()[a] + r.grid().center()[a] * r.grid().spacing()[a];
            assert!((c0 - c1).abs() < 1e-9);
        }
    }

    fn make_ramp(g: VolumeGrid, slope: [f64; 3]) -> Volume3D {
        let data = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                let sp = g.spacing();
                let o = g.origin();
                (0..3)
                    .map(|a| slope[a] * (o[a] + c[a] as f64 * sp[a]))
                    .sum::<f64>()
                    + 1.0
            })
            .collect();
        Volume3D::from_data(g, data).unwrap()
    }

    #[test]
    fn downsampled_ramp_stays_linear() {
        let slope = [0.3, -0.2, 0.7];
        let g = grid([24, 18, 16]);
        let vol = make_ramp(g, slope);
        let r = resample_to(&vol, [10, 9, 7]).unwrap();
        let oracle = make_ramp(*r.grid(), slope);
        for (a, b) in r.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn mask_resample_is_nearest() {
        let g = grid([4, 4, 4]);
        let labels: Vec<u8> = (0..64).map(|i| (i % 4) as u8).collect();
        let m = LabelMask::with_default_names(g, labels).unwrap();
        let up = resample_mask_to(&m, [8, 8, 8]).unwrap();
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(up.labels()[up.grid().index(x, y, z)], (x / 2) as u8);
                }
            }
        }
    }

    #[test]
    fn normalization_cases() {
        let g = VolumeGrid::with_dims([3, 1, 1]).unwrap();
        let v = Volume3D::from_data(g, vec![-1000.0, 0.0, 1000.0]).unwrap();
        let (n, flag) = normalize_intensity(&v, &Normalization::Minmax01).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0]);
        assert!(!flag);
        assert_eq!(n.unit(), IntensityUnit::Normalized);

        let w = Normalization::Window {
            lo: -1024.0,
            hi: 276.0,
        };
        let v = Volume3D::from_data(g, vec![276.0, -2000.0, 5000.0]).unwrap();
        assert_eq!(
            normalize_intensity(&v, &w).unwrap().0.data(),
            &[1.0, 0.0, 1.0]
        );

        let c = Volume3D::from_data(g, vec![7.0; 3]).unwrap();
        let (n, flag) = normalize_intensity(&c, &Normalization::Minmax01).unwrap();
        assert!(flag);
        assert_eq!(n.data(), &[0.5; 3]);

        assert!("window:5,1".parse::<Normalization>().is_err());
        assert_eq!("window:-1024,276".parse::<Normalization>().unwrap(), w);
    }

    proptest! {
        #[test]
        fn unit_window_is_identity(vals in proptest::collection::vec(0.0f64..=1.0, 8)) {
            let g = VolumeGrid::with_dims([2, 2, 2]).unwrap();
            let v = Volume3D::from_data(g, vals.clone()).unwrap();
            let (n, _) = normalize_intensity(&v, &Normalization::Window { lo: 0.0, hi: 1.0 }).unwrap();
            for (a, b) in n.data().iter().zip(&vals) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }

    fn components(mask: &LabelMask, label: u8) -> usize {
        let g = mask.grid();
        let d = g.dims();
        let mut seen = vec![false; g.len()];
        let mut count = 0;
        for start in 0..g.len() {
            if seen[start] || mask.labels()[start] != label {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let c = g.coords(i);
                for a in 0..3 {
                    for step in [-1i64, 1] {
                        let v = c[a] as i64 + step;
                        if v < 0 || v >= d[a] as i64 {
                            continue;
                        }
                        let mut n = c;
                        n[a] = v as usize;
                        let j = g.index(n[0], n[1], n[2]);
                        if !seen[j] && mask.labels()[j] == label {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn chain_keeps_organ_topology_and_is_nearly_idempotent() {
        let pair = generate_phantom(&PhantomSpec::default()).unwrap();
        let spec = PreprocessSpec {
            target_dims: [72, 56, 44],
            ..PreprocessSpec::default()
        };
        let out = preprocess(&pair.fixed, &pair.fixed_mask, &spec).unwrap();
        assert_eq!(out.volume.grid().dims(), [72, 56, 44]);
        for label in 1..=5 {
            assert_eq!(
                components(&out.mask, label),
                components(&pair.fixed_mask, label),
                "label {label}"
            );
        }

        // with a body touching the borders, a second pass changes nothing
        let g = grid([12, 10, 9]);
        let vol = make_ramp(g, [0.1, 0.05, -0.2]);
        let mut labels = vec![1u8; g.len()];
        labels[0] = 0;
        let mask = LabelMask::with_default_names(g, labels).unwrap();
        let spec = PreprocessSpec {
            target_dims: [16, 12, 10],
            ..PreprocessSpec::default()
        };
        let once = preprocess(&vol, &mask, &spec).unwrap();
        let twice = preprocess(&once.volume, &once.mask, &spec).unwrap();
        for (a, b) in once.volume.data().iter().zip(twice.volume.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
