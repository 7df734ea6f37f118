//! Grid, volume, displacement-field and label-mask types.
//!
//! Every buffer is stored in x-fastest linear order: the voxel `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`. File I/O and all tests rely on this
//! layout.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value reserved for the body outline. When used as a Dice organ or a
/// region gate it stands for the union of all foreground labels.
pub const BODY: u8 = 1;

/// Default organ table used by the phantom generator and the mask reader.
pub fn default_label_names() -> BTreeMap<u8, String> {
    [
        (0, "background"),
        (1, "body"),
        (2, "lung"),
        (3, "liver"),
        (4, "kidney"),
        (5, "pancreas"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect()
}

/// Sampling lattice: voxel counts, voxel size in millimeters and the world
/// position of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::EmptyDimension(dims));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .and_then(|v| v.checked_mul(3 * std::mem::size_of::<f64>()))
            .filter(|&bytes| bytes <= isize::MAX as usize)
            .ok_or(Error::DimensionOverflow(dims))?;
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidSpacing(spacing));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("grid origin"));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit-spacing grid at the world origin.
    pub fn with_dims(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Physical size along each axis, `dims * spacing`.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// Geometric center in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ]
    }

    /// Same lattice up to float tolerance on spacing and origin.
    pub fn matches(&self, other: &VolumeGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
        self.dims == other.dims
            && (0..3).all(|i| {
                close(self.spacing[i], other.spacing[i]) && close(self.origin[i], other.origin[i])
            })
    }

    pub(crate) fn ensure_matches(&self, other: &VolumeGrid, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// What the intensities of a [`Volume3D`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum IntensityUnit {
    #[default]
    Raw,
    Hounsfield,
    Normalized,
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: VolumeGrid,
    data: Vec<f64>,
    unit: IntensityUnit,
}

impl Volume3D {
    pub fn from_data(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data"));
        }
        Ok(Self {
            grid,
            data,
            unit: IntensityUnit::Raw,
        })
    }

    /// Internal constructor for results of module operations; finiteness is
    /// checked in debug builds only.
    pub(crate) fn from_parts(grid: VolumeGrid, data: Vec<f64>, unit: IntensityUnit) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite voxel");
        Self { grid, data, unit }
    }

    pub fn with_unit(mut self, unit: IntensityUnit) -> Self {
        self.unit = unit;
        self
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn unit(&self) -> IntensityUnit {
        self.unit
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Debug validator: every sample finite.
    pub fn is_valid(&self) -> bool {
        self.data.len() == self.grid.len() && self.data.iter().all(|v| v.is_finite())
    }
}

/// Volume with every voxel set to `fill`.
pub fn make_volume(grid: VolumeGrid, fill: f64) -> Result<Volume3D> {
    if !fill.is_finite() {
        return Err(Error::NonFinite("fill value"));
    }
    Ok(Volume3D::from_parts(
        grid,
        vec![fill; grid.len()],
        IntensityUnit::Raw,
    ))
}

/// Per-voxel displacement in voxel units. Voxel `p` of a warped image samples
/// the moving image at `p + u(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: VolumeGrid,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn from_vectors(grid: VolumeGrid, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: vectors.len(),
            });
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement field"));
        }
        Ok(Self { grid, vectors })
    }

    pub(crate) fn from_parts(grid: VolumeGrid, vectors: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(vectors.len(), grid.len());
        Self { grid, vectors }
    }

    /// Unpacks a flat `[ux0, uy0, uz0, ux1, ...]` parameter vector.
    pub fn from_flat(grid: VolumeGrid, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * grid.len() {
            return Err(Error::LengthMismatch {
                expected: 3 * grid.len(),
                got: flat.len(),
            });
        }
        let vectors = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::from_vectors(grid, vectors)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    #[cfg(test)]
    pub(crate) fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.vectors[self.grid.index(x, y, z)]
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().flatten().all(|v| v.is_finite())
    }

    /// Mean Euclidean norm of the displacement vectors.
    pub fn mean_magnitude(&self) -> f64 {
        self.vectors.iter().map(|v| norm3(*v)).sum::<f64>() / self.vectors.len() as f64
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vectors.iter().map(|v| norm3(*v)).fold(0.0, f64::max)
    }

    /// One scalar volume per component (x, y, z).
    pub fn components(&self) -> [Volume3D; 3] {
        let pick = |c: usize| {
            Volume3D::from_parts(
                self.grid,
                self.vectors.iter().map(|v| v[c]).collect(),
                IntensityUnit::Raw,
            )
        };
        [pick(0), pick(1), pick(2)]
    }

    pub fn from_components(ux: &Volume3D, uy: &Volume3D, uz: &Volume3D) -> Result<Self> {
        ux.grid().ensure_matches(uy.grid(), "field components")?;
        ux.grid().ensure_matches(uz.grid(), "field components")?;
        let vectors = ux
            .data()
            .iter()
            .zip(uy.data())
            .zip(uz.data())
            .map(|((&a, &b), &c)| [a, b, c])
            .collect();
        Self::from_vectors(*ux.grid(), vectors)
    }
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Identity transform on `grid`.
pub fn zero_field(grid: VolumeGrid) -> DisplacementField {
    DisplacementField::from_parts(grid, vec![[0.0; 3]; grid.len()])
}

/// Per-voxel vector sum. This is summation of displacements, not composition
/// of warps; no resampling is involved.
pub fn add_fields(a: &DisplacementField, b: &DisplacementField) -> Result<DisplacementField> {
    a.grid.ensure_matches(&b.grid, "add_fields")?;
    let vectors = a
        .vectors
        .iter()
        .zip(&b.vectors)
        .map(|(u, v)| [u[0] + v[0], u[1] + v[1], u[2] + v[2]])
        .collect();
    Ok(DisplacementField::from_parts(a.grid, vectors))
}

/// Multi-organ segmentation. Every stored label has an entry in the name table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: VolumeGrid,
    labels: Vec<u8>,
    label_names: BTreeMap<u8, String>,
}

impl LabelMask {
    pub fn new(
        grid: VolumeGrid,
        labels: Vec<u8>,
        mut label_names: BTreeMap<u8, String>,
    ) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: labels.len(),
            });
        }
        label_names.entry(0).or_insert_with(|| "background".into());
        let present: BTreeSet<u8> = labels.iter().copied().collect();
        if let Some(missing) = present.iter().find(|l| !label_names.contains_key(l)) {
            return Err(Error::InvalidArgument(format!(
                "label {missing} present in mask data but absent from the name table"
            )));
        }
        Ok(Self {
            grid,
            labels,
            label_names,
        })
    }

    /// Builds a mask naming unknown labels `label_<n>`, on top of the default
    /// organ table.
    pub fn with_default_names(grid: VolumeGrid, labels: Vec<u8>) -> Result<Self> {
        let mut names = default_label_names();
        for &l in &labels {
            names.entry(l).or_insert_with(|| format!("label_{l}"));
        }
        Self::new(grid, labels, names)
    }

    pub(crate) fn from_parts(
        grid: VolumeGrid,
        labels: Vec<u8>,
        label_names: BTreeMap<u8, String>,
    ) -> Self {
        debug_assert_eq!(labels.len(), grid.len());
        Self {
            grid,
            labels,
            label_names,
        }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_names(&self) -> &BTreeMap<u8, String> {
        &self.label_names
    }

    pub fn name_of(&self, label: u8) -> Option<&str> {
        self.label_names.get(&label).map(String::as_str)
    }

    /// Labels that actually occur in the data.
    pub fn present_labels(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub(crate) fn ensure_known(&self, label: u8) -> Result<()> {
        if self.label_names.contains_key(&label) {
            Ok(())
        } else {
            Err(Error::UnknownLabel {
                requested: label,
                known: self.label_names.keys().copied().collect(),
            })
        }
    }

    /// Per-voxel membership in `labels`, where [`BODY`] expands to every
    /// foreground label.
    pub fn region(&self, labels: &BTreeSet<u8>) -> Vec<bool> {
        let body = labels.contains(&BODY);
        self.labels
            .iter()
            .map(|&l| labels.contains(&l) || (body && l != 0))
            .collect()
    }

    /// Soft indicator of one organ as an intensity volume; [`BODY`] means the
    /// whole foreground.
    pub fn organ_indicator(&self, label: u8) -> Volume3D {
        let set = BTreeSet::from([label]);
        let data = self
            .region(&set)
            .into_iter()
            .map(|inside| if inside { 1.0 } else { 0.0 })
            .collect();
        Volume3D::from_parts(self.grid, data, IntensityUnit::Normalized)
    }
}

/// 1.0 where the voxel label is in `labels`, else 0.0. Labels are matched
/// literally here, without body expansion.
pub fn mask_to_binary(mask: &LabelMask, labels: &BTreeSet<u8>) -> Result<Volume3D> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "mask_to_binary needs at least one label".into(),
        ));
    }
    let present = mask.present_labels();
    for &l in labels {
        if !present.contains(&l) && !mask.label_names.contains_key(&l) {
            return Err(Error::UnknownLabel {
                requested: l,
                known: present.iter().copied().collect(),
            });
        }
    }
    let data = mask
        .labels
        .iter()
        .map(|l| if labels.contains(l) { 1.0 } else { 0.0 })
        .collect();
    Ok(Volume3D::from_parts(
        mask.grid,
        data,
        IntensityUnit::Normalized,
    ))
}

/// Weights of the composite registration loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Mutual information weight.
    pub alpha: f64,
    /// Soft Dice weight.
    pub lambda: f64,
    /// Bending energy weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 1.0,
            beta: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, lambda: f64, beta: f64) -> Result<Self> {
        let w = Self {
            alpha,
            lambda,
            beta,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.alpha) && ok(self.lambda) && ok(self.beta)) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// At least one data term is switched on.
    pub fn has_data_term(&self) -> bool {
        self.alpha + self.lambda > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: [usize; 3]) -> VolumeGrid {
        VolumeGrid::with_dims(n).unwrap()
    }

    fn random_field(g: VolumeGrid, rng: &mut ChaCha8Rng) -> DisplacementField {
        let v = (0..g.len())
            .map(|_| {
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ]
            })
            .collect();
        DisplacementField::from_vectors(g, v).unwrap()
    }

    #[test]
    fn make_volume_fills() {
        let v = make_volume(grid([2, 2, 2]), 0.0).unwrap();
        assert_eq!(v.data(), &[0.0; 8]);
        let v = make_volume(grid([1, 1, 1]), 5.0).unwrap();
        assert_eq!(v.data(), &[5.0]);
    }

    #[test]
    fn empty_dimension_rejected() {
        let err = VolumeGrid::with_dims([0, 2, 2]).unwrap_err();
        assert!(err.to_string().contains("empty dimension"));
        assert!(VolumeGrid::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(VolumeGrid::with_dims([usize::MAX / 2, 4, 4]).is_err());
    }

    #[test]
    fn zero_field_is_identity_seed() {
        let f = zero_field(grid([4, 4, 4]));
        assert_eq!(f.vectors().len(), 64);
        assert!(f.vectors().iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn index_roundtrip_is_x_fastest() {
        let g = grid([3, 4, 5]);
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn add_fields_basic() {
        let g = grid([3, 3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_field(g, &mut rng);
        assert_eq!(add_fields(&zero_field(g), &b).unwrap(), b);
        assert_eq!(add_fields(&b, &zero_field(g)).unwrap(), b);

        let ones = DisplacementField::from_vectors(g, vec![[1.0, 0.0, 0.0]; 27]).unwrap();
        let twos = DisplacementField::from_vectors(g, vec![[0.0, 2.0, 0.0]; 27]).unwrap();
        let s = add_fields(&ones, &twos).unwrap();
        assert!(s.vectors().iter().all(|v| *v == [1.0, 2.0, 0.0]));

        let other = zero_field(grid([3, 3, 4]));
        assert!(add_fields(&ones, &other).is_err());
    }

    #[test]
    fn add_fields_association_orders_agree() {
        let g = grid([8, 8, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f: Vec<_> = (0..4).map(|_| random_field(g, &mut rng)).collect();
        let left = add_fields(
            &add_fields(&add_fields(&f[0], &f[1]).unwrap(), &f[2]).unwrap(),
            &f[3],
        )
        .unwrap();
        let right = add_fields(
            &f[0],
            &add_fields(&f[1], &add_fields(&f[2], &f[3]).unwrap()).unwrap(),
        )
        .unwrap();
        let paired = add_fields(
            &add_fields(&f[3], &f[1]).unwrap(),
            &add_fields(&f[2], &f[0]).unwrap(),
        )
        .unwrap();
        for i in 0..g.len() {
            // brute-force reference sum in a fixed order
            let mut r = [0.0; 3];
            for fld in &f {
                for c in 0..3 {
                    r[c] += fld.vectors()[i][c];
                }
            }
            for c in 0..3 {
                assert!((left.vectors()[i][c] - r[c]).abs() < 1e-12);
                assert!((right.vectors()[i][c] - r[c]).abs() < 1e-12);
                assert!((paired.vectors()[i][c] - r[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_to_binary_cases() {
        let g = grid([2, 2, 2]);
        let all3 = LabelMask::with_default_names(g, vec![3; 8]).unwrap();
        let v = mask_to_binary(&all3, &BTreeSet::from([3])).unwrap();
        assert_eq!(v.data(), &[1.0; 8]);

        let mut names = BTreeMap::new();
        names.insert(0, "bg".to_string());
        names.insert(3, "liver".to_string());
        let m = LabelMask::new(g, vec![0, 3, 0, 3, 3, 3, 0, 0], names).unwrap();
        let err = mask_to_binary(&m, &BTreeSet::from([9])).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { requested: 9, .. }));
        assert!(mask_to_binary(&m, &BTreeSet::new()).is_err());
    }

    #[test]
    fn mask_to_binary_matches_voxel_scan() {
        let g = grid([5, 4, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u8> = (0..g.len())
            .map(|_| [0u8, 2, 3][rng.gen_range(0..3)])
            .collect();
        let m = LabelMask::with_default_names(g, labels.clone()).unwrap();
        let v = mask_to_binary(&m, &BTreeSet::from([2, 3])).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let expect = if l == 2 || l == 3 { 1.0 } else { 0.0 };
            assert_eq!(v.data()[i], expect);
        }
    }

    #[test]
    fn body_expands_to_foreground() {
        let g = grid([4, 1, 1]);
        let m = LabelMask::with_default_names(g, vec![0, 1, 3, 5]).unwrap();
        assert_eq!(
            m.region(&BTreeSet::from([BODY])),
            vec![false, true, true, true]
        );
        assert_eq!(m.organ_indicator(3).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn mask_requires_named_labels() {
        let g = grid([2, 1, 1]);
        let names = BTreeMap::from([(0u8, "bg".to_string())]);
        assert!(LabelMask::new(g, vec![0, 7], names).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(1.0, 1.0, 0.5).is_ok());
        assert!(LossWeights::new(-1.0, 1.0, 0.5).is_err());
        assert!(!LossWeights::new(0.0, 0.0, 1.0).unwrap().has_data_term());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field_strategy(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
            proptest::collection::vec([-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0], n)
        }

        proptest! {
            #[test]
            fn add_fields_commutes(a in field_strategy(27), b in field_strategy(27)) {
                let g = VolumeGrid::with_dims([3, 3, 3]).unwrap();
                let fa = DisplacementField::from_vectors(g, a).unwrap();
                let fb = DisplacementField::from_vectors(g, b).unwrap();
                prop_assert_eq!(add_fields(&fa, &fb).unwrap(), add_fields(&fb, &fa).unwrap());
                prop_assert_eq!(add_fields(&fa, &zero_field(g)).unwrap(), fa);
            }

            #[test]
            fn binary_mask_is_zero_one(labels in proptest::collection::vec(0u8..4, 24)) {
                let g = VolumeGrid::with_dims([2, 3, 4]).unwrap();
                let m = LabelMask::with_default_names(g, labels).unwrap();
                let v = mask_to_binary(&m, &BTreeSet::from([1, 2])).unwrap();
                prop_assert!(v.data().iter().all(|&x| x == 0.0 || x == 1.0));
            }
        }
    }
}
