//! Mutual information from a Parzen-windowed joint histogram.
//!
//! Each intensity is mapped to a continuous bin coordinate and spread over
//! neighbouring bins with a Gaussian kernel truncated at three sigma. The
//! kernel is tapered so that its value, slope and curvature all reach zero at
//! the cut-off, which keeps the estimate twice continuously differentiable in
//! the intensities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, LabelMask, Volume3D};
use crate::warp::{warp_with_gradient, InterpSpec};

use super::SampleMask;

/// Widest Parzen window supported, in bins.
const MAX_WINDOW: usize = 61;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntensityRange {
    /// Joint min/max of the fixed and warped images.
    #[default]
    Auto,
    Explicit {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MISpec {
    pub bins: usize,
    /// Kernel width in bin units.
    pub parzen_sigma: f64,
    pub intensity_range: IntensityRange,
    /// Restricts which voxels contribute to the histogram.
    pub sample_mask: Option<SampleMask>,
}

impl Default for MISpec {
    fn default() -> Self {
        Self {
            bins: 32,
            parzen_sigma: 1.0,
            intensity_range: IntensityRange::Auto,
            sample_mask: None,
        }
    }
}

impl MISpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 4 {
            return Err(Error::InvalidArgument(format!(
                "MI needs at least 4 bins, got {}",
                self.bins
            )));
        }
        if !(self.parzen_sigma.is_finite() && self.parzen_sigma > 0.0)
            || (6.0 * self.parzen_sigma).floor() as usize + 1 > MAX_WINDOW
        {
            return Err(Error::InvalidArgument(format!(
                "parzen sigma {} outside (0, 10]",
                self.parzen_sigma
            )));
        }
        if let IntensityRange::Explicit { lo, hi } = self.intensity_range {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate MI intensity range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.intensity_range = IntensityRange::Explicit { lo, hi };
        self
    }

    pub fn with_sample_mask(mut self, mask: SampleMask) -> Self {
        self.sample_mask = Some(mask);
        self
    }

    /// Gates the histogram to voxels of `mask` carrying one of `labels`.
    pub fn gated(self, mask: &LabelMask, labels: &std::collections::BTreeSet<u8>) -> Self {
        self.with_sample_mask(SampleMask::from_labels(mask, labels))
    }
}

#[derive(Debug, Clone, Copy)]
struct Parzen {
    bins: usize,
    sigma: f64,
    radius: f64,
    edge: f64,
    lo: f64,
    scale: f64,
    /// Maximum number of bins a sample can touch.
    window: usize,
}

impl Parzen {
    fn new(bins: usize, sigma: f64, lo: f64, hi: f64) -> Self {
        let radius = 3.0 * sigma;
        Self {
            bins,
            sigma,
            radius,
            edge: (-radius * radius / (2.0 * sigma * sigma)).exp(),
            lo,
            scale: (bins - 1) as f64 / (hi - lo),
            window: (2.0 * radius).floor() as usize + 1,
        }
    }

    /// Tapered kernel value and derivative with respect to the offset `d`.
    #[inline]
    fn kernel(&self, d: f64) -> (f64, f64) {
        if d.abs() >= self.radius {
            return (0.0, 0.0);
        }
        let s2 = self.sigma * self.sigma;
        let g = (-d * d / (2.0 * s2)).exp();
        // subtracting the Taylor expansion of g about the cutoff in
        // q = r^2 - d^2 leaves a kernel that vanishes there to third order
        let h = (self.radius * self.radius - d * d) / (2.0 * s2);
        let k = g - self.edge * (1.0 + h + 0.5 * h * h);
        let dk = d / s2 * (self.edge * (1.0 + h) - g);
        (k.max(0.0), dk)
    }

    /// Normalized bin weights of intensity `v` and their derivatives with
    /// respect to `v`, written to `w[..len]` / `dw[..len]`. Returns the first
    /// bin index and `len`.
    #[inline]
    fn weights(&self, v: f64, w: &mut [f64], dw: &mut [f64]) -> (usize, usize) {
        let top = (self.bins - 1) as f64;
        let raw = (v - self.lo) * self.scale;
        let (c, dc_dv) = if raw <= 0.0 {
            (0.0, 0.0)
        } else if raw >= top {
            (top, 0.0)
        } else {
            (raw, self.scale)
        };
        // taps in [ceil(c - r), floor(c + r)]: at most floor(2r) + 1 of them
        let first = (c - self.radius).ceil().max(0.0) as usize;
        let last = ((c + self.radius).floor() as usize).min(self.bins - 1);
        let len = last + 1 - first;
        debug_assert!(len <= self.window);
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for j in 0..len {
            let (k, dk) = self.kernel(c - (first + j) as f64);
            w[j] = k;
            dw[j] = dk;
            sum += k;
            dsum += dk;
        }
        if sum <= 0.0 {
            // window narrower than the distance to any bin centre: hard binning
            w[0] = 1.0;
            dw[0] = 0.0;
            return (c.round() as usize, 1);
        }
        for j in 0..len {
            let wn = w[j] / sum;
            dw[j] = (dw[j] - wn * dsum) / sum * dc_dv;
            w[j] = wn;
        }
        (first, len)
    }
}

/// Bin weights for a whole image in flat storage, `window` slots per voxel.
struct BinTable {
    window: usize,
    first: Vec<u32>,
    len: Vec<u8>,
    w: Vec<f64>,
    dw: Vec<f64>,
}

impl BinTable {
    fn build(parzen: &Parzen, values: &[f64], with_derivative: bool) -> Self {
        let k = parzen.window;
        let n = values.len();
        let mut t = BinTable {
            window: k,
            first: vec![0; n],
            len: vec![0; n],
            w: vec![0.0; n * k],
            dw: if with_derivative {
                vec![0.0; n * k]
            } else {
                Vec::new()
            },
        };
        let mut scratch = vec![0.0; k];
        for (i, &v) in values.iter().enumerate() {
            let w = &mut t.w[i * k..(i + 1) * k];
            let (first, len) = if with_derivative {
                parzen.weights(v, w, &mut t.dw[i * k..(i + 1) * k])
            } else {
                parzen.weights(v, w, &mut scratch)
            };
            t.first[i] = first as u32;
            t.len[i] = len as u8;
        }
        t
    }

    #[inline]
    fn get(&self, i: usize) -> (usize, &[f64]) {
        let len = self.len[i] as usize;
        (
            self.first[i] as usize,
            &self.w[i * self.window..i * self.window + len],
        )
    }

    #[inline]
    fn derivative(&self, i: usize) -> &[f64] {
        let len = self.len[i] as usize;
        &self.dw[i * self.window..i * self.window + len]
    }
}

/// Histogram state with the fixed image's bin weights precomputed.
pub(crate) struct MutualInformation {
    parzen: Parzen,
    fixed: Option<BinTable>,
    sample: Option<Vec<f64>>,
    total_weight: f64,
}

/// Joint histogram with its marginals.
pub(crate) struct JointHistogram {
    bins: usize,
    p: Vec<f64>,
    pf: Vec<f64>,
    pw: Vec<f64>,
}

impl JointHistogram {
    pub(crate) fn mutual_information(&self) -> f64 {
        let b = self.bins;
        let mut mi = 0.0;
        for a in 0..b {
            if self.pf[a] <= 0.0 {
                continue;
            }
            for w in 0..b {
                let p = self.p[a * b + w];
                if p > 0.0 {
                    mi += p * (p / (self.pf[a] * self.pw[w])).ln();
                }
            }
        }
        mi
    }
}

impl MutualInformation {
    /// Prepares the estimator. With an automatic range the bounds come from
    /// `fixed` and `warped_for_range`.
    pub(crate) fn new(fixed: &[f64], warped_for_range: &[f64], spec: &MISpec) -> Result<Self> {
        spec.validate()?;
        let (lo, hi) = match spec.intensity_range {
            IntensityRange::Explicit { lo, hi } => (lo, hi),
            IntensityRange::Auto => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in fixed.iter().chain(warped_for_range) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            }
        };
        let sample = spec.sample_mask.as_ref().map(|m| m.weights().to_vec());
        if let Some(s) = &sample {
            if s.len() != fixed.len() {
                return Err(Error::GridMismatch(format!(
                    "MI sample mask has {} voxels, image has {}",
                    s.len(),
                    fixed.len()
                )));
            }
        }
        let total_weight = sample
            .as_ref()
            .map_or(fixed.len() as f64, |s| s.iter().sum());
        // a single intensity level or an empty sample set carries MI = 0
        let degenerate = !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(1.0));
        let parzen = Parzen::new(
            spec.bins,
            spec.parzen_sigma,
            lo,
            if degenerate { lo + 1.0 } else { hi },
        );
        let fixed =
            (!degenerate && total_weight > 0.0).then(|| BinTable::build(&parzen, fixed, false));
        Ok(Self {
            parzen,
            fixed,
            sample,
            total_weight,
        })
    }

    #[inline]
    fn sample_weight(&self, i: usize) -> f64 {
        self.sample.as_ref().map_or(1.0, |s| s[i])
    }

    fn histogram(&self, fixed: &BinTable, warped: &BinTable) -> JointHistogram {
        let b = self.parzen.bins;
        let mut p = vec![0.0; b * b];
        for i in 0..fixed.len.len() {
            let r = self.sample_weight(i);
            if r <= 0.0 {
                continue;
            }
            let (ff, wf) = fixed.get(i);
            let (fw, ww) = warped.get(i);
            for (ja, &a) in wf.iter().enumerate() {
                let fa = a * r;
                let row = &mut p[(ff + ja) * b + fw..(ff + ja) * b + fw + ww.len()];
                for (cell, &w) in row.iter_mut().zip(ww) {
                    *cell += fa * w;
                }
            }
        }
        let norm = 1.0 / self.total_weight;
        p.iter_mut().for_each(|v| *v *= norm);
        let mut pf = vec![0.0; b];
        let mut pw = vec![0.0; b];
        for a in 0..b {
            for w in 0..b {
                pf[a] += p[a * b + w];
                pw[w] += p[a * b + w];
            }
        }
        JointHistogram { bins: b, p, pf, pw }
    }

    pub(crate) fn value(&self, warped: &[f64]) -> f64 {
        let Some(fixed) = &self.fixed else {
            return 0.0;
        };
        let table = BinTable::build(&self.parzen, warped, false);
        self.histogram(fixed, &table).mutual_information()
    }

    /// MI and its derivative with respect to each warped intensity.
    pub(crate) fn value_and_intensity_gradient(&self, warped: &[f64]) -> (f64, Vec<f64>) {
        let Some(fixed) = &self.fixed else {
            return (0.0, vec![0.0; warped.len()]);
        };
        let table = BinTable::build(&self.parzen, warped, true);
        let hist = self.histogram(fixed, &table);
        let b = hist.bins;
        // dMI/dp(a, w) = ln(p / (pf pw)) - 1 on the support
        let mut dmi = vec![0.0; b * b];
        for a in 0..b {
            for w in 0..b {
                let p = hist.p[a * b + w];
                if p > 0.0 {
                    dmi[a * b + w] = (p / (hist.pf[a] * hist.pw[w])).ln() - 1.0;
                }
            }
        }
        let norm = 1.0 / self.total_weight;
        let grad = (0..warped.len())
            .map(|i| {
                let r = self.sample_weight(i);
                if r <= 0.0 {
                    return 0.0;
                }
                let (ff, wf) = fixed.get(i);
                let (fw, _) = table.get(i);
                let dw = table.derivative(i);
                let mut g = 0.0;
                for (ja, &a) in wf.iter().enumerate() {
                    let row = &dmi[(ff + ja) * b + fw..(ff + ja) * b + fw + dw.len()];
                    let inner: f64 = row.iter().zip(dw).map(|(t, d)| t * d).sum();
                    g += a * inner;
                }
                g * r * norm
            })
            .collect();
        (hist.mutual_information(), grad)
    }
}

/// Mutual information in nats between `fixed` and `warped`.
pub fn mutual_information(fixed: &Volume3D, warped: &Volume3D, spec: &MISpec) -> Result<f64> {
    fixed
        .grid()
        .ensure_matches(warped.grid(), "mutual_information")?;
    let mi = MutualInformation::new(fixed.data(), warped.data(), spec)?;
    Ok(mi.value(warped.data()))
}

/// Gradient of `-MI(fixed, moving ∘ field)` with respect to the field,
/// through the Parzen weights and the trilinear sampler. An automatic range is
/// held fixed at its current value.
pub fn mi_gradient(
    fixed: &Volume3D,
    moving: &Volume3D,
    field: &DisplacementField,
    spec: &MISpec,
    interp: InterpSpec,
) -> Result<DisplacementField> {
    fixed.grid().ensure_matches(moving.grid(), "mi_gradient")?;
    fixed.grid().ensure_matches(field.grid(), "mi_gradient")?;
    if !field.is_finite() {
        return Err(Error::NonFinite("displacement field"));
    }
    let (warped, spatial) = warp_with_gradient(moving.data(), field, interp.padding);
    let mi = MutualInformation::new(fixed.data(), &warped, spec)?;
    let (_, dv) = mi.value_and_intensity_gradient(&warped);
    let vectors = dv
        .iter()
        .zip(&spatial)
        .map(|(&d, g)| [-d * g[0], -d * g[1], -d * g[2]])
        .collect();
    Ok(DisplacementField::from_parts(*field.grid(), vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_volume, zero_field, VolumeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> VolumeGrid {
        VolumeGrid::with_dims([n, n, n]).unwrap()
    }

    /// Plain discrete-histogram MI, independent of the Parzen machinery.
    fn hard_mi(a: &[f64], b: &[f64], bins: usize, lo: f64, hi: f64) -> f64 {
        let idx =
            |v: f64| (((v - lo) / (hi - lo) * (bins - 1) as f64).round() as usize).min(bins - 1);
        let mut joint = vec![0.0; bins * bins];
        for (&x, &y) in a.iter().zip(b) {
            joint[idx(x) * bins + idx(y)] += 1.0 / a.len() as f64;
        }
        let mut pa = vec![0.0; bins];
        let mut pb = vec![0.0; bins];
        for i in 0..bins {
            for j in 0..bins {
                pa[i] += joint[i * bins + j];
                pb[j] += joint[i * bins + j];
            }
        }
        let mut mi = 0.0;
        for i in 0..bins {
            for j in 0..bins {
                let p = joint[i * bins + j];
                if p > 0.0 {
                    mi += p * (p / (pa[i] * pb[j])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn constant_pair_has_zero_mi() {
        let v = make_volume(grid(4), 3.0).unwrap();
        assert_eq!(mutual_information(&v, &v, &MISpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn two_level_self_mi_is_ln2() {
        let g = grid(4);
        let data: Vec<f64> = (0..64)
            .map(|i| if i % 2 == 0 { 0.0 } else { 1.0 })
            .collect();
        let v = Volume3D::from_data(g, data.clone()).unwrap();
        let spec = MISpec {
            parzen_sigma: 0.05,
            ..MISpec::default()
        };
        let mi = mutual_information(&v, &v, &spec).unwrap();
        let oracle = hard_mi(&data, &data, 32, 0.0, 1.0);
        assert!((oracle - 2f64.ln()).abs() < 1e-12);
        assert!((mi - 2f64.ln()).abs() < 0.02 * 2f64.ln());
    }

    #[test]
    fn independent_noise_has_small_mi() {
        let g = grid(16);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let a: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
        let va = Volume3D::from_data(g, a.clone()).unwrap();
        let vb = Volume3D::from_data(g, b.clone()).unwrap();
        let spec = MISpec {
            bins: 8,
            ..MISpec::default()
        };
        let mi = mutual_information(&va, &vb, &spec).unwrap();
        let hard = hard_mi(&a, &b, 8, 0.0, 1.0);
        assert!(hard < 0.05, "oracle bound {hard}");
        assert!(mi < 0.05, "{mi}");
    }

    #[test]
    fn symmetric_and_self_maximal() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = Volume3D::from_data(g, (0..g.len()).map(|_| rng.gen_range(0.0..10.0)).collect())
            .unwrap();
        let b = Volume3D::from_data(
            g,
            a.data()
                .iter()
                .map(|v| v * 0.5 + rng.gen_range(0.0..3.0))
                .collect(),
        )
        .unwrap();
        let spec = MISpec::default().with_range(0.0, 10.0);
        let ab = mutual_information(&a, &b, &spec).unwrap();
        let ba = mutual_information(&b, &a, &spec).unwrap();
        let aa = mutual_information(&a, &a, &spec).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > -1e-9);
        assert!(aa >= ab);
    }

    #[test]
    fn invalid_specs_rejected() {
        let v = make_volume(grid(2), 0.0).unwrap();
        let bad = MISpec::default().with_range(1.0, 1.0);
        assert!(mutual_information(&v, &v, &bad).is_err());
        let bad = MISpec {
            bins: 3,
            ..MISpec::default()
        };
        assert!(mutual_information(&v, &v, &bad).is_err());
        let other = make_volume(grid(3), 0.0).unwrap();
        assert!(mutual_information(&v, &other, &MISpec::default()).is_err());
    }

    #[test]
    fn kernel_weights_sum_to_one_with_zero_derivative_sum() {
        for sigma in [0.4, 1.0, 1.7] {
            let p = Parzen::new(32, sigma, 0.0, 1.0);
            let mut w = vec![0.0; p.window];
            let mut dw = vec![0.0; p.window];
            for k in 0..400 {
                let v = k as f64 / 399.0 * 1.1 - 0.05;
                let (first, len) = p.weights(v, &mut w, &mut dw);
                assert!(first + len <= 32);
                let s: f64 = w[..len].iter().sum();
                let ds: f64 = dw[..len].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(ds.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stationary_on_piecewise_constant_self_pair() {
        // centred cube, symmetric about the volume centre
        let g = grid(8);
        let data: Vec<f64> = (0..g.len())
            .map(|i| {
                let [x, y, z] = g.coords(i);
                if (2..6).contains(&x) && (2..6).contains(&y) && (2..6).contains(&z) {
                    100.0
                } else {
                    10.0
                }
            })
            .collect();
        let v = Volume3D::from_data(g, data).unwrap();
        let grad = mi_gradient(
            &v,
            &v,
            &zero_field(g),
            &MISpec::default(),
            InterpSpec::default(),
        )
        .unwrap();
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            if [x, y, z].iter().all(|&c| (1..7).contains(&c)) {
                let n: f64 = grad.vectors()[i].iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!(n < 1e-8);
            }
        }
    }

    #[test]
    fn gradient_vanishes_outside_support() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fixed = Volume3D::from_data(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap();
        let moving = fixed.clone();
        let mut vectors = vec![[0.3, 0.2, -0.1]; g.len()];
        vectors[0] = [40.0, 40.0, 40.0];
        let f = DisplacementField::from_vectors(g, vectors).unwrap();
        let spec = MISpec::default().with_range(0.0, 1.0);
        let grad = mi_gradient(&fixed, &moving, &f, &spec, InterpSpec::default()).unwrap();
        assert_eq!(grad.vectors()[0], [0.0, 0.0, 0.0]);
    }
}
