#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::{Command, Output};

use fieldcascade::filter::gaussian_smooth;
use fieldcascade::losses::{
    bending_energy, bending_gradient, mi_gradient, mutual_information, soft_dice,
    soft_dice_gradient, MISpec,
};
use fieldcascade::metrics::mean_endpoint_error;
use fieldcascade::warp::{warp_volume, InterpSpec};
use fieldcascade::{DisplacementField, LabelMask, Volume3D, VolumeGrid, BODY};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_COMPONENTS: usize = 20;
pub const FD_MAX_REL: f64 = 1e-3;
pub const FD_DIMS: [usize; 3] = [8, 8, 8];

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fieldcascade"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn p(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

pub fn s(path: &std::path::Path) -> &str {
    path.to_str().unwrap()
}

/// Mean endpoint error over the fixed body.
pub fn body_epe(est: &DisplacementField, truth: &DisplacementField, mask: &LabelMask) -> f64 {
    let body = mask.region(&[BODY].into());
    mean_endpoint_error(est, truth, Some(&body)).unwrap()
}

fn smooth_image(rng: &mut ChaCha8Rng, g: VolumeGrid) -> Volume3D {
    let noise: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
    let sm = gaussian_smooth(&noise, g.dims(), 1.0);
    let (lo, hi) = sm
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    Volume3D::from_data(g, sm.iter().map(|v| (v - lo) / (hi - lo)).collect()).unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, g: VolumeGrid, amp: f64) -> DisplacementField {
    let v = (0..g.len())
        .map(|_| [0; 3].map(|_| rng.gen_range(-amp..amp)))
        .collect();
    DisplacementField::from_vectors(g, v).unwrap()
}

/// Random displacements whose sample positions stay inside the grid, keeping
/// the zero-padding cliff at the border out of the difference quotients.
fn interior_field(rng: &mut ChaCha8Rng, g: VolumeGrid, amp: f64) -> DisplacementField {
    let d = g.dims();
    let v = (0..g.len())
        .map(|i| {
            let c = g.coords(i);
            [0, 1, 2].map(|a| {
                let p = c[a] as f64;
                let lo = (-amp).max(0.05 - p);
                let hi = amp.min((d[a] - 1) as f64 - 0.05 - p);
                rng.gen_range(lo..hi)
            })
        })
        .collect();
    DisplacementField::from_vectors(g, v).unwrap()
}

fn blob_mask(rng: &mut ChaCha8Rng, g: VolumeGrid) -> LabelMask {
    let c2 = [
        rng.gen_range(2.5..4.5),
        rng.gen_range(2.5..4.5),
        rng.gen_range(2.5..4.5),
    ];
    let c3 = [
        rng.gen_range(3.0..5.0),
        rng.gen_range(3.0..5.0),
        rng.gen_range(3.0..5.0),
    ];
    let labels = (0..g.len())
        .map(|i| {
            let c = g.coords(i).map(|v| v as f64);
            let d =
                |m: [f64; 3], r: f64| (0..3).map(|a| (c[a] - m[a]).powi(2)).sum::<f64>() < r * r;
            if d(c3, 1.8) {
                3
            } else if d(c2, 2.6) {
                2
            } else if c.iter().all(|&v| (1.0..7.0).contains(&v)) {
                1
            } else {
                0
            }
        })
        .collect();
    LabelMask::with_default_names(g, labels).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    /// Largest |finite difference| where the analytic gradient is exactly 0.
    pub max_off_support: f64,
}

/// Compares `analytic` with central differences of `loss` at
/// [`FD_COMPONENTS`] components drawn from the support of `analytic`
/// (magnitude at least 1e-2 of the largest, below which the O(h^2) truncation
/// error of the quotient is no longer small relative to the value); with
/// `off_support` every zero component is also differenced. Components whose
/// sample coordinate lies within two steps of a lattice plane are skipped:
/// the trilinear interpolant has a kink there, so the difference quotient
/// does not approximate a derivative.
pub fn check_gradient(
    rng: &mut ChaCha8Rng,
    field: &DisplacementField,
    analytic: &DisplacementField,
    loss: impl Fn(&DisplacementField) -> f64,
    off_support: bool,
) -> GradCheck {
    let x = field.to_flat();
    let a = analytic.to_flat();
    let g = *field.grid();
    let fd = |k: usize| {
        let mut xp = x.clone();
        xp[k] += FD_STEP;
        let mut xm = x.clone();
        xm[k] -= FD_STEP;
        let fp = loss(&DisplacementField::from_flat(g, &xp).unwrap());
        let fm = loss(&DisplacementField::from_flat(g, &xm).unwrap());
        (fp - fm) / (2.0 * FD_STEP)
    };
    let smooth = |k: usize| {
        let pos = g.coords(k / 3)[k % 3] as f64 + x[k];
        (pos - pos.round()).abs() > 2.0 * FD_STEP
    };
    let floor = 1e-2 * a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut support: Vec<usize> = (0..x.len())
        .filter(|&k| a[k].abs() >= floor && a[k] != 0.0 && smooth(k))
        .collect();
    support.shuffle(rng);
    let picked = &support[..support.len().min(FD_COMPONENTS)];
    let mut max_rel: f64 = 0.0;
    for &k in picked {
        let n = fd(k);
        let rel = (a[k] - n).abs() / a[k].abs().max(n.abs());
        max_rel = max_rel.max(rel);
    }
    let mut max_off: f64 = 0.0;
    if off_support {
        for k in (0..x.len()).filter(|&k| a[k] == 0.0 && smooth(k)) {
            max_off = max_off.max(fd(k).abs());
        }
    }
    GradCheck {
        max_rel,
        checked: picked.len(),
        max_off_support: max_off,
    }
}

pub fn mi_check(seed: u64, off_support: bool) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = VolumeGrid::with_dims(FD_DIMS).unwrap();
    let fixed = smooth_image(&mut rng, g);
    let moving = smooth_image(&mut rng, g);
    let field = interior_field(&mut rng, g, 1.5);
    // the gradient treats an automatic range as constant, so pin it
    let spec = MISpec::default().with_range(-0.05, 1.05);
    let interp = InterpSpec::TRILINEAR_ZEROS;
    let analytic = mi_gradient(&fixed, &moving, &field, &spec, interp).unwrap();
    check_gradient(
        &mut rng,
        &field,
        &analytic,
        |f| {
            let w = warp_volume(&moving, f, interp).unwrap();
            -mutual_information(&fixed, &w, &spec).unwrap()
        },
        off_support,
    )
}

pub fn dice_check(seed: u64, off_support: bool) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = VolumeGrid::with_dims(FD_DIMS).unwrap();
    let fixed = blob_mask(&mut rng, g);
    let moving = blob_mask(&mut rng, g);
    let field = random_field(&mut rng, g, 1.2);
    let organs = [2u8, 3, BODY];
    let interp = InterpSpec::TRILINEAR_ZEROS;
    let analytic = soft_dice_gradient(&fixed, &moving, &organs, &field, interp).unwrap();
    check_gradient(
        &mut rng,
        &field,
        &analytic,
        |f| {
            let probs: Vec<Volume3D> = organs
                .iter()
                .map(|&l| warp_volume(&moving.organ_indicator(l), f, interp).unwrap())
                .collect();
            1.0 - soft_dice(&fixed, &probs, &organs).unwrap()
        },
        off_support,
    )
}

pub fn bending_check(seed: u64, off_support: bool) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = VolumeGrid::with_dims(FD_DIMS).unwrap();
    let field = random_field(&mut rng, g, 2.0);
    let analytic = bending_gradient(&field);
    check_gradient(&mut rng, &field, &analytic, bending_energy, off_support)
}

pub fn labels(list: &[u8]) -> BTreeSet<u8> {
    list.iter().copied().collect()
}
