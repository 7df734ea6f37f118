//! Crops a phantom to its body, resamples it to a fixed shape and reports
//! how the organs survive.
//!
//! cargo run --release --example preprocess_volume -- [nx,ny,nz]

use fieldcascade::cascade::{KIDNEY, LIVER, LUNG, PANCREAS};
use fieldcascade::harness::parse_dims;
use fieldcascade::phantom::{generate_phantom, PhantomSpec};
use fieldcascade::preprocess::{preprocess, Normalization, PreprocessSpec};
use fieldcascade::BODY;

fn main() -> fieldcascade::Result<()> {
    let target = match std::env::args().nth(1) {
        Some(s) => parse_dims(&s)?,
        None => [96, 72, 64],
    };
    let pair = generate_phantom(&PhantomSpec::default())?;
    let spec = PreprocessSpec {
        target_dims: target,
        normalize: Normalization::Window { lo: 0.1, hi: 0.9 },
        crop_margin_voxels: 2,
    };
    let out = preprocess(&pair.fixed, &pair.fixed_mask, &spec)?;
    println!(
        "{:?} -> crop {:?}..={:?} -> {:?}",
        pair.fixed.grid().dims(),
        out.crop_box.lo,
        out.crop_box.hi,
        out.volume.grid().dims()
    );
    println!("spacing {:?}", out.volume.grid().spacing());
    let (lo, hi) = out
        .volume
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("intensity range [{lo:.3}, {hi:.3}]");
    let cell = |s: [f64; 3]| s[0] * s[1] * s[2];
    let scale = cell(out.volume.grid().spacing()) / cell(pair.fixed.grid().spacing());
    for l in [BODY, LUNG, LIVER, KIDNEY, PANCREAS] {
        println!(
            "{:>9}: {:>7} voxels -> {:>8} voxels ({:.1} original-voxel equivalents)",
            pair.fixed_mask.name_of(l).unwrap_or("?"),
            pair.fixed_mask.count(l),
            out.mask.count(l),
            out.mask.count(l) as f64 * scale
        );
    }
    Ok(())
}
