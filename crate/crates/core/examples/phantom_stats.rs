//! Generates a phantom and prints raw and ground-truth-warped Dice.
//!
//! cargo run --release --example phantom_stats -- [seed] [deform_max]

use std::time::Instant;

use fieldcascade::cascade::{KIDNEY, LIVER, LUNG, PANCREAS};
use fieldcascade::metrics::{evaluate_pair, folding_percentage};
use fieldcascade::phantom::{generate_phantom, PhantomSpec};
use fieldcascade::warp::{warp_volume, InterpSpec};
use fieldcascade::{zero_field, BODY};

fn main() -> fieldcascade::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let deform = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8.0);
    let spec = PhantomSpec {
        seed,
        deform_max_voxels: deform,
        ..PhantomSpec::default()
    };
    let t = Instant::now();
    let p = generate_phantom(&spec)?;
    println!("generated {:?} in {:.2?}", spec.dims, t.elapsed());

    let organs = [BODY, LUNG, LIVER, KIDNEY, PANCREAS];
    for l in organs {
        println!(
            "{:>9}: {} voxels",
            p.fixed_mask.name_of(l).unwrap_or("?"),
            p.fixed_mask.count(l)
        );
    }
    let grid = *p.fixed.grid();
    let raw = evaluate_pair(&p.fixed_mask, &p.moving_mask, &zero_field(grid), &organs)?;
    let truth = evaluate_pair(&p.fixed_mask, &p.moving_mask, &p.true_field, &organs)?;
    println!("{:>9}  {:>6}  {:>6}", "organ", "raw", "truth");
    for (organ, d) in &raw.per_organ_dice {
        println!("{organ:>9}  {d:6.3}  {:6.3}", truth.per_organ_dice[organ]);
    }
    let w = warp_volume(&p.moving, &p.true_field, InterpSpec::default())?;
    let mad: f64 = w
        .data()
        .iter()
        .zip(p.fixed.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / grid.len() as f64;
    println!("mean |warp(moving, truth) - fixed| = {mad:.4}");
    println!(
        "true field: mean |u| {:.2}, max |u| {:.2}, folding {:.3}%",
        p.true_field.mean_magnitude(),
        p.true_field.max_magnitude(),
        folding_percentage(&p.true_field)
    );
    Ok(())
}
