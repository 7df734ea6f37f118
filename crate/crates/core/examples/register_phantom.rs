//! Full cascade on a deformed phantom, reporting endpoint error, Dice and
//! folding against the known field.
//!
//! cargo run --release --example register_phantom -- [seed] [deform_max]

use std::time::Instant;

use fieldcascade::cascade::{run_cascade, total_field, CascadePlan, KIDNEY, LIVER, LUNG, PANCREAS};
use fieldcascade::metrics::{evaluate_pair, mean_endpoint_error};
use fieldcascade::phantom::{generate_phantom, PhantomSpec};
use fieldcascade::{zero_field, BODY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let deform = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8.0);
    let pair = generate_phantom(&PhantomSpec {
        seed,
        deform_max_voxels: deform,
        ..PhantomSpec::default()
    })?;
    let plan = CascadePlan::default();
    let start = Instant::now();
    let stages = run_cascade(
        &pair.fixed,
        &pair.moving,
        &pair.fixed_mask,
        &pair.moving_mask,
        &plan,
    )?;
    let elapsed = start.elapsed();
    let total = total_field(&stages)?;

    let organs = [BODY, LUNG, LIVER, KIDNEY, PANCREAS];
    let grid = *pair.fixed.grid();
    let body = pair.fixed_mask.region(&[BODY].into());
    let raw = evaluate_pair(
        &pair.fixed_mask,
        &pair.moving_mask,
        &zero_field(grid),
        &organs,
    )?;
    let reg = evaluate_pair(&pair.fixed_mask, &pair.moving_mask, &total, &organs)?;
    for s in &stages {
        let first = s.loss_trace.first().map_or(f64::NAN, |b| b.total);
        let last = s.loss_trace.last().copied().unwrap();
        println!(
            "{:>10}: total {first:.4} -> {:.4}  (mi {:.4}, dice {:.4}, be {:.5})  epe {:.3}",
            s.name,
            last.total,
            last.mi,
            last.dice,
            last.bending,
            mean_endpoint_error(&s.cumulative_field, &pair.true_field, Some(&body))?,
        );
    }
    println!("{:>9}  {:>6}  {:>6}", "organ", "raw", "reg");
    for (organ, d) in &raw.per_organ_dice {
        println!("{organ:>9}  {d:6.3}  {:6.3}", reg.per_organ_dice[organ]);
    }
    println!(
        "epe body {:.3}  epe all {:.3}  folding {:.3}%  time {:.1?}",
        mean_endpoint_error(&total, &pair.true_field, Some(&body))?,
        mean_endpoint_error(&total, &pair.true_field, None)?,
        reg.folding_percent,
        elapsed
    );
    Ok(())
}
