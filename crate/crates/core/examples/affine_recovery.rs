//! Recovers a known translation, rotation and scale with the affine stage.
//!
//! cargo run --release --example affine_recovery

use fieldcascade::cascade::{run_stage, StageConfig};
use fieldcascade::metrics::mean_endpoint_error;
use fieldcascade::phantom::{generate_phantom, PhantomSpec, RigidScale};
use fieldcascade::warp::affine_to_field;
use fieldcascade::zero_field;

fn main() -> fieldcascade::Result<()> {
    let spec = PhantomSpec {
        deform_max_voxels: 0.0,
        affine_override: Some(RigidScale {
            translation: [5.0, -3.0, 2.0],
            rotation_deg: [0.0, 0.0, 5.0],
            scale: 1.03,
        }),
        ..PhantomSpec::default()
    };
    let pair = generate_phantom(&spec)?;
    let grid = *pair.fixed.grid();
    let t = std::time::Instant::now();
    let r = run_stage(
        &pair.fixed,
        &pair.moving,
        &pair.fixed_mask,
        &pair.moving_mask,
        &zero_field(grid),
        &StageConfig::affine(),
    )?;
    let found = r.affine.expect("affine stage");
    let truth = affine_to_field(&pair.true_affine, grid);
    let epe = mean_endpoint_error(&r.field, &truth, None)?;
    println!(
        "true  {:?}",
        pair.true_affine.m.map(|v| (v * 1000.0).round() / 1000.0)
    );
    println!("found {:?}", found.m.map(|v| (v * 1000.0).round() / 1000.0));
    for (k, level) in r.level_traces.iter().enumerate() {
        println!(
            "level {k}: {} accepted, {:.5} -> {:.5}",
            level.len(),
            level.first().map_or(f64::NAN, |b| b.total),
            level.last().map_or(f64::NAN, |b| b.total)
        );
    }
    println!(
        "mean endpoint error {epe:.3} voxels ({:?}, {:.1?})",
        r.stop_reason,
        t.elapsed()
    );
    Ok(())
}
