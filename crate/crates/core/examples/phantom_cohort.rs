//! Writes a small phantom cohort, registers it with the default plan and the
//! whole-body-only plan, and prints both reports.
//!
//! cargo run --release --example phantom_cohort -- [pairs] [out_dir]

use std::path::PathBuf;

use fieldcascade::cascade::CascadePlan;
use fieldcascade::harness::{run_cohort, write_phantom_cohort, CohortOptions};
use fieldcascade::phantom::PhantomSpec;

fn main() -> fieldcascade::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let out = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fieldcascade_cohort"));
    let base = PhantomSpec {
        dims: [48, 36, 32],
        ..PhantomSpec::default()
    };
    let seeds: Vec<u64> = (0..n).collect();
    let manifest = write_phantom_cohort(&base, &seeds, &out.join("phantoms"))?;
    let plan = CascadePlan::default();
    for (name, plan) in [
        ("cascade", plan.clone()),
        ("wholebody_only", CascadePlan::wholebody_only(&plan)),
    ] {
        let r = run_cohort(&manifest, &plan, &out.join(name), CohortOptions::default())?;
        println!("== {name} ({} pairs)", r.records.len());
        if let Some(report) = &r.report {
            print!("{}", report.to_text());
        }
        let epe: Vec<String> = r
            .records
            .iter()
            .filter_map(|p| p.endpoint_error.map(|e| format!("{}={e:.3}", p.id)))
            .collect();
        println!("body endpoint error: {}", epe.join(" "));
    }
    Ok(())
}
