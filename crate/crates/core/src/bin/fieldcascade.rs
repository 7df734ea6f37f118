//! Command-line front end. Exit status: 0 success, 1 partial cohort
//! failure, 2 usage or configuration error, 3 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fieldcascade::cascade::CombineMode;
use fieldcascade::harness::{self, CohortOptions, FieldSource, RunConfig};
use fieldcascade::phantom::{AffineJitter, PhantomSpec};
use fieldcascade::preprocess::{Normalization, PreprocessSpec};
use fieldcascade::Error;

#[derive(Parser)]
#[command(
    name = "fieldcascade",
    version,
    about = "Multi-stage deformable registration of whole-body CT"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Combine {
    Sum,
    Compose,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom pair with its ground-truth deformation.
    Phantom {
        #[arg(long, default_value = "64,48,40")]
        dims: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "deform-max", default_value_t = 8.0)]
        deform_max: f64,
        /// Disable the random affine component.
        #[arg(long)]
        no_affine: bool,
        /// Write this many phantoms (seeds seed, seed+1, ...) and a pairs
        /// manifest instead of a single pair.
        #[arg(long)]
        cohort: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register a moving image to a fixed image.
    Register {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long = "fixed-mask")]
        fixed_mask: PathBuf,
        #[arg(long = "moving-mask")]
        moving_mask: PathBuf,
        /// TOML plan file, or builtin:default / builtin:wholebody_only /
        /// builtin:affine_only.
        #[arg(long)]
        plan: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        combine: Option<Combine>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a displacement field on a mask pair and append to a CSV report.
    Evaluate {
        #[arg(long = "fixed-mask")]
        fixed_mask: PathBuf,
        #[arg(long = "moving-mask")]
        moving_mask: PathBuf,
        /// Field prefix (files PREFIX_ux.nii.gz etc.) or `zero`.
        #[arg(long)]
        field: String,
        /// Comma-separated organ names or labels; default: all present.
        #[arg(long, value_delimiter = ',')]
        organs: Option<Vec<String>>,
        #[arg(long, default_value = "pair")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize, crop to the body and resample a volume.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "body-mask")]
        body_mask: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "target-dims", default_value = "256,192,160")]
        target_dims: String,
        /// minmax_01 or window:LO,HI
        #[arg(long, default_value = "minmax_01")]
        normalize: String,
        #[arg(long, default_value_t = 2)]
        margin: usize,
    },
    /// Register and evaluate every pair of a manifest.
    Cohort {
        #[arg(long = "pairs-manifest")]
        pairs_manifest: PathBuf,
        #[arg(long)]
        plan: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Phantom {
            dims,
            seed,
            deform_max,
            no_affine,
            cohort,
            out,
        } => {
            let mut spec = PhantomSpec {
                dims: harness::parse_dims(&dims)?,
                seed,
                deform_max_voxels: deform_max,
                ..PhantomSpec::default()
            };
            if no_affine {
                spec.affine_jitter = AffineJitter::none();
            }
            spec.validate()?;
            match cohort {
                Some(n) => {
                    let seeds: Vec<u64> = (seed..seed + n).collect();
                    let manifest = harness::write_phantom_cohort(&spec, &seeds, &out)?;
                    println!("wrote {n} phantoms; pairs manifest {}", manifest.display());
                }
                None => {
                    let (_, files) = harness::write_phantom(&spec, &out)?;
                    println!("wrote phantom to {}", out.display());
                    println!("manifest {}", files.manifest.display());
                }
            }
            Ok(0)
        }
        Command::Register {
            fixed,
            moving,
            fixed_mask,
            moving_mask,
            plan,
            out,
            combine,
            seed,
        } => {
            let mut plan = harness::load_plan(&plan)?;
            match combine {
                Some(Combine::Sum) => plan.combine = CombineMode::SumFields,
                Some(Combine::Compose) => plan.combine = CombineMode::ComposeWarps,
                None => {}
            }
            let cfg = RunConfig {
                fixed,
                moving,
                fixed_mask,
                moving_mask,
                seed: seed.unwrap_or(plan.seed),
                plan,
                preprocess: None,
                out,
            };
            let r = harness::run_register(&cfg)?;
            for (organ, d) in &r.registered.per_organ_dice {
                let raw = r.raw.per_organ_dice.get(organ).copied().unwrap_or(f64::NAN);
                println!("{organ:<10} dice {raw:.4} -> {d:.4}");
            }
            println!(
                "folding {:.4}%  mean |u| {:.4} voxels  outputs in {}",
                r.registered.folding_percent,
                r.registered.mean_abs_displacement,
                cfg.out.display()
            );
            Ok(0)
        }
        Command::Evaluate {
            fixed_mask,
            moving_mask,
            field,
            organs,
            method,
            out,
        } => {
            let source: FieldSource = field.parse()?;
            let m = harness::run_evaluate(
                &fixed_mask,
                &moving_mask,
                &source,
                organs.as_deref(),
                &method,
                &out,
            )?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
            Ok(0)
        }
        Command::Preprocess {
            input,
            body_mask,
            out,
            target_dims,
            normalize,
            margin,
        } => {
            let spec = PreprocessSpec {
                target_dims: harness::parse_dims(&target_dims)?,
                normalize: normalize.parse::<Normalization>()?,
                crop_margin_voxels: margin,
            };
            let p = harness::run_preprocess(&input, &body_mask, &out, &spec)?;
            println!(
                "wrote {:?} volume to {}",
                p.volume.grid().dims(),
                out.display()
            );
            Ok(0)
        }
        Command::Cohort {
            pairs_manifest,
            plan,
            out,
            resume,
            jobs,
        } => {
            let plan = harness::load_plan(&plan)?;
            let r =
                harness::run_cohort(&pairs_manifest, &plan, &out, CohortOptions { resume, jobs })?;
            if let Some(report) = &r.report {
                print!("{}", report.to_text());
            }
            for (id, e) in &r.failed {
                eprintln!("pair {id} failed: {e}");
            }
            Ok(if r.failed.is_empty() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
