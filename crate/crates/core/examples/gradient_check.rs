//! Compares the analytic gradients of the three loss terms with central
//! differences at a few components of a random field.
//!
//! cargo run --release --example gradient_check -- [seed]

use fieldcascade::filter::gaussian_smooth;
use fieldcascade::losses::{
    bending_energy, bending_gradient, mi_gradient, mutual_information, soft_dice,
    soft_dice_gradient, MISpec,
};
use fieldcascade::warp::{warp_volume, InterpSpec};
use fieldcascade::{DisplacementField, LabelMask, Volume3D, VolumeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

fn central(field: &DisplacementField, k: usize, f: &dyn Fn(&DisplacementField) -> f64) -> f64 {
    let g = *field.grid();
    let mut x = field.to_flat();
    x[k] += H;
    let plus = f(&DisplacementField::from_flat(g, &x).unwrap());
    x[k] -= 2.0 * H;
    let minus = f(&DisplacementField::from_flat(g, &x).unwrap());
    (plus - minus) / (2.0 * H)
}

fn main() -> fieldcascade::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = VolumeGrid::with_dims([12, 12, 12])?;
    let mut image = || {
        let noise: Vec<f64> = (0..g.len()).map(|_| rng.gen()).collect();
        Volume3D::from_data(g, gaussian_smooth(&noise, g.dims(), 1.5))
    };
    let (fixed, moving) = (image()?, image()?);
    let ball = |c: f64| {
        let labels = (0..g.len())
            .map(|i| {
                let d2: f64 = g.coords(i).iter().map(|&v| (v as f64 - c).powi(2)).sum();
                if d2 < 12.0 {
                    3
                } else {
                    1
                }
            })
            .collect();
        LabelMask::with_default_names(g, labels)
    };
    let (fmask, mmask) = (ball(5.5)?, ball(6.2)?);
    let field = DisplacementField::from_vectors(
        g,
        (0..g.len())
            .map(|_| [0; 3].map(|_| rng.gen_range(-0.7..0.7)))
            .collect(),
    )?;
    let interp = InterpSpec::default();
    let spec = MISpec::default().with_range(-0.1, 1.1);
    let organs = [3u8];

    let mi = |f: &DisplacementField| {
        -mutual_information(&fixed, &warp_volume(&moving, f, interp).unwrap(), &spec).unwrap()
    };
    let dice = |f: &DisplacementField| {
        let p = warp_volume(&mmask.organ_indicator(3), f, interp).unwrap();
        1.0 - soft_dice(&fmask, &[p], &organs).unwrap()
    };
    let terms: [(&str, DisplacementField, &dyn Fn(&DisplacementField) -> f64); 3] = [
        (
            "-MI",
            mi_gradient(&fixed, &moving, &field, &spec, interp)?,
            &mi,
        ),
        (
            "1-Dice",
            soft_dice_gradient(&fmask, &mmask, &organs, &field, interp)?,
            &dice,
        ),
        ("bending", bending_gradient(&field), &bending_energy),
    ];
    for (name, analytic, loss) in terms {
        let a = analytic.to_flat();
        let mut picked: Vec<usize> = (0..a.len()).filter(|&k| a[k] != 0.0).collect();
        picked.sort_by(|&i, &j| a[j].abs().total_cmp(&a[i].abs()));
        println!("{name}");
        for &k in picked.iter().take(4) {
            let n = central(&field, k, loss);
            println!(
                "  component {k:>5}: analytic {:+.6e}  central {n:+.6e}",
                a[k]
            );
        }
    }
    Ok(())
}
