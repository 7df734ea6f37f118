//! Jacobian determinants and folding for a few closed-form fields.
//!
//! cargo run --release --example folding_metrics

use fieldcascade::losses::bending_energy;
use fieldcascade::metrics::{folding_percentage, jacobian_determinant};
use fieldcascade::{DisplacementField, VolumeGrid};

fn field(
    g: VolumeGrid,
    f: impl Fn([f64; 3]) -> [f64; 3],
) -> fieldcascade::Result<DisplacementField> {
    DisplacementField::from_vectors(
        g,
        (0..g.len())
            .map(|i| f(g.coords(i).map(|c| c as f64)))
            .collect(),
    )
}

fn main() -> fieldcascade::Result<()> {
    let g = VolumeGrid::with_dims([16, 16, 16])?;
    let cases: Vec<(&str, DisplacementField)> = vec![
        ("stretch u_x = 0.5x", field(g, |p| [0.5 * p[0], 0.0, 0.0])?),
        ("fold u_x = -1.5x", field(g, |p| [-1.5 * p[0], 0.0, 0.0])?),
        ("shear u_x = 0.3y", field(g, |p| [0.3 * p[1], 0.0, 0.0])?),
        (
            "swirl",
            field(g, |p| {
                let (x, y) = (p[0] - 7.5, p[1] - 7.5);
                let a = 2.0 * (-(x * x + y * y) / 18.0).exp();
                [-a * y, a * x, 0.0]
            })?,
        ),
    ];
    println!(
        "{:<20} {:>9} {:>9} {:>9} {:>11}",
        "field", "min det", "max det", "folding%", "bending"
    );
    for (name, u) in &cases {
        let det = jacobian_determinant(u);
        let (lo, hi) = det
            .data()
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!(
            "{name:<20} {lo:>9.4} {hi:>9.4} {:>9.2} {:>11.3e}",
            folding_percentage(u),
            bending_energy(u)
        );
    }
    Ok(())
}
