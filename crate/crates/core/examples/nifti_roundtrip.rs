//! Writes an int16-range volume as gzipped NIfTI, reads it back and prints
//! the header summary and the largest round-trip error.
//!
//! cargo run --release --example nifti_roundtrip -- [output.nii.gz]

use fieldcascade::nifti::{read_volume, write_volume, HeaderHints};
use fieldcascade::{Volume3D, VolumeGrid};

fn main() -> fieldcascade::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("fieldcascade_roundtrip.nii.gz")
            .display()
            .to_string()
    });
    let grid = VolumeGrid::new([40, 32, 24], [0.8, 0.8, 2.0], [-16.0, -12.8, 0.0])?;
    let data = (0..grid.len())
        .map(|i| {
            let [x, y, z] = grid.coords(i);
            -1024.0 + 40.0 * x as f64 + 3.5 * y as f64 - 10.0 * z as f64
        })
        .collect();
    let vol = Volume3D::from_data(grid, data)?;
    let hints = HeaderHints {
        description: "ramp".into(),
    };
    write_volume(&vol, &hints, &path)?;
    let (back, header) = read_volume(&path)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&header).expect("header serializes")
    );
    let err = vol
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "dims {:?} spacing {:?}",
        back.grid().dims(),
        back.grid().spacing()
    );
    println!("max |difference| {err:.3e} after roundtrip through {path}");
    Ok(())
}
