//! Bending energy: squared second derivatives of the displacement, from
//! central differences in voxel units, averaged over interior voxels and
//! components.

use crate::volume::DisplacementField;

/// Second-derivative stencils need three samples along every axis.
pub fn bending_defined(dims: [usize; 3]) -> bool {
    dims.iter().all(|&d| d >= 3)
}

fn interior_count(dims: [usize; 3]) -> usize {
    (dims[0] - 2) * (dims[1] - 2) * (dims[2] - 2)
}

/// Energy and, when `grad` is given, its gradient accumulated into it.
pub(crate) fn bending_energy_into(
    vectors: &[[f64; 3]],
    dims: [usize; 3],
    mut grad: Option<&mut [[f64; 3]]>,
    scale: f64,
) -> f64 {
    if !bending_defined(dims) {
        log::warn!("bending energy undefined for dims {dims:?}; returning 0");
        return 0.0;
    }
    let [nx, ny, _] = dims;
    let (sx, sy, sz) = (1usize, nx, nx * ny);
    let norm = 1.0 / (3 * interior_count(dims)) as f64;
    let mut total = 0.0;
    for z in 1..dims[2] - 1 {
        for y in 1..dims[1] - 1 {
            for x in 1..dims[0] - 1 {
                let i = x + nx * (y + ny * z);
                for c in 0..3 {
                    let u = |j: usize| vectors[j][c];
                    let dxx = u(i + sx) - 2.0 * u(i) + u(i - sx);
                    let dyy = u(i + sy) - 2.0 * u(i) + u(i - sy);
                    let dzz = u(i + sz) - 2.0 * u(i) + u(i - sz);
                    let dxy =
                        0.25 * (u(i + sx + sy) - u(i + sx - sy) - u(i - sx + sy) + u(i - sx - sy));
                    let dxz =
                        0.25 * (u(i + sx + sz) - u(i + sx - sz) - u(i - sx + sz) + u(i - sx - sz));
                    let dyz =
                        0.25 * (u(i + sy + sz) - u(i + sy - sz) - u(i - sy + sz) + u(i - sy - sz));
                    total += dxx * dxx
                        + dyy * dyy
                        + dzz * dzz
                        + 2.0 * (dxy * dxy + dxz * dxz + dyz * dyz);
                    if let Some(g) = grad.as_deref_mut() {
                        let s = 2.0 * norm * scale;
                        for (d, st) in [(dxx, sx), (dyy, sy), (dzz, sz)] {
                            g[i + st][c] += s * d;
                            g[i][c] -= 2.0 * s * d;
                            g[i - st][c] += s * d;
                        }
                        for (d, a, b) in [(dxy, sx, sy), (dxz, sx, sz), (dyz, sy, sz)] {
                            // 2 * d * 1/4 from the mixed-term weight and stencil
                            let m = s * d * 0.5;
                            g[i + a + b][c] += m;
                            g[i + a - b][c] -= m;
                            g[i - a + b][c] -= m;
                            g[i - a - b][c] += m;
                        }
                    }
                }
            }
        }
    }
    total * norm
}

pub fn bending_energy(field: &DisplacementField) -> f64 {
    bending_energy_into(field.vectors(), field.grid().dims(), None, 1.0)
}

pub fn bending_gradient(field: &DisplacementField) -> DisplacementField {
    let mut g = vec![[0.0; 3]; field.grid().len()];
    bending_energy_into(field.vectors(), field.grid().dims(), Some(&mut g), 1.0);
    DisplacementField::from_parts(*field.grid(), g)
}
