//! Backward warping, affine maps and resolution pyramids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, IntensityUnit, LabelMask, Volume3D, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterpMode {
    #[default]
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Samples outside the grid read as 0.
    #[default]
    Zeros,
    /// Samples outside the grid read the nearest boundary voxel.
    Border,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InterpSpec {
    pub mode: InterpMode,
    pub padding: Padding,
}

impl InterpSpec {
    pub const TRILINEAR_ZEROS: InterpSpec = InterpSpec {
        mode: InterpMode::Trilinear,
        padding: Padding::Zeros,
    };
    pub const NEAREST_ZEROS: InterpSpec = InterpSpec {
        mode: InterpMode::Nearest,
        padding: Padding::Zeros,
    };
}

/// Read-only view of a scalar grid for sampling.
#[derive(Clone, Copy)]
pub(crate) struct Sampler<'a> {
    data: &'a [f64],
    dims: [usize; 3],
    padding: Padding,
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(data: &'a [f64], dims: [usize; 3], padding: Padding) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        Self {
            data,
            dims,
            padding,
        }
    }

    #[inline]
    fn at(&self, x: i64, y: i64, z: i64) -> f64 {
        let [nx, ny, nz] = self.dims.map(|d| d as i64);
        match self.padding {
            Padding::Zeros => {
                if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
                    0.0
                } else {
                    self.data[(x + nx * (y + ny * z)) as usize]
                }
            }
            Padding::Border => {
                let x = x.clamp(0, nx - 1);
                let y = y.clamp(0, ny - 1);
                let z = z.clamp(0, nz - 1);
                self.data[(x + nx * (y + ny * z)) as usize]
            }
        }
    }

    /// Clamps the position for border padding and reports which axes were
    /// clamped (their derivative is zero). Under zero padding a position more
    /// than one voxel outside already samples zeros only, so it is pulled in
    /// to keep the corner indices small.
    #[inline]
    fn prepare(&self, p: [f64; 3]) -> ([f64; 3], [bool; 3]) {
        match self.padding {
            Padding::Zeros => {
                let q = [0, 1, 2].map(|a| p[a].clamp(-2.0, self.dims[a] as f64 + 1.0));
                (q, [false; 3])
            }
            Padding::Border => {
                let mut q = p;
                let mut flat = [false; 3];
                for a in 0..3 {
                    let hi = (self.dims[a] - 1) as f64;
                    if q[a] < 0.0 {
                        q[a] = 0.0;
                        flat[a] = true;
                    } else if q[a] > hi {
                        q[a] = hi;
                        flat[a] = true;
                    }
                }
                (q, flat)
            }
        }
    }

    #[inline]
    pub(crate) fn trilinear(&self, p: [f64; 3]) -> f64 {
        let (p, _) = self.prepare(p);
        let x0 = p[0].floor();
        let y0 = p[1].floor();
        let z0 = p[2].floor();
        let (fx, fy, fz) = (p[0] - x0, p[1] - y0, p[2] - z0);
        let (x0, y0, z0) = (x0 as i64, y0 as i64, z0 as i64);
        let c000 = self.at(x0, y0, z0);
        let c100 = self.at(x0 + 1, y0, z0);
        let c010 = self.at(x0, y0 + 1, z0);
        let c110 = self.at(x0 + 1, y0 + 1, z0);
        let c001 = self.at(x0, y0, z0 + 1);
        let c101 = self.at(x0 + 1, y0, z0 + 1);
        let c011 = self.at(x0, y0 + 1, z0 + 1);
        let c111 = self.at(x0 + 1, y0 + 1, z0 + 1);
        let c00 = c000 + fx * (c100 - c000);
        let c10 = c010 + fx * (c110 - c010);
        let c01 = c001 + fx * (c101 - c001);
        let c11 = c011 + fx * (c111 - c011);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        c0 + fz * (c1 - c0)
    }

    /// Trilinear value and its spatial gradient. Exactly on a lattice plane
    /// the interpolant has a kink; there the minmod of the one-sided slopes is
    /// returned, which is the minimum-norm element of the subdifferential.
    #[inline]
    pub(crate) fn trilinear_with_gradient(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let (p, flat) = self.prepare(p);
        let base = [p[0].floor(), p[1].floor(), p[2].floor()];
        let f = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        let b = [base[0] as i64, base[1] as i64, base[2] as i64];
        // cell corners indexed [z][y][x]
        let mut c = [[[0.0f64; 2]; 2]; 2];
        for (k, plane) in c.iter_mut().enumerate() {
            for (j, row) in plane.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = self.at(b[0] + i as i64, b[1] + j as i64, b[2] + k as i64);
                }
            }
        }
        let w = |a: usize, t: usize| if t == 0 { 1.0 - f[a] } else { f[a] };

        let mut value = 0.0;
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    value += w(0, i) * w(1, j) * w(2, k) * c[k][j][i];
                }
            }
        }

        let mut grad = [0.0; 3];
        // x
        let mut fwd = 0.0;
        for k in 0..2 {
            for j in 0..2 {
                fwd += w(1, j) * w(2, k) * (c[k][j][1] - c[k][j][0]);
            }
        }
        grad[0] = if f[0] == 0.0 {
            let mut bwd = 0.0;
            for k in 0..2 {
                for j in 0..2 {
                    let prev = self.at(b[0] - 1, b[1] + j as i64, b[2] + k as i64);
                    bwd += w(1, j) * w(2, k) * (c[k][j][0] - prev);
                }
            }
            minmod(fwd, bwd)
        } else {
            fwd
        };
        // y
        let mut fwd = 0.0;
        for k in 0..2 {
            for i in 0..2 {
                fwd += w(0, i) * w(2, k) * (c[k][1][i] - c[k][0][i]);
            }
        }
        grad[1] = if f[1] == 0.0 {
            let mut bwd = 0.0;
            for k in 0..2 {
                for i in 0..2 {
                    let prev = self.at(b[0] + i as i64, b[1] - 1, b[2] + k as i64);
                    bwd += w(0, i) * w(2, k) * (c[k][0][i] - prev);
                }
            }
            minmod(fwd, bwd)
        } else {
            fwd
        };
        // z
        let mut fwd = 0.0;
        for j in 0..2 {
            for i in 0..2 {
                fwd += w(0, i) * w(1, j) * (c[1][j][i] - c[0][j][i]);
            }
        }
        grad[2] = if f[2] == 0.0 {
            let mut bwd = 0.0;
            for j in 0..2 {
                for i in 0..2 {
                    let prev = self.at(b[0] + i as i64, b[1] + j as i64, b[2] - 1);
                    bwd += w(0, i) * w(1, j) * (c[0][j][i] - prev);
                }
            }
            minmod(fwd, bwd)
        } else {
            fwd
        };
        for a in 0..3 {
            if flat[a] {
                grad[a] = 0.0;
            }
        }
        (value, grad)
    }

    #[inline]
    pub(crate) fn nearest(&self, p: [f64; 3]) -> f64 {
        self.at(
            p[0].round() as i64,
            p[1].round() as i64,
            p[2].round() as i64,
        )
    }
}

fn check_field(field: &DisplacementField) -> Result<()> {
    if field.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("displacement field"))
    }
}

#[inline]
pub(crate) fn sample_position(grid: &VolumeGrid, index: usize, u: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = grid.coords(index);
    [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]]
}

/// Output voxel `p` samples `moving` at `p + u(p)`.
pub fn warp_volume(
    moving: &Volume3D,
    field: &DisplacementField,
    spec: InterpSpec,
) -> Result<Volume3D> {
    moving.grid().ensure_matches(field.grid(), "warp_volume")?;
    check_field(field)?;
    Ok(warp_data(moving.data(), field, spec, moving.unit()))
}

pub(crate) fn warp_data(
    data: &[f64],
    field: &DisplacementField,
    spec: InterpSpec,
    unit: IntensityUnit,
) -> Volume3D {
    let grid = *field.grid();
    let sampler = Sampler::new(data, grid.dims(), spec.padding);
    let out = field
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let p = sample_position(&grid, i, u);
            match spec.mode {
                InterpMode::Trilinear => sampler.trilinear(p),
                InterpMode::Nearest => sampler.nearest(p),
            }
        })
        .collect();
    Volume3D::from_parts(grid, out, unit)
}

/// Warped values together with the spatial gradient of the moving image at
/// each sampling point.
pub(crate) fn warp_with_gradient(
    data: &[f64],
    field: &DisplacementField,
    padding: Padding,
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let grid = *field.grid();
    let sampler = Sampler::new(data, grid.dims(), padding);
    let mut values = Vec::with_capacity(grid.len());
    let mut grads = Vec::with_capacity(grid.len());
    for (i, &u) in field.vectors().iter().enumerate() {
        let (v, g) = sampler.trilinear_with_gradient(sample_position(&grid, i, u));
        values.push(v);
        grads.push(g);
    }
    (values, grads)
}

/// Nearest-neighbour label warp with zero fill outside the grid.
pub fn warp_mask(mask: &LabelMask, field: &DisplacementField) -> Result<LabelMask> {
    mask.grid().ensure_matches(field.grid(), "warp_mask")?;
    check_field(field)?;
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims().map(|d| d as i64);
    let src = mask.labels();
    let labels = field
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let p = sample_position(&grid, i, u);
            let (x, y, z) = (
                p[0].round() as i64,
                p[1].round() as i64,
                p[2].round() as i64,
            );
            if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
                0
            } else {
                src[(x + nx * (y + ny * z)) as usize]
            }
        })
        .collect();
    Ok(LabelMask::from_parts(
        grid,
        labels,
        mask.label_names().clone(),
    ))
}

/// Twelve affine coefficients, row-major `[A | t]`, acting on voxel
/// coordinates: `x' = A x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub m: [f64; 12],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub const fn identity() -> Self {
        Self {
            m: [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn from_matrix(a: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = [0.0; 12];
        for r in 0..3 {
            m[4 * r] = a[r][0];
            m[4 * r + 1] = a[r][1];
            m[4 * r + 2] = a[r][2];
            m[4 * r + 3] = t[r];
        }
        Self { m }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], t)
    }

    pub fn linear(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn offset(&self) -> [f64; 3] {
        [self.m[3], self.m[7], self.m[11]]
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.linear())
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    /// Builds the corner-origin map from a linear part acting about `center`:
    /// `x' = A (x - c) + c + t_c`.
    pub fn from_centered(a: [[f64; 3]; 3], centered_t: [f64; 3], center: [f64; 3]) -> Self {
        let mut t = [0.0; 3];
        for r in 0..3 {
            let ac: f64 = (0..3).map(|k| a[r][k] * center[k]).sum();
            t[r] = centered_t[r] + center[r] - ac;
        }
        Self::from_matrix(a, t)
    }

    /// Inverse of [`AffineParams::from_centered`]: the translation in the
    /// centered frame.
    pub fn centered_offset(&self, center: [f64; 3]) -> [f64; 3] {
        let a = self.linear();
        let t = self.offset();
        let mut out = [0.0; 3];
        for r in 0..3 {
            let ac: f64 = (0..3).map(|k| a[r][k] * center[k]).sum();
            out[r] = t[r] - center[r] + ac;
        }
        out
    }

    /// Rotation (degrees, applied as Rz*Ry*Rx) with isotropic scale about
    /// `center`, followed by translation.
    pub fn rigid_scale(
        rotation_deg: [f64; 3],
        scale: f64,
        translation: [f64; 3],
        center: [f64; 3],
    ) -> Self {
        let [ax, ay, az] = rotation_deg.map(f64::to_radians);
        let rx = [
            [1.0, 0.0, 0.0],
            [0.0, ax.cos(), -ax.sin()],
            [0.0, ax.sin(), ax.cos()],
        ];
        let ry = [
            [ay.cos(), 0.0, ay.sin()],
            [0.0, 1.0, 0.0],
            [-ay.sin(), 0.0, ay.cos()],
        ];
        let rz = [
            [az.cos(), -az.sin(), 0.0],
            [az.sin(), az.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ];
        let r = matmul3(&rz, &matmul3(&ry, &rx));
        let a = r.map(|row| row.map(|v| v * scale));
        Self::from_centered(a, translation, center)
    }
}

pub(crate) fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub(crate) fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

/// Dense realization `u(p) = A p + t - p`.
pub fn affine_to_field(params: &AffineParams, grid: VolumeGrid) -> DisplacementField {
    let vectors = (0..grid.len())
        .map(|i| {
            let [x, y, z] = grid.coords(i);
            let p = [x as f64, y as f64, z as f64];
            let q = params.apply(p);
            [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
        })
        .collect();
    DisplacementField::from_parts(grid, vectors)
}

/// Block-mean pooling by an integer factor; trailing voxels that do not fill
/// a whole block are dropped.
pub fn downsample(vol: &Volume3D, factor: usize) -> Result<Volume3D> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!(
            "downsample factor must be >= 2, got {factor}"
        )));
    }
    let src = vol.grid();
    let dims = src.dims().map(|d| d / factor);
    if dims.contains(&0) {
        return Err(Error::EmptyDimension(dims));
    }
    let spacing = src.spacing().map(|s| s * factor as f64);
    let shift = (factor as f64 - 1.0) / 2.0;
    let origin = [
        src.origin()[0] + shift * src.spacing()[0],
        src.origin()[1] + shift * src.spacing()[1],
        src.origin()[2] + shift * src.spacing()[2],
    ];
    let grid = VolumeGrid::new(dims, spacing, origin)?;
    let norm = 1.0 / (factor * factor * factor) as f64;
    let data = vol.data();
    let mut out = vec![0.0; grid.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut acc = 0.0;
                for dz in 0..factor {
                    for dy in 0..factor {
                        let row = src.index(x * factor, y * factor + dy, z * factor + dz);
                        acc += data[row..row + factor].iter().sum::<f64>();
                    }
                }
                out[grid.index(x, y, z)] = acc * norm;
            }
        }
    }
    Ok(Volume3D::from_parts(grid, out, vol.unit()))
}

/// Trilinear prolongation of a field onto a finer grid covering the same
/// extent. Voxel centres are aligned and each component is rescaled by the
/// per-axis size ratio so the result stays in target voxel units.
pub fn upsample_field(field: &DisplacementField, target: VolumeGrid) -> Result<DisplacementField> {
    let sd = field.grid().dims();
    let td = target.dims();
    if (0..3).any(|a| td[a] < sd[a]) {
        return Err(Error::InvalidArgument(format!(
            "upsample target {td:?} smaller than source {sd:?}"
        )));
    }
    let ratio = [
        td[0] as f64 / sd[0] as f64,
        td[1] as f64 / sd[1] as f64,
        td[2] as f64 / sd[2] as f64,
    ];
    let comps = field.components();
    let samplers = [
        Sampler::new(comps[0].data(), sd, Padding::Border),
        Sampler::new(comps[1].data(), sd, Padding::Border),
        Sampler::new(comps[2].data(), sd, Padding::Border),
    ];
    let vectors = (0..target.len())
        .map(|i| {
            let [x, y, z] = target.coords(i);
            let s = [
                (x as f64 + 0.5) / ratio[0] - 0.5,
                (y as f64 + 0.5) / ratio[1] - 0.5,
                (z as f64 + 0.5) / ratio[2] - 0.5,
            ];
            [
                samplers[0].trilinear(s) * ratio[0],
                samplers[1].trilinear(s) * ratio[1],
                samplers[2].trilinear(s) * ratio[2],
            ]
        })
        .collect();
    Ok(DisplacementField::from_parts(target, vectors))
}
