//! NIfTI-1 single-file and header/image-pair reading, single-file writing.
//!
//! Volumes are returned in closest-axis RAS order: voxel axes 0, 1 and 2
//! increase toward +x, +y and +z of the RAS world frame. Files are written in
//! that order with an axis-aligned sform and qform.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, IntensityUnit, LabelMask, Volume3D, VolumeGrid};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAX_OBLIQUITY_DEG: f64 = 5.0;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

fn bitpix_of(datatype: i16) -> Option<i16> {
    match datatype {
        DT_UINT8 => Some(8),
        DT_INT16 => Some(16),
        DT_INT32 => Some(32),
        DT_FLOAT32 => Some(32),
        DT_FLOAT64 => Some(64),
        _ => None,
    }
}

/// What the file header said, before canonicalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiftiHeaderInfo {
    /// Stored dims, in file axis order.
    pub dims: [usize; 3],
    /// `pixdim[1..4]`, in file axis order.
    pub spacing: [f64; 3],
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub datatype: i16,
    pub qform_code: i16,
    pub sform_code: i16,
    /// Direction each stored axis points to, e.g. `"LPS"`; `"RAS"` means the
    /// file was already canonical.
    pub orientation: String,
    pub description: String,
}

/// Optional header content for [`write_volume`].
#[derive(Debug, Clone, Default)]
pub struct HeaderHints {
    /// Up to 79 bytes of free text in `descrip`.
    pub description: String,
}

/// Decoded header fields that matter for reading and writing.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawHeader {
    pub dims: [usize; 3],
    pub pixdim: [f64; 4],
    pub datatype: i16,
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f64; 3],
    pub qoffset: [f64; 3],
    pub srow: [[f64; 4]; 3],
    pub description: String,
    pub single_file: bool,
    pub big_endian: bool,
}

impl RawHeader {
    pub(crate) fn canonical(grid: &VolumeGrid, datatype: i16, description: &str) -> Self {
        let sp = grid.spacing();
        let o = grid.origin();
        Self {
            dims: grid.dims(),
            pixdim: [1.0, sp[0], sp[1], sp[2]],
            datatype,
            vox_offset: VOX_OFFSET,
            scl_slope: 1.0,
            scl_inter: 0.0,
            qform_code: 1,
            sform_code: 1,
            quatern: [0.0; 3],
            qoffset: o,
            srow: [
                [sp[0], 0.0, 0.0, o[0]],
                [0.0, sp[1], 0.0, o[1]],
                [0.0, 0.0, sp[2], o[2]],
            ],
            description: description.to_string(),
            single_file: true,
            big_endian: false,
        }
    }

    /// Voxel-to-world matrix: sform if set, else qform, else pixdim scaling.
    fn affine(&self) -> [[f64; 4]; 3] {
        if self.sform_code > 0 {
            return self.srow;
        }
        let [_, dx, dy, dz] = self.pixdim;
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern;
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let r = [
                [
                    a * a + b * b - c * c - d * d,
                    2.0 * (b * c - a * d),
                    2.0 * (b * d + a * c),
                ],
                [
                    2.0 * (b * c + a * d),
                    a * a + c * c - b * b - d * d,
                    2.0 * (c * d - a * b),
                ],
                [
                    2.0 * (b * d - a * c),
                    2.0 * (c * d + a * b),
                    a * a + d * d - c * c - b * b,
                ],
            ];
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let s = [dx, dy, qfac * dz];
            let mut m = [[0.0; 4]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = r[i][j] * s[j];
                }
                m[i][3] = self.qoffset[i];
            }
            return m;
        }
        [
            [dx, 0.0, 0.0, 0.0],
            [0.0, dy, 0.0, 0.0],
            [0.0, 0.0, dz, 0.0],
        ]
    }

    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut h = vec![0u8; HEADER_SIZE];
        let be = self.big_endian;
        let put_i32 = |h: &mut [u8], at: usize, v: i32| {
            let b = if be { v.to_be_bytes() } else { v.to_le_bytes() };
            h[at..at + 4].copy_from_slice(&b);
        };
        let put_i16 = |h: &mut [u8], at: usize, v: i16| {
            let b = if be { v.to_be_bytes() } else { v.to_le_bytes() };
            h[at..at + 2].copy_from_slice(&b);
        };
        let put_f32 = |h: &mut [u8], at: usize, v: f64| {
            let v = v as f32;
            let b = if be { v.to_be_bytes() } else { v.to_le_bytes() };
            h[at..at + 4].copy_from_slice(&b);
        };
        put_i32(&mut h, 0, HEADER_SIZE as i32);
        h[38] = b'r';
        put_i16(&mut h, 40, 3);
        for i in 0..3 {
            put_i16(&mut h, 42 + 2 * i, self.dims[i] as i16);
        }
        for i in 3..7 {
            put_i16(&mut h, 42 + 2 * i, 1);
        }
        put_i16(&mut h, 70, self.datatype);
        put_i16(&mut h, 72, bitpix_of(self.datatype).unwrap_or(0));
        for i in 0..4 {
            put_f32(&mut h, 76 + 4 * i, self.pixdim[i]);
        }
        for i in 4..8 {
            put_f32(&mut h, 76 + 4 * i, 1.0);
        }
        put_f32(&mut h, 108, self.vox_offset as f64);
        put_f32(&mut h, 112, self.scl_slope);
        put_f32(&mut h, 116, self.scl_inter);
        // xyzt_units: millimeters
        h[123] = 2;
        let desc = self.description.as_bytes();
        let n = desc.len().min(79);
        h[148..148 + n].copy_from_slice(&desc[..n]);
        put_i16(&mut h, 252, self.qform_code);
        put_i16(&mut h, 254, self.sform_code);
        for i in 0..3 {
            put_f32(&mut h, 256 + 4 * i, self.quatern[i]);
            put_f32(&mut h, 268 + 4 * i, self.qoffset[i]);
        }
        for (r, row) in self.srow.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                put_f32(&mut h, 280 + 16 * r + 4 * c, v);
            }
        }
        h[344..348].copy_from_slice(if self.single_file { b"n+1\0" } else { b"ni1\0" });
        if self.single_file {
            h.resize(self.vox_offset.max(HEADER_SIZE + 4), 0);
        }
        h
    }

    pub(crate) fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_SIZE {
            return Err(Error::nifti(
                format!("file holds {} bytes, header needs {HEADER_SIZE}", b.len()),
                b.len(),
            ));
        }
        let le = i32::from_le_bytes(b[0..4].try_into().unwrap());
        let big_endian = match le {
            348 => false,
            _ if i32::from_be_bytes(b[0..4].try_into().unwrap()) == 348 => true,
            _ => return Err(Error::nifti(format!("sizeof_hdr is {le}, expected 348"), 0)),
        };
        let i16_at = |at: usize| {
            let a = [b[at], b[at + 1]];
            if big_endian {
                i16::from_be_bytes(a)
            } else {
                i16::from_le_bytes(a)
            }
        };
        let f32_at = |at: usize| {
            let a = [b[at], b[at + 1], b[at + 2], b[at + 3]];
            f64::from(if big_endian {
                f32::from_be_bytes(a)
            } else {
                f32::from_le_bytes(a)
            })
        };
        let single_file = match &b[344..348] {
            b"n+1\0" => true,
            b"ni1\0" => false,
            _ => return Err(Error::nifti("magic is neither \"n+1\" nor \"ni1\"", 344)),
        };
        let ndim = i16_at(40);
        if !(1..=7).contains(&ndim) {
            return Err(Error::nifti(
                format!("dim[0] = {ndim} out of range 1..7"),
                40,
            ));
        }
        let mut dims = [1usize; 3];
        for i in 0..ndim as usize {
            let d = i16_at(42 + 2 * i);
            if d < 1 {
                return Err(Error::nifti(format!("dim[{}] = {d}", i + 1), 42 + 2 * i));
            }
            if i < 3 {
                dims[i] = d as usize;
            } else if d != 1 {
                return Err(Error::nifti(
                    format!("dim[{}] = {d}: only 3-D volumes are supported", i + 1),
                    42 + 2 * i,
                ));
            }
        }
        let datatype = i16_at(70);
        let expected_bits = bitpix_of(datatype).ok_or(Error::UnsupportedDatatype(datatype))?;
        let bitpix = i16_at(72);
        if bitpix != expected_bits {
            return Err(Error::nifti(
                format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
                72,
            ));
        }
        let mut pixdim = [0.0; 4];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = f32_at(76 + 4 * i);
        }
        for i in 1..4 {
            if dims[i - 1] > 1 || i <= ndim as usize {
                if !(pixdim[i].is_finite() && pixdim[i] > 0.0) {
                    return Err(Error::nifti(
                        format!("pixdim[{i}] = {} must be > 0", pixdim[i]),
                        76 + 4 * i,
                    ));
                }
            } else if !(pixdim[i] > 0.0) {
                pixdim[i] = 1.0;
            }
        }
        let vox = f32_at(108);
        if !(vox.is_finite() && vox >= 0.0) {
            return Err(Error::nifti(format!("vox_offset {vox}"), 108));
        }
        let vox_offset = vox as usize;
        if single_file && vox_offset < HEADER_SIZE {
            return Err(Error::nifti(
                format!("vox_offset {vox_offset} lies inside the header"),
                108,
            ));
        }
        let mut quatern = [0.0; 3];
        let mut qoffset = [0.0; 3];
        for i in 0..3 {
            quatern[i] = f32_at(256 + 4 * i);
            qoffset[i] = f32_at(268 + 4 * i);
        }
        let mut srow = [[0.0; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(280 + 16 * r + 4 * c);
            }
        }
        let desc = &b[148..228];
        let end = desc.iter().position(|&c| c == 0).unwrap_or(desc.len());
        Ok(Self {
            dims,
            pixdim,
            datatype,
            vox_offset,
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            qform_code: i16_at(252),
            sform_code: i16_at(254),
            quatern,
            qoffset,
            srow,
            description: String::from_utf8_lossy(&desc[..end]).into_owned(),
            single_file,
            big_endian,
        })
    }
}

/// Closest-axis reorientation of a voxel-to-world matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Reorientation {
    /// `axis_of[i]`: canonical axis fed by file axis `i`.
    axis_of: [usize; 3],
    flip: [bool; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

fn reorientation(affine: &[[f64; 4]; 3], dims: [usize; 3]) -> Result<Reorientation> {
    let mut axis_of = [0; 3];
    let mut flip = [false; 3];
    let mut spacing = [0.0; 3];
    let mut taken = [false; 3];
    for i in 0..3 {
        let col = [affine[0][i], affine[1][i], affine[2][i]];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Orientation(format!(
                "voxel axis {i} has a degenerate direction {col:?}"
            )));
        }
        let j = (0..3)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .unwrap();
        let angle = (col[j].abs() / norm).min(1.0).acos().to_degrees();
        if angle > MAX_OBLIQUITY_DEG {
            return Err(Error::Orientation(format!(
                "voxel axis {i} is {angle:.2} degrees off the nearest world axis; \
                 at most {MAX_OBLIQUITY_DEG} is accepted"
            )));
        }
        if taken[j] {
            return Err(Error::Orientation(format!(
                "two voxel axes map to world axis {j}"
            )));
        }
        taken[j] = true;
        axis_of[i] = j;
        flip[i] = col[j] < 0.0;
        spacing[j] = norm;
    }
    // world position of the voxel that becomes the canonical corner
    let corner: Vec<f64> = (0..3)
        .map(|i| if flip[i] { (dims[i] - 1) as f64 } else { 0.0 })
        .collect();
    let mut origin = [0.0; 3];
    for (r, o) in origin.iter_mut().enumerate() {
        *o = affine[r][3] + (0..3).map(|c| affine[r][c] * corner[c]).sum::<f64>();
    }
    Ok(Reorientation {
        axis_of,
        flip,
        spacing,
        origin,
    })
}

fn orientation_code(r: &Reorientation) -> String {
    let pos = ['R', 'A', 'S'];
    let neg = ['L', 'P', 'I'];
    (0..3)
        .map(|i| {
            if r.flip[i] {
                neg[r.axis_of[i]]
            } else {
                pos[r.axis_of[i]]
            }
        })
        .collect()
}

/// Reorders file-order samples into the canonical order.
fn reorder<T: Copy>(data: &[T], dims: [usize; 3], r: &Reorientation) -> ([usize; 3], Vec<T>) {
    let mut out_dims = [0; 3];
    for i in 0..3 {
        out_dims[r.axis_of[i]] = dims[i];
    }
    let mut out = Vec::with_capacity(data.len());
    let mut p = [0usize; 3];
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let q = [x, y, z];
                for i in 0..3 {
                    let v = q[r.axis_of[i]];
                    p[i] = if r.flip[i] { dims[i] - 1 - v } else { v };
                }
                out.push(data[p[0] + dims[0] * (p[1] + dims[1] * p[2])]);
            }
        }
    }
    (out_dims, out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn image_path_for(header_path: &Path) -> Result<PathBuf> {
    let name = header_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let stem = name
        .strip_suffix(".hdr.gz")
        .or_else(|| name.strip_suffix(".hdr"))
        .ok_or_else(|| {
            Error::nifti(
                format!(
                    "{} has magic \"ni1\" but is not a .hdr file",
                    header_path.display()
                ),
                344,
            )
        })?;
    let plain = header_path.with_file_name(format!("{stem}.img"));
    if plain.exists() {
        return Ok(plain);
    }
    Ok(header_path.with_file_name(format!("{stem}.img.gz")))
}

fn decode_samples(h: &RawHeader, bytes: &[u8]) -> Result<Vec<f64>> {
    let n: usize = h.dims.iter().product();
    let width = bitpix_of(h.datatype).ok_or(Error::UnsupportedDatatype(h.datatype))? as usize / 8;
    let need = n * width;
    let body = bytes.get(h.vox_offset..).unwrap_or(&[]);
    if body.len() < need {
        return Err(Error::nifti(
            format!("image data truncated: {} of {need} bytes", body.len()),
            h.vox_offset + body.len(),
        ));
    }
    let be = h.big_endian;
    let chunks = body[..need].chunks_exact(width);
    let out: Vec<f64> = match h.datatype {
        DT_UINT8 => body[..need].iter().map(|&v| f64::from(v)).collect(),
        DT_INT16 => chunks
            .map(|c| {
                let a = [c[0], c[1]];
                f64::from(if be {
                    i16::from_be_bytes(a)
                } else {
                    i16::from_le_bytes(a)
                })
            })
            .collect(),
        DT_INT32 => chunks
            .map(|c| {
                let a = c.try_into().unwrap();
                f64::from(if be {
                    i32::from_be_bytes(a)
                } else {
                    i32::from_le_bytes(a)
                })
            })
            .collect(),
        DT_FLOAT32 => chunks
            .map(|c| {
                let a = c.try_into().unwrap();
                f64::from(if be {
                    f32::from_be_bytes(a)
                } else {
                    f32::from_le_bytes(a)
                })
            })
            .collect(),
        DT_FLOAT64 => chunks
            .map(|c| {
                let a = c.try_into().unwrap();
                if be {
                    f64::from_be_bytes(a)
                } else {
                    f64::from_le_bytes(a)
                }
            })
            .collect(),
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let scaled = h.scl_slope != 0.0 && h.scl_slope.is_finite() && h.scl_inter.is_finite();
    if scaled && (h.scl_slope != 1.0 || h.scl_inter != 0.0) {
        return Ok(out
            .into_iter()
            .map(|v| v * h.scl_slope + h.scl_inter)
            .collect());
    }
    Ok(out)
}

/// Header, canonical grid and canonical-order samples of a file.
fn read_canonical(path: &Path) -> Result<(VolumeGrid, Vec<f64>, NiftiHeaderInfo)> {
    let bytes = read_bytes(path)?;
    let h = RawHeader::parse(&bytes)?;
    let samples = if h.single_file {
        decode_samples(&h, &bytes)?
    } else {
        let img = read_bytes(&image_path_for(path)?)?;
        decode_samples(&h, &img)?
    };
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::nifti(
            format!("non-finite sample at voxel {i}"),
            h.vox_offset,
        ));
    }
    let r = reorientation(&h.affine(), h.dims)?;
    let (dims, data) = reorder(&samples, h.dims, &r);
    let grid = VolumeGrid::new(dims, r.spacing, r.origin)?;
    let info = NiftiHeaderInfo {
        dims: h.dims,
        spacing: [h.pixdim[1], h.pixdim[2], h.pixdim[3]],
        scl_slope: h.scl_slope,
        scl_inter: h.scl_inter,
        datatype: h.datatype,
        qform_code: h.qform_code,
        sform_code: h.sform_code,
        orientation: orientation_code(&r),
        description: h.description.clone(),
    };
    Ok((grid, data, info))
}

/// Reads an intensity volume, applying `scl_slope`/`scl_inter` and
/// reorienting to canonical RAS order.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(Volume3D, NiftiHeaderInfo)> {
    let (grid, data, info) = read_canonical(path.as_ref())?;
    Ok((Volume3D::from_data(grid, data)?, info))
}

/// Reads a label volume. Samples must be integers in `0..=255`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(LabelMask, NiftiHeaderInfo)> {
    let path = path.as_ref();
    let (grid, data, info) = read_canonical(path)?;
    let mut labels = Vec::with_capacity(data.len());
    for (i, v) in data.into_iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "{}: voxel {i} holds {v}, not a label in 0..=255",
                path.display()
            )));
        }
        labels.push(v as u8);
    }
    Ok((LabelMask::with_default_names(grid, labels)?, info))
}

fn write_file(path: &Path, header: &RawHeader, payload: &[u8]) -> Result<()> {
    let mut bytes = header.encode();
    bytes.extend_from_slice(payload);
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes float32 samples; a `.gz` suffix selects gzip.
pub fn write_volume(vol: &Volume3D, hints: &HeaderHints, path: impl AsRef<Path>) -> Result<()> {
    let h = RawHeader::canonical(vol.grid(), DT_FLOAT32, &hints.description);
    let payload: Vec<u8> = vol
        .data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    write_file(path.as_ref(), &h, &payload)
}

/// Writes uint8 labels; a `.gz` suffix selects gzip.
pub fn write_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let h = RawHeader::canonical(mask.grid(), DT_UINT8, "label mask");
    write_file(path.as_ref(), &h, mask.labels())
}

/// Paths of the three component files of a field stored under `prefix`.
pub fn field_paths(prefix: impl AsRef<Path>) -> [PathBuf; 3] {
    let p = prefix.as_ref();
    let name = p
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    ["ux", "uy", "uz"].map(|c| p.with_file_name(format!("{name}_{c}.nii.gz")))
}

/// Writes a displacement field as three float32 scalar files.
pub fn write_field(field: &DisplacementField, prefix: impl AsRef<Path>) -> Result<[PathBuf; 3]> {
    let paths = field_paths(prefix);
    for (comp, (path, name)) in field
        .components()
        .iter()
        .zip(paths.iter().zip(["ux", "uy", "uz"]))
    {
        let hints = HeaderHints {
            description: format!("displacement {name} (voxels)"),
        };
        write_volume(comp, &hints, path)?;
    }
    Ok(paths)
}

pub fn read_field(prefix: impl AsRef<Path>) -> Result<DisplacementField> {
    let [px, py, pz] = field_paths(prefix);
    let (ux, _) = read_volume(px)?;
    let (uy, _) = read_volume(py)?;
    let (uz, _) = read_volume(pz)?;
    DisplacementField::from_components(
        &ux.with_unit(IntensityUnit::Raw),
        &uy.with_unit(IntensityUnit::Raw),
        &uz.with_unit(IntensityUnit::Raw),
    )
}
