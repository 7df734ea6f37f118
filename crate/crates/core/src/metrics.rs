//! Evaluation metrics: hard Dice per organ, Jacobian determinant and folding,
//! and cohort tables of mean ± population standard deviation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, LabelMask, Volume3D};
use crate::warp::warp_mask;

pub const CSV_HEADER: &str = "method,organ,mean_dice,std_dice,folding_mean,folding_std,n";

/// `2|A∩B| / (|A|+|B|)` for one label. Both empty gives 1, exactly one
/// empty gives 0. The body label covers every foreground voxel.
pub fn hard_dice(a: &LabelMask, b: &LabelMask, label: u8) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "hard_dice")?;
    let set: BTreeSet<u8> = [label].into();
    let ra = a.region(&set);
    let rb = b.region(&set);
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in ra.iter().zip(&rb) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok(match (na, nb) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * inter as f64 / (na + nb) as f64,
    })
}

fn derivative(field: &DisplacementField, i: usize, axis: usize) -> [f64; 3] {
    let grid = field.grid();
    let dims = grid.dims();
    let n = dims[axis];
    if n < 2 {
        return [0.0; 3];
    }
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let pos = grid.coords(i)[axis];
    let v = field.vectors();
    let (lo, hi, h) = if pos == 0 {
        (i, i + stride, 1.0)
    } else if pos == n - 1 {
        (i - stride, i, 1.0)
    } else {
        (i - stride, i + stride, 2.0)
    };
    [0, 1, 2].map(|c| (v[hi][c] - v[lo][c]) / h)
}

/// `det(I + ∇u)` per voxel with central differences inside and one-sided
/// differences on the faces, in voxel units.
pub fn jacobian_determinant(field: &DisplacementField) -> Volume3D {
    let grid = *field.grid();
    let data = (0..grid.len())
        .map(|i| {
            let d = [
                derivative(field, i, 0),
                derivative(field, i, 1),
                derivative(field, i, 2),
            ];
            // j[r][c] = δ_rc + ∂u_r/∂x_c
            let mut j = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    j[r][c] = d[c][r] + if r == c { 1.0 } else { 0.0 };
                }
            }
            crate::warp::det3(&j)
        })
        .collect();
    Volume3D::from_parts(grid, data, Default::default())
}

fn is_interior(coords: [usize; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| coords[a] > 0 && coords[a] + 1 < dims[a])
}

/// Percentage of voxels with a negative Jacobian determinant, counted over
/// voxels with a full central stencil (all voxels if there are none).
pub fn folding_percentage(field: &DisplacementField) -> f64 {
    let grid = *field.grid();
    let jac = jacobian_determinant(field);
    let dims = grid.dims();
    let has_interior = dims.iter().all(|&d| d >= 3);
    let (mut neg, mut total) = (0usize, 0usize);
    for (i, &d) in jac.data().iter().enumerate() {
        if has_interior && !is_interior(grid.coords(i), dims) {
            continue;
        }
        total += 1;
        neg += (d < 0.0) as usize;
    }
    100.0 * neg as f64 / total.max(1) as f64
}

/// Mean Euclidean distance between two fields, over `region` voxels when
/// given (voxel units).
pub fn mean_endpoint_error(
    a: &DisplacementField,
    b: &DisplacementField,
    region: Option<&[bool]>,
) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "mean_endpoint_error")?;
    if let Some(r) = region {
        if r.len() != a.grid().len() {
            return Err(Error::LengthMismatch {
                expected: a.grid().len(),
                got: r.len(),
            });
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (u, v)) in a.vectors().iter().zip(b.vectors()).enumerate() {
        if region.is_some_and(|r| !r[i]) {
            continue;
        }
        sum += ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "endpoint error over an empty region".into(),
        ));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    /// Keyed by organ name.
    pub per_organ_dice: BTreeMap<String, f64>,
    pub folding_percent: f64,
    pub mean_abs_displacement: f64,
}

/// Warps the moving mask (nearest) with `field` and scores it against the
/// fixed mask.
pub fn evaluate_pair(
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    field: &DisplacementField,
    organs: &[u8],
) -> Result<PairMetrics> {
    fixed_mask
        .grid()
        .ensure_matches(moving_mask.grid(), "evaluate_pair masks")?;
    fixed_mask
        .grid()
        .ensure_matches(field.grid(), "evaluate_pair field")?;
    let warped = warp_mask(moving_mask, field)?;
    let mut per_organ_dice = BTreeMap::new();
    for &l in organs {
        fixed_mask.ensure_known(l)?;
        moving_mask.ensure_known(l)?;
        let name = fixed_mask
            .name_of(l)
            .map_or_else(|| l.to_string(), str::to_string);
        per_organ_dice.insert(name, hard_dice(fixed_mask, &warped, l)?);
    }
    Ok(PairMetrics {
        per_organ_dice,
        folding_percent: folding_percentage(field),
        mean_abs_displacement: field.mean_magnitude(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; values are summed in sorted order so the
    /// result does not depend on input order.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        dev.sort_by(f64::total_cmp);
        Self {
            mean,
            std: (dev.iter().sum::<f64>() / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dice: BTreeMap<String, MeanStd>,
    pub folding: MeanStd,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub rows: Vec<ReportRow>,
    pub n_pairs: usize,
}

/// One report row for `method` over all pairs.
pub fn aggregate_report(pairs: &[PairMetrics], method: &str) -> Result<CohortReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "aggregate_report needs at least one pair".into(),
        ));
    }
    let organs: BTreeSet<&String> = pairs.iter().flat_map(|p| p.per_organ_dice.keys()).collect();
    let mut dice = BTreeMap::new();
    for organ in organs {
        let values: Vec<f64> = pairs
            .iter()
            .filter_map(|p| p.per_organ_dice.get(organ).copied())
            .collect();
        dice.insert(organ.clone(), MeanStd::of(&values));
    }
    let folds: Vec<f64> = pairs.iter().map(|p| p.folding_percent).collect();
    Ok(CohortReport {
        rows: vec![ReportRow {
            method: method.to_string(),
            dice,
            folding: MeanStd::of(&folds),
            n: pairs.len(),
        }],
        n_pairs: pairs.len(),
    })
}

impl CohortReport {
    /// Appends the rows of `other` (e.g. a "raw" baseline next to a method).
    pub fn merge(mut self, other: CohortReport) -> Self {
        self.n_pairs = self.n_pairs.max(other.n_pairs);
        self.rows.extend(other.rows);
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            for (organ, s) in &r.dice {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                    r.method, organ, s.mean, s.std, r.folding.mean, r.folding.std, r.n
                );
            }
        }
        out
    }

    /// Aligned text table, one line per method, `mean ± std` cells.
    pub fn to_text(&self) -> String {
        let organs: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.dice.keys()).collect();
        let mut header = vec!["method".to_string()];
        header.extend(organs.iter().map(|o| o.to_string()));
        header.push("folding (%)".into());
        let mut table = vec![header];
        for r in &self.rows {
            let mut line = vec![r.method.clone()];
            for o in &organs {
                line.push(r.dice.get(*o).map_or("-".into(), |s| {
                    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
                }));
            }
            line.push(format!("{:.2} ± {:.2}", r.folding.mean, r.folding.std));
            table.push(line);
        }
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| {
                table
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
