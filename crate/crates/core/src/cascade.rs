//! Sequential stage optimization: an affine stage followed by region-gated
//! deformable stages whose fields are summed into one displacement.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_smooth_vectors;
use crate::losses::{IntensityRange, LossBreakdown, LossContext, MISpec, SampleMask};
use crate::optimizer::{
    minimize_pyramid, Method, Objective, OptimizeOutcome, OptimizerSpec, PyramidObjective,
    StopReason,
};
use crate::volume::{
    add_fields, zero_field, DisplacementField, LabelMask, LossWeights, Volume3D, VolumeGrid, BODY,
};
use crate::warp::{
    affine_to_field, det3, downsample, upsample_field, warp_mask, warp_volume, AffineParams,
    InterpSpec, Padding, Sampler,
};

pub const LUNG: u8 = 2;
pub const LIVER: u8 = 3;
pub const KIDNEY: u8 = 4;
pub const PANCREAS: u8 = 5;

/// Weights of the default deformable stages. The bending term is a mean over
/// voxels, so it needs a larger weight than the library default to keep dense
/// fields as smooth as typical anatomical motion.
pub const DEFORMABLE_WEIGHTS: LossWeights = LossWeights {
    alpha: 1.0,
    lambda: 1.0,
    beta: 10.0,
};

/// Coarsest pyramid levels keep at least this many voxels per axis.
const MIN_LEVEL_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Affine,
    Deformable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    #[default]
    SumFields,
    /// Each stage registers the image already warped by its predecessors and
    /// the maps are composed. Diagnostic only.
    ComposeWarps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub kind: StageKind,
    pub name: String,
    /// Fixed-mask labels whose voxels (dilated by `region_margin_voxels`)
    /// carry the loss. Empty means the whole volume.
    pub region_labels: BTreeSet<u8>,
    pub region_margin_voxels: usize,
    pub organ_labels: Vec<u8>,
    pub weights: LossWeights,
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    pub step_size: f64,
    /// Gaussian sigma (voxels) applied to every dense update; 0 disables.
    pub field_smoothing_sigma: f64,
    pub method: Method,
    pub convergence_tol: f64,
    pub patience: usize,
    pub mi_bins: usize,
    pub parzen_sigma: f64,
    pub padding: Padding,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::wholebody()
    }
}

impl StageConfig {
    fn base(kind: StageKind, name: &str) -> Self {
        let opt = OptimizerSpec::default();
        Self {
            kind,
            name: name.to_string(),
            region_labels: BTreeSet::new(),
            region_margin_voxels: 8,
            organ_labels: Vec::new(),
            weights: DEFORMABLE_WEIGHTS,
            pyramid_levels: 4,
            iterations_per_level: 60,
            step_size: 0.25,
            field_smoothing_sigma: 1.0,
            method: opt.method,
            convergence_tol: opt.convergence_tol,
            patience: opt.patience,
            mi_bins: 32,
            // a narrow kernel rewards edge compression under trilinear
            // resampling, which makes identity pairs drift
            parzen_sigma: 2.0,
            padding: Padding::Zeros,
        }
    }

    /// Body-gated affine stage with the body as its only Dice organ.
    pub fn affine() -> Self {
        Self {
            region_labels: [BODY].into(),
            organ_labels: vec![BODY],
            weights: LossWeights::default(),
            pyramid_levels: 3,
            iterations_per_level: 80,
            parzen_sigma: 1.0,
            step_size: 0.5,
            field_smoothing_sigma: 0.0,
            ..Self::base(StageKind::Affine, "affine")
        }
    }

    pub fn thorax() -> Self {
        Self {
            region_labels: [LUNG].into(),
            organ_labels: vec![BODY, LUNG],
            ..Self::base(StageKind::Deformable, "thorax")
        }
    }

    pub fn abdomen() -> Self {
        Self {
            region_labels: [LIVER, KIDNEY, PANCREAS].into(),
            organ_labels: vec![BODY, LIVER, KIDNEY, PANCREAS],
            ..Self::base(StageKind::Deformable, "abdomen")
        }
    }

    /// Ungated stage over every organ.
    pub fn wholebody() -> Self {
        Self {
            organ_labels: vec![BODY, LUNG, LIVER, KIDNEY, PANCREAS],
            ..Self::base(StageKind::Deformable, "wholebody")
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("stage '{}': {m}", self.name)));
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be >= 1".into());
        }
        if self.iterations_per_level == 0 {
            return bad("iterations_per_level must be >= 1".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size must be > 0, got {}", self.step_size));
        }
        if !(self.field_smoothing_sigma >= 0.0) {
            return bad("field_smoothing_sigma must be >= 0".into());
        }
        self.weights
            .validate()
            .map_err(|e| Error::Config(format!("stage '{}': {e}", self.name)))?;
        self.mi_spec().validate()?;
        Ok(())
    }

    fn mi_spec(&self) -> MISpec {
        MISpec {
            bins: self.mi_bins,
            parzen_sigma: self.parzen_sigma,
            intensity_range: IntensityRange::Auto,
            sample_mask: None,
        }
    }

    fn optimizer(&self) -> OptimizerSpec {
        OptimizerSpec {
            method: self.method,
            step_size: self.step_size,
            max_iterations: self.iterations_per_level,
            convergence_tol: self.convergence_tol,
            patience: self.patience,
            ..OptimizerSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadePlan {
    pub stages: Vec<StageConfig>,
    pub combine: CombineMode,
    pub seed: u64,
}

impl Default for CascadePlan {
    fn default() -> Self {
        Self {
            stages: vec![
                StageConfig::affine(),
                StageConfig::thorax(),
                StageConfig::abdomen(),
                StageConfig::wholebody(),
            ],
            combine: CombineMode::SumFields,
            seed: 0,
        }
    }
}

impl CascadePlan {
    pub fn new(stages: Vec<StageConfig>) -> Result<Self> {
        let plan = Self {
            stages,
            ..Self::default()
        };
        plan.validate()?;
        Ok(plan)
    }

    /// A single ungated deformable stage whose per-level iteration budget
    /// equals the sum over the deformable stages of `reference`.
    pub fn wholebody_only(reference: &CascadePlan) -> Self {
        let deformable: Vec<&StageConfig> = reference
            .stages
            .iter()
            .filter(|s| s.kind == StageKind::Deformable)
            .collect();
        let mut stage = deformable
            .iter()
            .find(|s| s.region_labels.is_empty())
            .map(|s| (*s).clone())
            .unwrap_or_else(StageConfig::wholebody);
        stage.iterations_per_level = deformable
            .iter()
            .map(|s| s.iterations_per_level)
            .sum::<usize>()
            .max(1);
        let mut stages: Vec<StageConfig> = reference
            .stages
            .iter()
            .filter(|s| s.kind == StageKind::Affine)
            .cloned()
            .collect();
        stages.push(stage);
        Self {
            stages,
            combine: reference.combine,
            seed: reference.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.stages.iter().enumerate() {
            s.validate()?;
            if s.kind == StageKind::Affine && k != 0 {
                return Err(Error::Config(format!(
                    "affine stage '{}' must be the first stage",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub name: String,
    pub kind: StageKind,
    /// This stage's own displacement.
    pub field: DisplacementField,
    pub affine: Option<AffineParams>,
    /// Accepted iterates at the finest level, starting with the initial point.
    pub loss_trace: Vec<LossBreakdown>,
    /// Accepted iterates per pyramid level, coarsest first.
    pub level_traces: Vec<Vec<LossBreakdown>>,
    pub stop_reason: StopReason,
    /// Running total after this stage.
    pub cumulative_field: DisplacementField,
}

/// A cascade that stopped early; `completed` holds the stages that finished.
#[derive(Debug)]
pub struct CascadeFailure {
    pub completed: Vec<StageResult>,
    pub error: Error,
}

impl std::fmt::Display for CascadeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} completed stages)",
            self.error,
            self.completed.len()
        )
    }
}

impl std::error::Error for CascadeFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Union of `labels` in `mask`, grown by a box of half-width `margin`.
pub fn region_gate(mask: &LabelMask, labels: &BTreeSet<u8>, margin: usize) -> Result<SampleMask> {
    for &l in labels {
        mask.ensure_known(l)?;
    }
    let mut on = mask.region(labels);
    let dims = mask.grid().dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    if margin > 0 {
        for axis in 0..3 {
            let prev = on.clone();
            for (i, out) in on.iter_mut().enumerate() {
                if *out {
                    continue;
                }
                let pos = (i / strides[axis]) % dims[axis];
                let lo = pos.saturating_sub(margin);
                let hi = (pos + margin).min(dims[axis] - 1);
                *out = (lo..=hi).any(|q| prev[i + q * strides[axis] - pos * strides[axis]]);
            }
        }
    }
    let weights = on.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
    SampleMask::from_weights(*mask.grid(), weights)
}

/// `inner(p) + outer(p + inner(p))`: apply `inner` first, then sample
/// `outer` where it lands.
pub fn compose_fields(
    outer: &DisplacementField,
    inner: &DisplacementField,
) -> Result<DisplacementField> {
    let grid = *inner.grid();
    grid.ensure_matches(outer.grid(), "compose_fields")?;
    let comps = outer.components();
    let samplers: Vec<Sampler> = comps
        .iter()
        .map(|c| Sampler::new(c.data(), grid.dims(), Padding::Border))
        .collect();
    let vectors = (0..grid.len())
        .map(|i| {
            let [x, y, z] = grid.coords(i);
            let u = inner.vectors()[i];
            let q = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
            [
                u[0] + samplers[0].trilinear(q),
                u[1] + samplers[1].trilinear(q),
                u[2] + samplers[2].trilinear(q),
            ]
        })
        .collect();
    Ok(DisplacementField::from_parts(grid, vectors))
}

/// Images, indicators and gates for one resolution level.
struct Level {
    factor: usize,
    ctx: LossContext,
    incoming: DisplacementField,
}

fn pool(data: &[f64], grid: &VolumeGrid, factor: usize) -> Result<Vec<f64>> {
    if factor == 1 {
        return Ok(data.to_vec());
    }
    let v = Volume3D::from_parts(*grid, data.to_vec(), Default::default());
    Ok(downsample(&v, factor)?.into_data())
}

fn pool_field(field: &DisplacementField, factor: usize) -> Result<DisplacementField> {
    if factor == 1 {
        return Ok(field.clone());
    }
    let [ux, uy, uz] = field.components();
    let s = 1.0 / factor as f64;
    let scaled = |v: &Volume3D| -> Result<Volume3D> {
        let d = downsample(v, factor)?;
        let g = *d.grid();
        Ok(Volume3D::from_parts(
            g,
            d.into_data().into_iter().map(|x| x * s).collect(),
            Default::default(),
        ))
    };
    DisplacementField::from_components(&scaled(&ux)?, &scaled(&uy)?, &scaled(&uz)?)
}

fn usable_levels(dims: [usize; 3], requested: usize) -> usize {
    let mut levels = requested.max(1);
    while levels > 1 && dims.iter().any(|&d| d >> (levels - 1) < MIN_LEVEL_DIM) {
        levels -= 1;
    }
    levels
}

#[allow(clippy::too_many_arguments)]
fn build_levels(
    fixed: &Volume3D,
    moving: &Volume3D,
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    incoming: &DisplacementField,
    config: &StageConfig,
) -> Result<Vec<Level>> {
    let grid = *fixed.grid();
    let levels = usable_levels(grid.dims(), config.pyramid_levels);
    if levels < config.pyramid_levels {
        log::warn!(
            "stage '{}': {} pyramid levels requested, {} fit dims {:?}",
            config.name,
            config.pyramid_levels,
            levels,
            grid.dims()
        );
    }
    for &l in &config.organ_labels {
        fixed_mask.ensure_known(l)?;
        moving_mask.ensure_known(l)?;
    }
    let fixed_org: Vec<Vec<f64>> = config
        .organ_labels
        .iter()
        .map(|&l| fixed_mask.organ_indicator(l).into_data())
        .collect();
    let moving_org: Vec<Vec<f64>> = config
        .organ_labels
        .iter()
        .map(|&l| moving_mask.organ_indicator(l).into_data())
        .collect();
    let gate = if config.region_labels.is_empty() {
        None
    } else {
        Some(region_gate(
            fixed_mask,
            &config.region_labels,
            config.region_margin_voxels,
        )?)
    };

    let mut out = Vec::with_capacity(levels);
    for lvl in 0..levels {
        let factor = 1usize << (levels - 1 - lvl);
        let (f, m) = if factor == 1 {
            (fixed.clone(), moving.clone())
        } else {
            (downsample(fixed, factor)?, downsample(moving, factor)?)
        };
        let fo = fixed_org
            .iter()
            .map(|d| pool(d, &grid, factor))
            .collect::<Result<_>>()?;
        let mo = moving_org
            .iter()
            .map(|d| pool(d, &grid, factor))
            .collect::<Result<_>>()?;
        let mut spec = config.mi_spec();
        if let Some(g) = &gate {
            let w = pool(g.weights(), &grid, factor)?;
            spec.sample_mask = Some(SampleMask::from_weights(
                *f.grid(),
                w.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            )?);
        }
        let ctx = LossContext::new(&f, &m, fo, mo, config.weights, &spec, config.padding)?;
        out.push(Level {
            factor,
            ctx,
            incoming: pool_field(incoming, factor)?,
        });
    }
    Ok(out)
}

fn flat_grad(grad: &[[f64; 3]], out: &mut [f64]) {
    for (i, g) in grad.iter().enumerate() {
        out[3 * i..3 * i + 3].copy_from_slice(g);
    }
}

/// Dense field objective at one level: parameters are the interleaved field.
struct FieldObjective<'a> {
    level: &'a Level,
    sigma: f64,
    last: Option<LossBreakdown>,
    trace: Vec<LossBreakdown>,
}

impl Objective for FieldObjective<'_> {
    fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> f64 {
        let grid = *self.level.ctx.grid();
        let stage = match DisplacementField::from_flat(grid, params) {
            Ok(f) => f,
            Err(_) => return f64::NAN,
        };
        let (b, g) = self
            .level
            .ctx
            .evaluate_with_gradient(&self.level.incoming, &stage);
        flat_grad(&g, grad);
        self.last = Some(b);
        b.total
    }

    fn shape_step(&self, _params: &[f64], step: &mut [f64]) {
        if self.sigma > 0.0 {
            let dims = self.level.ctx.grid().dims();
            let s = gaussian_smooth_vectors(step, dims, self.sigma);
            step.copy_from_slice(&s);
        }
    }

    fn accepted(&mut self, _iteration: usize, _loss: f64) {
        if let Some(b) = self.last {
            self.trace.push(b);
        }
    }
}

/// Affine parameterization shared by every level: entries 0..9 are
/// `radius * (A - I)` row-major, entries 9..12 the translation about the
/// volume centre in finest-level voxels.
#[derive(Debug, Clone, Copy)]
struct AffineFrame {
    radius: f64,
    center: [f64; 3],
}

impl AffineFrame {
    fn new(fine: &VolumeGrid) -> Self {
        let d = fine.dims();
        Self {
            radius: (d.iter().copied().max().unwrap_or(1) as f64 / 2.0).max(1.0),
            center: [
                (d[0] as f64 - 1.0) / 2.0,
                (d[1] as f64 - 1.0) / 2.0,
                (d[2] as f64 - 1.0) / 2.0,
            ],
        }
    }

    fn linear(&self, theta: &[f64]) -> [[f64; 3]; 3] {
        let mut a = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = theta[3 * r + c] / self.radius + if r == c { 1.0 } else { 0.0 };
            }
        }
        a
    }

    fn level_center(&self, factor: usize) -> [f64; 3] {
        let f = factor as f64;
        self.center.map(|c| (c - (f - 1.0) / 2.0) / f)
    }

    /// Corner-origin map in the voxel coordinates of a level.
    fn params_at(&self, theta: &[f64], factor: usize) -> AffineParams {
        let f = factor as f64;
        let t = [theta[9] / f, theta[10] / f, theta[11] / f];
        AffineParams::from_centered(self.linear(theta), t, self.level_center(factor))
    }

    fn theta_of(&self, p: &AffineParams) -> Vec<f64> {
        let a = p.linear();
        let t = p.centered_offset(self.center);
        let mut theta = vec![0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                theta[3 * r + c] = (a[r][c] - if r == c { 1.0 } else { 0.0 }) * self.radius;
            }
            theta[9 + r] = t[r];
        }
        theta
    }
}

struct AffineObjective<'a> {
    level: &'a Level,
    frame: AffineFrame,
    last: Option<LossBreakdown>,
    trace: Vec<LossBreakdown>,
}

impl Objective for AffineObjective<'_> {
    fn evaluate(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let grid = *self.level.ctx.grid();
        let factor = self.level.factor;
        let params = self.frame.params_at(theta, factor);
        let stage = affine_to_field(&params, grid);
        let (b, g) = self
            .level
            .ctx
            .evaluate_with_gradient(&self.level.incoming, &stage);
        let c = self.frame.level_center(factor);
        grad.iter_mut().for_each(|v| *v = 0.0);
        for (i, gi) in g.iter().enumerate() {
            let [x, y, z] = grid.coords(i);
            let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
            for r in 0..3 {
                for k in 0..3 {
                    grad[3 * r + k] += gi[r] * d[k];
                }
                grad[9 + r] += gi[r];
            }
        }
        for v in &mut grad[..9] {
            *v /= self.frame.radius;
        }
        for v in &mut grad[9..] {
            *v /= factor as f64;
        }
        self.last = Some(b);
        b.total
    }

    fn admissible(&self, theta: &[f64]) -> bool {
        det3(&self.frame.linear(theta)) > 0.0
    }

    fn accepted(&mut self, _iteration: usize, _loss: f64) {
        if let Some(b) = self.last {
            self.trace.push(b);
        }
    }
}

struct FieldFamily<'a> {
    levels: Vec<FieldObjective<'a>>,
}

impl PyramidObjective for FieldFamily<'_> {
    fn levels(&self) -> usize {
        self.levels.len()
    }
    fn level(&mut self, level: usize) -> &mut dyn Objective {
        &mut self.levels[level]
    }
    fn zero_init(&self, level: usize) -> Vec<f64> {
        vec![0.0; 3 * self.levels[level].level.ctx.grid().len()]
    }
    fn prolong(&self, params: &[f64], level: usize) -> Vec<f64> {
        let src = *self.levels[level].level.ctx.grid();
        let dst = *self.levels[level + 1].level.ctx.grid();
        DisplacementField::from_flat(src, params)
            .and_then(|f| upsample_field(&f, dst))
            .map(|f| f.to_flat())
            .unwrap_or_else(|_| vec![f64::NAN; 3 * dst.len()])
    }
}

struct AffineFamily<'a> {
    levels: Vec<AffineObjective<'a>>,
}

impl PyramidObjective for AffineFamily<'_> {
    fn levels(&self) -> usize {
        self.levels.len()
    }
    fn level(&mut self, level: usize) -> &mut dyn Objective {
        &mut self.levels[level]
    }
    fn zero_init(&self, _level: usize) -> Vec<f64> {
        vec![0.0; 12]
    }
    fn prolong(&self, params: &[f64], _level: usize) -> Vec<f64> {
        params.to_vec()
    }
}

// the parameters of an aborted run may belong to a coarse level
fn abort_error(config: &StageConfig, outcome: &OptimizeOutcome) -> Error {
    Error::NumericalAbort {
        stage: config.name.clone(),
        iteration: outcome.abort_iteration.unwrap_or(0),
        detail: format!(
            "non-finite loss or gradient at pyramid level {}",
            outcome.level_traces.len() - 1
        ),
    }
}

/// Optimizes one stage with `incoming` held fixed. The loss is evaluated on
/// the moving image warped by `incoming + stage field`; bending energy
/// regularizes the stage field only.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    fixed: &Volume3D,
    moving: &Volume3D,
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    incoming: &DisplacementField,
    config: &StageConfig,
) -> Result<StageResult> {
    config.validate()?;
    let grid = *fixed.grid();
    for (g, what) in [
        (moving.grid(), "moving image"),
        (fixed_mask.grid(), "fixed mask"),
        (moving_mask.grid(), "moving mask"),
        (incoming.grid(), "incoming field"),
    ] {
        grid.ensure_matches(g, &format!("stage '{}' {what}", config.name))?;
    }
    if !incoming.is_finite() {
        return Err(Error::NonFinite("incoming field"));
    }
    let levels = build_levels(fixed, moving, fixed_mask, moving_mask, incoming, config)?;
    let spec = config.optimizer();

    let (field, affine, outcome, traces) = match config.kind {
        StageKind::Affine => {
            let frame = AffineFrame::new(&grid);
            let mut family = AffineFamily {
                levels: levels
                    .iter()
                    .map(|level| AffineObjective {
                        level,
                        frame,
                        last: None,
                        trace: Vec::new(),
                    })
                    .collect(),
            };
            let init = frame.theta_of(&AffineParams::identity());
            let outcome = minimize_pyramid(&mut family, init, &spec);
            if outcome.stop_reason == StopReason::NanAbort {
                return Err(abort_error(config, &outcome));
            }
            let params = frame.params_at(&outcome.final_params, 1);
            let traces: Vec<_> = family.levels.into_iter().map(|o| o.trace).collect();
            (
                affine_to_field(&params, grid),
                Some(params),
                outcome,
                traces,
            )
        }
        StageKind::Deformable => {
            let mut family = FieldFamily {
                levels: levels
                    .iter()
                    .map(|level| FieldObjective {
                        level,
                        sigma: config.field_smoothing_sigma,
                        last: None,
                        trace: Vec::new(),
                    })
                    .collect(),
            };
            let init = family.zero_init(0);
            let outcome = minimize_pyramid(&mut family, init, &spec);
            if outcome.stop_reason == StopReason::NanAbort {
                return Err(abort_error(config, &outcome));
            }
            let field = DisplacementField::from_flat(grid, &outcome.final_params)?;
            let traces: Vec<_> = family.levels.into_iter().map(|o| o.trace).collect();
            (field, None, outcome, traces)
        }
    };
    let loss_trace = traces.last().cloned().unwrap_or_default();
    log::info!(
        "stage '{}': loss {:.6} -> {:.6} over {} accepted steps ({:?})",
        config.name,
        loss_trace.first().map_or(f64::NAN, |b| b.total),
        loss_trace.last().map_or(f64::NAN, |b| b.total),
        loss_trace.len().saturating_sub(1),
        outcome.stop_reason
    );
    let cumulative_field = add_fields(incoming, &field)?;
    Ok(StageResult {
        name: config.name.clone(),
        kind: config.kind,
        field,
        affine,
        loss_trace,
        level_traces: traces,
        stop_reason: outcome.stop_reason,
        cumulative_field,
    })
}

/// Runs the plan's stages in order. Under [`CombineMode::SumFields`] stage
/// `k` receives the running sum of earlier fields as `incoming`; under
/// [`CombineMode::ComposeWarps`] it registers the moving image resampled by
/// the composed map so far and its field is composed onto that map.
pub fn run_cascade(
    fixed: &Volume3D,
    moving: &Volume3D,
    fixed_mask: &LabelMask,
    moving_mask: &LabelMask,
    plan: &CascadePlan,
) -> std::result::Result<Vec<StageResult>, CascadeFailure> {
    let fail = |completed: Vec<StageResult>, error: Error| CascadeFailure { completed, error };
    if let Err(e) = plan.validate() {
        return Err(fail(Vec::new(), e));
    }
    let grid = *fixed.grid();
    let zero = zero_field(grid);
    let mut results: Vec<StageResult> = Vec::with_capacity(plan.stages.len());
    let mut total = zero.clone();
    for config in &plan.stages {
        let outcome = match plan.combine {
            CombineMode::SumFields => {
                run_stage(fixed, moving, fixed_mask, moving_mask, &total, config)
            }
            CombineMode::ComposeWarps => {
                let interp = InterpSpec {
                    padding: config.padding,
                    ..InterpSpec::default()
                };
                warp_volume(moving, &total, interp)
                    .and_then(|wm| Ok((wm, warp_mask(moving_mask, &total)?)))
                    .and_then(|(wm, wmask)| {
                        run_stage(fixed, &wm, fixed_mask, &wmask, &zero, config)
                    })
                    .and_then(|mut r| {
                        r.cumulative_field = compose_fields(&total, &r.field)?;
                        Ok(r)
                    })
            }
        };
        match outcome {
            Ok(r) => {
                total = r.cumulative_field.clone();
                results.push(r);
            }
            Err(e) => return Err(fail(results, e)),
        }
    }
    Ok(results)
}

/// Sum of every stage field, which is also the last cumulative field.
pub fn total_field(results: &[StageResult]) -> Result<DisplacementField> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no stage results".into()))?;
    let mut acc = first.field.clone();
    for r in &results[1..] {
        acc = add_fields(&acc, &r.field)?;
    }
    Ok(acc)
}
