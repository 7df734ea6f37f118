//! File-level flows behind the command-line tool: phantom generation,
//! registration, evaluation, preprocessing and cohort runs.
//!
//! Manifests are plain `key = value` lines; `#` starts a comment line.
//! Plans are TOML documents (see [`parse_plan`]).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cascade::{run_cascade, total_field, CascadePlan, StageConfig, StageResult};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_report, evaluate_pair, mean_endpoint_error, CohortReport, PairMetrics,
};
use crate::nifti::{
    read_field, read_mask, read_volume, write_field, write_mask, write_volume, HeaderHints,
};
use crate::phantom::{generate_phantom, PhantomPair, PhantomSpec};
use crate::preprocess::{preprocess, resample_mask_to, resample_to, PreprocessSpec};
use crate::volume::{zero_field, DisplacementField, LabelMask, Volume3D, VolumeGrid, BODY};
use crate::warp::{warp_mask, warp_volume, InterpSpec};

/// Process exit status for a failed flow: 3 for a numerical abort, 2 for
/// everything else (usage, configuration, unreadable inputs).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalAbort { .. } => 3,
        _ => 2,
    }
}

/// Ordered `key = value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("manifest line {}: expected key = value", n + 1))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Last value recorded for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("manifest lacks '{key}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn join3<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses `X,Y,Z`.
pub fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("dims '{s}': expected X,Y,Z"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut d = [0; 3];
    for (o, p) in d.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
    }
    Ok(d)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes then renames, so a reader never sees a partial file.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_text(&tmp, text)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- plans

/// Reads a plan. `builtin:default`, `builtin:wholebody_only` and
/// `builtin:affine_only` name the built-in plans; anything else is a path to
/// a TOML file.
pub fn load_plan(source: &str) -> Result<CascadePlan> {
    let plan = match source {
        "builtin:default" => CascadePlan::default(),
        "builtin:wholebody_only" => CascadePlan::wholebody_only(&CascadePlan::default()),
        "builtin:affine_only" => CascadePlan::new(vec![StageConfig::affine()])?,
        _ if source.starts_with("builtin:") => {
            return Err(Error::Config(format!("unknown built-in plan '{source}'")))
        }
        path => {
            let p = Path::new(path);
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_plan(&text)?
        }
    };
    plan.validate()?;
    Ok(plan)
}

fn preset(name: &str) -> Result<StageConfig> {
    match name {
        "affine" => Ok(StageConfig::affine()),
        "thorax" => Ok(StageConfig::thorax()),
        "abdomen" => Ok(StageConfig::abdomen()),
        "wholebody" => Ok(StageConfig::wholebody()),
        _ => Err(Error::Config(format!(
            "unknown stage preset '{name}' (affine, thorax, abdomen, wholebody)"
        ))),
    }
}

/// Parses a TOML plan. Top-level keys are `combine` and `seed`; each
/// `[[stages]]` table may name a `preset` whose values its own keys
/// override. Without a `stages` array the default four stages are used.
pub fn parse_plan(text: &str) -> Result<CascadePlan> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("plan: {e}")))?;
    let stages = doc.remove("stages");
    let mut plan: CascadePlan = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("plan: {e}")))?;
    if let Some(stages) = stages {
        let list = stages
            .as_array()
            .ok_or_else(|| Error::Config("plan: 'stages' must be an array of tables".into()))?;
        plan.stages = list
            .iter()
            .enumerate()
            .map(|(k, v)| parse_stage(k, v))
            .collect::<Result<_>>()?;
    }
    plan.validate()?;
    Ok(plan)
}

fn parse_stage(k: usize, v: &toml::Value) -> Result<StageConfig> {
    let mut table = v
        .as_table()
        .ok_or_else(|| Error::Config(format!("plan: stage {k} is not a table")))?
        .clone();
    let base = match table.remove("preset") {
        Some(toml::Value::String(name)) => preset(&name)?,
        Some(_) => {
            return Err(Error::Config(format!(
                "plan: stage {k}: preset must be a string"
            )))
        }
        None => StageConfig::wholebody(),
    };
    let mut merged =
        toml::Table::try_from(&base).map_err(|e| Error::Config(format!("plan: stage {k}: {e}")))?;
    for (key, value) in table {
        match (merged.get_mut(&key), value) {
            (Some(toml::Value::Table(inner)), toml::Value::Table(over)) => inner.extend(over),
            (_, value) => {
                merged.insert(key, value);
            }
        }
    }
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("plan: stage {k}: {e}")))
}

/// Full TOML rendering of a plan; [`parse_plan`] reads it back unchanged.
pub fn plan_to_toml(plan: &CascadePlan) -> Result<String> {
    toml::to_string(plan).map_err(|e| Error::Config(format!("plan: {e}")))
}

// ---------------------------------------------------------------- phantom

#[derive(Debug, Clone)]
pub struct PhantomFiles {
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_mask: PathBuf,
    pub moving_mask: PathBuf,
    /// Prefix of the `_ux`, `_uy`, `_uz` component files.
    pub true_field: PathBuf,
    pub true_affine: PathBuf,
    pub manifest: PathBuf,
}

impl PhantomFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            fixed: dir.join("fixed.nii.gz"),
            moving: dir.join("moving.nii.gz"),
            fixed_mask: dir.join("fixed_mask.nii.gz"),
            moving_mask: dir.join("moving_mask.nii.gz"),
            true_field: dir.join("true"),
            true_affine: dir.join("true_affine.txt"),
            manifest: dir.join("manifest.txt"),
        }
    }
}

fn organ_labels(a: &LabelMask, b: &LabelMask) -> Vec<u8> {
    let present: BTreeSet<u8> = a
        .present_labels()
        .union(&b.present_labels())
        .copied()
        .collect();
    present
        .into_iter()
        .filter(|&l| l != 0 && a.name_of(l).is_some() && b.name_of(l).is_some())
        .collect()
}

/// Generates a phantom and writes its volumes, masks, ground truth and a
/// manifest recording the spec and the raw (unregistered) Dice.
pub fn write_phantom(spec: &PhantomSpec, dir: &Path) -> Result<(PhantomPair, PhantomFiles)> {
    let pair = generate_phantom(spec)?;
    create_dir(dir)?;
    let files = PhantomFiles::in_dir(dir);
    write_volume(
        &pair.fixed,
        &HeaderHints {
            description: "phantom fixed".into(),
        },
        &files.fixed,
    )?;
    write_volume(
        &pair.moving,
        &HeaderHints {
            description: "phantom moving".into(),
        },
        &files.moving,
    )?;
    write_mask(&pair.fixed_mask, &files.fixed_mask)?;
    write_mask(&pair.moving_mask, &files.moving_mask)?;
    write_field(&pair.true_field, &files.true_field)?;
    let mut affine = String::new();
    for row in pair.true_affine.m.chunks(4) {
        let _ = writeln!(
            affine,
            "{}",
            row.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
        );
    }
    write_text(&files.true_affine, &affine)?;

    // raw Dice is measured on the masks as stored, so `evaluate` reproduces it
    let (fm, _) = read_mask(&files.fixed_mask)?;
    let (mm, _) = read_mask(&files.moving_mask)?;
    let organs = organ_labels(&fm, &mm);
    let raw = evaluate_pair(&fm, &mm, &zero_field(*fm.grid()), &organs)?;

    let mut m = Manifest::default();
    m.push("kind", "phantom");
    m.push("dims", join3(&spec.dims));
    m.push("seed", spec.seed);
    m.push("deform_max_voxels", spec.deform_max_voxels);
    m.push("deform_smoothness_sigma", spec.deform_smoothness_sigma);
    m.push(
        "affine_jitter.translation_voxels",
        spec.affine_jitter.translation_voxels,
    );
    m.push(
        "affine_jitter.rotation_degrees",
        spec.affine_jitter.rotation_degrees,
    );
    m.push("affine_jitter.scale", spec.affine_jitter.scale);
    if let Some(o) = &spec.affine_override {
        m.push("affine_override.translation", join3(&o.translation));
        m.push("affine_override.rotation_deg", join3(&o.rotation_deg));
        m.push("affine_override.scale", o.scale);
    }
    m.push("texture_amplitude", spec.texture_amplitude);
    m.push("fixed", "fixed.nii.gz");
    m.push("moving", "moving.nii.gz");
    m.push("fixed_mask", "fixed_mask.nii.gz");
    m.push("moving_mask", "moving_mask.nii.gz");
    m.push("true_field", "true");
    m.push("true_affine", "true_affine.txt");
    m.push("true_affine.m", join3(&pair.true_affine.m));
    for (organ, d) in &raw.per_organ_dice {
        m.push(format!("raw_dice.{organ}"), d);
    }
    m.push("raw_folding_percent", raw.folding_percent);
    m.write(&files.manifest)?;
    Ok((pair, files))
}

/// Writes one phantom per seed under `dir/seed<N>` and a pairs manifest
/// listing them (with ground-truth fields) at `dir/pairs.txt`.
pub fn write_phantom_cohort(base: &PhantomSpec, seeds: &[u64], dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let mut entries = Vec::new();
    for &seed in seeds {
        let sub = format!("seed{seed}");
        let spec = PhantomSpec {
            seed,
            ..base.clone()
        };
        write_phantom(&spec, &dir.join(&sub))?;
        let rel = PhantomFiles::in_dir(Path::new(&sub));
        entries.push(PairEntry {
            id: sub.clone(),
            fixed: rel.fixed,
            moving: rel.moving,
            fixed_mask: rel.fixed_mask,
            moving_mask: rel.moving_mask,
            true_field: Some(rel.true_field),
        });
    }
    let path = dir.join("pairs.txt");
    write_pairs_manifest(&entries, &path)?;
    Ok(path)
}

// ---------------------------------------------------------------- register

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_mask: PathBuf,
    pub moving_mask: PathBuf,
    pub plan: CascadePlan,
    /// Applied to both images (each with its own mask) before registration.
    pub preprocess: Option<PreprocessSpec>,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub fixed: Volume3D,
    pub moving: Volume3D,
    pub fixed_mask: LabelMask,
    pub moving_mask: LabelMask,
}

fn onto_grid_volume(v: Volume3D, grid: &VolumeGrid, what: &str) -> Result<Volume3D> {
    if v.grid().matches(grid) {
        return Ok(v);
    }
    log::warn!(
        "{what}: grid {:?} differs from the fixed grid {:?}; resampling",
        v.grid().dims(),
        grid.dims()
    );
    let r = resample_to(&v, grid.dims())?;
    let unit = r.unit();
    Ok(Volume3D::from_data(*grid, r.into_data())?.with_unit(unit))
}

fn onto_grid_mask(m: LabelMask, grid: &VolumeGrid, what: &str) -> Result<LabelMask> {
    if m.grid().matches(grid) {
        return Ok(m);
    }
    log::warn!("{what}: grid differs from the fixed grid; resampling (nearest)");
    let r = resample_mask_to(&m, grid.dims())?;
    LabelMask::new(*grid, r.labels().to_vec(), r.label_names().clone())
}

/// Reads the four inputs, optionally preprocesses them, and brings the
/// moving side onto the fixed grid.
pub fn load_pair(cfg: &RunConfig) -> Result<LoadedPair> {
    let (mut fixed, _) = read_volume(&cfg.fixed)?;
    let (mut moving, _) = read_volume(&cfg.moving)?;
    let (mut fixed_mask, _) = read_mask(&cfg.fixed_mask)?;
    let (mut moving_mask, _) = read_mask(&cfg.moving_mask)?;
    if let Some(spec) = &cfg.preprocess {
        let f = preprocess(&fixed, &fixed_mask, spec)?;
        let m = preprocess(&moving, &moving_mask, spec)?;
        fixed = f.volume;
        fixed_mask = f.mask;
        moving = m.volume;
        moving_mask = m.mask;
    }
    let grid = *fixed.grid();
    fixed_mask = onto_grid_mask(fixed_mask, &grid, "fixed mask")?;
    moving = onto_grid_volume(moving, &grid, "moving image")?;
    moving_mask = onto_grid_mask(moving_mask, &grid, "moving mask")?;
    Ok(LoadedPair {
        fixed,
        moving,
        fixed_mask,
        moving_mask,
    })
}

#[derive(Debug, Clone)]
pub struct RegisterOutcome {
    pub pair: LoadedPair,
    pub stages: Vec<StageResult>,
    pub total: DisplacementField,
    pub raw: PairMetrics,
    pub registered: PairMetrics,
}

fn stage_prefix(k: usize, s: &StageResult) -> String {
    format!("stage{k}_{}", s.name)
}

fn write_stage_outputs(out: &Path, stages: &[StageResult]) -> Result<()> {
    let mut csv = String::from("stage,level,iteration,total,mi,dice,bending\n");
    for (k, s) in stages.iter().enumerate() {
        write_field(&s.field, out.join(stage_prefix(k, s)))?;
        for (level, trace) in s.level_traces.iter().enumerate() {
            for (it, b) in trace.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{level},{it},{:.9e},{:.9e},{:.9e},{:.9e}",
                    s.name, b.total, b.mi, b.dice, b.bending
                );
            }
        }
    }
    write_text(&out.join("loss_trace.csv"), &csv)
}

fn stage_summary(k: usize, s: &StageResult) -> serde_json::Value {
    let last = s.loss_trace.last();
    json!({
        "index": k,
        "name": s.name,
        "kind": s.kind,
        "stop_reason": s.stop_reason,
        "accepted_iterations": s.level_traces.iter().map(|t| t.len().saturating_sub(1)).collect::<Vec<_>>(),
        "final_loss": last.map(|b| json!({"total": b.total, "mi": b.mi, "dice": b.dice, "bending": b.bending})),
        "affine": s.affine.map(|a| a.m.to_vec()),
        "field_prefix": stage_prefix(k, s),
    })
}

/// Registers one pair and writes every artifact into `cfg.out`: per-stage
/// fields, the total field, warped image and mask, loss traces and a JSON
/// report. On a numerical abort the completed stages are still written.
pub fn run_register(cfg: &RunConfig) -> Result<RegisterOutcome> {
    let mut plan = cfg.plan.clone();
    plan.seed = cfg.seed;
    plan.validate()?;
    let pair = load_pair(cfg)?;
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join("plan.toml"), &plan_to_toml(&plan)?)?;

    let stages = match run_cascade(
        &pair.fixed,
        &pair.moving,
        &pair.fixed_mask,
        &pair.moving_mask,
        &plan,
    ) {
        Ok(s) => s,
        Err(failure) => {
            write_stage_outputs(&cfg.out, &failure.completed)?;
            return Err(failure.error);
        }
    };
    write_stage_outputs(&cfg.out, &stages)?;
    let total = total_field(&stages)?;
    write_field(&total, cfg.out.join("total"))?;
    let warped = warp_volume(&pair.moving, &total, InterpSpec::TRILINEAR_ZEROS)?;
    write_volume(
        &warped,
        &HeaderHints {
            description: "warped moving".into(),
        },
        cfg.out.join("warped.nii.gz"),
    )?;
    write_mask(
        &warp_mask(&pair.moving_mask, &total)?,
        cfg.out.join("warped_mask.nii.gz"),
    )?;

    let organs = organ_labels(&pair.fixed_mask, &pair.moving_mask);
    let raw = evaluate_pair(
        &pair.fixed_mask,
        &pair.moving_mask,
        &zero_field(*pair.fixed.grid()),
        &organs,
    )?;
    let registered = evaluate_pair(&pair.fixed_mask, &pair.moving_mask, &total, &organs)?;
    let report = json!({
        "fixed": cfg.fixed,
        "moving": cfg.moving,
        "combine": plan.combine,
        "raw": raw,
        "registered": registered,
        "stages": stages.iter().enumerate().map(|(k, s)| stage_summary(k, s)).collect::<Vec<_>>(),
    });
    write_text(
        &cfg.out.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(RegisterOutcome {
        pair,
        stages,
        total,
        raw,
        registered,
    })
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Zero,
    /// Prefix of three component files, as written by [`write_field`].
    Prefix(PathBuf),
}

impl FromStr for FieldSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(if s == "zero" {
            Self::Zero
        } else {
            Self::Prefix(PathBuf::from(s))
        })
    }
}

/// Resolves organ names or numeric labels against the mask name table.
pub fn resolve_organs(mask: &LabelMask, organs: &[String]) -> Result<Vec<u8>> {
    organs
        .iter()
        .map(|o| {
            if let Ok(l) = o.parse::<u8>() {
                return Ok(l);
            }
            mask.label_names()
                .iter()
                .find(|(_, n)| n.as_str() == o)
                .map(|(&l, _)| l)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("organ '{o}' is not in the mask name table"))
                })
        })
        .collect()
}

/// Scores `field` on a mask pair and appends the row(s) to the CSV at
/// `out`, writing the header when the file is new.
pub fn run_evaluate(
    fixed_mask: &Path,
    moving_mask: &Path,
    field: &FieldSource,
    organs: Option<&[String]>,
    method: &str,
    out: &Path,
) -> Result<PairMetrics> {
    let (fm, _) = read_mask(fixed_mask)?;
    let (mm, _) = read_mask(moving_mask)?;
    let field = match field {
        FieldSource::Zero => zero_field(*fm.grid()),
        FieldSource::Prefix(p) => read_field(p)?,
    };
    let labels = match organs {
        Some(list) => {
            let labels = resolve_organs(&fm, list)?;
            for &l in &labels {
                if fm.count(l) == 0 && l != BODY {
                    return Err(Error::UnknownLabel {
                        requested: l,
                        known: fm.present_labels().into_iter().collect(),
                    });
                }
            }
            labels
        }
        None => organ_labels(&fm, &mm),
    };
    let metrics = evaluate_pair(&fm, &mm, &field, &labels)?;
    let csv = aggregate_report(std::slice::from_ref(&metrics), method)?.to_csv();
    let existing = fs::read_to_string(out).unwrap_or_default();
    let text = if existing.is_empty() {
        csv
    } else {
        let body: String = csv.lines().skip(1).map(|l| format!("{l}\n")).collect();
        let sep = if existing.ends_with('\n') { "" } else { "\n" };
        format!("{existing}{sep}{body}")
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(out, &text)?;
    Ok(metrics)
}

// ---------------------------------------------------------------- preprocess

/// Reads, preprocesses and writes `image.nii.gz`, `mask.nii.gz` and a
/// provenance `manifest.txt` into `out`.
pub fn run_preprocess(
    input: &Path,
    body_mask: &Path,
    out: &Path,
    spec: &PreprocessSpec,
) -> Result<crate::preprocess::Preprocessed> {
    spec.validate()?;
    let (vol, info) = read_volume(input)?;
    let (mask, _) = read_mask(body_mask)?;
    let p = preprocess(&vol, &mask, spec)?;
    create_dir(out)?;
    write_volume(
        &p.volume,
        &HeaderHints {
            description: "preprocessed".into(),
        },
        out.join("image.nii.gz"),
    )?;
    write_mask(&p.mask, out.join("mask.nii.gz"))?;
    let mut m = Manifest::default();
    m.push("kind", "preprocess");
    m.push("input", input.display());
    m.push("body_mask", body_mask.display());
    m.push("source_orientation", &info.orientation);
    m.push("source_dims", join3(&info.dims));
    m.push("scl_slope", info.scl_slope);
    m.push("scl_inter", info.scl_inter);
    m.push(
        "normalize",
        serde_json::to_string(&spec.normalize).expect("serializes"),
    );
    m.push("constant_intensity", p.constant_intensity);
    m.push("crop_lo", join3(&p.crop_box.lo));
    m.push("crop_hi", join3(&p.crop_box.hi));
    m.push("target_dims", join3(&spec.target_dims));
    m.push("spacing", join3(&p.volume.grid().spacing()));
    m.push("origin", join3(&p.volume.grid().origin()));
    m.write(&out.join("manifest.txt"))?;
    Ok(p)
}

// ---------------------------------------------------------------- cohort

#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub id: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_mask: PathBuf,
    pub moving_mask: PathBuf,
    pub true_field: Option<PathBuf>,
}

const PAIR_KEYS: [&str; 5] = ["fixed", "moving", "fixed_mask", "moving_mask", "true_field"];

/// Reads `<id>.<key> = path` lines (keys: fixed, moving, fixed_mask,
/// moving_mask, optional true_field). Relative paths are taken from the
/// manifest's directory. Pairs come back sorted by id.
pub fn read_pairs_manifest(path: &Path) -> Result<Vec<PairEntry>> {
    let m = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut ids = BTreeSet::new();
    for (k, _) in &m.entries {
        let (id, key) = k.rsplit_once('.').ok_or_else(|| {
            Error::Config(format!("pairs manifest: key '{k}' is not <id>.<field>"))
        })?;
        if !PAIR_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "pairs manifest: unknown field '{key}' in '{k}'"
            )));
        }
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::Config(format!("pairs manifest: bad pair id '{id}'")));
        }
        ids.insert(id.to_string());
    }
    let resolve = |v: &str| {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    ids.into_iter()
        .map(|id| {
            let get = |key: &str| m.require(&format!("{id}.{key}")).map(resolve);
            Ok(PairEntry {
                fixed: get("fixed")?,
                moving: get("moving")?,
                fixed_mask: get("fixed_mask")?,
                moving_mask: get("moving_mask")?,
                true_field: m.get(&format!("{id}.true_field")).map(resolve),
                id,
            })
        })
        .collect()
}

pub fn write_pairs_manifest(entries: &[PairEntry], path: &Path) -> Result<()> {
    let mut m = Manifest::default();
    for e in entries {
        m.push(format!("{}.fixed", e.id), e.fixed.display());
        m.push(format!("{}.moving", e.id), e.moving.display());
        m.push(format!("{}.fixed_mask", e.id), e.fixed_mask.display());
        m.push(format!("{}.moving_mask", e.id), e.moving_mask.display());
        if let Some(t) = &e.true_field {
            m.push(format!("{}.true_field", e.id), t.display());
        }
    }
    m.write(path)
}

#[derive(Debug, Clone, Copy)]
pub struct CohortOptions {
    pub resume: bool,
    pub jobs: usize,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            resume: false,
            jobs: 1,
        }
    }
}

/// What a finished pair leaves behind in `pairs/<id>/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub raw: PairMetrics,
    pub registered: PairMetrics,
    /// Mean endpoint error inside the fixed body, when ground truth exists.
    pub endpoint_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CohortOutcome {
    pub records: Vec<PairRecord>,
    pub failed: Vec<(String, String)>,
    pub resumed: usize,
    /// `raw` and `registered` rows; `None` when every pair failed.
    pub report: Option<CohortReport>,
    pub csv_path: PathBuf,
}

fn run_pair(entry: &PairEntry, plan: &CascadePlan, dir: &Path) -> Result<PairRecord> {
    let cfg = RunConfig {
        fixed: entry.fixed.clone(),
        moving: entry.moving.clone(),
        fixed_mask: entry.fixed_mask.clone(),
        moving_mask: entry.moving_mask.clone(),
        plan: plan.clone(),
        preprocess: None,
        out: dir.to_path_buf(),
        seed: plan.seed,
    };
    let r = run_register(&cfg)?;
    let endpoint_error = match &entry.true_field {
        Some(p) => {
            let truth = read_field(p)?;
            let body = r.pair.fixed_mask.region(&[BODY].into());
            Some(mean_endpoint_error(&r.total, &truth, Some(&body))?)
        }
        None => None,
    };
    Ok(PairRecord {
        id: entry.id.clone(),
        raw: r.raw,
        registered: r.registered,
        endpoint_error,
    })
}

/// Registers and scores every pair of a manifest, writing per-pair outputs
/// under `out/pairs/<id>`, then `report.csv`, `report.txt` and (if any pair
/// failed) `failures.txt`. With `resume`, pairs whose `metrics.json` exists
/// are loaded instead of recomputed.
pub fn run_cohort(
    pairs_manifest: &Path,
    plan: &CascadePlan,
    out: &Path,
    opts: CohortOptions,
) -> Result<CohortOutcome> {
    plan.validate()?;
    let entries = read_pairs_manifest(pairs_manifest)?;
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "pairs manifest {} lists no pairs",
            pairs_manifest.display()
        )));
    }
    create_dir(&out.join("pairs"))?;

    let results: Mutex<Vec<Option<Result<(PairRecord, bool)>>>> =
        Mutex::new((0..entries.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(entry) = entries.get(i) else { break };
        let dir = out.join("pairs").join(&entry.id);
        let record_path = dir.join("metrics.json");
        let r = if opts.resume && record_path.exists() {
            fs::read_to_string(&record_path)
                .map_err(|e| Error::io(&record_path, e))
                .and_then(|t| {
                    serde_json::from_str::<PairRecord>(&t)
                        .map_err(|e| Error::Config(format!("{}: {e}", record_path.display())))
                })
                .map(|rec| (rec, true))
        } else {
            log::info!("pair {}: registering", entry.id);
            run_pair(entry, plan, &dir).and_then(|rec| {
                let text = serde_json::to_string_pretty(&rec).expect("record serializes");
                write_atomic(&record_path, &text)?;
                Ok((rec, false))
            })
        };
        if let Err(e) = &r {
            log::error!("pair {} failed: {e}", entry.id);
        }
        results.lock().unwrap()[i] = Some(r);
    };
    let jobs = opts.jobs.clamp(1, entries.len());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(work);
        }
    });

    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut resumed = 0;
    for (entry, r) in entries.iter().zip(results.into_inner().unwrap()) {
        match r.expect("every pair was visited") {
            Ok((rec, was_resumed)) => {
                resumed += usize::from(was_resumed);
                records.push(rec);
            }
            Err(e) => failed.push((entry.id.clone(), e.to_string())),
        }
    }

    let csv_path = out.join("report.csv");
    let failures_path = out.join("failures.txt");
    if failed.is_empty() {
        let _ = fs::remove_file(&failures_path);
    } else {
        let text: String = failed
            .iter()
            .map(|(id, e)| format!("{id}: {e}\n"))
            .collect();
        write_text(&failures_path, &text)?;
    }
    let report = if records.is_empty() {
        None
    } else {
        let raw: Vec<PairMetrics> = records.iter().map(|r| r.raw.clone()).collect();
        let reg: Vec<PairMetrics> = records.iter().map(|r| r.registered.clone()).collect();
        let report = aggregate_report(&raw, "raw")?.merge(aggregate_report(&reg, "registered")?);
        write_text(&csv_path, &report.to_csv())?;
        let mut text = report.to_text();
        let epe: Vec<f64> = records.iter().filter_map(|r| r.endpoint_error).collect();
        if !epe.is_empty() {
            let s = crate::metrics::MeanStd::of(&epe);
            let _ = writeln!(
                text,
                "\nendpoint error (voxels, body): {:.3} ± {:.3}",
                s.mean, s.std
            );
        }
        write_text(&out.join("report.txt"), &text)?;
        Some(report)
    };
    Ok(CohortOutcome {
        records,
        failed,
        resumed,
        report,
        csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_and_errors() {
        let text = "# comment\nkind = phantom\n\ndims = 1,2,3\nseed=7\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.get("dims"), Some("1,2,3"));
        assert_eq!(m.get("seed"), Some("7"));
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("no equals sign").is_err());
        assert!(m.require("missing").is_err());
    }

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("256,192,160").unwrap(), [256, 192, 160]);
        assert!(parse_dims("1,2").is_err());
        assert!(parse_dims("a,b,c").is_err());
    }

    #[test]
    fn plan_toml_roundtrip_and_presets() {
        let plan = CascadePlan::default();
        let text = plan_to_toml(&plan).unwrap();
        assert_eq!(parse_plan(&text).unwrap(), plan);

        let short = r#"
            combine = "compose_warps"
            [[stages]]
            preset = "affine"
            [[stages]]
            preset = "abdomen"
            iterations_per_level = 5
            [stages.weights]
            beta = 2.0
        "#;
        let p = parse_plan(short).unwrap();
        assert_eq!(p.stages.len(), 2);
        assert_eq!(
            p.stages[1].region_labels,
            StageConfig::abdomen().region_labels
        );
        assert_eq!(p.stages[1].iterations_per_level, 5);
        assert_eq!(p.stages[1].weights.beta, 2.0);
        assert_eq!(
            p.stages[1].weights.lambda,
            StageConfig::abdomen().weights.lambda
        );
        assert_eq!(p.combine, crate::cascade::CombineMode::ComposeWarps);

        assert!(parse_plan("[[stages]]\npreset = \"spleen\"").is_err());
        assert!(parse_plan("[[stages]]\nitterations = 3").is_err());
        assert!(
            parse_plan("[[stages]]\npreset = \"thorax\"\n[[stages]]\npreset = \"affine\"").is_err()
        );
        assert_eq!(parse_plan("").unwrap(), CascadePlan::default());
    }

    #[test]
    fn shipped_plan_file_is_the_default() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/plans/default.toml");
        assert_eq!(load_plan(path).unwrap(), CascadePlan::default());
        assert!(load_plan("builtin:nope").is_err());
        assert_eq!(load_plan("builtin:wholebody_only").unwrap().stages.len(), 2);
    }

    #[test]
    fn pairs_manifest_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.txt");
        let text = "b.fixed = f.nii\nb.moving = m.nii\nb.fixed_mask = fm.nii\nb.moving_mask = /abs/mm.nii\n\
                    a.fixed = x\na.moving = x\na.fixed_mask = x\na.moving_mask = x\na.true_field = t\n";
        fs::write(&p, text).unwrap();
        let e = read_pairs_manifest(&p).unwrap();
        assert_eq!(
            e.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(e[1].fixed, dir.path().join("f.nii"));
        assert_eq!(e[1].moving_mask, PathBuf::from("/abs/mm.nii"));
        assert_eq!(e[0].true_field, Some(dir.path().join("t")));
        assert_eq!(e[1].true_field, None);

        fs::write(&p, "a.fixed = x\n").unwrap();
        assert!(read_pairs_manifest(&p).is_err());
        fs::write(&p, "a.colour = x\n").unwrap();
        assert!(read_pairs_manifest(&p).is_err());
    }

    #[test]
    fn exit_codes() {
        let nan = Error::NumericalAbort {
            stage: "thorax".into(),
            iteration: 3,
            detail: "nan".into(),
        };
        assert_eq!(exit_code(&nan), 3);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
    }
}
