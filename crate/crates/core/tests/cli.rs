mod common;

use std::fs;
use std::path::Path;

use common::*;
use fieldcascade::harness::Manifest;

const SMALL: &str = "32,24,20";

fn phantom(dir: &Path, seed: &str) {
    let o = run(&["phantom", "--dims", SMALL, "--seed", seed, "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn cohort(manifest: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "cohort",
        "--pairs-manifest",
        s(manifest),
        "--plan",
        "builtin:default",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn register_args(ph: &Path, out: &Path) -> Vec<String> {
    let mut args = vec!["register".to_string()];
    for (flag, file) in [
        ("--fixed", "fixed.nii.gz"),
        ("--moving", "moving.nii.gz"),
        ("--fixed-mask", "fixed_mask.nii.gz"),
        ("--moving-mask", "moving_mask.nii.gz"),
    ] {
        args.push(flag.into());
        args.push(s(&ph.join(file)).into());
    }
    args.extend(["--out".into(), s(out).into()]);
    args
}

fn registered_dice(csv: &str) -> Vec<(String, f64)> {
    csv.lines()
        .filter(|l| l.starts_with("registered,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn phantom_is_reproducible() {
    let dir = tmp();
    let (a, b) = (p(&dir, "a"), p(&dir, "b"));
    phantom(&a, "7");
    phantom(&b, "7");
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        assert_eq!(
            fs::read(a.join(&n)).unwrap(),
            fs::read(b.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn evaluate_zero_field_reproduces_raw_dice() {
    let dir = tmp();
    let ph = p(&dir, "ph");
    phantom(&ph, "3");
    let report = p(&dir, "report.csv");
    let o = run(&[
        "evaluate",
        "--fixed-mask",
        s(&ph.join("fixed_mask.nii.gz")),
        "--moving-mask",
        s(&ph.join("moving_mask.nii.gz")),
        "--field",
        "zero",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let manifest = Manifest::read(&ph.join("manifest.txt")).unwrap();
    let dice = json["per_organ_dice"].as_object().unwrap();
    assert_eq!(dice.len(), 5);
    for (organ, v) in dice {
        let expected: f64 = manifest
            .get(&format!("raw_dice.{organ}"))
            .unwrap()
            .parse()
            .unwrap();
        assert!((v.as_f64().unwrap() - expected).abs() < 1e-9, "{organ}");
    }
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("method,organ,mean_dice,std_dice,folding_mean,folding_std,n\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("pair,")).count(), 5);
}

#[test]
fn register_requires_a_plan() {
    let dir = tmp();
    let ph = p(&dir, "ph");
    phantom(&ph, "0");
    let mut args = register_args(&ph, &p(&dir, "out"));
    assert_eq!(
        code(&run(&args.iter().map(String::as_str).collect::<Vec<_>>())),
        2
    );
    args.extend(["--plan".into(), "/nonexistent/plan.toml".into()]);
    assert_eq!(
        code(&run(&args.iter().map(String::as_str).collect::<Vec<_>>())),
        2
    );
}

#[test]
fn divergent_plan_exits_with_numerical_abort() {
    let dir = tmp();
    let ph = p(&dir, "ph");
    phantom(&ph, "0");
    let plan = p(&dir, "diverge.toml");
    fs::write(
        &plan,
        "[[stages]]\npreset = \"wholebody\"\nstep_size = 1e300\n",
    )
    .unwrap();
    let out = p(&dir, "out");
    let mut args = register_args(&ph, &out);
    args.extend(["--plan".into(), s(&plan).into()]);
    let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("plan.toml").exists());
}

#[test]
fn field_on_another_grid_is_rejected() {
    let dir = tmp();
    let (a, b) = (p(&dir, "a"), p(&dir, "b"));
    phantom(&a, "0");
    let o = run(&["phantom", "--dims", "24,24,20", "--out", s(&b)]);
    assert_eq!(code(&o), 0);
    let o = run(&[
        "evaluate",
        "--fixed-mask",
        s(&a.join("fixed_mask.nii.gz")),
        "--moving-mask",
        s(&a.join("moving_mask.nii.gz")),
        "--field",
        s(&b.join("true")),
        "--out",
        s(&p(&dir, "r.csv")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid mismatch"));
}

#[test]
fn empty_manifest_is_a_config_error() {
    let dir = tmp();
    let manifest = p(&dir, "pairs.txt");
    fs::write(&manifest, "").unwrap();
    assert_eq!(code(&cohort(&manifest, &p(&dir, "out"), &[])), 2);
}

#[test]
fn cohort_with_a_broken_pair_is_a_partial_failure() {
    let dir = tmp();
    let ph = p(&dir, "ph");
    let o = run(&["phantom", "--dims", SMALL, "--cohort", "2", "--out", s(&ph)]);
    assert_eq!(code(&o), 0);
    fs::remove_file(ph.join("seed1/moving.nii.gz")).unwrap();
    let out = p(&dir, "out");
    let o = cohort(&ph.join("pairs.txt"), &out, &[]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let failures = fs::read_to_string(out.join("failures.txt")).unwrap();
    assert!(failures.contains("seed1"));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1")), "{csv}");
}

#[test]
fn resumed_cohort_reproduces_the_report() {
    let dir = tmp();
    let ph = p(&dir, "ph");
    let o = run(&["phantom", "--dims", SMALL, "--cohort", "2", "--out", s(&ph)]);
    assert_eq!(code(&o), 0);
    let out = p(&dir, "out");
    assert_eq!(code(&cohort(&ph.join("pairs.txt"), &out, &[])), 0);
    let first = fs::read(out.join("report.csv")).unwrap();
    // finished pairs are not registered again
    fs::remove_file(ph.join("seed0/moving.nii.gz")).unwrap();
    assert_eq!(code(&cohort(&ph.join("pairs.txt"), &out, &["--resume"])), 0);
    assert_eq!(fs::read(out.join("report.csv")).unwrap(), first);
}

#[test]
fn identity_cohort_scores_perfect_dice() {
    let dir = tmp();
    let ph = p(&dir, "ph");
    phantom(&ph, "2");
    let manifest = p(&dir, "pairs.txt");
    fs::write(
        &manifest,
        "self.fixed = ph/fixed.nii.gz\nself.moving = ph/fixed.nii.gz\n\
         self.fixed_mask = ph/fixed_mask.nii.gz\nself.moving_mask = ph/fixed_mask.nii.gz\n",
    )
    .unwrap();
    let out = p(&dir, "out");
    assert_eq!(code(&cohort(&manifest, &out, &[])), 0);
    let dice = registered_dice(&fs::read_to_string(out.join("report.csv")).unwrap());
    assert_eq!(dice.len(), 5);
    for (organ, d) in dice {
        assert_eq!(d, 1.0, "{organ}");
    }
}
