//! Leave-one-out experiment harness: per-fold training and segmentation,
//! paired significance testing, and report emission.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolve::{baseline_config, segment_two_stage, EvolutionConfig, MethodKind};
use crate::grid::{dice, BinaryMask};
use crate::io;
use crate::model::{build_model_excluding, BuildConfig, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub image: String,
    pub method: String,
    /// None marks a failed run; it is excluded from means, never a zero.
    pub dice: Option<f64>,
    pub stage1_dice: Option<f64>,
    pub prediction: Option<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Cells ordered fold-major: every method for image 0, then image 1.
    pub per_image: Vec<ReportCell>,
    /// Mean Dice over successful cells, in the order methods were given.
    pub per_method_mean: Vec<(String, f64)>,
    pub pairwise_tests: Vec<(String, String, TestOutcome)>,
    pub failed_cells: usize,
    pub config_snapshot: String,
}

impl ExperimentReport {
    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.per_method_mean
            .iter()
            .find(|(m, _)| m == method)
            .map(|&(_, v)| v)
    }

    /// Mean Dice of the shape-free first stage for one method.
    pub fn stage1_mean_of(&self, method: &str) -> Option<f64> {
        let cells: Vec<f64> = self
            .per_image
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.stage1_dice)
            .collect();
        if cells.is_empty() {
            None
        } else {
            Some(cells.iter().sum::<f64>() / cells.len() as f64)
        }
    }

    pub fn test_between(&self, a: &str, b: &str) -> Option<TestOutcome> {
        self.pairwise_tests
            .iter()
            .find(|(x, y, _)| (x == a && y == b) || (x == b && y == a))
            .map(|&(_, _, o)| o)
    }
}

fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    let pi = std::f64::consts::PI;
    if x < 0.5 {
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * pi).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITERS: usize = 300;
    const EPS: f64 = 1e-14;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITERS {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Two-sided paired t-test on matched samples.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateSample);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let t = mean / (var / n as f64).sqrt();
    if !t.is_finite() {
        return Err(Error::DegenerateSample);
    }
    let nu = (n - 1) as f64;
    let p = regularized_incomplete_beta(nu / (nu + t * t), 0.5 * nu, 0.5);
    Ok(TestOutcome {
        t,
        p,
        significant: p < 0.05,
    })
}

fn validate_methods(methods: &[MethodKind]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::InvalidSpec("no methods requested".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::InvalidSpec(format!(
                "method {} listed twice",
                m.id()
            )));
        }
    }
    Ok(())
}

fn config_snapshot(
    ts: &TrainingSet,
    methods: &[MethodKind],
    build: &BuildConfig,
    evolution: &EvolutionConfig,
) -> String {
    #[derive(serde::Serialize)]
    struct Snapshot<'a> {
        images: usize,
        dims: &'a [usize],
        methods: Vec<&'static str>,
        build: &'a BuildConfig,
        evolution: &'a EvolutionConfig,
    }
    serde_json::to_string_pretty(&Snapshot {
        images: ts.len(),
        dims: ts.dims(),
        methods: methods.iter().map(|m| m.id()).collect(),
        build,
        evolution,
    })
    .expect("config types serialize")
}

type FoldCell = (Option<f64>, Option<f64>, Option<BinaryMask>);

/// Runs every method over leave-one-out folds: train on all pairs but one,
/// segment the held-out image, score against its mask. A failed cell is
/// recorded as missing rather than aborting the sweep. Folds run in
/// parallel; results merge in fold order, so output is thread-independent.
pub fn run_loo(
    ts: &TrainingSet,
    methods: &[MethodKind],
    build: &BuildConfig,
    evolution: &EvolutionConfig,
) -> Result<ExperimentReport> {
    if ts.len() < 3 {
        return Err(Error::InvalidSpec(format!(
            "leave-one-out needs at least 3 image/mask pairs, got {}",
            ts.len()
        )));
    }
    validate_methods(methods)?;

    let folds: Vec<Vec<FoldCell>> = (0..ts.len())
        .into_par_iter()
        .map(|i| {
            let (img, gt) = &ts.pairs()[i];
            let model = match build_model_excluding(ts, Some(i), build) {
                Ok(m) => m,
                Err(_) => return vec![(None, None, None); methods.len()],
            };
            methods
                .iter()
                .map(|&kind| {
                    let cfg = baseline_config(kind, evolution);
                    match segment_two_stage(img, &model, None, &cfg) {
                        Ok(r) => (
                            dice(&r.mask, gt).ok(),
                            dice(&r.stage1_mask, gt).ok(),
                            Some(r.mask),
                        ),
                        Err(_) => (None, None, None),
                    }
                })
                .collect()
        })
        .collect();

    let mut per_image = Vec::with_capacity(ts.len() * methods.len());
    let mut failed_cells = 0usize;
    for (i, fold) in folds.into_iter().enumerate() {
        for (&kind, (d, d1, mask)) in methods.iter().zip(fold) {
            if d.is_none() {
                failed_cells += 1;
            }
            per_image.push(ReportCell {
                image: ts.names()[i].clone(),
                method: kind.id().to_string(),
                dice: d,
                stage1_dice: d1,
                prediction: mask,
            });
        }
    }

    let per_method_mean = methods
        .iter()
        .enumerate()
        .map(|(m, &kind)| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for f in 0..ts.len() {
                if let Some(d) = per_image[f * methods.len() + m].dice {
                    sum += d;
                    count += 1;
                }
            }
            let mean = if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            };
            (kind.id().to_string(), mean)
        })
        .collect();

    let mut pairwise_tests = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for f in 0..ts.len() {
                let ca = per_image[f * methods.len() + i].dice;
                let cb = per_image[f * methods.len() + j].dice;
                if let (Some(x), Some(y)) = (ca, cb) {
                    a.push(x);
                    b.push(y);
                }
            }
            if a.len() < 2 {
                continue;
            }
            let entry = match paired_t_test(&a, &b) {
                Ok(o) => o,
                // identical scores carry no evidence of a difference
                Err(_) if a == b => TestOutcome {
                    t: 0.0,
                    p: 1.0,
                    significant: false,
                },
                Err(_) => continue,
            };
            pairwise_tests.push((
                methods[i].id().to_string(),
                methods[j].id().to_string(),
                entry,
            ));
        }
    }

    Ok(ExperimentReport {
        per_image,
        per_method_mean,
        pairwise_tests,
        failed_cells,
        config_snapshot: config_snapshot(ts, methods, build, evolution),
    })
}

fn csv_lines(report: &ExperimentReport) -> Vec<String> {
    let mut lines = Vec::with_capacity(report.per_image.len() + 1);
    lines.push("image,method,dice".to_string());
    for cell in &report.per_image {
        let value = match cell.dice {
            Some(d) => format!("{d:.6}"),
            None => "nan".to_string(),
        };
        lines.push(format!("{},{},{value}", cell.image, cell.method));
    }
    lines
}

fn summary_lines(report: &ExperimentReport) -> Vec<String> {
    let mut order: Vec<usize> = (0..report.per_method_mean.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (report.per_method_mean[i].1, report.per_method_mean[j].1);
        b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
    });

    let count_for = |method: &str| {
        report
            .per_image
            .iter()
            .filter(|c| c.method == method && c.dice.is_some())
            .count()
    };

    let mut lines = vec![format!(
        "{:<22} {:>9} {:>7}",
        "method", "mean_dice", "images"
    )];
    let leader = order
        .first()
        .map(|&i| report.per_method_mean[i].0.as_str())
        .unwrap_or("");
    for &i in &order {
        let (name, mean) = &report.per_method_mean[i];
        let starred = report.pairwise_tests.iter().any(|(a, b, o)| {
            o.significant && ((a == leader && b == name) || (a == name && b == leader))
        });
        let mark = if starred { " *" } else { "" };
        lines.push(format!(
            "{name:<22} {mean:>9.6} {:>7}{mark}",
            count_for(name)
        ));
    }
    lines.push(format!(
        "* differs from {leader} at p < 0.05 (two-sided paired t-test)"
    ));
    lines.push(String::new());
    lines.push("pairwise tests:".to_string());
    for (a, b, o) in &report.pairwise_tests {
        let tag = if o.significant { "  significant" } else { "" };
        lines.push(format!("{a} vs {b}: t = {:.4}, p = {:.6}{tag}", o.t, o.p));
    }
    lines.push(String::new());
    lines.push(format!("failed cells: {}", report.failed_cells));
    lines
}

/// Writes results.csv, summary.txt, config_snapshot.json, and per-cell
/// contour overlays under `dir`.
pub fn emit_report(report: &ExperimentReport, ts: &TrainingSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_text(&dir.join("results.csv"), &csv_lines(report))?;
    io::write_text(&dir.join("summary.txt"), &summary_lines(report))?;
    let snapshot_path = dir.join("config_snapshot.json");
    fs::write(&snapshot_path, report.config_snapshot.as_bytes())
        .map_err(|e| Error::io(&snapshot_path, e))?;

    let overlay_dir = dir.join("overlays");
    fs::create_dir_all(&overlay_dir).map_err(|e| Error::io(&overlay_dir, e))?;
    let index_of: HashMap<&str, usize> = ts
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    for cell in &report.per_image {
        let Some(mask) = &cell.prediction else {
            continue;
        };
        let Some(&i) = index_of.get(cell.image.as_str()) else {
            continue;
        };
        let (img, gt) = &ts.pairs()[i];
        let base = overlay_dir.join(format!("{}_{}", cell.image, cell.method));
        io::write_overlays(&base, img, mask, Some(gt))?;
    }
    Ok(())
}
