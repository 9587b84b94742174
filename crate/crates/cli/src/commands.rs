//! Subcommand implementations. Every command is a pure function of its
//! inputs, the config, and the seed; data files never embed timestamps.

use std::fs;
use std::path::{Path, PathBuf};

use spinecarve_core as core;
use spinecarve_core::{
    baseline_config, build_model, dice, generate, load_model, run_loo, save_model,
    segment_two_stage, MethodKind, PhantomSpec, TrainingSet,
};

use crate::config::RunConfig;
use crate::fail::{fail, Failure, EXIT_IO, EXIT_NONCONVERGED, EXIT_SPEC};

const IMAGE_EXTS: [&str; 2] = ["pgm", "mhd"];

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir)
        .map_err(|e| fail(EXIT_IO, format!("cannot read {}: {e}", dir.display())))?;
    let mut images = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| fail(EXIT_IO, format!("cannot read {}: {e}", dir.display())))?
            .path();
        let ext = path.extension().unwrap_or_default().to_string_lossy();
        if IMAGE_EXTS.contains(&ext.as_ref()) && !file_stem(&path).ends_with("_mask") {
            images.push(path);
        }
    }
    if images.is_empty() {
        return Err(fail(
            EXIT_IO,
            format!("no image files (.pgm or .mhd) in {}", dir.display()),
        ));
    }
    images.sort();
    Ok(images)
}

fn mask_for(image: &Path, masks_dir: &Path) -> Result<PathBuf, Failure> {
    let stem = file_stem(image);
    let own_ext = image
        .extension()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    for ext in std::iter::once(own_ext.as_str()).chain(IMAGE_EXTS) {
        let candidate = masks_dir.join(format!("{stem}_mask.{ext}"));
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(fail(
        EXIT_IO,
        format!(
            "no mask for {}: expected {stem}_mask.<ext> in {}",
            image.display(),
            masks_dir.display()
        ),
    ))
}

fn load_training_set(images_dir: &Path, masks_dir: &Path) -> Result<TrainingSet, Failure> {
    let images = list_images(images_dir)?;
    let mut pairs = Vec::with_capacity(images.len());
    let mut names = Vec::with_capacity(images.len());
    for image_path in &images {
        let mask_path = mask_for(image_path, masks_dir)?;
        let img = core::read_image(image_path)?;
        let mask = core::read_mask(&mask_path)?;
        if img.dims() != mask.dims() {
            return Err(fail(
                crate::fail::EXIT_DIMS,
                format!(
                    "{} is {:?} but its mask is {:?}",
                    image_path.display(),
                    img.dims(),
                    mask.dims()
                ),
            ));
        }
        pairs.push((img, mask));
        names.push(file_stem(image_path));
    }
    Ok(TrainingSet::with_names(pairs, names)?)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| fail(EXIT_IO, format!("cannot create {}: {e}", dir.display())))
}

fn parse_method(s: &str) -> Result<MethodKind, Failure> {
    MethodKind::parse(s).ok_or_else(|| {
        let valid: Vec<&str> = MethodKind::ALL.iter().map(|k| k.id()).collect();
        fail(
            EXIT_SPEC,
            format!("unknown method \"{s}\"; valid: {}", valid.join(", ")),
        )
    })
}

pub fn cmd_train(images: &Path, masks: &Path, out: &Path, cfg: &RunConfig) -> Result<i32, Failure> {
    let ts = load_training_set(images, masks)?;
    let model = build_model(&ts, &cfg.build)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_model(&model, out)?;

    let dims: Vec<String> = model.dims().iter().map(|d| d.to_string()).collect();
    println!("trained on {} images ({})", ts.len(), dims.join("x"));
    println!(
        "intensity samples: fg {}, bg {}; bandwidths {:.6}, {:.6}",
        model.intensity_fg().n_samples(),
        model.intensity_bg().n_samples(),
        model.intensity_fg().bandwidth(),
        model.intensity_bg().bandwidth()
    );
    println!(
        "location samples: fg {}, bg {}; bandwidth {:.6}",
        model.context_fg().n_samples(),
        model.context_bg().n_samples(),
        model.context_fg().bandwidth()
    );
    println!(
        "shape atlas: {} fields; bandwidth {:.6}",
        model.shapes().len(),
        model.shapes().bandwidth()
    );
    println!("wrote {}", out.display());

    let sidecar = out.with_file_name(format!(
        "{}.config.json",
        out.file_name().unwrap_or_default().to_string_lossy()
    ));
    fs::write(&sidecar, cfg.to_json())
        .map_err(|e| fail(EXIT_IO, format!("cannot write {}: {e}", sidecar.display())))?;
    Ok(0)
}

pub fn cmd_segment(
    image: &Path,
    model_path: &Path,
    out: &Path,
    ground_truth: Option<&Path>,
    method: Option<&str>,
    cfg: &RunConfig,
) -> Result<i32, Failure> {
    let img = core::read_image(image)?;
    let model = load_model(model_path)?;
    let kind = match method {
        Some(s) => parse_method(s)?,
        None => cfg.method,
    };
    let method_cfg = baseline_config(kind, &cfg.evolution);
    let result = segment_two_stage(&img, &model, None, &method_cfg)?;

    ensure_dir(out)?;
    let ext = core::image_extension(img.ndim());
    core::write_mask(&out.join(format!("mask.{ext}")), &result.mask)?;
    core::write_level_set(&out.join("phi.mhd"), &result.phi)?;
    let mut trace = vec!["iteration,energy".to_string()];
    trace.extend(
        result
            .energy_trace
            .iter()
            .map(|(k, e)| format!("{k},{e:.6}")),
    );
    core::write_text(&out.join("energy_trace.csv"), &trace)?;

    let gt = match ground_truth {
        Some(p) => Some(core::read_mask(p)?),
        None => None,
    };
    core::write_overlays(&out.join("overlay"), &img, &result.mask, gt.as_ref())?;

    let mut effective = cfg.clone();
    effective.method = kind;
    effective.echo_into(out)?;

    let final_energy = result.energy_trace.last().map(|&(_, e)| e).unwrap_or(0.0);
    let converged = result.converged_stage1 && result.converged_stage2;
    println!(
        "method {}; energy {final_energy:.6}; iterations {}+{}; converged {converged}",
        kind.id(),
        result.iters_stage1,
        result.iters_stage2
    );
    if let Some(gt) = &gt {
        println!("dice {:.6}", dice(&result.mask, gt)?);
    }
    if converged {
        Ok(0)
    } else {
        eprintln!("warning: evolution hit the iteration cap before converging");
        Ok(EXIT_NONCONVERGED)
    }
}

pub fn cmd_phantom(
    spec_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    cfg: &RunConfig,
) -> Result<i32, Failure> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| fail(EXIT_IO, format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| fail(EXIT_SPEC, format!("bad phantom spec {}: {e}", p.display())))?
        }
        None => PhantomSpec::default_2d(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ts = generate(&spec)?;

    ensure_dir(out)?;
    let ext = core::image_extension(spec.dims.len());
    for (name, (img, mask)) in ts.names().iter().zip(ts.pairs()) {
        core::write_image(&out.join(format!("{name}.{ext}")), img)?;
        core::write_mask(&out.join(format!("{name}_mask.{ext}")), mask)?;
    }
    let spec_echo = out.join("phantom_spec.json");
    let text = serde_json::to_string_pretty(&spec).expect("spec serializes");
    fs::write(&spec_echo, text).map_err(|e| {
        fail(
            EXIT_IO,
            format!("cannot write {}: {e}", spec_echo.display()),
        )
    })?;
    cfg.echo_into(out)?;
    println!("wrote {} image/mask pairs to {}", ts.len(), out.display());
    Ok(0)
}

pub fn cmd_loo(
    dataset: &Path,
    methods: &[String],
    out: &Path,
    cfg: &RunConfig,
) -> Result<i32, Failure> {
    let ts = load_training_set(dataset, dataset)?;
    let kinds: Vec<MethodKind> = if methods.is_empty() {
        MethodKind::ALL.to_vec()
    } else {
        methods
            .iter()
            .map(|s| parse_method(s))
            .collect::<Result<_, _>>()?
    };
    let report = run_loo(&ts, &kinds, &cfg.build, &cfg.evolution)?;
    core::emit_report(&report, &ts, out)?;
    cfg.echo_into(out)?;

    for (method, mean) in &report.per_method_mean {
        println!("{method:<22} mean dice {mean:.6}");
    }
    if report.failed_cells > 0 {
        eprintln!("warning: {} failed cells", report.failed_cells);
    }
    println!("report written to {}", out.display());
    Ok(0)
}

pub fn cmd_evaluate(prediction: &Path, truth: &Path) -> Result<i32, Failure> {
    let a = core::read_mask(prediction)?;
    let b = core::read_mask(truth)?;
    println!("{:.6}", dice(&a, &b)?);
    Ok(0)
}
