//! Synthetic ground truth: jittered shape families filled with Gaussian
//! intensity mixtures whose foreground/background overlap is dialed by a
//! single parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ScalarField};
use crate::model::TrainingSet;
use crate::util::gauss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    BlobWithProtrusion,
    Ellipse,
    CappedCylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl MixtureComponent {
    pub fn new(weight: f64, mean: f64, std: f64) -> Self {
        Self { weight, mean, std }
    }
}

/// Missing JSON keys take the 2-D defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Vec<usize>,
    pub n_shapes: usize,
    pub shape_family: ShapeFamily,
    pub fg_intensity_mixture: Vec<MixtureComponent>,
    pub bg_intensity_mixture: Vec<MixtureComponent>,
    /// 0 keeps the mixtures as given; 1 blends both regions into the same
    /// pooled distribution.
    pub overlap: f64,
    /// Maximum rigid shift in voxels; radius scale is always [0.9, 1.1].
    pub jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::default_2d()
    }
}

impl PhantomSpec {
    pub fn default_2d() -> Self {
        Self {
            dims: vec![128, 128],
            n_shapes: 30,
            shape_family: ShapeFamily::BlobWithProtrusion,
            fg_intensity_mixture: vec![MixtureComponent::new(1.0, 0.8, 0.05)],
            bg_intensity_mixture: vec![MixtureComponent::new(1.0, 0.2, 0.05)],
            overlap: 0.0,
            jitter: 3.0,
            seed: 0,
        }
    }

    pub fn default_3d() -> Self {
        Self {
            dims: vec![64, 64, 64],
            ..Self::default_2d()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims.len()) || self.dims.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "dims must be 2-D or 3-D with positive extents, got {:?}",
                self.dims
            )));
        }
        if self.n_shapes == 0 {
            return Err(Error::InvalidSpec("n_shapes must be positive".into()));
        }
        if self.shape_family == ShapeFamily::CappedCylinder && self.dims.len() != 3 {
            return Err(Error::InvalidSpec(
                "capped-cylinder phantoms need a 3-D grid".into(),
            ));
        }
        for (label, mix) in [
            ("fg", &self.fg_intensity_mixture),
            ("bg", &self.bg_intensity_mixture),
        ] {
            if mix.is_empty() {
                return Err(Error::InvalidSpec(format!("{label} mixture is empty")));
            }
            let total: f64 = mix.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSpec(format!(
                    "{label} mixture weights sum to {total}, expected 1"
                )));
            }
            for c in mix {
                if c.weight < 0.0 || !(0.0..=1.0).contains(&c.mean) || c.std <= 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "{label} mixture component out of range: {c:?}"
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidSpec(format!(
                "overlap must lie in [0,1], got {}",
                self.overlap
            )));
        }
        let min_dim = *self.dims.iter().min().unwrap() as f64;
        if !(self.jitter.is_finite() && self.jitter >= 0.0) || self.jitter > min_dim / 6.0 {
            return Err(Error::InvalidSpec(format!(
                "jitter must lie in [0, {:.1}] voxels for this grid",
                min_dim / 6.0
            )));
        }
        Ok(())
    }
}

/// Blend that leaves the primary mixture alone at t=0 and pools both
/// regions identically at t=1.
fn effective_mixture(
    primary: &[MixtureComponent],
    other: &[MixtureComponent],
    t: f64,
) -> Vec<MixtureComponent> {
    let mut out = Vec::with_capacity(primary.len() + other.len());
    for c in primary {
        out.push(MixtureComponent::new(
            c.weight * (1.0 - t / 2.0),
            c.mean,
            c.std,
        ));
    }
    for c in other {
        out.push(MixtureComponent::new(c.weight * (t / 2.0), c.mean, c.std));
    }
    out
}

fn mixture_pdf(mix: &[MixtureComponent], x: f64) -> f64 {
    mix.iter().map(|c| c.weight * gauss(x, c.mean, c.std)).sum()
}

/// ∫ min(p_fg, p_bg) by 10⁴-node trapezoid quadrature on [−0.5, 1.5],
/// widened when a component's 8σ support extends past that window.
pub fn overlap_coefficient(fg: &[MixtureComponent], bg: &[MixtureComponent]) -> f64 {
    const NODES: usize = 10_000;
    let mut lo = -0.5f64;
    let mut hi = 1.5f64;
    for c in fg.iter().chain(bg) {
        lo = lo.min(c.mean - 8.0 * c.std);
        hi = hi.max(c.mean + 8.0 * c.std);
    }
    let h = (hi - lo) / (NODES - 1) as f64;
    let mut acc = 0.0;
    for i in 0..NODES {
        let x = lo + i as f64 * h;
        let v = mixture_pdf(fg, x).min(mixture_pdf(bg, x));
        acc += if i == 0 || i == NODES - 1 { 0.5 * v } else { v };
    }
    acc * h
}

fn dist2_point_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let ab = b[i] - a[i];
        ab2 += ab * ab;
        ap_ab += (p[i] - a[i]) * ab;
    }
    let t = if ab2 > 0.0 {
        (ap_ab / ab2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut d2 = 0.0;
    for i in 0..p.len() {
        let proj = a[i] + t * (b[i] - a[i]);
        d2 += (p[i] - proj) * (p[i] - proj);
    }
    d2
}

fn dist2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Unit direction the protrusion/axis points along; fixed per family so
/// training masks stay pose-consistent.
fn family_direction(d: usize) -> Vec<f64> {
    let az = std::f64::consts::FRAC_PI_4;
    if d == 2 {
        vec![az.cos(), az.sin()]
    } else {
        let polar = std::f64::consts::FRAC_PI_3;
        vec![polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()]
    }
}

type InsideTest = Box<dyn Fn(&[f64]) -> bool>;

fn rasterize_mask(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<BinaryMask> {
    let dims = &spec.dims;
    let d = dims.len();
    let min_dim = *dims.iter().min().unwrap() as f64;
    let shift: Vec<f64> = (0..d)
        .map(|_| rng.random_range(-spec.jitter..=spec.jitter))
        .collect();
    let scale: f64 = rng.random_range(0.9..=1.1);
    let center: Vec<f64> = dims
        .iter()
        .zip(&shift)
        .map(|(&e, &s)| (e as f64 - 1.0) / 2.0 + s)
        .collect();
    let u = family_direction(d);

    let mut mask = BinaryMask::new(dims, false)?;
    let inside: InsideTest = match spec.shape_family {
        ShapeFamily::BlobWithProtrusion => {
            // a volume needs a larger radius fraction than a plane for the
            // foreground fraction to stay comparable
            let r_frac = if d == 2 { 0.11 } else { 0.16 };
            let r_head = r_frac * min_dim * scale;
            let r_prot = 0.5 * r_head;
            let r_neck = 0.35 * r_head;
            let prot_center: Vec<f64> = center
                .iter()
                .zip(&u)
                .map(|(&c, &ui)| c + 1.35 * r_head * ui)
                .collect();
            let head = center.clone();
            Box::new(move |p: &[f64]| {
                dist2(p, &head) <= r_head * r_head
                    || dist2(p, &prot_center) <= r_prot * r_prot
                    || dist2_point_segment(p, &head, &prot_center) <= r_neck * r_neck
            })
        }
        ShapeFamily::Ellipse => {
            let semis: Vec<f64> = match d {
                2 => vec![0.14, 0.09],
                _ => vec![0.14, 0.09, 0.11],
            }
            .into_iter()
            .map(|f| f * min_dim * scale)
            .collect();
            let c = center.clone();
            Box::new(move |p: &[f64]| {
                let q: f64 = p
                    .iter()
                    .zip(&c)
                    .zip(&semis)
                    .map(|((&x, &cc), &s)| ((x - cc) / s) * ((x - cc) / s))
                    .sum();
                q <= 1.0
            })
        }
        ShapeFamily::CappedCylinder => {
            let radius = 0.09 * min_dim * scale;
            let half_len = 0.16 * min_dim * scale;
            let a: Vec<f64> = center
                .iter()
                .zip(&u)
                .map(|(&c, &ui)| c - half_len * ui)
                .collect();
            let b: Vec<f64> = center
                .iter()
                .zip(&u)
                .map(|(&c, &ui)| c + half_len * ui)
                .collect();
            Box::new(move |p: &[f64]| dist2_point_segment(p, &a, &b) <= radius * radius)
        }
    };

    for i in 0..mask.len() {
        let coords: Vec<f64> = mask.coords_of(i).iter().map(|&c| c as f64).collect();
        if inside(&coords) {
            mask.data_mut()[i] = true;
        }
    }
    if mask.count_true() == 0 {
        let nearest: Vec<usize> = center
            .iter()
            .zip(dims)
            .map(|(&c, &e)| (c.round().max(0.0) as usize).min(e - 1))
            .collect();
        let idx = mask.index_of(&nearest);
        mask.data_mut()[idx] = true;
    }
    Ok(mask)
}

fn sample_component(mix: &[MixtureComponent], rng: &mut ChaCha8Rng) -> MixtureComponent {
    let r: f64 = rng.random();
    let mut cum = 0.0;
    for c in mix {
        cum += c.weight;
        if r < cum {
            return *c;
        }
    }
    *mix.last().expect("mixtures are non-empty")
}

/// 16-bit quantization mirrors what ingestion of a stored image would give.
fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

fn sample_image(
    mask: &BinaryMask,
    fg_mix: &[MixtureComponent],
    bg_mix: &[MixtureComponent],
    rng: &mut ChaCha8Rng,
) -> Result<ScalarField> {
    let mut data = Vec::with_capacity(mask.len());
    for &is_fg in mask.data() {
        let mix = if is_fg { fg_mix } else { bg_mix };
        let c = sample_component(mix, rng);
        let v = Normal::new(c.mean, c.std)
            .expect("component std validated positive")
            .sample(rng);
        data.push(quantize(v));
    }
    ScalarField::from_data(mask.dims(), data)
}

/// One independent ChaCha8 stream per image, so leaving an image out never
/// perturbs the others.
pub fn generate(spec: &PhantomSpec) -> Result<TrainingSet> {
    spec.validate()?;
    let fg_eff = effective_mixture(
        &spec.fg_intensity_mixture,
        &spec.bg_intensity_mixture,
        spec.overlap,
    );
    let bg_eff = effective_mixture(
        &spec.bg_intensity_mixture,
        &spec.fg_intensity_mixture,
        spec.overlap,
    );
    let pairs: Result<Vec<(ScalarField, BinaryMask)>> = (0..spec.n_shapes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mask = rasterize_mask(spec, &mut rng)?;
            let img = sample_image(&mask, &fg_eff, &bg_eff, &mut rng)?;
            Ok((img, mask))
        })
        .collect();
    let names = (0..spec.n_shapes)
        .map(|i| format!("phantom_{i:03}"))
        .collect();
    TrainingSet::with_names(pairs?, names)
}
