//! Training-set ingestion and the trained prior model: intensity estimators,
//! location estimators, and the shape atlas, with the bandwidth policy.

use rayon::prelude::*;

use crate::density::{
    fit_intensity_kde, fit_spatial_kde_from_counts, Bandwidth, IntensityKde, SpatialKde,
};
use crate::error::{Error, Result};
use crate::grid::{signed_distance_transform, BinaryMask, LevelSetField, ScalarField};
use crate::util::det_sum_indexed;

pub const FORMAT_VERSION: u32 = 1;

/// Aligned image/mask pairs sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pairs: Vec<(ScalarField, BinaryMask)>,
    names: Vec<String>,
    dims: Vec<usize>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<(ScalarField, BinaryMask)>) -> Result<Self> {
        let names = (0..pairs.len()).map(|i| format!("image_{i:03}")).collect();
        Self::with_names(pairs, names)
    }

    pub fn with_names(pairs: Vec<(ScalarField, BinaryMask)>, names: Vec<String>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptySamples);
        }
        if names.len() != pairs.len() {
            return Err(Error::InconsistentDims(format!(
                "{} names for {} pairs",
                names.len(),
                pairs.len()
            )));
        }
        let dims = pairs[0].0.dims().to_vec();
        for (i, (img, mask)) in pairs.iter().enumerate() {
            if img.dims() != dims || mask.dims() != dims {
                return Err(Error::InconsistentDims(format!(
                    "pair {i} has dims {:?} / {:?}, expected {dims:?}",
                    img.dims(),
                    mask.dims()
                )));
            }
            let k = mask.count_true();
            if k == 0 {
                return Err(Error::AllBackground);
            }
            if k == mask.len() {
                return Err(Error::AllForeground);
            }
        }
        Ok(Self { pairs, names, dims })
    }

    pub fn pairs(&self) -> &[(ScalarField, BinaryMask)] {
        &self.pairs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Signed-distance fields of the training masks plus the kernel width used
/// to compare whole fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeAtlas {
    fields: Vec<LevelSetField>,
    bandwidth: f64,
}

impl ShapeAtlas {
    pub(crate) fn from_parts(fields: Vec<LevelSetField>, bandwidth: f64) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::EmptyAtlas);
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::NonPositiveBandwidth(bandwidth));
        }
        let dims = fields[0].dims().to_vec();
        if fields.iter().any(|f| f.dims() != dims) {
            return Err(Error::InconsistentDims(
                "atlas fields disagree on grid extents".into(),
            ));
        }
        Ok(Self { fields, bandwidth })
    }

    pub fn fields(&self) -> &[LevelSetField] {
        &self.fields
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        self.fields[0].dims()
    }
}

/// Everything segmentation needs once training is done.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub(crate) intensity_fg: IntensityKde,
    pub(crate) intensity_bg: IntensityKde,
    pub(crate) context_fg: SpatialKde,
    pub(crate) context_bg: SpatialKde,
    pub(crate) shapes: ShapeAtlas,
    pub(crate) dims: Vec<usize>,
    pub(crate) format_version: u32,
}

impl PriorModel {
    pub fn intensity_fg(&self) -> &IntensityKde {
        &self.intensity_fg
    }

    pub fn intensity_bg(&self) -> &IntensityKde {
        &self.intensity_bg
    }

    pub fn context_fg(&self) -> &SpatialKde {
        &self.context_fg
    }

    pub fn context_bg(&self) -> &SpatialKde {
        &self.context_bg
    }

    pub fn shapes(&self) -> &ShapeAtlas {
        &self.shapes
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }
}

/// Bandwidth and subsampling choices for training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub intensity_bandwidth: Bandwidth,
    pub spatial_bandwidth: Bandwidth,
    pub shape_bandwidth: Bandwidth,
    /// Keep every stride-th voxel when collecting location samples.
    pub stride: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            intensity_bandwidth: Bandwidth::Auto,
            spatial_bandwidth: Bandwidth::Auto,
            shape_bandwidth: Bandwidth::Auto,
            stride: 1,
        }
    }
}

/// Width heuristic for the shape kernel: the mean distance from each atlas
/// field to its nearest neighbor. Falls back to sqrt(voxel count), the scale
/// of a unit-per-voxel field difference, for single-field or duplicate sets.
fn auto_shape_bandwidth(fields: &[LevelSetField]) -> f64 {
    let d = fields[0].len() as f64;
    if fields.len() < 2 {
        return d.sqrt();
    }
    let mut acc = 0.0;
    for (i, fi) in fields.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, fj) in fields.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2 = det_sum_indexed(fi.len(), |k| {
                let diff = fi.values()[k] - fj.values()[k];
                diff * diff
            });
            best = best.min(d2.sqrt());
        }
        acc += best;
    }
    let mean = acc / fields.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        d.sqrt()
    }
}

pub fn build_model(ts: &TrainingSet, config: &BuildConfig) -> Result<PriorModel> {
    build_model_excluding(ts, None, config)
}

/// Same as build_model but skips one pair; leave-one-out folds use this to
/// avoid copying the training set per fold.
pub fn build_model_excluding(
    ts: &TrainingSet,
    exclude: Option<usize>,
    config: &BuildConfig,
) -> Result<PriorModel> {
    if config.stride == 0 {
        return Err(Error::InvalidSpec("stride must be positive".into()));
    }
    let used: Vec<&(ScalarField, BinaryMask)> = ts
        .pairs()
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, p)| p)
        .collect();
    if used.is_empty() {
        return Err(Error::EmptySamples);
    }
    let dims = ts.dims().to_vec();

    let mut i_fg = Vec::new();
    let mut i_bg = Vec::new();
    for (img, mask) in &used {
        for (&v, &b) in img.data().iter().zip(mask.data()) {
            if b {
                i_fg.push(v);
            } else {
                i_bg.push(v);
            }
        }
    }
    let intensity_fg = fit_intensity_kde(&i_fg, config.intensity_bandwidth)?;
    let intensity_bg = fit_intensity_kde(&i_bg, config.intensity_bandwidth)?;

    let mut cnt_fg = ScalarField::new(&dims, 0.0)?;
    let mut cnt_bg = ScalarField::new(&dims, 0.0)?;
    let mut n_fg = 0u64;
    let mut n_bg = 0u64;
    for (_, mask) in &used {
        for i in (0..mask.len()).step_by(config.stride) {
            if mask.data()[i] {
                cnt_fg.data_mut()[i] += 1.0;
                n_fg += 1;
            } else {
                cnt_bg.data_mut()[i] += 1.0;
                n_bg += 1;
            }
        }
    }
    if n_fg == 0 || n_bg == 0 {
        return Err(Error::EmptySamples);
    }
    let sigma_l = crate::density::resolve_spatial_bandwidth(config.spatial_bandwidth)?;
    let context_fg = fit_spatial_kde_from_counts(cnt_fg, n_fg, sigma_l);
    let context_bg = fit_spatial_kde_from_counts(cnt_bg, n_bg, sigma_l);

    let fields: Result<Vec<LevelSetField>> = used
        .par_iter()
        .map(|(_, mask)| signed_distance_transform(mask))
        .collect();
    let fields = fields?;
    let sigma_s = match config.shape_bandwidth {
        Bandwidth::Auto => auto_shape_bandwidth(&fields),
        fixed => crate::density::resolve_fixed_bandwidth(fixed)?,
    };
    let shapes = ShapeAtlas::from_parts(fields, sigma_s)?;

    Ok(PriorModel {
        intensity_fg,
        intensity_bg,
        context_fg,
        context_bg,
        shapes,
        dims,
        format_version: FORMAT_VERSION,
    })
}

/// Per-pair foreground centroids and their maximum pairwise distance;
/// flags sets whose masks drift more than `threshold_frac` (default 0.1)
/// of the grid diagonal.
#[derive(Debug, Clone)]
pub struct AlignReport {
    pub centroids: Vec<Vec<f64>>,
    pub max_centroid_distance: f64,
    pub threshold: f64,
    pub warning: bool,
}

pub fn align_check(ts: &TrainingSet, threshold_frac: Option<f64>) -> AlignReport {
    let centroids: Vec<Vec<f64>> = ts
        .pairs()
        .iter()
        .map(|(_, m)| m.centroid().expect("training masks are never empty"))
        .collect();
    let mut max_d = 0.0f64;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let d2: f64 = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            max_d = max_d.max(d2.sqrt());
        }
    }
    let diagonal: f64 = ts
        .dims()
        .iter()
        .map(|&e| (e as f64) * (e as f64))
        .sum::<f64>()
        .sqrt();
    let threshold = threshold_frac.unwrap_or(0.1) * diagonal;
    AlignReport {
        centroids,
        max_centroid_distance: max_d,
        threshold,
        warning: max_d > threshold,
    }
}
