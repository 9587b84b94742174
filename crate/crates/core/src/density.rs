//! Gaussian kernel density estimators: 1-D over intensities and d-dimensional
//! over voxel locations. Both precompute dense evaluations so per-voxel
//! lookups during evolution are cheap.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::util::gauss;

/// Number of table nodes for intensity estimators, spanning [0, 1].
pub const INTENSITY_TABLE_LEN: usize = 4096;

/// Added to every density inside a log so ratios stay finite.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// Kernel contributions beyond this many bandwidths are dropped when the
/// sample set is too large for exact summation; the neglected tail is below
/// 1e-13 of a unit weight.
const TRUNCATION_SIGMAS: f64 = 8.0;

/// Work budget (terms per table node times nodes) under which intensity
/// tables are built by exact full summation.
const EXACT_TABLE_BUDGET: usize = 1 << 24;

/// Grids at or below this voxel count get a full-extent (exact) blur kernel.
const EXACT_BLUR_VOXELS: usize = 65536;

/// Serializes as the string "auto" or a bare positive number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl serde::Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> serde::Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Value(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) if s == "auto" => Ok(Bandwidth::Auto),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or a number, got \"{s}\""
            ))),
            Repr::Value(v) => Ok(Bandwidth::Fixed(v)),
        }
    }
}

impl Bandwidth {
    fn resolve_fixed(self) -> Result<Option<f64>> {
        match self {
            Bandwidth::Auto => Ok(None),
            Bandwidth::Fixed(s) => {
                if s.is_finite() && s > 0.0 {
                    Ok(Some(s))
                } else {
                    Err(Error::NonPositiveBandwidth(s))
                }
            }
        }
    }
}

/// 1-D Gaussian KDE over intensity values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityKde {
    /// Distinct sample values with multiplicities, ascending.
    uniques: Vec<(f64, f64)>,
    n: u64,
    bandwidth: f64,
    table: Vec<f64>,
}

/// Silverman's rule of thumb, floored so constant samples stay usable.
fn silverman(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (1.06 * var.sqrt() * n.powf(-0.2)).max(1e-3)
}

pub fn fit_intensity_kde(samples: &[f64], bandwidth: Bandwidth) -> Result<IntensityKde> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    for &s in samples {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidSamples(format!(
                "intensity {s} outside [0, 1]"
            )));
        }
    }
    let sigma = match bandwidth.resolve_fixed()? {
        Some(s) => s,
        None => silverman(samples),
    };

    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut uniques: Vec<(f64, f64)> = Vec::new();
    for s in sorted {
        match uniques.last_mut() {
            Some((v, c)) if *v == s => *c += 1.0,
            _ => uniques.push((s, 1.0)),
        }
    }

    let n = samples.len() as f64;
    let exact = uniques.len().saturating_mul(INTENSITY_TABLE_LEN) <= EXACT_TABLE_BUDGET;
    let step = 1.0 / (INTENSITY_TABLE_LEN - 1) as f64;
    let table: Vec<f64> = (0..INTENSITY_TABLE_LEN)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * step;
            let terms: &[(f64, f64)] = if exact {
                &uniques
            } else {
                window(&uniques, t, TRUNCATION_SIGMAS * sigma)
            };
            terms
                .iter()
                .map(|&(v, c)| c * gauss(t, v, sigma))
                .sum::<f64>()
                / n
        })
        .collect();

    Ok(IntensityKde {
        uniques,
        n: samples.len() as u64,
        bandwidth: sigma,
        table,
    })
}

/// Slice of `uniques` whose values lie within `radius` of `center`.
fn window(uniques: &[(f64, f64)], center: f64, radius: f64) -> &[(f64, f64)] {
    let lo = uniques.partition_point(|&(v, _)| v < center - radius);
    let hi = uniques.partition_point(|&(v, _)| v <= center + radius);
    &uniques[lo..hi]
}

impl IntensityKde {
    /// Density at `value`: table interpolation inside [0, 1], direct
    /// summation outside, where the table has no nodes.
    pub fn eval(&self, value: f64) -> f64 {
        if !(0.0..=1.0).contains(&value) {
            return self.eval_exact(value);
        }
        let t = value * (INTENSITY_TABLE_LEN - 1) as f64;
        let i = (t as usize).min(INTENSITY_TABLE_LEN - 2);
        let frac = t - i as f64;
        self.table[i] * (1.0 - frac) + self.table[i + 1] * frac
    }

    fn eval_exact(&self, value: f64) -> f64 {
        let terms = window(&self.uniques, value, TRUNCATION_SIGMAS * self.bandwidth);
        terms
            .iter()
            .map(|&(v, c)| c * gauss(value, v, self.bandwidth))
            .sum::<f64>()
            / self.n as f64
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_samples(&self) -> u64 {
        self.n
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub(crate) fn to_parts(&self) -> (Vec<f64>, Vec<f64>, u64, f64, Vec<f64>) {
        let values = self.uniques.iter().map(|&(v, _)| v).collect();
        let counts = self.uniques.iter().map(|&(_, c)| c).collect();
        (values, counts, self.n, self.bandwidth, self.table.clone())
    }

    pub(crate) fn from_parts(
        values: Vec<f64>,
        counts: Vec<f64>,
        n: u64,
        bandwidth: f64,
        table: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != counts.len() || table.len() != INTENSITY_TABLE_LEN {
            return Err(Error::Format(
                "intensity estimator arrays have inconsistent lengths".into(),
            ));
        }
        Ok(IntensityKde {
            uniques: values.into_iter().zip(counts).collect(),
            n,
            bandwidth,
            table,
        })
    }
}

/// d-dimensional isotropic Gaussian KDE over voxel coordinates, stored as a
/// density map covering the whole grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKde {
    map: ScalarField,
    bandwidth: f64,
    n: u64,
}

pub fn fit_spatial_kde(
    samples: &[Vec<usize>],
    dims: &[usize],
    bandwidth: Bandwidth,
) -> Result<SpatialKde> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut counts = ScalarField::new(dims, 0.0)?;
    for s in samples {
        if s.len() != dims.len() {
            return Err(Error::InconsistentDims(format!(
                "coordinate {s:?} has wrong arity for dims {dims:?}"
            )));
        }
        for (a, (&c, &e)) in s.iter().zip(dims).enumerate() {
            if c >= e {
                return Err(Error::CoordinateOutOfRange {
                    index: c,
                    len: e,
                    axis: a,
                });
            }
        }
        let i = counts.index_of(s);
        counts.data_mut()[i] += 1.0;
    }
    let sigma = resolve_spatial_bandwidth(bandwidth)?;
    Ok(fit_spatial_kde_from_counts(
        counts,
        samples.len() as u64,
        sigma,
    ))
}

pub(crate) fn resolve_spatial_bandwidth(bandwidth: Bandwidth) -> Result<f64> {
    Ok(bandwidth.resolve_fixed()?.unwrap_or(2.0))
}

/// Unwraps a bandwidth that must be explicit; Auto is a caller bug here.
pub(crate) fn resolve_fixed_bandwidth(bandwidth: Bandwidth) -> Result<f64> {
    bandwidth
        .resolve_fixed()
        .map(|o| o.expect("auto bandwidth resolved by caller"))
}

/// Same estimator fed a prebuilt per-voxel sample-count field.
pub(crate) fn fit_spatial_kde_from_counts(counts: ScalarField, n: u64, sigma: f64) -> SpatialKde {
    let mut map = counts;
    gaussian_blur(&mut map, sigma);
    let inv_n = 1.0 / n as f64;
    for v in map.data_mut() {
        *v *= inv_n;
    }
    SpatialKde {
        map,
        bandwidth: sigma,
        n,
    }
}

impl SpatialKde {
    pub fn map(&self) -> &ScalarField {
        &self.map
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_samples(&self) -> u64 {
        self.n
    }

    pub(crate) fn from_raw(map: ScalarField, bandwidth: f64, n: u64) -> Self {
        SpatialKde { map, bandwidth, n }
    }
}

/// Separable convolution with the continuous Gaussian kernel sampled at
/// integer offsets, zero-padded at the borders and never renormalized, so
/// the result equals the explicit per-sample sum. Small grids use the full
/// axis extent; larger ones truncate where the tail is negligible.
pub(crate) fn gaussian_blur(field: &mut ScalarField, sigma: f64) {
    let dims = field.dims().to_vec();
    let total = field.len();
    let data = field.data_mut();
    for axis in 0..dims.len() {
        let len = dims[axis];
        if len == 1 {
            continue;
        }
        let radius = if total <= EXACT_BLUR_VOXELS {
            len - 1
        } else {
            (TRUNCATION_SIGMAS * sigma).ceil().min((len - 1) as f64) as usize
        };
        let kernel: Vec<f64> = (0..=radius).map(|j| gauss(j as f64, 0.0, sigma)).collect();
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (j, lj) in line.iter_mut().enumerate() {
                    *lj = data[base + j * inner];
                }
                for (q, oq) in out.iter_mut().enumerate() {
                    let lo = q.saturating_sub(radius);
                    let hi = (q + radius).min(len - 1);
                    let mut acc = 0.0;
                    for (p, lp) in line[lo..=hi].iter().enumerate() {
                        acc += lp * kernel[(lo + p).abs_diff(q)];
                    }
                    *oq = acc;
                }
                for (j, oj) in out.iter().enumerate() {
                    data[base + j * inner] = *oj;
                }
            }
        }
    }
}

/// Per-voxel log((bg + floor) / (fg + floor)).
pub fn log_ratio_map(fg: &SpatialKde, bg: &SpatialKde, floor: f64) -> Result<ScalarField> {
    log_ratio_fields(fg.map(), bg.map(), floor)
}

pub(crate) fn log_ratio_fields(
    fg: &ScalarField,
    bg: &ScalarField,
    floor: f64,
) -> Result<ScalarField> {
    if fg.dims() != bg.dims() {
        return Err(Error::DimensionMismatch(format!(
            "log ratio: {:?} vs {:?}",
            fg.dims(),
            bg.dims()
        )));
    }
    let data: Vec<f64> = fg
        .data()
        .iter()
        .zip(bg.data())
        .map(|(&f, &b)| ((b + floor) / (f + floor)).ln())
        .collect();
    ScalarField::from_data(fg.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEAK_01: f64 = 3.989_422_804_014_327; // N(0; 0, 0.1) peak

    #[test]
    fn single_sample_peak() {
        let kde = fit_intensity_kde(&[0.5], Bandwidth::Fixed(0.1)).unwrap();
        let v = kde.eval(0.5);
        assert!((v - PEAK_01).abs() / PEAK_01 < 1e-4);
        assert!((v - 3.9894).abs() < 1e-3);
    }

    #[test]
    fn symmetric_samples_give_symmetric_density() {
        let kde = fit_intensity_kde(&[0.2, 0.8], Bandwidth::Fixed(0.1)).unwrap();
        for k in 0..50 {
            let t = k as f64 * 0.01;
            let lo = kde.eval(0.5 - t);
            let hi = kde.eval(0.5 + t);
            assert!((lo - hi).abs() < 1e-12, "asymmetry at t={t}: {lo} vs {hi}");
        }
    }

    #[test]
    fn integrates_to_one() {
        // fixed pseudo-uniform samples
        let samples: Vec<f64> = (0..100)
            .map(|i| ((i * 37 + 11) % 100) as f64 / 99.0)
            .collect();
        for sigma in [0.02, 0.1, 0.3] {
            let kde = fit_intensity_kde(&samples, Bandwidth::Fixed(sigma)).unwrap();
            let lo = -4.0 * sigma;
            let hi = 1.0 + 4.0 * sigma;
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut integral = 0.5 * (kde.eval(lo) + kde.eval(hi));
            for k in 1..n {
                integral += kde.eval(lo + k as f64 * h);
            }
            integral *= h;
            assert!((integral - 1.0).abs() < 1e-3, "sigma {sigma}: {integral}");
        }
    }

    #[test]
    fn far_tail_is_negligible() {
        let kde = fit_intensity_kde(&[0.5], Bandwidth::Fixed(0.01)).unwrap();
        assert!(kde.eval(2.0) <= 1e-10);
        assert!(kde.eval(-1.0) <= 1e-10);
    }

    #[test]
    fn table_nodes_are_exact() {
        let samples = [0.1, 0.4, 0.4, 0.9];
        let sigma = 0.07;
        let kde = fit_intensity_kde(&samples, Bandwidth::Fixed(sigma)).unwrap();
        let step = 1.0 / (INTENSITY_TABLE_LEN - 1) as f64;
        for k in [0, 17, 2047, 4095] {
            let t = k as f64 * step;
            let explicit: f64 =
                samples.iter().map(|&s| gauss(t, s, sigma)).sum::<f64>() / samples.len() as f64;
            assert!((kde.table()[k] - explicit).abs() < 1e-12);
            assert!((kde.eval(t) - explicit).abs() / explicit.max(1e-300) < 1e-9);
        }
    }

    #[test]
    fn duplicates_match_multiset_semantics() {
        let three = fit_intensity_kde(&[0.3, 0.3, 0.3], Bandwidth::Fixed(0.05)).unwrap();
        let one = fit_intensity_kde(&[0.3], Bandwidth::Fixed(0.05)).unwrap();
        assert!((three.eval(0.3) - one.eval(0.3)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_tracks_exact_sum() {
        let samples: Vec<f64> = (0..40).map(|i| 0.2 + 0.015 * i as f64).collect();
        let kde = fit_intensity_kde(&samples, Bandwidth::Fixed(0.03)).unwrap();
        for k in 0..200 {
            let v = 0.15 + k as f64 * 0.0035;
            let explicit: f64 =
                samples.iter().map(|&s| gauss(v, s, 0.03)).sum::<f64>() / samples.len() as f64;
            if explicit > 1e-6 {
                assert!(
                    (kde.eval(v) - explicit).abs() / explicit < 1e-4,
                    "at {v}: {} vs {explicit}",
                    kde.eval(v)
                );
            }
        }
    }

    #[test]
    fn silverman_matches_formula() {
        let samples = [0.2, 0.3, 0.4, 0.5, 0.6];
        let kde = fit_intensity_kde(&samples, Bandwidth::Auto).unwrap();
        let mean = 0.4;
        let var: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / 4.0;
        let expect = 1.06 * var.sqrt() * 5f64.powf(-0.2);
        assert!((kde.bandwidth() - expect).abs() < 1e-12);

        let constant = fit_intensity_kde(&[0.5; 10], Bandwidth::Auto).unwrap();
        assert_eq!(constant.bandwidth(), 1e-3);
    }

    #[test]
    fn intensity_fit_errors() {
        assert!(matches!(
            fit_intensity_kde(&[], Bandwidth::Fixed(0.1)),
            Err(Error::EmptySamples)
        ));
        assert!(matches!(
            fit_intensity_kde(&[0.5], Bandwidth::Fixed(0.0)),
            Err(Error::NonPositiveBandwidth(_))
        ));
        assert!(matches!(
            fit_intensity_kde(&[0.5, 1.2], Bandwidth::Fixed(0.1)),
            Err(Error::InvalidSamples(_))
        ));
    }

    #[test]
    fn spatial_single_sample_is_symmetric_and_peaked() {
        let kde = fit_spatial_kde(&[vec![8, 8]], &[17, 17], Bandwidth::Fixed(2.0)).unwrap();
        let m = kde.map();
        let peak = m.at(&[8, 8]);
        assert_eq!(m.max(), peak);
        for (a, b) in [([6, 8], [10, 8]), ([8, 5], [8, 11]), ([4, 4], [12, 12])] {
            assert!((m.at(&a) - m.at(&b)).abs() < 1e-15);
        }
        let expect_peak = 1.0 / (2.0 * std::f64::consts::PI * 4.0);
        assert!((peak - expect_peak).abs() / expect_peak < 1e-6);
    }

    #[test]
    fn spatial_two_distant_samples_halve_the_peak() {
        let kde = fit_spatial_kde(
            &[vec![10, 10], vec![50, 50]],
            &[64, 64],
            Bandwidth::Fixed(2.0),
        )
        .unwrap();
        let single = 1.0 / (2.0 * std::f64::consts::PI * 4.0);
        let v = kde.map().at(&[10, 10]);
        assert!((v - 0.5 * single).abs() / single < 1e-9);
    }

    #[test]
    fn spatial_full_coverage_is_flat_inside() {
        let dims = [16usize, 16];
        let samples: Vec<Vec<usize>> = (0..16)
            .flat_map(|r| (0..16).map(move |c| vec![r, c]))
            .collect();
        let kde = fit_spatial_kde(&samples, &dims, Bandwidth::Fixed(2.0)).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 6..10 {
            for c in 6..10 {
                let v = kde.map().at(&[r, c]);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert!(hi / lo <= 1.01, "interior ratio {}", hi / lo);
    }

    fn explicit_spatial_sum(samples: &[Vec<usize>], dims: &[usize], sigma: f64) -> ScalarField {
        let mut f = ScalarField::new(dims, 0.0).unwrap();
        let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(dims.len() as f64) / 2.0);
        for i in 0..f.len() {
            let c = f.coords_of(i);
            let mut acc = 0.0;
            for s in samples {
                let d2: f64 = c
                    .iter()
                    .zip(s)
                    .map(|(&a, &b)| (a as f64 - b as f64) * (a as f64 - b as f64))
                    .sum();
                acc += (-0.5 * d2 / (sigma * sigma)).exp();
            }
            f.data_mut()[i] = acc * norm / samples.len() as f64;
        }
        f
    }

    #[test]
    fn spatial_blur_equals_explicit_sum() {
        let dims_2d = [12usize, 9];
        let samples_2d: Vec<Vec<usize>> = (0..30)
            .map(|i| vec![(i * 7 + 3) % 12, (i * 5 + 1) % 9])
            .collect();
        let kde = fit_spatial_kde(&samples_2d, &dims_2d, Bandwidth::Fixed(1.7)).unwrap();
        let explicit = explicit_spatial_sum(&samples_2d, &dims_2d, 1.7);
        for (a, b) in kde.map().data().iter().zip(explicit.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }

        let dims_3d = [9usize, 8, 7];
        let samples_3d: Vec<Vec<usize>> = (0..25)
            .map(|i| vec![(i * 5 + 2) % 9, (i * 3 + 1) % 8, (i * 11) % 7])
            .collect();
        let kde = fit_spatial_kde(&samples_3d, &dims_3d, Bandwidth::Fixed(2.2)).unwrap();
        let explicit = explicit_spatial_sum(&samples_3d, &dims_3d, 2.2);
        for (a, b) in kde.map().data().iter().zip(explicit.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn spatial_fit_errors() {
        assert!(matches!(
            fit_spatial_kde(&[], &[8, 8], Bandwidth::Auto),
            Err(Error::EmptySamples)
        ));
        assert!(matches!(
            fit_spatial_kde(&[vec![8, 3]], &[8, 8], Bandwidth::Auto),
            Err(Error::CoordinateOutOfRange { .. })
        ));
    }

    #[test]
    fn log_ratio_basics() {
        let dims = [4usize, 4];
        let fg = SpatialKde::from_raw(ScalarField::new(&dims, 0.02).unwrap(), 2.0, 1);
        let bg_equal = SpatialKde::from_raw(ScalarField::new(&dims, 0.02).unwrap(), 2.0, 1);
        let zero = log_ratio_map(&fg, &bg_equal, DENSITY_FLOOR).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let bg_half = SpatialKde::from_raw(ScalarField::new(&dims, 0.01).unwrap(), 2.0, 1);
        let r = log_ratio_map(&fg, &bg_half, 1e-12).unwrap();
        for &v in r.data() {
            assert!((v - (-std::f64::consts::LN_2)).abs() < 1e-9);
        }

        let both_zero = SpatialKde::from_raw(ScalarField::new(&dims, 0.0).unwrap(), 2.0, 1);
        let r = log_ratio_map(&both_zero, &both_zero, DENSITY_FLOOR).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));

        let other = SpatialKde::from_raw(ScalarField::new(&[5, 5], 0.0).unwrap(), 2.0, 1);
        assert!(matches!(
            log_ratio_map(&fg, &other, DENSITY_FLOOR),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
