//! Scalar fields, binary masks, level-set fields, and the distance-transform
//! machinery that the rest of the crate is built on.
//!
//! Grids are 2-D or 3-D, stored flat in row-major order (last axis fastest).
//! Level-set sign convention: phi < 0 marks foreground.

use crate::error::{Error, Result};

/// Value standing in for "no site on this line yet" during the distance
/// transform. Large enough to lose to any real squared distance on grids
/// up to 256^2 / 96^3, small enough to avoid overflow when offset by q^2.
const DT_INF: f64 = 1e20;

fn check_dims(dims: &[usize]) -> Result<()> {
    if !(dims.len() == 2 || dims.len() == 3) {
        return Err(Error::InconsistentDims(format!(
            "expected 2 or 3 dimensions, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InconsistentDims(format!(
            "zero extent in dims {dims:?}"
        )));
    }
    Ok(())
}

/// Dense d-dimensional grid of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(dims: &[usize], fill: f64) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product();
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn from_data(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::InconsistentDims(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of a coordinate tuple (row-major, last axis fastest).
    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        let mut idx = 0;
        for (c, e) in coords.iter().zip(&self.dims) {
            debug_assert!(c < e);
            idx = idx * e + c;
        }
        idx
    }

    /// Coordinate tuple of a flat index.
    pub fn coords_of(&self, mut idx: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            coords[a] = idx % self.dims[a];
            idx /= self.dims[a];
        }
        coords
    }

    pub fn at(&self, coords: &[usize]) -> f64 {
        self.data[self.index_of(coords)]
    }

    pub fn set(&mut self, coords: &[usize], value: f64) {
        let i = self.index_of(coords);
        self.data[i] = value;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        crate::util::det_sum(&self.data) / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &ScalarField) -> bool {
        self.dims == other.dims
    }
}

/// Boolean grid; true marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Vec<usize>,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: &[usize], fill: bool) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product();
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn from_data(dims: &[usize], data: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::InconsistentDims(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for (c, e) in coords.iter().zip(&self.dims) {
            idx = idx * e + c;
        }
        idx
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            coords[a] = idx % self.dims[a];
            idx /= self.dims[a];
        }
        coords
    }

    pub fn at(&self, coords: &[usize]) -> bool {
        self.data[self.index_of(coords)]
    }

    pub fn set(&mut self, coords: &[usize], value: bool) {
        let i = self.index_of(coords);
        self.data[i] = value;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims
    }

    /// Mean coordinate of the foreground voxels, or None when empty.
    pub fn centroid(&self) -> Option<Vec<f64>> {
        let n = self.count_true();
        if n == 0 {
            return None;
        }
        let mut acc = vec![0.0; self.dims.len()];
        for (i, &b) in self.data.iter().enumerate() {
            if b {
                for (a, c) in self.coords_of(i).into_iter().enumerate() {
                    acc[a] += c as f64;
                }
            }
        }
        for v in &mut acc {
            *v /= n as f64;
        }
        Some(acc)
    }

    /// Voxels whose label differs from an axis neighbor's.
    pub fn boundary(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let strides = strides_of(&self.dims);
        for (i, &b) in self.data.iter().enumerate() {
            let coords = self.coords_of(i);
            let mut edge = false;
            for a in 0..self.dims.len() {
                if coords[a] > 0 && self.data[i - strides[a]] != b {
                    edge = true;
                }
                if coords[a] + 1 < self.dims[a] && self.data[i + strides[a]] != b {
                    edge = true;
                }
            }
            if edge && b {
                out.push(i);
            }
        }
        out
    }
}

/// Level-set field; kept close to signed-distance form by redistancing.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    field: ScalarField,
}

impl LevelSetField {
    pub fn from_field(field: ScalarField) -> Self {
        Self { field }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }

    pub fn dims(&self) -> &[usize] {
        self.field.dims()
    }

    pub fn len(&self) -> usize {
        self.field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.field.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.field.data_mut()
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    strides
}

/// One-dimensional squared-distance transform by lower envelope of
/// parabolas. `f` holds per-cell offsets, `out` receives the transform,
/// `v` and `z` are scratch (len and len+1 elements).
fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let s = loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64;
            // cannot underflow: z[0] is -inf and s is finite
            if s <= z[k] {
                k -= 1;
            } else {
                break s;
            }
        };
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance from every voxel to the nearest site voxel,
/// by separable per-axis transforms. Exact for any site set.
fn squared_distance_to_sites(sites: &[bool], dims: &[usize]) -> Vec<f64> {
    let mut d: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { DT_INF })
        .collect();
    for axis in 0..dims.len() {
        let len = dims[axis];
        if len == 1 {
            continue;
        }
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        let mut f = vec![0.0; len];
        let mut out = vec![0.0; len];
        let mut v = vec![0usize; len];
        let mut z = vec![0.0; len + 1];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (j, fj) in f.iter_mut().enumerate() {
                    *fj = d[base + j * inner];
                }
                dt1d(&f, &mut out, &mut v, &mut z);
                for (j, oj) in out.iter().enumerate() {
                    d[base + j * inner] = *oj;
                }
            }
        }
    }
    d
}

/// Exact Euclidean signed distance to the opposite-label voxel set:
/// negative inside foreground, positive outside, magnitude in voxel units.
pub fn signed_distance_transform(mask: &BinaryMask) -> Result<LevelSetField> {
    let n_fg = mask.count_true();
    if n_fg == 0 {
        return Err(Error::AllBackground);
    }
    if n_fg == mask.len() {
        return Err(Error::AllForeground);
    }
    let bg_sites: Vec<bool> = mask.data().iter().map(|&b| !b).collect();
    let d_fg = squared_distance_to_sites(mask.data(), mask.dims());
    let d_bg = squared_distance_to_sites(&bg_sites, mask.dims());
    let phi: Vec<f64> = d_fg
        .iter()
        .zip(&d_bg)
        .map(|(&a, &b)| a.sqrt() - b.sqrt())
        .collect();
    Ok(LevelSetField::from_field(ScalarField::from_data(
        mask.dims(),
        phi,
    )?))
}

/// Reprojects a drifted field to signed-distance form without moving its
/// zero crossing: transform of the thresholded mask.
pub fn redistance(phi: &LevelSetField) -> Result<LevelSetField> {
    signed_distance_transform(&threshold(phi))
}

/// Foreground mask of a level-set field (strictly phi < 0).
pub fn threshold(phi: &LevelSetField) -> BinaryMask {
    let data: Vec<bool> = phi.values().iter().map(|&v| v < 0.0).collect();
    BinaryMask::from_data(phi.dims(), data).expect("field dims are valid")
}

/// Dice overlap 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "dice: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
