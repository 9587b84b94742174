//! Level-set evolution: the composite energy, its three force fields, the
//! capped gradient-descent update, and the two-stage segmentation driver.

use rayon::prelude::*;

use crate::density::log_ratio_map;
use crate::error::{Error, Result};
use crate::grid::{
    redistance, signed_distance_transform, threshold, BinaryMask, LevelSetField, ScalarField,
};
use crate::model::{PriorModel, ShapeAtlas};
use crate::util::{det_sum_indexed, max_abs};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub w_data: f64,
    pub w_context: f64,
    pub w_shape: f64,
    pub step_size: f64,
    pub max_iters_stage1: usize,
    pub max_iters_stage2: usize,
    /// Convergence threshold on the fraction of voxels changing label.
    pub tol: f64,
    pub redistance_every: usize,
    pub density_floor: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            w_data: 1.0,
            w_context: 1.0,
            w_shape: 1.0,
            step_size: 0.5,
            max_iters_stage1: 500,
            max_iters_stage2: 500,
            tol: 1e-4,
            redistance_every: 10,
            density_floor: crate::density::DENSITY_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataTerm {
    Learned,
    PiecewiseConstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MethodKind {
    #[serde(rename = "piecewise-constant")]
    PiecewiseConstant,
    #[serde(rename = "data-only")]
    DataOnly,
    #[serde(rename = "data+shape")]
    DataShape,
    #[serde(rename = "data+context")]
    DataContext,
    #[serde(rename = "full")]
    Full,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Full,
        MethodKind::DataContext,
        MethodKind::DataShape,
        MethodKind::DataOnly,
        MethodKind::PiecewiseConstant,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MethodKind::Full => "full",
            MethodKind::DataContext => "data+context",
            MethodKind::DataShape => "data+shape",
            MethodKind::DataOnly => "data-only",
            MethodKind::PiecewiseConstant => "piecewise-constant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == s)
    }
}

/// Evolution settings plus the data-term selector for one method column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodConfig {
    pub evolution: EvolutionConfig,
    pub data_term: DataTerm,
}

pub fn baseline_config(kind: MethodKind, base: &EvolutionConfig) -> MethodConfig {
    let mut evolution = *base;
    match kind {
        MethodKind::Full => {}
        MethodKind::DataContext => evolution.w_shape = 0.0,
        MethodKind::DataShape => evolution.w_context = 0.0,
        MethodKind::DataOnly | MethodKind::PiecewiseConstant => {
            evolution.w_context = 0.0;
            evolution.w_shape = 0.0;
        }
    }
    let data_term = match kind {
        MethodKind::PiecewiseConstant => DataTerm::PiecewiseConstant,
        _ => DataTerm::Learned,
    };
    MethodConfig {
        evolution,
        data_term,
    }
}

/// Per-voxel region membership costs with term weights already folded in.
/// The update force is fg − bg, so cheaper foreground pushes φ negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCosts {
    pub fg: ScalarField,
    pub bg: ScalarField,
}

#[derive(Debug, Clone, Copy)]
pub enum StaticTerm<'a> {
    Costs(&'a RegionCosts),
    /// Two-region mean costs w·(y − μ)², refitted to the current mask each
    /// iteration.
    PiecewiseConstant {
        y: &'a ScalarField,
        weight: f64,
    },
}

/// How the shape term participates in a stage.
#[derive(Debug, Clone, Copy)]
pub enum ShapeTerm<'a> {
    Off,
    /// Counted in reported energies while the update stays shape-free;
    /// stage 1 of the two-stage driver monitors the run's full objective
    /// this way.
    Monitored {
        atlas: &'a ShapeAtlas,
        weight: f64,
    },
    Applied {
        atlas: &'a ShapeAtlas,
        weight: f64,
    },
}

impl<'a> ShapeTerm<'a> {
    fn counted(self) -> Option<(&'a ShapeAtlas, f64)> {
        match self {
            ShapeTerm::Off => None,
            ShapeTerm::Monitored { atlas, weight } | ShapeTerm::Applied { atlas, weight } => {
                Some((atlas, weight))
            }
        }
    }

    fn applied(self) -> Option<(&'a ShapeAtlas, f64)> {
        match self {
            ShapeTerm::Applied { atlas, weight } => Some((atlas, weight)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForceSet<'a> {
    pub static_term: StaticTerm<'a>,
    pub shape: ShapeTerm<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub phi: LevelSetField,
    pub trace: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub mask: BinaryMask,
    /// Mask after the shape-free first stage, for stage-wise comparisons.
    pub stage1_mask: BinaryMask,
    pub phi: LevelSetField,
    /// Full configured objective per iteration across both stages; the
    /// stage boundary repeats its iteration index.
    pub energy_trace: Vec<(usize, f64)>,
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub converged_stage1: bool,
    pub converged_stage2: bool,
    pub dice: Option<f64>,
}

fn require_same_dims(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

/// Per-voxel log((p_bg(y)+floor)/(p_fg(y)+floor)); negative where the
/// intensity is foreground-likely.
pub fn data_force(y: &ScalarField, model: &PriorModel, floor: f64) -> Result<ScalarField> {
    require_same_dims("image vs model grid", y.dims(), model.dims())?;
    let fg = model.intensity_fg();
    let bg = model.intensity_bg();
    let data: Vec<f64> = y
        .data()
        .par_iter()
        .map(|&v| ((bg.eval(v) + floor) / (fg.eval(v) + floor)).ln())
        .collect();
    ScalarField::from_data(y.dims(), data)
}

/// Per-voxel log((q_bg(x)+floor)/(q_fg(x)+floor)); a pure function of the
/// model, shared by every image on the grid.
pub fn context_force(model: &PriorModel, floor: f64) -> ScalarField {
    log_ratio_map(model.context_fg(), model.context_bg(), floor)
        .expect("context maps share the model grid")
}

fn log_weights(phi: &LevelSetField, atlas: &ShapeAtlas) -> Vec<f64> {
    let two_s2 = 2.0 * atlas.bandwidth() * atlas.bandwidth();
    atlas
        .fields()
        .iter()
        .map(|f| {
            let d2 = det_sum_indexed(phi.len(), |i| {
                let d = phi.values()[i] - f.values()[i];
                d * d
            });
            -d2 / two_s2
        })
        .collect()
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// −log[(1/n)·Σ_i exp(−‖φ−φ_i‖²/(2σ²))], normalizer-free.
pub fn shape_energy(phi: &LevelSetField, atlas: &ShapeAtlas) -> Result<f64> {
    if atlas.is_empty() {
        return Err(Error::EmptyAtlas);
    }
    require_same_dims("level set vs atlas", phi.dims(), atlas.dims())?;
    let ms = log_weights(phi, atlas);
    Ok((atlas.len() as f64).ln() - logsumexp(&ms))
}

fn responsibilities(ms: &[f64]) -> Vec<f64> {
    let m = ms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = ms.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = ws.iter().sum();
    ws.into_iter().map(|w| w / total).collect()
}

fn shape_force_into(phi: &LevelSetField, atlas: &ShapeAtlas, out: &mut ScalarField) -> Result<()> {
    if atlas.is_empty() {
        return Err(Error::EmptyAtlas);
    }
    require_same_dims("level set vs atlas", phi.dims(), atlas.dims())?;
    let rs = responsibilities(&log_weights(phi, atlas));
    let s2 = atlas.bandwidth() * atlas.bandwidth();
    let fields: Vec<&[f64]> = atlas.fields().iter().map(|f| f.values()).collect();
    let pv = phi.values();
    out.data_mut()
        .par_chunks_mut(4096)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * 4096;
            for (j, slot) in chunk.iter_mut().enumerate() {
                let i = base + j;
                let mut acc = 0.0;
                for (r, f) in rs.iter().zip(&fields) {
                    acc += r * (f[i] - pv[i]);
                }
                *slot = acc / s2;
            }
        });
    Ok(())
}

/// Responsibility-weighted pull toward the atlas fields; the descent
/// direction that raises the shape likelihood.
pub fn shape_force(phi: &LevelSetField, atlas: &ShapeAtlas) -> Result<ScalarField> {
    let mut out = ScalarField::new(phi.dims(), 0.0)?;
    shape_force_into(phi, atlas, &mut out)?;
    Ok(out)
}

/// Composite energy: w_d·E_data + w_c·E_context + w_s·E_shape, each sum
/// taken over the labeling induced by φ (φ<0 foreground).
pub fn energy(
    phi: &LevelSetField,
    y: &ScalarField,
    model: &PriorModel,
    cfg: &EvolutionConfig,
) -> Result<f64> {
    require_same_dims("level set vs image", phi.dims(), y.dims())?;
    require_same_dims("image vs model grid", y.dims(), model.dims())?;
    let floor = cfg.density_floor;
    let pv = phi.values();
    let mut total = 0.0;
    if cfg.w_data != 0.0 {
        let fg = model.intensity_fg();
        let bg = model.intensity_bg();
        let e = det_sum_indexed(phi.len(), |i| {
            let v = y.data()[i];
            if pv[i] < 0.0 {
                -(fg.eval(v) + floor).ln()
            } else {
                -(bg.eval(v) + floor).ln()
            }
        });
        total += cfg.w_data * e;
    }
    if cfg.w_context != 0.0 {
        let qf = model.context_fg().map().data();
        let qb = model.context_bg().map().data();
        let e = det_sum_indexed(phi.len(), |i| {
            if pv[i] < 0.0 {
                -(qf[i] + floor).ln()
            } else {
                -(qb[i] + floor).ln()
            }
        });
        total += cfg.w_context * e;
    }
    if cfg.w_shape != 0.0 {
        total += cfg.w_shape * shape_energy(phi, model.shapes())?;
    }
    Ok(total)
}

/// Foreground/background means of y under the current labeling; an empty
/// region borrows the global mean so the force stays finite.
fn region_means(pv: &[f64], y: &[f64], global_mean: f64) -> (f64, f64) {
    let n = pv.len();
    let n_fg: usize = pv
        .par_chunks(4096)
        .map(|c| c.iter().filter(|&&v| v < 0.0).count())
        .sum();
    let sum_fg = det_sum_indexed(n, |i| if pv[i] < 0.0 { y[i] } else { 0.0 });
    let sum_all = det_sum_indexed(n, |i| y[i]);
    let mu_fg = if n_fg > 0 {
        sum_fg / n_fg as f64
    } else {
        global_mean
    };
    let n_bg = n - n_fg;
    let mu_bg = if n_bg > 0 {
        (sum_all - sum_fg) / n_bg as f64
    } else {
        global_mean
    };
    (mu_fg, mu_bg)
}

struct StageEngine<'a> {
    forces: &'a ForceSet<'a>,
    static_force: Option<ScalarField>,
    global_mean: f64,
}

impl<'a> StageEngine<'a> {
    fn new(forces: &'a ForceSet<'a>, dims: &[usize]) -> Result<Self> {
        let (static_force, global_mean) = match forces.static_term {
            StaticTerm::Costs(c) => {
                require_same_dims("fg costs vs grid", c.fg.dims(), dims)?;
                require_same_dims("bg costs vs grid", c.bg.dims(), dims)?;
                let data: Vec<f64> =
                    c.fg.data()
                        .par_iter()
                        .zip(c.bg.data())
                        .map(|(a, b)| a - b)
                        .collect();
                (Some(ScalarField::from_data(dims, data)?), 0.0)
            }
            StaticTerm::PiecewiseConstant { y, .. } => {
                require_same_dims("image vs grid", y.dims(), dims)?;
                (None, y.mean())
            }
        };
        if let Some((atlas, _)) = forces.shape.counted() {
            if atlas.is_empty() {
                return Err(Error::EmptyAtlas);
            }
            require_same_dims("atlas vs grid", atlas.dims(), dims)?;
        }
        Ok(Self {
            forces,
            static_force,
            global_mean,
        })
    }

    /// Fills `force` with the combined field for the current φ.
    fn force(
        &self,
        phi: &LevelSetField,
        force: &mut ScalarField,
        scratch: &mut ScalarField,
    ) -> Result<()> {
        match self.forces.static_term {
            StaticTerm::Costs(_) => {
                force
                    .data_mut()
                    .copy_from_slice(self.static_force.as_ref().unwrap().data());
            }
            StaticTerm::PiecewiseConstant { y, weight } => {
                let (mu_fg, mu_bg) = region_means(phi.values(), y.data(), self.global_mean);
                force
                    .data_mut()
                    .par_iter_mut()
                    .zip(y.data())
                    .for_each(|(slot, &v)| {
                        let a = (v - mu_fg) * (v - mu_fg);
                        let b = (v - mu_bg) * (v - mu_bg);
                        *slot = weight * (a - b);
                    });
            }
        }
        if let Some((atlas, w)) = self.forces.shape.applied() {
            shape_force_into(phi, atlas, scratch)?;
            force
                .data_mut()
                .par_iter_mut()
                .zip(scratch.data())
                .for_each(|(slot, &s)| *slot += w * s);
        }
        Ok(())
    }

    /// Reported energy at the current φ: static term plus any counted
    /// shape term.
    fn energy(&self, phi: &LevelSetField) -> Result<f64> {
        let pv = phi.values();
        let mut total = match self.forces.static_term {
            StaticTerm::Costs(c) => det_sum_indexed(phi.len(), |i| {
                if pv[i] < 0.0 {
                    c.fg.data()[i]
                } else {
                    c.bg.data()[i]
                }
            }),
            StaticTerm::PiecewiseConstant { y, weight } => {
                let (mu_fg, mu_bg) = region_means(pv, y.data(), self.global_mean);
                let e = det_sum_indexed(phi.len(), |i| {
                    let v = y.data()[i];
                    if pv[i] < 0.0 {
                        (v - mu_fg) * (v - mu_fg)
                    } else {
                        (v - mu_bg) * (v - mu_bg)
                    }
                });
                weight * e
            }
        };
        if let Some((atlas, w)) = self.forces.shape.counted() {
            total += w * shape_energy(phi, atlas)?;
        }
        Ok(total)
    }
}

/// Runs one evolution stage: capped explicit updates, periodic
/// redistancing, and a label-stability stopping rule. Convergence is
/// declared only at redistance boundaries so a freshly redistanced field
/// cannot undo an apparent fixed point.
pub fn evolve_stage(
    phi0: &LevelSetField,
    forces: &ForceSet<'_>,
    cfg: &EvolutionConfig,
    max_iters: usize,
) -> Result<StageResult> {
    let dims = phi0.dims().to_vec();
    let n = phi0.len();
    let engine = StageEngine::new(forces, &dims)?;

    let mut phi = phi0.clone();
    let mut force = ScalarField::new(&dims, 0.0)?;
    let mut scratch = ScalarField::new(&dims, 0.0)?;

    let window = cfg.redistance_every.max(5);
    let mut trace = Vec::with_capacity(max_iters + 1);
    trace.push((0, engine.energy(&phi)?));
    let mut below_tol_run = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    for k in 1..=max_iters {
        iterations = k;
        engine.force(&phi, &mut force, &mut scratch)?;
        if force.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteForce);
        }
        let max_f = max_abs(force.data());
        if max_f == 0.0 {
            let last = trace.last().expect("trace starts non-empty").1;
            trace.push((k, last));
            converged = true;
            break;
        }
        let dt = cfg.step_size.min(1.0 / max_f);
        let flips: usize = phi
            .values_mut()
            .par_chunks_mut(4096)
            .zip(force.data().par_chunks(4096))
            .map(|(pc, fc)| {
                let mut flipped = 0;
                for (p, &f) in pc.iter_mut().zip(fc) {
                    let was_fg = *p < 0.0;
                    *p += dt * f;
                    if (*p < 0.0) != was_fg {
                        flipped += 1;
                    }
                }
                flipped
            })
            .sum();
        trace.push((k, engine.energy(&phi)?));
        if (flips as f64) / (n as f64) < cfg.tol {
            below_tol_run += 1;
        } else {
            below_tol_run = 0;
        }
        if k % cfg.redistance_every == 0 {
            let mask = threshold(&phi);
            let fg = mask.count_true();
            if fg > 0 && fg < n {
                phi = redistance(&phi)?;
            }
            if below_tol_run >= window {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        converged = below_tol_run >= window;
    }
    Ok(StageResult {
        phi,
        trace,
        iterations,
        converged,
    })
}

fn centered_ball(dims: &[usize]) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(dims, false)?;
    let center: Vec<f64> = dims.iter().map(|&e| (e as f64 - 1.0) / 2.0).collect();
    let radius = dims.iter().copied().min().unwrap() as f64 / 4.0;
    let r2 = radius * radius;
    for i in 0..mask.len() {
        let c = mask.coords_of(i);
        let d2: f64 = c
            .iter()
            .zip(&center)
            .map(|(&a, b)| (a as f64 - b) * (a as f64 - b))
            .sum();
        if d2 < r2 {
            mask.data_mut()[i] = true;
        }
    }
    let nearest: Vec<usize> = center
        .iter()
        .zip(dims)
        .map(|(&c, &e)| (c.round() as usize).min(e - 1))
        .collect();
    let idx = mask.index_of(&nearest);
    mask.data_mut()[idx] = true;
    Ok(mask)
}

fn auto_init(y: &ScalarField, model: &PriorModel, method: &MethodConfig) -> Result<LevelSetField> {
    let mask = match method.data_term {
        DataTerm::Learned => {
            let f = data_force(y, model, method.evolution.density_floor)?;
            BinaryMask::from_data(y.dims(), f.data().iter().map(|&v| v < 0.0).collect())?
        }
        DataTerm::PiecewiseConstant => {
            let mu = y.mean();
            BinaryMask::from_data(y.dims(), y.data().iter().map(|&v| v > mu).collect())?
        }
    };
    let fg = mask.count_true();
    let mask = if fg == 0 || fg == mask.len() {
        centered_ball(y.dims())?
    } else {
        mask
    };
    signed_distance_transform(&mask)
}

fn learned_costs(
    y: &ScalarField,
    model: &PriorModel,
    cfg: &EvolutionConfig,
) -> Result<RegionCosts> {
    let floor = cfg.density_floor;
    let (wd, wc) = (cfg.w_data, cfg.w_context);
    let ifg = model.intensity_fg();
    let ibg = model.intensity_bg();
    let qf = model.context_fg().map().data();
    let qb = model.context_bg().map().data();
    let (a, b): (Vec<f64>, Vec<f64>) = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let v = y.data()[i];
            let lf = (ifg.eval(v) + floor).ln();
            let lb = (ibg.eval(v) + floor).ln();
            let lqf = (qf[i] + floor).ln();
            let lqb = (qb[i] + floor).ln();
            (-wd * lf - wc * lqf, -wd * lb - wc * lqb)
        })
        .unzip();
    Ok(RegionCosts {
        fg: ScalarField::from_data(y.dims(), a)?,
        bg: ScalarField::from_data(y.dims(), b)?,
    })
}

/// Two-stage driver: stage 1 evolves shape-free while its trace still
/// reports the full configured objective, stage 2 restarts from the
/// redistanced stage-1 field with the shape force active.
pub fn segment_two_stage(
    y: &ScalarField,
    model: &PriorModel,
    phi0: Option<&LevelSetField>,
    method: &MethodConfig,
) -> Result<SegmentationResult> {
    let cfg = &method.evolution;
    require_same_dims("image vs model grid", y.dims(), model.dims())?;
    let costs = match method.data_term {
        DataTerm::Learned => Some(learned_costs(y, model, cfg)?),
        DataTerm::PiecewiseConstant => None,
    };
    let static_term = match &costs {
        Some(c) => StaticTerm::Costs(c),
        None => StaticTerm::PiecewiseConstant {
            y,
            weight: cfg.w_data,
        },
    };

    let phi_init = match phi0 {
        Some(p) => {
            require_same_dims("initial level set vs image", p.dims(), y.dims())?;
            p.clone()
        }
        None => auto_init(y, model, method)?,
    };

    let shape_monitor = if cfg.w_shape != 0.0 {
        ShapeTerm::Monitored {
            atlas: model.shapes(),
            weight: cfg.w_shape,
        }
    } else {
        ShapeTerm::Off
    };
    let stage1 = evolve_stage(
        &phi_init,
        &ForceSet {
            static_term,
            shape: shape_monitor,
        },
        cfg,
        cfg.max_iters_stage1,
    )?;

    let mid_mask = threshold(&stage1.phi);
    let fg = mid_mask.count_true();
    let phi_mid = if fg > 0 && fg < mid_mask.len() {
        redistance(&stage1.phi)?
    } else {
        stage1.phi.clone()
    };

    let shape = if cfg.w_shape != 0.0 {
        ShapeTerm::Applied {
            atlas: model.shapes(),
            weight: cfg.w_shape,
        }
    } else {
        ShapeTerm::Off
    };
    let stage2 = evolve_stage(
        &phi_mid,
        &ForceSet { static_term, shape },
        cfg,
        cfg.max_iters_stage2,
    )?;

    let mut energy_trace = stage1.trace;
    for (k, e) in &stage2.trace {
        energy_trace.push((stage1.iterations + k, *e));
    }
    let mask = threshold(&stage2.phi);
    Ok(SegmentationResult {
        mask,
        stage1_mask: mid_mask,
        phi: stage2.phi,
        energy_trace,
        iters_stage1: stage1.iterations,
        iters_stage2: stage2.iterations,
        converged_stage1: stage1.converged,
        converged_stage2: stage2.converged,
        dice: None,
    })
}
