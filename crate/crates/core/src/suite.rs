//! Preset experiment suites tying phantom generation to the
//! leave-one-out harness.

use crate::error::Result;
use crate::evolve::{EvolutionConfig, MethodKind};
use crate::harness::{run_loo, ExperimentReport};
use crate::model::{BuildConfig, TrainingSet};
use crate::phantom::{self, PhantomSpec};

/// Shape fields live on the signed-distance scale, where typical atlas
/// spreads are hundreds of units, so the raw shape pull is orders of
/// magnitude below the data and context forces. These weights bring it
/// up to a comparable order on each grid.
const W_SHAPE_2D: f64 = 1500.0;
const W_SHAPE_3D: f64 = 30000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub phantom: PhantomSpec,
    pub build: BuildConfig,
    pub evolution: EvolutionConfig,
    pub methods: Vec<MethodKind>,
}

/// Nearly disjoint intensity distributions; the data term alone suffices.
pub fn easy_suite(seed: u64) -> SuiteConfig {
    SuiteConfig {
        phantom: PhantomSpec {
            n_shapes: 10,
            seed,
            ..PhantomSpec::default_2d()
        },
        build: BuildConfig::default(),
        evolution: EvolutionConfig::default(),
        methods: vec![MethodKind::DataOnly],
    }
}

/// Intensity mixtures blended until per-voxel evidence is ambiguous;
/// location and shape priors have to carry the segmentation.
pub fn standard_suite_2d(seed: u64) -> SuiteConfig {
    SuiteConfig {
        phantom: PhantomSpec {
            n_shapes: 30,
            overlap: 0.6,
            seed,
            ..PhantomSpec::default_2d()
        },
        build: BuildConfig::default(),
        evolution: EvolutionConfig {
            w_shape: W_SHAPE_2D,
            ..EvolutionConfig::default()
        },
        methods: MethodKind::ALL.to_vec(),
    }
}

pub fn standard_suite_3d(seed: u64) -> SuiteConfig {
    SuiteConfig {
        phantom: PhantomSpec {
            n_shapes: 30,
            overlap: 0.6,
            seed,
            ..PhantomSpec::default_3d()
        },
        build: BuildConfig::default(),
        evolution: EvolutionConfig {
            w_shape: W_SHAPE_3D,
            ..EvolutionConfig::default()
        },
        methods: MethodKind::ALL.to_vec(),
    }
}

/// Generates the phantom corpus and runs the leave-one-out comparison.
pub fn run_suite(cfg: &SuiteConfig) -> Result<(TrainingSet, ExperimentReport)> {
    let ts = phantom::generate(&cfg.phantom)?;
    let report = run_loo(&ts, &cfg.methods, &cfg.build, &cfg.evolution)?;
    Ok((ts, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_cover_both_regimes() {
        let easy = easy_suite(0);
        assert_eq!(easy.phantom.overlap, 0.0);
        assert_eq!(easy.methods, vec![MethodKind::DataOnly]);

        for cfg in [standard_suite_2d(0), standard_suite_3d(0)] {
            assert_eq!(cfg.phantom.overlap, 0.6);
            assert_eq!(cfg.phantom.n_shapes, 30);
            assert_eq!(cfg.methods.len(), 5);
            assert!(cfg.evolution.w_shape > 1.0);
        }
        assert_eq!(standard_suite_2d(0).phantom.dims, vec![128, 128]);
        assert_eq!(standard_suite_3d(0).phantom.dims, vec![64, 64, 64]);
    }

    #[test]
    fn run_suite_produces_a_full_report() {
        let cfg = SuiteConfig {
            phantom: PhantomSpec {
                dims: vec![24, 24],
                n_shapes: 3,
                ..PhantomSpec::default_2d()
            },
            build: BuildConfig::default(),
            evolution: EvolutionConfig::default(),
            methods: vec![MethodKind::DataOnly, MethodKind::PiecewiseConstant],
        };
        let (ts, report) = run_suite(&cfg).unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(report.per_image.len(), 6);
    }
}
