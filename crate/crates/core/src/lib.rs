//! Level-set image segmentation with learned nonparametric priors.
//!
//! The pipeline: train kernel density estimators for region intensities,
//! region locations, and region shapes from image/mask pairs, then segment
//! new images by two-stage gradient-descent evolution of a level-set field.

pub mod archive;
pub mod density;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod harness;
pub mod io;
pub mod model;
pub mod phantom;
pub mod suite;
pub(crate) mod util;

pub use archive::{load_model, save_model};
pub use density::{
    fit_intensity_kde, fit_spatial_kde, log_ratio_map, Bandwidth, IntensityKde, SpatialKde,
    DENSITY_FLOOR,
};
pub use error::{Error, Result};
pub use evolve::{
    baseline_config, context_force, data_force, energy, evolve_stage, segment_two_stage,
    shape_energy, shape_force, DataTerm, EvolutionConfig, ForceSet, MethodConfig, MethodKind,
    RegionCosts, SegmentationResult, ShapeTerm, StageResult, StaticTerm,
};
pub use grid::{
    dice, redistance, signed_distance_transform, threshold, BinaryMask, LevelSetField, ScalarField,
};
pub use harness::{
    emit_report, paired_t_test, regularized_incomplete_beta, run_loo, ExperimentReport, ReportCell,
    TestOutcome,
};
pub use io::{
    image_extension, read_image, read_level_set, read_mask, write_image, write_level_set,
    write_mask, write_overlays, write_text,
};
pub use model::{
    align_check, build_model, build_model_excluding, AlignReport, BuildConfig, PriorModel,
    ShapeAtlas, TrainingSet, FORMAT_VERSION,
};
pub use phantom::{generate, overlap_coefficient, MixtureComponent, PhantomSpec, ShapeFamily};
pub use suite::{easy_suite, run_suite, standard_suite_2d, standard_suite_3d, SuiteConfig};
