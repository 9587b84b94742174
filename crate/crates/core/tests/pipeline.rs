//! Cross-module behavior of the train-then-segment pipeline on phantom
//! corpora, exercised through the public API only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinecarve_core::{
    baseline_config, build_model, build_model_excluding, data_force, dice, evolve_stage, generate,
    redistance, run_loo, segment_two_stage, threshold, BuildConfig, EvolutionConfig, ForceSet,
    MethodKind, PhantomSpec, ShapeTerm, StaticTerm, DENSITY_FLOOR,
};

fn small_spec(overlap: f64, seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: vec![32, 32],
        n_shapes: 5,
        overlap,
        seed,
        ..PhantomSpec::default_2d()
    }
}

#[test]
fn data_only_accuracy_degrades_with_overlap() {
    let overlaps = [0.0, 0.3, 0.6, 0.9];
    let mut mean_by_overlap = [0.0f64; 4];
    let seeds = 10u64;
    for seed in 0..seeds {
        for (slot, &overlap) in mean_by_overlap.iter_mut().zip(&overlaps) {
            let ts = generate(&small_spec(overlap, seed)).unwrap();
            let report = run_loo(
                &ts,
                &[MethodKind::DataOnly],
                &BuildConfig::default(),
                &EvolutionConfig::default(),
            )
            .unwrap();
            *slot += report.mean_of("data-only").unwrap() / seeds as f64;
        }
    }
    for pair in mean_by_overlap.windows(2) {
        assert!(
            pair[0] >= pair[1],
            "means not monotone in overlap: {mean_by_overlap:?}"
        );
    }
    assert!(
        mean_by_overlap[0] - mean_by_overlap[3] > 0.1,
        "overlap barely matters: {mean_by_overlap:?}"
    );
}

#[test]
fn excluding_an_image_shrinks_the_training_pool() {
    let ts = generate(&small_spec(0.0, 3)).unwrap();
    let cfg = BuildConfig::default();
    let all = build_model(&ts, &cfg).unwrap();
    let without_first = build_model_excluding(&ts, Some(0), &cfg).unwrap();
    assert_eq!(all.shapes().len(), ts.len());
    assert_eq!(without_first.shapes().len(), ts.len() - 1);
    let held_out_voxels = ts.pairs()[0].0.len() as u64;
    assert_eq!(
        all.intensity_fg().n_samples() + all.intensity_bg().n_samples(),
        without_first.intensity_fg().n_samples()
            + without_first.intensity_bg().n_samples()
            + held_out_voxels
    );
}

#[test]
fn redistancing_a_mid_run_field_preserves_its_mask() {
    let ts = generate(&small_spec(0.3, 7)).unwrap();
    let (img, _) = &ts.pairs()[0];
    let model = build_model_excluding(&ts, Some(0), &BuildConfig::default()).unwrap();
    let init = data_force(img, &model, DENSITY_FLOOR).unwrap();
    let init = spinecarve_core::signed_distance_transform(
        &spinecarve_core::BinaryMask::from_data(
            img.dims(),
            init.data().iter().map(|&v| v < 0.0).collect(),
        )
        .unwrap(),
    )
    .unwrap();
    let cfg = EvolutionConfig {
        redistance_every: 50,
        ..EvolutionConfig::default()
    };
    let drifted = evolve_stage(
        &init,
        &ForceSet {
            static_term: StaticTerm::PiecewiseConstant {
                y: img,
                weight: 1.0,
            },
            shape: ShapeTerm::Off,
        },
        &cfg,
        7,
    )
    .unwrap()
    .phi;
    let straightened = redistance(&drifted).unwrap();
    let before = threshold(&drifted);
    let after = threshold(&straightened);
    assert_eq!(dice(&before, &after).unwrap(), 1.0);
}

#[test]
fn ambiguous_intensities_weaken_the_data_force() {
    let mut mean_abs = [0.0f64; 2];
    for (slot, overlap) in mean_abs.iter_mut().zip([0.0, 0.9]) {
        let ts = generate(&small_spec(overlap, 11)).unwrap();
        let model = build_model_excluding(&ts, Some(0), &BuildConfig::default()).unwrap();
        let f = data_force(&ts.pairs()[0].0, &model, DENSITY_FLOOR).unwrap();
        *slot = f.data().iter().map(|v| v.abs()).sum::<f64>() / f.len() as f64;
    }
    assert!(
        mean_abs[1] < 0.5 * mean_abs[0],
        "overlapping densities should flatten the force: {mean_abs:?}"
    );
}

#[test]
fn two_stage_results_are_internally_consistent() {
    let specs = [
        small_spec(0.3, 21),
        PhantomSpec {
            dims: vec![20, 20, 20],
            n_shapes: 4,
            overlap: 0.3,
            seed: 22,
            ..PhantomSpec::default_2d()
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in specs {
        let ts = generate(&spec).unwrap();
        let model = build_model_excluding(&ts, Some(0), &BuildConfig::default()).unwrap();
        let (img, gt) = &ts.pairs()[0];
        let kind = [MethodKind::Full, MethodKind::DataContext][rng.random_range(0..2)];
        let base = EvolutionConfig {
            w_shape: 10.0,
            ..EvolutionConfig::default()
        };
        let method = baseline_config(kind, &base);
        let run = segment_two_stage(img, &model, None, &method).unwrap();

        assert_eq!(run.mask, threshold(&run.phi));
        assert!(run.iters_stage1 <= base.max_iters_stage1);
        assert!(run.iters_stage2 <= base.max_iters_stage2);
        assert!(!run.energy_trace.is_empty());
        assert_eq!(run.energy_trace[0].0, 0);
        assert_eq!(
            run.energy_trace.last().unwrap().0,
            run.iters_stage1 + run.iters_stage2
        );
        for pair in run.energy_trace.windows(2) {
            assert!(pair[1].0 == pair[0].0 + 1 || pair[1].0 == pair[0].0);
        }
        assert!(dice(&run.mask, gt).unwrap() > 0.0);
        assert!(run.stage1_mask.count_true() > 0);
    }
}
