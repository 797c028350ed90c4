mod common;

use cityproj_core::engine::*;
use cityproj_core::synth::{gen_panel, SynthSpec};

use common::*;
use proptest::prelude::*;

#[test]
fn urban_and_rural_sums_hit_scenario_targets() {
    let (panel, scenario) = conservation_fixture(5);
    let proj = run_projection(&panel, &scenario, &EngineConfig::default()).unwrap();
    assert_eq!(proj.projected_years().len(), 20);
    let gap = conservation_gap(&proj, &scenario);
    assert!(gap < 1e-9, "relative gap {gap:e}");
    for s in &proj.strata {
        assert!((s.urban_sum - s.urban_target).abs() <= 1e-9 * s.urban_target);
        assert!((s.rural_sum - s.rural_target).abs() <= 1e-9 * s.rural_target);
    }
}

#[test]
fn projected_panel_is_non_negative_and_city_tables_match_cells() {
    let (panel, scenario) = conservation_fixture(8);
    let proj = run_projection(&panel, &scenario, &EngineConfig::default()).unwrap();
    for e in 0..proj.panel.n_epochs() {
        assert!(proj.panel.snapshot(e).iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
    for (e, ep) in proj.lineage.epochs().iter().enumerate() {
        for c in &ep.cities {
            let sum: f64 = c.cells.iter().map(|&cell| proj.panel.pop(cell, e)).sum();
            assert!((sum - c.population).abs() <= 1e-9 * sum);
        }
    }
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let (panel, scenario) = conservation_fixture(2);
    let scenario = scenario.head(6);
    let a = run_projection(&panel, &scenario, &EngineConfig::default()).unwrap();
    let b = run_projection(&panel, &scenario, &EngineConfig::default()).unwrap();
    assert_eq!(a.panel.snapshots(), b.panel.snapshots());
    assert_eq!(a.city_forecasts, b.city_forecasts);
    assert_eq!(a.lineage.epochs(), b.lineage.epochs());
}

#[test]
fn declining_country_concentrates_in_fewer_cities() {
    let (panel, scenario) = declining_fixture();
    let proj = run_projection(&panel, &scenario, &EngineConfig::default()).unwrap();
    assert!(proj.fitted.coeff_path.unwrap().a1_b < 0.0);
    let rows = summarize(&proj.panel, &proj.lineage, &DEFAULT_SIZE_THRESHOLDS);
    let future = &rows[proj.n_training - 1..];
    for w in future.windows(2) {
        assert!(w[1].n_cities <= w[0].n_cities, "{} -> {}", w[0].n_cities, w[1].n_cities);
        assert!(w[1].top1_share >= w[0].top1_share);
    }
    assert!(future.last().unwrap().n_cities < future[0].n_cities);
}

#[test]
fn holdout_on_noiseless_loglinear_panel_gets_every_sign() {
    let panel = loglinear_panel();
    let report = validate_holdout(&panel, &EngineConfig::default()).unwrap();
    let full = report.variant(ModelSet::Full).unwrap();
    assert_eq!(full.cities.len(), 6);
    assert_eq!(full.sign_agreement(), 1.0);
    for c in &full.cities {
        assert!((c.predicted - c.actual).abs() < 1e-6 * c.actual, "{c:?}");
    }
}

#[test]
fn holdout_variants_follow_their_definitions() {
    let panel = random_walk_panel(3);
    let config = EngineConfig::default();
    let report = validate_holdout(&panel, &config).unwrap();
    let ts = report.variant(ModelSet::TsOnly).unwrap();
    let pl = report.variant(ModelSet::PlOnly).unwrap();
    assert_ne!(ts.cities, pl.cities);

    let n = panel.n_epochs();
    let train = panel.truncated(n - 1);
    let scenario = Scenario::new("one", vec![panel.years()[n - 1]], vec![panel.total(n - 1)], Some(vec![0.5])).unwrap();
    for models in [ModelSet::TsOnly, ModelSet::PlOnly] {
        let cfg = EngineConfig { models, ..config.clone() };
        let proj = run_projection(&train, &scenario, &cfg).unwrap();
        for f in &proj.city_forecasts {
            match models {
                ModelSet::TsOnly => {
                    assert!(!f.pl.is_informative());
                    assert!((f.combined.mean - f.ts.mean.max(0.0)).abs() <= 1e-12 * f.combined.mean);
                }
                _ => {
                    assert!(!f.ts.is_informative());
                    assert!((f.combined.mean - f.pl.mean.max(0.0)).abs() <= 1e-12 * f.combined.mean);
                }
            }
        }
    }
}

#[test]
fn holdout_needs_four_epochs() {
    let panel = loglinear_panel().truncated(3);
    assert!(validate_holdout(&panel, &EngineConfig::default()).is_err());
}

#[test]
fn summary_of_stationary_run_repeats_rows() {
    let panel = block_panel(2, 4, |_, _| 2000.0);
    let total = panel.total(0);
    let scenario = Scenario::new("flat", vec![2015, 2020, 2025], vec![total; 3], Some(vec![36_000.0 / total; 3])).unwrap();
    let proj = run_projection(&panel, &scenario, &EngineConfig::default()).unwrap();
    let rows = summarize(&proj.panel, &proj.lineage, &DEFAULT_SIZE_THRESHOLDS);
    for w in rows.windows(2) {
        assert_eq!(w[0].n_cities, w[1].n_cities);
        assert!((w[0].top1_share - w[1].top1_share).abs() < 1e-12);
        assert!((w[0].mean_density - w[1].mean_density).abs() < 1e-9);
    }
}

#[test]
fn smoothing_run_still_conserves_mass() {
    let spec = SynthSpec { seed: 4, n_rows: 60, n_cols: 60, n_cities: 8, noise_sd: 0.02, ..SynthSpec::default() };
    let panel = gen_panel(&spec).unwrap().panel;
    let scenario = falling_scenario(&panel, 4, 0.01);
    let cfg = EngineConfig { smoothing: true, nb_fit_mode: NbFitMode::LastEpoch, ..EngineConfig::default() };
    let proj = run_projection(&panel, &scenario, &cfg).unwrap();
    assert!(conservation_gap(&proj, &scenario) < 1e-9);
    assert_eq!(proj.grid_weights.len(), 4);
    for (_, w) in &proj.grid_weights {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn any_seed_conserves_mass(seed in 0u64..10_000) {
        let (panel, scenario) = conservation_fixture(seed);
        let proj = run_projection(&panel, &scenario.head(8), &EngineConfig::default()).unwrap();
        prop_assert!(conservation_gap(&proj, &scenario.head(8)) < 1e-9);
    }
}
