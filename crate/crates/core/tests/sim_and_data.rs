use proptest::prelude::*;
use thermocline::data::{
    build_features, load_drivers, sample_observations, save_drivers, FeatureSpec, ObservationSet, Source,
};
use thermocline::physics::ec_loss;
use thermocline::sim::{freeze_up, make_geometry, simulate, synth_drivers, Climate, Shape, SimConfig};

#[test]
fn simulated_temperatures_stay_physical_in_both_climates() {
    let geometry = make_geometry(Shape::Cone, 1e7, 10.0).unwrap();
    for climate in [Climate::Temperate, Climate::Warm] {
        let drivers = synth_drivers(climate, 2, 11).unwrap();
        for cfg in [SimConfig::default(), SimConfig::default().truth()] {
            let out = simulate(&drivers, &geometry, &cfg).unwrap();
            assert!(out.field.values().iter().all(|t| (0.0..=40.0).contains(t)), "{climate:?}");
            let ec = ec_loss(&out.budget.residuals(), &out.budget.residual_mask(), 24.0).unwrap();
            assert_eq!(ec.value, 0.0);
            assert!(out.budget.max_abs_ice_free_residual() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Ice forms only inside the driver's ice season, holds until that
    /// season ends, and the open water never cools past the freeze point.
    #[test]
    fn freeze_up_follows_the_lake(
        seed in 0u64..1000,
        half_metres in 4u32..40,
        shape in prop::sample::select(vec![Shape::Cone, Shape::Barrel, Shape::Martini]),
        truth in any::<bool>(),
    ) {
        let geometry = make_geometry(shape, 5e6, 0.5 * half_metres as f64).unwrap();
        let cfg = if truth { SimConfig::default().truth() } else { SimConfig::default() };
        let season = synth_drivers(Climate::Temperate, 2, seed).unwrap();
        let drivers = freeze_up(&season, &geometry, &cfg).unwrap();
        let (s, d) = (season.days(), drivers.days());
        prop_assert!(d.iter().filter(|x| x.frozen).count() > 30);
        for t in 0..d.len() {
            prop_assert!(!d[t].frozen || s[t].frozen, "day {} iced outside the season", t);
            if t > 0 && d[t - 1].frozen && s[t].frozen {
                prop_assert!(d[t].frozen, "day {} thawed early", t);
            }
        }
        let out = simulate(&drivers, &geometry, &cfg).unwrap();
        prop_assert!(out.budget.max_abs_ice_free_residual() < 1e-6);
        for t in 1..d.len() {
            if s[t - 1].frozen && !d[t - 1].frozen {
                prop_assert!(out.field.get(0, t) > cfg.freeze_temp, "open day {} ended at {}", t - 1, out.field.get(0, t));
            }
        }
        prop_assert!(out.field.values().iter().all(|t| (0.0..=40.0).contains(t)));
    }
}

#[test]
fn simulation_is_bit_reproducible() {
    let geometry = make_geometry(Shape::Barrel, 5e6, 6.0).unwrap();
    let drivers = synth_drivers(Climate::Temperate, 1, 3).unwrap();
    let a = simulate(&drivers, &geometry, &SimConfig::default()).unwrap();
    let b = simulate(&drivers, &geometry, &SimConfig::default()).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.field.values()), bits(b.field.values()));
}

#[test]
fn test_period_features_reuse_training_statistics() {
    let geometry = make_geometry(Shape::Cone, 1e6, 3.0).unwrap();
    let drivers = synth_drivers(Climate::Temperate, 2, 5).unwrap();
    let spec = FeatureSpec::default();
    let train = build_features(&drivers, &geometry, &spec, None, &[0..365]).unwrap();
    let test = build_features(&drivers.window(365, 730), &geometry, &spec, Some(&train.stats), &[]).unwrap();
    assert_eq!(test.stats, train.stats);
    // same day, same standardized inputs, whichever window it was built from
    assert_eq!(train.at(400, 2), test.at(35, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn drivers_survive_a_csv_round_trip(seed in 0u64..1000, warm in any::<bool>()) {
        let climate = if warm { Climate::Warm } else { Climate::Temperate };
        let drivers = synth_drivers(climate, 1, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drivers.csv");
        save_drivers(&drivers, &path).unwrap();
        prop_assert_eq!(load_drivers(&path).unwrap(), drivers);
    }

    /// Two independent draws at rate p keep about p² of the cells.
    #[test]
    fn independent_samples_overlap_at_p_squared(p in 0.05f64..0.9, s1 in 0u64..1000, s2 in 1000u64..2000) {
        let geometry = make_geometry(Shape::Cone, 1e6, 5.0).unwrap();
        let drivers = synth_drivers(Climate::Temperate, 1, 9).unwrap();
        let field = simulate(&drivers, &geometry, &SimConfig::default()).unwrap().field;
        let all = ObservationSet::from_field(&field, Source::Synthetic);
        let a = sample_observations(&all, p, s1, |_| true).unwrap();
        let b = sample_observations(&all, p, s2, |_| true).unwrap();
        let both = a.iter().filter(|o| b.iter().any(|q| q.depth == o.depth && q.time == o.time)).count() as f64;
        let n = all.len() as f64;
        let q = p * p;
        let sigma = (n * q * (1.0 - q)).sqrt();
        prop_assert!((both - n * q).abs() <= 4.0 * sigma, "{} vs {}", both, n * q);
    }
}
