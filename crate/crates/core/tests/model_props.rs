//! Loss and model properties on small random lakes.

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermocline::data::{DailyMeteo, MeteoSeries, Observation, ObservationSet, Source, TemperatureField};
use thermocline::grad::{Tape, Tensor};
use thermocline::model::{
    forward_batch, forward_tape, lstm_cell_step, rmse_tape, rmse_values, ModelParams, OutputScale, TapeParams, FORGET, INPUT,
};
use thermocline::physics::{ec_loss, ec_loss_tape, energy_budget, energy_residuals_tape, PhysicsConstants, SurfaceForcing};
use thermocline::sim::{LakeGeometry, Shape};

struct Case {
    features: Vec<f64>,
    n_depths: usize,
    n_days: usize,
    params: ModelParams,
    obs: ObservationSet,
    drivers: MeteoSeries,
    geometry: LakeGeometry,
}

fn case(seed: u64, n_depths: usize, n_days: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = 3;
    let features = (0..n_days * n_depths * n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut params = ModelParams::init(n_in, 4, seed).unwrap();
    params.output = OutputScale { mean: 14.0, std: 4.0 };
    let areas = (0..n_depths).map(|d| 2e4 * (1.0 - 0.25 * d as f64)).collect();
    let start = NaiveDate::from_ymd_opt(2010, 7, 1).unwrap();
    let days = (0..n_days)
        .map(|t| DailyMeteo {
            date: start + chrono::Days::new(t as u64),
            shortwave: rng.gen_range(100.0..300.0),
            longwave: rng.gen_range(280.0..340.0),
            air_temp: rng.gen_range(10.0..25.0),
            rel_humidity: rng.gen_range(40.0..90.0),
            wind: rng.gen_range(1.0..6.0),
            rain: 0.0,
            frozen: false,
            snowing: false,
            pressure: 1010.0,
        })
        .collect();
    let mut cells = Vec::new();
    for t in 0..n_days {
        for d in 0..n_depths {
            if rng.gen_bool(0.7) {
                cells.push(Observation { depth: d, time: t, temp: rng.gen_range(5.0..25.0) });
            }
        }
    }
    if cells.is_empty() {
        cells.push(Observation { depth: 0, time: 0, temp: 10.0 });
    }
    Case {
        features,
        n_depths,
        n_days,
        params,
        obs: ObservationSet::new(cells, Source::Synthetic).unwrap(),
        drivers: MeteoSeries::new(days).unwrap(),
        geometry: LakeGeometry::from_areas(Shape::Measured, areas).unwrap(),
    }
}

fn plain_loss(c: &Case, p: &ModelParams, lambda: f64, tau: f64) -> f64 {
    let pred = forward_batch(&c.features, c.n_depths, p).unwrap();
    let rmse = rmse_values(&pred, c.n_days, &c.obs).unwrap();
    let field = TemperatureField::new(c.geometry.depths(), c.drivers.dates(), pred).unwrap();
    let b = energy_budget(&field, &c.drivers, &c.geometry, &PhysicsConstants::default()).unwrap();
    rmse + lambda * ec_loss(&b.residuals(), &b.residual_mask(), tau).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every LSTM weight through the combined loss, tape against finite differences.
    #[test]
    fn combined_loss_gradient_matches_finite_differences(seed in 0u64..10_000, tau in 0.0f64..5.0) {
        let c = case(seed, 2, 10);
        let lambda = 0.05;
        let consts = PhysicsConstants::default();
        let forcing = SurfaceForcing::series(&c.drivers, &consts).unwrap();
        let tape = Tape::new();
        let tp = TapeParams::new(&tape, &c.params).unwrap();
        let pred = forward_tape(&tape, &tp, &c.features, c.n_depths).unwrap();
        let r = energy_residuals_tape(&tape, pred, &forcing, &c.geometry, &consts).unwrap();
        let ec = ec_loss_tape(r, &vec![true; c.n_days - 1], tau).unwrap().unwrap();
        let loss = rmse_tape(&tape, pred, &c.obs).unwrap() + ec * lambda;
        prop_assert!((loss.item() - plain_loss(&c, &c.params, lambda, tau)).abs() < 1e-9);
        tape.backward(loss).unwrap();
        let grads = tp.grads(&tape);
        let h = 1e-5;
        for (k, g) in grads.iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = c.params.clone();
                plus.tensors_mut()[k].data_mut()[j] += h;
                let mut minus = c.params.clone();
                minus.tensors_mut()[k].data_mut()[j] -= h;
                let numeric = (plain_loss(&c, &plus, lambda, tau) - plain_loss(&c, &minus, lambda, tau)) / (2.0 * h);
                let a = g.data()[j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                prop_assert!(err < 1e-4, "tensor {} entry {}: tape {} vs numeric {}", k, j, a, numeric);
            }
        }
    }

    /// Residuals computed on the tape equal the plain energy budget.
    #[test]
    fn tape_residuals_match_budget(seed in 0u64..10_000) {
        let c = case(seed, 3, 4);
        let consts = PhysicsConstants::default();
        let forcing = SurfaceForcing::series(&c.drivers, &consts).unwrap();
        let tape = Tape::new();
        let tp = TapeParams::new(&tape, &c.params).unwrap();
        let pred = forward_tape(&tape, &tp, &c.features, c.n_depths).unwrap();
        let r = energy_residuals_tape(&tape, pred, &forcing, &c.geometry, &consts).unwrap().value();
        let field = TemperatureField::new(c.geometry.depths(), c.drivers.dates(), pred.value().into_data()).unwrap();
        let budget = energy_budget(&field, &c.drivers, &c.geometry, &consts).unwrap();
        let plain = budget.residuals();
        prop_assert_eq!(r.len(), plain.len());
        for (a, b) in r.data().iter().zip(&plain) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    /// RMSE is a mean over cells, so observation order cannot matter.
    #[test]
    fn rmse_ignores_observation_order(seed in 0u64..10_000) {
        let c = case(seed, 3, 8);
        let pred = forward_batch(&c.features, c.n_depths, &c.params).unwrap();
        let mut shuffled = c.obs.as_slice().to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        let other = ObservationSet::new(shuffled, Source::Synthetic).unwrap();
        let a = rmse_values(&pred, c.n_days, &c.obs).unwrap();
        let b = rmse_values(&pred, c.n_days, &other).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    /// Penalty gradient with respect to the temperatures themselves.
    #[test]
    fn penalty_gradient_on_field_matches_finite_differences(seed in 0u64..10_000, tau in 0.0f64..3.0) {
        let c = case(seed, 3, 4);
        let consts = PhysicsConstants::default();
        let forcing = SurfaceForcing::series(&c.drivers, &consts).unwrap();
        let temps = forward_batch(&c.features, c.n_depths, &c.params).unwrap();
        let mask = vec![true; c.n_days - 1];
        let plain = |v: &[f64]| {
            let field = TemperatureField::new(c.geometry.depths(), c.drivers.dates(), v.to_vec()).unwrap();
            let b = energy_budget(&field, &c.drivers, &c.geometry, &consts).unwrap();
            ec_loss(&b.residuals(), &b.residual_mask(), tau).unwrap().value
        };
        let tape = Tape::new();
        let field = tape.param(Tensor::matrix(c.n_depths, c.n_days, temps.clone()));
        let r = energy_residuals_tape(&tape, field, &forcing, &c.geometry, &consts).unwrap();
        let loss = ec_loss_tape(r, &mask, tau).unwrap().unwrap();
        prop_assert!((loss.item() - plain(&temps)).abs() <= 1e-9 * loss.item().max(1.0));
        tape.backward(loss).unwrap();
        let g = tape.grad_or_zeros(field);
        let h = 1e-6;
        for i in 0..temps.len() {
            let mut p = temps.clone();
            let mut m = temps.clone();
            p[i] += h;
            m[i] -= h;
            let numeric = (plain(&p) - plain(&m)) / (2.0 * h);
            let a = g.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            prop_assert!(err < 1e-4, "cell {}: tape {} vs numeric {}", i, a, numeric);
        }
    }

    /// An open forget gate with a closed input gate keeps the cell state.
    #[test]
    fn saturated_forget_gate_holds_memory(seed in 0u64..10_000, c0 in prop::collection::vec(-2.0f64..2.0, 4)) {
        let mut params = ModelParams::init(3, 4, seed).unwrap();
        params.b[FORGET].data_mut().iter_mut().for_each(|b| *b = 40.0);
        params.b[INPUT].data_mut().iter_mut().for_each(|b| *b = -40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut h, mut c) = (vec![0.0; 4], c0.clone());
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (h, c) = lstm_cell_step(&x, &h, &c, &params).unwrap();
        }
        for (a, b) in c.iter().zip(&c0) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    /// Changing the inputs of day `t0` leaves every earlier prediction untouched.
    #[test]
    fn predictions_are_causal(seed in 0u64..10_000, t0 in 1usize..8, bump in 0.1f64..5.0) {
        let c = case(seed, 2, 8);
        let before = forward_batch(&c.features, c.n_depths, &c.params).unwrap();
        let mut features = c.features.clone();
        let block = c.n_depths * c.params.input_size;
        features[t0 * block..].iter_mut().for_each(|x| *x += bump);
        let after = forward_batch(&features, c.n_depths, &c.params).unwrap();
        for d in 0..c.n_depths {
            for t in 0..c.n_days {
                let (a, b) = (before[d * c.n_days + t], after[d * c.n_days + t]);
                if t < t0 {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
        prop_assert!(before != after);
    }
}
