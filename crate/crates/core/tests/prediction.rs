use ndarray::{s, Array2};
use sfocc::predict::{predict_occurrence, richness, PredictionGrid};
use sfocc::simulate::simulate_scenario;
use sfocc::{run_model, McmcConfig, ModelSpec, Variant};

#[test]
fn training_sites_reproduce_fitted_occupancy() {
    let (data, _) = simulate_scenario(6, 12).unwrap();
    let fit = run_model(
        &ModelSpec::new(Variant::SfMsPgOcc).with_q(2),
        &data,
        &McmcConfig::new(1, 40, 20, 2, 12),
    )
    .unwrap();
    let grid = PredictionGrid::new(data.coords.clone(), data.x_occ.clone()).unwrap();
    let pred = predict_occurrence(&fit, &grid, None, 1).unwrap();
    let psi = &fit.chains[0].psi;
    for d in 0..psi.dim().0 {
        for i in 0..fit.n_species() {
            for j in 0..fit.n_sites() {
                assert!((pred.psi[(d, i, j)] - psi[(d, i, j)]).abs() < 1e-12);
            }
        }
    }
    let r = richness(&pred.z, &(0..fit.n_species()).collect::<Vec<_>>()).unwrap();
    assert_eq!(r.mean.len(), fit.n_sites());
}

#[test]
fn large_covariate_shift_saturates() {
    let (data, _) = simulate_scenario(3, 5).unwrap();
    let fit = run_model(&ModelSpec::new(Variant::MsPgOcc), &data, &McmcConfig::new(1, 300, 150, 1, 5)).unwrap();
    let beta = fit.chains[0].beta.slice(s![.., 0, 1]).to_owned();
    let sign = if beta.mean().unwrap() > 0.0 { 1.0 } else { -1.0 };
    let mut x = Array2::zeros((1, data.p_occ()));
    x[(0, 0)] = 1.0;
    x[(0, 1)] = 20.0 * sign;
    let grid = PredictionGrid::new(Array2::from_elem((1, 2), 0.5), x).unwrap();
    let pred = predict_occurrence(&fit, &grid, None, 2).unwrap();
    let mean = pred.psi.slice(s![.., 0, 0]).mean().unwrap();
    assert!(mean > 0.95, "{mean}");
}

#[test]
fn nonspatial_factors_draw_from_prior_at_new_sites() {
    let (data, _) = simulate_scenario(5, 8).unwrap();
    let fit = run_model(
        &ModelSpec::new(Variant::LfMsPgOcc).with_q(2),
        &data,
        &McmcConfig::new(1, 60, 30, 1, 8),
    )
    .unwrap();
    let far = Array2::from_shape_fn((50, 2), |(t, c)| 5.0 + t as f64 * 0.1 + c as f64);
    let mut x = Array2::zeros((50, data.p_occ()));
    x.column_mut(0).fill(1.0);
    let pred = predict_occurrence(&fit, &PredictionGrid::new(far, x).unwrap(), None, 3).unwrap();
    // identical covariates, so spread across sites comes only from the factors
    let spread = pred.psi.slice(s![0, 0, ..]).std(1.0);
    assert!(spread > 0.0);
}

#[test]
fn prediction_is_seed_deterministic() {
    let (data, _) = simulate_scenario(4, 2).unwrap();
    let fit = run_model(&ModelSpec::new(Variant::SpMsPgOcc).with_m(6), &data, &McmcConfig::new(1, 30, 10, 1, 2)).unwrap();
    let grid = PredictionGrid::new(Array2::from_shape_fn((4, 2), |(t, c)| 0.2 * t as f64 + 0.05 * c as f64), Array2::ones((4, data.p_occ()))).unwrap();
    assert_eq!(
        predict_occurrence(&fit, &grid, None, 7).unwrap(),
        predict_occurrence(&fit, &grid, None, 7).unwrap()
    );
}
