use ndarray::Array3;
use sfocc::diagnostics::{factor_pruning_report, summarize};
use sfocc::simulate::{simulate_custom, simulate_scenario, CoefSpec, CustomConfig, DetectionSpec, LatentSpec, SiteLayout};
use sfocc::{run_model, validate, McmcConfig, ModelSpec, Variant};

fn small_config(latent: LatentSpec) -> CustomConfig {
    CustomConfig {
        n_species: 4,
        sites: SiteLayout::Grid { side: 6 },
        replicates: 3,
        replicates_per_site: None,
        occurrence: CoefSpec::Community {
            mean: vec![0.3, 0.5],
            var: vec![1.0, 0.5],
        },
        detection: DetectionSpec::Constant { p: 0.6 },
        latent,
    }
}

#[test]
fn identical_seeds_give_identical_samples() {
    let (data, _) = simulate_scenario(6, 3).unwrap();
    let spec = ModelSpec::new(Variant::SfMsPgOcc).with_q(2);
    let mcmc = McmcConfig::new(2, 60, 20, 2, 9);
    let a = run_model(&spec, &data, &mcmc).unwrap();
    let b = run_model(&spec, &data, &mcmc).unwrap();
    assert_eq!(a, b);
    let c = run_model(&spec, &data, &McmcConfig::new(2, 60, 20, 2, 10)).unwrap();
    assert_ne!(a.chains[0].beta, c.chains[0].beta);
}

#[test]
fn jsdm_samples_have_no_detection_blocks() {
    let (data, _) = simulate_custom(&small_config(LatentSpec::None), 1).unwrap();
    let fit = run_model(&ModelSpec::new(Variant::LfJsdm).with_q(1), &data, &McmcConfig::new(1, 30, 10, 1, 1)).unwrap();
    let ch = &fit.chains[0];
    assert!(ch.alpha.is_none() && ch.z.is_none() && ch.phi.is_none());
    assert!(fit.z_mean.is_none());
    assert_eq!(ch.n_draws(), 20);
}

#[test]
fn saturated_detections_give_high_occupancy() {
    let (mut data, _) = simulate_custom(
        &CustomConfig {
            replicates: 5,
            ..small_config(LatentSpec::None)
        },
        2,
    )
    .unwrap();
    data.y = Array3::from_elem(data.y.dim(), Some(1));
    let fit = run_model(&ModelSpec::new(Variant::MsPgOcc), &data, &McmcConfig::new(1, 400, 200, 1, 2)).unwrap();
    let psi = fit.psi_mean();
    assert!(psi.iter().all(|&p| p > 0.9), "{psi:?}");
}

#[test]
fn retained_draw_count() {
    let (data, _) = simulate_custom(&small_config(LatentSpec::None), 3).unwrap();
    let fit = run_model(&ModelSpec::new(Variant::MsPgOcc), &data, &McmcConfig::new(3, 100, 40, 5, 3)).unwrap();
    assert_eq!(fit.total_draws(), 3 * 12);
}

#[test]
fn config_errors_before_sampling() {
    assert!(McmcConfig::new(1, 100, 100, 1, 0).check().is_err());
    assert!(McmcConfig::new(1, 100, 10, 0, 0).check().is_err());
    let (data, _) = simulate_custom(&small_config(LatentSpec::None), 4).unwrap();
    let too_many = ModelSpec::new(Variant::LfMsPgOcc).with_q(5);
    assert!(!validate(&data, &too_many).is_ok());
    assert!(run_model(&too_many, &data, &McmcConfig::new(1, 10, 5, 1, 0)).is_err());
}

#[test]
fn every_variant_runs_and_summarizes() {
    let (data, _) = simulate_custom(
        &small_config(LatentSpec::Factor {
            q: 1,
            loadings: None,
            spatial: None,
        }),
        5,
    )
    .unwrap();
    for v in Variant::ALL {
        let mut spec = ModelSpec::new(v);
        if v.is_factor() {
            spec = spec.with_q(2);
        }
        if v.is_spatial() {
            spec = spec.with_m(5);
        }
        let fit = run_model(&spec, &data, &McmcConfig::new(2, 80, 40, 2, 5)).unwrap();
        let rows = summarize(&fit).unwrap();
        assert!(rows.iter().all(|r| r.mean.is_finite()), "{v:?}");
        if v.is_factor() {
            assert_eq!(factor_pruning_report(&fit, 0.1).unwrap().len(), 2);
        }
    }
}
