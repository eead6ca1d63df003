use sfocc::io::{read_posterior, read_survey, write_posterior, write_survey, DataFiles};
use sfocc::simulate::{simulate_custom, simulate_scenario, CoefSpec, CustomConfig, DetectionSpec, LatentSpec, SiteLayout};
use sfocc::{run_model, McmcConfig, ModelSpec, Variant};

#[test]
fn survey_round_trip_with_missing_replicates() {
    let cfg = CustomConfig {
        n_species: 3,
        sites: SiteLayout::Random { n: 9 },
        replicates: 4,
        replicates_per_site: Some(vec![1, 2, 3, 4, 4, 3, 2, 1, 4]),
        occurrence: CoefSpec::Community {
            mean: vec![0.0, 1.0, -1.0],
            var: vec![1.0, 1.0, 1.0],
        },
        detection: DetectionSpec::Covariates(CoefSpec::Community {
            mean: vec![0.0, 0.5],
            var: vec![0.5, 0.5],
        }),
        latent: LatentSpec::None,
    };
    let (data, _) = simulate_custom(&cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_survey(&data, dir.path()).unwrap();
    assert_eq!(files, DataFiles::in_dir(dir.path()));
    let back = read_survey(&files).unwrap();
    assert_eq!(back.y, data.y);
    assert_eq!(back.coords, data.coords);
    assert_eq!(back.x_occ, data.x_occ);
    // unobserved replicates carry NaN covariates on both sides
    assert!(back
        .v_det
        .iter()
        .zip(data.v_det.iter())
        .all(|(a, b)| a == b || (a.is_nan() && b.is_nan())));
    assert_eq!(back.k, data.k);
    assert_eq!(back.species_names, data.species_names);
    assert_eq!(back.site_names, data.site_names);
    assert_eq!(back.det_covariate_names, data.det_covariate_names);
    assert_eq!(back.digest(), data.digest());
}

#[test]
fn posterior_round_trip_is_exact() {
    let (data, _) = simulate_scenario(2, 4).unwrap();
    let fit = run_model(
        &ModelSpec::new(Variant::SfMsPgOcc).with_q(2).with_m(8),
        &data,
        &McmcConfig::new(2, 40, 20, 2, 4),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_posterior(&fit, dir.path()).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let back = read_posterior(dir.path()).unwrap();
    assert_eq!(back.chains.len(), fit.chains.len());
    for (a, b) in back.chains.iter().zip(&fit.chains) {
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.w, b.w);
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.psi, b.psi);
    }
    assert_eq!(back.z_mean, fit.z_mean);
    assert_eq!(back.data_digest, fit.data_digest);
}

#[test]
fn malformed_detections_are_reported() {
    let (data, _) = simulate_scenario(3, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_survey(&data, dir.path()).unwrap();
    let text = std::fs::read_to_string(&files.detections).unwrap();
    let broken = text.replacen(",0\n", ",7\n", 1);
    std::fs::write(&files.detections, broken).unwrap();
    let err = read_survey(&files).unwrap_err().to_string();
    assert!(err.contains("detections"), "{err}");
}
