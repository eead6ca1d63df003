use approx::assert_abs_diff_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfocc::spatial::{
    build_nngp_graph, conditional_at_new_site, correlation, covariance_matrix, nngp_factors, nngp_log_density,
};
use sfocc::{CovFamily, CovarianceSpec};

fn random_coords(j: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((j, 2), |_| rng.random::<f64>())
}

fn random_w(j: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    (0..j).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

// dense Cholesky log-density, written independently of the crate
fn dense_logpdf(c: &Array2<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            l[(i, j)] = if i == j { (c[(i, i)] - s).sqrt() } else { (c[(i, j)] - s) / l[(j, j)] };
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (x[i] - (0..i).map(|k| l[(i, k)] * y[k]).sum::<f64>()) / l[(i, i)];
    }
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + y.iter().map(|v| v * v).sum::<f64>())
}

fn nngp_ld(coords: &Array2<f64>, m: usize, spec: &CovarianceSpec, w: &[f64]) -> f64 {
    let g = build_nngp_graph(coords.view(), m).unwrap();
    nngp_log_density(&g.to_graph_order(w), &g, spec).unwrap()
}

#[test]
fn neighbors_are_nearest_predecessors() {
    let coords = random_coords(60, 1);
    let g = build_nngp_graph(coords.view(), 7).unwrap();
    let d = |a: usize, b: usize| {
        ((coords[(a, 0)] - coords[(b, 0)]).powi(2) + (coords[(a, 1)] - coords[(b, 1)]).powi(2)).sqrt()
    };
    for pos in 0..60 {
        let site = g.order()[pos];
        let mut pred: Vec<(f64, usize)> = (0..pos).map(|p| (d(site, g.order()[p]), p)).collect();
        pred.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut want: Vec<usize> = pred.iter().take(7).map(|x| x.1).collect();
        let mut got = g.neighbors(pos).to_vec();
        want.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, want, "position {pos}");
    }
}

#[test]
fn ordering_sorts_by_x_then_y() {
    let coords = random_coords(40, 2);
    let g = build_nngp_graph(coords.view(), 5).unwrap();
    for w in g.order().windows(2) {
        assert!(coords[(w[0], 0)] <= coords[(w[1], 0)]);
    }
}

#[test]
fn exact_at_full_neighbor_sets() {
    for seed in 0..3 {
        let coords = random_coords(50, seed);
        let spec = CovarianceSpec::exponential(4.0, 1.3).unwrap();
        let w = random_w(50, seed);
        let dense = dense_logpdf(&covariance_matrix(coords.view(), &spec), &w);
        assert_abs_diff_eq!(nngp_ld(&coords, 49, &spec, &w), dense, epsilon = 1e-8);
    }
}

#[test]
fn small_m_is_close_for_long_range() {
    let coords = random_coords(50, 3);
    let spec = CovarianceSpec::exponential(3.0, 1.0).unwrap();
    let w = random_w(50, 3);
    let dense = dense_logpdf(&covariance_matrix(coords.view(), &spec), &w);
    let approx = nngp_ld(&coords, 10, &spec, &w);
    assert!(((approx - dense) / dense).abs() < 0.02, "{approx} vs {dense}");
}

#[test]
fn error_shrinks_with_m() {
    for seed in 10..15 {
        let coords = random_coords(50, seed);
        let spec = CovarianceSpec::exponential(6.0, 1.0).unwrap();
        let w = random_w(50, seed);
        let dense = dense_logpdf(&covariance_matrix(coords.view(), &spec), &w);
        let errs: Vec<f64> = [1, 3, 6, 12, 24, 49]
            .iter()
            .map(|&m| (nngp_ld(&coords, m, &spec, &w) - dense).abs())
            .collect();
        assert!(errs[5] < 1e-8, "seed {seed}: {errs:?}");
        assert!(errs[0] >= errs[5] && errs[2] >= errs[5], "seed {seed}: {errs:?}");
    }
}

#[test]
fn conditional_variances_positive_for_all_families() {
    let coords = random_coords(80, 4);
    let g = build_nngp_graph(coords.view(), 15).unwrap();
    for spec in [
        CovarianceSpec::new(CovFamily::Exponential, 2.0, 1.0, None).unwrap(),
        CovarianceSpec::new(CovFamily::Gaussian, 1.5, 0.7, None).unwrap(),
        CovarianceSpec::new(CovFamily::Spherical, 1.2, 2.0, None).unwrap(),
        CovarianceSpec::new(CovFamily::Matern, 3.0, 1.0, Some(1.5)).unwrap(),
    ] {
        let f = nngp_factors(&g, &spec).unwrap();
        for pos in 0..80 {
            assert!(f.variance(pos) > 0.0);
        }
    }
}

#[test]
fn correlation_non_increasing() {
    for spec in [
        CovarianceSpec::new(CovFamily::Exponential, 2.0, 1.0, None).unwrap(),
        CovarianceSpec::new(CovFamily::Gaussian, 2.0, 1.0, None).unwrap(),
        CovarianceSpec::new(CovFamily::Spherical, 2.0, 1.0, None).unwrap(),
    ] {
        let mut prev = 1.0;
        for k in 0..200 {
            let c = correlation(&spec, k as f64 * 0.01).unwrap();
            assert!(c <= prev + 1e-15);
            prev = c;
        }
    }
}

#[test]
fn kriging_matches_dense_at_full_neighbor_sets() {
    let coords = random_coords(20, 5);
    let g = build_nngp_graph(coords.view(), 19).unwrap();
    let spec = CovarianceSpec::exponential(5.0, 1.4).unwrap();
    let w = random_w(20, 5);
    // with m = J - 1 a new site conditions on 19 of the 20 sites; the oracle
    // uses the same nearest set
    let p = [0.47, 0.52];
    let mut idx: Vec<usize> = (0..20).collect();
    let d2 = |s: usize| (coords[(s, 0)] - p[0]).powi(2) + (coords[(s, 1)] - p[1]).powi(2);
    idx.sort_by(|&a, &b| d2(a).total_cmp(&d2(b)));
    idx.truncate(19);
    let sub = coords.select(ndarray::Axis(0), &idx);
    let c = covariance_matrix(sub.view(), &spec);
    let c0: Vec<f64> = idx.iter().map(|&s| 1.4 * (-5.0 * d2(s).sqrt()).exp()).collect();
    // solve by Gauss-Jordan
    let n = 19;
    let mut a = c.clone();
    let mut b = c0.clone();
    for col in 0..n {
        let piv = a[(col, col)];
        for k in 0..n {
            a[(col, k)] /= piv;
        }
        b[col] /= piv;
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                for k in 0..n {
                    a[(r, k)] -= f * a[(col, k)];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mean: f64 = idx.iter().zip(&b).map(|(&s, x)| x * w[s]).sum();
    let var = 1.4 - b.iter().zip(&c0).map(|(x, y)| x * y).sum::<f64>();
    let (m, v) = conditional_at_new_site(&g, &spec, p, &w).unwrap();
    assert_abs_diff_eq!(m, mean, epsilon = 1e-8);
    assert_abs_diff_eq!(v, var, epsilon = 1e-8);
}
