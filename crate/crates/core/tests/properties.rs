use ndarray::Array2;
use proptest::prelude::*;
use sfocc::gibbs::occupancy_conditional;
use sfocc::rngmath::{cholesky, inv_logit, sample_polya_gamma};
use sfocc::RandomStream;

proptest! {
    #[test]
    fn inv_logit_stays_open(eta in -1e6f64..1e6) {
        let p = inv_logit(eta);
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn pg_draws_positive(c in -50.0f64..50.0, seed in any::<u64>()) {
        let mut s = RandomStream::new(seed, 0);
        for _ in 0..20 {
            prop_assert!(sample_polya_gamma(c, &mut s).unwrap().value() > 0.0);
        }
    }

    #[test]
    fn detected_species_are_present(psi in 0.0f64..1.0, pi in prop::collection::vec(0.0f64..1.0, 1..6), hit in 0usize..6) {
        let mut y = vec![0u8; pi.len()];
        y[hit % pi.len()] = 1;
        prop_assert_eq!(occupancy_conditional(psi, &pi, &y), 1.0);
        let y0 = vec![0u8; pi.len()];
        let p = occupancy_conditional(psi, &pi, &y0);
        prop_assert!(p <= psi + 1e-15);
    }

    #[test]
    fn cholesky_reconstructs(vals in prop::collection::vec(-1.0f64..1.0, 16)) {
        let a = Array2::from_shape_vec((4, 4), vals).unwrap();
        let spd = a.dot(&a.t()) + Array2::<f64>::eye(4);
        let l = cholesky(&spd).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(spd.iter()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn substreams_are_reproducible(seed in any::<u64>(), label in any::<u64>()) {
        let base = RandomStream::new(seed, 3);
        let mut a = base.substream(label);
        let mut b = base.substream(label);
        prop_assert_eq!(a.uniform(), b.uniform());
    }
}
