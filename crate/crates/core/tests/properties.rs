use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgw_vp::data::zscore;
use rgw_vp::rgw::build_wavelet_matrix;
use rgw_vp::vp::{decompose, pseudoinverse};
use rgw_vp::{EtaVector, Mother, MotherKind, MotherShape, SampleGrid, Wavelet};

fn shape(seed: u64, p: usize, n: usize) -> MotherShape {
    MotherShape::random(&mut ChaCha8Rng::seed_from_u64(seed), p, n)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wavelet_has_unit_energy_and_is_odd(seed in any::<u64>(), p in 0usize..6, n in 1usize..5) {
        let w = Wavelet::new(Mother::Rational(shape(seed, p, n))).unwrap();
        let grid = SampleGrid::normalization();
        let energy: f64 = grid.points().map(|t| w.value(t).powi(2)).sum::<f64>() * grid.step();
        prop_assert!((energy - 1.0).abs() < 1e-12);
        for t in [0.1, 0.7, 1.9, 3.3] {
            prop_assert!((w.value(t) + w.value(-t)).abs() <= 1e-12 * w.value(t).abs().max(1e-300));
        }
    }

    #[test]
    fn norm_constant_is_positive(seed in any::<u64>(), p in 0usize..11, n in 0usize..5) {
        let w = Wavelet::new(Mother::Rational(shape(seed, p, n))).unwrap();
        prop_assert!(w.norm() > 0.0 && w.norm().is_finite());
    }

    #[test]
    fn dilation_commutes_with_translation(
        seed in any::<u64>(),
        lambda in 0.05f64..2.0,
        tau in -1.0f64..3.0,
        t in -2.0f64..4.0,
    ) {
        let w = Wavelet::new(Mother::Rational(shape(seed, 3, 2))).unwrap();
        let a = w.dilated(lambda, tau, t);
        let b = w.dilated(lambda, 0.0, t - tau);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        let c = w.dilated(1.0, 0.0, (t - tau) / lambda) / lambda.sqrt();
        prop_assert!((a - c).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn pseudoinverse_satisfies_penrose_identities(seed in any::<u64>(), m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = EtaVector::random(&mut rng, m, MotherKind::Rational, 3, 2);
        let grid = SampleGrid::signal_domain(80).unwrap();
        let psi = build_wavelet_matrix(&eta, &grid).unwrap().into_matrix();
        let pinv = pseudoinverse(&psi).unwrap();
        let scale = max_abs(&psi) * max_abs(&pinv);
        prop_assert!(max_abs(&(&psi * &pinv * &psi - &psi)) <= 1e-8 * scale * max_abs(&psi));
        prop_assert!(max_abs(&(&pinv * &psi * &pinv - &pinv)) <= 1e-8 * scale * max_abs(&pinv));
        let pp = &psi * &pinv;
        prop_assert!(max_abs(&(&pp - pp.transpose())) <= 1e-8 * scale);
        let qp = &pinv * &psi;
        prop_assert!(max_abs(&(&qp - qp.transpose())) <= 1e-8 * scale);
    }

    #[test]
    fn residual_is_orthogonal_to_columns(seed in any::<u64>(), m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = EtaVector::random(&mut rng, m, MotherKind::Rational, 3, 2);
        let grid = SampleGrid::signal_domain(100).unwrap();
        let psi = build_wavelet_matrix(&eta, &grid).unwrap().into_matrix();
        let f: Vec<f64> = grid.points().map(|t| (3.0 * t).sin() + t * t).collect();
        let d = decompose(&psi, &f).unwrap();
        let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let inner = psi.transpose() * &d.residual;
        prop_assert!(inner.amax() <= 1e-9 * fnorm * max_abs(&psi) * (grid.len() as f64).sqrt());
        prop_assert!(d.residual_energy <= fnorm * fnorm * (1.0 + 1e-12));
    }

    #[test]
    fn zscore_is_idempotent(samples in prop::collection::vec(-50.0f64..50.0, 2..200)) {
        if let Some(z) = zscore(&samples) {
            let zz = zscore(&z).unwrap();
            for (a, b) in z.iter().zip(&zz) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn flat_layout_round_trips(seed in any::<u64>(), m in 1usize..6, p in 0usize..4, n in 0usize..4) {
        let eta = EtaVector::random(&mut ChaCha8Rng::seed_from_u64(seed), m, MotherKind::Rational, p, n);
        let flat = eta.to_flat();
        prop_assert_eq!(flat.len(), eta.dim());
        prop_assert_eq!(eta.with_flat(&flat).unwrap().to_flat(), flat);
    }
}
