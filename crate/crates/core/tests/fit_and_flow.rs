use proptest::prelude::*;
use ticketlab_core::rgflow::{eigenvalue_sequence, magnitude_shares, sigma_exponents};
use ticketlab_core::scaling::{fit_power_law, segment_regimes};

fn curve() -> impl Strategy<Value = (Vec<(f64, f64)>, f64, f64)> {
    (0.1f64..5.0, 0.01f64..3.0, 5usize..40, -0.05f64..0.05).prop_map(|(gamma, c, n, jitter)| {
        let pts = (0..n)
            .map(|i| {
                let d = 0.95f64.powi(i as i32);
                let wobble = 1.0 + jitter * ((i * 7 % 5) as f64 - 2.0);
                (d, c * d.powf(-gamma) * wobble)
            })
            .collect();
        (pts, gamma, c)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fit_ignores_point_order((pts, _, _) in curve(), rot in 0usize..40) {
        let a = fit_power_law(&pts, None).unwrap();
        let mut shuffled = pts.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let b = fit_power_law(&shuffled, None).unwrap();
        prop_assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
        prop_assert_eq!(a.c.to_bits(), b.c.to_bits());
    }

    #[test]
    fn fit_is_scale_covariant((pts, _, _) in curve(), a in 0.001f64..1000.0) {
        let base = fit_power_law(&pts, None).unwrap();
        let scaled: Vec<_> = pts.iter().map(|&(d, e)| (d, a * e)).collect();
        let fit = fit_power_law(&scaled, None).unwrap();
        prop_assert!((fit.gamma - base.gamma).abs() < 1e-9);
        prop_assert!((fit.c / (a * base.c) - 1.0).abs() < 1e-9);
        prop_assert!((fit.r_squared - base.r_squared).abs() < 1e-9);
    }

    #[test]
    fn exact_power_laws_are_recovered(gamma in 0.1f64..12.0, c in 1e-3f64..10.0, n in 3usize..60) {
        let pts: Vec<_> = (0..n).map(|i| { let d = 1.0 - 0.9 * i as f64 / n as f64; (d, c * d.powf(-gamma)) }).collect();
        let fit = fit_power_law(&pts, None).unwrap();
        prop_assert!((fit.gamma - gamma).abs() < 1e-8);
        prop_assert!((fit.c / c - 1.0).abs() < 1e-8);
    }

    #[test]
    fn regimes_partition_the_curve((pts, _, _) in curve(), tol in 0.1f64..3.0) {
        let seg = segment_regimes(&pts, tol).unwrap();
        prop_assert_eq!(seg.low.start, 0);
        prop_assert_eq!(seg.low.end, seg.power_law.start);
        prop_assert_eq!(seg.power_law.end, seg.high.start);
        prop_assert_eq!(seg.high.end, pts.len());
    }

    #[test]
    fn shares_are_normalized(sums in prop::collection::vec(0.0f64..100.0, 1..6)) {
        prop_assume!(sums.iter().sum::<f64>() > 0.0);
        let m = magnitude_shares(&sums).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(m.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn eigenvalues_telescope(flow in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 2..30)) {
        let flow: Vec<Vec<f64>> = flow.into_iter().map(|s| magnitude_shares(&s).unwrap()).collect();
        let lambdas = eigenvalue_sequence(&flow).unwrap();
        for i in 0..3 {
            let product: f64 = lambdas.iter().map(|row| row[i].unwrap()).product();
            let ratio = flow[flow.len() - 1][i] / flow[0][i];
            prop_assert!((product / ratio - 1.0).abs() < 1e-9);
        }
        // Constant coarse-graining: the mean exponent is the end-to-end one.
        let l = 1.0 / 0.95;
        let scales = vec![l; lambdas.len()];
        let report = sigma_exponents(&lambdas, &scales, &vec![true; lambdas.len()]).unwrap();
        for i in 0..3 {
            let end_to_end = (flow[flow.len() - 1][i] / flow[0][i]).ln() / (lambdas.len() as f64 * l.ln());
            prop_assert!((report.mean[i].unwrap() - end_to_end).abs() < 1e-9);
        }
    }
}
