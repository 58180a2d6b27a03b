//! Property tests for eigensolvers, reference laws and linear eigenvalue
//! statistics.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use rmt_eed::les::{self, Domain, TestFunction};
use rmt_eed::quad::Tolerance;
use rmt_eed::rmm::{CMatrix, CovarianceMatrix, Convention, C64};
use rmt_eed::spectral::{self, ReferenceDensity, SpectrumKind, SpectrumSet};
use rmt_eed::seed;

fn complex_gaussian(n: usize, s: u64) -> CMatrix {
    let mut rng = seed::rng(s);
    CMatrix::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn covariance_spectrum(values: Vec<f64>) -> SpectrumSet {
    SpectrumSet {
        eigenvalues: values.into_iter().map(|x| C64::new(x, 0.0)).collect(),
        kind: SpectrumKind::Covariance,
        shape: None,
        depth: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn general_eigenvalues_reproduce_trace_and_determinant(s in any::<u64>(), n in 1usize..=20) {
        let a = complex_gaussian(n, s);
        let spec = spectral::eigen_general(&a, "property").unwrap();
        let sum: C64 = spec.eigenvalues.iter().sum();
        let prod: C64 = spec.eigenvalues.iter().product();
        let trace = a.trace();
        let det = a.clone().determinant();
        let scale = a.iter().map(|z| z.norm()).sum::<f64>();
        prop_assert!((sum - trace).norm() <= 1e-8 * scale.max(1.0));
        prop_assert!((prod - det).norm() <= 1e-6 * det.norm().max(1e-300));
    }

    #[test]
    fn hermitian_spectrum_ignores_symmetric_permutation(s in any::<u64>(), perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut rng = seed::rng(s);
        let x = DMatrix::<f64>::from_fn(8, 16, |_, _| rng.sample(StandardNormal));
        let g = &x * x.transpose() / 8.0;
        let p = DMatrix::from_fn(8, 8, |i, j| g[(perm[i], perm[j])]);
        let cov = |m: DMatrix<f64>| CovarianceMatrix { matrix: m, convention: Convention::M, ratio: 0.5 };
        let a = spectral::eigen_hermitian(&cov(g)).unwrap().real_parts();
        let b = spectral::eigen_hermitian(&cov(p)).unwrap().real_parts();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn mp2_cdf_is_mp_cdf_pushed_forward(c in 0.05f64..1.0, q in 0.0f64..1.0) {
        let mp = ReferenceDensity::Mp { c, sigma2: 1.0 };
        let mp2 = ReferenceDensity::Mp2 { c, sigma2: 1.0 };
        let (lo, hi) = mp2.support();
        let x = lo + q * (hi - lo);
        prop_assert!((mp2.cdf(x).unwrap() - mp.cdf(c * x).unwrap()).abs() <= 1e-7);
    }

    #[test]
    fn les_is_linear_for_sum_form_functions(
        values in prop::collection::vec(0.01f64..10.0, 1..40),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let s = covariance_spectrum(values);
        let combo = TestFunction::custom("combo", Domain::PositiveReals, move |x| {
            a * (2.0 * x * x - 1.0) + b * (x - x.ln() - 1.0)
        });
        let lhs = les::les(&s, &combo, false).unwrap().value;
        let t2 = les::les(&s, &TestFunction::T2, false).unwrap().value;
        let lrf = les::les(&s, &TestFunction::Lrf, false).unwrap().value;
        let rhs = a * t2 + b * lrf;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn identity_les_on_covariance_is_trace(s in any::<u64>(), n in 2usize..15) {
        let mut rng = seed::rng(s);
        let x = DMatrix::<f64>::from_fn(n, 2 * n, |_, _| rng.sample(StandardNormal));
        let cov = CovarianceMatrix { matrix: &x * x.transpose() / n as f64, convention: Convention::M, ratio: 0.5 };
        let spec = spectral::eigen_hermitian(&cov).unwrap();
        let id = TestFunction::custom("x", Domain::RealLine, |x| x);
        let v = les::les(&spec, &id, false).unwrap().value;
        let trace = cov.matrix.trace();
        prop_assert!((v - trace).abs() <= 1e-8 * trace);
    }

    #[test]
    fn t2_expectation_matches_analytic_second_moment(c in 0.05f64..1.0, n in 1usize..500) {
        let law = ReferenceDensity::Mp2 { c, sigma2: 1.0 };
        let m1 = law.integrate(|x| x, Tolerance::new(1e-12, 1e-12)).unwrap();
        let m2 = law.integrate(|x| x * x, Tolerance::new(1e-12, 1e-12)).unwrap();
        prop_assert!((m1 - 1.0 / c).abs() <= 1e-6 * (1.0 / c));
        prop_assert!((m2 - (1.0 + c) / (c * c)).abs() <= 1e-6 * (1.0 + c) / (c * c));
        let e = les::lln_expectation(&TestFunction::T2, &law, n).unwrap();
        let want = n as f64 * (2.0 * (1.0 + c) / (c * c) - 1.0);
        prop_assert!((e - want).abs() <= 1e-6 * want.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn msr_closed_form_agrees_with_quadrature(c in 0.01f64..1.0) {
        let closed = les::msr_moments(c, 1).unwrap();
        let law = ReferenceDensity::Ring { c, depth: 1 };
        let tol = Tolerance::new(1e-13, 1e-12);
        let mean = law.integrate(|r| r, tol).unwrap();
        let second = law.integrate(|r| r * r, tol).unwrap();
        prop_assert!((closed.mean - mean).abs() <= 1e-8);
        prop_assert!((closed.second - second).abs() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn clt_variance_is_nonnegative_and_shift_free(c in 0.1f64..0.9, shift in -10.0f64..10.0) {
        for f in [TestFunction::T2, TestFunction::T3, TestFunction::Lrf] {
            let base = les::clt_variance(&f, c, 0.0).unwrap();
            prop_assert!(base >= 0.0);
            let g = f.clone();
            let shifted = TestFunction::custom("shifted", f.domain(), move |x| g.eval(x) + shift);
            let v = les::clt_variance(&shifted, c, 0.0).unwrap();
            prop_assert!((v - base).abs() <= 1e-5 * base.max(1.0), "{} {} vs {}", f.name(), v, base);
        }
    }
}
