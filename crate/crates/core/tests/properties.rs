//! Property-based invariant tests.
//!
//! 1. Gaussian intervals are ordered and scale linearly in the std.
//! 2. Role splitting partitions the dataset: disjoint roles, exact counts,
//!    remainder to train, determinism in the stream.
//! 3. The adjusted quantile never decreases as alpha decreases, and always
//!    returns an element of the score multiset (or +inf).
//! 4. Standardizer round trips are affine identities.
//! 5. Kernels are symmetric, bounded by the output variance, and equal to it
//!    on the diagonal.
//! 6. Ensemble mixture variance is at least the mean member variance.
//! 7. Coverage is permutation-invariant.

use proptest::prelude::*;

use uq_core::conformal::adjusted_quantile;
use uq_core::gp::{kernel_eval, KernelFamily, KernelSpec};
use uq_core::metrics::empirical_coverage;
use uq_core::neural::Standardizer;
use uq_core::predict::{gaussian_interval, ConfidenceLevel, GaussianPrediction, PredictionInterval};
use uq_core::{Dataset, Role, RngStream};

fn finite_f64(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL.prop_map(move |v| lo + (hi - lo) * (v.abs().fract()))
}

proptest! {
    #[test]
    fn gaussian_intervals_are_ordered_and_linear(
        mean in -1e6_f64..1e6,
        std in 1e-9_f64..1e6,
        alpha in 0.001_f64..0.999,
        scale in 1e-3_f64..1e3,
    ) {
        let level = ConfidenceLevel::new(alpha).unwrap();
        let iv = gaussian_interval(GaussianPrediction { mean, std }, level);
        prop_assert!(iv.lower <= iv.center && iv.center <= iv.upper);
        let scaled = gaussian_interval(GaussianPrediction { mean, std: std * scale }, level);
        let rel = (scaled.half_width() - iv.half_width() * scale).abs()
            / (iv.half_width() * scale).max(1e-300);
        prop_assert!(rel < 1e-9);
    }

    #[test]
    fn split_partitions_exactly(
        n in 4usize..400,
        f_cal in 0.05_f64..0.45,
        f_test in 0.05_f64..0.45,
        seed in any::<u64>(),
    ) {
        let f_train = 1.0 - f_cal - f_test;
        prop_assume!(f_train > 0.05);
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let targets: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let data = Dataset::all_train(inputs, targets).unwrap();
        let split = match data.split_roles((f_train, f_cal, f_test), &mut RngStream::new(seed)) {
            Ok(s) => s,
            // Tiny n with small fractions can legitimately leave a role empty.
            Err(_) => return Ok(()),
        };
        let n_cal = (n as f64 * f_cal + 1e-9).floor() as usize;
        let n_test = (n as f64 * f_test + 1e-9).floor() as usize;
        prop_assert_eq!(split.count_role(Role::Calibration), n_cal);
        prop_assert_eq!(split.count_role(Role::Test), n_test);
        prop_assert_eq!(split.count_role(Role::Train), n - n_cal - n_test);
        // Determinism: same stream, same roles.
        let again = data
            .split_roles((f_train, f_cal, f_test), &mut RngStream::new(seed))
            .unwrap();
        prop_assert_eq!(split, again);
    }

    #[test]
    fn adjusted_quantile_monotone_and_from_multiset(
        values in prop::collection::vec(0.0_f64..1e6, 1..60),
        alpha_lo in 0.01_f64..0.5,
        alpha_hi in 0.5_f64..0.99,
    ) {
        let tight = ConfidenceLevel::new(alpha_lo).unwrap();
        let loose = ConfidenceLevel::new(alpha_hi).unwrap();
        let q_tight = adjusted_quantile(&values, tight).unwrap();
        let q_loose = adjusted_quantile(&values, loose).unwrap();
        prop_assert!(q_tight >= q_loose);
        for q in [q_tight, q_loose] {
            prop_assert!(q.is_infinite() || values.iter().any(|v| *v == q));
        }
    }

    #[test]
    fn standardizer_round_trip(
        ys in prop::collection::vec(-1e5_f64..1e5, 2..40),
        x0 in finite_f64(-100.0, 100.0),
    ) {
        let xs: Vec<Vec<f64>> = ys.iter().enumerate().map(|(i, _)| vec![x0 + i as f64]).collect();
        let s = Standardizer::fit(&xs, &ys);
        for &y in &ys {
            let rt = s.destandardize_y(s.standardize_y(y));
            prop_assert!((rt - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn kernels_are_symmetric_and_bounded(
        l in 0.01_f64..10.0,
        s2 in 0.01_f64..10.0,
        a in -50.0_f64..50.0,
        b in -50.0_f64..50.0,
    ) {
        for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
            let spec = KernelSpec { family, length_scale: l, variance: s2 };
            let kab = kernel_eval(&spec, &[a], &[b]);
            let kba = kernel_eval(&spec, &[b], &[a]);
            prop_assert_eq!(kab, kba);
            prop_assert!(kab <= s2 + 1e-15);
            prop_assert!(kab >= 0.0);
            prop_assert_eq!(kernel_eval(&spec, &[a], &[a]), s2);
        }
    }

    #[test]
    fn mixture_variance_dominates_mean_member_variance(
        mus in prop::collection::vec(-10.0_f64..10.0, 2..8),
        stds in prop::collection::vec(0.01_f64..5.0, 2..8),
    ) {
        let m = mus.len().min(stds.len());
        let mus = &mus[..m];
        let stds = &stds[..m];
        let mean = mus.iter().sum::<f64>() / m as f64;
        let mean_var = stds.iter().map(|s| s * s).sum::<f64>() / m as f64;
        let second = mus
            .iter()
            .zip(stds)
            .map(|(mu, s)| s * s + mu * mu)
            .sum::<f64>()
            / m as f64;
        let mixture_var = second - mean * mean;
        prop_assert!(mixture_var >= mean_var - 1e-12);
    }

    #[test]
    fn coverage_permutation_invariant(
        pairs in prop::collection::vec((-10.0_f64..10.0, 0.0_f64..3.0, -10.0_f64..10.0), 1..50),
        rotate in 0usize..49,
    ) {
        let intervals: Vec<PredictionInterval> = pairs
            .iter()
            .map(|(c, h, _)| PredictionInterval::symmetric(*c, *h))
            .collect();
        let ys: Vec<f64> = pairs.iter().map(|(_, _, y)| *y).collect();
        let base = empirical_coverage(&intervals, &ys).unwrap();
        let k = rotate % pairs.len();
        let mut iv2 = intervals.clone();
        iv2.rotate_left(k);
        let mut ys2 = ys.clone();
        ys2.rotate_left(k);
        prop_assert_eq!(base, empirical_coverage(&iv2, &ys2).unwrap());
    }
}
