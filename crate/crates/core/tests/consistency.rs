//! Cross-module checks against independently computed expectations.

use pathlattice::drift::DriftSpec;
use pathlattice::gibbs::{
    dlr_check, entropy_comparison, girsanov_normalization, DlrBudget,
};
use pathlattice::lattice::{InteractionRange, SiteBox, SiteIndex};
use pathlattice::sim::{
    sample_pn, shift_average, Estimate, InitialLaw, LocalObservable,
};

/// Terminal variance of one mean-reverting coordinate under the exact
/// update `x_{k+1} = (1 - kappa h) x_k + sqrt(h) z_k`, from the variance
/// recursion `v_{k+1} = (1 - kappa h)^2 v_k + h`.
fn mean_reversion_variance(kappa: f64, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let a = 1.0 - kappa * h;
    let mut v = 0.0;
    for _ in 0..steps {
        v = a * a * v + h;
    }
    v
}

#[test]
fn mean_reverting_variance_matches_the_recursion() {
    let steps = 50;
    let kappa = 1.0;
    let drift = DriftSpec::ornstein_uhlenbeck(1, kappa).unwrap();
    let initial = InitialLaw::Dirac { value: 0.0 };
    let e = sample_pn(&drift, 1, &initial, steps, 101, 20_000).unwrap();
    let origin = SiteIndex::d1(0);
    let sq: Vec<f64> = e
        .replicas
        .iter()
        .map(|r| {
            let x = r.paths.value(&origin, steps).unwrap();
            x * x
        })
        .collect();
    let est = Estimate::from_samples(&sq);
    let oracle = mean_reversion_variance(kappa, steps);
    assert!(
        est.within(oracle, 3.0),
        "variance {} +- {} vs recursion {}",
        est.mean,
        est.stderr,
        oracle
    );
    // the recursion itself must sit near the continuous-time value
    let continuous = (1.0 - (-2.0f64 * kappa).exp()) / (2.0 * kappa);
    assert!((oracle - continuous).abs() / continuous < 0.02);
}

#[test]
fn normalization_holds_for_a_path_dependent_drift() {
    let drift = DriftSpec::running_integral_coordinate(1);
    let volume = SiteBox::from_sites(vec![SiteIndex::d1(0)]).unwrap();
    let check = girsanov_normalization(&drift, &volume, 40, 3000, 113, 3.5).unwrap();
    assert!(
        check.pass,
        "unit-mean z = {} (mean {})",
        check.z, check.estimate.mean
    );
}

#[test]
fn tiling_is_invisible_to_single_site_observables() {
    let range = InteractionRange::ball(1, 1).unwrap();
    let drift = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
    let initial = InitialLaw::GaussianProduct {
        mean: 0.0,
        variance: 1.0,
    };
    let e = sample_pn(&drift, 2, &initial, 16, 131, 64).unwrap();
    let g = LocalObservable::coordinate_squared(1, 16);
    let tiled = shift_average(&g, &e).unwrap();
    // a single-site observable at any centre in the volume only ever reads
    // the central block, which is the replica itself
    let plain: Vec<f64> = e
        .replicas
        .iter()
        .map(|r| {
            e.volume
                .sites()
                .iter()
                .map(|s| {
                    let x = r.paths.value(s, 16).unwrap();
                    x * x
                })
                .sum::<f64>()
                / e.volume.len() as f64
        })
        .collect();
    let plain = Estimate::from_samples(&plain);
    assert!(
        (tiled.mean - plain.mean).abs() < 1e-12,
        "{} vs {}",
        tiled.mean,
        plain.mean
    );
    assert!((tiled.stderr - plain.stderr).abs() < 1e-12);
}

#[test]
fn conditional_check_is_exact_for_origin_range_drifts() {
    // a drift that never reads the neighbours makes the kernel weightless,
    // so the conditional identity reduces to plain resampling
    let drift = DriftSpec::constant(1, 0.4);
    let volume = SiteBox::from_sites(vec![SiteIndex::d1(0)]).unwrap();
    let initial = InitialLaw::GaussianProduct {
        mean: 0.0,
        variance: 1.0,
    };
    let tests = vec![
        LocalObservable::coordinate_capped(1, 12, 4.0),
        LocalObservable::coordinate_squared(1, 6),
    ];
    let report = dlr_check(
        &drift,
        2,
        &volume,
        &initial,
        &tests,
        DlrBudget {
            outer: 400,
            inner: 40,
        },
        12,
        139,
        3.5,
    )
    .unwrap();
    assert!(report.all_pass, "{:#?}", report.functions);
    assert_eq!(report.ess_failures, 0);
}

#[test]
fn entropy_routes_agree_for_an_interacting_drift() {
    let range = InteractionRange::ball(1, 1).unwrap();
    let drift = DriftSpec::barycentre_delay_const(range, 0.25, 1.0, -1.0).unwrap();
    let initial = InitialLaw::GaussianProduct {
        mean: 0.0,
        variance: 1.0,
    };
    let e = sample_pn(&drift, 3, &initial, 50, 149, 3000).unwrap();
    let report = entropy_comparison(&e, 3.5).unwrap();
    assert!(report.pass, "paired z = {}", report.z);
    // the branch values are +-1, so the per-site entropy cannot exceed 1/2
    assert!(report.direct.mean <= 0.5 + 3.0 * report.direct.stderr);
    assert!(report.direct.mean > 0.0);
}
