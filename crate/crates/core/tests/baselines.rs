//! Persistence and ARIMA forecasters against simulated processes.

use graphsent_core::baselines::{
    css_residuals, difference, fit_arima, fit_arima_order, forecast_arima, naive_forecast, roots_outside_unit_circle,
    ArimaGrid, ArimaModel, ArimaOrder,
};
use graphsent_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
        })
        .collect()
}

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let e = noise(n + 100, seed);
    let mut y = vec![0.0; n + 100];
    for t in 1..n + 100 {
        y[t] = phi * y[t - 1] + e[t];
    }
    y.split_off(100)
}

fn model(order: ArimaOrder, ar: Vec<f64>, ma: Vec<f64>, intercept: f64) -> ArimaModel {
    ArimaModel { order, ar, ma, intercept, sigma2: 1.0, aic: 0.0 }
}

#[test]
fn naive_forecast_persists_the_last_value() {
    let y = [97.0, 99.5, 100.0];
    assert_eq!(naive_forecast(&y, 1).unwrap(), 100.0);
    assert_eq!(naive_forecast(&y, 20).unwrap(), 100.0);
    assert!(matches!(naive_forecast(&y, 0), Err(Error::Config(_))));
    assert!(matches!(naive_forecast(&[], 1), Err(Error::Baseline(_))));
}

#[test]
fn differencing_and_residual_recursion() {
    assert_eq!(difference(&[1.0, 4.0, 9.0, 16.0], 1), vec![3.0, 5.0, 7.0]);
    assert_eq!(difference(&[1.0, 4.0, 9.0, 16.0], 2), vec![2.0, 2.0]);
    let w = [1.0, 2.0, 0.5, -1.0];
    let e = css_residuals(&w, 0.1, &[0.5], &[0.2]);
    let e1 = 2.0 - (0.1 + 0.5 * 1.0);
    let e2 = 0.5 - (0.1 + 0.5 * 2.0 + 0.2 * e1);
    let e3 = -1.0 - (0.1 + 0.5 * 0.5 + 0.2 * e2);
    assert_eq!(e, vec![e1, e2, e3]);
}

#[test]
fn unit_circle_checks() {
    assert!(roots_outside_unit_circle(&[]));
    assert!(roots_outside_unit_circle(&[0.7]));
    assert!(!roots_outside_unit_circle(&[1.0]));
    assert!(roots_outside_unit_circle(&[0.5, 0.3]));
    assert!(!roots_outside_unit_circle(&[0.5, 0.6]));
    assert!(!roots_outside_unit_circle(&[1.2, -0.1]));
}

#[test]
fn random_walk_model_equals_naive() {
    let y: Vec<f64> = noise(300, 1).iter().scan(100.0, |s, e| {
        *s += e;
        Some(*s)
    }).collect();
    let m = fit_arima_order(&y, ArimaOrder { p: 0, d: 1, q: 0 }, 500).unwrap();
    let drift_free = ArimaModel { intercept: 0.0, ..m };
    for h in [1, 5, 20] {
        assert_eq!(forecast_arima(&drift_free, &y, h).unwrap(), naive_forecast(&y, h).unwrap());
    }
}

#[test]
fn ar1_two_step_forecast() {
    let m = model(ArimaOrder { p: 1, d: 0, q: 0 }, vec![0.5], vec![], 0.0);
    let y = [3.0, -1.0, 8.0];
    assert_eq!(forecast_arima(&m, &y, 1).unwrap(), 4.0);
    assert_eq!(forecast_arima(&m, &y, 2).unwrap(), 2.0);
    assert!(matches!(forecast_arima(&m, &y, 0), Err(Error::Config(_))));
}

#[test]
fn ma1_forecast_reverts_to_intercept_after_one_step() {
    let m = model(ArimaOrder { p: 0, d: 0, q: 1 }, vec![], vec![0.6], 3.0);
    let y = [2.0, 4.5, 1.0, 3.5, 5.0];
    let e = css_residuals(&y, 3.0, &[], &[0.6]);
    assert!((forecast_arima(&m, &y, 1).unwrap() - (3.0 + 0.6 * e[e.len() - 1])).abs() < 1e-12);
    for h in 2..6 {
        assert_eq!(forecast_arima(&m, &y, h).unwrap(), 3.0);
    }
}

#[test]
fn integrated_forecast_adds_back_levels() {
    let m = model(ArimaOrder { p: 0, d: 2, q: 0 }, vec![], vec![], 1.0);
    let y = [0.0, 1.0, 4.0, 9.0];
    // Second differences are constant 2; the model predicts 1 for each.
    assert_eq!(forecast_arima(&m, &y, 1).unwrap(), 9.0 + 5.0 + 1.0);
    assert_eq!(forecast_arima(&m, &y, 2).unwrap(), 15.0 + 6.0 + 1.0);
}

#[test]
fn white_noise_selects_the_mean_model() {
    let y: Vec<f64> = noise(2000, 2).iter().map(|e| 0.3 + e).collect();
    let grid = ArimaGrid { p: vec![0, 1, 2], d: vec![0, 1, 2], q: vec![0, 1, 2], max_iters: 2000 };
    let fit = fit_arima(&y, &grid).unwrap();
    assert_eq!(fit.model.order, ArimaOrder { p: 0, d: 0, q: 0 });
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    assert!((fit.model.intercept - mean).abs() < 0.05);
    assert!(fit.model.sigma2 > 0.0);
}

#[test]
fn ar1_coefficient_is_recovered() {
    let y = ar1(0.7, 2000, 3);
    let m = fit_arima_order(&y, ArimaOrder { p: 1, d: 0, q: 0 }, 2000).unwrap();
    assert!((0.6..=0.8).contains(&m.ar[0]), "{:?}", m.ar);
    let k = 2.0;
    let n = (y.len() - 1) as f64;
    let sse: f64 = css_residuals(&y, m.intercept, &m.ar, &[]).iter().map(|e| e * e).sum();
    assert!((m.aic - (n * (sse / n).ln() + 2.0 * k)).abs() < 1e-9);
}

#[test]
fn aic_finds_autoregression_in_most_simulations() {
    let grid = ArimaGrid { p: vec![0, 1, 2], d: vec![0], q: vec![0, 1, 2], max_iters: 1000 };
    let hits = (0..50)
        .filter(|&s| fit_arima(&ar1(0.7, 2000, 100 + s), &grid).unwrap().model.order.p >= 1)
        .count();
    assert!(hits >= 40, "{hits}/50");
}

#[test]
fn non_stationary_fits_are_rejected_and_reported() {
    let y: Vec<f64> = (0..400).map(|t| 1.01f64.powi(t)).collect();
    let grid = ArimaGrid { p: vec![1], d: vec![0], q: vec![0], max_iters: 500 };
    match fit_arima(&y, &grid) {
        Err(Error::Baseline(m)) => assert!(m.contains("1 rejected"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn short_series_and_bad_orders_are_errors() {
    let y = noise(30, 4);
    assert!(matches!(fit_arima_order(&y, ArimaOrder { p: 2, d: 0, q: 2 }, 100), Err(Error::Baseline(_))));
    assert!(matches!(fit_arima_order(&y, ArimaOrder { p: 0, d: 3, q: 0 }, 100), Err(Error::Config(_))));
    let grid = ArimaGrid { d: vec![3], ..ArimaGrid::default() };
    assert!(matches!(fit_arima(&y, &grid), Err(Error::Config(_))));
}
