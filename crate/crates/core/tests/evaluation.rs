//! Forecast metrics, rank correlation, significance tests, bootstrap
//! intervals and regime buckets against direct recomputation.

use std::collections::BTreeMap;

use graphsent_core::evaluation::{
    average_ranks, bootstrap_da_ci, daily_abs_errors, evaluate, information_coefficient, newey_west, point_metrics,
    regime_report, return_mae, select, significance_tests, spearman, tercile_thresholds, theils_u, Regime,
};
use graphsent_core::training::Forecast;
use graphsent_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fc(stock: usize, origin: usize, y_pred: f64, y_true: f64, y_prior: f64) -> Forecast {
    Forecast {
        stock,
        origin,
        horizon: 1,
        z_pred: 0.0,
        y_pred,
        y_true,
        y_prior,
        p_up: 0.5,
    }
}

fn refs(v: &[Forecast]) -> Vec<&Forecast> {
    v.iter().collect()
}

fn random_set(rng: &mut ChaCha8Rng, days: usize, stocks: usize) -> Vec<Forecast> {
    let mut out = vec![];
    for d in 0..days {
        for s in 0..stocks {
            let prior = rng.gen_range(50.0..150.0);
            let truth = prior * (1.0 + rng.gen_range(-0.05..0.05));
            let pred = prior * (1.0 + rng.gen_range(-0.05..0.05));
            out.push(fc(s, d, pred, truth, prior));
        }
    }
    out
}

#[test]
fn point_metric_hand_cases() {
    let v = vec![fc(0, 0, 110.0, 100.0, 95.0), fc(1, 0, 90.0, 100.0, 95.0)];
    let m = point_metrics(&refs(&v)).unwrap();
    assert!((m.mape - 10.0).abs() < 1e-12);
    assert!((m.rmse - 10.0).abs() < 1e-12);
    assert_eq!(m.da, 0.5);
    let perfect = vec![fc(0, 0, 101.0, 101.0, 100.0), fc(1, 0, 99.0, 99.0, 100.0)];
    let m = point_metrics(&refs(&perfect)).unwrap();
    assert_eq!((m.mape, m.rmse, m.da), (0.0, 0.0, 1.0));
}

#[test]
fn zero_move_counts_as_down() {
    let v = vec![fc(0, 0, 99.0, 100.0, 100.0), fc(1, 0, 100.0, 100.0, 100.0), fc(2, 0, 101.0, 100.0, 100.0)];
    assert!((point_metrics(&refs(&v)).unwrap().da - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn zero_actual_price_is_a_metric_error() {
    let v = vec![fc(0, 0, 1.0, 0.0, 1.0)];
    assert!(matches!(point_metrics(&refs(&v)), Err(Error::Metric(_))));
    assert!(matches!(point_metrics(&[]), Err(Error::Metric(_))));
}

#[test]
fn theils_u_cases() {
    let hand = vec![fc(0, 1, 3.0, 4.0, 2.0)];
    assert_eq!(theils_u(&refs(&hand)).unwrap(), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut v = random_set(&mut rng, 10, 4);
    v.iter_mut().for_each(|f| f.y_pred = f.y_prior);
    assert_eq!(theils_u(&refs(&v)).unwrap(), 1.0);
    v.iter_mut().for_each(|f| f.y_pred = f.y_true);
    assert_eq!(theils_u(&refs(&v)).unwrap(), 0.0);
    let flat = vec![fc(0, 0, 3.0, 2.0, 2.0)];
    assert!(matches!(theils_u(&refs(&flat)), Err(Error::Metric(_))));
}

fn brute_rank(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let less = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (brute_rank(a), brute_rank(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn rank_correlation_cases() {
    assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    let a = [0.1, 0.4, -0.2, 0.3, 0.0];
    assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((spearman(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
    let tied = [0.1, 0.4, 0.1, 0.3, 0.0];
    let b = [0.2, 0.5, -0.1, 0.1, 0.3];
    assert!((spearman(&tied, &b).unwrap() - brute_spearman(&tied, &b)).abs() < 1e-12);
    assert_eq!(spearman(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), None);
}

#[test]
fn information_coefficient_per_day() {
    let mut v = vec![];
    for (s, (p, r)) in [(0.01, 0.02), (0.02, 0.03), (0.03, 0.05)].into_iter().enumerate() {
        v.push(fc(s, 0, 100.0 * (1.0 + p), 100.0 * (1.0 + r), 100.0));
        v.push(fc(s, 1, 100.0 * (1.0 + p), 100.0 * (1.0 - r), 100.0));
        v.push(fc(s, 2, 100.0, 100.0 * (1.0 + r), 100.0));
    }
    let ic = information_coefficient(&refs(&v)).unwrap();
    assert_eq!(ic.skipped, 1);
    assert_eq!(ic.daily.len(), 2);
    assert!((ic.daily[0].1 - 1.0).abs() < 1e-12 && (ic.daily[1].1 + 1.0).abs() < 1e-12);
    assert!(ic.mean.abs() < 1e-12);
    let two = vec![fc(0, 0, 1.0, 1.0, 1.0), fc(1, 0, 1.0, 1.0, 1.0)];
    assert!(matches!(information_coefficient(&refs(&two)), Err(Error::Metric(_))));
}

/// Reference Diebold-Mariano statistic, coded from the textbook definition.
fn reference_dm(a: &[f64], b: &[f64], h: usize) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.abs() - y.abs()).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut lrv = 0.0;
    let q = h - 1;
    for k in 0..=q {
        let mut acc = 0.0;
        for t in k..n {
            acc += (d[t] - mean) * (d[t - k] - mean);
        }
        let gamma = acc / n as f64;
        let w = if k == 0 { 1.0 } else { 2.0 * (q + 1 - k) as f64 / (q + 1) as f64 };
        lrv += w * gamma;
    }
    mean / (lrv / n as f64).sqrt()
}

#[test]
fn dm_matches_reference_on_autocorrelated_differentials() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for h in [1, 5, 20] {
        let n = 300;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut shock = 0.0;
        for t in 0..n {
            shock = 0.6 * shock + rng.gen_range(-0.5..0.5);
            a[t] = 1.0 + shock + rng.gen_range(0.0..0.3);
            b[t] = 1.1 + rng.gen_range(0.0..0.3);
        }
        let s = significance_tests(&a, &b, h).unwrap();
        assert!((s.dm.unwrap() - reference_dm(&a, &b, h)).abs() <= 1e-6);
        let z = s.dm.unwrap().abs();
        // Two-sided normal tail, by numerical integration of the density.
        let steps = 200_000;
        let upper = 40.0;
        let dx = (upper - z) / steps as f64;
        let tail: f64 = (0..steps)
            .map(|i| {
                let x = z + (i as f64 + 0.5) * dx;
                (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * dx
            })
            .sum();
        assert!((s.dm_p.unwrap() - 2.0 * tail).abs() < 1e-6);
    }
}

#[test]
fn paired_t_matches_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..2.0)).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..2.2)).collect();
    let s = significance_tests(&a, &b, 1).unwrap();
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let m = d.iter().sum::<f64>() / 50.0;
    let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0).sqrt();
    assert!((s.t - m / (sd / 50f64.sqrt())).abs() < 1e-12);
    assert!((s.cohens_d - m / sd).abs() < 1e-12);
    assert!(s.t_p > 0.0 && s.t_p <= 1.0);
    // With lag 0 the DM statistic is the t statistic rescaled by sqrt((n-1)/n).
    assert!((s.dm.unwrap() - s.t * (50.0f64 / 49.0).sqrt()).abs() < 1e-9);
    assert_eq!(s.n, 50);
}

#[test]
fn identical_errors_are_degenerate() {
    let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
    let s = significance_tests(&a, &a, 1).unwrap();
    assert_eq!((s.t, s.cohens_d, s.t_p), (0.0, 0.0, 1.0));
    assert_eq!(s.dm, None);
    let shifted: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
    assert!(matches!(significance_tests(&shifted, &a, 1), Err(Error::Degenerate(_))));
    assert!(matches!(significance_tests(&a[..10], &a[..10], 1), Err(Error::Metric(_))));
}

#[test]
fn better_first_model_gives_negative_dm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b: Vec<f64> = (0..200).map(|_| rng.gen_range(0.5..1.5)).collect();
    let a: Vec<f64> = b.iter().map(|v| v - 0.2 + rng.gen_range(-0.1..0.1)).collect();
    let s = significance_tests(&a, &b, 1).unwrap();
    assert!(s.dm.unwrap() < 0.0 && s.t < 0.0);
    assert!(s.t_p < 0.05);
}

#[test]
fn newey_west_lag_zero_is_the_biased_variance() {
    let d = [1.0, 2.0, 4.0, 7.0];
    let m = 3.5;
    let v = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
    assert!((newey_west(&d, 0) - v).abs() < 1e-15);
}

#[test]
fn bootstrap_interval_properties() {
    let mut perfect = random_set(&mut ChaCha8Rng::seed_from_u64(5), 40, 3);
    perfect.iter_mut().for_each(|f| f.y_pred = f.y_true);
    assert_eq!(bootstrap_da_ci(&refs(&perfect), 1000, 0.95, 1).unwrap(), (1.0, 1.0));
    let v = random_set(&mut ChaCha8Rng::seed_from_u64(6), 60, 4);
    let da = point_metrics(&refs(&v)).unwrap().da;
    let ci = bootstrap_da_ci(&refs(&v), 2000, 0.95, 7).unwrap();
    assert!(ci.0 <= da && da <= ci.1, "{ci:?} {da}");
    assert!(ci.0 < ci.1);
    assert_eq!(ci, bootstrap_da_ci(&refs(&v), 2000, 0.95, 7).unwrap());
    assert!(matches!(bootstrap_da_ci(&refs(&v), 999, 0.95, 7), Err(Error::Config(_))));
}

#[test]
fn regime_buckets_report_empty_and_recombine() {
    let v = random_set(&mut ChaCha8Rng::seed_from_u64(8), 30, 3);
    let low: BTreeMap<usize, f64> = (0..30).map(|d| (d, 0.05)).collect();
    let r = regime_report(&refs(&v), &low, (0.1, 0.2)).unwrap();
    assert_eq!(r[0].regime, Regime::Low);
    assert_eq!(r[0].days, 30);
    assert!(r[1].metrics.is_none() && r[2].metrics.is_none());
    assert_eq!((r[1].days, r[2].days), (0, 0));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let proxy: BTreeMap<usize, f64> = (0..30).map(|d| (d, rng.gen_range(0.0..0.3))).collect();
    let r = regime_report(&refs(&v), &proxy, (0.1, 0.2)).unwrap();
    let pooled = point_metrics(&refs(&v)).unwrap().mape;
    let total: usize = r.iter().map(|b| b.forecasts).sum();
    let recombined: f64 = r
        .iter()
        .filter_map(|b| b.metrics.map(|m| m.mape * b.forecasts as f64))
        .sum::<f64>()
        / total as f64;
    assert!((pooled - recombined).abs() <= 1e-12);
    assert_eq!(r.iter().map(|b| b.days).sum::<usize>(), 30);
    let missing: BTreeMap<usize, f64> = BTreeMap::new();
    assert!(regime_report(&refs(&v), &missing, (0.1, 0.2)).is_err());
}

#[test]
fn tercile_thresholds_are_interpolated_quantiles() {
    let vals: Vec<f64> = (0..101).map(|i| i as f64).collect();
    assert_eq!(tercile_thresholds(&vals).unwrap(), (33.0, 67.0));
    assert!(tercile_thresholds(&[]).is_err());
}

#[test]
fn random_instances_match_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let days = rng.gen_range(2..15);
        let stocks = rng.gen_range(3..7);
        let v = random_set(&mut rng, days, stocks);
        let r = refs(&v);
        let m = point_metrics(&r).unwrap();
        let n = v.len() as f64;
        let mut ape = 0.0;
        let mut se = 0.0;
        let mut hits = 0.0;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut rae = 0.0;
        for f in &v {
            ape += (f.y_true - f.y_pred).abs() / f.y_true.abs();
            se += (f.y_true - f.y_pred).powi(2);
            let up_pred = f.y_pred - f.y_prior > 0.0;
            let up_true = f.y_true - f.y_prior > 0.0;
            if up_pred == up_true {
                hits += 1.0;
            }
            num += (f.y_pred - f.y_true).powi(2);
            den += (f.y_prior - f.y_true).powi(2);
            rae += (f.y_pred / f.y_prior - f.y_true / f.y_prior).abs();
        }
        assert!((m.mape - 100.0 * ape / n).abs() <= 1e-9);
        assert!((m.rmse - (se / n).sqrt()).abs() <= 1e-9);
        assert!((m.da - hits / n).abs() <= 1e-12);
        assert!((theils_u(&r).unwrap() - (num / den).sqrt()).abs() <= 1e-9);
        assert!((return_mae(&r).unwrap() - 100.0 * rae / n).abs() <= 1e-9);
        let ic = information_coefficient(&r).unwrap();
        let mut want = vec![];
        for d in 0..days {
            let day: Vec<&Forecast> = v.iter().filter(|f| f.origin == d).collect();
            let p: Vec<f64> = day.iter().map(|f| (f.y_pred - f.y_prior) / f.y_prior).collect();
            let a: Vec<f64> = day.iter().map(|f| (f.y_true - f.y_prior) / f.y_prior).collect();
            want.push(brute_spearman(&p, &a));
        }
        assert!((ic.mean - want.iter().sum::<f64>() / want.len() as f64).abs() <= 1e-9);
        let daily = daily_abs_errors(&r);
        assert_eq!(daily.len(), days);
        for (d, e) in daily {
            let day: Vec<&Forecast> = v.iter().filter(|f| f.origin == d).collect();
            let w = 100.0 * day.iter().map(|f| (f.y_true - f.y_pred).abs() / f.y_true).sum::<f64>() / day.len() as f64;
            assert!((e - w).abs() <= 1e-9);
        }
    }
}

#[test]
fn evaluate_reports_every_horizon() {
    let mut v = random_set(&mut ChaCha8Rng::seed_from_u64(11), 20, 4);
    let mut v5 = v.clone();
    v5.iter_mut().for_each(|f| f.horizon = 5);
    v.extend(v5);
    let reps = evaluate(&v, 1000, 0.95, 3).unwrap();
    assert_eq!(reps.iter().map(|r| r.horizon).collect::<Vec<_>>(), vec![1, 5]);
    assert_eq!(select(&v, 5).len(), 80);
    assert_eq!(reps, evaluate(&v, 1000, 0.95, 3).unwrap());
}

proptest! {
    #[test]
    fn report_ranges_hold(seed in 0u64..500) {
        let v = random_set(&mut ChaCha8Rng::seed_from_u64(seed), 6, 4);
        let r = refs(&v);
        let m = point_metrics(&r).unwrap();
        prop_assert!(m.mape >= 0.0 && m.rmse >= 0.0 && (0.0..=1.0).contains(&m.da));
        prop_assert!(theils_u(&r).unwrap() >= 0.0);
        let ic = information_coefficient(&r).unwrap();
        for (_, x) in ic.daily {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
        }
    }
}
