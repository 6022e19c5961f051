use chrono::{Datelike, NaiveDate};
use graphsent_core::dataset::window_ends;
use graphsent_core::features::{
    compute_indicators, impute_column, normalize_column, partition_by_dates, partition_dataset, rsi_from_changes,
    DatasetSplit, ImputeMode, WARMUP_DAYS,
};
use graphsent_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn random_walk(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = 50.0 + 50.0 * rng.gen::<f64>();
    (0..n)
        .map(|_| {
            p *= 1.0 + 0.02 * (rng.gen::<f64>() - 0.5);
            p
        })
        .collect()
}

// Oracles written straight from the definitions.
fn o_sma(c: &[f64], t: usize, n: usize) -> f64 {
    let lo = (t + 1).saturating_sub(n);
    c[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
}

/// Closed form of the EMA recursion seeded at the first value.
fn o_ema(c: &[f64], t: usize, n: usize) -> f64 {
    let a = 2.0 / (n as f64 + 1.0);
    let mut s = (1.0 - a).powi(t as i32 + 1) * c[0];
    for k in 0..=t {
        s += a * (1.0 - a).powi(k as i32) * c[t - k];
    }
    s
}

fn o_rsi(c: &[f64], t: usize) -> f64 {
    let (mut g, mut l) = (0.0, 0.0);
    for k in t - 13..=t {
        let d = c[k] - c[k - 1];
        if d > 0.0 {
            g += d;
        } else {
            l -= d;
        }
    }
    let (g, l) = (g / 14.0, l / 14.0);
    if l == 0.0 {
        if g == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + g / l)
    }
}

fn o_vol(c: &[f64], t: usize) -> f64 {
    let r: Vec<f64> = (t - 19..=t).map(|k| c[k] / c[k - 1] - 1.0).collect();
    let m = r.iter().sum::<f64>() / 20.0;
    (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 19.0).sqrt()
}

fn check_against_oracle(c: &[f64]) {
    let ind = compute_indicators(c).unwrap();
    for t in WARMUP_DAYS..c.len() {
        let v = &ind.values[t];
        let exp = [
            o_sma(c, t, 5),
            o_sma(c, t, 10),
            o_sma(c, t, 20),
            o_ema(c, t, 5),
            o_ema(c, t, 10),
            o_ema(c, t, 20),
            o_rsi(c, t),
            o_ema(c, t, 12) - o_ema(c, t, 26),
            c[t] / c[t - 1] - 1.0,
            (c[t] / c[t - 1]).ln(),
            o_vol(c, t),
        ];
        for (k, (a, b)) in v.to_array().iter().zip(exp).enumerate() {
            assert!((a - b).abs() <= TOL * b.abs().max(1.0), "day {t} indicator {k}: {a} vs {b}");
        }
    }
}

#[test]
fn indicators_match_brute_force_on_300_days() {
    check_against_oracle(&random_walk(1, 300));
}

#[test]
fn indicators_match_brute_force_on_100_random_series() {
    for s in 0..100 {
        check_against_oracle(&random_walk(100 + s, 60));
    }
}

#[test]
fn sma5_of_one_to_five() {
    let mut c: Vec<f64> = (1..=5).map(f64::from).collect();
    c.extend(std::iter::repeat_n(5.0, 30));
    let ind = compute_indicators(&c).unwrap();
    assert_eq!(ind.values[4].sma5, 3.0);
}

#[test]
fn constant_close_gives_flat_indicators() {
    let c = vec![42.0; 60];
    let ind = compute_indicators(&c).unwrap();
    for v in &ind.values {
        assert_eq!([v.sma5, v.sma10, v.sma20, v.ema5, v.ema10, v.ema20], [42.0; 6]);
        assert_eq!(v.macd, 0.0);
        assert_eq!(v.daily_return, 0.0);
        assert_eq!(v.log_return, 0.0);
        assert_eq!(v.rolling_vol, 0.0);
        assert_eq!(v.rsi, 50.0);
    }
    assert!(ind.macd_signal.iter().all(|&s| s == 0.0));
}

#[test]
fn monotone_series_pin_rsi() {
    let down: Vec<f64> = (0..40).map(|i| 100.0 - i as f64).collect();
    let up: Vec<f64> = (0..40).map(|i| 100.0 + i as f64).collect();
    assert_eq!(compute_indicators(&down).unwrap().values[39].rsi, 0.0);
    assert_eq!(compute_indicators(&up).unwrap().values[39].rsi, 100.0);
}

#[test]
fn balanced_gains_and_losses_give_rsi_50() {
    let ch: Vec<f64> = (0..14).map(|i| if i % 2 == 0 { 1.5 } else { -1.5 }).collect();
    assert_eq!(rsi_from_changes(&ch), 50.0);
}

#[test]
fn warm_up_days_are_flagged() {
    let ind = compute_indicators(&random_walk(3, 40)).unwrap();
    assert!(ind.warmup[..WARMUP_DAYS].iter().all(|&w| w));
    assert!(ind.warmup[WARMUP_DAYS..].iter().all(|&w| !w));
}

#[test]
fn short_series_is_a_feature_error() {
    let e = compute_indicators(&random_walk(3, WARMUP_DAYS)).unwrap_err();
    assert!(matches!(e, Error::Feature(_)));
}

#[test]
fn training_imputation_interpolates_short_gaps() {
    let (v, m) = impute_column(&[Some(10.0), None, Some(12.0)], ImputeMode::Train).unwrap();
    assert_eq!(v, vec![10.0, 11.0, 12.0]);
    assert_eq!(m, vec![false, true, false]);
}

#[test]
fn evaluation_imputation_forward_fills() {
    let (v, _) = impute_column(&[Some(10.0), None, None, None], ImputeMode::Eval).unwrap();
    assert_eq!(v, vec![10.0; 4]);
    let (v, _) = impute_column(&[Some(10.0), None, Some(14.0)], ImputeMode::Eval).unwrap();
    assert_eq!(v, vec![10.0, 10.0, 14.0]);
}

#[test]
fn long_training_gap_is_forward_filled() {
    let (v, m) = impute_column(&[Some(10.0), None, None, None, Some(20.0)], ImputeMode::Train).unwrap();
    assert_eq!(v, vec![10.0, 10.0, 10.0, 10.0, 20.0]);
    assert_eq!(m.iter().filter(|&&x| x).count(), 3);
}

#[test]
fn leading_gap_has_no_anchor() {
    let e = impute_column(&[None, Some(1.0)], ImputeMode::Train).unwrap_err();
    assert!(matches!(e, Error::Imputation(_)));
}

fn split5() -> DatasetSplit {
    DatasetSplit {
        train: 0..3,
        val: 3..4,
        test: 4..5,
    }
}

#[test]
fn expanding_z_score_by_hand() {
    let z = normalize_column(&[1.0, 2.0, 3.0, 0.0, 0.0], &split5()).unwrap();
    assert!((z[2] - 1.0).abs() < 1e-15);
}

#[test]
fn constant_feature_normalizes_to_zero() {
    let z = normalize_column(&[7.0; 5], &split5()).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

#[test]
fn test_cells_use_training_statistics() {
    let x = [1.0, 2.0, 3.0, 100.0, 5.0];
    let z = normalize_column(&x, &split5()).unwrap();
    // Training mean 2, sample sd 1.
    assert!((z[4] - 3.0).abs() < 1e-15);
}

#[test]
fn empty_training_range_is_rejected() {
    let s = DatasetSplit {
        train: 0..0,
        val: 0..2,
        test: 2..3,
    };
    assert!(matches!(normalize_column(&[1.0; 3], &s), Err(Error::Normalization(_))));
}

#[test]
fn proportional_partition() {
    let s = partition_dataset(100, (0.7, 0.15, 0.15)).unwrap();
    assert_eq!((s.train, s.val, s.test), (0..70, 70..85, 85..100));
}

#[test]
fn non_positive_fraction_is_a_config_error() {
    assert!(matches!(partition_dataset(100, (0.85, 0.15, 0.0)), Err(Error::Config(_))));
    assert!(matches!(partition_dataset(100, (0.9, 0.2, -0.1)), Err(Error::Config(_))));
}

fn weekdays(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .take_while(|d| *d <= to)
        .filter(|d| d.weekday().number_from_monday() <= 5)
        .collect()
}

#[test]
fn date_cuts_reproduce_the_published_boundaries() {
    let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
    let dates = weekdays(d(1982, 1, 1), d(2025, 3, 31));
    let s = partition_by_dates(&dates, d(2011, 1, 1), d(2017, 1, 1)).unwrap();
    assert_eq!(dates[s.train.end - 1].year(), 2010);
    assert_eq!(dates[s.val.start].year(), 2011);
    assert_eq!(dates[s.val.end - 1].year(), 2016);
    assert_eq!(dates[s.test.start].year(), 2017);
}

#[test]
fn fractional_split_of_the_published_range_does_not_hit_its_year_cuts() {
    // 70/15/15 of 1982-01..2025-03 ends training in 2012, not 2010: the
    // published date ranges are closer to 67/14/19.
    let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
    let dates = weekdays(d(1982, 1, 1), d(2025, 3, 31));
    let s = partition_dataset(dates.len(), (0.7, 0.15, 0.15)).unwrap();
    assert_eq!(dates[s.train.end - 1].year(), 2012);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_ordered_and_covering(n in 10usize..5000, a in 0.2f64..0.8, b in 0.05f64..0.15) {
        let c = 1.0 - a - b;
        if let Ok(s) = partition_dataset(n, (a, b, c)) {
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, n);
            prop_assert!(!s.val.is_empty() && !s.test.is_empty());
        }
    }

    #[test]
    fn normalization_is_causal(x in prop::collection::vec(-100.0f64..100.0, 12), t in 0usize..9, v in -1e3f64..1e3) {
        let s = DatasetSplit { train: 0..6, val: 6..9, test: 9..12 };
        let base = normalize_column(&x, &s).unwrap();
        for u in t + 1..12 {
            let mut y = x.clone();
            y[u] = v;
            let z = normalize_column(&y, &s).unwrap();
            prop_assert_eq!(base[t].to_bits(), z[t].to_bits());
        }
    }

    #[test]
    fn test_cells_ignore_other_test_values(x in prop::collection::vec(-100.0f64..100.0, 12), v in -1e3f64..1e3) {
        let s = DatasetSplit { train: 0..6, val: 6..9, test: 9..12 };
        let base = normalize_column(&x, &s).unwrap();
        let mut y = x.clone();
        y[11] = v;
        y[9] = -v;
        let z = normalize_column(&y, &s).unwrap();
        prop_assert_eq!(base[10].to_bits(), z[10].to_bits());
    }

    #[test]
    fn rsi_is_bounded(ch in prop::collection::vec(-5.0f64..5.0, 14)) {
        let r = rsi_from_changes(&ch);
        prop_assert!((0.0..=100.0).contains(&r));
    }

    #[test]
    fn indicator_invariants(seed in 0u64..10_000) {
        let ind = compute_indicators(&random_walk(seed, 80)).unwrap();
        for v in &ind.values {
            prop_assert!((0.0..=100.0).contains(&v.rsi));
            prop_assert!(v.rolling_vol >= 0.0);
        }
    }

    #[test]
    fn no_window_reads_warm_up_days(start in 0usize..60, len in 20usize..80, t in 1usize..20, h in 1usize..5) {
        if let Ok(ends) = window_ends(start..start + len, WARMUP_DAYS, t, h) {
            for e in ends {
                prop_assert!(e + 1 >= WARMUP_DAYS + t);
                prop_assert!(e >= start && e + h < start + len);
            }
        }
    }
}
