//! Forecast metrics, significance tests, regime buckets and the ablation
//! harness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{is_up, Dataset};
use crate::features::SplitPart;
use crate::nodeformer::{Ablation, Model, ModelConfig};
use crate::training::{predict, train, Forecast, TrainConfig, TrainReport};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMetrics {
    /// Percent.
    pub mape: f64,
    pub rmse: f64,
    pub da: f64,
}

fn check_prices(fc: &[&Forecast]) -> Result<()> {
    if fc.is_empty() {
        return Err(Error::Metric("no forecasts".into()));
    }
    if let Some(f) = fc.iter().find(|f| f.y_true == 0.0) {
        return Err(Error::Metric(format!(
            "actual price is zero (stock {}, day {}); MAPE undefined",
            f.stock, f.origin
        )));
    }
    Ok(())
}

/// Whether the forecast direction matches the realized direction.
pub fn direction_hit(f: &Forecast) -> bool {
    is_up(f.y_prior, f.y_pred) == is_up(f.y_prior, f.y_true)
}

pub fn point_metrics(fc: &[&Forecast]) -> Result<PointMetrics> {
    check_prices(fc)?;
    let n = fc.len() as f64;
    let mape = 100.0 / n * fc.iter().map(|f| ((f.y_true - f.y_pred) / f.y_true).abs()).sum::<f64>();
    let rmse = (fc.iter().map(|f| (f.y_true - f.y_pred).powi(2)).sum::<f64>() / n).sqrt();
    let da = fc.iter().filter(|f| direction_hit(f)).count() as f64 / n;
    Ok(PointMetrics { mape, rmse, da })
}

/// `sqrt(sum (y - yhat)^2) / sqrt(sum (y - y_prior)^2)`.
pub fn theils_u(fc: &[&Forecast]) -> Result<f64> {
    if fc.is_empty() {
        return Err(Error::Metric("no forecasts".into()));
    }
    let num: f64 = fc.iter().map(|f| (f.y_true - f.y_pred).powi(2)).sum();
    let den: f64 = fc.iter().map(|f| (f.y_true - f.y_prior).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::Metric("flat actual series; Theil's U undefined".into()));
    }
    Ok((num / den).sqrt())
}

/// Mean absolute return error in percent: `100 * mean |yhat - y| / y_prior`.
pub fn return_mae(fc: &[&Forecast]) -> Result<f64> {
    if fc.is_empty() {
        return Err(Error::Metric("no forecasts".into()));
    }
    Ok(100.0 * fc.iter().map(|f| ((f.y_pred - f.y_true) / f.y_prior).abs()).sum::<f64>() / fc.len() as f64)
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman correlation with average ranks; `None` for a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcReport {
    /// `(origin day, IC)` per usable day.
    pub daily: Vec<(usize, f64)>,
    pub mean: f64,
    pub skipped: usize,
}

/// Per-day cross-sectional Spearman correlation of predicted and realized
/// returns, averaged over days.
pub fn information_coefficient(fc: &[&Forecast]) -> Result<IcReport> {
    let mut days: BTreeMap<usize, Vec<&Forecast>> = BTreeMap::new();
    for f in fc {
        days.entry(f.origin).or_default().push(f);
    }
    let mut daily = Vec::new();
    let mut skipped = 0;
    for (day, mut v) in days {
        if v.len() < 3 {
            return Err(Error::Metric(format!("day {day} has {} stocks, need 3", v.len())));
        }
        v.sort_by_key(|f| f.stock);
        let p: Vec<f64> = v.iter().map(|f| f.y_pred / f.y_prior - 1.0).collect();
        let r: Vec<f64> = v.iter().map(|f| f.y_true / f.y_prior - 1.0).collect();
        match spearman(&p, &r) {
            Some(ic) => daily.push((day, ic)),
            None => skipped += 1,
        }
    }
    let mean = if daily.is_empty() {
        f64::NAN
    } else {
        daily.iter().map(|d| d.1).sum::<f64>() / daily.len() as f64
    };
    Ok(IcReport { daily, mean, skipped })
}

/// Mean absolute percentage error per origin day, in day order.
pub fn daily_abs_errors(fc: &[&Forecast]) -> Vec<(usize, f64)> {
    let mut days: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for f in fc {
        let e = days.entry(f.origin).or_default();
        e.0 += ((f.y_true - f.y_pred) / f.y_true).abs() * 100.0;
        e.1 += 1;
    }
    days.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Significance {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub t_p: f64,
    pub cohens_d: f64,
    /// `None` when the long-run variance is zero.
    pub dm: Option<f64>,
    pub dm_p: Option<f64>,
}

/// Newey-West long-run variance with Bartlett weights.
pub fn newey_west(d: &[f64], lag: usize) -> f64 {
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let gamma = |k: usize| (k..d.len()).map(|t| (d[t] - m) * (d[t - k] - m)).sum::<f64>() / n;
    let mut v = gamma(0);
    for k in 1..=lag.min(d.len().saturating_sub(1)) {
        v += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * gamma(k);
    }
    v
}

/// Paired t-test, Cohen's d and the Diebold-Mariano statistic on the loss
/// differential `|e_a| - |e_b|`. Negative statistics favour `a`.
pub fn significance_tests(err_a: &[f64], err_b: &[f64], h: usize) -> Result<Significance> {
    if err_a.len() != err_b.len() {
        return Err(Error::Metric(format!("{} vs {} errors", err_a.len(), err_b.len())));
    }
    if err_a.len() < 30 {
        return Err(Error::Metric(format!("need at least 30 paired errors, got {}", err_a.len())));
    }
    if h == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let d: Vec<f64> = err_a.iter().zip(err_b).map(|(a, b)| a.abs() - b.abs()).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    // Rounding noise around a constant differential counts as zero variance.
    let (t, t_p, cohens_d) = if sd > 1e-12 * mean.abs() && sd > 0.0 {
        let t = mean / (sd / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Metric(e.to_string()))?;
        (t, 2.0 * dist.cdf(-t.abs()), mean / sd)
    } else if mean == 0.0 {
        (0.0, 1.0, 0.0)
    } else {
        return Err(Error::Degenerate(format!("constant loss differential {mean}")));
    };
    let lrv = newey_west(&d, h - 1);
    let (dm, dm_p) = if lrv > 0.0 && lrv.sqrt() > 1e-12 * mean.abs() {
        let s = mean / (lrv / n).sqrt();
        let z = Normal::standard();
        (Some(s), Some(2.0 * z.cdf(-s.abs())))
    } else {
        (None, None)
    };
    Ok(Significance {
        n: d.len(),
        mean_diff: mean,
        t,
        t_p,
        cohens_d,
        dm,
        dm_p,
    })
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Percentile interval of directional accuracy over days resampled with
/// replacement.
pub fn bootstrap_da_ci(fc: &[&Forecast], n_boot: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if n_boot < 1000 {
        return Err(Error::Config(format!("need at least 1000 bootstrap draws, got {n_boot}")));
    }
    if !(0.0..1.0).contains(&level) || level == 0.0 {
        return Err(Error::Config(format!("confidence level must be in (0,1), got {level}")));
    }
    let mut days: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for f in fc {
        let e = days.entry(f.origin).or_default();
        e.0 += direction_hit(f) as usize;
        e.1 += 1;
    }
    let days: Vec<(usize, usize)> = days.into_values().collect();
    if days.is_empty() {
        return Err(Error::Metric("no forecasts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            let (mut hit, mut tot) = (0, 0);
            for _ in 0..days.len() {
                let d = days[rng.gen_range(0..days.len())];
                hit += d.0;
                tot += d.1;
            }
            hit as f64 / tot as f64
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&stats, a), quantile_sorted(&stats, 1.0 - a)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Regime {
    Low,
    Medium,
    High,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Low => "low",
            Regime::Medium => "medium",
            Regime::High => "high",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeBucket {
    pub regime: Regime,
    pub days: usize,
    pub forecasts: usize,
    /// `None` for an empty bucket.
    pub metrics: Option<PointMetrics>,
}

/// Buckets origin days by a volatility proxy: low below `thresholds.0`,
/// high at or above `thresholds.1`.
pub fn regime_report(fc: &[&Forecast], proxy: &BTreeMap<usize, f64>, thresholds: (f64, f64)) -> Result<Vec<RegimeBucket>> {
    let mut buckets: BTreeMap<Regime, (Vec<&Forecast>, std::collections::BTreeSet<usize>)> = BTreeMap::new();
    for r in [Regime::Low, Regime::Medium, Regime::High] {
        buckets.insert(r, Default::default());
    }
    for f in fc {
        let v = *proxy
            .get(&f.origin)
            .ok_or_else(|| Error::Metric(format!("no volatility proxy for day {}", f.origin)))?;
        let r = if v < thresholds.0 {
            Regime::Low
        } else if v < thresholds.1 {
            Regime::Medium
        } else {
            Regime::High
        };
        let b = buckets.get_mut(&r).expect("all regimes present");
        b.0.push(f);
        b.1.insert(f.origin);
    }
    buckets
        .into_iter()
        .map(|(regime, (v, days))| {
            Ok(RegimeBucket {
                regime,
                days: days.len(),
                forecasts: v.len(),
                metrics: if v.is_empty() { None } else { Some(point_metrics(&v)?) },
            })
        })
        .collect()
}

/// 33rd and 67th percentiles of a proxy series.
pub fn tercile_thresholds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Metric("empty proxy series".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&s, 0.33), quantile_sorted(&s, 0.67)))
}

/// Market volatility proxy (cross-stock mean 20-day annualized volatility).
pub fn volatility_proxy(ds: &Dataset) -> BTreeMap<usize, f64> {
    ds.market_vol.iter().enumerate().map(|(t, v)| (t, v[2])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonReport {
    pub horizon: usize,
    pub metrics: PointMetrics,
    pub da_ci: (f64, f64),
    pub theils_u: f64,
    pub ic: f64,
    pub ic_skipped: usize,
    pub return_mae: f64,
}

pub fn select(fc: &[Forecast], horizon: usize) -> Vec<&Forecast> {
    fc.iter().filter(|f| f.horizon == horizon).collect()
}

/// Metrics for each horizon present in `fc`.
pub fn evaluate(fc: &[Forecast], n_boot: usize, level: f64, seed: u64) -> Result<Vec<HorizonReport>> {
    let horizons: std::collections::BTreeSet<usize> = fc.iter().map(|f| f.horizon).collect();
    horizons
        .into_iter()
        .map(|h| {
            let sel = select(fc, h);
            let ic = information_coefficient(&sel)?;
            Ok(HorizonReport {
                horizon: h,
                metrics: point_metrics(&sel)?,
                da_ci: bootstrap_da_ci(&sel, n_boot, level, seed)?,
                theils_u: theils_u(&sel)?,
                ic: ic.mean,
                ic_skipped: ic.skipped,
                return_mae: return_mae(&sel)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub ablation: Ablation,
    pub result: std::result::Result<AblationRun, String>,
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub metrics: PointMetrics,
    pub report: TrainReport,
    pub forecasts: Vec<Forecast>,
    pub model: Model,
}

/// Trains and tests every configuration with the same seed and data. A
/// failing variant is recorded and the suite continues.
pub fn ablation_suite(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    e0: &[f64],
    seed: u64,
    configs: &[Ablation],
) -> Result<Vec<AblationOutcome>> {
    let test = ds.windows(SplitPart::Test, model_cfg.seq_len)?;
    let h = ds.horizons[0];
    Ok(configs
        .iter()
        .map(|&ablation| {
            let run = || -> Result<AblationRun> {
                let variant = ablation.variant();
                let mut model = Model::new(model_cfg.clone(), e0, seed)?;
                let report = train(&mut model, ds, train_cfg, &variant)?;
                let forecasts = predict(&model, ds, &test, &variant)?;
                let metrics = point_metrics(&select(&forecasts, h))?;
                Ok(AblationRun {
                    metrics,
                    report,
                    forecasts,
                    model,
                })
            };
            AblationOutcome {
                ablation,
                result: run().map_err(|e| e.to_string()),
            }
        })
        .collect())
}
