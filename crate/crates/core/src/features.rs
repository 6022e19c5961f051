//! Imputation, technical indicators, expanding normalization and temporal
//! partitioning.

use std::ops::Range;

use chrono::NaiveDate;

use crate::synthgen::{MarketSeries, OhlcvBar};
use crate::{Error, Result};

/// Number of features per (day, stock): 6 raw variables and 11 indicators.
pub const N_FEATURES: usize = 17;
/// Number of raw OHLCV-derived columns at the front of a feature vector.
pub const N_RAW: usize = 6;
/// Column of the close price in a feature vector.
pub const CLOSE: usize = 3;
/// Days before every indicator window (the 26-day EMA of MACD) is full.
pub const WARMUP_DAYS: usize = 26;
/// Floor below which a standard deviation is treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-8;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "open",
    "high",
    "low",
    "close",
    "adj_close",
    "volume",
    "sma5",
    "sma10",
    "sma20",
    "ema5",
    "ema10",
    "ema20",
    "rsi",
    "macd",
    "daily_return",
    "log_return",
    "rolling_vol",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputeMode {
    /// Short gaps (up to two days) interpolated, longer gaps forward-filled.
    Train,
    /// Forward-fill only.
    Eval,
}

/// Fills gaps (`None`) in one column and returns the values with a mask of
/// imputed cells.
pub fn impute_column(values: &[Option<f64>], mode: ImputeMode) -> Result<(Vec<f64>, Vec<bool>)> {
    if values.first().is_some_and(|v| v.is_none()) {
        return Err(Error::Imputation("series starts with a gap; no anchor value".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut mask = vec![false; values.len()];
    let mut t = 0;
    while t < values.len() {
        if let Some(v) = values[t] {
            out.push(v);
            t += 1;
            continue;
        }
        let start = t;
        while t < values.len() && values[t].is_none() {
            t += 1;
        }
        let len = t - start;
        let anchor = out[start - 1];
        let next = values.get(t).copied().flatten();
        for k in 0..len {
            let v = match (mode, next) {
                (ImputeMode::Train, Some(nv)) if len <= 2 => {
                    anchor + (nv - anchor) * (k + 1) as f64 / (len + 1) as f64
                }
                _ => anchor,
            };
            out.push(v);
            mask[start + k] = true;
        }
    }
    Ok((out, mask))
}

/// Imputes every field of missing bars; the mask marks imputed days.
pub fn impute_series(bars: &[Option<OhlcvBar>], mode: ImputeMode) -> Result<(Vec<OhlcvBar>, Vec<bool>)> {
    let field = |f: fn(&OhlcvBar) -> f64| -> Result<Vec<f64>> {
        let col: Vec<Option<f64>> = bars.iter().map(|b| b.as_ref().map(f)).collect();
        Ok(impute_column(&col, mode)?.0)
    };
    let open = field(|b| b.open)?;
    let high = field(|b| b.high)?;
    let low = field(|b| b.low)?;
    let close = field(|b| b.close)?;
    let adj = field(|b| b.adj_close)?;
    let vol = field(|b| b.volume)?;
    let out = (0..bars.len())
        .map(|t| OhlcvBar {
            open: open[t],
            high: high[t],
            low: low[t],
            close: close[t],
            adj_close: adj[t],
            volume: vol[t],
        })
        .collect();
    Ok((out, bars.iter().map(|b| b.is_none()).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorVector {
    pub sma5: f64,
    pub sma10: f64,
    pub sma20: f64,
    pub ema5: f64,
    pub ema10: f64,
    pub ema20: f64,
    pub rsi: f64,
    pub macd: f64,
    pub daily_return: f64,
    pub log_return: f64,
    pub rolling_vol: f64,
}

impl IndicatorVector {
    pub fn to_array(&self) -> [f64; 11] {
        [
            self.sma5,
            self.sma10,
            self.sma20,
            self.ema5,
            self.ema10,
            self.ema20,
            self.rsi,
            self.macd,
            self.daily_return,
            self.log_return,
            self.rolling_vol,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Indicators {
    pub values: Vec<IndicatorVector>,
    /// MACD signal line (9-day EMA of MACD); kept outside the feature vector.
    pub macd_signal: Vec<f64>,
    /// True for days whose longest indicator window is incomplete.
    pub warmup: Vec<bool>,
}

fn ema(x: &[f64], n: usize) -> Vec<f64> {
    let a = 2.0 / (n as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut e = x[0];
    for &v in x {
        e = a * v + (1.0 - a) * e;
        out.push(e);
    }
    out
}

/// Mean of `x[t+1-n ..= t]`, truncated at the series start.
fn sma(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut sum = 0.0;
    for t in 0..x.len() {
        sum += x[t];
        if t >= n {
            sum -= x[t - n];
        }
        // Re-sum periodically to stop drift from the running update.
        if t % 256 == 255 {
            sum = x[(t + 1).saturating_sub(n)..=t].iter().sum();
        }
        out.push(sum / n.min(t + 1) as f64);
    }
    out
}

/// Relative strength index from simple 14-day averages of gains and losses.
pub fn rsi_from_changes(changes: &[f64]) -> f64 {
    let n = changes.len().max(1) as f64;
    let gain = changes.iter().filter(|&&d| d > 0.0).sum::<f64>() / n;
    let loss = -changes.iter().filter(|&&d| d < 0.0).sum::<f64>() / n;
    if loss == 0.0 {
        if gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + gain / loss)
    }
}

/// Sample standard deviation; zero with fewer than two points.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// The 11 technical indicators for every day of a close-price series.
pub fn compute_indicators(close: &[f64]) -> Result<Indicators> {
    if close.len() <= WARMUP_DAYS {
        return Err(Error::Feature(format!(
            "series of {} days is shorter than the {}-day warm-up",
            close.len(),
            WARMUP_DAYS + 1
        )));
    }
    if close.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(Error::Feature("close prices must be positive and finite".into()));
    }
    let sma5 = sma(close, 5);
    let sma10 = sma(close, 10);
    let sma20 = sma(close, 20);
    let ema5 = ema(close, 5);
    let ema10 = ema(close, 10);
    let ema20 = ema(close, 20);
    let ema12 = ema(close, 12);
    let ema26 = ema(close, 26);
    let macd: Vec<f64> = ema12.iter().zip(&ema26).map(|(a, b)| a - b).collect();
    let macd_signal = ema(&macd, 9);
    let ret: Vec<f64> = (0..close.len())
        .map(|t| if t == 0 { 0.0 } else { close[t] / close[t - 1] - 1.0 })
        .collect();
    let changes: Vec<f64> = (0..close.len())
        .map(|t| if t == 0 { 0.0 } else { close[t] - close[t - 1] })
        .collect();
    let values = (0..close.len())
        .map(|t| {
            let lo = t.saturating_sub(13).max(1);
            let rsi = if t == 0 { 50.0 } else { rsi_from_changes(&changes[lo..=t]) };
            let vlo = t.saturating_sub(19).max(1);
            let rolling_vol = if t == 0 { 0.0 } else { sample_std(&ret[vlo..=t]) };
            IndicatorVector {
                sma5: sma5[t],
                sma10: sma10[t],
                sma20: sma20[t],
                ema5: ema5[t],
                ema10: ema10[t],
                ema20: ema20[t],
                rsi,
                macd: macd[t],
                daily_return: ret[t],
                log_return: if t == 0 { 0.0 } else { (close[t] / close[t - 1]).ln() },
                rolling_vol,
            }
        })
        .collect();
    Ok(Indicators {
        values,
        macd_signal,
        warmup: (0..close.len()).map(|t| t < WARMUP_DAYS).collect(),
    })
}

/// Raw 17-column feature rows for one stock. Indicators are computed from
/// the close unless `use_adjusted` is set.
pub fn raw_features(series: &MarketSeries, use_adjusted: bool) -> Result<Vec<[f64; N_FEATURES]>> {
    let px: Vec<f64> = series
        .bars
        .iter()
        .map(|b| if use_adjusted { b.adj_close } else { b.close })
        .collect();
    let ind = compute_indicators(&px)?;
    Ok(series
        .bars
        .iter()
        .zip(&ind.values)
        .map(|(b, iv)| {
            let mut row = [0.0; N_FEATURES];
            row[..N_RAW].copy_from_slice(&[b.open, b.high, b.low, b.close, b.adj_close, b.volume]);
            row[N_RAW..].copy_from_slice(&iv.to_array());
            row
        })
        .collect())
}

/// Contiguous chronological day ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl DatasetSplit {
    pub fn part_of(&self, t: usize) -> Option<SplitPart> {
        if self.train.contains(&t) {
            Some(SplitPart::Train)
        } else if self.val.contains(&t) {
            Some(SplitPart::Val)
        } else if self.test.contains(&t) {
            Some(SplitPart::Test)
        } else {
            None
        }
    }

    pub fn range(&self, part: SplitPart) -> Range<usize> {
        match part {
            SplitPart::Train => self.train.clone(),
            SplitPart::Val => self.val.clone(),
            SplitPart::Test => self.test.clone(),
        }
    }

    pub fn n_days(&self) -> usize {
        self.test.end
    }
}

/// Splits `n_days` by fractions at `round(f1 n)` and `round((f1 + f2) n)`.
pub fn partition_dataset(n_days: usize, fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    let (a, b, c) = fractions;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(Error::Config(format!("split fractions must be positive: {fractions:?}")));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must sum to 1: {fractions:?}")));
    }
    let n = n_days as f64;
    let e1 = (a * n).round() as usize;
    let e2 = ((a + b) * n).round() as usize;
    if e1 == 0 || e2 <= e1 || e2 >= n_days {
        return Err(Error::Config(format!("{n_days} days cannot hold a non-empty three-way split")));
    }
    Ok(DatasetSplit {
        train: 0..e1,
        val: e1..e2,
        test: e2..n_days,
    })
}

/// Splits at explicit calendar cuts: validation starts at the first date
/// `>= val_start`, test at the first date `>= test_start`.
pub fn partition_by_dates(dates: &[NaiveDate], val_start: NaiveDate, test_start: NaiveDate) -> Result<DatasetSplit> {
    if val_start >= test_start {
        return Err(Error::Config("validation must start before test".into()));
    }
    let e1 = dates.partition_point(|d| *d < val_start);
    let e2 = dates.partition_point(|d| *d < test_start);
    if e1 == 0 || e2 <= e1 || e2 >= dates.len() {
        return Err(Error::Config("date cuts leave an empty split".into()));
    }
    Ok(DatasetSplit {
        train: 0..e1,
        val: e1..e2,
        test: e2..dates.len(),
    })
}

/// Expanding-window z-score of one column. Train and validation days use
/// statistics over days `0..=t`; test days use the full training range.
pub fn normalize_column(x: &[f64], split: &DatasetSplit) -> Result<Vec<f64>> {
    if split.train.is_empty() {
        return Err(Error::Normalization("empty training range".into()));
    }
    if x.len() < split.n_days() {
        return Err(Error::Normalization(format!(
            "column has {} days, split needs {}",
            x.len(),
            split.n_days()
        )));
    }
    let z = |v: f64, mean: f64, sd: f64| if sd < SIGMA_FLOOR { 0.0 } else { (v - mean) / sd };
    let mut out = vec![0.0; split.n_days()];
    // Welford's running mean and sum of squared deviations.
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    let mut frozen = (0.0, 0.0);
    for t in 0..split.test.start {
        n += 1.0;
        let d = x[t] - mean;
        mean += d / n;
        m2 += d * (x[t] - mean);
        let sd = if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 };
        out[t] = z(x[t], mean, sd);
        if t + 1 == split.train.end {
            frozen = (mean, sd);
        }
    }
    for t in split.test.clone() {
        out[t] = z(x[t], frozen.0, frozen.1);
    }
    Ok(out)
}

/// Day-major array `[day][stock][feature]` stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n_days: usize,
    pub n_stocks: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(n_days: usize, n_stocks: usize) -> Self {
        Self {
            n_days,
            n_stocks,
            data: vec![0.0; n_days * n_stocks * N_FEATURES],
        }
    }

    pub fn get(&self, t: usize, i: usize, k: usize) -> f64 {
        self.data[(t * self.n_stocks + i) * N_FEATURES + k]
    }

    pub fn set(&mut self, t: usize, i: usize, k: usize, v: f64) {
        self.data[(t * self.n_stocks + i) * N_FEATURES + k] = v;
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let o = (t * self.n_stocks + i) * N_FEATURES;
        &self.data[o..o + N_FEATURES]
    }

    pub fn column(&self, i: usize, k: usize) -> Vec<f64> {
        (0..self.n_days).map(|t| self.get(t, i, k)).collect()
    }
}

/// Normalizes every (stock, feature) column independently.
pub fn normalize_expanding(raw: &FeatureMatrix, split: &DatasetSplit) -> Result<FeatureMatrix> {
    let mut out = FeatureMatrix::zeros(split.n_days(), raw.n_stocks);
    for i in 0..raw.n_stocks {
        for k in 0..N_FEATURES {
            let col = normalize_column(&raw.column(i, k), split)?;
            for (t, v) in col.into_iter().enumerate() {
                out.set(t, i, k, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sma_resum_matches_direct_mean() {
        let x: Vec<f64> = (0..600).map(|i| (i as f64 * 0.37).sin() * 100.0 + 500.0).collect();
        let s = sma(&x, 20);
        for t in 19..600 {
            let direct = x[t - 19..=t].iter().sum::<f64>() / 20.0;
            assert!((s[t] - direct).abs() < 1e-10);
        }
    }
}
