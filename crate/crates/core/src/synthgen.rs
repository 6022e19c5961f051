//! Synthetic market and sentiment data with planted structure.
//!
//! Every random draw comes from a ChaCha stream addressed by
//! `(seed, purpose, entity, day)`, so a stock's path does not depend on the
//! order in which stocks are generated.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_sectors: usize,
    pub sector_factor_strength: f64,
    /// Daily log-return standard deviation of each volatility regime.
    pub regime_vol_levels: Vec<f64>,
    /// Daily probability of leaving the current regime.
    pub regime_switch_prob: f64,
    /// AR(1) coefficient on daily log-returns.
    pub ar_coefficient: f64,
    pub sentiment_lead_strength: f64,
    /// Standard deviation of the additive noise on daily sentiment scores.
    pub sentiment_noise: f64,
    /// First day with a sentiment record; earlier days have none.
    pub sentiment_start_day: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 6,
            n_days: 700,
            n_sectors: 2,
            sector_factor_strength: 0.8,
            regime_vol_levels: vec![0.008, 0.015, 0.03],
            regime_switch_prob: 0.02,
            ar_coefficient: 0.3,
            sentiment_lead_strength: 0.7,
            sentiment_noise: 0.3,
            sentiment_start_day: 0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stocks == 0 || self.n_days == 0 {
            return Err(Error::Config("n_stocks and n_days must be positive".into()));
        }
        if self.n_sectors == 0 {
            return Err(Error::Config("n_sectors must be positive".into()));
        }
        for (name, v) in [
            ("sector_factor_strength", self.sector_factor_strength),
            ("sentiment_lead_strength", self.sentiment_lead_strength),
            ("regime_switch_prob", self.regime_switch_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.regime_vol_levels.is_empty() || self.regime_vol_levels.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("regime_vol_levels must be positive and non-empty".into()));
        }
        if !(self.ar_coefficient.abs() < 1.0) {
            return Err(Error::Config("ar_coefficient must lie in (-1,1)".into()));
        }
        if !(self.sentiment_noise >= 0.0) {
            return Err(Error::Config("sentiment_noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OhlcvBar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketSeries {
    pub ticker: String,
    pub sector: usize,
    pub dates: Vec<NaiveDate>,
    pub bars: Vec<OhlcvBar>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentimentRecord {
    pub score: f64,
    pub post_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentimentStream {
    pub ticker: String,
    pub dates: Vec<NaiveDate>,
    pub records: Vec<SentimentRecord>,
}

const STREAM_REGIME: u64 = 1;
const STREAM_SECTOR: u64 = 2;
const STREAM_STOCK: u64 = 3;
const STREAM_SENTIMENT: u64 = 4;
const STREAM_INIT: u64 = 5;

/// Random source for one (purpose, entity, day) cell.
fn cell_rng(seed: u64, purpose: u64, entity: u64, day: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | entity);
    rng.set_word_pos(day as u128 * 64);
    rng
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn ticker_name(i: usize) -> String {
    format!("S{i:03}")
}

/// `n` consecutive weekdays starting 2000-01-03.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Market-wide volatility regime index per day (Markov switching).
pub fn regime_path(cfg: &SynthConfig) -> Vec<usize> {
    let k = cfg.regime_vol_levels.len();
    let mut state = 0usize;
    let mut out = Vec::with_capacity(cfg.n_days);
    for day in 0..cfg.n_days {
        let mut rng = cell_rng(cfg.seed, STREAM_REGIME, 0, day);
        if day > 0 && k > 1 && rng.gen::<f64>() < cfg.regime_switch_prob {
            let step = 1 + rng.gen_range(0..k - 1);
            state = (state + step) % k;
        }
        out.push(state);
    }
    out
}

/// Daily log-returns `r[i][t]` and the per-day volatility `sigma[t]`.
pub fn log_returns(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let sigma: Vec<f64> = regime_path(cfg)
        .into_iter()
        .map(|s| cfg.regime_vol_levels[s])
        .collect();
    let factors: Vec<Vec<f64>> = (0..cfg.n_sectors)
        .map(|s| {
            (0..cfg.n_days)
                .map(|t| normal(&mut cell_rng(cfg.seed, STREAM_SECTOR, s as u64, t)))
                .collect()
        })
        .collect();
    let a = cfg.sector_factor_strength.sqrt();
    let b = (1.0 - cfg.sector_factor_strength).sqrt();
    let rets = (0..cfg.n_stocks)
        .map(|i| {
            let f = &factors[i % cfg.n_sectors];
            let mut prev = 0.0;
            (0..cfg.n_days)
                .map(|t| {
                    let eps = normal(&mut cell_rng(cfg.seed, STREAM_STOCK, i as u64, t));
                    let r = if t == 0 {
                        0.0
                    } else {
                        cfg.ar_coefficient * prev + sigma[t] * (a * f[t] + b * eps)
                    };
                    prev = r;
                    r
                })
                .collect()
        })
        .collect();
    (rets, sigma)
}

pub fn generate_market(cfg: &SynthConfig) -> Result<Vec<MarketSeries>> {
    cfg.validate()?;
    let dates = business_days(cfg.n_days);
    let (rets, sigma) = log_returns(cfg);
    let out = rets
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut init = cell_rng(cfg.seed, STREAM_INIT, i as u64, 0);
            let mut close = 20.0 + 80.0 * init.gen::<f64>();
            let base_volume = 1e5 * (1.0 + 9.0 * init.gen::<f64>());
            let bars = (0..cfg.n_days)
                .map(|t| {
                    let mut rng = cell_rng(cfg.seed, STREAM_STOCK, i as u64, t);
                    // The first draw is the return innovation.
                    let _ = normal(&mut rng);
                    let prev = close;
                    close = prev * r[t].exp();
                    let s = sigma[t];
                    let open = prev * (0.25 * s * normal(&mut rng)).exp();
                    let high = open.max(close) * (0.5 * s * normal(&mut rng).abs()).exp();
                    let low = open.min(close) * (-0.5 * s * normal(&mut rng).abs()).exp();
                    let volume =
                        (base_volume * (0.3 * normal(&mut rng) + 10.0 * r[t].abs()).exp()).round();
                    OhlcvBar {
                        open,
                        high,
                        low,
                        close,
                        adj_close: close,
                        volume,
                    }
                })
                .collect();
            MarketSeries {
                ticker: ticker_name(i),
                sector: i % cfg.n_sectors,
                dates: dates.clone(),
                bars,
            }
        })
        .collect();
    Ok(out)
}

/// Daily sentiment whose score leads the next day's return.
///
/// `score_t = clamp(lead * tanh(2 r_{t+1} / sigma_{t+1}) + noise * eps, -1, 1)`.
/// Roughly 4% of days carry no posts and 6% carry one to four.
pub fn generate_sentiment(
    cfg: &SynthConfig,
    market: &[MarketSeries],
) -> Result<Vec<SentimentStream>> {
    cfg.validate()?;
    if market.len() != cfg.n_stocks || market.iter().any(|m| m.bars.len() != cfg.n_days) {
        return Err(Error::Input(format!(
            "market has {} series; expected {} series of {} days",
            market.len(),
            cfg.n_stocks,
            cfg.n_days
        )));
    }
    let sigma: Vec<f64> = regime_path(cfg)
        .into_iter()
        .map(|s| cfg.regime_vol_levels[s])
        .collect();
    let start = cfg.sentiment_start_day.min(cfg.n_days);
    let out = market
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let records = (start..cfg.n_days)
                .map(|t| {
                    let mut rng = cell_rng(cfg.seed, STREAM_SENTIMENT, i as u64, t);
                    let eps = normal(&mut rng);
                    let lead = if t + 1 < cfg.n_days {
                        let r = (m.bars[t + 1].close / m.bars[t].close).ln();
                        (2.0 * r / sigma[t + 1]).tanh()
                    } else {
                        0.0
                    };
                    let score =
                        (cfg.sentiment_lead_strength * lead + cfg.sentiment_noise * eps).clamp(-1.0, 1.0);
                    let u: f64 = rng.gen();
                    let post_count = if u < 0.04 {
                        0
                    } else if u < 0.10 {
                        rng.gen_range(1..5)
                    } else {
                        rng.gen_range(5..40)
                    };
                    SentimentRecord { score, post_count }
                })
                .collect();
            SentimentStream {
                ticker: m.ticker.clone(),
                dates: m.dates[start..].to_vec(),
                records,
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(6);
        assert_eq!(d[0], NaiveDate::from_ymd_opt(2000, 1, 3).unwrap());
        assert_eq!(d[5], NaiveDate::from_ymd_opt(2000, 1, 10).unwrap());
    }

    #[test]
    fn rejects_empty_universe() {
        let cfg = SynthConfig {
            n_stocks: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_market(&cfg), Err(Error::Config(_))));
    }
}
