//! Aligned multi-stock dataset, forecast targets, windows and batches.

use std::ops::Range;

use chrono::NaiveDate;
use graphsent_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{
    normalize_expanding, raw_features, sample_std, DatasetSplit, FeatureMatrix, SplitPart, CLOSE,
    N_FEATURES,
};
use crate::graphstructure::{init_edges, MarketGraph};
use crate::nodeformer::{Inputs, Variant, FUSION_INPUTS, SENT_INPUTS};
use crate::sentiment::{DailyAggregator, DayPosts, SentimentFeature};
use crate::synthgen::{MarketSeries, SentimentStream};
use crate::{Error, Result};

/// Windows of the market-volatility inputs to the fusion gate.
pub const VOL_WINDOWS: [usize; 3] = [5, 10, 20];
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub tickers: Vec<String>,
    pub sectors: Vec<usize>,
    pub dates: Vec<NaiveDate>,
    /// Close price `[stock][day]`.
    pub close: Vec<Vec<f64>>,
    pub raw: FeatureMatrix,
    pub features: FeatureMatrix,
    /// Daily sentiment state `[stock][day]`.
    pub sentiment: Vec<Vec<SentimentFeature>>,
    pub has_sentiment: bool,
    pub split: DatasetSplit,
    pub warmup: usize,
    pub horizons: Vec<usize>,
    /// Training-period standard deviation of h-day returns `[stock][horizon]`.
    pub target_scale: Vec<Vec<f64>>,
    /// Cross-stock mean annualized volatility over 5/10/20 days, per day.
    pub market_vol: Vec<[f64; 3]>,
}

/// Strict up-move predicate shared by direction targets and accuracy.
pub fn is_up(prior: f64, later: f64) -> bool {
    later > prior
}

/// Sample standard deviation of `h`-day simple returns with both ends in `range`.
fn horizon_std(close: &[f64], range: Range<usize>, h: usize) -> f64 {
    let rets: Vec<f64> = range
        .clone()
        .filter(|&t| t + h < range.end)
        .map(|t| close[t + h] / close[t] - 1.0)
        .collect();
    sample_std(&rets)
}

/// Annualized sample volatility of the last `w` daily returns ending at `t`.
pub fn rolling_vol(close: &[f64], t: usize, w: usize) -> f64 {
    let lo = (t + 1).saturating_sub(w).max(1);
    if t < 1 {
        return 0.0;
    }
    let rets: Vec<f64> = (lo..=t).map(|k| close[k] / close[k - 1] - 1.0).collect();
    sample_std(&rets) * TRADING_DAYS.sqrt()
}

impl Dataset {
    /// Assembles a dataset; `sentiment` may be empty for a price-only run.
    pub fn build(
        market: &[MarketSeries],
        sentiment: &[SentimentStream],
        split: DatasetSplit,
        horizons: &[usize],
        warmup: usize,
        use_adjusted: bool,
    ) -> Result<Self> {
        let n = market.len();
        if n == 0 {
            return Err(Error::Input("empty market".into()));
        }
        let days = market[0].bars.len();
        if market.iter().any(|m| m.bars.len() != days || m.dates != market[0].dates) {
            return Err(Error::Input("market series are not aligned on dates".into()));
        }
        if split.n_days() != days {
            return Err(Error::Input(format!("split covers {} days, market has {days}", split.n_days())));
        }
        let mut raw = FeatureMatrix::zeros(days, n);
        for (i, m) in market.iter().enumerate() {
            for (t, row) in raw_features(m, use_adjusted)?.into_iter().enumerate() {
                for (k, v) in row.into_iter().enumerate() {
                    raw.set(t, i, k, v);
                }
            }
        }
        let features = normalize_expanding(&raw, &split)?;
        let close: Vec<Vec<f64>> = market.iter().map(|m| m.bars.iter().map(|b| b.close).collect()).collect();
        let dates = market[0].dates.clone();

        let has_sentiment = !sentiment.is_empty();
        let sent = market
            .iter()
            .map(|m| {
                let stream = sentiment.iter().find(|s| s.ticker == m.ticker);
                if has_sentiment && stream.is_none() {
                    return Err(Error::Input(format!("no sentiment stream for {}", m.ticker)));
                }
                let mut agg = DailyAggregator::new();
                let mut k = 0;
                Ok(dates
                    .iter()
                    .map(|d| {
                        let day = match stream {
                            Some(s) => {
                                while k < s.dates.len() && s.dates[k] < *d {
                                    k += 1;
                                }
                                if k < s.dates.len() && s.dates[k] == *d {
                                    let r = s.records[k];
                                    DayPosts::Posts {
                                        mean: r.score,
                                        count: r.post_count,
                                    }
                                } else if s.dates.first().is_some_and(|f| f <= d) {
                                    DayPosts::Posts { mean: 0.0, count: 0 }
                                } else {
                                    DayPosts::NoStream
                                }
                            }
                            None => DayPosts::NoStream,
                        };
                        agg.step(day)
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<SentimentFeature>>>>()?;

        let target_scale = close
            .iter()
            .map(|c| {
                horizons
                    .iter()
                    .map(|&h| {
                        let s = horizon_std(c, split.train.start.max(warmup)..split.train.end, h);
                        if s > 0.0 {
                            Ok(s)
                        } else {
                            Err(Error::Input(format!("zero training variance of {h}-day returns")))
                        }
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let market_vol = (0..days)
            .map(|t| {
                let mut v = [0.0; 3];
                for (k, &w) in VOL_WINDOWS.iter().enumerate() {
                    v[k] = close.iter().map(|c| rolling_vol(c, t, w)).sum::<f64>() / n as f64;
                }
                v
            })
            .collect();
        Ok(Self {
            tickers: market.iter().map(|m| m.ticker.clone()).collect(),
            sectors: market.iter().map(|m| m.sector).collect(),
            dates,
            close,
            raw,
            features,
            sentiment: sent,
            has_sentiment,
            split,
            warmup,
            horizons: horizons.to_vec(),
            target_scale,
            market_vol,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    /// Daily simple returns over the training split, `NaN` before warm-up.
    pub fn training_returns(&self) -> Vec<Vec<f64>> {
        self.close
            .iter()
            .map(|c| {
                self.split
                    .train
                    .clone()
                    .map(|t| if t == 0 { f64::NAN } else { c[t] / c[t - 1] - 1.0 })
                    .collect()
            })
            .collect()
    }

    pub fn init_graph(&self, alpha: f64) -> Result<MarketGraph> {
        init_edges(&self.training_returns(), &self.sectors, alpha)
    }

    /// Normalized `h`-day return target of stock `i` from day `t`.
    pub fn target(&self, i: usize, t: usize, hi: usize) -> f64 {
        let h = self.horizons[hi];
        (self.close[i][t + h] / self.close[i][t] - 1.0) / self.target_scale[i][hi]
    }

    /// Disables the sentiment path when the data carries no sentiment stream.
    pub fn effective_variant(&self, v: &Variant) -> Variant {
        Variant {
            sentiment: v.sentiment && self.has_sentiment,
            sentiment_only: v.sentiment_only && self.has_sentiment,
            ..*v
        }
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(1)
    }

    /// Forecast origins of one split part.
    pub fn windows(&self, part: SplitPart, seq_len: usize) -> Result<Vec<usize>> {
        window_ends(self.split.range(part), self.warmup, seq_len, self.max_horizon())
    }

    /// Model inputs for windows ending at each of `ends`.
    pub fn inputs(&self, ends: &[usize], seq_len: usize) -> Result<Inputs> {
        let n = self.n_stocks();
        let b = ends.len();
        let t = seq_len;
        let mut x = Vec::with_capacity(b * t * n * N_FEATURES);
        let mut s1 = Vec::with_capacity(b * n * t);
        let mut sent_in = Vec::with_capacity(b * n * SENT_INPUTS);
        let mut fusion_in = Vec::with_capacity(b * FUSION_INPUTS);
        for &end in ends {
            if end + 1 < t {
                return Err(Error::Input(format!("window ending at {end} is shorter than {t} days")));
            }
            let start = end + 1 - t;
            for day in start..=end {
                for i in 0..n {
                    x.extend_from_slice(self.features.row(day, i));
                }
            }
            for i in 0..n {
                for day in start..=end {
                    s1.push(self.sentiment[i][day].s1);
                }
            }
            for i in 0..n {
                let s = &self.sentiment[i][end];
                sent_in.extend_from_slice(&[s.s1, s.s5, s.s20, self.features.get(end, i, CLOSE)]);
            }
            fusion_in.extend_from_slice(&self.market_vol[end]);
            fusion_in.push((0..n).map(|i| self.sentiment[i][end].s1.abs()).sum::<f64>() / n as f64);
        }
        Ok(Inputs {
            x: Tensor::new(&[b, t, n, N_FEATURES], x)?,
            s1: Tensor::new(&[b, n, t], s1)?,
            sent_in: Tensor::new(&[b, n, SENT_INPUTS], sent_in)?,
            fusion_in: Tensor::new(&[b, FUSION_INPUTS], fusion_in)?,
        })
    }

    /// Normalized targets and direction labels `[B, N, H]`.
    pub fn targets(&self, ends: &[usize]) -> Result<(Tensor, Tensor)> {
        let n = self.n_stocks();
        let nh = self.horizons.len();
        let mut z = Vec::with_capacity(ends.len() * n * nh);
        let mut up = Vec::with_capacity(ends.len() * n * nh);
        for &t in ends {
            if t + self.max_horizon() >= self.n_days() {
                return Err(Error::Input(format!("targets of day {t} fall outside the data")));
            }
            for i in 0..n {
                for hi in 0..nh {
                    z.push(self.target(i, t, hi));
                    let later = self.close[i][t + self.horizons[hi]];
                    up.push(if is_up(self.close[i][t], later) { 1.0 } else { 0.0 });
                }
            }
        }
        Ok((Tensor::new(&[ends.len(), n, nh], z)?, Tensor::new(&[ends.len(), n, nh], up)?))
    }
}

/// Forecast origins `t` in `range` whose input span `t-T+1..=t` starts at or
/// after `warmup` and whose furthest target `t + max_h` stays in `range`.
pub fn window_ends(range: Range<usize>, warmup: usize, seq_len: usize, max_h: usize) -> Result<Vec<usize>> {
    if seq_len == 0 || seq_len > range.len() {
        return Err(Error::Config(format!(
            "sequence length {seq_len} does not fit a split of {} days",
            range.len()
        )));
    }
    let first = range.start.max(warmup + seq_len - 1);
    Ok((first..range.end).filter(|&t| t + max_h < range.end).collect())
}

/// Deterministic shuffle of window origins.
pub fn shuffled(ends: &[usize], seed: u64) -> Vec<usize> {
    let mut v = ends.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
