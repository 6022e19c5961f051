//! Daily-rebalanced long-short portfolio with proportional costs.

use crate::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;

/// `+1/(2k)` on the top `k` predicted returns, `-1/(2k)` on the bottom `k`.
/// Ties keep ticker (index) order: among equal predictions the lower index
/// ranks higher.
pub fn construct_positions(predicted: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || predicted.len() < 2 * k {
        return Err(Error::Backtest(format!(
            "need at least {} stocks for k={k}, got {}",
            2 * k,
            predicted.len()
        )));
    }
    if predicted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Backtest("non-finite predicted return".into()));
    }
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[b].total_cmp(&predicted[a]).then(a.cmp(&b)));
    let w = 1.0 / (2 * k) as f64;
    let mut out = vec![0.0; predicted.len()];
    for &i in &order[..k] {
        out[i] = w;
    }
    for &i in &order[order.len() - k..] {
        out[i] = -w;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TurnoverMode {
    /// Against weights drifted by the day's returns.
    Drifted,
    /// Plain `|w_t - w_{t-1}|`.
    Naive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub day: usize,
    pub weights: Vec<f64>,
    /// One-sided turnover.
    pub turnover: f64,
    pub gross: f64,
    pub cost: f64,
    pub net: f64,
    pub equity: f64,
    pub gross_equity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeLedger {
    pub rows: Vec<LedgerRow>,
    pub cost_bps: f64,
}

/// Simulates target weights `weights[t]` set at the close of day `t`, earning
/// `returns[t + 1]` over the next day. `returns[0]` is ignored. Equity starts
/// at 1 and compounds net returns.
pub fn simulate(weights: &[Vec<f64>], returns: &[Vec<f64>], cost_bps: f64, mode: TurnoverMode) -> Result<TradeLedger> {
    if weights.len() != returns.len() {
        return Err(Error::Backtest(format!(
            "{} weight days but {} return days",
            weights.len(),
            returns.len()
        )));
    }
    if !(cost_bps >= 0.0) {
        return Err(Error::Backtest(format!("cost must be non-negative, got {cost_bps}")));
    }
    let n = weights.first().map_or(0, |w| w.len());
    let mut prev = vec![0.0; n];
    let (mut equity, mut gross_equity) = (1.0, 1.0);
    let mut rows = Vec::with_capacity(weights.len());
    for (t, (w, r)) in weights.iter().zip(returns).enumerate() {
        if w.len() != n || r.len() != n {
            return Err(Error::Backtest(format!("day {t}: ragged weights or returns")));
        }
        let mut gross = 0.0;
        let mut drifted = prev.clone();
        if t > 0 {
            for i in 0..n {
                if prev[i] != 0.0 && !r[i].is_finite() {
                    return Err(Error::Backtest(format!("day {t}: missing return for held stock {i}")));
                }
            }
            gross = (0..n).filter(|&i| prev[i] != 0.0).map(|i| prev[i] * r[i]).sum();
            if mode == TurnoverMode::Drifted {
                for i in 0..n {
                    if prev[i] != 0.0 {
                        drifted[i] = prev[i] * (1.0 + r[i]) / (1.0 + gross);
                    }
                }
            }
        }
        let turnover = w.iter().zip(&drifted).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        let cost = 2.0 * turnover * cost_bps * 1e-4;
        let net = gross - cost;
        equity *= 1.0 + net;
        gross_equity *= 1.0 + gross;
        if !(equity > 0.0) {
            return Err(Error::Backtest(format!("day {t}: equity fell to {equity}")));
        }
        rows.push(LedgerRow {
            day: t,
            weights: w.clone(),
            turnover,
            gross,
            cost,
            net,
            equity,
            gross_equity,
        });
        prev = w.clone();
    }
    Ok(TradeLedger { rows, cost_bps })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerformanceStats {
    pub annualized_return: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub mean_turnover: f64,
}

/// Largest peak-to-trough decline as a fraction of the peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut dd: f64 = 0.0;
    for &e in equity {
        peak = peak.max(e);
        dd = dd.max((peak - e) / peak);
    }
    dd
}

/// Annualized compounded return, Sharpe (zero risk-free rate) and drawdown
/// of a daily return series starting from unit equity.
pub fn return_stats(daily: &[f64]) -> Result<(f64, f64, f64)> {
    if daily.len() < 2 {
        return Err(Error::Stat(format!("need at least 2 daily returns, got {}", daily.len())));
    }
    let n = daily.len() as f64;
    let mut equity = vec![1.0];
    for r in daily {
        equity.push(equity.last().unwrap() * (1.0 + r));
    }
    let ann = equity.last().unwrap().powf(TRADING_DAYS / n) - 1.0;
    let mean = daily.iter().sum::<f64>() / n;
    let var = daily.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs()) || sd == 0.0 {
        return Err(Error::Stat("zero variance of daily returns; Sharpe undefined".into()));
    }
    Ok((ann, mean / sd * TRADING_DAYS.sqrt(), max_drawdown(&equity)))
}

/// Statistics of the ledger's net returns, skipping the initial day, which
/// carries no return.
pub fn performance_stats(ledger: &TradeLedger) -> Result<PerformanceStats> {
    let net: Vec<f64> = ledger.rows.iter().skip(1).map(|r| r.net).collect();
    let (annualized_return, sharpe, max_drawdown) = return_stats(&net)?;
    Ok(PerformanceStats {
        annualized_return,
        sharpe,
        max_drawdown,
        mean_turnover: mean_turnover(ledger),
    })
}

/// Mean one-sided turnover over rebalances after the initial build-up.
pub fn mean_turnover(ledger: &TradeLedger) -> f64 {
    let t: Vec<f64> = ledger.rows.iter().skip(1).map(|r| r.turnover).collect();
    if t.is_empty() {
        0.0
    } else {
        t.iter().sum::<f64>() / t.len() as f64
    }
}

/// One summary row with gross and net columns (`net` is `None` when the
/// statistic is shared).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub statistic: &'static str,
    pub gross: f64,
    pub net: Option<f64>,
}

/// Portfolio summary: strategy gross/net statistics, turnover and an
/// equal-weight buy-and-hold benchmark of the same universe.
pub fn summary_table(ledger: &TradeLedger, returns: &[Vec<f64>]) -> Result<Vec<SummaryRow>> {
    let gross: Vec<f64> = ledger.rows.iter().skip(1).map(|r| r.gross).collect();
    let (g_ann, g_sharpe, g_dd) = return_stats(&gross)?;
    let net = performance_stats(ledger)?;
    let n = returns.first().map_or(0, |r| r.len());
    if n == 0 {
        return Err(Error::Backtest("empty return panel".into()));
    }
    // Buy-and-hold: equal initial dollars, each stock compounding on its own.
    let mut value = vec![1.0 / n as f64; n];
    let mut bench = Vec::with_capacity(returns.len());
    let mut prev: f64 = value.iter().sum();
    for r in returns.iter().skip(1) {
        for (v, x) in value.iter_mut().zip(r) {
            *v *= 1.0 + x;
        }
        let now: f64 = value.iter().sum();
        bench.push(now / prev - 1.0);
        prev = now;
    }
    let (b_ann, _, b_dd) = return_stats(&bench)?;
    Ok(vec![
        SummaryRow { statistic: "Annualized Return", gross: g_ann, net: Some(net.annualized_return) },
        SummaryRow { statistic: "Annualized Sharpe Ratio", gross: g_sharpe, net: Some(net.sharpe) },
        SummaryRow { statistic: "Maximum Drawdown", gross: g_dd, net: Some(net.max_drawdown) },
        SummaryRow { statistic: "Average Daily Turnover (one-sided)", gross: net.mean_turnover, net: None },
        SummaryRow { statistic: "Equal-Weight Buy-and-Hold Return", gross: b_ann, net: None },
        SummaryRow { statistic: "Equal-Weight Buy-and-Hold Maximum Drawdown", gross: b_dd, net: None },
    ])
}
