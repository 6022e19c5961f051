//! Naive persistence and ARIMA reference forecasters.
//!
//! ARIMA parameters are estimated by conditional least squares: pre-sample
//! residuals are zero and the one-step squared residuals are minimized with
//! a Nelder-Mead simplex.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;

use crate::{Error, Result};

/// Persistence forecast: the last observation for every horizon.
pub fn naive_forecast(series: &[f64], h: usize) -> Result<f64> {
    if h == 0 {
        return Err(Error::Config("forecast horizon must be positive".into()));
    }
    series
        .last()
        .copied()
        .ok_or_else(|| Error::Baseline("empty series".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub aic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArimaGrid {
    pub p: Vec<usize>,
    pub d: Vec<usize>,
    pub q: Vec<usize>,
    pub max_iters: u64,
}

impl Default for ArimaGrid {
    fn default() -> Self {
        Self {
            p: (0..=3).collect(),
            d: vec![0, 1, 2],
            q: (0..=3).collect(),
            max_iters: 2000,
        }
    }
}

/// Result of an order search, including candidates that were rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct ArimaFit {
    pub model: ArimaModel,
    pub rejected: Vec<(ArimaOrder, String)>,
}

/// `d`-th difference of `y`.
pub fn difference(y: &[f64], d: usize) -> Vec<f64> {
    let mut w = y.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    w
}

/// One-step residuals of an ARMA(p, q) recursion with zero pre-sample
/// residuals, starting at index `p`.
pub fn css_residuals(w: &[f64], intercept: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let p = ar.len();
    let mut e = vec![0.0; w.len()];
    for t in p..w.len() {
        let mut f = intercept;
        for (k, a) in ar.iter().enumerate() {
            f += a * w[t - 1 - k];
        }
        for (k, m) in ma.iter().enumerate() {
            if t > k {
                f += m * e[t - 1 - k];
            }
        }
        e[t] = w[t] - f;
    }
    e.split_off(p)
}

/// Whether all roots of `1 - c_1 z - ... - c_k z^k` lie outside the unit
/// circle, by the step-down (reverse Levinson) recursion.
pub fn roots_outside_unit_circle(c: &[f64]) -> bool {
    let mut a = c.to_vec();
    while let Some(&k) = a.last() {
        if !k.is_finite() || k.abs() >= 1.0 {
            return false;
        }
        let m = a.len();
        let den = 1.0 - k * k;
        a = (0..m - 1).map(|j| (a[j] + k * a[m - 2 - j]) / den).collect();
    }
    true
}

struct Css<'a> {
    w: &'a [f64],
    p: usize,
}

impl CostFunction for Css<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let e = css_residuals(self.w, x[0], &x[1..1 + self.p], &x[1 + self.p..]);
        let sse: f64 = e.iter().map(|v| v * v).sum();
        Ok(if sse.is_finite() { sse } else { f64::MAX })
    }
}

fn fit_order(y: &[f64], order: ArimaOrder, max_iters: u64) -> Result<ArimaModel> {
    let w = difference(y, order.d);
    let (p, q) = (order.p, order.q);
    let k = 1 + p + q;
    if w.len() < 10 * k {
        return Err(Error::Baseline(format!(
            "{} observations after differencing, need {}",
            w.len(),
            10 * k
        )));
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let scale = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64)
        .sqrt()
        .max(1e-8);
    let mut x0 = vec![0.0; k];
    x0[0] = mean;
    let mut simplex = vec![x0.clone()];
    for j in 0..k {
        let mut v = x0.clone();
        v[j] += if j == 0 { 0.1 * scale } else { 0.1 };
        simplex.push(v);
    }
    let params = if k == 1 {
        vec![mean]
    } else {
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| Error::Baseline(e.to_string()))?;
        let res = Executor::new(Css { w: &w, p }, solver)
            .configure(|s| s.max_iters(max_iters))
            .run()
            .map_err(|e| Error::Baseline(format!("{order:?}: {e}")))?;
        res.state
            .get_best_param()
            .cloned()
            .ok_or_else(|| Error::Baseline(format!("{order:?}: no solution")))?
    };
    let ar = params[1..1 + p].to_vec();
    let ma = params[1 + p..].to_vec();
    if !roots_outside_unit_circle(&ar) {
        return Err(Error::Baseline(format!("{order:?}: non-stationary AR coefficients {ar:?}")));
    }
    if !roots_outside_unit_circle(&ma.iter().map(|m| -m).collect::<Vec<_>>()) {
        return Err(Error::Baseline(format!("{order:?}: non-invertible MA coefficients {ma:?}")));
    }
    let e = css_residuals(&w, params[0], &ar, &ma);
    let n = e.len() as f64;
    let sse: f64 = e.iter().map(|v| v * v).sum();
    if !(sse > 0.0) || !sse.is_finite() {
        return Err(Error::Baseline(format!("{order:?}: degenerate residual variance {sse}")));
    }
    Ok(ArimaModel {
        order,
        ar,
        ma,
        intercept: params[0],
        sigma2: sse / n,
        aic: n * (sse / n).ln() + 2.0 * k as f64,
    })
}

/// Fits one ARIMA model of a fixed order.
pub fn fit_arima_order(series: &[f64], order: ArimaOrder, max_iters: u64) -> Result<ArimaModel> {
    if order.d > 2 {
        return Err(Error::Config(format!("differencing order {} exceeds 2", order.d)));
    }
    fit_order(series, order, max_iters)
}

/// AIC order selection over the grid.
pub fn fit_arima(series: &[f64], grid: &ArimaGrid) -> Result<ArimaFit> {
    if grid.d.iter().any(|&d| d > 2) {
        return Err(Error::Config("differencing order must be 0, 1 or 2".into()));
    }
    let mut best: Option<ArimaModel> = None;
    let mut rejected = Vec::new();
    for &d in &grid.d {
        for &p in &grid.p {
            for &q in &grid.q {
                let order = ArimaOrder { p, d, q };
                match fit_order(series, order, grid.max_iters) {
                    Ok(m) => {
                        if best.as_ref().is_none_or(|b| m.aic < b.aic) {
                            best = Some(m);
                        }
                    }
                    Err(e) => rejected.push((order, e.to_string())),
                }
            }
        }
    }
    match best {
        Some(model) => Ok(ArimaFit { model, rejected }),
        None => Err(Error::Baseline(format!(
            "no ARIMA candidate converged ({} rejected)",
            rejected.len()
        ))),
    }
}

/// Iterated `h`-step forecast with zero future innovations, integrated back
/// to the level of `series`.
pub fn forecast_arima(model: &ArimaModel, series: &[f64], h: usize) -> Result<f64> {
    if h == 0 {
        return Err(Error::Config("forecast horizon must be positive".into()));
    }
    let d = model.order.d;
    if series.len() <= d + model.ar.len() {
        return Err(Error::Baseline(format!("series of {} points too short", series.len())));
    }
    let mut w = difference(series, d);
    let mut e = css_residuals(&w, model.intercept, &model.ar, &model.ma);
    e.splice(0..0, std::iter::repeat_n(0.0, model.ar.len()));
    for _ in 0..h {
        let t = w.len();
        let mut f = model.intercept;
        for (k, a) in model.ar.iter().enumerate() {
            f += a * w[t - 1 - k];
        }
        for (k, m) in model.ma.iter().enumerate() {
            if t > k {
                f += m * e[t - 1 - k];
            }
        }
        w.push(f);
        e.push(0.0);
    }
    // Integrate: each level of differencing adds back its last observed value.
    let mut levels: Vec<Vec<f64>> = (0..d).map(|k| difference(series, k)).collect();
    let mut path: Vec<f64> = w[w.len() - h..].to_vec();
    while let Some(base) = levels.pop() {
        let mut last = *base.last().expect("non-empty");
        path = path
            .iter()
            .map(|v| {
                last += v;
                last
            })
            .collect();
    }
    let y = path[h - 1];
    if !y.is_finite() {
        return Err(Error::Baseline("non-finite forecast".into()));
    }
    Ok(y)
}
