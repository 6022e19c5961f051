//! Command implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use graphsent_core::autograd::Graph;
use graphsent_core::backtest::{construct_positions, simulate, summary_table};
use graphsent_core::baselines::{fit_arima, forecast_arima, naive_forecast};
use graphsent_core::checkpoint::{load_model, save_model};
use graphsent_core::config::RunConfig;
use graphsent_core::dataset::{rolling_vol, Dataset};
use graphsent_core::evaluation::{
    ablation_suite, daily_abs_errors, evaluate, regime_report, select, significance_tests, tercile_thresholds,
};
use graphsent_core::features::{partition_dataset, SplitPart, FEATURE_NAMES};
use graphsent_core::graphstructure::extreme_edges;
use graphsent_core::nodeformer::{Ablation, Model, Variant};
use graphsent_core::synthgen::{generate_market, generate_sentiment};
use graphsent_core::training::{mean_edges, model_gradcheck, predict, train, Forecast};

use crate::io::{self, date, num, CsvOut, PredictionRow, Provenance};

pub const MODEL_NAME: &str = "nodeformer";
pub const NAIVE_NAME: &str = "naive";
pub const ARIMA_NAME: &str = "arima";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const EDGE_REPORT_K: usize = 5;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

/// Variant trained and predicted by the main model.
pub fn run_variant(cfg: &RunConfig) -> Variant {
    if cfg.use_sentiment {
        Variant::FULL
    } else {
        Ablation::WithoutSentiment.variant()
    }
}

pub fn load_dataset(cfg: &RunConfig, data: &Path) -> Result<Dataset> {
    let market = io::read_market(data, cfg)?;
    let sentiment = io::read_sentiment(data)?;
    if market.len() != cfg.n_stocks {
        bail!("data has {} tickers but the configuration expects n_stocks = {}", market.len(), cfg.n_stocks);
    }
    let split = partition_dataset(market[0].dates.len(), cfg.fractions())?;
    Ok(Dataset::build(&market, &sentiment, split, &cfg.horizons, cfg.warmup_days(), cfg.use_adjusted_close)?)
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let prov = Provenance::of(cfg);
    let syn = cfg.synth();
    let market = generate_market(&syn)?;
    let sentiment = generate_sentiment(&syn, &market)?;
    io::write_market(out, &prov, &market)?;
    io::write_sentiment(out, &prov, &sentiment)?;
    for f in [io::OHLCV_FILE, io::SECTORS_FILE, io::SENTIMENT_FILE] {
        wrote(&out.join(f));
    }
    Ok(())
}

pub fn featurize(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let ds = load_dataset(cfg, data)?;
    let mut cols = vec!["date".to_string(), "ticker".into(), "split".into()];
    cols.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    cols.extend(["sent_1d", "sent_5d", "sent_20d"].map(String::from));
    let mut w = CsvOut::new(out.join("features.csv"), &Provenance::of(cfg), &cols)?;
    for t in 0..ds.n_days() {
        let part = if t < ds.warmup {
            "warmup"
        } else {
            match ds.split.part_of(t) {
                Some(SplitPart::Train) => "train",
                Some(SplitPart::Val) => "val",
                Some(SplitPart::Test) => "test",
                None => "none",
            }
        };
        for i in 0..ds.n_stocks() {
            let mut row = vec![date(ds.dates[t]), ds.tickers[i].clone(), part.to_string()];
            row.extend(ds.features.row(t, i).iter().map(|v| num(*v)));
            row.extend(ds.sentiment[i][t].scales().iter().map(|v| num(*v)));
            w.row(&row)?;
        }
    }
    wrote(&w.finish()?);
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let prov = Provenance::of(cfg);
    let ds = load_dataset(cfg, data)?;
    let graph = ds.init_graph(cfg.edge_alpha)?;
    let variant = run_variant(cfg);
    let mut model = Model::new(cfg.model(), &graph.edges, cfg.seed)?;
    let report = train(&mut model, &ds, &cfg.training(), &variant)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_model(&model, cfg, &ckpt)?;
    wrote(&ckpt);

    let mut log = CsvOut::new(
        out.join("train_log.csv"),
        &prov,
        &[
            "epoch", "stage", "loss_total", "loss_mse", "loss_direction", "loss_corr", "loss_reg", "corr_skipped",
            "val_mape", "val_da",
        ],
    )?;
    for e in &report.history {
        log.row(&[
            e.epoch.to_string(),
            e.stage.to_string(),
            num(e.loss.total),
            num(e.loss.mse),
            num(e.loss.bce),
            num(e.loss.corr),
            num(e.loss.reg),
            e.loss.skipped.to_string(),
            num(e.val_mape),
            num(e.val_da),
        ])?;
    }
    wrote(&log.finish()?);

    let val = ds.windows(SplitPart::Val, cfg.seq_len)?;
    let learned = mean_edges(&model, &ds, &val, &variant)?;
    let n = ds.n_stocks();
    let (top, bottom) = extreme_edges(&learned, n, EDGE_REPORT_K.min(n * (n - 1) / 2));
    let mut edges = CsvOut::new(
        out.join("edges.csv"),
        &prov,
        &["kind", "rank", "ticker_a", "ticker_b", "same_sector", "initial_weight", "learned_weight"],
    )?;
    for (kind, list) in [("top", top), ("bottom", bottom)] {
        for (rank, (i, j, w)) in list.into_iter().enumerate() {
            edges.row(&[
                kind.to_string(),
                (rank + 1).to_string(),
                ds.tickers[i].clone(),
                ds.tickers[j].clone(),
                (ds.sectors[i] == ds.sectors[j]).to_string(),
                num(graph.edge(i, j)),
                num(w),
            ])?;
        }
    }
    wrote(&edges.finish()?);

    let test = ds.windows(SplitPart::Test, cfg.seq_len)?;
    if let Some(&last) = test.last() {
        wrote(&attention_dump(&model, &ds, last, &variant, out, &prov)?);
    }
    println!(
        "training MSE {:.6} -> {:.6}; best validation MAPE {:.4}% at epoch {}",
        report.initial_train_mse, report.final_train_mse, report.best_val_mape, report.best_epoch
    );
    Ok(())
}

/// Attention of the final query position (temporal) and the final day
/// (cross-sectional) for the window ending at `end`.
fn attention_dump(model: &Model, ds: &Dataset, end: usize, variant: &Variant, out: &Path, prov: &Provenance) -> Result<PathBuf> {
    let variant = ds.effective_variant(variant);
    let (t, n, h) = (model.cfg.seq_len, ds.n_stocks(), model.cfg.heads);
    let inp = ds.inputs(&[end], t)?;
    let mut g = Graph::new();
    let v = model.params.register(&mut g);
    let o = model.forward(&mut g, &v, &inp, &variant)?;
    let mut w = CsvOut::new(
        out.join("attention.csv"),
        prov,
        &["window_end", "layer", "stage", "head", "context", "query", "key", "weight"],
    )?;
    let day = date(ds.dates[end]);
    for (l, (wt, wc)) in o.attention.iter().enumerate() {
        // Temporal weights are [N * heads, T, T].
        let a = g.value(*wt).data();
        for i in 0..n {
            for hh in 0..h {
                let base = ((i * h + hh) * t + (t - 1)) * t;
                for k in 0..t {
                    w.row(&[
                        day.clone(),
                        l.to_string(),
                        "temporal".into(),
                        hh.to_string(),
                        ds.tickers[i].clone(),
                        (t - 1).to_string(),
                        k.to_string(),
                        num(a[base + k]),
                    ])?;
                }
            }
        }
        if variant.cross_stage {
            // Cross-sectional weights are [T * heads, N, N].
            let c = g.value(*wc).data();
            for hh in 0..h {
                for i in 0..n {
                    let base = (((t - 1) * h + hh) * n + i) * n;
                    for j in 0..n {
                        w.row(&[
                            day.clone(),
                            l.to_string(),
                            "cross".into(),
                            hh.to_string(),
                            (t - 1).to_string(),
                            ds.tickers[i].clone(),
                            ds.tickers[j].clone(),
                            num(c[base + j]),
                        ])?;
                    }
                }
            }
        }
    }
    w.finish()
}

fn forecast_rows(ds: &Dataset, model_name: &str, fc: &[Forecast]) -> Vec<PredictionRow> {
    fc.iter()
        .map(|f| PredictionRow {
            model: model_name.to_string(),
            ticker: ds.tickers[f.stock].clone(),
            date: ds.dates[f.origin],
            horizon: f.horizon,
            y_pred: f.y_pred,
            y_true: f.y_true,
            y_prior: f.y_prior,
            p_up: Some(f.p_up),
        })
        .collect()
}

/// Naive and ARIMA forecasts at the same origins as `fc`. ARIMA orders and
/// coefficients are fitted once per stock on the training closes.
pub fn baseline_rows(cfg: &RunConfig, ds: &Dataset, fc: &[Forecast]) -> Result<Vec<PredictionRow>> {
    let grid = cfg.arima_grid();
    let train = ds.split.train.clone();
    let models = (0..ds.n_stocks())
        .map(|i| {
            fit_arima(&ds.close[i][train.clone()], &grid)
                .map(|f| f.model)
                .with_context(|| format!("fitting ARIMA for {}", ds.tickers[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut naive = Vec::with_capacity(fc.len());
    let mut arima = Vec::with_capacity(fc.len());
    for f in fc {
        let hist = &ds.close[f.stock][..=f.origin];
        let row = |name: &str, y_pred: f64| PredictionRow {
            model: name.to_string(),
            ticker: ds.tickers[f.stock].clone(),
            date: ds.dates[f.origin],
            horizon: f.horizon,
            y_pred,
            y_true: f.y_true,
            y_prior: f.y_prior,
            p_up: None,
        };
        naive.push(row(NAIVE_NAME, naive_forecast(hist, f.horizon)?));
        arima.push(row(ARIMA_NAME, forecast_arima(&models[f.stock], hist, f.horizon)?));
    }
    naive.extend(arima);
    Ok(naive)
}

pub fn predict_cmd(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (model, ck_cfg) = load_model(checkpoint)?;
    if ck_cfg.hash() != cfg.hash() {
        bail!(
            "{} was trained under config hash {}, the current configuration hashes to {}",
            checkpoint.display(),
            ck_cfg.hash(),
            cfg.hash()
        );
    }
    let ds = load_dataset(cfg, data)?;
    let test = ds.windows(SplitPart::Test, cfg.seq_len)?;
    let fc = predict(&model, &ds, &test, &run_variant(cfg))?;
    let mut rows = forecast_rows(&ds, MODEL_NAME, &fc);
    rows.extend(baseline_rows(cfg, &ds, &fc)?);
    wrote(&io::write_predictions(out.join(PREDICTIONS_FILE), &Provenance::of(cfg), &rows)?);
    Ok(())
}

/// Forecasts grouped by model, with stocks and origins indexed in sorted
/// ticker and date order.
pub struct ForecastSet {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub by_model: BTreeMap<String, Vec<Forecast>>,
}

impl ForecastSet {
    pub fn from_rows(rows: &[PredictionRow]) -> Result<Self> {
        if rows.is_empty() {
            bail!("no predictions");
        }
        let tickers: Vec<String> = rows.iter().map(|r| r.ticker.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect();
        let mut by_model: BTreeMap<String, Vec<Forecast>> = BTreeMap::new();
        for r in rows {
            by_model.entry(r.model.clone()).or_default().push(Forecast {
                stock: tickers.binary_search(&r.ticker).expect("indexed"),
                origin: dates.binary_search(&r.date).expect("indexed"),
                horizon: r.horizon,
                z_pred: 0.0,
                y_pred: r.y_pred,
                y_true: r.y_true,
                y_prior: r.y_prior,
                p_up: r.p_up.unwrap_or(f64::NAN),
            });
        }
        Ok(Self { tickers, dates, by_model })
    }

    /// The model compared against all others: the node transformer when
    /// present, otherwise the first model name.
    pub fn primary(&self) -> &str {
        if self.by_model.contains_key(MODEL_NAME) {
            MODEL_NAME
        } else {
            self.by_model.keys().next().expect("non-empty")
        }
    }
}

/// Cross-stock mean 20-day annualized volatility on each date of the panel.
/// Market volatility proxy by date and the tercile thresholds of its
/// validation-period values.
fn volatility_by_date(cfg: &RunConfig, data: &Path) -> Result<(BTreeMap<NaiveDate, f64>, (f64, f64))> {
    let market = io::read_market(data, cfg)?;
    let close: Vec<Vec<f64>> = market.iter().map(|m| m.bars.iter().map(|b| b.close).collect()).collect();
    let dates = &market[0].dates;
    let w = 20;
    let proxy = |t: usize| close.iter().map(|c| rolling_vol(c, t, w)).sum::<f64>() / close.len() as f64;
    let val = partition_dataset(dates.len(), cfg.fractions())?.val;
    let val_values: Vec<f64> = val.filter(|&t| t >= w).map(proxy).collect();
    let thresholds = tercile_thresholds(&val_values)?;
    Ok((dates.iter().enumerate().skip(w).map(|(t, d)| (*d, proxy(t))).collect(), thresholds))
}

pub fn evaluate_cmd(cfg: &RunConfig, predictions: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let prov = Provenance::of(cfg);
    let set = ForecastSet::from_rows(&io::read_predictions(predictions)?)?;
    let mut csv = CsvOut::new(out.join("evaluation.csv"), &prov, &["section", "model", "horizon", "metric", "value"])?;
    let mut text = String::new();

    writeln!(text, "Forecast accuracy (test period)")?;
    writeln!(
        text,
        "{:<28} {:>3} {:>9} {:>10} {:>7} {:>17} {:>8} {:>8} {:>9}",
        "model", "h", "MAPE %", "RMSE", "DA", "DA CI", "Theil U", "IC", "|ret| %"
    )?;
    for (name, fc) in &set.by_model {
        for r in evaluate(fc, cfg.bootstrap_draws, cfg.confidence_level, cfg.seed)? {
            writeln!(
                text,
                "{:<28} {:>3} {:>9.4} {:>10.4} {:>7.4} [{:>7.4},{:>7.4}] {:>8.4} {:>8.4} {:>9.4}",
                name, r.horizon, r.metrics.mape, r.metrics.rmse, r.metrics.da, r.da_ci.0, r.da_ci.1, r.theils_u, r.ic,
                r.return_mae
            )?;
            for (metric, value) in [
                ("mape", r.metrics.mape),
                ("rmse", r.metrics.rmse),
                ("da", r.metrics.da),
                ("da_ci_low", r.da_ci.0),
                ("da_ci_high", r.da_ci.1),
                ("theils_u", r.theils_u),
                ("ic", r.ic),
                ("ic_skipped_days", r.ic_skipped as f64),
                ("return_mae", r.return_mae),
            ] {
                csv.row(&["accuracy".into(), name.clone(), r.horizon.to_string(), metric.into(), num(value)])?;
            }
        }
    }

    let primary = set.primary().to_string();
    let horizons: BTreeSet<usize> = set.by_model[&primary].iter().map(|f| f.horizon).collect();
    writeln!(text, "\nSignificance of daily MAPE differences ({primary} minus other)")?;
    writeln!(
        text,
        "{:<28} {:>3} {:>5} {:>11} {:>9} {:>10} {:>9} {:>9} {:>10}",
        "versus", "h", "days", "mean diff", "t", "p(t)", "d", "DM", "p(DM)"
    )?;
    for other in set.by_model.keys().filter(|k| **k != primary) {
        for &h in &horizons {
            let a = daily_abs_errors(&select(&set.by_model[&primary], h));
            let b: BTreeMap<usize, f64> = daily_abs_errors(&select(&set.by_model[other], h)).into_iter().collect();
            let (ea, eb): (Vec<f64>, Vec<f64>) =
                a.iter().filter_map(|(d, e)| b.get(d).map(|x| (*e, *x))).unzip();
            let label = format!("{primary}_vs_{other}");
            match significance_tests(&ea, &eb, h) {
                Ok(s) => {
                    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                    writeln!(
                        text,
                        "{:<28} {:>3} {:>5} {:>11.5} {:>9.4} {:>10.4} {:>9.4} {:>9} {:>10}",
                        other, h, s.n, s.mean_diff, s.t, s.t_p, s.cohens_d, opt(s.dm), opt(s.dm_p)
                    )?;
                    let mut items = vec![
                        ("days", s.n as f64),
                        ("mean_diff", s.mean_diff),
                        ("t", s.t),
                        ("t_p", s.t_p),
                        ("cohens_d", s.cohens_d),
                    ];
                    if let (Some(dm), Some(p)) = (s.dm, s.dm_p) {
                        items.push(("dm", dm));
                        items.push(("dm_p", p));
                    }
                    for (metric, value) in items {
                        csv.row(&["significance".into(), label.clone(), h.to_string(), metric.into(), num(value)])?;
                    }
                }
                Err(e) => writeln!(text, "{other:<28} {h:>3} not computable: {e}")?,
            }
        }
    }

    if let Some(data) = data {
        let (vol, thresholds) = volatility_by_date(cfg, data)?;
        let proxy: BTreeMap<usize, f64> = set
            .dates
            .iter()
            .enumerate()
            .filter_map(|(k, d)| vol.get(d).map(|v| (k, *v)))
            .collect();
        writeln!(
            text,
            "\nVolatility regimes (20-day market volatility proxy, validation-period terciles: {:.4}, {:.4})",
            thresholds.0, thresholds.1
        )?;
        writeln!(text, "{:<28} {:>3} {:<7} {:>5} {:>9} {:>10} {:>7}", "model", "h", "regime", "days", "MAPE %", "RMSE", "DA")?;
        for (name, fc) in &set.by_model {
            for &h in &horizons {
                for b in regime_report(&select(fc, h), &proxy, thresholds)? {
                    let label = b.regime.name();
                    match b.metrics {
                        Some(m) => {
                            writeln!(
                                text,
                                "{:<28} {:>3} {:<7} {:>5} {:>9.4} {:>10.4} {:>7.4}",
                                name, h, label, b.days, m.mape, m.rmse, m.da
                            )?;
                            for (metric, value) in [("days", b.days as f64), ("mape", m.mape), ("rmse", m.rmse), ("da", m.da)] {
                                csv.row(&[
                                    format!("regime_{label}"),
                                    name.clone(),
                                    h.to_string(),
                                    metric.into(),
                                    num(value),
                                ])?;
                            }
                        }
                        None => writeln!(text, "{name:<28} {h:>3} {label:<7} {:>5} (empty)", b.days)?,
                    }
                }
            }
        }
    }
    wrote(&csv.finish()?);
    let path = out.join("evaluation.txt");
    io::write_text(&path, &prov, &text)?;
    wrote(&path);
    print!("{text}");
    Ok(())
}

/// Daily weights and realized next-day returns of one model's horizon-1
/// forecasts, over the sorted origin dates.
pub fn backtest_panel(set: &ForecastSet, model: &str, k: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (nd, ns) = (set.dates.len(), set.tickers.len());
    let mut pred = vec![vec![f64::NAN; ns]; nd];
    let mut real = vec![vec![f64::NAN; ns]; nd];
    for f in set.by_model[model].iter().filter(|f| f.horizon == 1) {
        pred[f.origin][f.stock] = f.y_pred / f.y_prior - 1.0;
        real[f.origin][f.stock] = f.y_true / f.y_prior - 1.0;
    }
    for (d, row) in pred.iter().enumerate() {
        if let Some(i) = row.iter().position(|v| v.is_nan()) {
            bail!("{model}: no horizon-1 forecast for {} on {}", set.tickers[i], date(set.dates[d]));
        }
    }
    let weights = pred.iter().map(|p| construct_positions(p, k)).collect::<graphsent_core::Result<Vec<_>>>()?;
    // Weights set on day d earn the return realized from d to d + 1.
    let mut returns = vec![vec![0.0; ns]];
    returns.extend(real[..nd - 1].iter().cloned());
    Ok((weights, returns))
}

pub fn backtest_cmd(cfg: &RunConfig, predictions: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let prov = Provenance::of(cfg);
    let set = ForecastSet::from_rows(&io::read_predictions(predictions)?)?;
    let mut cols: Vec<String> = ["model", "date", "turnover", "gross", "cost", "net", "equity", "gross_equity"]
        .map(String::from)
        .to_vec();
    cols.extend(set.tickers.iter().map(|t| format!("w_{t}")));
    let mut ledger_csv = CsvOut::new(out.join("backtest_ledger.csv"), &prov, &cols)?;
    let mut summary_csv = CsvOut::new(out.join("backtest_summary.csv"), &prov, &["model", "statistic", "gross", "net"])?;
    let mut text = format!("Long-short top/bottom {} portfolio, {} bps per unit traded\n", cfg.top_k, cfg.cost_bps);
    for model in set.by_model.keys() {
        if !set.by_model[model].iter().any(|f| f.horizon == 1) {
            bail!("{model}: backtest needs horizon-1 forecasts");
        }
        let (weights, returns) = backtest_panel(&set, model, cfg.top_k)?;
        let ledger = simulate(&weights, &returns, cfg.cost_bps, cfg.turnover_mode())?;
        for (d, r) in ledger.rows.iter().enumerate() {
            let mut row = vec![
                model.clone(),
                date(set.dates[d]),
                num(r.turnover),
                num(r.gross),
                num(r.cost),
                num(r.net),
                num(r.equity),
                num(r.gross_equity),
            ];
            row.extend(r.weights.iter().map(|w| num(*w)));
            ledger_csv.row(&row)?;
        }
        writeln!(text, "\n{model}")?;
        writeln!(text, "{:<44} {:>10} {:>10}", "statistic", "gross", "net")?;
        for s in summary_table(&ledger, &returns)? {
            let net = s.net.map(num).unwrap_or_default();
            summary_csv.row(&[model.clone(), s.statistic.to_string(), num(s.gross), net])?;
            let net_txt = s.net.map_or("-".to_string(), |v| format!("{v:.4}"));
            writeln!(text, "{:<44} {:>10.4} {:>10}", s.statistic, s.gross, net_txt)?;
        }
    }
    wrote(&ledger_csv.finish()?);
    wrote(&summary_csv.finish()?);
    print!("{text}");
    Ok(())
}

pub fn ablate_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let prov = Provenance::of(cfg);
    let ds = load_dataset(cfg, data)?;
    let graph = ds.init_graph(cfg.edge_alpha)?;
    let outcomes = ablation_suite(&ds, &cfg.model(), &cfg.training(), &graph.edges, cfg.seed, &Ablation::ALL)?;
    let full_mape = outcomes
        .iter()
        .find(|o| o.ablation == Ablation::Full)
        .and_then(|o| o.result.as_ref().ok())
        .map(|r| r.metrics.mape);
    let h = cfg.horizons[0];
    let mut table = CsvOut::new(
        out.join("ablation.csv"),
        &prov,
        &["configuration", "horizon", "mape", "delta_vs_full_pct", "rmse", "da", "status"],
    )?;
    let mut rows = Vec::new();
    let mut text = format!("Ablation study: MAPE (%) for {h}-day predictions\n{:<28} {:>9} {:>12}\n", "configuration", "MAPE", "vs full");
    for o in &outcomes {
        let name = o.ablation.name();
        match &o.result {
            Ok(run) => {
                let m = run.metrics;
                let delta = full_mape.map(|f| 100.0 * (m.mape - f) / f);
                let delta_txt = match (o.ablation, delta) {
                    (Ablation::Full, _) | (_, None) => "--".to_string(),
                    (_, Some(d)) => format!("{d:+.1}%"),
                };
                writeln!(text, "{name:<28} {:>9.4} {delta_txt:>12}", m.mape)?;
                table.row(&[
                    name.to_string(),
                    h.to_string(),
                    num(m.mape),
                    delta.filter(|_| o.ablation != Ablation::Full).map(num).unwrap_or_default(),
                    num(m.rmse),
                    num(m.da),
                    "ok".into(),
                ])?;
                rows.extend(forecast_rows(&ds, name, &run.forecasts));
            }
            Err(e) => {
                writeln!(text, "{name:<28} failed: {e}")?;
                table.row(&[name.to_string(), h.to_string(), String::new(), String::new(), String::new(), String::new(), format!("error: {e}")])?;
            }
        }
    }
    wrote(&table.finish()?);
    wrote(&io::write_predictions(out.join("ablation_predictions.csv"), &prov, &rows)?);
    print!("{text}");
    Ok(())
}

pub fn gradcheck_cmd(cfg: &RunConfig, coords: usize) -> Result<()> {
    let err = model_gradcheck(&cfg.model(), 2, cfg.seed, 1e-6, coords)?;
    println!("full-model gradient check: max relative error {err:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
    if !(err < GRADCHECK_TOLERANCE) {
        return Err(anyhow!("gradient check failed: {err:.3e} >= {GRADCHECK_TOLERANCE:.0e}"));
    }
    Ok(())
}

pub fn config_cmd(cfg: &RunConfig) {
    print!("# config_hash={}\n{}", cfg.hash(), cfg.to_toml());
}
