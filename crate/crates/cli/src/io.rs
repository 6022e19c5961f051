//! CSV schemas and artifact writing.
//!
//! Every artifact starts with `# seed=` and `# config_hash=` comment lines.
//! Readers skip comment lines and locate columns by header name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use graphsent_core::config::RunConfig;
use graphsent_core::features::{impute_series, partition_dataset, ImputeMode};
use graphsent_core::synthgen::{MarketSeries, OhlcvBar, SentimentRecord, SentimentStream};

pub const OHLCV_FILE: &str = "ohlcv.csv";
pub const SENTIMENT_FILE: &str = "sentiment.csv";
pub const SECTORS_FILE: &str = "sectors.csv";

pub const OHLCV_COLUMNS: [&str; 8] = ["date", "ticker", "open", "high", "low", "close", "adj_close", "volume"];
pub const SENTIMENT_COLUMNS: [&str; 4] = ["date", "ticker", "score", "post_count"];
pub const SECTOR_COLUMNS: [&str; 2] = ["ticker", "sector"];
pub const PREDICTION_COLUMNS: [&str; 8] = ["model", "ticker", "date", "horizon", "y_pred", "y_true", "y_prior", "p_up"];

/// Seed and configuration hash stamped on every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            config_hash: cfg.hash(),
        }
    }

    fn header(&self) -> String {
        format!("# seed={}\n# config_hash={}\n", self.seed, self.config_hash)
    }
}

/// Buffered CSV artifact with a provenance header.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new<S: AsRef<str>>(path: PathBuf, prov: &Provenance, columns: &[S]) -> Result<Self> {
        let mut buf = Vec::new();
        buf.extend_from_slice(prov.header().as_bytes());
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(columns.iter().map(|c| c.as_ref()))?;
        Ok(Self { path, writer })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        self.writer.write_record(fields.iter().map(|c| c.as_ref()))?;
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let bytes = self.writer.into_inner().map_err(|e| anyhow!("{e}"))?;
        fs::write(&self.path, bytes).with_context(|| format!("writing {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// Plain-text artifact with the provenance header.
pub fn write_text(path: &Path, prov: &Provenance, body: &str) -> Result<()> {
    fs::write(path, format!("{}{body}", prov.header())).with_context(|| format!("writing {}", path.display()))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// A CSV file read into memory with its header.
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>().with_context(|| format!("parsing {name}"))?;
        Ok(Self { name, headers, rows })
    }

    /// Column positions for `names`, failing on the first missing one.
    pub fn columns<const K: usize>(&self, names: [&str; K]) -> Result<[usize; K]> {
        let mut out = [0; K];
        for (o, n) in out.iter_mut().zip(names) {
            *o = self
                .headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| anyhow!("{}: missing column '{n}'", self.name))?;
        }
        Ok(out)
    }
}

fn cell<'a>(t: &Table, r: &'a csv::StringRecord, i: usize, line: usize) -> Result<&'a str> {
    r.get(i)
        .map(str::trim)
        .ok_or_else(|| anyhow!("{}: row {line} has too few fields", t.name))
}

pub fn parse_f64(t: &Table, r: &csv::StringRecord, i: usize, line: usize) -> Result<f64> {
    let s = cell(t, r, i, line)?;
    s.parse()
        .map_err(|_| anyhow!("{}: row {line}, column '{}': '{s}' is not a number", t.name, t.headers[i]))
}

/// `None` for an empty cell.
pub fn parse_opt_f64(t: &Table, r: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>> {
    if cell(t, r, i, line)?.is_empty() {
        Ok(None)
    } else {
        parse_f64(t, r, i, line).map(Some)
    }
}

pub fn parse_usize(t: &Table, r: &csv::StringRecord, i: usize, line: usize) -> Result<usize> {
    let s = cell(t, r, i, line)?;
    s.parse()
        .map_err(|_| anyhow!("{}: row {line}, column '{}': '{s}' is not a count", t.name, t.headers[i]))
}

pub fn parse_date(t: &Table, r: &csv::StringRecord, i: usize, line: usize) -> Result<NaiveDate> {
    let s = cell(t, r, i, line)?;
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| anyhow!("{}: row {line}, column '{}': '{s}' is not an ISO date", t.name, t.headers[i]))
}

pub fn write_market(dir: &Path, prov: &Provenance, market: &[MarketSeries]) -> Result<()> {
    let mut out = CsvOut::new(dir.join(OHLCV_FILE), prov, &OHLCV_COLUMNS)?;
    let days = market.first().map_or(0, |m| m.dates.len());
    for t in 0..days {
        for m in market {
            let b = &m.bars[t];
            out.row(&[
                date(m.dates[t]),
                m.ticker.clone(),
                num(b.open),
                num(b.high),
                num(b.low),
                num(b.close),
                num(b.adj_close),
                num(b.volume),
            ])?;
        }
    }
    out.finish()?;
    let mut out = CsvOut::new(dir.join(SECTORS_FILE), prov, &SECTOR_COLUMNS)?;
    for m in market {
        out.row(&[m.ticker.clone(), m.sector.to_string()])?;
    }
    out.finish()?;
    Ok(())
}

pub fn write_sentiment(dir: &Path, prov: &Provenance, streams: &[SentimentStream]) -> Result<()> {
    let mut rows: Vec<(NaiveDate, &str, SentimentRecord)> = streams
        .iter()
        .flat_map(|s| s.dates.iter().zip(&s.records).map(move |(d, r)| (*d, s.ticker.as_str(), *r)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let mut out = CsvOut::new(dir.join(SENTIMENT_FILE), prov, &SENTIMENT_COLUMNS)?;
    for (d, tk, r) in rows {
        out.row(&[date(d), tk.to_string(), num(r.score), r.post_count.to_string()])?;
    }
    out.finish()?;
    Ok(())
}

/// Imputes one stock's bars: training days may interpolate short gaps
/// within the training range, later days are forward-filled.
fn impute_split(bars: &[Option<OhlcvBar>], train_end: usize) -> Result<Vec<OhlcvBar>> {
    let (mut out, _) = impute_series(bars, ImputeMode::Eval)?;
    if bars[..train_end].iter().any(Option::is_none) {
        let (train, _) = impute_series(&bars[..train_end], ImputeMode::Train)?;
        out[..train_end].copy_from_slice(&train);
    }
    Ok(out)
}

/// Reads the market panel and sector map; rows absent for a date or with an
/// empty field are imputed. Tickers come out in sorted order.
pub fn read_market(dir: &Path, cfg: &RunConfig) -> Result<Vec<MarketSeries>> {
    let sectors_t = Table::read(&dir.join(SECTORS_FILE))?;
    let [ct, cs] = sectors_t.columns(SECTOR_COLUMNS)?;
    let mut sectors = BTreeMap::new();
    for (line, r) in sectors_t.rows.iter().enumerate() {
        sectors.insert(cell(&sectors_t, r, ct, line + 1)?.to_string(), parse_usize(&sectors_t, r, cs, line + 1)?);
    }

    let t = Table::read(&dir.join(OHLCV_FILE))?;
    let [cd, ctk, co, ch, cl, cc, ca, cv] = t.columns(OHLCV_COLUMNS)?;
    let mut cells: BTreeMap<String, BTreeMap<NaiveDate, Option<OhlcvBar>>> = BTreeMap::new();
    let mut all_dates = std::collections::BTreeSet::new();
    for (k, r) in t.rows.iter().enumerate() {
        let line = k + 1;
        let d = parse_date(&t, r, cd, line)?;
        let tk = cell(&t, r, ctk, line)?.to_string();
        let f = [co, ch, cl, cc, ca, cv]
            .iter()
            .map(|&i| parse_opt_f64(&t, r, i, line))
            .collect::<Result<Vec<_>>>()?;
        let bar = if f.iter().all(Option::is_some) {
            Some(OhlcvBar {
                open: f[0].unwrap(),
                high: f[1].unwrap(),
                low: f[2].unwrap(),
                close: f[3].unwrap(),
                adj_close: f[4].unwrap(),
                volume: f[5].unwrap(),
            })
        } else {
            None
        };
        all_dates.insert(d);
        if cells.entry(tk.clone()).or_default().insert(d, bar).is_some() {
            bail!("{}: duplicate row for {tk} on {}", t.name, date(d));
        }
    }
    if cells.is_empty() {
        bail!("{}: no rows", t.name);
    }
    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    let split = partition_dataset(dates.len(), cfg.fractions())?;
    let train_end = split.train.end;
    cells
        .into_iter()
        .map(|(tk, by_date)| {
            let sector = *sectors
                .get(&tk)
                .ok_or_else(|| anyhow!("{}: no sector for ticker {tk}", sectors_t.name))?;
            let raw: Vec<Option<OhlcvBar>> = dates.iter().map(|d| by_date.get(d).copied().flatten()).collect();
            let bars = impute_split(&raw, train_end).with_context(|| format!("imputing {tk}"))?;
            Ok(MarketSeries {
                ticker: tk,
                sector,
                dates: dates.clone(),
                bars,
            })
        })
        .collect()
}

/// Reads daily sentiment; a missing file means a price-only run.
pub fn read_sentiment(dir: &Path) -> Result<Vec<SentimentStream>> {
    let path = dir.join(SENTIMENT_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let t = Table::read(&path)?;
    let [cd, ctk, cs, cn] = t.columns(SENTIMENT_COLUMNS)?;
    let mut by: BTreeMap<String, BTreeMap<NaiveDate, SentimentRecord>> = BTreeMap::new();
    for (k, r) in t.rows.iter().enumerate() {
        let line = k + 1;
        let d = parse_date(&t, r, cd, line)?;
        let tk = cell(&t, r, ctk, line)?.to_string();
        let rec = SentimentRecord {
            score: parse_f64(&t, r, cs, line)?,
            post_count: parse_usize(&t, r, cn, line)? as u32,
        };
        by.entry(tk).or_default().insert(d, rec);
    }
    Ok(by
        .into_iter()
        .map(|(ticker, m)| SentimentStream {
            ticker,
            dates: m.keys().copied().collect(),
            records: m.values().copied().collect(),
        })
        .collect())
}

/// One row of the predictions file.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub model: String,
    pub ticker: String,
    pub date: NaiveDate,
    pub horizon: usize,
    pub y_pred: f64,
    pub y_true: f64,
    pub y_prior: f64,
    pub p_up: Option<f64>,
}

pub fn write_predictions(path: PathBuf, prov: &Provenance, rows: &[PredictionRow]) -> Result<PathBuf> {
    let mut out = CsvOut::new(path, prov, &PREDICTION_COLUMNS)?;
    for r in rows {
        out.row(&[
            r.model.clone(),
            r.ticker.clone(),
            date(r.date),
            r.horizon.to_string(),
            num(r.y_pred),
            num(r.y_true),
            num(r.y_prior),
            r.p_up.map(num).unwrap_or_default(),
        ])?;
    }
    out.finish()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let t = Table::read(path)?;
    let [cm, ct, cd, ch, cp, cy, cr, cu] = t.columns(PREDICTION_COLUMNS)?;
    t.rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let line = k + 1;
            Ok(PredictionRow {
                model: cell(&t, r, cm, line)?.to_string(),
                ticker: cell(&t, r, ct, line)?.to_string(),
                date: parse_date(&t, r, cd, line)?,
                horizon: parse_usize(&t, r, ch, line)?,
                y_pred: parse_f64(&t, r, cp, line)?,
                y_true: parse_f64(&t, r, cy, line)?,
                y_prior: parse_f64(&t, r, cr, line)?,
                p_up: parse_opt_f64(&t, r, cu, line)?,
            })
        })
        .collect()
}

/// Reads the provenance header of an artifact.
pub fn read_provenance(path: &Path) -> Result<Provenance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut seed = None;
    let mut hash = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(v) = line.strip_prefix("# seed=") {
            seed = v.parse().ok();
        } else if let Some(v) = line.strip_prefix("# config_hash=") {
            hash = Some(v.to_string());
        }
    }
    match (seed, hash) {
        (Some(seed), Some(config_hash)) => Ok(Provenance { seed, config_hash }),
        _ => bail!("{}: missing seed/config_hash header", path.display()),
    }
}
