//! Flat run configuration with desk, tiny and paper-scale presets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::TurnoverMode;
use crate::baselines::ArimaGrid;
use crate::features::WARMUP_DAYS;
use crate::nodeformer::ModelConfig;
use crate::synthgen::SynthConfig;
use crate::training::{LossWeights, StageConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,

    pub n_stocks: usize,
    pub n_days: usize,
    pub n_sectors: usize,
    pub sector_factor_strength: f64,
    pub regime_vol_levels: Vec<f64>,
    pub regime_switch_prob: f64,
    pub ar_coefficient: f64,
    pub sentiment_lead_strength: f64,
    pub sentiment_noise: f64,
    pub sentiment_start_day: usize,

    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub use_adjusted_close: bool,
    pub edge_alpha: f64,

    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub d_stock: usize,
    pub sent_hidden: usize,
    pub horizons: Vec<usize>,

    pub batch_size: usize,
    pub accum_steps: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub stage3_lr: f64,
    pub unfrozen_top_layers: usize,
    pub warmup_steps: u64,
    pub max_train_windows: usize,
    pub keep_best: bool,
    pub lambda_mse: f64,
    pub lambda_direction: f64,
    pub lambda_corr: f64,
    pub lambda_reg: f64,
    pub use_sentiment: bool,

    pub arima_p_max: usize,
    pub arima_q_max: usize,
    pub arima_d_max: usize,
    pub arima_max_iters: u64,

    pub bootstrap_draws: usize,
    pub confidence_level: f64,

    pub top_k: usize,
    pub cost_bps: f64,
    pub naive_turnover: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// CPU-scale defaults.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 7,
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
            train_fraction: 0.70,
            val_fraction: 0.15,
            test_fraction: 0.15,
            use_adjusted_close: false,
            edge_alpha: 0.5,
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            dropout: 0.1,
            seq_len: 64,
            d_stock: 8,
            sent_hidden: 16,
            horizons: vec![1, 5, 20],
            batch_size: 32,
            accum_steps: 4,
            stage1_epochs: 2,
            stage2_epochs: 3,
            stage3_epochs: 5,
            stage1_lr: 3e-3,
            stage2_lr: 1.5e-3,
            stage3_lr: 3e-4,
            unfrozen_top_layers: 3,
            warmup_steps: 20,
            max_train_windows: 0,
            keep_best: true,
            lambda_mse: 1.0,
            lambda_direction: 0.5,
            lambda_corr: 0.2,
            lambda_reg: 1e-4,
            use_sentiment: true,
            arima_p_max: 3,
            arima_q_max: 3,
            arima_d_max: 2,
            arima_max_iters: 2000,
            bootstrap_draws: 1000,
            confidence_level: 0.95,
            top_k: 2,
            cost_bps: 10.0,
            naive_turnover: false,
        }
    }

    /// Smallest configuration that exercises every command in seconds.
    pub fn tiny() -> Self {
        Self {
            preset: "tiny".into(),
            n_stocks: 4,
            n_days: 320,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            seq_len: 8,
            d_stock: 4,
            sent_hidden: 4,
            horizons: vec![1, 5],
            batch_size: 16,
            accum_steps: 1,
            stage1_epochs: 1,
            stage2_epochs: 1,
            stage3_epochs: 1,
            warmup_steps: 2,
            arima_p_max: 1,
            arima_q_max: 1,
            arima_d_max: 1,
            arima_max_iters: 300,
            top_k: 1,
            ..Self::desk()
        }
    }

    /// Hyperparameters of the published configuration.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            n_stocks: 20,
            n_days: 10900,
            n_sectors: 5,
            layers: 6,
            heads: 8,
            d_model: 512,
            d_ff: 2048,
            dropout: 0.1,
            seq_len: 252,
            d_stock: 16,
            sent_hidden: 64,
            batch_size: 32,
            accum_steps: 4,
            stage1_epochs: 10,
            stage2_epochs: 20,
            stage3_epochs: 30,
            stage1_lr: 1e-4,
            stage2_lr: 5e-5,
            stage3_lr: 1e-5,
            unfrozen_top_layers: 3,
            warmup_steps: 4000,
            arima_p_max: 5,
            arima_q_max: 5,
            top_k: 5,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset '{other}' (desk, tiny, paper)"))),
        }
    }

    /// Parses a flat TOML document; keys it omits keep their values from the
    /// preset it names (desk by default).
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let base = match table.get("preset") {
            Some(toml::Value::String(p)) => Self::preset(p)?,
            Some(_) => return Err(Error::Config("preset must be a string".into())),
            None => Self::desk(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in table {
            if !merged.contains_key(&k) {
                return Err(Error::Config(format!("unknown configuration key '{k}'")));
            }
            merged.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_toml().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.model().validate()?;
        self.loss_weights().validate()?;
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {f:?}")));
        }
        if !(0.0..=1.0).contains(&self.edge_alpha) {
            return Err(Error::Config(format!("edge_alpha must lie in [0,1], got {}", self.edge_alpha)));
        }
        if self.batch_size == 0 || self.accum_steps == 0 {
            return Err(Error::Config("batch_size and accum_steps must be positive".into()));
        }
        if self.arima_d_max > 2 {
            return Err(Error::Config("arima_d_max must be at most 2".into()));
        }
        if !(self.cost_bps >= 0.0) {
            return Err(Error::Config("cost_bps must be non-negative".into()));
        }
        if !(0.0 < self.confidence_level && self.confidence_level < 1.0) {
            return Err(Error::Config("confidence_level must lie in (0,1)".into()));
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_stocks: self.n_stocks,
            n_days: self.n_days,
            n_sectors: self.n_sectors,
            sector_factor_strength: self.sector_factor_strength,
            regime_vol_levels: self.regime_vol_levels.clone(),
            regime_switch_prob: self.regime_switch_prob,
            ar_coefficient: self.ar_coefficient,
            sentiment_lead_strength: self.sentiment_lead_strength,
            sentiment_noise: self.sentiment_noise,
            sentiment_start_day: self.sentiment_start_day,
            seed: self.seed,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout: self.dropout,
            seq_len: self.seq_len,
            n_stocks: self.n_stocks,
            d_stock: self.d_stock,
            sent_hidden: self.sent_hidden,
            horizons: self.horizons.clone(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mse: self.lambda_mse,
            direction: self.lambda_direction,
            corr: self.lambda_corr,
            reg: self.lambda_reg,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            stages: [
                StageConfig { epochs: self.stage1_epochs, lr: self.stage1_lr },
                StageConfig { epochs: self.stage2_epochs, lr: self.stage2_lr },
                StageConfig { epochs: self.stage3_epochs, lr: self.stage3_lr },
            ],
            top_layers: self.unfrozen_top_layers,
            batch_size: self.batch_size,
            accum_steps: self.accum_steps,
            warmup_steps: self.warmup_steps,
            weights: self.loss_weights(),
            max_train_windows: self.max_train_windows,
            seed: self.seed,
            keep_best: self.keep_best,
        }
    }

    pub fn arima_grid(&self) -> ArimaGrid {
        ArimaGrid {
            p: (0..=self.arima_p_max).collect(),
            d: (0..=self.arima_d_max).collect(),
            q: (0..=self.arima_q_max).collect(),
            max_iters: self.arima_max_iters,
        }
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_fraction, self.val_fraction, self.test_fraction)
    }

    pub fn turnover_mode(&self) -> TurnoverMode {
        if self.naive_turnover {
            TurnoverMode::Naive
        } else {
            TurnoverMode::Drifted
        }
    }

    pub fn warmup_days(&self) -> usize {
        WARMUP_DAYS
    }
}
