//! Graph-aware transformer forecasting with sentiment fusion.
//!
//! The crate covers the whole pipeline: synthetic market and sentiment
//! generation, feature engineering, the node transformer and its training
//! loop, reference baselines, forecast evaluation and a long-short backtest.

pub mod backtest;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod graphstructure;
pub mod nodeformer;
pub mod sentiment;
pub mod synthgen;
pub mod training;

pub use graphsent_autograd as autograd;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("imputation error: {0}")]
    Imputation(String),
    #[error("feature error: {0}")]
    Feature(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("baseline error: {0}")]
    Baseline(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("degenerate test: {0}")]
    Degenerate(String),
    #[error("backtest error: {0}")]
    Backtest(String),
    #[error("statistic error: {0}")]
    Stat(String),
    #[error("persistence error: {0}")]
    Persistence(String),
    #[error(transparent)]
    Autograd(#[from] graphsent_autograd::AutogradError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<Error> for graphsent_autograd::AutogradError {
    fn from(e: Error) -> Self {
        match e {
            Error::Autograd(inner) => inner,
            other => graphsent_autograd::AutogradError::Check(other.to_string()),
        }
    }
}
