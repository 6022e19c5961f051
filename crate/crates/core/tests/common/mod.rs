//! Shared fixtures for integration tests.

#![allow(dead_code)]

use graphsent_core::autograd::Tensor;
use graphsent_core::dataset::Dataset;
use graphsent_core::features::{partition_dataset, N_FEATURES, WARMUP_DAYS};
use graphsent_core::nodeformer::{Inputs, ModelConfig};
use graphsent_core::synthgen::{generate_market, generate_sentiment, MarketSeries, SentimentStream, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_model(n: usize, t: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        dropout: 0.0,
        seq_len: t,
        n_stocks: n,
        d_stock: 3,
        sent_hidden: 4,
        horizons: vec![1, 5],
    }
}

pub fn synth(n: usize, days: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_stocks: n,
        n_days: days,
        n_sectors: 2,
        seed,
        ..SynthConfig::default()
    }
}

pub fn market(cfg: &SynthConfig) -> (Vec<MarketSeries>, Vec<SentimentStream>) {
    let m = generate_market(cfg).unwrap();
    let s = generate_sentiment(cfg, &m).unwrap();
    (m, s)
}

pub fn dataset(m: &[MarketSeries], s: &[SentimentStream], horizons: &[usize]) -> Dataset {
    let split = partition_dataset(m[0].bars.len(), (0.7, 0.15, 0.15)).unwrap();
    Dataset::build(m, s, split, horizons, WARMUP_DAYS, false).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_inputs(b: usize, t: usize, n: usize, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Inputs {
        x: random_tensor(&mut rng, &[b, t, n, N_FEATURES], -1.5, 1.5),
        s1: random_tensor(&mut rng, &[b, n, t], -1.0, 1.0),
        sent_in: random_tensor(&mut rng, &[b, n, 4], -1.0, 1.0),
        fusion_in: random_tensor(&mut rng, &[b, 4], 0.0, 1.0),
    }
}

/// Symmetric edges in `(0, 1)` with unit diagonal.
pub fn random_edges(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(0.05..0.95);
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
    e
}
