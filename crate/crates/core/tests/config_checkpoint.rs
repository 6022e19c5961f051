//! Configuration parsing, presets and the checkpoint container.

mod common;

use common::{dataset, market, synth};
use graphsent_core::checkpoint::{load_model, model_container, save_model, Container, FORMAT};
use graphsent_core::config::RunConfig;
use graphsent_core::features::SplitPart;
use graphsent_core::nodeformer::{Model, Variant};
use graphsent_core::training::predict;
use graphsent_core::Error;

#[test]
fn unknown_keys_are_rejected() {
    match RunConfig::from_toml("seed = 3\nlearning_rate = 0.1\n") {
        Err(Error::Config(m)) => assert!(m.contains("learning_rate"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn partial_documents_overlay_their_preset() {
    let c = RunConfig::from_toml("preset = \"tiny\"\nseed = 11\n").unwrap();
    assert_eq!(c.seed, 11);
    assert_eq!(c.d_model, RunConfig::tiny().d_model);
    let d = RunConfig::from_toml("top_k = 3").unwrap();
    assert_eq!(d.preset, "desk");
    assert_eq!(d.top_k, 3);
    assert!(matches!(RunConfig::from_toml("preset = \"huge\""), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
}

#[test]
fn invalid_values_are_rejected() {
    for doc in [
        "train_fraction = 0.9",
        "d_model = 30\nheads = 4",
        "edge_alpha = 1.5",
        "lambda_mse = 0.0",
        "arima_d_max = 3",
        "confidence_level = 1.0",
        "n_sectors = 0",
    ] {
        assert!(matches!(RunConfig::from_toml(doc), Err(Error::Config(_))), "{doc}");
    }
}

#[test]
fn presets_validate_and_round_trip() {
    for name in ["desk", "tiny", "paper"] {
        let c = RunConfig::preset(name).unwrap();
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }
    let p = RunConfig::paper();
    assert_eq!((p.layers, p.heads, p.d_model, p.d_ff, p.seq_len), (6, 8, 512, 2048, 252));
    assert_eq!((p.lambda_mse, p.lambda_direction, p.lambda_corr, p.lambda_reg), (1.0, 0.5, 0.2, 1e-4));
    assert_eq!((p.batch_size, p.accum_steps, p.top_k, p.cost_bps), (32, 4, 5, 10.0));
}

#[test]
fn hash_tracks_content() {
    let a = RunConfig::desk();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
}

fn trained_like_model() -> (Model, RunConfig) {
    let mut c = RunConfig::tiny();
    c.n_stocks = 3;
    let mut m = Model::new(c.model(), &common::random_edges(3, 1), 5).unwrap();
    let e0 = m.e0_index();
    for (k, t) in m.params.tensors.iter_mut().enumerate() {
        if k != e0 {
            t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += (i as f64 * 0.37).sin() * 1e-3);
        }
    }
    (m, c)
}

#[test]
fn container_round_trip_is_byte_identical() {
    let (m, c) = trained_like_model();
    let bytes = model_container(&m, &c).to_bytes();
    assert!(bytes.starts_with(FORMAT.as_bytes()));
    let back = Container::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.config, c);
}

#[test]
fn corrupted_containers_are_rejected() {
    let (m, c) = trained_like_model();
    let bytes = model_container(&m, &c).to_bytes();
    let truncated = &bytes[..bytes.len() - 9];
    assert!(matches!(Container::from_bytes(truncated), Err(Error::Persistence(_))));
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    assert!(matches!(Container::from_bytes(&flipped), Err(Error::Persistence(_))));
    let mut v2 = bytes.clone();
    v2[FORMAT.len() + 1] = b'2';
    match Container::from_bytes(&v2) {
        Err(Error::Persistence(m)) => assert!(m.contains("version"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(Container::from_bytes(b"not a checkpoint").is_err());
}

#[test]
fn mismatched_shapes_are_rejected() {
    let (m, c) = trained_like_model();
    let mut cont = model_container(&m, &c);
    cont.config.d_model = 16;
    cont.config.heads = 2;
    let bytes = cont.to_bytes();
    let parsed = Container::from_bytes(&bytes).unwrap();
    assert!(matches!(graphsent_core::checkpoint::model_from_container(&parsed), Err(Error::Persistence(_))));
}

#[test]
fn loaded_model_predicts_bit_exactly() {
    let dir = tempdir();
    let (m, c) = trained_like_model();
    let path = dir.join("model.ckpt");
    save_model(&m, &c, &path).unwrap();
    let (loaded, cfg) = load_model(&path).unwrap();
    assert_eq!(cfg, c);
    assert_eq!(loaded.params, m.params);
    let first = std::fs::read(&path).unwrap();
    save_model(&loaded, &cfg, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let (mk, s) = market(&synth(3, 320, 2));
    let ds = dataset(&mk, &s, &c.horizons);
    let ends = ds.windows(SplitPart::Test, c.seq_len).unwrap();
    let a = predict(&m, &ds, &ends, &Variant::FULL).unwrap();
    let b = predict(&loaded, &ds, &ends, &Variant::FULL).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(dir).ok();
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("graphsent-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
