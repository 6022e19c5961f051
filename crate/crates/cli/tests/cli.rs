//! Command surface: exit codes, artifact formats and provenance headers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphsent_cli::io::{read_market, read_predictions, read_provenance, write_market, Provenance, Table};
use graphsent_core::config::RunConfig;
use graphsent_core::nodeformer::Ablation;
use graphsent_core::synthgen::generate_market;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("graphsent-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn graphsent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphsent"))
        .args(args)
        .current_dir(dir)
        .env_remove("GRAPHSENT_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = graphsent(dir, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn gen_featurize_gradcheck_on_tiny_preset() {
    let d = scratch("smoke");
    ok(&d, &["--preset", "tiny", "gen", "--out", "data"]);
    ok(&d, &["--preset", "tiny", "featurize", "--data", "data", "--out", "out"]);
    let out = ok(&d, &["--preset", "tiny", "gradcheck"]);
    assert!(out.contains("max relative error"));
    let t = Table::read(&d.join("out/features.csv")).unwrap();
    assert_eq!(t.headers.len(), 3 + 17 + 3);
    assert_eq!(t.rows.len(), 4 * 320);
    let hash = RunConfig::tiny().hash();
    for f in ["data/ohlcv.csv", "data/sentiment.csv", "data/sectors.csv", "out/features.csv"] {
        assert_eq!(read_provenance(&d.join(f)).unwrap(), Provenance { seed: 7, config_hash: hash.clone() });
    }
}

#[test]
fn unknown_command_is_a_usage_error() {
    let d = scratch("usage");
    assert_eq!(graphsent(&d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(graphsent(&d, &["train", "--bogus-flag"]).status.code(), Some(2));
    assert_eq!(graphsent(&d, &["--preset", "tiny", "--config", "x.toml", "config"]).status.code(), Some(2));
    assert_eq!(graphsent(&d, &[]).status.code(), Some(2));
}

#[test]
fn missing_prediction_column_is_named() {
    let d = scratch("column");
    fs::write(
        d.join("p.csv"),
        "# seed=1\n# config_hash=x\nmodel,ticker,date,horizon,y_pred,y_prior,p_up\nm,A,2020-01-02,1,1,1,0.5\n",
    )
    .unwrap();
    let o = graphsent(&d, &["--preset", "tiny", "evaluate", "--predictions", "p.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing column 'y_true'"));
    let o = graphsent(&d, &["--preset", "tiny", "backtest", "--predictions", "p.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn module_failures_exit_one() {
    let d = scratch("failures");
    let o = graphsent(&d, &["--preset", "tiny", "train", "--data", "nowhere"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sectors.csv"));
    assert_eq!(graphsent(&d, &["--preset", "nonesuch", "config"]).status.code(), Some(1));
    fs::write(d.join("bad.toml"), "preset = \"tiny\"\nlearning_rate = 0.1\n").unwrap();
    let o = graphsent(&d, &["--config", "bad.toml", "config"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn config_file_from_flag_or_environment() {
    let d = scratch("config");
    fs::write(d.join("run.toml"), "preset = \"tiny\"\nseed = 11\n").unwrap();
    let mut want = RunConfig::tiny();
    want.seed = 11;
    let out = ok(&d, &["--config", "run.toml", "config"]);
    assert!(out.starts_with(&format!("# config_hash={}\n", want.hash())));
    assert_eq!(RunConfig::from_toml(&out).unwrap(), want);
    let o = Command::new(env!("CARGO_BIN_EXE_graphsent"))
        .arg("config")
        .current_dir(&d)
        .env("GRAPHSENT_CONFIG", "run.toml")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), out);
    let desk = ok(&d, &["config"]);
    assert!(desk.contains(&RunConfig::desk().hash()));
}

#[test]
fn train_predict_evaluate_backtest_ablate() {
    let d = scratch("pipeline");
    let t = ["--preset", "tiny"];
    let run = |rest: &[&str]| ok(&d, &[&t[..], rest].concat());
    run(&["gen", "--out", "data"]);
    run(&["train", "--data", "data", "--out", "out"]);
    for f in ["model.ckpt", "train_log.csv", "edges.csv", "attention.csv"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }
    let log = Table::read(&d.join("out/train_log.csv")).unwrap();
    assert_eq!(log.rows.len(), 3);
    run(&["predict", "--data", "data", "--out", "out"]);
    let rows = read_predictions(&d.join("out/predictions.csv")).unwrap();
    for m in ["nodeformer", "naive", "arima"] {
        assert!(rows.iter().any(|r| r.model == m), "{m}");
    }
    for r in rows.iter().filter(|r| r.model == "naive") {
        assert_eq!(r.y_pred, r.y_prior);
        assert!(r.p_up.is_none());
    }
    let report = run(&["evaluate", "--predictions", "out/predictions.csv", "--data", "data", "--out", "out"]);
    assert!(report.contains("Volatility regimes"));
    let ev = fs::read_to_string(d.join("out/evaluation.csv")).unwrap();
    assert!(ev.contains("significance,nodeformer_vs_naive,1,t_p,"));
    assert!(ev.contains("regime_high,nodeformer,1,mape,"));
    assert!(ev.contains("accuracy,naive,1,theils_u,1\n"));
    run(&["backtest", "--predictions", "out/predictions.csv", "--out", "out"]);
    let summary = Table::read(&d.join("out/backtest_summary.csv")).unwrap();
    assert_eq!(summary.headers, ["model", "statistic", "gross", "net"]);
    assert_eq!(summary.rows.len(), 3 * 6);
    run(&["ablate", "--data", "data", "--out", "out"]);
    let ab = Table::read(&d.join("out/ablation.csv")).unwrap();
    let names: Vec<&str> = ab.rows.iter().map(|r| r.get(0).unwrap()).collect();
    let want: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
    assert_eq!(names, want);
    assert!(ab.rows.iter().all(|r| r.get(6) == Some("ok")));
}

#[test]
fn predict_rejects_a_checkpoint_from_another_config() {
    let d = scratch("mismatch");
    ok(&d, &["--preset", "tiny", "gen", "--out", "data"]);
    ok(&d, &["--preset", "tiny", "train", "--data", "data", "--out", "out"]);
    fs::write(d.join("other.toml"), "preset = \"tiny\"\ncost_bps = 5.0\n").unwrap();
    let o = graphsent(&d, &["--config", "other.toml", "predict", "--data", "data", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config hash"));
}

#[test]
fn market_csv_round_trips_and_imputes_blank_cells() {
    let d = scratch("roundtrip");
    let cfg = RunConfig::tiny();
    let m = generate_market(&cfg.synth()).unwrap();
    write_market(&d, &Provenance::of(&cfg), &m).unwrap();
    assert_eq!(read_market(&d, &cfg).unwrap(), m);

    let text = fs::read_to_string(d.join("ohlcv.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Header lines, column line, then 4 tickers per day: blank S001's close on day 10.
    let k = 3 + 10 * 4 + 1;
    let mut f: Vec<&str> = lines[k].split(',').collect();
    assert_eq!(f[1], "S001");
    f[5] = "";
    lines[k] = f.join(",");
    // Drop S002's whole row on day 300 (test period).
    lines.remove(3 + 300 * 4 + 2);
    fs::write(d.join("ohlcv.csv"), lines.join("\n") + "\n").unwrap();
    let back = read_market(&d, &cfg).unwrap();
    let (a, b) = (m[1].bars[9].close, m[1].bars[11].close);
    assert!((back[1].bars[10].close - (a + b) / 2.0).abs() < 1e-12);
    assert_eq!(back[2].bars[300], m[2].bars[299]);
}
