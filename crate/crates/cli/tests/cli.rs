//! End-to-end tests of the `retrainbench` binary on a small synthetic panel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use retrainbench::config::RunConfig;
use retrainbench::report::{parse_chart_data, ChartKind};
use retrainbench::run::load_panel;

const BIN: &str = env!("CARGO_BIN_EXE_retrainbench");

const SMALL: &str = r#"
[dataset]
frequency = "weekly"

[dataset.synthetic]
n_series = 8
length = 170
zero_inflation = 0.3
seasonality_amplitude = 0.4
rng_seed = 11

[models]
families = ["pooled_linear", "seasonal_naive"]

[backtest]
retrain_set = [4, 13, 52]
baseline_r = 4
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs the small config once; later tests read its artifacts.
fn small_run() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = scratch("small");
        let cfg = write_config(&dir, SMALL);
        let out = dir.join("out");
        let o = bin(&["run", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
        assert!(o.status.success(), "run failed: {}", String::from_utf8_lossy(&o.stderr));
        out
    })
}

type Row = BTreeMap<String, String>;
/// series -> origin_ds -> forecast rows
type PathsBySeries = BTreeMap<String, BTreeMap<String, Vec<Row>>>;

fn read_rows(path: &Path) -> Vec<Row> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .map(String::from)
                .zip(r.iter().map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key}={}", row[key]))
}

#[test]
fn validate_accepts_good_and_rejects_bad_configs() {
    let dir = scratch("validate");
    let good = write_config(&dir, SMALL);
    let o = bin(&["validate", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.join("bad.toml");
    std::fs::write(&bad, SMALL.replace("baseline_r = 4", "baseline_r = 2")).unwrap();
    let o = bin(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("baseline_r"));

    let unknown = dir.join("unknown.toml");
    std::fs::write(&unknown, format!("{SMALL}\n[output]\ndirr = \"x\"\n")).unwrap();
    assert_eq!(bin(&["validate", unknown.to_str().unwrap()]).status.code(), Some(1));

    let missing = dir.join("missing.toml");
    assert_eq!(bin(&["validate", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_writes_every_artifact() {
    let out = small_run();
    for name in [
        "forecasts.csv",
        "fits.csv",
        "metrics.csv",
        "metrics_detail.csv",
        "stats.json",
        "cost.csv",
        "optimal.csv",
        "optimal_by_model.csv",
        "resolved_config.toml",
        "manifest.json",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 6);

    let fits = read_rows(&out.join("fits.csv"));
    for (r, expected) in [(4, 10), (13, 4), (52, 1)] {
        let n = fits
            .iter()
            .filter(|f| f["model"] == "pooled_linear" && f["r"] == r.to_string())
            .count();
        assert_eq!(n, expected, "fits at r={r}");
    }
    let forecasts = read_rows(&out.join("forecasts.csv"));
    // 2 models x 3 scenarios x 8 series x 40 origins x 13 steps.
    assert_eq!(forecasts.len(), 2 * 3 * 8 * 40 * 13);
}

#[test]
fn metrics_match_a_recomputation_from_forecasts() {
    let out = small_run();
    let cfg = RunConfig::load(&out.join("resolved_config.toml"))
        .unwrap()
        .resolve()
        .unwrap();
    let (panel, _) = load_panel(&cfg).unwrap();
    let levels = cfg.quantiles.as_slice().to_vec();
    let s = cfg.backtest.season;
    let date_index: BTreeMap<String, usize> = panel
        .dates()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.to_string(), i))
        .collect();

    let mut paths: BTreeMap<(String, usize), PathsBySeries> = BTreeMap::new();
    for row in read_rows(&out.join("forecasts.csv")) {
        paths
            .entry((row["model"].clone(), row["r"].parse().unwrap()))
            .or_default()
            .entry(row["unique_id"].clone())
            .or_default()
            .entry(row["origin_ds"].clone())
            .or_default()
            .push(row);
    }

    let metrics = read_rows(&out.join("metrics.csv"));
    assert_eq!(metrics.len(), paths.len());
    for m in &metrics {
        let key = (m["model"].clone(), m["r"].parse::<usize>().unwrap());
        let mut rmsse_series = Vec::new();
        let mut smql_series = Vec::new();
        for (id, origins) in &paths[&key] {
            let y = panel.values(panel.series_index(id).unwrap());
            let (mut rm, mut sm) = (Vec::new(), Vec::new());
            for rows in origins.values() {
                let end = date_index[&rows[0]["origin_ds"]] + 1;
                let train = &y[..end];
                let d = train.len() - s;
                let mse_naive = (s..train.len()).map(|t| (train[t] - train[t - s]).powi(2)).sum::<f64>() / d as f64;
                let mae_naive = (s..train.len()).map(|t| (train[t] - train[t - s]).abs()).sum::<f64>() / d as f64;
                let h = rows.len() as f64;
                let actual = |r: &BTreeMap<String, String>| y[date_index[&r["target_ds"]]];
                let mse = rows.iter().map(|r| (actual(r) - num(r, "point")).powi(2)).sum::<f64>() / h;
                rm.push((mse / mse_naive).sqrt());
                let mut total = 0.0;
                for &q in &levels {
                    let col = format!("q{q}");
                    let loss: f64 = rows
                        .iter()
                        .map(|r| {
                            let u = actual(r) - num(r, &col);
                            if u >= 0.0 {
                                q * u
                            } else {
                                (q - 1.0) * u
                            }
                        })
                        .sum();
                    total += loss / h / mae_naive;
                }
                sm.push(total / levels.len() as f64);
            }
            rmsse_series.push(rm.iter().sum::<f64>() / rm.len() as f64);
            smql_series.push(sm.iter().sum::<f64>() / sm.len() as f64);
        }
        assert_eq!(num(m, "n_excluded"), 0.0);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            (mean(&rmsse_series) - num(m, "mean_rmsse")).abs() < 1e-9,
            "{key:?} rmsse"
        );
        assert!((mean(&smql_series) - num(m, "mean_smql")).abs() < 1e-9, "{key:?} smql");
    }
}

#[test]
fn report_charts_carry_the_csv_values() {
    let out = small_run();
    let report = out.join("report");
    let o = bin(&["report", out.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let metrics = read_rows(&out.join("metrics.csv"));
    for (file, column) in [
        ("rel_rmsse.svg", "rel_rmsse"),
        ("rel_smql.svg", "rel_smql"),
        ("rel_ct.svg", "rel_ct"),
    ] {
        let chart = parse_chart_data(&std::fs::read_to_string(report.join(file)).unwrap()).expect(file);
        assert_eq!(chart.x, vec![4, 13, 52]);
        let panel = &chart.panels[0];
        assert_eq!(panel.reference, Some(1.0));
        for series in &panel.series {
            for (i, r) in chart.x.iter().enumerate() {
                let row = metrics
                    .iter()
                    .find(|m| m["model"] == series.name && m["r"] == r.to_string())
                    .unwrap();
                assert_eq!(series.values[i], Some(num(row, column)), "{file} {} r={r}", series.name);
                if *r == 4 {
                    assert_eq!(series.values[i], Some(1.0), "baseline plots at 1.0");
                }
            }
        }
    }

    let costs = read_rows(&out.join("cost.csv"));
    let chart = parse_chart_data(&std::fs::read_to_string(report.join("cost.svg")).unwrap()).unwrap();
    assert_eq!(chart.panels.len(), 2);
    for series in &chart.panels[0].series {
        for (i, r) in chart.x.iter().enumerate() {
            let row = costs
                .iter()
                .find(|c| c["model"] == series.name && c["r"] == r.to_string())
                .unwrap();
            assert_eq!(series.values[i], Some(num(row, "cost")));
        }
    }

    let hist = parse_chart_data(&std::fs::read_to_string(report.join("optimal_hist.svg")).unwrap()).unwrap();
    assert_eq!(hist.kind, ChartKind::Bar);
    let optimal = read_rows(&out.join("optimal.csv"));
    for series in &hist.panels[0].series {
        assert_eq!(series.values.len(), 3, "one bin per retrain scenario");
        let total: f64 = series.values.iter().flatten().sum();
        assert_eq!(total as usize, optimal.len());
    }
    assert!(report.join("summary.txt").is_file());
}

#[test]
fn report_on_missing_directory_fails() {
    let dir = scratch("empty-report");
    let o = bin(&["report", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn synth_output_feeds_a_csv_config() {
    let dir = scratch("synth");
    let data = dir.join("data");
    let o = bin(&[
        "synth",
        "--n-series",
        "4",
        "--length",
        "160",
        "--seed",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(
        &dir,
        r#"
[dataset]
frequency = "weekly"
demand = "data/demand.csv"
statics = "data/statics.csv"

[models]
families = ["seasonal_naive"]

[backtest]
retrain_set = [1, 52]
"#,
    );
    let out = dir.join("out");
    let o = bin(&["run", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_rows(&out.join("metrics.csv")).len(), 2);
}

#[test]
fn resolved_config_reproduces_itself() {
    let out = small_run();
    let text = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    let again = RunConfig::from_toml(&text).unwrap().resolve().unwrap().to_toml();
    assert_eq!(again, text);
}

#[test]
fn rerun_with_same_seed_is_identical_outside_timing() {
    let first = small_run();
    let dir = scratch("rerun");
    let cfg = write_config(&dir, SMALL);
    let out = dir.join("out");
    let o = bin(&["run", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    for name in ["forecasts.csv", "stats.json", "optimal.csv", "metrics_detail.csv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(out.join(name)).unwrap(),
            "{name}"
        );
    }
    let untimed = |p: &Path| -> Vec<Vec<String>> {
        read_rows(&p.join("metrics.csv"))
            .into_iter()
            .map(|mut row| {
                row.remove("ct_wall_s");
                row.remove("rel_ct");
                row.into_values().collect()
            })
            .collect()
    };
    assert_eq!(untimed(first), untimed(&out));
}
