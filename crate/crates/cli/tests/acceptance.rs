//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs sequentially (harness = false) so that timing-based criteria never
//! share the CPU with another check. Pass criterion ids (`C3 C4`) as extra
//! arguments to run a subset.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retrainbench::report::read_metrics;
use retrainbench::run::{self, RunOptions};
use retrainbench_core::analysis::{cost_of_scenario, friedman_table, CostModel};
use retrainbench_core::backtest::{run_backtest, BacktestConfig, BacktestRun, ForecastRecord, RunInputs};
use retrainbench_core::features::{FeatureConfig, FeatureMatrix};
use retrainbench_core::metrics::{self, AggregateOptions, MetricError};
use retrainbench_core::models::gbt::{fit_ensemble, BinnedMatrix, GbtLoss, GbtParams};
use retrainbench_core::models::mlp::Network;
use retrainbench_core::models::{ModelFamily, ModelSpec, QuantileLevels, DEFAULT_QUANTILES};
use retrainbench_core::panel::{generate_synthetic, Frequency, SyntheticSpec, TimeSeriesPanel};

type Check = fn(&mut Shared) -> Result<String, String>;

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    check: Check,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const CRITERIA: [Criterion; 10] = [
    Criterion {
        id: "C1",
        name: "metric oracle equivalence",
        budget: secs(5),
        check: c1_metric_oracle,
    },
    Criterion {
        id: "C2",
        name: "schedule exactness",
        budget: secs(120),
        check: c2_schedule,
    },
    Criterion {
        id: "C3",
        name: "stability at r=T",
        budget: secs(900),
        check: c3_stability,
    },
    Criterion {
        id: "C4",
        name: "probabilistic degradation at r=T",
        budget: secs(900),
        check: c4_probabilistic,
    },
    Criterion {
        id: "C5",
        name: "MLP gradient correctness",
        budget: secs(10),
        check: c5_gradients,
    },
    Criterion {
        id: "C6",
        name: "pinball stump quantile optimality",
        budget: secs(5),
        check: c6_stump_quantiles,
    },
    Criterion {
        id: "C7",
        name: "Friedman-Nemenyi oracle",
        budget: secs(1),
        check: c7_friedman,
    },
    Criterion {
        id: "C8",
        name: "cost arithmetic",
        budget: secs(1),
        check: c8_cost,
    },
    Criterion {
        id: "C9",
        name: "causality fuzz",
        budget: secs(120),
        check: c9_causality,
    },
    Criterion {
        id: "C10",
        name: "run determinism",
        budget: secs(1800),
        check: c10_determinism,
    },
];

/// State shared between criteria: the stationary-panel run used by C3, C4
/// and C10.
#[derive(Default)]
struct Shared {
    stationary: Option<Result<PathBuf, String>>,
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| f.eq_ignore_ascii_case(c.id)))
        .collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    println!("acceptance: {} criteria", selected.len());
    for c in &selected {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| (c.check)(&mut shared)))
            .unwrap_or_else(|p| Err(panic_message(p.as_ref())));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over budget of {:?}", c.budget)),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {:<4} {:<34} {:>7.1}s  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    let msg = p
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into());
    format!("panicked: {msg}")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// C1 --------------------------------------------------------------------

fn brute_rmsse(y: &[f64], f: &[f64], train: &[f64], s: usize) -> f64 {
    let mut num = 0.0;
    for t in 0..y.len() {
        num += (y[t] - f[t]) * (y[t] - f[t]);
    }
    num /= y.len() as f64;
    let mut den = 0.0;
    for t in s..train.len() {
        den += (train[t] - train[t - s]) * (train[t] - train[t - s]);
    }
    den /= (train.len() - s) as f64;
    (num / den).sqrt()
}

fn brute_sql(y: &[f64], f: &[f64], q: f64, train: &[f64], s: usize) -> f64 {
    let mut num = 0.0;
    for t in 0..y.len() {
        let u = y[t] - f[t];
        num += (q * u).max((q - 1.0) * u);
    }
    num /= y.len() as f64;
    let mut den = 0.0;
    for t in s..train.len() {
        den += (train[t] - train[t - s]).abs();
    }
    den /= (train.len() - s) as f64;
    num / den
}

fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let intermittent = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            if intermittent {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random_range(1..20) as f64
                }
            } else {
                rng.random_range(0.0..50.0)
            }
        })
        .collect()
}

fn c1_metric_oracle(_: &mut Shared) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_diff: f64 = 0.0;
    let mut cases = 0;
    while cases < 200 {
        let s = [1, 2, 4, 7][rng.random_range(0..4)];
        let n_train = s + 1 + rng.random_range(0..40);
        let train = random_series(&mut rng, n_train);
        if (s..train.len()).all(|t| train[t] == train[t - s]) {
            let err = metrics::rmsse(&[1.0], &[0.0], &train, s);
            ensure(err == Err(MetricError::ZeroDenominator), || {
                format!("flat history gave {err:?}")
            })?;
            continue;
        }
        let h = rng.random_range(1..=13);
        let y = random_series(&mut rng, h);
        let f: Vec<f64> = (0..h).map(|_| rng.random_range(0.0..40.0)).collect();
        let levels: Vec<f64> = DEFAULT_QUANTILES
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.6))
            .collect();
        let levels = if levels.is_empty() { vec![0.5] } else { levels };
        let paths: Vec<Vec<f64>> = levels
            .iter()
            .map(|_| (0..h).map(|_| rng.random_range(0.0..40.0)).collect())
            .collect();

        let got = metrics::rmsse(&y, &f, &train, s).map_err(|e| e.to_string())?;
        max_diff = max_diff.max((got - brute_rmsse(&y, &f, &train, s)).abs());
        let mut total = 0.0;
        for (&q, p) in levels.iter().zip(&paths) {
            let want = brute_sql(&y, p, q, &train, s);
            let got = metrics::sql(&y, p, q, &train, s).map_err(|e| e.to_string())?;
            max_diff = max_diff.max((got - want).abs());
            total += want;
        }
        let pairs: Vec<(f64, &[f64])> = levels.iter().copied().zip(paths.iter().map(Vec::as_slice)).collect();
        let got = metrics::smql(&y, &pairs, &levels, &train, s).map_err(|e| e.to_string())?;
        max_diff = max_diff.max((got - total / levels.len() as f64).abs());
        cases += 1;
    }
    ensure(max_diff <= 1e-10, || format!("max |diff| {max_diff:e} > 1e-10"))?;
    Ok(format!("200 cases, max |diff| {max_diff:.1e}"))
}

// C2 --------------------------------------------------------------------

fn weekly_panel(n_series: usize, length: usize, seed: u64) -> TimeSeriesPanel {
    let mut spec = SyntheticSpec::new(n_series, length, Frequency::Weekly, seed);
    spec.seasonality_amplitude = 0.3;
    spec.zero_inflation = 0.2;
    generate_synthetic(&spec).expect("valid synthetic spec")
}

struct Defaults {
    features: FeatureConfig,
    models: ModelSpec,
    quantiles: QuantileLevels,
    config: BacktestConfig,
}

impl Defaults {
    fn weekly() -> Self {
        Self {
            features: FeatureConfig::weekly_default(),
            models: ModelSpec::default(),
            quantiles: QuantileLevels::default(),
            config: BacktestConfig::for_frequency(Frequency::Weekly),
        }
    }

    fn inputs(&self) -> RunInputs<'_> {
        RunInputs {
            features: &self.features,
            models: &self.models,
            quantiles: &self.quantiles,
            config: &self.config,
        }
    }
}

fn c2_schedule(_: &mut Shared) -> Result<String, String> {
    let panel = weekly_panel(50, 200, 2);
    let d = Defaults::weekly();
    let set = d.config.retrain_set.clone();
    ensure(set == [1, 2, 3, 4, 6, 8, 10, 13, 26, 52], || {
        format!("retrain set {set:?}")
    })?;
    let mut runs = Vec::new();
    for &r in &set {
        let run = run_backtest(&panel, ModelFamily::PooledLinear, d.inputs(), r).map_err(|e| e.to_string())?;
        ensure(run.origins.len() == 40, || {
            format!("{} origins, expected 40", run.origins.len())
        })?;
        let expected = 40usize.div_ceil(r);
        ensure(run.fit_events.len() == expected, || {
            format!("r={r}: {} fits, expected {expected}", run.fit_events.len())
        })?;
        runs.push(run);
    }
    let refs: Vec<&BacktestRun> = runs.iter().collect();
    let frame = metrics::aggregate(&refs, &panel, AggregateOptions::default()).map_err(|e| e.to_string())?;
    let rel: Vec<(usize, f64)> = set
        .iter()
        .map(|&r| {
            let row = frame
                .summary_row(ModelFamily::PooledLinear, r)
                .expect("row per scenario");
            (r, row.rel_ct.expect("baseline present"))
        })
        .collect();
    let listing = rel
        .iter()
        .map(|(r, v)| format!("{r}:{v:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    let violations: Vec<String> = rel
        .windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .map(|w| format!("r={}->{} rises {:.4}->{:.4}", w[0].0, w[1].0, w[0].1, w[1].1))
        .collect();
    ensure(violations.is_empty(), || {
        format!(
            "fits = ceil(40/r) ok; rel_ct not non-increasing: {}; rel_ct {listing}",
            violations.join(", ")
        )
    })?;
    Ok(format!("fits = ceil(40/r) for all r; rel_ct {listing}"))
}

// C3, C4, C10 -------------------------------------------------------------

const STATIONARY: &str = r#"
[dataset]
frequency = "weekly"

[dataset.synthetic]
n_series = 200
length = 260
trend_slope = 0.0
seasonality_amplitude = 0.3
zero_inflation = 0.2
rng_seed = 2024

[models]
families = ["pooled_linear", "gbt", "mlp"]
rng_seed = 42

[backtest]
retrain_set = [1, 13, 52]
baseline_r = 1
"#;

fn stationary_run(out: &Path) -> Result<(), String> {
    let dir = out.parent().expect("nested output");
    let cfg = dir.join("stationary.toml");
    std::fs::write(&cfg, STATIONARY).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        output: Some(out.to_path_buf()),
        ..RunOptions::default()
    };
    run::run(&cfg, &opts).map(|_| ()).map_err(|e| e.to_string())
}

fn stationary(shared: &mut Shared) -> Result<PathBuf, String> {
    shared
        .stationary
        .get_or_insert_with(|| {
            let out = scratch("stationary").join("run1");
            stationary_run(&out).map(|()| out)
        })
        .clone()
}

fn at_t(shared: &mut Shared, column: &str, bound: f64, ct_bound: Option<f64>) -> Result<String, String> {
    let dir = stationary(shared)?;
    let rows = read_metrics(&dir).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut bad = Vec::new();
    for family in ["pooled_linear", "gbt", "mlp"] {
        let row = rows
            .iter()
            .find(|m| m.model == family && m.r == 52)
            .ok_or_else(|| format!("no {family} r=52 row"))?;
        let rel = match column {
            "rel_rmsse" => row.rel_rmsse,
            _ => row.rel_smql,
        }
        .ok_or_else(|| format!("{family}: no baseline"))?;
        let ct = row.rel_ct.ok_or_else(|| format!("{family}: no baseline"))?;
        if rel > bound {
            bad.push(format!("{family} {column} {rel:.4} > {bound}"));
        }
        match ct_bound {
            Some(b) => {
                if ct >= b {
                    bad.push(format!("{family} rel_ct {ct:.4} >= {b}"));
                }
                parts.push(format!("{family} {rel:.4}/ct {ct:.3}"));
            }
            None => parts.push(format!("{family} {rel:.4}")),
        }
    }
    let listing = format!("{column} at r=52: {}", parts.join(", "));
    ensure(bad.is_empty(), || format!("{}; {listing}", bad.join(", ")))?;
    Ok(listing)
}

fn c3_stability(shared: &mut Shared) -> Result<String, String> {
    at_t(shared, "rel_rmsse", 1.08, Some(0.15))
}

fn c4_probabilistic(shared: &mut Shared) -> Result<String, String> {
    at_t(shared, "rel_smql", 1.10, None)
}

/// metrics.csv with the wall-clock columns removed.
fn mask_timing(path: &Path) -> Result<String, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !matches!(*h, "ct_wall_s" | "rel_ct"))
        .map(|(i, _)| i)
        .collect();
    ensure(keep.len() + 2 == headers.len(), || {
        format!("unexpected metrics header {headers:?}")
    })?;
    let mut out = String::new();
    for rec in std::iter::once(Ok(headers)).chain(reader.records()) {
        let rec = rec.map_err(|e| e.to_string())?;
        let fields: Vec<&str> = keep.iter().map(|&i| &rec[i]).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn c10_determinism(shared: &mut Shared) -> Result<String, String> {
    let first = stationary(shared)?;
    let second = first.with_file_name("run2");
    let _ = std::fs::remove_dir_all(&second);
    stationary_run(&second)?;
    let mut differing = Vec::new();
    for name in [run::FORECASTS, run::STATS, run::OPTIMAL] {
        let a = std::fs::read(first.join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.join(name)).map_err(|e| e.to_string())?;
        if a != b {
            differing.push(name.to_string());
        }
    }
    if mask_timing(&first.join(run::METRICS))? != mask_timing(&second.join(run::METRICS))? {
        differing.push(format!("{} (outside timing columns)", run::METRICS));
    }
    ensure(differing.is_empty(), || format!("differs: {}", differing.join(", ")))?;
    Ok("forecasts.csv, stats.json, optimal.csv identical; metrics.csv identical except ct_wall_s, rel_ct".into())
}

// C5 --------------------------------------------------------------------

fn c5_gradients(_: &mut Shared) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_in = rng.random_range(2..=6);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect();
        let mut net = Network::init(n_in, &hidden, &DEFAULT_QUANTILES, &mut rng);
        let theta: Vec<f64> = (0..net.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_params(&theta);
        let n = rng.random_range(8..=24);
        let xs: Vec<f64> = (0..n * n_in).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grad) = net.loss_and_gradient(&xs, &ys);
        let k = rng.random_range(0..theta.len());
        let mut probe = theta.clone();
        probe[k] = theta[k] + eps;
        net.set_params(&probe);
        let up = net.loss(&xs, &ys);
        probe[k] = theta[k] - eps;
        net.set_params(&probe);
        let down = net.loss(&xs, &ys);
        let numeric = (up - down) / (2.0 * eps);
        let scale = grad[k].abs().max(numeric.abs());
        let rel = if scale == 0.0 {
            0.0
        } else {
            (grad[k] - numeric).abs() / scale
        };
        worst = worst.max(rel);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 probes, max relative error {worst:.1e}"))
}

// C6 --------------------------------------------------------------------

type Sampler = fn(&mut ChaCha8Rng) -> f64;

fn c6_stump_quantiles(_: &mut Shared) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = GbtParams {
        n_trees: 1,
        learning_rate: 1.0,
        max_depth: 0,
        min_leaf: 1,
        n_bins: 32,
    };
    let samplers: [(&str, Sampler); 4] = [
        ("uniform", |r| r.random_range(0.0..10.0)),
        ("exponential", |r| -r.random_range(f64::EPSILON..1.0).ln() * 3.0),
        ("intermittent", |r| {
            if r.random_bool(0.6) {
                0.0
            } else {
                r.random_range(1..12) as f64
            }
        }),
        ("heavy-tailed", |r| r.random_range(f64::EPSILON..1.0).powf(-0.7)),
    ];
    let mut checks = 0;
    let mut worst_gap_ratio: f64 = 0.0;
    for (name, draw) in samplers {
        let y: Vec<f64> = (0..1000).map(|_| draw(&mut rng)).collect();
        let rows: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let matrix = FeatureMatrix::from_rows(vec!["x0".into()], &rows, y.clone());
        let binned = BinnedMatrix::new(&matrix, params.n_bins);
        let mut sorted = y.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        for &q in &DEFAULT_QUANTILES {
            let ens = fit_ensemble(&matrix, &binned, &params, GbtLoss::Pinball(q)).map_err(|e| e.to_string())?;
            let pred = ens.predict(&rows[0]);
            let j = ((q * 1000.0).ceil() as usize).clamp(1, 1000) - 1;
            let below = if j > 0 { sorted[j] - sorted[j - 1] } else { 0.0 };
            let above = if j + 1 < 1000 { sorted[j + 1] - sorted[j] } else { 0.0 };
            let gap = below.max(above);
            let err = (pred - sorted[j]).abs();
            ensure(err <= gap, || {
                format!(
                    "{name} q={q}: stump {pred} vs order statistic {} (gap {gap})",
                    sorted[j]
                )
            })?;
            if gap > 0.0 {
                worst_gap_ratio = worst_gap_ratio.max(err / gap);
            }
            checks += 1;
        }
    }
    Ok(format!(
        "{checks} (sample, level) pairs, worst error {worst_gap_ratio:.2} gaps"
    ))
}

// C7 --------------------------------------------------------------------

fn c7_friedman(_: &mut Shared) -> Result<String, String> {
    let (k, n) = (10usize, 100usize);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let table: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|j| (rng.random_range(0.0..5.0) + 0.3 * j as f64).round())
                .collect()
        })
        .collect();

    let mut rank_sums = vec![0.0; k];
    for row in &table {
        for (j, &v) in row.iter().enumerate() {
            let below = row.iter().filter(|&&w| w < v).count() as f64;
            let equal = row.iter().filter(|&&w| w == v).count() as f64;
            rank_sums[j] += below + (equal + 1.0) / 2.0;
        }
    }
    let (kf, nf) = (k as f64, n as f64);
    let chi = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * nf * (kf + 1.0);
    // Two-tailed Nemenyi q for k = 10 at alpha = 0.05 (3.164 in printed tables).
    let q = 3.163684;
    let cd = q * (kf * (kf + 1.0) / (6.0 * nf)).sqrt();

    let test = friedman_table(&table, 0.05).map_err(|e| e.to_string())?;
    let got_cd = test.critical_difference.ok_or("no critical difference")?;
    ensure((test.chi_square - chi).abs() <= 1e-9, || {
        format!("statistic {} vs {chi}", test.chi_square)
    })?;
    ensure((got_cd - cd).abs() <= 1e-9, || format!("CD {got_cd} vs {cd}"))?;

    let tied = vec![vec![1.5; k]; n];
    let flat = friedman_table(&tied, 0.05).map_err(|e| e.to_string())?;
    ensure(flat.chi_square == 0.0, || {
        format!("all-tied statistic {}", flat.chi_square)
    })?;
    Ok(format!("chi2 {chi:.6}, CD {cd:.6}; all-tied statistic 0"))
}

// C8 --------------------------------------------------------------------

fn c8_cost(_: &mut Shared) -> Result<String, String> {
    let model = CostModel {
        rate_per_hour: 3.5,
        n_series_dataset: 30_490,
        n_series_target: 30_490,
        currency: "USD".into(),
    };
    let c = model.cost(7200.0);
    ensure(c == 7.0, || format!("cost(7200 s) = {c}"))?;
    let base = cost_of_scenario(7200.0, Some(7200.0), &model).map_err(|e| e.to_string())?;
    ensure(base.savings == 0.0, || format!("baseline savings {}", base.savings))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let mut ct: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..10_000.0)).collect();
        ct.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let savings: Vec<f64> = ct
            .iter()
            .map(|&t| cost_of_scenario(t, Some(ct[0]), &model).map(|c| c.savings))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(savings.windows(2).all(|w| w[1] >= w[0]), || {
            format!("savings not monotone: {savings:?}")
        })?;
    }
    Ok("cost(7200 s) = 7.00, baseline savings 0, monotone over 100 CT profiles".into())
}

// C9 --------------------------------------------------------------------

type Key = (usize, usize, usize);

fn index_forecasts(run: &BacktestRun) -> BTreeMap<Key, &ForecastRecord> {
    run.forecasts
        .iter()
        .map(|f| ((f.series, f.origin, f.step), f))
        .collect()
}

fn c9_causality(_: &mut Shared) -> Result<String, String> {
    let panel = weekly_panel(12, 170, 9);
    let d = Defaults::weekly();
    let families = [
        ModelFamily::PooledLinear,
        ModelFamily::Gbt,
        ModelFamily::Mlp,
        ModelFamily::SeasonalNaive,
    ];
    let scenarios = [1usize, 4, 13, 52];
    let mut baselines: BTreeMap<(usize, usize), BacktestRun> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let first_origin = panel.len() - d.config.test_size;
    let (mut checked, mut later_changed) = (0usize, 0usize);
    for m in 0..50 {
        let fi = m % families.len();
        let r = scenarios[rng.random_range(0..scenarios.len())];
        let family = families[fi];
        let base = match baselines.entry((fi, r)) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(run_backtest(&panel, family, d.inputs(), r).map_err(|e| e.to_string())?),
        };

        let series = rng.random_range(0..panel.n_series());
        let t = rng.random_range(first_origin..panel.len());
        let mut values = panel.values(series).to_vec();
        values[t] += rng.random_range(1.0..25.0);
        let mutated = panel.with_series_values(series, values).map_err(|e| e.to_string())?;
        let run = run_backtest(&mutated, family, d.inputs(), r).map_err(|e| e.to_string())?;

        let before = index_forecasts(base);
        for f in &run.forecasts {
            let old = before[&(f.series, f.origin, f.step)];
            if f.origin <= t {
                ensure(
                    f.point.to_bits() == old.point.to_bits() && f.quantiles == old.quantiles,
                    || {
                        format!(
                        "{family} r={r}: value at t={t} of series {series} changed forecast from origin {} (series {}, step {})",
                        f.origin, f.series, f.step
                    )
                    },
                )?;
                checked += 1;
            } else if f.point != old.point {
                later_changed += 1;
            }
        }
    }
    ensure(later_changed > 0, || "no mutation affected any later forecast".into())?;
    Ok(format!(
        "50 mutations, {checked} pre-mutation forecasts unchanged, {later_changed} later forecasts moved"
    ))
}
