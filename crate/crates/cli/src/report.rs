//! `report`: SVG charts and a plain-text summary from an artifact directory.
//!
//! Each chart is a standalone SVG with no external assets. The plotted values
//! are also embedded as JSON inside `<metadata id="chart-data">` so that
//! tools and tests can read the data back without parsing geometry.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::run::{COST, METRICS, OPTIMAL, RESOLVED_CONFIG};
use crate::CliError;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub r: usize,
    pub mean_rmsse: f64,
    pub mean_smql: f64,
    pub ct_wall_s: f64,
    pub rel_rmsse: Option<f64>,
    pub rel_smql: Option<f64>,
    pub rel_ct: Option<f64>,
    pub n_series: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CostRow {
    pub model: String,
    pub r: usize,
    pub cost: f64,
    pub savings: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct OptimalRow {
    pub unique_id: String,
    pub r_star_rmsse: usize,
    pub r_star_smql: usize,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    if !path.exists() {
        return Err(ReportError::MissingArtifact(path.to_path_buf()));
    }
    let parse = |e: csv::Error| ReportError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(path).map_err(parse)?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(parse)
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRow>, ReportError> {
    read_csv(&dir.join(METRICS))
}

/// One line (or bar group) of a chart panel; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPanel {
    pub title: String,
    pub y_label: String,
    /// Horizontal reference line, e.g. the baseline at 1.0.
    pub reference: Option<f64>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    Line,
    Bar,
}

/// Data and layout of one SVG file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub title: String,
    pub kind: ChartKind,
    pub x_label: String,
    /// Category positions (retrain scenarios), evenly spaced on the x axis.
    pub x: Vec<usize>,
    pub panels: Vec<ChartPanel>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 360.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 60.0;
const MARGIN_B: f64 = 90.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick step covering `span` with about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn y_range(panel: &ChartPanel, kind: ChartKind) -> (f64, f64) {
    let mut vals: Vec<f64> = panel
        .series
        .iter()
        .flat_map(|s| s.values.iter().flatten().copied())
        .collect();
    vals.extend(panel.reference);
    if kind == ChartKind::Bar {
        vals.push(0.0);
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.08 * (hi - lo)
    } else {
        0.5 * hi.abs().max(1.0)
    };
    let lo = if kind == ChartKind::Bar { 0.0 } else { lo - pad };
    (lo, hi + pad)
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let width = PANEL_W * self.panels.len().max(1) as f64;
        let height = PANEL_H;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
        );
        let data = serde_json::to_string(self).expect("chart serialises");
        let _ = writeln!(s, r#"<metadata id="chart-data"><![CDATA[{data}]]></metadata>"#);
        let _ = writeln!(s, r#"<title>{}</title>"#, escape(&self.title));
        let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
        for (pi, panel) in self.panels.iter().enumerate() {
            self.panel_svg(&mut s, panel, pi as f64 * PANEL_W);
        }
        s.push_str("</svg>\n");
        s
    }

    fn panel_svg(&self, s: &mut String, panel: &ChartPanel, x0: f64) {
        let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
        let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
        let left = x0 + MARGIN_L;
        let top = MARGIN_T;
        let n = self.x.len().max(1);
        let slot = plot_w / n as f64;
        let xpos = |i: usize| left + slot * (i as f64 + 0.5);
        let (lo, hi) = y_range(panel, self.kind);
        let ypos = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));

        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            x0 + PANEL_W / 2.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
        );
        let step = tick_step(hi - lo);
        let mut t = (lo / step).ceil() * step;
        while t <= hi + 1e-12 {
            let y = ypos(t);
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                left + plot_w,
                left - 6.0,
                y + 4.0,
                trim_float(t)
            );
            t += step;
        }
        for (i, r) in self.x.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{r}</text>"#,
                xpos(i),
                top + plot_h + 18.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + plot_w / 2.0,
            top + plot_h + 40.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate({},{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            x0 + 18.0,
            top + plot_h / 2.0,
            escape(&panel.y_label)
        );
        if let Some(r) = panel.reference {
            let y = ypos(r);
            let _ = writeln!(
                s,
                r##"<line class="reference" x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#888" stroke-dasharray="5,4"/>"##,
                left + plot_w
            );
        }
        let n_series = panel.series.len().max(1);
        for (si, series) in panel.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            match self.kind {
                ChartKind::Line => {
                    let pts: Vec<String> = series
                        .values
                        .iter()
                        .enumerate()
                        .filter_map(|(i, v)| v.map(|v| format!("{:.2},{:.2}", xpos(i), ypos(v))))
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                        pts.join(" ")
                    );
                    for (i, v) in series.values.iter().enumerate() {
                        if let Some(v) = v {
                            let _ = writeln!(
                                s,
                                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>{} r={}: {v}</title></circle>"#,
                                xpos(i),
                                ypos(*v),
                                escape(&series.name),
                                self.x[i]
                            );
                        }
                    }
                }
                ChartKind::Bar => {
                    let bar_w = slot * 0.8 / n_series as f64;
                    for (i, v) in series.values.iter().enumerate() {
                        if let Some(v) = v {
                            let x = xpos(i) - slot * 0.4 + bar_w * si as f64;
                            let y = ypos(*v);
                            let _ = writeln!(
                                s,
                                r#"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"><title>{} r={}: {v}</title></rect>"#,
                                ypos(0.0) - y,
                                escape(&series.name),
                                self.x[i]
                            );
                        }
                    }
                }
            }
            let ly = PANEL_H - 22.0 + 0.0 * si as f64;
            let lx = left + (si as f64) * (plot_w / n_series as f64);
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                ly - 10.0,
                lx + 16.0,
                ly,
                escape(&series.name)
            );
        }
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Reads the embedded data block back from an SVG produced by [`Chart::to_svg`].
pub fn parse_chart_data(svg: &str) -> Option<Chart> {
    let start = svg.find(r#"<metadata id="chart-data"><![CDATA["#)? + r#"<metadata id="chart-data"><![CDATA["#.len();
    let end = start + svg[start..].find("]]></metadata>")?;
    serde_json::from_str(&svg[start..end]).ok()
}

fn models_in_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|m| m == n) {
            out.push(n.to_string());
        }
    }
    out
}

fn line_chart(
    title: &str,
    y_label: &str,
    retrain_set: &[usize],
    reference: Option<f64>,
    models: &[String],
    value: impl Fn(&str, usize) -> Option<f64>,
) -> ChartPanel {
    let _ = retrain_set;
    ChartPanel {
        title: title.into(),
        y_label: y_label.into(),
        reference,
        series: models
            .iter()
            .map(|m| Series {
                name: m.clone(),
                values: retrain_set.iter().map(|&r| value(m, r)).collect(),
            })
            .collect(),
    }
}

/// Everything `report` produces, before it is written.
#[derive(Debug, Clone)]
pub struct Report {
    pub charts: BTreeMap<&'static str, Chart>,
    pub summary: String,
}

pub fn build_report(dir: &Path) -> Result<Report, ReportError> {
    let cfg_path = dir.join(RESOLVED_CONFIG);
    if !cfg_path.exists() {
        return Err(ReportError::MissingArtifact(cfg_path));
    }
    let cfg_text = std::fs::read_to_string(&cfg_path)?;
    let cfg = RunConfig::from_toml(&cfg_text)
        .and_then(|c| c.resolve())
        .map_err(|e| ReportError::Parse {
            path: cfg_path.clone(),
            reason: e.to_string(),
        })?;
    let retrain_set = cfg.backtest.retrain_set.clone();
    let baseline = cfg.backtest.baseline_r;
    let currency = cfg.cost.currency.clone();
    let metrics = read_metrics(dir)?;
    let costs: Vec<CostRow> = read_csv(&dir.join(COST))?;
    let optimal: Vec<OptimalRow> = read_csv(&dir.join(OPTIMAL))?;

    let models = models_in_order(metrics.iter().map(|m| m.model.as_str()));
    let metric = |m: &str, r: usize| metrics.iter().find(|row| row.model == m && row.r == r);
    let cost = |m: &str, r: usize| costs.iter().find(|row| row.model == m && row.r == r);
    let x_label = "retrain every r periods".to_string();

    let mut charts = BTreeMap::new();
    let relative = |title: &str, label: &str, f: fn(&MetricsRow) -> Option<f64>| Chart {
        title: title.into(),
        kind: ChartKind::Line,
        x_label: x_label.clone(),
        x: retrain_set.clone(),
        panels: vec![line_chart(title, label, &retrain_set, Some(1.0), &models, |m, r| {
            metric(m, r).and_then(f)
        })],
    };
    charts.insert(
        "rel_rmsse.svg",
        relative("RMSSE relative to baseline", "relative RMSSE", |m| m.rel_rmsse),
    );
    charts.insert(
        "rel_smql.svg",
        relative("SMQL relative to baseline", "relative SMQL", |m| m.rel_smql),
    );
    charts.insert(
        "rel_ct.svg",
        relative("Computing time relative to baseline", "relative CT", |m| m.rel_ct),
    );
    charts.insert(
        "cost.svg",
        Chart {
            title: "Cost and savings".into(),
            kind: ChartKind::Line,
            x_label: x_label.clone(),
            x: retrain_set.clone(),
            panels: vec![
                line_chart(
                    "Extrapolated cost",
                    &format!("cost ({currency})"),
                    &retrain_set,
                    None,
                    &models,
                    |m, r| cost(m, r).map(|c| c.cost),
                ),
                line_chart(
                    "Savings vs baseline",
                    "savings fraction",
                    &retrain_set,
                    Some(0.0),
                    &models,
                    |m, r| cost(m, r).and_then(|c| c.savings),
                ),
            ],
        },
    );
    let count = |f: fn(&OptimalRow) -> usize| -> Vec<Option<f64>> {
        retrain_set
            .iter()
            .map(|&r| Some(optimal.iter().filter(|o| f(o) == r).count() as f64))
            .collect()
    };
    charts.insert(
        "optimal_hist.svg",
        Chart {
            title: "Optimal retrain frequency per series".into(),
            kind: ChartKind::Bar,
            x_label,
            x: retrain_set.clone(),
            panels: vec![ChartPanel {
                title: "Optimal retrain frequency per series".into(),
                y_label: "series".into(),
                reference: None,
                series: vec![
                    Series {
                        name: "RMSSE".into(),
                        values: count(|o| o.r_star_rmsse),
                    },
                    Series {
                        name: "SMQL".into(),
                        values: count(|o| o.r_star_smql),
                    },
                ],
            }],
        },
    );

    let mut summary = String::new();
    let _ = writeln!(summary, "baseline scenario: r={baseline}");
    let _ = writeln!(
        summary,
        "{:<16} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>14} {:>9}",
        "model", "r", "rmsse", "smql", "rel_rmsse", "rel_smql", "rel_ct", "cost", "savings"
    );
    let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
    for m in &metrics {
        let c = cost(&m.model, m.r);
        let _ = writeln!(
            summary,
            "{:<16} {:>5} {:>10.4} {:>10.4} {:>10} {:>10} {:>10} {:>14} {:>9}",
            m.model,
            m.r,
            m.mean_rmsse,
            m.mean_smql,
            opt(m.rel_rmsse, 4),
            opt(m.rel_smql, 4),
            opt(m.rel_ct, 4),
            opt(c.map(|c| c.cost), 2),
            opt(c.and_then(|c| c.savings), 3),
        );
    }
    if let Some(first) = metrics.first() {
        let _ = writeln!(
            summary,
            "\nscored series: {}, excluded: {}",
            first.n_series, first.n_excluded
        );
    }
    let _ = writeln!(summary, "\noptimal r per series (rmsse / smql):");
    for &r in &retrain_set {
        let a = optimal.iter().filter(|o| o.r_star_rmsse == r).count();
        let b = optimal.iter().filter(|o| o.r_star_smql == r).count();
        let _ = writeln!(summary, "  r={r:<5} {a:>6} / {b}");
    }
    Ok(Report { charts, summary })
}

/// Writes the report into `out_dir` (default `<dir>/report`).
pub fn report(dir: &Path, out_dir: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let report = build_report(dir)?;
    let out = out_dir.map_or_else(|| dir.join("report"), Path::to_path_buf);
    std::fs::create_dir_all(&out).map_err(CliError::runtime)?;
    let mut written = Vec::new();
    for (name, chart) in &report.charts {
        let path = out.join(name);
        std::fs::write(&path, chart.to_svg()).map_err(CliError::runtime)?;
        written.push(path);
    }
    let path = out.join("summary.txt");
    std::fs::write(&path, &report.summary).map_err(CliError::runtime)?;
    written.push(path);
    Ok(written)
}
