//! Long-format CSV ingestion (`unique_id,ds,y`) plus optional statics and
//! calendar side files.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use super::{Frequency, PanelError, PanelParts, TimeSeriesPanel};

const DATE_FMT: &str = "%Y-%m-%d";

fn io_err(path: &Path, source: std::io::Error) -> PanelError {
    PanelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, PanelError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(file))
}

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> PanelError {
    PanelError::MalformedRow {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> PanelError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => malformed(path, line, format!("{other:?}")),
    }
}

fn parse_date(path: &Path, line: u64, raw: &str) -> Result<NaiveDate, PanelError> {
    NaiveDate::parse_from_str(raw, DATE_FMT).map_err(|e| malformed(path, line, format!("bad date `{raw}`: {e}")))
}

/// Reads and validates a demand panel.
///
/// Series may start on different dates but each must be gap-free and end on
/// the last date of the file.
pub fn ingest_csv(
    demand_path: &Path,
    statics_path: Option<&Path>,
    calendar_path: Option<&Path>,
    frequency: Frequency,
) -> Result<TimeSeriesPanel, PanelError> {
    let mut reader = open(demand_path)?;
    let header = reader.headers().map_err(|e| csv_err(demand_path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["unique_id", "ds", "y"] {
        return Err(malformed(
            demand_path,
            1,
            format!(
                "expected header `unique_id,ds,y`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(NaiveDate, f64)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(demand_path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(malformed(
                demand_path,
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(malformed(demand_path, line, "empty unique_id"));
        }
        let ds = parse_date(demand_path, line, &record[1])?;
        let y: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| malformed(demand_path, line, format!("bad value `{}`", &record[2])))?;
        if !y.is_finite() {
            return Err(malformed(
                demand_path,
                line,
                format!("non-finite value `{}`", &record[2]),
            ));
        }
        if y < 0.0 {
            return Err(PanelError::NegativeDemand {
                series: id,
                date: ds,
                value: y,
            });
        }
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id.clone());
                Vec::new()
            })
            .push((ds, y));
    }
    if order.is_empty() {
        return Err(PanelError::EmptyPanel);
    }

    let step = frequency.step_days();
    let mut spans: Vec<(NaiveDate, NaiveDate)> = Vec::with_capacity(order.len());
    for id in &order {
        let series = rows.get_mut(id).expect("present");
        series.sort_by_key(|(d, _)| *d);
        let diffs: Vec<i64> = series.windows(2).map(|w| (w[1].0 - w[0].0).num_days()).collect();
        if diffs.contains(&0) {
            return Err(PanelError::MisalignedPanel {
                series: id.clone(),
                reason: "has duplicate dates".into(),
            });
        }
        if let Some(&bad) = diffs.iter().find(|&&d| d != step) {
            let uniform = diffs.iter().all(|&d| d == bad);
            if bad % step == 0 && !uniform {
                return Err(PanelError::MisalignedPanel {
                    series: id.clone(),
                    reason: format!("has a gap of {bad} days"),
                });
            }
            return Err(PanelError::FrequencyMismatch {
                series: id.clone(),
                expected_days: step,
                found_days: bad,
            });
        }
        spans.push((series[0].0, series[series.len() - 1].0));
    }

    let end = spans.iter().map(|s| s.1).max().expect("non-empty");
    let start = spans.iter().map(|s| s.0).min().expect("non-empty");
    for (id, span) in order.iter().zip(&spans) {
        if span.1 != end {
            return Err(PanelError::MisalignedPanel {
                series: id.clone(),
                reason: format!("ends on {} but the panel ends on {end}", span.1),
            });
        }
        if (span.0 - start).num_days() % step != 0 {
            return Err(PanelError::MisalignedPanel {
                series: id.clone(),
                reason: "is off the shared date grid".into(),
            });
        }
    }
    let n_dates = ((end - start).num_days() / step + 1) as usize;
    let dates: Vec<NaiveDate> = (0..n_dates)
        .map(|k| start + chrono::Duration::days(step * k as i64))
        .collect();
    let values: Vec<Vec<f64>> = order
        .iter()
        .map(|id| rows[id].iter().map(|(_, y)| *y).collect())
        .collect();

    let (static_names, statics) = match statics_path {
        Some(path) => read_statics(path, &order)?,
        None => (Vec::new(), Vec::new()),
    };
    let (calendar_names, calendar) = match calendar_path {
        Some(path) => read_calendar(path, &dates)?,
        None => (Vec::new(), Vec::new()),
    };

    TimeSeriesPanel::new(
        frequency,
        PanelParts {
            dates,
            series_ids: order,
            values,
            static_names,
            statics,
            calendar_names,
            calendar,
        },
    )
}

fn read_statics(path: &Path, order: &[String]) -> Result<(Vec<String>, Vec<Vec<String>>), PanelError> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("unique_id") {
        return Err(malformed(path, 1, "statics header must start with `unique_id`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let known: HashMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut table: Vec<Option<Vec<String>>> = vec![None; order.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = &record[0];
        let Some(&i) = known.get(id) else {
            return Err(PanelError::UnknownSeries(id.to_string()));
        };
        if table[i].is_some() {
            return Err(malformed(path, line, format!("duplicate statics for `{id}`")));
        }
        table[i] = Some(record.iter().skip(1).map(str::to_string).collect());
    }
    let statics = table
        .into_iter()
        .zip(order)
        .map(|(row, id)| row.ok_or_else(|| PanelError::MissingStatics(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((names, statics))
}

fn read_calendar(path: &Path, dates: &[NaiveDate]) -> Result<(Vec<String>, Vec<Vec<String>>), PanelError> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("ds") {
        return Err(malformed(path, 1, "calendar header must start with `ds`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut by_date: BTreeMap<NaiveDate, Vec<String>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ds = parse_date(path, line, &record[0])?;
        if by_date
            .insert(ds, record.iter().skip(1).map(str::to_string).collect())
            .is_some()
        {
            return Err(malformed(path, line, format!("duplicate calendar date {ds}")));
        }
    }
    let calendar = dates
        .iter()
        .map(|d| by_date.remove(d).ok_or(PanelError::CalendarGap(*d)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((names, calendar))
}

/// Writes the long-format demand file for a panel.
pub fn write_demand_csv(panel: &TimeSeriesPanel, path: &Path) -> Result<(), PanelError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    let mut body = String::from("unique_id,ds,y\n");
    for i in 0..panel.n_series() {
        let offset = panel.offset(i);
        for (k, v) in panel.values(i).iter().enumerate() {
            body.push_str(&format!(
                "{},{},{}\n",
                panel.series_ids()[i],
                panel.dates()[offset + k].format(DATE_FMT),
                v
            ));
        }
    }
    out.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

pub fn write_statics_csv(panel: &TimeSeriesPanel, path: &Path) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["unique_id".to_string()];
    header.extend(panel.static_names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..panel.n_series() {
        let mut row = vec![panel.series_ids()[i].clone()];
        row.extend(panel.statics(i).iter().cloned());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_calendar_csv(panel: &TimeSeriesPanel, path: &Path) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["ds".to_string()];
    header.extend(panel.calendar_names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, d) in panel.dates().iter().enumerate() {
        let mut row = vec![d.format(DATE_FMT).to_string()];
        row.extend(panel.calendar(t).iter().cloned());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn weekly_body(ids: &[&str], weeks: usize, skip: Option<(&str, usize)>) -> String {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        let mut s = String::from("unique_id,ds,y\n");
        for id in ids {
            for k in 0..weeks {
                if skip == Some((id, k)) {
                    continue;
                }
                let d = start + chrono::Duration::days(7 * k as i64);
                s.push_str(&format!("{id},{},{}\n", d.format(DATE_FMT), k % 5));
            }
        }
        s
    }

    #[test]
    fn valid_weekly_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", &weekly_body(&["a", "b", "c"], 200, None));
        let panel = ingest_csv(&p, None, None, Frequency::Weekly).unwrap();
        assert_eq!(panel.n_series(), 3);
        assert_eq!(panel.len(), 200);
        assert!(panel.is_aligned());

        let out = dir.path().join("again.csv");
        write_demand_csv(&panel, &out).unwrap();
        let again = ingest_csv(&out, None, None, Frequency::Weekly).unwrap();
        assert_eq!(again, panel);
    }

    #[test]
    fn missing_week_is_misaligned() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", &weekly_body(&["a", "b"], 30, Some(("b", 11))));
        let err = ingest_csv(&p, None, None, Frequency::Weekly).unwrap_err();
        assert!(
            matches!(err, PanelError::MisalignedPanel { ref series, .. } if series == "b"),
            "{err}"
        );
    }

    #[test]
    fn series_ending_early_is_misaligned() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", &weekly_body(&["a", "b"], 30, Some(("b", 29))));
        assert!(matches!(
            ingest_csv(&p, None, None, Frequency::Weekly),
            Err(PanelError::MisalignedPanel { .. })
        ));
    }

    #[test]
    fn weekly_data_declared_daily_is_a_frequency_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", &weekly_body(&["a"], 10, None));
        assert!(matches!(
            ingest_csv(&p, None, None, Frequency::Daily),
            Err(PanelError::FrequencyMismatch { found_days: 7, .. })
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = "unique_id,ds,y\na,2021-01-04,1\na,2021-01-11,x\n";
        let p = write(dir.path(), "d.csv", body);
        match ingest_csv(&p, None, None, Frequency::Weekly).unwrap_err() {
            PanelError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_demand_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "unique_id,ds,y\na,2021-01-04,-1\n");
        assert!(matches!(
            ingest_csv(&p, None, None, Frequency::Weekly),
            Err(PanelError::NegativeDemand { .. })
        ));
    }

    #[test]
    fn statics_for_unknown_series_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", &weekly_body(&["a"], 5, None));
        let s = write(dir.path(), "s.csv", "unique_id,store\na,S1\nzz,S2\n");
        assert!(matches!(
            ingest_csv(&p, Some(&s), None, Frequency::Weekly),
            Err(PanelError::UnknownSeries(ref id)) if id == "zz"
        ));
    }

    #[test]
    fn calendar_must_cover_every_date() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", &weekly_body(&["a"], 3, None));
        let c = write(dir.path(), "c.csv", "ds,event\n2021-01-04,0\n2021-01-11,1\n");
        assert!(matches!(
            ingest_csv(&p, None, Some(&c), Frequency::Weekly),
            Err(PanelError::CalendarGap(_))
        ));
        let c = write(
            dir.path(),
            "c2.csv",
            "ds,event\n2021-01-04,0\n2021-01-11,1\n2021-01-18,0\n2021-01-25,1\n",
        );
        let panel = ingest_csv(&p, None, Some(&c), Frequency::Weekly).unwrap();
        assert_eq!(panel.calendar(1), &["1".to_string()]);
    }
}
