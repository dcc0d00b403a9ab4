use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Channel, SeriesFrame, MAX_INTERPOLATED_GAP, STEP_SECONDS};
use crate::error::{Error, Result};

const RATED_KEY: &str = "rated_power_kw";

/// Maps frame channels onto CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub timestamp: String,
    pub channels: BTreeMap<Channel, String>,
    pub icing: String,
    /// Overrides the `# rated_power_kw=` metadata line when set.
    pub rated_kw: Option<f64>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            timestamp: "timestamp".into(),
            channels: Channel::ALL
                .iter()
                .map(|&c| (c, c.csv_name().to_string()))
                .collect(),
            icing: "icing".into(),
            rated_kw: None,
        }
    }
}

/// What cleaning did to the raw rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub raw_rows: usize,
    pub dropped_rows: usize,
    pub clipped_values: usize,
    pub interpolated_rows: usize,
    pub missing_channels: Vec<Channel>,
}

struct RawRow {
    ts: f64,
    values: [f64; 6],
    icing: f64,
}

/// Reads, cleans and resamples a SCADA CSV to one-minute resolution.
///
/// Power is clipped to `[0, rated]` before averaging. Gaps up to
/// [`MAX_INTERPOLATED_GAP`] are linearly interpolated; longer gaps are left in
/// place and split the frame into segments.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<(SeriesFrame, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rated_kw = match schema.rated_kw {
        Some(r) => r,
        None => read_rated(&text).ok_or_else(|| {
            Error::Schema(format!(
                "{}: rated power not given and no `# {RATED_KEY}=` line",
                path.display()
            ))
        })?,
    };
    if !(rated_kw.is_finite() && rated_kw > 0.0) {
        return Err(Error::Schema(format!(
            "rated power {rated_kw} must be positive"
        )));
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let ts_col = find(&schema.timestamp)
        .ok_or_else(|| Error::Schema(format!("missing timestamp column `{}`", schema.timestamp)))?;
    let mut report = IngestReport::default();
    let mut cols = [None; 6];
    for c in Channel::ALL {
        let name = schema
            .channels
            .get(&c)
            .map(String::as_str)
            .unwrap_or(c.csv_name());
        cols[c.index()] = find(name);
        if cols[c.index()].is_none() {
            if matches!(c, Channel::Power | Channel::WindSpeed) {
                return Err(Error::Schema(format!("missing mandatory column `{name}`")));
            }
            report.missing_channels.push(c);
        }
    }
    let icing_col = find(&schema.icing);

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        report.raw_rows += 1;
        let parsed = (|| {
            let ts = parse_timestamp(record.get(ts_col)?)?;
            let mut values = [0.0; 6];
            for (v, col) in values.iter_mut().zip(cols) {
                if let Some(col) = col {
                    *v = record
                        .get(col)?
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())?;
                }
            }
            let icing = match icing_col {
                Some(col) => match record.get(col)? {
                    "1" | "true" | "True" => 1.0,
                    "0" | "false" | "False" => 0.0,
                    _ => return None,
                },
                None => 0.0,
            };
            Some(RawRow { ts, values, icing })
        })();
        match parsed {
            Some(mut row) => {
                let p = &mut row.values[Channel::Power.index()];
                if *p < 0.0 || *p > rated_kw {
                    *p = p.clamp(0.0, rated_kw);
                    report.clipped_values += 1;
                }
                rows.push(row);
            }
            None => report.dropped_rows += 1,
        }
    }
    rows.sort_by(|a, b| a.ts.total_cmp(&b.ts));

    let frame = resample(rows, rated_kw, &mut report);
    if frame.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: {} valid rows after cleaning, need at least 2",
            path.display(),
            frame.len()
        )));
    }
    Ok((frame, report))
}

fn read_rated(text: &str) -> Option<f64> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().strip_prefix(RATED_KEY))
        .find_map(|rest| rest.trim_start().strip_prefix('=')?.trim().parse().ok())
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_millis()) / 1000.0);
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let dt = dt.and_utc();
            return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_millis()) / 1000.0);
        }
    }
    None
}

/// Minute-bucket means, then short-gap interpolation.
fn resample(rows: Vec<RawRow>, rated_kw: f64, report: &mut IngestReport) -> SeriesFrame {
    let mut buckets: Vec<(i64, [f64; 6], f64, usize)> = Vec::new();
    for row in rows {
        let minute = (row.ts / STEP_SECONDS as f64).floor() as i64 * STEP_SECONDS;
        match buckets.last_mut() {
            Some((m, sums, icing, n)) if *m == minute => {
                for (s, v) in sums.iter_mut().zip(row.values) {
                    *s += v;
                }
                *icing += row.icing;
                *n += 1;
            }
            _ => buckets.push((minute, row.values, row.icing, 1)),
        }
    }

    let mut frame = SeriesFrame::with_capacity(rated_kw, buckets.len());
    let mut prev: Option<(i64, [f64; 6], bool)> = None;
    for (minute, sums, icing, n) in buckets {
        let values = sums.map(|s| s / n as f64);
        let icing = icing / n as f64 >= 0.5;
        if let Some((pm, pv, pi)) = prev {
            let gap = minute - pm;
            if gap > STEP_SECONDS && gap <= MAX_INTERPOLATED_GAP {
                let steps = gap / STEP_SECONDS;
                for k in 1..steps {
                    let w = k as f64 / steps as f64;
                    let interp = std::array::from_fn(|c| pv[c] + w * (values[c] - pv[c]));
                    frame.push(pm + k * STEP_SECONDS, interp, pi && icing);
                    report.interpolated_rows += 1;
                }
            }
        }
        frame.push(minute, values, icing);
        prev = Some((minute, values, icing));
    }
    frame
}

/// Writes the canonical CSV layout, preceded by a rated-power metadata line.
pub fn write_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# {RATED_KEY}={}", frame.rated_kw).expect("write to Vec");
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["timestamp"];
        header.extend(Channel::ALL.iter().map(|c| c.csv_name()));
        header.push("icing");
        w.write_record(&header)?;
        for i in 0..frame.len() {
            let ts = DateTime::<Utc>::from_timestamp(frame.timestamps[i], 0)
                .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
                .unwrap_or_else(|| frame.timestamps[i].to_string());
            let mut rec = vec![ts];
            rec.extend(frame.row(i).iter().map(|v| v.to_string()));
            rec.push(if frame.icing[i] { "1" } else { "0" }.into());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("in.csv");
        fs::write(&p, body).unwrap();
        p
    }

    const HEADER: &str = "timestamp,power_kw,wind_ms,temp_c,pitch_deg,yaw_deg,gen_rpm,icing\n";

    #[test]
    fn three_clean_rows_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "# rated_power_kw=2000\n{HEADER}\
             2024-01-01T00:00:00Z,100,5,1,0,10,900,0\n\
             2024-01-01T00:01:00Z,200,6,1,0,10,950,1\n\
             2024-01-01T00:02:00Z,300,7,1,0,10,990,1\n"
        );
        let (f, report) = load_csv(&write(&dir, &body), &Schema::default()).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(report.dropped_rows, 0);
        assert_eq!(report.clipped_values, 0);
        assert_eq!(f.power(), &[100.0, 200.0, 300.0]);
        assert_eq!(f.icing, vec![false, true, true]);
        assert_eq!(f.rated_kw, 2000.0);
        f.validate().unwrap();
    }

    #[test]
    fn over_rated_power_is_clipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}0,2400,5,1,0,0,0,0\n60,100,5,1,0,0,0,0\n");
        let schema = Schema {
            rated_kw: Some(2000.0),
            ..Schema::default()
        };
        let (f, report) = load_csv(&write(&dir, &body), &schema).unwrap();
        assert_eq!(report.clipped_values, 1);
        assert_eq!(f.power()[0], 2000.0);
    }

    #[test]
    fn ten_second_data_resamples_to_minute_means() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = format!("# rated_power_kw=2000\n{HEADER}");
        let power = |i: usize| (i * i % 97) as f64 * 10.0;
        for i in 0..60 {
            body.push_str(&format!("{},{},8,0,0,0,0,0\n", i * 10, power(i)));
        }
        let (f, _) = load_csv(&write(&dir, &body), &Schema::default()).unwrap();
        assert_eq!(f.len(), 10);
        for m in 0..10 {
            let expected: f64 = (0..6).map(|k| power(m * 6 + k)).sum::<f64>() / 6.0;
            assert!((f.power()[m] - expected).abs() < 1e-12);
            // energy over the minute is conserved
            let raw: f64 = (0..6).map(|k| power(m * 6 + k) * 10.0).sum();
            assert!((f.power()[m] * 60.0 - raw).abs() <= 1e-9 * raw.max(1.0));
        }
    }

    #[test]
    fn short_gaps_interpolate_long_gaps_split() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "# rated_power_kw=100\n{HEADER}0,0,5,0,0,0,0,1\n180,30,5,0,0,0,0,1\n1200,30,5,0,0,0,0,0\n1260,30,5,0,0,0,0,0\n"
        );
        let (f, report) = load_csv(&write(&dir, &body), &Schema::default()).unwrap();
        assert_eq!(report.interpolated_rows, 2);
        assert_eq!(&f.power()[..4], &[0.0, 10.0, 20.0, 30.0]);
        assert!(f.icing[1] && f.icing[2]);
        assert_eq!(f.segments(), vec![0..4, 4..6]);
    }

    #[test]
    fn missing_power_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp,wind_ms\n0,5\n60,6\n";
        let schema = Schema {
            rated_kw: Some(100.0),
            ..Schema::default()
        };
        assert!(matches!(
            load_csv(&write(&dir, body), &schema),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn one_valid_row_is_insufficient() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}0,10,5,0,0,0,0,0\n60,abc,5,0,0,0,0,0\n");
        let schema = Schema {
            rated_kw: Some(100.0),
            ..Schema::default()
        };
        assert!(matches!(
            load_csv(&write(&dir, &body), &schema),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = SeriesFrame::with_capacity(2000.0, 3);
        f.push(
            1_704_067_200,
            [123.456789, 7.1, -3.25, 0.5, 181.0, 1200.0],
            false,
        );
        f.push(
            1_704_067_260,
            [0.1 + 0.2, 7.2, -3.5, 0.0, 182.0, 1210.0],
            true,
        );
        let p = dir.path().join("f.csv");
        write_csv(&f, &p).unwrap();
        let (g, report) = load_csv(&p, &Schema::default()).unwrap();
        assert_eq!(report.dropped_rows, 0);
        assert_eq!(f, g);
    }
}
