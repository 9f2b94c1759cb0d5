//! Line-delimited metrics records, their CSV mirrors and cross-seed
//! aggregates. Every record and every CSV row leads with `format_version`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hcmarl_core::marl::MetricsRecord;

use crate::error::{HarnessError, Result};

pub const METRICS_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.txt";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn format_record(rec: &MetricsRecord) -> String {
    let mut s = format!("format_version={METRICS_VERSION}");
    for (k, v) in &rec.0 {
        s.push(' ');
        s.push_str(k);
        s.push('=');
        s.push_str(&v.to_string());
    }
    s
}

pub fn parse_record(line: &str, path: &str) -> Result<MetricsRecord> {
    let bad = |msg: String| HarnessError::Integrity {
        path: path.to_string(),
        msg,
    };
    let mut fields = line.split(' ');
    let version = fields
        .next()
        .and_then(|f| f.strip_prefix("format_version="))
        .ok_or_else(|| bad("record lacks a leading format_version".into()))?;
    if version != METRICS_VERSION.to_string() {
        return Err(HarnessError::Version {
            path: path.to_string(),
            found: version.to_string(),
            expected: METRICS_VERSION,
        });
    }
    let mut rec = MetricsRecord::default();
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed field `{f}`")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| bad(format!("malformed value in `{f}`")))?;
        rec.push(k, v);
    }
    Ok(rec)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let name = path.display().to_string();
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| HarnessError::io(path, e)))
        .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
        .map(|l| parse_record(&l?, &name))
        .collect()
}

/// Appends records to `metrics.txt` and `metrics.csv` in one directory.
pub struct MetricsWriter {
    txt: File,
    csv: File,
    dir: String,
    keys: Option<Vec<String>>,
}

impl MetricsWriter {
    /// Starts fresh streams holding `existing` (possibly none).
    pub fn create(dir: &Path, existing: &[MetricsRecord]) -> Result<Self> {
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map_err(|e| HarnessError::io(&p, e))
        };
        let mut w = Self {
            txt: open(METRICS_FILE)?,
            csv: open(METRICS_CSV)?,
            dir: dir.display().to_string(),
            keys: None,
        };
        for r in existing {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, rec: &MetricsRecord) -> Result<()> {
        let keys: Vec<String> = rec.keys().map(String::from).collect();
        match &self.keys {
            Some(k) if *k != keys => {
                return Err(HarnessError::Integrity {
                    path: self.dir.clone(),
                    msg: "metrics key set changed within a run".into(),
                })
            }
            Some(_) => {}
            None => {
                writeln!(self.csv, "format_version,{}", keys.join(",")).map_err(|e| self.io(e))?;
                self.keys = Some(keys);
            }
        }
        writeln!(self.txt, "{}", format_record(rec)).map_err(|e| self.io(e))?;
        let row: Vec<String> = rec.0.iter().map(|(_, v)| v.to_string()).collect();
        writeln!(self.csv, "{METRICS_VERSION},{}", row.join(",")).map_err(|e| self.io(e))?;
        self.txt.flush().map_err(|e| self.io(e))?;
        self.csv.flush().map_err(|e| self.io(e))
    }

    fn io(&self, e: std::io::Error) -> HarnessError {
        HarnessError::Io {
            path: self.dir.clone(),
            source: e,
        }
    }
}

/// Mean and standard error of the mean; the error is 0 for one sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-iteration mean and standard error of every key across streams.
/// Rows follow the iteration order of the longest stream; each statistic
/// uses the streams that reached that iteration.
pub fn aggregate(streams: &[Vec<MetricsRecord>]) -> Vec<MetricsRecord> {
    let len = streams.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let present: Vec<&MetricsRecord> = streams.iter().filter_map(|s| s.get(i)).collect();
        let mut row = MetricsRecord::default();
        row.push("iteration", present[0].get("iteration").unwrap_or(i as f64));
        row.push("seeds", present.len() as f64);
        for k in present[0].keys().filter(|k| *k != "iteration") {
            let xs: Vec<f64> = present.iter().filter_map(|r| r.get(k)).collect();
            let (m, se) = mean_stderr(&xs);
            row.push(format!("{k}_mean"), m);
            row.push(format!("{k}_stderr"), se);
        }
        out.push(row);
    }
    out
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| HarnessError::io(path, e))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = create(path)?;
    for l in lines {
        writeln!(f, "{l}").map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(())
}

/// Writes records as CSV with a leading `format_version` column.
pub fn write_records_csv(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut lines = vec![];
    if let Some(first) = rows.first() {
        lines.push(format!(
            "format_version,{}",
            first.keys().collect::<Vec<_>>().join(",")
        ));
    }
    for r in rows {
        let vals: Vec<String> = r.0.iter().map(|(_, v)| v.to_string()).collect();
        lines.push(format!("{METRICS_VERSION},{}", vals.join(",")));
    }
    write_lines(path, &lines)
}

/// Plot-ready learning curves: one row per (variant, metric, iteration).
pub fn write_curves(
    path: &Path,
    variants: &[(String, Vec<MetricsRecord>)],
    metrics: &[&str],
) -> Result<()> {
    let mut lines = vec!["format_version,variant,metric,iteration,mean,stderr".to_string()];
    for (name, rows) in variants {
        for m in metrics {
            for r in rows {
                let (Some(mean), Some(se)) =
                    (r.get(&format!("{m}_mean")), r.get(&format!("{m}_stderr")))
                else {
                    continue;
                };
                let it = r.get("iteration").unwrap_or(f64::NAN);
                lines.push(format!("{METRICS_VERSION},{name},{m},{it},{mean},{se}"));
            }
        }
    }
    write_lines(path, &lines)
}

/// Mean of `key` over the trailing `frac` of the records (at least one).
pub fn final_window_mean(records: &[MetricsRecord], key: &str, frac: f64) -> f64 {
    window_mean(records, key, frac, true)
}

/// Mean of `key` over the leading `frac` of the records (at least one).
pub fn first_window_mean(records: &[MetricsRecord], key: &str, frac: f64) -> f64 {
    window_mean(records, key, frac, false)
}

fn window_mean(records: &[MetricsRecord], key: &str, frac: f64, tail: bool) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let n = ((records.len() as f64 * frac).ceil() as usize).clamp(1, records.len());
    let slice = if tail {
        &records[records.len() - n..]
    } else {
        &records[..n]
    };
    let xs: Vec<f64> = slice.iter().filter_map(|r| r.get(key)).collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}
