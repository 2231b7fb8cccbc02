use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u32,
    pub metric: String,
    /// `both`, `object` or `subject`; `-` for quantities with no direction.
    pub direction: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(step: u32, metric: &str, direction: &str, value: f64) -> Self {
        Self {
            step,
            metric: metric.to_string(),
            direction: direction.to_string(),
            value,
        }
    }

    /// `metric` for pooled rows, `metric/direction` otherwise.
    pub fn key(&self) -> String {
        match self.direction.as_str() {
            "both" | "-" => self.metric.clone(),
            d => format!("{}/{d}", self.metric),
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
        writeln!(w, "step,metric,direction,value")?;
        for r in rows {
            writeln!(w, "{},{},{},{}", r.step, r.metric, r.direction, r.value)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        rows.push(MetricRow {
            step: parts[0].parse().map_err(|_| bad("bad step"))?,
            metric: parts[1].to_string(),
            direction: parts[2].to_string(),
            value: parts[3].parse().map_err(|_| bad("bad value"))?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl SummaryStat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

/// Run-level averages per seed and their aggregate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub strategy: String,
    pub seeds: Vec<u64>,
    /// Incremental steps included in the per-seed averages.
    pub steps: Vec<u32>,
    pub per_seed: Vec<BTreeMap<String, f64>>,
    pub metrics: BTreeMap<String, SummaryStat>,
    /// Mean wall-clock seconds per training epoch, per seed.
    pub epoch_seconds: Vec<f64>,
    pub data_size_rule: String,
}

/// Mean over steps of each metric key, skipping steps where it is absent.
pub fn step_averages(rows: &[MetricRow]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.key()).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Aggregates per-seed averages into mean ± std for every key seen.
pub fn aggregate_runs(per_seed: &[BTreeMap<String, f64>]) -> BTreeMap<String, SummaryStat> {
    let mut vals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in per_seed {
        for (k, v) in m {
            vals.entry(k.clone()).or_default().push(*v);
        }
    }
    vals.into_iter().map(|(k, v)| (k, SummaryStat::of(&v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![MetricRow::new(3, "c_hits10", "both", 0.1 + 0.2), MetricRow::new(3, "df10", "object", 1.0 / 3.0)];
        write_metrics_csv(&p, &rows).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
    }

    #[test]
    fn stats() {
        let s = SummaryStat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(SummaryStat::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn averages_skip_absent_steps() {
        let rows = vec![
            MetricRow::new(1, "rrd", "both", 10.0),
            MetricRow::new(2, "c_hits10", "both", 0.5),
            MetricRow::new(3, "rrd", "both", 20.0),
            MetricRow::new(3, "c_hits10", "object", 0.25),
        ];
        let a = step_averages(&rows);
        assert_eq!(a["rrd"], 15.0);
        assert_eq!(a["c_hits10"], 0.5);
        assert_eq!(a["c_hits10/object"], 0.25);
    }
}
