//! On-disk layout of a run:
//!
//! ```text
//! <out>/<name>/config.toml
//! <out>/<name>/summary.{json,csv}, series.csv
//! <out>/<name>/seed_<s>/{alpha.csv,timing.csv}
//! <out>/<name>/seed_<s>/pretrain/{params.bin,losses.csv,metrics.csv}
//! <out>/<name>/seed_<s>/step_<t>/{params.bin,losses.csv,metrics.csv}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_runs, read_metrics_csv, step_averages, write_metrics_csv, AlphaRow, MetricRow, RunSummary, SummaryStat};
use crate::model::ParameterStore;

use super::FitOutcome;

pub const DATA_SIZE_RULE: &str =
    "per step: current, replay and deleted facts plus every negative entity drawn for the first epoch; summed over steps";

/// Training time of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepTiming {
    pub step: u32,
    pub epochs: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunLayout {
    root: PathBuf,
}

fn write_atomic(path: &Path, body: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl RunLayout {
    pub fn new(out: &Path, name: &str) -> Self {
        Self { root: out.join(name) }
    }

    /// Uses `dir` itself as the run directory.
    pub fn at(dir: &Path) -> Self {
        Self { root: dir.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed}"))
    }

    pub fn phase_dir(&self, seed: u64, phase: &str) -> PathBuf {
        self.seed_dir(seed).join(phase)
    }

    pub fn step_dir(&self, seed: u64, t: u32) -> PathBuf {
        self.seed_dir(seed).join(format!("step_{t}"))
    }

    pub fn prepare(&self, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        write_atomic(&self.root.join("config.toml"), &cfg.to_toml_string()?)
    }

    pub fn write_losses(&self, dir: &Path, fit: &FitOutcome) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut s = String::from("epoch,ce,del,rce,rkd,tr,total,valid_hits10\n");
        for e in &fit.history {
            let [ce, del, rce, rkd, tr] = e.losses.as_array();
            let v = e.valid_hits.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{ce},{del},{rce},{rkd},{tr},{},{v}\n", e.epoch, e.total));
        }
        write_atomic(&dir.join("losses.csv"), &s)
    }

    /// Parameters, loss history and a short metric table of a joint fit.
    pub fn write_fit(&self, dir: &Path, fit: &FitOutcome) -> Result<()> {
        self.write_losses(dir, fit)?;
        fit.store.save(&dir.join("params.bin"))?;
        let mut rows = vec![
            MetricRow::new(0, "epochs", "-", fit.epochs as f64),
            MetricRow::new(0, "best_epoch", "-", fit.best_epoch as f64),
            MetricRow::new(0, "data_size", "-", fit.data_size as f64),
        ];
        if let Some(v) = fit.best_valid {
            rows.push(MetricRow::new(0, "valid_hits10", "both", v));
        }
        write_metrics_csv(&dir.join("metrics.csv"), &rows)
    }

    pub fn write_step(&self, seed: u64, t: u32, store: &ParameterStore, rows: &[MetricRow]) -> Result<()> {
        let dir = self.step_dir(seed, t);
        fs::create_dir_all(&dir)?;
        store.save(&dir.join("params.bin"))?;
        write_metrics_csv(&dir.join("metrics.csv"), rows)
    }

    pub fn write_seed_files(&self, seed: u64, alpha: &[AlphaRow], timing: &[StepTiming]) -> Result<()> {
        let dir = self.seed_dir(seed);
        fs::create_dir_all(&dir)?;
        let mut s = String::from("t,j,value\n");
        for row in alpha {
            for (j, v) in &row.entries {
                s.push_str(&format!("{},{j},{v}\n", row.t));
            }
        }
        write_atomic(&dir.join("alpha.csv"), &s)?;
        let mut s = String::from("step,epochs,seconds\n");
        for t in timing {
            s.push_str(&format!("{},{},{}\n", t.step, t.epochs, t.seconds));
        }
        write_atomic(&dir.join("timing.csv"), &s)
    }

    /// `summary.json`, `summary.csv` (metric, mean, std, n) and `series.csv`
    /// (per-step mean and std across seeds).
    pub fn write_summary(&self, summary: &RunSummary, series: &[SeriesRow]) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        write_atomic(&self.root.join("summary.json"), &serde_json::to_string_pretty(summary)?)?;
        let mut s = String::from("metric,mean,std,n\n");
        for (k, st) in &summary.metrics {
            s.push_str(&format!("{k},{},{},{}\n", st.mean, st.std, st.n));
        }
        write_atomic(&self.root.join("summary.csv"), &s)?;
        let mut s = String::from("step,metric,direction,mean,std,n\n");
        for r in series {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.metric, r.direction, r.stat.mean, r.stat.std, r.stat.n));
        }
        write_atomic(&self.root.join("series.csv"), &s)
    }
}

/// One metric at one step, aggregated across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub step: u32,
    pub metric: String,
    pub direction: String,
    pub stat: SummaryStat,
}

pub fn series<'a>(per_seed: impl IntoIterator<Item = &'a [MetricRow]>) -> Vec<SeriesRow> {
    let mut acc: BTreeMap<(u32, String, String), Vec<f64>> = BTreeMap::new();
    for rows in per_seed {
        for r in rows {
            acc.entry((r.step, r.metric.clone(), r.direction.clone())).or_default().push(r.value);
        }
    }
    acc.into_iter()
        .map(|((step, metric, direction), v)| SeriesRow {
            step,
            metric,
            direction,
            stat: SummaryStat::of(&v),
        })
        .collect()
}

/// Per-seed step averages plus total data size, aggregated across seeds.
pub fn summarize<'a>(name: &str, strategy: &str, seeds: impl IntoIterator<Item = (u64, &'a [MetricRow], &'a [StepTiming])>) -> RunSummary {
    let mut out = RunSummary {
        name: name.to_string(),
        strategy: strategy.to_string(),
        data_size_rule: DATA_SIZE_RULE.to_string(),
        ..RunSummary::default()
    };
    for (seed, rows, timing) in seeds {
        let mut avg = step_averages(rows);
        let total: f64 = rows.iter().filter(|r| r.metric == "data_size").map(|r| r.value).sum();
        avg.insert("data_size_total".to_string(), total);
        let epochs: usize = timing.iter().map(|t| t.epochs).sum();
        let secs: f64 = timing.iter().map(|t| t.seconds).sum();
        let per_epoch = if epochs > 0 { secs / epochs as f64 } else { 0.0 };
        avg.insert("epoch_seconds".to_string(), per_epoch);
        out.epoch_seconds.push(per_epoch);
        out.seeds.push(seed);
        out.per_seed.push(avg);
        for r in rows {
            if !out.steps.contains(&r.step) {
                out.steps.push(r.step);
            }
        }
    }
    out.steps.sort_unstable();
    out.metrics = aggregate_runs(&out.per_seed);
    out
}

fn numbered_children(dir: &Path, prefix: &str) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(n) = name.to_str().and_then(|s| s.strip_prefix(prefix)).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if entry.path().is_dir() {
            out.push((n, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn read_timing(path: &Path) -> Result<Vec<StepTiming>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected step,epochs,seconds".into(),
        };
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 3 {
            return Err(bad());
        }
        out.push(StepTiming {
            step: p[0].parse().map_err(|_| bad())?,
            epochs: p[1].parse().map_err(|_| bad())?,
            seconds: p[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Rebuilds the summary files of a finished run directory from its per-step
/// metric tables.
pub fn report(run_dir: &Path) -> Result<RunSummary> {
    if !run_dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("run directory {} not found", run_dir.display()),
        )));
    }
    let cfg_path = run_dir.join("config.toml");
    let (name, strategy) = if cfg_path.exists() {
        let cfg = RunConfig::load(&cfg_path)?;
        (cfg.run.name.clone(), cfg.run.strategy.as_str().to_string())
    } else {
        let n = run_dir.file_name().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        (n, String::new())
    };
    let mut seeds = Vec::new();
    for (seed, dir) in numbered_children(run_dir, "seed_")? {
        let mut rows = Vec::new();
        for (_, step_dir) in numbered_children(&dir, "step_")? {
            let p = step_dir.join("metrics.csv");
            if p.exists() {
                rows.extend(read_metrics_csv(&p)?);
            }
        }
        let timing = read_timing(&dir.join("timing.csv"))?;
        seeds.push((seed, rows, timing));
    }
    if seeds.is_empty() {
        return Err(Error::Empty("seed directories"));
    }
    let summary = summarize(&name, &strategy, seeds.iter().map(|(s, r, t)| (*s, r.as_slice(), t.as_slice())));
    let ser = series(seeds.iter().map(|(_, r, _)| r.as_slice()));
    RunLayout::at(run_dir).write_summary(&summary, &ser)?;
    Ok(summary)
}
