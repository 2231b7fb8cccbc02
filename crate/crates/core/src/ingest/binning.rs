use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::TimeStep;

/// Contiguous inclusive year ranges; bin `i` is time step `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeBinning {
    bins: Vec<(i32, i32)>,
}

impl TimeBinning {
    pub fn new(bins: Vec<(i32, i32)>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Binning("no bins".into()));
        }
        for (i, &(a, b)) in bins.iter().enumerate() {
            if a > b {
                return Err(Error::Binning(format!("bin {} has start {a} > end {b}", i + 1)));
            }
            if let Some(&(_, prev_end)) = i.checked_sub(1).map(|p| &bins[p]) {
                if prev_end.checked_add(1) != Some(a) {
                    return Err(Error::Binning(format!(
                        "bin {} starts at {a} but previous bin ends at {prev_end}",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { bins })
    }

    /// One `year_start year_end` pair per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut bins = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut it = line.split_whitespace();
            let a = it.next().and_then(|x| x.parse().ok());
            let b = it.next().and_then(|x| x.parse().ok());
            match (a, b, it.next()) {
                (Some(a), Some(b), None) => bins.push((a, b)),
                _ => return Err(err("expected `year_start year_end`")),
            }
        }
        Self::new(bins)
    }

    /// One bin per year in `[first, last]`.
    pub fn yearly(first: i32, last: i32) -> Result<Self> {
        Self::new((first..=last).map(|y| (y, y)).collect())
    }

    /// Balances bins by fact volume: adjacent years are merged so that each of
    /// `target` bins covers roughly the same number of (fact, year) incidences.
    /// `intervals` are already substituted, inclusive year ranges.
    pub fn balanced(intervals: &[(i32, i32)], target: usize) -> Result<Self> {
        if target == 0 {
            return Err(Error::Binning("target step count must be positive".into()));
        }
        let first = intervals.iter().map(|iv| iv.0.min(iv.1)).min();
        let last = intervals.iter().map(|iv| iv.0.max(iv.1)).max();
        let (Some(first), Some(last)) = (first, last) else {
            return Err(Error::Binning("no dated facts to bin".into()));
        };
        let n_years = (last as i64 - first as i64 + 1) as usize;
        let mut diff = vec![0i64; n_years + 1];
        for &(a, b) in intervals {
            if a > b {
                continue;
            }
            diff[(a - first) as usize] += 1;
            diff[(b - first) as usize + 1] -= 1;
        }
        let mut cum = Vec::with_capacity(n_years);
        let (mut running, mut acc) = (0i64, 0i64);
        for d in &diff[..n_years] {
            running += d;
            acc += running;
            cum.push(acc);
        }
        let total = *cum.last().unwrap_or(&0);
        let target = target.min(n_years);
        let mut bins = Vec::with_capacity(target);
        let mut start = 0usize;
        for k in 1..target {
            let max_end = n_years - 1 - (target - k);
            let goal = (total as f64) * (k as f64) / (target as f64);
            let mut end = start;
            while end < max_end && (cum[end] as f64) < goal {
                end += 1;
            }
            bins.push((first + start as i32, first + end as i32));
            start = end + 1;
        }
        bins.push((first + start as i32, last));
        Self::new(bins)
    }

    pub fn num_steps(&self) -> u32 {
        self.bins.len() as u32
    }

    pub fn first_year(&self) -> i32 {
        self.bins[0].0
    }

    pub fn last_year(&self) -> i32 {
        self.bins[self.bins.len() - 1].1
    }

    pub fn bins(&self) -> &[(i32, i32)] {
        &self.bins
    }

    pub fn step_of(&self, year: i32) -> Option<TimeStep> {
        if year < self.first_year() || year > self.last_year() {
            return None;
        }
        let i = self.bins.partition_point(|&(_, end)| end < year);
        Some(TimeStep(i as u32 + 1))
    }

    pub fn to_text(&self) -> String {
        self.bins.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }
}
