//! Turning interval-annotated triple files into a [`SnapshotSequence`].

mod binning;
mod parse;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use binning::TimeBinning;
pub use parse::{parse_interval_file, parse_interval_str, parse_year, IntervalFact};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use crate::graph::{Snapshot, SnapshotSequence, Split, TimeStep, Triple};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Yago,
    Wikidata,
    Synthetic,
}

impl DatasetFormat {
    /// Step count used when bins are derived automatically.
    pub fn default_steps(self) -> usize {
        match self {
            DatasetFormat::Yago => 61,
            DatasetFormat::Wikidata => 78,
            DatasetFormat::Synthetic => 20,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "yago" => Ok(Self::Yago),
            "wikidata" => Ok(Self::Wikidata),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscretizeOptions {
    /// train/valid/test ratios used when no split files are given.
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self {
            split_ratios: [0.86, 0.07, 0.07],
            seed: 0,
        }
    }
}

/// Counts of facts that did not make it into the sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub facts_in: usize,
    pub dropped_out_of_range: usize,
    pub dropped_inverted: usize,
    pub duplicate_quadruples: usize,
}

/// Expands each interval into one quadruple per overlapped time step.
///
/// Missing begin/end years are replaced by the first/last year of `binning`.
/// When `splits` is given it assigns a split to each fact (first occurrence of
/// a quadruple wins); otherwise splits are drawn per quadruple from
/// `opts.split_ratios` with `opts.seed`.
pub fn discretize(
    facts: &[IntervalFact],
    splits: Option<&[Split]>,
    binning: &TimeBinning,
    opts: &DiscretizeOptions,
) -> Result<(SnapshotSequence, IngestStats)> {
    if let Some(sp) = splits {
        if sp.len() != facts.len() {
            return Err(Error::DimMismatch(format!(
                "{} split labels for {} facts",
                sp.len(),
                facts.len()
            )));
        }
    }
    let mut stats = IngestStats {
        facts_in: facts.len(),
        ..Default::default()
    };
    let (first, last) = (binning.first_year(), binning.last_year());

    // (fact index, step range) for every fact that survives
    let mut kept = Vec::with_capacity(facts.len());
    for (i, f) in facts.iter().enumerate() {
        let begin = f.begin.unwrap_or(first);
        let end = f.end.unwrap_or(last);
        if begin > end {
            stats.dropped_inverted += 1;
            continue;
        }
        if end < first || begin > last {
            stats.dropped_out_of_range += 1;
            continue;
        }
        let lo = binning.step_of(begin.max(first));
        let hi = binning.step_of(end.min(last));
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Err(Error::Binning(format!("cannot bin interval [{begin}, {end}]")));
        };
        kept.push((i, lo.0, hi.0));
    }
    if stats.dropped_inverted > 0 {
        warn!("dropped {} facts whose begin year exceeds their end year", stats.dropped_inverted);
    }
    if stats.dropped_out_of_range > 0 {
        warn!("dropped {} facts lying outside the binning range", stats.dropped_out_of_range);
    }

    let entity_names: BTreeSet<&str> = kept
        .iter()
        .flat_map(|&(i, _, _)| [facts[i].s_name.as_str(), facts[i].o_name.as_str()])
        .collect();
    let relation_names: BTreeSet<&str> = kept.iter().map(|&(i, _, _)| facts[i].r_name.as_str()).collect();
    let entity_ids: HashMap<&str, u32> = entity_names.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect();
    let relation_ids: HashMap<&str, u32> = relation_names.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect();

    let mut quads: BTreeMap<(u32, Triple), Option<Split>> = BTreeMap::new();
    for &(i, lo, hi) in &kept {
        let f = &facts[i];
        let tr = Triple::new(entity_ids[f.s_name.as_str()], relation_ids[f.r_name.as_str()], entity_ids[f.o_name.as_str()]);
        for t in lo..=hi {
            match quads.entry((t, tr)) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(splits.map(|sp| sp[i]));
                }
                std::collections::btree_map::Entry::Occupied(_) => stats.duplicate_quadruples += 1,
            }
        }
    }

    let n_steps = binning.num_steps() as usize;
    let mut per_step: Vec<[Vec<Triple>; 3]> = (0..n_steps).map(|_| Default::default()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let [p_train, p_valid, _] = opts.split_ratios;
    for ((t, tr), split) in quads {
        let split = split.unwrap_or_else(|| {
            let u: f64 = rng.gen();
            if u < p_train {
                Split::Train
            } else if u < p_train + p_valid {
                Split::Valid
            } else {
                Split::Test
            }
        });
        let slot = match split {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        };
        per_step[t as usize - 1][slot].push(tr);
    }
    let snapshots = per_step
        .into_iter()
        .enumerate()
        .map(|(i, [a, b, c])| Snapshot::new(TimeStep(i as u32 + 1), a, b, c))
        .collect::<Result<Vec<_>>>()?;
    let mut seq = SnapshotSequence::new(
        entity_names.into_iter().map(String::from).collect(),
        relation_names.into_iter().map(String::from).collect(),
        snapshots,
    )?;
    if splits.is_none() {
        seq.split_seed = Some(opts.seed);
    }
    Ok((seq, stats))
}

/// Where the time bins come from.
#[derive(Clone, Debug)]
pub enum BinSource {
    File(std::path::PathBuf),
    /// Volume-balanced bins with this many steps.
    Auto(usize),
}

/// Reads a dataset directory. If `train.txt`, `valid.txt` and `test.txt` are
/// all present they define the splits; otherwise every `*.txt`/`*.tsv` file is
/// read and splits are sampled.
pub fn ingest_dir(
    dir: &Path,
    bins: &BinSource,
    opts: &DiscretizeOptions,
) -> Result<(SnapshotSequence, TimeBinning, IngestStats)> {
    let split_files = ["train.txt", "valid.txt", "test.txt"].map(|n| dir.join(n));
    let (facts, splits) = if split_files.iter().all(|p| p.is_file()) {
        let mut facts = Vec::new();
        let mut splits = Vec::new();
        for (path, split) in split_files.iter().zip(Split::ALL) {
            let f = parse_interval_file(path)?;
            splits.extend(std::iter::repeat(split).take(f.len()));
            facts.extend(f);
        }
        (facts, Some(splits))
    } else {
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "tsv"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Empty("no .txt/.tsv fact files in input directory"));
        }
        let mut facts = Vec::new();
        for p in &files {
            facts.extend(parse_interval_file(p)?);
        }
        (facts, None)
    };
    let binning = match bins {
        BinSource::File(p) => TimeBinning::from_file(p)?,
        BinSource::Auto(target) => {
            let known: Vec<i32> = facts.iter().flat_map(|f| [f.begin, f.end]).flatten().collect();
            let (Some(&lo), Some(&hi)) = (known.iter().min(), known.iter().max()) else {
                return Err(Error::Binning("no dated facts to bin".into()));
            };
            let intervals: Vec<(i32, i32)> = facts
                .iter()
                .map(|f| (f.begin.unwrap_or(lo), f.end.unwrap_or(hi)))
                .collect();
            TimeBinning::balanced(&intervals, *target)?
        }
    };
    let (seq, stats) = discretize(&facts, splits.as_deref(), &binning, opts)?;
    Ok((seq, binning, stats))
}

/// Writes `seq` back out as interval files (one single-step interval per
/// quadruple, dated by step index) plus a yearly `bins.txt`, so that
/// [`ingest_dir`] reproduces the same sequence.
pub fn export_interval_dir(seq: &SnapshotSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (split, name) in Split::ALL.into_iter().zip(["train.txt", "valid.txt", "test.txt"]) {
        let mut out = String::new();
        for snap in seq.snapshots() {
            for tr in snap.split(split) {
                let t = snap.t.0;
                out.push_str(&format!(
                    "{}\t{}\t{}\t{t}-##-##\t{t}-##-##\n",
                    seq.entity_names[tr.s.idx()],
                    seq.relation_names[tr.r.idx()],
                    seq.entity_names[tr.o.idx()],
                ));
            }
        }
        fs::write(dir.join(name), out)?;
    }
    let bins = TimeBinning::yearly(1, seq.num_steps().max(1) as i32)?;
    fs::write(dir.join("bins.txt"), bins.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn fact(s: &str, r: &str, o: &str, b: Option<i32>, e: Option<i32>) -> IntervalFact {
        IntervalFact {
            s_name: s.into(),
            r_name: r.into(),
            o_name: o.into(),
            begin: b,
            end: e,
        }
    }

    fn five_bins() -> TimeBinning {
        TimeBinning::yearly(1, 5).unwrap()
    }

    #[test]
    fn interval_expands_to_every_overlapped_step() {
        let facts = [fact("a", "r", "b", Some(3), Some(5))];
        let (seq, _) = discretize(&facts, Some(&[Split::Train]), &five_bins(), &Default::default()).unwrap();
        let steps: Vec<u32> = seq
            .snapshots()
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.t.0)
            .collect();
        assert_eq!(steps, vec![3, 4, 5]);
    }

    #[test]
    fn duplicate_facts_collapse() {
        let facts = [
            fact("a", "r", "b", Some(2), Some(2)),
            fact("a", "r", "b", Some(2), Some(3)),
        ];
        let (seq, stats) =
            discretize(&facts, Some(&[Split::Train, Split::Valid]), &five_bins(), &Default::default()).unwrap();
        assert_eq!(seq.snapshot(TimeStep(2)).unwrap().len(), 1);
        assert_eq!(seq.snapshot(TimeStep(2)).unwrap().train().len(), 1);
        assert_eq!(seq.snapshot(TimeStep(3)).unwrap().valid().len(), 1);
        assert_eq!(stats.duplicate_quadruples, 1);
    }

    #[test]
    fn missing_dates_use_dataset_extremes() {
        let facts = [fact("a", "m", "b", Some(4), None), fact("c", "m", "d", None, Some(1))];
        let (seq, _) =
            discretize(&facts, Some(&[Split::Train, Split::Train]), &five_bins(), &Default::default()).unwrap();
        let counts: Vec<usize> = seq.snapshots().iter().map(Snapshot::len).collect();
        assert_eq!(counts, vec![1, 0, 0, 1, 1]);
    }

    #[test]
    fn out_of_range_dropped_and_partial_clipped() {
        let facts = [fact("a", "r", "b", Some(10), Some(12)), fact("a", "r", "c", Some(-3), Some(2))];
        let (seq, stats) =
            discretize(&facts, Some(&[Split::Train, Split::Train]), &five_bins(), &Default::default()).unwrap();
        assert_eq!(stats.dropped_out_of_range, 1);
        assert_eq!(seq.total_quadruples(), 2);
    }

    #[test]
    fn sampled_splits_are_seeded() {
        let facts: Vec<_> = (0..50).map(|i| fact(&format!("e{i}"), "r", "x", Some(1), Some(5))).collect();
        let opts = DiscretizeOptions {
            split_ratios: [0.5, 0.25, 0.25],
            seed: 11,
        };
        let (a, _) = discretize(&facts, None, &five_bins(), &opts).unwrap();
        let (b, _) = discretize(&facts, None, &five_bins(), &opts).unwrap();
        for (x, y) in a.snapshots().iter().zip(b.snapshots()) {
            assert_eq!(x.valid(), y.valid());
            assert_eq!(x.test(), y.test());
        }
        assert_eq!(a.split_seed, Some(11));
        assert!(a.snapshot(TimeStep(1)).unwrap().valid().len() > 0);
    }

    #[test]
    fn ingest_export_round_trip() {
        let facts: Vec<_> = (0..40)
            .map(|i| fact(&format!("e{}", i % 9), &format!("r{}", i % 3), &format!("e{}", (i * 7) % 11), Some(1 + i % 4), Some(2 + i % 4)))
            .collect();
        let (seq, _) = discretize(&facts, None, &five_bins(), &DiscretizeOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_interval_dir(&seq, dir.path()).unwrap();
        let (back, _, _) = ingest_dir(
            dir.path(),
            &BinSource::File(dir.path().join("bins.txt")),
            &DiscretizeOptions::default(),
        )
        .unwrap();
        assert_eq!(back.entity_names, seq.entity_names);
        assert_eq!(back.relation_names, seq.relation_names);
        for (a, b) in back.snapshots().iter().zip(seq.snapshots()) {
            for sp in Split::ALL {
                assert_eq!(a.split(sp), b.split(sp));
            }
        }
        assert_eq!(back.total_quadruples(), seq.total_quadruples());
    }

    #[test]
    fn ingest_dir_without_split_files_samples() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("facts.txt"), "a\tr\tb\t2001-##-##\t2003-##-##\nc\tr\tb\t2002\t####-##-##\n").unwrap();
        let (seq, binning, _) = ingest_dir(dir.path(), &BinSource::Auto(3), &DiscretizeOptions::default()).unwrap();
        assert_eq!(binning.num_steps(), 3);
        assert_eq!(seq.total_quadruples(), 5);
        assert!(seq.split_seed.is_some());
        assert!(ingest_dir(Path::new("/nonexistent/dir"), &BinSource::Auto(3), &DiscretizeOptions::default()).is_err());
    }
}
