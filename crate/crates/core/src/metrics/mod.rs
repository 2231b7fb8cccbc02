//! Ranking engine and evaluation measures.
//!
//! A query `(s, r, ?, t)` ranks every entity in `E^t_known` by score. The
//! current measure `C_t` is Hits@10 on `D^t_test`; the average measure `A_t`
//! averages Hits@10 over earlier test sets; DF and RRD probe how facts deleted
//! within the last `τ_d` steps are ranked now.

mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{aggregate_runs, read_metrics_csv, step_averages, write_metrics_csv, MetricRow, RunSummary, SummaryStat};

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, KnownSet, RelationId, Snapshot, SnapshotSequence, TimeStep, Triple};
use crate::model::ParameterStore;

/// Position of `truth` when `candidates` are sorted by descending score, ties
/// going to the smaller id. With `filter`, other entities in it are skipped.
pub fn rank(scores: &[f64], candidates: &[EntityId], truth: EntityId, filter: &[EntityId]) -> Result<u32> {
    let j = candidates
        .iter()
        .position(|&c| c == truth)
        .ok_or(Error::MissingCandidate(truth.0))?;
    let st = scores[j];
    let mut r = 1u32;
    for (&c, &sc) in candidates.iter().zip(scores) {
        if c == truth || (!filter.is_empty() && filter.binary_search(&c).is_ok()) {
            continue;
        }
        if sc > st || (sc == st && c < truth) {
            r += 1;
        }
    }
    Ok(r)
}

/// Fraction of ranks `≤ k`.
pub fn hits_at_k(ranks: &[u32], k: u32) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list for Hits@k"));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[u32]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list for MRR"));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// One ranked test query, with the ranks of its windowed deleted candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRank {
    pub triple: Triple,
    pub direction: Direction,
    pub rank: u32,
    pub deleted_ranks: Vec<u32>,
}

/// Ranks for a set of queries evaluated at one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankReport {
    pub step: TimeStep,
    pub queries: Vec<QueryRank>,
}

impl RankReport {
    pub fn ranks(&self) -> Vec<u32> {
        self.queries.iter().map(|q| q.rank).collect()
    }

    pub fn ranks_for(&self, dir: Direction) -> Vec<u32> {
        self.queries.iter().filter(|q| q.direction == dir).map(|q| q.rank).collect()
    }

    pub fn hits_at(&self, k: u32) -> Result<f64> {
        hits_at_k(&self.ranks(), k)
    }

    pub fn mrr(&self) -> Result<f64> {
        mrr(&self.ranks())
    }

    /// `(DF_t, RRD_t)` pooled over directions, or `None` when no query has a
    /// deleted candidate.
    pub fn df_and_rrd(&self, k: u32) -> Option<(f64, f64)> {
        df_and_rrd(&self.queries, k)
    }
}

/// `DF = (1/Z) Σ I(rank(o′) ≤ k)` and `RRD = (100/Z) Σ [1/rank(o) − 1/rank(o′)]`
/// with `Z` the total number of deleted candidates.
pub fn df_and_rrd(queries: &[QueryRank], k: u32) -> Option<(f64, f64)> {
    let mut z = 0usize;
    let mut hits = 0usize;
    let mut diff = 0.0;
    for q in queries {
        for &rd in &q.deleted_ranks {
            z += 1;
            hits += (rd <= k) as usize;
            diff += 1.0 / q.rank as f64 - 1.0 / rd as f64;
        }
    }
    (z > 0).then(|| (hits as f64 / z as f64, 100.0 * diff / z as f64))
}

/// `O′_{s,r,t}` and its subject-side mirror: entities that completed a query
/// into a fact somewhere in `[t − τ_d, t − 1]` but do not at `t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeletedCandidateIndex {
    object: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    subject: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
}

impl DeletedCandidateIndex {
    pub fn build(seq: &SnapshotSequence, t: TimeStep, window: u32) -> Result<Self> {
        let current = seq.snapshot(t)?;
        let mut idx = Self::default();
        let first = (t.0 as i64 - window as i64).max(1) as u32;
        for tp in first..t.0 {
            for tr in seq.snapshot(TimeStep(tp))?.facts_sorted() {
                if current.contains(&tr) {
                    continue;
                }
                idx.object.entry((tr.s, tr.r)).or_default().insert(tr.o);
                idx.subject.entry((tr.o, tr.r)).or_default().insert(tr.s);
            }
        }
        Ok(idx)
    }

    pub fn candidates(&self, dir: Direction, anchor: EntityId, r: RelationId) -> Vec<EntityId> {
        let map = match dir {
            Direction::Object => &self.object,
            Direction::Subject => &self.subject,
        };
        map.get(&(anchor, r)).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.object.is_empty()
    }
}

/// Ranks both directions of every triple in `facts` at step `t` against
/// `candidates`. With `filter`, other true answers in that snapshot are
/// skipped. With `deleted`, the windowed deleted candidates are ranked too.
pub fn rank_queries(
    store: &ParameterStore,
    facts: &[Triple],
    t: TimeStep,
    candidates: &KnownSet,
    filter: Option<&Snapshot>,
    deleted: Option<&DeletedCandidateIndex>,
) -> Result<RankReport> {
    let cands = candidates.entities();
    let per_fact: Vec<Result<Vec<QueryRank>>> = facts
        .par_iter()
        .map(|tr| {
            let mut out = Vec::with_capacity(2);
            for dir in Direction::BOTH {
                let anchor = dir.anchor(tr);
                let truth = dir.target(tr);
                let scores = store.score_candidates(anchor, tr.r, t, &cands, dir);
                let filt: &[EntityId] = match filter {
                    Some(snap) => snap.answers(dir, anchor, tr.r),
                    None => &[],
                };
                let rank_true = rank(&scores, &cands, truth, filt)?;
                let deleted_ranks = match deleted {
                    Some(idx) => idx
                        .candidates(dir, anchor, tr.r)
                        .into_iter()
                        .filter(|e| candidates.contains(e.0))
                        .map(|e| rank(&scores, &cands, e, filt))
                        .collect::<Result<Vec<_>>>()?,
                    None => Vec::new(),
                };
                out.push(QueryRank {
                    triple: *tr,
                    direction: dir,
                    rank: rank_true,
                    deleted_ranks,
                });
            }
            Ok(out)
        })
        .collect();
    let mut queries = Vec::with_capacity(facts.len() * 2);
    for r in per_fact {
        queries.extend(r?);
    }
    Ok(RankReport { step: t, queries })
}

/// Evaluates test queries of step `j` (`α_{·,j}` entries) with the step's
/// own candidate set.
pub fn evaluate_test_step(
    store: &ParameterStore,
    seq: &SnapshotSequence,
    j: TimeStep,
    filtered: bool,
    deleted: Option<&DeletedCandidateIndex>,
) -> Result<RankReport> {
    let snap = seq.snapshot(j)?;
    rank_queries(store, snap.test(), j, seq.known_entities(j)?, filtered.then_some(snap), deleted)
}

/// Hits@10 of the model trained through `t` on the test sets it was evaluated on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub t: u32,
    pub entries: BTreeMap<u32, f64>,
}

/// `(C_t, A_t)` for each row: `C_t = α_{t,t}`, `A_t` the mean of the row.
pub fn current_and_average(rows: &[AlphaRow]) -> Result<Vec<(f64, f64)>> {
    rows.iter()
        .map(|row| {
            let c = *row
                .entries
                .get(&row.t)
                .ok_or_else(|| Error::Config(format!("α row for step {} lacks its diagonal entry", row.t)))?;
            if let Some((&j, _)) = row.entries.range(row.t + 1..).next() {
                return Err(Error::Config(format!("α row for step {} has a future entry {j}", row.t)));
            }
            let a = row.entries.values().sum::<f64>() / row.entries.len() as f64;
            Ok((c, a))
        })
        .collect()
}

/// Steps `j ≤ t` at which `α_{t,j}` is evaluated. Exact mode uses every step;
/// otherwise the DF window, the diagonal and every `stride`-th step.
pub fn alpha_steps(t: u32, exact: bool, window: u32, stride: u32) -> Vec<u32> {
    if exact {
        return (1..=t).collect();
    }
    let mut s: BTreeSet<u32> = (t.saturating_sub(window).max(1)..=t).collect();
    if stride > 0 {
        s.extend((1..=t).step_by(stride as usize));
    }
    s.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Decoder, Encoder, ModelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: u32) -> Vec<EntityId> {
        (0..n).map(EntityId).collect()
    }

    #[test]
    fn rank_basics() {
        assert_eq!(rank(&[0.1, 0.9, 0.3], &ids(3), EntityId(1), &[]).unwrap(), 1);
        assert_eq!(rank(&[0.5; 4], &ids(4), EntityId(0), &[]).unwrap(), 1);
        assert_eq!(rank(&[0.5; 4], &ids(4), EntityId(3), &[]).unwrap(), 4);
        assert_eq!(rank(&[0.9, 0.8, 0.3], &ids(3), EntityId(2), &[EntityId(0), EntityId(2)]).unwrap(), 2);
        assert!(matches!(rank(&[0.1], &ids(1), EntityId(5), &[]), Err(Error::MissingCandidate(5))));
    }

    #[test]
    fn rank_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let scores: Vec<f64> = (0..20).map(|_| (rng.gen_range(0..8) as f64) * 0.25).collect();
            let truth = EntityId(rng.gen_range(0..20));
            let mut order: Vec<u32> = (0..20).collect();
            order.sort_by(|&a, &b| scores[b as usize].partial_cmp(&scores[a as usize]).unwrap().then(a.cmp(&b)));
            let want = order.iter().position(|&c| c == truth.0).unwrap() as u32 + 1;
            assert_eq!(rank(&scores, &ids(20), truth, &[]).unwrap(), want);
        }
    }

    #[test]
    fn hits_and_mrr_examples() {
        assert_eq!(hits_at_k(&[1, 1, 1], 10).unwrap(), 1.0);
        assert_eq!(hits_at_k(&[1, 11], 10).unwrap(), 0.5);
        assert_eq!(mrr(&[1]).unwrap(), 1.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 0.5833333333333334).abs() < 1e-15);
        assert!(hits_at_k(&[], 10).is_err());
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn hits_and_mrr_match_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ranks: Vec<u32> = (0..100).map(|_| rng.gen_range(1..40)).collect();
        let mut count = 0;
        let mut recip = 0.0;
        for &r in &ranks {
            if r <= 10 {
                count += 1;
            }
            recip += 1.0 / r as f64;
        }
        assert_eq!(hits_at_k(&ranks, 10).unwrap(), count as f64 / 100.0);
        assert!((mrr(&ranks).unwrap() - recip / 100.0).abs() < 1e-15);
    }

    #[test]
    fn current_and_average_examples() {
        let rows = vec![
            AlphaRow {
                t: 1,
                entries: [(1, 0.7)].into(),
            },
            AlphaRow {
                t: 2,
                entries: [(1, 0.2), (2, 0.4)].into(),
            },
        ];
        let ca = current_and_average(&rows).unwrap();
        assert_eq!(ca[0], (0.7, 0.7));
        assert!((ca[1].0 - 0.4).abs() < 1e-15 && (ca[1].1 - 0.3).abs() < 1e-15);
        let bad = AlphaRow {
            t: 1,
            entries: [(2, 0.1)].into(),
        };
        assert!(current_and_average(&[bad]).is_err());
    }

    #[test]
    fn df_rrd_examples() {
        let q = |rank, deleted: Vec<u32>| QueryRank {
            triple: Triple::new(0, 0, 1),
            direction: Direction::Object,
            rank,
            deleted_ranks: deleted,
        };
        assert_eq!(df_and_rrd(&[q(3, vec![])], 10), None);
        assert_eq!(df_and_rrd(&[q(4, vec![4])], 10), Some((1.0, 0.0)));
        assert_eq!(df_and_rrd(&[q(1, vec![2])], 10), Some((1.0, 50.0)));
    }

    #[test]
    fn alpha_step_selection() {
        assert_eq!(alpha_steps(4, true, 10, 0), vec![1, 2, 3, 4]);
        assert_eq!(alpha_steps(30, false, 2, 10), vec![1, 11, 21, 28, 29, 30]);
    }

    fn toy_store(seed: u64) -> ParameterStore {
        let spec = ModelSpec {
            encoder: Encoder::De,
            decoder: Decoder::DistMult,
            dim: 4,
            de_gamma: 0.5,
            num_entities: 12,
            num_relations: 2,
            num_steps: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParameterStore::random(spec, seed, &mut rng).unwrap()
    }

    proptest! {
        #[test]
        fn hits_monotone_and_mrr_bounds(ranks in proptest::collection::vec(1u32..50, 1..60)) {
            let mut prev = 0.0;
            for k in 1..=50 {
                let h = hits_at_k(&ranks, k).unwrap();
                prop_assert!(h >= prev);
                prev = h;
            }
            prop_assert_eq!(prev, 1.0);
            let m = mrr(&ranks).unwrap();
            prop_assert!(m > 0.0 && m <= 1.0);
            prop_assert!(m >= hits_at_k(&ranks, 1).unwrap());
        }

        #[test]
        fn rank_invariant_under_monotone_transform(scores in proptest::collection::vec(-5.0f64..5.0, 2..30), pick in 0usize..30) {
            let n = scores.len();
            let truth = EntityId((pick % n) as u32);
            let c = ids(n as u32);
            let base = rank(&scores, &c, truth, &[]).unwrap();
            let tf: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
            prop_assert_eq!(base, rank(&tf, &c, truth, &[]).unwrap());
            let mut ext = scores.clone();
            ext.push(f64::NEG_INFINITY);
            prop_assert_eq!(base, rank(&ext, &ids(n as u32 + 1), truth, &[]).unwrap());
            prop_assert!(base >= 1 && base as usize <= n);
        }

        #[test]
        fn df_rrd_bounded(ranks in proptest::collection::vec((1u32..20, proptest::collection::vec(1u32..20, 0..4)), 1..20)) {
            let qs: Vec<QueryRank> = ranks.into_iter().map(|(r, d)| QueryRank { triple: Triple::new(0,0,0), direction: Direction::Object, rank: r, deleted_ranks: d }).collect();
            if let Some((df, rrd)) = df_and_rrd(&qs, 10) {
                prop_assert!((0.0..=1.0).contains(&df));
                prop_assert!((-100.0..=100.0).contains(&rrd));
            }
        }
    }

    #[test]
    fn rank_queries_match_direct_scoring() {
        let st = toy_store(1);
        let known = KnownSet::from_ids(12, 0..10);
        let facts = [Triple::new(0, 1, 3), Triple::new(5, 0, 9)];
        let rep = rank_queries(&st, &facts, TimeStep(2), &known, None, None).unwrap();
        assert_eq!(rep.queries.len(), 4);
        for q in &rep.queries {
            let cands = known.entities();
            let tr = q.triple;
            let truth_score = st.score(tr.s, tr.r, tr.o, TimeStep(2));
            let better = cands
                .iter()
                .filter(|&&c| {
                    let t = q.direction.fill(q.direction.anchor(&tr), tr.r, c);
                    let sc = st.score(t.s, t.r, t.o, TimeStep(2));
                    c != q.direction.target(&tr) && (sc > truth_score || (sc == truth_score && c < q.direction.target(&tr)))
                })
                .count();
            assert_eq!(q.rank as usize, better + 1);
        }
    }
}
