use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Direction, EntityId, Quadruple, SnapshotSequence};

/// Corrupted entities for one fact, per side.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegativeSampleSet {
    /// Replacements for the object.
    pub object: Vec<EntityId>,
    /// Replacements for the subject.
    pub subject: Vec<EntityId>,
}

impl NegativeSampleSet {
    pub fn side(&self, dir: Direction) -> &[EntityId] {
        match dir {
            Direction::Object => &self.object,
            Direction::Subject => &self.subject,
        }
    }

    /// Total corrupted entities over both sides.
    pub fn len(&self) -> usize {
        self.object.len() + self.subject.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws up to `rate` distinct corruptions per side from `E^{t′}_known`,
/// rejecting any entity that would form a true fact at `t′`. Returns every
/// valid candidate when fewer than `rate` exist.
pub fn sample_negatives<R: Rng + ?Sized>(
    fact: &Quadruple,
    rate: usize,
    seq: &SnapshotSequence,
    rng: &mut R,
) -> Result<NegativeSampleSet> {
    let snap = seq.snapshot(fact.t)?;
    let known = seq.known_entities(fact.t)?.ids();
    let tr = fact.triple();
    let mut side = |dir: Direction| -> Vec<EntityId> {
        let anchor = dir.anchor(&tr);
        let truths = snap.answers(dir, anchor, tr.r);
        let is_true = |e: u32| truths.binary_search(&EntityId(e)).is_ok();
        let n_valid = known.len() - truths.len();
        if rate == 0 || n_valid == 0 {
            return Vec::new();
        }
        if rate * 2 > n_valid {
            let valid: Vec<u32> = known.iter().copied().filter(|&e| !is_true(e)).collect();
            let k = rate.min(valid.len());
            return index::sample(rng, valid.len(), k).into_iter().map(|i| EntityId(valid[i])).collect();
        }
        let mut seen = HashSet::with_capacity(rate);
        let mut out = Vec::with_capacity(rate);
        while out.len() < rate {
            let e = known[rng.gen_range(0..known.len())];
            if !is_true(e) && seen.insert(e) {
                out.push(EntityId(e));
            }
        }
        out
    };
    let object = side(Direction::Object);
    let subject = side(Direction::Subject);
    Ok(NegativeSampleSet { object, subject })
}
