use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Direction, EntityId, Quadruple, RelationId, TimeStep, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

/// Cumulative membership set over dense ids (`E^t_known`, `R^t_known`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnownSet {
    mask: Vec<bool>,
    members: Vec<u32>,
}

impl KnownSet {
    pub fn empty(universe: usize) -> Self {
        Self {
            mask: vec![false; universe],
            members: Vec::new(),
        }
    }

    pub fn from_ids(universe: usize, ids: impl IntoIterator<Item = u32>) -> Self {
        let mut set = Self::empty(universe);
        set.extend(ids);
        set
    }

    pub fn extend(&mut self, ids: impl IntoIterator<Item = u32>) {
        for id in ids {
            let slot = &mut self.mask[id as usize];
            if !*slot {
                *slot = true;
                self.members.push(id);
            }
        }
        self.members.sort_unstable();
    }

    #[inline]
    pub fn contains(&self, id: u32) -> bool {
        self.mask.get(id as usize).copied().unwrap_or(false)
    }

    /// Sorted ascending.
    pub fn ids(&self) -> &[u32] {
        &self.members
    }

    pub fn entities(&self) -> Vec<EntityId> {
        self.members.iter().map(|&i| EntityId(i)).collect()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    pub fn is_subset(&self, other: &KnownSet) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }
}

/// One KG snapshot `G^t = (E^t, R^t, D^t)` with its train/valid/test partition.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: TimeStep,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    facts: HashSet<Triple>,
    entities: Vec<EntityId>,
    relations: Vec<RelationId>,
    objects: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    subjects: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl Snapshot {
    /// Builds a snapshot from three split lists. Duplicates within a split are
    /// collapsed; a triple in more than one split is an error.
    pub fn new(
        t: TimeStep,
        mut train: Vec<Triple>,
        mut valid: Vec<Triple>,
        mut test: Vec<Triple>,
    ) -> Result<Self> {
        for split in [&mut train, &mut valid, &mut test] {
            split.sort_unstable();
            split.dedup();
        }
        let mut facts = HashSet::with_capacity(train.len() + valid.len() + test.len());
        for tr in train.iter().chain(&valid).chain(&test) {
            if !facts.insert(*tr) {
                return Err(Error::Corrupt {
                    what: "snapshot",
                    msg: format!(
                        "triple ({}, {}, {}) appears in more than one split at step {}",
                        tr.s, tr.r, tr.o, t
                    ),
                });
            }
        }
        let mut entities = BTreeSet::new();
        let mut relations = BTreeSet::new();
        let mut objects: HashMap<_, Vec<EntityId>> = HashMap::new();
        let mut subjects: HashMap<_, Vec<EntityId>> = HashMap::new();
        let mut all: Vec<&Triple> = facts.iter().collect();
        all.sort_unstable();
        for tr in all {
            entities.insert(tr.s);
            entities.insert(tr.o);
            relations.insert(tr.r);
            objects.entry((tr.s, tr.r)).or_default().push(tr.o);
            subjects.entry((tr.r, tr.o)).or_default().push(tr.s);
        }
        Ok(Self {
            t,
            train,
            valid,
            test,
            facts,
            entities: entities.into_iter().collect(),
            relations: relations.into_iter().collect(),
            objects,
            subjects,
        })
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// `D^t`: every observed triple at this step regardless of split.
    pub fn contains(&self, triple: &Triple) -> bool {
        self.facts.contains(triple)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// All triples of `D^t`, sorted.
    pub fn facts_sorted(&self) -> Vec<Triple> {
        let mut v: Vec<Triple> = self.facts.iter().copied().collect();
        v.sort_unstable();
        v
    }

    /// `E^t`, sorted.
    pub fn entities(&self) -> &[EntityId] {
        &self.entities
    }

    /// `R^t`, sorted.
    pub fn relations(&self) -> &[RelationId] {
        &self.relations
    }

    /// Entities completing `(anchor, r, ?)` (or `(?, r, anchor)`) into a fact of `D^t`.
    pub fn answers(&self, direction: Direction, anchor: EntityId, r: RelationId) -> &[EntityId] {
        let hit = match direction {
            Direction::Object => self.objects.get(&(anchor, r)),
            Direction::Subject => self.subjects.get(&(r, anchor)),
        };
        hit.map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn split_of(&self, triple: &Triple) -> Option<Split> {
        Split::ALL
            .into_iter()
            .find(|&sp| self.split(sp).binary_search(triple).is_ok())
    }
}

/// The whole temporal KG with cumulative known-entity bookkeeping.
#[derive(Clone, Debug)]
pub struct SnapshotSequence {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    snapshots: Vec<Snapshot>,
    known_entities: Vec<KnownSet>,
    known_relations: Vec<KnownSet>,
    /// Seed used to draw splits when none were supplied.
    pub split_seed: Option<u64>,
}

impl SnapshotSequence {
    pub fn new(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        snapshots: Vec<Snapshot>,
    ) -> Result<Self> {
        let n_e = entity_names.len();
        let n_r = relation_names.len();
        let mut known_entities = Vec::with_capacity(snapshots.len());
        let mut known_relations = Vec::with_capacity(snapshots.len());
        let mut ke = KnownSet::empty(n_e);
        let mut kr = KnownSet::empty(n_r);
        for (i, snap) in snapshots.iter().enumerate() {
            if snap.t.idx() != i + 1 {
                return Err(Error::Corrupt {
                    what: "snapshot sequence",
                    msg: format!("snapshot {} carries time step {}", i + 1, snap.t),
                });
            }
            if let Some(bad) = snap.entities.iter().find(|e| e.idx() >= n_e) {
                return Err(Error::Corrupt {
                    what: "snapshot sequence",
                    msg: format!("entity id {bad} outside vocabulary of {n_e}"),
                });
            }
            if let Some(bad) = snap.relations.iter().find(|r| r.idx() >= n_r) {
                return Err(Error::Corrupt {
                    what: "snapshot sequence",
                    msg: format!("relation id {bad} outside vocabulary of {n_r}"),
                });
            }
            ke.extend(snap.entities.iter().map(|e| e.0));
            kr.extend(snap.relations.iter().map(|r| r.0));
            known_entities.push(ke.clone());
            known_relations.push(kr.clone());
        }
        Ok(Self {
            entity_names,
            relation_names,
            snapshots,
            known_entities,
            known_relations,
            split_seed: None,
        })
    }

    /// Convenience constructor with generated names `e0, e1, ...` / `r0, ...`.
    pub fn from_unnamed(
        num_entities: usize,
        num_relations: usize,
        snapshots: Vec<Snapshot>,
    ) -> Result<Self> {
        Self::new(
            (0..num_entities).map(|i| format!("e{i}")).collect(),
            (0..num_relations).map(|i| format!("r{i}")).collect(),
            snapshots,
        )
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// `T`.
    pub fn num_steps(&self) -> u32 {
        self.snapshots.len() as u32
    }

    fn check(&self, t: TimeStep) -> Result<usize> {
        if t.0 == 0 || t.0 > self.num_steps() {
            return Err(Error::TimeStepOutOfRange {
                t: t.0,
                max: self.num_steps(),
            });
        }
        Ok(t.idx() - 1)
    }

    pub fn snapshot(&self, t: TimeStep) -> Result<&Snapshot> {
        let i = self.check(t)?;
        Ok(&self.snapshots[i])
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// `E^t_known = ∪_{i ≤ t} E^i`.
    pub fn known_entities(&self, t: TimeStep) -> Result<&KnownSet> {
        let i = self.check(t)?;
        Ok(&self.known_entities[i])
    }

    pub fn known_relations(&self, t: TimeStep) -> Result<&KnownSet> {
        let i = self.check(t)?;
        Ok(&self.known_relations[i])
    }

    /// `D^t_add`: facts of `D^t` whose triple is absent from `D^{t−1}`.
    /// At `t = 1` every fact counts as added.
    pub fn added_facts(&self, t: TimeStep) -> Result<Vec<Quadruple>> {
        let i = self.check(t)?;
        let cur = &self.snapshots[i];
        let mut out: Vec<Quadruple> = match i.checked_sub(1).map(|p| &self.snapshots[p]) {
            None => cur.facts.iter().map(|tr| tr.at(t)).collect(),
            Some(prev) => cur
                .facts
                .iter()
                .filter(|tr| !prev.contains(tr))
                .map(|tr| tr.at(t))
                .collect(),
        };
        out.sort_unstable();
        Ok(out)
    }

    /// Total number of quadruples over all steps and splits.
    pub fn total_quadruples(&self) -> usize {
        self.snapshots.iter().map(Snapshot::len).sum()
    }
}

/// `N^t`: triples present somewhere in the replay window but absent from `D^t`,
/// re-stamped with time `t`.
pub fn deleted_facts<'a>(
    buffer_triples: impl IntoIterator<Item = &'a Triple>,
    current: &Snapshot,
    t: TimeStep,
) -> Vec<Quadruple> {
    let set: BTreeSet<Triple> = buffer_triples
        .into_iter()
        .filter(|tr| !current.contains(tr))
        .copied()
        .collect();
    set.into_iter().map(|tr| tr.at(t)).collect()
}
