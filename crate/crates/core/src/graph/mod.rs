//! Temporal knowledge graph domain types.
//!
//! A temporal KG is a sequence of snapshots `D^1 .. D^T`, each a set of
//! `(s, r, o)` triples observed at a discrete time step. Entity and relation
//! ids are dense and assigned once for the whole dataset so that parameter
//! rows stay stable across steps.

mod cache;
mod pattern;
mod snapshot;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cache::{read_cache, write_cache, CACHE_VERSION};
pub use pattern::{PatternKey, PatternShape};
pub use snapshot::{deleted_facts, KnownSet, Snapshot, SnapshotSequence, Split};

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn idx(self) -> usize {
                self.0 as usize
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

dense_id!(
    /// Row index into the entity tables.
    EntityId
);
dense_id!(
    /// Row index into the relation table.
    RelationId
);
dense_id!(
    /// Discrete time step, counted from 1.
    TimeStep
);

/// A time-less fact. Add/delete comparisons between steps use this identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub s: EntityId,
    pub r: RelationId,
    pub o: EntityId,
}

impl Triple {
    pub fn new(s: u32, r: u32, o: u32) -> Self {
        Self {
            s: EntityId(s),
            r: RelationId(r),
            o: EntityId(o),
        }
    }

    pub fn at(self, t: TimeStep) -> Quadruple {
        Quadruple {
            s: self.s,
            r: self.r,
            o: self.o,
            t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub s: EntityId,
    pub r: RelationId,
    pub o: EntityId,
    pub t: TimeStep,
}

impl Quadruple {
    pub fn new(s: u32, r: u32, o: u32, t: u32) -> Self {
        Self {
            s: EntityId(s),
            r: RelationId(r),
            o: EntityId(o),
            t: TimeStep(t),
        }
    }

    pub fn triple(&self) -> Triple {
        Triple {
            s: self.s,
            r: self.r,
            o: self.o,
        }
    }
}

/// Which side of a fact a query asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(s, r, ?, t)`
    Object,
    /// `(?, r, o, t)`
    Subject,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Object, Direction::Subject];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Object => "object",
            Direction::Subject => "subject",
        }
    }

    /// The fixed entity of a query built from `triple`.
    pub fn anchor(self, triple: &Triple) -> EntityId {
        match self {
            Direction::Object => triple.s,
            Direction::Subject => triple.o,
        }
    }

    /// The entity a query built from `triple` is asking for.
    pub fn target(self, triple: &Triple) -> EntityId {
        match self {
            Direction::Object => triple.o,
            Direction::Subject => triple.s,
        }
    }

    /// Rebuild a triple with the queried slot replaced by `candidate`.
    pub fn fill(self, anchor: EntityId, r: RelationId, candidate: EntityId) -> Triple {
        match self {
            Direction::Object => Triple {
                s: anchor,
                r,
                o: candidate,
            },
            Direction::Subject => Triple {
                s: candidate,
                r,
                o: anchor,
            },
        }
    }
}
