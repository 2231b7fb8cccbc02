use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parameter matrix a row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Entity,
    Relation,
    /// DE per-entity frequencies `w`.
    Freq,
    /// DE per-entity phases `b`.
    Phase,
    /// HyTE per-step hyperplane normals.
    Hyperplane,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [
        ParamKind::Entity,
        ParamKind::Relation,
        ParamKind::Freq,
        ParamKind::Phase,
        ParamKind::Hyperplane,
    ];
}

/// Address of one parameter row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId {
    pub kind: ParamKind,
    pub row: u32,
}

impl RowId {
    pub fn new(kind: ParamKind, row: usize) -> Self {
        Self { kind, row: row as u32 }
    }
}

/// Row-sparse gradient: only rows touched by a batch are present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad {
    rows: BTreeMap<RowId, Vec<f64>>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row_mut(&mut self, id: RowId, width: usize) -> &mut [f64] {
        self.rows.entry(id).or_insert_with(|| vec![0.0; width])
    }

    pub fn get(&self, id: &RowId) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, id: RowId, values: Vec<f64>) {
        self.rows.insert(id, values);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RowId, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&RowId, &mut Vec<f64>)> {
        self.rows.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_ids(&self) -> impl Iterator<Item = &RowId> {
        self.rows.keys()
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &SparseGrad, scale: f64) {
        for (id, v) in &other.rows {
            let dst = self.row_mut(*id, v.len());
            for (d, x) in dst.iter_mut().zip(v) {
                *d += scale * x;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.rows.values_mut() {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (id, v) in &self.rows {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{what} gradient, row {:?}", id)));
            }
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.rows.values().flatten().map(|x| x * x).sum()
    }
}
