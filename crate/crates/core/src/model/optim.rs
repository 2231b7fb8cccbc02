use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::grad::{ParamKind, RowId, SparseGrad};
use super::store::ParameterStore;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Row-sparse first-order optimizer. Rows absent from a gradient are left alone
/// (Adam moments included), so untouched embeddings do not drift.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    moments: HashMap<RowId, (Vec<f64>, Vec<f64>, u64)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: HashMap::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    /// Applies one descent step, then renormalises any touched hyperplane rows.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &SparseGrad) -> Result<()> {
        grads.check_finite("update")?;
        for (id, g) in grads.iter() {
            match self.kind {
                OptimizerKind::Sgd => {
                    let row = store.row_mut(*id);
                    for (p, gi) in row.iter_mut().zip(g) {
                        *p -= self.lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v, n) = self
                        .moments
                        .entry(*id)
                        .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()], 0));
                    *n += 1;
                    let c1 = 1.0 - self.beta1.powi(*n as i32);
                    let c2 = 1.0 - self.beta2.powi(*n as i32);
                    let row = store.row_mut(*id);
                    for k in 0..g.len() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                        row[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                    }
                }
            }
            if id.kind == ParamKind::Hyperplane {
                store.renormalize_hyperplane(id.row as usize);
            }
        }
        Ok(())
    }
}
