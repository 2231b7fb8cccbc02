//! Row-wise gradient projection against a replay reference gradient.
//!
//! Each parameter row is projected independently: if `g_i · gref_i < 0` the
//! component of `g_i` along `gref_i` is removed, so no single embedding is
//! moved against the replay objective while unrelated rows update freely.

use crate::model::SparseGrad;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projects one row in place. Returns whether the row was changed.
pub fn project_row(g: &mut [f64], gref: &[f64]) -> bool {
    let gg = dot(gref, gref);
    if gg == 0.0 {
        return false;
    }
    let d = dot(g, gref);
    if d >= 0.0 {
        return false;
    }
    let c = d / gg;
    for (x, r) in g.iter_mut().zip(gref) {
        *x -= c * r;
    }
    true
}

/// `g̃` from `g` and `g_ref`. Rows of `g` absent from `g_ref` pass through.
pub fn project_rows(g: &SparseGrad, gref: &SparseGrad) -> SparseGrad {
    let mut out = g.clone();
    let mut projected = 0usize;
    for (id, row) in out.iter_mut() {
        if let Some(r) = gref.get(id) {
            projected += project_row(row, r) as usize;
        }
    }
    log::trace!("projected {projected} of {} gradient rows", out.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamKind, RowId};

    #[test]
    fn worked_example() {
        let mut g = [1.0, 0.0];
        assert!(project_row(&mut g, &[-1.0, 1.0]));
        assert_eq!(g, [0.5, 0.5]);
        assert_eq!(dot(&g, &[-1.0, 1.0]), 0.0);
    }

    #[test]
    fn satisfied_and_zero_reference_pass_through() {
        let mut g = [1.0, 2.0];
        assert!(!project_row(&mut g, &[1.0, 0.0]));
        assert!(!project_row(&mut g, &[0.0, 0.0]));
        assert_eq!(g, [1.0, 2.0]);
    }

    #[test]
    fn rows_missing_from_reference_untouched() {
        let mut g = SparseGrad::new();
        g.insert(RowId::new(ParamKind::Entity, 0), vec![1.0, 0.0]);
        g.insert(RowId::new(ParamKind::Entity, 1), vec![1.0, 0.0]);
        let mut r = SparseGrad::new();
        r.insert(RowId::new(ParamKind::Entity, 0), vec![-1.0, 1.0]);
        r.insert(RowId::new(ParamKind::Relation, 0), vec![-1.0, 1.0]);
        let p = project_rows(&g, &r);
        assert_eq!(p.get(&RowId::new(ParamKind::Entity, 0)).unwrap(), &[0.5, 0.5]);
        assert_eq!(p.get(&RowId::new(ParamKind::Entity, 1)).unwrap(), &[1.0, 0.0]);
        assert!(p.get(&RowId::new(ParamKind::Relation, 0)).is_none());
    }
}
