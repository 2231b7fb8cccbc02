//! Loss terms and time-dependent negative sampling.
//!
//! Every loss function returns its value and, when handed a gradient buffer,
//! adds `scale · ∂L/∂θ` into it. Scores for a query are laid out as
//! `[positive, negatives...]`.

mod negatives;

use serde::{Deserialize, Serialize};

pub use negatives::{sample_negatives, NegativeSampleSet};

use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, Quadruple, TimeStep};
use crate::model::{ParamKind, ParameterStore, RowId, SparseGrad};

/// `α₁..α₅` for `L_CE, L_del, L_RCE, L_RKD, L_TR`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Alphas {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
}

impl Default for Alphas {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl Alphas {
    pub fn uniform(a: f64) -> Self {
        Self {
            alpha1: a,
            alpha2: a,
            alpha3: a,
            alpha4: a,
            alpha5: a,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5]
    }
}

/// Per-term loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub ce: f64,
    pub del: f64,
    pub rce: f64,
    pub rkd: f64,
    pub tr: f64,
}

impl LossBundle {
    pub fn as_array(&self) -> [f64; 5] {
        [self.ce, self.del, self.rce, self.rkd, self.tr]
    }

    pub fn total(&self, alphas: &Alphas) -> f64 {
        self.as_array().iter().zip(alphas.as_array()).map(|(l, a)| a * l).sum()
    }

    pub fn add(&mut self, other: &LossBundle) {
        self.ce += other.ce;
        self.del += other.del;
        self.rce += other.rce;
        self.rkd += other.rkd;
        self.tr += other.tr;
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in ["ce", "del", "rce", "rkd", "tr"].iter().zip(self.as_array()) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("loss term {name}")));
            }
        }
        Ok(())
    }
}

/// Which form of the distillation penalty to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillForm {
    /// `Σ_j q_prev_j ln(q_prev_j / q_j)` over the positive and its negatives.
    #[default]
    Full,
    /// `q_prev ln(q_prev / q)` on the positive class only.
    Scalar,
}

/// `softplus(x) = ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `ln Σ exp(scores)`.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

fn candidates(fact: &Quadruple, dir: Direction, negs: &[EntityId]) -> Vec<EntityId> {
    let tr = fact.triple();
    let mut c = Vec::with_capacity(negs.len() + 1);
    c.push(dir.target(&tr));
    c.extend_from_slice(negs);
    c
}

fn query_scores(store: &ParameterStore, fact: &Quadruple, dir: Direction, negs: &[EntityId]) -> (Vec<EntityId>, Vec<f64>) {
    let tr = fact.triple();
    let cands = candidates(fact, dir, negs);
    let scores = store.score_candidates(dir.anchor(&tr), tr.r, fact.t, &cands, dir);
    (cands, scores)
}

fn push_grad(store: &ParameterStore, fact: &Quadruple, dir: Direction, cands: &[EntityId], coefs: &[f64], grads: &mut SparseGrad) {
    let tr = fact.triple();
    store.accumulate_candidates_grad(dir.anchor(&tr), tr.r, fact.t, cands, dir, coefs, grads);
}

/// `−ln q(positive)` summed over both corruption directions, where `q` is the
/// softmax over the positive and its negatives. A direction with no negatives
/// contributes 0.
pub fn softmax_ce(
    store: &ParameterStore,
    fact: &Quadruple,
    negs: &NegativeSampleSet,
    scale: f64,
    mut grads: Option<&mut SparseGrad>,
) -> f64 {
    let mut loss = 0.0;
    for dir in Direction::BOTH {
        let side = negs.side(dir);
        if side.is_empty() {
            log::warn!("no negatives for {fact:?} ({}); cross-entropy term skipped", dir.as_str());
            continue;
        }
        let (cands, scores) = query_scores(store, fact, dir, side);
        loss += log_sum_exp(&scores) - scores[0];
        if let Some(g) = grads.as_deref_mut() {
            let mut coefs = softmax(&scores);
            coefs[0] -= 1.0;
            coefs.iter_mut().for_each(|c| *c *= scale);
            push_grad(store, fact, dir, &cands, &coefs, g);
        }
    }
    loss
}

/// Frozen pre-step probabilities for one replay fact, one vector per
/// direction, aligned with `[positive, negatives...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedProbs {
    pub fact: Quadruple,
    pub object: Vec<f64>,
    pub subject: Vec<f64>,
}

impl CachedProbs {
    fn side(&self, dir: Direction) -> &[f64] {
        match dir {
            Direction::Object => &self.object,
            Direction::Subject => &self.subject,
        }
    }
}

/// `q^{t−1}` for every replay fact, computed once with `θ^{t−1}` over each
/// fact's fixed negatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillationCache {
    entries: Vec<CachedProbs>,
}

impl DistillationCache {
    pub fn build(prev: &ParameterStore, facts: &[Quadruple], negs: &[NegativeSampleSet]) -> Result<Self> {
        if facts.len() != negs.len() {
            return Err(Error::CacheMismatch(format!("{} facts but {} negative sets", facts.len(), negs.len())));
        }
        let entries = facts
            .iter()
            .zip(negs)
            .map(|(f, n)| {
                let probs = |dir: Direction| {
                    let side = n.side(dir);
                    if side.is_empty() {
                        Vec::new()
                    } else {
                        softmax(&query_scores(prev, f, dir, side).1)
                    }
                };
                CachedProbs {
                    fact: *f,
                    object: probs(Direction::Object),
                    subject: probs(Direction::Subject),
                }
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&CachedProbs> {
        self.entries.get(i)
    }

    pub fn entries(&self) -> &[CachedProbs] {
        &self.entries
    }
}

/// Distillation penalty for one replay fact against its cached probabilities.
pub fn distill_kl(
    cached: &CachedProbs,
    store: &ParameterStore,
    fact: &Quadruple,
    negs: &NegativeSampleSet,
    form: DistillForm,
    scale: f64,
    mut grads: Option<&mut SparseGrad>,
) -> Result<f64> {
    if cached.fact != *fact {
        return Err(Error::CacheMismatch(format!("cached {:?}, evaluating {:?}", cached.fact, fact)));
    }
    let mut loss = 0.0;
    for dir in Direction::BOTH {
        let side = negs.side(dir);
        let prev = cached.side(dir);
        if side.is_empty() && prev.is_empty() {
            continue;
        }
        if prev.len() != side.len() + 1 {
            return Err(Error::CacheMismatch(format!(
                "{fact:?} {}: {} cached probabilities for {} candidates",
                dir.as_str(),
                prev.len(),
                side.len() + 1
            )));
        }
        let (cands, scores) = query_scores(store, fact, dir, side);
        let lse = log_sum_exp(&scores);
        let q = softmax(&scores);
        let coefs: Vec<f64> = match form {
            DistillForm::Full => {
                for (j, &p) in prev.iter().enumerate() {
                    if p > 0.0 {
                        loss += p * (p.ln() - (scores[j] - lse));
                    }
                }
                q.iter().zip(prev).map(|(qj, pj)| scale * (qj - pj)).collect()
            }
            DistillForm::Scalar => {
                let p = prev[0];
                if p > 0.0 {
                    loss += p * (p.ln() - (scores[0] - lse));
                }
                q.iter()
                    .enumerate()
                    .map(|(j, qj)| scale * p * (qj - if j == 0 { 1.0 } else { 0.0 }))
                    .collect()
            }
        };
        if let Some(g) = grads.as_deref_mut() {
            push_grad(store, fact, dir, &cands, &coefs, g);
        }
    }
    Ok(loss)
}

/// `−ln(1 − σ(φ)) = softplus(φ)` for a deleted fact. With `paired`, also adds
/// `−ln σ(φ(s, r, o, t′)) = softplus(−φ)` for the fact at the step it last held.
pub fn deleted_bce(
    store: &ParameterStore,
    fact: &Quadruple,
    paired: Option<TimeStep>,
    scale: f64,
    mut grads: Option<&mut SparseGrad>,
) -> f64 {
    let tr = fact.triple();
    let phi = store.score(tr.s, tr.r, tr.o, fact.t);
    let mut loss = softplus(phi);
    if let Some(g) = grads.as_deref_mut() {
        store.accumulate_score_grad(tr.s, tr.r, tr.o, fact.t, scale * sigmoid(phi), g);
    }
    if let Some(tp) = paired {
        let phi_p = store.score(tr.s, tr.r, tr.o, tp);
        loss += softplus(-phi_p);
        if let Some(g) = grads.as_deref_mut() {
            store.accumulate_score_grad(tr.s, tr.r, tr.o, tp, -scale * sigmoid(-phi_p), g);
        }
    }
    loss
}

/// Squared deviation of every row known at `t−1` from its previous value,
/// summed over entity, frequency, phase, relation and hyperplane matrices.
pub fn temporal_reg(store: &ParameterStore, prev: &ParameterStore, scale: f64, mut grads: Option<&mut SparseGrad>) -> Result<f64> {
    let mut loss = 0.0;
    for kind in ParamKind::ALL {
        let (a, b) = (store.matrix(kind), prev.matrix(kind));
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::DimMismatch(format!(
                "{kind:?}: {}x{} vs previous {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if a.cols() == 0 {
            continue;
        }
        for row in 0..a.rows() {
            let id = RowId::new(kind, row);
            if !prev.is_known(id) {
                continue;
            }
            let (x, y) = (a.row(row), b.row(row));
            let mut any = false;
            for n in 0..x.len() {
                let diff = x[n] - y[n];
                loss += diff * diff;
                any |= diff != 0.0;
            }
            if let (Some(g), true) = (grads.as_deref_mut(), any) {
                let gr = g.row_mut(id, x.len());
                for n in 0..x.len() {
                    gr[n] += scale * 2.0 * (x[n] - y[n]);
                }
            }
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{KnownSet, RelationId};
    use crate::model::{Decoder, Encoder, ModelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(enc: Encoder, dec: Decoder, dim: usize, seed: u64) -> ParameterStore {
        let spec = ModelSpec {
            encoder: enc,
            decoder: dec,
            dim,
            de_gamma: 0.5,
            num_entities: 8,
            num_relations: 3,
            num_steps: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = ParameterStore::random(spec, seed, &mut rng).unwrap();
        st.mark_known(&KnownSet::from_ids(8, 0..8), &KnownSet::from_ids(3, 0..3), TimeStep(4));
        st
    }

    fn negs(object: &[u32], subject: &[u32]) -> NegativeSampleSet {
        NegativeSampleSet {
            object: object.iter().map(|&e| EntityId(e)).collect(),
            subject: subject.iter().map(|&e| EntityId(e)).collect(),
        }
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(10.0) - 10.000045398899218).abs() < 1e-12);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn uniform_scores_give_log_k_plus_one() {
        let s = [0.7; 6];
        assert!((log_sum_exp(&s) - s[0] - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ce_matches_scalar_recomputation() {
        let st = store(Encoder::De, Decoder::ComplEx, 4, 3);
        let f = Quadruple::new(1, 2, 3, 2);
        let n = negs(&[0, 4, 5, 6, 7], &[0, 2, 4, 5, 6]);
        let got = softmax_ce(&st, &f, &n, 1.0, None);
        let mut want = 0.0;
        let pos = st.score(EntityId(1), RelationId(2), EntityId(3), TimeStep(2));
        let z_o: f64 = pos.exp() + n.object.iter().map(|&o| st.score(EntityId(1), RelationId(2), o, TimeStep(2)).exp()).sum::<f64>();
        want -= (pos.exp() / z_o).ln();
        let z_s: f64 = pos.exp() + n.subject.iter().map(|&s| st.score(s, RelationId(2), EntityId(3), TimeStep(2)).exp()).sum::<f64>();
        want -= (pos.exp() / z_s).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn empty_negative_side_contributes_nothing() {
        let st = store(Encoder::Hyte, Decoder::TransE, 4, 0);
        assert_eq!(softmax_ce(&st, &Quadruple::new(0, 0, 1, 1), &negs(&[], &[]), 1.0, None), 0.0);
    }

    #[test]
    fn distill_zero_when_unchanged_and_positive_otherwise() {
        let st = store(Encoder::De, Decoder::ComplEx, 4, 1);
        let facts = [Quadruple::new(0, 1, 2, 1), Quadruple::new(3, 0, 4, 3)];
        let n = [negs(&[5, 6], &[7]), negs(&[1, 2, 5], &[0])];
        let cache = DistillationCache::build(&st, &facts, &n).unwrap();
        for form in [DistillForm::Full, DistillForm::Scalar] {
            for i in 0..2 {
                let l = distill_kl(cache.get(i).unwrap(), &st, &facts[i], &n[i], form, 1.0, None).unwrap();
                assert!(l.abs() < 1e-14);
            }
        }
        let other = store(Encoder::De, Decoder::ComplEx, 4, 2);
        let l = distill_kl(cache.get(0).unwrap(), &other, &facts[0], &n[0], DistillForm::Full, 1.0, None).unwrap();
        assert!(l > 0.0);
        let bad = negs(&[5], &[7]);
        assert!(distill_kl(cache.get(0).unwrap(), &other, &facts[0], &bad, DistillForm::Full, 1.0, None).is_err());
        assert!(distill_kl(cache.get(0).unwrap(), &other, &facts[1], &n[1], DistillForm::Full, 1.0, None).is_err());
    }

    #[test]
    fn scalar_form_plugin_value() {
        let (p, q) = (0.8f64, 0.4f64);
        assert!((p * (p / q).ln() - 0.5545177444479562).abs() < 1e-15);
    }

    #[test]
    fn temporal_reg_counts_known_rows_only() {
        let prev = store(Encoder::Hyte, Decoder::TransE, 4, 5);
        let mut cur = prev.clone();
        assert_eq!(temporal_reg(&cur, &prev, 1.0, None).unwrap(), 0.0);
        cur.row_mut(RowId::new(ParamKind::Entity, 2))[1] += 0.3;
        cur.row_mut(RowId::new(ParamKind::Entity, 2))[3] -= 0.4;
        assert!((temporal_reg(&cur, &prev, 1.0, None).unwrap() - 0.25).abs() < 1e-12);

        let spec = prev.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fresh = ParameterStore::random(spec, 0, &mut rng).unwrap();
        fresh.mark_known(&KnownSet::from_ids(8, [1]), &KnownSet::empty(3), TimeStep(0));
        let mut moved = fresh.clone();
        moved.row_mut(RowId::new(ParamKind::Entity, 5))[0] += 1.0;
        assert_eq!(temporal_reg(&moved, &fresh, 1.0, None).unwrap(), 0.0);
    }

    fn fd_check(loss: impl Fn(&ParameterStore) -> f64, analytic: &SparseGrad, st: &ParameterStore) {
        let h = 1e-6;
        for (id, g) in analytic.iter() {
            for n in 0..g.len() {
                let mut plus = st.clone();
                plus.row_mut(*id)[n] += h;
                let mut minus = st.clone();
                minus.row_mut(*id)[n] -= h;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((num - g[n]).abs() <= 1e-5 * num.abs().max(g[n].abs()).max(1e-2), "{id:?}[{n}]: {num} vs {}", g[n]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (enc, dec) in [(Encoder::De, Decoder::ComplEx), (Encoder::Hyte, Decoder::TransE)] {
            let st = store(enc, dec, 4, 7);
            let prev = store(enc, dec, 4, 8);
            let f = Quadruple::new(1, 0, 2, 3);
            let n = negs(&[0, 3, 5], &[4, 6]);
            let cache = DistillationCache::build(&prev, &[f], std::slice::from_ref(&n)).unwrap();

            let mut g = SparseGrad::new();
            softmax_ce(&st, &f, &n, 1.0, Some(&mut g));
            fd_check(|s| softmax_ce(s, &f, &n, 1.0, None), &g, &st);

            for form in [DistillForm::Full, DistillForm::Scalar] {
                let mut g = SparseGrad::new();
                distill_kl(cache.get(0).unwrap(), &st, &f, &n, form, 1.0, Some(&mut g)).unwrap();
                fd_check(|s| distill_kl(cache.get(0).unwrap(), s, &f, &n, form, 1.0, None).unwrap(), &g, &st);
            }

            let mut g = SparseGrad::new();
            deleted_bce(&st, &f, Some(TimeStep(1)), 1.0, Some(&mut g));
            fd_check(|s| deleted_bce(s, &f, Some(TimeStep(1)), 1.0, None), &g, &st);

            let mut moved = prev.clone();
            for kind in ParamKind::ALL {
                for x in moved.matrix_mut(kind).as_mut_slice() {
                    *x += rng.gen_range(-0.1..0.1);
                }
            }
            let mut g = SparseGrad::new();
            temporal_reg(&moved, &prev, 1.0, Some(&mut g)).unwrap();
            fd_check(|s| temporal_reg(s, &prev, 1.0, None).unwrap(), &g, &moved);
        }
    }

    #[test]
    fn bundle_total_is_linear() {
        let b = LossBundle {
            ce: 1.0,
            del: 2.0,
            rce: 3.0,
            rkd: 4.0,
            tr: 5.0,
        };
        assert_eq!(b.total(&Alphas::default()), 15.0);
        assert_eq!(b.total(&Alphas::uniform(0.0)), 0.0);
        let mut a = Alphas::default();
        a.alpha2 = 2.0;
        assert_eq!(b.total(&a) - b.total(&Alphas::default()), b.del);
    }

    #[test]
    fn ce_shift_invariant() {
        let s = [0.3, -1.2, 2.0, 0.1];
        let shifted: Vec<f64> = s.iter().map(|x| x + 17.5).collect();
        assert!(((log_sum_exp(&s) - s[0]) - (log_sum_exp(&shifted) - shifted[0])).abs() < 1e-12);
    }
}
