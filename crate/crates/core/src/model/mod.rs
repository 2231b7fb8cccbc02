//! Embedding parameters, time-aware encoders, decoders and their analytic
//! gradients.

mod checkpoint;
mod decoder;
mod grad;
mod optim;
mod store;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use decoder::Decoder;
pub use grad::{ParamKind, RowId, SparseGrad};
pub use optim::{Optimizer, OptimizerKind};
pub use store::{Encoder, Matrix, ModelSpec, ParameterStore};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Direction, EntityId, KnownSet, RelationId, TimeStep};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(encoder: Encoder, decoder: Decoder, dim: usize) -> ModelSpec {
        ModelSpec {
            encoder,
            decoder,
            dim,
            de_gamma: 0.5,
            num_entities: 10,
            num_relations: 3,
            num_steps: 5,
        }
    }

    fn store(encoder: Encoder, decoder: Decoder, dim: usize, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParameterStore::random(spec(encoder, decoder, dim), seed, &mut rng).unwrap()
    }

    #[test]
    fn de_with_zero_gamma_is_static() {
        let mut sp = spec(Encoder::De, Decoder::ComplEx, 8);
        sp.de_gamma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = ParameterStore::random(sp, 1, &mut rng).unwrap();
        for t in 1..=5 {
            assert_eq!(st.encode_entity(EntityId(3), TimeStep(t)), st.entity.row(3));
        }
        let a = st.score(EntityId(1), RelationId(2), EntityId(4), TimeStep(1));
        let b = st.score(EntityId(1), RelationId(2), EntityId(4), TimeStep(5));
        assert_eq!(a, b);
    }

    #[test]
    fn de_constant_phase_passes_embedding_through() {
        let mut st = store(Encoder::De, Decoder::ComplEx, 8, 2);
        let k = st.spec().temporal_dim();
        assert_eq!(k, 4);
        st.freq.row_mut(0).iter_mut().for_each(|x| *x = 0.0);
        st.phase.row_mut(0).iter_mut().for_each(|x| *x = std::f64::consts::FRAC_PI_2);
        for t in [1, 3, 5] {
            let z = st.encode_entity(EntityId(0), TimeStep(t));
            for (a, b) in z.iter().zip(st.entity.row(0)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hyte_orthogonal_embedding_unchanged() {
        let mut st = store(Encoder::Hyte, Decoder::TransE, 4, 3);
        st.hyperplane.row_mut(1).copy_from_slice(&[0.0, 0.0, 1.0, 0.0]);
        st.entity.row_mut(2).copy_from_slice(&[0.4, -0.2, 0.0, 0.9]);
        assert_eq!(st.encode_entity(EntityId(2), TimeStep(2)), vec![0.4, -0.2, 0.0, 0.9]);
    }

    /// Independent scalar reference: recomputes every encoder and decoder from
    /// the raw matrices with no shared helpers.
    fn oracle_score(st: &ParameterStore, s: usize, r: usize, o: usize, t: u32) -> f64 {
        let sp = st.spec();
        let d = sp.dim;
        let enc = |i: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..d).map(|n| st.entity.row(i)[n]).collect();
            match sp.encoder {
                Encoder::De => {
                    let k = st.freq.cols();
                    for n in 0..k {
                        v[n] = st.entity.row(i)[n] * f64::sin(st.freq.row(i)[n] * t as f64 + st.phase.row(i)[n]);
                    }
                }
                Encoder::Hyte => {
                    let h = st.hyperplane.row(t as usize - 1);
                    let mut dot = 0.0;
                    for n in 0..d {
                        dot += h[n] * v[n];
                    }
                    for n in 0..d {
                        v[n] -= dot * h[n];
                    }
                }
            }
            v
        };
        let mut rel: Vec<f64> = st.relation.row(r).to_vec();
        if sp.encoder == Encoder::Hyte {
            let h = st.hyperplane.row(t as usize - 1);
            let dot: f64 = (0..d).map(|n| h[n] * rel[n]).sum();
            for n in 0..d {
                rel[n] -= dot * h[n];
            }
        }
        let (a, c) = (enc(s), enc(o));
        match sp.decoder {
            Decoder::TransE => -(0..d).map(|n| (a[n] + rel[n] - c[n]).abs()).sum::<f64>(),
            Decoder::DistMult => (0..d).map(|n| a[n] * rel[n] * c[n]).sum(),
            Decoder::ComplEx => {
                let h = d / 2;
                let mut acc = 0.0;
                for n in 0..h {
                    let s_c = (a[n], a[h + n]);
                    let r_c = (rel[n], rel[h + n]);
                    let o_conj = (c[n], -c[h + n]);
                    let sr = (s_c.0 * r_c.0 - s_c.1 * r_c.1, s_c.0 * r_c.1 + s_c.1 * r_c.0);
                    acc += sr.0 * o_conj.0 - sr.1 * o_conj.1;
                }
                acc
            }
        }
    }

    #[test]
    fn score_matches_scalar_oracle() {
        for (enc, dec) in [
            (Encoder::De, Decoder::ComplEx),
            (Encoder::Hyte, Decoder::TransE),
            (Encoder::De, Decoder::DistMult),
            (Encoder::Hyte, Decoder::ComplEx),
        ] {
            for seed in 0..10 {
                let st = store(enc, dec, 8, seed);
                for (s, r, o, t) in [(0, 0, 1, 1), (3, 2, 9, 5), (7, 1, 7, 2)] {
                    let got = st.score(EntityId(s as u32), RelationId(r as u32), EntityId(o as u32), TimeStep(t));
                    let want = oracle_score(&st, s, r, o, t);
                    assert!((got - want).abs() < 1e-12, "{enc:?}/{dec:?}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn batch_scores_match_loop_and_permute() {
        let st = store(Encoder::De, Decoder::ComplEx, 8, 5);
        let cands: Vec<EntityId> = (0..10).map(EntityId).collect();
        let t = TimeStep(3);
        let obj = st.score_candidates(EntityId(2), RelationId(1), t, &cands, Direction::Object);
        let subj = st.score_candidates(EntityId(2), RelationId(1), t, &cands, Direction::Subject);
        for (j, &c) in cands.iter().enumerate() {
            assert_eq!(obj[j], st.score(EntityId(2), RelationId(1), c, t));
            assert_eq!(subj[j], st.score(c, RelationId(1), EntityId(2), t));
        }
        let single = st.score_candidates(EntityId(2), RelationId(1), t, &[EntityId(6)], Direction::Object);
        assert_eq!(single[0], st.score(EntityId(2), RelationId(1), EntityId(6), t));
        let perm: Vec<EntityId> = cands.iter().rev().copied().collect();
        let permuted = st.score_candidates(EntityId(2), RelationId(1), t, &perm, Direction::Object);
        let mut rev = obj.clone();
        rev.reverse();
        assert_eq!(permuted, rev);
    }

    #[test]
    fn init_step_copies_known_and_bounds_new_rows() {
        for (dim, bound) in [(128usize, (12.0f64 / 128.0).sqrt()), (12, 1.0)] {
            let sp = ModelSpec {
                dim,
                ..spec(Encoder::De, Decoder::ComplEx, dim)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut prev = ParameterStore::random(sp, 0, &mut rng).unwrap();
            prev.mark_known(&KnownSet::from_ids(10, [0, 1, 2]), &KnownSet::from_ids(3, [0]), TimeStep(1));
            let ents = KnownSet::from_ids(10, [0, 1, 2, 5]);
            let rels = KnownSet::from_ids(3, [0, 1]);
            let next = prev.init_step(&ents, &rels, TimeStep(2), &mut rng);
            for e in [0, 1, 2] {
                assert_eq!(next.entity.row(e), prev.entity.row(e));
                assert_eq!(next.freq.row(e), prev.freq.row(e));
            }
            assert_ne!(next.entity.row(5), prev.entity.row(5));
            assert!(next.entity.row(5).iter().all(|x| x.abs() <= bound));
            assert!(next.freq.row(5).iter().all(|x| x.abs() <= bound));
            assert!(next.is_known(RowId::new(ParamKind::Entity, 5)));
            assert!(next.is_known(RowId::new(ParamKind::Relation, 1)));
            assert!(!next.is_known(RowId::new(ParamKind::Entity, 6)));
        }
        assert_eq!(spec(Encoder::De, Decoder::ComplEx, 12).init_bound(), 1.0);
    }

    #[test]
    fn init_step_without_new_rows_is_identity() {
        let mut prev = store(Encoder::Hyte, Decoder::TransE, 4, 9);
        let ents = KnownSet::from_ids(10, 0..10);
        let rels = KnownSet::from_ids(3, 0..3);
        prev.mark_known(&ents, &rels, TimeStep(5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(prev.init_step(&ents, &rels, TimeStep(5), &mut rng), prev);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        for (enc, dec) in [(Encoder::De, Decoder::ComplEx), (Encoder::Hyte, Decoder::TransE)] {
            let mut st = store(enc, dec, 6, 4);
            st.mark_known(&KnownSet::from_ids(10, [1, 3, 9]), &KnownSet::from_ids(3, [2]), TimeStep(2));
            let mut buf = Vec::new();
            write_checkpoint(&st, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(back, st);
            buf[4] = 2;
            assert!(matches!(read_checkpoint(buf.as_slice()), Err(crate::Error::Version { .. })));
        }
    }

    #[test]
    fn hyperplanes_stay_unit_after_updates() {
        let mut st = store(Encoder::Hyte, Decoder::TransE, 4, 6);
        let mut opt = Optimizer::sgd(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..20 {
            let mut g = SparseGrad::new();
            let t = TimeStep(1 + step % 5);
            let cands: Vec<EntityId> = (0..10).map(EntityId).collect();
            let coefs: Vec<f64> = (0..10).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            st.accumulate_candidates_grad(EntityId(0), RelationId(1), t, &cands, Direction::Object, &coefs, &mut g);
            opt.step(&mut st, &g).unwrap();
            for i in 0..5 {
                let n: f64 = st.hyperplane.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn complex_rejects_odd_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ParameterStore::random(spec(Encoder::De, Decoder::ComplEx, 5), 0, &mut rng).is_err());
    }

    #[test]
    fn non_finite_update_rejected() {
        let mut st = store(Encoder::De, Decoder::ComplEx, 4, 0);
        let mut g = SparseGrad::new();
        g.row_mut(RowId::new(ParamKind::Entity, 0), 4)[1] = f64::INFINITY;
        assert!(Optimizer::sgd(0.1).step(&mut st, &g).is_err());
    }
}
