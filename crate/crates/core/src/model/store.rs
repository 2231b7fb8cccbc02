use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decoder::Decoder;
use super::grad::{ParamKind, RowId, SparseGrad};
use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, KnownSet, RelationId, TimeStep};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Time-aware entity encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    /// Diachronic: the first ⌈γ·d⌉ lanes are `z·sin(w·t + b)`.
    De,
    /// Hyperplane projection `z − (h_t·z) h_t` with a unit normal per step.
    Hyte,
}

impl Encoder {
    pub fn tag(self) -> u8 {
        match self {
            Encoder::De => 0,
            Encoder::Hyte => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Encoder::De),
            1 => Some(Encoder::Hyte),
            _ => None,
        }
    }

    /// Decoder each encoder is paired with unless configured otherwise.
    pub fn default_decoder(self) -> Decoder {
        match self {
            Encoder::De => Decoder::ComplEx,
            Encoder::Hyte => Decoder::TransE,
        }
    }
}

/// Shape and architecture of a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub dim: usize,
    /// Fraction of DE lanes that are time-modulated.
    pub de_gamma: f64,
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_steps: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.de_gamma) {
            return Err(Error::Config("de_gamma must lie in [0, 1]".into()));
        }
        if self.decoder == Decoder::ComplEx && self.dim % 2 != 0 {
            return Err(Error::Config("ComplEx needs an even embedding dimension".into()));
        }
        Ok(())
    }

    /// Width of the DE frequency/phase rows (0 for HyTE).
    pub fn temporal_dim(&self) -> usize {
        match self.encoder {
            Encoder::De => ((self.de_gamma * self.dim as f64).ceil() as usize).min(self.dim),
            Encoder::Hyte => 0,
        }
    }

    pub fn init_bound(&self) -> f64 {
        (12.0 / self.dim as f64).sqrt()
    }
}

/// All trainable parameters `θ^t` plus the rows known as of the last trained step.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    spec: ModelSpec,
    pub(crate) entity: Matrix,
    pub(crate) relation: Matrix,
    pub(crate) freq: Matrix,
    pub(crate) phase: Matrix,
    pub(crate) hyperplane: Matrix,
    pub(crate) known_entities: Vec<bool>,
    pub(crate) known_relations: Vec<bool>,
    pub(crate) known_steps: Vec<bool>,
    pub seed: u64,
}

fn fill_uniform<R: Rng>(row: &mut [f64], bound: f64, rng: &mut R) {
    for x in row {
        *x = rng.gen_range(-bound..bound);
    }
}

fn normalize(row: &mut [f64]) {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        row.iter_mut().for_each(|x| *x /= n);
    } else if let Some(first) = row.first_mut() {
        *first = 1.0;
    }
}

impl ParameterStore {
    /// Every row drawn from `uniform(±√(12/d))`; hyperplanes normalised.
    /// Nothing is marked known.
    pub fn random<R: Rng>(spec: ModelSpec, seed: u64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let dt = spec.temporal_dim();
        let n_planes = match spec.encoder {
            Encoder::Hyte => spec.num_steps,
            Encoder::De => 0,
        };
        let mut store = Self {
            spec,
            entity: Matrix::zeros(spec.num_entities, d),
            relation: Matrix::zeros(spec.num_relations, d),
            freq: Matrix::zeros(spec.num_entities, dt),
            phase: Matrix::zeros(spec.num_entities, dt),
            hyperplane: Matrix::zeros(n_planes, d),
            known_entities: vec![false; spec.num_entities],
            known_relations: vec![false; spec.num_relations],
            known_steps: vec![false; spec.num_steps],
            seed,
        };
        let b = spec.init_bound();
        for kind in ParamKind::ALL {
            let m = store.matrix_mut(kind);
            fill_uniform(m.as_mut_slice(), b, rng);
        }
        for i in 0..n_planes {
            normalize(store.hyperplane.row_mut(i));
        }
        Ok(store)
    }

    pub(crate) fn from_parts(spec: ModelSpec, mats: [Matrix; 5], known: [Vec<bool>; 3], seed: u64) -> Result<Self> {
        let [entity, relation, freq, phase, hyperplane] = mats;
        let [known_entities, known_relations, known_steps] = known;
        let s = Self {
            spec,
            entity,
            relation,
            freq,
            phase,
            hyperplane,
            known_entities,
            known_relations,
            known_steps,
            seed,
        };
        s.check_shapes()?;
        Ok(s)
    }

    fn check_shapes(&self) -> Result<()> {
        let sp = &self.spec;
        let n_planes = if sp.encoder == Encoder::Hyte { sp.num_steps } else { 0 };
        let expect = [
            (ParamKind::Entity, sp.num_entities, sp.dim),
            (ParamKind::Relation, sp.num_relations, sp.dim),
            (ParamKind::Freq, sp.num_entities, sp.temporal_dim()),
            (ParamKind::Phase, sp.num_entities, sp.temporal_dim()),
            (ParamKind::Hyperplane, n_planes, sp.dim),
        ];
        for (kind, r, c) in expect {
            let m = self.matrix(kind);
            if m.rows() != r || m.cols() != c {
                return Err(Error::DimMismatch(format!(
                    "{kind:?} is {}×{}, expected {r}×{c}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.known_entities.len() != sp.num_entities
            || self.known_relations.len() != sp.num_relations
            || self.known_steps.len() != sp.num_steps
        {
            return Err(Error::DimMismatch("known-row bitmaps".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn matrix(&self, kind: ParamKind) -> &Matrix {
        match kind {
            ParamKind::Entity => &self.entity,
            ParamKind::Relation => &self.relation,
            ParamKind::Freq => &self.freq,
            ParamKind::Phase => &self.phase,
            ParamKind::Hyperplane => &self.hyperplane,
        }
    }

    pub fn matrix_mut(&mut self, kind: ParamKind) -> &mut Matrix {
        match kind {
            ParamKind::Entity => &mut self.entity,
            ParamKind::Relation => &mut self.relation,
            ParamKind::Freq => &mut self.freq,
            ParamKind::Phase => &mut self.phase,
            ParamKind::Hyperplane => &mut self.hyperplane,
        }
    }

    pub fn row(&self, id: RowId) -> &[f64] {
        self.matrix(id.kind).row(id.row as usize)
    }

    pub fn row_mut(&mut self, id: RowId) -> &mut [f64] {
        self.matrix_mut(id.kind).row_mut(id.row as usize)
    }

    /// Whether a row is covered by the known-row bookkeeping of this store.
    pub fn is_known(&self, id: RowId) -> bool {
        let i = id.row as usize;
        match id.kind {
            ParamKind::Entity | ParamKind::Freq | ParamKind::Phase => self.known_entities[i],
            ParamKind::Relation => self.known_relations[i],
            ParamKind::Hyperplane => self.known_steps[i],
        }
    }

    pub fn known_entity_mask(&self) -> &[bool] {
        &self.known_entities
    }

    pub fn known_relation_mask(&self) -> &[bool] {
        &self.known_relations
    }

    pub fn known_step_mask(&self) -> &[bool] {
        &self.known_steps
    }

    /// Marks rows known without touching their values.
    pub fn mark_known(&mut self, entities: &KnownSet, relations: &KnownSet, through_step: TimeStep) {
        for &e in entities.ids() {
            self.known_entities[e as usize] = true;
        }
        for &r in relations.ids() {
            self.known_relations[r as usize] = true;
        }
        for t in 0..(through_step.idx()).min(self.known_steps.len()) {
            self.known_steps[t] = true;
        }
    }

    /// `θ^t` from `θ^{t−1}`: rows known at `t−1` are copied verbatim, rows that
    /// become known at `t` are drawn from `uniform(±√(12/d))`.
    pub fn init_step<R: Rng>(
        &self,
        entities_now: &KnownSet,
        relations_now: &KnownSet,
        t: TimeStep,
        rng: &mut R,
    ) -> Self {
        let mut next = self.clone();
        let b = self.spec.init_bound();
        for &e in entities_now.ids() {
            let e = e as usize;
            if !self.known_entities[e] {
                fill_uniform(next.entity.row_mut(e), b, rng);
                if next.freq.cols() > 0 {
                    fill_uniform(next.freq.row_mut(e), b, rng);
                    fill_uniform(next.phase.row_mut(e), b, rng);
                }
                next.known_entities[e] = true;
            }
        }
        for &r in relations_now.ids() {
            let r = r as usize;
            if !self.known_relations[r] {
                fill_uniform(next.relation.row_mut(r), b, rng);
                next.known_relations[r] = true;
            }
        }
        for step in 0..t.idx().min(self.known_steps.len()) {
            if !self.known_steps[step] {
                if self.spec.encoder == Encoder::Hyte {
                    let row = next.hyperplane.row_mut(step);
                    fill_uniform(row, b, rng);
                    normalize(row);
                }
                next.known_steps[step] = true;
            }
        }
        next
    }

    pub fn renormalize_hyperplane(&mut self, step_row: usize) {
        normalize(self.hyperplane.row_mut(step_row));
    }

    pub fn check_finite(&self) -> Result<()> {
        for kind in ParamKind::ALL {
            if self.matrix(kind).as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{kind:?} parameters")));
            }
        }
        Ok(())
    }

    fn plane(&self, t: TimeStep) -> &[f64] {
        self.hyperplane.row(t.idx() - 1)
    }

    /// `z_i^t` written into `out`.
    pub fn encode_entity_into(&self, i: EntityId, t: TimeStep, out: &mut [f64]) {
        let z = self.entity.row(i.idx());
        out.copy_from_slice(z);
        match self.spec.encoder {
            Encoder::De => {
                let w = self.freq.row(i.idx());
                let b = self.phase.row(i.idx());
                let tf = t.0 as f64;
                for n in 0..w.len() {
                    out[n] = z[n] * (w[n] * tf + b[n]).sin();
                }
            }
            Encoder::Hyte => project(self.plane(t), out),
        }
    }

    pub fn encode_entity(&self, i: EntityId, t: TimeStep) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.dim];
        self.encode_entity_into(i, t, &mut out);
        out
    }

    /// Relations are static under DE and projected under HyTE.
    pub fn encode_relation_into(&self, r: RelationId, t: TimeStep, out: &mut [f64]) {
        out.copy_from_slice(self.relation.row(r.idx()));
        if self.spec.encoder == Encoder::Hyte {
            project(self.plane(t), out);
        }
    }

    pub fn encode_relation(&self, r: RelationId, t: TimeStep) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.dim];
        self.encode_relation_into(r, t, &mut out);
        out
    }

    /// `φ(s, r, o, t)`.
    pub fn score(&self, s: EntityId, r: RelationId, o: EntityId, t: TimeStep) -> f64 {
        let zs = self.encode_entity(s, t);
        let zr = self.encode_relation(r, t);
        let zo = self.encode_entity(o, t);
        self.spec.decoder.score(&zs, &zr, &zo)
    }

    /// Scores `(anchor, r, c, t)` (object queries) or `(c, r, anchor, t)`
    /// (subject queries) for every candidate `c`.
    pub fn score_candidates(
        &self,
        anchor: EntityId,
        r: RelationId,
        t: TimeStep,
        candidates: &[EntityId],
        direction: Direction,
    ) -> Vec<f64> {
        let d = self.spec.dim;
        let za = self.encode_entity(anchor, t);
        let zr = self.encode_relation(r, t);
        let mut zc = vec![0.0; d];
        candidates
            .iter()
            .map(|&c| {
                self.encode_entity_into(c, t, &mut zc);
                match direction {
                    Direction::Object => self.spec.decoder.score(&za, &zr, &zc),
                    Direction::Subject => self.spec.decoder.score(&zc, &zr, &za),
                }
            })
            .collect()
    }

    /// Adds `Σ_j coefs[j] · ∂φ(query with candidate j)/∂θ` into `grads`.
    pub fn accumulate_candidates_grad(
        &self,
        anchor: EntityId,
        r: RelationId,
        t: TimeStep,
        candidates: &[EntityId],
        direction: Direction,
        coefs: &[f64],
        grads: &mut SparseGrad,
    ) {
        debug_assert_eq!(candidates.len(), coefs.len());
        let d = self.spec.dim;
        let dec = self.spec.decoder;
        let za = self.encode_entity(anchor, t);
        let zr = self.encode_relation(r, t);
        let mut ga = vec![0.0; d];
        let mut gr = vec![0.0; d];
        let mut zc = vec![0.0; d];
        let mut gc = vec![0.0; d];
        for (&c, &coef) in candidates.iter().zip(coefs) {
            if coef == 0.0 {
                continue;
            }
            self.encode_entity_into(c, t, &mut zc);
            gc.iter_mut().for_each(|x| *x = 0.0);
            match direction {
                Direction::Object => dec.accumulate_grad(&za, &zr, &zc, coef, &mut ga, &mut gr, &mut gc),
                Direction::Subject => dec.accumulate_grad(&zc, &zr, &za, coef, &mut gc, &mut gr, &mut ga),
            }
            self.backprop_entity(c, t, &gc, grads);
        }
        self.backprop_entity(anchor, t, &ga, grads);
        self.backprop_relation(r, t, &gr, grads);
    }

    /// Adds `coef · ∂φ(s, r, o, t)/∂θ` into `grads`.
    pub fn accumulate_score_grad(
        &self,
        s: EntityId,
        r: RelationId,
        o: EntityId,
        t: TimeStep,
        coef: f64,
        grads: &mut SparseGrad,
    ) {
        self.accumulate_candidates_grad(s, r, t, &[o], Direction::Object, &[coef], grads);
    }

    /// Chain rule from `∂L/∂z_i^t` (`upstream`) to the rows of entity `i`.
    pub fn backprop_entity(&self, i: EntityId, t: TimeStep, upstream: &[f64], grads: &mut SparseGrad) {
        let d = self.spec.dim;
        let z = self.entity.row(i.idx());
        match self.spec.encoder {
            Encoder::De => {
                let w = self.freq.row(i.idx());
                let b = self.phase.row(i.idx());
                let k = w.len();
                let tf = t.0 as f64;
                {
                    let ge = grads.row_mut(RowId::new(ParamKind::Entity, i.idx()), d);
                    for n in 0..d {
                        ge[n] += if n < k { upstream[n] * (w[n] * tf + b[n]).sin() } else { upstream[n] };
                    }
                }
                if k > 0 {
                    let mut dz_cos = vec![0.0; k];
                    for n in 0..k {
                        dz_cos[n] = upstream[n] * z[n] * (w[n] * tf + b[n]).cos();
                    }
                    let gw = grads.row_mut(RowId::new(ParamKind::Freq, i.idx()), k);
                    for n in 0..k {
                        gw[n] += dz_cos[n] * tf;
                    }
                    let gb = grads.row_mut(RowId::new(ParamKind::Phase, i.idx()), k);
                    for n in 0..k {
                        gb[n] += dz_cos[n];
                    }
                }
            }
            Encoder::Hyte => {
                let id = RowId::new(ParamKind::Entity, i.idx());
                self.backprop_projection(id, z, t, upstream, grads);
            }
        }
    }

    pub fn backprop_relation(&self, r: RelationId, t: TimeStep, upstream: &[f64], grads: &mut SparseGrad) {
        let d = self.spec.dim;
        let id = RowId::new(ParamKind::Relation, r.idx());
        match self.spec.encoder {
            Encoder::De => {
                let g = grads.row_mut(id, d);
                for n in 0..d {
                    g[n] += upstream[n];
                }
            }
            Encoder::Hyte => {
                let z = self.relation.row(r.idx());
                self.backprop_projection(id, z, t, upstream, grads);
            }
        }
    }

    /// For `p = z − (h·z) h`: `∂L/∂z = g − (h·g) h`, `∂L/∂h = −(h·g) z − (h·z) g`.
    fn backprop_projection(&self, id: RowId, z: &[f64], t: TimeStep, g: &[f64], grads: &mut SparseGrad) {
        let d = self.spec.dim;
        let h = self.plane(t);
        let hg: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
        let hz: f64 = h.iter().zip(z).map(|(a, b)| a * b).sum();
        {
            let gz = grads.row_mut(id, d);
            for n in 0..d {
                gz[n] += g[n] - hg * h[n];
            }
        }
        let gh = grads.row_mut(RowId::new(ParamKind::Hyperplane, t.idx() - 1), d);
        for n in 0..d {
            gh[n] += -hg * z[n] - hz * g[n];
        }
    }
}

fn project(h: &[f64], v: &mut [f64]) {
    let hv: f64 = h.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    for (x, hn) in v.iter_mut().zip(h) {
        *x -= hv * hn;
    }
}
