//! Seeded generator of small temporal KGs with persistent facts.
//!
//! Entities fall into `n_clusters` groups (`id % n_clusters`). A fact
//! `(s, r, o)` always links the cluster of `s` to cluster
//! `(cluster(s) + r + 1) % n_clusters`, which gives embedding models
//! something learnable. Facts live for a geometric number of steps
//! (per-step death probability `death_rate`), and `birth_rate × initial_facts`
//! new facts are born every step after the first. Only the first
//! `active(t)` entity ids can take part in new facts, and `active` grows
//! linearly from `initial_active_fraction` of the vocabulary to all of it, so
//! entities keep appearing over time.
//!
//! With `succession_rate > 0`, a dying fact `(s, r, o)` is replaced with that
//! probability by `(s, r, o′)`, `o′` another member of the same target
//! cluster: the answer to `(s, r, ?)` changes hands.
//!
//! Splits are assigned per fact at birth, so a fact keeps its split for its
//! whole lifetime.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Snapshot, SnapshotSequence, Split, TimeStep, Triple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub steps: usize,
    pub initial_facts: usize,
    pub birth_rate: f64,
    pub death_rate: f64,
    pub succession_rate: f64,
    pub n_clusters: usize,
    pub initial_active_fraction: f64,
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 6,
            steps: 20,
            initial_facts: 400,
            birth_rate: 0.1,
            death_rate: 0.1,
            succession_rate: 0.0,
            n_clusters: 20,
            initial_active_fraction: 0.6,
            split_ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.n_entities == 0 || self.n_relations == 0 {
            return bad("entity and relation counts must be positive");
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_entities {
            return bad("n_clusters must lie in 1..=n_entities");
        }
        if !(0.0..=1.0).contains(&self.death_rate)
            || !(0.0..=1.0).contains(&self.succession_rate)
            || self.birth_rate < 0.0
        {
            return bad("rates out of range");
        }
        if !(0.0..=1.0).contains(&self.initial_active_fraction) {
            return bad("initial_active_fraction must lie in [0, 1]");
        }
        if self.split_ratios.iter().any(|r| *r < 0.0) || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split ratios must be non-negative and sum to 1");
        }
        Ok(())
    }

    /// Number of entity ids eligible for new facts at step `t`.
    pub fn active_entities(&self, t: usize) -> usize {
        let progress = if self.steps > 1 {
            (t - 1) as f64 / (self.steps - 1) as f64
        } else {
            1.0
        };
        let frac = self.initial_active_fraction + (1.0 - self.initial_active_fraction) * progress;
        ((self.n_entities as f64 * frac).ceil() as usize).clamp(self.n_clusters, self.n_entities)
    }

    pub fn births_per_step(&self) -> usize {
        (self.birth_rate * self.initial_facts as f64).round() as usize
    }
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn draw_triple(&mut self, active: usize) -> Triple {
        let k = self.cfg.n_clusters;
        let s = self.rng.gen_range(0..active);
        let r = self.rng.gen_range(0..self.cfg.n_relations);
        let target = (s % k + r + 1) % k;
        let members = (active - target).div_ceil(k);
        let o = target + k * self.rng.gen_range(0..members);
        Triple::new(s as u32, r as u32, o as u32)
    }

    fn draw_split(&mut self) -> Split {
        let u: f64 = self.rng.gen();
        let [p_train, p_valid, _] = self.cfg.split_ratios;
        if u < p_train {
            Split::Train
        } else if u < p_train + p_valid {
            Split::Valid
        } else {
            Split::Test
        }
    }

    /// Another object for `(s, r, ·)` in the target cluster of `old`, not
    /// currently alive. Gives up after a few attempts.
    fn successor(&mut self, old: &Triple, present: &HashSet<Triple>, active: usize) -> Option<Triple> {
        let k = self.cfg.n_clusters;
        let target = old.o.0 as usize % k;
        if target >= active {
            return None;
        }
        let members = (active - target).div_ceil(k);
        for _ in 0..8 {
            let o = target + k * self.rng.gen_range(0..members);
            let tr = Triple::new(old.s.0, old.r.0, o as u32);
            if o as u32 != old.o.0 && !present.contains(&tr) {
                return Some(tr);
            }
        }
        None
    }

    /// Adds up to `n` new distinct facts not currently alive.
    fn births(&mut self, alive: &mut Vec<(Triple, Split)>, present: &mut HashSet<Triple>, n: usize, active: usize) {
        let mut born = 0;
        let mut attempts = 0;
        while born < n && attempts < 100 * n.max(1) {
            attempts += 1;
            let tr = self.draw_triple(active);
            if present.insert(tr) {
                let split = self.draw_split();
                alive.push((tr, split));
                born += 1;
            }
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SnapshotSequence> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut alive: Vec<(Triple, Split)> = Vec::new();
    let mut present: HashSet<Triple> = HashSet::new();
    let mut snapshots = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let active = cfg.active_entities(t);
        if t == 1 {
            g.births(&mut alive, &mut present, cfg.initial_facts, active);
        } else {
            let mut survivors = Vec::with_capacity(alive.len());
            let mut dead = Vec::new();
            for (tr, split) in alive.drain(..) {
                let u: f64 = g.rng.gen();
                if u < cfg.death_rate {
                    present.remove(&tr);
                    dead.push(tr);
                } else {
                    survivors.push((tr, split));
                }
            }
            alive = survivors;
            if cfg.succession_rate > 0.0 {
                for tr in dead {
                    if g.rng.gen::<f64>() < cfg.succession_rate {
                        if let Some(next) = g.successor(&tr, &present, active) {
                            present.insert(next);
                            let split = g.draw_split();
                            alive.push((next, split));
                        }
                    }
                }
            }
            g.births(&mut alive, &mut present, cfg.births_per_step(), active);
        }
        let mut splits: [Vec<Triple>; 3] = Default::default();
        for &(tr, split) in &alive {
            let slot = match split {
                Split::Train => 0,
                Split::Valid => 1,
                Split::Test => 2,
            };
            splits[slot].push(tr);
        }
        let [a, b, c] = splits;
        snapshots.push(Snapshot::new(TimeStep(t as u32), a, b, c)?);
    }
    let mut seq = SnapshotSequence::from_unnamed(cfg.n_entities, cfg.n_relations, snapshots)?;
    seq.split_seed = Some(cfg.seed);
    Ok(seq)
}
