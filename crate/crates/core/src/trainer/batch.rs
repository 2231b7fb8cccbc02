use rayon::prelude::*;

use crate::config::{RunConfig, Strategy};
use crate::error::{Error, Result};
use crate::graph::{Quadruple, TimeStep};
use crate::model::{ParameterStore, SparseGrad};
use crate::objectives::{
    deleted_bce, distill_kl, softmax_ce, temporal_reg, Alphas, DistillForm, DistillationCache, LossBundle,
    NegativeSampleSet,
};

/// Items evaluated per worker task. Fixed so that the merge order, and with it
/// every floating-point sum, does not depend on the thread count.
pub const CHUNK: usize = 32;

/// Everything a step trains on.
#[derive(Clone, Debug, Default)]
pub struct StepData {
    pub current: Vec<Quadruple>,
    pub current_negs: Vec<NegativeSampleSet>,
    pub replay: Vec<Quadruple>,
    /// Drawn once per step and shared with the distillation cache.
    pub replay_negs: Vec<NegativeSampleSet>,
    pub cache: DistillationCache,
    pub deleted: Vec<Quadruple>,
    /// Step at which each deleted triple last held, for the paired positive.
    pub deleted_origin: Vec<TimeStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BatchItem {
    Current(usize),
    Replay(usize),
    Deleted(usize),
}

/// Which loss terms a strategy trains with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub alphas: Alphas,
    pub distill: DistillForm,
    pub paired_positive: bool,
    /// Replay facts become a gradient constraint instead of loss terms.
    pub agem: bool,
}

impl LossSettings {
    pub fn for_strategy(cfg: &RunConfig, strategy: Strategy) -> Self {
        let a = cfg.loss.alphas();
        let alphas = match strategy {
            Strategy::Ft | Strategy::Fb | Strategy::FbFuture => Alphas {
                alpha1: a.alpha1,
                ..Alphas::uniform(0.0)
            },
            Strategy::Tr => Alphas {
                alpha1: a.alpha1,
                alpha5: a.alpha5,
                ..Alphas::uniform(0.0)
            },
            Strategy::Tie if cfg.optim.agem => Alphas {
                alpha3: 0.0,
                alpha4: 0.0,
                ..a
            },
            Strategy::Tie => a,
        };
        Self {
            alphas,
            distill: cfg.loss.distill,
            paired_positive: cfg.loss.paired_positive,
            agem: strategy == Strategy::Tie && cfg.optim.agem,
        }
    }

    pub fn uses_replay(&self) -> bool {
        self.agem || self.alphas.alpha3 > 0.0 || self.alphas.alpha4 > 0.0
    }

    pub fn uses_deleted(&self) -> bool {
        self.alphas.alpha2 > 0.0
    }
}

/// Unweighted loss terms and the `α`-weighted gradient of one batch. The
/// temporal term is added once per batch when `prev` is given.
pub fn batch_objective(
    store: &ParameterStore,
    prev: Option<&ParameterStore>,
    data: &StepData,
    items: &[BatchItem],
    settings: &LossSettings,
) -> Result<(LossBundle, SparseGrad)> {
    let a = settings.alphas;
    let parts: Vec<Result<(LossBundle, SparseGrad)>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut b = LossBundle::default();
            let mut g = SparseGrad::new();
            for item in chunk {
                match *item {
                    BatchItem::Current(i) => {
                        if a.alpha1 > 0.0 {
                            b.ce += softmax_ce(store, &data.current[i], &data.current_negs[i], a.alpha1, Some(&mut g));
                        }
                    }
                    BatchItem::Replay(i) => {
                        let (f, n) = (&data.replay[i], &data.replay_negs[i]);
                        if a.alpha3 > 0.0 {
                            b.rce += softmax_ce(store, f, n, a.alpha3, Some(&mut g));
                        }
                        if a.alpha4 > 0.0 {
                            let cached = data
                                .cache
                                .get(i)
                                .ok_or_else(|| Error::CacheMismatch(format!("no cache entry for replay fact {i}")))?;
                            b.rkd += distill_kl(cached, store, f, n, settings.distill, a.alpha4, Some(&mut g))?;
                        }
                    }
                    BatchItem::Deleted(i) => {
                        if a.alpha2 > 0.0 {
                            let paired = settings.paired_positive.then(|| data.deleted_origin[i]);
                            b.del += deleted_bce(store, &data.deleted[i], paired, a.alpha2, Some(&mut g));
                        }
                    }
                }
            }
            Ok((b, g))
        })
        .collect();
    let mut bundle = LossBundle::default();
    let mut grad = SparseGrad::new();
    for p in parts {
        let (b, g) = p?;
        bundle.add(&b);
        grad.add_scaled(&g, 1.0);
    }
    if a.alpha5 > 0.0 {
        if let Some(prev) = prev {
            bundle.tr = temporal_reg(store, prev, a.alpha5, Some(&mut grad))?;
        }
    }
    bundle.check_finite()?;
    Ok((bundle, grad))
}

/// Gradient of the replay cross-entropy over all replay facts, the reference
/// direction for the row-wise projection.
pub fn replay_reference_grad(store: &ParameterStore, data: &StepData) -> SparseGrad {
    let parts: Vec<SparseGrad> = (0..data.replay.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = SparseGrad::new();
            for &i in chunk {
                softmax_ce(store, &data.replay[i], &data.replay_negs[i], 1.0, Some(&mut g));
            }
            g
        })
        .collect();
    let mut out = SparseGrad::new();
    for g in &parts {
        out.add_scaled(g, 1.0);
    }
    out
}
