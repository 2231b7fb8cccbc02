//! Pretraining, per-step incremental training and evaluation.
//!
//! A run pretrains on the first `T₀` steps jointly, then visits each later
//! step `t`: initialise `θ^t` from `θ^{t−1}`, gather added facts, replay facts
//! and deleted facts, train with early stopping on `D^t_valid`, and evaluate
//! the best epoch.

mod batch;
mod layout;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use batch::{batch_objective, replay_reference_grad, BatchItem, LossSettings, StepData, CHUNK};
pub use layout::{report, series, summarize, RunLayout, SeriesRow, StepTiming, DATA_SIZE_RULE};

use crate::agem::project_rows;
use crate::config::{RunConfig, Strategy};
use crate::error::{Error, Result};
use crate::graph::{deleted_facts, Quadruple, SnapshotSequence, Split, TimeStep, Triple};
use crate::metrics::{
    alpha_steps, current_and_average, evaluate_test_step, hits_at_k, rank_queries, AlphaRow, DeletedCandidateIndex,
    MetricRow, RunSummary,
};
use crate::model::{ModelSpec, Optimizer, ParameterStore};
use crate::objectives::{sample_negatives, DistillationCache, LossBundle};
use crate::replay::{sample_replay, PatternFrequencyIndex, ReplayBuffer};

/// Generator for one phase of a seeded run: phase 0 is pretraining, phase `t`
/// is incremental step `t`. Phases draw from independent streams, so a step
/// replays identically whether or not earlier phases ran in this process.
pub fn phase_rng(seed: u64, phase: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase);
    rng
}

pub fn model_spec(cfg: &RunConfig, seq: &SnapshotSequence) -> ModelSpec {
    ModelSpec {
        encoder: cfg.model.encoder,
        decoder: cfg.model.decoder(),
        dim: cfg.model.dim,
        de_gamma: cfg.model.de_gamma,
        num_entities: seq.num_entities(),
        num_relations: seq.num_relations(),
        num_steps: seq.num_steps() as usize,
    }
}

/// One epoch's loss sums and validation score.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBundle,
    pub total: f64,
    pub valid_hits: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters of the best validation epoch.
    pub store: ParameterStore,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid: Option<f64>,
    pub history: Vec<EpochRecord>,
    /// Time spent computing gradients and applying updates.
    pub compute_seconds: f64,
    /// Facts plus negatives drawn for the first epoch.
    pub data_size: u64,
}

/// Hits@k on the validation queries of `steps`, pooled, each step ranked
/// against its own known entities.
pub fn validation_hits(store: &ParameterStore, seq: &SnapshotSequence, steps: &[TimeStep], cfg: &RunConfig) -> Result<Option<f64>> {
    let mut ranks = Vec::new();
    for &t in steps {
        let snap = seq.snapshot(t)?;
        if snap.valid().is_empty() {
            continue;
        }
        let filter = cfg.eval.filtered.then_some(snap);
        ranks.extend(rank_queries(store, snap.valid(), t, seq.known_entities(t)?, filter, None)?.ranks());
    }
    if ranks.is_empty() {
        return Ok(None);
    }
    hits_at_k(&ranks, cfg.eval.k).map(Some)
}

fn redraw_current_negatives(seq: &SnapshotSequence, data: &mut StepData, rate: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    data.current_negs = data
        .current
        .iter()
        .map(|q| sample_negatives(q, rate, seq, rng))
        .collect::<Result<_>>()?;
    Ok(())
}

/// Mini-batch training with early stopping on pooled validation Hits@k over
/// `valid_steps`. Current-fact negatives are redrawn every epoch; replay
/// negatives and the distillation cache stay fixed.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    seq: &SnapshotSequence,
    cfg: &RunConfig,
    mut store: ParameterStore,
    prev: Option<&ParameterStore>,
    data: &mut StepData,
    settings: &LossSettings,
    valid_steps: &[TimeStep],
    rng: &mut ChaCha8Rng,
) -> Result<FitOutcome> {
    let mut opt = Optimizer::new(cfg.optim.kind, cfg.optim.lr);
    let mut items: Vec<BatchItem> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(Option<f64>, ParameterStore, usize)> = None;
    let mut since_best = 0usize;
    let mut compute = 0.0;
    let mut data_size = 0u64;
    let train_current = settings.alphas.alpha1 > 0.0;
    let train_replay = !settings.agem && (settings.alphas.alpha3 > 0.0 || settings.alphas.alpha4 > 0.0);
    let train_deleted = settings.alphas.alpha2 > 0.0;
    let mut epochs = 0;

    for epoch in 1..=cfg.optim.max_epochs {
        if train_current {
            redraw_current_negatives(seq, data, cfg.neg.rate_current, rng)?;
        }
        items.clear();
        if train_current {
            items.extend((0..data.current.len()).map(BatchItem::Current));
        }
        if train_replay {
            items.extend((0..data.replay.len()).map(BatchItem::Replay));
        }
        if train_deleted {
            items.extend((0..data.deleted.len()).map(BatchItem::Deleted));
        }
        if epoch == 1 {
            let negs: usize = data.current_negs.iter().chain(&data.replay_negs).map(|n| n.len()).sum();
            data_size = (data.current.len() + data.replay.len() + data.deleted.len() + negs) as u64;
        }
        if items.is_empty() {
            let v = validation_hits(&store, seq, valid_steps, cfg)?;
            history.push(EpochRecord {
                epoch,
                losses: LossBundle::default(),
                total: 0.0,
                valid_hits: v,
            });
            best = Some((v, store.clone(), epoch));
            epochs = epoch;
            break;
        }
        items.shuffle(rng);

        let started = Instant::now();
        let mut losses = LossBundle::default();
        for chunk in items.chunks(cfg.batch.max_size) {
            let (b, mut g) = batch_objective(&store, prev, data, chunk, settings)?;
            if settings.agem && !data.replay.is_empty() {
                let gref = replay_reference_grad(&store, data);
                g = project_rows(&g, &gref);
            }
            opt.step(&mut store, &g)?;
            losses.add(&b);
        }
        compute += started.elapsed().as_secs_f64();
        store.check_finite()?;

        let v = validation_hits(&store, seq, valid_steps, cfg)?;
        history.push(EpochRecord {
            epoch,
            losses,
            total: losses.total(&settings.alphas),
            valid_hits: v,
        });
        epochs = epoch;
        let improved = match (&best, v) {
            (None, _) => true,
            (Some((Some(b), _, _)), Some(v)) => v > *b,
            (Some(_), None) => true,
            (Some((None, _, _)), Some(_)) => true,
        };
        if improved {
            best = Some((v, store.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.optim.patience {
                break;
            }
        }
    }
    let (best_valid, best_store, best_epoch) = best.ok_or(Error::Empty("training epochs"))?;
    Ok(FitOutcome {
        store: best_store,
        epochs,
        best_epoch,
        best_valid,
        history,
        compute_seconds: compute,
        data_size,
    })
}

/// Quadruples of the training splits of `steps`.
fn train_quadruples(seq: &SnapshotSequence, steps: impl IntoIterator<Item = u32>) -> Result<Vec<Quadruple>> {
    let mut out = Vec::new();
    for t in steps {
        let snap = seq.snapshot(TimeStep(t))?;
        out.extend(snap.train().iter().map(|tr| tr.at(snap.t)));
    }
    Ok(out)
}

/// Joint training on steps `1..=through` from a fresh random model.
pub fn train_joint(seq: &SnapshotSequence, cfg: &RunConfig, seed: u64, through: u32) -> Result<FitOutcome> {
    let mut rng = phase_rng(seed, 0);
    let mut store = ParameterStore::random(model_spec(cfg, seq), seed, &mut rng)?;
    let last = TimeStep(through);
    store.mark_known(seq.known_entities(last)?, seq.known_relations(last)?, last);
    let mut data = StepData {
        current: train_quadruples(seq, 1..=through)?,
        ..StepData::default()
    };
    let settings = LossSettings::for_strategy(cfg, Strategy::Ft);
    let steps: Vec<TimeStep> = (1..=through).map(TimeStep).collect();
    fit(seq, cfg, store, None, &mut data, &settings, &steps, &mut rng)
}

/// Base model on the first `T₀` steps.
pub fn pretrain(seq: &SnapshotSequence, cfg: &RunConfig, seed: u64) -> Result<FitOutcome> {
    train_joint(seq, cfg, seed, cfg.pretrain_steps(seq.num_steps()))
}

/// Training material for step `t` under `strategy`. `prev` is `θ^{t−1}`, used
/// for the distillation cache.
pub fn prepare_step(
    seq: &SnapshotSequence,
    cfg: &RunConfig,
    strategy: Strategy,
    prev: &ParameterStore,
    t: TimeStep,
    rng: &mut ChaCha8Rng,
) -> Result<StepData> {
    let settings = LossSettings::for_strategy(cfg, strategy);
    let snap = seq.snapshot(t)?;
    let buffer = ReplayBuffer::for_step(seq, t, cfg.replay.window)?;
    let mut data = StepData::default();
    data.current = match strategy {
        Strategy::Fb => {
            let mut v = buffer.quadruples();
            v.extend(snap.train().iter().map(|tr| tr.at(t)));
            v
        }
        _ => seq
            .added_facts(t)?
            .into_iter()
            .filter(|q| snap.split_of(&q.triple()) == Some(Split::Train))
            .collect(),
    };
    if strategy == Strategy::Tie && settings.uses_replay() {
        let quads = buffer.quadruples();
        let index = PatternFrequencyIndex::build(&quads, snap.train());
        data.replay = sample_replay(
            &buffer,
            &index,
            cfg.replay.strategy,
            cfg.replay.samples,
            &cfg.replay.sampling_params(),
            rng,
        );
        data.replay_negs = data
            .replay
            .iter()
            .map(|q| sample_negatives(q, cfg.neg.rate_replay, seq, rng))
            .collect::<Result<_>>()?;
        if settings.alphas.alpha4 > 0.0 {
            data.cache = DistillationCache::build(prev, &data.replay, &data.replay_negs)?;
        }
    }
    if strategy == Strategy::Tie && settings.uses_deleted() {
        let mut origin: HashMap<Triple, TimeStep> = HashMap::new();
        for q in buffer.quadruples() {
            let e = origin.entry(q.triple()).or_insert(q.t);
            *e = (*e).max(q.t);
        }
        let mut deleted = deleted_facts(buffer.triples(), snap, t);
        let cap = cfg.loss.deleted_cap;
        if cap > 0 && deleted.len() > cap {
            let mut keep = index::sample(rng, deleted.len(), cap).into_vec();
            keep.sort_unstable();
            deleted = keep.into_iter().map(|i| deleted[i]).collect();
        }
        data.deleted_origin = deleted.iter().map(|q| origin[&q.triple()]).collect();
        data.deleted = deleted;
    }
    Ok(data)
}

/// Result of one incremental step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub step: TimeStep,
    pub fit: FitOutcome,
    pub n_current: usize,
    pub n_replay: usize,
    pub n_deleted: usize,
}

/// Trains step `t` from `θ^{t−1}`.
pub fn train_step(
    seq: &SnapshotSequence,
    cfg: &RunConfig,
    strategy: Strategy,
    prev: &ParameterStore,
    t: TimeStep,
    seed: u64,
) -> Result<StepOutcome> {
    let mut rng = phase_rng(seed, t.0 as u64);
    let init = prev.init_step(seq.known_entities(t)?, seq.known_relations(t)?, t, &mut rng);
    let mut data = prepare_step(seq, cfg, strategy, prev, t, &mut rng)?;
    let settings = LossSettings::for_strategy(cfg, strategy);
    let fit = fit(seq, cfg, init, Some(prev), &mut data, &settings, &[t], &mut rng)?;
    Ok(StepOutcome {
        step: t,
        n_current: data.current.len(),
        n_replay: data.replay.len(),
        n_deleted: data.deleted.len(),
        fit,
    })
}

/// Test metrics of `store` at step `t`: the current measures, the average
/// measure over the selected earlier steps, DF and RRD.
pub fn evaluate_step(store: &ParameterStore, seq: &SnapshotSequence, t: TimeStep, cfg: &RunConfig) -> Result<(Vec<MetricRow>, Option<AlphaRow>)> {
    let ev = &cfg.eval;
    let mut rows = Vec::new();
    let idx = DeletedCandidateIndex::build(seq, t, ev.df_window)?;
    let rep = evaluate_test_step(store, seq, t, ev.filtered, Some(&idx))?;
    if rep.queries.is_empty() {
        log::warn!("step {t} has no test facts; current measures skipped");
        return Ok((rows, None));
    }
    let step = t.0;
    rows.push(MetricRow::new(step, "c_hits10", "both", rep.hits_at(10)?));
    for dir in crate::graph::Direction::BOTH {
        rows.push(MetricRow::new(step, "c_hits10", dir.as_str(), hits_at_k(&rep.ranks_for(dir), 10)?));
    }
    rows.push(MetricRow::new(step, "c_hits1", "both", rep.hits_at(1)?));
    rows.push(MetricRow::new(step, "c_hits3", "both", rep.hits_at(3)?));
    rows.push(MetricRow::new(step, "c_mrr", "both", rep.mrr()?));
    if let Some((df, rrd)) = rep.df_and_rrd(ev.k) {
        rows.push(MetricRow::new(step, &format!("df{}", ev.k), "both", df));
        rows.push(MetricRow::new(step, "rrd", "both", rrd));
    }
    let z: usize = rep.queries.iter().map(|q| q.deleted_ranks.len()).sum();
    rows.push(MetricRow::new(step, "deleted_candidates", "-", z as f64));

    let mut alpha = AlphaRow {
        t: step,
        entries: BTreeMap::new(),
    };
    alpha.entries.insert(step, rep.hits_at(10)?);
    for j in alpha_steps(step, ev.exact_a, ev.df_window, ev.alpha_stride) {
        if j == step {
            continue;
        }
        let r = evaluate_test_step(store, seq, TimeStep(j), ev.filtered, None)?;
        if !r.queries.is_empty() {
            alpha.entries.insert(j, r.hits_at(10)?);
        }
    }
    let (_, a) = current_and_average(std::slice::from_ref(&alpha))?[0];
    rows.push(MetricRow::new(step, "a_hits10", "both", a));
    Ok((rows, Some(alpha)))
}

fn training_rows(out: &StepOutcome) -> Vec<MetricRow> {
    let s = out.step.0;
    let f = &out.fit;
    let last = f.history.last().map(|e| e.losses).unwrap_or_default();
    let total = f.history.last().map(|e| e.total).unwrap_or(0.0);
    let mut rows = vec![
        MetricRow::new(s, "epochs", "-", f.epochs as f64),
        MetricRow::new(s, "best_epoch", "-", f.best_epoch as f64),
        MetricRow::new(s, "data_size", "-", f.data_size as f64),
        MetricRow::new(s, "n_current", "-", out.n_current as f64),
        MetricRow::new(s, "n_replay", "-", out.n_replay as f64),
        MetricRow::new(s, "n_deleted", "-", out.n_deleted as f64),
    ];
    if let Some(v) = f.best_valid {
        rows.push(MetricRow::new(s, "valid_hits10", "both", v));
    }
    for (name, v) in ["loss_ce", "loss_del", "loss_rce", "loss_rkd", "loss_tr"].iter().zip(last.as_array()) {
        rows.push(MetricRow::new(s, name, "-", v));
    }
    rows.push(MetricRow::new(s, "loss_total", "-", total));
    rows
}

/// Everything produced by one seed.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Metric rows of every incremental step, in step order.
    pub rows: Vec<MetricRow>,
    pub alpha: Vec<AlphaRow>,
    pub timing: Vec<StepTiming>,
    pub final_store: ParameterStore,
}

/// Runs one seed of `cfg.run.strategy` over the incremental steps. `base`
/// replaces pretraining when given.
pub fn run_seed(
    seq: &SnapshotSequence,
    cfg: &RunConfig,
    seed: u64,
    base: Option<&ParameterStore>,
    layout: Option<&RunLayout>,
) -> Result<SeedOutcome> {
    let strategy = cfg.run.strategy;
    let total = seq.num_steps();
    let t0 = cfg.pretrain_steps(total);
    let mut rows = Vec::new();
    let mut alphas = Vec::new();
    let mut timing = Vec::new();

    let future = if strategy == Strategy::FbFuture {
        let fit = train_joint(seq, cfg, seed, total)?;
        if let Some(l) = layout {
            l.write_fit(&l.phase_dir(seed, "future"), &fit)?;
        }
        Some(fit)
    } else {
        None
    };

    let mut prev = match (&future, base) {
        (Some(f), _) => f.store.clone(),
        (None, Some(b)) => {
            check_compatible(b, &model_spec(cfg, seq))?;
            b.clone()
        }
        (None, None) => {
            let fit = pretrain(seq, cfg, seed)?;
            if let Some(l) = layout {
                l.write_fit(&l.phase_dir(seed, "pretrain"), &fit)?;
            }
            fit.store
        }
    };

    for t in (t0 + 1)..=total {
        let t = TimeStep(t);
        let (store, mut step_rows) = match &future {
            Some(f) => {
                let n_current = train_quadruples(seq, 1..=total)?.len();
                let out = StepOutcome {
                    step: t,
                    fit: f.clone(),
                    n_current,
                    n_replay: 0,
                    n_deleted: 0,
                };
                timing.push(StepTiming {
                    step: t.0,
                    epochs: if t.0 == t0 + 1 { f.epochs } else { 0 },
                    seconds: if t.0 == t0 + 1 { f.compute_seconds } else { 0.0 },
                });
                let mut r = training_rows(&out);
                // the joint fit is counted once, at the first incremental step
                if t.0 != t0 + 1 {
                    r.iter_mut().filter(|m| m.metric == "data_size").for_each(|m| m.value = 0.0);
                }
                (f.store.clone(), r)
            }
            None => {
                let out = train_step(seq, cfg, strategy, &prev, t, seed)?;
                log::info!(
                    "seed {seed} step {t}: {} epochs (best {}), valid hits@10 {:?}",
                    out.fit.epochs,
                    out.fit.best_epoch,
                    out.fit.best_valid
                );
                timing.push(StepTiming {
                    step: t.0,
                    epochs: out.fit.epochs,
                    seconds: out.fit.compute_seconds,
                });
                if let Some(l) = layout {
                    l.write_losses(&l.step_dir(seed, t.0), &out.fit)?;
                }
                let r = training_rows(&out);
                (out.fit.store, r)
            }
        };
        let (eval_rows, alpha) = evaluate_step(&store, seq, t, cfg)?;
        step_rows.extend(eval_rows);
        if let Some(l) = layout {
            l.write_step(seed, t.0, &store, &step_rows)?;
        }
        rows.extend(step_rows);
        alphas.extend(alpha);
        prev = store;
    }
    if let Some(l) = layout {
        l.write_seed_files(seed, &alphas, &timing)?;
    }
    Ok(SeedOutcome {
        seed,
        rows,
        alpha: alphas,
        timing,
        final_store: prev,
    })
}

fn check_compatible(store: &ParameterStore, expected: &ModelSpec) -> Result<()> {
    if store.spec() != expected {
        return Err(Error::Config(format!(
            "checkpoint model {:?} does not match the configured model {:?}",
            store.spec(),
            expected
        )));
    }
    Ok(())
}

/// Runs every configured seed and writes the summary. `base` supplies the
/// starting checkpoint of a seed, or `None` to pretrain.
pub fn run<F>(seq: &SnapshotSequence, cfg: &RunConfig, base: F, layout: Option<&RunLayout>) -> Result<(Vec<SeedOutcome>, RunSummary)>
where
    F: Fn(u64) -> Result<Option<ParameterStore>>,
{
    if let Some(l) = layout {
        l.prepare(cfg)?;
    }
    let mut outcomes = Vec::new();
    for seed in cfg.seeds() {
        let b = base(seed)?;
        outcomes.push(run_seed(seq, cfg, seed, b.as_ref(), layout)?);
    }
    let summary = summarize(
        &cfg.run.name,
        cfg.run.strategy.as_str(),
        outcomes.iter().map(|o| (o.seed, o.rows.as_slice(), o.timing.as_slice())),
    );
    if let Some(l) = layout {
        l.write_summary(&summary, &series(outcomes.iter().map(|o| o.rows.as_slice())))?;
    }
    Ok((outcomes, summary))
}

