//! Sliding-window replay buffer and the replay-fact samplers.
//!
//! Frequency-based sampling scores each buffered quadruple `(s, r, o, t′)` by
//!
//! ```text
//! fp(s, r, o) = Σ_p λ_p [ ln(h_p + 1) + γ·τ·ln(c_p + 1) ]
//! tp(t′)      = exp((t′ − t) / σ)
//! ψ           = tp·fp            (freq)
//!             = tp / (fp + 1e−9) (inverse freq)
//! ```
//!
//! where `h_p`/`c_p` count buffer/current quadruples matching pattern `p` of
//! the triple. Draws are made without replacement from `ψ / Σψ`.

mod sampler;

use std::collections::{HashMap, VecDeque};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use sampler::WeightedSampler;

use crate::graph::{PatternKey, PatternShape, Quadruple, SnapshotSequence, Split, TimeStep, Triple};
use crate::error::Result;

/// Added to `fp` in the inverse-frequency denominator.
pub const INV_FREQ_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayStrategy {
    None,
    Uniform,
    Freq,
    InvFreq,
}

impl FromStr for ReplayStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "uniform" => Ok(Self::Uniform),
            "freq" => Ok(Self::Freq),
            "inv_freq" => Ok(Self::InvFreq),
            other => Err(format!("unknown replay strategy `{other}`")),
        }
    }
}

/// Pattern weights `λ_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternWeights {
    pub sro: f64,
    pub so: f64,
    pub sr: f64,
    pub ro: f64,
    pub s: f64,
    pub o: f64,
    pub r: f64,
}

impl Default for PatternWeights {
    fn default() -> Self {
        Self {
            sro: 2.0,
            so: 1.5,
            sr: 1.3,
            ro: 1.3,
            s: 1.0,
            o: 1.0,
            r: 0.0,
        }
    }
}

impl PatternWeights {
    pub fn get(&self, shape: PatternShape) -> f64 {
        match shape {
            PatternShape::Sro => self.sro,
            PatternShape::So => self.so,
            PatternShape::Sr => self.sr,
            PatternShape::Ro => self.ro,
            PatternShape::S => self.s,
            PatternShape::O => self.o,
            PatternShape::R => self.r,
        }
    }

    pub fn sum(&self) -> f64 {
        PatternShape::ALL.iter().map(|&p| self.get(p)).sum()
    }
}

/// Parameters of the frequency/time-decay sampling rate.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingParams {
    pub lambda: PatternWeights,
    /// Decay scale σ of `tp`.
    pub sigma: f64,
    /// Discount γ between current and historical counts.
    pub gamma: f64,
    /// Window length τ.
    pub window: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            lambda: PatternWeights::default(),
            sigma: 10.0,
            gamma: 0.5,
            window: 10,
        }
    }
}

/// `B^t = ∪_{i = max(1, t−τ)}^{t−1} D^i`, held per step so the window can slide.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    window: usize,
    /// The step this buffer serves; it holds only earlier steps.
    current: TimeStep,
    steps: VecDeque<(TimeStep, Vec<Triple>)>,
}

impl ReplayBuffer {
    /// Empty buffer serving step 1.
    pub fn new(window: usize) -> Self {
        Self {
            window,
            current: TimeStep(1),
            steps: VecDeque::new(),
        }
    }

    fn first_step(t: TimeStep, window: usize) -> u32 {
        (t.0 as i64 - window as i64).max(1) as u32
    }

    /// Builds `B^t` directly from the training splits of `seq`.
    pub fn for_step(seq: &SnapshotSequence, t: TimeStep, window: usize) -> Result<Self> {
        let mut steps = VecDeque::new();
        for i in Self::first_step(t, window)..t.0 {
            let snap = seq.snapshot(TimeStep(i))?;
            steps.push_back((snap.t, snap.split(Split::Train).to_vec()));
        }
        Ok(Self {
            window,
            current: t,
            steps,
        })
    }

    /// Moves from serving `t` to serving `t + 1`: admits `D^t` and evicts
    /// whatever falls out of the window.
    pub fn advance(&mut self, admitted: Vec<Triple>) {
        let t = self.current;
        self.steps.push_back((t, admitted));
        self.current = TimeStep(t.0 + 1);
        let keep_from = Self::first_step(self.current, self.window);
        while self.steps.front().is_some_and(|(s, _)| s.0 < keep_from) {
            self.steps.pop_front();
        }
    }

    pub fn current_step(&self) -> TimeStep {
        self.current
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.steps.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> impl Iterator<Item = TimeStep> + '_ {
        self.steps.iter().map(|(t, _)| *t)
    }

    /// Buffered quadruples ordered by step, then triple.
    pub fn quadruples(&self) -> Vec<Quadruple> {
        self.steps
            .iter()
            .flat_map(|(t, v)| v.iter().map(move |tr| tr.at(*t)))
            .collect()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.steps.iter().flat_map(|(_, v)| v.iter())
    }
}

/// Historical (`h`) and current (`c`) pattern counters for one step.
#[derive(Clone, Debug, Default)]
pub struct PatternFrequencyIndex {
    historical: HashMap<PatternKey, u32>,
    current: HashMap<PatternKey, u32>,
}

impl PatternFrequencyIndex {
    pub fn build<'a>(
        buffer: impl IntoIterator<Item = &'a Quadruple>,
        current: impl IntoIterator<Item = &'a Triple>,
    ) -> Self {
        let mut idx = Self::default();
        for q in buffer {
            let tr = q.triple();
            for p in PatternShape::ALL {
                *idx.historical.entry(p.key(&tr)).or_insert(0) += 1;
            }
        }
        for tr in current {
            for p in PatternShape::ALL {
                *idx.current.entry(p.key(tr)).or_insert(0) += 1;
            }
        }
        idx
    }

    /// `(h_p, c_p)` for every pattern of `triple`, in [`PatternShape::ALL`] order.
    pub fn pattern_counts(&self, triple: &Triple) -> [(u32, u32); 7] {
        PatternShape::ALL.map(|p| {
            let k = p.key(triple);
            (
                self.historical.get(&k).copied().unwrap_or(0),
                self.current.get(&k).copied().unwrap_or(0),
            )
        })
    }

    pub fn frequency_score(&self, triple: &Triple, params: &SamplingParams) -> f64 {
        frequency_score(&self.pattern_counts(triple), params)
    }
}

/// `fp = Σ_p λ_p [ln(h_p + 1) + γ·τ·ln(c_p + 1)]`.
pub fn frequency_score(counts: &[(u32, u32); 7], params: &SamplingParams) -> f64 {
    let gt = params.gamma * params.window as f64;
    PatternShape::ALL
        .iter()
        .zip(counts)
        .map(|(&p, &(h, c))| params.lambda.get(p) * ((h as f64).ln_1p() + gt * (c as f64).ln_1p()))
        .sum()
}

/// `tp(t′) = exp((t′ − t)/σ)`.
pub fn time_decay(t_prime: TimeStep, t: TimeStep, sigma: f64) -> f64 {
    ((t_prime.0 as f64 - t.0 as f64) / sigma).exp()
}

/// Unnormalised sampling rates `ψ` for every buffered quadruple.
pub fn sampling_rates(
    quads: &[Quadruple],
    index: &PatternFrequencyIndex,
    strategy: ReplayStrategy,
    t: TimeStep,
    params: &SamplingParams,
) -> Vec<f64> {
    match strategy {
        ReplayStrategy::None => vec![0.0; quads.len()],
        ReplayStrategy::Uniform => vec![1.0; quads.len()],
        ReplayStrategy::Freq | ReplayStrategy::InvFreq => {
            let mut fp_cache: HashMap<Triple, f64> = HashMap::new();
            quads
                .iter()
                .map(|q| {
                    let tr = q.triple();
                    let fp = *fp_cache.entry(tr).or_insert_with(|| index.frequency_score(&tr, params));
                    let tp = time_decay(q.t, t, params.sigma);
                    if strategy == ReplayStrategy::Freq {
                        tp * fp
                    } else {
                        tp / (fp + INV_FREQ_EPS)
                    }
                })
                .collect()
        }
    }
}

/// `p = ψ / Σψ`.
pub fn normalize(rates: &[f64]) -> Vec<f64> {
    let total: f64 = rates.iter().sum();
    rates.iter().map(|r| r / total).collect()
}

/// Draws `P^t`: `n` distinct buffered quadruples (the whole buffer if it holds
/// fewer) by sequential weighted draws without replacement.
pub fn sample_replay<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    index: &PatternFrequencyIndex,
    strategy: ReplayStrategy,
    n: usize,
    params: &SamplingParams,
    rng: &mut R,
) -> Vec<Quadruple> {
    if strategy == ReplayStrategy::None || n == 0 {
        return Vec::new();
    }
    let quads = buffer.quadruples();
    let rates = sampling_rates(&quads, index, strategy, buffer.current_step(), params);
    WeightedSampler::new(&rates)
        .sample_without_replacement(n, rng)
        .into_iter()
        .map(|i| quads[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Snapshot, SnapshotSequence};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(s: u32, r: u32, o: u32, t: u32) -> Quadruple {
        Quadruple::new(s, r, o, t)
    }

    #[test]
    fn empty_index_counts_zero() {
        let idx = PatternFrequencyIndex::build(&[], &[]);
        assert_eq!(idx.pattern_counts(&Triple::new(0, 1, 2)), [(0, 0); 7]);
        assert_eq!(idx.frequency_score(&Triple::new(0, 1, 2), &SamplingParams::default()), 0.0);
    }

    #[test]
    fn direct_counts() {
        let buf = [q(0, 1, 2, 4), q(0, 3, 2, 3)];
        let idx = PatternFrequencyIndex::build(&buf, &[]);
        let c = idx.pattern_counts(&Triple::new(0, 1, 2));
        assert_eq!(c[PatternShape::So.index()].0, 2);
        assert_eq!(c[PatternShape::Sro.index()].0, 1);
        assert_eq!(c[PatternShape::R.index()].0, 1);
    }

    fn brute(buf: &[Quadruple], cur: &[Triple], tr: &Triple, p: PatternShape) -> (u32, u32) {
        let h = buf.iter().filter(|x| p.matches(tr, &x.triple())).count() as u32;
        let c = cur.iter().filter(|x| p.matches(tr, x)).count() as u32;
        (h, c)
    }

    #[test]
    fn counts_match_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let buf: Vec<Quadruple> = (0..200)
            .map(|_| q(rng.gen_range(0..8), rng.gen_range(0..3), rng.gen_range(0..8), rng.gen_range(1..6)))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let cur: Vec<Triple> = (0..50)
            .map(|_| Triple::new(rng.gen_range(0..8), rng.gen_range(0..3), rng.gen_range(0..8)))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let idx = PatternFrequencyIndex::build(&buf, &cur);
        for s in 0..8 {
            for r in 0..3 {
                for o in 0..8 {
                    let tr = Triple::new(s, r, o);
                    let got = idx.pattern_counts(&tr);
                    for p in PatternShape::ALL {
                        assert_eq!(got[p.index()], brute(&buf, &cur, &tr, p));
                    }
                }
            }
        }
    }

    #[test]
    fn fp_closed_forms() {
        let params = SamplingParams::default();
        let mut counts = [(0, 0); 7];
        counts[PatternShape::Sro.index()] = (1, 0);
        assert!((frequency_score(&counts, &params) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((frequency_score(&counts, &params) - 1.3863).abs() < 1e-4);
        // h = c = e − 1 makes every log term 1; with γτ = 5 each pattern adds 6λ
        let e1 = std::f64::consts::E - 1.0;
        let gt = params.gamma * params.window as f64;
        let fp: f64 = PatternShape::ALL
            .iter()
            .map(|&p| params.lambda.get(p) * (e1.ln_1p() + gt * e1.ln_1p()))
            .sum();
        assert!((fp - 48.6).abs() < 1e-12);
        assert!((params.lambda.sum() - 8.1).abs() < 1e-15);
    }

    #[test]
    fn time_decay_values() {
        assert_eq!(time_decay(TimeStep(5), TimeStep(5), 10.0), 1.0);
        assert!((time_decay(TimeStep(5), TimeStep(15), 10.0) - (-1f64).exp()).abs() < 1e-15);
        assert!(time_decay(TimeStep(9), TimeStep(10), 10.0) > time_decay(TimeStep(8), TimeStep(10), 10.0));
    }

    fn seq_of(steps: &[&[(u32, u32, u32)]]) -> SnapshotSequence {
        let snaps = steps
            .iter()
            .enumerate()
            .map(|(i, facts)| {
                Snapshot::new(
                    TimeStep(i as u32 + 1),
                    facts.iter().map(|&(s, r, o)| Triple::new(s, r, o)).collect(),
                    vec![],
                    vec![],
                )
                .unwrap()
            })
            .collect();
        SnapshotSequence::from_unnamed(10, 3, snaps).unwrap()
    }

    #[test]
    fn advancing_equals_rebuilding() {
        let steps: Vec<Vec<(u32, u32, u32)>> = (0..9).map(|i| vec![(i, 0, i + 1), (0, 1, i)]).collect();
        let refs: Vec<&[(u32, u32, u32)]> = steps.iter().map(Vec::as_slice).collect();
        let seq = seq_of(&refs);
        for window in [1usize, 3, 10] {
            let mut buf = ReplayBuffer::new(window);
            for t in 1..=9u32 {
                assert_eq!(buf, ReplayBuffer::for_step(&seq, TimeStep(t), window).unwrap());
                assert!(buf.quadruples().iter().all(|q| q.t.0 < t));
                buf.advance(seq.snapshot(TimeStep(t)).unwrap().train().to_vec());
            }
        }
    }

    #[test]
    fn single_element_buffer_always_drawn() {
        let seq = seq_of(&[&[(0, 0, 1)], &[(2, 0, 1)]]);
        let buf = ReplayBuffer::for_step(&seq, TimeStep(2), 10).unwrap();
        let idx = PatternFrequencyIndex::build(&buf.quadruples(), seq.snapshot(TimeStep(2)).unwrap().train());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for strat in [ReplayStrategy::Uniform, ReplayStrategy::Freq, ReplayStrategy::InvFreq] {
            let p = sample_replay(&buf, &idx, strat, 5, &SamplingParams::default(), &mut rng);
            assert_eq!(p, vec![q(0, 0, 1, 1)]);
        }
    }

    #[test]
    fn three_element_probabilities_by_hand() {
        // B^4 = {(0,0,1,1), (0,0,2,2), (3,1,1,3)}, D^4 = {(0,0,1)}
        let seq = seq_of(&[&[(0, 0, 1)], &[(0, 0, 2)], &[(3, 1, 1)], &[(0, 0, 1)]]);
        let buf = ReplayBuffer::for_step(&seq, TimeStep(4), 10).unwrap();
        let quads = buf.quadruples();
        let cur = seq.snapshot(TimeStep(4)).unwrap().train().to_vec();
        let idx = PatternFrequencyIndex::build(&quads, &cur);
        let params = SamplingParams::default();
        let l2 = 2f64.ln();
        let l3 = 3f64.ln();
        // fp(0,0,1): sro h1 c1; so h1 c1; sr h2 c1; ro h1 c1; s h2 c1; o h2 c1; r h2 c1
        let fp_a = 2.0 * (l2 + 5.0 * l2) + 1.5 * (l2 + 5.0 * l2) + 1.3 * (l3 + 5.0 * l2) + 1.3 * (l2 + 5.0 * l2) + (l3 + 5.0 * l2) + (l3 + 5.0 * l2);
        // fp(0,0,2): sro h1; so h1; sr h2 c1; ro h1; s h2 c1; o h1; r h2 c1
        let fp_b = 2.0 * l2 + 1.5 * l2 + 1.3 * (l3 + 5.0 * l2) + 1.3 * l2 + (l3 + 5.0 * l2) + l2;
        // fp(3,1,1): sro h1; so h1; sr h1; ro h1; s h1; o h2 c1; r h1
        let fp_c = 2.0 * l2 + 1.5 * l2 + 1.3 * l2 + 1.3 * l2 + l2 + (l3 + 5.0 * l2);
        let tp = |tp: f64| ((tp - 4.0) / 10.0).exp();
        let freq = [tp(1.0) * fp_a, tp(2.0) * fp_b, tp(3.0) * fp_c];
        let inv = [tp(1.0) / (fp_a + 1e-9), tp(2.0) / (fp_b + 1e-9), tp(3.0) / (fp_c + 1e-9)];
        for (strat, psi) in [(ReplayStrategy::Freq, freq), (ReplayStrategy::InvFreq, inv)] {
            let got = normalize(&sampling_rates(&quads, &idx, strat, TimeStep(4), &params));
            let z: f64 = psi.iter().sum();
            for i in 0..3 {
                assert!((got[i] - psi[i] / z).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_normalize_and_order(
            facts in proptest::collection::btree_set((0u32..6, 0u32..3, 0u32..6, 1u32..8), 1..60),
            strat in prop_oneof![Just(ReplayStrategy::Uniform), Just(ReplayStrategy::Freq), Just(ReplayStrategy::InvFreq)],
        ) {
            let quads: Vec<Quadruple> = facts.into_iter().map(|(s, r, o, t)| q(s, r, o, t)).collect();
            let idx = PatternFrequencyIndex::build(&quads, &[]);
            let params = SamplingParams::default();
            let now = TimeStep(8);
            let p = normalize(&sampling_rates(&quads, &idx, strat, now, &params));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..quads.len() {
                for j in 0..quads.len() {
                    let (a, b) = (quads[i], quads[j]);
                    if strat == ReplayStrategy::Uniform {
                        continue;
                    }
                    if a.t == b.t {
                        let (fa, fb) = (idx.frequency_score(&a.triple(), &params), idx.frequency_score(&b.triple(), &params));
                        if fa > fb * (1.0 + 1e-12) {
                            if strat == ReplayStrategy::Freq { prop_assert!(p[i] > p[j]); } else { prop_assert!(p[i] < p[j]); }
                        }
                    }
                    if a.triple() == b.triple() && a.t > b.t {
                        prop_assert!(p[i] > p[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn samples_are_distinct_and_capped() {
        let steps: Vec<Vec<(u32, u32, u32)>> = (0..5).map(|i| (0..6).map(|j| (j, i % 3, (j + i) % 10)).collect()).collect();
        let refs: Vec<&[(u32, u32, u32)]> = steps.iter().map(Vec::as_slice).collect();
        let seq = seq_of(&refs);
        let buf = ReplayBuffer::for_step(&seq, TimeStep(5), 10).unwrap();
        let idx = PatternFrequencyIndex::build(&buf.quadruples(), seq.snapshot(TimeStep(5)).unwrap().train());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_replay(&buf, &idx, ReplayStrategy::Freq, 10, &SamplingParams::default(), &mut rng);
        assert_eq!(p.len(), 10);
        let uniq: std::collections::HashSet<_> = p.iter().collect();
        assert_eq!(uniq.len(), 10);
        let all = sample_replay(&buf, &idx, ReplayStrategy::InvFreq, 1000, &SamplingParams::default(), &mut rng);
        assert_eq!(all.len(), buf.len());
        assert!(sample_replay(&buf, &idx, ReplayStrategy::None, 10, &SamplingParams::default(), &mut rng).is_empty());
    }
}
