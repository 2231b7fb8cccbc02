//! Weighted sampling over a Fenwick (binary indexed) tree.
//!
//! Drawing is `O(log n)` and removing a drawn item is `O(log n)`, so `k`
//! sequential draws without replacement, each renormalised over what is left,
//! cost `O(k log n)`.

use rand::Rng;

#[derive(Clone, Debug)]
pub struct WeightedSampler {
    tree: Vec<f64>,
    weights: Vec<f64>,
    remaining: usize,
}

impl WeightedSampler {
    /// Negative or non-finite weights are treated as zero.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let weights: Vec<f64> = weights
            .iter()
            .map(|&w| if w.is_finite() && w > 0.0 { w } else { 0.0 })
            .collect();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (!(i + 1) + 1));
            if parent <= n {
                tree[parent] += tree[i + 1];
            }
        }
        Self {
            tree,
            weights,
            remaining: n,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn prefix(&self, mut i: usize) -> f64 {
        let mut acc = 0.0;
        while i > 0 {
            acc += self.tree[i];
            i &= i - 1;
        }
        acc
    }

    pub fn total(&self) -> f64 {
        self.prefix(self.weights.len())
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & (!k + 1);
        }
    }

    /// Index of the first item whose cumulative weight exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.weights.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }

    /// One draw with probability `w_i / Σw` among items not yet removed.
    /// Falls back to uniform over the remaining items once their weights sum to zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let total = self.total();
        if total > 0.0 {
            let u: f64 = rng.gen::<f64>() * total;
            let idx = self.find(u);
            if self.weights[idx] > 0.0 {
                return Some(idx);
            }
            // rounding pushed us onto an exhausted slot; take the nearest live one
            let fwd = (idx..self.weights.len()).find(|&j| self.weights[j] > 0.0);
            let back = (0..idx).rev().find(|&j| self.weights[j] > 0.0);
            if let Some(j) = fwd.or(back) {
                return Some(j);
            }
        }
        let live: Vec<usize> = (0..self.weights.len()).filter(|&j| !self.removed(j)).collect();
        Some(live[rng.gen_range(0..live.len())])
    }

    fn removed(&self, i: usize) -> bool {
        self.weights[i].is_nan()
    }

    pub fn remove(&mut self, i: usize) {
        if self.removed(i) {
            return;
        }
        let w = self.weights[i];
        if w > 0.0 {
            self.add(i, -w);
        }
        self.weights[i] = f64::NAN;
        self.remaining -= 1;
    }

    /// `k` sequential draws without replacement (all items if `k ≥ len`).
    pub fn sample_without_replacement<R: Rng + ?Sized>(mut self, k: usize, rng: &mut R) -> Vec<usize> {
        let k = k.min(self.remaining);
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            match self.sample(rng) {
                Some(i) => {
                    self.remove(i);
                    out.push(i);
                }
                None => break,
            }
        }
        out
    }
}
