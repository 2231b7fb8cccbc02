//! Time-agnostic triple scoring functions. Higher scores are more plausible.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    /// `−‖s + r − o‖₁`
    TransE,
    /// `Σ s∘r∘o`
    DistMult,
    /// `Re⟨s, r, conj(o)⟩`, first half of each vector real, second half imaginary.
    ComplEx,
}

impl Decoder {
    pub fn tag(self) -> u8 {
        match self {
            Decoder::TransE => 0,
            Decoder::DistMult => 1,
            Decoder::ComplEx => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Decoder::TransE),
            1 => Some(Decoder::DistMult),
            2 => Some(Decoder::ComplEx),
            _ => None,
        }
    }

    pub fn score(self, s: &[f64], r: &[f64], o: &[f64]) -> f64 {
        debug_assert!(s.len() == r.len() && r.len() == o.len());
        match self {
            Decoder::TransE => -s
                .iter()
                .zip(r)
                .zip(o)
                .map(|((a, b), c)| (a + b - c).abs())
                .sum::<f64>(),
            Decoder::DistMult => s.iter().zip(r).zip(o).map(|((a, b), c)| a * b * c).sum(),
            Decoder::ComplEx => {
                let h = s.len() / 2;
                let (sr, si) = s.split_at(h);
                let (rr, ri) = r.split_at(h);
                let (or, oi) = o.split_at(h);
                let mut acc = 0.0;
                for n in 0..h {
                    acc += sr[n] * rr[n] * or[n] + si[n] * rr[n] * oi[n] + sr[n] * ri[n] * oi[n]
                        - si[n] * ri[n] * or[n];
                }
                acc
            }
        }
    }

    /// Adds `coef · ∂score/∂{s,r,o}` into `gs`, `gr`, `go`.
    pub fn accumulate_grad(
        self,
        s: &[f64],
        r: &[f64],
        o: &[f64],
        coef: f64,
        gs: &mut [f64],
        gr: &mut [f64],
        go: &mut [f64],
    ) {
        match self {
            Decoder::TransE => {
                for n in 0..s.len() {
                    let u = s[n] + r[n] - o[n];
                    let sg = if u > 0.0 {
                        1.0
                    } else if u < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    gs[n] -= coef * sg;
                    gr[n] -= coef * sg;
                    go[n] += coef * sg;
                }
            }
            Decoder::DistMult => {
                for n in 0..s.len() {
                    gs[n] += coef * r[n] * o[n];
                    gr[n] += coef * s[n] * o[n];
                    go[n] += coef * s[n] * r[n];
                }
            }
            Decoder::ComplEx => {
                let h = s.len() / 2;
                for n in 0..h {
                    let (sr, si) = (s[n], s[h + n]);
                    let (rr, ri) = (r[n], r[h + n]);
                    let (or, oi) = (o[n], o[h + n]);
                    gs[n] += coef * (rr * or + ri * oi);
                    gs[h + n] += coef * (rr * oi - ri * or);
                    gr[n] += coef * (sr * or + si * oi);
                    gr[h + n] += coef * (sr * oi - si * or);
                    go[n] += coef * (sr * rr - si * ri);
                    go[h + n] += coef * (si * rr + sr * ri);
                }
            }
        }
    }
}
