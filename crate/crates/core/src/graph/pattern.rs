use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Triple;

/// Wildcard shape over `(s, r, o)`; `x` marks a wildcard slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternShape {
    /// `(s, r, o)`
    Sro,
    /// `(s, *, o)`
    So,
    /// `(s, r, *)`
    Sr,
    /// `(*, r, o)`
    Ro,
    /// `(s, *, *)`
    S,
    /// `(*, *, o)`
    O,
    /// `(*, r, *)`
    R,
}

impl PatternShape {
    pub const ALL: [PatternShape; 7] = [
        PatternShape::Sro,
        PatternShape::So,
        PatternShape::Sr,
        PatternShape::Ro,
        PatternShape::S,
        PatternShape::O,
        PatternShape::R,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternShape::Sro => "sro",
            PatternShape::So => "so",
            PatternShape::Sr => "sr",
            PatternShape::Ro => "ro",
            PatternShape::S => "s",
            PatternShape::O => "o",
            PatternShape::R => "r",
        }
    }

    fn slots(self) -> (bool, bool, bool) {
        match self {
            PatternShape::Sro => (true, true, true),
            PatternShape::So => (true, false, true),
            PatternShape::Sr => (true, true, false),
            PatternShape::Ro => (false, true, true),
            PatternShape::S => (true, false, false),
            PatternShape::O => (false, false, true),
            PatternShape::R => (false, true, false),
        }
    }

    /// Instantiates this shape with the concrete ids of `triple`.
    pub fn key(self, triple: &Triple) -> PatternKey {
        let (s, r, o) = self.slots();
        PatternKey {
            shape: self,
            s: s.then_some(triple.s.0),
            r: r.then_some(triple.r.0),
            o: o.then_some(triple.o.0),
        }
    }

    pub fn matches(self, pattern_of: &Triple, candidate: &Triple) -> bool {
        let (s, r, o) = self.slots();
        (!s || pattern_of.s == candidate.s)
            && (!r || pattern_of.r == candidate.r)
            && (!o || pattern_of.o == candidate.o)
    }
}

impl fmt::Display for PatternShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, r, o) = self.slots();
        let c = |b: bool, ch: char| if b { ch } else { '*' };
        write!(f, "({}, {}, {})", c(s, 's'), c(r, 'r'), c(o, 'o'))
    }
}

impl FromStr for PatternShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternShape::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pattern `{s}` (expected one of sro, so, sr, ro, s, o, r)"))
    }
}

/// A pattern shape with its concrete slots filled in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatternKey {
    pub shape: PatternShape,
    pub s: Option<u32>,
    pub r: Option<u32>,
    pub o: Option<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_distinct_shapes() {
        let t = Triple::new(1, 2, 3);
        let keys: std::collections::HashSet<_> = PatternShape::ALL.iter().map(|p| p.key(&t)).collect();
        assert_eq!(keys.len(), 7);
    }

    #[test]
    fn wildcard_matching() {
        let a = Triple::new(0, 1, 2);
        let b = Triple::new(0, 3, 2);
        assert!(PatternShape::So.matches(&a, &b));
        assert!(!PatternShape::Sro.matches(&a, &b));
        assert!(!PatternShape::R.matches(&a, &b));
        assert_eq!(PatternShape::So.to_string(), "(s, *, o)");
    }
}
