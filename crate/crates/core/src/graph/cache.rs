//! Portable binary snapshot cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"TKGS"
//! version u32
//! seed    u8 flag + u64          split-sampling seed, if splits were drawn
//! counts  u32 entities, u32 relations, u32 steps
//! vocab   per name: u32 byte length + UTF-8 bytes (entities, then relations)
//! steps   per step: u32 t, then for train/valid/test: u32 n + n × (u32 s, u32 r, u32 o)
//! ```

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Snapshot, SnapshotSequence, Split, TimeStep, Triple};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TKGS";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cache<W: Write>(seq: &SnapshotSequence, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(CACHE_VERSION)?;
    match seq.split_seed {
        Some(seed) => {
            w.write_u8(1)?;
            w.write_u64::<LE>(seed)?;
        }
        None => {
            w.write_u8(0)?;
            w.write_u64::<LE>(0)?;
        }
    }
    w.write_u32::<LE>(seq.num_entities() as u32)?;
    w.write_u32::<LE>(seq.num_relations() as u32)?;
    w.write_u32::<LE>(seq.num_steps())?;
    for name in seq.entity_names.iter().chain(&seq.relation_names) {
        w.write_u32::<LE>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
    }
    for snap in seq.snapshots() {
        w.write_u32::<LE>(snap.t.0)?;
        for split in Split::ALL {
            let facts = snap.split(split);
            w.write_u32::<LE>(facts.len() as u32)?;
            for tr in facts {
                w.write_u32::<LE>(tr.s.0)?;
                w.write_u32::<LE>(tr.r.0)?;
                w.write_u32::<LE>(tr.o.0)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "snapshot cache",
        msg: msg.into(),
    }
}

fn eof_as_corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        corrupt("truncated file")
    } else {
        Error::Io(e)
    }
}

pub fn read_cache<R: Read>(r: R) -> Result<SnapshotSequence> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_corrupt)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    read_body(&mut r).map_err(|e| match e {
        Error::Io(io) => eof_as_corrupt(io),
        other => other,
    })
}

fn read_body<R: Read>(r: &mut R) -> Result<SnapshotSequence> {
    let version = r.read_u32::<LE>()?;
    if version != CACHE_VERSION {
        return Err(Error::Version {
            what: "snapshot cache",
            found: version,
            expected: CACHE_VERSION,
        });
    }
    let has_seed = r.read_u8()? != 0;
    let seed = r.read_u64::<LE>()?;
    let n_e = r.read_u32::<LE>()? as usize;
    let n_r = r.read_u32::<LE>()? as usize;
    let n_t = r.read_u32::<LE>()?;
    let read_name = |r: &mut R| -> Result<String> {
        let len = r.read_u32::<LE>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| corrupt("vocabulary entry is not UTF-8"))
    };
    let entity_names = (0..n_e).map(|_| read_name(r)).collect::<Result<Vec<_>>>()?;
    let relation_names = (0..n_r).map(|_| read_name(r)).collect::<Result<Vec<_>>>()?;
    let mut snapshots = Vec::with_capacity(n_t as usize);
    for _ in 0..n_t {
        let t = TimeStep(r.read_u32::<LE>()?);
        let mut splits: [Vec<Triple>; 3] = Default::default();
        for split in splits.iter_mut() {
            let n = r.read_u32::<LE>()? as usize;
            split.reserve(n);
            for _ in 0..n {
                let s = r.read_u32::<LE>()?;
                let rel = r.read_u32::<LE>()?;
                let o = r.read_u32::<LE>()?;
                split.push(Triple::new(s, rel, o));
            }
        }
        let [train, valid, test] = splits;
        snapshots.push(Snapshot::new(t, train, valid, test)?);
    }
    let mut seq = SnapshotSequence::new(entity_names, relation_names, snapshots)?;
    seq.split_seed = has_seed.then_some(seed);
    Ok(seq)
}

impl SnapshotSequence {
    /// Writes the cache atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        write_cache(self, fs::File::create(&tmp)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_cache(fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_sequence() -> impl Strategy<Value = SnapshotSequence> {
        let triple = (0u32..6, 0u32..3, 0u32..6).prop_map(|(s, r, o)| Triple::new(s, r, o));
        let step = proptest::collection::vec((triple, 0u8..3), 0..20);
        proptest::collection::vec(step, 1..5).prop_map(|steps| {
            let snaps = steps
                .into_iter()
                .enumerate()
                .map(|(i, facts)| {
                    let mut seen = std::collections::HashSet::new();
                    let mut splits: [Vec<Triple>; 3] = Default::default();
                    for (tr, sp) in facts {
                        if seen.insert(tr) {
                            splits[sp as usize].push(tr);
                        }
                    }
                    let [a, b, c] = splits;
                    Snapshot::new(TimeStep(i as u32 + 1), a, b, c).unwrap()
                })
                .collect();
            SnapshotSequence::from_unnamed(6, 3, snaps).unwrap()
        })
    }

    proptest! {
        #[test]
        fn cache_round_trips(seq in arb_sequence(), seed in proptest::option::of(any::<u64>())) {
            let mut seq = seq;
            seq.split_seed = seed;
            let mut buf = Vec::new();
            write_cache(&seq, &mut buf).unwrap();
            let back = read_cache(buf.as_slice()).unwrap();
            prop_assert_eq!(back.split_seed, seq.split_seed);
            prop_assert_eq!(&back.entity_names, &seq.entity_names);
            prop_assert_eq!(back.num_steps(), seq.num_steps());
            for (a, b) in back.snapshots().iter().zip(seq.snapshots()) {
                for sp in Split::ALL {
                    prop_assert_eq!(a.split(sp), b.split(sp));
                }
            }
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let seq = SnapshotSequence::from_unnamed(1, 1, vec![]).unwrap();
        let mut buf = Vec::new();
        write_cache(&seq, &mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(read_cache(buf.as_slice()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn truncation_is_corrupt() {
        let seq = SnapshotSequence::from_unnamed(2, 1, vec![]).unwrap();
        let mut buf = Vec::new();
        write_cache(&seq, &mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_cache(buf.as_slice()), Err(Error::Corrupt { .. })));
    }
}
