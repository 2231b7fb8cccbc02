//! Binary parameter checkpoint.
//!
//! ```text
//! magic    b"TKGP"
//! version  u32
//! encoder  u8, decoder u8
//! dim      u32, de_gamma f64
//! sizes    u32 entities, u32 relations, u32 steps
//! seed     u64
//! matrices entity, relation, freq, phase, hyperplane:
//!          u32 rows, u32 cols, rows·cols f64 (row-major)
//! bitmaps  known entities, relations, steps: ⌈n/8⌉ bytes each, LSB first
//! ```
//! All numbers little-endian.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::decoder::Decoder;
use super::grad::ParamKind;
use super::store::{Encoder, Matrix, ModelSpec, ParameterStore};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TKGP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_bits<W: Write>(w: &mut W, bits: &[bool]) -> io::Result<()> {
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 1 << i;
            }
        }
        w.write_u8(byte)?;
    }
    Ok(())
}

fn read_bits<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<bool>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n.div_ceil(8) {
        let byte = r.read_u8()?;
        for i in 0..8 {
            if out.len() < n {
                out.push(byte & (1 << i) != 0);
            }
        }
    }
    Ok(out)
}

pub fn write_checkpoint<W: Write>(store: &ParameterStore, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let sp = store.spec();
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(CHECKPOINT_VERSION)?;
    w.write_u8(sp.encoder.tag())?;
    w.write_u8(sp.decoder.tag())?;
    w.write_u32::<LE>(sp.dim as u32)?;
    w.write_f64::<LE>(sp.de_gamma)?;
    w.write_u32::<LE>(sp.num_entities as u32)?;
    w.write_u32::<LE>(sp.num_relations as u32)?;
    w.write_u32::<LE>(sp.num_steps as u32)?;
    w.write_u64::<LE>(store.seed)?;
    for kind in ParamKind::ALL {
        let m = store.matrix(kind);
        w.write_u32::<LE>(m.rows() as u32)?;
        w.write_u32::<LE>(m.cols() as u32)?;
        for &x in m.as_slice() {
            w.write_f64::<LE>(x)?;
        }
    }
    write_bits(&mut w, store.known_entity_mask())?;
    write_bits(&mut w, store.known_relation_mask())?;
    write_bits(&mut w, store.known_step_mask())?;
    w.flush()?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint",
        msg: msg.into(),
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ParameterStore> {
    let mut r = BufReader::new(r);
    read_inner(&mut r).map_err(|e| match e {
        Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => corrupt("truncated file"),
        other => other,
    })
}

fn read_inner<R: Read>(r: &mut R) -> Result<ParameterStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let encoder = Encoder::from_tag(r.read_u8()?).ok_or_else(|| corrupt("unknown encoder tag"))?;
    let decoder = Decoder::from_tag(r.read_u8()?).ok_or_else(|| corrupt("unknown decoder tag"))?;
    let dim = r.read_u32::<LE>()? as usize;
    let de_gamma = r.read_f64::<LE>()?;
    let num_entities = r.read_u32::<LE>()? as usize;
    let num_relations = r.read_u32::<LE>()? as usize;
    let num_steps = r.read_u32::<LE>()? as usize;
    let seed = r.read_u64::<LE>()?;
    let spec = ModelSpec {
        encoder,
        decoder,
        dim,
        de_gamma,
        num_entities,
        num_relations,
        num_steps,
    };
    spec.validate()?;
    let mut mats = Vec::with_capacity(5);
    for _ in ParamKind::ALL {
        let rows = r.read_u32::<LE>()? as usize;
        let cols = r.read_u32::<LE>()? as usize;
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LE>(&mut data)?;
        mats.push(Matrix::from_vec(rows, cols, data)?);
    }
    let mats: [Matrix; 5] = mats.try_into().map_err(|_| corrupt("matrix count"))?;
    let known = [
        read_bits(r, num_entities)?,
        read_bits(r, num_relations)?,
        read_bits(r, num_steps)?,
    ];
    ParameterStore::from_parts(spec, mats, known, seed)
}

impl ParameterStore {
    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        write_checkpoint(self, fs::File::create(&tmp)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(fs::File::open(path)?)
    }
}
