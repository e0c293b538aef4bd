//! Binary checkpoint format for model parameters and training state.
//!
//! Everything a run needs to resume or reproduce an evaluation goes into
//! one little-endian file:
//!
//! ```text
//! magic      b"FPLN"
//! version    u32 (currently 1)
//! precision  u8  (64, the f64 bit width)
//! vocab hash u32 length + utf8 bytes (binds the checkpoint to a vocabulary)
//! cursor     u8 stage (1 = goal, 2 = flow) + u64 epochs finished in it
//! params     u32 count, then per parameter in sorted name order:
//!            u32 name length + utf8 name, u32 ndim, u64 dims..., f64 data...
//! optimizer  u8 flag; if 1: u64 step, u32 entry count, then per entry:
//!            u32 name length + utf8 name, u64 element count,
//!            f64 first moments..., f64 second moments...
//! ```
//!
//! Loading rejects wrong magic, unknown versions, non-f64 precision,
//! truncation, and optimizer moments that do not match a stored parameter.
//! Writing the same checkpoint twice yields identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn::adam::AdamState;
use crate::nn::{ParamStore, Tensor};
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"FPLN";
/// Version written by [`save_checkpoint`]; the only one [`load_checkpoint`]
/// accepts.
pub const CHECKPOINT_VERSION: u32 = 1;
const PRECISION_F64: u8 = 64;
/// Caps on untrusted header fields, to fail fast on corrupt files.
const MAX_NAME_LEN: usize = 4 << 10;
const MAX_NDIM: usize = 8;
const MAX_NUMEL: usize = 1 << 28;

/// Training stage the cursor points at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    /// Scene encoder and goal scorer.
    Goal,
    /// Flow planner, with stage-one weights frozen.
    Flow,
}

impl TrainStage {
    fn to_byte(self) -> u8 {
        match self {
            TrainStage::Goal => 1,
            TrainStage::Flow => 2,
        }
    }

    fn from_byte(b: u8) -> Result<TrainStage> {
        match b {
            1 => Ok(TrainStage::Goal),
            2 => Ok(TrainStage::Flow),
            other => Err(Error::checkpoint(format!("unknown training stage byte {other}"))),
        }
    }
}

/// Where training stands: the active stage and how many epochs of it are
/// complete.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainCursor {
    pub stage: TrainStage,
    pub epochs_done: u64,
}

/// A full model snapshot: parameters, the vocabulary hash they were trained
/// against, the training cursor, and optionally the optimizer moments
/// needed to resume mid-run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub vocab_hash: String,
    pub cursor: TrainCursor,
    pub adam: Option<AdamState>,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::checkpoint("file truncated"))?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_exact::<1>(r)?[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f64::from_le_bytes(read_exact::<8>(r)?));
    }
    Ok(out)
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > MAX_NAME_LEN {
        return Err(Error::checkpoint(format!("string length {len} exceeds cap")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::checkpoint("file truncated"))?;
    String::from_utf8(buf).map_err(|_| Error::checkpoint("string is not utf8"))
}

/// Validates optimizer moments against the parameter store: every entry
/// must name a stored parameter and match its element count. A subset is
/// fine (later stages freeze earlier parameters).
fn validate_adam(params: &ParamStore, state: &AdamState) -> Result<()> {
    for (which, map) in [("first", &state.m), ("second", &state.v)] {
        for (name, values) in map {
            let numel = params.get(name).map_err(|_| {
                Error::checkpoint(format!("optimizer {which} moments for unknown parameter {name}"))
            })?;
            if values.len() != numel.numel() {
                return Err(Error::checkpoint(format!(
                    "optimizer {which} moments for {name} hold {} values, parameter has {}",
                    values.len(),
                    numel.numel()
                )));
            }
        }
    }
    if state.m.len() != state.v.len() || state.m.keys().ne(state.v.keys()) {
        return Err(Error::checkpoint("optimizer first/second moment keys differ"));
    }
    Ok(())
}

/// Writes `ckpt` to `path` in the documented binary layout.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(state) = &ckpt.adam {
        validate_adam(&ckpt.params, state)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    w.write_all(&[PRECISION_F64])?;
    write_str(&mut w, &ckpt.vocab_hash)?;
    w.write_all(&[ckpt.cursor.stage.to_byte()])?;
    write_u64(&mut w, ckpt.cursor.epochs_done)?;
    write_u32(&mut w, ckpt.params.len() as u32)?;
    for (name, tensor) in ckpt.params.iter() {
        write_str(&mut w, name)?;
        write_u32(&mut w, tensor.shape.len() as u32)?;
        for d in &tensor.shape {
            write_u64(&mut w, *d as u64)?;
        }
        write_f64s(&mut w, &tensor.data)?;
    }
    match &ckpt.adam {
        None => w.write_all(&[0])?,
        Some(state) => {
            w.write_all(&[1])?;
            write_u64(&mut w, state.step)?;
            write_u32(&mut w, state.m.len() as u32)?;
            for (name, m) in &state.m {
                write_str(&mut w, name)?;
                write_u64(&mut w, m.len() as u64)?;
                write_f64s(&mut w, m)?;
                write_f64s(&mut w, &state.v[name])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    if read_exact::<4>(&mut r)? != MAGIC {
        return Err(Error::checkpoint("bad magic, not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let precision = read_u8(&mut r)?;
    if precision != PRECISION_F64 {
        return Err(Error::checkpoint(format!("unsupported precision tag {precision}")));
    }
    let vocab_hash = read_str(&mut r)?;
    let stage = TrainStage::from_byte(read_u8(&mut r)?)?;
    let epochs_done = read_u64(&mut r)?;
    let n_params = read_u32(&mut r)? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = read_str(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > MAX_NDIM {
            return Err(Error::checkpoint(format!("parameter {name}: {ndim} dims exceeds cap")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > MAX_NUMEL {
            return Err(Error::checkpoint(format!(
                "parameter {name}: {numel} elements exceeds cap"
            )));
        }
        let data = read_f64s(&mut r, numel)?;
        params.insert(&name, Tensor::from_vec(&shape, data)?)?;
    }
    let adam = match read_u8(&mut r)? {
        0 => None,
        1 => {
            let step = read_u64(&mut r)?;
            let mut state = AdamState { step, ..AdamState::default() };
            let n_entries = read_u32(&mut r)? as usize;
            for _ in 0..n_entries {
                let name = read_str(&mut r)?;
                let len = read_u64(&mut r)? as usize;
                if len > MAX_NUMEL {
                    return Err(Error::checkpoint(format!(
                        "optimizer entry {name}: {len} elements exceeds cap"
                    )));
                }
                state.m.insert(name.clone(), read_f64s(&mut r, len)?);
                state.v.insert(name, read_f64s(&mut r, len)?);
            }
            validate_adam(&params, &state)?;
            Some(state)
        }
        other => return Err(Error::checkpoint(format!("bad optimizer flag {other}"))),
    };
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(Error::checkpoint("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        params,
        vocab_hash,
        cursor: TrainCursor { stage, epochs_done },
        adam,
    })
}
