//! Parameterized layers: linear, layer norm, multi-head attention, and the
//! pre-norm residual block they compose into.
//!
//! Each layer is described by a `*Spec` (names + dimensions), registered once
//! into a [`ParamStore`], then bound per forward pass onto a [`Tape`] as a
//! `*Ids` handle. Binding with `trainable = false` freezes the layer: it
//! participates in the forward pass but receives no gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::tape::{Id, Tape};
use crate::nn::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

/// `x @ w + b` with `x [m, d_in]`, `w [d_in, d_out]`, `b [1, d_out]`.
pub fn linear(tape: &mut Tape, x: Id, w: Id, b: Id) -> Result<Id> {
    let h = tape.matmul(x, w)?;
    tape.add_row_broadcast(h, b)
}

/// Registers a freshly initialized embedding-style table, N(0, std).
pub fn register_embedding(
    store: &mut ParamStore,
    name: &str,
    shape: &[usize],
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let normal = Normal::new(0.0, std).expect("std is finite");
    let data = (0..shape.iter().product())
        .map(|_| normal.sample(rng))
        .collect();
    store.insert(name, Tensor::from_vec(shape, data)?)
}

// ---- linear ----------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LinearSpec {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Clone, Copy)]
pub struct LinearIds {
    pub w: Id,
    pub b: Id,
}

impl LinearSpec {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> LinearSpec {
        LinearSpec {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    /// Weight U(±1/sqrt(d_in)), bias zero.
    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let bound = 1.0 / (self.d_in as f64).sqrt();
        let data = (0..self.d_in * self.d_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        store.insert(
            &format!("{}.w", self.name),
            Tensor::from_vec(&[self.d_in, self.d_out], data)?,
        )?;
        store.insert(
            &format!("{}.b", self.name),
            Tensor::zeros(&[self.d_out]),
        )
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<LinearIds> {
        let wname = format!("{}.w", self.name);
        let bname = format!("{}.b", self.name);
        let (w, b) = if trainable {
            (
                tape.param(&wname, store.get(&wname)?)?,
                tape.param(&bname, store.get(&bname)?)?,
            )
        } else {
            (
                tape.frozen(store.get(&wname)?)?,
                tape.frozen(store.get(&bname)?)?,
            )
        };
        Ok(LinearIds { w, b })
    }
}

impl LinearIds {
    pub fn apply(&self, tape: &mut Tape, x: Id) -> Result<Id> {
        linear(tape, x, self.w, self.b)
    }
}

// ---- layer norm ------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LayerNormSpec {
    pub name: String,
    pub d: usize,
}

#[derive(Clone, Copy)]
pub struct LayerNormIds {
    pub gain: Id,
    pub bias: Id,
}

impl LayerNormSpec {
    pub fn new(name: impl Into<String>, d: usize) -> LayerNormSpec {
        LayerNormSpec {
            name: name.into(),
            d,
        }
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(
            &format!("{}.g", self.name),
            Tensor::from_vec(&[self.d], vec![1.0; self.d])?,
        )?;
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.d]))
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<LayerNormIds> {
        let gname = format!("{}.g", self.name);
        let bname = format!("{}.b", self.name);
        let (gain, bias) = if trainable {
            (
                tape.param(&gname, store.get(&gname)?)?,
                tape.param(&bname, store.get(&bname)?)?,
            )
        } else {
            (
                tape.frozen(store.get(&gname)?)?,
                tape.frozen(store.get(&bname)?)?,
            )
        };
        Ok(LayerNormIds { gain, bias })
    }
}

impl LayerNormIds {
    pub fn apply(&self, tape: &mut Tape, x: Id) -> Result<Id> {
        tape.layer_norm(x, self.gain, self.bias)
    }
}

// ---- multi-head attention ---------------------------------------------------

#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub name: String,
    pub d: usize,
    pub n_heads: usize,
    q: LinearSpec,
    k: LinearSpec,
    v: LinearSpec,
    o: LinearSpec,
}

pub struct AttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub d: usize,
    pub n_heads: usize,
}

impl AttentionSpec {
    /// Errors unless `d` divides evenly into `n_heads` heads.
    pub fn new(name: impl Into<String>, d: usize, n_heads: usize) -> Result<AttentionSpec> {
        let name = name.into();
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::shape(format!(
                "attention {name:?}: width {d} not divisible into {n_heads} heads"
            )));
        }
        Ok(AttentionSpec {
            q: LinearSpec::new(format!("{name}.q"), d, d),
            k: LinearSpec::new(format!("{name}.k"), d, d),
            v: LinearSpec::new(format!("{name}.v"), d, d),
            o: LinearSpec::new(format!("{name}.o"), d, d),
            name,
            d,
            n_heads,
        })
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.q.register(store, rng)?;
        self.k.register(store, rng)?;
        self.v.register(store, rng)?;
        self.o.register(store, rng)
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<AttentionIds> {
        Ok(AttentionIds {
            q: self.q.bind(tape, store, trainable)?,
            k: self.k.bind(tape, store, trainable)?,
            v: self.v.bind(tape, store, trainable)?,
            o: self.o.bind(tape, store, trainable)?,
            d: self.d,
            n_heads: self.n_heads,
        })
    }
}

/// Scaled dot-product attention over `n_heads` column-sliced heads.
///
/// `q_in [n_q, d]`, `k_in`/`v_in [n_kv, d]` (they may be the same buffer for
/// self-attention); output `[n_q, d]`. Scores are scaled by
/// `1/sqrt(d / n_heads)` and softmaxed per query row; no masking.
pub fn multi_head_attention(
    tape: &mut Tape,
    q_in: Id,
    k_in: Id,
    v_in: Id,
    p: &AttentionIds,
) -> Result<Id> {
    if p.n_heads == 0 || p.d % p.n_heads != 0 {
        return Err(Error::shape(format!(
            "attention: width {} not divisible into {} heads",
            p.d, p.n_heads
        )));
    }
    let dh = p.d / p.n_heads;
    let q = p.q.apply(tape, q_in)?;
    let k = p.k.apply(tape, k_in)?;
    let v = p.v.apply(tape, v_in)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.n_heads);
    for h in 0..p.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let scores = tape.matmul_tb(qh, kh)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled);
        heads.push(tape.matmul(attn, vh)?);
    }
    let cat = tape.concat_cols(&heads)?;
    p.o.apply(tape, cat)
}

// ---- pre-norm residual block -------------------------------------------------

/// `x + Attn(LN(x), kv)` followed by `x + MLP(LN(x))`, ReLU MLP with a
/// `2d` hidden width. Self-attention when `kv` is the block input itself.
#[derive(Clone, Debug)]
pub struct BlockSpec {
    pub ln1: LayerNormSpec,
    pub attn: AttentionSpec,
    pub ln2: LayerNormSpec,
    pub mlp1: LinearSpec,
    pub mlp2: LinearSpec,
}

pub struct BlockIds {
    ln1: LayerNormIds,
    attn: AttentionIds,
    ln2: LayerNormIds,
    mlp1: LinearIds,
    mlp2: LinearIds,
}

impl BlockSpec {
    pub fn new(name: impl Into<String>, d: usize, n_heads: usize) -> Result<BlockSpec> {
        let name = name.into();
        Ok(BlockSpec {
            ln1: LayerNormSpec::new(format!("{name}.ln1"), d),
            attn: AttentionSpec::new(format!("{name}.attn"), d, n_heads)?,
            ln2: LayerNormSpec::new(format!("{name}.ln2"), d),
            mlp1: LinearSpec::new(format!("{name}.mlp1"), d, 2 * d),
            mlp2: LinearSpec::new(format!("{name}.mlp2"), 2 * d, d),
        })
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.ln1.register(store)?;
        self.attn.register(store, rng)?;
        self.ln2.register(store)?;
        self.mlp1.register(store, rng)?;
        self.mlp2.register(store, rng)
    }

    pub fn bind<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        trainable: bool,
    ) -> Result<BlockIds> {
        Ok(BlockIds {
            ln1: self.ln1.bind(tape, store, trainable)?,
            attn: self.attn.bind(tape, store, trainable)?,
            ln2: self.ln2.bind(tape, store, trainable)?,
            mlp1: self.mlp1.bind(tape, store, trainable)?,
            mlp2: self.mlp2.bind(tape, store, trainable)?,
        })
    }
}

impl BlockIds {
    /// Self-attention when `kv` is `None`, cross-attention otherwise.
    pub fn apply(&self, tape: &mut Tape, x: Id, kv: Option<Id>) -> Result<Id> {
        let normed = self.ln1.apply(tape, x)?;
        let (k, v) = match kv {
            Some(t) => (t, t),
            None => (normed, normed),
        };
        let a = multi_head_attention(tape, normed, k, v, &self.attn)?;
        let x = tape.add(x, a)?;
        let normed = self.ln2.apply(tape, x)?;
        let h = self.mlp1.apply(tape, normed)?;
        let h = tape.relu(h);
        let m = self.mlp2.apply(tape, h)?;
        tape.add(x, m)
    }
}
