//! Question encoder: learned word embeddings, a bidirectional LSTM and a
//! single-vector attention summary.

use std::collections::HashMap;

use diffcore::{lstm_cell, Graph, NdArray, ParamId, ParamStore, Var};

use crate::error::{OcrlError, Result};
use crate::registry::{Lstm, Registry};

/// Closed token vocabulary with a stable index per word.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(OcrlError::Data(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.index
                    .get(t)
                    .copied()
                    .ok_or_else(|| OcrlError::Input(format!("out-of-vocabulary token `{t}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QEncoder {
    /// `vocab × d_w`
    pub embed: ParamId,
    pub fwd: Lstm,
    pub bwd: Lstm,
    /// `d × 1`
    pub w_q: ParamId,
}

impl QEncoder {
    pub fn register(reg: &mut impl Registry, vocab: usize, d_w: usize, d: usize) -> Result<Self> {
        if d % 2 != 0 {
            return Err(OcrlError::Config(format!("feature size d={d} must be even")));
        }
        Ok(Self {
            embed: reg.weight("qenc.embed", vocab, d_w)?,
            fwd: Lstm::register(reg, "qenc.fwd", d_w, d / 2)?,
            bwd: Lstm::register(reg, "qenc.bwd", d_w, d / 2)?,
            w_q: reg.weight("qenc.wq", d, 1)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuestionEncoding {
    /// `S × d`, row `s` is `[backward state, forward state]` at position `s`.
    pub e_s: Var,
    /// `1 × d`: first backward state then last forward state.
    pub q_g: Var,
    /// `1 × d` attended summary.
    pub q: Var,
    /// `S × 1` attention weights.
    pub alpha: Var,
    pub len: usize,
}

/// Rows of the embedding table for `ids`.
pub fn embed_tokens(g: &mut Graph, store: &ParamStore, enc: &QEncoder, ids: &[usize]) -> Result<Var> {
    let table = g.param(store, enc.embed);
    let vocab = g.value(table).rows();
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(OcrlError::Input(format!("token index {bad} outside vocabulary of {vocab}")));
    }
    Ok(g.gather_rows(table, ids)?)
}

pub fn encode_question(g: &mut Graph, store: &ParamStore, enc: &QEncoder, ids: &[usize]) -> Result<QuestionEncoding> {
    if ids.is_empty() {
        return Err(OcrlError::Input("empty question".into()));
    }
    let s_len = ids.len();
    let emb = embed_tokens(g, store, enc, ids)?;
    let hidden = store.get(enc.fwd.w_h).rows();
    let fw = enc.fwd.bind(g, store);
    let bw = enc.bwd.bind(g, store);
    let zero = g.constant(NdArray::zeros(&[1, hidden]));
    let xs: Vec<Var> = (0..s_len)
        .map(|s| g.slice_rows(emb, s, 1))
        .collect::<diffcore::Result<_>>()?;

    let mut fwd = Vec::with_capacity(s_len);
    let (mut h, mut c) = (zero, zero);
    for &x in &xs {
        (h, c) = lstm_cell(g, x, h, c, &fw)?;
        fwd.push(h);
    }
    let mut bwd = vec![zero; s_len];
    let (mut h, mut c) = (zero, zero);
    for s in (0..s_len).rev() {
        (h, c) = lstm_cell(g, xs[s], h, c, &bw)?;
        bwd[s] = h;
    }

    let rows: Vec<Var> = (0..s_len)
        .map(|s| g.hconcat(&[bwd[s], fwd[s]]))
        .collect::<diffcore::Result<_>>()?;
    let e_s = g.vconcat(&rows)?;
    let q_g = g.hconcat(&[bwd[0], fwd[s_len - 1]])?;

    let w_q = g.param(store, enc.w_q);
    let gated = g.mul_row(e_s, q_g)?;
    let logits = g.matmul(gated, w_q)?;
    let alpha = g.softmax(logits, 0, None)?;
    let alpha_t = g.transpose(alpha);
    let q = g.matmul(alpha_t, e_s)?;
    Ok(QuestionEncoding {
        e_s,
        q_g,
        q,
        alpha,
        len: s_len,
    })
}
