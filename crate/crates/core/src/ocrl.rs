//! Object-centric video representation: position-gated slot encoding,
//! question-guided temporal parts, per-clip query-conditioned object
//! graphs refined by a GCN, and BiLSTM linking into per-object résumés.
//!
//! Rows are batched. Slot features are laid out object-major as
//! `(o·K + k)·t + i`, part summaries as `o·K + k`, and graph nodes
//! clip-major as `k·N + o`.

use diffcore::{lstm_cell, Graph, NdArray, ParamId, ParamStore, Var, MASKED};
use serde::{Deserialize, Serialize};

use crate::error::{OcrlError, Result};
use crate::registry::{Affine, Lstm, Registry};
use crate::video::VideoInput;

/// Width of the spatial feature.
pub const SPATIAL: usize = 7;

/// Switches replacing one component each with a simpler stand-in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Concatenate appearance and position and project linearly.
    pub no_gating: bool,
    /// Mean-pool the frames of each clip.
    pub no_temporal_attention: bool,
    /// Average the parts of each object instead of the BiLSTM.
    pub no_bilstm: bool,
    /// Drop the contextual term from the graph layers.
    pub no_context: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcrlDims {
    pub d: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub d_c: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GcnLayer {
    pub w1: ParamId,
    pub w2: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Ocrl {
    pub dims: OcrlDims,
    pub appearance: Affine,
    pub position: Affine,
    /// Used only under `no_gating`.
    pub concat: Affine,
    pub att_q: Affine,
    pub att_v: Affine,
    /// `d × 1`
    pub att_w: ParamId,
    /// `2d × 1`
    pub adj_w: ParamId,
    /// `d_c × d`, shared by all layers.
    pub context: ParamId,
    pub gcn: Vec<GcnLayer>,
    pub link_fwd: Lstm,
    pub link_bwd: Lstm,
    pub init_fwd: Affine,
    pub init_bwd: Affine,
    /// Used only under `no_bilstm` when `d ≠ 2·d_h`.
    pub pool_proj: Affine,
}

impl Ocrl {
    pub fn register(reg: &mut impl Registry, dims: OcrlDims) -> Result<Self> {
        let OcrlDims { d, d_h, d_a, d_c, layers } = dims;
        Ok(Self {
            dims,
            appearance: Affine::register(reg, "ocrl.app", d_a, d)?,
            position: Affine::register(reg, "ocrl.pos", SPATIAL, d)?,
            att_q: Affine::register(reg, "ocrl.att_q", d, d)?,
            att_v: Affine::register(reg, "ocrl.att_v", d, d)?,
            att_w: reg.weight("ocrl.att_w", d, 1)?,
            adj_w: reg.weight("ocrl.adj_w", 2 * d, 1)?,
            context: reg.weight("ocrl.ctx_w", d_c, d)?,
            gcn: (0..layers)
                .map(|l| {
                    Ok(GcnLayer {
                        w1: reg.weight(&format!("ocrl.gcn{l}.w1"), d, d)?,
                        w2: reg.weight(&format!("ocrl.gcn{l}.w2"), d, d)?,
                        b: reg.bias(&format!("ocrl.gcn{l}.b"), d)?,
                    })
                })
                .collect::<Result<_>>()?,
            link_fwd: Lstm::register(reg, "ocrl.link_fwd", d, d_h)?,
            link_bwd: Lstm::register(reg, "ocrl.link_bwd", d, d_h)?,
            init_fwd: Affine::register(reg, "ocrl.init_fwd", d, d_h)?,
            init_bwd: Affine::register(reg, "ocrl.init_bwd", d, d_h)?,
            concat: Affine::register(reg, "ocrl.concat", d_a + SPATIAL, d)?,
            pool_proj: Affine::register(reg, "ocrl.pool_proj", d, 2 * d_h)?,
        })
    }
}

/// Additive softmax mask from a 0/1 indicator.
pub fn additive_mask(live: &NdArray) -> NdArray {
    live.map(|m| if m != 0.0 { 0.0 } else { MASKED })
}

/// `tanh(v_a W_a + b_a) ⊙ sigmoid(v_p W_p + b_p)` per slot row, with rows
/// whose `slot_mask` entry is 0 forced to zero.
pub fn position_gated_encoding(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    v_a: Var,
    v_p: Var,
    slot_mask: &NdArray,
    no_gating: bool,
) -> Result<Var> {
    let v_ap = if no_gating {
        let both = g.hconcat(&[v_a, v_p])?;
        p.concat.apply(g, store, both)?
    } else {
        let a = p.appearance.apply(g, store, v_a)?;
        let a = g.tanh(a);
        let pos = p.position.apply(g, store, v_p)?;
        let gate = g.sigmoid(pos);
        g.mul(a, gate)?
    };
    let m = g.constant(slot_mask.clone());
    Ok(g.mul_col(v_ap, m)?)
}

/// Attention-weighted sum of each clip's slots. `mask` is `rows × t`
/// (0/1); returns the summaries `rows × d` and the weights `rows × t`.
/// Clips with every slot masked get a zero summary.
#[allow(clippy::too_many_arguments)]
pub fn temporal_part_summary(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    v_ap: Var,
    mask: &NdArray,
    q: Var,
    no_attention: bool,
) -> Result<(Var, Var)> {
    let (rows, t) = (mask.rows(), mask.cols());
    let logits = if no_attention {
        g.constant(NdArray::zeros(&[rows, t]))
    } else {
        let qq = p.att_q.apply(g, store, q)?;
        let vv = p.att_v.apply(g, store, v_ap)?;
        let z = g.mul_row(vv, qq)?;
        let w = g.param(store, p.att_w);
        let l = g.matmul(z, w)?;
        g.reshape(l, &[rows, t])?
    };
    let alpha = g.softmax_rows(logits, Some(&additive_mask(mask)))?;
    let alpha_col = g.reshape(alpha, &[rows * t, 1])?;
    let weighted = g.mul_col(v_ap, alpha_col)?;
    Ok((g.group_sum_rows(weighted, t)?, alpha))
}

/// Object attention per clip. `c` is clip-major `K·N × d`, `present` marks
/// which of those rows hold a real clip. Returns `a` as `K × N`; a clip
/// with no present object gets an all-zero row.
pub fn build_adjacency(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    c: Var,
    q: Var,
    present: &[bool],
    objects: usize,
) -> Result<Var> {
    let rows = g.value(c).rows();
    if objects == 0 || rows % objects != 0 || present.len() != rows {
        return Err(OcrlError::Config(format!(
            "{rows} graph rows do not split into clips of {objects} objects"
        )));
    }
    let clips = rows / objects;
    let cq = g.mul_row(c, q)?;
    let both = g.hconcat(&[c, cq])?;
    let w = g.param(store, p.adj_w);
    let logits = g.matmul(both, w)?;
    let logits = g.reshape(logits, &[clips, objects])?;
    let live = NdArray::matrix(clips, objects, present.iter().map(|&b| f64::from(u8::from(b))).collect())?;
    Ok(g.softmax_rows(logits, Some(&additive_mask(&live)))?)
}

/// `A_k = a_kᵀ a_k` for attention row `k` of `a`.
pub fn adjacency_matrix(a: &NdArray, k: usize) -> NdArray {
    let row = a.row_slice(k);
    let n = row.len();
    NdArray::matrix(n, n, (0..n * n).map(|i| row[i / n] * row[i % n]).collect()).expect("square")
}

/// `L` rounds of `H ← ELU(H + ELU(A H W₁ + v_c W_vc + b) W₂)` on every clip
/// at once. `h` is clip-major `K·N × d`; `a` (`K × N`) carries each clip's
/// adjacency in factored form, `A_k H = a_kᵀ (a_k H)`. Clips that are not
/// `live` pass through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn gcn_refine(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    h: Var,
    a: Var,
    context: Var,
    live: &[bool],
    no_context: bool,
) -> Result<Var> {
    let (clips, objects) = (g.value(a).rows(), g.value(a).cols());
    if g.value(h).rows() != clips * objects || live.len() != clips {
        return Err(OcrlError::Config("graph nodes do not match adjacency".into()));
    }
    let a_col = g.reshape(a, &[clips * objects, 1])?;
    let clip_of: Vec<usize> = (0..clips * objects).map(|r| r / objects).collect();
    let ctx_rows = if no_context {
        None
    } else {
        let w = g.param(store, p.context);
        let vc = g.matmul(context, w)?;
        Some(g.gather_rows(vc, &clip_of)?)
    };
    let pass = if live.iter().all(|&b| b) {
        None
    } else {
        let on: Vec<f64> = clip_of.iter().map(|&k| f64::from(u8::from(live[k]))).collect();
        let off: Vec<f64> = on.iter().map(|v| 1.0 - v).collect();
        Some((g.constant(NdArray::column(on)), g.constant(NdArray::column(off))))
    };

    let mut h = h;
    for layer in &p.gcn {
        let w1 = g.param(store, layer.w1);
        let w2 = g.param(store, layer.w2);
        let b = g.param(store, layer.b);
        let hw = g.matmul(h, w1)?;
        let weighted = g.mul_col(hw, a_col)?;
        let pooled = g.group_sum_rows(weighted, objects)?;
        let spread = g.gather_rows(pooled, &clip_of)?;
        let mut pre = g.mul_col(spread, a_col)?;
        if let Some(cr) = ctx_rows {
            pre = g.add(pre, cr)?;
        }
        let pre = g.add_row(pre, b)?;
        let act = g.elu(pre);
        let f = g.matmul(act, w2)?;
        let sum = g.add(h, f)?;
        let next = g.elu(sum);
        h = match pass {
            None => next,
            Some((on, off)) => {
                let kept = g.mul_col(next, on)?;
                let old = g.mul_col(h, off)?;
                g.add(kept, old)?
            }
        };
    }
    Ok(h)
}

/// Runs a BiLSTM over each object's `K` parts (`parts` object-major
/// `N·K × d`, absent parts already zeroed) with question-projected initial
/// hidden states. Returns `[h←₁, h→_K]` per object as `N × 2·d_h`.
pub fn temporal_link(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    parts: Var,
    q: Var,
    objects: usize,
) -> Result<Var> {
    let rows = g.value(parts).rows();
    if objects == 0 || rows % objects != 0 {
        return Err(OcrlError::Config(format!("{rows} part rows for {objects} objects")));
    }
    let clips = rows / objects;
    let d_h = p.dims.d_h;
    let xs: Vec<Var> = (0..clips)
        .map(|k| {
            let idx: Vec<usize> = (0..objects).map(|o| o * clips + k).collect();
            g.gather_rows(parts, &idx)
        })
        .collect::<diffcore::Result<_>>()?;
    let spread = vec![0; objects];
    let c0 = g.constant(NdArray::zeros(&[objects, d_h]));

    let fw = p.link_fwd.bind(g, store);
    let h0 = p.init_fwd.apply(g, store, q)?;
    let (mut h, mut c) = (g.gather_rows(h0, &spread)?, c0);
    for &x in &xs {
        (h, c) = lstm_cell(g, x, h, c, &fw)?;
    }
    let last_fwd = h;

    let bw = p.link_bwd.bind(g, store);
    let h0 = p.init_bwd.apply(g, store, q)?;
    let (mut h, mut c) = (g.gather_rows(h0, &spread)?, c0);
    for &x in xs.iter().rev() {
        (h, c) = lstm_cell(g, x, h, c, &bw)?;
    }
    Ok(g.hconcat(&[h, last_fwd])?)
}

/// Mean of each object's present parts, projected to `2·d_h` if needed.
fn pooled_link(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    parts: Var,
    present: &[bool],
    objects: usize,
) -> Result<Var> {
    let clips = present.len() / objects;
    let sums = g.group_sum_rows(parts, clips)?;
    let inv: Vec<f64> = present
        .chunks(clips)
        .map(|c| 1.0 / c.iter().filter(|&&b| b).count().max(1) as f64)
        .collect();
    let inv = g.constant(NdArray::column(inv));
    let mean = g.mul_col(sums, inv)?;
    if p.dims.d == 2 * p.dims.d_h {
        Ok(mean)
    } else {
        p.pool_proj.apply(g, store, mean)
    }
}

/// Everything [`represent_video`] computes, for inspection.
#[derive(Debug, Clone)]
pub struct VideoRepr {
    /// `N × 2·d_h`
    pub resumes: Var,
    pub valid: Vec<bool>,
    /// `N·K·t × d`
    pub v_ap: Var,
    /// `N·K × t`
    pub alpha: Var,
    /// `N·K × d`, object-major.
    pub parts: Var,
    /// `N·K`, object-major.
    pub present: Vec<bool>,
    /// `K × N`
    pub attention: Var,
    /// `K·N × d`, clip-major, after the last layer.
    pub nodes: Var,
}

pub fn represent_video(
    g: &mut Graph,
    store: &ParamStore,
    p: &Ocrl,
    input: &VideoInput,
    q: Var,
    abl: &Ablations,
) -> Result<VideoRepr> {
    let (n, k, t) = (input.objects, input.clips, input.clip_len);
    if n == 0 {
        return Err(OcrlError::Config("video has no object rows".into()));
    }
    let v_a = g.constant(input.appearance.clone());
    let v_p = g.constant(input.spatial.clone());
    let slot_mask = input.mask.reshape(&[n * k * t, 1])?;
    let v_ap = position_gated_encoding(g, store, p, v_a, v_p, &slot_mask, abl.no_gating)?;
    let (parts, alpha) = temporal_part_summary(g, store, p, v_ap, &input.mask, q, abl.no_temporal_attention)?;

    let present: Vec<bool> = (0..n * k).map(|r| input.clip_present(r / k, r % k)).collect();
    let to_clip: Vec<usize> = (0..k * n).map(|r| (r % n) * k + r / n).collect();
    let to_obj: Vec<usize> = (0..n * k).map(|r| (r % k) * n + r / k).collect();
    let clip_present: Vec<bool> = to_clip.iter().map(|&r| present[r]).collect();
    let live: Vec<bool> = (0..k).map(|kk| clip_present[kk * n..(kk + 1) * n].iter().any(|&b| b)).collect();

    let h0 = g.gather_rows(parts, &to_clip)?;
    let attention = build_adjacency(g, store, p, h0, q, &clip_present, n)?;
    let ctx = g.constant(input.context.clone());
    let nodes = gcn_refine(g, store, p, h0, attention, ctx, &live, abl.no_context)?;

    let by_obj = g.gather_rows(nodes, &to_obj)?;
    let keep = g.constant(NdArray::column(present.iter().map(|&b| f64::from(u8::from(b))).collect()));
    let linked_in = g.mul_col(by_obj, keep)?;
    let resumes = if abl.no_bilstm {
        pooled_link(g, store, p, linked_in, &present, n)?
    } else {
        temporal_link(g, store, p, linked_in, q, n)?
    };
    Ok(VideoRepr {
        resumes,
        valid: (0..n).map(|o| input.valid(o)).collect(),
        v_ap,
        alpha,
        parts,
        present,
        attention,
        nodes,
    })
}
