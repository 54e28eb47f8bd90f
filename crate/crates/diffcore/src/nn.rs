//! Layers composed from tape primitives.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};

/// `x · w + b` with `b` broadcast over rows.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Weights of one LSTM direction, gate blocks ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `d_in × 4h`
    pub w_x: Var,
    /// `h × 4h`
    pub w_h: Var,
    /// `1 × 4h`
    pub bias: Var,
}

/// One LSTM step over a batch of rows: `x[m×d_in]`, `h, c[m×h]`.
/// Returns the new `(h, c)`.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let hidden = g.value(w.w_h).rows();
    if g.value(w.w_h).cols() != 4 * hidden {
        return shape_err("lstm_cell", g.shape(w.w_h), &[hidden, 4 * hidden]);
    }
    if g.shape(h_prev) != g.shape(c_prev) || g.value(h_prev).cols() != hidden {
        return shape_err("lstm_cell", g.shape(h_prev), g.shape(c_prev));
    }
    let xw = g.matmul(x, w.w_x)?;
    let hw = g.matmul(h_prev, w.w_h)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add_row(pre, w.bias)?;
    let i_pre = g.slice_cols(pre, 0, hidden)?;
    let f_pre = g.slice_cols(pre, hidden, hidden)?;
    let c_pre = g.slice_cols(pre, 2 * hidden, hidden)?;
    let o_pre = g.slice_cols(pre, 3 * hidden, hidden)?;
    let input = g.sigmoid(i_pre);
    let forget = g.sigmoid(f_pre);
    let cand = g.tanh(c_pre);
    let output = g.sigmoid(o_pre);
    let kept = g.mul(forget, c_prev)?;
    let written = g.mul(input, cand)?;
    let c = g.add(kept, written)?;
    let tc = g.tanh(c);
    let h = g.mul(output, tc)?;
    Ok((h, c))
}
