//! Plain nested-`Vec` arithmetic used as an independent reference for the
//! tape-based model code. Nothing here touches the graph.

#![allow(dead_code)]

pub mod checks;
pub mod tracker;

use diffcore::{NdArray, ParamStore};

pub type M = Vec<Vec<f64>>;

pub fn m(a: &NdArray) -> M {
    (0..a.rows()).map(|r| a.row_slice(r).to_vec()).collect()
}

pub fn p(store: &ParamStore, name: &str) -> M {
    m(store.by_name(name).unwrap())
}

pub fn row(store: &ParamStore, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap().data().to_vec()
}

pub fn vecmat(x: &[f64], w: &M) -> Vec<f64> {
    assert_eq!(x.len(), w.len());
    let cols = w[0].len();
    (0..cols).map(|j| x.iter().zip(w).map(|(xi, wr)| xi * wr[j]).sum()).collect()
}

pub fn affine(x: &[f64], w: &M, b: &[f64]) -> Vec<f64> {
    vecmat(x, w).iter().zip(b).map(|(a, c)| a + c).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Softmax over the entries whose `keep` flag is set; others get 0. All
/// dropped gives all zeros.
pub fn softmax_masked(x: &[f64], keep: &[bool]) -> Vec<f64> {
    let mx = x
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return vec![0.0; x.len()];
    }
    let e: Vec<f64> = x
        .iter()
        .zip(keep)
        .map(|(v, &k)| if k { (v - mx).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    softmax_masked(x, &vec![true; x.len()])
}

/// One LSTM step; gate blocks input, forget, candidate, output.
pub fn lstm(x: &[f64], h: &[f64], c: &[f64], wx: &M, wh: &M, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let pre = add(&add(&vecmat(x, wx), &vecmat(h, wh)), b);
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[n + j]);
        let g = pre[2 * n + j].tanh();
        let o = sigmoid(pre[3 * n + j]);
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

pub struct LstmP {
    pub wx: M,
    pub wh: M,
    pub b: Vec<f64>,
}

impl LstmP {
    pub fn load(store: &ParamStore, name: &str) -> Self {
        Self {
            wx: p(store, &format!("{name}.wx")),
            wh: p(store, &format!("{name}.wh")),
            b: row(store, &format!("{name}.b")),
        }
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        lstm(x, h, c, &self.wx, &self.wh, &self.b)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flat(a: &M) -> Vec<f64> {
    a.iter().flatten().copied().collect()
}
