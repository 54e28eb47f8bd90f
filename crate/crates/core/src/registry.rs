//! Parameter registration shared by model construction and checkpoint
//! binding, so both walk the same names in the same order.

use diffcore::{Graph, LstmWeights, NdArray, ParamId, ParamStore, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OcrlError, Result};

pub trait Registry {
    /// A `rows × cols` weight matrix.
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId>;
    /// A `1 × cols` bias row.
    fn bias(&mut self, name: &str, cols: usize) -> Result<ParamId>;
}

/// Creates parameters: fan-in scaled uniform weights, zero biases.
pub struct Creator<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Registry for Creator<'_> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Ok(self.store.insert(name, NdArray::matrix(rows, cols, data)?)?)
    }

    fn bias(&mut self, name: &str, cols: usize) -> Result<ParamId> {
        Ok(self.store.insert(name, NdArray::zeros(&[1, cols]))?)
    }
}

/// Looks parameters up in an existing store, checking shapes.
pub struct Binder<'a> {
    pub store: &'a ParamStore,
}

impl Binder<'_> {
    fn lookup(&self, name: &str, shape: [usize; 2]) -> Result<ParamId> {
        let id = self
            .store
            .id(name)
            .map_err(|_| OcrlError::Config(format!("checkpoint lacks parameter `{name}`")))?;
        let got = self.store.get(id).shape();
        if got != shape {
            return Err(OcrlError::Config(format!(
                "parameter `{name}` has shape {got:?}, config expects {shape:?}"
            )));
        }
        Ok(id)
    }
}

impl Registry for Binder<'_> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.lookup(name, [rows, cols])
    }

    fn bias(&mut self, name: &str, cols: usize) -> Result<ParamId> {
        self.lookup(name, [1, cols])
    }
}

/// Weight and bias of an affine map.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn register(reg: &mut impl Registry, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: reg.weight(&format!("{name}.w"), fan_in, fan_out)?,
            b: reg.bias(&format!("{name}.b"), fan_out)?,
        })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        Ok(diffcore::linear(g, x, w, b)?)
    }
}

/// One LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub fn register(reg: &mut impl Registry, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_x: reg.weight(&format!("{name}.wx"), input, 4 * hidden)?,
            w_h: reg.weight(&format!("{name}.wh"), hidden, 4 * hidden)?,
            bias: reg.bias(&format!("{name}.b"), 4 * hidden)?,
        })
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> LstmWeights {
        LstmWeights {
            w_x: g.param(store, self.w_x),
            w_h: g.param(store, self.w_h),
            bias: g.param(store, self.bias),
        }
    }
}
