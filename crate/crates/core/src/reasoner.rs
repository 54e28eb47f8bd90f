//! Relational reasoning over the résumé set guided by the question, the
//! answer decoder and the training loss.

use diffcore::{Graph, NdArray, ParamId, ParamStore, Var};

use crate::error::{OcrlError, Result};
use crate::ocrl::additive_mask;
use crate::registry::{Affine, Registry};

/// Probability floor inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ReasonerInput {
    /// `N × r`
    pub resumes: Var,
    /// Invalid résumés are excluded from every read.
    pub valid: Vec<bool>,
    /// `1 × d`
    pub q_g: Var,
    /// `S × d`
    pub e_s: Var,
}

/// Anything that turns a résumé set and a question into a memory vector.
pub trait Reasoner {
    /// Width of the returned memory row.
    fn memory_dim(&self) -> usize;

    fn reason(&self, g: &mut Graph, store: &ParamStore, input: &ReasonerInput) -> Result<Var>;
}

/// Control, read and memory updates repeated for a fixed number of steps,
/// weights shared across steps.
#[derive(Debug, Clone)]
pub struct MacReasoner {
    pub d: usize,
    pub steps: usize,
    pub key: Affine,
    /// `d × 1`
    pub word_w: ParamId,
    pub control: Affine,
    /// `r × d`
    pub resume_proj: ParamId,
    /// `d × d`
    pub read_mem: ParamId,
    /// `2d × d`
    pub read_mix: ParamId,
    /// `d × 1`
    pub read_w: ParamId,
    pub memory: Affine,
    pub memory0: Affine,
}

impl MacReasoner {
    pub fn register(reg: &mut impl Registry, d: usize, resume: usize, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(OcrlError::Config("reasoning needs at least one step".into()));
        }
        Ok(Self {
            d,
            steps,
            key: Affine::register(reg, "mac.key", 2 * d, d)?,
            word_w: reg.weight("mac.word_w", d, 1)?,
            control: Affine::register(reg, "mac.control", 3 * d, d)?,
            resume_proj: reg.weight("mac.resume_proj", resume, d)?,
            read_mem: reg.weight("mac.read_mem", d, d)?,
            read_mix: reg.weight("mac.read_mix", 2 * d, d)?,
            read_w: reg.weight("mac.read_w", d, 1)?,
            memory: Affine::register(reg, "mac.memory", 2 * d, d)?,
            memory0: Affine::register(reg, "mac.memory0", d, d)?,
        })
    }
}

impl Reasoner for MacReasoner {
    fn memory_dim(&self) -> usize {
        self.d
    }

    fn reason(&self, g: &mut Graph, store: &ParamStore, input: &ReasonerInput) -> Result<Var> {
        let n = g.value(input.resumes).rows();
        if input.valid.len() != n {
            return Err(OcrlError::Config(format!("{} validity flags for {n} résumés", input.valid.len())));
        }
        let live = NdArray::column(input.valid.iter().map(|&b| f64::from(u8::from(b))).collect());
        let read_mask = additive_mask(&live);

        let wr = g.param(store, self.resume_proj);
        let know = g.matmul(input.resumes, wr)?;
        let read_mem = g.param(store, self.read_mem);
        let read_mix = g.param(store, self.read_mix);
        let read_w = g.param(store, self.read_w);
        let word_w = g.param(store, self.word_w);

        let mut control = g.constant(NdArray::zeros(&[1, self.d]));
        let mut memory = self.memory0.apply(g, store, input.q_g)?;
        for _ in 0..self.steps {
            let kin = g.hconcat(&[input.q_g, control])?;
            let key = self.key.apply(g, store, kin)?;
            let key = g.tanh(key);
            let wl = g.mul_row(input.e_s, key)?;
            let wl = g.matmul(wl, word_w)?;
            let gamma = g.softmax(wl, 0, None)?;
            let gamma_t = g.transpose(gamma);
            let readout = g.matmul(gamma_t, input.e_s)?;
            let cin = g.hconcat(&[input.q_g, control, readout])?;
            control = self.control.apply(g, store, cin)?;

            let mproj = g.matmul(memory, read_mem)?;
            let inter = g.mul_row(know, mproj)?;
            let mixed = g.hconcat(&[inter, know])?;
            let mixed = g.matmul(mixed, read_mix)?;
            let rl = g.mul_row(mixed, control)?;
            let rl = g.matmul(rl, read_w)?;
            let beta = g.softmax(rl, 0, Some(&read_mask))?;
            let beta_t = g.transpose(beta);
            let read = g.matmul(beta_t, know)?;

            let min = g.hconcat(&[memory, read])?;
            memory = self.memory.apply(g, store, min)?;
        }
        Ok(memory)
    }
}

/// Two fully connected layers with ELU in between, then softmax.
#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub hidden: Affine,
    pub out: Affine,
}

impl Decoder {
    pub fn register(reg: &mut impl Registry, memory: usize, d: usize, answers: usize) -> Result<Self> {
        if answers < 2 {
            return Err(OcrlError::Config(format!("{answers} answer labels; need at least 2")));
        }
        Ok(Self {
            hidden: Affine::register(reg, "dec.hidden", memory + d, d)?,
            out: Affine::register(reg, "dec.out", d, answers)?,
        })
    }
}

/// Answer distribution `1 × |A|` from the final memory and the question.
pub fn decode_answer(g: &mut Graph, store: &ParamStore, dec: &Decoder, memory: Var, q: Var) -> Result<Var> {
    let x = g.hconcat(&[memory, q])?;
    let h = dec.hidden.apply(g, store, x)?;
    let h = g.elu(h);
    let logits = dec.out.apply(g, store, h)?;
    Ok(g.softmax_rows(logits, None)?)
}

/// `-ln(max(p[label], 1e-12))`
pub fn loss(g: &mut Graph, probs: Var, label: usize) -> Result<Var> {
    let n = g.value(probs).len();
    if label >= n {
        return Err(OcrlError::Input(format!("label {label} outside {n} answers")));
    }
    Ok(g.nll(probs, label, PROB_FLOOR)?)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
